import math
import unittest

import numpy as np
import pytest
import torch

from lane_affordance.circular_stats import TWO_PI
from lane_affordance.errors import ContractError, DegenerateLabelError
from lane_affordance.losses import LossConfig, combine_losses, compute_losses, da_loss, sla_loss
from lane_affordance.scene_synth import TrajectoryLabel


def _diagonal_label(side: int = 8, angle: float = 1.0) -> TrajectoryLabel:
    mask = np.eye(side, dtype=np.uint8)
    nx = mask * math.cos(angle)
    ny = mask * math.sin(angle)
    return TrajectoryLabel(mask=mask, nx=nx.astype(np.float64), ny=ny.astype(np.float64))


def _direction_fields(side: int, mu: float, sigma: float, w: float = 0.5, components: int = 3):
    shape = (components, side, side)
    return (
        torch.full(shape, mu, dtype=torch.float64),
        torch.full(shape, sigma, dtype=torch.float64),
        torch.full(shape, w, dtype=torch.float64),
    )


class SlaLossTest(unittest.TestCase):
    def test_perfect_prediction_has_zero_loss(self) -> None:
        mask = np.eye(4, dtype=np.uint8)
        Y = torch.tensor(mask, dtype=torch.float64)
        self.assertEqual(0.0, float(sla_loss(Y, mask)))

    def test_hand_computed_case(self) -> None:
        mask = np.zeros((4, 4), dtype=np.uint8)
        mask[1, :] = 1
        Y = torch.full((4, 4), 0.5, dtype=torch.float64)
        self.assertEqual(404.0, float(sla_loss(Y, mask, LossConfig(alpha_sla=100.0))))

    def test_masked_term_does_not_depend_on_mask_size(self) -> None:
        side, error, alpha = 16, 0.3, 100.0
        for masked in (4, 16, 64):
            mask = np.zeros(side * side, dtype=np.uint8)
            mask[:masked] = 1
            mask = mask.reshape(side, side)
            Y = torch.tensor(mask * (1.0 - error), dtype=torch.float64)
            loss = float(sla_loss(Y, mask, LossConfig(alpha_sla=alpha)))
            masked_term = loss - masked * error**2
            expected = alpha * side * side * error**2
            self.assertLess(abs(masked_term - expected), 1e-9 * expected)

    def test_rejects_empty_mask_and_shape_mismatch(self) -> None:
        with self.assertRaises(DegenerateLabelError):
            sla_loss(torch.zeros(4, 4), np.zeros((4, 4)))
        with self.assertRaises(ContractError):
            sla_loss(torch.zeros(4, 4), np.ones((8, 8)))

    def test_gradient_matches_finite_differences(self) -> None:
        mask = np.zeros((8, 8), dtype=np.uint8)
        mask[2:4, 1:7] = 1
        Y = torch.rand(8, 8, dtype=torch.float64, generator=torch.Generator().manual_seed(0)).requires_grad_()
        self.assertTrue(torch.autograd.gradcheck(lambda y: sla_loss(y, mask), (Y,), rtol=1e-3))


class DaLossTest(unittest.TestCase):
    def test_prediction_collapsed_on_target_has_near_zero_loss(self) -> None:
        label = _diagonal_label(angle=2.0)
        mu, sigma, w = _direction_fields(8, 2.0 / TWO_PI, 0.0)
        self.assertLessEqual(float(da_loss(mu, sigma, w, label)), 1e-5)

    def test_near_uniform_prediction(self) -> None:
        label = _diagonal_label(angle=2.0)
        mu, sigma, w = _direction_fields(8, 2.0 / TWO_PI, 1.0)
        value = float(da_loss(mu, sigma, w, label))
        self.assertTrue(2.4 < value < 2.7, msg=value)

    def test_duplicating_cells_keeps_the_mean(self) -> None:
        rng = np.random.default_rng(2)
        label = _diagonal_label()
        fields = [torch.tensor(rng.uniform(0.1, 0.9, (3, 8, 8))) for _ in range(3)]
        doubled_label = TrajectoryLabel(
            mask=np.hstack([label.mask, label.mask]),
            nx=np.hstack([label.nx, label.nx]),
            ny=np.hstack([label.ny, label.ny]),
        )
        doubled = [torch.cat([f, f], dim=2) for f in fields]
        self.assertAlmostEqual(float(da_loss(*fields, label)), float(da_loss(*doubled, doubled_label)), places=10)

    def test_is_never_negative(self) -> None:
        rng = np.random.default_rng(4)
        for _ in range(20):
            label = _diagonal_label(angle=float(rng.uniform(0, TWO_PI)))
            fields = [torch.tensor(rng.uniform(0.0, 1.0, (3, 8, 8))) for _ in range(3)]
            self.assertGreaterEqual(float(da_loss(*fields, label)), -1e-9)

    def test_gradient_matches_finite_differences(self) -> None:
        rng = np.random.default_rng(5)
        label = _diagonal_label(angle=0.7)
        inputs = tuple(
            torch.tensor(rng.uniform(0.1, 0.9, (3, 8, 8)), dtype=torch.float64, requires_grad=True) for _ in range(3)
        )
        self.assertTrue(
            torch.autograd.gradcheck(lambda m, s, w: da_loss(m, s, w, label), inputs, rtol=1e-3, atol=1e-6)
        )


class CombineLossesTest(unittest.TestCase):
    def test_scales_each_loss_by_the_other(self) -> None:
        l_sla = torch.tensor(2.0, dtype=torch.float64, requires_grad=True)
        l_da = torch.tensor(3.0, dtype=torch.float64, requires_grad=True)
        breakdown = combine_losses(l_sla, l_da)
        self.assertEqual(12.0, float(breakdown.l_total))
        breakdown.l_total.backward()
        self.assertEqual(3.0, float(l_sla.grad))
        self.assertEqual(2.0, float(l_da.grad))

    def test_zero_factor_zeroes_the_total(self) -> None:
        breakdown = combine_losses(torch.tensor(0.0), torch.tensor(5.0))
        self.assertEqual(0.0, float(breakdown.l_total))

    def test_direction_gradient_is_scaled_by_sla_value(self) -> None:
        rng = np.random.default_rng(6)
        label = _diagonal_label(angle=4.0)
        config = LossConfig(alpha_sla=10.0)
        values = torch.tensor(rng.uniform(0.1, 0.9, (10, 8, 8)), dtype=torch.float64)

        output = values.clone().requires_grad_()
        breakdown = compute_losses(output, label, config, mixture_components=3)
        self.assertTrue(breakdown.is_finite())
        breakdown.l_total.backward()

        direction = values[1:].clone().requires_grad_()
        triples = direction.reshape(3, 3, 8, 8)
        da_loss(triples[:, 0], triples[:, 1], triples[:, 2], label, config).backward()
        expected = float(breakdown.l_sla) * direction.grad
        torch.testing.assert_close(output.grad[1:], expected, rtol=1e-9, atol=1e-12)

    def test_rejects_output_with_wrong_layer_count(self) -> None:
        with self.assertRaises(ContractError):
            compute_losses(torch.zeros(7, 8, 8), _diagonal_label(), LossConfig(), mixture_components=3)


@pytest.mark.parametrize("alpha", [1.0, 10.0, 100.0])
def test_sla_loss_is_non_negative_and_finite(alpha) -> None:
    mask = np.zeros((8, 8), dtype=np.uint8)
    mask[3] = 1
    Y = torch.rand(8, 8, generator=torch.Generator().manual_seed(int(alpha)))
    value = float(sla_loss(Y, mask, LossConfig(alpha_sla=alpha)))
    assert value >= 0.0
    assert math.isfinite(value)
