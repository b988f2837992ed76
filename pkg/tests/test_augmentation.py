import math
import unittest

import numpy as np
from scipy import ndimage

from lane_affordance.augmentation import (
    MONOTONIC_AXIS_LIMIT,
    WARP_RADIUS_CLIP,
    WarpParams,
    apply_augmentation,
    augment_eval_sample,
    drop_markings,
    sample_warp_params,
    warp_coeffs,
    warp_map,
)
from lane_affordance.errors import SingularWarpError
from lane_affordance.scene_synth import (
    RoadContext,
    TrajectoryLabel,
    build_eval_sample,
    generate_layout,
    rasterize_sample,
    sample_trajectory,
)


def _horizontal_strip(context_side: int = 64):
    label_side = context_side // 2
    mask = np.zeros((label_side, label_side), dtype=np.uint8)
    mask[20:22, 4:28] = 1
    nx = mask.astype(np.float32)
    ny = np.zeros_like(nx)
    rng = np.random.default_rng(0)
    context = RoadContext(
        drivable=rng.random((context_side, context_side)).astype(np.float32),
        markings=(rng.random((context_side, context_side)) > 0.8).astype(np.float32),
    )
    return context, TrajectoryLabel(mask=mask, nx=nx, ny=ny)


class WarpCoefficientsTest(unittest.TestCase):
    def test_center_control_point_is_identity(self) -> None:
        self.assertEqual((0.0, 1.0, 0.0), warp_coeffs(128.0, 128.0, 256.0))

    def test_off_center_control_point(self) -> None:
        a0, a1, a2 = warp_coeffs(128.0, 140.0, 256.0)
        self.assertAlmostEqual(1.1875, a1, places=12)
        self.assertAlmostEqual(-0.1875 / 256.0, a0, places=12)
        self.assertEqual(0.0, a2)
        coeffs = (a0, a1, a2)
        self.assertAlmostEqual(140.0, warp_map(np.array(128.0), coeffs), places=9)

    def test_boundary_conditions_hold_for_random_params(self) -> None:
        rng = np.random.default_rng(1)
        for _ in range(1000):
            I_max = float(rng.uniform(16.0, 512.0))
            i0_prime, i0 = rng.uniform(0.05 * I_max, 0.95 * I_max, 2)
            coeffs = warp_coeffs(i0_prime, i0, I_max)
            values = warp_map(np.array([0.0, I_max, i0_prime]), coeffs)
            np.testing.assert_allclose(values, [0.0, I_max, i0], atol=1e-9 * I_max)

    def test_rejects_control_point_on_the_boundary(self) -> None:
        for point in (0.0, 256.0):
            with self.assertRaises(SingularWarpError):
                warp_coeffs(point, 128.0, 256.0)


class SampleWarpParamsTest(unittest.TestCase):
    def test_fixed_seed_is_deterministic(self) -> None:
        self.assertEqual(sample_warp_params(256, 17), sample_warp_params(256, 17))

    def test_radius_distribution_and_monotonicity(self) -> None:
        radii = []
        for seed in range(10_000):
            params = sample_warp_params(256, seed)
            self.assertTrue(params.is_monotonic())
            self.assertLessEqual(params.radius, WARP_RADIUS_CLIP * 256 + 1e-9)
            self.assertTrue(0.0 <= params.rotation < 2 * math.pi)
            radii.append(params.radius)
        self.assertLess(abs(float(np.mean(radii)) - 38.4), 1.5)

    def test_direction_is_uniform_below_the_monotonic_radius(self) -> None:
        I_max = 64
        limit = MONOTONIC_AXIS_LIMIT * I_max
        octants = np.zeros(8, dtype=int)
        for seed in range(4_000):
            params = sample_warp_params(I_max, seed)
            if params.radius >= limit or params.radius == 0.0:
                continue
            direction = math.atan2(params.i0 - params.i0_prime, params.j0_prime - params.j0) % (2 * math.pi)
            octants[int(direction // (math.pi / 4)) % 8] += 1
        shares = octants / octants.sum()
        self.assertGreater(octants.sum(), 3_000)
        np.testing.assert_allclose(shares, 0.125, atol=0.03)

    def test_rejects_control_point_beyond_the_radius_clip(self) -> None:
        with self.assertRaises(SingularWarpError):
            WarpParams(32.0, 57.0, 32.0, 32.0, 64.0)
        with self.assertRaises(SingularWarpError):
            WarpParams(18.0, 18.0, 32.0, 32.0, 64.0)
        inside = WarpParams(32.0, 32.0 + 0.3 * 64.0, 32.0, 32.0, 64.0)
        self.assertAlmostEqual(WARP_RADIUS_CLIP * 64.0, inside.radius)
        self.assertEqual(inside.radius / 2.0, inside.scaled(0.5).radius)


class ApplyAugmentationTest(unittest.TestCase):
    def test_identity_params_leave_inputs_unchanged(self) -> None:
        context, label = _horizontal_strip()
        warped_context, warped_label = apply_augmentation(context, label, WarpParams.identity(64))
        np.testing.assert_allclose(warped_context.drivable, context.drivable, atol=1e-6)
        np.testing.assert_allclose(warped_context.markings, context.markings, atol=1e-6)
        np.testing.assert_array_equal(warped_label.mask, label.mask)
        np.testing.assert_allclose(warped_label.nx, label.nx, atol=1e-6)
        np.testing.assert_allclose(warped_label.ny, label.ny, atol=1e-6)

    def test_quarter_turn_rotates_mask_and_vectors(self) -> None:
        context, label = _horizontal_strip()
        params = WarpParams(32.0, 32.0, 32.0, 32.0, 64.0, rotation=math.pi / 2)
        _, rotated = apply_augmentation(context, label, params)
        np.testing.assert_array_equal(rotated.mask, np.rot90(label.mask, 1))
        masked = rotated.mask.astype(bool)
        np.testing.assert_allclose(rotated.nx[masked], 0.0, atol=1e-6)
        np.testing.assert_allclose(rotated.ny[masked], 1.0, atol=1e-6)

    def test_direction_vectors_stay_unit_length(self) -> None:
        layout = generate_layout("intersection", seed=0, grid_side=64)
        context, label = rasterize_sample(layout, sample_trajectory(layout, 3))
        for seed in range(20):
            _, warped = apply_augmentation(context, label, sample_warp_params(64, seed))
            masked = warped.mask.astype(bool)
            np.testing.assert_allclose(np.hypot(warped.nx[masked], warped.ny[masked]), 1.0, atol=1e-6)
            self.assertTrue(np.all(warped.nx[~masked] == 0.0))

    def test_warped_label_masks_stay_connected(self) -> None:
        context, label = _horizontal_strip()
        band = np.zeros_like(label.mask)
        band[12:20, 4:28] = 1
        label = TrajectoryLabel(mask=band, nx=band.astype(np.float32), ny=np.zeros(band.shape, np.float32))
        for seed in range(100):
            _, warped = apply_augmentation(context, label, sample_warp_params(64, seed))
            _, components = ndimage.label(warped.mask)
            self.assertEqual(1, components, msg=f"seed={seed}")

    def test_context_values_stay_in_unit_range(self) -> None:
        context, label = _horizontal_strip()
        warped, _ = apply_augmentation(context, label, sample_warp_params(64, 5))
        self.assertGreaterEqual(float(warped.drivable.min()), 0.0)
        self.assertLessEqual(float(warped.drivable.max()), 1.0 + 1e-6)


class AugmentEvalSampleTest(unittest.TestCase):
    def test_identity_keeps_lanes_and_modes(self) -> None:
        sample = build_eval_sample(generate_layout("t_intersection", seed=0, grid_side=64), name="t")
        warped = augment_eval_sample(sample, WarpParams.identity(64))
        np.testing.assert_array_equal(warped.lanes, sample.lanes)
        self.assertEqual(set(sample.modes), set(warped.modes))
        for cell, angles in sample.modes.items():
            np.testing.assert_allclose(np.cos(warped.modes[cell]), np.cos(angles), atol=1e-6)
        self.assertEqual("t", warped.name)

    def test_every_warped_lane_cell_keeps_a_mode(self) -> None:
        sample = build_eval_sample(generate_layout("intersection", seed=0, grid_side=64))
        warped = augment_eval_sample(sample, sample_warp_params(64, 8))
        self.assertEqual(set(warped.modes), set(zip(*np.nonzero(warped.lanes))))
        self.assertTrue(all(0 < len(angles) for angles in warped.modes.values()))


class DropMarkingsTest(unittest.TestCase):
    def test_probability_one_clears_markings_only(self) -> None:
        context, _ = _horizontal_strip()
        dropped = drop_markings(context, 1.0, seed=0)
        self.assertEqual(0.0, float(dropped.markings.max()))
        np.testing.assert_array_equal(dropped.drivable, context.drivable)

    def test_probability_zero_returns_context_unchanged(self) -> None:
        context, _ = _horizontal_strip()
        self.assertIs(context, drop_markings(context, 0.0, seed=0))
