import numpy as np
import pytest
from PIL import Image

from lane_affordance.errors import ContractError
from lane_affordance.network import NetworkConfig, RawOutput, build_model
from lane_affordance.render import RenderSpec, render, render_eval_instance, sla_mass_inside_drivable
from lane_affordance.scene_synth import RoadContext, generate_layout


def _uniform_output(sla_value: float, side: int = 32) -> RawOutput:
    ones = np.ones((3, side, side))
    return RawOutput(
        sla=np.full((side, side), sla_value),
        mu_tilde=np.zeros_like(ones),
        sigma_tilde=np.zeros_like(ones),
        w_tilde=ones,
    )


def _full_context(side: int = 64) -> RoadContext:
    return RoadContext(drivable=np.ones((side, side), np.float32), markings=np.zeros((side, side), np.float32))


def test_draws_one_arrow_per_mode_on_stride_grid(tmp_path) -> None:
    result = render(_full_context(), _uniform_output(1.0), RenderSpec(), tmp_path / "full.png")
    assert result.arrow_count == 192
    assert result.size == (512, 512)
    with Image.open(result.path) as image:
        assert image.format == "PNG"


def test_empty_sla_draws_no_arrows(tmp_path) -> None:
    result = render(_full_context(), _uniform_output(0.0), RenderSpec(), tmp_path / "empty.png")
    assert result.arrow_count == 0


def test_output_is_byte_identical_between_runs(tmp_path) -> None:
    context = generate_layout("roundabout", seed=0, grid_side=64).context
    model = build_model(NetworkConfig.desk(), seed=0)
    render_eval_instance(model, context, RenderSpec(), tmp_path / "a.png")
    render_eval_instance(model, context, RenderSpec(), tmp_path / "b.png")
    assert (tmp_path / "a.png").read_bytes() == (tmp_path / "b.png").read_bytes()


def test_rejects_bad_spec_and_mismatched_sizes(tmp_path) -> None:
    with pytest.raises(ContractError):
        RenderSpec(stride=0)
    with pytest.raises(ContractError):
        RenderSpec(colormap="not-a-colormap")
    with pytest.raises(ContractError):
        render(_full_context(60), _uniform_output(1.0), RenderSpec(), tmp_path / "x.png")


def test_sla_mass_inside_drivable() -> None:
    drivable = np.zeros((64, 64), np.float32)
    drivable[:, :32] = 1.0
    context = RoadContext(drivable=drivable, markings=np.zeros_like(drivable))
    assert sla_mass_inside_drivable(_uniform_output(1.0), context) == pytest.approx(0.5)
    assert sla_mass_inside_drivable(_uniform_output(0.0), context) == 1.0
