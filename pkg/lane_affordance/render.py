"""Renderização estática: região trafegável ao fundo, SLA como mapa de calor e setas por modo."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple

import matplotlib
import numpy as np
from PIL import Image, ImageDraw

from .circular_stats import CircularConstants
from .errors import ContractError
from .network import DirectionalLaneNet, RawOutput, forward
from .scene_synth import RoadContext

NON_DRIVABLE_RGB = (24, 24, 28)
DRIVABLE_RGB = (96, 96, 104)
ARROW_RGB = (80, 220, 255)


@dataclass(frozen=True)
class RenderSpec:
    colormap: str = "magma"
    stride: int = 4
    arrow_scale: float = 1.0
    threshold: float = 0.1
    image_size: int = 512
    weight_cutoff: float = 0.2

    def __post_init__(self) -> None:
        if self.stride < 1:
            raise ContractError(f"stride deve ser >= 1 (recebido {self.stride})")
        if not 0.0 <= self.threshold < 1.0:
            raise ContractError(f"threshold fora de [0, 1): {self.threshold}")
        if self.image_size < 16:
            raise ContractError(f"image_size pequeno demais: {self.image_size}")
        if self.colormap not in matplotlib.colormaps:
            raise ContractError(f"Mapa de cores desconhecido: {self.colormap}")


@dataclass(frozen=True)
class RenderResult:
    path: Path
    arrow_count: int
    size: Tuple[int, int]


def _drivable_at(context: RoadContext, side: int) -> np.ndarray:
    factor = context.side // side
    blocks = context.drivable.reshape(side, factor, side, factor)
    return blocks.mean(axis=(1, 3))


def _compose(context: RoadContext, raw: RawOutput, spec: RenderSpec) -> np.ndarray:
    side = raw.side
    drivable = _drivable_at(context, side)[..., None]
    background = (1.0 - drivable) * np.array(NON_DRIVABLE_RGB) + drivable * np.array(DRIVABLE_RGB)

    sla = np.clip(raw.sla, 0.0, 1.0)
    colors = matplotlib.colormaps[spec.colormap](sla)[..., :3] * 255.0
    alpha = np.where(sla >= spec.threshold, sla, 0.0)[..., None]
    return np.round((1.0 - alpha) * background + alpha * colors).astype(np.uint8)


def render(
    context: RoadContext,
    output: RawOutput,
    spec: RenderSpec,
    path: Path | str,
    consts: CircularConstants = CircularConstants(),
) -> RenderResult:
    """Escreve um PNG com o mapa de calor de SLA e uma seta por modo relevante."""

    path = Path(path)
    side = output.side
    if context.side % side:
        raise ContractError(f"Contexto {context.side} incompatível com saída {side}")

    pixels = _compose(context, output, spec)
    image = Image.fromarray(pixels).resize((spec.image_size, spec.image_size), Image.Resampling.NEAREST)
    draw = ImageDraw.Draw(image)
    cell = spec.image_size / side

    mus, _, weights = output.mixture_params(consts)
    arrow_count = 0
    for i in range(0, side, spec.stride):
        for j in range(0, side, spec.stride):
            if output.sla[i, j] <= spec.threshold:
                continue
            cx, cy = (j + 0.5) * cell, (i + 0.5) * cell
            for mu, weight in zip(mus[i, j], weights[i, j]):
                if weight <= spec.weight_cutoff:
                    continue
                length = spec.arrow_scale * spec.stride * cell * weight
                _draw_arrow(draw, cx, cy, float(mu), length)
                arrow_count += 1

    path.parent.mkdir(parents=True, exist_ok=True)
    image.save(path, format="PNG")
    return RenderResult(path=path, arrow_count=arrow_count, size=image.size)


def _draw_arrow(draw: ImageDraw.ImageDraw, cx: float, cy: float, angle: float, length: float) -> None:
    # y da imagem cresce para baixo
    dx, dy = math.cos(angle), -math.sin(angle)
    tip = (cx + dx * length, cy + dy * length)
    draw.line([(cx, cy), tip], fill=ARROW_RGB, width=1)
    head = max(2.0, 0.3 * length)
    for side_angle in (2.6, -2.6):
        hx = math.cos(angle + side_angle)
        hy = -math.sin(angle + side_angle)
        draw.line([tip, (tip[0] + hx * head, tip[1] + hy * head)], fill=ARROW_RGB, width=1)


def render_eval_instance(
    model: DirectionalLaneNet,
    context: RoadContext,
    spec: RenderSpec,
    path: Path | str,
    consts: Optional[CircularConstants] = None,
) -> Tuple[RenderResult, RawOutput]:
    raw = forward(context, model, mode="eval")
    return render(context, raw, spec, path, consts or CircularConstants()), raw


def sla_mass_inside_drivable(raw: RawOutput, context: RoadContext, threshold: float = 0.1) -> float:
    """Fração da massa de SLA acima do limiar que cai em células trafegáveis."""

    drivable = _drivable_at(context, raw.side) >= 0.5
    above = np.where(raw.sla > threshold, raw.sla, 0.0)
    total = float(above.sum())
    if total == 0.0:
        return 1.0
    return float(above[drivable].sum() / total)
