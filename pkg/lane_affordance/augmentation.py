"""Aumento de dados online: rotação global seguida de warping polinomial por eixo.

O warping usa, em cada eixo, o polinômio f(i') = a0·i'² + a1·i' + a2 que leva a
coordenada de saída (espaço deformado) à coordenada de origem. O mesmo ponto de
controle é usado nos dois eixos; o rótulo usa o mesmo warp escalado pela razão de
resolução (metade do contexto).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np
from scipy.ndimage import map_coordinates

from .circular_stats import TWO_PI, merge_modes
from .errors import SingularWarpError
from .scene_synth import MODE_MERGE_DEG, EvaluationSample, RoadContext, TrajectoryLabel

WARP_RADIUS_MEAN = 0.15
WARP_RADIUS_STD = 0.05
WARP_RADIUS_CLIP = 0.3
# |i0' - centro| < (√2 - 1)/2 · I_max mantém 0 < a1 < 2
MONOTONIC_AXIS_LIMIT = (math.sqrt(2.0) - 1.0) / 2.0
MAX_DIRECTION_DRAWS = 64


@dataclass(frozen=True)
class WarpParams:
    i0_prime: float
    j0_prime: float
    i0: float
    j0: float
    I_max: float
    rotation: float = 0.0

    def __post_init__(self) -> None:
        for name in ("i0_prime", "j0_prime", "i0", "j0"):
            value = getattr(self, name)
            if not 0.0 < value < self.I_max:
                raise SingularWarpError(f"{name}={value} fora de (0, {self.I_max})")
        if not 0.0 <= self.rotation < TWO_PI:
            raise SingularWarpError(f"Rotação fora de [0, 2π): {self.rotation}")
        if self.radius > WARP_RADIUS_CLIP * self.I_max * (1.0 + 1e-9):
            raise SingularWarpError(
                f"Deslocamento do ponto de controle {self.radius:.3f} acima de "
                f"{WARP_RADIUS_CLIP}·I_max = {WARP_RADIUS_CLIP * self.I_max:.3f}"
            )

    @classmethod
    def identity(cls, I_max: float) -> "WarpParams":
        center = I_max / 2.0
        return cls(center, center, center, center, float(I_max), 0.0)

    @property
    def radius(self) -> float:
        return math.hypot(self.i0_prime - self.i0, self.j0_prime - self.j0)

    def scaled(self, ratio: float) -> "WarpParams":
        """Mesmo warp expresso numa grade com lado ``I_max·ratio``."""

        return WarpParams(
            i0_prime=self.i0_prime * ratio,
            j0_prime=self.j0_prime * ratio,
            i0=self.i0 * ratio,
            j0=self.j0 * ratio,
            I_max=self.I_max * ratio,
            rotation=self.rotation,
        )

    def axis_coeffs(self) -> Tuple[Tuple[float, float, float], Tuple[float, float, float]]:
        return (
            warp_coeffs(self.i0_prime, self.i0, self.I_max),
            warp_coeffs(self.j0_prime, self.j0, self.I_max),
        )

    def is_monotonic(self) -> bool:
        return all(_is_monotonic(coeffs, self.I_max) for coeffs in self.axis_coeffs())


def warp_coeffs(i0_prime: float, i0: float, I_max: float) -> Tuple[float, float, float]:
    """Coeficientes (a0, a1, a2) com f(0)=0, f(I_max)=I_max e f(i0_prime)=i0."""

    if not 0.0 < i0_prime < I_max:
        raise SingularWarpError(
            f"Ponto de controle {i0_prime} sobre ou fora da borda da grade (0, {I_max})"
        )
    a1 = (i0 - i0_prime ** 2 / I_max) / (i0_prime * (1.0 - i0_prime / I_max))
    a0 = (1.0 - a1) / I_max
    return a0, a1, 0.0


def warp_map(u: np.ndarray, coeffs: Tuple[float, float, float]) -> np.ndarray:
    a0, a1, a2 = coeffs
    return a0 * u * u + a1 * u + a2


def _is_monotonic(coeffs: Tuple[float, float, float], I_max: float) -> bool:
    a0, a1, _ = coeffs
    return a1 > 0.0 and 2.0 * a0 * I_max + a1 > 0.0


def sample_warp_params(I_max: float, seed: int) -> WarpParams:
    """Sorteia rotação e ponto de controle (raio gaussiano truncado, direção por rejeição).

    Quando o warp resultante não é monotônico só a direção é sorteada de novo;
    o raio só é refeito se nenhuma direção for viável para ele. Assim a
    distribuição do raio é preservada, mas a direção só é uniforme para raios
    abaixo de MONOTONIC_AXIS_LIMIT·I_max. Acima disso as direções próximas dos
    eixos são rejeitadas e as diagonais ficam mais prováveis.
    """

    if not I_max > 0:
        raise SingularWarpError(f"I_max deve ser positivo (recebido {I_max})")
    rng = np.random.default_rng(seed)
    center = I_max / 2.0
    rotation = float(rng.uniform(0.0, TWO_PI))
    feasible_radius = MONOTONIC_AXIS_LIMIT * I_max * math.sqrt(2.0)

    while True:
        radius = float(np.clip(
            rng.normal(WARP_RADIUS_MEAN * I_max, WARP_RADIUS_STD * I_max),
            0.0,
            WARP_RADIUS_CLIP * I_max,
        ))
        if radius >= feasible_radius:
            continue
        for _ in range(MAX_DIRECTION_DRAWS):
            direction = float(rng.uniform(0.0, TWO_PI))
            params = WarpParams(
                i0_prime=center - radius * math.sin(direction),
                j0_prime=center + radius * math.cos(direction),
                i0=center,
                j0=center,
                I_max=float(I_max),
                rotation=rotation,
            )
            if params.is_monotonic():
                return params


# ----------------------------------------------------------------------
# Reamostragem
# ----------------------------------------------------------------------
def _source_coordinates(side: int, params: WarpParams) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Coordenadas contínuas de origem (linha, coluna) e derivadas do warp por eixo."""

    row_coeffs, col_coeffs = params.axis_coeffs()
    centers = np.arange(side, dtype=np.float64) + 0.5
    rows_out, cols_out = np.meshgrid(centers, centers, indexing="ij")

    rows_rot = warp_map(rows_out, row_coeffs)
    cols_rot = warp_map(cols_out, col_coeffs)
    row_slope = warp_map(rows_out + 0.5, row_coeffs) - warp_map(rows_out - 0.5, row_coeffs)
    col_slope = warp_map(cols_out + 0.5, col_coeffs) - warp_map(cols_out - 0.5, col_coeffs)

    half = side / 2.0
    x = cols_rot - half
    y = half - rows_rot
    cos_r, sin_r = math.cos(params.rotation), math.sin(params.rotation)
    # rotação inversa: ponto de origem = R(-ρ)·p
    x_src = cos_r * x + sin_r * y
    y_src = -sin_r * x + cos_r * y
    return half - y_src, x_src + half, row_slope, col_slope


def _nearest(array: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    side_r, side_c = array.shape
    r = np.floor(rows).astype(np.int64)
    c = np.floor(cols).astype(np.int64)
    inside = (r >= 0) & (r < side_r) & (c >= 0) & (c < side_c)
    result = np.zeros(rows.shape, dtype=array.dtype)
    result[inside] = array[r[inside], c[inside]]
    return result


def _bilinear(array: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    return map_coordinates(
        np.asarray(array, dtype=np.float64),
        [rows - 0.5, cols - 0.5],
        order=1,
        mode="constant",
        cval=0.0,
    ).astype(np.float32)


def _push_vectors(
    nx: np.ndarray, ny: np.ndarray, rotation: float, row_slope: np.ndarray, col_slope: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    cos_r, sin_r = math.cos(rotation), math.sin(rotation)
    rx = cos_r * nx - sin_r * ny
    ry = sin_r * nx + cos_r * ny
    # x acompanha a coluna e y a linha; o warp é separável
    wx = rx / col_slope
    wy = ry / row_slope
    norm = np.hypot(wx, wy)
    safe = np.where(norm > 0.0, norm, 1.0)
    return np.where(norm > 0.0, wx / safe, 0.0), np.where(norm > 0.0, wy / safe, 0.0)


def warp_context(context: RoadContext, params: WarpParams) -> RoadContext:
    rows, cols, _, _ = _source_coordinates(context.side, params)
    return RoadContext(
        drivable=_bilinear(context.drivable, rows, cols),
        markings=_bilinear(context.markings, rows, cols),
    )


def apply_augmentation(
    context: RoadContext, label: TrajectoryLabel, params: WarpParams
) -> Tuple[RoadContext, TrajectoryLabel]:
    """Rotaciona e deforma contexto e rótulo de forma consistente."""

    warped_context = warp_context(context, params)

    label_params = params.scaled(label.side / context.side)
    rows, cols, row_slope, col_slope = _source_coordinates(label.side, label_params)
    mask = _nearest(np.asarray(label.mask, dtype=np.uint8), rows, cols)
    nx = _nearest(np.asarray(label.nx, dtype=np.float64), rows, cols)
    ny = _nearest(np.asarray(label.ny, dtype=np.float64), rows, cols)
    nx, ny = _push_vectors(nx, ny, params.rotation, row_slope, col_slope)
    masked = mask.astype(bool)
    warped_label = TrajectoryLabel(
        mask=mask,
        nx=np.where(masked, nx, 0.0).astype(np.float32),
        ny=np.where(masked, ny, 0.0).astype(np.float32),
    )
    return warped_context, warped_label


def augment_eval_sample(sample: EvaluationSample, params: WarpParams) -> EvaluationSample:
    """Aplica o mesmo warp a uma amostra de avaliação, transportando todos os modos."""

    context = warp_context(sample.context, params)
    side = sample.lanes.shape[0]
    label_params = params.scaled(side / sample.context.side)
    rows, cols, row_slope, col_slope = _source_coordinates(side, label_params)

    lanes = _nearest(np.asarray(sample.lanes, dtype=np.uint8), rows, cols)
    lookup = np.full((side, side), -1, dtype=np.int64)
    mode_rows, mode_cols, angles = sample.mode_table()
    lookup[mode_rows, mode_cols] = np.arange(len(mode_rows))
    source = _nearest(lookup + 1, rows, cols) - 1

    threshold = math.radians(MODE_MERGE_DEG)
    modes: Dict[Tuple[int, int], List[float]] = {}
    for i, j in zip(*np.nonzero((source >= 0) & lanes.astype(bool))):
        values = angles[source[i, j]]
        values = values[np.isfinite(values)]
        nx, ny = _push_vectors(
            np.cos(values), np.sin(values), params.rotation,
            np.full(len(values), row_slope[i, j]), np.full(len(values), col_slope[i, j]),
        )
        moved = np.mod(np.arctan2(ny, nx), TWO_PI)
        modes[(int(i), int(j))] = [a % TWO_PI for a in merge_modes(moved, threshold)]

    return EvaluationSample(context=context, lanes=lanes, modes=modes, kind=sample.kind, name=sample.name)


def drop_markings(context: RoadContext, p: float, seed: int) -> RoadContext:
    """Zera a camada de marcações com probabilidade ``p`` (independência de atributos)."""

    if p <= 0.0:
        return context
    rng = np.random.default_rng(seed)
    if rng.random() >= p:
        return context
    return RoadContext(drivable=context.drivable, markings=np.zeros_like(context.markings))
