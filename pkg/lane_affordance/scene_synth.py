"""Geração procedural de cenas viárias vistas de cima.

Produz os layouts (cruzamentos, retas, curvas, T, mão única, Y, rotatória), o
grafo de faixas com todas as trajetórias viáveis, as amostras de treino com uma
única trajetória e as amostras de avaliação com todas as faixas.

Convenção de eixos: a linha da grade cresce para baixo; os ângulos partem de +x
(direita) e crescem no sentido anti-horário no plano (x, y para cima). As
geometrias são construídas em coordenadas "matemáticas" centradas na grade, em
células da resolução de contexto.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from functools import cached_property
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial import cKDTree

from .circular_stats import TWO_PI, merge_modes
from .errors import LayoutGenerationError, RasterizationError

REFERENCE_SIDE = 256

LAYOUT_KINDS: Tuple[str, ...] = (
    "intersection",
    "straight",
    "curve",
    "t_intersection",
    "one_way_intersection",
    "y_intersection",
    "roundabout",
)

ARM_WIDTH_RANGE = (20.0, 60.0)
MAX_LANES_PER_DIRECTION = 3
MIN_LANE_WIDTH = 10.0
MIN_ARM_GAP_DEG = 25.0
MAX_JUNCTION_RADIUS = 0.4 * REFERENCE_SIDE

STROKE_WIDTH = 3.0
MAX_JITTER = 2.0
MODE_MERGE_DEG = 15.0
MARKING_WIDTH = 2.0
DASH_LENGTH = 12.0
POINT_SPACING = 0.25
BEZIER_POINTS = 64
HANDLE_RATIO = 0.4


# ----------------------------------------------------------------------
# Tipos
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class GeometryParams:
    """Descrição paramétrica de um layout, em células da grade de referência (256)."""

    arm_angles_deg: Tuple[float, ...]
    arm_widths: Tuple[float, ...]
    lanes_in: Tuple[int, ...]
    lanes_out: Tuple[int, ...]
    center_line: str = "solid"
    lane_dividers: bool = True
    markings: bool = True
    roundabout_radius: float = 0.0
    angle_jitter_deg: float = 0.0
    unknown_beyond: Optional[float] = None

    def to_dict(self) -> Dict[str, object]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, object]) -> "GeometryParams":
        values = dict(data)
        for key in ("arm_angles_deg", "arm_widths", "lanes_in", "lanes_out"):
            values[key] = tuple(values[key])
        return cls(**values)


@dataclass(frozen=True)
class Arm:
    index: int
    angle: float
    width: float
    lanes_in: int
    lanes_out: int

    @property
    def lane_width(self) -> float:
        return self.width / (self.lanes_in + self.lanes_out)

    @property
    def direction(self) -> np.ndarray:
        return np.array([math.cos(self.angle), math.sin(self.angle)])

    @property
    def normal(self) -> np.ndarray:
        # normal à esquerda da direção de saída do braço
        return np.array([-math.sin(self.angle), math.cos(self.angle)])

    def inbound_offset(self, lane: int) -> float:
        if self.lanes_out == 0:
            return (lane + 0.5 - self.lanes_in / 2.0) * self.lane_width
        return (lane + 0.5) * self.lane_width

    def outbound_offset(self, lane: int) -> float:
        if self.lanes_in == 0:
            return -(lane + 0.5 - self.lanes_out / 2.0) * self.lane_width
        return -(lane + 0.5) * self.lane_width


@dataclass(frozen=True)
class LanePath:
    """Linha central dirigida de uma faixa, de um braço de entrada a um de saída."""

    entry_arm: int
    exit_arm: int
    entry_lane: int
    exit_lane: int
    points: np.ndarray
    half_width: float


@dataclass(frozen=True)
class RoadContext:
    """Contexto de 2 camadas: região trafegável e marcações, valores em [0, 1]."""

    drivable: np.ndarray
    markings: np.ndarray

    @property
    def side(self) -> int:
        return int(self.drivable.shape[0])

    def stack(self) -> np.ndarray:
        return np.stack([self.drivable, self.markings]).astype(np.float32)

    @classmethod
    def from_stack(cls, array: np.ndarray) -> "RoadContext":
        return cls(drivable=np.asarray(array[0], np.float32), markings=np.asarray(array[1], np.float32))


@dataclass(frozen=True)
class TrajectoryLabel:
    """Máscara de uma trajetória e vetores unitários de direção por célula."""

    mask: np.ndarray
    nx: np.ndarray
    ny: np.ndarray

    @property
    def n_masked(self) -> int:
        return int(np.count_nonzero(self.mask))

    @property
    def side(self) -> int:
        return int(self.mask.shape[0])

    def stack(self) -> np.ndarray:
        return np.stack([self.mask, self.nx, self.ny]).astype(np.float32)

    @classmethod
    def from_stack(cls, array: np.ndarray) -> "TrajectoryLabel":
        return cls(
            mask=(np.asarray(array[0]) > 0.5).astype(np.uint8),
            nx=np.asarray(array[1], np.float32),
            ny=np.asarray(array[2], np.float32),
        )


@dataclass(frozen=True)
class EvaluationSample:
    """Todas as faixas viáveis de um layout e os modos direcionais por célula."""

    context: RoadContext
    lanes: np.ndarray
    modes: Dict[Tuple[int, int], List[float]]
    kind: str = ""
    name: str = ""

    @property
    def n_mode_cells(self) -> int:
        return len(self.modes)

    def mode_table(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Linhas, colunas e ângulos (N, K) preenchidos com NaN onde não há modo."""

        cells = sorted(self.modes)
        max_modes = max((len(self.modes[c]) for c in cells), default=0)
        angles = np.full((len(cells), max(max_modes, 1)), np.nan)
        for index, cell in enumerate(cells):
            values = self.modes[cell]
            angles[index, : len(values)] = values
        rows = np.array([c[0] for c in cells], dtype=np.int64)
        cols = np.array([c[1] for c in cells], dtype=np.int64)
        return rows, cols, angles


@dataclass
class RoadLayout:
    kind: str
    params: GeometryParams
    seed: int
    grid_side: int
    arms: Tuple[Arm, ...]
    lane_graph: Tuple[LanePath, ...]
    junction_radius: float
    marking_phase: float = 0.0

    @property
    def scale(self) -> float:
        return self.grid_side / REFERENCE_SIDE

    @property
    def label_side(self) -> int:
        return self.grid_side // 2

    @property
    def stroke_width(self) -> float:
        """Largura do traço do rótulo, em células da resolução do rótulo."""

        return max(1.5, STROKE_WIDTH * self.scale)

    @cached_property
    def context(self) -> RoadContext:
        return _rasterize_context(self)


@dataclass(frozen=True)
class LayoutRecipe:
    """Entrada do corpus: tipo, parâmetros, partição e nome legível."""

    kind: str
    params: GeometryParams
    split: str
    name: str


# ----------------------------------------------------------------------
# Parâmetros padrão e corpus
# ----------------------------------------------------------------------
def default_params(kind: str) -> GeometryParams:
    if kind == "intersection":
        return _uniform_params((0, 90, 180, 270))
    if kind == "straight":
        return _uniform_params((0, 180))
    if kind == "curve":
        return _uniform_params((0, 90))
    if kind == "t_intersection":
        return _uniform_params((0, 90, 180))
    if kind == "one_way_intersection":
        return GeometryParams(
            arm_angles_deg=(0, 90, 180, 270),
            arm_widths=(40, 40, 40, 40),
            lanes_in=(1, 2, 1, 0),
            lanes_out=(1, 0, 1, 2),
        )
    if kind == "y_intersection":
        return _uniform_params((270, 50, 130))
    if kind == "roundabout":
        return GeometryParams(
            arm_angles_deg=(0, 90, 180, 270),
            arm_widths=(40, 40, 40, 40),
            lanes_in=(1, 1, 1, 1),
            lanes_out=(1, 1, 1, 1),
            roundabout_radius=45.0,
        )
    raise LayoutGenerationError(f"Tipo de layout desconhecido: {kind}")


def _uniform_params(angles: Sequence[float], width: float = 40.0, lanes: int = 1, **extra) -> GeometryParams:
    count = len(angles)
    return GeometryParams(
        arm_angles_deg=tuple(float(a) for a in angles),
        arm_widths=(float(width),) * count,
        lanes_in=(lanes,) * count,
        lanes_out=(lanes,) * count,
        **extra,
    )


def standard_corpus() -> Dict[str, List[LayoutRecipe]]:
    """Corpus completo: 13 layouts de treino e 8 variações de teste."""

    train = [
        LayoutRecipe("intersection", default_params("intersection"), "train", "intersection_a"),
        LayoutRecipe("intersection", _uniform_params((10, 100, 190, 280), width=44, center_line="dashed"), "train", "intersection_b"),
        LayoutRecipe("straight", default_params("straight"), "train", "straight_horizontal"),
        LayoutRecipe("straight", _uniform_params((90, 270), width=36, center_line="dashed"), "train", "straight_vertical"),
        LayoutRecipe("straight", _uniform_params((45, 225)), "train", "straight_diagonal"),
        LayoutRecipe("curve", default_params("curve"), "train", "curve"),
        LayoutRecipe("t_intersection", default_params("t_intersection"), "train", "t_intersection_a"),
        LayoutRecipe("t_intersection", _uniform_params((0, 180, 270)), "train", "t_intersection_b"),
        LayoutRecipe("t_intersection", _uniform_params((0, 90, 180), markings=False), "train", "t_intersection_unmarked"),
        LayoutRecipe("one_way_intersection", default_params("one_way_intersection"), "train", "one_way_vertical"),
        LayoutRecipe(
            "one_way_intersection",
            GeometryParams(
                arm_angles_deg=(0, 90, 180, 270),
                arm_widths=(40, 40, 40, 40),
                lanes_in=(0, 1, 2, 1),
                lanes_out=(2, 1, 0, 1),
            ),
            "train",
            "one_way_horizontal",
        ),
        LayoutRecipe("y_intersection", default_params("y_intersection"), "train", "y_intersection"),
        LayoutRecipe("roundabout", default_params("roundabout"), "train", "roundabout"),
    ]
    test = [
        LayoutRecipe("intersection", _uniform_params((0, 90, 180, 270), width=56, lanes=2), "test", "intersection_two_lanes"),
        LayoutRecipe("t_intersection", _two_lane_stem_t(), "test", "t_intersection_wide_stem"),
        LayoutRecipe("intersection", _uniform_params((0, 72, 144, 216, 288), width=36), "test", "intersection_five_arms"),
        LayoutRecipe(
            "roundabout",
            _uniform_params((0, 120, 240), roundabout_radius=45.0),
            "test",
            "roundabout_three_arms",
        ),
        LayoutRecipe(
            "y_intersection",
            GeometryParams(
                arm_angles_deg=(270, 50, 130),
                arm_widths=(56, 40, 40),
                lanes_in=(2, 1, 1),
                lanes_out=(2, 1, 1),
            ),
            "test",
            "y_intersection_wide_stem",
        ),
        LayoutRecipe("curve", _uniform_params((0, 135), width=56, lanes=2), "test", "curve_two_lanes"),
        LayoutRecipe(
            "one_way_intersection",
            GeometryParams(
                arm_angles_deg=(0, 90, 180, 270),
                arm_widths=(40, 40, 40, 40),
                lanes_in=(0, 0, 2, 2),
                lanes_out=(2, 2, 0, 0),
            ),
            "test",
            "one_way_both_streets",
        ),
        LayoutRecipe(
            "intersection",
            GeometryParams(
                arm_angles_deg=(0, 75, 180, 255),
                arm_widths=(40, 32, 48, 40),
                lanes_in=(1, 1, 1, 1),
                lanes_out=(1, 1, 1, 1),
            ),
            "test",
            "intersection_asymmetric",
        ),
    ]
    return {"train": train, "test": test}


def desk_corpus() -> Dict[str, List[LayoutRecipe]]:
    """Corpus reduzido (3 layouts de treino) para treinos de fumaça em CPU."""

    corpus = standard_corpus()
    by_name = {recipe.name: recipe for split in corpus.values() for recipe in split}
    return {
        "train": [by_name["intersection_a"], by_name["straight_horizontal"], by_name["t_intersection_a"]],
        "test": [by_name["t_intersection_wide_stem"], by_name["intersection_two_lanes"]],
    }


def _two_lane_stem_t() -> GeometryParams:
    return GeometryParams(
        arm_angles_deg=(0, 90, 180),
        arm_widths=(40, 56, 40),
        lanes_in=(1, 2, 1),
        lanes_out=(1, 2, 1),
    )


def build_layouts(recipes: Sequence[LayoutRecipe], grid_side: int = REFERENCE_SIDE, seed: int = 0) -> List[RoadLayout]:
    return [
        generate_layout(recipe.kind, recipe.params, seed=seed + index, grid_side=grid_side)
        for index, recipe in enumerate(recipes)
    ]


# ----------------------------------------------------------------------
# Geração de layout
# ----------------------------------------------------------------------
def generate_layout(
    kind: str,
    params: Optional[GeometryParams] = None,
    seed: int = 0,
    grid_side: int = REFERENCE_SIDE,
) -> RoadLayout:
    """Gera um layout determinístico para (kind, params, seed)."""

    if kind not in LAYOUT_KINDS:
        raise LayoutGenerationError(f"Tipo de layout desconhecido: {kind}")
    if grid_side < 32 or grid_side % 2:
        raise LayoutGenerationError(f"Lado da grade inválido: {grid_side}")
    params = params or default_params(kind)
    _validate_params(kind, params)

    rng = np.random.default_rng(seed)
    jitter = rng.uniform(-params.angle_jitter_deg, params.angle_jitter_deg, len(params.arm_angles_deg))
    arms = tuple(
        Arm(
            index=index,
            angle=math.radians((angle + delta) % 360.0),
            width=float(params.arm_widths[index]),
            lanes_in=int(params.lanes_in[index]),
            lanes_out=int(params.lanes_out[index]),
        )
        for index, (angle, delta) in enumerate(zip(params.arm_angles_deg, jitter))
    )
    marking_phase = float(rng.uniform(0.0, 2.0 * DASH_LENGTH))

    if kind == "roundabout":
        junction_radius = params.roundabout_radius
        lanes = _roundabout_lanes(arms, params.roundabout_radius)
    else:
        junction_radius = _junction_radius(arms)
        lanes = _junction_lanes(arms, junction_radius)

    if not lanes:
        raise LayoutGenerationError(f"Layout '{kind}' sem nenhuma faixa conectando entrada e saída")

    scale = grid_side / REFERENCE_SIDE
    scaled = tuple(
        LanePath(
            entry_arm=lane.entry_arm,
            exit_arm=lane.exit_arm,
            entry_lane=lane.entry_lane,
            exit_lane=lane.exit_lane,
            points=lane.points * scale,
            half_width=lane.half_width * scale,
        )
        for lane in lanes
    )
    return RoadLayout(
        kind=kind,
        params=params,
        seed=seed,
        grid_side=grid_side,
        arms=arms,
        lane_graph=scaled,
        junction_radius=junction_radius,
        marking_phase=marking_phase,
    )


def _validate_params(kind: str, params: GeometryParams) -> None:
    count = len(params.arm_angles_deg)
    sizes = {count, len(params.arm_widths), len(params.lanes_in), len(params.lanes_out)}
    if len(sizes) != 1:
        raise LayoutGenerationError("Parâmetros de braços com tamanhos inconsistentes")
    if count < 2:
        raise LayoutGenerationError("Um layout precisa de ao menos dois braços")
    if params.center_line not in ("solid", "dashed", "none"):
        raise LayoutGenerationError(f"Estilo de linha central inválido: {params.center_line}")

    one_way = kind == "one_way_intersection"
    for width, lanes_in, lanes_out in zip(params.arm_widths, params.lanes_in, params.lanes_out):
        if not ARM_WIDTH_RANGE[0] <= width <= ARM_WIDTH_RANGE[1]:
            raise LayoutGenerationError(
                f"Largura de braço {width} fora de {ARM_WIDTH_RANGE[0]:.0f}-{ARM_WIDTH_RANGE[1]:.0f} células"
            )
        low = 0 if one_way else 1
        for lanes in (lanes_in, lanes_out):
            if not low <= lanes <= MAX_LANES_PER_DIRECTION:
                raise LayoutGenerationError(f"Número de faixas por sentido inválido: {lanes}")
        if lanes_in + lanes_out < 1:
            raise LayoutGenerationError("Braço sem nenhuma faixa")
        if width / (lanes_in + lanes_out) < MIN_LANE_WIDTH:
            raise LayoutGenerationError(
                f"Faixas estreitas demais: largura {width} para {lanes_in + lanes_out} faixas"
            )
    if kind == "roundabout" and params.roundabout_radius <= 0:
        raise LayoutGenerationError("Rotatória exige roundabout_radius positivo")


def _sorted_gaps(arms: Sequence[Arm]) -> List[Tuple[Arm, Arm, float]]:
    ordered = sorted(arms, key=lambda arm: arm.angle)
    gaps = []
    for current, following in zip(ordered, ordered[1:] + ordered[:1]):
        gap = (following.angle - current.angle) % TWO_PI
        gaps.append((current, following, gap if gap > 0 else TWO_PI))
    return gaps


def _junction_radius(arms: Sequence[Arm]) -> float:
    gaps = _sorted_gaps(arms)
    radius = 0.0
    for first, second, gap in gaps:
        if gap < math.radians(MIN_ARM_GAP_DEG):
            raise LayoutGenerationError(
                f"Braços {first.index} e {second.index} sobrepostos (separação {math.degrees(gap):.1f}°)"
            )
        if gap < math.pi:
            half = max(first.width, second.width) / 2.0
            radius = max(radius, half / math.tan(gap / 2.0))
    radius += max(arm.width for arm in arms) / 2.0
    if radius > MAX_JUNCTION_RADIUS:
        raise LayoutGenerationError(f"Junção grande demais para a grade (raio {radius:.1f})")
    return radius


def _far_radius() -> float:
    return 0.75 * math.sqrt(2.0) * REFERENCE_SIDE


def _cubic_bezier(p0: np.ndarray, p1: np.ndarray, p2: np.ndarray, p3: np.ndarray, count: int = BEZIER_POINTS) -> np.ndarray:
    t = np.linspace(0.0, 1.0, count)[:, None]
    return (
        (1 - t) ** 3 * p0
        + 3 * (1 - t) ** 2 * t * p1
        + 3 * (1 - t) * t ** 2 * p2
        + t ** 3 * p3
    )


def _junction_lanes(arms: Sequence[Arm], junction_radius: float) -> List[LanePath]:
    far = _far_radius()
    lanes: List[LanePath] = []
    for entry in arms:
        for lane in range(entry.lanes_in):
            entry_offset = entry.inbound_offset(lane) * entry.normal
            start = far * entry.direction + entry_offset
            p0 = junction_radius * entry.direction + entry_offset
            for exit_arm in arms:
                if exit_arm.index == entry.index or exit_arm.lanes_out == 0:
                    continue
                exit_lane = min(lane, exit_arm.lanes_out - 1)
                exit_offset = exit_arm.outbound_offset(exit_lane) * exit_arm.normal
                p3 = junction_radius * exit_arm.direction + exit_offset
                end = far * exit_arm.direction + exit_offset
                handle = HANDLE_RATIO * float(np.linalg.norm(p3 - p0))
                corner = _cubic_bezier(
                    p0, p0 - handle * entry.direction, p3 - handle * exit_arm.direction, p3
                )
                points = np.vstack([start, corner, end])
                lanes.append(
                    LanePath(
                        entry_arm=entry.index,
                        exit_arm=exit_arm.index,
                        entry_lane=lane,
                        exit_lane=exit_lane,
                        points=points,
                        half_width=max(entry.lane_width, exit_arm.lane_width) / 2.0,
                    )
                )
    return lanes


def _roundabout_lanes(arms: Sequence[Arm], ring_radius: float) -> List[LanePath]:
    far = _far_radius()
    ring_lane = max(arm.lane_width for arm in arms)
    approach = ring_radius + 2.0 * ring_lane

    deltas = {}
    for arm in arms:
        ratio = min(0.9, (arm.width / 2.0 + ring_lane / 2.0) / ring_radius)
        deltas[arm.index] = math.asin(ratio)
    for first, second, gap in _sorted_gaps(arms):
        if gap <= deltas[first.index] + deltas[second.index]:
            raise LayoutGenerationError(
                f"Braços {first.index} e {second.index} próximos demais para a rotatória"
            )

    def ring_point(angle: float) -> np.ndarray:
        return ring_radius * np.array([math.cos(angle), math.sin(angle)])

    def ring_tangent(angle: float) -> np.ndarray:
        return np.array([-math.sin(angle), math.cos(angle)])

    lanes: List[LanePath] = []
    for entry in arms:
        for lane in range(entry.lanes_in):
            entry_offset = entry.inbound_offset(lane) * entry.normal
            start = far * entry.direction + entry_offset
            p0 = approach * entry.direction + entry_offset
            merge_angle = entry.angle + deltas[entry.index]
            merge = ring_point(merge_angle)
            for exit_arm in arms:
                if exit_arm.index == entry.index or exit_arm.lanes_out == 0:
                    continue
                exit_lane = min(lane, exit_arm.lanes_out - 1)
                exit_offset = exit_arm.outbound_offset(exit_lane) * exit_arm.normal
                p3 = approach * exit_arm.direction + exit_offset
                end = far * exit_arm.direction + exit_offset

                diverge_angle = exit_arm.angle - deltas[exit_arm.index]
                while diverge_angle <= merge_angle:
                    diverge_angle += TWO_PI
                arc_count = max(8, int(math.degrees(diverge_angle - merge_angle)))
                arc_angles = np.linspace(merge_angle, diverge_angle, arc_count)
                arc = ring_radius * np.stack([np.cos(arc_angles), np.sin(arc_angles)], axis=1)
                diverge = ring_point(diverge_angle)

                handle_in = HANDLE_RATIO * float(np.linalg.norm(merge - p0))
                entry_curve = _cubic_bezier(
                    p0, p0 - handle_in * entry.direction, merge - handle_in * ring_tangent(merge_angle), merge
                )
                handle_out = HANDLE_RATIO * float(np.linalg.norm(p3 - diverge))
                exit_curve = _cubic_bezier(
                    diverge,
                    diverge + handle_out * ring_tangent(diverge_angle),
                    p3 - handle_out * exit_arm.direction,
                    p3,
                )
                points = np.vstack([start, entry_curve, arc[1:-1], exit_curve, end])
                lanes.append(
                    LanePath(
                        entry_arm=entry.index,
                        exit_arm=exit_arm.index,
                        entry_lane=lane,
                        exit_lane=exit_lane,
                        points=points,
                        half_width=max(entry.lane_width, exit_arm.lane_width, ring_lane) / 2.0,
                    )
                )
    return lanes


# ----------------------------------------------------------------------
# Rasterização
# ----------------------------------------------------------------------
def _cell_centers(cells: int, step: float, grid_side: int) -> Tuple[np.ndarray, np.ndarray]:
    """Centros de células em coordenadas matemáticas (unidades da grade de contexto)."""

    coords = (np.arange(cells) + 0.5) * step
    rows, cols = np.meshgrid(coords, coords, indexing="ij")
    half = grid_side / 2.0
    return cols - half, half - rows


def densify(points: np.ndarray, spacing: float = POINT_SPACING) -> Tuple[np.ndarray, np.ndarray]:
    """Reamostra a polilinha com espaçamento uniforme e devolve pontos e tangentes unitárias."""

    points = np.asarray(points, dtype=np.float64)
    segments = np.diff(points, axis=0)
    lengths = np.linalg.norm(segments, axis=1)
    keep = lengths > 1e-9
    segments, lengths = segments[keep], lengths[keep]
    if not len(lengths):
        raise RasterizationError("Polilinha degenerada (comprimento zero)")
    starts = points[:-1][keep]
    cumulative = np.concatenate([[0.0], np.cumsum(lengths)])
    count = int(math.ceil(cumulative[-1] / spacing)) + 1
    distance = np.linspace(0.0, cumulative[-1], count)
    index = np.clip(np.searchsorted(cumulative, distance, side="right") - 1, 0, len(lengths) - 1)
    fraction = (distance - cumulative[index]) / lengths[index]
    dense = starts[index] + segments[index] * fraction[:, None]
    tangents = segments[index] / lengths[index][:, None]
    return dense, tangents


def _stroke(points: np.ndarray, layout: RoadLayout) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Rasteriza uma polilinha na grade do rótulo: máscara e tangente do ponto mais próximo."""

    dense, tangents = densify(points, POINT_SPACING * max(layout.scale, 0.25))
    side = layout.label_side
    xs, ys = _cell_centers(side, 2.0, layout.grid_side)
    radius = layout.stroke_width  # meia largura em células do rótulo = largura em células de contexto
    distances, index = cKDTree(dense).query(
        np.column_stack([xs.ravel(), ys.ravel()]), distance_upper_bound=radius + 1e-9
    )
    inside = np.isfinite(distances)
    mask = np.zeros(side * side, dtype=np.uint8)
    nx = np.zeros(side * side, dtype=np.float64)
    ny = np.zeros(side * side, dtype=np.float64)
    mask[inside] = 1
    nx[inside] = tangents[index[inside], 0]
    ny[inside] = tangents[index[inside], 1]
    return mask.reshape(side, side), nx.reshape(side, side), ny.reshape(side, side)


def _rasterize_context(layout: RoadLayout) -> RoadContext:
    side = layout.grid_side
    scale = layout.scale
    xs, ys = _cell_centers(side, 1.0, side)
    drivable = np.zeros((side, side), dtype=bool)

    strip_start = layout.junction_radius * scale if layout.kind == "roundabout" else 0.0
    for arm in layout.arms:
        along = xs * arm.direction[0] + ys * arm.direction[1]
        across = xs * arm.normal[0] + ys * arm.normal[1]
        drivable |= (along >= strip_start) & (np.abs(across) <= arm.width * scale / 2.0)

    dense_points, half_widths = [], []
    for lane in layout.lane_graph:
        dense, _ = densify(lane.points, POINT_SPACING * max(scale, 0.25))
        dense_points.append(dense)
        half_widths.append(np.full(len(dense), lane.half_width))
    tree_points = np.vstack(dense_points)
    tree_widths = np.concatenate(half_widths)
    distances, index = cKDTree(tree_points).query(
        np.column_stack([xs.ravel(), ys.ravel()]),
        distance_upper_bound=float(tree_widths.max()) + 1e-9,
    )
    found = np.isfinite(distances)
    near_lane = np.zeros(side * side, dtype=bool)
    near_lane[found] = distances[found] <= tree_widths[index[found]]
    drivable |= near_lane.reshape(side, side)

    radius = np.hypot(xs, ys)
    if layout.kind == "roundabout":
        ring_lane = max(arm.lane_width for arm in layout.arms) * scale
        ring_center = layout.junction_radius * scale
        drivable |= np.abs(radius - ring_center) <= ring_lane

    markings = _rasterize_markings(layout, xs, ys) & drivable
    drivable_layer = drivable.astype(np.float32)
    markings_layer = markings.astype(np.float32)

    if layout.params.unknown_beyond is not None:
        unknown = radius > layout.params.unknown_beyond * scale
        drivable_layer[unknown] = 0.5
        markings_layer[unknown] = 0.5
    return RoadContext(drivable=drivable_layer, markings=markings_layer)


def _rasterize_markings(layout: RoadLayout, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    side = layout.grid_side
    markings = np.zeros((side, side), dtype=bool)
    if not layout.params.markings:
        return markings

    scale = layout.scale
    half_line = max(0.5, MARKING_WIDTH * scale / 2.0)
    dash = DASH_LENGTH * scale
    stop = layout.junction_radius * scale
    if layout.kind == "roundabout":
        ring_lane = max(arm.lane_width for arm in layout.arms) * scale
        stop += 2.0 * ring_lane
        island = layout.junction_radius * scale - ring_lane
        markings |= np.abs(np.hypot(xs, ys) - island) <= half_line

    for arm in layout.arms:
        along = xs * arm.direction[0] + ys * arm.direction[1]
        across = xs * arm.normal[0] + ys * arm.normal[1]
        beyond = along >= stop
        dashed = np.floor((along - layout.marking_phase * scale) / dash) % 2 == 0
        lane_width = arm.lane_width * scale

        if arm.lanes_in and arm.lanes_out and layout.params.center_line != "none":
            line = beyond & (np.abs(across) <= half_line)
            if layout.params.center_line == "dashed":
                line &= dashed
            markings |= line

        if layout.params.lane_dividers:
            offsets = []
            if arm.lanes_out == 0:
                offsets += [(k - arm.lanes_in / 2.0) * lane_width for k in range(1, arm.lanes_in)]
            elif arm.lanes_in == 0:
                offsets += [(k - arm.lanes_out / 2.0) * lane_width for k in range(1, arm.lanes_out)]
            else:
                offsets += [k * lane_width for k in range(1, arm.lanes_in)]
                offsets += [-k * lane_width for k in range(1, arm.lanes_out)]
            for offset in offsets:
                markings |= beyond & dashed & (np.abs(across - offset) <= half_line)
    return markings


def _drivable_at_label(context: RoadContext) -> np.ndarray:
    side = context.side // 2
    blocks = context.drivable.reshape(side, 2, side, 2)
    return blocks.max(axis=(1, 3)) >= 0.5


def rasterize_sample(layout: RoadLayout, traj: np.ndarray) -> Tuple[RoadContext, TrajectoryLabel]:
    """Contexto na resolução cheia e rótulo da trajetória na metade da resolução."""

    context = layout.context
    mask, nx, ny = _stroke(traj, layout)
    if not mask.any():
        raise RasterizationError("Trajetória não cobre nenhuma célula da grade")
    outside = mask.astype(bool) & ~_drivable_at_label(context)
    if outside.any():
        raise RasterizationError(
            f"Trajetória sai da região trafegável em {int(outside.sum())} células"
        )
    label = TrajectoryLabel(
        mask=mask,
        nx=nx.astype(np.float32),
        ny=ny.astype(np.float32),
    )
    return context, label


def sample_trajectory(layout: RoadLayout, seed: int) -> np.ndarray:
    """Escolhe uniformemente uma faixa e aplica um pequeno desvio lateral suave."""

    rng = np.random.default_rng(seed)
    lane = layout.lane_graph[int(rng.integers(len(layout.lane_graph)))]
    max_offset = min(MAX_JITTER, 0.15 * 2.0 * lane.half_width / layout.scale) * layout.scale
    amplitude = rng.uniform(0.0, max_offset)
    wavelength = rng.uniform(80.0, 200.0) * layout.scale
    phase = rng.uniform(0.0, TWO_PI)

    dense, tangents = densify(lane.points, 1.0 * layout.scale)
    arc = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(dense, axis=0), axis=1))])
    normals = np.column_stack([-tangents[:, 1], tangents[:, 0]])
    jittered = dense + (amplitude * np.sin(TWO_PI * arc / wavelength + phase))[:, None] * normals

    mask, _, _ = _stroke(jittered, layout)
    if (mask.astype(bool) & ~_drivable_at_label(layout.context)).any():
        return lane.points.copy()
    return jittered


def build_eval_sample(layout: RoadLayout, name: str = "") -> EvaluationSample:
    """Une todas as faixas do grafo e junta os modos direcionais por célula."""

    side = layout.label_side
    lanes = np.zeros((side, side), dtype=np.uint8)
    cell_chunks, angle_chunks = [], []
    for lane in layout.lane_graph:
        mask, nx, ny = _stroke(lane.points, layout)
        lanes |= mask
        cells = np.flatnonzero(mask)
        cell_chunks.append(cells)
        angle_chunks.append(np.mod(np.arctan2(ny.ravel()[cells], nx.ravel()[cells]), TWO_PI))

    cells = np.concatenate(cell_chunks)
    angles = np.concatenate(angle_chunks)
    order = np.argsort(cells, kind="stable")
    cells, angles = cells[order], angles[order]
    unique, starts = np.unique(cells, return_index=True)
    bounds = list(starts[1:]) + [len(cells)]

    threshold = math.radians(MODE_MERGE_DEG)
    modes: Dict[Tuple[int, int], List[float]] = {}
    for cell, begin, end in zip(unique, starts, bounds):
        merged = merge_modes(angles[begin:end], threshold)
        modes[(int(cell // side), int(cell % side))] = [a % TWO_PI for a in merged]
    return EvaluationSample(context=layout.context, lanes=lanes, modes=modes, kind=layout.kind, name=name)


def to_pixel_coords(points: np.ndarray, grid_side: int) -> np.ndarray:
    """Converte pontos matemáticos (x, y) em (linha, coluna) contínuos da grade de contexto."""

    half = grid_side / 2.0
    points = np.asarray(points, dtype=np.float64)
    return np.column_stack([half - points[:, 1], points[:, 0] + half])
