"""Contêiner do dataset: arrays binários com cabeçalho + sidecars JSON.

Formato de cada array: cabeçalho de quatro uint32 little-endian (camadas, H, W,
versão) seguido dos dados em float32 little-endian, na ordem (camada, linha,
coluna).
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .augmentation import augment_eval_sample, sample_warp_params
from .scene_synth import (
    REFERENCE_SIDE,
    EvaluationSample,
    LayoutRecipe,
    RoadContext,
    RoadLayout,
    TrajectoryLabel,
    build_eval_sample,
    generate_layout,
    rasterize_sample,
    sample_trajectory,
)

ARRAY_FORMAT_VERSION = 1
HEADER_DTYPE = np.dtype("<u4")
DATA_DTYPE = np.dtype("<f4")
SPLITS = ("train", "test")

LogCallback = Callable[[str], None]
ProgressCallback = Callable[[int, str], None]


# ----------------------------------------------------------------------
# Arrays binários
# ----------------------------------------------------------------------
def write_array(path: Path | str, array: np.ndarray) -> Path:
    path = Path(path)
    array = np.asarray(array)
    if array.ndim == 2:
        array = array[None]
    if array.ndim != 3:
        raise ValueError(f"Array deve ter forma (camadas, H, W); recebido {array.shape}")
    header = np.array([*array.shape, ARRAY_FORMAT_VERSION], dtype=HEADER_DTYPE)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as handle:
        handle.write(header.tobytes())
        handle.write(np.ascontiguousarray(array, dtype=DATA_DTYPE).tobytes())
    return path


def read_array(path: Path | str) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Arquivo não encontrado: {path}")
    raw = path.read_bytes()
    header_size = 4 * HEADER_DTYPE.itemsize
    if len(raw) < header_size:
        raise ValueError(f"Arquivo truncado: {path}")
    layers, height, width, version = np.frombuffer(raw[:header_size], dtype=HEADER_DTYPE)
    if version != ARRAY_FORMAT_VERSION:
        raise ValueError(f"Versão de array não suportada ({version}) em {path}")
    expected = int(layers) * int(height) * int(width) * DATA_DTYPE.itemsize
    if len(raw) - header_size != expected:
        raise ValueError(f"Tamanho inconsistente com o cabeçalho em {path}")
    data = np.frombuffer(raw[header_size:], dtype=DATA_DTYPE)
    return data.reshape(int(layers), int(height), int(width)).astype(np.float32)


def _write_json(path: Path, data: object) -> None:
    with path.open("w", encoding="utf-8") as handle:
        json.dump(data, handle, indent=2, ensure_ascii=False)


def _read_json(path: Path) -> object:
    if not path.exists():
        raise FileNotFoundError(f"Arquivo não encontrado: {path}")
    with path.open("r", encoding="utf-8") as handle:
        return json.load(handle)


def _sidecar(layout: RoadLayout, recipe_name: str, split: str, sample_type: str, **extra: object) -> Dict[str, object]:
    data: Dict[str, object] = {
        "layout_kind": layout.kind,
        "layout_name": recipe_name,
        "seed": layout.seed,
        "grid_side": layout.grid_side,
        "geometry": layout.params.to_dict(),
        "split": split,
        "sample_type": sample_type,
    }
    data.update(extra)
    return data


# ----------------------------------------------------------------------
# Amostras
# ----------------------------------------------------------------------
def write_training_sample(
    directory: Path | str,
    name: str,
    context: RoadContext,
    label: TrajectoryLabel,
    metadata: Dict[str, object],
) -> Path:
    directory = Path(directory)
    write_array(directory / f"{name}.context.bin", context.stack())
    write_array(directory / f"{name}.label.bin", label.stack())
    sidecar = directory / f"{name}.json"
    _write_json(sidecar, metadata)
    return sidecar


def read_training_sample(directory: Path | str, name: str) -> Tuple[RoadContext, TrajectoryLabel, Dict[str, object]]:
    directory = Path(directory)
    context = RoadContext.from_stack(read_array(directory / f"{name}.context.bin"))
    label = TrajectoryLabel.from_stack(read_array(directory / f"{name}.label.bin"))
    metadata = _read_json(directory / f"{name}.json")
    return context, label, metadata


def write_eval_sample(
    directory: Path | str,
    name: str,
    sample: EvaluationSample,
    metadata: Dict[str, object],
) -> Path:
    directory = Path(directory)
    write_array(directory / f"{name}.context.bin", sample.context.stack())
    write_array(directory / f"{name}.lanes.bin", sample.lanes)
    modes = [[i, j, [float(a) for a in angles]] for (i, j), angles in sorted(sample.modes.items())]
    _write_json(directory / f"{name}.modes.json", modes)
    sidecar = directory / f"{name}.json"
    _write_json(sidecar, metadata)
    return sidecar


def read_eval_sample(directory: Path | str, name: str) -> Tuple[EvaluationSample, Dict[str, object]]:
    directory = Path(directory)
    context = RoadContext.from_stack(read_array(directory / f"{name}.context.bin"))
    lanes = (read_array(directory / f"{name}.lanes.bin")[0] > 0.5).astype(np.uint8)
    modes = {(int(i), int(j)): [float(a) for a in angles] for i, j, angles in _read_json(directory / f"{name}.modes.json")}
    metadata = _read_json(directory / f"{name}.json")
    sample = EvaluationSample(
        context=context,
        lanes=lanes,
        modes=modes,
        kind=str(metadata.get("layout_kind", "")),
        name=str(metadata.get("layout_name", "")),
    )
    return sample, metadata


# ----------------------------------------------------------------------
# Geração
# ----------------------------------------------------------------------
@dataclass
class DatasetManifest:
    root: Path
    grid_side: int
    seed: int
    counts: Dict[str, Dict[str, int]] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, object]:
        return {"root": str(self.root), "grid_side": self.grid_side, "seed": self.seed, "counts": self.counts}


def _job_seed(seed: int, *keys: int) -> int:
    return int(np.random.SeedSequence([seed, *keys]).generate_state(1)[0])


class DatasetGenerator:
    """Gera o dataset completo (treino + avaliação) em disco."""

    MANIFEST_FILENAME = "manifest.json"

    def __init__(
        self,
        grid_side: int = REFERENCE_SIDE,
        eval_instances: int = 10,
        max_workers: int = 4,
        log_callback: Optional[LogCallback] = None,
        progress_callback: Optional[ProgressCallback] = None,
    ) -> None:
        self.grid_side = grid_side
        self.eval_instances = eval_instances
        self.max_workers = max(1, max_workers)
        self.log_callback = log_callback
        self.progress_callback = progress_callback

    def _log(self, message: str, level: str = "INFO") -> None:
        if self.log_callback:
            self.log_callback(f"[{level}] {message}")
        logging.log(getattr(logging, level, logging.INFO), message)

    def _update_progress(self, progress: int, message: str = "") -> None:
        if self.progress_callback:
            self.progress_callback(progress, message)

    # ------------------------------------------------------------------
    # API pública
    # ------------------------------------------------------------------
    def generate(
        self,
        corpus: Dict[str, Sequence[LayoutRecipe]],
        out_dir: Path | str,
        samples_per_layout: int,
        seed: int = 0,
    ) -> DatasetManifest:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        manifest = DatasetManifest(root=out_dir, grid_side=self.grid_side, seed=seed)

        jobs: List[Callable[[], Tuple[str, str]]] = []
        for split_index, split in enumerate(SPLITS):
            recipes = list(corpus.get(split, []))
            if not recipes:
                continue
            manifest.counts[split] = {"samples": 0, "eval": 0}
            self._log(f"📄 Partição '{split}': {len(recipes)} layouts")
            for layout_index, recipe in enumerate(recipes):
                layout = generate_layout(
                    recipe.kind,
                    recipe.params,
                    seed=_job_seed(seed, split_index, layout_index),
                    grid_side=self.grid_side,
                )
                if split == "train":
                    for sample_index in range(samples_per_layout):
                        jobs.append(self._training_job(out_dir, split, recipe, layout, sample_index, seed))
                jobs.append(self._eval_job(out_dir, split, recipe, layout, seed))

        total = len(jobs)
        with ThreadPoolExecutor(max_workers=self.max_workers) as executor:
            for done, (split, kind) in enumerate(executor.map(lambda job: job(), jobs), start=1):
                manifest.counts[split][kind] += 1 if kind == "samples" else self.eval_instances
                self._update_progress(int(100 * done / total), f"{done}/{total} tarefas")

        _write_json(out_dir / self.MANIFEST_FILENAME, manifest.to_dict())
        self._log(f"✅ Dataset gerado em: {out_dir}")
        return manifest

    # ------------------------------------------------------------------
    # Tarefas
    # ------------------------------------------------------------------
    def _training_job(
        self, out_dir: Path, split: str, recipe: LayoutRecipe, layout: RoadLayout, sample_index: int, seed: int
    ) -> Callable[[], Tuple[str, str]]:
        def job() -> Tuple[str, str]:
            trajectory_seed = _job_seed(seed, layout.seed, sample_index)
            context, label = rasterize_sample(layout, sample_trajectory(layout, trajectory_seed))
            name = f"{recipe.name}_{sample_index:04d}"
            metadata = _sidecar(layout, recipe.name, split, "train", trajectory_seed=trajectory_seed)
            write_training_sample(out_dir / split / "samples", name, context, label, metadata)
            return split, "samples"

        return job

    def _eval_job(
        self, out_dir: Path, split: str, recipe: LayoutRecipe, layout: RoadLayout, seed: int
    ) -> Callable[[], Tuple[str, str]]:
        def job() -> Tuple[str, str]:
            base = build_eval_sample(layout, name=recipe.name)
            for instance in range(self.eval_instances):
                warp_seed = _job_seed(seed, layout.seed, 10_000 + instance)
                params = sample_warp_params(self.grid_side, warp_seed)
                sample = augment_eval_sample(base, params)
                metadata = _sidecar(layout, recipe.name, split, "eval", warp_seed=warp_seed, instance=instance)
                write_eval_sample(out_dir / split / "eval", f"{recipe.name}_{instance:02d}", sample, metadata)
            return split, "eval"

        return job


def generate_dataset(
    corpus: Dict[str, Sequence[LayoutRecipe]],
    out_dir: Path | str,
    samples_per_layout: int,
    seed: int = 0,
    max_workers: int = 4,
    grid_side: int = REFERENCE_SIDE,
    eval_instances: int = 10,
    log_callback: Optional[LogCallback] = None,
) -> DatasetManifest:
    generator = DatasetGenerator(
        grid_side=grid_side,
        eval_instances=eval_instances,
        max_workers=max_workers,
        log_callback=log_callback,
    )
    return generator.generate(corpus, out_dir, samples_per_layout, seed)


def list_samples(directory: Path | str, suffix: str = ".context.bin") -> List[str]:
    """Nomes das amostras presentes num diretório, em ordem."""

    directory = Path(directory)
    return sorted(path.name[: -len(suffix)] for path in directory.glob(f"*{suffix}"))
