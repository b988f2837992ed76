"""Métricas de avaliação independentes de hiperparâmetros e varredura de experimentos."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import TYPE_CHECKING, Callable, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from .augmentation import augment_eval_sample, sample_warp_params
from .circular_stats import CircularConstants, kl_divergence_arrays
from .errors import ContractError, DegenerateLabelError
from .network import DirectionalLaneNet, NetworkConfig, RawOutput, forward
from .scene_synth import EvaluationSample, RoadLayout, build_eval_sample

if TYPE_CHECKING:
    from .trainer import TrainConfig

CE_CLAMP = 1e-6
RESULT_COLUMNS = ["exp_id", "eta", "p_drop", "alpha_sla", "sla_train", "da_train", "sla_test", "da_test"]
RESULTS_CSV = "results.csv"
RESULTS_XLSX = "results.xlsx"
RESULTS_SHEET = "Resultados"

LogCallback = Callable[[str], None]


# ----------------------------------------------------------------------
# Métricas
# ----------------------------------------------------------------------
def eval_sla(Y: np.ndarray, lanes: np.ndarray) -> float:
    """Entropia cruzada binária média entre Y normalizado (min-max) e as faixas viáveis."""

    Y = np.asarray(Y, dtype=np.float64)
    lanes = np.asarray(lanes, dtype=np.float64)
    if Y.shape != lanes.shape:
        raise ContractError(f"Formas diferentes: Y {Y.shape} e faixas {lanes.shape}")
    low, high = float(Y.min()), float(Y.max())
    if high > low:
        Y = (Y - low) / (high - low)
    Y = np.clip(Y, CE_CLAMP, 1.0 - CE_CLAMP)
    return float(-np.mean(lanes * np.log(Y) + (1.0 - lanes) * np.log(1.0 - Y)))


def eval_da(raw: RawOutput, sample: EvaluationSample, consts: CircularConstants = CircularConstants()) -> float:
    """KL médio entre o alvo multimodal (pesos iguais, b_max) e a mistura predita."""

    if raw.side != sample.lanes.shape[0]:
        raise ContractError(f"Saída {raw.side}x{raw.side} incompatível com a amostra {sample.lanes.shape}")
    rows, cols, angles = sample.mode_table()
    if not len(rows):
        raise DegenerateLabelError(f"Amostra '{sample.name}' sem células com modos")

    valid = np.isfinite(angles)
    counts = valid.sum(axis=1, keepdims=True)
    target_ws = valid / counts
    target_mus = np.where(valid, angles, 0.0)
    target_bs = np.full_like(target_mus, consts.b_max)

    mus, bs, ws = raw.mixture_params(consts)
    divergences = kl_divergence_arrays(
        target_mus, target_bs, target_ws,
        mus[rows, cols], bs[rows, cols], ws[rows, cols],
        n_quad=consts.n_quad,
    )
    return float(np.mean(divergences))


# ----------------------------------------------------------------------
# Relatório
# ----------------------------------------------------------------------
@dataclass
class LayoutScore:
    layout_name: str
    layout_kind: str
    instances: int
    l_eval_sla: float
    l_eval_da: float


@dataclass
class EvalReport:
    """Métricas por layout e agregadas (média sobre layouts) de uma partição."""

    split: str
    per_layout: List[LayoutScore] = field(default_factory=list)
    fingerprint: str = ""
    epoch: Optional[int] = None

    @property
    def aggregate_sla(self) -> float:
        return float(np.mean([score.l_eval_sla for score in self.per_layout]))

    @property
    def aggregate_da(self) -> float:
        return float(np.mean([score.l_eval_da for score in self.per_layout]))

    def to_dict(self) -> Dict[str, object]:
        return {
            "split": self.split,
            "epoch": self.epoch,
            "fingerprint": self.fingerprint,
            "aggregate": {"l_eval_sla": self.aggregate_sla, "l_eval_da": self.aggregate_da},
            "per_layout": [asdict(score) for score in self.per_layout],
        }

    def to_frame(self) -> pd.DataFrame:
        rows = [
            {
                "epoch": self.epoch,
                "split": self.split,
                "layout_kind": score.layout_kind,
                "layout_name": score.layout_name,
                "l_eval_sla": score.l_eval_sla,
                "l_eval_da": score.l_eval_da,
            }
            for score in self.per_layout
        ]
        rows.append(
            {
                "epoch": self.epoch,
                "split": self.split,
                "layout_kind": "all",
                "layout_name": "all",
                "l_eval_sla": self.aggregate_sla,
                "l_eval_da": self.aggregate_da,
            }
        )
        return pd.DataFrame(rows)

    def write(self, out_dir: Path | str) -> Path:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        json_path = out_dir / f"eval_{self.split}.json"
        with json_path.open("w", encoding="utf-8") as handle:
            json.dump(self.to_dict(), handle, indent=2, ensure_ascii=False)
        self.to_frame().to_csv(out_dir / f"eval_{self.split}.csv", index=False)
        return json_path


def config_fingerprint(*configs: object) -> str:
    payload = json.dumps(
        [asdict(config) if hasattr(config, "__dataclass_fields__") else config for config in configs],
        sort_keys=True,
        default=str,
    )
    return hashlib.sha1(payload.encode("utf-8")).hexdigest()[:12]


def build_eval_set(
    layouts: Sequence[RoadLayout],
    names: Optional[Sequence[str]] = None,
    instances: int = 10,
    seed: int = 0,
) -> List[EvaluationSample]:
    """Amostras de avaliação aumentadas com sementes fixas (``instances`` por layout)."""

    names = list(names) if names is not None else [f"{layout.kind}_{index}" for index, layout in enumerate(layouts)]
    samples: List[EvaluationSample] = []
    for index, (layout, name) in enumerate(zip(layouts, names)):
        base = build_eval_sample(layout, name=name)
        if instances <= 0:
            samples.append(base)
            continue
        for instance in range(instances):
            warp_seed = int(np.random.SeedSequence([seed, index, instance]).generate_state(1)[0])
            samples.append(augment_eval_sample(base, sample_warp_params(layout.grid_side, warp_seed)))
    return samples


def evaluate_model(
    model: DirectionalLaneNet,
    samples: Sequence[EvaluationSample],
    split: str,
    consts: CircularConstants = CircularConstants(),
    fingerprint: str = "",
    epoch: Optional[int] = None,
) -> EvalReport:
    """Avalia a rede em modo determinístico; as instâncias são agrupadas pelo nome do layout."""

    if not samples:
        raise ContractError(f"Conjunto de avaliação '{split}' vazio")
    grouped: Dict[str, List[tuple]] = {}
    kinds: Dict[str, str] = {}
    for index, sample in enumerate(samples):
        key = sample.name or f"sample_{index}"
        raw = forward(sample.context, model, mode="eval")
        grouped.setdefault(key, []).append((eval_sla(raw.sla, sample.lanes), eval_da(raw, sample, consts)))
        kinds[key] = sample.kind

    report = EvalReport(split=split, fingerprint=fingerprint, epoch=epoch)
    for key, scores in grouped.items():
        values = np.asarray(scores, dtype=np.float64)
        report.per_layout.append(
            LayoutScore(
                layout_name=key,
                layout_kind=kinds[key],
                instances=len(scores),
                l_eval_sla=float(values[:, 0].mean()),
                l_eval_da=float(values[:, 1].mean()),
            )
        )
    return report


# ----------------------------------------------------------------------
# Varredura de experimentos
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class ExperimentSpec:
    exp_id: str
    config: "TrainConfig"


REFERENCE_EXPERIMENT_ROWS = (
    ("1", 6e-6, 0.2, 100.0),
    ("2", 6e-6, 0.2, 10.0),
    ("3", 6e-6, 0.2, 1.0),
    ("4", 9e-6, 0.2, 100.0),
    ("5", 3e-6, 0.2, 100.0),
    ("6", 6e-6, 0.0, 100.0),
    ("7", 6e-6, 0.4, 100.0),
)


def reference_experiments(base: "TrainConfig") -> List[ExperimentSpec]:
    """Os sete experimentos (η, p_drop, α_SLA) da varredura de referência sobre ``base``."""

    return [
        ExperimentSpec(exp_id, replace(base, eta=eta, dropout_p=p_drop, alpha_sla=alpha))
        for exp_id, eta, p_drop, alpha in REFERENCE_EXPERIMENT_ROWS
    ]


def write_results_table(results: pd.DataFrame, out_dir: Path | str) -> Path:
    """Grava a tabela de resultados em CSV e numa aba do Excel."""

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / RESULTS_CSV
    results.to_csv(csv_path, index=False, columns=RESULT_COLUMNS)
    with pd.ExcelWriter(out_dir / RESULTS_XLSX, engine="openpyxl") as writer:
        results.to_excel(writer, sheet_name=RESULTS_SHEET, index=False, columns=RESULT_COLUMNS)
    return csv_path


def run_sweep(
    experiments: Sequence[ExperimentSpec],
    layouts: Sequence[RoadLayout],
    eval_sets: Dict[str, Sequence[EvaluationSample]],
    network_config: NetworkConfig,
    out_dir: Path | str,
    device: str = "cpu",
    log_callback: Optional[LogCallback] = None,
) -> pd.DataFrame:
    """Treina cada experimento e tabula as métricas finais de treino e teste."""

    from .trainer import DirectionalLaneTrainer

    if not experiments:
        raise ContractError("A varredura precisa de ao menos um experimento")
    out_dir = Path(out_dir)
    rows = []
    for spec in experiments:
        message = f"🏁 Experimento {spec.exp_id}: η={spec.config.eta:g}, p_drop={spec.config.dropout_p}, α={spec.config.alpha_sla:g}"
        logging.info(message)
        if log_callback:
            log_callback(f"[INFO] {message}")
        trainer = DirectionalLaneTrainer(network_config, spec.config, device=device, log_callback=log_callback)
        result = trainer.train(layouts, eval_sets, out_dir / f"exp_{spec.exp_id}")
        row = {
            "exp_id": spec.exp_id,
            "eta": spec.config.eta,
            "p_drop": spec.config.dropout_p,
            "alpha_sla": spec.config.alpha_sla,
        }
        for split in ("train", "test"):
            report = result.final_reports.get(split)
            row[f"sla_{split}"] = report.aggregate_sla if report else float("nan")
            row[f"da_{split}"] = report.aggregate_da if report else float("nan")
        rows.append(row)

    results = pd.DataFrame(rows, columns=RESULT_COLUMNS)
    write_results_table(results, out_dir)
    return results
