"""Treinamento online com uma amostra por passo.

Cada passo sorteia layout, trajetória, rotação/warp e o descarte de marcações a
partir de ``SeedSequence([seed, epoch, amostra])``, de modo que a sequência de
amostras independe de retomadas e do número de workers. O determinismo das
operações do backend (cuDNN, por exemplo) não é forçado.
"""

from __future__ import annotations

import json
import logging
import time
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Dict, Iterator, List, Optional, Sequence

import numpy as np
import pandas as pd
import torch

from .augmentation import apply_augmentation, drop_markings, sample_warp_params
from .circular_stats import CircularConstants
from .errors import ContractError, NonFiniteLossError, RasterizationError
from .evaluation import EvalReport, config_fingerprint, evaluate_model
from .losses import LossConfig, compute_losses
from .network import NetworkConfig, build_model, load_checkpoint, save_checkpoint
from .scene_synth import EvaluationSample, RoadContext, RoadLayout, TrajectoryLabel, rasterize_sample, sample_trajectory

LogCallback = Callable[[str], None]
ProgressCallback = Callable[[int, str], None]

MAX_SAMPLE_ATTEMPTS = 8


@dataclass(frozen=True)
class TrainConfig:
    eta: float = 6e-6
    lr_decay: float = 0.9
    lr_step_epochs: int = 100
    dropout_p: float = 0.2
    alpha_sla: float = 100.0
    epochs: int = 2500
    samples_per_epoch: int = 75
    eval_every: int = 25
    eval_instances: int = 10
    marking_dropout_p: float = 0.0
    b_max: float = 88.0
    epsilon: float = 1e-3
    seed: int = 0
    grid_scale: str = "full"
    prefetch: int = 2
    workers: int = 2

    def __post_init__(self) -> None:
        if not self.eta > 0:
            raise ContractError(f"eta deve ser positivo (recebido {self.eta})")
        if self.epochs < 0:
            raise ContractError(f"epochs não pode ser negativo (recebido {self.epochs})")
        if self.samples_per_epoch < 1:
            raise ContractError(f"samples_per_epoch deve ser >= 1 (recebido {self.samples_per_epoch})")
        if self.eval_every < 1:
            raise ContractError(f"eval_every deve ser >= 1 (recebido {self.eval_every})")
        if not 0.0 <= self.dropout_p < 1.0 or not 0.0 <= self.marking_dropout_p <= 1.0:
            raise ContractError("Probabilidades de dropout fora do intervalo")
        if self.grid_scale not in ("full", "desk"):
            raise ContractError(f"grid_scale deve ser 'full' ou 'desk' (recebido {self.grid_scale})")
        if self.prefetch < 2:
            raise ContractError("A fila de amostras precisa de capacidade >= 2")

    @classmethod
    def desk(cls, **overrides: Any) -> "TrainConfig":
        values: Dict[str, Any] = {
            "eta": 1e-4,
            "dropout_p": 0.0,
            "epochs": 300,
            "samples_per_epoch": 15,
            "marking_dropout_p": 0.2,
            "grid_scale": "desk",
        }
        values.update(overrides)
        return cls(**values)

    @property
    def circular(self) -> CircularConstants:
        return CircularConstants(b_max=self.b_max, epsilon=self.epsilon)

    def loss_config(self) -> LossConfig:
        return LossConfig(alpha_sla=self.alpha_sla, circular=self.circular)


@dataclass
class TrainLogRecord:
    epoch: int
    sample: int
    layout_kind: str
    l_sla: float
    l_da: float
    l_total: float
    wall_ms: float
    lr: float


@dataclass
class TrainingExample:
    epoch: int
    index: int
    layout_index: int
    layout_kind: str
    context: RoadContext
    label: TrajectoryLabel


@dataclass
class TrainResult:
    model: torch.nn.Module
    records: List[TrainLogRecord]
    eval_history: pd.DataFrame
    initial_reports: Dict[str, EvalReport]
    final_reports: Dict[str, EvalReport]
    best_checkpoint: Path
    last_checkpoint: Path
    out_dir: Path
    extra: Dict[str, Any] = field(default_factory=dict)


def lr_schedule(eta0: float, epoch: int, decay: float = 0.9, step_epochs: int = 100) -> float:
    """η0 · decay^⌊epoch/step⌋."""

    if epoch < 0:
        raise ContractError(f"epoch não pode ser negativo (recebido {epoch})")
    return eta0 * decay ** (epoch // step_epochs)


def make_training_example(
    layouts: Sequence[RoadLayout], config: TrainConfig, epoch: int, index: int
) -> TrainingExample:
    """Monta a amostra aumentada de (epoch, index); pura dada a configuração."""

    for attempt in range(MAX_SAMPLE_ATTEMPTS):
        sequence = np.random.SeedSequence([config.seed, epoch, index, attempt])
        layout_seed, trajectory_seed, warp_seed, marking_seed = (int(s) for s in sequence.generate_state(4))
        layout_index = int(np.random.default_rng(layout_seed).integers(len(layouts)))
        layout = layouts[layout_index]

        try:
            context, label = rasterize_sample(layout, sample_trajectory(layout, trajectory_seed))
        except RasterizationError:
            continue
        context, label = apply_augmentation(context, label, sample_warp_params(layout.grid_side, warp_seed))
        if label.n_masked == 0:
            continue
        context = drop_markings(context, config.marking_dropout_p, marking_seed)
        return TrainingExample(epoch, index, layout_index, layout.kind, context, label)
    raise ContractError(f"Nenhuma amostra válida após {MAX_SAMPLE_ATTEMPTS} tentativas (epoch {epoch}, amostra {index})")


class SampleFeeder:
    """Gera as amostras em threads, com fila limitada e preservando a ordem."""

    def __init__(
        self,
        layouts: Sequence[RoadLayout],
        config: TrainConfig,
        start_epoch: int = 0,
        end_epoch: Optional[int] = None,
    ) -> None:
        self.layouts = list(layouts)
        self.config = config
        self.start_epoch = start_epoch
        self.end_epoch = config.epochs if end_epoch is None else end_epoch

    def __len__(self) -> int:
        return max(0, self.end_epoch - self.start_epoch) * self.config.samples_per_epoch

    def keys(self) -> Iterator[tuple]:
        for epoch in range(self.start_epoch, self.end_epoch):
            for index in range(self.config.samples_per_epoch):
                yield epoch, index

    def __iter__(self) -> Iterator[TrainingExample]:
        with ThreadPoolExecutor(max_workers=max(1, self.config.workers)) as executor:
            pending: deque = deque()
            for epoch, index in self.keys():
                pending.append(executor.submit(make_training_example, self.layouts, self.config, epoch, index))
                if len(pending) >= self.config.prefetch:
                    yield pending.popleft().result()
            while pending:
                yield pending.popleft().result()


class DirectionalLaneTrainer:
    """Laço de treinamento: amostra → aumento → rede → perda combinada → Adam."""

    LOG_FILENAME = "train_log.jsonl"
    METRICS_FILENAME = "eval_metrics.csv"
    BEST_NAME = "best"
    LAST_NAME = "last"

    def __init__(
        self,
        network_config: NetworkConfig,
        train_config: TrainConfig,
        device: str = "cpu",
        log_callback: Optional[LogCallback] = None,
        progress_callback: Optional[ProgressCallback] = None,
    ) -> None:
        self.network_config = replace(network_config, dropout_p=train_config.dropout_p)
        self.config = train_config
        self.device = torch.device(device)
        self.log_callback = log_callback
        self.progress_callback = progress_callback
        self.loss_config = train_config.loss_config()
        self.fingerprint = config_fingerprint(self.network_config, self.config)

    def _log(self, message: str, level: str = "INFO") -> None:
        if self.log_callback:
            self.log_callback(f"[{level}] {message}")
        if level == "DEBUG":
            logging.debug(message)
        elif level == "WARNING":
            logging.warning(message)
        elif level == "ERROR":
            logging.error(message)
        else:
            logging.info(message)

    def _update_progress(self, progress: int, message: str = "") -> None:
        if self.progress_callback:
            self.progress_callback(progress, message)

    # ------------------------------------------------------------------
    # API pública
    # ------------------------------------------------------------------
    def train(
        self,
        layouts: Sequence[RoadLayout],
        eval_sets: Dict[str, Sequence[EvaluationSample]],
        out_dir: Path | str,
        resume_from: Optional[Path | str] = None,
    ) -> TrainResult:
        if not layouts:
            raise ContractError("Corpus de treino vazio")
        eval_sets = {split: list(samples) for split, samples in eval_sets.items() if samples}
        if not eval_sets:
            raise ContractError("Nenhum conjunto de avaliação fornecido")
        for layout in layouts:
            if layout.grid_side != self.network_config.input_side:
                raise ContractError(
                    f"Layout com grade {layout.grid_side} incompatível com input_side={self.network_config.input_side}"
                )

        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        selection_split = "train" if "train" in eval_sets else next(iter(eval_sets))

        model = build_model(self.network_config, seed=self.config.seed).to(self.device)
        optimizer = torch.optim.Adam(model.parameters(), lr=self.config.eta, betas=(0.9, 0.999), eps=1e-8)
        history: List[pd.DataFrame] = []
        start_epoch = 0
        best_score = float("inf")
        initial_reports: Dict[str, EvalReport] = {}

        if resume_from is not None:
            start_epoch, best_score, history = self._restore(model, optimizer, resume_from, out_dir)
            self._truncate_log(out_dir, start_epoch)
            self._log(f"Retomando treinamento a partir da epoch {start_epoch}")
        else:
            torch.manual_seed(self.config.seed)
            initial_reports = self._evaluate(model, eval_sets, 0)
            history.extend(report.to_frame() for report in initial_reports.values())
            best_score = self._score(initial_reports[selection_split])
            self._save(model, optimizer, out_dir / self.BEST_NAME, 0, initial_reports, best_score)
            self._log(
                f"📄 Avaliação inicial: SLA={initial_reports[selection_split].aggregate_sla:.4f} "
                f"DA={initial_reports[selection_split].aggregate_da:.4f}"
            )

        records: List[TrainLogRecord] = []
        final_reports = initial_reports
        feeder = SampleFeeder(layouts, self.config, start_epoch=start_epoch)
        total_steps = len(feeder)
        log_mode = "a" if resume_from is not None else "w"
        completed = start_epoch

        with (out_dir / self.LOG_FILENAME).open(log_mode, encoding="utf-8") as log_file:
            for step, example in enumerate(feeder, start=1):
                if example.index == 0:
                    lr = lr_schedule(self.config.eta, example.epoch, self.config.lr_decay, self.config.lr_step_epochs)
                    for group in optimizer.param_groups:
                        group["lr"] = lr
                record = self._step(model, optimizer, example, out_dir)
                records.append(record)
                log_file.write(json.dumps(asdict(record)) + "\n")

                if example.index == self.config.samples_per_epoch - 1:
                    completed = example.epoch + 1
                    log_file.flush()
                    self._update_progress(int(100 * step / max(total_steps, 1)), f"Epoch {completed}/{self.config.epochs}")
                    if completed % self.config.eval_every == 0 or completed == self.config.epochs:
                        final_reports = self._evaluate(model, eval_sets, completed)
                        history.extend(report.to_frame() for report in final_reports.values())
                        self._write_history(history, out_dir)
                        score = self._score(final_reports[selection_split])
                        if score < best_score:
                            best_score = score
                            self._save(model, optimizer, out_dir / self.BEST_NAME, completed, final_reports, best_score)
                        self._save(model, optimizer, out_dir / self.LAST_NAME, completed, final_reports, best_score)
                        self._log(
                            f"Epoch {completed}: SLA={final_reports[selection_split].aggregate_sla:.4f} "
                            f"DA={final_reports[selection_split].aggregate_da:.4f} lr={record.lr:.3g}"
                        )

        if completed == start_epoch and resume_from is None:
            self._save(model, optimizer, out_dir / self.LAST_NAME, completed, final_reports, best_score)
        eval_history = self._write_history(history, out_dir)
        self._log(f"✅ Treinamento concluído: {len(records)} passos, checkpoints em {out_dir}")

        return TrainResult(
            model=model,
            records=records,
            eval_history=eval_history,
            initial_reports=initial_reports,
            final_reports=final_reports,
            best_checkpoint=(out_dir / self.BEST_NAME).with_suffix(".pt"),
            last_checkpoint=(out_dir / self.LAST_NAME).with_suffix(".pt"),
            out_dir=out_dir,
        )

    # ------------------------------------------------------------------
    # Etapas internas
    # ------------------------------------------------------------------
    def _step(
        self, model: torch.nn.Module, optimizer: torch.optim.Optimizer, example: TrainingExample, out_dir: Path
    ) -> TrainLogRecord:
        started = time.perf_counter()
        model.train()
        x = torch.from_numpy(example.context.stack())[None].to(self.device)
        output = model(x)[0]
        losses = compute_losses(output, example.label, self.loss_config, self.network_config.mixture_components)

        if not losses.is_finite():
            dump_path = out_dir / f"nonfinite_e{example.epoch}_s{example.index}.npz"
            np.savez(
                dump_path,
                context=example.context.stack(),
                label=example.label.stack(),
                output=output.detach().cpu().numpy(),
            )
            values = losses.as_floats()
            raise NonFiniteLossError(
                f"Perda não finita na epoch {example.epoch}, amostra {example.index}: {values}", dump_path
            )

        values = losses.as_floats()
        if values["l_sla"] == 0.0 or values["l_da"] == 0.0:
            self._log(
                f"Perda zerada na epoch {example.epoch}, amostra {example.index} (L_SLA={values['l_sla']}, "
                f"L_DA={values['l_da']}): a escala do gradiente combinado colapsa",
                "WARNING",
            )

        optimizer.zero_grad(set_to_none=True)
        losses.l_total.backward()
        optimizer.step()

        return TrainLogRecord(
            epoch=example.epoch,
            sample=example.index,
            layout_kind=example.layout_kind,
            l_sla=values["l_sla"],
            l_da=values["l_da"],
            l_total=values["l_total"],
            wall_ms=(time.perf_counter() - started) * 1000.0,
            lr=optimizer.param_groups[0]["lr"],
        )

    def _evaluate(
        self, model: torch.nn.Module, eval_sets: Dict[str, Sequence[EvaluationSample]], epoch: int
    ) -> Dict[str, EvalReport]:
        return {
            split: evaluate_model(model, samples, split, self.config.circular, self.fingerprint, epoch)
            for split, samples in eval_sets.items()
        }

    @staticmethod
    def _score(report: EvalReport) -> float:
        return report.aggregate_sla + report.aggregate_da

    def _save(
        self,
        model: torch.nn.Module,
        optimizer: torch.optim.Optimizer,
        path: Path,
        epoch: int,
        reports: Dict[str, EvalReport],
        best_score: float,
    ) -> None:
        metrics = {}
        for split, report in reports.items():
            metrics[f"sla_{split}"] = report.aggregate_sla
            metrics[f"da_{split}"] = report.aggregate_da
        train_state = {
            "epoch": epoch,
            "optimizer": optimizer.state_dict(),
            "torch_rng": torch.get_rng_state(),
            "best_score": best_score,
            "fingerprint": self.fingerprint,
        }
        save_checkpoint(model, path, epoch=epoch, metrics=metrics, train_state=train_state)

    def _restore(
        self, model: torch.nn.Module, optimizer: torch.optim.Optimizer, path: Path | str, out_dir: Path
    ) -> tuple:
        loaded, manifest = load_checkpoint(path, map_location=self.device)
        if manifest["config"] != self.network_config.to_dict():
            raise ContractError("Checkpoint gerado com outra configuração de rede")
        if not manifest.get("state_path"):
            raise ContractError(f"Checkpoint sem estado de treino: {path}")
        model.load_state_dict(loaded.state_dict())
        state = torch.load(manifest["state_path"], map_location=self.device)
        optimizer.load_state_dict(state["optimizer"])
        torch.set_rng_state(state["torch_rng"])

        history: List[pd.DataFrame] = []
        metrics_path = out_dir / self.METRICS_FILENAME
        if metrics_path.exists():
            previous = pd.read_csv(metrics_path)
            history.append(previous[previous["epoch"] <= state["epoch"]])
        return int(state["epoch"]), float(state["best_score"]), history

    def _truncate_log(self, out_dir: Path, start_epoch: int) -> None:
        """Descarta do JSONL os passos posteriores ao checkpoint retomado."""

        log_path = out_dir / self.LOG_FILENAME
        if not log_path.exists():
            return
        kept = []
        dropped = 0
        for line in log_path.read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            if json.loads(line)["epoch"] < start_epoch:
                kept.append(line)
            else:
                dropped += 1
        if dropped:
            self._log(f"Descartando {dropped} registros do log posteriores à epoch {start_epoch}", "WARNING")
        log_path.write_text("".join(line + "\n" for line in kept), encoding="utf-8")

    def _write_history(self, history: List[pd.DataFrame], out_dir: Path) -> pd.DataFrame:
        frame = pd.concat(history, ignore_index=True) if history else pd.DataFrame()
        frame.to_csv(out_dir / self.METRICS_FILENAME, index=False)
        return frame
