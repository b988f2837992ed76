from __future__ import annotations

import json
import uuid
from dataclasses import asdict, dataclass
from datetime import datetime
from pathlib import Path
from typing import Dict, List, Optional


CHECKPOINT_ALIASES = ("last", "best")


@dataclass
class RunMetadata:
    """Metadados de um treinamento registrado."""

    run_id: str
    name: str
    out_dir: str
    config_path: str
    seed: int
    fingerprint: str
    created_at: str
    epochs_completed: int = 0

    def checkpoint_path(self, alias: str) -> Path:
        return Path(self.out_dir) / f"{alias}.pt"


class RunRegistry:
    """Registro persistente dos treinamentos (``.data/runs.json``)."""

    def __init__(self, app_dir: Optional[Path] = None) -> None:
        if app_dir is None:
            self.app_dir = Path(__file__).parent
        else:
            self.app_dir = Path(app_dir)

        self.data_dir = self.app_dir / ".data"
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self.runs_file = self.data_dir / "runs.json"

        self._ensure_runs_file()

    # ------------------------------------------------------------------
    # Operações básicas
    # ------------------------------------------------------------------
    def list_runs(self) -> List[RunMetadata]:
        data = self._read_runs_file()
        return [RunMetadata(**raw) for raw in data.get("runs", [])]

    def get_run(self, run_id: str) -> Optional[RunMetadata]:
        for run in self.list_runs():
            if run.run_id == run_id:
                return run
        return None

    def register_run(
        self,
        out_dir: Path | str,
        *,
        config_path: Path | str = "",
        seed: int = 0,
        fingerprint: str = "",
        epochs_completed: int = 0,
        name: Optional[str] = None,
    ) -> RunMetadata:
        """Registra (ou atualiza) o treino gravado em ``out_dir`` e o marca como último."""

        out_dir = Path(out_dir).resolve()
        runs_data = self._read_runs_file()
        runs = runs_data.setdefault("runs", [])

        existing = next((raw for raw in runs if raw["out_dir"] == str(out_dir)), None)
        if existing is not None:
            existing.update(
                config_path=str(config_path),
                seed=int(seed),
                fingerprint=fingerprint,
                epochs_completed=int(epochs_completed),
            )
            metadata = RunMetadata(**existing)
        else:
            metadata = RunMetadata(
                run_id=uuid.uuid4().hex[:8],
                name=(name or out_dir.name).strip(),
                out_dir=str(out_dir),
                config_path=str(config_path),
                seed=int(seed),
                fingerprint=fingerprint,
                created_at=datetime.now().isoformat(timespec="seconds"),
                epochs_completed=int(epochs_completed),
            )
            runs.append(asdict(metadata))

        runs_data["last_selected"] = metadata.run_id
        self._write_runs_file(runs_data)
        return metadata

    def set_last_selected(self, run_id: str) -> None:
        runs_data = self._read_runs_file()
        if any(raw["run_id"] == run_id for raw in runs_data.get("runs", [])):
            runs_data["last_selected"] = run_id
            self._write_runs_file(runs_data)

    def get_last_selected(self) -> Optional[RunMetadata]:
        run_id = self._read_runs_file().get("last_selected")
        return self.get_run(run_id) if run_id else None

    def resolve_checkpoint(self, reference: str) -> Path:
        """``last``/``best`` apontam para o treino mais recente; qualquer outro valor é um caminho."""

        if reference in CHECKPOINT_ALIASES:
            run = self.get_last_selected()
            if run is None:
                raise FileNotFoundError("Nenhum treinamento registrado; rode 'train' ou informe o caminho do checkpoint")
            path = run.checkpoint_path(reference)
        else:
            path = Path(reference)
            if path.suffix != ".pt":
                path = path.with_suffix(".pt")

        if not path.exists():
            raise FileNotFoundError(f"Checkpoint não encontrado: {path}")
        return path

    # ------------------------------------------------------------------
    # Utilidades
    # ------------------------------------------------------------------
    def _read_runs_file(self) -> Dict:
        with open(self.runs_file, "r", encoding="utf-8") as handle:
            return json.load(handle)

    def _write_runs_file(self, data: Dict) -> None:
        with open(self.runs_file, "w", encoding="utf-8") as handle:
            json.dump(data, handle, indent=2, ensure_ascii=False)

    def _ensure_runs_file(self) -> None:
        if not self.runs_file.exists():
            self._write_runs_file({"runs": [], "last_selected": None})
