"""Configuração em arquivos .cfg (seções chave/valor) e variáveis de ambiente (.env).

Seções reconhecidas: [network], [loss], [train], [data], [render] e
[experiment.<id>] para as varreduras. Valores ausentes usam os padrões da escala
escolhida em ``[train] grid_scale`` (full ou desk).
"""

from __future__ import annotations

import configparser
import logging
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, List, Optional

from dotenv import load_dotenv

from .errors import ConfigError
from .evaluation import ExperimentSpec
from .network import NetworkConfig
from .render import RenderSpec
from .trainer import TrainConfig

EXPERIMENT_PREFIX = "experiment."
LOSS_KEYS = ("alpha_sla", "b_max", "epsilon")
EXPERIMENT_KEYS = ("eta", "dropout_p", "alpha_sla", "lr_decay", "epochs", "marking_dropout_p")
CORPORA = ("standard", "desk")
DEVICES_PREFIXES = ("cpu", "cuda")


@dataclass(frozen=True)
class DataConfig:
    corpus: str = "standard"
    samples_per_layout: int = 25
    max_workers: int = 4
    out_dir: str = "data"

    def __post_init__(self) -> None:
        if self.corpus not in CORPORA:
            raise ConfigError(f"Corpus desconhecido: {self.corpus} (use {', '.join(CORPORA)})")
        if self.samples_per_layout < 1:
            raise ConfigError("samples_per_layout deve ser >= 1")

    @classmethod
    def desk(cls, **overrides: Any) -> "DataConfig":
        values: Dict[str, Any] = {"corpus": "desk", "samples_per_layout": 10}
        values.update(overrides)
        return cls(**values)


@dataclass(frozen=True)
class AppConfig:
    network: NetworkConfig = field(default_factory=NetworkConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    render: RenderSpec = field(default_factory=RenderSpec)
    experiments: Dict[str, Dict[str, Any]] = field(default_factory=dict)

    @classmethod
    def desk(cls) -> "AppConfig":
        return cls(network=NetworkConfig.desk(), train=TrainConfig.desk(), data=DataConfig.desk())

    def apply_overrides(self, seed: Optional[int] = None, out: Optional[str] = None) -> "AppConfig":
        """Valores passados na linha de comando têm prioridade sobre o arquivo."""

        config = self
        if seed is not None:
            config = replace(config, train=replace(config.train, seed=int(seed)))
        if out is not None:
            config = replace(config, data=replace(config.data, out_dir=str(out)))
        return config

    def experiment_specs(self) -> List[ExperimentSpec]:
        return [
            ExperimentSpec(exp_id, replace(self.train, **overrides))
            for exp_id, overrides in self.experiments.items()
        ]


@dataclass(frozen=True)
class EnvironmentSettings:
    work_dir: Path
    device: str
    log_level: str


# ----------------------------------------------------------------------
# Conversão de valores
# ----------------------------------------------------------------------
def _parse_value(raw: str, default: Any, key: str) -> Any:
    text = raw.strip()
    try:
        if isinstance(default, bool):
            lowered = text.lower()
            if lowered in ("1", "true", "yes", "on", "sim"):
                return True
            if lowered in ("0", "false", "no", "off", "nao", "não"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            return tuple(int(part) for part in text.split(",") if part.strip())
    except ValueError as exc:
        raise ConfigError(f"Valor inválido para '{key}': {raw}") from exc
    return text


def _format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


def _section_values(parser: configparser.ConfigParser, section: str, base: Any, allowed: Optional[tuple] = None) -> Dict[str, Any]:
    if not parser.has_section(section):
        return {}
    names = {f.name for f in fields(base)}
    values: Dict[str, Any] = {}
    for key, raw in parser.items(section):
        if key not in names or (allowed is not None and key not in allowed):
            raise ConfigError(f"Chave desconhecida em [{section}]: {key}")
        values[key] = _parse_value(raw, getattr(base, key), f"{section}.{key}")
    return values


def _build(base: Any, values: Dict[str, Any], section: str) -> Any:
    try:
        return replace(base, **values) if values else base
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"Seção [{section}] inválida: {exc}") from exc


# ----------------------------------------------------------------------
# Leitura e escrita
# ----------------------------------------------------------------------
def parse_config(text: str) -> AppConfig:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"Arquivo de configuração malformado: {exc}") from exc

    known = {"network", "loss", "train", "data", "render"}
    for section in parser.sections():
        if section not in known and not section.startswith(EXPERIMENT_PREFIX):
            raise ConfigError(f"Seção desconhecida: [{section}]")

    scale = parser.get("train", "grid_scale", fallback="full").strip()
    defaults = AppConfig.desk() if scale == "desk" else AppConfig()

    network = _build(defaults.network, _section_values(parser, "network", defaults.network), "network")
    train_values = _section_values(parser, "train", defaults.train)
    train_values.update(_section_values(parser, "loss", defaults.train, LOSS_KEYS))
    train = _build(defaults.train, train_values, "train")
    data = _build(defaults.data, _section_values(parser, "data", defaults.data), "data")
    render = _build(defaults.render, _section_values(parser, "render", defaults.render), "render")

    experiments: Dict[str, Dict[str, Any]] = {}
    for section in parser.sections():
        if section.startswith(EXPERIMENT_PREFIX):
            exp_id = section[len(EXPERIMENT_PREFIX):]
            overrides = _section_values(parser, section, train, EXPERIMENT_KEYS)
            _build(train, overrides, section)
            experiments[exp_id] = overrides

    return AppConfig(network=network, train=train, data=data, render=render, experiments=experiments)


def load_config(path: Path | str) -> AppConfig:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Arquivo de configuração não encontrado: {path}")
    logging.debug(f"Lendo configuração: {path}")
    return parse_config(path.read_text(encoding="utf-8"))


def config_to_text(config: AppConfig) -> str:
    parser = configparser.ConfigParser(interpolation=None)
    parser["network"] = {f.name: _format_value(getattr(config.network, f.name)) for f in fields(config.network)}
    parser["loss"] = {key: _format_value(getattr(config.train, key)) for key in LOSS_KEYS}
    parser["train"] = {
        f.name: _format_value(getattr(config.train, f.name)) for f in fields(config.train) if f.name not in LOSS_KEYS
    }
    parser["data"] = {f.name: _format_value(getattr(config.data, f.name)) for f in fields(config.data)}
    parser["render"] = {f.name: _format_value(getattr(config.render, f.name)) for f in fields(config.render)}
    for exp_id, overrides in config.experiments.items():
        parser[f"{EXPERIMENT_PREFIX}{exp_id}"] = {key: _format_value(value) for key, value in overrides.items()}

    lines: List[str] = []
    for section in parser.sections():
        lines.append(f"[{section}]")
        lines.extend(f"{key} = {value}" for key, value in parser.items(section))
        lines.append("")
    return "\n".join(lines)


def save_config(config: AppConfig, path: Path | str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(config_to_text(config), encoding="utf-8")
    return path


def load_environment(env_file: Optional[Path | str] = None) -> EnvironmentSettings:
    """Carrega o .env (se existir) e devolve diretório de trabalho, device e nível de log."""

    env_path = Path(env_file) if env_file is not None else Path(".env")
    if env_path.exists():
        load_dotenv(env_path)
        logging.debug(f"Arquivo .env carregado: {env_path}")

    device = os.getenv("DSLA_DEVICE", "cpu").strip() or "cpu"
    if not device.startswith(DEVICES_PREFIXES):
        raise ConfigError(f"DSLA_DEVICE inválido: {device} (use cpu ou cuda)")
    log_level = os.getenv("DSLA_LOG_LEVEL", "INFO").strip().upper() or "INFO"
    if log_level not in ("DEBUG", "INFO", "WARNING", "ERROR"):
        raise ConfigError(f"DSLA_LOG_LEVEL inválido: {log_level}")
    work_dir = Path(os.getenv("DSLA_WORK_DIR", ".")).expanduser()
    return EnvironmentSettings(work_dir=work_dir, device=device, log_level=log_level)
