"""Pacote de afordância direcional de faixas: cenas sintéticas, rede, perdas, treino e avaliação."""

from .circular_stats import CircularConstants, Mixture, VonMisesComponent
from .config import AppConfig, load_config, load_environment, save_config
from .errors import LaneAffordanceError
from .evaluation import EvalReport, build_eval_set, evaluate_model, run_sweep
from .network import DirectionalLaneNet, NetworkConfig, RawOutput, build_model, load_checkpoint
from .render import RenderSpec, render
from .scene_synth import RoadContext, RoadLayout, TrajectoryLabel, generate_layout
from .trainer import DirectionalLaneTrainer, TrainConfig

__all__ = [
    "AppConfig",
    "CircularConstants",
    "DirectionalLaneNet",
    "DirectionalLaneTrainer",
    "EvalReport",
    "LaneAffordanceError",
    "Mixture",
    "NetworkConfig",
    "RawOutput",
    "RenderSpec",
    "RoadContext",
    "RoadLayout",
    "TrainConfig",
    "TrajectoryLabel",
    "VonMisesComponent",
    "build_eval_set",
    "build_model",
    "evaluate_model",
    "generate_layout",
    "load_checkpoint",
    "load_config",
    "load_environment",
    "render",
    "run_sweep",
    "save_config",
]
