"""Rede encoder-decoder com ASPP e cabeças por tarefa.

Entrada: contexto (2, S, S). Saída: (1 + 3M, S/2, S/2) com sigmoide em todas as
camadas, na ordem [SLA, μ̃1, σ̃1, w̃1, μ̃2, ...].
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
from torch import nn

from .circular_stats import CircularConstants, params_from_raw_arrays
from .errors import ContractError
from .scene_synth import RoadContext

CHECKPOINT_FORMAT_VERSION = 1
OPTIMIZER_STATE_VERSION = 1
MAX_CHANNEL_MULTIPLIER = 8


@dataclass(frozen=True)
class NetworkConfig:
    input_side: int = 256
    base_channels: int = 32
    aspp_branches: int = 8
    aspp_dilations: Tuple[int, ...] = (1, 2, 4, 6, 8, 12, 16, 24)
    depth: int = 6
    mixture_components: int = 3
    dropout_p: float = 0.0
    in_channels: int = 2

    def __post_init__(self) -> None:
        object.__setattr__(self, "aspp_dilations", tuple(int(d) for d in self.aspp_dilations))
        if len(self.aspp_dilations) != self.aspp_branches:
            raise ContractError(
                f"{self.aspp_branches} ramos ASPP mas {len(self.aspp_dilations)} taxas de dilatação"
            )
        if self.input_side % (2 ** (self.depth + 1)):
            raise ContractError(
                f"input_side={self.input_side} não é divisível por 2^{self.depth + 1}"
            )
        if self.bottleneck_side < 2:
            raise ContractError(f"Gargalo {self.bottleneck_side}x{self.bottleneck_side} menor que 2x2")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ContractError(f"dropout_p fora de [0, 1): {self.dropout_p}")
        if self.mixture_components < 1 or self.base_channels < 1:
            raise ContractError("mixture_components e base_channels devem ser positivos")

    @classmethod
    def desk(cls, **overrides: Any) -> "NetworkConfig":
        values: Dict[str, Any] = {"input_side": 64, "base_channels": 8, "depth": 4}
        values.update(overrides)
        return cls(**values)

    @property
    def output_side(self) -> int:
        return self.input_side // 2

    @property
    def bottleneck_side(self) -> int:
        return self.input_side // 2 ** (self.depth + 1)

    @property
    def output_channels(self) -> int:
        return 1 + 3 * self.mixture_components

    def level_channels(self, level: int) -> int:
        return self.base_channels * min(2 ** level, MAX_CHANNEL_MULTIPLIER)

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["aspp_dilations"] = list(self.aspp_dilations)
        return data


def _conv_relu(in_channels: int, out_channels: int, **kwargs: Any) -> nn.Sequential:
    kwargs.setdefault("kernel_size", 3)
    kwargs.setdefault("padding", 1)
    return nn.Sequential(nn.Conv2d(in_channels, out_channels, **kwargs), nn.ReLU(inplace=True))


class ASPP(nn.Module):
    """Convoluções dilatadas paralelas com passo 2 seguidas de fusão 1x1."""

    def __init__(self, in_channels: int, out_channels: int, dilations: Sequence[int]) -> None:
        super().__init__()
        self.branches = nn.ModuleList(
            _conv_relu(in_channels, out_channels, stride=2, padding=d, dilation=d) for d in dilations
        )
        self.fuse = _conv_relu(out_channels * len(dilations), out_channels, kernel_size=1, padding=0)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fuse(torch.cat([branch(x) for branch in self.branches], dim=1))


class DoubleConv(nn.Sequential):
    def __init__(self, in_channels: int, out_channels: int) -> None:
        super().__init__(_conv_relu(in_channels, out_channels), _conv_relu(out_channels, out_channels))


class TaskHead(nn.Sequential):
    def __init__(self, in_channels: int, out_channels: int) -> None:
        super().__init__(
            _conv_relu(in_channels, in_channels),
            nn.Conv2d(in_channels, out_channels, kernel_size=1),
            nn.Sigmoid(),
        )


class DirectionalLaneNet(nn.Module):
    """ASPP + U-Net simétrica em S/2 + uma cabeça SLA e M cabeças direcionais."""

    def __init__(self, config: NetworkConfig) -> None:
        super().__init__()
        self.config = config
        base = config.base_channels
        self.aspp = ASPP(config.in_channels, base, config.aspp_dilations)

        self.encoder = nn.ModuleList()
        channels = base
        for level in range(config.depth):
            out_channels = config.level_channels(level)
            self.encoder.append(DoubleConv(channels, out_channels))
            channels = out_channels
        self.pool = nn.MaxPool2d(2)
        self.dropout = nn.Dropout2d(config.dropout_p)

        self.bottleneck = DoubleConv(channels, config.level_channels(config.depth))
        channels = config.level_channels(config.depth)

        self.decoder = nn.ModuleList()
        for level in reversed(range(config.depth)):
            skip = config.level_channels(level)
            self.decoder.append(DoubleConv(channels + skip, skip))
            channels = skip
        self.upsample = nn.Upsample(scale_factor=2, mode="nearest")

        self.sla_head = TaskHead(channels, 1)
        self.direction_heads = nn.ModuleList(
            TaskHead(channels, 3) for _ in range(config.mixture_components)
        )
        self._init_weights()

    def _init_weights(self) -> None:
        for module in self.modules():
            if isinstance(module, nn.Conv2d):
                nn.init.kaiming_normal_(module.weight, mode="fan_in", nonlinearity="relu")
                nn.init.zeros_(module.bias)

    def check_input(self, x: torch.Tensor) -> None:
        side = self.config.input_side
        expected = (self.config.in_channels, side, side)
        if x.dim() != 4 or tuple(x.shape[1:]) != expected:
            raise ContractError(f"Entrada com forma {tuple(x.shape)}; esperado (B, {expected[0]}, {side}, {side})")

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        self.check_input(x)
        x = self.aspp(x)
        skips: List[torch.Tensor] = []
        for block in self.encoder:
            x = block(x)
            skips.append(x)
            x = self.dropout(self.pool(x))
        x = self.bottleneck(x)
        for block, skip in zip(self.decoder, reversed(skips)):
            x = block(torch.cat([self.upsample(x), skip], dim=1))
        return torch.cat([self.sla_head(x)] + [head(x) for head in self.direction_heads], dim=1)


def build_model(config: NetworkConfig, seed: Optional[int] = None) -> DirectionalLaneNet:
    """Cria a rede; com ``seed`` a inicialização é reprodutível sem alterar o RNG global."""

    if seed is None:
        return DirectionalLaneNet(config)
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return DirectionalLaneNet(config)


# ----------------------------------------------------------------------
# Saída crua
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class RawOutput:
    """Saída de uma amostra em numpy: SLA (h, w) e μ̃, σ̃, w̃ com forma (M, h, w)."""

    sla: np.ndarray
    mu_tilde: np.ndarray
    sigma_tilde: np.ndarray
    w_tilde: np.ndarray

    @classmethod
    def from_tensor(cls, output: torch.Tensor, mixture_components: int) -> "RawOutput":
        array = output.detach().cpu().numpy().astype(np.float64)
        if array.ndim == 4:
            array = array[0]
        if array.shape[0] != 1 + 3 * mixture_components:
            raise ContractError(f"Saída com {array.shape[0]} camadas; esperado {1 + 3 * mixture_components}")
        triples = array[1:].reshape(mixture_components, 3, *array.shape[1:])
        return cls(sla=array[0], mu_tilde=triples[:, 0], sigma_tilde=triples[:, 1], w_tilde=triples[:, 2])

    @property
    def side(self) -> int:
        return int(self.sla.shape[0])

    @property
    def layer_count(self) -> int:
        return 1 + 3 * self.mu_tilde.shape[0]

    def stack(self) -> np.ndarray:
        triples = np.stack([self.mu_tilde, self.sigma_tilde, self.w_tilde], axis=1)
        return np.concatenate([self.sla[None], triples.reshape(-1, *self.sla.shape)])

    def mixture_params(self, consts: CircularConstants = CircularConstants()) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(μ, b, w) por célula, forma (h, w, M)."""

        return params_from_raw_arrays(
            np.moveaxis(self.mu_tilde, 0, -1),
            np.moveaxis(self.sigma_tilde, 0, -1),
            np.moveaxis(self.w_tilde, 0, -1),
            consts,
        )


def _device_of(model: nn.Module) -> torch.device:
    return next(model.parameters()).device


def forward(context: RoadContext, model: DirectionalLaneNet, mode: str = "eval") -> RawOutput:
    """Executa a rede sobre um contexto; em modo ``eval`` o dropout fica desligado."""

    if mode not in ("train", "eval"):
        raise ContractError(f"Modo inválido: {mode}")
    if context.side != model.config.input_side:
        raise ContractError(
            f"Contexto {context.side}x{context.side} incompatível com input_side={model.config.input_side}"
        )
    was_training = model.training
    model.train(mode == "train")
    try:
        x = torch.from_numpy(context.stack())[None].to(_device_of(model))
        with torch.no_grad():
            output = model(x)
    finally:
        model.train(was_training)
    return RawOutput.from_tensor(output, model.config.mixture_components)


# ----------------------------------------------------------------------
# Resumo de camadas
# ----------------------------------------------------------------------
@dataclass
class LayerInfo:
    name: str
    kind: str
    input_shape: Tuple[int, ...]
    output_shape: Tuple[int, ...]
    parameters: int


@dataclass
class NetworkSummary:
    layers: List[LayerInfo] = field(default_factory=list)
    aspp_branches: int = 0
    unet_conv_layers: int = 0
    bottleneck_side: int = 0
    output_shape: Tuple[int, ...] = ()
    total_parameters: int = 0

    def to_lines(self) -> List[str]:
        lines = [
            f"{layer.name:<32} {layer.kind:<10} {str(layer.input_shape):<22} -> {str(layer.output_shape):<22} {layer.parameters}"
            for layer in self.layers
        ]
        lines.append(f"Ramos ASPP: {self.aspp_branches}")
        lines.append(f"Convoluções encoder-decoder: {self.unet_conv_layers}")
        lines.append(f"Gargalo: {self.bottleneck_side}x{self.bottleneck_side}")
        lines.append(f"Saída: {self.output_shape}")
        lines.append(f"Parâmetros treináveis: {self.total_parameters}")
        return lines


def parameter_summary(config: NetworkConfig) -> NetworkSummary:
    """Percorre a rede com uma entrada nula registrando formas de entrada e saída."""

    model = build_model(config, seed=0).eval()
    summary = NetworkSummary()
    hooks = []
    unet_prefixes = ("encoder.", "bottleneck.", "decoder.")

    def record(name: str):
        def hook(module: nn.Module, inputs: Tuple[torch.Tensor, ...], output: torch.Tensor) -> None:
            summary.layers.append(
                LayerInfo(
                    name=name,
                    kind=type(module).__name__,
                    input_shape=tuple(inputs[0].shape[1:]),
                    output_shape=tuple(output.shape[1:]),
                    parameters=sum(p.numel() for p in module.parameters(recurse=False)),
                )
            )

        return hook

    for name, module in model.named_modules():
        if isinstance(module, (nn.Conv2d, nn.MaxPool2d, nn.Upsample)):
            hooks.append(module.register_forward_hook(record(name)))
    try:
        with torch.no_grad():
            output = model(torch.zeros(1, config.in_channels, config.input_side, config.input_side))
    finally:
        for handle in hooks:
            handle.remove()

    summary.aspp_branches = len(model.aspp.branches)
    summary.unet_conv_layers = sum(
        1 for layer in summary.layers if layer.kind == "Conv2d" and layer.name.startswith(unet_prefixes)
    )
    bottleneck = [layer for layer in summary.layers if layer.name.startswith("bottleneck.")]
    summary.bottleneck_side = bottleneck[0].output_shape[-1]
    summary.output_shape = tuple(output.shape[1:])
    summary.total_parameters = sum(p.numel() for p in model.parameters() if p.requires_grad)

    aspp_out = next(layer for layer in summary.layers if layer.name.startswith("aspp.branches."))
    if aspp_out.output_shape[-1] * 2 != aspp_out.input_shape[-1]:
        raise ContractError("O estágio ASPP deveria reduzir a resolução pela metade")
    if summary.bottleneck_side != config.bottleneck_side:
        raise ContractError(
            f"Gargalo {summary.bottleneck_side}x{summary.bottleneck_side}; esperado {config.bottleneck_side}"
        )
    if summary.output_shape != (config.output_channels, config.output_side, config.output_side):
        raise ContractError(f"Saída com forma inesperada: {summary.output_shape}")
    return summary


# ----------------------------------------------------------------------
# Checkpoints
# ----------------------------------------------------------------------
def _checkpoint_paths(path: Path | str) -> Tuple[Path, Path, Path]:
    path = Path(path)
    if path.suffix in (".pt", ".json"):
        path = path.with_suffix("")
    return path.with_suffix(".pt"), path.with_suffix(".json"), path.with_suffix(".state.pt")


def save_checkpoint(
    model: DirectionalLaneNet,
    path: Path | str,
    *,
    epoch: int,
    metrics: Optional[Dict[str, float]] = None,
    train_state: Optional[Dict[str, Any]] = None,
) -> Path:
    """Grava pesos (.pt), manifesto JSON e, opcionalmente, o estado de treino (.state.pt)."""

    weights_path, manifest_path, state_path = _checkpoint_paths(path)
    weights_path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(model.state_dict(), weights_path)
    if train_state is not None:
        torch.save(train_state, state_path)

    manifest = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "optimizer_state_version": OPTIMIZER_STATE_VERSION,
        "config": model.config.to_dict(),
        "epoch": int(epoch),
        "metrics": metrics or {},
        "has_train_state": train_state is not None,
    }
    with manifest_path.open("w", encoding="utf-8") as handle:
        json.dump(manifest, handle, indent=2, ensure_ascii=False)
    return weights_path


def load_checkpoint(
    path: Path | str, map_location: str | torch.device = "cpu"
) -> Tuple[DirectionalLaneNet, Dict[str, Any]]:
    """Recria a rede a partir do manifesto e carrega os pesos."""

    weights_path, manifest_path, state_path = _checkpoint_paths(path)
    if not weights_path.exists():
        raise FileNotFoundError(f"Checkpoint não encontrado: {weights_path}")
    if not manifest_path.exists():
        raise FileNotFoundError(f"Manifesto do checkpoint não encontrado: {manifest_path}")

    with manifest_path.open("r", encoding="utf-8") as handle:
        manifest = json.load(handle)
    if manifest.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise ContractError(f"Versão de checkpoint não suportada: {manifest.get('format_version')}")

    model = DirectionalLaneNet(NetworkConfig(**manifest["config"]))
    model.load_state_dict(torch.load(weights_path, map_location=map_location))
    model.to(map_location)
    manifest["state_path"] = str(state_path) if state_path.exists() else None
    return model, manifest
