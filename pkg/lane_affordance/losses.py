"""Perdas de treinamento: SLA mascarada, KL direcional e combinação normalizada.

As perdas operam sobre tensores torch de uma única amostra (lote 1). A parte
direcional é avaliada em float64 para que o piso de densidade 1e-300 seja
representável e as verificações por diferenças finitas fiquem estáveis.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Tuple, Union

import numpy as np
import torch

from .circular_stats import LOG_DENSITY_FLOOR, LOG_TWO_PI, TWO_PI, CircularConstants
from .errors import ContractError, DegenerateLabelError
from .scene_synth import TrajectoryLabel

TensorLike = Union[torch.Tensor, np.ndarray]


@dataclass(frozen=True)
class LossConfig:
    alpha_sla: float = 100.0
    circular: CircularConstants = field(default_factory=CircularConstants)

    def __post_init__(self) -> None:
        if not self.alpha_sla > 0:
            raise ContractError(f"alpha_sla deve ser positivo (recebido {self.alpha_sla})")


@dataclass
class LossBreakdown:
    """Valores das perdas; ``l_total`` carrega o gradiente combinado."""

    l_sla: torch.Tensor
    l_da: torch.Tensor
    l_total: torch.Tensor

    def is_finite(self) -> bool:
        return all(bool(torch.isfinite(value).all()) for value in (self.l_sla, self.l_da, self.l_total))

    def as_floats(self) -> Dict[str, float]:
        return {
            "l_sla": float(self.l_sla.detach()),
            "l_da": float(self.l_da.detach()),
            "l_total": float(self.l_total.detach()),
        }


def _as_tensor(value: TensorLike, like: torch.Tensor | None = None) -> torch.Tensor:
    if isinstance(value, torch.Tensor):
        tensor = value
    else:
        tensor = torch.as_tensor(np.asarray(value))
    if like is not None:
        tensor = tensor.to(device=like.device)
    return tensor


def torch_log_bessel_i0(b: torch.Tensor) -> torch.Tensor:
    return torch.log(torch.special.i0e(b)) + b


def split_output(output: torch.Tensor, mixture_components: int) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor]:
    """Separa (1+3M, h, w) em SLA (h, w) e μ̃, σ̃, w̃ com forma (M, h, w)."""

    expected = 1 + 3 * mixture_components
    if output.dim() != 3 or output.shape[0] != expected:
        raise ContractError(
            f"Saída com forma {tuple(output.shape)}; esperado ({expected}, h, w)"
        )
    triples = output[1:].reshape(mixture_components, 3, *output.shape[1:])
    return output[0], triples[:, 0], triples[:, 1], triples[:, 2]


def params_from_raw_torch(
    mu_tilde: torch.Tensor,
    sigma_tilde: torch.Tensor,
    w_tilde: torch.Tensor,
    consts: CircularConstants,
) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Mesma transformação de ``circular_stats.params_from_raw``, componentes no último eixo."""

    total = w_tilde.sum(dim=-1, keepdim=True)
    uniform = torch.full_like(w_tilde, 1.0 / w_tilde.shape[-1])
    weights = torch.where(total > 0, w_tilde / torch.where(total > 0, total, torch.ones_like(total)), uniform)
    mus = TWO_PI * mu_tilde
    concentrations = torch.clamp(consts.b_max * (1.0 - sigma_tilde + consts.epsilon), max=consts.b_max)
    return mus, concentrations, weights


def _mixture_log_pdf(theta: torch.Tensor, mus: torch.Tensor, bs: torch.Tensor, ws: torch.Tensor) -> torch.Tensor:
    """theta (T,), parâmetros (N, M) -> (N, T)."""

    logs = (
        bs[:, None, :] * torch.cos(theta[None, :, None] - mus[:, None, :])
        - LOG_TWO_PI
        - torch_log_bessel_i0(bs)[:, None, :]
    )
    log_weights = torch.log(ws.clamp_min(1e-300))[:, None, :]
    return torch.logsumexp(logs + log_weights, dim=-1)


def kl_to_targets(
    target_mus: torch.Tensor,
    target_ws: torch.Tensor,
    mus: torch.Tensor,
    bs: torch.Tensor,
    ws: torch.Tensor,
    consts: CircularConstants,
) -> torch.Tensor:
    """KL(alvo ‖ predito) por célula; alvos com concentração b_max, saída (N,)."""

    step = TWO_PI / consts.n_quad
    theta = torch.arange(consts.n_quad, dtype=torch.float64, device=mus.device) * step
    target_bs = torch.full_like(target_mus, consts.b_max)
    log_p = _mixture_log_pdf(theta, target_mus, target_bs, target_ws).clamp_min(LOG_DENSITY_FLOOR)
    log_q = _mixture_log_pdf(theta, mus, bs, ws).clamp_min(LOG_DENSITY_FLOOR)
    return (torch.exp(log_p) * (log_p - log_q)).sum(dim=-1) * step


def sla_loss(Y: torch.Tensor, label: TrajectoryLabel | TensorLike, config: LossConfig = LossConfig()) -> torch.Tensor:
    """Σ (y−ŷ)² em toda a grade + α·(n²/ñ)·Σ (y−ŷ)² nas células da máscara."""

    mask_values = label.mask if isinstance(label, TrajectoryLabel) else label
    mask = _as_tensor(mask_values, Y).to(Y.dtype)
    if mask.shape != Y.shape:
        raise ContractError(f"Formas diferentes: Y {tuple(Y.shape)} e máscara {tuple(mask.shape)}")
    masked_cells = mask.sum()
    if float(masked_cells) < 1:
        raise DegenerateLabelError("Rótulo sem células mascaradas")
    squared = (Y - mask) ** 2
    cells = float(mask.numel())
    return squared.sum() + config.alpha_sla * (cells / masked_cells) * (squared * mask).sum()


def da_loss(
    mu_tilde: torch.Tensor,
    sigma_tilde: torch.Tensor,
    w_tilde: torch.Tensor,
    label: TrajectoryLabel,
    config: LossConfig = LossConfig(),
) -> torch.Tensor:
    """Média de D_KL(alvo ‖ predito) sobre as ñ células da trajetória.

    ``mu_tilde``, ``sigma_tilde`` e ``w_tilde`` têm forma (M, h, w).
    """

    if mu_tilde.shape[1:] != label.mask.shape:
        raise ContractError(
            f"Formas diferentes: saída {tuple(mu_tilde.shape[1:])} e rótulo {label.mask.shape}"
        )
    rows, cols = np.nonzero(label.mask)
    if not len(rows):
        raise DegenerateLabelError("Rótulo sem células mascaradas")

    angles = np.mod(np.arctan2(label.ny[rows, cols], label.nx[rows, cols]).astype(np.float64), TWO_PI)
    rows_t = torch.as_tensor(rows, device=mu_tilde.device)
    cols_t = torch.as_tensor(cols, device=mu_tilde.device)

    def cells(values: torch.Tensor) -> torch.Tensor:
        return values[:, rows_t, cols_t].transpose(0, 1).to(torch.float64)

    mus, bs, ws = params_from_raw_torch(cells(mu_tilde), cells(sigma_tilde), cells(w_tilde), config.circular)
    target_mus = torch.as_tensor(angles, dtype=torch.float64, device=mu_tilde.device)[:, None]
    target_ws = torch.ones_like(target_mus)
    return kl_to_targets(target_mus, target_ws, mus, bs, ws, config.circular).mean()


def combine_losses(l_sla: torch.Tensor, l_da: torch.Tensor) -> LossBreakdown:
    """Cada perda é escalada pelo valor (sem gradiente) da outra."""

    total = l_sla * l_da.detach() + l_da * l_sla.detach()
    return LossBreakdown(l_sla=l_sla, l_da=l_da, l_total=total)


def compute_losses(
    output: torch.Tensor,
    label: TrajectoryLabel,
    config: LossConfig = LossConfig(),
    mixture_components: int = 3,
) -> LossBreakdown:
    """Perdas de uma amostra a partir da saída crua (1+3M, h, w) da rede."""

    sla, mu_tilde, sigma_tilde, w_tilde = split_output(output, mixture_components)
    l_sla = sla_loss(sla, label, config)
    l_da = da_loss(mu_tilde, sigma_tilde, w_tilde, label, config)
    return combine_losses(l_sla.to(torch.float64), l_da)
