"""Estatística circular: densidades de von Mises, misturas e divergência KL.

Convenção de ângulos: radianos em [0, 2π), 0 apontando para +x e crescendo no
sentido anti-horário no plano (x, y para cima).

Todas as funções são puras; as versões ``*_batch``/``*_arrays`` operam sobre
arrays numpy com os componentes no último eixo.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple, Union

import numpy as np
from scipy.special import i0e, logsumexp

from .errors import CircularDomainError, MixtureInvariantError

TWO_PI = 2.0 * math.pi
LOG_TWO_PI = math.log(TWO_PI)
DENSITY_FLOOR = 1e-300
LOG_DENSITY_FLOOR = math.log(DENSITY_FLOOR)

ArrayLike = Union[float, np.ndarray]


@dataclass(frozen=True)
class CircularConstants:
    """Constantes numéricas compartilhadas pela cabeça direcional e pelas perdas."""

    b_max: float = 88.0
    epsilon: float = 1e-3
    n_quad: int = 256

    def __post_init__(self) -> None:
        if not self.b_max > 0:
            raise CircularDomainError(f"b_max deve ser positivo (recebido {self.b_max})")
        if not 0.0 < self.epsilon < 1.0:
            raise CircularDomainError(f"epsilon deve estar em (0, 1) (recebido {self.epsilon})")
        if self.n_quad < 64:
            raise CircularDomainError(f"n_quad deve ser >= 64 (recebido {self.n_quad})")


@dataclass(frozen=True)
class VonMisesComponent:
    """Um componente (μ, b, w) da mistura."""

    mu: float
    b: float
    w: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.mu < TWO_PI:
            raise CircularDomainError(f"mu fora de [0, 2π): {self.mu}")
        if not self.b > 0.0:
            raise CircularDomainError(f"concentração deve ser positiva: {self.b}")
        if not 0.0 <= self.w <= 1.0:
            raise CircularDomainError(f"peso fora de [0, 1]: {self.w}")


@dataclass(frozen=True)
class Mixture:
    """Mistura ordenada de M componentes de von Mises."""

    components: Tuple[VonMisesComponent, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        object.__setattr__(self, "components", tuple(self.components))
        if len(self.components) < 1:
            raise MixtureInvariantError("A mistura precisa de ao menos um componente")
        self.validate(tolerance=1e-4)

    @classmethod
    def from_arrays(cls, mus: Sequence[float], bs: Sequence[float], ws: Sequence[float]) -> "Mixture":
        return cls(
            tuple(
                VonMisesComponent(mu=float(m), b=float(b), w=float(w))
                for m, b, w in zip(mus, bs, ws)
            )
        )

    @property
    def mus(self) -> np.ndarray:
        return np.array([c.mu for c in self.components], dtype=np.float64)

    @property
    def concentrations(self) -> np.ndarray:
        return np.array([c.b for c in self.components], dtype=np.float64)

    @property
    def weights(self) -> np.ndarray:
        return np.array([c.w for c in self.components], dtype=np.float64)

    def validate(self, tolerance: float = 1e-6, b_max: float | None = None) -> None:
        total = float(self.weights.sum())
        if abs(total - 1.0) > tolerance:
            raise MixtureInvariantError(
                f"Pesos da mistura somam {total:.8f} (tolerância {tolerance})"
            )
        if b_max is not None and np.any(self.concentrations > b_max):
            raise MixtureInvariantError(
                f"Concentração acima de b_max={b_max}: {self.concentrations.tolist()}"
            )


@dataclass(frozen=True)
class RawDirectionalOutput:
    """Saída crua (sigmoide) de uma célula: um trio (μ̃, σ̃, w̃) por componente."""

    mu_tilde: np.ndarray
    sigma_tilde: np.ndarray
    w_tilde: np.ndarray

    def __post_init__(self) -> None:
        for name in ("mu_tilde", "sigma_tilde", "w_tilde"):
            values = np.asarray(getattr(self, name), dtype=np.float64)
            if values.ndim != 1:
                raise CircularDomainError(f"{name} deve ser um vetor de M valores")
            if np.any(values < 0.0) or np.any(values > 1.0):
                raise CircularDomainError(f"{name} fora de [0, 1]: {values.tolist()}")
            object.__setattr__(self, name, values)
        if not (len(self.mu_tilde) == len(self.sigma_tilde) == len(self.w_tilde)):
            raise CircularDomainError("μ̃, σ̃ e w̃ precisam ter o mesmo número de componentes")


# ----------------------------------------------------------------------
# Bessel e densidades
# ----------------------------------------------------------------------
def log_bessel_i0(b: ArrayLike) -> ArrayLike:
    """ln I₀(b) avaliado em domínio logarítmico (i0e evita o overflow de e^b)."""

    values = np.asarray(b, dtype=np.float64)
    if np.any(values < 0.0) or np.any(np.isnan(values)):
        raise CircularDomainError(f"log_bessel_i0 exige b >= 0 (recebido {b})")
    result = np.log(i0e(values)) + values
    if np.ndim(b) == 0:
        return float(result)
    return result


def vm_log_pdf(theta: ArrayLike, mu: ArrayLike, b: ArrayLike) -> np.ndarray:
    b = np.asarray(b, dtype=np.float64)
    return b * np.cos(np.mod(theta, TWO_PI) - np.asarray(mu)) - LOG_TWO_PI - log_bessel_i0(b)


def vm_pdf(theta: ArrayLike, comp: VonMisesComponent) -> ArrayLike:
    """Densidade de um componente (sem o peso)."""

    if not np.all(np.isfinite(theta)):
        raise CircularDomainError(f"theta deve ser finito (recebido {theta})")
    result = np.exp(vm_log_pdf(theta, comp.mu, comp.b))
    if np.ndim(theta) == 0:
        return float(result)
    return result


def mixture_log_pdf_arrays(
    theta: np.ndarray, mus: np.ndarray, bs: np.ndarray, ws: np.ndarray
) -> np.ndarray:
    """log p(θ) para misturas em lote.

    ``theta`` tem forma (..., T); ``mus``, ``bs`` e ``ws`` têm forma (..., M).
    Retorna (..., T). Pesos nulos são aceitos (contribuição zero).
    """

    theta = np.asarray(theta, dtype=np.float64)[..., :, None]
    mus = np.asarray(mus, dtype=np.float64)[..., None, :]
    bs = np.asarray(bs, dtype=np.float64)[..., None, :]
    ws = np.asarray(ws, dtype=np.float64)[..., None, :]
    component_logs = bs * np.cos(np.mod(theta, TWO_PI) - mus) - LOG_TWO_PI - log_bessel_i0(bs)
    return logsumexp(component_logs, axis=-1, b=np.broadcast_to(ws, component_logs.shape))


def mixture_pdf(theta: ArrayLike, mix: Mixture) -> ArrayLike:
    """Soma ponderada das densidades dos componentes."""

    mix.validate(tolerance=1e-4)
    log_density = mixture_log_pdf_arrays(
        np.atleast_1d(theta), mix.mus, mix.concentrations, mix.weights
    )
    result = np.exp(log_density)
    if np.ndim(theta) == 0:
        return float(result[0])
    return result


def target_distribution(mu_hat: float, consts: CircularConstants = CircularConstants()) -> Mixture:
    """Distribuição alvo ideal: um único componente em mu_hat com concentração b_max."""

    return Mixture((VonMisesComponent(mu=float(mu_hat) % TWO_PI, b=consts.b_max, w=1.0),))


# ----------------------------------------------------------------------
# Divergência KL por quadratura
# ----------------------------------------------------------------------
def quadrature_grid(n_quad: int) -> Tuple[np.ndarray, float]:
    """Pontos uniformes em [0, 2π) e o passo; regra do trapézio periódica."""

    step = TWO_PI / n_quad
    return np.arange(n_quad, dtype=np.float64) * step, step


def kl_divergence_arrays(
    p_mus: np.ndarray,
    p_bs: np.ndarray,
    p_ws: np.ndarray,
    q_mus: np.ndarray,
    q_bs: np.ndarray,
    q_ws: np.ndarray,
    n_quad: int = 256,
) -> np.ndarray:
    """D_KL(p ‖ q) para N pares de misturas; entradas (N, Mp) e (N, Mq), saída (N,)."""

    thetas, step = quadrature_grid(n_quad)
    p_mus = np.atleast_2d(p_mus)
    q_mus = np.atleast_2d(q_mus)
    grid = np.broadcast_to(thetas, (p_mus.shape[0], n_quad))
    log_p = mixture_log_pdf_arrays(grid, p_mus, np.atleast_2d(p_bs), np.atleast_2d(p_ws))
    log_q = mixture_log_pdf_arrays(grid, q_mus, np.atleast_2d(q_bs), np.atleast_2d(q_ws))
    log_p = np.maximum(log_p, LOG_DENSITY_FLOOR)
    log_q = np.maximum(log_q, LOG_DENSITY_FLOOR)
    return np.sum(np.exp(log_p) * (log_p - log_q), axis=-1) * step


def kl_divergence(p_target: Mixture, q: Mixture, n_quad: int = 256) -> float:
    """∫ p̂ ln(p̂/q) dθ em [0, 2π] com ``n_quad`` pontos uniformes."""

    result = kl_divergence_arrays(
        p_target.mus[None],
        p_target.concentrations[None],
        p_target.weights[None],
        q.mus[None],
        q.concentrations[None],
        q.weights[None],
        n_quad=n_quad,
    )
    return float(result[0])


# ----------------------------------------------------------------------
# Saída crua -> parâmetros
# ----------------------------------------------------------------------
def params_from_raw_arrays(
    mu_tilde: np.ndarray,
    sigma_tilde: np.ndarray,
    w_tilde: np.ndarray,
    consts: CircularConstants = CircularConstants(),
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Transforma (μ̃, σ̃, w̃) com componentes no último eixo em (μ, b, w)."""

    mu_tilde = np.asarray(mu_tilde, dtype=np.float64)
    sigma_tilde = np.asarray(sigma_tilde, dtype=np.float64)
    w_tilde = np.asarray(w_tilde, dtype=np.float64)

    total = w_tilde.sum(axis=-1, keepdims=True)
    n_components = w_tilde.shape[-1]
    safe_total = np.where(total > 0.0, total, 1.0)
    weights = np.where(total > 0.0, w_tilde / safe_total, 1.0 / n_components)

    mus = np.mod(TWO_PI * mu_tilde, TWO_PI)
    concentrations = np.minimum(consts.b_max, consts.b_max * (1.0 - sigma_tilde + consts.epsilon))
    return mus, concentrations, weights


def params_from_raw(raw: RawDirectionalOutput, consts: CircularConstants = CircularConstants()) -> Mixture:
    mus, bs, ws = params_from_raw_arrays(raw.mu_tilde, raw.sigma_tilde, raw.w_tilde, consts)
    return Mixture.from_arrays(mus, bs, ws)


def merge_modes(angles: Sequence[float], threshold: float) -> List[float]:
    """Agrupa ângulos mais próximos que ``threshold`` (distância circular).

    Cada grupo é representado pela sua média circular; a saída fica ordenada.
    """

    if not len(angles):
        return []
    ordered = sorted(float(a) % TWO_PI for a in angles)
    groups: List[List[float]] = [[ordered[0]]]
    for angle in ordered[1:]:
        if angle - groups[-1][-1] < threshold:
            groups[-1].append(angle)
        else:
            groups.append([angle])
    # o último grupo pode encostar no primeiro através de 2π
    if len(groups) > 1 and (groups[0][0] + TWO_PI) - groups[-1][-1] < threshold:
        groups[0] = groups.pop() + groups[0]

    merged = []
    for group in groups:
        values = np.asarray(group)
        mean = math.atan2(np.sin(values).mean(), np.cos(values).mean()) % TWO_PI
        # ângulos negativos minúsculos arredondam para 2π
        merged.append(mean if mean < TWO_PI else 0.0)
    return sorted(merged)
