"""Hierarquia de exceções do pacote de affordance de faixas."""

from __future__ import annotations

from pathlib import Path
from typing import Optional


class LaneAffordanceError(Exception):
    """Erro base de todo o pacote."""


class CircularDomainError(LaneAffordanceError, ValueError):
    """Parâmetro fora do domínio de uma função circular (ex.: concentração negativa)."""


class MixtureInvariantError(LaneAffordanceError, ValueError):
    """Mistura de von Mises com pesos que não somam 1."""


class LayoutGenerationError(LaneAffordanceError, ValueError):
    """Geometria de via inviável ou parâmetros fora das faixas documentadas."""


class RasterizationError(LaneAffordanceError, ValueError):
    """Trajetória rasterizada fora da região trafegável."""


class SingularWarpError(LaneAffordanceError, ValueError):
    """Ponto de controle do warping sobre a borda da grade."""


class ContractError(LaneAffordanceError, ValueError):
    """Violação de contrato de forma ou de arquitetura."""


class DegenerateLabelError(LaneAffordanceError, ValueError):
    """Rótulo sem nenhuma célula mascarada."""


class ConfigError(LaneAffordanceError, ValueError):
    """Arquivo ou valor de configuração inválido."""


class NonFiniteLossError(LaneAffordanceError, RuntimeError):
    """Perda não finita durante o treinamento."""

    def __init__(self, message: str, dump_path: Optional[Path] = None) -> None:
        super().__init__(message)
        self.dump_path = dump_path
