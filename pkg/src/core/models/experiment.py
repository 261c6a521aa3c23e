"""
Modelos para cenários de experimento e resultados de grade
"""

from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field, model_validator

from src.core.models.configs import EmbeddingMode, ModelArchitecture
from src.core.models.reports import MetricsReport


class Scenario(str, Enum):
    """Cenários executados em sequência sobre a validação"""

    P1 = "P1"  # Melhor variação de RNN
    P2 = "P2"  # Melhor tipo de embedding
    P3 = "P3"  # Melhores hiperparâmetros
    P4 = "P4"  # Com atenção vs sem atenção

    @property
    def previous(self) -> Optional["Scenario"]:
        order = list(Scenario)
        index = order.index(self)
        return order[index - 1] if index > 0 else None


# Chaves de ModelConfig que podem ser fixadas ou varridas
SWEEPABLE_KEYS = (
    "rnn_variant",
    "embedding_mode",
    "hidden_units",
    "attention_layers",
    "tensor_dim",
    "dropout_rate",
    "architecture",
)


class ExperimentSpec(BaseModel):
    """Definição completa de um cenário (P1–P4)"""

    scenario: Scenario
    fixed: Dict[str, Any] = Field(default_factory=dict, description="Valores fixos")
    swept: Dict[str, List[Any]] = Field(
        default_factory=dict, description="Valores varridos por chave"
    )
    train_path: Path
    validation_path: Path
    embedding_paths: Dict[EmbeddingMode, Path] = Field(
        default_factory=dict,
        description="Tabelas por papel: general, domain, hybrid",
    )
    train_overrides: Dict[str, Any] = Field(default_factory=dict)
    output_dir: Path
    seed: int = 42
    workers: int = Field(1, ge=1)

    @model_validator(mode="after")
    def _check_sweep(self) -> "ExperimentSpec":
        unknown = set(self.fixed) | set(self.swept)
        unknown -= set(SWEEPABLE_KEYS)
        if unknown:
            raise ValueError(f"Chaves desconhecidas no experimento: {sorted(unknown)}")
        overlap = set(self.fixed) & set(self.swept)
        if overlap:
            raise ValueError(f"Chaves fixas e varridas ao mesmo tempo: {sorted(overlap)}")

        if self.scenario == Scenario.P4:
            values = {ModelArchitecture(v) for v in self.swept.get("architecture", [])}
            if set(self.swept) != {"architecture"} or values != set(ModelArchitecture):
                raise ValueError("P4 deve varrer exatamente architecture = {CMLA, ENCODER-SOFTMAX}")
        else:
            if not self.swept or any(not values for values in self.swept.values()):
                raise ValueError(f"{self.scenario.value} precisa de valores varridos")
        return self

    @property
    def scenario_dir(self) -> Path:
        return self.output_dir / self.scenario.value


class GridRow(BaseModel):
    """Uma célula da grade: configuração, métricas e eventual falha"""

    index: int = Field(..., ge=0, description="Posição na ordem da grade")
    config: Dict[str, Any]
    token_report: Optional[MetricsReport] = None
    entity_report: Optional[MetricsReport] = None
    best_epoch: Optional[int] = None
    error: Optional[str] = None

    @property
    def failed(self) -> bool:
        return self.error is not None

    @property
    def ranking_key(self):
        """Entity macro-F1 desc, token macro-F1 desc, ordem da grade asc"""
        if self.failed:
            return (1, 0.0, 0.0, self.index)
        return (0, -self.entity_report.macro_f1, -self.token_report.macro_f1, self.index)


class GridResult(BaseModel):
    """Resultado de um cenário: uma linha por configuração"""

    scenario: Scenario
    rows: List[GridRow]

    @property
    def ranking(self) -> List[GridRow]:
        return sorted(self.rows, key=lambda row: row.ranking_key)

    @property
    def winner(self) -> Optional[GridRow]:
        ranked = [row for row in self.ranking if not row.failed]
        return ranked[0] if ranked else None
