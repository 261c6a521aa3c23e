"""
Modelos para relatórios de métricas e de treinamento
"""

from enum import Enum
from typing import List, Literal, Optional

from pydantic import BaseModel, Field, model_validator


class ClassScores(BaseModel):
    """Precision, recall e F1 de uma classe (ou da média macro)"""

    label: str = Field(..., description="Rótulo BIO, tipo de entidade ou 'Average'")
    precision: float = Field(..., ge=0, le=1)
    recall: float = Field(..., ge=0, le=1)
    f1: float = Field(..., ge=0, le=1)
    support: int = Field(0, ge=0, description="Instâncias gold")
    predicted: int = Field(0, ge=0, description="Instâncias preditas")
    true_positives: int = Field(0, ge=0)
    no_predictions: bool = Field(False, description="Precision indefinida, fixada em 0")
    no_gold: bool = Field(False, description="Recall indefinido, fixado em 0")


class MetricsReport(BaseModel):
    """Relatório por classe com média macro (nível token ou entidade)"""

    level: Literal["token", "entity"]
    classes: List[ClassScores]
    average: ClassScores

    def score(self, label: str) -> ClassScores:
        for scores in self.classes:
            if scores.label == label:
                return scores
        raise KeyError(f"Classe não encontrada no relatório: {label}")

    @property
    def macro_f1(self) -> float:
        return self.average.f1


class StopReason(str, Enum):
    """Motivo do fim do treinamento"""

    EARLY_STOPPING = "early_stopping"
    MAX_EPOCHS = "max_epochs"


class EpochRecord(BaseModel):
    """Resumo de uma época de treino"""

    epoch: int = Field(..., ge=1)
    train_loss: float
    val_loss: float
    val_token_f1: float = Field(..., ge=0, le=1)
    val_token_accuracy: float = Field(..., ge=0, le=1)
    improved: bool = False


class FitReport(BaseModel):
    """Histórico de um treinamento com early stopping"""

    epochs: List[EpochRecord] = Field(default_factory=list)
    best_epoch: int = Field(0, ge=0)
    best_val_loss: Optional[float] = None
    stop_reason: Optional[StopReason] = None
    max_epochs: int = Field(..., ge=1)

    @model_validator(mode="after")
    def _check_epochs(self) -> "FitReport":
        if self.best_epoch > len(self.epochs):
            raise ValueError("best_epoch maior que o número de épocas executadas")
        if len(self.epochs) > self.max_epochs:
            raise ValueError("Mais épocas executadas que max_epochs")
        return self

    @property
    def epochs_run(self) -> int:
        return len(self.epochs)
