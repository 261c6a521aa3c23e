"""
Modelos de configuração: embeddings, rede CMLA e treinamento
"""

import hashlib
from enum import Enum
from typing import Mapping, Optional, Union

from pydantic import BaseModel, Field, ValidationInfo, field_validator, model_validator

from src.utils.config import settings


class RNNVariant(str, Enum):
    """Variações de RNN testadas no experimento P1"""

    GRU = "GRU"
    LSTM = "LSTM"
    B_GRU = "B-GRU"
    B_LSTM = "B-LSTM"

    @property
    def is_bidirectional(self) -> bool:
        return self.value.startswith("B-")

    @property
    def cell(self) -> str:
        """Tipo de célula: GRU ou LSTM"""
        return self.value.removeprefix("B-")


class EmbeddingMode(str, Enum):
    """Tipos de embedding testados no experimento P2"""

    DOUBLE = "double"
    GENERAL = "general"
    DOMAIN = "domain"
    HYBRID = "hybrid"


class ModelArchitecture(str, Enum):
    """Modelo completo ou ablação sem atenção (experimento P4)"""

    CMLA = "CMLA"
    ENCODER_SOFTMAX = "ENCODER-SOFTMAX"


def expected_input_dim(
    mode: Union[EmbeddingMode, str], table_dims: Mapping[Union[EmbeddingMode, str], int]
) -> Optional[int]:
    """
    Dimensão de entrada que um modo exige dadas as dimensões das tabelas

    O modo double concatena geral e domínio. Retorna None se falta alguma tabela.
    """
    dims = {EmbeddingMode(role): dim for role, dim in table_dims.items()}
    mode = EmbeddingMode(mode)
    roles = [EmbeddingMode.GENERAL, EmbeddingMode.DOMAIN] if mode == EmbeddingMode.DOUBLE else [mode]
    if any(role not in dims for role in roles):
        return None
    return sum(dims[role] for role in roles)


class EmbeddingConfig(BaseModel):
    """Parâmetros de treino dos embeddings (estilo fastText skip-gram)"""

    dim: int = Field(default_factory=lambda: settings.embedding_domain_dim, ge=1)
    epochs: int = Field(default_factory=lambda: settings.embedding_domain_epochs, ge=1)
    window: int = Field(default_factory=lambda: settings.embedding_window, ge=1)
    negatives: int = Field(default_factory=lambda: settings.embedding_negatives, ge=1)
    n_min: int = Field(default_factory=lambda: settings.embedding_ngram_min, ge=1)
    n_max: int = Field(default_factory=lambda: settings.embedding_ngram_max, ge=1)
    buckets: int = Field(default_factory=lambda: settings.embedding_buckets, ge=1)
    lr: float = Field(default_factory=lambda: settings.embedding_learning_rate, gt=0)
    min_count: int = Field(default_factory=lambda: settings.embedding_min_count, ge=1)
    seed: int = Field(default_factory=lambda: settings.embedding_seed)

    @model_validator(mode="after")
    def _check_ngram_range(self) -> "EmbeddingConfig":
        if self.n_min > self.n_max:
            raise ValueError(f"n_min ({self.n_min}) maior que n_max ({self.n_max})")
        return self

    @classmethod
    def general(cls, **overrides) -> "EmbeddingConfig":
        """Embedding geral: dimensão 300, 5 iterações"""
        values = {
            "dim": settings.embedding_general_dim,
            "epochs": settings.embedding_general_epochs,
        }
        values.update(overrides)
        return cls(**values)

    @classmethod
    def domain(cls, **overrides) -> "EmbeddingConfig":
        """Embedding de domínio: dimensão 100, 30 iterações"""
        values = {
            "dim": settings.embedding_domain_dim,
            "epochs": settings.embedding_domain_epochs,
        }
        values.update(overrides)
        return cls(**values)

    @classmethod
    def hybrid(cls, **overrides) -> "EmbeddingConfig":
        """Embedding híbrido (corpus combinado): dimensão 300, 5 iterações"""
        values = {
            "dim": settings.embedding_hybrid_dim,
            "epochs": settings.embedding_hybrid_epochs,
        }
        values.update(overrides)
        return cls(**values)


class ModelConfig(BaseModel):
    """Hiperparâmetros da rede de extração"""

    rnn_variant: RNNVariant = Field(
        default_factory=lambda: RNNVariant(settings.model_rnn_variant)
    )
    hidden_units: int = Field(
        default_factory=lambda: settings.model_hidden_units,
        ge=1,
        description="Unidades escondidas por direção",
    )
    attention_layers: int = Field(
        default_factory=lambda: settings.model_attention_layers,
        ge=1,
        description="Número de camadas de atenção acopladas (L)",
    )
    tensor_dim: int = Field(
        default_factory=lambda: settings.model_tensor_dim,
        ge=1,
        description="Primeira dimensão dos tensores do operador (K)",
    )
    dropout_rate: float = Field(default_factory=lambda: settings.model_dropout_rate)
    embedding_mode: EmbeddingMode = Field(
        default_factory=lambda: EmbeddingMode(settings.model_embedding_mode)
    )
    input_dim: int = Field(400, ge=1, description="Dimensão do vetor de entrada")
    architecture: ModelArchitecture = ModelArchitecture.CMLA
    seed: int = Field(default_factory=lambda: settings.model_seed)

    @field_validator("dropout_rate")
    @classmethod
    def _check_dropout(cls, rate: float) -> float:
        if not 0 <= rate < 1:
            raise ValueError(f"dropout_rate deve estar em [0, 1), recebido {rate}")
        return rate

    @model_validator(mode="after")
    def _check_input_dim(self, info: ValidationInfo) -> "ModelConfig":
        """Com `context={"embedding_dims": {...}}`, input_dim precisa casar com o modo"""
        table_dims = (info.context or {}).get("embedding_dims")
        if not table_dims:
            return self
        expected = expected_input_dim(self.embedding_mode, table_dims)
        if expected is not None and expected != self.input_dim:
            raise ValueError(
                f"input_dim={self.input_dim} incompatível com embedding_mode="
                f"{self.embedding_mode.value} (tabelas somam {expected})"
            )
        return self

    @property
    def state_dim(self) -> int:
        """d_h: dimensão dos estados do encoder (dobra se bidirecional)"""
        factor = 2 if self.rnn_variant.is_bidirectional else 1
        return factor * self.hidden_units

    @property
    def uses_attention(self) -> bool:
        return self.architecture == ModelArchitecture.CMLA

    def fingerprint(self) -> str:
        """Hash estável da configuração (valida checkpoints)"""
        payload = self.model_dump_json().encode("utf-8")
        return hashlib.sha256(payload).hexdigest()[:16]

    def describe(self) -> str:
        return (
            f"{self.architecture.value}/{self.rnn_variant.value} "
            f"h={self.hidden_units} L={self.attention_layers} K={self.tensor_dim} "
            f"dropout={self.dropout_rate} emb={self.embedding_mode.value}"
        )


class TrainConfig(BaseModel):
    """Configuração do loop de treino (nadam + early stopping)"""

    batch_size: int = Field(default_factory=lambda: settings.train_batch_size, ge=1)
    max_epochs: int = Field(default_factory=lambda: settings.train_max_epochs, ge=1)
    patience: int = Field(default_factory=lambda: settings.train_patience, ge=0)
    lr: float = Field(default_factory=lambda: settings.train_learning_rate, gt=0)
    beta1: float = Field(default_factory=lambda: settings.train_beta1)
    beta2: float = Field(default_factory=lambda: settings.train_beta2)
    epsilon: float = Field(default_factory=lambda: settings.train_epsilon, gt=0)
    seed: int = Field(default_factory=lambda: settings.train_seed)

    @field_validator("beta1", "beta2")
    @classmethod
    def _check_beta(cls, beta: float) -> float:
        if not 0 < beta < 1:
            raise ValueError(f"beta deve estar em (0, 1), recebido {beta}")
        return beta
