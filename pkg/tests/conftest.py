"""
Fixtures compartilhadas: tabelas de embedding pequenas, configs mínimas e corpus de brinquedo
"""

from typing import List, Sequence

import numpy as np
import pytest

from src.adapters.embedding_store import save_table
from src.core.models.configs import (
    EmbeddingConfig,
    EmbeddingMode,
    ModelArchitecture,
    ModelConfig,
    RNNVariant,
    TrainConfig,
)
from src.core.models.labels import Label, LabeledSentence
from src.core.services.embedding_trainer import EmbeddingFeatures, EmbeddingTable

B_A, I_A, B_S, I_S, O = (
    Label.B_ASPECT,
    Label.I_ASPECT,
    Label.B_SENTIMENT,
    Label.I_SENTIMENT,
    Label.O,
)

TOY_SENTENCES = [
    (["kamar", "bersih", "."], [B_A, B_S, O]),
    (["tempat", "tidur", "tidak", "bersih"], [B_A, I_A, B_S, I_S]),
    (["saya", "suka", "kolam", "renang", "yang", "luas", "."], [O, O, B_A, I_A, O, B_S, O]),
    (["sarapan", "enak"], [B_A, B_S]),
    (["handuk", "kotor", "dan", "wifi", "lambat", "."], [B_A, B_S, O, B_A, B_S, O]),
    (["kami", "datang", "bersama", "teman", "."], [O, O, O, O, O]),
]


def make_table(words: Sequence[str], dim: int, seed: int = 0) -> EmbeddingTable:
    """Tabela sem n-gramas com vetores aleatórios (rápida, sem treino)"""
    rng = np.random.default_rng(seed)
    return EmbeddingTable(
        config=EmbeddingConfig(dim=dim, epochs=1, buckets=1000, seed=seed),
        words=list(words),
        counts=[1] * len(words),
        word_vectors=rng.uniform(-1.0, 1.0, size=(len(words), dim)),
        ngram_buckets=np.zeros(0, dtype=np.int64),
        ngram_vectors=np.zeros((0, dim)),
    )


def toy_vocabulary() -> List[str]:
    return sorted({token for tokens, _ in TOY_SENTENCES for token in tokens})


def tiny_config(
    variant: str = "B-LSTM",
    input_dim: int = 4,
    hidden: int = 3,
    layers: int = 2,
    k: int = 2,
    dropout: float = 0.0,
    architecture: ModelArchitecture = ModelArchitecture.CMLA,
    seed: int = 0,
) -> ModelConfig:
    return ModelConfig(
        rnn_variant=RNNVariant(variant),
        hidden_units=hidden,
        attention_layers=layers,
        tensor_dim=k,
        dropout_rate=dropout,
        embedding_mode=EmbeddingMode.DOMAIN,
        input_dim=input_dim,
        architecture=architecture,
        seed=seed,
    )


@pytest.fixture
def toy_corpus() -> List[LabeledSentence]:
    return [LabeledSentence(tokens=tokens, tags=tags) for tokens, tags in TOY_SENTENCES]


@pytest.fixture
def domain_table() -> EmbeddingTable:
    return make_table(toy_vocabulary(), dim=4, seed=3)


@pytest.fixture
def features(domain_table) -> EmbeddingFeatures:
    return EmbeddingFeatures(EmbeddingMode.DOMAIN, {EmbeddingMode.DOMAIN: domain_table})


@pytest.fixture
def model_config() -> ModelConfig:
    return tiny_config()


@pytest.fixture
def train_config() -> TrainConfig:
    return TrainConfig(batch_size=2, max_epochs=3, patience=5, seed=11)


@pytest.fixture
def saved_tables(tmp_path):
    """Tabelas geral, de domínio e híbrida gravadas em disco (para a CLI e os cenários)"""
    words = toy_vocabulary()
    paths = {}
    for offset, mode in enumerate((EmbeddingMode.GENERAL, EmbeddingMode.DOMAIN, EmbeddingMode.HYBRID)):
        dim = 3 if mode != EmbeddingMode.HYBRID else 4
        paths[mode] = save_table(make_table(words, dim=dim, seed=offset), tmp_path / f"{mode.value}.emb")
    return paths
