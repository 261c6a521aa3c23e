"""
Gradientes analíticos da rede completa contra diferenças centrais
"""

import numpy as np
import pytest

from src.core.models.configs import EmbeddingMode, ModelArchitecture
from src.core.services.cmla_model import init_params
from src.core.services.embedding_trainer import EmbeddingFeatures
from src.core.services.trainer import check_model_gradients
from tests.conftest import make_table, tiny_config, toy_vocabulary

TOLERANCE = 1e-4

CASES = [
    (variant, hidden, layers, k, seed)
    for seed, (hidden, layers, k) in enumerate([(2, 1, 1), (3, 2, 2), (4, 1, 2), (2, 2, 1), (3, 1, 2)])
    for variant in ("GRU", "LSTM", "B-GRU", "B-LSTM")
]


def _features(seed: int) -> EmbeddingFeatures:
    table = make_table(toy_vocabulary(), dim=3, seed=100 + seed)
    return EmbeddingFeatures(EmbeddingMode.DOMAIN, {EmbeddingMode.DOMAIN: table})


@pytest.mark.parametrize("variant,hidden,layers,k,seed", CASES)
def test_cmla_gradients(variant, hidden, layers, k, seed, toy_corpus):
    config = tiny_config(variant, input_dim=3, hidden=hidden, layers=layers, k=k, seed=seed)
    sentences = [toy_corpus[seed % len(toy_corpus)], toy_corpus[(seed + 1) % len(toy_corpus)]]
    result = check_model_gradients(
        sentences, _features(seed), init_params(config), config, max_entries=6, seed=seed
    )
    assert result.checked_entries > 0
    assert result.max_relative_error < TOLERANCE, result.worst_tensor


@pytest.mark.parametrize("variant", ["GRU", "LSTM", "B-GRU", "B-LSTM"])
def test_smallest_config_every_entry(variant, toy_corpus):
    """h=2, L=1, K=1: todas as entradas de todos os tensores"""
    config = tiny_config(variant, input_dim=3, hidden=2, layers=1, k=1, seed=3)
    params = init_params(config)
    result = check_model_gradients(toy_corpus[:2], _features(3), params, config, max_entries=None)
    assert result.checked_entries == sum(tensor.data.size for _, tensor in params.items())
    assert result.max_relative_error < TOLERANCE, result.worst_tensor


@pytest.mark.parametrize("variant", ["GRU", "B-LSTM"])
def test_encoder_softmax_gradients(variant, toy_corpus):
    config = tiny_config(variant, input_dim=3, architecture=ModelArchitecture.ENCODER_SOFTMAX)
    result = check_model_gradients(toy_corpus[2:4], _features(0), init_params(config), config, max_entries=None)
    assert result.max_relative_error < TOLERANCE, result.worst_tensor


def test_gradients_with_trained_scale_weights(toy_corpus):
    """Pesos maiores que os da inicialização também devem conferir"""
    config = tiny_config("B-GRU", input_dim=3, hidden=3, layers=2, k=2)
    params = init_params(config)
    rng = np.random.default_rng(5)
    for _, tensor in params.items():
        tensor.data = rng.normal(0.0, 0.5, size=tensor.shape)
    result = check_model_gradients(toy_corpus[:2], _features(1), params, config, max_entries=6)
    assert result.max_relative_error < TOLERANCE, result.worst_tensor
