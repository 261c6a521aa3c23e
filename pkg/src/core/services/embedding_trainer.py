"""
Treino e composição de word embeddings com subwords (estilo fastText)

Skip-gram com negative sampling onde a representação de entrada de uma palavra
é a média do vetor da palavra com os vetores dos seus n-gramas de caracteres
(hash FNV-1a em buckets). Palavras fora do vocabulário são compostas pelos
n-gramas vistos no treino.
"""

from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from src.core.models.configs import EmbeddingConfig, EmbeddingMode
from src.utils.config import settings
from src.utils.logger import get_logger

logger = get_logger(__name__)

FNV_OFFSET_BASIS = 2166136261
FNV_PRIME = 16777619

# Expoente da distribuição de negative sampling
UNIGRAM_POWER = 0.75

# Limite dos scores antes da sigmoide
SCORE_CLIP = 30.0
LOG_EPSILON = 1e-12


class EmbeddingError(Exception):
    """Exceção base dos embeddings"""

    pass


def fnv1a_hash(text: str) -> int:
    """Hash FNV-1a de 32 bits sobre os bytes UTF-8 (estável entre plataformas)"""
    value = FNV_OFFSET_BASIS
    for byte in text.encode("utf-8"):
        value ^= byte
        value = (value * FNV_PRIME) & 0xFFFFFFFF
    return value


def ngrams(word: str, n_min: int, n_max: int) -> List[str]:
    """
    N-gramas de caracteres da forma marcada "<word>" com tamanho em [n_min, n_max]

    A forma marcada completa só entra quando é o único n-grama possível
    (palavras de um caractere); nos demais casos o próprio vetor da palavra já
    representa a palavra inteira.

    Examples:
        >>> ngrams("ab", 3, 3)
        ['<ab', 'ab>']
        >>> ngrams("a", 3, 3)
        ['<a>']
    """
    if not word:
        return []
    marked = f"<{word}>"
    grams = [
        marked[start : start + n]
        for start in range(len(marked))
        for n in range(n_min, n_max + 1)
        if start + n <= len(marked)
    ]
    partial = [gram for gram in grams if gram != marked]
    return partial if partial else grams


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    """Similaridade cosseno; definida como 0 quando algum vetor é nulo"""
    norm = float(np.linalg.norm(u) * np.linalg.norm(v))
    if norm == 0.0:
        return 0.0
    return float(np.clip(np.dot(u, v) / norm, -1.0, 1.0))


@dataclass
class EmbeddingTable:
    """Vocabulário, vetores de palavra e vetores dos buckets de n-gramas vistos"""

    config: EmbeddingConfig
    words: List[str]
    counts: List[int]
    word_vectors: np.ndarray
    ngram_buckets: np.ndarray
    ngram_vectors: np.ndarray
    epoch_losses: List[float] = field(default_factory=list)
    vocab: Dict[str, int] = field(init=False, repr=False)
    _bucket_rows: Dict[int, int] = field(init=False, repr=False)

    def __post_init__(self):
        self.vocab = {word: index for index, word in enumerate(self.words)}
        self._bucket_rows = {int(b): row for row, b in enumerate(self.ngram_buckets)}
        if len(self.vocab) != len(self.words):
            raise EmbeddingError("Vocabulário com palavras repetidas")
        if self.word_vectors.shape != (len(self.words), self.dim):
            raise EmbeddingError(
                f"Matriz de palavras {self.word_vectors.shape} incompatível com "
                f"|V|={len(self.words)} e dim={self.dim}"
            )
        if self.ngram_vectors.shape != (len(self.ngram_buckets), self.dim):
            raise EmbeddingError(
                f"Matriz de n-gramas {self.ngram_vectors.shape} incompatível com dim={self.dim}"
            )
        if not (np.isfinite(self.word_vectors).all() and np.isfinite(self.ngram_vectors).all()):
            raise EmbeddingError("Tabela de embeddings com valores não finitos")

    @property
    def dim(self) -> int:
        return self.config.dim

    def __len__(self) -> int:
        return len(self.words)

    def __contains__(self, word: str) -> bool:
        return word in self.vocab

    def ngram_rows(self, word: str) -> List[int]:
        """Linhas de n-gramas da palavra cujos buckets foram vistos no treino"""
        rows = []
        for gram in ngrams(word, self.config.n_min, self.config.n_max):
            row = self._bucket_rows.get(fnv1a_hash(gram) % self.config.buckets)
            if row is not None:
                rows.append(row)
        return rows

    def vector(self, word: str) -> np.ndarray:
        """
        Vetor composto de uma palavra

        No vocabulário: média do vetor da palavra com seus n-gramas.
        Fora do vocabulário: média dos n-gramas vistos; vetor nulo sem nenhum.
        """
        rows = self.ngram_rows(word)
        parts = [self.ngram_vectors[rows]] if rows else []
        index = self.vocab.get(word)
        if index is not None:
            parts.insert(0, self.word_vectors[index : index + 1])
        if not parts:
            return np.zeros(self.dim)
        return np.concatenate(parts, axis=0).mean(axis=0)

    def equals(self, other: "EmbeddingTable") -> bool:
        return (
            self.config == other.config
            and self.words == other.words
            and list(self.counts) == list(other.counts)
            and np.array_equal(self.word_vectors, other.word_vectors)
            and np.array_equal(self.ngram_buckets, other.ngram_buckets)
            and np.array_equal(self.ngram_vectors, other.ngram_vectors)
            and list(self.epoch_losses) == list(other.epoch_losses)
        )


class SubwordEmbeddingTrainer:
    """Treinador skip-gram com negative sampling e vetores de subword"""

    def __init__(self, config: Optional[EmbeddingConfig] = None):
        self.config = config or EmbeddingConfig()

    def train(self, corpus: Iterable[Sequence[str]]) -> EmbeddingTable:
        """
        Treina uma tabela de embeddings a partir de sequências de tokens

        Args:
            corpus: Sentenças tokenizadas (corpora combinados para o híbrido)

        Returns:
            EmbeddingTable com a perda média por época em epoch_losses
        """
        config = self.config
        sentences = [list(sentence) for sentence in corpus if sentence]
        if not sentences:
            raise EmbeddingError("Corpus vazio: nada para treinar")

        counter = Counter(token for sentence in sentences for token in sentence)
        vocab_items = sorted(
            ((word, count) for word, count in counter.items() if count >= config.min_count),
            key=lambda item: (-item[1], item[0]),
        )
        if not vocab_items:
            raise EmbeddingError(
                f"Nenhuma palavra com frequência >= {config.min_count} no corpus"
            )
        words = [word for word, _ in vocab_items]
        counts = np.array([count for _, count in vocab_items], dtype=np.float64)
        vocab = {word: index for index, word in enumerate(words)}
        vocab_size = len(words)

        # Buckets de n-gramas usados pelo vocabulário, em ordem crescente
        word_buckets = [
            [fnv1a_hash(gram) % config.buckets for gram in ngrams(word, config.n_min, config.n_max)]
            for word in words
        ]
        buckets = np.array(sorted({b for row in word_buckets for b in row}), dtype=np.int64)
        bucket_rows = {int(b): row for row, b in enumerate(buckets)}
        input_rows = [
            np.array([index] + [vocab_size + bucket_rows[b] for b in row], dtype=np.int64)
            for index, row in enumerate(word_buckets)
        ]

        rng = np.random.default_rng(config.seed)
        bound = 1.0 / config.dim
        input_matrix = rng.uniform(-bound, bound, size=(vocab_size + len(buckets), config.dim))
        output_matrix = np.zeros((vocab_size, config.dim))

        weights = counts**UNIGRAM_POWER
        negative_cdf = np.cumsum(weights / weights.sum())
        negative_cdf[-1] = 1.0

        id_sentences = [
            np.array([vocab[token] for token in sentence if token in vocab], dtype=np.int64)
            for sentence in sentences
        ]
        total_tokens = config.epochs * sum(len(ids) for ids in id_sentences)
        processed = 0

        logger.info(
            f"Treinando embeddings: |V|={vocab_size}, buckets vistos={len(buckets)}, "
            f"dim={config.dim}, épocas={config.epochs}"
        )

        epoch_losses: List[float] = []
        labels = np.zeros(config.negatives + 1)
        labels[0] = 1.0
        for epoch in range(1, config.epochs + 1):
            loss_sum, pair_count = 0.0, 0
            for ids in id_sentences:
                for position, center in enumerate(ids):
                    lr = config.lr * max(0.0, 1.0 - processed / total_tokens)
                    radius = int(rng.integers(1, config.window + 1))
                    rows = input_rows[center]
                    low, high = max(0, position - radius), min(len(ids), position + radius + 1)
                    for context_position in range(low, high):
                        if context_position == position:
                            continue
                        negatives = np.searchsorted(
                            negative_cdf, rng.random(config.negatives), side="right"
                        )
                        targets = np.concatenate(([ids[context_position]], negatives))
                        loss_sum += self._update(
                            input_matrix, output_matrix, rows, targets, labels, lr
                        )
                        pair_count += 1
                    processed += 1

            epoch_loss = loss_sum / max(pair_count, 1)
            epoch_losses.append(epoch_loss)
            logger.info(f"Embeddings época {epoch}/{config.epochs}: perda média {epoch_loss:.4f}")

        return EmbeddingTable(
            config=config,
            words=words,
            counts=[int(c) for c in counts],
            word_vectors=input_matrix[:vocab_size].copy(),
            ngram_buckets=buckets,
            ngram_vectors=input_matrix[vocab_size:].copy(),
            epoch_losses=epoch_losses,
        )

    @staticmethod
    def _update(
        input_matrix: np.ndarray,
        output_matrix: np.ndarray,
        rows: np.ndarray,
        targets: np.ndarray,
        labels: np.ndarray,
        lr: float,
    ) -> float:
        """Um passo SGD para (centro, contexto + negativos); retorna a perda"""
        hidden = input_matrix[rows].mean(axis=0)
        outputs = output_matrix[targets]
        scores = np.clip(outputs @ hidden, -SCORE_CLIP, SCORE_CLIP)
        probs = 1.0 / (1.0 + np.exp(-scores))

        loss = -np.log(max(probs[0], LOG_EPSILON)) - np.log(
            np.maximum(1.0 - probs[1:], LOG_EPSILON)
        ).sum()

        step = lr * (labels - probs)
        grad_hidden = step @ outputs
        np.add.at(output_matrix, targets, np.outer(step, hidden))
        np.add.at(input_matrix, rows, grad_hidden)
        return float(loss)


def train(corpus: Iterable[Sequence[str]], config: Optional[EmbeddingConfig] = None) -> EmbeddingTable:
    """Atalho funcional para SubwordEmbeddingTrainer(config).train(corpus)"""
    return SubwordEmbeddingTrainer(config).train(corpus)


def negative_sampling_distribution(counts: Sequence[int]) -> np.ndarray:
    """Distribuição de negative sampling: proporcional a count^0.75, soma 1"""
    weights = np.asarray(counts, dtype=np.float64) ** UNIGRAM_POWER
    return weights / weights.sum()


def _check_table_dim(table: EmbeddingTable, role: str) -> None:
    if table.word_vectors.shape[1] != table.config.dim:
        raise EmbeddingError(
            f"Tabela {role}: vetores de dimensão {table.word_vectors.shape[1]} "
            f"mas config declara {table.config.dim}"
        )


@dataclass
class DoubleEmbedding:
    """Concatenação do embedding geral com o de domínio"""

    general: EmbeddingTable
    domain: EmbeddingTable

    def __post_init__(self):
        _check_table_dim(self.general, "general")
        _check_table_dim(self.domain, "domain")

    @property
    def dim(self) -> int:
        return self.general.dim + self.domain.dim

    def lookup(self, word: str) -> np.ndarray:
        """Primeiras posições do geral, últimas do domínio"""
        return np.concatenate([self.general.vector(word), self.domain.vector(word)])


def double_lookup(double: DoubleEmbedding, word: str) -> np.ndarray:
    return double.lookup(word)


class EmbeddingFeatures:
    """
    Liga um modo de embedding às tabelas carregadas e gera as entradas do modelo
    """

    def __init__(
        self,
        mode: EmbeddingMode,
        tables: Dict[EmbeddingMode, EmbeddingTable],
        paths: Optional[Dict[EmbeddingMode, Path]] = None,
    ):
        self.mode = EmbeddingMode(mode)
        self.paths = {EmbeddingMode(k): Path(v) for k, v in (paths or {}).items()}

        required = (
            [EmbeddingMode.GENERAL, EmbeddingMode.DOMAIN]
            if self.mode == EmbeddingMode.DOUBLE
            else [self.mode]
        )
        missing = [role.value for role in required if role not in tables]
        if missing:
            raise EmbeddingError(f"Modo {self.mode.value} exige as tabelas: {missing}")
        self.tables = {role: tables[role] for role in required}

        if self.mode == EmbeddingMode.DOUBLE:
            self._double = DoubleEmbedding(
                general=self.tables[EmbeddingMode.GENERAL],
                domain=self.tables[EmbeddingMode.DOMAIN],
            )
        else:
            _check_table_dim(self.tables[self.mode], self.mode.value)
            self._double = None
        self._cached_vector = lru_cache(maxsize=settings.embedding_feature_cache_size)(self._compose)

    @property
    def dim(self) -> int:
        if self._double is not None:
            return self._double.dim
        return self.tables[self.mode].dim

    @property
    def table_dims(self) -> Dict[str, int]:
        """Dimensão de cada tabela carregada, por papel"""
        return {role.value: table.dim for role, table in self.tables.items()}

    def _compose(self, word: str) -> np.ndarray:
        if self._double is not None:
            return self._double.lookup(word)
        return self.tables[self.mode].vector(word)

    def lookup(self, word: str) -> np.ndarray:
        """Vetor do token; os compostos mais recentes ficam em cache (LRU)"""
        return self._cached_vector(word)

    def cache_info(self):
        return self._cached_vector.cache_info()

    def featurize(self, tokens: Sequence[str]) -> np.ndarray:
        """Matriz n×dim com o vetor de cada token"""
        if not tokens:
            return np.zeros((0, self.dim))
        return np.stack([self.lookup(token) for token in tokens])
