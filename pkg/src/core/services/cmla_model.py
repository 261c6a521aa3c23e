"""
Rede de extração de termos: encoder recorrente + camadas de atenção acopladas

Fluxo de um lote (B sentenças, T posições):
    embeddings -> encoder (GRU/LSTM, uni ou bidirecional) -> H
    L camadas: para aspecto e opinião, r = tanh([h·G·u_m ; h·D·u_outro]),
    α = softmax(v·r) sobre os tokens, u_m' = u_m + Σ α·h
    R = Σ_camadas [r_aspecto ; r_opinião] -> softmax(R·W + b) em 5 rótulos

Todo o cálculo é feito passo a passo no tempo com shapes (B, ·) fixos, assim
posições de padding no fim do lote não alteram nenhum valor dos tokens reais.
"""

from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from src.core.models.configs import ModelArchitecture, ModelConfig
from src.core.models.labels import NUM_LABELS, EntitySpan, Label
from src.core.services.embedding_trainer import EmbeddingFeatures
from src.core.services.tensor_core import (
    Tensor,
    concat,
    constant,
    contract_left,
    contract_right,
    cross_entropy,
    dropout,
    inference_mode,
    matmul,
    mul,
    parameter,
    sigmoid,
    softmax,
    stack,
    tanh,
)
from src.core.services.text_pipeline import decode_bio
from src.utils.config import settings
from src.utils.logger import get_logger

logger = get_logger(__name__)

TASKS = ("aspect", "opinion")


class ModelError(Exception):
    """Exceção base da rede de extração"""

    pass


# ===============================================
# Parâmetros
# ===============================================


def expected_shapes(config: ModelConfig) -> Dict[str, Tuple[int, ...]]:
    """Nome -> shape de cada parâmetro, na ordem de inicialização"""
    hidden = config.hidden_units
    gates = 3 if config.rnn_variant.cell == "GRU" else 4
    directions = ["fwd", "bwd"] if config.rnn_variant.is_bidirectional else ["fwd"]
    d_h, k = config.state_dim, config.tensor_dim

    shapes: Dict[str, Tuple[int, ...]] = {}
    for direction in directions:
        shapes[f"encoder.{direction}.W"] = (config.input_dim, gates * hidden)
        shapes[f"encoder.{direction}.U"] = (hidden, gates * hidden)
        shapes[f"encoder.{direction}.b"] = (gates * hidden,)

    if config.uses_attention:
        for layer in range(config.attention_layers):
            for task in TASKS:
                shapes[f"attention.{layer}.{task}.G"] = (k, d_h, d_h)
                shapes[f"attention.{layer}.{task}.D"] = (k, d_h, d_h)
                shapes[f"attention.{layer}.{task}.v"] = (2 * k,)
        for task in TASKS:
            shapes[f"prototype.{task}"] = (d_h,)
        shapes["head.W"] = (4 * k, NUM_LABELS)
    else:
        shapes["head.W"] = (d_h, NUM_LABELS)
    shapes["head.b"] = (NUM_LABELS,)
    return shapes


class ModelParams:
    """Conjunto ordenado de parâmetros treináveis, por nome"""

    def __init__(self, tensors: Dict[str, Tensor]):
        self._tensors: Dict[str, Tensor] = dict(tensors)

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    def items(self):
        return self._tensors.items()

    def names(self) -> List[str]:
        return list(self._tensors)

    def arrays(self) -> Dict[str, np.ndarray]:
        return {name: tensor.data.copy() for name, tensor in self._tensors.items()}

    @classmethod
    def from_arrays(cls, arrays: Dict[str, np.ndarray]) -> "ModelParams":
        return cls({name: parameter(value, name=name) for name, value in arrays.items()})

    def copy(self) -> "ModelParams":
        return ModelParams.from_arrays(self.arrays())

    def zero_grad(self) -> None:
        for tensor in self._tensors.values():
            tensor.zero_grad()

    def equals(self, other: "ModelParams") -> bool:
        return self.names() == other.names() and all(
            np.array_equal(self[name].data, other[name].data) for name in self
        )

    def check_shapes(self, config: ModelConfig) -> None:
        expected = expected_shapes(config)
        if list(expected) != self.names():
            missing = sorted(set(expected) - set(self._tensors))
            extra = sorted(set(self._tensors) - set(expected))
            raise ModelError(f"Parâmetros incompatíveis: faltando {missing}, sobrando {extra}")
        for name, shape in expected.items():
            if self[name].shape != shape:
                raise ModelError(f"{name}: shape {self[name].shape}, esperado {shape}")


def init_params(config: ModelConfig) -> ModelParams:
    """
    Inicialização determinística a partir de config.seed

    Pesos ~ U(−0.08, 0.08), protótipos ~ U(−0.2, 0.2), vieses zero exceto o
    viés do forget gate da LSTM (1.0).
    """
    rng = np.random.default_rng(config.seed)
    weight_range = settings.model_init_weight_range
    prototype_range = settings.model_init_prototype_range

    tensors: Dict[str, Tensor] = {}
    for name, shape in expected_shapes(config).items():
        if name.startswith("prototype."):
            value = rng.uniform(-prototype_range, prototype_range, size=shape)
        elif name.endswith(".b"):
            value = np.zeros(shape)
            if name.startswith("encoder.") and config.rnn_variant.cell == "LSTM":
                hidden = config.hidden_units
                value[hidden : 2 * hidden] = settings.model_lstm_forget_bias
        else:
            value = rng.uniform(-weight_range, weight_range, size=shape)
        tensors[name] = parameter(value, name=name)

    logger.debug(f"Parâmetros inicializados: {config.describe()} ({len(tensors)} tensores)")
    return ModelParams(tensors)


def count_parameters(params: ModelParams) -> int:
    return int(sum(tensor.size for _, tensor in params.items()))


# ===============================================
# Lotes
# ===============================================


@dataclass
class Batch:
    """Lote com padding no fim; mask marca as posições reais"""

    inputs: np.ndarray  # (B, T, input_dim)
    mask: np.ndarray  # (B, T) bool
    gold: Optional[np.ndarray] = None  # (B, T) códigos de rótulo, 4 (O) no padding

    @property
    def size(self) -> int:
        return self.inputs.shape[0]

    @property
    def steps(self) -> int:
        return self.inputs.shape[1]

    @property
    def lengths(self) -> List[int]:
        return [int(n) for n in self.mask.sum(axis=1)]


def make_batch(
    token_lists: Sequence[Sequence[str]],
    features: EmbeddingFeatures,
    tag_lists: Optional[Sequence[Sequence[Label]]] = None,
    pad_to: Optional[int] = None,
) -> Batch:
    """
    Monta um lote com padding até o maior comprimento (ou `pad_to`)
    """
    if not token_lists or any(len(tokens) == 0 for tokens in token_lists):
        raise ModelError("Lote vazio ou com sentença sem tokens")
    longest = max(len(tokens) for tokens in token_lists)
    steps = longest if pad_to is None else pad_to
    if steps < longest:
        raise ModelError(f"pad_to={pad_to} menor que a maior sentença ({longest})")

    inputs = np.zeros((len(token_lists), steps, features.dim))
    mask = np.zeros((len(token_lists), steps), dtype=bool)
    gold = None if tag_lists is None else np.full(mask.shape, Label.O.code, dtype=np.int64)
    for row, tokens in enumerate(token_lists):
        inputs[row, : len(tokens)] = features.featurize(tokens)
        mask[row, : len(tokens)] = True
        if tag_lists is not None:
            gold[row, : len(tokens)] = [Label(tag).code for tag in tag_lists[row]]
    return Batch(inputs=inputs, mask=mask, gold=gold)


# ===============================================
# Encoder
# ===============================================


def _blend(mask_column: Optional[np.ndarray], new: Tensor, previous: Tensor) -> Tensor:
    """Mantém o estado anterior nas posições de padding"""
    if mask_column is None:
        return new
    keep = constant(mask_column.astype(np.float64)[:, None])
    return keep * new + (1.0 - keep) * previous


def _run_direction(
    xs: Sequence[Tensor],
    masks: Sequence[Optional[np.ndarray]],
    params: ModelParams,
    prefix: str,
    config: ModelConfig,
    reverse: bool,
) -> List[Tensor]:
    W, U, b = params[f"{prefix}.W"], params[f"{prefix}.U"], params[f"{prefix}.b"]
    hidden = config.hidden_units
    batch = xs[0].shape[0]
    lstm = config.rnn_variant.cell == "LSTM"

    h = constant(np.zeros((batch, hidden)))
    c = constant(np.zeros((batch, hidden)))
    outputs: List[Optional[Tensor]] = [None] * len(xs)
    order = range(len(xs) - 1, -1, -1) if reverse else range(len(xs))

    for t in order:
        gates_x = matmul(xs[t], W) + b
        gates_h = matmul(h, U)
        if lstm:
            i = sigmoid(gates_x[:, :hidden] + gates_h[:, :hidden])
            f = sigmoid(gates_x[:, hidden : 2 * hidden] + gates_h[:, hidden : 2 * hidden])
            g = tanh(gates_x[:, 2 * hidden : 3 * hidden] + gates_h[:, 2 * hidden : 3 * hidden])
            o = sigmoid(gates_x[:, 3 * hidden :] + gates_h[:, 3 * hidden :])
            new_c = f * c + i * g
            new_h = o * tanh(new_c)
            c = _blend(masks[t], new_c, c)
        else:
            z = sigmoid(gates_x[:, :hidden] + gates_h[:, :hidden])
            r = sigmoid(gates_x[:, hidden : 2 * hidden] + gates_h[:, hidden : 2 * hidden])
            n = tanh(gates_x[:, 2 * hidden :] + r * gates_h[:, 2 * hidden :])
            new_h = (1.0 - z) * n + z * h
        h = _blend(masks[t], new_h, h)
        outputs[t] = h
    return outputs


def _step_masks(mask: np.ndarray) -> List[Optional[np.ndarray]]:
    """Máscara por passo; None quando todas as sentenças têm token real"""
    return [None if column.all() else column for column in mask.T]


def encode_steps(
    inputs: np.ndarray,
    mask: np.ndarray,
    params: ModelParams,
    config: ModelConfig,
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> List[Tensor]:
    """
    Estados do encoder por passo: lista de T tensores (B, d_h)

    Dropout nas entradas e nas saídas H durante o treino. As máscaras só são
    sorteadas nos passos com algum token real, de modo que padding no fim do
    lote não desloca o gerador.
    """
    if inputs.ndim != 3 or inputs.shape[1] == 0:
        raise ModelError(f"Entrada do encoder deve ser (B, T>0, d), recebido {inputs.shape}")
    if inputs.shape[2] != config.input_dim:
        raise ModelError(
            f"Dimensão de entrada {inputs.shape[2]} diferente de input_dim={config.input_dim}"
        )

    rate = config.dropout_rate
    real_steps = int(mask.any(axis=0).sum())
    xs = [
        dropout(constant(inputs[:, t]), rate, training and t < real_steps, rng)
        for t in range(inputs.shape[1])
    ]
    masks = _step_masks(mask)

    forward = _run_direction(xs, masks, params, "encoder.fwd", config, reverse=False)
    if config.rnn_variant.is_bidirectional:
        backward = _run_direction(xs, masks, params, "encoder.bwd", config, reverse=True)
        states = [concat([f, b]) for f, b in zip(forward, backward)]
    else:
        states = forward
    return [dropout(state, rate, training and t < real_steps, rng) for t, state in enumerate(states)]


def encode(
    inputs: np.ndarray,
    params: ModelParams,
    config: ModelConfig,
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    """Encoder de uma sentença: entradas n×input_dim -> H n×d_h"""
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim != 2 or inputs.shape[0] == 0:
        raise ModelError(f"encode exige matriz n×d com n ≥ 1, recebido {inputs.shape}")
    steps = encode_steps(
        inputs[None], np.ones((1, inputs.shape[0]), dtype=bool), params, config, training, rng
    )
    return concat(steps, axis=0)


# ===============================================
# Atenção acoplada
# ===============================================


@dataclass
class AttentionOutput:
    """Saída de uma camada: features r por passo, pesos α e protótipos novos"""

    r_aspect: List[Tensor]
    r_opinion: List[Tensor]
    alpha_aspect: Tensor  # (B, T)
    alpha_opinion: Tensor  # (B, T)
    u_aspect: Tensor  # (B, d_h)
    u_opinion: Tensor  # (B, d_h)


def attention_layer(
    states: Sequence[Tensor],
    u_aspect: Tensor,
    u_opinion: Tensor,
    params: ModelParams,
    layer: int,
    mask: Optional[np.ndarray] = None,
) -> AttentionOutput:
    """
    Uma camada de atenção acoplada sobre os estados (B, d_h) de cada passo

    Cada tarefa pontua os tokens com o próprio protótipo (tensor G) e com o
    protótipo da outra tarefa (tensor D); os dois protótipos são atualizados a
    partir dos protótipos de entrada da camada.
    """
    prototypes = {"aspect": u_aspect, "opinion": u_opinion}
    batch = states[0].shape[0]
    if mask is None:
        mask = np.ones((batch, len(states)), dtype=bool)

    features: Dict[str, List[Tensor]] = {}
    alphas: Dict[str, Tensor] = {}
    updated: Dict[str, Tensor] = {}
    for task, other in (("aspect", "opinion"), ("opinion", "aspect")):
        prefix = f"attention.{layer}.{task}"
        own = contract_right(params[f"{prefix}.G"], prototypes[task])
        cross = contract_right(params[f"{prefix}.D"], prototypes[other])
        v = params[f"{prefix}.v"]

        rs = [tanh(concat([contract_left(h, own), contract_left(h, cross)])) for h in states]
        scores = stack([matmul(r, v) for r in rs], axis=1)
        alpha = softmax(scores, mask=mask)

        context = None
        for t, h in enumerate(states):
            term = mul(alpha[:, t : t + 1], h)
            context = term if context is None else context + term

        features[task] = rs
        alphas[task] = alpha
        updated[task] = prototypes[task] + context

    return AttentionOutput(
        r_aspect=features["aspect"],
        r_opinion=features["opinion"],
        alpha_aspect=alphas["aspect"],
        alpha_opinion=alphas["opinion"],
        u_aspect=updated["aspect"],
        u_opinion=updated["opinion"],
    )


# ===============================================
# Forward completo
# ===============================================


@dataclass
class ForwardTrace:
    """Pesos de atenção por camada (B×T) e protótipos finais, para inspeção"""

    aspect_attention: List[np.ndarray] = field(default_factory=list)
    opinion_attention: List[np.ndarray] = field(default_factory=list)
    final_aspect_prototype: Optional[np.ndarray] = None
    final_opinion_prototype: Optional[np.ndarray] = None


@dataclass
class BatchOutput:
    """Distribuições por passo (T tensores B×5) e traço da atenção"""

    step_probs: List[Tensor]
    trace: ForwardTrace

    def time_major(self) -> Tensor:
        """Linhas empilhadas na ordem (t, b): shape (T·B, 5)"""
        return concat(self.step_probs, axis=0)

    def probabilities(self) -> np.ndarray:
        """Array (B, T, 5)"""
        return np.stack([p.data for p in self.step_probs], axis=1)


def forward_batch(
    batch: Batch,
    params: ModelParams,
    config: ModelConfig,
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> BatchOutput:
    states = encode_steps(batch.inputs, batch.mask, params, config, training, rng)
    trace = ForwardTrace()

    if config.uses_attention:
        ones = constant(np.ones((batch.size, 1)))
        u_aspect = ones * params["prototype.aspect"]
        u_opinion = ones * params["prototype.opinion"]
        summed: List[Optional[Tensor]] = [None] * len(states)
        for layer in range(config.attention_layers):
            out = attention_layer(states, u_aspect, u_opinion, params, layer, batch.mask)
            for t in range(len(states)):
                joined = concat([out.r_aspect[t], out.r_opinion[t]])
                summed[t] = joined if summed[t] is None else summed[t] + joined
            u_aspect, u_opinion = out.u_aspect, out.u_opinion
            trace.aspect_attention.append(out.alpha_aspect.numpy())
            trace.opinion_attention.append(out.alpha_opinion.numpy())
        trace.final_aspect_prototype = u_aspect.numpy()
        trace.final_opinion_prototype = u_opinion.numpy()
        head_inputs = summed
    elif config.architecture == ModelArchitecture.ENCODER_SOFTMAX:
        head_inputs = states
    else:
        raise ModelError(f"Arquitetura desconhecida: {config.architecture}")

    W, b = params["head.W"], params["head.b"]
    step_probs = [softmax(matmul(features, W) + b) for features in head_inputs]
    return BatchOutput(step_probs=step_probs, trace=trace)


def batch_loss(
    batch: Batch,
    params: ModelParams,
    config: ModelConfig,
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    """Entropia cruzada média sobre os tokens reais do lote"""
    if batch.gold is None:
        raise ModelError("batch_loss exige rótulos gold")
    output = forward_batch(batch, params, config, training, rng)
    gold = batch.gold.T.reshape(-1)
    weights = batch.mask.T.reshape(-1).astype(np.float64)
    return cross_entropy(output.time_major(), gold, mask=weights)


@dataclass
class TokenScores:
    """Distribuição sobre os 5 rótulos para cada token"""

    tokens: List[str]
    probs: np.ndarray  # (n, 5)
    trace: Optional[ForwardTrace] = None

    def codes(self) -> List[int]:
        # np.argmax devolve o primeiro máximo: empate vai para o menor código
        return [int(code) for code in np.argmax(self.probs, axis=1)]

    def tags(self) -> List[Label]:
        return [Label.from_code(code) for code in self.codes()]


def forward(
    tokens: Sequence[str],
    features: EmbeddingFeatures,
    params: ModelParams,
    config: ModelConfig,
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> TokenScores:
    """Distribuições por token de uma sentença"""
    if not tokens:
        raise ModelError("forward exige ao menos um token")
    batch = make_batch([list(tokens)], features)
    output = forward_batch(batch, params, config, training, rng)
    return TokenScores(tokens=list(tokens), probs=output.probabilities()[0], trace=output.trace)


def decode_scores(scores: TokenScores) -> Tuple[List[Label], List[EntitySpan]]:
    tags = scores.tags()
    return tags, decode_bio(tags)


def predict(
    tokens: Sequence[str],
    features: EmbeddingFeatures,
    params: ModelParams,
    config: ModelConfig,
) -> Tuple[List[Label], List[EntitySpan]]:
    """Argmax por token (sem dropout) seguido da decodificação BIO"""
    with inference_mode():
        scores = forward(tokens, features, params, config, training=False)
    return decode_scores(scores)


def predict_many(
    token_lists: Sequence[Sequence[str]],
    features: EmbeddingFeatures,
    params: ModelParams,
    config: ModelConfig,
    batch_size: int = 32,
) -> List[List[Label]]:
    """Predição em lotes; devolve os rótulos de cada sentença"""
    predictions: List[List[Label]] = []
    with inference_mode():
        for start in range(0, len(token_lists), batch_size):
            chunk = [list(tokens) for tokens in token_lists[start : start + batch_size]]
            batch = make_batch(chunk, features)
            probs = forward_batch(batch, params, config).probabilities()
            for row, tokens in enumerate(chunk):
                codes = np.argmax(probs[row, : len(tokens)], axis=1)
                predictions.append([Label.from_code(int(code)) for code in codes])
    return predictions
