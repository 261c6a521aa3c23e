"""
Núcleo numérico: tensores densos float64 com diferenciação automática reversa

Cada operação registra seus pais e uma função de backward; `Tensor.backward`
percorre o grafo em ordem inversa de criação (que é sempre uma ordem
topológica válida) e acumula os adjuntos nos pais.
"""

import itertools
import math
import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from src.utils.logger import get_logger

logger = get_logger(__name__)

# Clamp dentro do log da entropia cruzada
CE_LOG_EPSILON = 1e-12

# Tolerância para aceitar linhas de probabilidade na entropia cruzada
DISTRIBUTION_TOLERANCE = 1e-9

# Piso do denominador do erro relativo no gradient check
GRADCHECK_FLOOR = 1e-5

_node_counter = itertools.count()
_grad_state = threading.local()

ArrayLike = Union[np.ndarray, Sequence, float, int]


class TensorError(Exception):
    """Exceção base do núcleo de tensores"""

    pass


class ShapeMismatchError(TensorError, ValueError):
    """Dimensões incompatíveis entre operandos"""

    pass


class NonFiniteError(TensorError, FloatingPointError):
    """Uma operação produziu NaN ou Inf"""

    pass


class InvalidDistributionError(TensorError, ValueError):
    """Linhas passadas para a entropia cruzada não são distribuições"""

    pass


class LabelIndexError(TensorError, IndexError):
    """Índice de rótulo fora do intervalo [0, c)"""

    pass


class GraphError(TensorError, RuntimeError):
    """Uso inválido do grafo de computação"""

    pass


def _grad_enabled() -> bool:
    return getattr(_grad_state, "enabled", True)


@contextmanager
def inference_mode():
    """Desliga a gravação do grafo na thread atual (predição/validação)"""
    previous = _grad_enabled()
    _grad_state.enabled = False
    try:
        yield
    finally:
        _grad_state.enabled = previous


class Tensor:
    """Tensor denso float64 (row-major) que participa do grafo de autodiff"""

    __slots__ = (
        "data",
        "grad",
        "requires_grad",
        "name",
        "_parents",
        "_backward",
        "_op",
        "_node_id",
        "_freed",
    )

    def __init__(
        self,
        data: ArrayLike,
        requires_grad: bool = False,
        name: Optional[str] = None,
    ):
        array = np.array(data, dtype=np.float64)
        _check_finite(array, "leaf")
        self.data = array
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: Tuple["Tensor", ...] = ()
        self._backward: Optional[Callable] = None
        self._op = "leaf"
        self._node_id = next(_node_counter)
        self._freed = False

    @classmethod
    def _from_op(
        cls,
        data: np.ndarray,
        parents: Tuple["Tensor", ...],
        backward: Callable,
        op: str,
    ) -> "Tensor":
        """Cria o resultado de uma operação, ligando-o ao grafo se necessário"""
        _check_finite(data, op)
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.name = None
        out._op = op
        out._node_id = next(_node_counter)
        out._freed = False
        out.requires_grad = _grad_enabled() and any(p.requires_grad for p in parents)
        if out.requires_grad:
            out._parents = parents
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        return out

    # ---------------------------------------------------------------
    # Acesso
    # ---------------------------------------------------------------

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeMismatchError(f"item() exige tensor escalar, shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self._op}{label})"

    # ---------------------------------------------------------------
    # Operadores
    # ---------------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return select(self, index)

    # ---------------------------------------------------------------
    # Backward
    # ---------------------------------------------------------------

    def backward(self) -> None:
        """
        Propaga gradientes a partir desta raiz escalar

        Depois da passada o grafo é liberado: chamar backward de novo na mesma
        raiz levanta GraphError.
        """
        if self._freed:
            raise GraphError("Grafo já liberado: refaça o forward antes do backward")
        if self.data.size != 1:
            raise GraphError(f"backward exige raiz escalar, shape recebido {self.shape}")
        if not self.requires_grad:
            raise GraphError("A raiz não depende de nenhum tensor com requires_grad")

        nodes = self._collect_graph()
        nodes.sort(key=lambda node: node._node_id, reverse=True)

        self.grad = np.ones_like(self.data)
        for node in nodes:
            if node._backward is None or node.grad is None:
                continue
            parent_grads = node._backward(node.grad)
            for parent, grad in zip(node._parents, parent_grads):
                if grad is None or not parent.requires_grad:
                    continue
                grad = _unbroadcast(grad, parent.data.shape)
                parent.grad = grad if parent.grad is None else parent.grad + grad

        for node in nodes:
            if node._parents:
                node._parents = ()
                node._backward = None
                node._freed = True

    def _collect_graph(self) -> List["Tensor"]:
        seen = set()
        ordered = []
        stack = [self]
        while stack:
            node = stack.pop()
            if id(node) in seen:
                continue
            seen.add(id(node))
            ordered.append(node)
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append(parent)
        return ordered


# ===============================================
# Helpers internos
# ===============================================


def _check_finite(array: np.ndarray, op: str) -> None:
    if not np.isfinite(array).all():
        raise NonFiniteError(f"Operação '{op}' produziu valores não finitos")


def _as_tensor(value: Union[Tensor, ArrayLike]) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def constant(value: ArrayLike) -> Tensor:
    """Tensor sem gradiente (máscaras, escalas de dropout, entradas)"""
    return Tensor(value, requires_grad=False)


def parameter(value: ArrayLike, name: Optional[str] = None) -> Tensor:
    """Tensor folha treinável"""
    return Tensor(value, requires_grad=True, name=name)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Soma o gradiente nos eixos que foram expandidos por broadcasting"""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def ordered_sum_last(array: np.ndarray) -> np.ndarray:
    """
    Soma no último eixo acumulando estritamente da esquerda para a direita

    Posições de padding (zeros) no fim nunca alteram o resultado bit a bit,
    o que não vale para a soma pairwise do numpy.
    """
    acc = array[..., 0].copy()
    for i in range(1, array.shape[-1]):
        acc += array[..., i]
    return acc


# ===============================================
# Operações elementwise
# ===============================================


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "add")

    def backward(grad):
        return grad, grad

    return Tensor._from_op(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "sub")

    def backward(grad):
        return grad, -grad

    return Tensor._from_op(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "mul")

    def backward(grad):
        return grad * b.data, grad * a.data

    return Tensor._from_op(a.data * b.data, (a, b), backward, "mul")


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatchError(
            f"{op}: shapes incompatíveis {a.shape} e {b.shape}"
        ) from None


def tanh(x) -> Tensor:
    x = _as_tensor(x)
    out = np.tanh(x.data)

    def backward(grad):
        return (grad * (1.0 - out * out),)

    return Tensor._from_op(out, (x,), backward, "tanh")


def sigmoid(x) -> Tensor:
    x = _as_tensor(x)
    # Forma via tanh: estável para |x| grande
    out = 0.5 * (1.0 + np.tanh(0.5 * x.data))

    def backward(grad):
        return (grad * out * (1.0 - out),)

    return Tensor._from_op(out, (x,), backward, "sigmoid")


# ===============================================
# Álgebra linear
# ===============================================


def matmul(a, b) -> Tensor:
    """Produto matricial (m×k)·(k×n); `b` também pode ser um vetor (k,)"""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim not in (1, 2) or a.shape[1] != b.shape[0]:
        raise ShapeMismatchError(
            f"matmul: dimensões incompatíveis {a.shape} x {b.shape}"
        )

    def backward(grad):
        if b.ndim == 1:
            return np.outer(grad, b.data), a.data.T @ grad
        return grad @ b.data.T, a.data.T @ grad

    return Tensor._from_op(a.data @ b.data, (a, b), backward, "matmul")


def contract_right(tensor, u) -> Tensor:
    """
    Contrai o último eixo de T[K×d×d] com u[d] (ou u[B×d] em lote)

    Resultado: (K×d) ou (B×K×d) com out[..., k, i] = Σⱼ T[k,i,j]·u[..., j].
    """
    tensor, u = _as_tensor(tensor), _as_tensor(u)
    if tensor.ndim != 3 or tensor.shape[1] != tensor.shape[2]:
        raise ShapeMismatchError(f"Tensor do operador deve ser K×d×d, recebido {tensor.shape}")
    k_dim, d_dim, _ = tensor.shape
    if u.ndim not in (1, 2) or u.shape[-1] != d_dim:
        raise ShapeMismatchError(
            f"Protótipo incompatível com o tensor: {u.shape} vs {tensor.shape}"
        )

    flat = tensor.data.reshape(k_dim * d_dim, d_dim)
    batch_u = u.data.reshape(-1, d_dim)
    out = (flat @ batch_u.T).T.reshape(batch_u.shape[0], k_dim, d_dim)
    if u.ndim == 1:
        out = out[0]

    def backward(grad):
        batch_grad = grad.reshape(-1, k_dim * d_dim)
        grad_tensor = (batch_grad.T @ batch_u).reshape(k_dim, d_dim, d_dim)
        grad_u = (batch_grad @ flat).reshape(u.shape)
        return grad_tensor, grad_u

    return Tensor._from_op(out, (tensor, u), backward, "contract_right")


def contract_left(h, projected) -> Tensor:
    """
    Produto de h[d] (ou h[B×d]) com cada linha de projected[K×d] (ou [B×K×d])
    """
    h, projected = _as_tensor(h), _as_tensor(projected)
    if projected.ndim != h.ndim + 1 or projected.shape[-1] != h.shape[-1]:
        raise ShapeMismatchError(
            f"contract_left: shapes incompatíveis {h.shape} e {projected.shape}"
        )
    if h.ndim == 2 and projected.shape[0] != h.shape[0]:
        raise ShapeMismatchError(
            f"contract_left: lotes diferentes {h.shape} e {projected.shape}"
        )

    if h.ndim == 1:
        out = projected.data @ h.data

        def backward(grad):
            return grad @ projected.data, np.outer(grad, h.data)

    else:
        out = np.einsum("bi,bki->bk", h.data, projected.data)

        def backward(grad):
            grad_h = np.einsum("bk,bki->bi", grad, projected.data)
            grad_projected = grad[:, :, None] * h.data[:, None, :]
            return grad_h, grad_projected

    return Tensor._from_op(out, (h, projected), backward, "contract_left")


def bilinear(h, tensor, u) -> Tensor:
    """
    Operador tensorial: out[k] = Σᵢⱼ h[i]·T[k,i,j]·u[j]

    Aceita vetores (d,) ou lotes (B×d) para h e u.
    """
    h, tensor, u = _as_tensor(h), _as_tensor(tensor), _as_tensor(u)
    if h.shape != u.shape:
        raise ShapeMismatchError(f"bilinear: h {h.shape} e u {u.shape} diferem")
    return contract_left(h, contract_right(tensor, u))


# ===============================================
# Reduções, junções e seleção
# ===============================================


def tensor_sum(x) -> Tensor:
    x = _as_tensor(x)

    def backward(grad):
        return (np.broadcast_to(grad, x.shape).copy(),)

    return Tensor._from_op(np.array(x.data.sum()), (x,), backward, "sum")


def mean(x) -> Tensor:
    x = _as_tensor(x)
    return mul(tensor_sum(x), 1.0 / x.size)


def dot(x, y) -> Tensor:
    x, y = _as_tensor(x), _as_tensor(y)
    if x.ndim != 1 or x.shape != y.shape:
        raise ShapeMismatchError(f"dot: vetores incompatíveis {x.shape} e {y.shape}")
    return tensor_sum(mul(x, y))


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    """Concatena ao longo de um eixo (por padrão o último)"""
    parts = tuple(_as_tensor(t) for t in tensors)
    if not parts:
        raise ShapeMismatchError("concat de lista vazia")
    try:
        out = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError as e:
        shapes = [p.shape for p in parts]
        raise ShapeMismatchError(f"concat: shapes incompatíveis {shapes}") from e
    boundaries = np.cumsum([p.shape[axis] for p in parts])[:-1]

    def backward(grad):
        return tuple(np.split(grad, boundaries, axis=axis))

    return Tensor._from_op(out, parts, backward, "concat")


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    parts = tuple(_as_tensor(t) for t in tensors)
    if not parts:
        raise ShapeMismatchError("stack de lista vazia")
    try:
        out = np.stack([p.data for p in parts], axis=axis)
    except ValueError as e:
        shapes = [p.shape for p in parts]
        raise ShapeMismatchError(f"stack: shapes incompatíveis {shapes}") from e

    def backward(grad):
        return tuple(np.take(grad, i, axis=axis) for i in range(len(parts)))

    return Tensor._from_op(out, parts, backward, "stack")


def _is_basic_index(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(
        item is Ellipsis or item is None or isinstance(item, (int, slice, np.integer))
        for item in items
    )


def select(x, index) -> Tensor:
    """Indexação numpy com gradiente espalhado de volta à origem"""
    x = _as_tensor(x)
    out = np.array(x.data[index])
    basic = _is_basic_index(index)

    def backward(grad):
        full = np.zeros_like(x.data)
        if basic:
            full[index] = grad
        else:
            np.add.at(full, index, grad)
        return (full,)

    return Tensor._from_op(out, (x,), backward, "select")


def take_rows(table, indices: ArrayLike) -> Tensor:
    """Lookup de linhas de uma tabela de embeddings (V×d) com scatter no backward"""
    table = _as_tensor(table)
    rows = np.asarray(indices, dtype=np.int64)
    if table.ndim != 2:
        raise ShapeMismatchError(f"take_rows exige tabela 2-D, recebido {table.shape}")
    if rows.size and (rows.min() < 0 or rows.max() >= table.shape[0]):
        raise LabelIndexError(
            f"Índice de linha fora de [0, {table.shape[0]}): {rows.min()}..{rows.max()}"
        )

    def backward(grad):
        full = np.zeros_like(table.data)
        np.add.at(full, rows, grad)
        return (full,)

    return Tensor._from_op(table.data[rows], (table,), backward, "take_rows")


# ===============================================
# Softmax, perda e regularização
# ===============================================


def softmax(x, mask: Optional[np.ndarray] = None) -> Tensor:
    """
    Softmax no último eixo com deslocamento pelo máximo

    `mask` (booleana, mesmo shape) exclui posições: elas recebem probabilidade
    zero e não entram no máximo nem na normalização.
    """
    x = _as_tensor(x)
    if x.ndim == 0 or x.shape[-1] == 0 or x.size == 0:
        raise ShapeMismatchError("softmax de entrada vazia")

    if mask is None:
        valid = np.ones(x.shape, dtype=bool)
    else:
        valid = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        if not valid.any(axis=-1).all():
            raise ShapeMismatchError("softmax: linha sem nenhuma posição válida")

    peak = np.where(valid, x.data, -np.inf).max(axis=-1, keepdims=True)
    exps = np.where(valid, np.exp(np.where(valid, x.data - peak, 0.0)), 0.0)
    out = exps / ordered_sum_last(exps)[..., None]

    def backward(grad):
        inner = ordered_sum_last(grad * out)[..., None]
        return (out * (grad - inner),)

    return Tensor._from_op(out, (x,), backward, "softmax")


def cross_entropy(
    pred_rows,
    gold: ArrayLike,
    mask: Optional[np.ndarray] = None,
) -> Tensor:
    """
    Entropia cruzada média: mean(−ln(max(p[linha, gold], ε)))

    `mask` opcional (N,) com 0/1 remove linhas (padding) da média; elas
    contribuem exatamente zero para perda e gradientes.
    """
    pred_rows = _as_tensor(pred_rows)
    if pred_rows.ndim != 2:
        raise ShapeMismatchError(
            f"cross_entropy exige matriz n×c, recebido {pred_rows.shape}"
        )
    n_rows, n_classes = pred_rows.shape
    labels = np.asarray(gold, dtype=np.int64).reshape(-1)
    if labels.shape[0] != n_rows:
        raise ShapeMismatchError(
            f"cross_entropy: {n_rows} linhas mas {labels.shape[0]} rótulos"
        )
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        bad = labels[(labels < 0) | (labels >= n_classes)][0]
        raise LabelIndexError(f"Rótulo {bad} fora do intervalo [0, {n_classes})")

    row_sums = ordered_sum_last(pred_rows.data)
    if np.any(np.abs(row_sums - 1.0) > DISTRIBUTION_TOLERANCE):
        raise InvalidDistributionError("Linhas de predição não somam 1")

    weights = (
        np.ones(n_rows) if mask is None else np.asarray(mask, dtype=np.float64).reshape(-1)
    )
    count = math.fsum(weights)
    if count <= 0:
        raise ShapeMismatchError("cross_entropy sem nenhuma linha válida")

    rows = np.arange(n_rows)
    picked = pred_rows.data[rows, labels]
    clamped = np.maximum(picked, CE_LOG_EPSILON)
    losses = -np.log(clamped) * weights
    # fsum é exato: a ordem e os zeros do padding não mudam o resultado
    value = math.fsum(losses) / count

    def backward(grad):
        full = np.zeros_like(pred_rows.data)
        active = picked >= CE_LOG_EPSILON
        full[rows, labels] = np.where(active, -grad * weights / (clamped * count), 0.0)
        return (full,)

    return Tensor._from_op(np.array(value), (pred_rows,), backward, "cross_entropy")


def dropout(
    x,
    rate: float,
    training: bool,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    """Dropout invertido: sobreviventes escalados por 1/(1−rate) no treino"""
    x = _as_tensor(x)
    if rate < 0 or rate >= 1:
        raise ValueError(f"Taxa de dropout deve estar em [0, 1), recebido {rate}")
    if not training or rate == 0:
        return x
    if rng is None:
        raise ValueError("dropout em treino exige um gerador aleatório")
    keep = rng.random(x.shape) >= rate
    return mul(x, constant(keep / (1.0 - rate)))


# ===============================================
# Verificação de gradientes
# ===============================================


@dataclass
class GradientCheckResult:
    """Resultado de uma verificação por diferenças centrais"""

    max_relative_error: float
    per_tensor: Dict[str, float] = field(default_factory=dict)
    checked_entries: int = 0

    @property
    def worst_tensor(self) -> Optional[str]:
        if not self.per_tensor:
            return None
        return max(self.per_tensor, key=self.per_tensor.get)


def relative_error(analytic: float, numeric: float, floor: float = GRADCHECK_FLOOR) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def gradient_check(
    loss_fn: Callable[[], Tensor],
    tensors: Dict[str, Tensor],
    step: float = 1e-5,
    max_entries: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> GradientCheckResult:
    """
    Compara gradientes analíticos com diferenças centrais

    Args:
        loss_fn: Reconstrói o grafo e retorna a perda escalar
        tensors: Tensores folha a verificar, por nome
        step: Passo das diferenças centrais
        max_entries: Limite de entradas amostradas por tensor (None = todas)
        rng: Gerador para a amostragem de entradas
    """
    for tensor in tensors.values():
        tensor.zero_grad()
    loss_fn().backward()
    analytic = {
        name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
        for name, t in tensors.items()
    }

    sampler = rng if rng is not None else np.random.default_rng(0)
    result = GradientCheckResult(max_relative_error=0.0)
    for name, tensor in tensors.items():
        indices: Iterable[Tuple[int, ...]] = list(np.ndindex(*tensor.shape))
        if max_entries is not None and len(indices) > max_entries:
            chosen = sampler.choice(len(indices), size=max_entries, replace=False)
            indices = [indices[i] for i in sorted(chosen)]

        worst = 0.0
        original = tensor.data
        for index in indices:
            plus = original.copy()
            plus[index] += step
            tensor.data = plus
            loss_plus = loss_fn().item()

            minus = original.copy()
            minus[index] -= step
            tensor.data = minus
            loss_minus = loss_fn().item()

            tensor.data = original
            numeric = (loss_plus - loss_minus) / (2.0 * step)
            worst = max(worst, relative_error(float(analytic[name][index]), numeric))
            result.checked_entries += 1

        result.per_tensor[name] = worst
        result.max_relative_error = max(result.max_relative_error, worst)

    logger.debug(
        f"Gradient check: {result.checked_entries} entradas, "
        f"erro relativo máximo {result.max_relative_error:.3e}"
    )
    return result
