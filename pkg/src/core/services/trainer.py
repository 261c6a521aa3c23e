"""
Loop de treino: mini-lotes com padding, otimizador nadam, early stopping
pela perda de validação e checkpoints que permitem retomar bit a bit
"""

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from src.adapters.model_store import (
    TrainingCheckpoint,
    load_checkpoint,
    save_checkpoint,
)
from src.core.models.configs import ModelConfig, TrainConfig
from src.core.models.labels import Label, LabeledSentence
from src.core.models.reports import EpochRecord, FitReport, StopReason
from src.core.services.cmla_model import (
    ModelParams,
    batch_loss,
    forward_batch,
    init_params,
    make_batch,
)
from src.core.services.embedding_trainer import EmbeddingFeatures
from src.core.services.metrics_calculator import token_accuracy, token_metrics
from src.core.services.tensor_core import (
    GradientCheckResult,
    NonFiniteError,
    cross_entropy,
    gradient_check,
    inference_mode,
)
from src.utils.logger import get_logger

logger = get_logger(__name__)

PathLike = Union[str, Path]


class TrainingError(Exception):
    """Exceção base do treinamento"""

    pass


class TrainingDivergedError(TrainingError, FloatingPointError):
    """Perda ou gradiente não finito durante o treino"""

    pass


# ===============================================
# Otimizador
# ===============================================


def nadam_step(
    param: np.ndarray,
    grad: np.ndarray,
    first_moment: np.ndarray,
    second_moment: np.ndarray,
    step: int,
    config: TrainConfig,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Uma atualização nadam (Nesterov + Adam) para um parâmetro

    Args:
        step: Número do passo já incrementado (t ≥ 1)

    Returns:
        (novo parâmetro, novo m, novo v)
    """
    if step < 1:
        raise TrainingError(f"Passo do otimizador deve ser >= 1, recebido {step}")
    if not np.isfinite(grad).all():
        raise TrainingDivergedError("Gradiente não finito no passo do otimizador")

    beta1, beta2 = config.beta1, config.beta2
    m = beta1 * first_moment + (1.0 - beta1) * grad
    v = beta2 * second_moment + (1.0 - beta2) * grad * grad
    bias1 = 1.0 - beta1**step
    m_hat = m / bias1
    v_hat = v / (1.0 - beta2**step)
    direction = beta1 * m_hat + (1.0 - beta1) * grad / bias1
    return param - config.lr * direction / (np.sqrt(v_hat) + config.epsilon), m, v


@dataclass
class OptState:
    """Momentos por parâmetro e contador de passos"""

    first_moment: Dict[str, np.ndarray]
    second_moment: Dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def zeros(cls, params: ModelParams) -> "OptState":
        return cls(
            first_moment={name: np.zeros_like(t.data) for name, t in params.items()},
            second_moment={name: np.zeros_like(t.data) for name, t in params.items()},
        )


class NadamOptimizer:
    """Aplica nadam_step a todos os parâmetros com o gradiente acumulado"""

    def __init__(self, params: ModelParams, config: TrainConfig, state: Optional[OptState] = None):
        self.params = params
        self.config = config
        self.state = state or OptState.zeros(params)

    def step(self) -> None:
        """Consome um gradiente de mini-lote; t conta passos, não épocas"""
        self.state.step += 1
        for name, tensor in self.params.items():
            grad = tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)
            try:
                tensor.data, self.state.first_moment[name], self.state.second_moment[name] = nadam_step(
                    tensor.data,
                    grad,
                    self.state.first_moment[name],
                    self.state.second_moment[name],
                    self.state.step,
                    self.config,
                )
            except TrainingDivergedError as e:
                raise TrainingDivergedError(f"{e} ({name}, passo {self.state.step})") from e


# ===============================================
# Avaliação
# ===============================================


@dataclass
class SplitEvaluation:
    loss: float
    token_f1: float
    token_accuracy: float
    predictions: List[List[Label]]


def evaluate_split(
    sentences: Sequence[LabeledSentence],
    features: EmbeddingFeatures,
    params: ModelParams,
    config: ModelConfig,
    batch_size: int = 32,
) -> SplitEvaluation:
    """Perda média por token, F1 macro e acurácia de tokens sem dropout"""
    weighted_losses, token_counts = [], []
    predictions: List[List[Label]] = []
    with inference_mode():
        for start in range(0, len(sentences), batch_size):
            chunk = sentences[start : start + batch_size]
            batch = make_batch([s.tokens for s in chunk], features, [s.tags for s in chunk])
            output = forward_batch(batch, params, config)
            weights = batch.mask.T.reshape(-1).astype(np.float64)
            loss = cross_entropy(output.time_major(), batch.gold.T.reshape(-1), mask=weights)
            tokens = int(batch.mask.sum())
            weighted_losses.append(loss.item() * tokens)
            token_counts.append(tokens)

            probs = output.probabilities()
            for row, sentence in enumerate(chunk):
                codes = np.argmax(probs[row, : len(sentence)], axis=1)
                predictions.append([Label.from_code(int(code)) for code in codes])

    gold = [s.tags for s in sentences]
    return SplitEvaluation(
        loss=math.fsum(weighted_losses) / math.fsum(token_counts),
        token_f1=token_metrics(gold, predictions).macro_f1,
        token_accuracy=token_accuracy(gold, predictions),
        predictions=predictions,
    )


def check_model_gradients(
    sentences: Sequence[LabeledSentence],
    features: EmbeddingFeatures,
    params: ModelParams,
    config: ModelConfig,
    max_entries: Optional[int] = 10,
    seed: int = 0,
) -> GradientCheckResult:
    """Gradient check da perda de um lote (sem dropout) contra diferenças centrais"""
    batch = make_batch([s.tokens for s in sentences], features, [s.tags for s in sentences])
    tensors = {name: tensor for name, tensor in params.items()}
    return gradient_check(
        lambda: batch_loss(batch, params, config, training=False),
        tensors,
        max_entries=max_entries,
        rng=np.random.default_rng(seed),
    )


# ===============================================
# Fit
# ===============================================


@dataclass
class FitResult:
    """Parâmetros da melhor época de validação e o histórico do treino"""

    params: ModelParams
    report: FitReport


def fit(
    train: Sequence[LabeledSentence],
    validation: Sequence[LabeledSentence],
    model_config: ModelConfig,
    train_config: TrainConfig,
    features: EmbeddingFeatures,
    checkpoint_path: Optional[PathLike] = None,
    resume_from: Optional[PathLike] = None,
    stop_after: Optional[int] = None,
) -> FitResult:
    """
    Treina do zero (ou a partir de um checkpoint) com early stopping

    Args:
        checkpoint_path: Grava um checkpoint ao fim de cada época
        resume_from: Checkpoint de onde retomar
        stop_after: Interrompe depois desta época (o checkpoint permite retomar)

    Raises:
        TrainingError: splits vazios ou dimensões de embedding incompatíveis
        TrainingDivergedError: perda ou gradiente não finito
    """
    if not train or not validation:
        raise TrainingError("Splits de treino e validação não podem ser vazios")
    if features.dim != model_config.input_dim:
        raise TrainingError(
            f"Embeddings '{features.mode.value}' têm dimensão {features.dim}, "
            f"modelo espera input_dim={model_config.input_dim}"
        )

    rng = np.random.default_rng(train_config.seed)
    if resume_from is not None:
        checkpoint = load_checkpoint(resume_from, expected_config=model_config)
        if checkpoint.train_config != train_config:
            logger.warning("TrainConfig do checkpoint difere da atual; usando a atual")
        params = checkpoint.params
        optimizer = NadamOptimizer(
            params,
            train_config,
            OptState(checkpoint.first_moment, checkpoint.second_moment, checkpoint.step),
        )
        rng.bit_generator.state = checkpoint.rng_state
        best_params = checkpoint.best_params
        best_val_loss, best_epoch, wait = checkpoint.best_val_loss, checkpoint.best_epoch, checkpoint.wait
        history = list(checkpoint.history)
        start_epoch = checkpoint.epoch + 1
        logger.info(f"Retomando treino na época {start_epoch} a partir de {resume_from}")
    else:
        params = init_params(model_config)
        optimizer = NadamOptimizer(params, train_config)
        best_params = params.copy()
        best_val_loss, best_epoch, wait = None, 0, 0
        history: List[EpochRecord] = []
        start_epoch = 1

    logger.info(
        f"Treinando {model_config.describe()}: {len(train)} sentenças de treino, "
        f"{len(validation)} de validação, lote {train_config.batch_size}"
    )

    stop_reason: Optional[StopReason] = None
    if history and _should_stop(history[-1].improved, wait, train_config.patience):
        stop_reason = StopReason.EARLY_STOPPING

    epoch = start_epoch
    while stop_reason is None and epoch <= train_config.max_epochs:
        train_loss = _train_epoch(train, features, params, model_config, train_config, optimizer, rng)
        try:
            evaluation = evaluate_split(
                validation, features, params, model_config, train_config.batch_size
            )
        except NonFiniteError as e:
            raise TrainingDivergedError(f"Validação não finita na época {epoch}: {e}") from e

        improved = best_val_loss is None or evaluation.loss < best_val_loss
        if improved:
            best_val_loss, best_epoch, wait = evaluation.loss, epoch, 0
            best_params = params.copy()
        else:
            wait += 1

        history.append(
            EpochRecord(
                epoch=epoch,
                train_loss=train_loss,
                val_loss=evaluation.loss,
                val_token_f1=evaluation.token_f1,
                val_token_accuracy=evaluation.token_accuracy,
                improved=improved,
            )
        )
        logger.info(
            f"Época {epoch}/{train_config.max_epochs}: perda treino {train_loss:.4f}, "
            f"validação {evaluation.loss:.4f}, F1 token {evaluation.token_f1:.3f}, "
            f"acurácia {evaluation.token_accuracy:.3f}{' *' if improved else ''}"
        )

        if checkpoint_path is not None:
            save_checkpoint(
                checkpoint_path,
                TrainingCheckpoint(
                    model_config=model_config,
                    train_config=train_config,
                    params=params,
                    best_params=best_params,
                    first_moment=optimizer.state.first_moment,
                    second_moment=optimizer.state.second_moment,
                    step=optimizer.state.step,
                    epoch=epoch,
                    rng_state=rng.bit_generator.state,
                    best_val_loss=best_val_loss,
                    best_epoch=best_epoch,
                    wait=wait,
                    history=history,
                ),
            )

        if _should_stop(improved, wait, train_config.patience):
            stop_reason = StopReason.EARLY_STOPPING
            logger.info(f"Early stopping na época {epoch}: melhor época {best_epoch}")
        elif epoch == train_config.max_epochs:
            stop_reason = StopReason.MAX_EPOCHS
        elif stop_after is not None and epoch >= stop_after:
            logger.info(f"Treino interrompido após a época {epoch}")
            break
        epoch += 1

    if stop_reason is None and history and history[-1].epoch >= train_config.max_epochs:
        stop_reason = StopReason.MAX_EPOCHS

    report = FitReport(
        epochs=history,
        best_epoch=best_epoch,
        best_val_loss=best_val_loss,
        stop_reason=stop_reason,
        max_epochs=train_config.max_epochs,
    )
    return FitResult(params=best_params, report=report)


def _should_stop(improved: bool, wait: int, patience: int) -> bool:
    return not improved and wait >= patience


def _train_epoch(
    train: Sequence[LabeledSentence],
    features: EmbeddingFeatures,
    params: ModelParams,
    model_config: ModelConfig,
    train_config: TrainConfig,
    optimizer: NadamOptimizer,
    rng: np.random.Generator,
) -> float:
    """Uma passada embaralhada sobre o treino; retorna a perda média dos lotes"""
    order = rng.permutation(len(train))
    losses = []
    for start in range(0, len(order), train_config.batch_size):
        chunk = [train[i] for i in order[start : start + train_config.batch_size]]
        batch = make_batch([s.tokens for s in chunk], features, [s.tags for s in chunk])
        params.zero_grad()
        try:
            loss = batch_loss(batch, params, model_config, training=True, rng=rng)
            loss.backward()
        except NonFiniteError as e:
            logger.error(f"❌ Divergência no passo {optimizer.state.step + 1}: {e}")
            raise TrainingDivergedError(str(e)) from e
        optimizer.step()
        losses.append(loss.item())
    return math.fsum(losses) / len(losses)
