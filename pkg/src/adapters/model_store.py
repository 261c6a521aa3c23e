"""
Adaptador de arquivos de modelo e de checkpoint de treino

Os dois formatos compartilham o layout:
    magic (7 bytes) + versão (uint16 LE) + tamanho do cabeçalho (uint32 LE)
    cabeçalho JSON UTF-8 com a lista de arrays (nome, shape)
    arrays float64 little-endian na ordem do cabeçalho
O checkpoint acrescenta o bloco do otimizador (m, v, t), o estado do gerador
aleatório, o histórico de épocas e os melhores parâmetros até o momento.
"""

import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
from pydantic import ValidationError

from src.adapters.embedding_store import fingerprint, load_table
from src.core.models.configs import EmbeddingMode, ModelConfig, TrainConfig
from src.core.models.reports import EpochRecord
from src.core.services.cmla_model import ModelError, ModelParams
from src.core.services.embedding_trainer import EmbeddingFeatures
from src.utils.logger import get_logger

logger = get_logger(__name__)

PathLike = Union[str, Path]

MODEL_MAGIC = b"CMLAMDL"
CHECKPOINT_MAGIC = b"CMLACKP"
FORMAT_VERSION = 1
_PREAMBLE = struct.Struct("<HI")


class ModelFormatError(ModelError):
    """Arquivo de modelo/checkpoint corrompido, truncado ou de outra versão"""

    def __init__(self, path: PathLike, message: str):
        self.path = str(path)
        self.message = message
        super().__init__(f"{self.path}: {message}")


class CheckpointMismatchError(ModelError):
    """Arquivo válido, mas incompatível com a configuração ou embeddings atuais"""

    pass


# ===============================================
# Layout binário compartilhado
# ===============================================


def _pack(magic: bytes, header: Dict[str, Any], arrays: List[Tuple[str, np.ndarray]]) -> bytes:
    header = dict(header)
    header["arrays"] = [[name, list(array.shape)] for name, array in arrays]
    encoded = json.dumps(header, ensure_ascii=False, sort_keys=True).encode("utf-8")

    buffer = io.BytesIO()
    buffer.write(magic)
    buffer.write(_PREAMBLE.pack(FORMAT_VERSION, len(encoded)))
    buffer.write(encoded)
    for _, array in arrays:
        buffer.write(np.ascontiguousarray(array, dtype="<f8").tobytes())
    return buffer.getvalue()


def _unpack(path: Path, magic: bytes) -> Tuple[Dict[str, Any], Dict[str, np.ndarray]]:
    payload = path.read_bytes()
    if not payload.startswith(magic):
        raise ModelFormatError(path, f"Assinatura inválida (esperado {magic.decode()})")
    offset = len(magic)
    if len(payload) < offset + _PREAMBLE.size:
        raise ModelFormatError(path, "Arquivo truncado no cabeçalho")
    version, header_size = _PREAMBLE.unpack_from(payload, offset)
    if version != FORMAT_VERSION:
        raise ModelFormatError(path, f"Versão {version} não suportada (esperado {FORMAT_VERSION})")
    offset += _PREAMBLE.size

    try:
        header = json.loads(payload[offset : offset + header_size].decode("utf-8"))
        layout = [(str(name), tuple(int(d) for d in shape)) for name, shape in header["arrays"]]
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise ModelFormatError(path, f"Cabeçalho corrompido: {e}") from e
    offset += header_size

    expected = offset + sum(int(np.prod(shape)) * 8 for _, shape in layout)
    if len(payload) != expected:
        raise ModelFormatError(path, f"Tamanho inesperado: {len(payload)} bytes, esperado {expected}")

    arrays: Dict[str, np.ndarray] = {}
    for name, shape in layout:
        count = int(np.prod(shape))
        values = np.frombuffer(payload, dtype="<f8", count=count, offset=offset)
        arrays[name] = values.astype(np.float64).reshape(shape)
        offset += count * 8
    return header, arrays


def _write(path: PathLike, payload: bytes) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(payload)
    return path


def _parse_config(path: Path, header: Dict[str, Any], key: str, model):
    try:
        return model(**header[key])
    except (KeyError, TypeError, ValidationError) as e:
        raise ModelFormatError(path, f"Bloco '{key}' inválido: {e}") from e


# ===============================================
# Metadados de embeddings
# ===============================================


def embedding_metadata(features: EmbeddingFeatures) -> Dict[str, Any]:
    """Modo, dimensão e (caminho, fingerprint) de cada tabela usada"""
    return {
        "mode": features.mode.value,
        "dim": features.dim,
        "tables": {
            role.value: {
                "path": str(features.paths[role]) if role in features.paths else None,
                "fingerprint": fingerprint(table),
            }
            for role, table in features.tables.items()
        },
    }


def check_embeddings(metadata: Dict[str, Any], features: EmbeddingFeatures) -> None:
    """
    Raises:
        CheckpointMismatchError: modo ou fingerprints diferentes dos salvos
    """
    current = embedding_metadata(features)
    if metadata.get("mode") != current["mode"]:
        raise CheckpointMismatchError(
            f"Modelo treinado com embeddings '{metadata.get('mode')}', fornecido '{current['mode']}'"
        )
    for role, saved in metadata.get("tables", {}).items():
        actual = current["tables"].get(role, {}).get("fingerprint")
        if saved.get("fingerprint") != actual:
            raise CheckpointMismatchError(
                f"Fingerprint da tabela '{role}' diferente: salvo {saved.get('fingerprint')}, "
                f"atual {actual}"
            )


def load_features(metadata: Dict[str, Any]) -> EmbeddingFeatures:
    """Recarrega as tabelas pelos caminhos gravados e valida os fingerprints"""
    tables, paths = {}, {}
    for role, entry in metadata.get("tables", {}).items():
        if not entry.get("path"):
            raise CheckpointMismatchError(f"Modelo sem caminho gravado para a tabela '{role}'")
        paths[EmbeddingMode(role)] = Path(entry["path"])
        tables[EmbeddingMode(role)] = load_table(entry["path"])
    features = EmbeddingFeatures(EmbeddingMode(metadata["mode"]), tables, paths)
    check_embeddings(metadata, features)
    return features


# ===============================================
# Modelo
# ===============================================


@dataclass
class SavedModel:
    """Configuração, parâmetros e metadados de embeddings de um modelo salvo"""

    config: ModelConfig
    params: ModelParams
    embeddings: Dict[str, Any] = field(default_factory=dict)


def save_model(
    path: PathLike,
    config: ModelConfig,
    params: ModelParams,
    features: Optional[EmbeddingFeatures] = None,
) -> Path:
    params.check_shapes(config)
    header = {
        "kind": "model",
        "model_config": json.loads(config.model_dump_json()),
        "embeddings": embedding_metadata(features) if features is not None else {},
    }
    path = _write(path, _pack(MODEL_MAGIC, header, list(params.arrays().items())))
    logger.info(f"Modelo salvo em {path} ({config.describe()})")
    return path


def load_model(path: PathLike, features: Optional[EmbeddingFeatures] = None) -> SavedModel:
    """
    Carrega um modelo; com `features`, valida modo e fingerprints dos embeddings

    Raises:
        ModelFormatError: arquivo inválido
        CheckpointMismatchError: embeddings diferentes dos usados no treino
    """
    path = Path(path)
    header, arrays = _unpack(path, MODEL_MAGIC)
    config = _parse_config(path, header, "model_config", ModelConfig)
    params = ModelParams.from_arrays(arrays)
    try:
        params.check_shapes(config)
    except ModelError as e:
        raise ModelFormatError(path, str(e)) from e

    metadata = header.get("embeddings", {})
    if features is not None and metadata:
        check_embeddings(metadata, features)
    return SavedModel(config=config, params=params, embeddings=metadata)


# ===============================================
# Checkpoint de treino
# ===============================================


@dataclass
class TrainingCheckpoint:
    """Tudo que é preciso para retomar um fit exatamente de onde parou"""

    model_config: ModelConfig
    train_config: TrainConfig
    params: ModelParams
    best_params: ModelParams
    first_moment: Dict[str, np.ndarray]
    second_moment: Dict[str, np.ndarray]
    step: int
    epoch: int
    rng_state: Dict[str, Any]
    best_val_loss: Optional[float]
    best_epoch: int
    wait: int
    history: List[EpochRecord] = field(default_factory=list)


def save_checkpoint(path: PathLike, checkpoint: TrainingCheckpoint) -> Path:
    names = checkpoint.params.names()
    arrays: List[Tuple[str, np.ndarray]] = []
    for prefix, source in (
        ("param", checkpoint.params.arrays()),
        ("best", checkpoint.best_params.arrays()),
        ("m", checkpoint.first_moment),
        ("v", checkpoint.second_moment),
    ):
        arrays.extend((f"{prefix}:{name}", source[name]) for name in names)

    header = {
        "kind": "checkpoint",
        "model_config": json.loads(checkpoint.model_config.model_dump_json()),
        "model_fingerprint": checkpoint.model_config.fingerprint(),
        "train_config": json.loads(checkpoint.train_config.model_dump_json()),
        "step": checkpoint.step,
        "epoch": checkpoint.epoch,
        "rng_state": checkpoint.rng_state,
        "best_val_loss": checkpoint.best_val_loss,
        "best_epoch": checkpoint.best_epoch,
        "wait": checkpoint.wait,
        "history": [json.loads(record.model_dump_json()) for record in checkpoint.history],
        "param_names": names,
    }
    path = _write(path, _pack(CHECKPOINT_MAGIC, header, arrays))
    logger.debug(f"Checkpoint salvo em {path} (época {checkpoint.epoch}, passo {checkpoint.step})")
    return path


def load_checkpoint(path: PathLike, expected_config: Optional[ModelConfig] = None) -> TrainingCheckpoint:
    """
    Raises:
        ModelFormatError: arquivo inválido
        CheckpointMismatchError: checkpoint gravado com outra ModelConfig
    """
    path = Path(path)
    header, arrays = _unpack(path, CHECKPOINT_MAGIC)
    model_config = _parse_config(path, header, "model_config", ModelConfig)
    train_config = _parse_config(path, header, "train_config", TrainConfig)

    if header.get("model_fingerprint") != model_config.fingerprint():
        raise ModelFormatError(path, "Fingerprint da configuração não confere com o conteúdo")
    if expected_config is not None and expected_config.fingerprint() != model_config.fingerprint():
        raise CheckpointMismatchError(
            f"Checkpoint de {model_config.describe()} não serve para {expected_config.describe()}"
        )

    try:
        names = list(header["param_names"])
        blocks = {
            prefix: {name: arrays[f"{prefix}:{name}"] for name in names}
            for prefix in ("param", "best", "m", "v")
        }
        history = [EpochRecord(**record) for record in header["history"]]
        checkpoint = TrainingCheckpoint(
            model_config=model_config,
            train_config=train_config,
            params=ModelParams.from_arrays(blocks["param"]),
            best_params=ModelParams.from_arrays(blocks["best"]),
            first_moment=blocks["m"],
            second_moment=blocks["v"],
            step=int(header["step"]),
            epoch=int(header["epoch"]),
            rng_state=header["rng_state"],
            best_val_loss=header["best_val_loss"],
            best_epoch=int(header["best_epoch"]),
            wait=int(header["wait"]),
            history=history,
        )
    except (KeyError, TypeError, ValidationError) as e:
        raise ModelFormatError(path, f"Checkpoint incompleto: {e}") from e

    checkpoint.params.check_shapes(model_config)
    return checkpoint
