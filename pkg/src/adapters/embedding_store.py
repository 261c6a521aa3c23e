"""
Adaptador de arquivos de embeddings

Binário (sem perdas):
    magic `CMLAEMB` + versão (uint16 LE) + tamanho do cabeçalho (uint32 LE)
    cabeçalho JSON UTF-8: config, palavras, contagens, perdas por época
    vetores de palavra (|V|×dim, float64 LE), buckets (M, int64 LE),
    vetores de n-grama (M×dim, float64 LE)

Texto (só vetores de palavra): primeira linha `|V| dim`, depois
`palavra v1 ... vdim` com 17 dígitos significativos.
"""

import hashlib
import io
import json
import struct
from pathlib import Path
from typing import List, Union

import numpy as np
from pydantic import ValidationError

from src.core.models.configs import EmbeddingConfig
from src.core.services.embedding_trainer import EmbeddingError, EmbeddingTable
from src.utils.logger import get_logger

logger = get_logger(__name__)

PathLike = Union[str, Path]

MAGIC = b"CMLAEMB"
FORMAT_VERSION = 1
_PREAMBLE = struct.Struct("<HI")


class EmbeddingFormatError(EmbeddingError):
    """Arquivo de embeddings corrompido, truncado ou de versão diferente"""

    def __init__(self, path: PathLike, message: str):
        self.path = str(path)
        self.message = message
        super().__init__(f"{self.path}: {message}")


def to_bytes(table: EmbeddingTable) -> bytes:
    header = json.dumps(
        {
            "config": table.config.model_dump(),
            "words": table.words,
            "counts": [int(c) for c in table.counts],
            "epoch_losses": [float(x) for x in table.epoch_losses],
            "ngram_count": int(len(table.ngram_buckets)),
        },
        ensure_ascii=False,
        sort_keys=True,
    ).encode("utf-8")

    buffer = io.BytesIO()
    buffer.write(MAGIC)
    buffer.write(_PREAMBLE.pack(FORMAT_VERSION, len(header)))
    buffer.write(header)
    buffer.write(np.ascontiguousarray(table.word_vectors, dtype="<f8").tobytes())
    buffer.write(np.ascontiguousarray(table.ngram_buckets, dtype="<i8").tobytes())
    buffer.write(np.ascontiguousarray(table.ngram_vectors, dtype="<f8").tobytes())
    return buffer.getvalue()


def from_bytes(payload: bytes, source: PathLike = "<memória>") -> EmbeddingTable:
    if not payload.startswith(MAGIC):
        raise EmbeddingFormatError(source, "Assinatura inválida: não é um arquivo de embeddings")
    offset = len(MAGIC)
    if len(payload) < offset + _PREAMBLE.size:
        raise EmbeddingFormatError(source, "Arquivo truncado no cabeçalho")
    version, header_size = _PREAMBLE.unpack_from(payload, offset)
    if version != FORMAT_VERSION:
        raise EmbeddingFormatError(
            source, f"Versão {version} não suportada (esperado {FORMAT_VERSION})"
        )
    offset += _PREAMBLE.size

    try:
        header = json.loads(payload[offset : offset + header_size].decode("utf-8"))
        config = EmbeddingConfig(**header["config"])
        words: List[str] = header["words"]
        counts: List[int] = header["counts"]
        losses: List[float] = header["epoch_losses"]
        ngram_count = int(header["ngram_count"])
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError, ValidationError) as e:
        raise EmbeddingFormatError(source, f"Cabeçalho corrompido: {e}") from e
    offset += header_size

    sizes = [len(words) * config.dim * 8, ngram_count * 8, ngram_count * config.dim * 8]
    if len(payload) != offset + sum(sizes):
        raise EmbeddingFormatError(
            source,
            f"Tamanho inesperado: {len(payload)} bytes, esperado {offset + sum(sizes)}",
        )

    word_vectors = np.frombuffer(payload, dtype="<f8", count=len(words) * config.dim, offset=offset)
    offset += sizes[0]
    buckets = np.frombuffer(payload, dtype="<i8", count=ngram_count, offset=offset)
    offset += sizes[1]
    ngram_vectors = np.frombuffer(payload, dtype="<f8", count=ngram_count * config.dim, offset=offset)

    return EmbeddingTable(
        config=config,
        words=list(words),
        counts=list(counts),
        word_vectors=word_vectors.astype(np.float64).reshape(len(words), config.dim),
        ngram_buckets=buckets.astype(np.int64),
        ngram_vectors=ngram_vectors.astype(np.float64).reshape(ngram_count, config.dim),
        epoch_losses=list(losses),
    )


def save_table(table: EmbeddingTable, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(to_bytes(table))
    logger.info(f"Embeddings salvos em {path} (|V|={len(table)}, dim={table.dim})")
    return path


def load_table(path: PathLike) -> EmbeddingTable:
    """
    Carrega uma tabela salva por save_table

    Raises:
        EmbeddingFormatError: assinatura, versão ou tamanho inválidos
    """
    path = Path(path)
    table = from_bytes(path.read_bytes(), source=path)
    logger.debug(f"Embeddings carregados de {path}: |V|={len(table)}, dim={table.dim}")
    return table


def fingerprint(table: EmbeddingTable) -> str:
    """sha256 da serialização binária (primeiros 16 hex)"""
    return hashlib.sha256(to_bytes(table)).hexdigest()[:16]


def save_text(table: EmbeddingTable, path: PathLike) -> Path:
    """Exporta os vetores de palavra no formato texto (uma linha por palavra)"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write(f"{len(table)} {table.dim}\n")
        for word, row in zip(table.words, table.word_vectors):
            values = " ".join(format(float(x), ".17g") for x in row)
            handle.write(f"{word} {values}\n")
    return path


def load_text(path: PathLike, config: EmbeddingConfig = None) -> EmbeddingTable:
    """
    Lê o formato texto; a tabela resultante não tem vetores de n-grama

    Raises:
        EmbeddingFormatError: cabeçalho ou linha com número errado de colunas
    """
    path = Path(path)
    with open(path, "r", encoding="utf-8") as handle:
        lines = handle.read().splitlines()
    if not lines:
        raise EmbeddingFormatError(path, "Arquivo vazio")
    try:
        size, dim = (int(x) for x in lines[0].split())
    except ValueError as e:
        raise EmbeddingFormatError(path, f"Cabeçalho inválido: {lines[0]!r}") from e
    if len(lines) - 1 != size:
        raise EmbeddingFormatError(path, f"Esperadas {size} linhas de vetor, lidas {len(lines) - 1}")

    words, rows = [], []
    for number, line in enumerate(lines[1:], start=2):
        parts = line.split(" ")
        if len(parts) != dim + 1:
            raise EmbeddingFormatError(path, f"Linha {number}: {len(parts) - 1} valores, esperado {dim}")
        try:
            rows.append([float(x) for x in parts[1:]])
        except ValueError as e:
            raise EmbeddingFormatError(path, f"Linha {number}: valor não numérico") from e
        words.append(parts[0])

    config = (config or EmbeddingConfig()).model_copy(update={"dim": dim})
    return EmbeddingTable(
        config=config,
        words=words,
        counts=[0] * size,
        word_vectors=np.array(rows, dtype=np.float64).reshape(size, dim),
        ngram_buckets=np.zeros(0, dtype=np.int64),
        ngram_vectors=np.zeros((0, dim)),
    )
