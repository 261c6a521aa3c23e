"""
Adaptador de arquivos de corpus: formato em colunas, léxico e textos brutos

Corpus: UTF-8, um token por linha como `token<TAB>tag`, linha em branco entre
sentenças, linhas iniciadas por `#` (sem TAB) são comentários.
Léxico: UTF-8, `informal<TAB>formal` por linha.
"""

from pathlib import Path
from typing import Iterable, Iterator, List, Tuple, Union

from pydantic import ValidationError

from src.core.models.labels import Label, LabeledSentence, NormalizationLexicon
from src.utils.logger import get_logger

logger = get_logger(__name__)

PathLike = Union[str, Path]


class CorpusFormatError(Exception):
    """Erro de formato com arquivo, linha e coluna (1-based)"""

    def __init__(self, path: PathLike, line: int, column: int, message: str):
        self.path = str(path)
        self.line = line
        self.column = column
        self.message = message
        super().__init__(f"{self.path}:{line}:{column}: {message}")


def iter_lines(path: PathLike) -> Iterator[Tuple[int, str]]:
    """
    (número da linha, texto sem quebra) de um arquivo UTF-8

    Raises:
        CorpusFormatError: bytes que não são UTF-8 válido, com a linha e o byte
    """
    with open(path, "rb") as handle:
        for line_number, raw_line in enumerate(handle, start=1):
            try:
                text = raw_line.decode("utf-8")
            except UnicodeDecodeError as e:
                raise CorpusFormatError(
                    path, line_number, e.start + 1, f"UTF-8 inválido: {raw_line[e.start:e.end]!r}"
                ) from None
            yield line_number, text.rstrip("\r\n")


def read_corpus(path: PathLike) -> List[LabeledSentence]:
    """
    Lê um corpus rotulado no formato em colunas

    Raises:
        CorpusFormatError: rótulo desconhecido ou linha sem exatamente 2 colunas
    """
    sentences: List[LabeledSentence] = []
    tokens: List[str] = []
    tags: List[Label] = []
    start_line = 1

    def flush() -> None:
        if not tokens:
            return
        try:
            sentences.append(LabeledSentence(tokens=list(tokens), tags=list(tags)))
        except ValidationError as e:
            raise CorpusFormatError(path, start_line, 1, f"Sentença inválida: {e}") from e
        tokens.clear()
        tags.clear()

    for line_number, line in iter_lines(path):
        if not line.strip():
            flush()
            continue
        if line.startswith("#") and "\t" not in line:
            continue

        columns = line.split("\t")
        if len(columns) != 2:
            raise CorpusFormatError(
                path,
                line_number,
                1,
                f"Esperado 'token<TAB>tag', encontradas {len(columns)} colunas",
            )
        token, tag = columns
        if not token or any(ch.isspace() for ch in token):
            raise CorpusFormatError(path, line_number, 1, f"Token inválido: {token!r}")
        try:
            label = Label(tag)
        except ValueError:
            raise CorpusFormatError(
                path, line_number, len(token) + 2, f"Rótulo desconhecido: {tag!r}"
            ) from None

        if not tokens:
            start_line = line_number
        tokens.append(token)
        tags.append(label)
    flush()

    logger.debug(f"Corpus lido de {path}: {len(sentences)} sentenças")
    return sentences


def format_corpus(sentences: Iterable[LabeledSentence]) -> str:
    """Formatação canônica: uma linha por token, uma linha em branco entre sentenças"""
    blocks = []
    for sentence in sentences:
        lines = [f"{token}\t{tag.value}" for token, tag in zip(sentence.tokens, sentence.tags)]
        blocks.append("\n".join(lines) + "\n")
    return "\n".join(blocks)


def write_corpus(sentences: Iterable[LabeledSentence], path: PathLike) -> None:
    sentences = list(sentences)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as handle:
        handle.write(format_corpus(sentences))
    logger.debug(f"Corpus gravado em {path}: {len(sentences)} sentenças")


def read_lexicon(path: PathLike) -> NormalizationLexicon:
    """Lê o léxico de normalização (`informal<TAB>formal`)"""
    entries = {}
    for line_number, line in iter_lines(path):
        if not line.strip() or line.startswith("#"):
            continue
        columns = line.split("\t")
        if len(columns) != 2 or not columns[0] or not columns[1].strip():
            raise CorpusFormatError(
                path, line_number, 1, "Esperado 'informal<TAB>formal'"
            )
        informal, formal = columns[0].casefold(), columns[1].casefold()
        if informal in entries and entries[informal] != formal:
            raise CorpusFormatError(
                path, line_number, 1, f"Entrada duplicada para {informal!r}"
            )
        entries[informal] = formal
    return NormalizationLexicon(entries=entries)


def write_lexicon(lexicon: NormalizationLexicon, path: PathLike) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as handle:
        for informal in sorted(lexicon.entries):
            handle.write(f"{informal}\t{lexicon.entries[informal]}\n")


def read_lines(path: PathLike) -> List[str]:
    """Lê um arquivo texto (uma review ou sentença por linha), ignorando vazias"""
    return [line for _, line in iter_lines(path) if line.strip()]


def read_token_lines(path: PathLike) -> List[List[str]]:
    """Lê um corpus tokenizado: tokens separados por espaço, uma sentença por linha"""
    return [line.split() for line in read_lines(path)]


def write_token_lines(sequences: Iterable[List[str]], path: PathLike) -> None:
    write_lines((" ".join(tokens) for tokens in sequences), path)


def write_lines(lines: Iterable[str], path: PathLike) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as handle:
        for line in lines:
            handle.write(line + "\n")
