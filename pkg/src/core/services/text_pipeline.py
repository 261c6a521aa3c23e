"""
Pré-processamento de reviews e codec BIO

Pipeline: casefolding, tokenização por espaço com destaque de pontuação nas
bordas e normalização por léxico de formas informais.
"""

from typing import Dict, Iterable, List, Optional, Sequence

import pandas as pd

from src.core.models.labels import (
    LABELS,
    EntityKind,
    EntitySpan,
    LabeledSentence,
    Label,
    NormalizationLexicon,
)
from src.utils.logger import get_logger

logger = get_logger(__name__)

# Pontuação destacada como token próprio nas bordas das palavras
PUNCTUATION = frozenset(".,!?;:()\"'")


class TextPipelineError(Exception):
    """Exceção base do pré-processamento e do codec BIO"""

    pass


class SpanOverlapError(TextPipelineError, ValueError):
    """Spans sobrepostos ou fora dos limites da sentença"""

    pass


def tokenize(text: str) -> List[str]:
    """
    Divide por espaço em branco Unicode e destaca pontuação inicial e final

    Examples:
        >>> tokenize("sabun.")
        ['sabun', '.']
        >>> tokenize("(bagus)!")
        ['(', 'bagus', ')', '!']
    """
    tokens: List[str] = []
    for chunk in text.split():
        start, end = 0, len(chunk)
        leading: List[str] = []
        trailing: List[str] = []
        while start < end and chunk[start] in PUNCTUATION:
            leading.append(chunk[start])
            start += 1
        while end > start and chunk[end - 1] in PUNCTUATION:
            trailing.append(chunk[end - 1])
            end -= 1
        tokens.extend(leading)
        if start < end:
            tokens.append(chunk[start:end])
        tokens.extend(reversed(trailing))
    return tokens


def preprocess(raw: str, lexicon: Optional[NormalizationLexicon] = None) -> List[str]:
    """
    Casefolding, tokenização e normalização de uma review

    Tokens sem entrada no léxico passam inalterados; entradas com mais de uma
    palavra viram vários tokens.

    Args:
        raw: Texto bruto da review
        lexicon: Léxico informal -> formal (pode ser vazio)

    Returns:
        Lista de tokens na ordem original
    """
    lexicon = lexicon or NormalizationLexicon()
    tokens: List[str] = []
    for token in tokenize(raw.casefold()):
        if token in PUNCTUATION:
            tokens.append(token)
            continue
        tokens.extend(lexicon.normalize(token).split())
    return tokens


def decode_bio(tags: Sequence[Label]) -> List[EntitySpan]:
    """
    Extrai spans maximais de uma sequência BIO

    Um span começa em B-X, ou em I-X sem predecessor do mesmo tipo (reparo
    leniente), e termina antes do primeiro rótulo que não seja I-X.

    Returns:
        Spans ordenados por início, sem sobreposição
    """
    spans: List[EntitySpan] = []
    kind: Optional[EntityKind] = None
    start = 0

    for i, tag in enumerate(tags):
        tag = Label(tag)
        if tag.is_inside and kind == tag.kind:
            continue
        if kind is not None:
            spans.append(EntitySpan(kind=kind, start=start, end=i))
            kind = None
        if tag is not Label.O:
            kind, start = tag.kind, i

    if kind is not None:
        spans.append(EntitySpan(kind=kind, start=start, end=len(tags)))
    return spans


def encode_bio(length: int, spans: Iterable[EntitySpan]) -> List[Label]:
    """
    Converte spans em rótulos BIO (inversa de decode_bio em entrada válida)

    Raises:
        SpanOverlapError: spans sobrepostos ou fora de [0, length)
    """
    tags = [Label.O] * length
    ordered = sorted(spans, key=lambda span: (span.start, span.end))
    previous_end = 0
    for span in ordered:
        if span.end > length:
            raise SpanOverlapError(f"Span {span} ultrapassa o comprimento {length}")
        if span.start < previous_end:
            raise SpanOverlapError(f"Span {span} sobrepõe o span anterior")
        tags[span.start] = span.kind.begin
        for i in range(span.start + 1, span.end):
            tags[i] = span.kind.inside
        previous_end = span.end
    return tags


def sentence_spans(sentence: LabeledSentence) -> List[EntitySpan]:
    return decode_bio(sentence.tags)


def span_text(tokens: Sequence[str], span: EntitySpan) -> str:
    return " ".join(tokens[span.start : span.end])


def corpus_label_distribution(splits: Dict[str, Sequence[LabeledSentence]]) -> pd.DataFrame:
    """
    Tabela de distribuição de rótulos por split (linhas: rótulos + Total)
    """
    columns = {}
    for split_name, sentences in splits.items():
        counts = {label.value: 0 for label in LABELS}
        for sentence in sentences:
            for tag in sentence.tags:
                counts[tag.value] += 1
        columns[split_name] = counts

    frame = pd.DataFrame(columns, index=[label.value for label in LABELS])
    frame.loc["Total"] = frame.sum(axis=0)
    frame.index.name = "Label"
    return frame.astype(int)
