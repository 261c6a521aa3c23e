"""
Modelos para rótulos BIO, sentenças rotuladas e entidades
"""

from enum import Enum
from typing import Dict, List

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class Label(str, Enum):
    """Os cinco rótulos BIO de um token"""

    B_ASPECT = "B-ASPECT"
    I_ASPECT = "I-ASPECT"
    B_SENTIMENT = "B-SENTIMENT"
    I_SENTIMENT = "I-SENTIMENT"
    O = "O"

    @property
    def code(self) -> int:
        """Código inteiro estável usado pelo classificador (0..4)"""
        return _LABEL_CODES[self]

    @classmethod
    def from_code(cls, code: int) -> "Label":
        return LABELS[code]

    @property
    def kind(self) -> "EntityKind | None":
        """Tipo de entidade do rótulo (None para O)"""
        if self is Label.O:
            return None
        return EntityKind(self.value.split("-", 1)[1])

    @property
    def is_begin(self) -> bool:
        return self.value.startswith("B-")

    @property
    def is_inside(self) -> bool:
        return self.value.startswith("I-")


class EntityKind(str, Enum):
    """Tipos de termo extraídos"""

    ASPECT = "ASPECT"
    SENTIMENT = "SENTIMENT"

    @property
    def begin(self) -> Label:
        return Label(f"B-{self.value}")

    @property
    def inside(self) -> Label:
        return Label(f"I-{self.value}")


LABELS: List[Label] = [
    Label.B_ASPECT,
    Label.I_ASPECT,
    Label.B_SENTIMENT,
    Label.I_SENTIMENT,
    Label.O,
]
_LABEL_CODES: Dict[Label, int] = {label: code for code, label in enumerate(LABELS)}
NUM_LABELS = len(LABELS)

ENTITY_KINDS: List[EntityKind] = [EntityKind.ASPECT, EntityKind.SENTIMENT]


class EntitySpan(BaseModel):
    """Termo extraído: tipo e intervalo [start, end) de tokens"""

    model_config = ConfigDict(frozen=True)

    kind: EntityKind = Field(..., description="ASPECT ou SENTIMENT")
    start: int = Field(..., ge=0, description="Índice do primeiro token (inclusivo)")
    end: int = Field(..., description="Índice final (exclusivo)")

    @model_validator(mode="after")
    def _check_bounds(self) -> "EntitySpan":
        if self.end <= self.start:
            raise ValueError(f"Span vazio ou invertido: ({self.start}, {self.end})")
        return self

    def __str__(self) -> str:
        return f"{self.kind.value}({self.start},{self.end})"


class LabeledSentence(BaseModel):
    """Sequência de tokens com um rótulo BIO por token"""

    tokens: List[str] = Field(..., description="Tokens já pré-processados")
    tags: List[Label] = Field(..., description="Um rótulo por token")

    @field_validator("tokens")
    @classmethod
    def _check_tokens(cls, tokens: List[str]) -> List[str]:
        for token in tokens:
            if not token:
                raise ValueError("Tokens não podem ser vazios")
            if any(ch.isspace() for ch in token):
                raise ValueError(f"Token com espaço em branco: {token!r}")
        return tokens

    @model_validator(mode="after")
    def _check_alignment(self) -> "LabeledSentence":
        if not self.tokens:
            raise ValueError("Sentença precisa de ao menos um token")
        if len(self.tokens) != len(self.tags):
            raise ValueError(
                f"{len(self.tokens)} tokens mas {len(self.tags)} rótulos"
            )
        return self

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def tag_codes(self) -> List[int]:
        return [tag.code for tag in self.tags]


class NormalizationLexicon(BaseModel):
    """Mapa de formas informais para formas formais (ambas em minúsculas)"""

    entries: Dict[str, str] = Field(default_factory=dict)

    @field_validator("entries")
    @classmethod
    def _check_entries(cls, entries: Dict[str, str]) -> Dict[str, str]:
        for informal, formal in entries.items():
            if not informal or not formal.strip():
                raise ValueError(f"Entrada de léxico inválida: {informal!r} -> {formal!r}")
            if informal != informal.casefold() or formal != formal.casefold():
                raise ValueError(f"Entradas do léxico devem estar em minúsculas: {informal!r}")
        return entries

    def normalize(self, token: str) -> str:
        """Forma formal do token (o próprio token quando não há entrada)"""
        return self.entries.get(token, token)

    def __len__(self) -> int:
        return len(self.entries)
