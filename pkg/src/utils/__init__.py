"""
Módulo de utilitários do projeto
"""

from .score_formatter import (
    format_entity_score,
    format_score,
    format_table,
    format_token_score,
)

__all__ = [
    "format_score",
    "format_token_score",
    "format_entity_score",
    "format_table",
]
