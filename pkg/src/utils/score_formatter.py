"""
Utilitários para formatação de pontuações (precision, recall, F1)
"""

from typing import Sequence, Union


def format_score(score: Union[float, int], decimals: int = 3) -> str:
    """
    Formata uma pontuação em [0, 1] com número fixo de casas decimais.

    Examples:
        >>> format_score(0.91234)
        '0.912'
        >>> format_score(0.895, decimals=2)
        '0.90'
        >>> format_score(1)
        '1.000'
    """
    if not isinstance(score, (int, float)):
        raise ValueError(f"Pontuação deve ser um número, recebido: {type(score)}")

    if score < 0 or score > 1:
        raise ValueError(f"Pontuação fora do intervalo [0, 1]: {score}")

    return f"{float(score):.{decimals}f}"


def format_token_score(score: Union[float, int]) -> str:
    """
    Formata pontuações de nível token (3 casas decimais).
    """
    return format_score(score, decimals=3)


def format_entity_score(score: Union[float, int]) -> str:
    """
    Formata pontuações de nível entidade (2 casas decimais).
    """
    return format_score(score, decimals=2)


def format_table(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    """
    Monta uma tabela de largura fixa: primeira coluna alinhada à esquerda,
    demais à direita.
    """
    columns = [header] + [list(row) for row in rows]
    widths = [max(len(line[i]) for line in columns) for i in range(len(header))]

    lines = []
    for line in columns:
        cells = [line[0].ljust(widths[0])]
        cells.extend(cell.rjust(width) for cell, width in zip(line[1:], widths[1:]))
        lines.append("  ".join(cells).rstrip())
    return "\n".join(lines) + "\n"
