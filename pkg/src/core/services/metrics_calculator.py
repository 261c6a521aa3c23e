"""
Serviço de métricas de avaliação
Precision, recall e F1 por rótulo (nível token) e por tipo de termo
(nível entidade, casamento exato de spans), com média macro
"""

from collections import Counter
from typing import Dict, Optional, Sequence, Tuple

from src.core.models.labels import ENTITY_KINDS, LABELS, Label
from src.core.models.reports import ClassScores, MetricsReport
from src.core.services.text_pipeline import decode_bio
from src.utils.logger import get_logger
from src.utils.score_formatter import format_entity_score, format_table, format_token_score

logger = get_logger(__name__)

AVERAGE_LABEL = "Average"

TagSequences = Sequence[Sequence[Label]]


class MetricsError(Exception):
    """Exceção base das métricas"""

    pass


class AlignmentError(MetricsError, ValueError):
    """Gold e predição com número de sentenças ou de tokens diferentes"""

    def __init__(self, message: str, sentence: Optional[int] = None):
        self.sentence = sentence
        super().__init__(message)


def _check_aligned(gold: TagSequences, pred: TagSequences) -> None:
    if len(gold) != len(pred):
        raise AlignmentError(f"{len(gold)} sentenças gold mas {len(pred)} preditas")
    for index, (gold_tags, pred_tags) in enumerate(zip(gold, pred)):
        if len(gold_tags) != len(pred_tags):
            raise AlignmentError(
                f"Sentença {index}: {len(gold_tags)} rótulos gold mas {len(pred_tags)} preditos",
                sentence=index,
            )


class MetricsCalculator:
    """Calculador de métricas independente da origem das predições"""

    @staticmethod
    def class_scores(label: str, true_positives: int, predicted: int, support: int) -> ClassScores:
        """
        P/R/F1 a partir de contagens; denominador zero vale 0 e é sinalizado
        """
        precision = true_positives / predicted if predicted else 0.0
        recall = true_positives / support if support else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        return ClassScores(
            label=label,
            precision=precision,
            recall=recall,
            f1=f1,
            support=support,
            predicted=predicted,
            true_positives=true_positives,
            no_predictions=predicted == 0,
            no_gold=support == 0,
        )

    @staticmethod
    def report_from_counts(
        level: str, counts: Dict[str, Tuple[int, int, int]]
    ) -> MetricsReport:
        """
        Monta o relatório a partir de (tp, preditos, gold) por classe

        A linha Average é a média simples das colunas das classes.
        """
        classes = [
            MetricsCalculator.class_scores(label, tp, predicted, support)
            for label, (tp, predicted, support) in counts.items()
        ]
        size = len(classes)
        average = ClassScores(
            label=AVERAGE_LABEL,
            precision=min(1.0, sum(c.precision for c in classes) / size),
            recall=min(1.0, sum(c.recall for c in classes) / size),
            f1=min(1.0, sum(c.f1 for c in classes) / size),
            support=sum(c.support for c in classes),
            predicted=sum(c.predicted for c in classes),
            true_positives=sum(c.true_positives for c in classes),
        )
        return MetricsReport(level=level, classes=classes, average=average)

    @staticmethod
    def token_metrics(gold: TagSequences, pred: TagSequences) -> MetricsReport:
        """
        Métricas por rótulo contando tokens; média macro sobre os 5 rótulos (inclui O)

        Raises:
            AlignmentError: comprimentos diferentes, com o índice da sentença
        """
        _check_aligned(gold, pred)
        true_positives: Counter = Counter()
        predicted: Counter = Counter()
        support: Counter = Counter()
        for gold_tags, pred_tags in zip(gold, pred):
            for g, p in zip(gold_tags, pred_tags):
                g, p = Label(g), Label(p)
                support[g] += 1
                predicted[p] += 1
                if g == p:
                    true_positives[g] += 1

        counts = {
            label.value: (true_positives[label], predicted[label], support[label])
            for label in LABELS
        }
        return MetricsCalculator.report_from_counts("token", counts)

    @staticmethod
    def entity_metrics(gold: TagSequences, pred: TagSequences) -> MetricsReport:
        """
        Métricas por tipo de termo com casamento exato (tipo, início, fim)

        Sobreposição parcial conta como um falso positivo e um falso negativo.
        """
        _check_aligned(gold, pred)
        true_positives: Counter = Counter()
        predicted: Counter = Counter()
        support: Counter = Counter()
        for gold_tags, pred_tags in zip(gold, pred):
            gold_spans = set(decode_bio(gold_tags))
            pred_spans = set(decode_bio(pred_tags))
            for span in gold_spans:
                support[span.kind] += 1
            for span in pred_spans:
                predicted[span.kind] += 1
            for span in gold_spans & pred_spans:
                true_positives[span.kind] += 1

        counts = {
            kind.value: (true_positives[kind], predicted[kind], support[kind])
            for kind in ENTITY_KINDS
        }
        return MetricsCalculator.report_from_counts("entity", counts)

    @staticmethod
    def token_accuracy(gold: TagSequences, pred: TagSequences) -> float:
        _check_aligned(gold, pred)
        total = sum(len(tags) for tags in gold)
        if total == 0:
            return 0.0
        hits = sum(
            Label(g) == Label(p)
            for gold_tags, pred_tags in zip(gold, pred)
            for g, p in zip(gold_tags, pred_tags)
        )
        return hits / total


token_metrics = MetricsCalculator.token_metrics
entity_metrics = MetricsCalculator.entity_metrics
token_accuracy = MetricsCalculator.token_accuracy
report_from_counts = MetricsCalculator.report_from_counts


def report_format(report: MetricsReport) -> str:
    """
    Tabela de largura fixa: 3 casas no nível token, 2 no nível entidade
    """
    fmt = format_token_score if report.level == "token" else format_entity_score
    first = "Label" if report.level == "token" else "Entity"
    rows = [
        [scores.label, fmt(scores.precision), fmt(scores.recall), fmt(scores.f1), str(scores.support)]
        for scores in [*report.classes, report.average]
    ]
    return format_table([first, "Precision", "Recall", "F1", "Support"], rows)


def report_to_keyvalue(*reports: MetricsReport) -> str:
    """
    Documento `chave = valor` com uma linha por métrica

    Exemplo de chave: `token.B-ASPECT.precision`, `entity.Average.f1`.
    """
    lines = []
    for report in reports:
        for scores in [*report.classes, report.average]:
            prefix = f"{report.level}.{scores.label}"
            lines.append(f"{prefix}.precision = {scores.precision!r}")
            lines.append(f"{prefix}.recall = {scores.recall!r}")
            lines.append(f"{prefix}.f1 = {scores.f1!r}")
            lines.append(f"{prefix}.support = {scores.support}")
            if scores.label != AVERAGE_LABEL:
                lines.append(f"{prefix}.no_predictions = {str(scores.no_predictions).lower()}")
                lines.append(f"{prefix}.no_gold = {str(scores.no_gold).lower()}")
    return "\n".join(lines) + "\n"
