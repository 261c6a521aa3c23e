"""
Gerador de corpus sintético de reviews de hotel em indonésio

Substitui o corpus rotulado proprietário: cada sentença combina cláusulas de
opinião (aspecto + opinião, com negação "tidak/kurang + adjetivo") e, às
vezes, uma cláusula distratora sem opinião. `coupling` controla a fração de
substantivos de aspecto que também aparecem como O nas cláusulas distratoras,
de modo que o rótulo só é inferível pela opinião próxima.
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np

from src.adapters.corpus_io import write_corpus, write_lexicon, write_lines, write_token_lines
from src.core.models.labels import Label, LabeledSentence, NormalizationLexicon
from src.utils.config import settings
from src.utils.logger import get_logger

logger = get_logger(__name__)

PathLike = Union[str, Path]

# Ordem intercalada: os primeiros N misturam aspectos de 1 e 2 tokens
ASPECT_POOL: Tuple[str, ...] = (
    "kamar",
    "kolam renang",
    "kasur",
    "tempat tidur",
    "handuk",
    "air panas",
    "sarapan",
    "ruang makan",
    "pelayan",
    "area parkir",
    "resepsionis",
    "menu makanan",
    "lobi",
    "jaringan internet",
    "toilet",
    "meja kerja",
    "wifi",
    "lift",
    "bantal",
    "selimut",
    "restoran",
    "pemandangan",
)

OPINION_POOL: Tuple[str, ...] = (
    "bersih",
    "nyaman",
    "luas",
    "ramah",
    "bagus",
    "enak",
    "cepat",
    "kotor",
    "bau",
    "sempit",
    "rusak",
    "lambat",
    "berisik",
    "wangi",
    "mahal",
    "murah",
)

# Adjetivos usados apenas depois de um negador
NEGATABLE_POOL: Tuple[str, ...] = (
    "memuaskan",
    "terawat",
    "sopan",
    "lengkap",
    "stabil",
    "segar",
    "layak",
    "higienis",
)
NEGATORS: Tuple[str, ...] = ("tidak", "kurang")

# Substantivos sempre O nas cláusulas distratoras
NEUTRAL_NOUNS: Tuple[str, ...] = ("teman", "keluarga", "bandara", "taksi", "kota", "pantai", "koper")

OPINION_TEMPLATES: Tuple[Tuple[str, ...], ...] = (
    ("{A}", "{P}"),
    ("{A}", "sangat", "{P}"),
    ("{A}", "di", "hotel", "ini", "{P}"),
    ("saya", "suka", "{A}", "yang", "{P}"),
    ("menurut", "saya", "{A}", "{P}"),
    ("{P}", "sekali", "{A}", "di", "sini"),
)
DISTRACTOR_TEMPLATES: Tuple[Tuple[str, ...], ...] = (
    ("kami", "datang", "bersama", "{N}"),
    ("saya", "bertanya", "soal", "{N}"),
    ("tadi", "kami", "melewati", "{N}"),
)
CONNECTORS: Tuple[str, ...] = ("dan", "tapi", ",")

# Corpus geral: frases genéricas que compartilham parte do vocabulário
GENERAL_SUBJECTS = ("saya", "kami", "mereka", "dia", "anak", "ibu", "bapak")
GENERAL_VERBS = ("membeli", "melihat", "membawa", "mencari", "memakai", "membersihkan", "menjual")
GENERAL_OBJECTS = ("buku", "mobil", "rumah", "baju", "makanan", "sepatu", "meja", "air", "kamar")
GENERAL_PLACES = ("pasar", "kantor", "sekolah", "kota", "pantai", "desa", "bandara")

# Léxico informal -> formal de exemplo
SAMPLE_LEXICON: Dict[str, str] = {
    "gak": "tidak",
    "ga": "tidak",
    "tdk": "tidak",
    "krg": "kurang",
    "sy": "saya",
    "yg": "yang",
    "bgs": "bagus",
    "kmr": "kamar",
    "nyamann": "nyaman",
    "bersihh": "bersih",
    "kolamrenang": "kolam renang",
}

NEGATION_PROBABILITY = 0.3
DISTRACTOR_PROBABILITY = 0.5
INFORMAL_PROBABILITY = 0.3
DOMAIN_SHARE_IN_GENERAL = 0.3


class SynthError(ValueError):
    """Parâmetros do gerador sintético inválidos"""

    pass


@dataclass
class SyntheticVocabulary:
    """Vocabulário efetivamente usado por um corpus"""

    aspects: List[Tuple[str, ...]]
    ambiguous: List[str]
    opinions: List[str]
    negatables: List[str]

    @classmethod
    def build(cls, aspect_vocab: int, opinion_vocab: int, coupling: float, seed: int) -> "SyntheticVocabulary":
        if not 2 <= aspect_vocab <= len(ASPECT_POOL):
            raise SynthError(f"aspect_vocab deve estar em [2, {len(ASPECT_POOL)}], recebido {aspect_vocab}")
        if not 2 <= opinion_vocab <= len(OPINION_POOL):
            raise SynthError(f"opinion_vocab deve estar em [2, {len(OPINION_POOL)}], recebido {opinion_vocab}")
        if not 0 <= coupling <= 1:
            raise SynthError(f"coupling deve estar em [0, 1], recebido {coupling}")

        aspects = [tuple(phrase.split()) for phrase in ASPECT_POOL[:aspect_vocab]]
        singles = [phrase[0] for phrase in aspects if len(phrase) == 1]
        order = np.random.default_rng(seed).permutation(len(singles))
        ambiguous = sorted(singles[i] for i in order[: int(round(coupling * len(singles)))])
        negatable_count = min(len(NEGATABLE_POOL), max(2, opinion_vocab // 2))
        return cls(
            aspects=aspects,
            ambiguous=ambiguous,
            opinions=list(OPINION_POOL[:opinion_vocab]),
            negatables=list(NEGATABLE_POOL[:negatable_count]),
        )


def _pick(rng: np.random.Generator, items: Sequence):
    return items[int(rng.integers(len(items)))]


class SyntheticCorpusGenerator:
    """Gera sentenças rotuladas e texto sem rótulo a partir de um vocabulário"""

    def __init__(self, vocabulary: SyntheticVocabulary, coupling: float):
        self.vocabulary = vocabulary
        self.coupling = coupling

    def _opinion_clause(self, rng: np.random.Generator) -> List[Tuple[str, Label]]:
        aspect = _pick(rng, self.vocabulary.aspects)
        if rng.random() < NEGATION_PROBABILITY:
            opinion = [
                (_pick(rng, NEGATORS), Label.B_SENTIMENT),
                (_pick(rng, self.vocabulary.negatables), Label.I_SENTIMENT),
            ]
        else:
            opinion = [(_pick(rng, self.vocabulary.opinions), Label.B_SENTIMENT)]
        aspect_tags = [(aspect[0], Label.B_ASPECT)] + [(word, Label.I_ASPECT) for word in aspect[1:]]

        clause: List[Tuple[str, Label]] = []
        for slot in _pick(rng, OPINION_TEMPLATES):
            if slot == "{A}":
                clause.extend(aspect_tags)
            elif slot == "{P}":
                clause.extend(opinion)
            else:
                clause.append((slot, Label.O))
        return clause

    def _distractor_clause(self, rng: np.random.Generator) -> List[Tuple[str, Label]]:
        ambiguous = self.vocabulary.ambiguous
        if ambiguous and rng.random() < self.coupling:
            noun = _pick(rng, ambiguous)
        else:
            noun = _pick(rng, NEUTRAL_NOUNS)
        return [(noun if slot == "{N}" else slot, Label.O) for slot in _pick(rng, DISTRACTOR_TEMPLATES)]

    def sentence(self, rng: np.random.Generator) -> LabeledSentence:
        clauses = [self._opinion_clause(rng) for _ in range(int(rng.integers(1, 3)))]
        if rng.random() < DISTRACTOR_PROBABILITY:
            position = int(rng.integers(len(clauses) + 1))
            clauses.insert(position, self._distractor_clause(rng))

        pairs: List[Tuple[str, Label]] = []
        for index, clause in enumerate(clauses):
            if index:
                pairs.append((_pick(rng, CONNECTORS), Label.O))
            pairs.extend(clause)
        pairs.append((".", Label.O))
        return LabeledSentence(tokens=[t for t, _ in pairs], tags=[tag for _, tag in pairs])

    def sentences(self, count: int, rng: np.random.Generator) -> List[LabeledSentence]:
        return [self.sentence(rng) for _ in range(count)]

    def general_sentence(self, rng: np.random.Generator) -> List[str]:
        if rng.random() < DOMAIN_SHARE_IN_GENERAL:
            return self.sentence(rng).tokens
        return [
            _pick(rng, GENERAL_SUBJECTS),
            _pick(rng, GENERAL_VERBS),
            _pick(rng, GENERAL_OBJECTS),
            "di",
            _pick(rng, GENERAL_PLACES),
            ".",
        ]


def split_sizes(size: int) -> Tuple[int, int, int]:
    """Tamanhos 60/20/20 com ao menos uma sentença por split"""
    if size < 3:
        raise SynthError(f"size deve ser >= 3 (uma sentença por split), recebido {size}")
    train = max(1, int(size * 0.6))
    validation = max(1, int(size * 0.2))
    test = size - train - validation
    if test < 1:
        train -= 1 - test
        test = 1
    return train, validation, test


def _informal(tokens: Sequence[str], rng: np.random.Generator) -> str:
    reverse: Dict[str, List[str]] = {}
    for informal, formal in SAMPLE_LEXICON.items():
        if " " not in formal:
            reverse.setdefault(formal, []).append(informal)
    words = []
    for token in tokens:
        options = reverse.get(token)
        if options and rng.random() < INFORMAL_PROBABILITY:
            token = _pick(rng, sorted(options))
        words.append(token)
    return " ".join(words)


@dataclass
class SynthResult:
    """Splits gerados e arquivos escritos"""

    splits: Dict[str, List[LabeledSentence]]
    paths: Dict[str, Path] = field(default_factory=dict)


def synth_corpus(
    out_dir: PathLike,
    size: int = None,
    aspect_vocab: int = None,
    opinion_vocab: int = None,
    coupling: float = None,
    seed: int = None,
    embedding_sentences: int = None,
) -> SynthResult:
    """
    Gera e grava train/validation/test, corpora sem rótulo e um léxico de exemplo

    Arquivos: train.tsv, validation.tsv, test.tsv, domain.txt, general.txt,
    raw_test.txt (reviews informais do teste) e lexicon.tsv.
    """
    size = settings.synth_size if size is None else size
    aspect_vocab = settings.synth_aspect_vocab if aspect_vocab is None else aspect_vocab
    opinion_vocab = settings.synth_opinion_vocab if opinion_vocab is None else opinion_vocab
    coupling = settings.synth_coupling if coupling is None else coupling
    seed = settings.synth_seed if seed is None else seed
    if embedding_sentences is None:
        embedding_sentences = settings.synth_embedding_sentences

    sizes = split_sizes(size)
    vocabulary = SyntheticVocabulary.build(aspect_vocab, opinion_vocab, coupling, seed)
    generator = SyntheticCorpusGenerator(vocabulary, coupling)
    seeds = np.random.SeedSequence(seed).spawn(6)
    rngs = [np.random.default_rng(s) for s in seeds]

    splits = {
        name: generator.sentences(count, rng)
        for name, count, rng in zip(("train", "validation", "test"), sizes, rngs)
    }
    domain = [generator.sentence(rngs[3]).tokens for _ in range(embedding_sentences)]
    general = [generator.general_sentence(rngs[4]) for _ in range(embedding_sentences)]
    raw = [_informal(sentence.tokens, rngs[5]) for sentence in splits["test"]]

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {name: out / f"{name}.tsv" for name in splits}
    for name, sentences in splits.items():
        write_corpus(sentences, paths[name])
    paths["domain"] = out / "domain.txt"
    paths["general"] = out / "general.txt"
    paths["raw_test"] = out / "raw_test.txt"
    paths["lexicon"] = out / "lexicon.tsv"
    write_token_lines(domain, paths["domain"])
    write_token_lines(general, paths["general"])
    write_lines(raw, paths["raw_test"])
    write_lexicon(NormalizationLexicon(entries=SAMPLE_LEXICON), paths["lexicon"])

    logger.info(
        f"Corpus sintético em {out}: {sizes[0]}/{sizes[1]}/{sizes[2]} sentenças, "
        f"coupling={coupling}, aspectos ambíguos={vocabulary.ambiguous}"
    )
    return SynthResult(splits=splits, paths=paths)
