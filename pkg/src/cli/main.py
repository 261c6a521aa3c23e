"""
Interface de linha de comando: cmla <subcomando> [opções]

Subcomandos: preprocess, embed-train, train, predict, evaluate, experiment, synth.
Erros saem em uma linha no stderr: error code=<tipo> message="<texto>".
"""

import argparse
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import yaml
from pydantic import ValidationError

from src.adapters.corpus_io import (
    CorpusFormatError,
    read_corpus,
    read_lexicon,
    read_lines,
    read_token_lines,
    write_corpus,
    write_token_lines,
)
from src.adapters.embedding_store import EmbeddingFormatError, save_table, save_text
from src.adapters.model_store import (
    CheckpointMismatchError,
    ModelFormatError,
    load_features as load_model_features,
    load_model,
    save_model,
)
from src.core.models.configs import EmbeddingConfig, EmbeddingMode
from src.core.models.experiment import Scenario
from src.core.models.labels import LabeledSentence, NormalizationLexicon
from src.core.services.cmla_model import ModelError, init_params, predict_many
from src.core.services.embedding_trainer import EmbeddingError, SubwordEmbeddingTrainer
from src.core.services.experiment_runner import (
    ConfigurationError,
    ExperimentError,
    build_model_config,
    build_spec,
    embedding_paths,
    load_features,
    read_config,
    run_chain,
    run_scenario,
    train_config_from,
)
from src.core.services.metrics_calculator import (
    AlignmentError,
    entity_metrics,
    report_format,
    report_to_keyvalue,
    token_metrics,
)
from src.core.services.synthetic_corpus import SynthError, synth_corpus
from src.core.services.text_pipeline import corpus_label_distribution, preprocess
from src.core.services.trainer import TrainingDivergedError, TrainingError, check_model_gradients, fit
from src.utils.config import settings
from src.utils.logger import get_logger, set_global_level

logger = get_logger(__name__)

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_USAGE = 2
EXIT_MISSING_FILE = 3
EXIT_FORMAT = 4
EXIT_CONFIG = 5
EXIT_DIVERGED = 6

# Ordem importa: subclasses antes das bases
ERROR_CODES = (
    (FileNotFoundError, EXIT_MISSING_FILE, "missing_file"),
    (TrainingDivergedError, EXIT_DIVERGED, "diverged"),
    (CheckpointMismatchError, EXIT_CONFIG, "config"),
    (ConfigurationError, EXIT_CONFIG, "config"),
    (SynthError, EXIT_CONFIG, "config"),
    (ValidationError, EXIT_CONFIG, "config"),
    (ExperimentError, EXIT_CONFIG, "config"),
    (CorpusFormatError, EXIT_FORMAT, "format"),
    (EmbeddingFormatError, EXIT_FORMAT, "format"),
    (ModelFormatError, EXIT_FORMAT, "format"),
    (AlignmentError, EXIT_FORMAT, "format"),
    (EmbeddingError, EXIT_FORMAT, "format"),
    (TrainingError, EXIT_FORMAT, "format"),
    (ModelError, EXIT_FORMAT, "format"),
)


class UsageError(Exception):
    pass


class CLIArgumentParser(argparse.ArgumentParser):
    """ArgumentParser que reporta erros de uso no formato de uma linha"""

    def error(self, message: str):
        raise UsageError(message)


def emit_error(kind: str, message: str) -> None:
    clean = " ".join(str(message).split()).replace("\\", "\\\\").replace('"', '\\"')
    print(f'error code={kind} message="{clean}"', file=sys.stderr)


# ===============================================
# Helpers
# ===============================================


def out_path(args: argparse.Namespace, value: Optional[str], default_name: str) -> Path:
    return Path(value) if value else Path(args.out or ".") / default_name


def cli_embedding_paths(args: argparse.Namespace, section: Dict[str, str]) -> Dict[EmbeddingMode, Path]:
    paths = embedding_paths(section)
    for mode in (EmbeddingMode.GENERAL, EmbeddingMode.DOMAIN, EmbeddingMode.HYBRID):
        value = getattr(args, mode.value, None)
        if value:
            paths[mode] = Path(value)
    return paths


def read_inputs(path: str, input_format: str) -> List[List[str]]:
    if input_format == "corpus":
        return [sentence.tokens for sentence in read_corpus(path)]
    return read_token_lines(path)


# ===============================================
# Subcomandos
# ===============================================


def cmd_preprocess(args: argparse.Namespace, sections) -> int:
    lexicon = read_lexicon(args.lexicon) if args.lexicon else NormalizationLexicon()
    reviews = read_lines(args.input)
    output = out_path(args, args.output, "tokens.txt")
    write_token_lines((preprocess(review, lexicon) for review in reviews), output)
    logger.info(f"{len(reviews)} reviews pré-processadas em {output}")
    return EXIT_OK


def cmd_embed_train(args: argparse.Namespace, sections) -> int:
    preset = getattr(EmbeddingConfig, args.preset)
    overrides = {k: v for k, v in sections["embeddings"].items() if k in EmbeddingConfig.model_fields}
    for key in ("dim", "epochs", "buckets", "min_count"):
        value = getattr(args, key)
        if value is not None:
            overrides[key] = value
    if args.seed is not None:
        overrides["seed"] = args.seed
    config = preset(**overrides)

    corpus: List[List[str]] = []
    for path in args.corpus:
        corpus.extend(read_token_lines(path))
    table = SubwordEmbeddingTrainer(config).train(corpus)

    output = out_path(args, args.output, f"{args.preset}.emb")
    save_table(table, output)
    if args.text_output:
        save_text(table, args.text_output)
    print(
        f"embeddings={output} vocab={len(table)} dim={table.dim} "
        f"loss_first={table.epoch_losses[0]:.4f} loss_last={table.epoch_losses[-1]:.4f}"
    )
    return EXIT_OK


def cmd_train(args: argparse.Namespace, sections) -> int:
    data = sections["data"]
    train_path = args.train or data.get("train")
    validation_path = args.validation or data.get("validation")
    if not train_path or not validation_path:
        raise ConfigurationError("train exige --train e --validation (ou [data])")
    train = read_corpus(train_path)
    validation = read_corpus(validation_path)
    logger.info(
        "Distribuição de rótulos:\n"
        + corpus_label_distribution({"train": train, "validation": validation}).to_string()
    )

    model_values = dict(sections["model"])
    mode = EmbeddingMode(args.embedding_mode or model_values.get("embedding_mode", settings.model_embedding_mode))
    features = load_features(mode, cli_embedding_paths(args, sections["embeddings"]))
    seed = args.seed if args.seed is not None else settings.model_seed
    model_config = build_model_config(model_values, features, seed)
    train_config = train_config_from(sections["train"], args.seed)
    if args.max_epochs is not None:
        train_config = train_config.model_copy(update={"max_epochs": args.max_epochs})

    if args.check_gradients:
        result = check_model_gradients(train[:2], features, init_params(model_config), model_config)
        print(
            f"gradient_check max_relative_error={result.max_relative_error:.3e} "
            f"worst={result.worst_tensor} entries={result.checked_entries}"
        )

    result = fit(
        train,
        validation,
        model_config,
        train_config,
        features,
        checkpoint_path=args.checkpoint,
        resume_from=args.resume,
    )
    model_file = out_path(args, args.model_out, "model.cmla")
    save_model(model_file, model_config, result.params, features)

    report_file = out_path(args, args.report_out, "fit_report.yaml")
    report_file.parent.mkdir(parents=True, exist_ok=True)
    with open(report_file, "w", encoding="utf-8") as handle:
        yaml.safe_dump(result.report.model_dump(mode="json"), handle, sort_keys=False, allow_unicode=True)

    best = result.report.epochs[result.report.best_epoch - 1]
    print(
        f"model={model_file} best_epoch={result.report.best_epoch} "
        f"epochs={result.report.epochs_run} val_loss={best.val_loss:.4f} "
        f"val_token_f1={best.val_token_f1:.3f} stop={result.report.stop_reason.value}"
    )
    return EXIT_OK


def cmd_predict(args: argparse.Namespace, sections) -> int:
    saved = load_model(args.model)
    overrides = cli_embedding_paths(args, sections["embeddings"])
    if overrides:
        features = load_features(saved.config.embedding_mode, overrides)
        saved = load_model(args.model, features)
    else:
        features = load_model_features(saved.embeddings)

    token_lists = read_inputs(args.input, args.input_format)
    tags = predict_many(token_lists, features, saved.params, saved.config)
    output = out_path(args, args.output, "predictions.tsv")
    write_corpus(
        (LabeledSentence(tokens=tokens, tags=pred) for tokens, pred in zip(token_lists, tags)),
        output,
    )
    logger.info(f"{len(token_lists)} sentenças preditas em {output}")
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace, sections) -> int:
    gold = read_corpus(args.gold)
    pred = read_corpus(args.pred)
    if len(gold) != len(pred):
        raise AlignmentError(f"{len(gold)} sentenças gold mas {len(pred)} preditas")
    for index, (g, p) in enumerate(zip(gold, pred)):
        if g.tokens != p.tokens:
            raise AlignmentError(f"Sentença {index}: tokens de gold e predição diferem", sentence=index)

    gold_tags = [s.tags for s in gold]
    pred_tags = [s.tags for s in pred]
    token_report = token_metrics(gold_tags, pred_tags)
    entity_report = entity_metrics(gold_tags, pred_tags)
    sys.stdout.write("Token level\n" + report_format(token_report))
    sys.stdout.write("\nEntity level\n" + report_format(entity_report))
    if args.report_out:
        path = Path(args.report_out)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(report_to_keyvalue(token_report, entity_report), encoding="utf-8")
    return EXIT_OK


def cmd_experiment(args: argparse.Namespace, sections) -> int:
    if args.general or args.domain or args.hybrid:
        for mode in ("general", "domain", "hybrid"):
            if getattr(args, mode):
                sections["embeddings"][mode] = getattr(args, mode)
    spec = build_spec(sections, scenario=args.scenario, output_dir=args.out, seed=args.seed)
    if args.workers is not None:
        spec = spec.model_copy(update={"workers": args.workers})

    if args.chain:
        order = list(Scenario)
        results = run_chain(spec, order[order.index(spec.scenario) :])
    else:
        results = [run_scenario(spec)]

    for result in results:
        winner = result.winner
        if winner is None:
            raise ExperimentError(f"{result.scenario.value}: todas as células falharam")
        print(
            f"scenario={result.scenario.value} cells={len(result.rows)} "
            f"failed={sum(row.failed for row in result.rows)} winner={winner.index} "
            f"entity_f1={winner.entity_report.macro_f1:.3f} token_f1={winner.token_report.macro_f1:.3f}"
        )
    return EXIT_OK


def cmd_synth(args: argparse.Namespace, sections) -> int:
    result = synth_corpus(
        args.out or ".",
        size=args.size,
        aspect_vocab=args.aspect_vocab,
        opinion_vocab=args.opinion_vocab,
        coupling=args.coupling,
        seed=args.seed,
        embedding_sentences=args.embedding_sentences,
    )
    print(corpus_label_distribution(result.splits).to_string())
    return EXIT_OK


# ===============================================
# Parser
# ===============================================


def build_parser() -> CLIArgumentParser:
    parser = CLIArgumentParser(prog="cmla", description="Extração de termos de aspecto e opinião")
    parser.add_argument("--config", help="Arquivo INI com as seções de configuração")
    parser.add_argument("--seed", type=int, help="Semente global")
    parser.add_argument("--out", help="Diretório de saída (padrão: diretório atual)")
    parser.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING, ERROR")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="Casefolding, tokenização e normalização")
    p.add_argument("--input", required=True, help="Reviews brutas, uma por linha")
    p.add_argument("--lexicon", help="Léxico informal<TAB>formal")
    p.add_argument("--output")
    p.set_defaults(handler=cmd_preprocess)

    p = sub.add_parser("embed-train", help="Treina embeddings com subwords")
    p.add_argument("--corpus", action="append", required=True, help="Repetível: corpora combinados")
    p.add_argument("--preset", choices=["general", "domain", "hybrid"], default="domain")
    p.add_argument("--dim", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--buckets", type=int)
    p.add_argument("--min-count", dest="min_count", type=int)
    p.add_argument("--output")
    p.add_argument("--text-output", help="Exporta também o formato texto")
    p.set_defaults(handler=cmd_embed_train)

    p = sub.add_parser("train", help="Treina o modelo com early stopping")
    p.add_argument("--train")
    p.add_argument("--validation")
    p.add_argument("--embedding-mode", choices=[m.value for m in EmbeddingMode])
    for mode in ("general", "domain", "hybrid"):
        p.add_argument(f"--{mode}", help=f"Tabela de embeddings {mode}")
    p.add_argument("--max-epochs", type=int)
    p.add_argument("--model-out")
    p.add_argument("--report-out")
    p.add_argument("--checkpoint", help="Grava checkpoint a cada época")
    p.add_argument("--resume", help="Retoma de um checkpoint")
    p.add_argument("--check-gradients", action="store_true")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("predict", help="Rotula sentenças com um modelo treinado")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--input-format", choices=["corpus", "tokens"], default="corpus")
    for mode in ("general", "domain", "hybrid"):
        p.add_argument(f"--{mode}")
    p.add_argument("--output")
    p.set_defaults(handler=cmd_predict)

    p = sub.add_parser("evaluate", help="Métricas de token e de entidade")
    p.add_argument("--gold", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--report-out", help="Documento chave = valor")
    p.set_defaults(handler=cmd_evaluate)

    p = sub.add_parser("experiment", help="Roda um cenário P1–P4 (ou a cadeia)")
    p.add_argument("--scenario", choices=[s.value for s in Scenario])
    p.add_argument("--chain", action="store_true", help="Roda do cenário até P4 em sequência")
    p.add_argument("--workers", type=int)
    for mode in ("general", "domain", "hybrid"):
        p.add_argument(f"--{mode}")
    p.set_defaults(handler=cmd_experiment)

    p = sub.add_parser("synth", help="Gera o corpus sintético e os corpora de embedding")
    p.add_argument("--size", type=int)
    p.add_argument("--coupling", type=float)
    p.add_argument("--aspect-vocab", dest="aspect_vocab", type=int)
    p.add_argument("--opinion-vocab", dest="opinion_vocab", type=int)
    p.add_argument("--embedding-sentences", dest="embedding_sentences", type=int)
    p.set_defaults(handler=cmd_synth)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        emit_error("usage", e)
        return EXIT_USAGE

    if args.log_level:
        set_global_level(args.log_level)

    try:
        sections = read_config(args.config)
        return args.handler(args, sections)
    except Exception as e:
        for error_type, code, kind in ERROR_CODES:
            if isinstance(e, error_type):
                logger.error(f"❌ {args.command}: {e}")
                emit_error(kind, e)
                return code
        logger.exception(f"❌ Erro inesperado em {args.command}")
        emit_error("unexpected", f"{type(e).__name__}: {e}")
        return EXIT_UNEXPECTED


if __name__ == "__main__":
    sys.exit(main())
