"""
Orquestração dos cenários de experimento (P1–P4) e da busca em grade

Cada cenário parte do vencedor registrado do cenário anterior (winner.yaml),
treina uma célula por combinação varrida e ranqueia pelo F1 macro de entidade
na validação, desempatando pelo F1 macro de token e pela ordem da grade.
"""

import configparser
import itertools
import json
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import pandas as pd
import yaml
from pydantic import ValidationError

from src.adapters.corpus_io import read_corpus
from src.adapters.embedding_store import load_table
from src.core.models.configs import (
    EmbeddingConfig,
    EmbeddingMode,
    ModelArchitecture,
    ModelConfig,
    RNNVariant,
    TrainConfig,
)
from src.core.models.experiment import (
    SWEEPABLE_KEYS,
    ExperimentSpec,
    GridResult,
    GridRow,
    Scenario,
)
from src.core.models.labels import LabeledSentence
from src.core.services.cmla_model import ModelError
from src.core.services.embedding_trainer import EmbeddingError, EmbeddingFeatures
from src.core.services.metrics_calculator import entity_metrics, token_metrics
from src.core.services.tensor_core import TensorError
from src.core.services.trainer import TrainingError, evaluate_split, fit
from src.utils.config import settings
from src.utils.logger import get_logger

logger = get_logger(__name__)

PathLike = Union[str, Path]

SECTIONS = ("experiment", "data", "embeddings", "model", "train", "grid")
EXPERIMENT_KEYS = ("scenario", "output_dir", "seed", "workers")
DATA_KEYS = ("train", "validation", "test")
EMBEDDING_PATH_KEYS = tuple(mode.value for mode in EmbeddingMode if mode != EmbeddingMode.DOUBLE)
EMBEDDING_PARAM_KEYS = tuple(EmbeddingConfig.model_fields)
TRAIN_KEYS = tuple(TrainConfig.model_fields)


class ExperimentError(Exception):
    """Falha na orquestração de um experimento"""

    pass


class ConfigurationError(ExperimentError, ValueError):
    """Arquivo de configuração com seção, chave ou valor inválido"""

    pass


# ===============================================
# Arquivo de configuração (INI)
# ===============================================


def read_config(path: Optional[PathLike]) -> Dict[str, Dict[str, str]]:
    """
    Lê o arquivo `chave = valor` com uma seção por componente

    Sem caminho, devolve todas as seções vazias.

    Raises:
        FileNotFoundError: arquivo inexistente
        ConfigurationError: seção ou chave desconhecida, sintaxe inválida
    """
    sections: Dict[str, Dict[str, str]] = {name: {} for name in SECTIONS}
    if path is None:
        return sections
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Arquivo de configuração não encontrado: {path}")

    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as e:
        raise ConfigurationError(f"{path}: {e}") from e

    allowed = {
        "experiment": EXPERIMENT_KEYS,
        "data": DATA_KEYS,
        "embeddings": EMBEDDING_PATH_KEYS + EMBEDDING_PARAM_KEYS,
        "model": SWEEPABLE_KEYS,
        "train": TRAIN_KEYS,
        "grid": SWEEPABLE_KEYS,
    }
    for section in parser.sections():
        if section not in allowed:
            raise ConfigurationError(f"{path}: seção desconhecida [{section}]")
        for key, value in parser.items(section):
            if key not in allowed[section]:
                raise ConfigurationError(f"{path}: chave desconhecida '{key}' em [{section}]")
            sections[section][key] = value.strip()
    return sections


def parse_list(raw: str) -> List[str]:
    return [item.strip() for item in raw.split(",") if item.strip()]


def model_defaults() -> Dict[str, Any]:
    """Valores fixos de P1/P2: melhor configuração publicada"""
    return {
        "hidden_units": settings.model_hidden_units,
        "attention_layers": settings.model_attention_layers,
        "tensor_dim": settings.model_tensor_dim,
        "dropout_rate": settings.model_dropout_rate,
    }


def default_sweep(scenario: Scenario) -> Dict[str, List[Any]]:
    if scenario == Scenario.P1:
        return {"rnn_variant": [variant.value for variant in RNNVariant]}
    if scenario == Scenario.P2:
        return {"embedding_mode": [mode.value for mode in EmbeddingMode]}
    if scenario == Scenario.P3:
        return {
            "hidden_units": list(settings.grid_hidden_units),
            "attention_layers": list(settings.grid_attention_layers),
            "tensor_dim": list(settings.grid_tensor_dim),
            "dropout_rate": list(settings.grid_dropout_rate),
        }
    return {"architecture": [arch.value for arch in ModelArchitecture]}


def embedding_paths(section: Dict[str, str]) -> Dict[EmbeddingMode, Path]:
    return {EmbeddingMode(key): Path(section[key]) for key in EMBEDDING_PATH_KEYS if key in section}


def train_config_from(section: Dict[str, str], seed: Optional[int] = None) -> TrainConfig:
    values: Dict[str, Any] = dict(section)
    if seed is not None and "seed" not in values:
        values["seed"] = seed
    try:
        return TrainConfig(**values)
    except ValidationError as e:
        raise ConfigurationError(f"[train] inválida: {e}") from e


def build_spec(
    sections: Dict[str, Dict[str, str]],
    scenario: Optional[str] = None,
    output_dir: Optional[PathLike] = None,
    seed: Optional[int] = None,
) -> ExperimentSpec:
    """
    Monta o ExperimentSpec a partir das seções lidas e das flags da CLI

    A seção [grid] substitui a varredura padrão do cenário.
    """
    experiment = sections["experiment"]
    data = sections["data"]
    scenario_value = scenario or experiment.get("scenario")
    if not scenario_value:
        raise ConfigurationError("Cenário não informado ([experiment] scenario ou --scenario)")
    for key in ("train", "validation"):
        if key not in data:
            raise ConfigurationError(f"[data] precisa de '{key}'")

    try:
        scenario_enum = Scenario(scenario_value)
        swept = (
            {key: parse_list(value) for key, value in sections["grid"].items()}
            if sections["grid"]
            else default_sweep(scenario_enum)
        )
        fixed = dict(sections["model"])
        for key in swept:
            fixed.pop(key, None)
        return ExperimentSpec(
            scenario=scenario_enum,
            fixed=fixed,
            swept=swept,
            train_path=Path(data["train"]),
            validation_path=Path(data["validation"]),
            embedding_paths=embedding_paths(sections["embeddings"]),
            train_overrides=dict(sections["train"]),
            output_dir=Path(output_dir or experiment.get("output_dir", "runs")),
            seed=int(seed if seed is not None else experiment.get("seed", settings.model_seed)),
            workers=int(experiment.get("workers", settings.grid_workers)),
        )
    except (ValueError, ValidationError) as e:
        raise ConfigurationError(f"Experimento inválido: {e}") from e


# ===============================================
# Embeddings e configuração de modelo
# ===============================================


def load_features(mode: EmbeddingMode, paths: Dict[EmbeddingMode, Path]) -> EmbeddingFeatures:
    """
    Carrega as tabelas que o modo exige

    Raises:
        ExperimentError: tabela necessária sem caminho configurado
    """
    mode = EmbeddingMode(mode)
    roles = [EmbeddingMode.GENERAL, EmbeddingMode.DOMAIN] if mode == EmbeddingMode.DOUBLE else [mode]
    missing = [role.value for role in roles if role not in paths]
    if missing:
        raise ExperimentError(f"Embeddings '{mode.value}' exigem caminhos para: {missing}")
    tables = {role: load_table(paths[role]) for role in roles}
    return EmbeddingFeatures(mode, tables, {role: paths[role] for role in roles})


def build_model_config(values: Dict[str, Any], features: EmbeddingFeatures, seed: int) -> ModelConfig:
    """
    ModelConfig com input_dim vindo das tabelas carregadas

    Um input_dim explícito em `values` é conferido contra as tabelas.
    """
    merged = dict(values)
    merged["embedding_mode"] = features.mode.value
    merged.setdefault("input_dim", features.dim)
    merged.setdefault("seed", seed)
    try:
        return ModelConfig.model_validate(merged, context={"embedding_dims": features.table_dims})
    except ValidationError as e:
        raise ConfigurationError(f"Configuração de modelo inválida: {e}") from e


def config_summary(config: ModelConfig) -> Dict[str, Any]:
    """Campos varríveis de uma ModelConfig em forma serializável"""
    dumped = json.loads(config.model_dump_json())
    return {key: dumped[key] for key in SWEEPABLE_KEYS}


# ===============================================
# Vencedores e encadeamento
# ===============================================


def winner_path(output_dir: PathLike, scenario: Scenario) -> Path:
    return Path(output_dir) / scenario.value / settings.experiment_winner_file


def read_winner(output_dir: PathLike, scenario: Scenario) -> Dict[str, Any]:
    path = winner_path(output_dir, scenario)
    if not path.exists():
        raise ExperimentError(
            f"Vencedor de {scenario.value} não encontrado em {path}: rode {scenario.value} antes"
        )
    with open(path, "r", encoding="utf-8") as handle:
        return yaml.safe_load(handle)


def base_values(spec: ExperimentSpec) -> Dict[str, Any]:
    """Valores de partida: vencedor do cenário anterior (P1 usa os padrões)"""
    previous = spec.scenario.previous
    if previous is None:
        values = model_defaults()
        values["embedding_mode"] = EmbeddingMode.DOUBLE.value
        values["architecture"] = ModelArchitecture.CMLA.value
    else:
        values = dict(read_winner(spec.output_dir, previous)["config"])
        logger.info(f"{spec.scenario.value} parte do vencedor de {previous.value}: {values}")
    values.update(spec.fixed)
    return values


def grid_cells(spec: ExperimentSpec) -> List[Dict[str, Any]]:
    """Produto cartesiano das chaves varridas, na ordem de SWEEPABLE_KEYS"""
    keys = [key for key in SWEEPABLE_KEYS if key in spec.swept]
    return [dict(zip(keys, combo)) for combo in itertools.product(*(spec.swept[k] for k in keys))]


# ===============================================
# Execução
# ===============================================


def _run_cell(
    index: int,
    values: Dict[str, Any],
    spec: ExperimentSpec,
    train: Sequence[LabeledSentence],
    validation: Sequence[LabeledSentence],
    features_cache: Dict[EmbeddingMode, EmbeddingFeatures],
) -> GridRow:
    shown = {key: values[key] for key in values if key in spec.swept}
    try:
        mode = EmbeddingMode(values.get("embedding_mode", EmbeddingMode.DOUBLE.value))
        if mode not in features_cache:
            features_cache[mode] = load_features(mode, spec.embedding_paths)
        features = features_cache[mode]
        config = build_model_config(values, features, spec.seed)
        train_config = train_config_from(spec.train_overrides, spec.seed)

        logger.info(f"{spec.scenario.value} célula {index}: {config.describe()}")
        result = fit(train, validation, config, train_config, features)
        evaluation = evaluate_split(validation, features, result.params, config, train_config.batch_size)
        gold = [s.tags for s in validation]
        row = GridRow(
            index=index,
            config=config_summary(config),
            token_report=token_metrics(gold, evaluation.predictions),
            entity_report=entity_metrics(gold, evaluation.predictions),
            best_epoch=result.report.best_epoch,
        )
        logger.info(
            f"{spec.scenario.value} célula {index}: F1 entidade {row.entity_report.macro_f1:.3f}, "
            f"F1 token {row.token_report.macro_f1:.3f}"
        )
        return row
    except (TrainingError, ModelError, EmbeddingError, TensorError, ExperimentError, OSError) as e:
        logger.error(f"❌ {spec.scenario.value} célula {index} falhou: {e}")
        return GridRow(index=index, config=shown, error=f"{type(e).__name__}: {e}")


def _cell_job(payload: Dict[str, Any]) -> Dict[str, Any]:
    """Executa uma célula num processo separado (entrada/saída serializáveis)"""
    spec = ExperimentSpec.model_validate_json(payload["spec"])
    train = read_corpus(spec.train_path)
    validation = read_corpus(spec.validation_path)
    row = _run_cell(payload["index"], payload["values"], spec, train, validation, {})
    return json.loads(row.model_dump_json())


def run_scenario(spec: ExperimentSpec) -> GridResult:
    """
    Treina e avalia todas as células de um cenário e grava os artefatos

    Falhas de uma célula ficam registradas na linha e não abortam a grade.
    """
    train = read_corpus(spec.train_path)
    validation = read_corpus(spec.validation_path)
    if not train or not validation:
        raise ExperimentError("Splits de treino e validação não podem ser vazios")

    base = base_values(spec)
    cells = [{**base, **cell} for cell in grid_cells(spec)]
    logger.info(f"Cenário {spec.scenario.value}: {len(cells)} configurações, {spec.workers} worker(s)")

    if spec.workers > 1:
        payloads = [
            {"index": index, "values": values, "spec": spec.model_dump_json()}
            for index, values in enumerate(cells)
        ]
        with ProcessPoolExecutor(max_workers=spec.workers) as executor:
            rows = [GridRow(**row) for row in executor.map(_cell_job, payloads)]
    else:
        cache: Dict[EmbeddingMode, EmbeddingFeatures] = {}
        rows = [
            _run_cell(index, values, spec, train, validation, cache)
            for index, values in enumerate(cells)
        ]

    result = GridResult(scenario=spec.scenario, rows=rows)
    write_artifacts(spec, result)
    return result


def run_chain(spec: ExperimentSpec, scenarios: Sequence[Scenario]) -> List[GridResult]:
    """Roda cenários em sequência; cada um lê o vencedor gravado pelo anterior"""
    results = []
    for scenario in scenarios:
        sweep = spec.swept if scenario == spec.scenario else default_sweep(scenario)
        fixed = {key: value for key, value in spec.fixed.items() if key not in sweep}
        step = spec.model_copy(update={"scenario": scenario, "swept": sweep, "fixed": fixed})
        results.append(run_scenario(ExperimentSpec.model_validate(step.model_dump())))
    return results


# ===============================================
# Artefatos
# ===============================================


def results_frame(result: GridResult) -> pd.DataFrame:
    """Uma linha por célula, na ordem da grade"""
    records = []
    for row in result.rows:
        record: Dict[str, Any] = {"index": row.index, **row.config}
        record["entity_f1"] = row.entity_report.macro_f1 if row.entity_report else None
        record["token_f1"] = row.token_report.macro_f1 if row.token_report else None
        record["best_epoch"] = row.best_epoch
        record["error"] = row.error
        records.append(record)
    return pd.DataFrame.from_records(records)


def write_artifacts(spec: ExperimentSpec, result: GridResult) -> Path:
    """
    Grava spec.yaml, results.csv, ranking.csv, cells/<i>.yaml e winner.yaml
    """
    out = spec.scenario_dir
    (out / "cells").mkdir(parents=True, exist_ok=True)

    with open(out / "spec.yaml", "w", encoding="utf-8") as handle:
        yaml.safe_dump(json.loads(spec.model_dump_json()), handle, sort_keys=True, allow_unicode=True)

    frame = results_frame(result)
    frame.to_csv(out / "results.csv", index=False)
    ranking_order = [row.index for row in result.ranking]
    ranked = frame.set_index("index").loc[ranking_order].reset_index()
    ranked.insert(0, "rank", range(1, len(ranked) + 1))
    ranked.to_csv(out / "ranking.csv", index=False)

    for row in result.rows:
        with open(out / "cells" / f"{row.index:03d}.yaml", "w", encoding="utf-8") as handle:
            yaml.safe_dump(json.loads(row.model_dump_json()), handle, sort_keys=True, allow_unicode=True)

    winner = result.winner
    if winner is None:
        logger.error(f"❌ {spec.scenario.value}: todas as células falharam, sem vencedor")
        # Vencedor de uma execução anterior não pode encadear o próximo cenário
        (out / settings.experiment_winner_file).unlink(missing_ok=True)
    else:
        with open(out / settings.experiment_winner_file, "w", encoding="utf-8") as handle:
            yaml.safe_dump(
                {
                    "scenario": spec.scenario.value,
                    "index": winner.index,
                    "config": winner.config,
                    "entity_f1": winner.entity_report.macro_f1,
                    "token_f1": winner.token_report.macro_f1,
                },
                handle,
                sort_keys=True,
                allow_unicode=True,
            )
        logger.info(
            f"{spec.scenario.value} vencedor: célula {winner.index} {winner.config} "
            f"(F1 entidade {winner.entity_report.macro_f1:.3f})"
        )
    return out
