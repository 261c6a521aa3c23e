import pandas as pd
import pytest
from pydantic import ValidationError

from src.adapters.corpus_io import write_corpus
from src.core.models.configs import EmbeddingMode, ModelConfig, expected_input_dim
from src.core.models.experiment import ExperimentSpec, GridResult, GridRow, Scenario
from src.core.models.reports import ClassScores, MetricsReport
from src.core.services.embedding_trainer import EmbeddingFeatures
from src.core.services.experiment_runner import (
    ConfigurationError,
    ExperimentError,
    base_values,
    build_model_config,
    build_spec,
    grid_cells,
    read_config,
    read_winner,
    run_chain,
    run_scenario,
    winner_path,
)
from src.core.services.metrics_calculator import AVERAGE_LABEL
from tests.conftest import make_table

TINY_MODEL = "[model]\nhidden_units = 2\nattention_layers = 1\ntensor_dim = 1\ndropout_rate = 0.0\n"
FAST_TRAIN = "[train]\nmax_epochs = 1\nbatch_size = 4\n"


@pytest.fixture
def experiment_files(tmp_path, toy_corpus, saved_tables):
    write_corpus(toy_corpus[:4], tmp_path / "train.tsv")
    write_corpus(toy_corpus[4:], tmp_path / "validation.tsv")
    return tmp_path


def write_config(directory, body: str, roles=("general", "domain", "hybrid")):
    header = (
        "[experiment]\n"
        f"output_dir = {directory / 'runs'}\n"
        "seed = 5\n"
        "[data]\n"
        f"train = {directory / 'train.tsv'}\n"
        f"validation = {directory / 'validation.tsv'}\n"
        "[embeddings]\n"
    )
    header += "".join(f"{role} = {directory / (role + '.emb')}\n" for role in roles)
    path = directory / "experiment.ini"
    path.write_text(header + body, encoding="utf-8")
    return path


def averaged(level, f1):
    average = ClassScores(label=AVERAGE_LABEL, precision=f1, recall=f1, f1=f1)
    return MetricsReport(level=level, classes=[], average=average)


def grid_row(index, entity_f1, token_f1, error=None):
    if error is not None:
        return GridRow(index=index, config={}, error=error)
    return GridRow(
        index=index,
        config={"hidden_units": index},
        token_report=averaged("token", token_f1),
        entity_report=averaged("entity", entity_f1),
    )


class TestConfigFile:
    def test_no_file_gives_empty_sections(self):
        sections = read_config(None)
        assert set(sections) == {"experiment", "data", "embeddings", "model", "train", "grid"}
        assert all(not values for values in sections.values())

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            read_config(tmp_path / "nope.ini")

    def test_unknown_section(self, tmp_path):
        path = tmp_path / "bad.ini"
        path.write_text("[optimizer]\nlr = 0.1\n", encoding="utf-8")
        with pytest.raises(ConfigurationError):
            read_config(path)

    def test_unknown_key(self, tmp_path):
        path = tmp_path / "bad.ini"
        path.write_text("[model]\nlayers = 2\n", encoding="utf-8")
        with pytest.raises(ConfigurationError, match="layers"):
            read_config(path)

    def test_values_are_read(self, experiment_files):
        sections = read_config(write_config(experiment_files, TINY_MODEL))
        assert sections["model"]["tensor_dim"] == "1"
        assert sections["experiment"]["seed"] == "5"


class TestSpec:
    def test_default_p3_grid_has_81_cells(self, experiment_files):
        spec = build_spec(read_config(write_config(experiment_files, "")), scenario="P3")
        cells = grid_cells(spec)
        assert len(cells) == 81
        assert cells[0] == {"hidden_units": 50, "attention_layers": 1, "tensor_dim": 10, "dropout_rate": 0.2}
        assert len({tuple(sorted(cell.items())) for cell in cells}) == 81

    def test_grid_section_replaces_default(self, experiment_files):
        body = "[grid]\nrnn_variant = GRU, B-LSTM\n"
        spec = build_spec(read_config(write_config(experiment_files, body)), scenario="P1")
        assert grid_cells(spec) == [{"rnn_variant": "GRU"}, {"rnn_variant": "B-LSTM"}]

    def test_p4_must_sweep_architectures(self, experiment_files):
        body = "[grid]\narchitecture = CMLA\n"
        with pytest.raises(ConfigurationError):
            build_spec(read_config(write_config(experiment_files, body)), scenario="P4")

    def test_p4_default(self, experiment_files):
        spec = build_spec(read_config(write_config(experiment_files, "")), scenario="P4")
        assert [cell["architecture"] for cell in grid_cells(spec)] == ["CMLA", "ENCODER-SOFTMAX"]

    def test_scenario_required(self, experiment_files):
        with pytest.raises(ConfigurationError):
            build_spec(read_config(write_config(experiment_files, "")))

    def test_unknown_scenario(self, experiment_files):
        with pytest.raises(ConfigurationError):
            build_spec(read_config(write_config(experiment_files, "")), scenario="P9")

    def test_empty_sweep_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            ExperimentSpec(
                scenario=Scenario.P1,
                swept={"rnn_variant": []},
                train_path=tmp_path / "t.tsv",
                validation_path=tmp_path / "v.tsv",
                output_dir=tmp_path,
            )

    def test_later_scenario_needs_previous_winner(self, experiment_files):
        spec = build_spec(read_config(write_config(experiment_files, "")), scenario="P2")
        with pytest.raises(ExperimentError, match="P1"):
            base_values(spec)


class TestInputDim:
    PRESET_DIMS = {"general": 300, "domain": 100}

    def test_expected_by_mode(self):
        assert expected_input_dim("double", self.PRESET_DIMS) == 400
        assert expected_input_dim(EmbeddingMode.GENERAL, self.PRESET_DIMS) == 300
        assert expected_input_dim("hybrid", self.PRESET_DIMS) is None

    def test_mismatch_with_known_tables(self):
        context = {"embedding_dims": self.PRESET_DIMS}
        with pytest.raises(ValidationError, match="input_dim=300"):
            ModelConfig.model_validate({"embedding_mode": "double", "input_dim": 300}, context=context)
        config = ModelConfig.model_validate({"embedding_mode": "double", "input_dim": 400}, context=context)
        assert config.input_dim == 400

    def test_unknown_tables_are_not_checked(self):
        assert ModelConfig(embedding_mode="double", input_dim=7).input_dim == 7

    def test_build_model_config_checks_explicit_dim(self):
        features = EmbeddingFeatures(
            EmbeddingMode.DOUBLE,
            {
                EmbeddingMode.GENERAL: make_table(["kamar"], dim=3, seed=1),
                EmbeddingMode.DOMAIN: make_table(["kamar"], dim=2, seed=2),
            },
        )
        assert build_model_config({}, features, seed=1).input_dim == 5
        with pytest.raises(ConfigurationError, match="input_dim=3"):
            build_model_config({"input_dim": 3}, features, seed=1)


class TestRanking:
    def test_entity_then_token_then_order(self):
        result = GridResult(
            scenario=Scenario.P3,
            rows=[
                grid_row(0, 0.5, 0.9),
                grid_row(1, 0.7, 0.1),
                grid_row(2, 0.7, 0.3),
                grid_row(3, 0.0, 0.0, error="TrainingDivergedError: nan"),
                grid_row(4, 0.7, 0.3),
            ],
        )
        assert [row.index for row in result.ranking] == [2, 4, 1, 0, 3]
        assert result.winner.index == 2

    def test_no_winner_when_everything_failed(self):
        result = GridResult(scenario=Scenario.P1, rows=[grid_row(0, 0, 0, error="x")])
        assert result.winner is None


class TestRun:
    def test_single_cell_scenario(self, experiment_files):
        body = TINY_MODEL + FAST_TRAIN + "[grid]\nrnn_variant = GRU\n"
        spec = build_spec(read_config(write_config(experiment_files, body)), scenario="P1")
        result = run_scenario(spec)

        assert len(result.rows) == 1
        assert not result.rows[0].failed
        out = experiment_files / "runs" / "P1"
        for name in ("spec.yaml", "results.csv", "ranking.csv", "winner.yaml", "cells/000.yaml"):
            assert (out / name).exists(), name
        winner = read_winner(experiment_files / "runs", Scenario.P1)
        assert winner["config"]["rnn_variant"] == "GRU"
        assert winner["config"]["hidden_units"] == 2
        assert winner["config"]["embedding_mode"] == "double"

    def test_failed_cell_is_recorded(self, experiment_files):
        body = TINY_MODEL + FAST_TRAIN + "[grid]\nembedding_mode = domain, hybrid\n"
        config = write_config(experiment_files, body, roles=("general", "domain"))
        result = run_scenario(build_spec(read_config(config), scenario="P1"))

        assert [row.failed for row in result.rows] == [False, True]
        assert result.rows[1].error.startswith("ExperimentError")
        assert result.rows[1].config == {"embedding_mode": "hybrid"}
        frame = pd.read_csv(experiment_files / "runs" / "P1" / "results.csv")
        assert list(frame["index"]) == [0, 1]
        assert result.winner.index == 0

    def test_failed_rerun_discards_previous_winner(self, experiment_files):
        body = TINY_MODEL + FAST_TRAIN + "[grid]\nembedding_mode = domain\n"
        run_scenario(build_spec(read_config(write_config(experiment_files, body)), scenario="P1"))
        assert winner_path(experiment_files / "runs", Scenario.P1).exists()

        failing = TINY_MODEL + FAST_TRAIN + "[grid]\nembedding_mode = hybrid\n"
        config = write_config(experiment_files, failing, roles=("general", "domain"))
        result = run_scenario(build_spec(read_config(config), scenario="P1"))
        assert result.winner is None
        assert not winner_path(experiment_files / "runs", Scenario.P1).exists()
        with pytest.raises(ExperimentError, match="P1"):
            read_winner(experiment_files / "runs", Scenario.P1)

    def test_chain_reads_previous_winner_and_is_reproducible(self, experiment_files):
        body = TINY_MODEL + FAST_TRAIN + "[grid]\nrnn_variant = GRU, LSTM\n"
        outputs = []
        for run in ("first", "second"):
            spec = build_spec(
                read_config(write_config(experiment_files, body)),
                scenario="P1",
                output_dir=experiment_files / run,
            )
            results = run_chain(spec, [Scenario.P1, Scenario.P2])
            assert [len(result.rows) for result in results] == [2, 4]
            p1 = read_winner(experiment_files / run, Scenario.P1)
            assert all(row.config["rnn_variant"] == p1["config"]["rnn_variant"] for row in results[1].rows)
            outputs.append(experiment_files / run)

        for scenario in (Scenario.P1, Scenario.P2):
            first = winner_path(outputs[0], scenario).read_bytes()
            assert first == winner_path(outputs[1], scenario).read_bytes()
            assert (outputs[0] / scenario.value / "results.csv").read_bytes() == (
                outputs[1] / scenario.value / "results.csv"
            ).read_bytes()

    def test_embedding_modes_change_input_dim(self, experiment_files):
        body = TINY_MODEL + FAST_TRAIN + "[grid]\nembedding_mode = general, hybrid, double\n"
        spec = build_spec(read_config(write_config(experiment_files, body)), scenario="P1")
        result = run_scenario(spec)
        assert [row.config["embedding_mode"] for row in result.rows] == ["general", "hybrid", "double"]
        assert not any(row.failed for row in result.rows)
