import numpy as np
import pytest

from src.adapters.model_store import CheckpointMismatchError
from src.core.models.configs import EmbeddingMode, TrainConfig
from src.core.models.reports import StopReason
from src.core.services import trainer
from src.core.services.cmla_model import batch_loss, init_params, make_batch
from src.core.services.embedding_trainer import EmbeddingFeatures
from src.core.services.synthetic_corpus import SyntheticCorpusGenerator, SyntheticVocabulary
from src.core.services.tensor_core import NonFiniteError
from src.core.services.trainer import (
    NadamOptimizer,
    SplitEvaluation,
    TrainingDivergedError,
    TrainingError,
    evaluate_split,
    fit,
    nadam_step,
)
from tests.conftest import make_table, tiny_config


def scripted_losses(monkeypatch, losses):
    """Substitui a avaliação de validação por perdas pré-definidas"""
    remaining = iter(losses)

    def fake_evaluate(*args, **kwargs):
        return SplitEvaluation(loss=next(remaining), token_f1=0.5, token_accuracy=0.5, predictions=[])

    monkeypatch.setattr(trainer, "evaluate_split", fake_evaluate)


class TestNadam:
    def test_first_step(self):
        config = TrainConfig(lr=0.002, beta1=0.9, beta2=0.999, epsilon=1e-8)
        param, m, v = nadam_step(np.array([1.0]), np.array([2.0]), np.zeros(1), np.zeros(1), 1, config)
        assert m[0] == pytest.approx(0.2)
        assert v[0] == pytest.approx(0.004)
        assert param[0] == pytest.approx(1.0 - 0.002 * 1.9 * 2.0 / (2.0 + 1e-8))

    def test_step_counter_must_be_positive(self):
        with pytest.raises(TrainingError):
            nadam_step(np.zeros(1), np.zeros(1), np.zeros(1), np.zeros(1), 0, TrainConfig())

    def test_non_finite_gradient(self):
        with pytest.raises(TrainingDivergedError):
            nadam_step(np.zeros(2), np.array([1.0, np.nan]), np.zeros(2), np.zeros(2), 1, TrainConfig())

    def test_optimizer_counts_steps(self, features, model_config, toy_corpus):
        params = init_params(model_config)
        optimizer = NadamOptimizer(params, TrainConfig())
        batch = make_batch([toy_corpus[0].tokens], features, [toy_corpus[0].tags])
        before = params.copy()
        for _ in range(3):
            params.zero_grad()
            batch_loss(batch, params, model_config).backward()
            optimizer.step()
        assert optimizer.state.step == 3
        assert not params.equals(before)

    def test_padding_leaves_update_unchanged(self, features, toy_corpus):
        config = tiny_config(dropout=0.5)
        sentences = toy_corpus[:3]
        updated = []
        for pad_to in (None, 12):
            params = init_params(config)
            optimizer = NadamOptimizer(params, TrainConfig())
            batch = make_batch([s.tokens for s in sentences], features, [s.tags for s in sentences], pad_to=pad_to)
            batch_loss(batch, params, config, training=True, rng=np.random.default_rng(8)).backward()
            optimizer.step()
            updated.append(params)
        assert updated[0].equals(updated[1])


class TestEvaluateSplit:
    def test_matches_batch_loss(self, features, model_config, toy_corpus):
        params = init_params(model_config)
        evaluation = evaluate_split(toy_corpus, features, params, model_config, batch_size=32)
        batch = make_batch([s.tokens for s in toy_corpus], features, [s.tags for s in toy_corpus])
        assert evaluation.loss == pytest.approx(batch_loss(batch, params, model_config).item(), rel=1e-12)
        assert [len(p) for p in evaluation.predictions] == [len(s) for s in toy_corpus]
        assert 0.0 <= evaluation.token_accuracy <= 1.0

    def test_batch_size_does_not_change_loss(self, features, model_config, toy_corpus):
        params = init_params(model_config)
        whole = evaluate_split(toy_corpus, features, params, model_config, batch_size=32)
        pieces = evaluate_split(toy_corpus, features, params, model_config, batch_size=2)
        assert pieces.loss == pytest.approx(whole.loss, rel=1e-12)
        assert pieces.predictions == whole.predictions


class TestFit:
    def test_runs_to_max_epochs(self, toy_corpus, features, model_config, train_config):
        result = fit(toy_corpus[:4], toy_corpus[4:], model_config, train_config, features)
        report = result.report
        assert report.epochs_run == 3
        assert report.stop_reason == StopReason.MAX_EPOCHS
        assert report.best_val_loss == min(record.val_loss for record in report.epochs)
        assert report.epochs[report.best_epoch - 1].val_loss == report.best_val_loss

    def test_deterministic(self, toy_corpus, features, model_config, train_config):
        first = fit(toy_corpus[:4], toy_corpus[4:], model_config, train_config, features)
        second = fit(toy_corpus[:4], toy_corpus[4:], model_config, train_config, features)
        assert first.params.equals(second.params)
        assert first.report == second.report

    def test_training_loss_decreases(self, toy_corpus, features, model_config):
        config = TrainConfig(batch_size=6, max_epochs=15, patience=20, lr=0.01, seed=1)
        report = fit(toy_corpus, toy_corpus, model_config, config, features).report
        assert report.epochs[-1].train_loss < report.epochs[0].train_loss

    def test_zero_patience_stops_at_first_non_improvement(
        self, monkeypatch, toy_corpus, features, model_config
    ):
        scripted_losses(monkeypatch, [1.0, 2.0, 3.0, 4.0])
        config = TrainConfig(batch_size=2, max_epochs=4, patience=0, seed=3)
        result = fit(toy_corpus[:4], toy_corpus[4:], model_config, config, features)
        assert result.report.epochs_run == 2
        assert result.report.best_epoch == 1
        assert result.report.stop_reason == StopReason.EARLY_STOPPING

        scripted_losses(monkeypatch, [1.0])
        one_epoch = fit(
            toy_corpus[:4], toy_corpus[4:], model_config, config.model_copy(update={"max_epochs": 1}), features
        )
        assert result.params.equals(one_epoch.params)

    def test_patience_counts_epochs_without_improvement(
        self, monkeypatch, toy_corpus, features, model_config
    ):
        scripted_losses(monkeypatch, [1.0, 0.9, 0.95, 0.96, 0.97, 0.5])
        config = TrainConfig(batch_size=2, max_epochs=6, patience=2, seed=3)
        report = fit(toy_corpus[:4], toy_corpus[4:], model_config, config, features).report
        assert report.epochs_run == 4
        assert report.best_epoch == 2
        assert [record.improved for record in report.epochs] == [True, True, False, False]

    def test_strict_improvement_reaches_max_epochs(self, monkeypatch, toy_corpus, features, model_config):
        scripted_losses(monkeypatch, [1.0, 0.9, 0.8])
        config = TrainConfig(batch_size=2, max_epochs=3, patience=0, seed=3)
        report = fit(toy_corpus[:4], toy_corpus[4:], model_config, config, features).report
        assert report.epochs_run == 3
        assert report.best_epoch == 3
        assert report.stop_reason == StopReason.MAX_EPOCHS

    def test_equal_loss_is_not_improvement(self, monkeypatch, toy_corpus, features, model_config):
        scripted_losses(monkeypatch, [1.0, 1.0])
        config = TrainConfig(batch_size=2, max_epochs=5, patience=0, seed=3)
        report = fit(toy_corpus[:4], toy_corpus[4:], model_config, config, features).report
        assert report.epochs_run == 2
        assert report.best_epoch == 1

    def test_resume_matches_uninterrupted_run(self, tmp_path, toy_corpus, features):
        config = tiny_config(dropout=0.3)
        train_config = TrainConfig(batch_size=2, max_epochs=4, patience=10, seed=21)
        straight = fit(toy_corpus[:4], toy_corpus[4:], config, train_config, features)

        checkpoint = tmp_path / "run.ckpt"
        interrupted = fit(
            toy_corpus[:4], toy_corpus[4:], config, train_config, features,
            checkpoint_path=checkpoint, stop_after=2,
        )
        assert interrupted.report.epochs_run == 2
        assert interrupted.report.stop_reason is None

        resumed = fit(
            toy_corpus[:4], toy_corpus[4:], config, train_config, features,
            checkpoint_path=checkpoint, resume_from=checkpoint,
        )
        assert resumed.params.equals(straight.params)
        assert resumed.report == straight.report

    def test_resume_with_other_config(self, tmp_path, toy_corpus, features, model_config, train_config):
        checkpoint = tmp_path / "run.ckpt"
        fit(toy_corpus[:4], toy_corpus[4:], model_config, train_config, features,
            checkpoint_path=checkpoint, stop_after=1)
        with pytest.raises(CheckpointMismatchError):
            fit(toy_corpus[:4], toy_corpus[4:], tiny_config(hidden=4), train_config, features,
                resume_from=checkpoint)

    def test_rejects_empty_split(self, toy_corpus, features, model_config, train_config):
        with pytest.raises(TrainingError):
            fit(toy_corpus, [], model_config, train_config, features)

    def test_rejects_dimension_mismatch(self, toy_corpus, features, train_config):
        with pytest.raises(TrainingError):
            fit(toy_corpus[:4], toy_corpus[4:], tiny_config(input_dim=7), train_config, features)

    def test_non_finite_loss_is_divergence(self, monkeypatch, toy_corpus, features, model_config, train_config):
        def exploding(*args, **kwargs):
            raise NonFiniteError("Operação 'tanh' produziu valores não finitos")

        monkeypatch.setattr(trainer, "batch_loss", exploding)
        with pytest.raises(TrainingDivergedError):
            fit(toy_corpus[:4], toy_corpus[4:], model_config, train_config, features)


@pytest.mark.slow
def test_overfits_small_corpus():
    """Com treino = validação, a rede completa deve decorar 20 sentenças"""
    vocabulary = SyntheticVocabulary.build(aspect_vocab=10, opinion_vocab=8, coupling=0.5, seed=4)
    sentences = SyntheticCorpusGenerator(vocabulary, 0.5).sentences(20, np.random.default_rng(4))
    words = sorted({token for sentence in sentences for token in sentence.tokens})
    features = EmbeddingFeatures(EmbeddingMode.DOMAIN, {EmbeddingMode.DOMAIN: make_table(words, dim=8, seed=4)})

    config = tiny_config("B-LSTM", input_dim=8, hidden=50, layers=2, k=20, dropout=0.5)
    train_config = TrainConfig(batch_size=4, max_epochs=200, patience=200, lr=0.002, seed=4)
    report = fit(sentences, sentences, config, train_config, features).report
    assert max(record.val_token_accuracy for record in report.epochs) >= 0.95
