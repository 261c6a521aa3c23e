import numpy as np
import pytest

from src.core.models.configs import ModelArchitecture, TrainConfig
from src.core.models.labels import NUM_LABELS, EntityKind, EntitySpan, LabeledSentence
from src.core.services.cmla_model import (
    ModelError,
    ModelParams,
    TokenScores,
    attention_layer,
    batch_loss,
    count_parameters,
    decode_scores,
    encode,
    expected_shapes,
    forward,
    forward_batch,
    init_params,
    make_batch,
    predict,
    predict_many,
)
from src.core.services.tensor_core import GraphError, constant, inference_mode
from src.core.services.text_pipeline import decode_bio
from src.core.services.trainer import NadamOptimizer
from tests.conftest import B_A, B_S, I_A, I_S, O, tiny_config

VARIANTS = ["GRU", "LSTM", "B-GRU", "B-LSTM"]


class TestParams:
    def test_shapes_bidirectional_lstm(self):
        config = tiny_config("B-LSTM", input_dim=4, hidden=3, layers=2, k=2)
        shapes = expected_shapes(config)
        assert shapes["encoder.fwd.W"] == (4, 12)
        assert shapes["encoder.bwd.U"] == (3, 12)
        assert shapes["attention.1.opinion.G"] == (2, 6, 6)
        assert shapes["attention.0.aspect.v"] == (4,)
        assert shapes["prototype.aspect"] == (6,)
        assert shapes["head.W"] == (8, NUM_LABELS)

    def test_shapes_without_attention(self):
        config = tiny_config("GRU", architecture=ModelArchitecture.ENCODER_SOFTMAX)
        shapes = expected_shapes(config)
        assert not any(name.startswith(("attention.", "prototype.")) for name in shapes)
        assert shapes["head.W"] == (3, NUM_LABELS)
        assert "encoder.bwd.W" not in shapes

    def test_count_parameters(self):
        config = tiny_config("GRU", input_dim=4, hidden=3, layers=1, k=2)
        d_h = 3
        expected = (4 * 9 + 3 * 9 + 9) + 2 * (2 * 2 * d_h * d_h + 4) + 2 * d_h + 8 * 5 + 5
        assert count_parameters(init_params(config)) == expected

    def test_init_is_deterministic(self):
        config = tiny_config(seed=7)
        assert init_params(config).equals(init_params(config))
        assert not init_params(config).equals(init_params(tiny_config(seed=8)))

    def test_lstm_forget_bias(self):
        params = init_params(tiny_config("LSTM", hidden=3))
        bias = params["encoder.fwd.b"].data
        assert np.array_equal(bias[3:6], np.ones(3))
        assert not bias[:3].any() and not bias[6:].any()

    def test_check_shapes(self):
        config = tiny_config()
        params = init_params(config)
        params.check_shapes(config)
        with pytest.raises(ModelError):
            params.check_shapes(tiny_config(hidden=4))
        arrays = params.arrays()
        del arrays["head.b"]
        with pytest.raises(ModelError):
            ModelParams.from_arrays(arrays).check_shapes(config)


class TestForward:
    @pytest.mark.parametrize("variant", VARIANTS)
    def test_distributions(self, variant, features):
        config = tiny_config(variant)
        scores = forward(["kamar", "bersih", "."], features, init_params(config), config)
        assert scores.probs.shape == (3, NUM_LABELS)
        assert np.allclose(scores.probs.sum(axis=1), 1.0)
        assert (scores.probs > 0).all()

    def test_attention_weights_are_distributions(self, features, model_config):
        scores = forward(["saya", "suka", "kolam", "renang"], features, init_params(model_config), model_config)
        trace = scores.trace
        assert len(trace.aspect_attention) == model_config.attention_layers
        for weights in trace.aspect_attention + trace.opinion_attention:
            assert weights.shape == (1, 4)
            assert weights.sum() == pytest.approx(1.0)
        assert trace.final_aspect_prototype.shape == (1, model_config.state_dim)

    def test_encoder_softmax_has_no_attention_trace(self, features):
        config = tiny_config(architecture=ModelArchitecture.ENCODER_SOFTMAX)
        scores = forward(["sarapan", "enak"], features, init_params(config), config)
        assert scores.trace.aspect_attention == []
        assert scores.trace.final_aspect_prototype is None

    def test_encode_shape(self, features, model_config):
        states = encode(features.featurize(["kamar", "bersih", "."]), init_params(model_config), model_config)
        assert states.shape == (3, model_config.state_dim)

    def test_encode_rejects_wrong_dim(self, model_config):
        with pytest.raises(ModelError):
            encode(np.zeros((2, 7)), init_params(model_config), model_config)

    def test_empty_sentence(self, features, model_config):
        with pytest.raises(ModelError):
            forward([], features, init_params(model_config), model_config)

    def test_predict_decodes_argmax(self, features, model_config):
        params = init_params(model_config)
        tokens = ["handuk", "kotor", "dan", "wifi", "lambat", "."]
        tags, spans = predict(tokens, features, params, model_config)
        with inference_mode():
            expected = forward(tokens, features, params, model_config).tags()
        assert tags == expected
        assert spans == decode_bio(tags)

    def test_predict_many_matches_single(self, features, model_config, toy_corpus):
        params = init_params(model_config)
        token_lists = [s.tokens for s in toy_corpus]
        batched = predict_many(token_lists, features, params, model_config, batch_size=4)
        assert batched == [predict(tokens, features, params, model_config)[0] for tokens in token_lists]


def with_zero_scores(params):
    """Cópia dos parâmetros com todos os vetores de pontuação v zerados"""
    arrays = params.arrays()
    for name in arrays:
        if name.endswith(".v"):
            arrays[name] = np.zeros_like(arrays[name])
    return ModelParams.from_arrays(arrays)


class TestAttentionLayer:
    def test_two_tokens_by_hand(self):
        params = ModelParams.from_arrays(
            {
                "attention.0.aspect.G": np.array([[[1.0, 0.0], [0.0, 0.0]]]),
                "attention.0.aspect.D": np.array([[[0.0, 0.0], [0.0, 1.0]]]),
                "attention.0.aspect.v": np.array([1.0, 0.0]),
                "attention.0.opinion.G": np.zeros((1, 2, 2)),
                "attention.0.opinion.D": np.zeros((1, 2, 2)),
                "attention.0.opinion.v": np.array([0.0, 1.0]),
            }
        )
        states = [constant([[1.0, 0.0]]), constant([[0.0, 1.0]])]
        with inference_mode():
            out = attention_layer(states, constant([[1.0, 0.0]]), constant([[0.0, 1.0]]), params, 0)

        t = np.tanh(1.0)
        first, second = 1.0 / (1.0 + np.exp(-t)), 1.0 / (1.0 + np.exp(t))
        assert np.allclose(out.r_aspect[0].numpy(), [[t, 0.0]], rtol=0, atol=1e-15)
        assert np.allclose(out.r_aspect[1].numpy(), [[0.0, t]], rtol=0, atol=1e-15)
        assert np.allclose(out.alpha_aspect.numpy(), [[first, second]], rtol=0, atol=1e-15)
        assert np.allclose(out.u_aspect.numpy(), [[1.0 + first, second]], rtol=0, atol=1e-15)

        assert all(not r.numpy().any() for r in out.r_opinion)
        assert np.array_equal(out.alpha_opinion.numpy(), [[0.5, 0.5]])
        assert np.array_equal(out.u_opinion.numpy(), [[0.5, 1.5]])

    def test_zero_scores_give_uniform_attention(self, features, model_config):
        params = with_zero_scores(init_params(model_config))
        tokens = ["saya", "suka", "kolam", "renang", "."]
        with inference_mode():
            H = encode(features.featurize(tokens), params, model_config)
            states = [constant(H.numpy()[t : t + 1]) for t in range(len(tokens))]
            u_a = constant(params["prototype.aspect"].numpy()[None])
            u_o = constant(params["prototype.opinion"].numpy()[None])
            out = attention_layer(states, u_a, u_o, params, 0)

        mean = H.numpy().mean(axis=0)
        for alpha in (out.alpha_aspect, out.alpha_opinion):
            assert np.allclose(alpha.numpy(), np.full((1, 5), 0.2), rtol=0, atol=1e-15)
        assert np.allclose(out.u_aspect.numpy()[0] - u_a.numpy()[0], mean, rtol=0, atol=1e-12)
        assert np.allclose(out.u_opinion.numpy()[0] - u_o.numpy()[0], mean, rtol=0, atol=1e-12)

    def test_prototypes_grow_by_layer_count_times_mean(self, features):
        config = tiny_config(layers=3)
        params = with_zero_scores(init_params(config))
        tokens = ["tempat", "tidur", "tidak", "bersih"]
        with inference_mode():
            mean = encode(features.featurize(tokens), params, config).numpy().mean(axis=0)
            trace = forward(tokens, features, params, config).trace

        for task, final in (("aspect", trace.final_aspect_prototype), ("opinion", trace.final_opinion_prototype)):
            expected = params[f"prototype.{task}"].numpy() + 3 * mean
            assert np.allclose(final[0], expected, rtol=0, atol=1e-12)

    def test_rejects_mismatched_prototype(self, model_config):
        params = init_params(model_config)
        states = [constant(np.ones((1, model_config.state_dim)))]
        with pytest.raises(ValueError):
            attention_layer(states, constant(np.ones((1, 2))), constant(np.ones((1, 2))), params, 0)


class TestEncoderStructure:
    @pytest.mark.parametrize("variant", VARIANTS)
    def test_zero_parameters_are_a_fixed_point(self, variant):
        config = tiny_config(variant)
        arrays = init_params(config).arrays()
        for name in arrays:
            if name.startswith("encoder."):
                arrays[name] = np.zeros_like(arrays[name])
        inputs = np.random.default_rng(2).normal(size=(5, config.input_dim))
        with inference_mode():
            H = encode(inputs, ModelParams.from_arrays(arrays), config)
        assert np.array_equal(H.numpy(), np.zeros((5, config.state_dim)))

    @pytest.mark.parametrize("variant", ["B-GRU", "B-LSTM"])
    def test_reversed_input_with_swapped_directions(self, variant):
        config = tiny_config(variant, hidden=3)
        params = init_params(config)
        swapped = {}
        for name, value in params.arrays().items():
            if name.startswith("encoder.fwd."):
                name = name.replace("encoder.fwd.", "encoder.bwd.")
            elif name.startswith("encoder.bwd."):
                name = name.replace("encoder.bwd.", "encoder.fwd.")
            swapped[name] = value
        inputs = np.random.default_rng(6).normal(size=(6, config.input_dim))

        with inference_mode():
            H = encode(inputs, params, config).numpy()
            mirrored = encode(inputs[::-1].copy(), ModelParams.from_arrays(swapped), config).numpy()

        hidden = config.hidden_units
        expected = np.concatenate([H[::-1, hidden:], H[::-1, :hidden]], axis=1)
        assert np.allclose(mirrored, expected, rtol=0, atol=1e-14)


class TestArgmaxTies:
    def test_ties_go_to_lowest_code(self):
        probs = np.array(
            [
                [0.3, 0.3, 0.1, 0.1, 0.2],
                [0.1, 0.1, 0.35, 0.35, 0.1],
                [0.2, 0.2, 0.2, 0.2, 0.2],
            ]
        )
        tags, spans = decode_scores(TokenScores(tokens=["a", "b", "c"], probs=probs))
        assert tags == [B_A, B_S, B_A]
        assert spans == [
            EntitySpan(kind=EntityKind.ASPECT, start=0, end=1),
            EntitySpan(kind=EntityKind.SENTIMENT, start=1, end=2),
            EntitySpan(kind=EntityKind.ASPECT, start=2, end=3),
        ]

    def test_one_hot_scores_decode_to_span(self):
        probs = np.eye(5)[[0, 1, 4]]
        tags, spans = decode_scores(TokenScores(tokens=["kolam", "renang", "."], probs=probs))
        assert tags == [B_A, I_A, O]
        assert spans == [EntitySpan(kind=EntityKind.ASPECT, start=0, end=2)]

    @pytest.mark.parametrize("bias, expected", [(np.zeros(5), B_A), (np.array([0.0, 0.0, 1.0, 1.0, 0.0]), B_S)])
    def test_predict_with_tied_logits(self, features, model_config, bias, expected):
        arrays = init_params(model_config).arrays()
        arrays["head.W"] = np.zeros_like(arrays["head.W"])
        arrays["head.b"] = bias
        tags, _ = predict(["sarapan", "enak", "."], features, ModelParams.from_arrays(arrays), model_config)
        assert tags == [expected] * 3


class TestBatching:
    def test_make_batch(self, features, toy_corpus):
        batch = make_batch([s.tokens for s in toy_corpus[:2]], features, [s.tags for s in toy_corpus[:2]])
        assert batch.inputs.shape == (2, 4, features.dim)
        assert batch.lengths == [3, 4]
        assert batch.gold[0, 3] == O.code
        assert not batch.inputs[0, 3].any()

    def test_pad_to_too_small(self, features):
        with pytest.raises(ModelError):
            make_batch([["kamar", "bersih", "."]], features, pad_to=2)

    def test_empty_member_rejected(self, features):
        with pytest.raises(ModelError):
            make_batch([["kamar"], []], features)

    @pytest.mark.parametrize("variant", VARIANTS)
    def test_padding_is_bitwise_invisible(self, variant, features, toy_corpus):
        config = tiny_config(variant)
        sentences = toy_corpus[:3]
        tokens, tags = [s.tokens for s in sentences], [s.tags for s in sentences]

        grads = []
        losses = []
        for pad_to in (None, 11):
            params = init_params(config)
            loss = batch_loss(make_batch(tokens, features, tags, pad_to=pad_to), params, config)
            loss.backward()
            losses.append(loss.item())
            grads.append({name: t.grad.copy() for name, t in params.items()})

        assert losses[0] == losses[1]
        for name in grads[0]:
            assert np.array_equal(grads[0][name], grads[1][name]), name

    @pytest.mark.parametrize("variant", VARIANTS)
    def test_padding_is_bitwise_invisible_with_dropout(self, variant, features, toy_corpus):
        config = tiny_config(variant, dropout=0.5)
        sentences = toy_corpus[:2]
        tokens, tags = [s.tokens for s in sentences], [s.tags for s in sentences]

        grads = []
        losses = []
        draws = []
        for pad_to in (None, 11):
            params = init_params(config)
            rng = np.random.default_rng(5)
            batch = make_batch(tokens, features, tags, pad_to=pad_to)
            loss = batch_loss(batch, params, config, training=True, rng=rng)
            loss.backward()
            losses.append(loss.item())
            grads.append({name: t.grad.copy() for name, t in params.items()})
            draws.append(rng.random())

        assert losses[0] == losses[1]
        assert draws[0] == draws[1]
        for name in grads[0]:
            assert np.array_equal(grads[0][name], grads[1][name]), name

    def test_padded_positions_get_no_attention(self, features, model_config, toy_corpus):
        tokens = [s.tokens for s in toy_corpus[:2]]
        with inference_mode():
            output = forward_batch(make_batch(tokens, features, pad_to=6), init_params(model_config), model_config)
        for weights in output.trace.aspect_attention + output.trace.opinion_attention:
            assert np.array_equal(weights[0, 3:], np.zeros(3))
            assert np.array_equal(weights[1, 4:], np.zeros(2))
            assert np.allclose(weights.sum(axis=1), 1.0)

    def test_batch_rows_match_single_sentences(self, features, model_config, toy_corpus):
        params = init_params(model_config)
        tokens = [s.tokens for s in toy_corpus]
        with inference_mode():
            probs = forward_batch(make_batch(tokens, features), params, model_config).probabilities()
            for row, sentence in enumerate(tokens):
                alone = forward(sentence, features, params, model_config).probs
                assert np.allclose(probs[row, : len(sentence)], alone, rtol=0, atol=1e-12)


def test_loss_graph_is_released(features, model_config, toy_corpus):
    batch = make_batch([toy_corpus[0].tokens], features, [toy_corpus[0].tags])
    loss = batch_loss(batch, init_params(model_config), model_config)
    loss.backward()
    with pytest.raises(GraphError):
        loss.backward()


def test_batch_loss_requires_gold(features, model_config):
    with pytest.raises(ModelError):
        batch_loss(make_batch([["kamar"]], features), init_params(model_config), model_config)


def test_dropout_only_while_training(features, toy_corpus):
    config = tiny_config(dropout=0.5)
    params = init_params(config)
    batch = make_batch([toy_corpus[2].tokens], features, [toy_corpus[2].tags])
    with inference_mode():
        first = batch_loss(batch, params, config).item()
        second = batch_loss(batch, params, config).item()
        noisy = batch_loss(batch, params, config, training=True, rng=np.random.default_rng(1)).item()
    assert first == second
    assert noisy != first


def test_memorizes_a_sentence(features):
    """Uma sentença de 8 tokens deve ser decorada em poucos passos"""
    sentence = LabeledSentence(
        tokens=["tempat", "tidur", "tidak", "bersih", "dan", "sarapan", "enak", "."],
        tags=[B_A, I_A, B_S, I_S, O, B_A, B_S, O],
    )
    config = tiny_config("B-LSTM", hidden=8, layers=2, k=3)
    params = init_params(config)
    optimizer = NadamOptimizer(params, TrainConfig(lr=0.01, batch_size=1))
    batch = make_batch([sentence.tokens], features, [sentence.tags])

    for _ in range(200):
        params.zero_grad()
        batch_loss(batch, params, config).backward()
        optimizer.step()
        with inference_mode():
            tags = forward(sentence.tokens, features, params, config).tags()
        if tags == sentence.tags:
            break
    assert tags == sentence.tags
