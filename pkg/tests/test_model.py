# tests/test_model.py
import itertools

import numpy as np
import pytest

from ipa.codes import ClassifierSpec, ModelConfig, Task, parse_code, preset
from ipa.errors import ConfigError, DimensionError, FeatureLookupError
from ipa.linalg import SeededRng
from ipa.model import IpaModel
from tests.conftest import assert_grad_close, numeric_grad

VOCAB = (4, 3, 5)


def one_hot_batch(vocab_sizes, rows, seed=0):
    rng = SeededRng(seed, 7)
    ids = np.stack([rng.integers(0, v, size=rows) for v in vocab_sizes], axis=1)[:, :, None]
    return ids, np.ones(ids.shape)


def multi_hot_batch(vocab_sizes, rows, seed=0):
    """Two slots per field: the second is active (mean pooled) on about half the rows"""
    rng = SeededRng(seed, 8)
    ids = np.stack([rng.integers(0, v, size=(rows, 2)) for v in vocab_sizes], axis=1)
    second = rng.uniform(size=(rows, len(vocab_sizes))) < 0.5
    weights = np.where(second[..., None], 0.5, np.array([1.0, 0.0]))
    return ids, weights


def randomize(model, seed, scale=0.5):
    rng = SeededRng(seed, 5)
    for i, p in enumerate(model.params.values()):
        p[...] = rng.derive(i).normal(0.0, scale, size=p.shape)


def second_order(name, k, vocab=VOCAB, seed=3):
    model = IpaModel(preset(name, k=k, first_order=False).bind(vocab), seed=0)
    randomize(model, seed)
    model.params["bias"][...] = 0.0
    return model


def field_vectors(model, ids):
    """(B, M, K) embeddings of one-hot ids"""
    return model.params["embedding"][model.offsets[None, :] + ids[:, :, 0]]


def fm_oracle_gap(rows, seed):
    """Largest deviation of FM scores and the fast identity from pair enumeration"""
    model = second_order("FM", 4, seed=seed)
    ids, weights = one_hot_batch(VOCAB, rows, seed=seed)
    v = field_vectors(model, ids)
    pairs = sum(np.sum(v[:, i] * v[:, j], axis=1) for i in range(3) for j in range(i + 1, 3))
    closed = 0.5 * np.sum(v.sum(axis=1) ** 2 - np.sum(v ** 2, axis=1), axis=1)
    scores = model.predict(ids, weights)
    return max(np.max(np.abs(scores - pairs)), np.max(np.abs(closed - pairs)))


def weighted_oracle_gap(name, rows, seed, k=3):
    model = second_order(name, k, seed=seed)
    ids, weights = one_hot_batch(VOCAB, rows, seed=seed)
    v = field_vectors(model, ids)
    layer = model.layer_params.layers[0]
    w = layer.dense() / layer.scale
    expected = np.zeros(rows)
    for i in range(3):
        for j in range(i + 1, 3):
            if name == "FwFM":
                expected += w[i, j] * np.sum(v[:, i] * v[:, j], axis=1)
            elif name == "FvFM":
                expected += np.sum(v[:, i] * w[i, j] * v[:, j], axis=1)
            else:
                expected += np.sum((v[:, i] @ w[i, j]) * v[:, j], axis=1)
    return np.max(np.abs(model.predict(ids, weights) - expected))


class TestForward:
    def test_fm_hand_example(self):
        model = IpaModel(preset("FM", k=1, first_order=False).bind((1, 1, 1)))
        model.params["embedding"][:, 0] = [1.0, 2.0, 3.0]
        ids, weights = one_hot_batch((1, 1, 1), 1)
        assert model.predict(ids, weights)[0] == pytest.approx(11.0, abs=1e-12)

    def test_zero_embeddings_give_zero_score(self):
        for code in ["PFL", "WGT", "DF'E", "NFD"]:
            model = IpaModel(ModelConfig(parse_code(code), k=3, depth=3, first_order=True, vocab_sizes=VOCAB))
            model.params["embedding"][...] = 0.0
            ids, weights = one_hot_batch(VOCAB, 4)
            assert np.array_equal(model.predict(ids, weights), np.zeros(4))

    def test_fm_matches_pair_enumeration_and_closed_form(self):
        assert fm_oracle_gap(16, seed=1) <= 1e-10

    @pytest.mark.parametrize("name", ["FwFM", "FvFM", "FmFM"])
    def test_weighted_families_match_pair_enumeration(self, name):
        assert weighted_oracle_gap(name, 16, seed=2) <= 1e-10

    @pytest.mark.slow
    @pytest.mark.parametrize("name", ["FM", "FwFM", "FvFM", "FmFM"])
    def test_presets_match_pair_enumeration_on_many_inputs(self, name):
        gap = fm_oracle_gap(1000, seed=11) if name == "FM" else weighted_oracle_gap(name, 1000, seed=11)
        assert gap <= 1e-10

    def test_first_order_and_bias_add_linear_terms(self):
        config = preset("FM", k=2).bind(VOCAB)
        model = IpaModel(config)
        model.params["embedding"][...] = 0.0
        model.params["first_order"][...] = np.arange(12.0)
        model.params["bias"][...] = 0.5
        ids = np.array([[[1], [2], [0]]])
        assert model.predict(ids, np.ones(ids.shape))[0] == pytest.approx(0.5 + 1.0 + 6.0 + 7.0)

    def test_numeric_fields_scale_their_embedding(self):
        model = IpaModel(ModelConfig(parse_code("NFD"), k=2, depth=2, include_first_layer=False,
                                     bias=False, vocab_sizes=(1, 1)))
        model.params["embedding"][...] = [[1.0, 2.0], [3.0, 1.0]]
        ids = np.zeros((1, 2, 1), dtype=np.int64)
        weights = np.array([[[2.0], [0.5]]])
        # h2 terms (2,4)*(1.5,0.5) and (1.5,0.5)*(2,4), summed
        assert model.predict(ids, weights)[0] == pytest.approx(2 * (3.0 + 2.0))

    def test_batch_errors(self):
        model = IpaModel(ModelConfig(parse_code("PFL"), k=2, depth=2, vocab_sizes=VOCAB))
        with pytest.raises(DimensionError):
            model.predict(np.zeros((2, 2, 1), dtype=np.int64), np.ones((2, 2, 1)))
        with pytest.raises(FeatureLookupError):
            model.predict(np.array([[[0], [3], [0]]]), np.ones((1, 3, 1)))

    def test_unbound_config(self):
        with pytest.raises(ConfigError):
            IpaModel(ModelConfig(parse_code("PFL")))

    def test_same_seed_same_parameters(self):
        config = ModelConfig(parse_code("PGE"), k=3, depth=3, vocab_sizes=VOCAB,
                             classifier=ClassifierSpec.parse("mlp:4"))
        a, b = IpaModel(config, seed=9), IpaModel(config, seed=9)
        for name in a.params:
            assert np.array_equal(a.params[name], b.params[name])
        assert not np.array_equal(a.params["embedding"], IpaModel(config, seed=10).params["embedding"])


class TestBookkeeping:
    def test_alpha_weight_products(self):
        model = IpaModel(ModelConfig(parse_code("WFL"), k=2, depth=3, vocab_sizes=(2, 2, 2)))
        model.params["agg.2"][...] = 0.5
        model.params["agg.3"][...] = -2.0
        norms = model.weight_norms()
        # Weighted init is all ones: every present cell is the identity, ||I||_F^2 = K
        assert norms == pytest.approx([np.sqrt(2 * 6), np.sqrt(2 * 6)])
        assert model.layer_alphas() == [1.0, 0.5, -2.0]
        assert model.alpha_weight_products() == pytest.approx({2: 0.5 * norms[0], 3: 2.0 * norms[1]})

    def test_init_bias_to_log_odds(self):
        model = IpaModel(ModelConfig(parse_code("PFL"), k=2, depth=2, vocab_sizes=(2, 2)))
        model.init_bias(np.array([1.0, 0.0, 0.0, 0.0]))
        assert float(model.params["bias"]) == pytest.approx(np.log(0.25 / 0.75))

    @pytest.mark.parametrize("code", ["PFL", "WGT", "DF'E", "NFD"])
    def test_stored_parameters_match_accounting(self, code):
        model = IpaModel(ModelConfig(parse_code(code), k=3, depth=3, global_width=(2, 4), first_order=True,
                                     classifier=ClassifierSpec.parse("mlp:5"), vocab_sizes=VOCAB))
        assert model.n_params() == model.expected_params()

    def test_snapshot_restore(self):
        model = IpaModel(ModelConfig(parse_code("DFE"), k=2, depth=3, vocab_sizes=(2, 2)))
        saved = model.snapshot()
        randomize(model, 4)
        model.restore(saved)
        for name, p in model.params.items():
            assert np.array_equal(p, saved[name])


CODES = ["".join(c) for c in itertools.product("NWDP", ["F", "G", "F'"], "DLTE")]


def check_gradients(code, seed, classifier="sum", first_order=False, ids_weights=None, include_first_layer=True,
                    **options):
    config = ModelConfig(parse_code(code), k=2, depth=3, global_width=(2,), dropout=0.0, first_order=first_order,
                         classifier=ClassifierSpec.parse(classifier), include_first_layer=include_first_layer,
                         vocab_sizes=VOCAB, **options)
    model = IpaModel(config, seed=seed)
    randomize(model, seed)
    ids, weights = ids_weights or one_hot_batch(VOCAB, 5, seed)
    upstream = SeededRng(seed, 6).normal(size=ids.shape[0])

    def objective():
        scores, _ = model.forward(ids, weights)
        return float(np.dot(upstream, scores))

    _, cache = model.forward(ids, weights)
    grads = model.backward(cache, upstream)
    assert set(grads) == set(model.params)
    for name, p in model.params.items():
        assert_grad_close(grads[name], numeric_grad(objective, p), label=f"{code} {name}")


class TestGradients:
    @pytest.mark.parametrize("code", CODES)
    def test_every_code(self, code):
        check_gradients(code, seed=1)

    @pytest.mark.slow
    @pytest.mark.parametrize("seed", range(2, 22))
    @pytest.mark.parametrize("code", CODES)
    def test_every_code_many_seeds(self, code, seed):
        check_gradients(code, seed)

    @pytest.mark.parametrize("classifier", ["linear", "mlp:4,3"])
    def test_classifier_heads(self, classifier):
        check_gradients("PFL", seed=2, classifier=classifier)
        check_gradients("WGT", seed=3, classifier=classifier)

    def test_first_order_and_multi_hot(self):
        check_gradients("DFE", seed=4, first_order=True, ids_weights=multi_hot_batch(VOCAB, 6, seed=4))

    def test_without_first_layer_aggregation(self):
        check_gradients("PF'L", seed=5, include_first_layer=False)

    @pytest.mark.parametrize("code", ["PFD", "DFL", "WFE", "NFT", "PF'L"])
    def test_symmetric_share(self, code):
        check_gradients(code, seed=7, symmetric_share=True)
        check_gradients(code, seed=8, symmetric_share=True, first_order=True, include_first_layer=False)

    @pytest.mark.parametrize("code", ["PFD", "DFL", "WFE", "NFT", "PF'L"])
    def test_include_self(self, code):
        check_gradients(code, seed=9, include_self=True)

    def test_dropout_mask_scales_gradient(self):
        config = ModelConfig(parse_code("PFL"), k=2, depth=2, dropout=0.5, vocab_sizes=VOCAB)
        model = IpaModel(config)
        randomize(model, 6)
        ids, weights = one_hot_batch(VOCAB, 4)
        _, cache = model.forward(ids, weights, train=True, rng=SeededRng(0))
        assert set(np.unique(cache.dropout_mask)) <= {0.0, 2.0}
        with pytest.raises(ConfigError):
            model.forward(ids, weights, train=True)


def test_regression_task_config():
    model = IpaModel(ModelConfig(parse_code("NFD"), k=2, depth=2, task=Task.REGRESSION, vocab_sizes=(1, 1)))
    model.init_bias(np.array([1.0, 3.0]))
    assert float(model.params["bias"]) == pytest.approx(2.0)
