# tests/test_aggregate.py
import numpy as np
import pytest

from ipa.aggregate import AggregatorKind, AggSpec, AggWeights, CombineMode, aggregate, aggregate_backward
from ipa.errors import ConfigError, DimensionError
from ipa.linalg import SeededRng
from tests.conftest import assert_grad_close, numeric_grad

LAYERS = [np.array([[[1.0, 2.0]]]), np.array([[[3.0, 4.0]]])]


def spec_for(kind, widths=(1, 1), k=2, mode=CombineMode.SUM, **kwargs):
    return AggSpec(kind, mode, list(widths), k, **kwargs)


def test_direct_sum():
    spec = spec_for(AggregatorKind.DIRECT)
    assert np.array_equal(aggregate(LAYERS, spec, AggWeights.build(spec)), [[4.0, 6.0]])


def test_layer_weights():
    spec = spec_for(AggregatorKind.LAYER)
    weights = AggWeights([np.asarray(1.0), np.asarray(0.5)])
    assert np.array_equal(aggregate(LAYERS, spec, weights), [[2.5, 4.0]])


@pytest.mark.parametrize("kind", [AggregatorKind.LAYER, AggregatorKind.TERM, AggregatorKind.ELEMENT])
def test_unit_weights_equal_direct(kind):
    layers = [SeededRng(l).normal(size=(4, 3, 2)) for l in range(3)]
    for mode in CombineMode:
        direct = spec_for(AggregatorKind.DIRECT, (3, 3, 3), mode=mode)
        weighted = spec_for(kind, (3, 3, 3), mode=mode)
        assert np.array_equal(aggregate(layers, weighted, AggWeights.build(weighted)),
                              aggregate(layers, direct, AggWeights.build(direct)))


def test_concat_layout():
    spec = spec_for(AggregatorKind.DIRECT, mode=CombineMode.CONCAT)
    assert np.array_equal(aggregate(LAYERS, spec, AggWeights.build(spec)), [[1.0, 2.0, 3.0, 4.0]])
    assert spec.output_size() == 4


def test_param_counts_in_sum_mode():
    m, k, depth = 5, 4, 3
    counts = [spec_for(kind, [m] * depth, k).n_params() for kind in AggregatorKind]
    assert counts == [0, depth, depth * m, depth * m * k]


def test_linear_in_the_stack():
    rng = SeededRng(6)
    spec = spec_for(AggregatorKind.ELEMENT, (3, 3), 2)
    weights = AggWeights([np.array(rng.normal(size=s), dtype=np.float64) for s in spec.weight_shapes()])
    layers = [rng.normal(size=(2, 3, 2)) for _ in range(2)]
    assert np.allclose(aggregate([2.5 * h for h in layers], spec, weights),
                       2.5 * aggregate(layers, spec, weights), rtol=1e-12)


def test_sum_mode_requires_equal_widths():
    with pytest.raises(ConfigError):
        spec_for(AggregatorKind.DIRECT, (3, 10))
    assert spec_for(AggregatorKind.DIRECT, (3, 10), mode=CombineMode.CONCAT).output_size() == 26


def test_term_scalar_pool():
    spec = spec_for(AggregatorKind.TERM, (2, 2), 2, mode=CombineMode.CONCAT, term_scalar_pool=True)
    layers = [np.array([[[1.0, 2.0], [3.0, 4.0]]]), np.array([[[1.0, 1.0], [0.0, 2.0]]])]
    weights = AggWeights([np.array([1.0, 2.0]), np.array([0.5, 1.0])])
    assert np.array_equal(aggregate(layers, spec, weights), [[3.0, 14.0, 1.0, 2.0]])
    with pytest.raises(ConfigError):
        spec_for(AggregatorKind.ELEMENT, term_scalar_pool=True)


def test_direct_backward_passes_upstream_through():
    spec = spec_for(AggregatorKind.DIRECT)
    upstream = np.array([[0.3, -0.7]])
    layer_grads, weight_grads = aggregate_backward(LAYERS, spec, AggWeights.build(spec), upstream)
    assert weight_grads == []
    for g in layer_grads:
        assert np.array_equal(g.reshape(1, -1), upstream)


def test_layer_weight_gradient_is_dot_product():
    spec = spec_for(AggregatorKind.LAYER)
    upstream = np.array([[0.5, 2.0]])
    _, weight_grads = aggregate_backward(LAYERS, spec, AggWeights.build(spec), upstream)
    assert float(weight_grads[0]) == pytest.approx(0.5 * 1.0 + 2.0 * 2.0)
    assert float(weight_grads[1]) == pytest.approx(0.5 * 3.0 + 2.0 * 4.0)


@pytest.mark.parametrize("kind", list(AggregatorKind))
@pytest.mark.parametrize("mode,widths,pool", [(CombineMode.SUM, (3, 3, 3), False),
                                              (CombineMode.CONCAT, (3, 4, 2), False),
                                              (CombineMode.CONCAT, (3, 4, 2), True)])
def test_backward_matches_finite_differences(kind, mode, widths, pool):
    if pool and kind is AggregatorKind.ELEMENT:
        pytest.skip("no scalar pooling for Element weights")
    rng = SeededRng(17)
    k = 2
    spec = spec_for(kind, widths, k, mode=mode, term_scalar_pool=pool)
    weights = AggWeights([np.array(rng.normal(size=s), dtype=np.float64) for s in spec.weight_shapes()])
    layers = [rng.normal(size=(3, w, k)) for w in widths]
    upstream = rng.normal(size=(3, spec.output_size()))

    def objective():
        return float(np.sum(upstream * aggregate(layers, spec, weights)))

    layer_grads, weight_grads = aggregate_backward(layers, spec, weights, upstream)
    for l, h in enumerate(layers):
        assert_grad_close(layer_grads[l], numeric_grad(objective, h), label=f"layer {l + 1}")
    for l, alpha in enumerate(weights.values):
        assert_grad_close(weight_grads[l], numeric_grad(objective, alpha), label=f"alpha {l + 1}")


def test_layer_shape_mismatch():
    spec = spec_for(AggregatorKind.DIRECT)
    with pytest.raises(DimensionError):
        aggregate(LAYERS[:1], spec, AggWeights.build(spec))
    with pytest.raises(DimensionError):
        aggregate_backward(LAYERS, spec, AggWeights.build(spec), np.zeros((1, 3)))
