# tests/test_interaction.py
import numpy as np
import pytest

from ipa.errors import DimensionError
from ipa.interaction import InteractionKind, PairWeight, init_values, interact, interact_backward, param_size
from ipa.linalg import SeededRng
from tests.conftest import assert_grad_close, numeric_grad

T_I = np.array([1.0, 2.0])
T_J = np.array([3.0, 4.0])


def test_forward_examples():
    assert np.array_equal(interact(T_I, T_J, PairWeight(InteractionKind.NAIVE, 2)), [3, 8])
    assert np.array_equal(interact(T_I, T_J, PairWeight(InteractionKind.WEIGHTED, 2, [2.0])), [6, 16])
    assert np.array_equal(interact(T_I, T_J, PairWeight(InteractionKind.DIAGONAL, 2, [1.0, 0.5])), [3, 4])
    projected = PairWeight(InteractionKind.PROJECTED, 2, [[1.0, 0.0], [1.0, 1.0]])
    assert np.array_equal(interact(T_I, T_J, projected), [9, 8])


def test_every_kind_reduces_to_hadamard_at_identity():
    for kind in InteractionKind:
        w = PairWeight(kind, 2)
        assert np.array_equal(interact(T_I, T_J, w), T_I * T_J)
        assert np.array_equal(w.matrix(), np.eye(2))


def test_param_sizes():
    assert [param_size(kind, 4) for kind in InteractionKind] == [0, 1, 4, 16]


def test_naive_backward_is_product_rule():
    grad_i, grad_j, grad_w = interact_backward(T_I, T_J, PairWeight(InteractionKind.NAIVE, 2), np.ones(2))
    assert np.array_equal(grad_i, T_J)
    assert np.array_equal(grad_j, T_I)
    assert grad_w.size == 0


@pytest.mark.parametrize("kind", list(InteractionKind))
def test_backward_matches_finite_differences(kind):
    rng = SeededRng(21)
    k = 3
    t_i, t_j, up = rng.normal(size=k), rng.normal(size=k), rng.normal(size=k)
    w = PairWeight(kind, k, rng.normal(size=param_size(kind, k)))
    grad_i, grad_j, grad_w = interact_backward(t_i, t_j, w, up)

    def objective():
        return float(np.dot(up, interact(t_i, t_j, w)))

    assert_grad_close(grad_i, numeric_grad(objective, t_i), label="t_i")
    assert_grad_close(grad_j, numeric_grad(objective, t_j), label="t_j")
    if w.values.size:
        assert_grad_close(grad_w, numeric_grad(objective, w.values), label="W")


def test_projected_init_is_near_identity():
    values = init_values(InteractionKind.PROJECTED, 4, 10, SeededRng(3))
    assert values.shape == (10, 4, 4)
    assert np.max(np.abs(values - np.eye(4))) < 0.1


def test_shape_errors():
    with pytest.raises(DimensionError):
        interact([1.0, 2.0, 3.0], T_J, PairWeight(InteractionKind.NAIVE, 2))
    with pytest.raises(DimensionError):
        PairWeight(InteractionKind.DIAGONAL, 2, [1.0])
