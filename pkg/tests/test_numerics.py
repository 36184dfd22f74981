# tests/test_numerics.py

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from modules import numerics as nx
from modules.errors import (ConfigurationError, ContractError, DegenerateInputError, DimensionError,
                            NumericalError)
from modules.numerics import ComputeTape, Tensor, backward, default_dtype, finite_diff_check

GRAD_TOL = 1e-4


def weighted(out: Tensor, rng: np.random.Generator) -> Tensor:
    """Scalar sum(out * R) with fixed random R so no coordinate is trivially zero"""
    weights = Tensor(rng.normal(size=out.shape), dtype=out.dtype)
    return nx.reduce_sum(nx.mul(out, weights))


def grad_error(op, inputs, index, seed):
    """finite_diff_check of weighted(op(*inputs)) with respect to inputs[index]"""
    def f(t):
        args = list(inputs)
        args[index] = t
        return weighted(op(*args), np.random.default_rng(seed))
    return finite_diff_check(f, inputs[index])


# --- examples ---

def test_matmul_identity_and_hand_product():
    a = Tensor([[1, 2], [3, 4]])
    np.testing.assert_array_equal(nx.matmul(Tensor(np.eye(2)), a).data, a.data)
    np.testing.assert_array_equal(nx.matmul(a, Tensor([[5], [6]])).data, [[17], [39]])


def test_matmul_rejects_mismatched_shapes():
    with pytest.raises(DimensionError):
        nx.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_softmax_examples():
    np.testing.assert_allclose(nx.softmax(Tensor([0.0, 0.0])).data, [0.5, 0.5])
    np.testing.assert_allclose(nx.softmax(Tensor([0.0, math.log(3)])).data, [0.25, 0.75], rtol=1e-6)


def test_softmax_mask_gives_masked_positions_zero():
    probs = nx.softmax(Tensor([1.0, 2.0, 3.0]), mask=np.array([True, False, True])).data
    assert probs[1] == 0.0
    assert probs.sum() == pytest.approx(1.0, abs=1e-6)


def test_layer_norm_examples():
    gamma, beta = Tensor(np.ones(2)), Tensor(np.zeros(2))
    np.testing.assert_allclose(nx.layer_norm(Tensor([1.0, 3.0]), gamma, beta).data, [-1.0, 1.0], atol=1e-6)
    np.testing.assert_allclose(nx.layer_norm(Tensor([4.0, 4.0]), gamma, beta).data, [0.0, 0.0])
    collapsed = nx.layer_norm(Tensor([[1.0, 7.0]]), Tensor(np.zeros(2)), Tensor([0.5, -2.0]))
    np.testing.assert_allclose(collapsed.data, [[0.5, -2.0]])


@given(st.floats(min_value=-50.0, max_value=50.0, width=32), st.sampled_from([7, 16, 32, 64]))
def test_layer_norm_of_a_constant_row_is_zero_in_float32(value, width):
    out = nx.layer_norm(Tensor(np.full((1, width), value)), Tensor(np.ones(width)), Tensor(np.zeros(width)))
    assert out.dtype == np.float32
    np.testing.assert_array_equal(out.data, np.zeros((1, width), dtype=np.float32))


def test_layer_norm_of_a_constant_row_is_zero_for_a_tenth():
    out = nx.layer_norm(Tensor(np.full((1, 7), 0.1)), Tensor(np.ones(7)), Tensor(np.zeros(7)))
    np.testing.assert_array_equal(out.data, np.zeros((1, 7)))


def test_activation_examples():
    assert nx.activation(Tensor([0.0]), "tanh").data[0] == 0.0
    with default_dtype(np.float64):
        np.testing.assert_allclose(nx.activation(Tensor([20.0, -20.0]), "tanh").data, [1.0, -1.0], atol=1e-9)
    assert nx.activation(Tensor([0.0]), "gelu").data[0] == 0.0
    with pytest.raises(ConfigurationError):
        nx.activation(Tensor([0.0]), "relu")


def test_conv1d_examples():
    x = Tensor(np.array([1.0, 2.0, 3.0]).reshape(1, 3, 1))
    out = nx.conv1d(x, Tensor(np.ones((3, 1, 1))), Tensor(np.zeros(1)))
    np.testing.assert_array_equal(out.data.reshape(-1), [3.0, 6.0, 5.0])

    rng = np.random.default_rng(0)
    tokens = Tensor(rng.normal(size=(2, 5, 4)))
    delta = np.zeros((3, 4, 4))
    delta[1] = np.eye(4)
    np.testing.assert_allclose(nx.conv1d(tokens, Tensor(delta), Tensor(np.zeros(4))).data, tokens.data)
    zero = nx.conv1d(tokens, Tensor(np.zeros((3, 4, 4))), Tensor(np.zeros(4)))
    assert not zero.data.any()


def test_conv1d_rejects_even_kernel():
    with pytest.raises(ConfigurationError):
        nx.conv1d(Tensor(np.ones((1, 4, 2))), Tensor(np.ones((2, 2, 2))), Tensor(np.zeros(2)))


def test_max_pool_examples():
    x = Tensor(np.array([1.0, 3.0, 2.0, 5.0]).reshape(1, 4, 1))
    out, out_mask = nx.max_pool1d(x, 2, 2, np.ones((1, 4)))
    np.testing.assert_array_equal(out.data.reshape(-1), [3.0, 5.0])
    np.testing.assert_array_equal(out_mask, [[1, 1]])

    masked = Tensor(np.array([1.0, 9.0, 100.0, 2.0]).reshape(1, 4, 1))
    out, _ = nx.max_pool1d(masked, 2, 2, np.array([[1, 1, 0, 1]]))
    np.testing.assert_array_equal(out.data.reshape(-1), [9.0, 2.0])

    constant = Tensor(np.full((1, 6, 2), 4.0))
    out, _ = nx.max_pool1d(constant, 3, 2, np.ones((1, 6)))
    assert np.all(out.data == 4.0)


def test_max_pool_window_without_valid_position_emits_zero():
    x = Tensor(np.array([5.0, 6.0, 7.0, 8.0]).reshape(1, 4, 1))
    out, out_mask = nx.max_pool1d(x, 2, 2, np.array([[1, 1, 0, 0]]))
    np.testing.assert_array_equal(out.data.reshape(-1), [6.0, 0.0])
    np.testing.assert_array_equal(out_mask, [[1, 0]])


def test_max_pool_keeps_partial_last_window():
    assert nx.pooled_length(5, 2, 2) == 3
    assert nx.pooled_length(1, 2, 2) == 1
    x = Tensor(np.arange(5, dtype=float).reshape(1, 5, 1))
    out, _ = nx.max_pool1d(x, 2, 2, np.ones((1, 5)))
    np.testing.assert_array_equal(out.data.reshape(-1), [1.0, 3.0, 4.0])


def test_masked_mean_examples():
    tokens = Tensor([[[1.0, 1.0], [3.0, 3.0]]])
    np.testing.assert_array_equal(nx.masked_mean(tokens, np.array([[1, 1]])).data, [[2.0, 2.0]])
    np.testing.assert_array_equal(nx.masked_mean(tokens, np.array([[1, 0]])).data, [[1.0, 1.0]])
    with pytest.raises(DegenerateInputError):
        nx.masked_mean(tokens, np.array([[0, 0]]))


def test_cosine_similarity_of_zero_vector_is_degenerate():
    with pytest.raises(DegenerateInputError):
        nx.cosine_similarity(Tensor([[0.0, 0.0]]), Tensor([[1.0, 0.0]]))


def test_non_finite_output_is_numerical_error():
    with pytest.raises(NumericalError):
        nx.scale(Tensor([1e30]), 1e30)


# --- backward ---

def test_backward_sum_of_squares(float64):
    x = Tensor([1.0, -2.0, 3.5], requires_grad=True)
    with ComputeTape() as tape:
        loss = nx.reduce_sum(nx.square(x))
    backward(loss, tape)
    np.testing.assert_allclose(x.grad, 2 * x.data)
    assert loss.grad == pytest.approx(1.0)


def test_backward_tanh(float64):
    x = Tensor(np.linspace(-2, 2, 7), requires_grad=True)
    with ComputeTape() as tape:
        loss = nx.reduce_sum(nx.activation(x, "tanh"))
    backward(loss, tape)
    np.testing.assert_allclose(x.grad, 1 - np.tanh(x.data) ** 2, atol=1e-6)


def test_backward_matmul_matches_finite_differences(float64):
    rng = np.random.default_rng(3)
    a = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    b = Tensor(rng.normal(size=(4, 2)), requires_grad=True)
    assert finite_diff_check(lambda t: nx.reduce_sum(nx.matmul(t, b)), a) <= GRAD_TOL
    assert finite_diff_check(lambda t: nx.reduce_sum(nx.matmul(a, t)), b) <= GRAD_TOL


def test_backward_rejects_non_scalar_loss():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with ComputeTape() as tape:
        out = nx.square(x)
    with pytest.raises(ContractError):
        backward(out, tape)


def test_no_tape_means_nothing_recorded():
    x = Tensor([1.0, 2.0], requires_grad=True)
    out = nx.square(x)
    assert not out.requires_grad


def test_untracked_inputs_are_not_recorded():
    with ComputeTape() as tape:
        nx.square(Tensor([1.0, 2.0]))
    assert len(tape) == 0


def test_leaf_grads_accumulate(float64):
    x = Tensor([1.0, 2.0], requires_grad=True)
    for _ in range(2):
        with ComputeTape() as tape:
            loss = nx.reduce_sum(nx.scale(x, 3.0))
        backward(loss, tape)
    np.testing.assert_allclose(x.grad, [6.0, 6.0])


def test_finite_diff_check_examples(float64):
    rng = np.random.default_rng(11)
    x = Tensor(rng.normal(size=(4, 3)))
    assert finite_diff_check(lambda t: nx.reduce_sum(nx.square(t)), x) <= 1e-6
    assert finite_diff_check(lambda t: nx.reduce_sum(Tensor([2.0])), x) == 0.0


def test_sampled_finite_diff_check_reaches_small_gradients(float64):
    weights = np.ones(40)
    weights[:3] = 10.0

    def dropped_tail(t):
        # correct on the three heavy coordinates, zero everywhere else
        keep = (np.arange(40) < 3).astype(np.float64)
        return nx._result("dropped_tail", t.data * weights, (t,), lambda g: (g * weights * keep,))

    x = Tensor(np.linspace(-1.0, 1.0, 40))
    assert finite_diff_check(lambda t: nx.reduce_sum(dropped_tail(t)), x, max_coords=3) > 0.5
    scaled = Tensor(weights)
    assert finite_diff_check(lambda t: nx.reduce_sum(nx.mul(t, scaled)), x, max_coords=3) <= 1e-6


# --- gradient properties over random shapes ---

SEEDS = st.integers(min_value=0, max_value=2 ** 31 - 1)
DIMS = st.integers(min_value=1, max_value=4)


@settings(max_examples=100, deadline=None)
@given(seed=SEEDS, rows=DIMS, cols=DIMS)
def test_elementwise_gradients(seed, rows, cols):
    with default_dtype(np.float64):
        rng = np.random.default_rng(seed)
        a = Tensor(rng.normal(size=(rows, cols)))
        b = Tensor(rng.normal(size=(rows, cols)))
        bias = Tensor(rng.normal(size=(cols,)))
        assert grad_error(nx.add, [a, bias], 1, seed) <= GRAD_TOL
        assert grad_error(nx.sub, [a, b], 1, seed) <= GRAD_TOL
        assert grad_error(nx.mul, [a, b], 0, seed) <= GRAD_TOL
        assert grad_error(lambda t: nx.scale(t, -1.7), [a], 0, seed) <= GRAD_TOL
        assert grad_error(nx.absolute, [a], 0, seed) <= GRAD_TOL
        assert grad_error(lambda t: nx.activation(t, "tanh"), [a], 0, seed) <= GRAD_TOL
        assert grad_error(lambda t: nx.activation(t, "gelu"), [a], 0, seed) <= GRAD_TOL
        assert grad_error(lambda t: nx.softmax(t, axis=-1), [a], 0, seed) <= GRAD_TOL


@settings(max_examples=100, deadline=None)
@given(seed=SEEDS, batch=DIMS, steps=st.integers(min_value=1, max_value=6),
       hidden=st.integers(min_value=3, max_value=5))
def test_sequence_gradients(seed, batch, steps, hidden):
    with default_dtype(np.float64):
        rng = np.random.default_rng(seed)
        x = Tensor(rng.normal(size=(batch, steps, hidden)))
        gamma = Tensor(rng.normal(size=(hidden,)))
        beta = Tensor(rng.normal(size=(hidden,)))
        mask = np.ones((batch, steps), dtype=np.int8)
        mask[:, rng.integers(1, steps + 1):] = 0
        kernel = Tensor(rng.normal(size=(3, hidden, 2)))
        bias = Tensor(rng.normal(size=(2,)))
        assert grad_error(nx.layer_norm, [x, gamma, beta], 0, seed) <= GRAD_TOL
        assert grad_error(nx.layer_norm, [x, gamma, beta], 1, seed) <= GRAD_TOL
        assert grad_error(nx.conv1d, [x, kernel, bias], 0, seed) <= GRAD_TOL
        assert grad_error(nx.conv1d, [x, kernel, bias], 1, seed) <= GRAD_TOL
        assert grad_error(lambda t: nx.masked_mean(t, mask), [x], 0, seed) <= GRAD_TOL
        assert grad_error(lambda t: nx.max_pool1d(t, 2, 2, mask)[0], [x], 0, seed) <= GRAD_TOL
        assert grad_error(lambda t: nx.select_position(t, 0), [x], 0, seed) <= GRAD_TOL


@settings(max_examples=100, deadline=None)
@given(seed=SEEDS, rows=st.integers(min_value=1, max_value=5), classes=st.integers(min_value=2, max_value=4))
def test_similarity_and_loss_gradients(seed, rows, classes):
    with default_dtype(np.float64):
        rng = np.random.default_rng(seed)
        u = Tensor(rng.normal(size=(rows, 5)))
        v = Tensor(rng.normal(size=(rows, 5)))
        logits = Tensor(rng.normal(size=(rows, classes)))
        labels = rng.integers(0, classes, size=rows)
        table = Tensor(rng.normal(size=(6, 3)))
        ids = rng.integers(0, 6, size=(rows, 4))
        assert grad_error(nx.cosine_similarity, [u, v], 0, seed) <= GRAD_TOL
        assert finite_diff_check(lambda t: nx.cross_entropy(t, labels), logits) <= GRAD_TOL
        assert grad_error(lambda t: nx.embedding(t, ids), [table], 0, seed) <= GRAD_TOL
        assert grad_error(lambda a, b: nx.concat([a, b], axis=-1), [u, v], 1, seed) <= GRAD_TOL


# --- invariants ---

@given(st.lists(st.floats(min_value=-50, max_value=50), min_size=1, max_size=8),
       st.floats(min_value=-20, max_value=20))
def test_softmax_sums_to_one_and_is_shift_invariant(values, shift):
    with default_dtype(np.float64):
        probs = nx.softmax(Tensor(values)).data
        shifted = nx.softmax(Tensor(np.asarray(values) + shift)).data
    assert probs.sum() == pytest.approx(1.0, abs=1e-6)
    np.testing.assert_allclose(probs, shifted, atol=1e-6)


@given(st.integers(min_value=0, max_value=10_000))
def test_layer_norm_standardizes_non_constant_vectors(seed):
    rng = np.random.default_rng(seed)
    with default_dtype(np.float64):
        x = Tensor(rng.normal(scale=3.0, size=(3, 6)) + 1.0)
        out = nx.layer_norm(x, Tensor(np.ones(6)), Tensor(np.zeros(6))).data
    assert np.all(np.abs(out.mean(axis=-1)) <= 1e-6)
    np.testing.assert_allclose(out.var(axis=-1), 1.0, atol=1e-4)


@given(st.integers(min_value=0, max_value=10_000))
def test_masked_reductions_ignore_masked_values(seed):
    rng = np.random.default_rng(seed)
    mask = np.array([[1, 1, 1, 0, 0], [1, 0, 0, 0, 0]], dtype=np.int8)
    base = rng.normal(size=(2, 5, 3))
    noisy = np.where(mask[..., None] == 1, base, rng.normal(scale=100.0, size=base.shape))
    np.testing.assert_array_equal(nx.masked_mean(Tensor(base), mask).data,
                                  nx.masked_mean(Tensor(noisy), mask).data)
    pooled, _ = nx.max_pool1d(Tensor(base), 2, 2, mask)
    pooled_noisy, _ = nx.max_pool1d(Tensor(noisy), 2, 2, mask)
    np.testing.assert_array_equal(pooled.data, pooled_noisy.data)


def test_masked_mean_is_permutation_invariant_over_valid_tokens():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(1, 4, 3))
    mask = np.array([[1, 1, 1, 0]])
    permuted = x[:, [2, 0, 1, 3], :]
    np.testing.assert_allclose(nx.masked_mean(Tensor(x), mask).data,
                               nx.masked_mean(Tensor(permuted), mask).data, rtol=1e-6)


def test_repeated_forward_passes_are_bit_identical():
    rng = np.random.default_rng(2)
    x = Tensor(rng.normal(size=(2, 4, 3)))
    kernel = Tensor(rng.normal(size=(3, 3, 3)))
    first = nx.conv1d(x, kernel, Tensor(np.zeros(3))).data
    second = nx.conv1d(x, kernel, Tensor(np.zeros(3))).data
    assert first.tobytes() == second.tobytes()
