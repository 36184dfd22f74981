# tests/test_pooling.py

import numpy as np
import pytest

from config.model_config import CNNHeadConfig, HeadKind, PoolingHeadConfig
from modules import numerics as nx
from modules.errors import ConfigurationError, DegenerateInputError
from modules.numerics import Tensor, finite_diff_check
from modules.pooling import build_head, pool_cls, pool_max, pool_mean
from factories import HEAD_KINDS, head_config


def test_cls_selects_position_zero():
    rng = np.random.default_rng(0)
    tokens = rng.normal(size=(2, 5, 3))
    out = pool_cls(Tensor(tokens)).data
    np.testing.assert_array_equal(out, tokens[:, 0, :].astype(np.float32))
    tokens[:, 3, :] += 10.0
    np.testing.assert_array_equal(pool_cls(Tensor(tokens)).data, out)


def test_mean_examples():
    tokens = Tensor([[[1.0, 1.0], [3.0, 3.0]]])
    np.testing.assert_array_equal(pool_mean(tokens, np.array([[1, 1]])).data, [[2.0, 2.0]])
    np.testing.assert_array_equal(pool_mean(tokens, np.array([[1, 0]])).data, [[1.0, 1.0]])


def test_max_examples():
    tokens = Tensor([[[1.0, 5.0], [3.0, 2.0]]])
    np.testing.assert_array_equal(pool_max(tokens, np.array([[1, 1]])).data, [[3.0, 5.0]])
    np.testing.assert_array_equal(pool_max(tokens, np.array([[0, 1]])).data, [[3.0, 2.0]])


def test_max_dominates_mean():
    rng = np.random.default_rng(1)
    tokens = Tensor(rng.normal(size=(3, 6, 4)))
    mask = np.array([[1] * 6, [1, 1, 1, 0, 0, 0], [1, 0, 0, 0, 0, 0]])
    assert np.all(pool_max(tokens, mask).data >= pool_mean(tokens, mask).data - 1e-6)


@pytest.mark.parametrize("pool", [pool_mean, pool_max])
def test_all_masked_row_is_degenerate(pool):
    with pytest.raises(DegenerateInputError):
        pool(Tensor(np.ones((2, 3, 2))), np.array([[1, 1, 0], [0, 0, 0]]))


def test_cnn_head_with_zero_weights_outputs_zeros():
    head = build_head(head_config(HeadKind.CNN), hidden_dim=4)
    for kernel, bias in head.conv_layers:
        kernel.data[:] = 0.0
        bias.data[:] = 0.0
    out = head.forward(Tensor(np.random.default_rng(2).normal(size=(2, 7, 4))), np.ones((2, 7)))
    assert not out.data.any()


def test_cnn_head_with_all_masked_row_is_degenerate():
    head = build_head(head_config(HeadKind.CNN), hidden_dim=4)
    with pytest.raises(DegenerateInputError):
        head.forward(Tensor(np.ones((1, 4, 4))), np.zeros((1, 4)))


@pytest.mark.parametrize("kind", HEAD_KINDS)
@pytest.mark.parametrize("steps", [1, 2, 5, 8])
def test_every_head_outputs_hidden_width(kind, steps):
    head = build_head(head_config(kind), hidden_dim=6, seed=3)
    tokens = Tensor(np.random.default_rng(steps).normal(size=(2, steps, 6)))
    assert head.forward(tokens, np.ones((2, steps))).shape == (2, 6)


@pytest.mark.parametrize("kind", HEAD_KINDS)
def test_every_head_ignores_masked_positions(kind):
    rng = np.random.default_rng(4)
    head = build_head(head_config(kind), hidden_dim=5, seed=1)
    mask = np.array([[1, 1, 1, 1, 1, 0, 0, 0], [1, 1, 0, 0, 0, 0, 0, 0]], dtype=np.int8)
    tokens = rng.normal(size=(2, 8, 5))
    noisy = np.where(mask[..., None] == 1, tokens, rng.normal(scale=50.0, size=tokens.shape))
    np.testing.assert_array_equal(head.forward(Tensor(tokens), mask).data,
                                  head.forward(Tensor(noisy), mask).data)


def test_only_mean_head_is_permutation_invariant():
    rng = np.random.default_rng(5)
    tokens = rng.normal(size=(1, 6, 4))
    permuted = tokens[:, [3, 1, 5, 0, 2, 4], :]
    mask = np.ones((1, 6))
    mean = build_head(head_config(HeadKind.MEAN), hidden_dim=4)
    np.testing.assert_allclose(mean.forward(Tensor(tokens), mask).data,
                               mean.forward(Tensor(permuted), mask).data, rtol=1e-5)
    for kind in (HeadKind.CLS, HeadKind.CNN):
        head = build_head(head_config(kind), hidden_dim=4)
        assert not np.allclose(head.forward(Tensor(tokens), mask).data,
                               head.forward(Tensor(permuted), mask).data)


def test_parameter_free_heads():
    for kind in (HeadKind.CLS, HeadKind.MEAN, HeadKind.MAX):
        assert list(build_head(head_config(kind), hidden_dim=4).named_parameters()) == []
    cnn = dict(build_head(head_config(HeadKind.CNN), hidden_dim=4).named_parameters())
    assert sorted(cnn) == ["conv.0.bias", "conv.0.kernel", "conv.1.bias", "conv.1.kernel"]
    assert cnn["conv.0.kernel"].shape == (3, 4, 4)


def test_cnn_head_config_rules():
    assert PoolingHeadConfig(kind="cnn").cnn == CNNHeadConfig()
    with pytest.raises(ConfigurationError):
        PoolingHeadConfig(kind="mean", cnn={})
    with pytest.raises(ConfigurationError):
        CNNHeadConfig(kernel=4)


def test_cnn_head_gradients_match_finite_differences(float64):
    rng = np.random.default_rng(6)
    head = build_head(head_config(HeadKind.CNN), hidden_dim=4, seed=2)
    for kernel, _ in head.conv_layers:
        kernel.data *= 25.0
    tokens = Tensor(rng.normal(size=(2, 7, 4)))
    mask = np.array([[1] * 7, [1, 1, 1, 1, 0, 0, 0]])
    weights = Tensor(rng.normal(size=(2, 4)))

    def loss(_):
        return nx.reduce_sum(nx.mul(head.forward(tokens, mask), weights))

    for seed, (name, tensor) in enumerate(head.named_parameters()):
        assert finite_diff_check(loss, tensor, max_coords=8, seed=seed) <= 1e-4, name
