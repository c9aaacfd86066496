import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spectralnet import ndtensor as nd
from spectralnet.haar import (
    HAAR_KERNELS,
    SUBBANDS,
    haar_forward,
    haar_inverse,
    haar_pyramid,
    kernel_matrix,
    max_levels,
)


def test_constant_image():
    bands = haar_forward(np.full((1, 6, 8), 2.5))
    np.testing.assert_array_equal(bands["LL"], np.full((1, 3, 4), 10.0))
    for name in ("LH", "HL", "HH"):
        np.testing.assert_array_equal(bands[name], 0.0)


def test_single_block_values():
    bands = haar_forward(np.array([[1.0, 2.0], [3.0, 4.0]]))
    assert {n: float(bands[n][0, 0]) for n in SUBBANDS} == {"LL": 10.0, "LH": 4.0, "HL": 2.0, "HH": 0.0}


def test_block_sum_formula():
    x = np.random.default_rng(0).normal(size=(6, 4))
    expected = x[0::2, 0::2] + x[0::2, 1::2] + x[1::2, 0::2] + x[1::2, 1::2]
    np.testing.assert_allclose(haar_forward(x)["LL"], expected, rtol=1e-15)


def test_odd_extent_rejected():
    with pytest.raises(ValueError):
        haar_forward(np.zeros((3, 4)))


def test_inverse_examples():
    out = haar_inverse({"LL": np.array([[12.0]]), "LH": np.zeros((1, 1)), "HL": np.zeros((1, 1)), "HH": np.zeros((1, 1))})
    np.testing.assert_array_equal(out, np.full((2, 2), 3.0))
    out = haar_inverse({n: np.array([[v]]) for n, v in zip(SUBBANDS, (10.0, 4.0, 2.0, 0.0))})
    np.testing.assert_array_equal(out, [[1.0, 2.0], [3.0, 4.0]])
    with pytest.raises(ValueError):
        haar_inverse({"LL": np.zeros((2, 2)), "LH": np.zeros((2, 2)), "HL": np.zeros((2, 2)), "HH": np.zeros((1, 2))})


def test_kernels_orthogonal():
    k = kernel_matrix()
    assert k.dtype.kind == "i"
    np.testing.assert_array_equal(k.T @ k, 4 * np.eye(4, dtype=k.dtype))
    with pytest.raises(ValueError):
        HAAR_KERNELS["LL"][0, 0] = 2


def test_perfect_reconstruction_1000_images():
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(1000):
        h, w = 2 * rng.integers(1, 9, size=2)
        x = rng.normal(scale=10.0, size=(int(rng.integers(1, 4)), h, w))
        worst = max(worst, np.abs(haar_inverse(haar_forward(x)) - x).max())
    assert worst <= 1e-10


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), h=st.integers(1, 8), w=st.integers(1, 8))
def test_energy_ratio(seed, h, w):
    x = np.random.default_rng(seed).normal(size=(2, 2 * h, 2 * w))
    bands = haar_forward(x)
    energy = sum(float((bands[n] ** 2).sum()) for n in SUBBANDS)
    assert energy / float((x**2).sum()) == pytest.approx(4.0, rel=1e-12)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), c=st.integers(1, 4), h=st.integers(1, 8), w=st.integers(1, 8))
def test_matches_conv2d_bitwise(seed, c, h, w):
    x = np.random.default_rng(seed).normal(size=(2, c, 2 * h, 2 * w))
    bands = haar_forward(x)
    for name in SUBBANDS:
        k = nd.Tensor(HAAR_KERNELS[name].astype(float).reshape(1, 1, 2, 2))
        for ch in range(c):
            out = nd.conv2d(nd.Tensor(x[:, ch : ch + 1]), k, stride=2).data[:, 0]
            assert np.array_equal(out, bands[name][:, ch])


@pytest.mark.parametrize("dy,dx", [(0, 1), (1, 0), (3, 5)])
def test_shift_of_constant_leaves_subbands(dy, dx):
    x = np.full((10, 12), -1.75)
    shifted = np.roll(x, (dy, dx), axis=(0, 1))
    a, b = haar_forward(x), haar_forward(shifted)
    for name in SUBBANDS:
        np.testing.assert_array_equal(a[name], b[name])


def test_pyramid_sizes():
    pyr = haar_pyramid(np.zeros((3, 64, 64)), 4)
    assert [pyr.levels[t]["LL"].shape for t in range(4)] == [(3, 32, 32), (3, 16, 16), (3, 8, 8), (3, 4, 4)]
    assert pyr.stacked(2).shape == (12, 16, 16)
    pyr = haar_pyramid(np.zeros((3, 24, 24)), 3)
    assert [pyr.levels[t]["HH"].shape[-1] for t in range(3)] == [12, 6, 3]
    assert max_levels(24) == 3 and max_levels(64) == 6 and max_levels(12, 8) == 2


def test_pyramid_levels_use_previous_ll_only():
    x = np.random.default_rng(2).normal(size=(2, 16, 16))
    pyr = haar_pyramid(x, 3)
    for t in range(1, 3):
        expected = haar_forward(pyr.levels[t - 1]["LL"])
        for name in SUBBANDS:
            np.testing.assert_array_equal(pyr.levels[t][name], expected[name])
    assert np.abs(pyr.reconstruct() - x).max() <= 1e-10


def test_pyramid_divisibility_error_names_max_levels():
    with pytest.raises(ValueError, match="at most 3 levels"):
        haar_pyramid(np.zeros((24, 24)), 4)
    with pytest.raises(ValueError):
        haar_pyramid(np.zeros((8, 8)), 0)
