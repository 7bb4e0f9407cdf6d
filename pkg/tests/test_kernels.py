import os
import subprocess
import sys

import numpy as np
import pytest

from metexit import _kernels
from metexit.density import GridSpec


def _random_split(rng, half, support):
    ap = np.zeros(half + 1)
    an = np.zeros(half + 1)
    idx = rng.choice(np.arange(1, half + 1), size=support, replace=False)
    ap[idx] = rng.random(support)
    an[idx] = rng.random(support) * ap[idx] * 0.3
    return ap, an


@pytest.mark.skipif(not _kernels.HAVE_NUMBA, reason="numba not installed")
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_numba_matches_numpy(seed):
    g = GridSpec(15.0, 601)
    K, G, H = g.check_table()
    rng = np.random.default_rng(seed)
    ap, an = _random_split(rng, g.half, 120)
    bp, bn = _random_split(rng, g.half, 80)
    op1, on1 = _kernels.chk_magnitudes(ap, an, bp, bn, K, G, H)
    op2, on2 = _kernels.chk_magnitudes_numpy(ap, an, bp, bn, K, G, H)
    np.testing.assert_allclose(op1, op2, rtol=1e-12, atol=1e-15)
    np.testing.assert_allclose(on1, on2, rtol=1e-12, atol=1e-15)
    sq1 = _kernels.chk_magnitudes(ap, an, ap, an, K, G, H, same_input=True)
    sq2 = _kernels.chk_magnitudes_numpy(ap, an, ap, an, K, G, H)
    np.testing.assert_allclose(sq1[0], sq2[0], rtol=1e-12, atol=1e-15)
    np.testing.assert_allclose(sq1[1], sq2[1], rtol=1e-12, atol=1e-15)


def _positions(g):
    K, G, H = g.check_table()
    w = g.width
    # recover the fractional offset from the positive-side weight
    f = -np.log1p(G * np.expm1(-w)) / w
    return K, G, H, f


def test_check_table_bounds():
    g = GridSpec(10.0, 201)
    K, G, H, f = _positions(g)
    i = np.arange(g.half + 1)
    u = K + f
    assert np.all(u <= np.minimum(i[:, None], i[None, :]) + 1e-9)
    assert np.all((G >= 0) & (G < 1) & (H >= 0) & (H < 1))
    np.testing.assert_array_equal(K, K.T)
    assert np.all(np.diff(u[50, 1:]) >= -1e-9)


def test_check_table_matches_atanh_rule():
    g = GridSpec(10.0, 201)
    K, G, H, f = _positions(g)
    w = g.width
    for i, j in [(3, 7), (40, 41), (99, 99), (5, 90)]:
        y = 2 * np.arctanh(np.tanh(i * w / 2) * np.tanh(j * w / 2))
        assert (K[i, j] + f[i, j]) * w == pytest.approx(min(y, min(i, j) * w), rel=1e-9)


def test_check_table_top_bin_is_saturated():
    # the top bin stands for every LLR beyond the grid, so it passes the other input through
    g = GridSpec(10.0, 201)
    K, G, H, f = _positions(g)
    top = g.half
    np.testing.assert_array_equal(K[top], np.arange(top + 1))
    np.testing.assert_array_equal(K[:, top], np.arange(top + 1))
    assert not G[top].any() and not H[:, top].any()


def test_split_keeps_pairwise_symmetry():
    # negative mass exp(-y) * s split with H must sit at exp(-x) times the positive split with G
    g = GridSpec(10.0, 201)
    K, G, H, f = _positions(g)
    w = g.width
    i, j = 37, 52
    k = K[i, j]
    y = (k + f[i, j]) * w
    s = 1.0
    d = np.exp(-y) * s
    pos = np.array([s * (1 - G[i, j]), s * G[i, j]])
    neg = np.array([d * (1 - H[i, j]), d * H[i, j]])
    x = np.array([k, k + 1]) * w
    np.testing.assert_allclose(neg, np.exp(-x) * pos, rtol=1e-12)


def test_pure_numpy_flag_selects_backend():
    env = dict(os.environ, METEXIT_PURE_NUMPY="1")
    out = subprocess.run(
        [sys.executable, "-c", "import metexit; print(metexit.BACKEND)"],
        env=env, capture_output=True, text=True, check=True,
    )
    assert out.stdout.strip() == "numpy"
