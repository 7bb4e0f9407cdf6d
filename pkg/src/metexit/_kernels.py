"""Hot loops of the density algebra.

Every kernel has a numba version and a pure-numpy version with identical
results (up to summation order). Setting ``METEXIT_PURE_NUMPY=1`` in the
environment before import selects the numpy path, which is also used when
numba is not installed.
"""

from __future__ import annotations

import os

import numpy as np

_FLAG = os.environ.get("METEXIT_PURE_NUMPY", "").strip().lower()
_WANT_NUMBA = _FLAG in ("", "0", "false", "no")

try:
    if not _WANT_NUMBA:
        raise ImportError
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - depends on environment
    numba = None
    HAVE_NUMBA = False

BACKEND = "numba" if HAVE_NUMBA else "numpy"


def check_table(llr_max: float, n_bins: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Output positions of the check-node rule for every pair of magnitude bins.

    For bins ``i, j >= 1`` the exact output ``y = 2 atanh(tanh(x_i/2) tanh(x_j/2))``
    lies at fractional bin position ``u = k + f``. Returns ``k`` and the
    weights given to bin ``k + 1`` for positive (``G``) and negative (``H``)
    output mass.

    The split is not plain linear interpolation: for symmetric inputs the
    negative mass of each pair is exactly ``exp(-y)`` times the positive
    mass, and the weights are chosen so that after splitting every bin
    keeps the ratio ``exp(-x_k)``, while the total mass is conserved.

    The top bin holds all saturated mass and acts as an infinite LLR, so a
    pair involving it lands exactly on the other magnitude.
    """
    half = (n_bins - 1) // 2
    w = llr_max / half
    x = np.arange(half + 1) * w
    # 1 - tanh(x/2) computed without cancellation
    e = 2.0 / (np.exp(x) + 1.0)
    t = 1.0 - e
    one_minus_p = e[:, None] + e[None, :] - e[:, None] * e[None, :]
    one_plus_p = 1.0 + t[:, None] * t[None, :]
    with np.errstate(divide="ignore"):
        y = np.log(one_plus_p) - np.log(one_minus_p)
    u = y / w
    idx = np.arange(half + 1)
    u = np.minimum(u, np.minimum(idx[:, None], idx[None, :]).astype(float))
    u[half, :] = idx
    u[:, half] = idx
    k = np.floor(u).astype(np.int32)
    f = u - k
    g = np.expm1(-f * w) / np.expm1(-w)
    h = g * np.exp((f - 1.0) * w)
    for a in (g, h):
        a[0, :] = 0.0
        a[:, 0] = 0.0
    k[0, :] = 0
    k[:, 0] = 0
    return k, g, h


def _support(a: np.ndarray) -> tuple[int, int]:
    nz = np.flatnonzero(a)
    if nz.size == 0:
        return 1, 0
    return max(int(nz[0]), 1), int(nz[-1])


def _chk_numpy(ap, an, bp, bn, K, G, H):
    half = ap.size - 1
    op = np.zeros(half + 2)
    on = np.zeros(half + 2)
    ia, ja = _support(ap + an)
    ib, jb = _support(bp + bn)
    if ia > ja or ib > jb:
        return op, on
    sa = slice(ia, ja + 1)
    sb = slice(ib, jb + 1)
    same = np.outer(ap[sa], bp[sb]) + np.outer(an[sa], bn[sb])
    diff = np.outer(ap[sa], bn[sb]) + np.outer(an[sa], bp[sb])
    k = K[sa, sb].ravel()
    g = G[sa, sb].ravel()
    h = H[sa, sb].ravel()
    same = same.ravel()
    diff = diff.ravel()
    n = half + 2
    op += np.bincount(k, same * (1.0 - g), minlength=n)
    op += np.bincount(k + 1, same * g, minlength=n)
    on += np.bincount(k, diff * (1.0 - h), minlength=n)
    on += np.bincount(k + 1, diff * h, minlength=n)
    return op, on


if HAVE_NUMBA:

    @numba.njit(cache=True, nogil=True)
    def _chk_numba(ap, an, bp, bn, K, G, H):  # pragma: no cover - compiled
        half = ap.size - 1
        op = np.zeros(half + 2)
        on = np.zeros(half + 2)
        ib = 1
        while ib <= half and bp[ib] == 0.0 and bn[ib] == 0.0:
            ib += 1
        jb = half
        while jb >= ib and bp[jb] == 0.0 and bn[jb] == 0.0:
            jb -= 1
        for i in range(1, half + 1):
            a1 = ap[i]
            a2 = an[i]
            if a1 == 0.0 and a2 == 0.0:
                continue
            for j in range(ib, jb + 1):
                b1 = bp[j]
                b2 = bn[j]
                s = a1 * b1 + a2 * b2
                d = a1 * b2 + a2 * b1
                k = K[i, j]
                g = G[i, j]
                h = H[i, j]
                op[k] += s * (1.0 - g)
                op[k + 1] += s * g
                on[k] += d * (1.0 - h)
                on[k + 1] += d * h
        return op, on

    @numba.njit(cache=True, nogil=True)
    def _chk_square_numba(ap, an, K, G, H):  # pragma: no cover - compiled
        # a (x) a: visit i <= j only, off-diagonal pairs counted twice
        half = ap.size - 1
        op = np.zeros(half + 2)
        on = np.zeros(half + 2)
        for i in range(1, half + 1):
            a1 = ap[i]
            a2 = an[i]
            if a1 == 0.0 and a2 == 0.0:
                continue
            s = a1 * a1 + a2 * a2
            d = 2.0 * a1 * a2
            k = K[i, i]
            g = G[i, i]
            h = H[i, i]
            op[k] += s * (1.0 - g)
            op[k + 1] += s * g
            on[k] += d * (1.0 - h)
            on[k + 1] += d * h
            for j in range(i + 1, half + 1):
                b1 = ap[j]
                b2 = an[j]
                if b1 == 0.0 and b2 == 0.0:
                    continue
                s = 2.0 * (a1 * b1 + a2 * b2)
                d = 2.0 * (a1 * b2 + a2 * b1)
                k = K[i, j]
                g = G[i, j]
                h = H[i, j]
                op[k] += s * (1.0 - g)
                op[k + 1] += s * g
                on[k] += d * (1.0 - h)
                on[k + 1] += d * h
        return op, on


def chk_magnitudes(ap, an, bp, bn, K, G, H, same_input: bool = False):
    """Pairwise check-node combine on sign/magnitude split densities.

    ``ap[k]``/``an[k]`` hold the mass at ``+k*w``/``-k*w`` for ``k >= 1``
    (index 0 is ignored). Returns ``(op, on)`` of length ``half + 2`` where
    index 0 collects output mass that interpolates onto LLR zero.
    """
    if HAVE_NUMBA:
        if same_input:
            return _chk_square_numba(ap, an, K, G, H)
        return _chk_numba(ap, an, bp, bn, K, G, H)
    return _chk_numpy(ap, an, bp, bn, K, G, H)


def chk_magnitudes_numpy(ap, an, bp, bn, K, G, H):
    """The numpy path regardless of the backend flag (benchmarks, equivalence tests)."""
    return _chk_numpy(ap, an, bp, bn, K, G, H)
