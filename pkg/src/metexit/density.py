"""Quantized L-densities on a uniform LLR grid.

A density is a vector of probability masses, one per bin, on a grid that is
symmetric about zero with a bin centred exactly at LLR 0. Mass that would
fall outside ``[-llr_max, +llr_max]`` is folded into the end bins, so the
end bins stand for "saturated" messages.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import fft as sp_fft
from scipy.optimize import brentq
from scipy.special import ndtr

from . import _kernels
from ._io import atomic_write_text, fmt

__all__ = [
    "DensityError",
    "GridSpec",
    "DEFAULT_GRID",
    "LlrDensity",
    "delta_zero",
    "delta_inf",
    "bi_awgn_density",
    "gaussian_density",
    "gaussian_density_matched",
    "entropy",
    "error_probability",
    "mean_llr",
    "var_convolve",
    "chk_convolve",
    "var_power",
    "chk_power",
    "mixture",
    "poly_apply_var",
    "poly_apply_chk",
    "symmetry_error",
    "total_variation",
    "write_density_csv",
    "read_density_csv",
]

# direct convolution below this many multiply-adds, FFT above
_DIRECT_LIMIT = 250_000
# FFT round-off floor, relative to the peak of the result
_FFT_FLOOR = 1e-15
# masses below this are flushed to zero before pairwise combining (subnormal products are slow)
_FLUSH = 1e-100


class DensityError(ValueError):
    """Raised for invalid grids, parameters, or mismatched densities."""


@dataclass(frozen=True)
class GridSpec:
    llr_max: float = 30.0
    n_bins: int = 4097

    def __post_init__(self):
        if not (self.llr_max > 0 and math.isfinite(self.llr_max)):
            raise DensityError(f"llr_max must be positive, got {self.llr_max}")
        if self.n_bins < 3 or self.n_bins % 2 != 1:
            raise DensityError(f"n_bins must be an odd integer >= 3, got {self.n_bins}")

    @property
    def half(self) -> int:
        return (self.n_bins - 1) // 2

    @property
    def width(self) -> float:
        return 2.0 * self.llr_max / (self.n_bins - 1)

    @property
    def centers(self) -> np.ndarray:
        return _centers(self.llr_max, self.n_bins)

    @property
    def entropy_kernel(self) -> np.ndarray:
        """``log2(1 + exp(-x))`` at the bin centres."""
        return _entropy_kernel(self.llr_max, self.n_bins)

    def check_table(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return _check_table(self.llr_max, self.n_bins)


DEFAULT_GRID = GridSpec()


@lru_cache(maxsize=8)
def _centers(llr_max: float, n_bins: int) -> np.ndarray:
    half = (n_bins - 1) // 2
    x = np.arange(-half, half + 1) * (llr_max / half)
    x.setflags(write=False)
    return x


@lru_cache(maxsize=8)
def _entropy_kernel(llr_max: float, n_bins: int) -> np.ndarray:
    k = np.logaddexp(0.0, -_centers(llr_max, n_bins)) / math.log(2.0)
    k.setflags(write=False)
    return k


@lru_cache(maxsize=4)
def _check_table(llr_max: float, n_bins: int):
    tables = _kernels.check_table(llr_max, n_bins)
    for t in tables:
        t.setflags(write=False)
    return tables


class LlrDensity:
    """Probability masses over the bins of ``grid``. Treated as immutable."""

    __slots__ = ("grid", "mass")

    def __init__(self, grid: GridSpec, mass):
        m = np.asarray(mass, dtype=float)
        if m.shape != (grid.n_bins,):
            raise DensityError(f"mass has shape {m.shape}, grid needs ({grid.n_bins},)")
        if m.flags.writeable:
            m = m.copy()
            m.setflags(write=False)
        self.grid = grid
        self.mass = m

    def __repr__(self):
        return (
            f"LlrDensity(grid={self.grid}, total={self.mass.sum():.12g}, "
            f"mean={mean_llr(self):.6g})"
        )

    def total(self) -> float:
        return float(math.fsum(self.mass))

    def check(self, mass_tol: float = 1e-8, sym_tol: float | None = None) -> None:
        """Raise :class:`DensityError` if an invariant is violated."""
        if np.any(self.mass < 0):
            raise DensityError("negative mass")
        if abs(self.total() - 1.0) > mass_tol:
            raise DensityError(f"total mass {self.total()!r} differs from 1")
        if sym_tol is not None:
            err = symmetry_error(self)
            if err > sym_tol:
                raise DensityError(f"symmetry violated by {err:.3g}")


def _same_grid(*ds: LlrDensity) -> GridSpec:
    g = ds[0].grid
    for d in ds[1:]:
        if d.grid != g:
            raise DensityError(f"grid mismatch: {g} vs {d.grid}")
    return g


def delta_zero(grid: GridSpec = DEFAULT_GRID) -> LlrDensity:
    m = np.zeros(grid.n_bins)
    m[grid.half] = 1.0
    return LlrDensity(grid, m)


def delta_inf(grid: GridSpec = DEFAULT_GRID) -> LlrDensity:
    m = np.zeros(grid.n_bins)
    m[-1] = 1.0
    return LlrDensity(grid, m)


def _discretized_normal(mean: float, std: float, grid: GridSpec) -> np.ndarray:
    """Bin masses of N(mean, std^2) with the tails folded into the end bins."""
    w = grid.width
    edges = (np.arange(grid.n_bins - 1) - grid.half + 0.5) * w
    cdf = ndtr((edges - mean) / std)
    # upper tail computed from the right to keep precision in the far tail
    sf = ndtr((mean - edges) / std)
    m = np.empty(grid.n_bins)
    m[0] = cdf[0]
    m[-1] = sf[-1]
    inner = np.where(edges[1:] <= mean, cdf[1:] - cdf[:-1], sf[:-1] - sf[1:])
    m[1:-1] = inner
    np.maximum(m, 0.0, out=m)
    return m / math.fsum(m)


def bi_awgn_density(sigma: float, grid: GridSpec = DEFAULT_GRID) -> LlrDensity:
    """L-density of the binary-input AWGN channel, N(2/sigma^2, 4/sigma^2)."""
    if not (sigma > 0 and math.isfinite(sigma)):
        raise DensityError(f"sigma must be positive, got {sigma}")
    return LlrDensity(grid, _discretized_normal(2.0 / sigma**2, 2.0 / sigma, grid))


def gaussian_density(mean: float, grid: GridSpec = DEFAULT_GRID) -> LlrDensity:
    """Symmetric Gaussian L-density N(mean, 2*mean); saturates to the deltas."""
    if mean < 0 or not math.isfinite(mean):
        raise DensityError(f"symmetric Gaussian mean must be >= 0, got {mean}")
    if mean == 0.0:
        return delta_zero(grid)
    if mean >= grid.llr_max:
        return delta_inf(grid)
    return LlrDensity(grid, _discretized_normal(mean, math.sqrt(2.0 * mean), grid))


def gaussian_density_matched(mean: float, grid: GridSpec = DEFAULT_GRID) -> LlrDensity:
    """Discretized symmetric Gaussian whose mean on the grid is exactly ``mean``.

    Folding the tails into the end bins pulls the mean of ``gaussian_density``
    below its parameter once the tail reaches ``llr_max``. Here the parameter
    is solved for so that the discretized mean matches. Means above the largest
    one a folded Gaussian can reach become the perfect message.
    """
    d = gaussian_density(mean, grid)
    if mean == 0.0 or mean >= grid.llr_max:
        return d
    if abs(mean_llr(d) - mean) <= 1e-14 * mean:
        return d
    top = math.nextafter(grid.llr_max, 0.0)
    f_top = mean_llr(gaussian_density(top, grid)) - mean
    if f_top < 0:
        return delta_inf(grid)
    p = brentq(lambda t: mean_llr(gaussian_density(t, grid)) - mean, mean, top, xtol=1e-14, rtol=1e-15)
    return gaussian_density(p, grid)


def entropy(d: LlrDensity) -> float:
    """``sum mass * log2(1 + exp(-x))``; 1 for an erasure, 0 for a perfect message."""
    return float(np.dot(d.mass, d.grid.entropy_kernel))


def error_probability(d: LlrDensity) -> float:
    h = d.grid.half
    return float(math.fsum(d.mass[:h]) + 0.5 * d.mass[h])


def mean_llr(d: LlrDensity) -> float:
    return float(np.dot(d.mass, d.grid.centers))


def _trim(a: np.ndarray) -> tuple[int, int]:
    nz = np.flatnonzero(a)
    if nz.size == 0:
        return 0, -1
    return int(nz[0]), int(nz[-1])


def _vconv(a: np.ndarray, b: np.ndarray, half: int) -> np.ndarray:
    """Sum of independent LLRs, folded back onto the grid."""
    n = a.size
    a = np.where(a < _FLUSH, 0.0, a)
    b = np.where(b < _FLUSH, 0.0, b)
    ia, ja = _trim(a)
    ib, jb = _trim(b)
    out = np.zeros(n)
    if ja < ia or jb < ib:
        return out
    sa = a[ia : ja + 1]
    sb = b[ib : jb + 1]
    if sa.size * sb.size <= _DIRECT_LIMIT:
        full = np.convolve(sa, sb)
    else:
        L = sa.size + sb.size - 1
        nfft = sp_fft.next_fast_len(L, real=True)
        full = sp_fft.irfft(sp_fft.rfft(sa, nfft) * sp_fft.rfft(sb, nfft), nfft)[:L]
        np.maximum(full, 0.0, out=full)
        full[full < _FFT_FLOOR * full.max()] = 0.0
        # clipping moves mass by rounding noise; restore the exact product of totals
        tot = full.sum()
        if tot > 0:
            full *= (sa.sum() * sb.sum()) / tot
    # full[q] sits at grid offset ia + ib + q - half
    lo = ia + ib - half
    src_lo = max(0, -lo)
    src_hi = min(full.size, n - lo)
    if src_lo < src_hi:
        out[lo + src_lo : lo + src_hi] = full[src_lo:src_hi]
    if src_lo > 0:
        out[0] += full[: min(src_lo, full.size)].sum()
    if src_hi < full.size:
        out[-1] += full[max(src_hi, 0) :].sum()
    return out


def _cconv(a: np.ndarray, b: np.ndarray, grid: GridSpec, same: bool = False) -> np.ndarray:
    """Check-node combine: density of 2 atanh(tanh(A/2) tanh(B/2))."""
    h = grid.half
    K, G, H = grid.check_table()
    za = a[h]
    zb = b[h]
    ap = a[h:].copy()
    an = a[h::-1].copy()
    ap[0] = an[0] = 0.0
    ap[ap < _FLUSH] = 0.0
    an[an < _FLUSH] = 0.0
    if same:
        op, on = _kernels.chk_magnitudes(ap, an, ap, an, K, G, H, same_input=True)
    else:
        bp = b[h:].copy()
        bn = b[h::-1].copy()
        bp[0] = bn[0] = 0.0
        bp[bp < _FLUSH] = 0.0
        bn[bn < _FLUSH] = 0.0
        op, on = _kernels.chk_magnitudes(ap, an, bp, bn, K, G, H)
    out = np.empty_like(a)
    out[h + 1 :] = op[1 : h + 1]
    out[:h] = on[h:0:-1]
    # a zero on either input forces a zero output
    out[h] = za * b.sum() + zb * a.sum() - za * zb + op[0] + on[0]
    return out


def var_convolve(a: LlrDensity, b: LlrDensity) -> LlrDensity:
    g = _same_grid(a, b)
    return LlrDensity(g, _vconv(a.mass, b.mass, g.half))


def chk_convolve(a: LlrDensity, b: LlrDensity) -> LlrDensity:
    g = _same_grid(a, b)
    return LlrDensity(g, _cconv(a.mass, b.mass, g, same=a is b))


def _power(a: np.ndarray, n: int, conv: Callable, cache: dict | None = None) -> np.ndarray:
    """``a`` combined with itself ``n`` times by repeated squaring (memoised in ``cache``)."""
    if n < 1:
        raise DensityError(f"power must be >= 1, got {n}")
    if cache is None:
        cache = {}
    if n in cache:
        return cache[n]
    if n == 1:
        res = a
    else:
        half = _power(a, n // 2, conv, cache)
        res = conv(half, half, True)
        if n % 2:
            res = conv(res, a, False)
    cache[n] = res
    return res


def var_power(a: LlrDensity, n: int) -> LlrDensity:
    if n == 0:
        return delta_zero(a.grid)
    h = a.grid.half
    return LlrDensity(a.grid, _power(a.mass, n, lambda x, y, s: _vconv(x, y, h)))


def chk_power(a: LlrDensity, n: int) -> LlrDensity:
    if n == 0:
        return delta_inf(a.grid)
    g = a.grid
    return LlrDensity(g, _power(a.mass, n, lambda x, y, s: _cconv(x, y, g, s)))


def mixture(weights: Sequence[float], densities: Sequence[LlrDensity]) -> LlrDensity:
    """Convex combination; weights must be nonnegative and sum to one."""
    if len(weights) != len(densities) or not densities:
        raise DensityError("need one weight per density")
    if min(weights) < 0 or abs(math.fsum(weights) - 1.0) > 1e-9:
        raise DensityError(f"mixture weights must be a probability vector, got {list(weights)}")
    g = _same_grid(*densities)
    m = np.zeros(g.n_bins)
    for w, d in zip(weights, densities):
        m += w * d.mass
    return LlrDensity(g, m)


class _PowerBank:
    """Memoised powers of a vector of densities under one convolution."""

    def __init__(self, masses: Sequence[np.ndarray], conv: Callable):
        self.masses = masses
        self.conv = conv
        self.caches: list[dict] = [{} for _ in masses]

    def power(self, j: int, n: int) -> np.ndarray:
        return _power(self.masses[j], n, self.conv, self.caches[j])


def _rows_mixture(rows, bank: _PowerBank, conv, identity: np.ndarray, extra=None) -> np.ndarray:
    total = np.zeros_like(identity)
    for row in rows:
        acc = None
        if extra is not None:
            acc = extra(row)
        for j, e in enumerate(row.d):
            if e < 0:
                raise DensityError(f"negative exponent {e}")
            if e == 0:
                continue
            p = bank.power(j, e)
            acc = p if acc is None else conv(acc, p, False)
        if acc is None:
            acc = identity
        total += row.coeff * acc
    return total


def _as_masses(ds: Sequence[LlrDensity], grid: GridSpec) -> list[np.ndarray]:
    for d in ds:
        if d.grid != grid:
            raise DensityError(f"grid mismatch: {grid} vs {d.grid}")
    return [d.mass for d in ds]


def poly_apply_var(rows, channel: Sequence[LlrDensity], incoming: Sequence[LlrDensity]) -> LlrDensity:
    """Mixture over rows of ``coeff * R^(x)b (x) Q^(x)d`` under variable-node convolution.

    ``rows`` are objects with ``coeff``, ``b`` and ``d`` attributes
    (:class:`~metexit.ensemble.PolyRow` or ``VariableRow``).
    """
    grid = incoming[0].grid if incoming else channel[0].grid
    h = grid.half

    def conv(x, y, s):
        return _vconv(x, y, h)

    masses = _as_masses(incoming, grid)
    cmasses = _as_masses(channel, grid)
    bank = _PowerBank(masses, conv)
    cbank = _PowerBank(cmasses, conv)

    def channel_part(row):
        acc = None
        for j, e in enumerate(row.b):
            if e < 0:
                raise DensityError(f"negative exponent {e}")
            if e:
                p = cbank.power(j, e)
                acc = p if acc is None else conv(acc, p, False)
        return acc

    ident = delta_zero(grid).mass
    return LlrDensity(grid, _rows_mixture(rows, bank, conv, ident, channel_part))


def poly_apply_chk(rows, incoming: Sequence[LlrDensity]) -> LlrDensity:
    """Mixture over rows of ``coeff * P^[x]d`` under check-node convolution."""
    grid = incoming[0].grid

    def conv(x, y, s):
        return _cconv(x, y, grid, s)

    bank = _PowerBank(_as_masses(incoming, grid), conv)
    ident = delta_inf(grid).mass
    return LlrDensity(grid, _rows_mixture(rows, bank, conv, ident))


def symmetry_error(d: LlrDensity) -> float:
    """``max |mass(-x) - exp(-x) mass(x)|`` over the positive bins."""
    h = d.grid.half
    x = d.grid.centers[h + 1 :]
    pos = d.mass[h + 1 :]
    neg = d.mass[h - 1 :: -1]
    return float(np.max(np.abs(neg - np.exp(-x) * pos)))


def total_variation(a: LlrDensity, b: LlrDensity) -> float:
    _same_grid(a, b)
    return 0.5 * float(np.abs(a.mass - b.mass).sum())


def density_csv_text(d: LlrDensity) -> str:
    buf = io.StringIO()
    buf.write("llr_bin_center,mass\n")
    for x, m in zip(d.grid.centers, d.mass):
        buf.write(f"{fmt(x)},{fmt(m)}\n")
    return buf.getvalue()


def write_density_csv(path: str | Path, d: LlrDensity) -> None:
    atomic_write_text(path, density_csv_text(d))


def read_density_csv(path: str | Path) -> LlrDensity:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise DensityError(f"{path}: no rows")
    x = np.array([float(r["llr_bin_center"]) for r in rows])
    m = np.array([float(r["mass"]) for r in rows])
    grid = GridSpec(llr_max=float(x[-1]), n_bins=x.size)
    return LlrDensity(grid, m)
