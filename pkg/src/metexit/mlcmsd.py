"""Rate allocation for multilevel coding with multistage decoding (MLC-MSD).

Bob's Gaussian variable ``X_B`` is quantized to ``2**m`` bins and labelled in
natural binary; Alice holds the correlated ``X_A``. Level ``i`` is decoded
with Alice's value and the already-decoded lower bits as side information,
so its Slepian-Wolf source rate is bounded by ``H_i - I_i``.

All probabilities are computed from the exact bivariate Gaussian: given
``X_A = x`` the variable ``X_B`` is ``N(rho*x, 1 - rho**2)`` and the
probability of each bin follows from the normal CDF.
"""

from __future__ import annotations

import io
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import special

from ._io import atomic_write_text, fmt

__all__ = [
    "SourceModel",
    "QuantizerSpec",
    "LevelRates",
    "MlcError",
    "snr_to_rho",
    "gaussian_mi",
    "quantize",
    "quantize_index",
    "bin_label",
    "subset_points",
    "bin_probabilities",
    "level_mutual_information",
    "level_rates",
    "quantized_entropy",
    "efficiency",
    "rate_sweep",
    "rates_csv_text",
]

INTEGRATION_HALF_WIDTH = 8.0
INTEGRATION_POINTS = 2**14


class MlcError(ValueError):
    pass


@dataclass(frozen=True)
class SourceModel:
    """Correlated Gaussian pair in normalized units (unit variances, correlation ``rho``)."""

    rho: float
    normalized: bool = True

    def __post_init__(self):
        if not (-1.0 < self.rho < 1.0) or not math.isfinite(self.rho):
            raise MlcError(f"correlation must lie in (-1, 1), got {self.rho}")

    @classmethod
    def from_covariance(cls, cov) -> "SourceModel":
        cov = np.asarray(cov, dtype=float)
        if cov.shape != (2, 2) or not np.allclose(cov, cov.T) or cov[0, 0] <= 0 or cov[1, 1] <= 0:
            raise MlcError("covariance must be a symmetric 2x2 matrix with positive variances")
        return cls(float(cov[0, 1] / math.sqrt(cov[0, 0] * cov[1, 1])))

    @classmethod
    def from_snr(cls, snr: float) -> "SourceModel":
        return cls(snr_to_rho(snr))

    @property
    def cond_std(self) -> float:
        return math.sqrt(1.0 - self.rho**2)

    def covariance(self) -> np.ndarray:
        return np.array([[1.0, self.rho], [self.rho, 1.0]])


@dataclass(frozen=True)
class QuantizerSpec:
    m: int
    delta: float = 0.32

    def __post_init__(self):
        if isinstance(self.m, bool) or not isinstance(self.m, (int, np.integer)) or self.m < 1:
            raise MlcError(f"number of levels must be a positive integer, got {self.m!r}")
        if not (self.delta > 0) or not math.isfinite(self.delta):
            raise MlcError(f"step size must be positive, got {self.delta}")

    @property
    def n_bins(self) -> int:
        return 1 << self.m

    @property
    def thresholds(self) -> np.ndarray:
        """The ``2**m - 1`` interior thresholds ``(k - 2**(m-1)) * delta``."""
        M = self.n_bins
        return (np.arange(1, M) - M // 2) * self.delta

    @property
    def edges(self) -> np.ndarray:
        return np.concatenate(([-np.inf], self.thresholds, [np.inf]))

    @property
    def midpoints(self) -> np.ndarray:
        t = self.thresholds
        inner = 0.5 * (t[:-1] + t[1:])
        return np.concatenate(([t[0] - 0.5 * self.delta], inner, [t[-1] + 0.5 * self.delta]))


@dataclass(frozen=True)
class LevelRates:
    rho: float
    I: tuple[float, ...]
    H: tuple[float, ...]
    Rs: tuple[float, ...]
    Rch: tuple[float, ...]
    sum_I: float
    H_total: float
    analytic_mi: float

    @property
    def m(self) -> int:
        return len(self.I)

    @property
    def Rs_total(self) -> float:
        return math.fsum(self.Rs)

    @property
    def beta(self) -> float:
        return efficiency(self.H_total, self.Rs_total, self.analytic_mi)


def snr_to_rho(snr: float) -> float:
    """Correlation of ``X_A = X_B + N`` when ``snr = var(X_B)/var(N)``."""
    if snr < 0 or math.isnan(snr):
        raise MlcError(f"snr must be >= 0, got {snr}")
    if math.isinf(snr):
        return 1.0
    return math.sqrt(snr / (1.0 + snr))


def gaussian_mi(rho: float) -> float:
    """``I(X_A; X_B) = -0.5 log2(1 - rho^2)`` in bits."""
    return -0.5 * math.log2(1.0 - rho * rho)


def quantize_index(x, q: QuantizerSpec):
    """Bin index for each ``x``; a value on a threshold goes to the upper bin."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise MlcError("cannot quantize non-finite values")
    idx = np.searchsorted(q.thresholds, x, side="right")
    return int(idx) if idx.ndim == 0 else idx


def bin_label(index: int, m: int) -> str:
    """Natural binary label ``x^{m-1} ... x^0`` of a bin index."""
    if not 0 <= index < (1 << m):
        raise MlcError(f"bin index {index} out of range for m={m}")
    return format(index, f"0{m}b")


def quantize(x: float, q: QuantizerSpec) -> str:
    return bin_label(quantize_index(x, q), q.m)


def _parse_low_bits(bits: str | Sequence[int], m: int) -> tuple[int, int]:
    if isinstance(bits, str):
        s = bits
    else:
        s = "".join(str(int(b)) for b in bits)
    if len(s) > m or any(c not in "01" for c in s):
        raise MlcError(f"invalid low-bit pattern {bits!r} for m={m}")
    return len(s), int(s, 2) if s else 0


def subset_points(q: QuantizerSpec, fixed_low_bits: str | Sequence[int] = "") -> list[float]:
    """Bin representatives whose labels end in ``fixed_low_bits`` (written most significant first).

    Representatives are bin midpoints; the unbounded outer bins use the
    outermost threshold shifted by half a step.
    """
    j, pattern = _parse_low_bits(fixed_low_bits, q.m)
    mids = q.midpoints
    mask = (1 << j) - 1
    return [float(mids[k]) for k in range(q.n_bins) if (k & mask) == pattern]


def bin_probabilities(q: QuantizerSpec) -> np.ndarray:
    """Marginal probabilities of the bins of a unit-variance ``X_B``."""
    return _interval_probs(q.edges, np.zeros(1), 1.0)[:, 0]


def _interval_probs(edges: np.ndarray, centre: np.ndarray, scale: float) -> np.ndarray:
    """``P(edges[k] <= Z < edges[k+1])`` for ``Z ~ N(centre, scale^2)``; shape (bins, len(centre))."""
    z = (edges[:, None] - centre[None, :]) / scale
    lo, hi = z[:-1], z[1:]
    # take differences in whichever tail keeps them accurate
    upper = lo > 0
    p = np.where(upper, special.ndtr(-lo) - special.ndtr(-hi), special.ndtr(hi) - special.ndtr(lo))
    return np.maximum(p, 0.0)


def _xlog2(p):
    """``p * log2(p)`` with ``0 log 0 = 0``."""
    pos = p > 0
    return np.where(pos, p * np.log2(np.where(pos, p, 1.0)), 0.0)


class _Joint:
    """Posterior bin probabilities on an integration grid over ``x_A``."""

    def __init__(self, model: SourceModel, q: QuantizerSpec, n_points: int = INTEGRATION_POINTS):
        self.q = q
        self.x = np.linspace(-INTEGRATION_HALF_WIDTH, INTEGRATION_HALF_WIDTH, n_points)
        self.w = np.full(n_points, self.x[1] - self.x[0])
        self.w[0] *= 0.5
        self.w[-1] *= 0.5
        self.phi = np.exp(-0.5 * self.x**2) / math.sqrt(2.0 * math.pi)
        self.post = _interval_probs(q.edges, model.rho * self.x, model.cond_std)
        self.prior = bin_probabilities(q)

    def block_mi(self, j: int) -> float:
        """``I(X_A; X_B^{m-1..j} | X_B^{j-1..0})`` as an expectation over the low-bit patterns."""
        if j >= self.q.m:
            return 0.0
        M = self.q.n_bins
        total = 0.0
        for pattern in range(1 << j):
            ks = np.arange(pattern, M, 1 << j)
            p_sub = self.prior[ks].sum()
            if p_sub <= 0:
                continue
            # bins whose prior underflows carry no mass anywhere on the grid
            ks = ks[self.prior[ks] > 0]
            post = self.post[ks]
            post_sub = post.sum(axis=0)
            # sum_k p(k|x) log2[p(k|x) / (p(subset|x) P(k|subset))], term by term
            log_ratio = np.log2(self.prior[ks] / p_sub)
            integrand = (
                _xlog2(post).sum(axis=0) - _xlog2(post_sub) - (post * log_ratio[:, None]).sum(axis=0)
            )
            val = float(np.dot(self.w, self.phi * integrand)) / p_sub
            if not math.isfinite(val):
                raise MlcError(f"integration failed for pattern {pattern} at level block {j}")
            total += p_sub * val
        return total


def level_mutual_information(i: int, model: SourceModel, q: QuantizerSpec) -> float:
    """``I_i = I(X_A; X_B^i | X_B^{i-1}, ..., X_B^0)`` in bits."""
    if not 0 <= i < q.m:
        raise MlcError(f"level {i} out of range for m={q.m}")
    jt = _Joint(model, q)
    return max(jt.block_mi(i) - jt.block_mi(i + 1), 0.0)


def _entropy_bits(p: np.ndarray) -> float:
    p = p[p > 0]
    return float(-np.sum(p * np.log2(p)))


def _low_bit_marginal(prior: np.ndarray, j: int) -> np.ndarray:
    return np.bincount(np.arange(prior.size) & ((1 << j) - 1), weights=prior, minlength=1 << j)


def level_rates(model: SourceModel, q: QuantizerSpec) -> LevelRates:
    jt = _Joint(model, q)
    J = [jt.block_mi(j) for j in range(q.m + 1)]
    I = [max(float(J[i] - J[i + 1]), 0.0) for i in range(q.m)]
    Hlow = [_entropy_bits(_low_bit_marginal(jt.prior, j)) for j in range(q.m + 1)]
    H = [min(max(Hlow[i + 1] - Hlow[i], 0.0), 1.0) for i in range(q.m)]
    I = [min(a, h) for a, h in zip(I, H)]
    Rs = [h - a for h, a in zip(H, I)]
    Rch = [1.0 - r for r in Rs]
    return LevelRates(
        rho=model.rho,
        I=tuple(I),
        H=tuple(H),
        Rs=tuple(Rs),
        Rch=tuple(Rch),
        sum_I=math.fsum(I),
        H_total=Hlow[q.m],
        analytic_mi=gaussian_mi(model.rho),
    )


def quantized_entropy(q: QuantizerSpec, model: SourceModel | None = None) -> float:
    """Exact entropy of the quantized unit-variance source ``H(Q(X_B))``."""
    return _entropy_bits(bin_probabilities(q))


def efficiency(H_q: float, Rs_total: float, mi: float) -> float:
    """``beta = (H(Q(X_B)) - R^s) / I(X_A; X_B)``."""
    if not mi > 0:
        raise MlcError(f"mutual information must be positive, got {mi}")
    return (H_q - Rs_total) / mi


def _threads() -> int:
    env = os.environ.get("METEXIT_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise MlcError(f"METEXIT_THREADS must be an integer, got {env!r}") from None
    return os.cpu_count() or 1


def rate_sweep(snr_db: Sequence[float], q: QuantizerSpec, workers: int | None = None) -> list[tuple[float, LevelRates]]:
    snr_db = [float(s) for s in snr_db]

    def one(s):
        return s, level_rates(SourceModel.from_snr(10.0 ** (s / 10.0)), q)

    workers = workers or _threads()
    if workers == 1 or len(snr_db) < 2:
        return [one(s) for s in snr_db]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(one, snr_db))


def rates_csv_text(rows: Sequence[tuple[float, LevelRates]]) -> str:
    buf = io.StringIO()
    buf.write("snr_db,level,I_i,Rs_i,Rch_i,sum_I,analytic_mi\n")
    for s, lr in rows:
        for i in range(lr.m):
            buf.write(
                ",".join(
                    [fmt(s), str(i), fmt(lr.I[i]), fmt(lr.Rs[i]), fmt(lr.Rch[i]), fmt(lr.sum_I), fmt(lr.analytic_mi)]
                )
                + "\n"
            )
    return buf.getvalue()


def write_rates_csv(path, rows) -> None:
    atomic_write_text(path, rates_csv_text(rows))
