"""Multi-edge density evolution on the BIAWGN channel.

The recursion starts from erasures on every edge and alternates the check
side ``Q = rho(P)`` and the variable side ``P = lambda(R, Q)``. The decoding
statistic is the error probability of the node-perspective a-posteriori
density at the variable nodes.
"""

from __future__ import annotations

import io
import logging
import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np
from scipy import optimize

from ._io import atomic_write_text, fmt
from .density import (
    DEFAULT_GRID,
    DensityError,
    GridSpec,
    LlrDensity,
    _cconv,
    _PowerBank,
    _rows_mixture,
    _vconv,
    bi_awgn_density,
    delta_inf,
    delta_zero,
    entropy,
    gaussian_density_matched,
    mean_llr,
)
from .ensemble import EdgePerspective, EnsembleSpec, PolyRow, edge_perspective

log = logging.getLogger(__name__)

__all__ = [
    "DensityVector",
    "DeState",
    "DeTrace",
    "ChannelSetting",
    "ThresholdBracketError",
    "ThresholdResult",
    "channel_vector",
    "de_step",
    "iterate_de",
    "run_de",
    "find_threshold",
    "convert_units",
    "biawgn_capacity",
    "shannon_sigma",
    "asymptotic_efficiency",
    "StopMonitor",
    "STAGNATION_DPE",
    "STAGNATION_WINDOW",
]

STAGNATION_DPE = 1e-13
STAGNATION_WINDOW = 50


class DensityVector:
    """One density per edge type (or per received slot), all on one grid."""

    __slots__ = ("per_edge",)

    def __init__(self, per_edge: Sequence[LlrDensity]):
        per_edge = tuple(per_edge)
        if not per_edge:
            raise DensityError("empty density vector")
        g = per_edge[0].grid
        for d in per_edge[1:]:
            if d.grid != g:
                raise DensityError("density vector entries live on different grids")
        self.per_edge = per_edge

    @property
    def grid(self) -> GridSpec:
        return self.per_edge[0].grid

    def __len__(self):
        return len(self.per_edge)

    def __iter__(self):
        return iter(self.per_edge)

    def __getitem__(self, i):
        return self.per_edge[i]

    @classmethod
    def _from_masses(cls, grid: GridSpec, masses) -> "DensityVector":
        return cls([LlrDensity(grid, m) for m in masses])


def channel_vector(
    spec: EnsembleSpec,
    sigma: float,
    grid: GridSpec = DEFAULT_GRID,
    transmit_punctured: bool = False,
) -> DensityVector:
    """Received densities per slot: slot 0 is punctured (erasure), the others BIAWGN(sigma).

    ``transmit_punctured`` sends the punctured slot over the channel as well.
    """
    ch = bi_awgn_density(sigma, grid)
    slot0 = ch if transmit_punctured else delta_zero(grid)
    return DensityVector([slot0] + [ch] * spec.n_channels)


class _Sides:
    """Edge-perspective and node-perspective polynomials of one ensemble."""

    def __init__(self, spec: EnsembleSpec):
        self.spec = spec
        self.ep: EdgePerspective = edge_perspective(spec)
        nu = spec.nu_total()
        mu = spec.mu_total()
        self.vn_node = tuple(PolyRow(r.coeff / nu, r.b, r.d) for r in spec.variable_rows)
        self.cn_node = tuple(PolyRow(r.coeff / mu, (), r.d) for r in spec.check_rows)


class _Banks:
    def __init__(self, grid: GridSpec, channel: Sequence[np.ndarray]):
        self.grid = grid
        h = grid.half
        self.vconv = lambda x, y, s: _vconv(x, y, h)
        self.cconv = lambda x, y, s: _cconv(x, y, grid, s)
        self.cbank = _PowerBank(channel, self.vconv)
        self.zero = delta_zero(grid).mass
        self.inf = delta_inf(grid).mass

    def channel_part(self, row):
        acc = None
        for j, e in enumerate(row.b):
            if e:
                p = self.cbank.power(j, e)
                acc = p if acc is None else self.vconv(acc, p, False)
        return acc

    def check_side(self, polys, P: Sequence[np.ndarray]):
        bank = _PowerBank(P, self.cconv)
        return [_rows_mixture(rows, bank, self.cconv, self.inf) for rows in polys], bank

    def variable_side(self, polys, Q: Sequence[np.ndarray]):
        bank = _PowerBank(Q, self.vconv)
        return [
            _rows_mixture(rows, bank, self.vconv, self.zero, self.channel_part) for rows in polys
        ], bank


@dataclass
class DeState:
    """One iteration: inputs ``P^l``, check outputs ``Q^{l+1}``, variable outputs ``P^{l+1}``."""

    iteration: int
    grid: GridSpec
    p_in: list
    q_out: list
    p_out: list
    vn_app: np.ndarray
    pe: float
    _sides: _Sides = field(repr=False)
    _banks: _Banks = field(repr=False)
    _cbank: _PowerBank = field(repr=False)
    _cn_app: np.ndarray | None = field(default=None, repr=False)

    def cn_app(self) -> np.ndarray:
        """Node-perspective check density built from ``P^l``."""
        if self._cn_app is None:
            self._cn_app = _rows_mixture(
                self._sides.cn_node, self._cbank, self._banks.cconv, self._banks.inf
            )
        return self._cn_app

    def vn_combined(self) -> LlrDensity:
        return LlrDensity(self.grid, self.vn_app)

    def cn_combined(self) -> LlrDensity:
        return LlrDensity(self.grid, self.cn_app())


def _ga_variable_side(sides: _Sides, channel_means, Q, grid):
    """Variable-to-check messages under the Gaussian assumption.

    Means add at a variable node, so the projected output of each edge type
    follows from the channel and check-output means without convolving.
    """
    qmeans = [float(np.dot(q, grid.centers)) for q in Q]

    def row_mean(row):
        return sum(e * channel_means[j] for j, e in enumerate(row.b)) + sum(
            e * qmeans[j] for j, e in enumerate(row.d)
        )

    return [
        gaussian_density_matched(max(sum(r.coeff * row_mean(r) for r in rows), 0.0), grid).mass
        for rows in sides.ep.lambda_polys
    ]


def _normalized(masses):
    # the all-ones total is an unstable fixed point of the recursion, so pin it
    out = []
    for m in masses:
        t = m.sum()
        if not np.isfinite(t) or t <= 0:
            raise DensityError("density lost all mass or became non-finite")
        out.append(m / t)
    return out


def iterate_de(
    spec: EnsembleSpec,
    channel: DensityVector,
    *,
    method: str = "de",
    initial: DensityVector | None = None,
) -> Iterator[DeState]:
    """Yield the DE states ``l = 0, 1, ...`` forever; the caller decides when to stop.

    ``method="ga"`` replaces each variable-to-check density by the symmetric
    Gaussian with the same mean before it enters the check side.
    """
    if method not in ("de", "ga"):
        raise ValueError(f"unknown method {method!r}")
    if len(channel) != spec.n_slots:
        raise DensityError(f"channel has {len(channel)} slots, ensemble needs {spec.n_slots}")
    grid = channel.grid
    sides = _Sides(spec)
    banks = _Banks(grid, [c.mass for c in channel])
    if initial is None:
        P = [banks.zero] * spec.n_edge_types
    else:
        if len(initial) != spec.n_edge_types or initial.grid != grid:
            raise DensityError("initial vector does not match ensemble/grid")
        P = [d.mass for d in initial]
    channel_means = [mean_llr(c) for c in channel]
    l = 0
    while True:
        Q, cbank = banks.check_side(sides.ep.rho_polys, P)
        Q = _normalized(Q)
        if method == "de":
            P_next, vbank = banks.variable_side(sides.ep.lambda_polys, Q)
        else:
            # the a-posteriori density is a decision statistic, not a message, so it stays exact
            P_next = _ga_variable_side(sides, channel_means, Q, grid)
            vbank = _PowerBank(Q, banks.vconv)
        app = _rows_mixture(sides.vn_node, vbank, banks.vconv, banks.zero, banks.channel_part)
        P_next = _normalized(P_next)
        app = app / app.sum()
        pe = float(math.fsum(app[: grid.half]) + 0.5 * app[grid.half])
        yield DeState(l, grid, P, Q, P_next, app, pe, sides, banks, cbank)
        P = P_next
        l += 1


def de_step(
    spec: EnsembleSpec, channel: DensityVector, vn_msgs: DensityVector
) -> tuple[DensityVector, DensityVector]:
    """One exact DE iteration; returns ``(P^{l+1}, Q^{l+1})``."""
    if len(vn_msgs) != spec.n_edge_types:
        raise DensityError(f"expected {spec.n_edge_types} edge densities, got {len(vn_msgs)}")
    if vn_msgs.grid != channel.grid:
        raise DensityError("grid mismatch between channel and messages")
    st = next(iterate_de(spec, channel, initial=vn_msgs))
    g = channel.grid
    return DensityVector._from_masses(g, st.p_out), DensityVector._from_masses(g, st.q_out)


class StopMonitor:
    """Stopping rule shared by every DE driver: target reached, stagnation, or iteration cap."""

    def __init__(self, max_iter: int = 2000, target_pe: float = 1e-10):
        if max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if not 0 < target_pe < 0.5:
            raise ValueError("target_pe must lie in (0, 0.5)")
        self.max_iter = max_iter
        self.target_pe = target_pe
        self.history: list[float] = []
        self.converged = False
        self.reason = ""
        self._flat = 0

    def update(self, pe: float) -> bool:
        """Record one iteration; True means stop."""
        h = self.history
        h.append(pe)
        if pe <= self.target_pe:
            self.converged = True
            self.reason = "target"
            return True
        if len(h) > 1 and abs(h[-1] - h[-2]) < STAGNATION_DPE:
            self._flat += 1
            if self._flat >= STAGNATION_WINDOW:
                self.reason = "stagnation"
                return True
        else:
            self._flat = 0
        if len(h) >= self.max_iter:
            self.reason = "max_iter"
            return True
        return False


@dataclass
class DeTrace:
    sigma: float
    method: str
    iterations: int
    pe_history: list[float]
    converged: bool
    final_vn_vector: DensityVector
    final_cn_vector: DensityVector
    snapshots: list[tuple[int, LlrDensity, LlrDensity]] = field(default_factory=list)

    def csv_text(self) -> str:
        buf = io.StringIO()
        buf.write("iteration,pe\n")
        for i, pe in enumerate(self.pe_history, start=1):
            buf.write(f"{i},{fmt(pe)}\n")
        return buf.getvalue()

    def write_csv(self, path) -> None:
        atomic_write_text(path, self.csv_text())


def run_de(
    spec: EnsembleSpec,
    sigma: float,
    max_iter: int = 2000,
    target_pe: float = 1e-10,
    *,
    grid: GridSpec = DEFAULT_GRID,
    method: str = "de",
    snapshot_every: int | None = None,
    snapshot_start: int = 0,
    transmit_punctured: bool = False,
) -> DeTrace:
    """Iterate DE from all-erasure messages until ``pe <= target_pe``, stagnation or ``max_iter``.

    ``pe_history[k]`` is the error probability after ``k + 1`` iterations.
    Snapshots hold ``(l, combined VN density, combined CN density)`` for
    ``l = snapshot_start, snapshot_start + snapshot_every, ...``.
    """
    channel = channel_vector(spec, sigma, grid, transmit_punctured)
    mon = StopMonitor(max_iter, target_pe)
    snaps = []
    st = None
    for st in iterate_de(spec, channel, method=method):
        if snapshot_every and st.iteration >= snapshot_start and (
            (st.iteration - snapshot_start) % snapshot_every == 0
        ):
            snaps.append((st.iteration, st.vn_combined(), st.cn_combined()))
        if mon.update(st.pe):
            break
    pe_hist = mon.history
    converged = mon.converged
    log.debug("run_de sigma=%.6g method=%s iters=%d pe=%.3g", sigma, method, len(pe_hist), st.pe)
    return DeTrace(
        sigma=sigma,
        method=method,
        iterations=len(pe_hist),
        pe_history=pe_hist,
        converged=converged,
        final_vn_vector=DensityVector._from_masses(grid, st.p_out),
        final_cn_vector=DensityVector._from_masses(grid, st.q_out),
        snapshots=snaps,
    )


class ThresholdBracketError(ValueError):
    """The bisection bracket does not straddle the threshold."""


@dataclass
class ThresholdResult:
    sigma: float
    sigma_lo: float
    sigma_hi: float
    method: str
    probes: list[tuple[float, bool, int]]
    trace_lo: DeTrace

    def __float__(self):
        return self.sigma


def find_threshold(
    spec: EnsembleSpec,
    sigma_lo: float,
    sigma_hi: float,
    tol_sigma: float = 1e-3,
    max_iter: int = 2000,
    target_pe: float = 1e-10,
    *,
    grid: GridSpec = DEFAULT_GRID,
    method: str = "de",
    transmit_punctured: bool = False,
) -> ThresholdResult:
    """Bisect on sigma until the bracket is narrower than ``tol_sigma``; returns the midpoint."""
    if not 0 < sigma_lo < sigma_hi:
        raise ThresholdBracketError(f"need 0 < sigma_lo < sigma_hi, got {sigma_lo}, {sigma_hi}")
    probes = []

    def probe(s):
        tr = run_de(
            spec, s, max_iter, target_pe, grid=grid, method=method,
            transmit_punctured=transmit_punctured,
        )
        probes.append((s, tr.converged, tr.iterations))
        return tr

    tr_lo = probe(sigma_lo)
    tr_hi = probe(sigma_hi)
    if not tr_lo.converged and not tr_hi.converged:
        raise ThresholdBracketError(
            f"both ends fail to converge (sigma_lo={sigma_lo}, sigma_hi={sigma_hi}); lower sigma_lo"
        )
    if tr_lo.converged and tr_hi.converged:
        raise ThresholdBracketError(
            f"both ends converge (sigma_lo={sigma_lo}, sigma_hi={sigma_hi}); raise sigma_hi"
        )
    if not tr_lo.converged:
        raise ThresholdBracketError("sigma_lo fails while sigma_hi converges; bracket is inverted")
    lo, hi = sigma_lo, sigma_hi
    while hi - lo > tol_sigma:
        mid = 0.5 * (lo + hi)
        tr = probe(mid)
        if tr.converged:
            lo, tr_lo = mid, tr
        else:
            hi = mid
    return ThresholdResult(0.5 * (lo + hi), lo, hi, method, probes, tr_lo)


# --- channel parameter conversions -------------------------------------------

_UNITS = ("sigma", "snr", "snr_db", "ebn0", "ebn0_db")


def _to_snr(rate: float, value: float, unit: str) -> float:
    if unit == "sigma":
        if value <= 0:
            raise ValueError("sigma must be positive")
        return 1.0 / value**2
    if unit == "snr":
        if value <= 0:
            raise ValueError("linear SNR must be positive")
        return value
    if unit == "snr_db":
        return 10.0 ** (value / 10.0)
    if unit == "ebn0":
        if value <= 0:
            raise ValueError("linear Eb/N0 must be positive")
        return 2.0 * rate * value
    if unit == "ebn0_db":
        return 2.0 * rate * 10.0 ** (value / 10.0)
    raise ValueError(f"unknown unit {unit!r}; expected one of {_UNITS}")


def convert_units(rate: float, value: float, from_unit: str, to_unit: str) -> float:
    """Convert between sigma, SNR (linear/dB) and Eb/N0 (linear/dB) for code rate ``rate``.

    Uses ``SNR = 2 R Eb/N0`` and ``sigma = 1/sqrt(SNR)``.
    """
    if not 0 < rate <= 1:
        raise ValueError(f"rate must lie in (0, 1], got {rate}")
    snr = _to_snr(rate, value, from_unit)
    if to_unit == "sigma":
        return 1.0 / math.sqrt(snr)
    if to_unit == "snr":
        return snr
    if to_unit == "snr_db":
        return 10.0 * math.log10(snr)
    if to_unit == "ebn0":
        return snr / (2.0 * rate)
    if to_unit == "ebn0_db":
        return 10.0 * math.log10(snr / (2.0 * rate))
    raise ValueError(f"unknown unit {to_unit!r}; expected one of {_UNITS}")


@dataclass(frozen=True)
class ChannelSetting:
    sigma: float

    @property
    def snr(self) -> float:
        return 1.0 / self.sigma**2

    @property
    def snr_db(self) -> float:
        return 10.0 * math.log10(self.snr)

    def ebn0_db(self, rate: float) -> float:
        return convert_units(rate, self.sigma, "sigma", "ebn0_db")

    @classmethod
    def from_ebn0_db(cls, ebn0_db: float, rate: float) -> "ChannelSetting":
        return cls(convert_units(rate, ebn0_db, "ebn0_db", "sigma"))


def biawgn_capacity(sigma: float, grid: GridSpec = DEFAULT_GRID) -> float:
    return 1.0 - entropy(bi_awgn_density(sigma, grid))


def shannon_sigma(rate: float, grid: GridSpec = DEFAULT_GRID, xtol: float = 1e-7) -> float:
    """Noise level at which the BIAWGN capacity equals ``rate``."""
    if not 0 < rate < 1:
        raise ValueError(f"rate must lie in (0, 1), got {rate}")
    f = lambda s: biawgn_capacity(s, grid) - rate
    lo, hi = 0.05, 1.0
    while f(hi) > 0:
        hi *= 2.0
        if hi > 1e4:
            raise ValueError(f"rate {rate} below the resolution of the grid")
    return optimize.bisect(f, lo, hi, xtol=xtol)


def asymptotic_efficiency(rate: float, sigma_de: float, grid: GridSpec = DEFAULT_GRID) -> float:
    """Code rate over BIAWGN capacity at SNR ``1/sigma_de^2``."""
    return rate / biawgn_capacity(sigma_de, grid)
