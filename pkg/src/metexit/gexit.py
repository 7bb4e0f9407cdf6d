"""G-EXIT functionals and charts for multi-edge ensembles.

For two families of symmetric L-densities ``c_eps`` and ``a_eps``

    G(c, a) = d/d eps H(c (*) a)  /  d/d eps H(c)      (derivative through c only)

and a chart consists of the curve ``{H(c), G(c, a)}`` together with the dual
curve ``{G(a, c), H(a)}``. Here the family parameter is the channel noise
level ``sigma`` and derivatives are central differences.

Curves are stored in chart coordinates: ``h`` is the abscissa and ``g`` the
ordinate. For the dual curve that means ``h = G(a, c)`` and ``g = H(a)``.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
from ._io import atomic_write_text, fmt
from .de import (
    DensityVector,
    StopMonitor,
    _Banks,
    _Sides,
    channel_vector,
    iterate_de,
)
from .density import (
    DEFAULT_GRID,
    DensityError,
    GridSpec,
    LlrDensity,
    _PowerBank,
    _rows_mixture,
    _trim,
    bi_awgn_density,
    delta_zero,
)
from .ensemble import EnsembleSpec

__all__ = [
    "GexitError",
    "ChannelFamily",
    "GexitCurve",
    "GexitChart",
    "family_derivative",
    "gexit_value",
    "gexit_from_derivative",
    "combined_vn_density",
    "combined_cn_density",
    "gexit_chart",
    "family_sweep_chart",
    "curve_area",
    "curves_cross",
    "chart_csv_text",
    "write_chart_csv",
    "read_chart_csv",
]

_REL_STEP = 1e-3
_MIN_DENOM = 1e-12


class GexitError(ValueError):
    pass


@dataclass(frozen=True)
class ChannelFamily:
    """BIAWGN L-densities parameterised by ``eps = sigma``."""

    grid: GridSpec = DEFAULT_GRID
    kind: str = "biawgn"
    eps_min: float = 1e-3
    eps_max: float = 1e4

    def __post_init__(self):
        if self.kind != "biawgn":
            raise GexitError(f"unsupported channel family {self.kind!r}")

    def density(self, eps: float) -> LlrDensity:
        if not self.eps_min <= eps <= self.eps_max:
            raise GexitError(f"eps={eps} outside the family range [{self.eps_min}, {self.eps_max}]")
        return bi_awgn_density(eps, self.grid)

    def sample(self, eps_values: Sequence[float]) -> list[LlrDensity]:
        eps = np.asarray(eps_values, dtype=float)
        if np.any(np.diff(eps) <= 0):
            raise GexitError("family sample points must be strictly increasing")
        return [self.density(float(e)) for e in eps]


def family_derivative(family: ChannelFamily, eps: float, d_eps: float | None = None) -> np.ndarray:
    """Central difference ``(c_{eps+d} - c_{eps-d}) / (2 d)`` as a signed mass vector."""
    if d_eps is None:
        d_eps = _REL_STEP * eps
    if not d_eps > 0:
        raise GexitError(f"derivative step must be positive, got {d_eps}")
    hi = family.density(eps + d_eps).mass
    lo = family.density(eps - d_eps).mass
    diff = hi - lo
    if not np.any(diff):
        raise GexitError(f"step {d_eps} is below the grid sensitivity at eps={eps}")
    return diff / (2.0 * d_eps)


@lru_cache(maxsize=8)
def _pair_kernel(grid: GridSpec) -> np.ndarray:
    """``log2(1 + exp(-t))`` at every grid offset ``t = (k - 2*half) * width``, k = 0..4*half."""
    t = (np.arange(4 * grid.half + 1) - 2 * grid.half) * grid.width
    k = np.logaddexp(0.0, -t) / math.log(2.0)
    k.setflags(write=False)
    return k


def gexit_from_derivative(grid: GridSpec, dc: np.ndarray, a: np.ndarray) -> float:
    """G-EXIT value for a family with derivative ``dc`` against the density ``a``.

    The double sum ``sum_ij a_i dc_j log2(1 + exp(-(x_i + x_j)))`` depends on
    ``i + j`` only, so it is the kernel dotted with the convolution ``a * dc``.
    The convolution is done directly: the kernel grows to ``llr_max/ln 2`` and
    FFT rounding would swamp the small numerators near the chart corners.
    """
    den = float(np.dot(dc, grid.entropy_kernel))
    if abs(den) < _MIN_DENOM:
        raise GexitError("vanishing entropy derivative of the family")
    a = np.asarray(a, dtype=float)
    ia, ja = _trim(a)
    ib, jb = _trim(dc)
    if ja < ia or jb < ib:
        return 0.0
    conv = np.convolve(a[ia : ja + 1], dc[ib : jb + 1])
    k = _pair_kernel(grid)[ia + ib : ia + ib + conv.size]
    return float(np.dot(conv, k)) / den


def gexit_value(family: ChannelFamily, eps: float, a: LlrDensity, d_eps: float | None = None) -> float:
    if a.grid != family.grid:
        raise DensityError("grid mismatch between family and density")
    return gexit_from_derivative(family.grid, family_derivative(family, eps, d_eps), a.mass)


def combined_vn_density(
    spec: EnsembleSpec, channel: DensityVector, cn_out: DensityVector
) -> LlrDensity:
    """Node-perspective variable density ``sum nu_bd R^b (x) Q^d / nu(1,1)``."""
    if len(cn_out) != spec.n_edge_types or len(channel) != spec.n_slots:
        raise DensityError("density vectors do not match the ensemble")
    if channel.grid != cn_out.grid:
        raise DensityError("grid mismatch between channel and check outputs")
    sides = _Sides(spec)
    banks = _Banks(channel.grid, [c.mass for c in channel])
    vbank = _PowerBank([q.mass for q in cn_out], banks.vconv)
    m = _rows_mixture(sides.vn_node, vbank, banks.vconv, banks.zero, banks.channel_part)
    return LlrDensity(channel.grid, m)


def combined_cn_density(spec: EnsembleSpec, vn_msgs: DensityVector) -> LlrDensity:
    """Node-perspective check density ``sum mu_d P^d / mu(1)`` under check convolution."""
    if len(vn_msgs) != spec.n_edge_types:
        raise DensityError("density vector does not match the ensemble")
    g = vn_msgs.grid
    sides = _Sides(spec)
    banks = _Banks(g, [delta_zero(g).mass])
    cbank = _PowerBank([p.mass for p in vn_msgs], banks.cconv)
    return LlrDensity(g, _rows_mixture(sides.cn_node, cbank, banks.cconv, banks.inf))


@dataclass
class GexitCurve:
    """Points in chart coordinates, sorted by the abscissa ``h``."""

    h: np.ndarray
    g: np.ndarray
    label: str
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.h = np.asarray(self.h, dtype=float)
        self.g = np.asarray(self.g, dtype=float)
        if self.h.shape != self.g.shape or self.h.ndim != 1:
            raise GexitError("h and g must be 1-d arrays of equal length")
        if self.label not in ("curve", "dual"):
            raise GexitError(f"label must be 'curve' or 'dual', got {self.label!r}")

    @classmethod
    def sorted(cls, h, g, label, meta=None) -> "GexitCurve":
        h = np.asarray(h, dtype=float)
        g = np.asarray(g, dtype=float)
        order = np.argsort(h, kind="stable")
        return cls(h[order], g[order], label, dict(meta or {}))

    def __len__(self):
        return self.h.size


def curve_area(curve: GexitCurve) -> float:
    """Trapezoidal area ``integral g dh`` of a curve in its chart coordinates."""
    if len(curve) < 2:
        raise GexitError("need at least two points for an area")
    if np.any(np.diff(curve.h) < 0):
        raise GexitError("curve points are not ordered by h")
    return float(np.trapezoid(curve.g, curve.h))


def _proper_intersection(p1, p2, q1, q2, eps=1e-12):
    """Intersection point of two segments that cross transversally, else None."""
    r = p2 - p1
    s = q2 - q1
    den = r[0] * s[1] - r[1] * s[0]
    if abs(den) < eps:
        return None
    d = q1 - p1
    t = (d[0] * s[1] - d[1] * s[0]) / den
    u = (d[0] * r[1] - d[1] * r[0]) / den
    if eps < t < 1 - eps and eps < u < 1 - eps:
        return p1 + t * r
    return None


def curves_cross(curve: GexitCurve, dual: GexitCurve, margin: float = 1e-3) -> bool:
    """True if the two polylines properly intersect away from the chart corners.

    Both curves share the end points ``(0, 0)`` and ``(1, 1)``; intersections
    within ``margin`` of those corners are not crossings.
    """
    a = np.column_stack([curve.h, curve.g])
    b = np.column_stack([dual.h, dual.g])
    if len(a) < 2 or len(b) < 2:
        return False
    a_lo, a_hi = np.minimum(a[:-1], a[1:]), np.maximum(a[:-1], a[1:])
    b_lo, b_hi = np.minimum(b[:-1], b[1:]), np.maximum(b[:-1], b[1:])
    for i in range(len(a) - 1):
        # bounding-box prefilter
        cand = np.flatnonzero(
            (b_lo[:, 0] <= a_hi[i, 0]) & (b_hi[:, 0] >= a_lo[i, 0])
            & (b_lo[:, 1] <= a_hi[i, 1]) & (b_hi[:, 1] >= a_lo[i, 1])
        )
        for j in cand:
            x = _proper_intersection(a[i], a[i + 1], b[j], b[j + 1])
            if x is None:
                continue
            if math.hypot(x[0], x[1]) < margin or math.hypot(x[0] - 1, x[1] - 1) < margin:
                continue
            return True
    return False


@dataclass
class GexitChart:
    sigma: float
    method: str
    mode: str
    curve: GexitCurve
    dual: GexitCurve
    converged: bool
    iterations: int
    crossing: bool
    per_edge: list[tuple[GexitCurve, GexitCurve]] = field(default_factory=list)
    pe_history: list[float] = field(default_factory=list)

    def metadata(self) -> dict:
        return {
            "sigma": self.sigma,
            "method": self.method,
            "mode": self.mode,
            "converged": self.converged,
            "iterations": self.iterations,
            "crossing": self.crossing,
            "polyline_intersection": curves_cross(self.curve, self.dual),
            "curve_area": _safe_area(self.curve),
            "dual_area": _safe_area(self.dual),
        }


def _safe_area(c: GexitCurve) -> float | None:
    try:
        return curve_area(c)
    except GexitError:
        return None


def _entropy(grid: GridSpec, m: np.ndarray) -> float:
    return float(np.dot(m, grid.entropy_kernel))


class _PointCollector:
    """Accumulates curve and dual points from central differences of two families."""

    def __init__(self, grid: GridSpec, two_step: float):
        self.grid = grid
        self.two_step = two_step
        self.curve: list[tuple[float, float]] = []
        self.dual: list[tuple[float, float]] = []
        self.iters_c: list[int] = []
        self.iters_d: list[int] = []

    def add(self, it: int, c, c_lo, c_hi, a, a_lo, a_hi):
        g = self.grid
        dc = (c_hi - c_lo) / self.two_step
        da = (a_hi - a_lo) / self.two_step
        try:
            self.curve.append((_entropy(g, c), gexit_from_derivative(g, dc, a)))
            self.iters_c.append(it)
        except GexitError:
            pass
        try:
            self.dual.append((gexit_from_derivative(g, da, c), _entropy(g, a)))
            self.iters_d.append(it)
        except GexitError:
            pass

    def curves(self, meta) -> tuple[GexitCurve, GexitCurve]:
        def build(pts, label, iters):
            if not pts:
                return GexitCurve(np.zeros(0), np.zeros(0), label, dict(meta))
            h, gv = zip(*pts)
            return GexitCurve.sorted(h, gv, label, {**meta, "iterations": list(iters)})

        return build(self.curve, "curve", self.iters_c), build(self.dual, "dual", self.iters_d)


def gexit_chart(
    spec: EnsembleSpec,
    sigma: float,
    *,
    per_edge: bool = False,
    method: str = "de",
    grid: GridSpec = DEFAULT_GRID,
    max_iter: int = 2000,
    target_pe: float = 1e-10,
    rel_step: float = _REL_STEP,
) -> GexitChart:
    """G-EXIT chart along the DE trajectory at noise level ``sigma``.

    Three DE runs at ``sigma * (1 - s)``, ``sigma`` and ``sigma * (1 + s)``
    advance in lockstep; iteration ``l`` contributes the point built from
    the combined variable density (from ``Q^{l+1}``) and the combined check
    density (from ``P^l``). With ``per_edge`` the same functionals are also
    applied to ``P_i^{l+1}`` and ``Q_i^{l+1}`` of every edge type.

    Along a trajectory the curve and its dual are two renderings of the
    same sequence of density pairs (on the erasure channel they coincide),
    so they can only separate or meet. ``crossing`` is therefore reported
    when the recursion stalls at a nontrivial fixed point, where the two
    curves meet before reaching the origin. Geometric intersections of the
    polylines are reported separately as ``polyline_intersection``.
    """
    if not 0 < rel_step < 0.1:
        raise GexitError("rel_step must lie in (0, 0.1)")
    d = rel_step * sigma
    runs = [
        iterate_de(spec, channel_vector(spec, s, grid), method=method)
        for s in (sigma - d, sigma, sigma + d)
    ]
    combined = _PointCollector(grid, 2 * d)
    edges = [_PointCollector(grid, 2 * d) for _ in range(spec.n_edge_types)] if per_edge else []
    mon = StopMonitor(max_iter, target_pe)
    for lo, mid, hi in zip(*runs):
        combined.add(
            mid.iteration, mid.vn_app, lo.vn_app, hi.vn_app, mid.cn_app(), lo.cn_app(), hi.cn_app()
        )
        for i, col in enumerate(edges):
            col.add(mid.iteration, mid.p_out[i], lo.p_out[i], hi.p_out[i], mid.q_out[i], lo.q_out[i], hi.q_out[i])
        if mon.update(mid.pe):
            break
    meta = {"ensemble": spec.name, "sigma": sigma, "method": method}
    curve, dual = combined.curves(meta)
    per = [col.curves({**meta, "edge": i + 1}) for i, col in enumerate(edges)]
    crossing = not mon.converged
    return GexitChart(
        sigma=sigma,
        method=method,
        mode="per-edge" if per_edge else "combined",
        curve=curve,
        dual=dual,
        converged=mon.converged,
        iterations=len(mon.history),
        crossing=crossing,
        per_edge=per,
        pe_history=list(mon.history),
    )


def family_sweep_chart(
    spec: EnsembleSpec,
    *,
    grid: GridSpec = DEFAULT_GRID,
    eps_lo: float = 0.05,
    eps_hi: float = 200.0,
    n_points: int = 121,
    rel_step: float = _REL_STEP,
) -> tuple[GexitCurve, GexitCurve]:
    """Chart for the family where every received slot and every message is BIAWGN(eps).

    Both combined densities then run from perfect knowledge to erasure as
    ``eps`` sweeps upward, and the end points ``(0, 0)`` and ``(1, 1)`` are
    appended exactly.
    """
    if not 0 < eps_lo < eps_hi or n_points < 2:
        raise GexitError("invalid sweep range")
    sides = _Sides(spec)

    def densities(eps):
        ch = bi_awgn_density(eps, grid).mass
        banks = _Banks(grid, [delta_zero(grid).mass] + [ch] * spec.n_channels)
        msgs = [ch] * spec.n_edge_types
        vbank = _PowerBank(msgs, banks.vconv)
        cbank = _PowerBank(msgs, banks.cconv)
        c = _rows_mixture(sides.vn_node, vbank, banks.vconv, banks.zero, banks.channel_part)
        a = _rows_mixture(sides.cn_node, cbank, banks.cconv, banks.inf)
        return c, a

    col = _PointCollector(grid, 1.0)
    for k, eps in enumerate(np.geomspace(eps_lo, eps_hi, n_points)):
        d = rel_step * eps
        c, a = densities(eps)
        c_lo, a_lo = densities(eps - d)
        c_hi, a_hi = densities(eps + d)
        col.two_step = 2 * d
        col.add(k, c, c_lo, c_hi, a, a_lo, a_hi)
    col.curve = [(0.0, 0.0)] + col.curve + [(1.0, 1.0)]
    col.dual = [(0.0, 0.0)] + col.dual + [(1.0, 1.0)]
    col.iters_c = [-1] + col.iters_c + [n_points]
    col.iters_d = [-1] + col.iters_d + [n_points]
    return col.curves({"ensemble": spec.name, "mode": "family"})


def chart_csv_text(curve: GexitCurve, dual: GexitCurve) -> str:
    buf = io.StringIO()
    buf.write("h,g,label\n")
    for c in (curve, dual):
        for h, g in zip(c.h, c.g):
            buf.write(f"{fmt(h)},{fmt(g)},{c.label}\n")
    return buf.getvalue()


def write_chart_csv(path, curve: GexitCurve, dual: GexitCurve) -> None:
    atomic_write_text(path, chart_csv_text(curve, dual))


def read_chart_csv(path) -> tuple[GexitCurve, GexitCurve]:
    rows: dict[str, list[tuple[float, float]]] = {"curve": [], "dual": []}
    with open(path) as fh:
        header = fh.readline().strip()
        if header != "h,g,label":
            raise GexitError(f"unexpected header {header!r}")
        for line in fh:
            h, g, label = line.strip().split(",")
            rows[label].append((float(h), float(g)))
    out = []
    for label in ("curve", "dual"):
        pts = rows[label]
        h = [p[0] for p in pts]
        g = [p[1] for p in pts]
        out.append(GexitCurve(np.array(h), np.array(g), label))
    return out[0], out[1]
