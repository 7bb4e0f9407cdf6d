"""Gaussian approximation of the variable-node outputs.

Every variable-to-check message is replaced by the symmetric Gaussian
``N(m, 2m)`` with the same mean, while the check nodes keep their exact
convolution. Check outputs of multi-edge ensembles are far from Gaussian, so
only the variable side is approximated.
"""

from __future__ import annotations

from dataclasses import dataclass

from .de import DeTrace, ThresholdResult, find_threshold, run_de
from .density import DEFAULT_GRID, DensityError, GridSpec, LlrDensity, gaussian_density_matched, mean_llr
from .ensemble import EnsembleSpec
from .gexit import GexitChart, gexit_chart

__all__ = ["GaussianMsg", "project_gaussian", "run_ga_de", "ga_threshold", "ga_gexit_chart"]


@dataclass(frozen=True)
class GaussianMsg:
    """Symmetric Gaussian L-density, fully described by its mean (variance ``2 * mean``)."""

    mean: float

    def __post_init__(self):
        if not self.mean >= 0:
            raise DensityError(f"symmetric Gaussian mean must be >= 0, got {self.mean}")

    @property
    def variance(self) -> float:
        return 2.0 * self.mean

    def density(self, grid: GridSpec = DEFAULT_GRID) -> LlrDensity:
        """Discretized on ``grid`` with the mean preserved; unreachable means become the perfect message."""
        return gaussian_density_matched(self.mean, grid)


def project_gaussian(d: LlrDensity, tol: float = 1e-12) -> GaussianMsg:
    """Match the first moment; the variance follows from symmetry."""
    m = mean_llr(d)
    if m < -tol:
        raise DensityError(f"density has negative mean {m:.3g}; not a physical message density")
    return GaussianMsg(max(m, 0.0))


def run_ga_de(
    spec: EnsembleSpec,
    sigma: float,
    max_iter: int = 2000,
    target_pe: float = 1e-10,
    *,
    grid: GridSpec = DEFAULT_GRID,
    snapshot_every: int | None = None,
) -> DeTrace:
    return run_de(
        spec, sigma, max_iter, target_pe, grid=grid, method="ga", snapshot_every=snapshot_every
    )


def ga_threshold(
    spec: EnsembleSpec,
    sigma_lo: float,
    sigma_hi: float,
    tol_sigma: float = 1e-3,
    max_iter: int = 2000,
    target_pe: float = 1e-10,
    *,
    grid: GridSpec = DEFAULT_GRID,
) -> ThresholdResult:
    return find_threshold(
        spec, sigma_lo, sigma_hi, tol_sigma, max_iter, target_pe, grid=grid, method="ga"
    )


def ga_gexit_chart(
    spec: EnsembleSpec,
    sigma: float,
    *,
    per_edge: bool = False,
    grid: GridSpec = DEFAULT_GRID,
    max_iter: int = 2000,
    target_pe: float = 1e-10,
) -> GexitChart:
    return gexit_chart(
        spec, sigma, per_edge=per_edge, method="ga", grid=grid, max_iter=max_iter, target_pe=target_pe
    )
