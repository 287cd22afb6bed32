"""Synthetic series with known truth, and an exhaustive integer-breakpoint fitter.

The brute-force fitter deliberately does not reuse the solver's design
matrix: it writes the continuous piecewise-linear mean in the hinge basis
``year, max(year - a_k, 0)`` and converts the coefficients back to chained
slopes, so it can serve as an independent reference.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .model import SegmentedModel, predict_log
from .series import AnnualSeries, LogSeries
from .solver import FitError, FitResult

MAX_TUPLES = 1_000_000


class EnumerationLimitError(FitError):
    pass


@dataclass(frozen=True)
class GeneratorSpec:
    model: SegmentedModel
    years: tuple[int, int]
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        lo, hi = self.years
        if lo > hi:
            raise ValueError(f"empty year range {self.years}")
        dlo, dhi = self.model.domain
        if lo < dlo or hi > dhi:
            raise ValueError(f"years {self.years} outside model domain {self.model.domain}")


def generate(spec: GeneratorSpec, label: str = "synthetic") -> AnnualSeries:
    """Counts ``exp(log-mean + eps)`` with ``eps ~ N(0, sigma^2)`` iid per year.

    Noise comes from numpy's PCG64 seeded with ``spec.seed``.
    """
    years = np.arange(spec.years[0], spec.years[1] + 1)
    mean = predict_log(spec.model, years)
    if spec.noise_sigma > 0:
        rng = np.random.Generator(np.random.PCG64(spec.seed))
        mean = mean + rng.normal(0.0, spec.noise_sigma, size=len(years))
    return AnnualSeries(tuple(int(y) for y in years), tuple(np.exp(mean).tolist()), label)


def generate_log(spec: GeneratorSpec) -> LogSeries:
    """Same draw as ``generate`` but kept on the log scale (no exp/log round trip)."""
    years = np.arange(spec.years[0], spec.years[1] + 1)
    mean = predict_log(spec.model, years)
    if spec.noise_sigma > 0:
        rng = np.random.Generator(np.random.PCG64(spec.seed))
        mean = mean + rng.normal(0.0, spec.noise_sigma, size=len(years))
    return LogSeries.from_arrays(years, mean, "synthetic")


def draw_model(rng: np.random.Generator, n_segments: int, years: tuple[int, int],
               min_gap: float = 15.0, slope_range: tuple[float, float] = (-0.1, 0.1),
               min_slope_change: float = 0.01, intercept: float | None = None
               ) -> SegmentedModel:
    """Random model with well separated breakpoints and distinct adjacent slopes."""
    lo, hi = years
    while True:
        a = np.sort(rng.uniform(lo + min_gap, hi - min_gap, n_segments - 1))
        chain = np.concatenate(([lo], a, [hi]))
        if np.all(np.diff(chain) >= min_gap):
            break
    while True:
        b = rng.uniform(*slope_range, n_segments)
        if n_segments == 1 or np.all(np.abs(np.diff(b)) >= min_slope_change):
            break
    return SegmentedModel(tuple(b), tuple(a), intercept, (lo, hi))


def _hinge_basis(x: np.ndarray, a, intercept: bool, origin: float) -> np.ndarray:
    cols = [x - origin] + [np.maximum(x - ak, 0.0) for ak in a]
    if intercept:
        cols.insert(0, np.ones_like(x))
    return np.column_stack(cols)


def brute_force_fit(data: LogSeries, n_segments: int, intercept: bool = False,
                    bounds: tuple[float, float] | None = None, min_points: int = 3,
                    origin: float = 0.0, max_tuples: int = MAX_TUPLES) -> FitResult:
    """Global least squares over every ordered tuple of integer breakpoints.

    Integer candidates lie strictly inside ``bounds`` (default: the data range
    shrunk by ``min_points - 1`` years, as in the solver).
    """
    x = data.year_array
    y = data.log_array
    n_breaks = n_segments - 1
    if bounds is None:
        bounds = (x.min() + min_points - 1, x.max() - min_points + 1)
    lo, hi = bounds
    candidates = list(range(math.floor(lo) + 1, math.ceil(hi)))
    n_tuples = math.comb(len(candidates), n_breaks)
    if n_tuples > max_tuples:
        raise EnumerationLimitError(f"{n_tuples} breakpoint tuples exceed limit {max_tuples}")

    best = None
    for a in itertools.combinations(candidates, n_breaks):
        edges = np.concatenate(([-np.inf], a, [np.inf]))
        counts = [np.sum((x > edges[k]) & (x <= edges[k + 1])) for k in range(n_segments)]
        if min(counts) < min_points:
            continue
        A = _hinge_basis(x, a, intercept, origin)
        coef, _, rank, _ = np.linalg.lstsq(A, y, rcond=None)
        if rank < A.shape[1]:
            continue
        r = y - A @ coef
        sse = float(r @ r)
        key = (sse, a)
        if best is None or key < best[0]:
            best = (key, coef, r)
    if best is None:
        raise FitError("no feasible integer breakpoint tuple")
    (sse, a), coef, resid = best
    b0 = float(coef[0]) if intercept else None
    c = coef[int(intercept):]
    slopes = np.cumsum(c)
    model = SegmentedModel(tuple(slopes), tuple(float(v) for v in a), b0,
                           (float(x.min()), float(x.max())), origin)
    params = model.params()
    return FitResult(
        model=model, sse=sse, residuals=resid, n_obs=len(y), n_params=len(params),
        converged=True, iterations=0, starts_tried=n_tuples, best_start=params,
        status="enumerated", params=params, param_names=model.param_names(),
        observed=y,
    )
