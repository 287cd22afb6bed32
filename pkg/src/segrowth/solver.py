"""Least-squares estimation of segmented growth models.

Slopes (and the optional intercept) enter the model linearly once the
breakpoints are fixed, so every fit starts from an exact linear solve at a
grid of breakpoint positions and is then refined jointly by Gauss-Newton
with step halving. Trial steps that break the ordering, the bounds or the
minimum segment occupancy are halved until they are feasible.
"""
from __future__ import annotations

import itertools
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg.lapack import dpotrf, dpotrs

from .model import (SegmentedModel, breakpoint_jacobian, design_matrix,
                    param_names)
from .series import LogSeries

log = logging.getLogger(__name__)

RIDGE = 1e-10


class FitError(ValueError):
    pass


class SegmentTooSmallError(FitError):
    pass


class RankDeficientError(FitError):
    pass


class InfeasibleStartError(FitError):
    pass


class NoFeasibleStartError(FitError):
    pass


@dataclass(frozen=True)
class FitConfig:
    n_segments: int = 1
    intercept: bool | None = None  # None: fit b0 only for single-segment models
    breakpoint_bounds: tuple[float, float] | None = None
    min_points_per_segment: int = 3
    grid_points_per_breakpoint: int = 8
    max_iterations: int = 200
    tolerance: float = 1e-12
    step_halving_max: int = 30
    origin: float = 0.0
    threads: int = 1
    reproject: bool = True

    def __post_init__(self):
        if self.n_segments < 1:
            raise ValueError("n_segments must be >= 1")
        if self.grid_points_per_breakpoint < 2:
            raise ValueError("grid_points_per_breakpoint must be >= 2")
        if self.min_points_per_segment < 1:
            raise ValueError("min_points_per_segment must be >= 1")
        if self.breakpoint_bounds is not None:
            lo, hi = self.breakpoint_bounds
            if not lo < hi:
                raise ValueError(f"empty breakpoint bounds {self.breakpoint_bounds}")

    @property
    def use_intercept(self) -> bool:
        return self.n_segments == 1 if self.intercept is None else bool(self.intercept)

    def resolved_bounds(self, years: np.ndarray) -> tuple[float, float]:
        """Explicit bounds, or the data range shrunk by ``min_points - 1`` years."""
        first, last = float(np.min(years)), float(np.max(years))
        if self.breakpoint_bounds is None:
            span = self.min_points_per_segment - 1
            return first + span, last - span
        lo, hi = map(float, self.breakpoint_bounds)
        if lo < first or hi > last:
            raise FitError(f"breakpoint bounds {lo:g}:{hi:g} outside data years "
                           f"{first:g}:{last:g}")
        return lo, hi

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["intercept"] = self.use_intercept
        if self.breakpoint_bounds is not None:
            d["breakpoint_bounds"] = list(self.breakpoint_bounds)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FitConfig":
        """Inverse of ``to_dict``; unknown keys (CLI options echoed alongside) are ignored."""
        kw = {k: d[k] for k in cls.__dataclass_fields__ if k in d}
        if kw.get("breakpoint_bounds") is not None:
            kw["breakpoint_bounds"] = tuple(kw["breakpoint_bounds"])
        return cls(**kw)


def default_threads() -> int:
    try:
        return max(1, int(os.environ.get("SEGROWTH_THREADS", "1")))
    except ValueError:
        return 1


class SeriesDesign:
    """Single series: ``y ~ b0? + X(a) @ b``.

    Subclasses override ``linear_matrix``, ``breakpoint_jacobian``,
    ``segment_counts`` and ``linear_names`` for other stacked layouts.
    """

    def __init__(self, years, y, n_segments: int, intercept: bool, origin: float = 0.0):
        self.years = np.asarray(years, dtype=float)
        self.y = np.asarray(y, dtype=float)
        self.n_segments = n_segments
        self.intercept = intercept
        self.origin = origin
        self.knots = np.unique(self.years)

    @property
    def n_breaks(self) -> int:
        return self.n_segments - 1

    @property
    def n_linear(self) -> int:
        return self.n_segments + int(self.intercept)

    def linear_names(self) -> list[str]:
        return param_names(self.n_segments, self.intercept)[: self.n_linear]

    def param_names(self) -> list[str]:
        return self.linear_names() + [f"a{k}" for k in range(1, self.n_segments)]

    def linear_matrix(self, a) -> np.ndarray:
        X = design_matrix(self.years, a, self.origin)
        if self.intercept:
            X = np.column_stack([np.ones(len(self.years)), X])
        return X

    _linear_cache = None

    def linear_at(self, a) -> np.ndarray:
        """``linear_matrix`` memoized on the last breakpoints seen; treat as read-only."""
        key = np.asarray(a, dtype=float).tobytes()
        hit = self._linear_cache
        if hit is not None and hit[0] == key:
            return hit[1]
        X = self.linear_matrix(a)
        self._linear_cache = (key, X)
        return X

    def slopes_of(self, beta) -> np.ndarray:
        return np.asarray(beta[int(self.intercept):])

    def breakpoint_jacobian(self, beta, a) -> np.ndarray:
        return breakpoint_jacobian(self.years, self.slopes_of(beta), a)

    def segment_counts(self, a) -> np.ndarray:
        """Observations per segment, one row per group."""
        # years are sorted: count of years <= a_k
        cut = [0, *np.searchsorted(self.years, a, side="right").tolist(), len(self.years)]
        return np.array([[hi - lo for lo, hi in zip(cut, cut[1:])]])

    def split(self, theta):
        theta = np.asarray(theta, dtype=float)
        return theta[: self.n_linear], theta[self.n_linear:]

    def predict(self, theta) -> np.ndarray:
        beta, a = self.split(theta)
        if self.n_breaks == 0:
            return self.linear_matrix(a) @ beta
        b = self.slopes_of(beta)
        edges = np.empty(len(b))
        edges[0] = self.origin
        edges[1:] = a
        level = np.empty(len(b))
        level[0] = beta[0] if self.intercept else 0.0
        np.cumsum(b[:-1] * (a - edges[:-1]), out=level[1:])
        if self.intercept:
            level[1:] += beta[0]
        j = a.searchsorted(self.years, side="left")
        return level[j] + b[j] * (self.years - edges[j])

    def jacobian(self, theta) -> np.ndarray:
        beta, a = self.split(theta)
        return np.column_stack([self.linear_at(a), self.breakpoint_jacobian(beta, a)])

    def to_model(self, theta) -> SegmentedModel:
        beta, a = self.split(theta)
        b0 = float(beta[0]) if self.intercept else None
        domain = (float(self.years.min()), float(self.years.max()))
        return SegmentedModel(tuple(self.slopes_of(beta)), tuple(a), b0, domain, self.origin)


def _lstsq(A: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, int]:
    """Column-equilibrated least squares via SVD; returns (solution, rank)."""
    scale = np.linalg.norm(A, axis=0)
    scale[scale == 0] = 1.0
    sol, _, rank, _ = np.linalg.lstsq(A / scale, b, rcond=None)
    return sol / scale, int(rank)


def _fast_lstsq(A: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, int]:
    """Cholesky on the equilibrated normal equations, SVD when poorly conditioned."""
    G = A.T @ A
    scale = np.sqrt(G.diagonal())
    if scale.min() > 0:
        L, info = dpotrf(G / np.outer(scale, scale), lower=1)
        if info == 0:
            d = L.diagonal()
            # cond(A) ~ (max d / min d); keep at most ~1e-8 relative error
            if d.min() > 1e-4 * d.max():
                x, info = dpotrs(L, (A.T @ b) / scale, lower=1)
                if info == 0:
                    return x / scale, A.shape[1]
    return _lstsq(A, b)


@dataclass
class Feasibility:
    bounds: tuple[float, float]
    min_points: int

    def check(self, design: SeriesDesign, a) -> str | None:
        """None when feasible, otherwise a reason."""
        a = np.asarray(a, dtype=float)
        if len(a):
            lo, hi = self.bounds
            prev = lo
            for v in a.tolist():
                if not prev < v:
                    if v != v:
                        return "non-finite breakpoint"
                    return (f"breakpoints {a.tolist()} not strictly increasing "
                            f"inside bounds ({lo:g}, {hi:g})")
                prev = v
            if not prev < hi:
                return f"breakpoints {a.tolist()} outside bounds ({lo:g}, {hi:g})"
        counts = design.segment_counts(a)
        if counts.min() < self.min_points:
            grp, seg = np.unravel_index(np.argmin(counts), counts.shape)
            where = f"segment {seg + 1}" + (f" of group {grp}" if counts.shape[0] > 1 else "")
            return (f"{where} holds {counts[grp, seg]} observations, "
                    f"fewer than {self.min_points}")
        return None


@dataclass
class OLSResult:
    slopes: np.ndarray
    intercept: float | None
    sse: float
    beta: np.ndarray


def solve_linear(design: SeriesDesign, a, min_points: int = 3) -> OLSResult:
    a = np.asarray(a, dtype=float)
    if np.any(np.diff(a) <= 0):
        raise FitError(f"breakpoints not strictly increasing: {a.tolist()}")
    counts = design.segment_counts(a)
    if counts.min() < min_points:
        grp, seg = np.unravel_index(np.argmin(counts), counts.shape)
        where = f"segment {seg + 1}" + (f" of group {grp}" if counts.shape[0] > 1 else "")
        raise SegmentTooSmallError(
            f"{where} holds {counts[grp, seg]} observations, fewer than {min_points}")
    X = design.linear_matrix(a)
    beta, rank = _lstsq(X, design.y)
    if rank < X.shape[1]:
        raise RankDeficientError(f"design has rank {rank} < {X.shape[1]} parameters")
    r = design.y - X @ beta
    b0 = float(beta[0]) if design.intercept else None
    return OLSResult(design.slopes_of(beta), b0, float(r @ r), beta)


def ols_given_breakpoints(data: LogSeries, breakpoints: Sequence[float],
                          intercept: bool, min_points: int = 3,
                          origin: float = 0.0) -> OLSResult:
    """Exact least-squares slopes for fixed breakpoints."""
    design = SeriesDesign(data.year_array, data.log_array, len(breakpoints) + 1,
                          intercept, origin)
    return solve_linear(design, breakpoints, min_points)


@dataclass
class FitResult:
    model: SegmentedModel
    sse: float
    residuals: np.ndarray
    n_obs: int
    n_params: int
    converged: bool
    iterations: int
    starts_tried: int
    best_start: np.ndarray
    status: str = "converged"
    params: np.ndarray = field(default_factory=lambda: np.empty(0))
    param_names: list[str] = field(default_factory=list)
    observed: np.ndarray = field(default_factory=lambda: np.empty(0))
    jacobian: np.ndarray = field(default_factory=lambda: np.empty((0, 0)))
    sse_trace: list[float] = field(default_factory=list)
    ridge_used: bool = False

    @property
    def fitted(self) -> np.ndarray:
        return self.observed - self.residuals

    @property
    def dof(self) -> int:
        return self.n_obs - self.n_params


def _finish(design: SeriesDesign, theta, status: str, iterations: int,
            trace: list[float], start, ridge_used: bool, model=None) -> FitResult:
    theta = np.asarray(theta, dtype=float)
    resid = design.y - design.predict(theta)
    return FitResult(
        model=model if model is not None else design.to_model(theta),
        sse=float(resid @ resid),
        residuals=resid,
        n_obs=len(design.y),
        n_params=len(theta),
        converged=status == "converged",
        iterations=iterations,
        starts_tried=1,
        best_start=np.asarray(start, dtype=float),
        status=status,
        params=theta,
        param_names=design.param_names(),
        observed=design.y,
        jacobian=design.jacobian(theta),
        sse_trace=trace,
        ridge_used=ridge_used,
    )


def _gn_step(J: np.ndarray, r: np.ndarray) -> tuple[np.ndarray, bool]:
    delta, rank = _fast_lstsq(J, r)
    if rank == J.shape[1] and np.all(np.isfinite(delta)):
        return delta, False
    p = J.shape[1]
    A = np.vstack([J, np.sqrt(RIDGE) * np.eye(p)])
    delta, _ = _lstsq(A, np.concatenate([r, np.zeros(p)]))
    if not np.all(np.isfinite(delta)):
        raise RankDeficientError("singular normal equations even with ridge fallback")
    return delta, True


def _line_search(design, feas, theta, delta, sse, max_halving):
    """Largest ``2**-h`` step that is feasible and does not raise the SSE."""
    step = 1.0
    for _ in range(max_halving + 1):
        trial = theta + step * delta
        if feas.check(design, design.split(trial)[1]) is None:
            r_t = design.y - design.predict(trial)
            sse_t = float(r_t @ r_t)
            if sse_t <= sse:
                return trial, r_t, sse_t
        step *= 0.5
    return None


def _reproject(design: SeriesDesign, theta, r, sse, solve=None):
    """Exact linear solve for the slopes at the current breakpoints; never raises SSE."""
    beta, a = design.split(theta)
    X = design.linear_at(a)
    beta_new, rank = (solve or _fast_lstsq)(X, design.y)
    if rank < X.shape[1]:
        return theta, r, sse
    r_new = design.y - X @ beta_new
    sse_new = float(r_new @ r_new)
    if sse_new <= sse:
        return np.concatenate([beta_new, a]), r_new, sse_new
    return theta, r, sse


def _snap_crossings(design, feas, old, theta, r, sse, reversed_):
    """Try pinning breakpoints that just crossed a data year back onto that year.

    Breakpoint minima often sit exactly on a data year, where the objective has
    a kink; plain Gauss-Newton zig-zags across it. Only breakpoints whose
    direction of travel reversed (``reversed_``) are tried.
    """
    knots = design.knots
    a_old = design.split(old)[1]
    for k in np.flatnonzero(reversed_):
        a = design.split(theta)[1]
        lo, hi = sorted((a_old[k], a[k]))
        i = np.searchsorted(knots, lo, side="left")
        j = np.searchsorted(knots, hi, side="right")
        if i == j:
            continue
        crossed = knots[i:j]
        t = crossed[np.argmin(np.abs(crossed - a[k]))]
        if t == a[k]:
            continue
        a_new = a.copy()
        a_new[k] = t
        if feas.check(design, a_new) is not None:
            continue
        cand = np.concatenate([design.split(theta)[0], a_new])
        r_c = design.y - design.predict(cand)
        cand, r_c, sse_c = _reproject(design, cand, r_c, float(r_c @ r_c))
        if sse_c <= sse:
            theta, r, sse = cand, r_c, sse_c
    return theta, r, sse


def _polish(design, feas, theta, r, sse, max_steps: int = 8):
    """Refine a converged point until the Gauss-Newton step stops contracting.

    The main loop solves steps through the normal equations and judges them by
    SSE, and both lose resolution near the optimum: the Cholesky path squares
    the condition number, and a weakly identified breakpoint can move by 1e-8
    while the SSE changes less than the rounding in ``r @ r``. Here each step
    is solved by SVD and accepted while its size keeps shrinking and the SSE
    stays within rounding of the current value.
    """
    theta, r, sse = _reproject(design, theta, r, sse, _lstsq)
    noise = 1e-12 * sse + len(r) * np.finfo(float).eps ** 2
    prev = np.inf
    for _ in range(max_steps):
        J = design.jacobian(theta)
        delta, rank = _lstsq(J, r)
        size = float(np.max(np.abs(delta) / np.maximum(np.abs(theta), 1.0)))
        if rank < J.shape[1] or size == 0.0 or not size < 0.5 * prev:
            break
        trial = theta + delta
        if feas.check(design, design.split(trial)[1]) is not None:
            break
        r_t = design.y - design.predict(trial)
        sse_t = float(r_t @ r_t)
        if sse_t > sse + noise:
            break
        theta, r, sse, prev = trial, r_t, sse_t, size
        if size <= 1e-15:
            break
    return theta, r, sse


def run_gauss_newton(design: SeriesDesign, theta0, config: FitConfig,
                     feas: Feasibility | None = None) -> FitResult:
    if feas is None:
        feas = Feasibility(config.resolved_bounds(design.years), config.min_points_per_segment)
    theta = np.asarray(theta0, dtype=float).copy()
    if len(theta) != design.n_linear + design.n_breaks:
        raise InfeasibleStartError(
            f"expected {design.n_linear + design.n_breaks} parameters, got {len(theta)}")
    reason = feas.check(design, design.split(theta)[1])
    if reason:
        raise InfeasibleStartError(f"infeasible start: {reason}")

    tol = config.tolerance
    r = design.y - design.predict(theta)
    sse = float(r @ r)
    # below this the fit is exact to rounding
    floor = len(r) * (64 * np.finfo(float).eps * max(1.0, float(np.max(np.abs(design.y))))) ** 2
    trace = [sse]
    status, ridge_used = "max_iterations", False
    last_move = np.zeros(design.n_breaks)
    for _ in range(config.max_iterations):
        if sse <= floor:
            status = "converged"
            break
        J = design.jacobian(theta)
        delta, ridged = _gn_step(J, r)
        ridge_used |= ridged
        lin = r - J @ delta
        if sse - float(lin @ lin) <= tol * sse:
            status = "converged"
            break
        found = _line_search(design, feas, theta, delta, sse, config.step_halving_max)
        if found is None:
            # at a kink: hold breakpoints that sit on data years, move the rest
            pinned = np.isin(design.split(theta)[1], design.knots)
            if not pinned.any():
                status = "stalled"
                break
            free = np.ones(len(theta), bool)
            free[design.n_linear:][pinned] = False
            delta = np.zeros_like(theta)
            delta[free], ridged = _gn_step(J[:, free], r)
            ridge_used |= ridged
            lin = r - J @ delta
            if sse - float(lin @ lin) <= tol * sse:
                status = "converged"
                break
            found = _line_search(design, feas, theta, delta, sse, config.step_halving_max)
            if found is None:
                status = "stalled"
                break
        trial, r_t, sse_t = found
        if config.reproject:
            trial, r_t, sse_t = _reproject(design, trial, r_t, sse_t)
            move = design.split(trial)[1] - design.split(theta)[1]
            reversed_ = move * last_move < 0
            if reversed_.any():
                trial, r_t, sse_t = _snap_crossings(design, feas, theta, trial, r_t, sse_t,
                                                    reversed_)
            last_move = design.split(trial)[1] - design.split(theta)[1]
        improvement = sse - sse_t
        theta, r, sse = trial, r_t, sse_t
        trace.append(sse)
        if improvement <= tol * trace[-2] or sse <= floor:
            status = "converged"
            break
    if status == "converged" and sse > floor:
        theta, r, sse = _polish(design, feas, theta, r, sse)
    return _finish(design, theta, status, len(trace) - 1, trace, theta0, ridge_used)


def gauss_newton(data: LogSeries, init: Sequence[float], config: FitConfig) -> FitResult:
    """Refine a full parameter vector ``(b0?, b_1..b_S, a_1..a_{S-1})``."""
    design = SeriesDesign(data.year_array, data.log_array, config.n_segments,
                          config.use_intercept, config.origin)
    return run_gauss_newton(design, init, config)


def breakpoint_grid(bounds: tuple[float, float], n_breaks: int, points: int):
    """Strictly increasing breakpoint tuples from an even interior grid."""
    lo, hi = bounds
    nodes = np.linspace(lo, hi, points + 2)[1:-1]
    return [np.array(c) for c in itertools.combinations(nodes, n_breaks)]


def _result_key(res: FitResult):
    return (res.sse, tuple(res.params.tolist()))


def run_multistart(design: SeriesDesign, config: FitConfig,
                   extra_starts: Sequence[Sequence[float]] = ()) -> FitResult:
    feas = Feasibility(config.resolved_bounds(design.years), config.min_points_per_segment)
    starts: list[np.ndarray] = []
    for a in breakpoint_grid(feas.bounds, design.n_breaks, config.grid_points_per_breakpoint):
        if feas.check(design, a) is not None:
            continue
        try:
            ols = solve_linear(design, a, config.min_points_per_segment)
        except FitError:
            continue
        starts.append(np.concatenate([ols.beta, a]))
    for theta in extra_starts:
        theta = np.asarray(theta, dtype=float)
        if feas.check(design, design.split(theta)[1]) is None:
            starts.append(theta)
    if not starts:
        raise NoFeasibleStartError(
            f"no feasible starting point for {design.n_segments} segment(s) within "
            f"bounds {feas.bounds}; widen the bounds or lower min_points_per_segment")

    def run(theta):
        try:
            return run_gauss_newton(design, theta, config, feas)
        except FitError as exc:
            log.debug("start %s failed: %s", theta, exc)
            return None

    threads = config.threads
    if threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, starts))
    else:
        results = [run(t) for t in starts]
    results = [r for r in results if r is not None]
    if not results:
        raise NoFeasibleStartError("every start failed")
    best = min(results, key=_result_key)
    best.starts_tried = len(results)
    return best


def multistart_fit(data: LogSeries, config: FitConfig,
                   extra_starts: Sequence[Sequence[float]] = ()) -> FitResult:
    """Gauss-Newton from every feasible grid node; keeps the lowest SSE."""
    need = config.n_segments * config.min_points_per_segment
    if len(data) < need:
        raise FitError(f"{config.n_segments} segment(s) need at least {need} "
                       f"observations, got {len(data)}")
    design = SeriesDesign(data.year_array, data.log_array, config.n_segments,
                          config.use_intercept, config.origin)
    return run_multistart(design, config, extra_starts)
