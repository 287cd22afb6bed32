"""Post-fit statistics and the choice of segment count."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats

from .series import LogSeries
from .solver import FitConfig, FitError, FitResult, multistart_fit

log = logging.getLogger(__name__)


class SingularCovarianceWarning(UserWarning):
    pass


def _covariance(fit: FitResult) -> tuple[np.ndarray, bool]:
    J = fit.jacobian
    dof = fit.dof
    if dof <= 0:
        raise FitError(f"no residual degrees of freedom (n={fit.n_obs}, p={fit.n_params})")
    sigma2 = fit.sse / dof
    JtJ = J.T @ J
    # equilibrate before inverting; breakpoints and slopes differ by ~1e5 in scale
    d = np.sqrt(np.diag(JtJ))
    d[d == 0] = 1.0
    Js = JtJ / np.outer(d, d)
    pinv = np.linalg.matrix_rank(Js) < len(Js)
    inv = np.linalg.pinv(Js) if pinv else np.linalg.inv(Js)
    if pinv:
        warnings.warn("J'J is singular; covariance uses the pseudo-inverse",
                      SingularCovarianceWarning, stacklevel=3)
    cov = sigma2 * inv / np.outer(d, d)
    return (cov + cov.T) / 2, pinv


def covariance(fit: FitResult) -> np.ndarray:
    """Asymptotic covariance ``sigma^2 (J'J)^-1`` with ``sigma^2 = SSE / (n - p)``.

    ``J`` is the analytic Jacobian at the optimum, breakpoints included.
    """
    return _covariance(fit)[0]


def standard_errors(fit: FitResult) -> np.ndarray:
    return np.sqrt(np.clip(np.diag(covariance(fit)), 0.0, None))


def t_interval(estimate, se, dof: int, level: float = 0.95):
    q = stats.t.ppf(0.5 + level / 2, dof)
    estimate = np.asarray(estimate, dtype=float)
    half = q * np.asarray(se, dtype=float)
    return np.stack([estimate - half, estimate + half], axis=-1)


def confidence_intervals(fit: FitResult, level: float = 0.95) -> np.ndarray:
    """``(low, high)`` per parameter, ``estimate +/- t_{dof} * SE``."""
    return t_interval(fit.params, standard_errors(fit), fit.dof, level)


def t_test(estimate, se, dof: int) -> tuple[np.ndarray, np.ndarray]:
    """Two-sided test of ``parameter == 0``; returns (t, p)."""
    estimate = np.asarray(estimate, dtype=float)
    se = np.asarray(se, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(estimate == 0, 0.0, estimate / se)
    p = 2 * stats.t.sf(np.abs(t), dof)
    return t, p


def t_tests(fit: FitResult) -> np.ndarray:
    return t_test(fit.params, standard_errors(fit), fit.dof)[1]


def r_squared(fit: FitResult) -> tuple[float, float]:
    """(centered, uncentered) R^2 of the log-scale fit."""
    y = fit.observed
    sst_c = float(np.sum((y - y.mean()) ** 2))
    sst_u = float(y @ y)
    centered = 1.0 - fit.sse / sst_c if sst_c > 0 else float("nan")
    uncentered = 1.0 - fit.sse / sst_u if sst_u > 0 else float("nan")
    return centered, uncentered


@dataclass
class InferenceReport:
    names: list[str]
    estimates: np.ndarray
    r_squared_centered: float
    r_squared_uncentered: float
    sigma2_hat: float
    se: np.ndarray
    ci95: np.ndarray
    t_stats: np.ndarray
    p_values: np.ndarray
    dof: int
    level: float = 0.95
    pinv_fallback: bool = False

    def to_dict(self) -> dict:
        params = [
            {
                "name": n, "estimate": float(e), "se": float(s),
                "ci_low": float(lo), "ci_high": float(hi),
                "t": float(t), "p": float(p),
            }
            for n, e, s, (lo, hi), t, p in zip(self.names, self.estimates, self.se,
                                               self.ci95, self.t_stats, self.p_values)
        ]
        return {
            "parameters": params,
            "r_squared_centered": self.r_squared_centered,
            "r_squared_uncentered": self.r_squared_uncentered,
            "sigma2_hat": self.sigma2_hat,
            "dof": self.dof,
            "ci_level": self.level,
            "pinv_fallback": self.pinv_fallback,
        }


def infer(fit: FitResult, level: float = 0.95) -> InferenceReport:
    cov, pinv = _covariance(fit)
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    t, p = t_test(fit.params, se, fit.dof)
    rc, ru = r_squared(fit)
    return InferenceReport(
        names=list(fit.param_names),
        estimates=fit.params.copy(),
        r_squared_centered=rc,
        r_squared_uncentered=ru,
        sigma2_hat=fit.sse / fit.dof,
        se=se,
        ci95=t_interval(fit.params, se, fit.dof, level),
        t_stats=t,
        p_values=p,
        dof=fit.dof,
        level=level,
        pinv_fallback=pinv,
    )


@dataclass
class Candidate:
    n_segments: int
    sse: float | None
    r_squared: float | None
    delta_r_squared: float | None
    note: str = ""

    def to_dict(self) -> dict:
        return {
            "n_segments": self.n_segments,
            "sse": self.sse,
            "r_squared": self.r_squared,
            "delta_r_squared": self.delta_r_squared,
            "note": self.note,
        }


@dataclass
class SelectionTrace:
    candidates: list[Candidate] = field(default_factory=list)
    chosen: int = 1
    threshold: float = 0.005

    def to_dict(self) -> dict:
        return {
            "candidates": [c.to_dict() for c in self.candidates],
            "chosen": self.chosen,
            "threshold": self.threshold,
        }


def nested_starts(fit: FitResult, config: FitConfig, n_grid: int) -> list[np.ndarray]:
    """Starts for S+1 segments that reproduce the S-segment fit exactly.

    Each splits one segment at a grid position, giving both halves the old slope.
    The start is exact only when ``config`` keeps the intercept setting of ``fit``;
    otherwise b0 is dropped, or added as 0.
    """
    model = fit.model
    lo, hi = model.domain
    b0 = [model.intercept or 0.0] if config.use_intercept else []
    out = []
    for t in np.linspace(lo, hi, n_grid + 2)[1:-1]:
        a = list(model.breakpoints)
        if t in a:
            continue
        k = int(np.searchsorted(a, t))
        b = list(model.slopes)
        b.insert(k, b[k])
        a.insert(k, float(t))
        out.append(np.array(b0 + b + a))
    return out


def select_segments(data: LogSeries, max_segments: int = 6, threshold: float = 0.005,
                    config: FitConfig | None = None, exhaustive: bool = False
                    ) -> tuple[FitResult, SelectionTrace]:
    """Pick the segment count where centered R^2 stops improving by ``threshold``.

    Counts are fitted in increasing order. The smallest S whose successor gains
    less than ``threshold`` is chosen (or the largest feasible count). With
    ``exhaustive=False`` fitting stops once that decision is made.
    """
    if max_segments < 1:
        raise ValueError("max_segments must be >= 1")
    config = config or FitConfig()
    trace = SelectionTrace(threshold=threshold)
    fits: dict[int, FitResult] = {}
    prev: FitResult | None = None
    prev_r2 = None
    chosen = None
    for s in range(1, max_segments + 1):
        cfg = replace(config, n_segments=s)
        extra = nested_starts(prev, cfg, cfg.grid_points_per_breakpoint) if prev else []
        try:
            fit = multistart_fit(data, cfg, extra_starts=extra)
        except FitError as exc:
            log.info("skipping %d segment(s): %s", s, exc)
            trace.candidates.append(Candidate(s, None, None, None, f"skipped: {exc}"))
            continue
        r2 = r_squared(fit)[0]
        gain = None if prev_r2 is None else r2 - prev_r2
        trace.candidates.append(Candidate(s, fit.sse, r2, gain))
        if chosen is None and gain is not None and gain < threshold:
            chosen = prev.model.n_segments
            if not exhaustive:
                break
        fits[s] = fit
        prev, prev_r2 = fit, r2
    if not fits:
        raise FitError("no candidate segment count could be fitted")
    if chosen is None:
        chosen = max(fits)
    trace.chosen = chosen
    return fits[chosen], trace
