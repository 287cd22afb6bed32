"""Two-series comparison with dummy-coded slope interactions.

Both series are stacked with an indicator ``D`` (0 for the first, 1 for the
second). Breakpoints are shared; every slope gets an interaction term, so the
second group's slope in segment ``k`` is ``b_k + d_k``. With an intercept the
second group also gets its own level shift ``d0``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .inference import InferenceReport, infer
from .model import SegmentedModel, design_matrix
from .series import AnnualSeries, LogSeries, log_transform
from .solver import (FitConfig, FitError, FitResult, SeriesDesign, multistart_fit,
                     run_multistart)


class InteractionDesign(SeriesDesign):
    def __init__(self, years0, y0, years1, y1, n_segments: int, intercept: bool,
                 origin: float = 0.0):
        years = np.concatenate([np.asarray(years0, float), np.asarray(years1, float)])
        y = np.concatenate([np.asarray(y0, float), np.asarray(y1, float)])
        super().__init__(years, y, n_segments, intercept, origin)
        self.group = np.concatenate([np.zeros(len(years0)), np.ones(len(years1))])
        self.group_years = [np.asarray(years0, float), np.asarray(years1, float)]

    @property
    def n_linear(self) -> int:
        return 2 * self.n_segments + 2 * int(self.intercept)

    def linear_names(self) -> list[str]:
        head = ["b0", "d0"] if self.intercept else []
        s = range(1, self.n_segments + 1)
        return head + [f"b{k}" for k in s] + [f"d{k}" for k in s]

    def linear_matrix(self, a) -> np.ndarray:
        X = design_matrix(self.years, a, self.origin)
        cols = [X, self.group[:, None] * X]
        if self.intercept:
            cols.insert(0, np.column_stack([np.ones(len(self.years)), self.group]))
        return np.hstack(cols)

    def base_and_delta(self, beta):
        beta = np.asarray(beta)
        off = 2 * int(self.intercept)
        s = self.n_segments
        return beta[off:off + s], beta[off + s:off + 2 * s]

    def predict(self, theta) -> np.ndarray:
        beta, a = self.split(theta)
        return self.linear_matrix(a) @ beta

    def breakpoint_jacobian(self, beta, a) -> np.ndarray:
        b, d = self.base_and_delta(beta)
        a = np.asarray(a, dtype=float)
        slopes = b[None, :] + self.group[:, None] * d[None, :]
        right = self.years[:, None] > a[None, :]
        return right * (slopes[:, :-1] - slopes[:, 1:])

    def segment_counts(self, a) -> np.ndarray:
        a = np.asarray(a, dtype=float)
        rows = []
        for yrs in self.group_years:
            cut = np.searchsorted(yrs, a, side="right")
            rows.append(np.diff(np.concatenate(([0], cut, [len(yrs)]))))
        return np.array(rows)

    def group_models(self, theta) -> tuple[SegmentedModel, SegmentedModel]:
        beta, a = self.split(theta)
        b, d = self.base_and_delta(beta)
        out = []
        for g, yrs in enumerate(self.group_years):
            if self.intercept:
                b0 = float(beta[0] + g * beta[1])
            else:
                b0 = None
            out.append(SegmentedModel(tuple(b + g * d), tuple(a), b0,
                                      (float(yrs.min()), float(yrs.max())), self.origin))
        return out[0], out[1]

    def to_model(self, theta) -> SegmentedModel:
        return self.group_models(theta)[0]


@dataclass
class InteractionTest:
    name: str
    delta: float
    se: float
    t: float
    p: float
    significant: bool

    def to_dict(self) -> dict:
        return dict(name=self.name, delta=self.delta, se=self.se, t=self.t, p=self.p,
                    significant=self.significant)


@dataclass
class ComparisonResult:
    labels: tuple[str, str]
    breakpoints: np.ndarray
    base_slopes: np.ndarray
    deltas: np.ndarray
    delta_se: np.ndarray
    delta_t: np.ndarray
    delta_p: np.ndarray
    sse: float
    r_squared: float
    models: tuple[SegmentedModel, SegmentedModel]
    fit: FitResult
    inference: InferenceReport
    intercept_delta: float | None = None

    def to_dict(self) -> dict:
        return {
            "labels": list(self.labels),
            "coding": {self.labels[0]: 0, self.labels[1]: 1},
            "breakpoints": "shared",
            "breakpoint_estimates": self.breakpoints.tolist(),
            "base_slopes": self.base_slopes.tolist(),
            "interactions": [t.to_dict() for t in test_interactions(self)],
            "intercept_delta": self.intercept_delta,
            "sse": self.sse,
            "r_squared_centered": self.r_squared,
            "models": {lab: m.to_dict() for lab, m in zip(self.labels, self.models)},
            "converged": self.fit.converged,
            "status": self.fit.status,
        }


def _as_log(series) -> LogSeries:
    if isinstance(series, LogSeries):
        return series
    if isinstance(series, AnnualSeries):
        return log_transform(series)
    raise TypeError(f"expected AnnualSeries or LogSeries, got {type(series).__name__}")


def fit_interaction(series0, series1, config: FitConfig,
                    labels: tuple[str, str] | None = None) -> ComparisonResult:
    """Joint fit of two series with shared breakpoints and per-slope interactions."""
    d0, d1 = _as_log(series0), _as_log(series1)
    if labels is None:
        labels = (d0.source_label or "group0", d1.source_label or "group1")
        if labels[0] == labels[1]:
            labels = (labels[0] + "[0]", labels[1] + "[1]")
    y0, y1 = d0.year_array, d1.year_array
    if max(y0.min(), y1.min()) > min(y0.max(), y1.max()):
        raise FitError("the two series have no overlapping years")
    need = config.n_segments * config.min_points_per_segment
    for lab, d in zip(labels, (d0, d1)):
        if len(d) < need:
            raise FitError(f"{lab}: {config.n_segments} segment(s) need at least {need} "
                           f"observations, got {len(d)}")
    design = InteractionDesign(y0, d0.log_array, y1, d1.log_array, config.n_segments,
                               config.use_intercept, config.origin)
    fit = run_multistart(design, config)
    rep = infer(fit)
    beta, a = design.split(fit.params)
    b, d = design.base_and_delta(beta)
    s = config.n_segments
    off = 2 * int(design.intercept) + s
    sl = slice(off, off + s)
    return ComparisonResult(
        labels=tuple(labels),
        breakpoints=np.asarray(a).copy(),
        base_slopes=b.copy(),
        deltas=d.copy(),
        delta_se=rep.se[sl].copy(),
        delta_t=rep.t_stats[sl].copy(),
        delta_p=rep.p_values[sl].copy(),
        sse=fit.sse,
        r_squared=rep.r_squared_centered,
        models=design.group_models(fit.params),
        fit=fit,
        inference=rep,
        intercept_delta=float(beta[1]) if design.intercept else None,
    )


def test_interactions(result: ComparisonResult, alpha: float = 0.05) -> list[InteractionTest]:
    """Two-sided t test of each slope interaction against zero."""
    return [
        InteractionTest(f"d{k}", float(d), float(se), float(t), float(p), bool(p < alpha))
        for k, (d, se, t, p) in enumerate(
            zip(result.deltas, result.delta_se, result.delta_t, result.delta_p), start=1)
    ]


test_interactions.__test__ = False  # not a pytest test


def fit_separately(series0, series1, config: FitConfig):
    """Independent fits of each series (breakpoints not shared)."""
    return multistart_fit(_as_log(series0), config), multistart_fit(_as_log(series1), config)
