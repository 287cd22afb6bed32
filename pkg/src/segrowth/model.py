"""Chained piecewise log-linear growth model.

For breakpoints ``a_1 < ... < a_{S-1}`` and slopes ``b_1 .. b_S`` the log count
in segment ``j`` is::

    b_0 + sum_{k<j} b_k * (a_k - a_{k-1}) + b_j * (year - a_{j-1})

with ``a_0 = origin`` (0 unless a year offset is used). A year equal to a
breakpoint belongs to the segment on its left. ``b_0`` may be absent, which
fixes it at zero.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

LN2 = math.log(2.0)


class ExtrapolationError(ValueError):
    pass


@dataclass(frozen=True)
class SegmentedModel:
    slopes: tuple[float, ...]
    breakpoints: tuple[float, ...] = ()
    intercept: float | None = None
    domain: tuple[float, float] = (-math.inf, math.inf)
    origin: float = 0.0

    def __post_init__(self):
        slopes = tuple(float(b) for b in self.slopes)
        bps = tuple(float(a) for a in self.breakpoints)
        object.__setattr__(self, "slopes", slopes)
        object.__setattr__(self, "breakpoints", bps)
        object.__setattr__(self, "domain", (float(self.domain[0]), float(self.domain[1])))
        if self.intercept is not None:
            object.__setattr__(self, "intercept", float(self.intercept))
        if len(slopes) < 1:
            raise ValueError("a model needs at least one slope")
        if len(slopes) != len(bps) + 1:
            raise ValueError(
                f"{len(slopes)} slopes need {len(slopes) - 1} breakpoints, got {len(bps)}"
            )
        lo, hi = self.domain
        chain = (lo,) + bps + (hi,)
        if not all(x < y for x, y in zip(chain, chain[1:])):
            raise ValueError(f"breakpoints {bps} not strictly increasing inside {self.domain}")

    @property
    def n_segments(self) -> int:
        return len(self.slopes)

    @property
    def has_intercept(self) -> bool:
        return self.intercept is not None

    def params(self) -> np.ndarray:
        """Flat vector ``(b0?, b_1..b_S, a_1..a_{S-1})``."""
        head = [self.intercept] if self.has_intercept else []
        return np.array(head + list(self.slopes) + list(self.breakpoints), dtype=float)

    def param_names(self) -> list[str]:
        return param_names(self.n_segments, self.has_intercept)

    def with_params(self, theta: Sequence[float]) -> "SegmentedModel":
        theta = list(theta)
        intercept = theta.pop(0) if self.has_intercept else None
        s = self.n_segments
        return SegmentedModel(tuple(theta[:s]), tuple(theta[s:]), intercept,
                              self.domain, self.origin)

    def to_dict(self) -> dict:
        return {
            "intercept": self.intercept,
            "slopes": list(self.slopes),
            "breakpoints": list(self.breakpoints),
            "domain": list(self.domain),
            "origin": self.origin,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SegmentedModel":
        domain = d.get("domain") or (-math.inf, math.inf)
        return cls(tuple(d["slopes"]), tuple(d.get("breakpoints", ())),
                   d.get("intercept"), tuple(domain), d.get("origin", 0.0))


def param_names(n_segments: int, intercept: bool) -> list[str]:
    names = ["b0"] if intercept else []
    names += [f"b{k}" for k in range(1, n_segments + 1)]
    names += [f"a{k}" for k in range(1, n_segments)]
    return names


def segment_index(breakpoints: Sequence[float], years) -> np.ndarray:
    """0-based segment of each year; ties go left."""
    return np.searchsorted(np.asarray(breakpoints, dtype=float),
                           np.asarray(years, dtype=float), side="left")


def _check_domain(model: SegmentedModel, years: np.ndarray, extrapolate: bool):
    if extrapolate:
        return
    lo, hi = model.domain
    bad = (years < lo) | (years > hi)
    if np.any(bad):
        raise ExtrapolationError(
            f"year {years[bad][0]:g} outside model domain [{lo:g}, {hi:g}]"
        )


def _offsets(model: SegmentedModel) -> tuple[np.ndarray, np.ndarray]:
    """Left edge ``a_{j-1}`` and accumulated log level at that edge, per segment."""
    edges = np.array((model.origin,) + model.breakpoints)
    b = np.array(model.slopes)
    steps = b[:-1] * np.diff(edges)
    level = np.empty(len(b))
    level[0] = model.intercept or 0.0
    for k, step in enumerate(steps, start=1):
        level[k] = level[k - 1] + step
    return edges, level


def branch_value(model: SegmentedModel, year: float, segment: int) -> float:
    """Evaluate the formula of one segment (1-based) at ``year``, ignoring which
    segment the year actually falls in."""
    edges, level = _offsets(model)
    j = segment - 1
    return float(level[j] + model.slopes[j] * (year - edges[j]))


def predict_log(model: SegmentedModel, year, extrapolate: bool = False):
    years = np.asarray(year, dtype=float)
    _check_domain(model, np.atleast_1d(years), extrapolate)
    edges, level = _offsets(model)
    j = segment_index(model.breakpoints, years)
    out = level[j] + np.asarray(model.slopes)[j] * (years - edges[j])
    return float(out) if out.ndim == 0 else out


def predict_count(model: SegmentedModel, year, extrapolate: bool = False):
    out = np.exp(predict_log(model, year, extrapolate))
    return float(out) if np.ndim(out) == 0 else out


def design_matrix(years, breakpoints: Sequence[float], origin: float = 0.0) -> np.ndarray:
    """Columns multiplying ``b_1..b_S``; the prediction is ``X @ b (+ b0)``."""
    years = np.asarray(years, dtype=float)
    a = np.asarray(breakpoints, dtype=float)
    lower = np.concatenate(([-np.inf], a))
    upper = np.concatenate((a, [np.inf]))
    X = np.minimum(np.maximum(years[:, None], lower), upper)
    X[:, 1:] -= a
    X[:, 0] -= origin
    return X


def breakpoint_jacobian(years, slopes: Sequence[float],
                        breakpoints: Sequence[float]) -> np.ndarray:
    """d prediction / d a_k = (b_k - b_{k+1}) for years right of ``a_k``."""
    years = np.asarray(years, dtype=float)
    b = np.asarray(slopes, dtype=float)
    a = np.asarray(breakpoints, dtype=float)
    right = years[:, None] > a[None, :]
    return right * (b[:-1] - b[1:])[None, :]


def jacobian_row(model: SegmentedModel, year: float, extrapolate: bool = False) -> np.ndarray:
    """Partials of ``predict_log`` w.r.t. ``(b0?, b_1..b_S, a_1..a_{S-1})``."""
    y = np.array([float(year)])
    _check_domain(model, y, extrapolate)
    parts = []
    if model.has_intercept:
        parts.append([1.0])
    parts.append(design_matrix(y, model.breakpoints, model.origin)[0])
    parts.append(breakpoint_jacobian(y, model.slopes, model.breakpoints)[0])
    return np.concatenate(parts)


def growth_rate(slope: float) -> float:
    """Annual growth in percent, ``100 * (exp(b) - 1)``."""
    return 100.0 * math.expm1(slope)


def doubling_time(slope: float) -> float | None:
    """``ln 2 / b`` in years; None when the series is not growing."""
    if slope <= 0:
        return None
    return LN2 / slope


@dataclass(frozen=True)
class SegmentSummary:
    index: int
    span: tuple[float, float]
    slope: float
    growth_rate_pct: float
    doubling_time_years: float | None

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "span": list(self.span),
            "slope": self.slope,
            "growth_rate_pct": self.growth_rate_pct,
            "doubling_time_years": self.doubling_time_years,
        }


def summarize(model: SegmentedModel) -> list[SegmentSummary]:
    edges = (model.domain[0],) + model.breakpoints + (model.domain[1],)
    return [
        SegmentSummary(k + 1, (edges[k], edges[k + 1]), b, growth_rate(b), doubling_time(b))
        for k, b in enumerate(model.slopes)
    ]
