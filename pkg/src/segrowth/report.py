"""Report assembly and rendering (JSON, text table, plot TSV, SVG)."""
from __future__ import annotations

import hashlib
import json
import math
from typing import Any

import numpy as np

from .inference import InferenceReport, SelectionTrace
from .model import predict_log, segment_index, summarize
from .series import AnnualSeries, LogSeries
from .solver import FitConfig, FitResult

SCHEMA_VERSION = 1


def _clean(obj: Any) -> Any:
    """JSON-safe copy: numpy scalars to Python, non-finite floats to None."""
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def to_json(report: dict) -> str:
    return json.dumps(_clean(report), indent=2, allow_nan=False) + "\n"


def digest(series: AnnualSeries, logs: LogSeries, path: str | None = None,
           raw: bytes | None = None) -> dict:
    return {
        "file": path,
        "sha256": hashlib.sha256(raw).hexdigest() if raw is not None else None,
        "label": series.label,
        "n_points": len(series),
        "n_fitted": len(logs),
        "first_year": series.years[0],
        "last_year": series.years[-1],
        "dropped_years": list(logs.dropped_years),
    }


def points_table(series: AnnualSeries, fit: FitResult) -> list[dict]:
    """Observed vs predicted for every input year (zero counts keep a null log)."""
    model = fit.model
    years = series.year_array
    logp = predict_log(model, years, extrapolate=True)
    seg = segment_index(model.breakpoints, years) + 1
    rows = []
    for y, c, lp, s in zip(series.years, series.counts, logp, seg):
        rows.append({
            "year": y,
            "observed_count": c,
            "predicted_count": math.exp(lp),
            "log_observed": math.log(c) if c > 0 else None,
            "log_predicted": float(lp),
            "segment_index": int(s),
        })
    return rows


def fit_section(fit: FitResult) -> dict:
    return {
        "sse": fit.sse,
        "n_obs": fit.n_obs,
        "n_params": fit.n_params,
        "converged": fit.converged,
        "status": fit.status,
        "iterations": fit.iterations,
        "starts_tried": fit.starts_tried,
        "best_start": fit.best_start,
        "ridge_used": fit.ridge_used,
    }


def build_fit_report(series: AnnualSeries, logs: LogSeries, fit: FitResult,
                     inference: InferenceReport, config: FitConfig,
                     selection: SelectionTrace | None = None, source: dict | None = None,
                     options: dict | None = None) -> dict:
    model = fit.model
    count_intercept = math.exp(model.intercept) if model.has_intercept else None
    return {
        "schema_version": SCHEMA_VERSION,
        "input": source or digest(series, logs),
        "config": {**config.to_dict(), **(options or {})},
        "model": model.to_dict(),
        "intercept_count_scale": count_intercept,
        "segments": [s.to_dict() for s in summarize(model)],
        "inference": inference.to_dict(),
        "selection": selection.to_dict() if selection is not None else None,
        "fit": fit_section(fit),
        "points": points_table(series, fit),
    }


def _fmt_growth(slope: float | None, growth: float | None) -> str:
    return "" if growth is None else f"{growth:.2f}%"


def _fmt_doubling(dt: float | None) -> str:
    return "-" if dt is None else f"{dt:.1f}"


def render_table(report: dict) -> str:
    """Parameter table: estimate, SE, CI, growth rate and doubling time per slope."""
    seg = {f"b{s['index']}": s for s in report["segments"]}
    inf = report["inference"]
    level = round(100 * inf["ci_level"])
    header = ["Parameter", "Estimate", "SE", f"{level}% confidence interval",
              "% growth rate", "Doubling time [year]"]
    rows = []
    for p in inf["parameters"]:
        star = "*" if p["p"] is not None and p["p"] < 0.05 else ""
        ci = f"{_num(p['ci_low'])} - {_num(p['ci_high'])}"
        s = seg.get(p["name"])
        growth = _fmt_growth(None, s["growth_rate_pct"]) if s else ""
        dt = _fmt_doubling(s["doubling_time_years"]) if s else ""
        rows.append([p["name"], _num(p["estimate"]) + star, _num(p["se"]), ci, growth, dt])
    widths = [max(len(r[i]) for r in rows + [header]) for i in range(len(header))]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    lines += ["  ".join(c.ljust(w) for c, w in zip(r, widths)) for r in rows]
    rc, ru = inf["r_squared_centered"], inf["r_squared_uncentered"]
    lines.append("")
    lines.append(f"R2 (centered) = {_num(rc, 4)}   R2 (uncentered) = {_num(ru, 6)}   "
                 f"dof = {inf['dof']}")
    if report.get("intercept_count_scale") is not None:
        lines.append(f"intercept on the count scale: {report['intercept_count_scale']:,.1f}")
    lines.append("* p < .05")
    fit = report["fit"]
    lines.append(f"fit: {fit['status']} after {fit['iterations']} iteration(s), "
                 f"{fit['starts_tried']} start(s), SSE = {_num(fit['sse'], 6)}")
    sel = report.get("selection")
    if sel:
        lines.append("")
        lines.append(f"segment selection (delta R2 threshold {sel['threshold']}):")
        for c in sel["candidates"]:
            if c["r_squared"] is None:
                lines.append(f"  S={c['n_segments']}: {c['note']}")
                continue
            d = "" if c["delta_r_squared"] is None else f"  dR2={c['delta_r_squared']:.6f}"
            lines.append(f"  S={c['n_segments']}: R2={c['r_squared']:.6f}{d}")
        lines.append(f"  chosen: S={sel['chosen']}")
    return "\n".join(lines) + "\n"


def _num(v, digits: int = 4) -> str:
    if v is None:
        return "nan"
    if v == 0:
        return "0"
    mag = abs(v)
    if mag >= 1e5:
        return f"{v:,.1f}"
    if mag >= 100:
        return f"{v:.1f}"
    return f"{v:.{digits}g}" if mag < 1e-3 else f"{v:.{digits}f}".rstrip("0").rstrip(".")


TSV_COLUMNS = ("year", "observed_count", "predicted_count", "log_observed",
               "log_predicted", "segment_index")


def render_tsv(report: dict) -> str:
    lines = ["\t".join(TSV_COLUMNS)]
    for row in report["points"]:
        lines.append("\t".join("" if row[c] is None else repr(row[c])
                               if isinstance(row[c], float) else str(row[c])
                               for c in TSV_COLUMNS))
    return "\n".join(lines) + "\n"


def render_svg(report: dict, width: int = 720, height: int = 420) -> str:
    """Log counts (observed markers, fitted line) with vertical breakpoint rules."""
    pts = [p for p in report["points"] if p["log_observed"] is not None]
    years = [p["year"] for p in report["points"]]
    ylog = [p["log_observed"] for p in pts] + [p["log_predicted"] for p in report["points"]]
    x0, x1 = min(years), max(years)
    y0, y1 = min(ylog), max(ylog)
    if x1 == x0:
        x1 = x0 + 1
    if y1 == y0:
        y1 = y0 + 1
    ml, mr, mt, mb = 60, 20, 30, 40
    pw, ph = width - ml - mr, height - mt - mb

    def sx(x):
        return ml + (x - x0) / (x1 - x0) * pw

    def sy(y):
        return mt + (1 - (y - y0) / (y1 - y0)) * ph

    obs = " ".join(f"M{sx(p['year']):.2f},{sy(p['log_observed']):.2f}h0.01"
                   for p in pts)
    fitted = "M" + " L".join(f"{sx(p['year']):.2f},{sy(p['log_predicted']):.2f}"
                             for p in report["points"])
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<path d="M{ml},{mt}V{mt + ph}H{ml + pw}" fill="none" stroke="black"/>',
    ]
    for a in report["model"]["breakpoints"]:
        out.append(f'<path d="M{sx(a):.2f},{mt}V{mt + ph}" stroke="#999" '
                   f'stroke-dasharray="4,3"/>')
        out.append(f'<text x="{sx(a) + 3:.2f}" y="{mt + 12}">{a:.1f}</text>')
    for t in np.linspace(x0, x1, 6):
        out.append(f'<text x="{sx(t):.2f}" y="{mt + ph + 16}" text-anchor="middle">'
                   f'{t:.0f}</text>')
    for t in np.linspace(y0, y1, 5):
        out.append(f'<text x="{ml - 6}" y="{sy(t) + 4:.2f}" text-anchor="end">'
                   f'e^{t:.1f}</text>')
    out.append(f'<path d="{obs}" stroke="#1f77b4" stroke-width="4" '
               f'stroke-linecap="round" fill="none"/>')
    out.append(f'<path d="{fitted}" stroke="#d62728" stroke-width="1.5" fill="none"/>')
    label = report["input"].get("label") or ""
    out.append(f'<text x="{ml}" y="{mt - 10}">{_xml(label)} (log scale): observed '
               f'(dots) and fitted (line)</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _xml(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def render_comparison(report: dict) -> str:
    comp = report["comparison"]
    lab0, lab1 = comp["labels"]
    lines = [f"Joint fit with shared breakpoints ({lab0}: D=0, {lab1}: D=1)", ""]
    lines.append("breakpoints: " + ", ".join(f"{a:.1f}" for a in comp["breakpoint_estimates"]))
    lines.append("")
    lines.append(f"{'segment':<8}{'slope ' + lab0:>18}{'delta':>12}{'SE':>11}"
                 f"{'t':>9}{'p':>11}  sig")
    for k, (b, t) in enumerate(zip(comp["base_slopes"], comp["interactions"]), start=1):
        lines.append(f"{k:<8}{b:>18.5f}{t['delta']:>12.5f}{_num(t['se']):>11}"
                     f"{t['t']:>9.2f}{t['p']:>11.3g}  {'*' if t['significant'] else ''}")
    lines.append("")
    lines.append(f"joint SSE = {_num(comp['sse'], 6)}, R2 (centered) = "
                 f"{_num(comp['r_squared_centered'], 4)}, fit {comp['status']}")
    lines.append("")
    lines.append("Per-segment summaries:")
    for name in ("joint", "separate"):
        lines.append(f"  [{name} fit]")
        lines.append(f"  {'segment':<8}{lab0 + ' growth':>18}{'doubling':>10}"
                     f"{lab1 + ' growth':>18}{'doubling':>10}")
        for row in report["side_by_side"][name]:
            g0, g1 = row[lab0], row[lab1]
            lines.append(
                f"  {row['segment']:<8}{g0['growth_rate_pct']:>17.2f}%"
                f"{_fmt_doubling(g0['doubling_time_years']):>10}"
                f"{g1['growth_rate_pct']:>17.2f}%{_fmt_doubling(g1['doubling_time_years']):>10}")
    lines.append("* p < .05")
    return "\n".join(lines) + "\n"
