"""Command-line front end: ``segrowth fit|select|compare|simulate``.

Exit codes: 0 success, 1 data error, 2 fit did not converge (report still
written), 64 usage error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import warnings
from dataclasses import replace

from . import report as rpt
from .compare import fit_interaction, fit_separately, test_interactions
from .inference import infer, select_segments
from .model import SegmentedModel, summarize
from .oracle import GeneratorSpec, generate
from .series import SeriesError, ZeroCountWarning, dump_csv, load_csv, log_transform
from .solver import FitConfig, FitError, default_threads, multistart_fit

EXIT_OK = 0
EXIT_DATA = 1
EXIT_NOT_CONVERGED = 2
EXIT_USAGE = 64

log = logging.getLogger("segrowth")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _range(text: str) -> tuple[float, float]:
    try:
        lo, hi = (float(v) for v in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected LO:HI, got {text!r}") from None
    if not lo < hi:
        raise argparse.ArgumentTypeError(f"empty range {text!r}")
    return lo, hi


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers: {text!r}") from None


def _add_fit_options(p: argparse.ArgumentParser, formats=("json", "text", "tsv", "svg")):
    g = p.add_mutually_exclusive_group()
    g.add_argument("--segments", type=_positive_int, default=None, metavar="N",
                   help="number of segments (default 1)")
    g.add_argument("--select", action="store_true",
                   help="choose the segment count by the delta-R2 rule")
    p.add_argument("--max-segments", type=_positive_int, default=6, metavar="N")
    p.add_argument("--delta-r2", type=float, default=0.005, metavar="X",
                   help="minimum centered R2 gain to accept one more segment")
    ic = p.add_mutually_exclusive_group()
    ic.add_argument("--intercept", dest="intercept", action="store_true", default=None,
                    help="estimate b0 (default only for single-segment fits)")
    ic.add_argument("--no-intercept", dest="intercept", action="store_false")
    p.add_argument("--bounds", type=_range, default=None, metavar="LO:HI",
                   help="breakpoints must satisfy LO < a_1 < ... < HI")
    p.add_argument("--min-points", type=_positive_int, default=3, metavar="K")
    p.add_argument("--grid", type=int, default=8, metavar="G",
                   help="multistart grid nodes per breakpoint")
    p.add_argument("--max-iterations", type=_positive_int, default=200, metavar="N",
                   help="Gauss-Newton iteration cap per start")
    p.add_argument("--offset-year", type=float, default=0.0, metavar="Y",
                   help="measure time from year Y (b0 becomes the level at Y)")
    p.add_argument("--zero-policy", choices=("drop", "error"), default="drop")
    p.add_argument("--threads", type=_positive_int, default=None, metavar="N",
                   help="worker threads (default: $SEGROWTH_THREADS or 1)")
    p.add_argument("--out", default=None, metavar="PREFIX",
                   help="write PREFIX.json, .txt, .tsv and .svg")
    p.add_argument("--format", choices=formats, default="text",
                   help="what to print on stdout")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="segrowth", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fit", help="fit a segmented exponential model to one series")
    p.add_argument("data", help="CSV with year,count rows")
    _add_fit_options(p)

    p = sub.add_parser("select", help="same as fit --select")
    p.add_argument("data")
    _add_fit_options(p)

    p = sub.add_parser("compare", help="joint fit of two series with slope interactions")
    p.add_argument("data", help="first series (coded D=0)")
    p.add_argument("other", help="second series (coded D=1)")
    p.add_argument("--labels", default=None, metavar="A,B")
    p.add_argument("--alpha", type=float, default=0.05)
    _add_fit_options(p, formats=("json", "text"))

    p = sub.add_parser("simulate", help="write a synthetic series as CSV")
    p.add_argument("--model", default=None, metavar="FILE",
                   help="JSON model {intercept, slopes, breakpoints, domain}")
    p.add_argument("--slopes", type=_floats, default=None, metavar="B1,B2,...")
    p.add_argument("--breakpoints", type=_floats, default=None, metavar="A1,...")
    p.add_argument("--intercept-value", type=float, default=None, metavar="B0")
    p.add_argument("--offset-year", type=float, default=None, metavar="Y")
    p.add_argument("--years", type=_range, default=None, metavar="LO:HI")
    p.add_argument("--sigma", type=float, default=0.0, help="log-scale noise sd")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, metavar="FILE")
    return parser


def _config(args, n_segments: int) -> FitConfig:
    return FitConfig(
        n_segments=n_segments,
        intercept=args.intercept,
        breakpoint_bounds=args.bounds,
        min_points_per_segment=args.min_points,
        grid_points_per_breakpoint=args.grid,
        max_iterations=args.max_iterations,
        origin=args.offset_year,
        threads=args.threads or default_threads(),
    )


def _read(path: str, label: str | None = None):
    if not os.path.exists(path):
        raise UsageError(f"no such file: {path}")
    with open(path, "rb") as fh:
        raw = fh.read()
    return load_csv(raw, label=label or os.path.basename(path)), raw


def _emit(text_by_format: dict, fmt: str, prefix: str | None):
    if prefix:
        for ext, key in (("json", "json"), ("txt", "text"), ("tsv", "tsv"), ("svg", "svg")):
            if key in text_by_format:
                with open(f"{prefix}.{ext}", "w", encoding="utf-8", newline="\n") as fh:
                    fh.write(text_by_format[key]())
    sys.stdout.write(text_by_format[fmt]())


def cmd_fit(args) -> int:
    series, raw = _read(args.data)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", ZeroCountWarning)
        data = log_transform(series, args.zero_policy)
    for w in caught:
        log.warning("%s", w.message)
    select = args.select or args.command == "select"
    config = _config(args, args.segments or 1)
    selection = None
    if select:
        fit, selection = select_segments(data, args.max_segments, args.delta_r2, config)
        config = replace(config, n_segments=fit.model.n_segments)
    else:
        fit = multistart_fit(data, config)
    inference = infer(fit)
    source = rpt.digest(series, data, args.data, raw)
    options = {"zero_policy": args.zero_policy, "select": select,
               "max_segments": args.max_segments if select else None,
               "delta_r2": args.delta_r2 if select else None}
    report = rpt.build_fit_report(series, data, fit, inference, config, selection,
                                  source, options)
    _emit({"json": lambda: rpt.to_json(report), "text": lambda: rpt.render_table(report),
           "tsv": lambda: rpt.render_tsv(report), "svg": lambda: rpt.render_svg(report)},
          args.format, args.out)
    if not fit.converged:
        print(f"segrowth: fit did not converge ({fit.status})", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def _summary_rows(models, labels):
    rows = []
    for k, pair in enumerate(zip(*(summarize(m) for m in models)), start=1):
        rows.append({"segment": k, **{lab: s.to_dict() for lab, s in zip(labels, pair)}})
    return rows


def cmd_compare(args) -> int:
    labels = None
    if args.labels:
        labels = tuple(v.strip() for v in args.labels.split(","))
        if len(labels) != 2 or labels[0] == labels[1]:
            raise UsageError("--labels needs two distinct names A,B")
    s0, raw0 = _read(args.data, labels[0] if labels else None)
    s1, raw1 = _read(args.other, labels[1] if labels else None)
    if args.select:
        raise UsageError("compare needs an explicit --segments N")
    config = _config(args, args.segments or 1)
    d0, d1 = log_transform(s0, args.zero_policy), log_transform(s1, args.zero_policy)
    result = fit_interaction(d0, d1, config, labels)
    labels = result.labels
    sep = fit_separately(d0, d1, config)
    comparison = result.to_dict()
    comparison["interactions"] = [t.to_dict()
                                  for t in test_interactions(result, args.alpha)]
    report = {
        "schema_version": rpt.SCHEMA_VERSION,
        "inputs": [rpt.digest(s0, d0, args.data, raw0), rpt.digest(s1, d1, args.other, raw1)],
        "config": {**config.to_dict(), "zero_policy": args.zero_policy, "alpha": args.alpha},
        "comparison": comparison,
        "joint_inference": result.inference.to_dict(),
        "separate": {
            lab: {"model": f.model.to_dict(), "inference": infer(f).to_dict(),
                  "fit": rpt.fit_section(f)}
            for lab, f in zip(labels, sep)
        },
        "side_by_side": {
            "joint": _summary_rows(result.models, labels),
            "separate": _summary_rows([f.model for f in sep], labels),
        },
    }
    _emit({"json": lambda: rpt.to_json(report),
           "text": lambda: rpt.render_comparison(report)}, args.format, args.out)
    if not (result.fit.converged and all(f.converged for f in sep)):
        print("segrowth: at least one fit did not converge", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def _simulation_model(args) -> SegmentedModel:
    if args.model and args.slopes:
        raise UsageError("give either --model or --slopes, not both")
    if args.model:
        if not os.path.exists(args.model):
            raise UsageError(f"no such file: {args.model}")
        with open(args.model, encoding="utf-8") as fh:
            try:
                spec = json.load(fh)
            except json.JSONDecodeError as exc:
                raise SeriesError(f"{args.model}: invalid JSON ({exc})") from None
        spec = spec.get("model", spec)
    elif args.slopes:
        spec = {"slopes": args.slopes, "breakpoints": args.breakpoints or [],
                "intercept": args.intercept_value}
    else:
        raise UsageError("simulate needs --model FILE or --slopes B1,...")
    if args.offset_year is not None:
        spec = {**spec, "origin": args.offset_year}
    if args.years is not None and not spec.get("domain"):
        spec = {**spec, "domain": list(args.years)}
    try:
        return SegmentedModel.from_dict(spec)
    except (KeyError, TypeError, ValueError) as exc:
        raise SeriesError(f"bad model: {exc}") from None


def cmd_simulate(args) -> int:
    model = _simulation_model(args)
    if args.sigma < 0:
        raise UsageError("--sigma must be >= 0")
    if args.years is not None:
        years = (int(args.years[0]), int(args.years[1]))
    elif all(map(lambda v: abs(v) != float("inf"), model.domain)):
        years = (int(model.domain[0]), int(model.domain[1]))
    else:
        raise UsageError("--years LO:HI is required when the model has no domain")
    try:
        series = generate(GeneratorSpec(model, years, args.sigma, args.seed))
    except ValueError as exc:
        raise SeriesError(str(exc)) from None
    text = dump_csv(series)
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


COMMANDS = {"fit": cmd_fit, "select": cmd_fit, "compare": cmd_compare,
            "simulate": cmd_simulate}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"segrowth: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SeriesError, FitError) as exc:
        print(f"segrowth: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"segrowth: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
