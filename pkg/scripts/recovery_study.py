"""Monte Carlo recovery of a known segmented model under log-normal noise.

For each seed a series is drawn from the model, refitted with the true segment
count (or with automatic selection), and the errors are summarized.

    python scripts/recovery_study.py scripts/models/cited_references.json --sigma 0.05
    python scripts/recovery_study.py scripts/models/cited_references.json --select
"""
import argparse
import json
import time
from collections import Counter
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from segrowth.inference import r_squared, select_segments
from segrowth.model import SegmentedModel
from segrowth.oracle import GeneratorSpec, generate_log
from segrowth.solver import FitConfig, multistart_fit


@dataclass
class StudyConfig:
    model_file: str
    sigma: float = 0.05
    seeds: int = 100
    first_seed: int = 0
    select: bool = False
    threshold: float = 0.005
    max_segments: int = 6


def run(cfg: StudyConfig) -> dict:
    truth = SegmentedModel.from_dict(json.loads(Path(cfg.model_file).read_text()))
    years = tuple(int(v) for v in truth.domain)
    fit_cfg = FitConfig(n_segments=truth.n_segments, intercept=truth.has_intercept,
                        origin=truth.origin)
    chosen = Counter()
    a_err, b_err, r2 = [], [], []
    t0 = time.perf_counter()
    for seed in range(cfg.first_seed, cfg.first_seed + cfg.seeds):
        data = generate_log(GeneratorSpec(truth, years, cfg.sigma, seed))
        if cfg.select:
            fit, trace = select_segments(data, cfg.max_segments, cfg.threshold,
                                         FitConfig(intercept=truth.has_intercept,
                                                   origin=truth.origin))
            chosen[trace.chosen] += 1
            if trace.chosen != truth.n_segments:
                continue
        else:
            fit = multistart_fit(data, fit_cfg)
        a_err.append(np.abs(np.subtract(fit.model.breakpoints, truth.breakpoints)))
        b_err.append(np.abs(np.subtract(fit.model.slopes, truth.slopes)) / np.abs(truth.slopes))
        r2.append(r_squared(fit)[0])
    out = {
        "config": asdict(cfg),
        "seconds": time.perf_counter() - t0,
        "runs_scored": len(r2),
        "median_breakpoint_error": np.median(a_err, axis=0).tolist() if a_err else [],
        "median_relative_slope_error": np.median(b_err, axis=0).tolist() if b_err else [],
        "r_squared_min": min(r2) if r2 else None,
        "r_squared_at_least_0.99": int(np.sum(np.array(r2) >= 0.99)),
    }
    if cfg.select:
        out["chosen_segments"] = {str(k): v for k, v in sorted(chosen.items())}
    return out


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("model_file")
    parser.add_argument("--sigma", type=float, default=0.05)
    parser.add_argument("--seeds", type=int, default=100)
    parser.add_argument("--first-seed", type=int, default=0)
    parser.add_argument("--select", action="store_true",
                        help="choose the segment count instead of using the true one")
    parser.add_argument("--threshold", type=float, default=0.005)
    parser.add_argument("--max-segments", type=int, default=6)
    args = parser.parse_args(argv)
    print(json.dumps(run(StudyConfig(**vars(args))), indent=2))


if __name__ == "__main__":
    main()
