"""Print growth rate and doubling time for every slope in one or more model files.

    python scripts/growth_table.py scripts/models/*.json
"""
import argparse
import json
from pathlib import Path

from segrowth.model import SegmentedModel, summarize


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("models", nargs="+", type=Path)
    args = parser.parse_args(argv)
    print(f"{'model':<20} {'segment':>7} {'slope':>8} {'% growth':>9} {'doubling':>9}")
    for path in args.models:
        model = SegmentedModel.from_dict(json.loads(path.read_text()))
        for seg in summarize(model):
            d = "-" if seg.doubling_time_years is None else f"{seg.doubling_time_years:.1f}"
            print(f"{path.stem:<20} {seg.index:>7} {seg.slope:>8.3f} "
                  f"{seg.growth_rate_pct:>8.2f}% {d:>9}")


if __name__ == "__main__":
    main()
