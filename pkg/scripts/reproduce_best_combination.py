"""Recompute the best (architecture, weights) combination per system from the bundled
published per-fold summaries and compare it with the bundled published best table.

    python3 scripts/reproduce_best_combination.py [--format markdown] [--out reports/]
"""

import argparse

from gameid.evaluation import (
    fmt_pct, load_published_best, load_published_reports, render_report, select_best_combination,
)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    parser.add_argument("--format", choices=("csv", "markdown"), default="markdown")
    parser.add_argument("--out", help="also write the rendered tables here")
    args = parser.parse_args()

    reports = load_published_reports()
    best = select_best_combination(reports)
    published = load_published_best()
    mismatches = 0
    print(f"{'system':<20} {'computed':<44} {'published':<44}")
    for system, entry in best.per_system.items():
        got = f"{' | '.join(f'{a} {w}' for a, w in entry.winners)} {fmt_pct(entry.accuracy)}"
        archs, mode, acc = published[system]
        want = f"{' | '.join(f'{a} {mode}' for a in archs)} {fmt_pct(acc)}"
        flag = "" if got == want else "  <-- differs"
        mismatches += bool(flag)
        print(f"{system:<20} {got:<44} {want:<44}{flag}")
    pub_avg = sum(v[2] for v in published.values()) / len(published)
    print(f"\naverage of per-system best: computed {fmt_pct(best.overall)}, mean of published rows {fmt_pct(pub_avg)}")
    print(f"{mismatches} system(s) differ")
    if args.out:
        for path in render_report(reports, best, args.format, args.out):
            print("wrote", path)


if __name__ == "__main__":
    main()
