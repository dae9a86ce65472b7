"""Regenerate the replay fixtures under tests/fixtures/.

Published-count fixtures reproduce a system's catalog totals (games,
screenshots, and how many pass the five-screenshot rule); the toy fixture
adds small distinct images so networks can be trained on it.

    python3 scripts/make_fixtures.py [--out tests/fixtures] [--systems "Atari 2600" ...]
"""

import argparse
import shutil
from pathlib import Path

from gameid.catalog.fixtures import write_published_fixture, write_toy_fixture
from gameid.systems import get_counts, get_system

DEFAULT_SYSTEMS = ["Atari 2600", "Xbox Series X/S"]


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    parser.add_argument("--out", default=str(Path(__file__).resolve().parents[1] / "tests" / "fixtures"))
    parser.add_argument("--systems", nargs="*", default=DEFAULT_SYSTEMS)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--no-toy", action="store_true")
    args = parser.parse_args()

    out = Path(args.out)
    for name in args.systems:
        system = get_system(name)
        target = out / "catalog" / system.slug
        shutil.rmtree(target, ignore_errors=True)
        write_published_fixture(target, get_counts(system), seed=args.seed)
        print(f"{system.display_name}: {target}")
    if not args.no_toy:
        target = out / "toy"
        shutil.rmtree(target, ignore_errors=True)
        write_toy_fixture(target, get_system("Atari 2600"))
        print(f"toy: {target}")


if __name__ == "__main__":
    main()
