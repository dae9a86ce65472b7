"""fetch -> curate -> train (all folds) -> eval -> report -> identify on the offline toy catalog.

    python3 scripts/run_toy_pipeline.py --workdir /tmp/gameid-toy [--max-epochs 12]

Uses randomly initialized weights, so it runs with no network access.
"""

import argparse
import sys
import tempfile
from pathlib import Path

from gameid.cli import main as gameid
from gameid.curation import read_manifest

TOY = Path(__file__).resolve().parents[1] / "tests" / "fixtures" / "toy"


def step(*argv: str) -> None:
    print("$ gameid", " ".join(argv), flush=True)
    if gameid(list(argv)):
        sys.exit(1)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    parser.add_argument("--workdir", default=None)
    parser.add_argument("--backbone", default="MobileNet")
    parser.add_argument("--max-epochs", default="12")
    parser.add_argument("--batch-size", default="4")
    parser.add_argument("--fixtures", default=str(TOY))
    args = parser.parse_args()
    work = args.workdir or tempfile.mkdtemp(prefix="gameid-toy-")
    common = ("--workdir", work)
    system = "Atari 2600"

    step(*common, "fetch", "--system", system, "--fixtures", args.fixtures)
    step(*common, "curate", "--system", system, "--seed", "0")
    step(*common, "train", "--system", system, "--backbone", args.backbone, "--weights", "random", "--fold", "all",
         "--max-epochs", args.max_epochs, "--batch-size", args.batch_size)
    step(*common, "eval", "--system", system)
    step(*common, "report", "--format", "markdown")
    first = read_manifest(Path(work, "manifests", "atari-2600.jsonl")).records[0]
    step(*common, "identify", "--system", system, "--top-k", "3", str(Path(work, "cache", first.path)))
    print(f"expected game: {first.game_id}; outputs under {work}")


if __name__ == "__main__":
    main()
