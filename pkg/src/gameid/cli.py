"""``gameid`` command line: fetch -> curate -> train -> eval -> report -> identify / serve.

Working-directory layout (``--workdir``, default ``$GAMEID_WORKDIR`` or ``.``)::

    cache/<system>/<game_id>/<screenshot_id>.<ext>   images, plus cache/index.json
    cache/<system>/catalog.json                      fetched catalog snapshot
    manifests/<system>.jsonl                         curated, fold-annotated manifest
    pretrained/<backbone>/                           arcade reference artifact
    runs/<system>/<backbone>/<weights>/fold<F>/      artifact + training_log.csv + result.json
    results/<system>.csv                             per-fold accuracies
    reports/                                         rendered tables
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

log = logging.getLogger("gameid")


class CliError(RuntimeError):
    code = "usage"


# --- paths ---------------------------------------------------------------------


def _workdir(args) -> Path:
    return Path(args.workdir or os.environ.get("GAMEID_WORKDIR", "."))


def _cache_dir(args) -> Path:
    return _workdir(args) / "cache"


def _manifest_path(args, slug: str) -> Path:
    return _workdir(args) / "manifests" / f"{slug}.jsonl"


def _run_dir(args, slug: str, backbone: str, weights: str, fold: int) -> Path:
    return _workdir(args) / "runs" / slug / backbone / weights / f"fold{fold}"


def _pretrained_dir(args, backbone: str) -> Path:
    return _workdir(args) / "pretrained" / backbone


def _emit(payload: dict) -> None:
    print(json.dumps(payload, ensure_ascii=False))


# --- commands ------------------------------------------------------------------


def cmd_fetch(args) -> None:
    from gameid.catalog import (
        CatalogCache, CatalogClient, FixtureTransport, HttpTransport, RateLimiter,
        catalog_to_json, download_images, fetch_system_catalog,
    )
    from gameid.systems import get_system

    system = get_system(args.system)
    if args.fixtures:
        transport = FixtureTransport(args.fixtures)
        api_key = args.api_key or os.environ.get("MOBYGAMES_API_KEY") or "offline-fixture"
        rate = args.rate  # replay needs no throttling unless asked
    else:
        transport = HttpTransport()
        api_key = args.api_key or os.environ.get("MOBYGAMES_API_KEY")
        rate = args.rate if args.rate is not None else 1.0
    client = CatalogClient(transport, api_key, base_url=args.base_url, limiter=RateLimiter(rate))
    games = fetch_system_catalog(client, system, args.page_size)
    cache = CatalogCache(_cache_dir(args))
    out = cache.root / system.slug / "catalog.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(catalog_to_json(games), encoding="utf-8")
    stored = skipped = 0
    if not args.skip_images:
        stored, skipped = download_images(client, games, cache, workers=args.workers)
    _emit({"system": system.display_name, "games": len(games), "screenshots": sum(g.n_screenshots for g in games),
           "images_stored": stored, "images_skipped": skipped, "catalog": str(out)})


def cmd_curate(args) -> None:
    from gameid.catalog import CatalogCache, catalog_from_json
    from gameid.curation import CurationRule, curate, write_manifest
    from gameid.systems import get_system

    system = get_system(args.system)
    cache = CatalogCache(_cache_dir(args))
    catalog_path = cache.root / system.slug / "catalog.json"
    if not catalog_path.exists():
        raise CliError(f"no fetched catalog for {system.display_name}; run `gameid fetch --system {args.system}` first")
    games = catalog_from_json(catalog_path.read_text(encoding="utf-8"))
    if not args.allow_missing:
        # screenshots whose download was skipped cannot be used for training
        games = [replace(g, screenshot_refs=tuple(s for s in g.screenshot_refs
                                                  if cache.key(system.slug, s.screenshot_id) in cache))
                 for g in games]
    manifest = curate(games, seed=args.seed, k=args.k, rule=CurationRule(args.min_screenshots), cache=cache)
    path = write_manifest(manifest, _manifest_path(args, system.slug))
    _emit({"system": system.display_name, "games": len(manifest.class_order), "screenshots": len(manifest.records),
           "manifest": str(path)})


def _training_config(args):
    from gameid.training import TrainingConfig

    kw = {"weights": args.weights, "seed": args.seed}
    for name in ("max_epochs", "batch_size", "initial_lr"):
        value = getattr(args, name, None)
        if value is not None:
            kw[name] = value
    if getattr(args, "freeze_backbone", False):
        kw["freeze_backbone"] = True
    return TrainingConfig(**kw)


def _load_manifest(args, system):
    from gameid.curation import read_manifest

    path = _manifest_path(args, system.slug)
    if not path.exists():
        raise CliError(f"no manifest for {system.display_name}; run `gameid curate --system ...` first")
    return read_manifest(path)


def cmd_train(args) -> None:
    from gameid.artifact import load_model, save_artifact
    from gameid.backbones import get_backbone_spec
    from gameid.training import train_fold
    from gameid.systems import get_system

    system = get_system(args.system)
    manifest = _load_manifest(args, system)
    spec = get_backbone_spec(args.backbone)
    config = _training_config(args)
    source = None
    if config.weights == "arcade":
        src_dir = Path(args.arcade_artifact) if args.arcade_artifact else _pretrained_dir(args, spec.name)
        if not (src_dir / "meta.json").exists():
            raise CliError(f"arcade weights need a reference artifact at {src_dir}; run `gameid pretrain` or pass --arcade-artifact")
        source, _ = load_model(src_dir)
    folds = range(manifest.k) if args.fold == "all" else [int(args.fold)]
    for fold in folds:
        model, history = train_fold(manifest, fold, spec, config, _cache_dir(args), source)
        out = _run_dir(args, system.slug, spec.name, config.weights, fold)
        summary = {"fold": fold, "epochs_run": history.epochs_run, "stop_reason": history.stop_reason,
                   "best_epoch": history.best_epoch}
        save_artifact(model, out, manifest.titles(), system.display_name, config.to_dict(), {"training": summary})
        (out / "training_log.csv").write_text(history.to_csv(), encoding="utf-8")
        (out / "result.json").write_text(json.dumps(summary) + "\n", encoding="utf-8")
        _emit({"system": system.display_name, "backbone": spec.name, "weights": config.weights, **summary,
               "artifact": str(out)})


def cmd_pretrain(args) -> None:
    from gameid.backbones import get_backbone_spec
    from gameid.training import pretrain_reference
    from gameid.systems import get_system

    system = get_system(args.system)
    manifest = _load_manifest(args, system)
    spec = get_backbone_spec(args.backbone)
    args.weights = "imagenet" if args.weights == "arcade" else args.weights
    out = Path(args.out) if args.out else _pretrained_dir(args, spec.name)
    pretrain_reference(manifest, spec, _training_config(args), _cache_dir(args), out)
    _emit({"system": system.display_name, "backbone": spec.name, "artifact": str(out)})


def cmd_eval(args) -> None:
    from gameid.artifact import load_model
    from gameid.evaluation import FoldResult, aggregate_all, score_fold, write_fold_results
    from gameid.systems import get_system

    system = get_system(args.system)
    manifest = _load_manifest(args, system)
    root = _workdir(args) / "runs" / system.slug
    results = []
    for result_file in sorted(root.glob("*/*/fold*/result.json")):
        run = result_file.parent
        backbone, weights = run.parent.parent.name, run.parent.name
        if (args.backbone and backbone != args.backbone) or (args.weights and weights != args.weights):
            continue
        info = json.loads(result_file.read_text(encoding="utf-8"))
        fold = int(info["fold"])
        model, _ = load_model(run)
        records = [r for r in manifest.records if r.fold == fold]
        acc = score_fold(model, records, _cache_dir(args))
        results.append(FoldResult(system.display_name, backbone, weights, fold, acc, int(info["epochs_run"])))
    if not results:
        raise CliError(f"no trained runs under {root}")
    path = write_fold_results(results, _workdir(args) / "results" / f"{system.slug}.csv")
    reports = aggregate_all(results, manifest.k)
    for r in reports:
        _emit({"system": r.system, "backbone": r.architecture, "weights": r.weights_mode,
               "mean_accuracy": r.mean_accuracy, "std_accuracy": r.std_accuracy,
               "mean_epochs": r.mean_epochs, "std_epochs": r.std_epochs, "fold_results": str(path)})


def cmd_report(args) -> None:
    from gameid.evaluation import (
        aggregate_all, load_published_reports, read_fold_results, render_report, select_best_combination,
    )

    if args.published:
        reports = load_published_reports()
    else:
        results = []
        for path in sorted((_workdir(args) / "results").glob("*.csv")):
            results.extend(read_fold_results(path))
        if not results:
            raise CliError("no fold results found; run `gameid eval --system ...` first")
        reports = aggregate_all(results, args.k)
    best = select_best_combination(reports)
    out = Path(args.out) if args.out else _workdir(args) / "reports"
    formats = ["csv", "markdown"] if args.format == "both" else [args.format]
    written = []
    for fmt in formats:
        written += [str(p) for p in render_report(reports, best, fmt, out)]
    _emit({"groups": len(reports), "overall_best_mean": best.overall, "files": written})


def _resolve_artifact(args) -> Path:
    if args.artifact:
        return Path(args.artifact)
    if not args.system:
        raise CliError("identify needs --artifact DIR or --system S to choose a model")
    from gameid.systems import get_system

    slug = get_system(args.system).slug
    candidates = sorted((_workdir(args) / "runs" / slug).glob("*/*/fold*/meta.json"))
    if args.backbone:
        candidates = [c for c in candidates if c.parent.parent.parent.name == args.backbone]
    if not candidates:
        raise CliError(f"no trained artifact for system {args.system}")
    return candidates[0].parent


def cmd_identify(args) -> None:
    from gameid.identify import identify_screenshot, load_artifact

    model = load_artifact(_resolve_artifact(args))
    pred = identify_screenshot(model, args.image, args.top_k)
    _emit(pred.to_json(model))


def cmd_serve(args) -> None:
    from gameid.identify import load_artifact, make_server

    server, _ = make_server(load_artifact(_resolve_artifact(args)), args.host, args.port, args.top_k)
    log.info("serving on http://%s:%d", *server.server_address[:2])
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()


# --- parser --------------------------------------------------------------------


def _add_training_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--system", required=True)
    p.add_argument("--backbone", default="MobileNet")
    p.add_argument("--weights", choices=("random", "imagenet", "arcade"), default="imagenet")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--initial-lr", type=float)
    p.add_argument("--freeze-backbone", action="store_true", help="train only the classification head")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gameid", description=__doc__.split("\n")[0])
    parser.add_argument("--workdir", help="root for cache/, manifests/, runs/, results/, reports/")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fetch", help="download a system's catalog and screenshots")
    p.add_argument("--system", required=True)
    p.add_argument("--api-key", help="defaults to $MOBYGAMES_API_KEY")
    p.add_argument("--base-url", default="https://api.mobygames.com/v1")
    p.add_argument("--fixtures", help="replay recorded responses from this directory instead of the network")
    p.add_argument("--page-size", type=int, default=100)
    p.add_argument("--rate", type=float, help="max requests per second (default 1; unlimited for fixtures)")
    p.add_argument("--workers", type=int, default=4)
    p.add_argument("--skip-images", action="store_true")
    p.set_defaults(func=cmd_fetch)

    p = sub.add_parser("curate", help="select games and assign folds")
    p.add_argument("--system", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--min-screenshots", type=int, default=5)
    p.add_argument("--allow-missing", action="store_true", help="keep screenshots whose images were not downloaded")
    p.set_defaults(func=cmd_curate)

    p = sub.add_parser("train", help="train one (or every) cross-validation fold")
    _add_training_args(p)
    p.add_argument("--fold", required=True, help="fold index or 'all'")
    p.add_argument("--arcade-artifact", help="reference artifact for --weights arcade")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("pretrain", help="train a reference model on a whole corpus (e.g. Arcade)")
    _add_training_args(p)
    p.add_argument("--out", help="artifact directory (default <workdir>/pretrained/<backbone>)")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("eval", help="score trained folds and aggregate per group")
    p.add_argument("--system", required=True)
    p.add_argument("--backbone")
    p.add_argument("--weights", choices=("random", "imagenet", "arcade"))
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="render accuracy, epoch and best-combination tables")
    p.add_argument("--format", choices=("csv", "markdown", "both"), default="both")
    p.add_argument("--out")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--published", action="store_true", help="use the bundled published results instead of local runs")
    p.set_defaults(func=cmd_report)

    for name, func, helptext in (("identify", cmd_identify, "rank game titles for one screenshot"),
                                 ("serve", cmd_serve, "HTTP endpoint: POST /identify, GET /healthz")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--artifact")
        p.add_argument("--system")
        p.add_argument("--backbone")
        p.add_argument("--top-k", type=int, default=5)
        if name == "identify":
            p.add_argument("image")
        else:
            p.add_argument("--host", default="127.0.0.1")
            p.add_argument("--port", type=int, default=8000)
        p.set_defaults(func=func)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        args.func(args)
    except Exception as exc:  # every failure becomes one machine-readable line
        if args.verbose:
            log.exception("command failed")
        err = {"error": getattr(exc, "code", type(exc).__name__), "type": type(exc).__name__, "message": str(exc)}
        print(json.dumps(err), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
