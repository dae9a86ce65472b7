"""Acceptance criteria, one check each, at their stated tolerances.

Run under pytest (a PASS/FAIL line per criterion is printed in the terminal
summary) or directly: ``python3 tests/test_acceptance.py``.
"""

from __future__ import annotations

import json
import os
import random
import subprocess
import sys
import tempfile
import time
from pathlib import Path

import numpy as np
import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

from conftest import FIXTURES, make_catalog, replay_client  # noqa: E402
from oracles import fold_violations, games_of, mean_pstd, split_violations  # noqa: E402

RESULTS: dict[str, tuple[bool, str]] = {}


def _check(name: str, ok: bool, detail: str) -> None:
    RESULTS[name] = (bool(ok), detail)
    assert ok, detail


def _synthetic_corpus(n: int = 240, seed: int = 2024):
    rng = random.Random(seed)
    return [(make_catalog([rng.randint(5, 14) for _ in range(rng.randint(1, 40))]), rng.randrange(2**31))
            for _ in range(n)]


def _toy_manifest(tmp: Path, system_name: str = "Atari 2600"):
    from gameid.catalog import CatalogCache, download_images, fetch_system_catalog
    from gameid.catalog.fixtures import write_toy_fixture
    from gameid.curation import curate
    from gameid.systems import get_system

    system = get_system(system_name)
    write_toy_fixture(tmp / "fx", system)
    client, _ = replay_client(tmp / "fx")
    games = fetch_system_catalog(client, system)
    cache = CatalogCache(tmp / "cache")
    download_images(client, games, cache)
    return curate(games, seed=0, cache=cache), cache.root


# --- criteria ---------------------------------------------------------------------------


def test_curation_counts():
    from gameid.catalog import fetch_system_catalog
    from gameid.curation import select_games
    from gameid.systems import get_system

    system = get_system("Atari 2600")
    games = fetch_system_catalog(replay_client(FIXTURES / "catalog" / system.slug)[0], system)
    t0 = time.perf_counter()
    cur = select_games(games)
    dt = time.perf_counter() - t0
    before = (len(games), sum(g.n_screenshots for g in games))
    after = (cur.n_games, cur.n_screenshots)
    _check("curation counts", before == (598, 2981) and after == (302, 2148) and dt < 5,
           f"{before[0]}/{before[1]} -> {after[0]}/{after[1]} in {dt:.3f}s")


def test_fold_invariants():
    from gameid.curation import assign_folds, select_games

    corpus = _synthetic_corpus()
    violations = 0
    for games, seed in corpus:
        a = assign_folds(select_games(games), 5, seed)
        violations += len(fold_violations(games_of(a), a.folds, 5))
        violations += int(assign_folds(select_games(games), 5, seed) != a)
    _check("fold invariants", violations == 0 and len(corpus) >= 200,
           f"{len(corpus)} catalogs, {violations} violations")


def test_split_invariants():
    from gameid.curation import assign_folds, select_games, split_train_val

    corpus = _synthetic_corpus()
    violations, checked = 0, 0
    for games, seed in corpus:
        a = assign_folds(select_games(games), 5, seed)
        for fold in range(5):
            s = split_train_val(a, fold, 0.2, seed)
            violations += len(split_violations(games_of(a), a.folds, s.roles, fold, 0.2))
            checked += 1
    _check("split invariants", violations == 0, f"{checked} splits over {len(corpus)} catalogs, {violations} violations")


def test_registry_conformance():
    from gameid.backbones import ARCHITECTURES, get_backbone_spec, probe_feature_shape, reference_param_count

    published = {  # resolution, feature shape, params (M)
        "VGG16": (224, (7, 7, 512), 138.4), "ResNet50": (224, (7, 7, 2048), 25.6),
        "ResNet152": (224, (7, 7, 2048), 60.4), "MobileNet": (224, (7, 7, 1024), 4.3),
        "DenseNet169": (224, (7, 7, 1664), 14.3), "DenseNet201": (224, (7, 7, 1920), 20.2),
        "EfficientNetB0": (224, (7, 7, 1280), 5.3), "EfficientNetB2": (260, (9, 9, 1408), 9.2),
        "EfficientNetB3": (300, (10, 10, 1536), 12.3), "EfficientNetV2S": (384, (12, 12, 1280), 21.6),
        "ViT-B16": (224, (768,), 8.66), "ViT-L32": (384, (1024,), 306.5), "SwinT": (224, (7, 7, 768), 28.3),
    }
    problems = []
    if list(ARCHITECTURES) != list(published):
        problems.append("registry names/order differ")
    for name, (res, shape, params) in published.items():
        spec = get_backbone_spec(name)
        if spec.input_resolution != res or spec.feature_shape != shape or probe_feature_shape(spec) != shape:
            problems.append(f"{name}: shape/resolution mismatch")
        actual = reference_param_count(spec)
        if abs(actual / params - 1) > 0.05:
            problems.append(f"{name}: {actual:.2f}M vs published {params}M ({(actual / params - 1) * 100:+.0f}%)")
    _check("registry conformance", not problems, "; ".join(problems) or "13/13 entries conform")


def test_head_assembly():
    from gameid.backbones import ARCHITECTURES, ClassifierModel, HeadSpec, build_backbone, get_backbone_spec

    problems = []
    for name in ARCHITECTURES:
        spec = get_backbone_spec(name)
        backbone = build_backbone(spec, pretrained=False, seed=0).eval()
        x = torch.randn(1, 3, spec.input_resolution, spec.input_resolution)
        for g in (2, 302, 1236):
            model = ClassifierModel(spec, backbone, HeadSpec(g), tuple(str(i) for i in range(g))).eval()
            with torch.no_grad():
                p = model(x)
            if p.shape != (1, g) or abs(p.double().sum().item() - 1) > 1e-5 or (p < 0).any():
                problems.append(f"{name} g={g}")
            if not spec.pooled and any(isinstance(m, torch.nn.AdaptiveAvgPool2d) for m in model.modules()):
                problems.append(f"{name} has a pooling stage")
        del backbone, model
    _check("head assembly", not problems, "; ".join(problems) or "13 backbones x g in {2, 302, 1236}; ViT heads unpooled")


def test_schedule_suite():
    from gameid.training import EARLY_STOP, EPOCH_CAP, EpochController, ScheduleState, TrainingConfig, plateau_step

    def trace(accs):
        s, out = ScheduleState(1e-3), []
        for a in accs:
            s = plateau_step(s, a)
            out.append(s.current_lr)
        return out

    ok1 = trace([0.5, 0.6, 0.6, 0.6]) == [1e-3, 1e-3, 1e-3, 5e-4]
    ok2 = trace([0.5] * 21)[-1] == 1e-5
    c = EpochController(TrainingConfig())
    for loss in [10 - i for i in range(7)] + [5.0] * 30:
        if not c.observe(0.5, loss):
            break
    ok3 = (c.epoch, c.stop_reason) == (17, EARLY_STOP)
    c = EpochController(TrainingConfig())
    n = 0
    while c.observe(0.5, 100.0 - n):
        n += 1
    ok4 = (c.epoch, c.stop_reason) == (50, EPOCH_CAP)
    _check("schedule unit suite", ok1 and ok2 and ok3 and ok4,
           f"trace={ok1} floor={ok2} early-stop@17={ok3} cap@50={ok4}")


@pytest.mark.slow
def test_overfit_sanity(tmp_path):
    from gameid.backbones import smallest_backbone
    from gameid.training import TrainingConfig, train_fold

    manifest, root = _toy_manifest(tmp_path)
    assert (len(manifest.class_order), len(manifest.records)) == (10, 50)
    t0 = time.perf_counter()
    cfg = TrainingConfig(weights="random", batch_size=4, max_epochs=50)
    _, log = train_fold(manifest, 0, smallest_backbone(), cfg, root)
    dt = time.perf_counter() - t0
    best = max(log.column("train_acc"))
    _check("overfit sanity", best >= 0.95 and log.epochs_run <= 50 and dt <= 20 * 60,
           f"{smallest_backbone().name}: max train acc {best:.3f} in {log.epochs_run} epochs, {dt:.0f}s")


def test_transfer_contract(tmp_path):
    from gameid.artifact import load_model
    from gameid.backbones import assemble_classifier, smallest_backbone
    from gameid.training import TrainingConfig, pretrain_reference

    spec = smallest_backbone()
    manifest, root = _toy_manifest(tmp_path, "Arcade")
    pretrain_reference(manifest, spec, TrainingConfig(weights="random", batch_size=4, max_epochs=2), root,
                       tmp_path / "arcade-ref")
    source, _ = load_model(tmp_path / "arcade-ref")
    target = assemble_classifier(spec, 7, init_mode="arcade", source=source, seed=5).eval()
    bitwise = all(torch.equal(a, b) for a, b in zip(source.backbone.state_dict().values(),
                                                    target.backbone.state_dict().values()))
    x = torch.randn(1, 3, spec.input_resolution, spec.input_resolution)
    with torch.no_grad():
        diff = (source.features(x) - target.features(x)).abs().max().item()
    heads = (source.classifier.out_features, target.classifier.out_features)
    _check("transfer contract", bitwise and diff <= 1e-6 and heads == (10, 7),
           f"bitwise={bitwise} max|feature diff|={diff:.1e} head dims {heads[0]}->{heads[1]}")


def test_aggregation_oracle():
    from gameid.evaluation import FoldResult, aggregate_system

    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(1000):
        accs = rng.random(5).tolist()
        epochs = rng.integers(1, 51, 5).tolist()
        r = aggregate_system([FoldResult("Wii", "VGG16", "random", i, a, int(e)) for i, (a, e) in enumerate(zip(accs, epochs))])
        m, s = mean_pstd(accs)
        me, se = mean_pstd([float(e) for e in epochs])
        worst = max(worst, abs(r.mean_accuracy - m), abs(r.std_accuracy - s), abs(r.mean_epochs - me), abs(r.std_epochs - se))
    _check("aggregation oracle", worst <= 1e-9, f"1000 sets, max deviation {worst:.1e}")


def test_best_combination_reproduction():
    from gameid.evaluation import load_published_best, load_published_reports, select_best_combination

    best = select_best_combination(load_published_reports())
    published = load_published_best()
    mismatches = []
    for system, (archs, mode, acc) in published.items():
        if system == "Nintendo 64":
            continue
        e = best.per_system[system]
        if e.architectures != archs or e.weights_modes != (mode,) or abs(e.accuracy - acc) > 1e-9:
            got = "/".join(f"{a}:{w}" for a, w in e.winners)
            mismatches.append(f"{system}: computed {got} {e.accuracy * 100:.2f} vs {'/'.join(archs)}:{mode} {acc * 100:.2f}")
    overall = best.overall * 100
    ok = not mismatches and abs(overall - 78.79) <= 0.01 and len(best.per_system) == 22
    _check("best-combination reproduction", ok,
           f"overall {overall:.2f} vs 78.79; " + ("; ".join(mismatches) or "21/21 systems match"))


@pytest.mark.slow
def test_end_to_end_smoke(tmp_path):
    from gameid.catalog.fixtures import write_toy_fixture
    from gameid.curation import read_manifest, split_train_val
    from gameid.systems import get_system

    system = get_system("Atari 2600")
    write_toy_fixture(tmp_path / "fx", system)
    work = tmp_path / "work"
    env = dict(os.environ, MOBYGAMES_API_KEY="fixture")

    def run(*args):
        p = subprocess.run([sys.executable, "-m", "gameid.cli", "--workdir", str(work), *args],
                           capture_output=True, text=True, env=env)
        return p.returncode, p.stdout, p.stderr

    t0 = time.perf_counter()
    steps = [
        ("fetch", "--system", "Atari 2600", "--fixtures", str(tmp_path / "fx")),
        ("curate", "--system", "Atari 2600", "--seed", "0"),
        ("train", "--system", "Atari 2600", "--backbone", "MobileNet", "--weights", "random", "--fold", "all",
         "--max-epochs", "12", "--batch-size", "4"),
        ("eval", "--system", "Atari 2600"),
        ("report",),
    ]
    codes = []
    for step in steps:
        code, out, err = run(*step)
        codes.append(code)
        if code:
            _check("end-to-end smoke", False, f"{step[0]} exited {code}: {err.strip()[-300:]}")
    manifest = read_manifest(work / "manifests" / "atari-2600.jsonl")
    split = split_train_val(manifest.assignment(), 0, 0.2, 0)
    by_id = manifest.by_id()
    ranks = []
    one_per_game = {by_id[sid].game_id: sid for sid in reversed(split.ids("train"))}
    for sid in sorted(one_per_game.values()):
        rec = by_id[sid]
        code, out, err = run("identify", "--artifact", str(work / "runs/atari-2600/MobileNet/random/fold0"),
                             "--top-k", "3", str(work / "cache" / rec.path))
        codes.append(code)
        if code:
            break
        ranks.append(json.loads(out)["predictions"][0]["game_id"] == rec.game_id)
    dt = time.perf_counter() - t0
    ok = all(c == 0 for c in codes) and ranks and all(ranks) and dt < 30 * 60
    _check("end-to-end smoke", ok,
           f"exit codes {codes[:5]}+identify, memorized screenshots ranked first {sum(ranks)}/{len(ranks)}, {dt:.0f}s")


# --- direct runner -------------------------------------------------------------------------


def main() -> int:
    import inspect

    tests = [(n, f) for n, f in globals().items() if n.startswith("test_") and callable(f)]
    for _, fn in tests:
        kwargs = {}
        if "tmp_path" in inspect.signature(fn).parameters:
            kwargs["tmp_path"] = Path(tempfile.mkdtemp(prefix="gameid-acc-"))
        try:
            fn(**kwargs)
        except AssertionError:
            pass
    for name, (ok, detail) in RESULTS.items():
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    return 0 if all(ok for ok, _ in RESULTS.values()) else 1


if __name__ == "__main__":
    sys.exit(main())
