"""Cross-validation scoring, per-group aggregation, best-combination selection, report tables."""

from __future__ import annotations

import csv
import io
import math
import os
from collections import defaultdict
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import torch
from torch.utils.data import DataLoader

from gameid.backbones import ARCHITECTURES, ClassifierModel
from gameid.curation import ManifestRecord
from gameid.systems import system_order
from gameid.training import ScreenshotDataset

WEIGHT_MODES = ("random", "imagenet", "arcade")
PLACEHOLDER = "—"


class UnknownClass(ValueError):
    code = "unknown-class"


@dataclass(frozen=True)
class FoldResult:
    system: str
    architecture: str
    weights_mode: str
    fold: int
    accuracy: float
    epochs_run: int

    def __post_init__(self) -> None:
        if not 0.0 <= self.accuracy <= 1.0:
            raise ValueError(f"accuracy {self.accuracy} outside [0, 1]")
        if not 1 <= self.epochs_run <= 50:
            raise ValueError(f"epochs_run {self.epochs_run} outside [1, 50]")

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.system, self.architecture, self.weights_mode)


@dataclass(frozen=True)
class SystemReport:
    system: str
    architecture: str
    weights_mode: str
    mean_accuracy: float
    std_accuracy: float
    mean_epochs: float | None = None
    std_epochs: float | None = None
    fold_results: tuple[FoldResult, ...] = field(default=())

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.system, self.architecture, self.weights_mode)


@dataclass(frozen=True)
class BestEntry:
    system: str
    winners: tuple[tuple[str, str], ...]  # (architecture, weights_mode), sorted
    accuracy: float

    @property
    def architectures(self) -> tuple[str, ...]:
        return tuple(sorted({a for a, _ in self.winners}, key=_arch_order))

    @property
    def weights_modes(self) -> tuple[str, ...]:
        return tuple(sorted({w for _, w in self.winners}, key=WEIGHT_MODES.index))


@dataclass(frozen=True)
class BestCombination:
    per_system: dict[str, BestEntry]
    overall: float


def _arch_order(name: str) -> tuple[int, str]:
    return (ARCHITECTURES.index(name) if name in ARCHITECTURES else len(ARCHITECTURES), name)


# --- scoring -------------------------------------------------------------------


def top1_correct(probabilities: np.ndarray | torch.Tensor, labels: Sequence[int]) -> int:
    """Count of rows whose argmax equals the label; ties go to the lowest class index."""
    probs = torch.as_tensor(probabilities)
    pred = probs.argmax(dim=1)  # first maximal index
    return int((pred == torch.as_tensor(labels)).sum().item())


def predict(model: ClassifierModel, records: Sequence[ManifestRecord], image_root: str | os.PathLike,
            batch_size: int = 32) -> tuple[torch.Tensor, list[int]]:
    index = {g: i for i, g in enumerate(model.class_order)}
    unknown = sorted({r.game_id for r in records if r.game_id not in index})
    if unknown:
        raise UnknownClass(f"fold contains games unknown to the model: {unknown[:5]}")
    labels = [index[r.game_id] for r in records]
    ds = ScreenshotDataset([Path(image_root) / r.path for r in records], labels,
                           model.spec.input_resolution, model.spec.preprocessing_id, cache=False)
    model.eval()
    out = []
    with torch.no_grad():
        for x, _ in DataLoader(ds, batch_size=batch_size):
            out.append(model(x))
    return torch.cat(out), labels


def score_fold(model: ClassifierModel, test_fold: Sequence[ManifestRecord], image_root: str | os.PathLike) -> float:
    """Unweighted top-1 accuracy of ``model`` on the held-out screenshots."""
    if not test_fold:
        raise ValueError("empty fold")
    probs, labels = predict(model, test_fold, image_root)
    return top1_correct(probs, labels) / len(labels)


# --- aggregation ---------------------------------------------------------------


def aggregate_system(results: Sequence[FoldResult], k: int = 5) -> SystemReport:
    """Mean and population standard deviation over exactly ``k`` fold results of one group."""
    if not results:
        raise ValueError("no fold results to aggregate")
    keys = {r.key for r in results}
    if len(keys) != 1:
        raise ValueError(f"fold results mix group keys: {sorted(keys)}")
    if len(results) != k:
        raise ValueError(f"expected {k} fold results, got {len(results)}")
    if sorted(r.fold for r in results) != list(range(k)):
        raise ValueError("fold indices must be exactly 0..k-1")
    acc = np.array([r.accuracy for r in results], dtype=np.float64)
    ep = np.array([r.epochs_run for r in results], dtype=np.float64)
    system, arch, mode = keys.pop()
    return SystemReport(system, arch, mode, float(acc.mean()), float(acc.std()), float(ep.mean()), float(ep.std()),
                        tuple(sorted(results, key=lambda r: r.fold)))


def aggregate_all(results: Iterable[FoldResult], k: int = 5) -> list[SystemReport]:
    groups: dict[tuple, list[FoldResult]] = defaultdict(list)
    for r in results:
        groups[r.key].append(r)
    return [aggregate_system(groups[key], k) for key in sorted(groups, key=_group_sort)]


def _group_sort(key: tuple[str, str, str]):
    system, arch, mode = key
    return (system_order(system), system, _arch_order(arch), WEIGHT_MODES.index(mode) if mode in WEIGHT_MODES else 9)


def select_best_combination(reports: Iterable[SystemReport]) -> BestCombination:
    """Per system, the group(s) with maximal mean accuracy; overall is the unweighted mean of the maxima."""
    by_system: dict[str, list[SystemReport]] = defaultdict(list)
    for r in reports:
        by_system[r.system].append(r)
    per_system = {}
    for system in sorted(by_system, key=lambda s: (system_order(s), s)):
        best = max(r.mean_accuracy for r in by_system[system])
        winners = sorted({(r.architecture, r.weights_mode) for r in by_system[system] if r.mean_accuracy == best},
                         key=lambda w: (_arch_order(w[0]), w[1]))
        per_system[system] = BestEntry(system, tuple(winners), best)
    overall = float(np.mean([e.accuracy for e in per_system.values()])) if per_system else math.nan
    return BestCombination(per_system, overall)


# --- fold results on disk --------------------------------------------------------

_FOLD_FIELDS = ["system", "architecture", "weights_mode", "fold", "accuracy", "epochs_run"]


def write_fold_results(results: Iterable[FoldResult], path: str | os.PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(_FOLD_FIELDS)
        for r in sorted(results, key=lambda r: (_group_sort(r.key), r.fold)):
            w.writerow([r.system, r.architecture, r.weights_mode, r.fold, repr(r.accuracy), r.epochs_run])
    return path


def read_fold_results(path: str | os.PathLike) -> list[FoldResult]:
    with open(path, encoding="utf-8", newline="") as fh:
        return [
            FoldResult(d["system"], d["architecture"], d["weights_mode"], int(d["fold"]), float(d["accuracy"]), int(d["epochs_run"]))
            for d in csv.DictReader(fh)
        ]


# --- published tables --------------------------------------------------------------

PUBLISHED_TABLES = {
    "cnn": "published_cnn.csv",
    "transformers": "published_transformers.csv",
    "densenet201_weights": "published_densenet201_weights.csv",
    "efficientnetb3_weights": "published_efficientnetb3_weights.csv",
    "efficientnetv2s_weights": "published_efficientnetv2s_weights.csv",
}


def _read_data(name: str) -> str:
    return resources.files("gameid").joinpath("data").joinpath(name).read_text(encoding="utf-8")


def load_published_reports(tables: Sequence[str] | None = None, paths: Sequence[str | os.PathLike] = ()) -> list[SystemReport]:
    """SystemReports from CSV transcriptions of published results (percent values).

    Groups repeated across tables must agree; they are kept once.
    """
    texts = [_read_data(PUBLISHED_TABLES[t]) for t in (tables if tables is not None else PUBLISHED_TABLES)]
    texts += [Path(p).read_text(encoding="utf-8") for p in paths]
    seen: dict[tuple, SystemReport] = {}
    for text in texts:
        for d in csv.DictReader(io.StringIO(text)):
            rep = SystemReport(
                d["system"], d["architecture"], d["weights"],
                float(d["acc_mean_pct"]) / 100, float(d["acc_std_pct"]) / 100,
                float(d["epochs_mean"]) if d.get("epochs_mean") else None,
                float(d["epochs_std"]) if d.get("epochs_std") else None,
            )
            old = seen.get(rep.key)
            if old is not None and old.mean_accuracy != rep.mean_accuracy:
                raise ValueError(f"conflicting published values for {rep.key}")
            if old is None or (old.mean_epochs is None and rep.mean_epochs is not None):
                seen[rep.key] = rep
    return sorted(seen.values(), key=lambda r: _group_sort(r.key))


def load_published_best() -> dict[str, tuple[tuple[str, ...], str, float]]:
    """Published per-system winners: system -> (architectures, weights_mode, accuracy)."""
    out = {}
    for d in csv.DictReader(io.StringIO(_read_data("published_best.csv"))):
        archs = tuple(a.strip() for a in d["architectures"].split("/"))
        out[d["system"]] = (archs, d["weights"], float(d["acc_pct"]) / 100)
    return out


# --- rendering -------------------------------------------------------------------


def fmt_pct(x: float) -> str:
    """Fraction -> percent with two decimals, half-up, period separator."""
    return f"{Decimal(repr(float(x))).scaleb(2).quantize(Decimal('0.01'), rounding=ROUND_HALF_UP)}%"


def fmt_num(x: float | None) -> str:
    if x is None:
        return PLACEHOLDER
    return str(Decimal(repr(float(x))).quantize(Decimal("0.1"), rounding=ROUND_HALF_UP))


def _grid(reports: list[SystemReport], cell) -> tuple[list[str], list[list[str]]]:
    systems = sorted({r.system for r in reports}, key=lambda s: (system_order(s), s))
    archs = sorted({r.architecture for r in reports}, key=_arch_order)
    lookup = {(r.system, r.architecture): r for r in reports}
    rows = []
    for s in systems:
        rows.append([s] + [cell(lookup[(s, a)]) if (s, a) in lookup else PLACEHOLDER for a in archs])
    return ["System"] + archs, rows


def _accuracy_cell(r: SystemReport) -> str:
    return f"{fmt_pct(r.mean_accuracy)} ({fmt_pct(r.std_accuracy)})"


def _epochs_cell(r: SystemReport) -> str:
    if r.mean_epochs is None:
        return PLACEHOLDER
    return f"{fmt_num(r.mean_epochs)} ({fmt_num(r.std_epochs)})"


def _render(header: list[str], rows: list[list[str]], fmt: str) -> str:
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
        return buf.getvalue()
    lines = ["| " + " | ".join(header) + " |", "|" + "|".join("---" for _ in header) + "|"]
    lines += ["| " + " | ".join(r) + " |" for r in rows]
    return "\n".join(lines) + "\n"


def render_tables(reports: Sequence[SystemReport], best: BestCombination, fmt: str = "markdown") -> dict[str, str]:
    """Report name -> rendered text. Row order is system order, columns follow the registry."""
    if fmt not in ("csv", "markdown"):
        raise ValueError(f"unknown format {fmt!r}")
    out: dict[str, str] = {}
    modes = sorted({r.weights_mode for r in reports}, key=lambda m: (WEIGHT_MODES.index(m) if m in WEIGHT_MODES else 9, m))
    for mode in modes:
        group = [r for r in reports if r.weights_mode == mode]
        out[f"accuracy_{mode}"] = _render(*_grid(group, _accuracy_cell), fmt)
        out[f"epochs_{mode}"] = _render(*_grid(group, _epochs_cell), fmt)
    rows = [
        [e.system, " / ".join(e.architectures), " / ".join(e.weights_modes), fmt_pct(e.accuracy)]
        for e in best.per_system.values()
    ]
    rows.append(["Average", "", "", fmt_pct(best.overall) if best.per_system else PLACEHOLDER])
    out["best_combination"] = _render(["System", "Architecture", "Weights", "Accuracy"], rows, fmt)
    return out


def render_report(reports: Sequence[SystemReport], best: BestCombination, fmt: str, out_dir: str | os.PathLike) -> list[Path]:
    """Write every report table under ``out_dir``; returns the written paths."""
    ext = {"csv": ".csv", "markdown": ".md"}.get(fmt)
    if ext is None:
        raise ValueError(f"unknown format {fmt!r}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, text in render_tables(reports, best, fmt).items():
        p = out_dir / f"{name}{ext}"
        with open(p, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        paths.append(p)
    return paths
