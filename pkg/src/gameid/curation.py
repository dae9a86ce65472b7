"""Dataset curation: selection rule, per-game fold dealing, stratified splits, manifests."""

from __future__ import annotations

import json
import random
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Iterable

from gameid.catalog.cache import CatalogCache
from gameid.catalog.client import image_ext
from gameid.catalog.records import GameRecord
from gameid.systems import SystemId

MANIFEST_VERSION = 1
TRAIN, VAL, TEST = "train", "val", "test"


class InfeasibleSplit(ValueError):
    code = "infeasible"


class ManifestError(ValueError):
    code = "invalid-manifest"


@dataclass(frozen=True)
class CurationRule:
    min_screenshots: int = 5

    def __post_init__(self) -> None:
        if self.min_screenshots < 1:
            raise ValueError("min_screenshots must be positive")

    def check_folds(self, k: int) -> None:
        if self.min_screenshots < k:
            raise InfeasibleSplit(f"min_screenshots={self.min_screenshots} cannot cover k={k} folds")


@dataclass(frozen=True)
class CuratedSet:
    games: tuple[GameRecord, ...]

    @property
    def n_games(self) -> int:
        return len(self.games)

    @property
    def n_screenshots(self) -> int:
        return sum(g.n_screenshots for g in self.games)


def select_games(catalog: Iterable[GameRecord], rule: CurationRule = CurationRule()) -> CuratedSet:
    """Keep exactly the games with at least ``rule.min_screenshots`` screenshots."""
    return CuratedSet(tuple(g for g in catalog if g.n_screenshots >= rule.min_screenshots))


@dataclass(frozen=True)
class FoldAssignment:
    k: int
    folds: dict[str, int]
    games: dict[str, tuple[str, ...]]  # game_id -> sorted screenshot ids

    def fold_sizes(self, game_id: str) -> list[int]:
        sizes = [0] * self.k
        for sid in self.games[game_id]:
            sizes[self.folds[sid]] += 1
        return sizes

    def members(self, fold: int) -> set[str]:
        return {sid for sid, f in self.folds.items() if f == fold}


def assign_folds(curated: CuratedSet, k: int = 5, seed: int = 0) -> FoldAssignment:
    """Shuffle each game's screenshots with a seeded generator and deal them round-robin.

    The deal starts at a per-game random fold so that remainders do not all
    pile onto fold 0. Each game's generator depends only on (seed, game_id),
    so input order never changes the result.
    """
    if k < 2:
        raise ValueError("k must be at least 2")
    folds: dict[str, int] = {}
    games: dict[str, tuple[str, ...]] = {}
    for game in sorted(curated.games, key=lambda g: g.game_id):
        ids = sorted(s.screenshot_id for s in game.screenshot_refs)
        if len(ids) < k:
            raise InfeasibleSplit(f"game {game.game_id} has {len(ids)} screenshots, fewer than k={k}")
        rng = random.Random(f"folds/{seed}/{game.game_id}")
        order = ids[:]
        rng.shuffle(order)
        start = rng.randrange(k)
        for i, sid in enumerate(order):
            if sid in folds:
                raise ValueError(f"screenshot id {sid} appears in more than one game")
            folds[sid] = (start + i) % k
        games[game.game_id] = tuple(ids)
    return FoldAssignment(k, folds, games)


def val_count(n: int, val_fraction: float) -> int:
    """max(1, round_half_up(val_fraction * n))."""
    exact = Decimal(str(val_fraction)) * n
    return max(1, int(exact.quantize(Decimal(1), rounding=ROUND_HALF_UP)))


@dataclass(frozen=True)
class SplitSpec:
    held_out_fold: int | None
    val_fraction: float
    roles: dict[str, str]

    def ids(self, role: str) -> list[str]:
        return sorted(sid for sid, r in self.roles.items() if r == role)


def split_train_val(
    assignment: FoldAssignment,
    held_out_fold: int | None,
    val_fraction: float = 0.2,
    seed: int = 0,
) -> SplitSpec:
    """Hold out one fold as test and carve a per-game validation subset from the rest.

    ``held_out_fold=None`` keeps every screenshot in train/val (used when a
    model is trained on a whole corpus). The validation draw depends on
    (seed, held_out_fold, game_id), so it is re-drawn for every fold.
    """
    if held_out_fold is not None and not 0 <= held_out_fold < assignment.k:
        raise ValueError(f"held_out_fold must be in [0, {assignment.k}), got {held_out_fold}")
    if not 0 < val_fraction < 1:
        raise ValueError("val_fraction must be in (0, 1)")
    roles: dict[str, str] = {}
    for gid in sorted(assignment.games):
        remaining = []
        for sid in assignment.games[gid]:
            if assignment.folds[sid] == held_out_fold:
                roles[sid] = TEST
            else:
                remaining.append(sid)
        n_val = val_count(len(remaining), val_fraction)
        if len(remaining) - n_val < 1:
            raise InfeasibleSplit(f"game {gid}: {len(remaining)} screenshots leave no training image")
        rng = random.Random(f"split/{seed}/{held_out_fold}/{gid}")
        val = set(rng.sample(remaining, n_val))
        for sid in remaining:
            roles[sid] = VAL if sid in val else TRAIN
    return SplitSpec(held_out_fold, val_fraction, roles)


# --- manifest -----------------------------------------------------------------


@dataclass(frozen=True)
class ManifestRecord:
    screenshot_id: str
    game_id: str
    title: str
    path: str
    fold: int


@dataclass(frozen=True)
class DatasetManifest:
    system: SystemId
    seed: int
    k: int
    rule: CurationRule
    records: tuple[ManifestRecord, ...]
    class_order: tuple[str, ...] = field(default=())

    @classmethod
    def build(
        cls,
        curated: CuratedSet,
        assignment: FoldAssignment,
        seed: int,
        rule: CurationRule = CurationRule(),
        cache: CatalogCache | None = None,
    ) -> "DatasetManifest":
        records = []
        system = None
        for game in curated.games:
            system = system or game.system
            for s in game.screenshot_refs:
                key = CatalogCache.key(game.system.slug, s.screenshot_id)
                if cache is not None and key in cache:
                    path = cache.entries[key]["path"]
                else:
                    path = f"{game.system.slug}/{game.game_id}/{s.screenshot_id}{image_ext(s.image_uri)}"
                records.append(ManifestRecord(s.screenshot_id, game.game_id, game.title, path, assignment.folds[s.screenshot_id]))
        if system is None:
            raise ManifestError("cannot build a manifest from an empty curated set")
        records.sort(key=lambda r: (r.game_id, r.screenshot_id))
        class_order = tuple(sorted({r.game_id for r in records}))
        manifest = cls(system, seed, assignment.k, rule, tuple(records), class_order)
        manifest.validate()
        return manifest

    def assignment(self) -> FoldAssignment:
        games: dict[str, list[str]] = defaultdict(list)
        for r in self.records:
            games[r.game_id].append(r.screenshot_id)
        return FoldAssignment(
            self.k,
            {r.screenshot_id: r.fold for r in self.records},
            {g: tuple(sorted(ids)) for g, ids in games.items()},
        )

    def titles(self) -> dict[str, str]:
        return {r.game_id: r.title for r in self.records}

    def by_id(self) -> dict[str, ManifestRecord]:
        return {r.screenshot_id: r for r in self.records}

    def validate(self) -> None:
        """Raise ManifestError unless every manifest invariant holds."""
        keys = [(r.game_id, r.screenshot_id) for r in self.records]
        if keys != sorted(keys):
            raise ManifestError("records are not sorted by (game_id, screenshot_id)")
        if len({r.screenshot_id for r in self.records}) != len(self.records):
            raise ManifestError("duplicate screenshot ids")
        if list(self.class_order) != sorted({r.game_id for r in self.records}):
            raise ManifestError("class_order must be the sorted distinct game ids")
        per_game: dict[str, Counter] = defaultdict(Counter)
        for r in self.records:
            if not 0 <= r.fold < self.k:
                raise ManifestError(f"record {r.screenshot_id}: fold {r.fold} outside [0, {self.k})")
            per_game[r.game_id][r.fold] += 1
        for gid, c in per_game.items():
            if sum(c.values()) < self.rule.min_screenshots:
                raise ManifestError(f"game {gid} has fewer than {self.rule.min_screenshots} screenshots")
            sizes = [c[f] for f in range(self.k)]
            if min(sizes) < 1 or max(sizes) - min(sizes) > 1:
                raise ManifestError(f"game {gid} has unbalanced fold sizes {sizes}")

    # JSON Lines: header, then one record per line.
    def to_jsonl(self) -> str:
        header = {
            "version": MANIFEST_VERSION,
            "system": {"provider_id": self.system.provider_id, "display_name": self.system.display_name},
            "seed": self.seed,
            "k": self.k,
            "rule": {"min_screenshots": self.rule.min_screenshots},
            "class_order": list(self.class_order),
        }
        lines = [json.dumps(header, ensure_ascii=False)]
        for r in self.records:
            lines.append(json.dumps(
                {"screenshot_id": r.screenshot_id, "game_id": r.game_id, "title": r.title, "path": r.path, "fold": r.fold},
                ensure_ascii=False,
            ))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_jsonl(cls, text: str) -> "DatasetManifest":
        lines = [ln for ln in text.split("\n") if ln.strip()]
        if not lines:
            raise ManifestError("empty manifest")
        try:
            header = json.loads(lines[0])
            if header.get("version") != MANIFEST_VERSION:
                raise ManifestError(f"unsupported manifest version {header.get('version')!r}")
            records = []
            for ln in lines[1:]:
                d = json.loads(ln)
                records.append(ManifestRecord(str(d["screenshot_id"]), str(d["game_id"]), d["title"], d["path"], int(d["fold"])))
            manifest = cls(
                SystemId(**header["system"]),
                int(header["seed"]),
                int(header["k"]),
                CurationRule(**header["rule"]),
                tuple(records),
                tuple(header["class_order"]),
            )
        except (KeyError, TypeError, json.JSONDecodeError) as exc:
            raise ManifestError(f"malformed manifest: {exc}") from exc
        manifest.validate()
        return manifest


def write_manifest(manifest: DatasetManifest, path: str | Path) -> Path:
    manifest.validate()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(manifest.to_jsonl())
    return path


def read_manifest(path: str | Path) -> DatasetManifest:
    return DatasetManifest.from_jsonl(Path(path).read_text(encoding="utf-8"))


def curate(
    catalog: Iterable[GameRecord],
    seed: int = 0,
    k: int = 5,
    rule: CurationRule = CurationRule(),
    cache: CatalogCache | None = None,
) -> DatasetManifest:
    """select_games -> assign_folds -> manifest, in one call."""
    rule.check_folds(k)
    curated = select_games(catalog, rule)
    return DatasetManifest.build(curated, assign_folds(curated, k, seed), seed, rule, cache)
