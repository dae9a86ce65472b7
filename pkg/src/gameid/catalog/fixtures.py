"""Synthetic provider fixtures.

The real catalog cannot be replayed offline, so fixtures are synthesized with
the same marginals as the published dataset counts: the right number of games,
the right screenshot total, and the right number of games (and screenshots)
at or above the selection threshold. Per-game counts are otherwise random but
fully determined by the seed.
"""

from __future__ import annotations

import colorsys
import io
import json
import random
from pathlib import Path
from typing import Callable

from PIL import Image, ImageDraw

from gameid.catalog.client import DEFAULT_BASE_URL
from gameid.catalog.transport import canonical_key
from gameid.systems import SystemCounts, SystemId

IMAGE_HOST = "https://cdn.mobygames.test"


def synthesize_counts(
    total_games: int,
    total_screenshots: int,
    selected_games: int,
    selected_screenshots: int,
    min_screenshots: int = 5,
    seed: int = 0,
) -> list[int]:
    """Per-game screenshot counts matching the four marginals, in shuffled order."""
    rest_games = total_games - selected_games
    rest_shots = total_screenshots - selected_screenshots
    cap = min_screenshots - 1
    if selected_screenshots < min_screenshots * selected_games:
        raise ValueError("selected screenshots too few for the selected games")
    if rest_shots < 0 or rest_shots > cap * rest_games or (rest_games == 0 and rest_shots):
        raise ValueError("unselected screenshots cannot fit under the threshold")
    rng = random.Random(seed)

    selected = [min_screenshots] * selected_games
    for _ in range(selected_screenshots - min_screenshots * selected_games):
        selected[rng.randrange(selected_games)] += 1

    rest = [0] * rest_games
    open_slots = list(range(rest_games))
    for _ in range(rest_shots):
        j = rng.randrange(len(open_slots))
        i = open_slots[j]
        rest[i] += 1
        if rest[i] == cap:
            open_slots[j] = open_slots[-1]
            open_slots.pop()

    counts = selected + rest
    rng.shuffle(counts)
    return counts


def game_color(index: int, n_games: int) -> tuple[int, int, int]:
    r, g, b = colorsys.hsv_to_rgb((index / max(n_games, 1)) % 1.0, 0.85, 0.9)
    return int(r * 255), int(g * 255), int(b * 255)


def synthetic_screenshot(game_index: int, shot_index: int, n_games: int, size=(96, 72)) -> bytes:
    """A PNG whose colors and layout identify the game; shots of one game jitter."""
    rng = random.Random(f"{game_index}/{shot_index}")
    w, h = size
    bg = game_color(game_index, n_games)
    fg = game_color(game_index + n_games // 2 + 1, n_games)
    img = Image.new("RGB", size, bg)
    draw = ImageDraw.Draw(img)
    # Position and shape of the sprite encode the game; jitter encodes the shot.
    cx = int(w * (0.2 + 0.6 * ((game_index * 7) % 10) / 9)) + rng.randint(-3, 3)
    cy = int(h * (0.2 + 0.6 * ((game_index * 3) % 10) / 9)) + rng.randint(-3, 3)
    r = 8 + (game_index % 4) * 3
    if game_index % 2:
        draw.ellipse([cx - r, cy - r, cx + r, cy + r], fill=fg)
    else:
        draw.rectangle([cx - r, cy - r, cx + r, cy + r], fill=fg)
    stripe = (game_index * 13) % h
    draw.rectangle([0, stripe, w, min(h, stripe + 4)], fill=(255 - bg[0], 255 - bg[1], 255 - bg[2]))
    for _ in range(20):
        x, y = rng.randrange(w), rng.randrange(h)
        draw.point((x, y), fill=(rng.randrange(256),) * 3)
    buf = io.BytesIO()
    img.save(buf, format="PNG", optimize=False)
    return buf.getvalue()


def write_catalog_fixture(
    root: str | Path,
    system: SystemId,
    counts: list[int],
    page_size: int = 100,
    base_url: str = DEFAULT_BASE_URL,
    with_images: bool = False,
    image_factory: Callable[[int, int, int], bytes] = synthetic_screenshot,
    titles: list[str] | None = None,
) -> Path:
    """Write a replay bundle for one system; returns the fixture directory."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    pairs: list[dict] = []
    n = len(counts)
    game_ids = [str(10000 + i) for i in range(n)]
    for offset in range(0, max(n, 1), page_size):
        page = [
            {"game_id": int(game_ids[i]), "title": titles[i] if titles else f"{system.display_name} Game {i:05d}"}
            for i in range(offset, min(n, offset + page_size))
        ]
        params = {"platform": system.provider_id, "limit": str(page_size), "offset": str(offset), "format": "brief"}
        key = canonical_key(base_url + "/games", params)
        pairs.append({"key": key, "responses": [{"status": 200, "json": {"games": page, "total": n}}]})
    blob_dir = root / "blobs"
    for i, (gid, c) in enumerate(zip(game_ids, counts)):
        shots = []
        for j in range(c):
            sid = f"{system.provider_id}-{gid}-{j:03d}"
            uri = f"{IMAGE_HOST}/screenshots/{system.provider_id}/{gid}/{sid}.png"
            shots.append({"image": uri, "width": 96, "height": 72, "caption": f"shot {j}"})
            if with_images:
                blob_dir.mkdir(exist_ok=True)
                (blob_dir / f"{sid}.png").write_bytes(image_factory(i, j, n))
                pairs.append({"key": canonical_key(uri), "responses": [{"status": 200, "body_file": f"blobs/{sid}.png"}]})
        key = canonical_key(f"{base_url}/games/{gid}/platforms/{system.provider_id}/screenshots")
        pairs.append({"key": key, "responses": [{"status": 200, "json": {"screenshots": shots}}]})
    bundle = root / f"{system.slug}.jsonl"
    with open(bundle, "w", encoding="utf-8", newline="\n") as fh:
        for pair in pairs:
            fh.write(json.dumps(pair, sort_keys=True) + "\n")
    return root


def write_published_fixture(root: str | Path, counts: SystemCounts, seed: int = 0, page_size: int = 100) -> Path:
    """Fixture whose totals reproduce the published counts for one system."""
    per_game = synthesize_counts(
        counts.total_games,
        counts.total_screenshots,
        counts.selected_games,
        counts.selected_screenshots,
        seed=seed,
    )
    return write_catalog_fixture(root, counts.system, per_game, page_size=page_size)


def write_toy_fixture(
    root: str | Path,
    system: SystemId,
    n_games: int = 10,
    shots_per_game: int = 5,
    n_small_games: int = 2,
) -> Path:
    """Tiny system with images: ``n_games`` eligible games plus a few under the threshold."""
    counts = [shots_per_game] * n_games + [3] * n_small_games
    titles = [f"Toy Title {i:02d}" for i in range(len(counts))]
    return write_catalog_fixture(root, system, counts, page_size=100, with_images=True, titles=titles)
