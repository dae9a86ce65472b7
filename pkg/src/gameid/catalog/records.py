from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any

from gameid.systems import SystemId


class CatalogError(Exception):
    """Base class for catalog and download failures."""

    code = "catalog-error"


class AuthRejected(CatalogError):
    code = "auth-rejected"


class ProviderUnavailable(CatalogError):
    code = "provider-unavailable"


class MalformedResponse(CatalogError):
    code = "malformed-response"


class NotFound(CatalogError):
    code = "not-found"


ImageNotFound = NotFound


class RateLimited(CatalogError):
    code = "rate-limited"


class ChecksumMismatch(CatalogError):
    code = "checksum-mismatch"


@dataclass(frozen=True)
class ScreenshotRecord:
    screenshot_id: str
    game_id: str
    image_uri: str
    width: int | None = None
    height: int | None = None


@dataclass(frozen=True)
class GameRecord:
    game_id: str
    title: str
    system: SystemId
    screenshot_refs: tuple[ScreenshotRecord, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        ids = [s.screenshot_id for s in self.screenshot_refs]
        if len(ids) != len(set(ids)):
            raise ValueError(f"duplicate screenshot ids in game {self.game_id}")

    @property
    def n_screenshots(self) -> int:
        return len(self.screenshot_refs)


def catalog_to_json(games: list[GameRecord]) -> str:
    """Serialize a catalog snapshot. Order is preserved, output is stable."""
    payload = [
        {
            "game_id": g.game_id,
            "title": g.title,
            "system": {"provider_id": g.system.provider_id, "display_name": g.system.display_name},
            "screenshots": [
                {
                    "screenshot_id": s.screenshot_id,
                    "image_uri": s.image_uri,
                    "width": s.width,
                    "height": s.height,
                }
                for s in g.screenshot_refs
            ],
        }
        for g in games
    ]
    return json.dumps(payload, ensure_ascii=False, indent=1) + "\n"


def catalog_from_json(text: str) -> list[GameRecord]:
    games = []
    for item in json.loads(text):
        system = SystemId(**item["system"])
        shots = tuple(
            ScreenshotRecord(
                screenshot_id=s["screenshot_id"],
                game_id=item["game_id"],
                image_uri=s["image_uri"],
                width=s.get("width"),
                height=s.get("height"),
            )
            for s in item["screenshots"]
        )
        games.append(GameRecord(item["game_id"], item["title"], system, shots))
    return games


def _require(obj: Any, key: str, kind: type | tuple[type, ...], where: str) -> Any:
    if not isinstance(obj, dict) or key not in obj or not isinstance(obj[key], kind):
        raise MalformedResponse(f"{where}: expected field {key!r} of type {kind}")
    return obj[key]
