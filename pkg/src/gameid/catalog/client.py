"""Catalog provider client (MobyGames-shaped REST API)."""

from __future__ import annotations

import logging
import math
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import PurePosixPath
from typing import Callable, Iterable
from urllib.parse import urlsplit

from gameid.catalog.cache import CatalogCache
from gameid.catalog.records import (
    AuthRejected,
    GameRecord,
    ImageNotFound,
    MalformedResponse,
    NotFound,
    ProviderUnavailable,
    RateLimited,
    ScreenshotRecord,
    _require,
)
from gameid.catalog.transport import Response, Transport
from gameid.systems import SystemId

log = logging.getLogger(__name__)

DEFAULT_BASE_URL = "https://api.mobygames.com/v1"
MAX_PAGE_SIZE = 100


class RateLimiter:
    """Spaces requests at least ``1 / rate`` seconds apart.

    This is a token bucket of capacity one: any half-open one-second window
    holds at most ``rate`` requests. ``rate=None`` disables limiting.
    """

    def __init__(
        self,
        rate: float | None = 1.0,
        clock: Callable[[], float] = time.monotonic,
        sleep: Callable[[float], None] = time.sleep,
    ):
        if rate is not None and rate <= 0:
            raise ValueError("rate must be positive")
        self.interval = 0.0 if rate is None else 1.0 / rate
        self.clock = clock
        self.sleep = sleep
        self._next = -math.inf
        self._lock = threading.Lock()

    def acquire(self) -> float:
        with self._lock:
            now = self.clock()
            if now < self._next:
                self.sleep(self._next - now)
                now = max(self.clock(), self._next)
            self._next = now + self.interval
            return now


class CatalogClient:
    def __init__(
        self,
        transport: Transport,
        api_key: str | None,
        base_url: str = DEFAULT_BASE_URL,
        limiter: RateLimiter | None = None,
        max_retries: int = 5,
        backoff_base: float = 1.0,
        backoff_cap: float = 60.0,
        sleep: Callable[[float], None] = time.sleep,
    ):
        if not api_key:
            raise AuthRejected("no API key supplied (set MOBYGAMES_API_KEY or pass --api-key)")
        self.transport = transport
        self.api_key = api_key
        self.base_url = base_url.rstrip("/")
        self.limiter = limiter or RateLimiter(1.0)
        self.max_retries = max_retries
        self.backoff_base = backoff_base
        self.backoff_cap = backoff_cap
        self.sleep = sleep
        self.retries = 0

    def request(self, url: str, params: dict[str, str] | None = None) -> Response:
        """GET with rate limiting; retries 429 and 5xx with exponential backoff."""
        params = dict(params or {})
        if url.startswith(self.base_url):
            params["api_key"] = self.api_key
        last = None
        for attempt in range(self.max_retries + 1):
            self.limiter.acquire()
            resp = self.transport.get(url, params)
            if resp.status in (401, 403):
                raise AuthRejected(f"provider rejected credentials ({resp.status})")
            if resp.status == 404:
                raise NotFound(url)
            if resp.status < 400:
                return resp
            last = resp
            if attempt < self.max_retries:
                self.retries += 1
                delay = min(self.backoff_cap, self.backoff_base * 2**attempt)
                log.debug("status %s for %s, retrying in %.1fs", resp.status, url, delay)
                self.sleep(delay)
        if last is not None and last.status == 429:
            raise RateLimited(f"still rate-limited after {self.max_retries} retries: {url}")
        raise ProviderUnavailable(f"status {last.status if last else '?'} after {self.max_retries} retries: {url}")

    def get_json(self, path: str, params: dict[str, str] | None = None) -> dict:
        resp = self.request(self.base_url + path, params)
        try:
            data = resp.json()
        except ValueError as exc:
            raise MalformedResponse(f"{path}: body is not JSON") from exc
        if not isinstance(data, dict):
            raise MalformedResponse(f"{path}: expected a JSON object")
        return data

    def list_systems(self) -> list[SystemId]:
        data = self.get_json("/platforms")
        out = []
        for p in _require(data, "platforms", list, "/platforms"):
            out.append(SystemId(str(_require(p, "platform_id", (int, str), "platform")),
                                _require(p, "platform_name", str, "platform")))
        return out

    def iter_game_pages(self, system: SystemId, page_size: int) -> Iterable[list[dict]]:
        if not 1 <= page_size <= MAX_PAGE_SIZE:
            raise ValueError(f"page_size must be in [1, {MAX_PAGE_SIZE}]")
        offset = 0
        while True:
            params = {"platform": system.provider_id, "limit": str(page_size), "offset": str(offset), "format": "brief"}
            data = self.get_json("/games", params)
            games = _require(data, "games", list, "/games")
            yield games
            offset += len(games)
            total = data.get("total")
            if total is not None:
                if offset >= int(total) or not games:
                    return
            elif len(games) < page_size:
                return

    def list_screenshots(self, system: SystemId, game_id: str) -> list[ScreenshotRecord]:
        path = f"/games/{game_id}/platforms/{system.provider_id}/screenshots"
        try:
            data = self.get_json(path)
        except NotFound:
            return []
        out: list[ScreenshotRecord] = []
        seen: set[str] = set()
        for item in _require(data, "screenshots", list, path):
            uri = _require(item, "image", str, path)
            sid = str(item.get("screenshot_id") or PurePosixPath(urlsplit(uri).path).stem)
            if sid in seen:
                continue
            seen.add(sid)
            out.append(ScreenshotRecord(sid, game_id, uri, item.get("width"), item.get("height")))
        return out


def fetch_system_catalog(client: CatalogClient, system: SystemId, page_size: int = MAX_PAGE_SIZE) -> list[GameRecord]:
    """Fetch every game of ``system`` together with its screenshot listing."""
    games: list[GameRecord] = []
    seen: set[str] = set()
    for page in client.iter_game_pages(system, page_size):
        for item in page:
            gid = str(_require(item, "game_id", (int, str), "/games"))
            title = _require(item, "title", str, "/games")
            if gid in seen:
                continue
            seen.add(gid)
            shots = client.list_screenshots(system, gid)
            games.append(GameRecord(gid, title, system, tuple(shots)))
    log.info("%s: %d games, %d screenshots", system.display_name, len(games), sum(g.n_screenshots for g in games))
    return games


def image_ext(uri: str) -> str:
    suffix = PurePosixPath(urlsplit(uri).path).suffix.lower()
    return suffix if suffix in {".png", ".jpg", ".jpeg", ".gif", ".webp", ".bmp"} else ".img"


def fetch_screenshot_image(
    client: CatalogClient, system: SystemId, record: ScreenshotRecord, cache: CatalogCache
) -> bytes:
    """Return the image bytes for ``record``, going to the network only on a cache miss.

    A 404 is written to the cache skip-log before ``ImageNotFound`` is raised.
    """
    key = cache.key(system.slug, record.screenshot_id)
    if key in cache:
        return cache.get(key)
    try:
        data = client.request(record.image_uri).body
    except ImageNotFound:
        cache.log_skip(key, "not-found")
        raise
    cache.put(key, cache.relpath(system.slug, record.game_id, record.screenshot_id, image_ext(record.image_uri)), data)
    return data


def download_images(
    client: CatalogClient,
    games: list[GameRecord],
    cache: CatalogCache,
    workers: int = 4,
) -> tuple[int, int]:
    """Fill the cache for every screenshot of ``games``; returns (stored, skipped)."""
    jobs = [(g.system, s) for g in games for s in g.screenshot_refs]

    def one(job) -> bool:
        system, rec = job
        try:
            fetch_screenshot_image(client, system, rec, cache)
            return True
        except ImageNotFound:
            return False
        except RateLimited:
            cache.log_skip(cache.key(system.slug, rec.screenshot_id), "rate-limited")
            return False

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        ok = sum(pool.map(one, jobs))
    return ok, len(jobs) - ok
