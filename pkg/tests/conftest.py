from __future__ import annotations

from pathlib import Path

import pytest

from gameid.catalog import CatalogCache, CatalogClient, FixtureTransport, RateLimiter, GameRecord, ScreenshotRecord
from gameid.catalog import download_images, fetch_system_catalog
from gameid.curation import curate
from gameid.systems import SystemId, get_system

FIXTURES = Path(__file__).parent / "fixtures"


class FakeClock:
    """Manual clock; sleeping advances it."""

    def __init__(self, t: float = 0.0):
        self.t = t
        self.sleeps: list[float] = []

    def __call__(self) -> float:
        return self.t

    def sleep(self, dt: float) -> None:
        self.sleeps.append(dt)
        self.t += dt


def replay_client(root, rate=None, clock=None, **kw) -> tuple[CatalogClient, FixtureTransport]:
    clock = clock or FakeClock()
    transport = FixtureTransport(root, clock=clock)
    limiter = RateLimiter(rate, clock=clock, sleep=clock.sleep)
    client = CatalogClient(transport, "test-key", limiter=limiter, sleep=clock.sleep, **kw)
    return client, transport


def make_catalog(counts: list[int], system: SystemId | None = None) -> list[GameRecord]:
    system = system or SystemId("999", "Synthetic")
    games = []
    for i, n in enumerate(counts):
        gid = f"g{i:04d}"
        shots = tuple(ScreenshotRecord(f"{gid}-s{j:03d}", gid, f"https://img.test/{gid}/{j}.png") for j in range(n))
        games.append(GameRecord(gid, f"Game {i}", system, shots))
    return games


@pytest.fixture(scope="session")
def fake_clock_cls():
    return FakeClock


@pytest.fixture(scope="session")
def toy_workspace(tmp_path_factory):
    """Toy Atari catalog fetched into a cache and curated: 10 games x 5 screenshots."""
    root = tmp_path_factory.mktemp("toy")
    client, _ = replay_client(FIXTURES / "toy")
    system = get_system("Atari 2600")
    games = fetch_system_catalog(client, system)
    cache = CatalogCache(root / "cache")
    download_images(client, games, cache, workers=2)
    manifest = curate(games, seed=0, cache=cache)
    return {"root": root, "cache": cache, "manifest": manifest, "games": games}


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance") or __import__("sys").modules.get("tests.test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for name, (ok, detail) in results.items():
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
