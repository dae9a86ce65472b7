import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import FIXTURES, FakeClock, replay_client
from gameid.catalog import (
    AuthRejected,
    CatalogCache,
    CatalogClient,
    ChecksumMismatch,
    FixtureTransport,
    ImageNotFound,
    MalformedResponse,
    ProviderUnavailable,
    RateLimiter,
    ScreenshotRecord,
    canonical_key,
    catalog_from_json,
    catalog_to_json,
    download_images,
    fetch_screenshot_image,
    fetch_system_catalog,
)
from gameid.catalog.fixtures import synthesize_counts, write_catalog_fixture
from gameid.curation import select_games
from gameid.systems import CONSOLE_COUNTS, SystemId, get_system

SYS = SystemId("28", "Atari 2600")


def _write_pairs(root, pairs):
    root.mkdir(parents=True, exist_ok=True)
    with open(root / "pairs.jsonl", "w") as fh:
        for key, responses in pairs.items():
            fh.write(json.dumps({"key": key, "responses": responses}) + "\n")
    return root


# --- pagination --------------------------------------------------------------


def test_pagination_250_games_three_pages(tmp_path):
    write_catalog_fixture(tmp_path, SYS, [1] * 250, page_size=100)
    client, transport = replay_client(tmp_path)
    games = fetch_system_catalog(client, SYS, page_size=100)
    assert len(games) == 250
    assert transport.count("/v1/games?") == 3
    assert transport.count("/v1/games/") == 250


def test_zero_games(tmp_path):
    write_catalog_fixture(tmp_path, SYS, [])
    client, transport = replay_client(tmp_path)
    assert fetch_system_catalog(client, SYS) == []
    assert transport.count("/v1/games?") == 1


def test_page_size_bounds(tmp_path):
    write_catalog_fixture(tmp_path, SYS, [1])
    client, _ = replay_client(tmp_path)
    with pytest.raises(ValueError):
        fetch_system_catalog(client, SYS, page_size=101)


def test_short_page_without_total_stops(tmp_path):
    base = "/v1/games"
    page = lambda off, n: {"games": [{"game_id": off + i, "title": f"T{off + i}"} for i in range(n)]}
    pairs = {
        canonical_key(base, {"platform": "28", "limit": "2", "offset": "0", "format": "brief"}): [{"json": page(0, 2)}],
        canonical_key(base, {"platform": "28", "limit": "2", "offset": "2", "format": "brief"}): [{"json": page(2, 1)}],
    }
    client, transport = replay_client(_write_pairs(tmp_path, pairs))
    games = fetch_system_catalog(client, SYS, page_size=2)
    assert [g.game_id for g in games] == ["0", "1", "2"]
    assert all(g.n_screenshots == 0 for g in games)  # listings 404 -> no screenshots


def test_xbox_series_fixture_counts():
    system = get_system("Xbox Series X/S")
    client, _ = replay_client(FIXTURES / "catalog" / system.slug)
    games = fetch_system_catalog(client, system)
    assert len(games) == 3256
    assert sum(g.n_screenshots for g in games) == 44
    curated = select_games(games)
    assert (curated.n_games, curated.n_screenshots) == (5, 37)


@pytest.mark.parametrize("counts", CONSOLE_COUNTS, ids=lambda c: c.system.slug)
def test_synthesized_marginals(counts):
    per_game = synthesize_counts(counts.total_games, counts.total_screenshots,
                                 counts.selected_games, counts.selected_screenshots)
    assert len(per_game) == counts.total_games
    assert sum(per_game) == counts.total_screenshots
    sel = [c for c in per_game if c >= 5]
    assert (len(sel), sum(sel)) == (counts.selected_games, counts.selected_screenshots)


# --- retries and errors --------------------------------------------------------


def test_retry_429_then_success(tmp_path):
    key = canonical_key("/v1/games/1/platforms/28/screenshots")
    pairs = {key: [{"status": 429}, {"status": 429},
                   {"json": {"screenshots": [{"image": "https://cdn.test/a/1.png"}]}}]}
    clock = FakeClock()
    client, transport = replay_client(_write_pairs(tmp_path, pairs), clock=clock)
    shots = client.list_screenshots(SYS, "1")
    assert [s.screenshot_id for s in shots] == ["1"]
    assert client.retries == 2
    assert clock.sleeps == [1.0, 2.0]
    assert transport.count() == 3


def test_persistent_5xx_gives_up(tmp_path):
    key = canonical_key("/v1/platforms")
    client, transport = replay_client(_write_pairs(tmp_path, {key: [{"status": 503}]}), max_retries=3)
    with pytest.raises(ProviderUnavailable):
        client.list_systems()
    assert transport.count() == 4


def test_backoff_is_capped(tmp_path):
    key = canonical_key("/v1/platforms")
    clock = FakeClock()
    client, _ = replay_client(_write_pairs(tmp_path, {key: [{"status": 500}]}), clock=clock,
                              max_retries=8, backoff_cap=10.0)
    with pytest.raises(ProviderUnavailable):
        client.list_systems()
    assert clock.sleeps == [1, 2, 4, 8, 10, 10, 10, 10]


def test_auth_errors(tmp_path):
    with pytest.raises(AuthRejected):
        CatalogClient(FixtureTransport(tmp_path), api_key=None)
    key = canonical_key("/v1/platforms")
    client, _ = replay_client(_write_pairs(tmp_path, {key: [{"status": 401}]}))
    with pytest.raises(AuthRejected):
        client.list_systems()


def test_malformed_response(tmp_path):
    pairs = {canonical_key("/v1/platforms"): [{"text": "<html>oops"}],
             canonical_key("/v1/games/1/platforms/28/screenshots"): [{"json": {"shots": []}}]}
    client, _ = replay_client(_write_pairs(tmp_path, pairs))
    with pytest.raises(MalformedResponse):
        client.list_systems()
    with pytest.raises(MalformedResponse):
        client.list_screenshots(SYS, "1")


def test_api_key_never_in_fixture_key():
    assert canonical_key("https://api.x/v1/games", {"api_key": "s3cret", "b": "2", "a": "1"}) == "/v1/games?a=1&b=2"


@given(st.dictionaries(st.text("abcdef", min_size=1, max_size=4), st.text("xyz019", max_size=4), max_size=6))
def test_canonical_key_order_invariant(params):
    items = list(params.items())
    assert canonical_key("/p", dict(items)) == canonical_key("/p", dict(reversed(items)))


def test_duplicate_listing_entries_deduplicated(tmp_path):
    shots = [{"image": "https://cdn.test/x/7.png"}, {"image": "https://cdn.test/y/7.png"}, {"image": "https://cdn.test/x/8.png"}]
    pairs = {canonical_key("/v1/games/1/platforms/28/screenshots"): [{"json": {"screenshots": shots}}]}
    client, _ = replay_client(_write_pairs(tmp_path, pairs))
    assert [s.screenshot_id for s in client.list_screenshots(SYS, "1")] == ["7", "8"]


# --- rate limiting ---------------------------------------------------------------


@pytest.mark.parametrize("rate", [1.0, 2.0])
def test_rate_limit_window(tmp_path, rate):
    write_catalog_fixture(tmp_path, SYS, [2] * 30, page_size=10)
    clock = FakeClock()
    client, transport = replay_client(tmp_path, rate=rate, clock=clock)
    fetch_system_catalog(client, SYS, page_size=10)
    times = [t for t, _ in transport.calls]
    assert len(times) == 33
    # no half-open one-second window holds more than `rate` requests
    for i, t in enumerate(times):
        assert sum(1 for u in times[i:] if u < t + 1.0) <= rate
    assert times[-1] == pytest.approx((len(times) - 1) / rate)


@given(st.lists(st.floats(0, 3), min_size=1, max_size=40), st.sampled_from([0.5, 1.0, 3.0]))
@settings(max_examples=100, deadline=None)
def test_rate_limiter_spacing_property(gaps, rate):
    clock = FakeClock()
    limiter = RateLimiter(rate, clock=clock, sleep=clock.sleep)
    issued = []
    for g in gaps:
        clock.t += g
        issued.append(limiter.acquire())
    assert all(b - a >= 1 / rate - 1e-9 for a, b in zip(issued, issued[1:]))


# --- images and cache --------------------------------------------------------------


def test_image_download_and_cache_hit(tmp_path):
    root = tmp_path / "fx"
    write_catalog_fixture(root, SYS, [3, 2], with_images=True)
    client, transport = replay_client(root)
    games = fetch_system_catalog(client, SYS)
    cache = CatalogCache(tmp_path / "cache")
    assert download_images(client, games, cache) == (5, 0)
    before = transport.count()
    rec = games[0].screenshot_refs[0]
    data = fetch_screenshot_image(client, SYS, rec, cache)
    assert transport.count() == before  # served from cache, zero calls
    assert data[:8] == b"\x89PNG\r\n\x1a\n"
    assert cache.path_for(cache.key(SYS.slug, rec.screenshot_id)).relative_to(cache.root).as_posix() == \
        f"atari-2600/{rec.game_id}/{rec.screenshot_id}.png"
    # second run stores nothing new and issues no image requests
    assert download_images(client, games, cache) == (5, 0)
    assert transport.count("/screenshots/") == 5


def test_404_image_goes_to_skip_log(tmp_path):
    cache = CatalogCache(tmp_path / "cache")
    client, _ = replay_client(_write_pairs(tmp_path / "fx", {}))
    rec = ScreenshotRecord("s1", "g1", "https://cdn.test/gone/s1.png")
    with pytest.raises(ImageNotFound):
        fetch_screenshot_image(client, SYS, rec, cache)
    assert cache.skipped() == [{"key": "atari-2600/s1", "reason": "not-found"}]
    assert "atari-2600/s1" not in cache


def test_checksum_integrity(tmp_path):
    cache = CatalogCache(tmp_path)
    cache.put("sys/a", "sys/g/a.png", b"abc")
    assert cache.get("sys/a") == b"abc"
    (tmp_path / "sys/g/a.png").write_bytes(b"abd")
    with pytest.raises(ChecksumMismatch):
        cache.get("sys/a")
    assert cache.verify() == ["sys/a"]
    with pytest.raises(ChecksumMismatch):
        cache.put("sys/a", "sys/g/a.png", b"zzz")


def test_index_file_format(tmp_path):
    cache = CatalogCache(tmp_path)
    cache.put("s/b", "s/g/b.png", b"1")
    cache.put("s/a", "s/g/a.png", b"2")
    raw = (tmp_path / "index.json").read_bytes()
    assert b"\r\n" not in raw
    data = json.loads(raw)
    assert data["version"] == 1 and list(data["entries"]) == ["s/a", "s/b"]
    assert set(CatalogCache(tmp_path).entries) == {"s/a", "s/b"}


def test_fetch_is_deterministic(tmp_path):
    root = FIXTURES / "catalog" / "atari-2600"
    a = catalog_to_json(fetch_system_catalog(replay_client(root)[0], SYS))
    b = catalog_to_json(fetch_system_catalog(replay_client(root)[0], SYS))
    assert a == b
    assert catalog_to_json(catalog_from_json(a)) == a


def test_committed_fixture_matches_generator(tmp_path):
    from gameid.catalog.fixtures import write_published_fixture
    from gameid.systems import get_counts

    write_published_fixture(tmp_path, get_counts(SYS))
    committed = (FIXTURES / "catalog" / "atari-2600" / "atari-2600.jsonl").read_bytes()
    assert (tmp_path / "atari-2600.jsonl").read_bytes() == committed
