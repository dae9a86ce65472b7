"""On-disk screenshot cache.

Layout::

    <root>/<system>/<game_id>/<screenshot_id>.<ext>
    <root>/index.json        {"version": 1, "entries": {"<system>/<screenshot_id>": {...}}}
    <root>/skipped.jsonl     one line per screenshot that could not be fetched
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
from pathlib import Path

from gameid.catalog.records import ChecksumMismatch, ImageNotFound

INDEX_VERSION = 1


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _safe(part: str) -> str:
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in part)


class CatalogCache:
    """Append-only image store with a checksummed index.

    Writes to the index are serialized by a lock, so one cache can be shared
    by concurrent download workers.
    """

    def __init__(self, root: str | os.PathLike):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self.entries: dict[str, dict[str, str]] = {}
        index = self.root / "index.json"
        if index.exists():
            data = json.loads(index.read_text(encoding="utf-8"))
            if data.get("version") != INDEX_VERSION:
                raise ValueError(f"unsupported cache index version {data.get('version')!r}")
            self.entries = data["entries"]

    @staticmethod
    def key(system_slug: str, screenshot_id: str) -> str:
        return f"{system_slug}/{screenshot_id}"

    def relpath(self, system_slug: str, game_id: str, screenshot_id: str, ext: str) -> str:
        return f"{_safe(system_slug)}/{_safe(game_id)}/{_safe(screenshot_id)}{ext}"

    def __contains__(self, key: str) -> bool:
        return key in self.entries

    def path_for(self, key: str) -> Path:
        return self.root / self.entries[key]["path"]

    def get(self, key: str) -> bytes:
        entry = self.entries[key]
        data = (self.root / entry["path"]).read_bytes()
        if sha256_bytes(data) != entry["sha256"]:
            raise ChecksumMismatch(f"cached file for {key} does not match its checksum")
        return data

    def put(self, key: str, relpath: str, data: bytes) -> Path:
        digest = sha256_bytes(data)
        with self._lock:
            existing = self.entries.get(key)
            if existing is not None:
                if existing["sha256"] != digest:
                    raise ChecksumMismatch(f"refusing to overwrite {key} with different content")
                return self.root / existing["path"]
            target = self.root / relpath
            target.parent.mkdir(parents=True, exist_ok=True)
            tmp = target.with_suffix(target.suffix + ".part")
            tmp.write_bytes(data)
            os.replace(tmp, target)
            self.entries[key] = {"path": relpath, "sha256": digest}
            self._write_index()
        return target

    def _write_index(self) -> None:
        payload = {"version": INDEX_VERSION, "entries": dict(sorted(self.entries.items()))}
        tmp = self.root / "index.json.part"
        with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(payload, fh, indent=1, sort_keys=True, ensure_ascii=False)
            fh.write("\n")
        os.replace(tmp, self.root / "index.json")

    def verify(self) -> list[str]:
        """Return the keys whose file is missing or fails its checksum."""
        bad = []
        for key in sorted(self.entries):
            try:
                self.get(key)
            except (ChecksumMismatch, FileNotFoundError):
                bad.append(key)
        return bad

    def log_skip(self, key: str, reason: str) -> None:
        with self._lock:
            with open(self.root / "skipped.jsonl", "a", encoding="utf-8", newline="\n") as fh:
                fh.write(json.dumps({"key": key, "reason": reason}, sort_keys=True) + "\n")

    def skipped(self) -> list[dict[str, str]]:
        path = self.root / "skipped.jsonl"
        if not path.exists():
            return []
        return [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines() if line]


__all__ = ["CatalogCache", "sha256_bytes", "ImageNotFound"]
