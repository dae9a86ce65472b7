"""Console systems covered by the dataset, in reporting order.

Provider ids are MobyGames platform ids. Counts are the published catalog
totals and the subset that survives the five-screenshot rule; they drive the
fixture synthesizer and the row order of every report.
"""

from __future__ import annotations

import re
from dataclasses import dataclass


@dataclass(frozen=True)
class SystemId:
    provider_id: str
    display_name: str

    def __post_init__(self) -> None:
        if not self.provider_id:
            raise ValueError("provider_id must be non-empty")

    @property
    def slug(self) -> str:
        return slugify(self.display_name)


@dataclass(frozen=True)
class SystemCounts:
    system: SystemId
    manufacturer: str
    selected_games: int
    total_games: int
    selected_screenshots: int
    total_screenshots: int


def slugify(name: str) -> str:
    return re.sub(r"[^a-z0-9]+", "-", name.lower()).strip("-")


_ROWS = [
    # display name, provider id, manufacturer, sel games, total games, sel shots, total shots
    ("Atari 2600", "28", "Atari", 302, 598, 2148, 2981),
    ("NES", "22", "Nintendo", 1236, 1426, 18277, 18579),
    ("Master System", "26", "Sega", 322, 357, 4795, 4850),
    ("PC Engine", "40", "NEC/Hudson Soft", 213, 276, 3024, 3099),
    ("Mega Drive", "16", "Sega", 926, 1016, 15838, 15943),
    ("Super Nintendo", "15", "Nintendo", 1113, 1216, 20926, 21079),
    ("Sega Saturn", "23", "Sega", 249, 809, 4413, 4536),
    ("PlayStation", "6", "Sony", 1197, 2815, 26831, 27095),
    ("Nintendo 64", "9", "Nintendo", 172, 378, 2958, 3125),
    ("Dreamcast", "8", "Sega", 155, 553, 2147, 2217),
    ("PlayStation 2", "7", "Sony", 677, 3430, 14157, 14590),
    ("GameCube", "14", "Nintendo", 149, 621, 3061, 3094),
    ("Xbox", "13", "Microsoft", 161, 1015, 3351, 3379),
    ("Xbox 360", "69", "Microsoft", 651, 9357, 9087, 9426),
    ("PlayStation 3", "81", "Sony", 255, 15146, 8358, 8493),
    ("Wii", "82", "Nintendo", 118, 2680, 2519, 2655),
    ("Wii U", "132", "Nintendo", 31, 1590, 775, 798),
    ("PlayStation 4", "141", "Sony", 625, 22733, 22695, 22912),
    ("Xbox One", "142", "Microsoft", 119, 16545, 2397, 2661),
    ("Nintendo Switch", "203", "Nintendo", 77, 12374, 1736, 1787),
    ("Xbox Series X/S", "289", "Microsoft", 5, 3256, 37, 44),
    ("PlayStation 5", "288", "Sony", 43, 2432, 1351, 1356),
]

CONSOLE_COUNTS: tuple[SystemCounts, ...] = tuple(
    SystemCounts(SystemId(pid, name), maker, sg, tg, ss, ts)
    for name, pid, maker, sg, tg, ss, ts in _ROWS
)
CONSOLES: tuple[SystemId, ...] = tuple(c.system for c in CONSOLE_COUNTS)

ARCADE_COUNTS = SystemCounts(SystemId("143", "Arcade"), "various", 1633, 3125, 24235, 24714)
ARCADE = ARCADE_COUNTS.system

ALL_COUNTS: tuple[SystemCounts, ...] = CONSOLE_COUNTS + (ARCADE_COUNTS,)

_ALIASES = {"xbox series": "Xbox Series X/S", "genesis": "Mega Drive", "snes": "Super Nintendo"}


def get_system(name: str) -> SystemId:
    """Look a system up by display name, slug, provider id or a common alias."""
    key = _ALIASES.get(name.strip().lower(), name).strip()
    for counts in ALL_COUNTS:
        s = counts.system
        if key in (s.display_name, s.provider_id) or slugify(key) == s.slug:
            return s
    raise KeyError(f"unknown system: {name!r}")


def get_counts(system: SystemId) -> SystemCounts:
    for counts in ALL_COUNTS:
        if counts.system == system:
            return counts
    raise KeyError(system.display_name)


def system_order(name: str) -> int:
    """Position of a system in reporting order; unknown systems sort last."""
    for i, s in enumerate(CONSOLES + (ARCADE,)):
        if s.display_name == name:
            return i
    return len(CONSOLES) + 1
