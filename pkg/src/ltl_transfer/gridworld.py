"""Deterministic Minecraft-style grid: map files, labeling function and moves."""

from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

GLYPHS = {
    "a": "axe",
    "w": "wood",
    "g": "grass",
    "i": "iron",
    "t": "toolshed",
    "b": "workbench",
    "f": "factory",
    "s": "shelter",
    "d": "bridge",
}
PROPOSITIONS = tuple(sorted(GLYPHS.values()))
VACANT = "."
START = "A"


class MapError(ValueError):
    pass


class NonRectangular(MapError):
    pass


class NoStart(MapError):
    pass


class UnknownGlyph(MapError):
    def __init__(self, char: str, position: tuple[int, int]):
        self.char = char
        self.position = position
        super().__init__(f"unknown glyph {char!r} at row {position[0]}, column {position[1]}")


class Action(enum.IntEnum):
    NORTH = 0
    SOUTH = 1
    EAST = 2
    WEST = 3


_DELTA = {Action.NORTH: (-1, 0), Action.SOUTH: (1, 0), Action.EAST: (0, 1), Action.WEST: (0, -1)}
ACTIONS = tuple(Action)

Position = tuple[int, int]


@dataclass(frozen=True)
class GridMap:
    width: int
    height: int
    cells: dict = field(compare=False, hash=False)  # (row, col) -> proposition, vacant cells absent
    start: Position
    rows: tuple[str, ...]
    name: str = field(default="", compare=False)

    @property
    def vocab(self) -> frozenset:
        return frozenset(self.cells.values())

    @property
    def positions(self) -> list[Position]:
        return [(r, c) for r in range(self.height) for c in range(self.width)]

    @property
    def n_cells(self) -> int:
        return self.width * self.height

    def cell_index(self, pos: Position) -> int:
        return pos[0] * self.width + pos[1]

    def cell_position(self, index: int) -> Position:
        return divmod(index, self.width)

    def in_bounds(self, pos: Position) -> bool:
        return 0 <= pos[0] < self.height and 0 <= pos[1] < self.width

    @property
    def digest(self) -> str:
        """Identity hash of the grid contents, used to tie option banks to maps."""
        return hashlib.sha256("\n".join(self.rows).encode()).hexdigest()

    @property
    def label_image(self) -> frozenset:
        """Every assignment the labeling function can produce on this map."""
        return frozenset(label(self, p) for p in self.positions)

    def to_text(self) -> str:
        return "\n".join(self.rows) + "\n"


def load_map(text: str, name: str = "") -> GridMap:
    """Parse an ASCII map; ``#`` starts a comment line, blank lines are skipped."""
    rows = [line.rstrip("\r") for line in text.splitlines()]
    rows = [r.strip() for r in rows if r.strip() and not r.lstrip().startswith("#")]
    if not rows:
        raise NoStart("empty map")
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise NonRectangular("all rows must have the same length")
    if width < 2 or len(rows) < 2:
        raise MapError("maps are at least 2x2")
    cells = {}
    start = None
    for r, row in enumerate(rows):
        for c, ch in enumerate(row):
            if ch == START:
                if start is not None:
                    raise MapError(f"second start cell at row {r}, column {c}")
                start = (r, c)
            elif ch in GLYPHS:
                cells[r, c] = GLYPHS[ch]
            elif ch != VACANT:
                raise UnknownGlyph(ch, (r, c))
    if start is None:
        raise NoStart("no 'A' start cell")
    return GridMap(width, len(rows), cells, start, tuple(rows), name)


def read_map(path: str | Path) -> GridMap:
    path = Path(path)
    return load_map(path.read_text(encoding="utf-8"), name=path.stem)


def builtin_map(name: str) -> GridMap:
    """One of the fixture maps shipped with the package (``detour``, ``desk_a``, ``map_0``...)."""
    res = resources.files("ltl_transfer") / "maps" / f"{name}.map"
    if not res.is_file():
        raise MapError(f"no builtin map named {name!r}")
    return load_map(res.read_text(encoding="utf-8"), name=name)


def builtin_map_names() -> list[str]:
    root = resources.files("ltl_transfer") / "maps"
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".map"))


def resolve_map(ref: str) -> GridMap:
    """Map file path, or the name of a builtin map."""
    if Path(ref).is_file():
        return read_map(ref)
    return builtin_map(ref)


def step(grid: GridMap, s: Position, a: Action) -> Position:
    dr, dc = _DELTA[Action(a)]
    nxt = (s[0] + dr, s[1] + dc)
    return nxt if grid.in_bounds(nxt) else s


def label(grid: GridMap, s: Position) -> frozenset:
    prop = grid.cells.get(tuple(s))
    return frozenset() if prop is None else frozenset([prop])


def transition_table(grid: GridMap) -> list[list[int]]:
    """``table[cell][action]`` is the successor cell index."""
    return [[grid.cell_index(step(grid, p, a)) for a in ACTIONS] for p in grid.positions]
