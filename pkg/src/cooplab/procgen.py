"""Kitchen layouts: text format, procedural generation, and validation.

A layout is a rectangular grid of cells. Floor cells ('.') are walkable;
everything else is a barrier. Four object classes sit on barrier cells:
onion piles ('O'), plate piles ('B'), pots ('P'), and serving goals ('X').
Plain counters are 'W'. The two agent start cells are marked '1' and '2'
and are floor.

Generation starts from one of five base kitchens stripped down to its
walls, then places one object of each class on a sampled barrier cell
(phase one), places one more of each on the remaining cells (phase two),
drops the agents onto floor cells, rotates the whole grid a quarter turn
with probability one half, and pads to 9x9. Placement is restricted to
barrier cells listed as usable in the template data files; the blocked
cells are frozen as data, not derived at run time.

Generated layouts that reproduce any held-out kitchen's object cell sets
are resampled.
"""

from __future__ import annotations

import dataclasses
from importlib import resources

import numpy as np

Cell = tuple[int, int]

FLOOR = "."
WALL = "W"
ONION = "O"
PLATE = "B"
POT = "P"
GOAL = "X"
AGENT_CHARS = ("1", "2")
OBJECT_CLASSES = ("onion", "plate", "pot", "goal")

PAD_HEIGHT = 9
PAD_WIDTH = 9

_GRID_CHARS = frozenset(FLOOR + WALL + ONION + PLATE + POT + GOAL + "12")


class LayoutError(ValueError):
    """Raised for malformed layout text or inconsistent layout fields."""


@dataclasses.dataclass(eq=False)
class Layout:
    """One kitchen: barrier mask, object cells, and agent start cells.

    `walls` is True on every non-floor cell, including cells that carry an
    object. Object tuples are sorted and disjoint. Coordinates are
    (row, col).
    """

    height: int
    width: int
    walls: np.ndarray
    onions: tuple[Cell, ...]
    plates: tuple[Cell, ...]
    pots: tuple[Cell, ...]
    goals: tuple[Cell, ...]
    starts: tuple[Cell, Cell]
    template: str | None = None
    rotated: bool = False
    seed: int | None = None

    def __post_init__(self):
        self.walls = np.asarray(self.walls, dtype=bool)
        if self.walls.shape != (self.height, self.width):
            raise LayoutError(f"wall mask shape {self.walls.shape} does not match "
                              f"{self.height}x{self.width}")
        self.onions = tuple(sorted(self.onions))
        self.plates = tuple(sorted(self.plates))
        self.pots = tuple(sorted(self.pots))
        self.goals = tuple(sorted(self.goals))
        occupied = set()
        for cells in (self.onions, self.plates, self.pots, self.goals):
            for r, c in cells:
                if not (0 <= r < self.height and 0 <= c < self.width):
                    raise LayoutError(f"object cell {(r, c)} out of bounds")
                if not self.walls[r, c]:
                    raise LayoutError(f"object cell {(r, c)} is not a barrier cell")
                if (r, c) in occupied:
                    raise LayoutError(f"object cell {(r, c)} used twice")
                occupied.add((r, c))
        if len(self.starts) != 2 or self.starts[0] == self.starts[1]:
            raise LayoutError("need two distinct agent start cells")
        for r, c in self.starts:
            if not (0 <= r < self.height and 0 <= c < self.width):
                raise LayoutError(f"start cell {(r, c)} out of bounds")
            if self.walls[r, c]:
                raise LayoutError(f"start cell {(r, c)} is a barrier cell")

    def __eq__(self, other):
        if not isinstance(other, Layout):
            return NotImplemented
        return (self.height == other.height and self.width == other.width
                and np.array_equal(self.walls, other.walls)
                and self.onions == other.onions and self.plates == other.plates
                and self.pots == other.pots and self.goals == other.goals
                and self.starts == other.starts and self.template == other.template
                and self.rotated == other.rotated and self.seed == other.seed)

    def object_cells(self, kind: str) -> tuple[Cell, ...]:
        return {"onion": self.onions, "plate": self.plates,
                "pot": self.pots, "goal": self.goals}[kind]

    def grid_rows(self) -> list[str]:
        """Render the grid portion of the text format."""
        rows = [[WALL if self.walls[r, c] else FLOOR for c in range(self.width)]
                for r in range(self.height)]
        for char, cells in ((ONION, self.onions), (PLATE, self.plates),
                            (POT, self.pots), (GOAL, self.goals)):
            for r, c in cells:
                rows[r][c] = char
        for char, (r, c) in zip(AGENT_CHARS, self.starts):
            rows[r][c] = char
        return ["".join(row) for row in rows]


def encode_layout(layout: Layout) -> str:
    """Serialize a layout to its text format (header plus grid)."""
    header = [
        f"template: {layout.template if layout.template is not None else '-'}",
        f"rotated: {'true' if layout.rotated else 'false'}",
        f"seed: {layout.seed if layout.seed is not None else '-'}",
    ]
    return "\n".join(header + layout.grid_rows()) + "\n"


def decode_layout(text: str) -> Layout:
    """Parse the text format produced by encode_layout.

    Raises LayoutError with a line reference on any malformed input.
    """
    lines = text.splitlines()
    header: dict[str, str] = {}
    grid_start = 0
    for i, line in enumerate(lines):
        stripped = line.strip()
        if not stripped:
            grid_start = i + 1
            continue
        if ":" in stripped and stripped.split(":", 1)[0] in ("template", "rotated", "seed"):
            key, value = stripped.split(":", 1)
            header[key.strip()] = value.strip()
            grid_start = i + 1
        else:
            grid_start = i
            break
    for key in ("template", "rotated", "seed"):
        if key not in header:
            raise LayoutError(f"missing header line '{key}:'")
    rows = []
    for i in range(grid_start, len(lines)):
        line = lines[i].rstrip()
        if not line:
            continue
        for j, ch in enumerate(line):
            if ch not in _GRID_CHARS:
                raise LayoutError(f"line {i + 1}, column {j + 1}: bad grid character {ch!r}")
        rows.append(line)
    if not rows:
        raise LayoutError("no grid rows")
    width = len(rows[0])
    for i, row in enumerate(rows):
        if len(row) != width:
            raise LayoutError(f"grid row {i + 1} has width {len(row)}, expected {width}")
    height = len(rows)
    walls = np.zeros((height, width), dtype=bool)
    objects: dict[str, list[Cell]] = {ONION: [], PLATE: [], POT: [], GOAL: []}
    starts: dict[str, Cell] = {}
    for r in range(height):
        for c in range(width):
            ch = rows[r][c]
            if ch in AGENT_CHARS:
                if ch in starts:
                    raise LayoutError(f"agent {ch} appears twice")
                starts[ch] = (r, c)
            elif ch != FLOOR:
                walls[r, c] = True
                if ch in objects:
                    objects[ch].append((r, c))
    if set(starts) != set(AGENT_CHARS):
        raise LayoutError("grid must contain exactly one '1' and one '2'")
    rotated_text = header["rotated"].lower()
    if rotated_text not in ("true", "false"):
        raise LayoutError(f"bad rotated value {header['rotated']!r}")
    return Layout(
        height=height, width=width, walls=walls,
        onions=tuple(objects[ONION]), plates=tuple(objects[PLATE]),
        pots=tuple(objects[POT]), goals=tuple(objects[GOAL]),
        starts=(starts["1"], starts["2"]),
        template=None if header["template"] == "-" else header["template"],
        rotated=rotated_text == "true",
        seed=None if header["seed"] == "-" else int(header["seed"]),
    )


def encode_layout_line(layout: Layout) -> str:
    """One-line form of the text format ('/' joins grid rows), for headers."""
    text = encode_layout(layout)
    header, grid = text.split("\n", 3)[:3], text.split("\n")[3:]
    parts = [line.replace(": ", "=") for line in header]
    parts.append("grid=" + "/".join(row for row in grid if row))
    return "; ".join(parts)


def decode_layout_line(line: str) -> Layout:
    fields = {}
    for part in line.split("; "):
        key, _, value = part.partition("=")
        fields[key.strip()] = value.strip()
    rows = fields["grid"].split("/")
    text = (f"template: {fields['template']}\nrotated: {fields['rotated']}\n"
            f"seed: {fields['seed']}\n" + "\n".join(rows) + "\n")
    return decode_layout(text)


@dataclasses.dataclass(frozen=True)
class Template:
    """One base kitchen: its original layout plus generation metadata.

    `usable` lists the barrier cells where generation may place objects,
    sorted for deterministic sampling. `partitions` holds the floor
    regions (one region, or left/right for divided kitchens).
    """

    name: str
    divided: bool
    original: Layout
    usable: tuple[Cell, ...]
    partitions: tuple[tuple[Cell, ...], ...]


def _floor_regions(walls: np.ndarray) -> list[set[Cell]]:
    height, width = walls.shape
    seen: set[Cell] = set()
    regions = []
    for r in range(height):
        for c in range(width):
            if walls[r, c] or (r, c) in seen:
                continue
            comp: set[Cell] = set()
            stack = [(r, c)]
            seen.add((r, c))
            while stack:
                cr, cc = stack.pop()
                comp.add((cr, cc))
                for nr, nc in _neighbors(cr, cc, height, width):
                    if not walls[nr, nc] and (nr, nc) not in seen:
                        seen.add((nr, nc))
                        stack.append((nr, nc))
            regions.append(comp)
    return regions


def _neighbors(r: int, c: int, height: int, width: int):
    if r > 0:
        yield r - 1, c
    if r + 1 < height:
        yield r + 1, c
    if c > 0:
        yield r, c - 1
    if c + 1 < width:
        yield r, c + 1


def _parse_template(text: str) -> Template:
    lines = [line.rstrip() for line in text.splitlines()]
    fields: dict[str, str] = {}
    grid_rows: list[str] = []
    blocked: set[Cell] = set()
    section = None
    for line in lines:
        if not line:
            continue
        if line.startswith("name:"):
            fields["name"] = line.split(":", 1)[1].strip()
        elif line.startswith("divided:"):
            fields["divided"] = line.split(":", 1)[1].strip()
        elif line == "grid:":
            section = "grid"
        elif line == "blocked:":
            section = "blocked"
        elif section == "grid":
            grid_rows.append(line)
        elif section == "blocked":
            for token in line.split():
                r, c = token.split(",")
                blocked.add((int(r), int(c)))
    name = fields["name"]
    divided = fields["divided"] == "true"
    original = decode_layout(
        f"template: {name}\nrotated: false\nseed: -\n" + "\n".join(grid_rows))
    walls = original.walls
    usable = tuple(sorted(
        (r, c)
        for r in range(original.height) for c in range(original.width)
        if walls[r, c] and (r, c) not in blocked))
    regions = _floor_regions(walls)
    if divided:
        if len(regions) != 2:
            raise LayoutError(f"template {name}: divided but {len(regions)} floor regions")
        regions.sort(key=lambda reg: min(c for _, c in reg))
    elif len(regions) != 1:
        raise LayoutError(f"template {name}: {len(regions)} floor regions")
    return Template(
        name=name, divided=divided, original=original, usable=usable,
        partitions=tuple(tuple(sorted(reg)) for reg in regions),
    )


def load_templates() -> tuple[Template, ...]:
    """Load the five base kitchens from package data, sorted by name."""
    root = resources.files("cooplab").joinpath("data/templates")
    templates = []
    for entry in sorted(root.iterdir(), key=lambda e: e.name):
        if entry.name.endswith(".txt"):
            templates.append(_parse_template(entry.read_text()))
    if not templates:
        raise LayoutError("no template data files found")
    return tuple(templates)


def held_out_layouts() -> tuple[Layout, ...]:
    """The five original kitchens, padded to 9x9, in template-name order."""
    return tuple(pad_layout(t.original) for t in load_templates())


def rotate_layout90(layout: Layout) -> Layout:
    """Rotate a quarter turn clockwise: (r, c) maps to (c, H-1-r)."""
    height = layout.height

    def rot(cell: Cell) -> Cell:
        r, c = cell
        return c, height - 1 - r

    return Layout(
        height=layout.width, width=layout.height,
        walls=np.rot90(layout.walls, k=-1).copy(),
        onions=tuple(rot(c) for c in layout.onions),
        plates=tuple(rot(c) for c in layout.plates),
        pots=tuple(rot(c) for c in layout.pots),
        goals=tuple(rot(c) for c in layout.goals),
        starts=(rot(layout.starts[0]), rot(layout.starts[1])),
        template=layout.template, rotated=not layout.rotated, seed=layout.seed,
    )


def pad_layout(layout: Layout, height: int = PAD_HEIGHT, width: int = PAD_WIDTH) -> Layout:
    """Grow the grid to height x width, anchored top-left, filling with walls."""
    if layout.height > height or layout.width > width:
        raise LayoutError(f"layout {layout.height}x{layout.width} exceeds pad target "
                          f"{height}x{width}")
    if layout.height == height and layout.width == width:
        return layout
    walls = np.ones((height, width), dtype=bool)
    walls[:layout.height, :layout.width] = layout.walls
    return Layout(
        height=height, width=width, walls=walls,
        onions=layout.onions, plates=layout.plates,
        pots=layout.pots, goals=layout.goals, starts=layout.starts,
        template=layout.template, rotated=layout.rotated, seed=layout.seed,
    )


@dataclasses.dataclass(frozen=True)
class ValidityReport:
    """Result of the reachability check on one layout.

    `valid` is the strict rule: at least one agent, walking only on floor
    cells from its start, can stand orthogonally adjacent to at least one
    cell of every object class. `missing` lists, per agent, the classes
    that agent cannot reach. `cooperative_valid` relaxes the rule to the
    union of both agents' reach, which divided kitchens may need.
    """

    valid: bool
    reachable_counts: tuple[int, int]
    missing: tuple[tuple[str, ...], tuple[str, ...]]
    cooperative_valid: bool


def _reachable_floor(layout: Layout, start: Cell) -> set[Cell]:
    seen = {start}
    stack = [start]
    while stack:
        r, c = stack.pop()
        for nb in _neighbors(r, c, layout.height, layout.width):
            if not layout.walls[nb] and nb not in seen:
                seen.add(nb)
                stack.append(nb)
    return seen


def _missing_classes(layout: Layout, region: set[Cell]) -> tuple[str, ...]:
    adjacent: set[Cell] = set()
    for r, c in region:
        adjacent.update(_neighbors(r, c, layout.height, layout.width))
    return tuple(
        kind for kind in OBJECT_CLASSES
        if not any(cell in adjacent for cell in layout.object_cells(kind)))


def validate_layout(layout: Layout) -> ValidityReport:
    """Check that the layout is playable by reachability from the starts."""
    regions = [_reachable_floor(layout, s) for s in layout.starts]
    missing = tuple(_missing_classes(layout, reg) for reg in regions)
    union = regions[0] | regions[1]
    return ValidityReport(
        valid=any(not m for m in missing),
        reachable_counts=(len(regions[0]), len(regions[1])),
        missing=missing,
        cooperative_valid=not _missing_classes(layout, union),
    )


def matches_held_out(layout: Layout, held_out: tuple[Layout, ...] | list[Layout]) -> bool:
    """True when the layout's object cell sets equal some held-out kitchen's.

    Both sides are compared on the padded 9x9 grid; all four classes must
    match as sets for a hit.
    """
    padded = pad_layout(layout)
    for other in held_out:
        other = pad_layout(other)
        if all(set(padded.object_cells(k)) == set(other.object_cells(k))
               for k in OBJECT_CLASSES):
            return True
    return False


# Phase order for object placement; frozen so a given rng stream always
# yields the same layout.
_PLACEMENT_ORDER = ("plate", "onion", "pot", "goal")
_PLACEMENT_CHAR = {"plate": PLATE, "onion": ONION, "pot": POT, "goal": GOAL}


def generate_layout(
    rng: np.random.Generator,
    templates: tuple[Template, ...] | None = None,
    held_out: tuple[Layout, ...] | list[Layout] | None = None,
    seed: int | None = None,
    max_attempts: int = 100,
) -> Layout:
    """Sample one kitchen as described in the module docstring.

    `seed` is a label recorded on the layout, not a source of randomness;
    pass the value used to build `rng` so the layout file names its own
    provenance. Raises LayoutError if every attempt collides with a
    held-out kitchen.
    """
    if templates is None:
        templates = load_templates()
    for _ in range(max_attempts):
        template = templates[int(rng.integers(len(templates)))]
        placed: dict[str, list[Cell]] = {k: [] for k in _PLACEMENT_ORDER}
        free = list(template.usable)
        for _phase in range(2):
            for kind in _PLACEMENT_ORDER:
                if not free:
                    raise LayoutError(
                        f"template {template.name}: no usable barrier cells left")
                idx = int(rng.integers(len(free)))
                placed[kind].append(free.pop(idx))
        if template.divided:
            cells = [part[int(rng.integers(len(part)))] for part in template.partitions]
            if rng.random() < 0.5:
                cells.reverse()
            starts = (cells[0], cells[1])
        else:
            floor = template.partitions[0]
            i = int(rng.integers(len(floor)))
            j = int(rng.integers(len(floor) - 1))
            if j >= i:
                j += 1
            starts = (floor[i], floor[j])
        layout = Layout(
            height=template.original.height, width=template.original.width,
            walls=template.original.walls.copy(),
            onions=tuple(placed["onion"]), plates=tuple(placed["plate"]),
            pots=tuple(placed["pot"]), goals=tuple(placed["goal"]),
            starts=starts, template=template.name, rotated=False, seed=seed,
        )
        if rng.random() < 0.5:
            layout = rotate_layout90(layout)
        layout = pad_layout(layout)
        if held_out is not None and matches_held_out(layout, held_out):
            continue
        return layout
    raise LayoutError(f"failed to generate a fresh layout in {max_attempts} attempts")


def generate_corpus(
    count: int,
    seed: int,
    templates: tuple[Template, ...] | None = None,
    held_out: tuple[Layout, ...] | None = None,
) -> list[Layout]:
    """Generate `count` layouts from independent child streams of `seed`."""
    if templates is None:
        templates = load_templates()
    if held_out is None:
        held_out = held_out_layouts()
    root = np.random.SeedSequence(seed)
    layouts = []
    for i, child in enumerate(root.spawn(count)):
        rng = np.random.default_rng(child)
        layouts.append(generate_layout(
            rng, templates=templates, held_out=held_out, seed=i))
    return layouts
