"""Regenerate the frozen kitchen template data files.

Each of the five base kitchens ships as a data file holding the original
grid, a divided flag, and the set of wall cells where object placement is
blocked. The blocked set is derived here once and committed as data:

- wall cells with no orthogonally adjacent floor cell are blocked (nothing
  standing on the floor could ever use them), and
- in divided kitchens (two floor regions separated by a counter line) wall
  cells with no orthogonal adjacency to the *left* region are blocked, so
  placed objects always end up usable from the left side while the divider
  counters stay available to both.

Run from the repo root: python scripts/regen_template_data.py
"""

import pathlib

GRIDS = {
    "cramped-room": (
        False,
        """\
WWPWW
O1.2O
W...W
WBWXW
""",
    ),
    "asymmetric-advantages": (
        True,
        """\
WWWWWWWWW
O.WXWOW.X
W...P.1.W
W2..P...W
WWWBWBWWW
""",
    ),
    "coordination-ring": (
        False,
        """\
WWWPW
W.1.P
B2W.W
O...W
WOXWW
""",
    ),
    "forced-coordination": (
        True,
        """\
WWWPW
O.W1P
O2W.W
B.W.W
WWWXW
""",
    ),
    "counter-circuit": (
        False,
        """\
WWWPPWWW
W.1....W
B.WWWW.X
W....2.W
WWWOOWWW
""",
    ),
}

FLOOR_CHARS = {".", "1", "2"}


def neighbors(r, c, h, w):
    for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
        nr, nc = r + dr, c + dc
        if 0 <= nr < h and 0 <= nc < w:
            yield nr, nc


def floor_regions(rows):
    """Connected components of floor cells, as a list of sets."""
    h, w = len(rows), len(rows[0])
    seen = set()
    regions = []
    for r in range(h):
        for c in range(w):
            if rows[r][c] in FLOOR_CHARS and (r, c) not in seen:
                comp = set()
                stack = [(r, c)]
                seen.add((r, c))
                while stack:
                    cur = stack.pop()
                    comp.add(cur)
                    for nb in neighbors(*cur, h, w):
                        if rows[nb[0]][nb[1]] in FLOOR_CHARS and nb not in seen:
                            seen.add(nb)
                            stack.append(nb)
                regions.append(comp)
    return regions


def blocked_cells(rows, divided):
    h, w = len(rows), len(rows[0])
    regions = floor_regions(rows)
    if divided:
        if len(regions) != 2:
            raise ValueError(f"divided kitchen has {len(regions)} floor regions")
        # keep placements adjacent to the leftmost region
        keep = min(regions, key=lambda reg: min(c for _, c in reg))
    else:
        if len(regions) != 1:
            raise ValueError(f"kitchen has {len(regions)} floor regions")
        keep = regions[0]
    blocked = []
    for r in range(h):
        for c in range(w):
            if rows[r][c] in FLOOR_CHARS:
                continue
            if not any(nb in keep for nb in neighbors(r, c, h, w)):
                blocked.append((r, c))
    return blocked


def main():
    out_dir = pathlib.Path(__file__).resolve().parents[1] / "src" / "cooplab" / "data" / "templates"
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, (divided, grid) in GRIDS.items():
        rows = grid.strip("\n").split("\n")
        if len({len(r) for r in rows}) != 1:
            raise ValueError(f"{name}: ragged grid")
        blocked = blocked_cells(rows, divided)
        lines = [
            f"name: {name}",
            f"divided: {'true' if divided else 'false'}",
            "grid:",
            *rows,
            "blocked:",
            " ".join(f"{r},{c}" for r, c in blocked),
            "",
        ]
        path = out_dir / f"{name}.txt"
        path.write_text("\n".join(lines))
        print(f"{name}: {len(rows[0])}x{len(rows)}, {len(blocked)} blocked")


if __name__ == "__main__":
    main()
