"""Paired-destination gridworld for two agents.

An open square grid (no interior walls) with two marked green cells and,
in the multi-task variant, two pink cells. Each step both agents pick one
of five actions (up, down, left, right, stay). The shared reward is
computed from the state the step starts in: -1, plus 3 when the two
agents stand on the two cells of a complete goal pair (both greens, or
both pinks). Standing on one green and one pink pays nothing. Episodes
run a fixed horizon; reaching the goals never ends them, so an optimal
pair keeps collecting +2 until time runs out.

Movement resolves simultaneously. Off-grid moves become stays. If both
agents propose the same cell, or propose swapping cells, both moves are
cancelled; agents therefore never overlap.

Observations are feature planes: self position, other position, green
cells, pink cells, boundary. Full observability covers the whole grid;
the windowed variant shows a 3x3 crop centered on the observing agent
with out-of-grid cells flagged in the boundary plane.
"""

from __future__ import annotations

import dataclasses
import re

import numpy as np

from .core import ConfigError, GameSpec, StepEvents

Cell = tuple[int, int]

UP, DOWN, LEFT, RIGHT, STAY = range(5)
NUM_ACTIONS = 5
ACTION_NAMES = ("up", "down", "left", "right", "stay")
# row/col deltas indexed by action id
DELTAS = np.array([(-1, 0), (1, 0), (0, -1), (0, 1), (0, 0)], dtype=np.int64)

PLANE_SELF, PLANE_OTHER, PLANE_GREEN, PLANE_PINK, PLANE_BOUNDARY = range(5)
NUM_PLANES = 5

FULL = "full"
WIN3 = "win3"
WINDOW = 3

KIND = "dual-dest"


@dataclasses.dataclass(frozen=True)
class DualDestTask:
    """One task: grid size, start cells, goal cells, observability, horizon."""

    size: int
    starts: tuple[Cell, Cell]
    greens: tuple[Cell, Cell]
    pinks: tuple[Cell, ...] = ()
    obs: str = FULL
    horizon: int = 100

    def __post_init__(self):
        if self.obs not in (FULL, WIN3):
            raise ValueError(f"bad observability mode {self.obs!r}")
        if len(self.greens) != 2:
            raise ValueError("need exactly 2 green cells")
        if len(self.pinks) not in (0, 2):
            raise ValueError("need 0 or 2 pink cells")
        if len(self.starts) != 2:
            raise ValueError("need exactly 2 start cells")
        cells = list(self.starts) + list(self.greens) + list(self.pinks)
        if len(set(cells)) != len(cells):
            raise ValueError("task cells must be pairwise distinct")
        for r, c in cells:
            if not (0 <= r < self.size and 0 <= c < self.size):
                raise ValueError(f"cell {(r, c)} outside {self.size}x{self.size} grid")
        if self.horizon < 1:
            raise ValueError("horizon must be positive")

    def key(self):
        """Identity used for held-out rejection: seat order is ignored."""
        return (self.size, frozenset(self.starts), frozenset(self.greens),
                frozenset(self.pinks), self.obs, self.horizon)

    def encode(self) -> str:
        def cell(c):
            return f"({c[0]},{c[1]})"
        pinks = "[" + ",".join(cell(c) for c in self.pinks) + "]"
        return (f"N={self.size}; A={cell(self.starts[0])},{cell(self.starts[1])}; "
                f"G={cell(self.greens[0])},{cell(self.greens[1])}; "
                f"P={pinks}; H={self.horizon}; OBS={self.obs}")

    @classmethod
    def decode(cls, text: str) -> "DualDestTask":
        fields = {}
        for part in text.split(";"):
            key, _, value = part.strip().partition("=")
            fields[key.strip()] = value.strip()
        cells = lambda s: tuple((int(r), int(c))
                                for r, c in re.findall(r"\((\d+),(\d+)\)", s))
        return cls(size=int(fields["N"]), starts=cells(fields["A"]),
                   greens=cells(fields["G"]), pinks=cells(fields["P"]),
                   obs=fields["OBS"], horizon=int(fields["H"]))

    def spec(self) -> GameSpec:
        side = self.size if self.obs == FULL else WINDOW
        return GameSpec(kind=KIND, num_actions=NUM_ACTIONS,
                        obs_shape=(NUM_PLANES, side, side),
                        horizon=self.horizon, norm_constant=2.0 * self.horizon)


@dataclasses.dataclass
class DualDestState:
    positions: tuple[Cell, Cell]
    t: int = 0


def dd_fixed_task(obs: str = FULL, horizon: int = 100) -> DualDestTask:
    """The canonical evaluation task: agents on the middle of the left and
    right edges, greens above and below center, every agent-goal distance
    exactly 3."""
    return DualDestTask(size=5, starts=((2, 0), (2, 4)),
                        greens=((1, 2), (3, 2)), pinks=(),
                        obs=obs, horizon=horizon)


def pair_occupied(task: DualDestTask, positions: tuple[Cell, Cell]) -> bool:
    """True when the two agents stand on a complete goal pair."""
    here = set(positions)
    if here == set(task.greens):
        return True
    return bool(task.pinks) and here == set(task.pinks)


def pair_distance(task: DualDestTask, positions: tuple[Cell, Cell]) -> int:
    """Moves left before the pair could stand on a goal pair: the cheaper
    assignment of agents to goals, over green and (when present) pink."""
    a, b = positions

    def cost(goals):
        direct = _dist(a, goals[0]) + _dist(b, goals[1])
        crossed = _dist(a, goals[1]) + _dist(b, goals[0])
        return min(direct, crossed)

    best = cost(task.greens)
    if task.pinks:
        best = min(best, cost(task.pinks))
    return best


def _propose(task: DualDestTask, pos: Cell, action: int) -> Cell:
    if not 0 <= action < NUM_ACTIONS:
        raise ValueError(f"invalid action id {action}")
    dr, dc = DELTAS[action]
    r = min(max(pos[0] + int(dr), 0), task.size - 1)
    c = min(max(pos[1] + int(dc), 0), task.size - 1)
    return (r, c)


def dd_step(task: DualDestTask, state: DualDestState, action_a: int,
            action_b: int) -> tuple[DualDestState, float, bool, StepEvents]:
    """Advance one step. Reward is scored on the incoming state."""
    if state.t >= task.horizon:
        raise ValueError("episode already finished")
    occupied_before = pair_occupied(task, state.positions)
    reward = -1.0 + 3.0 * occupied_before
    pos_a, pos_b = state.positions
    prop_a = _propose(task, pos_a, action_a)
    prop_b = _propose(task, pos_b, action_b)
    collision = False
    if prop_a == prop_b or (prop_a == pos_b and prop_b == pos_a):
        prop_a, prop_b = pos_a, pos_b
        collision = True
    new_state = DualDestState(positions=(prop_a, prop_b), t=state.t + 1)
    occupied_after = pair_occupied(task, new_state.positions)
    events = StepEvents(collision=collision,
                        goal_entry=occupied_after and not occupied_before)
    return new_state, reward, state.t + 1 == task.horizon, events


def dd_observe(task: DualDestTask, state: DualDestState, agent_index: int) -> np.ndarray:
    """Feature planes for one seat; see the module docstring for the list."""
    if agent_index not in (0, 1):
        raise ValueError("agent index must be 0 or 1")
    n = task.size
    planes = np.zeros((NUM_PLANES, n, n), dtype=np.float32)
    me = state.positions[agent_index]
    other = state.positions[1 - agent_index]
    planes[PLANE_SELF][me] = 1.0
    planes[PLANE_OTHER][other] = 1.0
    for cell in task.greens:
        planes[PLANE_GREEN][cell] = 1.0
    for cell in task.pinks:
        planes[PLANE_PINK][cell] = 1.0
    if task.obs == FULL:
        return planes
    half = WINDOW // 2
    window = np.zeros((NUM_PLANES, WINDOW, WINDOW), dtype=np.float32)
    window[PLANE_BOUNDARY] = 1.0
    r0, c0 = me[0] - half, me[1] - half
    rs, re = max(r0, 0), min(r0 + WINDOW, n)
    cs, ce = max(c0, 0), min(c0 + WINDOW, n)
    window[:, rs - r0:re - r0, cs - c0:ce - c0] = planes[:, rs:re, cs:ce]
    window[PLANE_BOUNDARY, rs - r0:re - r0, cs - c0:ce - c0] = 0.0
    return window


def dd_sample_task(rng: np.random.Generator, variant: str = "single",
                   held_out=(), obs: str = FULL, horizon: int = 100,
                   size: int = 5, max_attempts: int = 1000) -> DualDestTask:
    """Sample a task uniformly over pairwise-distinct cells, rejecting any
    task whose identity (ignoring seat order) appears in `held_out`."""
    if variant not in ("single", "multi"):
        raise ValueError(f"bad variant {variant!r}")
    keys = {t.key() for t in held_out}
    count = 6 if variant == "multi" else 4
    for _ in range(max_attempts):
        flat = rng.choice(size * size, size=count, replace=False)
        cells = [(int(i) // size, int(i) % size) for i in flat]
        task = DualDestTask(
            size=size, starts=(cells[0], cells[1]), greens=(cells[2], cells[3]),
            pinks=(cells[4], cells[5]) if variant == "multi" else (),
            obs=obs, horizon=horizon)
        if task.key() not in keys:
            return task
    raise RuntimeError(f"task sampling failed {max_attempts} rejections in a row")


class DualDestEnv:
    """Single-instance environment over one task or a task sampler.

    `approach_bonus` adds a dense progress term to each step's reward:
    the coefficient times the decrease in `pair_distance` caused by the
    move. It is a potential difference, so over an episode it telescopes
    to a path-independent constant; the game's own score is unchanged.
    Training recipes switch it on, evaluation never does.
    """

    def __init__(self, task: DualDestTask | None = None, sampler=None,
                 approach_bonus: float = 0.0):
        if (task is None) == (sampler is None):
            raise ConfigError("pass exactly one of task, sampler")
        if not np.isfinite(approach_bonus):
            raise ConfigError("approach bonus must be finite")
        self._sampler = sampler
        self.approach_bonus = float(approach_bonus)
        self.task = task
        self.state = None
        self.spec = task.spec() if task is not None else None
        self.task_id = task.encode() if task is not None else None

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        if self._sampler is not None:
            self.task = self._sampler(rng)
            self.spec = self.task.spec()
            self.task_id = self.task.encode()
        self.state = DualDestState(positions=self.task.starts, t=0)
        return self._obs()

    def _obs(self) -> np.ndarray:
        return np.stack([dd_observe(self.task, self.state, k) for k in (0, 1)])

    def step(self, action_a: int, action_b: int):
        before = pair_distance(self.task, self.state.positions)
        self.state, reward, done, events = dd_step(self.task, self.state,
                                                   action_a, action_b)
        if self.approach_bonus:
            after = pair_distance(self.task, self.state.positions)
            reward += self.approach_bonus * (before - after)
        return self._obs(), reward, done, events

    def agent_positions(self):
        return self.state.positions


class DualDestVecEnv:
    """Batched stepping over many task instances with aligned episodes.

    All rows share one GameSpec (size, observability, horizon). Rows reset
    together: on reset, and again right after every row reports done,
    which the aligned-horizon invariant guarantees happens simultaneously.
    `task_source` is either a list of tasks (fixed assignment, row i keeps
    task i forever) or a callable rng -> task drawn fresh every episode.
    `approach_bonus` is the dense progress term described on DualDestEnv.
    """

    def __init__(self, batch: int, task_source, rng: np.random.Generator,
                 approach_bonus: float = 0.0):
        self.batch = batch
        self._rng = rng
        if not np.isfinite(approach_bonus):
            raise ConfigError("approach bonus must be finite")
        self.approach_bonus = float(approach_bonus)
        if callable(task_source):
            self._sampler = task_source
            self._fixed = None
        else:
            tasks = list(task_source)
            if len(tasks) != batch:
                raise ConfigError(f"{len(tasks)} tasks for batch {batch}")
            self._sampler = None
            self._fixed = tasks
        self.tasks: list[DualDestTask] = []
        self.spec: GameSpec | None = None
        self.pos = np.zeros((batch, 2, 2), dtype=np.int64)
        self.t = 0
        self._greens = np.zeros((batch, 2, 2), dtype=np.int64)
        self._pinks = np.zeros((batch, 2, 2), dtype=np.int64)
        self._has_pink = np.zeros(batch, dtype=bool)

    def _draw_tasks(self) -> list[DualDestTask]:
        if self._fixed is not None:
            return self._fixed
        return [self._sampler(self._rng) for _ in range(self.batch)]

    def reset(self) -> np.ndarray:
        self.tasks = self._draw_tasks()
        specs = {t.spec() for t in self.tasks}
        if len(specs) != 1:
            raise ConfigError(f"batched tasks disagree on game spec: {specs}")
        spec = specs.pop()
        if self.spec is not None and spec != self.spec:
            raise ConfigError("task source changed the game spec mid-run")
        self.spec = spec
        for i, task in enumerate(self.tasks):
            self.pos[i] = task.starts
            self._greens[i] = task.greens
            if task.pinks:
                self._pinks[i] = task.pinks
                self._has_pink[i] = True
            else:
                self._pinks[i] = -9
                self._has_pink[i] = False
        self.t = 0
        return self._obs()

    def _occupied(self, pos: np.ndarray) -> np.ndarray:
        def pair(goals):
            direct = (pos[:, 0] == goals[:, 0]).all(-1) & (pos[:, 1] == goals[:, 1]).all(-1)
            crossed = (pos[:, 0] == goals[:, 1]).all(-1) & (pos[:, 1] == goals[:, 0]).all(-1)
            return direct | crossed
        return pair(self._greens) | (self._has_pink & pair(self._pinks))

    def _pair_distance(self, pos: np.ndarray) -> np.ndarray:
        def cost(goals):
            d = np.abs(pos[:, :, None, :] - goals[:, None, :, :]).sum(-1)
            return np.minimum(d[:, 0, 0] + d[:, 1, 1], d[:, 0, 1] + d[:, 1, 0])

        best = cost(self._greens).astype(np.float32)
        if self._has_pink.any():
            pink = cost(self._pinks).astype(np.float32)
            best = np.where(self._has_pink, np.minimum(best, pink), best)
        return best

    def step(self, actions: np.ndarray):
        actions = np.asarray(actions)
        if actions.shape != (self.batch, 2):
            raise ConfigError(f"actions shape {actions.shape}, expected {(self.batch, 2)}")
        size = self.tasks[0].size
        occ_before = self._occupied(self.pos)
        rewards = (-1.0 + 3.0 * occ_before).astype(np.float32)
        prop = np.clip(self.pos + DELTAS[actions], 0, size - 1)
        tie = (prop[:, 0] == prop[:, 1]).all(-1)
        swap = ((prop[:, 0] == self.pos[:, 1]).all(-1)
                & (prop[:, 1] == self.pos[:, 0]).all(-1))
        cancel = tie | swap
        prop[cancel] = self.pos[cancel]
        if self.approach_bonus:
            rewards += self.approach_bonus * (self._pair_distance(self.pos)
                                              - self._pair_distance(prop))
        self.pos = prop
        occ_after = self._occupied(self.pos)
        events = {
            "collision": cancel,
            "goal_entry": occ_after & ~occ_before,
            "deliveries": np.zeros(self.batch, dtype=np.int64),
        }
        self.t += 1
        done = self.t == self.tasks[0].horizon
        dones = np.full(self.batch, done)
        if done:
            obs = self.reset()
        else:
            obs = self._obs()
        return obs, rewards, dones, events

    def _obs(self) -> np.ndarray:
        b = self.batch
        size = self.tasks[0].size
        rows = np.arange(b)
        # shared canvas in seat-0 order: [agent0, agent1, green, pink, boundary]
        planes = np.zeros((b, NUM_PLANES, size, size), dtype=np.float32)
        planes[rows, 0, self.pos[:, 0, 0], self.pos[:, 0, 1]] = 1.0
        planes[rows, 1, self.pos[:, 1, 0], self.pos[:, 1, 1]] = 1.0
        for j in (0, 1):
            planes[rows, 2, self._greens[:, j, 0], self._greens[:, j, 1]] = 1.0
            pinked = rows[self._has_pink]
            planes[pinked, 3, self._pinks[self._has_pink, j, 0],
                   self._pinks[self._has_pink, j, 1]] = 1.0
        perms = ((0, 1, 2, 3, 4), (1, 0, 2, 3, 4))
        if self.spec.obs_shape[1] == size:
            out = np.empty((b, 2, NUM_PLANES, size, size), dtype=np.float32)
            for seat in (0, 1):
                out[:, seat] = planes[:, perms[seat]]
            return out
        # windowed: surround with a halo marked in the boundary plane, then
        # crop a 3x3 window around each seat's own position
        half = WINDOW // 2
        padded = np.zeros((b, NUM_PLANES, size + 2 * half, size + 2 * half),
                          dtype=np.float32)
        padded[:, PLANE_BOUNDARY] = 1.0
        padded[:, :, half:half + size, half:half + size] = planes
        out = np.empty((b, 2, NUM_PLANES, WINDOW, WINDOW), dtype=np.float32)
        offsets = np.arange(WINDOW)
        for seat in (0, 1):
            window_rows = (self.pos[:, seat, 0][:, None] + offsets)[:, None, :, None]
            window_cols = (self.pos[:, seat, 1][:, None] + offsets)[:, None, None, :]
            gathered = padded[rows[:, None, None, None],
                              np.array(perms[seat])[None, :, None, None],
                              window_rows, window_cols]
            out[:, seat] = gathered
        return out


class AlwaysStayPolicy:
    """Does nothing forever; the floor baseline."""

    policy_id = "always-stay"

    def initial_state(self, batch: int):
        return None

    def act(self, obs, state, ep_start, rng):
        b = obs.shape[0]
        return (np.full(b, STAY, dtype=np.int64), np.full(b, np.nan, np.float32),
                np.full(b, np.nan, np.float32), None)


class OraclePolicy:
    """Scripted near-optimal play from full observations.

    Each seat derives both agents' positions and the green cells from its
    own observation, agrees on an assignment (minimize the later arrival,
    break ties by giving the lexicographically smaller agent the smaller
    goal), walks to its goal vertical axis first, then stays. Exactly
    optimal on the fixed task.
    """

    policy_id = "scripted-oracle"

    def initial_state(self, batch: int):
        return None

    def act(self, obs, state, ep_start, rng):
        if obs.shape[-1] != obs.shape[-2] or obs[:, PLANE_BOUNDARY].any():
            raise ConfigError("scripted oracle needs full observability")
        b = obs.shape[0]
        actions = np.empty(b, dtype=np.int64)
        for i in range(b):
            me = _single_cell(obs[i, PLANE_SELF])
            other = _single_cell(obs[i, PLANE_OTHER])
            greens = sorted(zip(*np.nonzero(obs[i, PLANE_GREEN])))
            g0, g1 = (tuple(map(int, g)) for g in greens)
            direct = max(_dist(me, g0), _dist(other, g1))
            crossed = max(_dist(me, g1), _dist(other, g0))
            if direct < crossed:
                goal = g0
            elif crossed < direct:
                goal = g1
            else:
                goal = g0 if me < other else g1
            actions[i] = _step_toward(me, goal)
        nan = np.full(b, np.nan, np.float32)
        return actions, nan, nan, None


def _single_cell(plane: np.ndarray) -> Cell:
    r, c = np.nonzero(plane)
    return (int(r[0]), int(c[0]))


def _dist(a: Cell, b: Cell) -> int:
    return abs(a[0] - b[0]) + abs(a[1] - b[1])


def _step_toward(me: Cell, goal: Cell) -> int:
    if me[0] > goal[0]:
        return UP
    if me[0] < goal[0]:
        return DOWN
    if me[1] > goal[1]:
        return LEFT
    if me[1] < goal[1]:
        return RIGHT
    return STAY
