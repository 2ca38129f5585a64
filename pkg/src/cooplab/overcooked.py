"""Two-cook kitchen game on generated or original layouts.

Agents move on floor cells of a 9x9 (padded) kitchen, pick onions from
piles, load pots (three onions per soup), wait out the cook timer, plate
the soup, and carry it to a serving goal. Reward is sparse: the delivery
reward per served soup, plus optional shaping bonuses (off by default)
for loading a pot and for plating a soup.

Actions: up, down, left, right, stay, interact. Movement actions set the
agent's orientation and attempt the move; walls and object cells block
movement but the turn still happens. Both agents proposing the same cell,
or proposing to swap cells, cancels both moves and raises the collision
flag. Interact applies to the faced cell.

One step, in frozen order:

1. every pot with three onions and a running timer counts down by one,
2. movement resolves simultaneously (orientations, proposals, blocking,
   conflict cancellation),
3. interactions apply, seat 0 first, then seat 1 (so two agents facing
   the same cell resolve deterministically),
4. reward = delivery_reward x deliveries this step + shaping bonuses,
5. time advances; the episode ends at the horizon.

A pot filled at step t is ready (timer 0) when step t + cook_time's
interaction phase runs.

Observations are 26 feature planes on the 9x9 grid, from the observing
agent's perspective. The channel map is frozen here and pinned by tests:

    index  plane
        0  self position
        1  other position
      2-5  self orientation one-hot (up, down, left, right), at self cell
      6-9  other orientation one-hot, at other cell
       10  barrier cells (walls and everything standing on them)
       11  loose onion on a counter
       12  loose plate on a counter
       13  loose soup on a counter
       14  onion piles
       15  plate piles
       16  pots
       17  goals
       18  pot holding exactly 1 onion
       19  pot holding exactly 2 onions
       20  pot holding exactly 3 onions
       21  pot cook timer / cook_time (0 when idle or ready)
       22  self holding an onion, at self cell
       23  self holding a plate, at self cell
       24  self holding a soup, at self cell
       25  urgency: all ones during the final 40 steps

A ready soup in a pot is the combination plane 20 = 1 and plane 21 = 0;
it has no dedicated plane. The partner's held item is not observable.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .core import ConfigError, GameSpec, StepEvents
from .procgen import Layout, encode_layout_line, validate_layout

UP, DOWN, LEFT, RIGHT, STAY, INTERACT = range(6)
NUM_ACTIONS = 6
ACTION_NAMES = ("up", "down", "left", "right", "stay", "interact")
DELTAS = np.array([(-1, 0), (1, 0), (0, -1), (0, 1), (0, 0), (0, 0)], dtype=np.int64)
DEFAULT_ORIENTATION = DOWN

# held / loose item codes
EMPTY, ONION_ITEM, PLATE_ITEM, SOUP_ITEM = range(4)
ITEM_NAMES = ("none", "onion", "plate", "soup")

NUM_PLANES = 26
GRID = 9

OUTCOMES = ("none", "pickup-onion", "pickup-plate", "pot-deposit",
            "soup-pickup", "deliver", "place-counter", "take-counter", "blocked")
_OUTCOME_ID = {name: i for i, name in enumerate(OUTCOMES)}

KIND = "overcooked"
URGENCY_STEPS = 40


@dataclasses.dataclass(frozen=True)
class OvercookedConfig:
    """Recipe and episode constants. Shaping bonuses of 0 disable shaping."""

    cook_time: int = 20
    delivery_reward: float = 20.0
    horizon: int = 400
    onion_in_pot_bonus: float = 0.0
    soup_pickup_bonus: float = 0.0

    def __post_init__(self):
        if self.cook_time < 1 or self.horizon < 1:
            raise ValueError("cook_time and horizon must be positive")

    def spec(self) -> GameSpec:
        return GameSpec(kind=KIND, num_actions=NUM_ACTIONS,
                        obs_shape=(NUM_PLANES, GRID, GRID),
                        horizon=self.horizon, norm_constant=1.0)


@dataclasses.dataclass
class OvercookedState:
    """Dynamic kitchen state; layout geometry lives in Layout."""

    positions: tuple[tuple[int, int], tuple[int, int]]
    orientations: tuple[int, int]
    held: tuple[int, int]
    pot_counts: dict[tuple[int, int], int]
    pot_timers: dict[tuple[int, int], int]
    counter_items: dict[tuple[int, int], int]
    t: int = 0
    deliveries: int = 0


def oc_reset(layout: Layout, config: OvercookedConfig) -> OvercookedState:
    report = validate_layout(layout)
    if not (report.valid or report.cooperative_valid):
        raise ConfigError("layout is not playable: "
                          f"missing {report.missing} from the agent starts")
    return OvercookedState(
        positions=layout.starts,
        orientations=(DEFAULT_ORIENTATION, DEFAULT_ORIENTATION),
        held=(EMPTY, EMPTY),
        pot_counts={cell: 0 for cell in layout.pots},
        pot_timers={cell: 0 for cell in layout.pots},
        counter_items={}, t=0, deliveries=0)


def _plain_counters(layout: Layout) -> set[tuple[int, int]]:
    used = set(layout.onions) | set(layout.plates) | set(layout.pots) | set(layout.goals)
    return {(r, c) for r in range(layout.height) for c in range(layout.width)
            if layout.walls[r, c] and (r, c) not in used}


def _interact(layout: Layout, config: OvercookedConfig, state: OvercookedState,
              seat: int, plain: set) -> tuple[str, float, int]:
    """Apply one agent's interaction in place. Returns (outcome, shaping
    bonus, deliveries)."""
    pos = state.positions[seat]
    dr, dc = DELTAS[state.orientations[seat]]
    faced = (pos[0] + int(dr), pos[1] + int(dc))
    if not (0 <= faced[0] < layout.height and 0 <= faced[1] < layout.width):
        return "blocked", 0.0, 0
    held = list(state.held)
    mine = held[seat]
    if faced in layout.onions and mine == EMPTY:
        held[seat] = ONION_ITEM
        state.held = (held[0], held[1])
        return "pickup-onion", 0.0, 0
    if faced in layout.plates and mine == EMPTY:
        held[seat] = PLATE_ITEM
        state.held = (held[0], held[1])
        return "pickup-plate", 0.0, 0
    if faced in state.pot_counts:
        count = state.pot_counts[faced]
        if mine == ONION_ITEM and count < 3:
            state.pot_counts[faced] = count + 1
            if count + 1 == 3:
                state.pot_timers[faced] = config.cook_time
            held[seat] = EMPTY
            state.held = (held[0], held[1])
            return "pot-deposit", config.onion_in_pot_bonus, 0
        if mine == PLATE_ITEM and count == 3 and state.pot_timers[faced] == 0:
            state.pot_counts[faced] = 0
            held[seat] = SOUP_ITEM
            state.held = (held[0], held[1])
            return "soup-pickup", config.soup_pickup_bonus, 0
        return "blocked", 0.0, 0
    if faced in layout.goals:
        if mine == SOUP_ITEM:
            held[seat] = EMPTY
            state.held = (held[0], held[1])
            state.deliveries += 1
            return "deliver", 0.0, 1
        return "blocked", 0.0, 0
    if faced in plain:
        loose = state.counter_items.get(faced, EMPTY)
        if mine != EMPTY and loose == EMPTY:
            state.counter_items[faced] = mine
            held[seat] = EMPTY
            state.held = (held[0], held[1])
            return "place-counter", 0.0, 0
        if mine == EMPTY and loose != EMPTY:
            del state.counter_items[faced]
            held[seat] = loose
            state.held = (held[0], held[1])
            return "take-counter", 0.0, 0
        return "blocked", 0.0, 0
    return "blocked", 0.0, 0


def oc_step(layout: Layout, config: OvercookedConfig, state: OvercookedState,
            action_a: int, action_b: int) -> tuple[OvercookedState, float, bool, StepEvents]:
    """Reference single-instance step; the batched engine must match it."""
    for action in (action_a, action_b):
        if not 0 <= action < NUM_ACTIONS:
            raise ValueError(f"invalid action id {action}")
    if state.t >= config.horizon:
        raise ValueError("episode already finished")
    state = OvercookedState(
        positions=state.positions, orientations=state.orientations, held=state.held,
        pot_counts=dict(state.pot_counts), pot_timers=dict(state.pot_timers),
        counter_items=dict(state.counter_items), t=state.t, deliveries=state.deliveries)
    for cell, count in state.pot_counts.items():
        if count == 3 and state.pot_timers[cell] > 0:
            state.pot_timers[cell] -= 1
    actions = (action_a, action_b)
    orientations = tuple(a if a < 4 else o for a, o in zip(actions, state.orientations))
    proposals = []
    for seat in (0, 1):
        pos = state.positions[seat]
        if actions[seat] < 4:
            dr, dc = DELTAS[actions[seat]]
            target = (pos[0] + int(dr), pos[1] + int(dc))
            inside = (0 <= target[0] < layout.height and 0 <= target[1] < layout.width)
            proposals.append(target if inside and not layout.walls[target] else pos)
        else:
            proposals.append(pos)
    collision = (proposals[0] == proposals[1]
                 or (proposals[0] == state.positions[1]
                     and proposals[1] == state.positions[0]))
    if collision:
        proposals = list(state.positions)
    state.positions = (proposals[0], proposals[1])
    state.orientations = orientations
    plain = _plain_counters(layout)
    outcomes = ["none", "none"]
    reward = 0.0
    deliveries = 0
    for seat in (0, 1):
        if actions[seat] == INTERACT:
            outcome, bonus, served = _interact(layout, config, state, seat, plain)
            outcomes[seat] = outcome
            reward += bonus + config.delivery_reward * served
            deliveries += served
    state.t += 1
    done = state.t == config.horizon
    events = StepEvents(collision=collision, deliveries=deliveries,
                        outcomes=(outcomes[0], outcomes[1]))
    return state, reward, done, events


def oc_observe(layout: Layout, config: OvercookedConfig, state: OvercookedState,
               agent_index: int) -> np.ndarray:
    """Build the 26-plane observation for one seat (channel map above)."""
    if agent_index not in (0, 1):
        raise ValueError("agent index must be 0 or 1")
    if (layout.height, layout.width) != (GRID, GRID):
        raise ConfigError(f"layout must be padded to {GRID}x{GRID}")
    obs = np.zeros((NUM_PLANES, GRID, GRID), dtype=np.float32)
    me = state.positions[agent_index]
    other = state.positions[1 - agent_index]
    obs[0][me] = 1.0
    obs[1][other] = 1.0
    obs[2 + state.orientations[agent_index]][me] = 1.0
    obs[6 + state.orientations[1 - agent_index]][other] = 1.0
    obs[10] = layout.walls
    for cell, item in state.counter_items.items():
        obs[10 + item][cell] = 1.0
    for plane, cells in ((14, layout.onions), (15, layout.plates),
                         (16, layout.pots), (17, layout.goals)):
        for cell in cells:
            obs[plane][cell] = 1.0
    for cell, count in state.pot_counts.items():
        if count:
            obs[17 + count][cell] = 1.0
        obs[21][cell] = state.pot_timers[cell] / config.cook_time
    if state.held[agent_index] != EMPTY:
        obs[21 + state.held[agent_index]][me] = 1.0
    if config.horizon - state.t <= URGENCY_STEPS:
        obs[25] = 1.0
    return obs


class OvercookedEnv:
    """Single-instance environment over one layout or a layout sampler."""

    def __init__(self, layout: Layout | None = None, sampler=None,
                 config: OvercookedConfig = OvercookedConfig()):
        if (layout is None) == (sampler is None):
            raise ConfigError("pass exactly one of layout, sampler")
        self._sampler = sampler
        self.config = config
        self.spec = config.spec()
        self.layout = layout
        self.state = None
        self.task_id = encode_layout_line(layout) if layout is not None else None

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        if self._sampler is not None:
            self.layout = self._sampler(rng)
            self.task_id = encode_layout_line(self.layout)
        self.state = oc_reset(self.layout, self.config)
        return self._obs()

    def _obs(self) -> np.ndarray:
        return np.stack([oc_observe(self.layout, self.config, self.state, k)
                         for k in (0, 1)])

    def step(self, action_a: int, action_b: int):
        self.state, reward, done, events = oc_step(
            self.layout, self.config, self.state, action_a, action_b)
        return self._obs(), reward, done, events

    def agent_positions(self):
        return self.state.positions


class OvercookedVecEnv:
    """Batched kitchens with aligned episodes and flat-indexed state.

    `layout_source` is a list of layouts (row i keeps layout i) or a
    callable rng -> Layout sampled fresh for every row each episode. All
    rows share the config, hence one GameSpec; episodes reset together.
    """

    def __init__(self, batch: int, layout_source, rng: np.random.Generator,
                 config: OvercookedConfig = OvercookedConfig()):
        self.batch = batch
        self.config = config
        self.spec = config.spec()
        self._rng = rng
        if callable(layout_source):
            self._sampler = layout_source
            self._fixed = None
        else:
            layouts = list(layout_source)
            if len(layouts) != batch:
                raise ConfigError(f"{len(layouts)} layouts for batch {batch}")
            self._sampler = None
            self._fixed = layouts
        self.layouts: list[Layout] = []
        b = batch
        self._walls = np.zeros((b, GRID * GRID), dtype=bool)
        self._onion_mask = np.zeros((b, GRID * GRID), dtype=bool)
        self._plate_mask = np.zeros((b, GRID * GRID), dtype=bool)
        self._pot_mask = np.zeros((b, GRID * GRID), dtype=bool)
        self._goal_mask = np.zeros((b, GRID * GRID), dtype=bool)
        self._plain_mask = np.zeros((b, GRID * GRID), dtype=bool)
        self.pos = np.zeros((b, 2), dtype=np.int64)
        self.orient = np.zeros((b, 2), dtype=np.int64)
        self.held = np.zeros((b, 2), dtype=np.int64)
        self.counter_item = np.zeros((b, GRID * GRID), dtype=np.int64)
        self.pot_count = np.zeros((b, GRID * GRID), dtype=np.int64)
        self.pot_timer = np.zeros((b, GRID * GRID), dtype=np.int64)
        self.deliveries = np.zeros(b, dtype=np.int64)
        self.t = 0

    def _draw_layouts(self) -> list[Layout]:
        if self._fixed is not None:
            return self._fixed
        return [self._sampler(self._rng) for _ in range(self.batch)]

    def reset(self) -> np.ndarray:
        self.layouts = self._draw_layouts()
        for i, layout in enumerate(self.layouts):
            if (layout.height, layout.width) != (GRID, GRID):
                raise ConfigError(f"layout must be padded to {GRID}x{GRID}")
            self._walls[i] = layout.walls.ravel()
            for mask, cells in ((self._onion_mask, layout.onions),
                                (self._plate_mask, layout.plates),
                                (self._pot_mask, layout.pots),
                                (self._goal_mask, layout.goals)):
                mask[i] = False
                for r, c in cells:
                    mask[i, r * GRID + c] = True
            self.pos[i] = [r * GRID + c for r, c in layout.starts]
        self._plain_mask = self._walls & ~(self._onion_mask | self._plate_mask
                                           | self._pot_mask | self._goal_mask)
        self.orient[:] = DEFAULT_ORIENTATION
        self.held[:] = EMPTY
        self.counter_item[:] = EMPTY
        self.pot_count[:] = 0
        self.pot_timer[:] = 0
        self.deliveries[:] = 0
        self.t = 0
        return self._obs()

    def step(self, actions: np.ndarray, build_obs: bool = True):
        actions = np.asarray(actions)
        if actions.shape != (self.batch, 2):
            raise ConfigError(f"actions shape {actions.shape}, expected {(self.batch, 2)}")
        if actions.min() < 0 or actions.max() >= NUM_ACTIONS:
            raise ValueError("invalid action id in batch")
        b = self.batch
        rows = np.arange(b)
        cooking = (self.pot_count == 3) & (self.pot_timer > 0)
        self.pot_timer[cooking] -= 1
        # movement
        moving = actions < 4
        self.orient = np.where(moving, actions, self.orient)
        pr, pc = self.pos // GRID, self.pos % GRID
        deltas = DELTAS[np.minimum(actions, 4)]
        tr, tc = pr + deltas[..., 0] * moving, pc + deltas[..., 1] * moving
        inside = (tr >= 0) & (tr < GRID) & (tc >= 0) & (tc < GRID)
        target = np.where(inside, tr * GRID + tc, self.pos)
        blocked = self._walls[rows[:, None], target]
        proposed = np.where(blocked, self.pos, target)
        tie = proposed[:, 0] == proposed[:, 1]
        swap = (proposed[:, 0] == self.pos[:, 1]) & (proposed[:, 1] == self.pos[:, 0])
        cancel = tie | swap
        proposed[cancel] = self.pos[cancel]
        self.pos = proposed
        # interactions, seat 0 then seat 1
        outcomes = np.zeros((b, 2), dtype=np.int64)
        deliveries_step = np.zeros(b, dtype=np.int64)
        shaping = np.zeros(b, dtype=np.float64)
        for seat in (0, 1):
            inter = actions[:, seat] == INTERACT
            if not inter.any():
                continue
            d = DELTAS[self.orient[:, seat]]
            fr, fc = self.pos[:, seat] // GRID + d[:, 0], self.pos[:, seat] % GRID + d[:, 1]
            inside = (fr >= 0) & (fr < GRID) & (fc >= 0) & (fc < GRID)
            faced = np.where(inside, fr * GRID + fc, 0)
            act = inter & inside
            held = self.held[:, seat]
            outcomes[inter, seat] = _OUTCOME_ID["blocked"]

            take_onion = act & self._onion_mask[rows, faced] & (held == EMPTY)
            take_plate = act & self._plate_mask[rows, faced] & (held == EMPTY)
            at_pot = act & self._pot_mask[rows, faced]
            deposit = at_pot & (held == ONION_ITEM) & (self.pot_count[rows, faced] < 3)
            collect = (at_pot & (held == PLATE_ITEM)
                       & (self.pot_count[rows, faced] == 3)
                       & (self.pot_timer[rows, faced] == 0))
            deliver = act & self._goal_mask[rows, faced] & (held == SOUP_ITEM)
            at_plain = act & self._plain_mask[rows, faced]
            loose = self.counter_item[rows, faced]
            place = at_plain & (held != EMPTY) & (loose == EMPTY)
            take_loose = at_plain & (held == EMPTY) & (loose != EMPTY)

            self.held[take_onion, seat] = ONION_ITEM
            outcomes[take_onion, seat] = _OUTCOME_ID["pickup-onion"]
            self.held[take_plate, seat] = PLATE_ITEM
            outcomes[take_plate, seat] = _OUTCOME_ID["pickup-plate"]

            pot_cells = faced[deposit]
            self.pot_count[deposit, pot_cells] += 1
            filled = deposit.copy()
            filled[deposit] = self.pot_count[deposit, pot_cells] == 3
            self.pot_timer[filled, faced[filled]] = self.config.cook_time
            self.held[deposit, seat] = EMPTY
            outcomes[deposit, seat] = _OUTCOME_ID["pot-deposit"]
            shaping[deposit] += self.config.onion_in_pot_bonus

            self.pot_count[collect, faced[collect]] = 0
            self.held[collect, seat] = SOUP_ITEM
            outcomes[collect, seat] = _OUTCOME_ID["soup-pickup"]
            shaping[collect] += self.config.soup_pickup_bonus

            self.held[deliver, seat] = EMPTY
            deliveries_step[deliver] += 1
            outcomes[deliver, seat] = _OUTCOME_ID["deliver"]

            self.counter_item[place, faced[place]] = self.held[place, seat]
            self.held[place, seat] = EMPTY
            outcomes[place, seat] = _OUTCOME_ID["place-counter"]
            self.held[take_loose, seat] = self.counter_item[take_loose, faced[take_loose]]
            self.counter_item[take_loose, faced[take_loose]] = EMPTY
            outcomes[take_loose, seat] = _OUTCOME_ID["take-counter"]

        self.deliveries += deliveries_step
        rewards = (self.config.delivery_reward * deliveries_step + shaping).astype(np.float32)
        events = {"collision": cancel, "deliveries": deliveries_step,
                  "outcomes": outcomes,
                  "goal_entry": np.zeros(b, dtype=bool)}
        self.t += 1
        done = self.t == self.config.horizon
        dones = np.full(b, done)
        if done:
            obs = self.reset()
        else:
            obs = self._obs() if build_obs else None
        return obs, rewards, dones, events

    def _obs(self) -> np.ndarray:
        b = self.batch
        rows = np.arange(b)
        flat = np.zeros((b, NUM_PLANES, GRID * GRID), dtype=np.float32)
        # static geometry planes are seat-independent
        flat[:, 10] = self._walls
        for item in (ONION_ITEM, PLATE_ITEM, SOUP_ITEM):
            flat[:, 10 + item] = self.counter_item == item
        flat[:, 14] = self._onion_mask
        flat[:, 15] = self._plate_mask
        flat[:, 16] = self._pot_mask
        flat[:, 17] = self._goal_mask
        for count in (1, 2, 3):
            flat[:, 17 + count] = self.pot_count == count
        flat[:, 21] = self.pot_timer / self.config.cook_time
        if self.config.horizon - self.t <= URGENCY_STEPS:
            flat[:, 25] = 1.0
        out = np.repeat(flat[:, None], 2, axis=1)
        for seat in (0, 1):
            me, other = self.pos[:, seat], self.pos[:, 1 - seat]
            out[rows, seat, 0, me] = 1.0
            out[rows, seat, 1, other] = 1.0
            out[rows, seat, 2 + self.orient[:, seat], me] = 1.0
            out[rows, seat, 6 + self.orient[:, 1 - seat], other] = 1.0
            for item in (ONION_ITEM, PLATE_ITEM, SOUP_ITEM):
                mask = self.held[:, seat] == item
                out[rows[mask], seat, 21 + item, me[mask]] = 1.0
        return out.reshape(b, 2, NUM_PLANES, GRID, GRID)


def rotate_state90(state: OvercookedState, height: int) -> OvercookedState:
    """Rotate a state clockwise alongside procgen.rotate_layout90."""
    def rot(cell):
        return (cell[1], height - 1 - cell[0])

    orient_map = {UP: RIGHT, RIGHT: DOWN, DOWN: LEFT, LEFT: UP}
    return OvercookedState(
        positions=(rot(state.positions[0]), rot(state.positions[1])),
        orientations=(orient_map[state.orientations[0]],
                      orient_map[state.orientations[1]]),
        held=state.held,
        pot_counts={rot(c): v for c, v in state.pot_counts.items()},
        pot_timers={rot(c): v for c, v in state.pot_timers.items()},
        counter_items={rot(c): v for c, v in state.counter_items.items()},
        t=state.t, deliveries=state.deliveries)


def rotate_action90(action: int) -> int:
    """Action that corresponds to `action` after a clockwise grid rotation."""
    return {UP: RIGHT, RIGHT: DOWN, DOWN: LEFT, LEFT: UP}.get(action, action)
