"""Shared two-player game plumbing: specs, trajectories, rollouts, replays.

Every environment in this package is a fully cooperative two-seat game
with a fixed horizon and one shared scalar reward per step. This module
holds the pieces that do not care which game is being played: the game
descriptor, the episode record, the rollout driver, episode scoring, and
the replay text format.

Conventions frozen here:

- Seats are indexed 0 and 1. Joint actions are (action_a, action_b).
- A trajectory covers exactly one episode of `horizon` steps.
- Raw return is the sum of the shared per-step rewards; the normalized
  return divides by the environment kind's normalization constant.
"""

from __future__ import annotations

import dataclasses
from typing import Protocol

import numpy as np


class ConfigError(ValueError):
    """Mismatched policy/environment wiring (shapes, horizons, specs)."""


@dataclasses.dataclass(frozen=True)
class GameSpec:
    """Static description of one environment configuration.

    Two environment instances may be batched together only when their
    specs are equal. `norm_constant` converts raw to normalized return.
    """

    kind: str
    num_actions: int
    obs_shape: tuple[int, int, int]  # (planes, rows, cols)
    horizon: int
    norm_constant: float


@dataclasses.dataclass(frozen=True)
class StepEvents:
    """What happened in one step beyond the reward.

    `collision` means some agent's move was cancelled because of the other
    agent (shared target or swap). `outcomes` records each agent's
    interaction result in the kitchen game ("none" elsewhere).
    """

    collision: bool = False
    deliveries: int = 0
    goal_entry: bool = False
    outcomes: tuple[str, str] = ("none", "none")

    def tags(self) -> frozenset[str]:
        out = set()
        if self.collision:
            out.add("collision")
        if self.goal_entry:
            out.add("goal-entry")
        if self.deliveries:
            out.add("delivery")
        return frozenset(out)

    def encode(self) -> str:
        parts = []
        if self.collision:
            parts.append("collision")
        if self.goal_entry:
            parts.append("goal-entry")
        if self.deliveries:
            parts.append(f"delivery:{self.deliveries}")
        for seat, tag in zip("ab", self.outcomes):
            if tag != "none":
                parts.append(f"{seat}:{tag}")
        return ";".join(parts)

    @classmethod
    def decode(cls, text: str) -> "StepEvents":
        collision = False
        deliveries = 0
        goal_entry = False
        outcomes = ["none", "none"]
        for part in filter(None, text.split(";")):
            if part == "collision":
                collision = True
            elif part == "goal-entry":
                goal_entry = True
            elif part.startswith("delivery:"):
                deliveries = int(part.split(":", 1)[1])
            elif part.startswith("a:"):
                outcomes[0] = part.split(":", 1)[1]
            elif part.startswith("b:"):
                outcomes[1] = part.split(":", 1)[1]
            else:
                raise ValueError(f"unknown event tag {part!r}")
        return cls(collision=collision, deliveries=deliveries,
                   goal_entry=goal_entry, outcomes=(outcomes[0], outcomes[1]))


@dataclasses.dataclass
class Trajectory:
    """One finished episode.

    `observations`, `logps`, and `values` are optional: scripted play and
    replays carry only actions/rewards. `positions` records both agents'
    cells at every state including the initial one, for heatmaps.
    """

    kind: str
    task_id: str
    seed: int
    policy_ids: tuple[str, str]
    actions: np.ndarray          # (T, 2) int
    rewards: np.ndarray          # (T,) float32
    dones: np.ndarray            # (T,) bool
    events: tuple[StepEvents, ...]
    norm_constant: float
    observations: np.ndarray | None = None   # (T, 2, C, H, W) float32
    logps: np.ndarray | None = None          # (T, 2) float32
    values: np.ndarray | None = None         # (T, 2) float32
    positions: np.ndarray | None = None      # (T + 1, 2, 2) int

    def __len__(self) -> int:
        return len(self.actions)


@dataclasses.dataclass(frozen=True)
class EpisodeScore:
    raw: float
    normalized: float


def episode_score(trajectory: Trajectory) -> EpisodeScore:
    """Sum the shared per-step rewards; normalize by the game's constant."""
    if len(trajectory) == 0 or not trajectory.dones[-1]:
        raise ValueError("trajectory is not a complete episode")
    raw = float(np.sum(trajectory.rewards, dtype=np.float64))
    return EpisodeScore(raw=raw, normalized=raw / trajectory.norm_constant)


class Policy(Protocol):
    """Anything that can act for one seat over a batch of environments.

    `act` consumes a batch of observations and an opaque recurrent state;
    `ep_start` marks rows whose episode begins at this step so recurrent
    policies can reset those rows' memory. Log-probabilities and values
    may be NaN for scripted policies.
    """

    policy_id: str

    def initial_state(self, batch: int): ...

    def act(self, obs: np.ndarray, state, ep_start: np.ndarray,
            rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, np.ndarray, object]: ...


class Env(Protocol):
    """Single-instance environment protocol used by `rollout`."""

    spec: GameSpec
    task_id: str

    def reset(self, rng: np.random.Generator) -> np.ndarray: ...

    def step(self, action_a: int, action_b: int) -> tuple[np.ndarray, float, bool, StepEvents]: ...

    def agent_positions(self) -> tuple[tuple[int, int], tuple[int, int]]: ...


def rollout(env: Env, policy_a: Policy, policy_b: Policy, seed: int,
            store_obs: bool = False) -> Trajectory:
    """Play one full episode and record it.

    The seed feeds three independent streams (environment reset, one per
    seat), so the same seed always reproduces the same episode bit for
    bit.
    """
    streams = np.random.SeedSequence(seed).spawn(3)
    env_rng = np.random.default_rng(streams[0])
    rngs = [np.random.default_rng(streams[1]), np.random.default_rng(streams[2])]
    obs = env.reset(env_rng)
    if obs.shape[1:] != env.spec.obs_shape:
        raise ConfigError(f"environment returned observation {obs.shape[1:]}, "
                          f"spec says {env.spec.obs_shape}")
    horizon = env.spec.horizon
    policies = (policy_a, policy_b)
    states = [p.initial_state(1) for p in policies]
    actions = np.zeros((horizon, 2), dtype=np.int64)
    rewards = np.zeros(horizon, dtype=np.float32)
    dones = np.zeros(horizon, dtype=bool)
    logps = np.zeros((horizon, 2), dtype=np.float32)
    values = np.zeros((horizon, 2), dtype=np.float32)
    positions = np.zeros((horizon + 1, 2, 2), dtype=np.int64)
    events = []
    obs_log = np.zeros((horizon, 2) + env.spec.obs_shape, dtype=np.float32) if store_obs else None
    positions[0] = env.agent_positions()
    ep_start = np.array([True])
    for t in range(horizon):
        if store_obs:
            obs_log[t] = obs
        acts = []
        for k in (0, 1):
            a, lp, v, states[k] = policies[k].act(obs[None, k], states[k], ep_start, rngs[k])
            acts.append(int(a[0]))
            logps[t, k] = lp[0]
            values[t, k] = v[0]
        ep_start = np.array([False])
        obs, reward, done, step_events = env.step(acts[0], acts[1])
        actions[t] = acts
        rewards[t] = reward
        dones[t] = done
        events.append(step_events)
        positions[t + 1] = env.agent_positions()
    if not dones[-1]:
        raise RuntimeError("episode did not finish at the stated horizon")
    return Trajectory(
        kind=env.spec.kind, task_id=env.task_id, seed=seed,
        policy_ids=(policy_a.policy_id, policy_b.policy_id),
        actions=actions, rewards=rewards, dones=dones, events=tuple(events),
        norm_constant=env.spec.norm_constant,
        observations=obs_log, logps=logps, values=values, positions=positions,
    )


# Replay text format: a small header, then one comma-separated line per
# step. The task field is a single line (gridworld task record, or the
# kitchen layout with '/' joining grid rows).

def save_replay(trajectory: Trajectory, path) -> None:
    lines = [
        f"kind: {trajectory.kind}",
        f"task: {trajectory.task_id}",
        f"seed: {trajectory.seed}",
        f"policy_a: {trajectory.policy_ids[0]}",
        f"policy_b: {trajectory.policy_ids[1]}",
        f"steps: {len(trajectory)}",
        "t,action_a,action_b,reward,done,events",
    ]
    for t in range(len(trajectory)):
        lines.append(
            f"{t},{trajectory.actions[t, 0]},{trajectory.actions[t, 1]},"
            f"{float(trajectory.rewards[t])!r},{int(trajectory.dones[t])},"
            f"{trajectory.events[t].encode()}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_replay(path, norm_constant: float | None = None) -> Trajectory:
    """Read a replay file back into a trajectory (no observations)."""
    with open(path) as fh:
        lines = [line.rstrip("\n") for line in fh]
    header: dict[str, str] = {}
    i = 0
    while i < len(lines) and not lines[i].startswith("t,action_a"):
        if ":" in lines[i]:
            key, value = lines[i].split(":", 1)
            header[key.strip()] = value.strip()
        i += 1
    if i == len(lines):
        raise ValueError(f"{path}: no step table header")
    steps = int(header["steps"])
    actions = np.zeros((steps, 2), dtype=np.int64)
    rewards = np.zeros(steps, dtype=np.float32)
    dones = np.zeros(steps, dtype=bool)
    events = []
    rows = [line for line in lines[i + 1:] if line]
    if len(rows) != steps:
        raise ValueError(f"{path}: header says {steps} steps, found {len(rows)}")
    for row in rows:
        t_str, a, b, reward, done, event_text = row.split(",", 5)
        t = int(t_str)
        actions[t] = (int(a), int(b))
        rewards[t] = np.float32(float(reward))
        dones[t] = done == "1"
        events.append(StepEvents.decode(event_text))
    kind = header["kind"]
    if norm_constant is None:
        norm_constant = 2.0 * steps if kind == "dual-dest" else 1.0
    return Trajectory(
        kind=kind, task_id=header["task"], seed=int(header["seed"]),
        policy_ids=(header["policy_a"], header["policy_b"]),
        actions=actions, rewards=rewards, dones=dones, events=tuple(events),
        norm_constant=norm_constant,
    )


def replay_matches(env: Env, trajectory: Trajectory, seed: int | None = None) -> bool:
    """Re-step the recorded actions and compare rewards and events.

    Returns True when the environment reproduces the stored episode
    exactly, which is the replay determinism check used by the play
    server and the CLI.
    """
    rng = np.random.default_rng(seed if seed is not None else trajectory.seed)
    env.reset(rng)
    for t in range(len(trajectory)):
        _, reward, done, events = env.step(int(trajectory.actions[t, 0]),
                                           int(trajectory.actions[t, 1]))
        if np.float32(reward) != trajectory.rewards[t] or done != bool(trajectory.dones[t]):
            return False
        if events != trajectory.events[t]:
            return False
    return True
