"""Cross-play matrices, meta-game replicator analysis, and study statistics.

Seed-level cross-play: every ordered pair from a pool of same-algorithm
policies plays a fixed set of tasks, with each pairing evaluated in both
seat orders and the two orders averaged into one cell, so the resulting
payoff matrix is symmetric by construction. Episode seeds are derived
from the cell coordinates (pair indices, task index, episode index, seat
order), never from evaluation order, so cells are reproducible no matter
how the schedule is chunked or reordered.

Algorithm-level meta-game: one matrix over pools, where cell (a, b)
averages the score of every member of pool a paired with every member of
pool b. The raw matrix is kept as measured; `PayoffMatrix.symmetrized`
applies (M + M^T) / 2, which is the form the replicator analysis
consumes since the meta-game is symmetric in which side picks which
algorithm.

Replicator dynamics: `replicator_gradient` is the standard growth rule
x_i * ((A x)_i - x^T A x); `replicator_flow` integrates it with a plain
Euler step, renormalizing onto the simplex after every step, and also
samples the gradient field on a barycentric mesh for plotting. A flow
that leaves the finite range aborts rather than returning garbage.

Study statistics: Cronbach's alpha and a Pearson correlation matrix over
rating tables (rows respondents, columns items), and collision /
visitation summaries over recorded trajectories. Undefined statistics
(zero variance) are reported as NaN, never silently coerced to a number.
"""

from __future__ import annotations

import csv
import dataclasses
import itertools
import math
import os
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import ConfigError, Policy, Trajectory, episode_score, rollout
from .checkpoint import load_policy
from .dual_dest import DualDestEnv, DualDestTask
from .overcooked import OvercookedConfig, OvercookedEnv
from .procgen import Layout

# Fixed survey schema: seven Likert items, scored 1-7. Higher is better
# for every column except frustration, which is kept in its asked
# direction and reversed only by explicit request.
SURVEY_METRICS = ("adaptability", "consistency", "coordination",
                  "enjoyment", "frustration", "helpfulness", "trust")
LIKERT_MIN, LIKERT_MAX = 1, 7


# ---------------------------------------------------------------------------
# pools and payoff matrices


@dataclasses.dataclass(frozen=True)
class SeedPool:
    """A set of policies trained by one algorithm under different seeds."""

    label: str
    policies: tuple[Policy, ...]
    member_labels: tuple[str, ...] = ()

    def __post_init__(self):
        if len(self.policies) < 2:
            raise ConfigError("a seed pool needs at least two members")
        labels = self.member_labels or tuple(p.policy_id for p in self.policies)
        if len(labels) != len(self.policies):
            raise ConfigError("one member label per policy")
        if len(set(labels)) != len(labels):
            raise ConfigError(f"pool {self.label!r} has duplicate member labels")
        object.__setattr__(self, "member_labels", labels)

    @classmethod
    def from_checkpoints(cls, label: str, paths: Sequence, greedy: bool = False) -> "SeedPool":
        policies = tuple(load_policy(p, greedy=greedy) for p in paths)
        return cls(label=label, policies=policies)

    def __len__(self) -> int:
        return len(self.policies)


@dataclasses.dataclass
class PayoffMatrix:
    """Mean normalized scores for every pairing, with uncertainty.

    `means[i, j]` is the average episode score of label i paired with
    label j; `std_errs` holds the per-cell standard error of that mean
    (NaN when a cell has a single episode) and `episodes` the per-cell
    episode count.
    """

    labels: tuple[str, ...]
    means: np.ndarray
    std_errs: np.ndarray
    episodes: np.ndarray

    def __post_init__(self):
        n = len(self.labels)
        self.means = np.asarray(self.means, dtype=np.float64)
        self.std_errs = np.asarray(self.std_errs, dtype=np.float64)
        self.episodes = np.asarray(self.episodes, dtype=np.int64)
        for name in ("means", "std_errs", "episodes"):
            arr = getattr(self, name)
            if arr.shape != (n, n):
                raise ConfigError(f"{name} must be {n}x{n}, got {arr.shape}")
        if len(set(self.labels)) != n:
            raise ConfigError("payoff labels must be unique")
        if np.any(self.episodes < 1):
            raise ConfigError("every cell needs at least one episode")

    @property
    def n(self) -> int:
        return len(self.labels)

    def cell(self, row_label: str, col_label: str) -> float:
        i = self.labels.index(row_label)
        j = self.labels.index(col_label)
        return float(self.means[i, j])

    def symmetrized(self) -> np.ndarray:
        """(M + M^T) / 2, the payoff a symmetric meta-game analysis uses."""
        return (self.means + self.means.T) / 2.0

    def diagonal_mean(self) -> float:
        return float(np.mean(np.diag(self.means)))

    def off_diagonal_mean(self) -> float:
        if self.n < 2:
            raise ConfigError("no off-diagonal cells in a 1x1 matrix")
        mask = ~np.eye(self.n, dtype=bool)
        return float(np.mean(self.means[mask]))


def _write_labeled_grid(path: Path, labels: Sequence[str], grid: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([""] + list(labels))
        for label, row in zip(labels, grid):
            writer.writerow([label] + [repr(float(v)) for v in row])


def _read_labeled_grid(path: Path) -> tuple[tuple[str, ...], np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "":
        raise ConfigError(f"{path}: expected an empty corner cell in the header")
    labels = tuple(rows[0][1:])
    grid = np.empty((len(labels), len(labels)), dtype=np.float64)
    if len(rows) != len(labels) + 1:
        raise ConfigError(f"{path}: expected {len(labels)} data rows")
    for i, row in enumerate(rows[1:]):
        if row[0] != labels[i]:
            raise ConfigError(f"{path}: row label {row[0]!r} != column label {labels[i]!r}")
        grid[i] = [float(v) for v in row[1:]]
    return labels, grid


def write_payoff_csv(matrix: PayoffMatrix, path) -> tuple[Path, Path, Path]:
    """Write means to `path` plus `<stem>_se.csv` / `<stem>_counts.csv`."""
    path = Path(path)
    se_path = path.with_name(path.stem + "_se" + path.suffix)
    counts_path = path.with_name(path.stem + "_counts" + path.suffix)
    _write_labeled_grid(path, matrix.labels, matrix.means)
    _write_labeled_grid(se_path, matrix.labels, matrix.std_errs)
    _write_labeled_grid(counts_path, matrix.labels, matrix.episodes.astype(np.float64))
    return path, se_path, counts_path


def read_payoff_csv(path) -> PayoffMatrix:
    path = Path(path)
    labels, means = _read_labeled_grid(path)
    _, std_errs = _read_labeled_grid(path.with_name(path.stem + "_se" + path.suffix))
    _, counts = _read_labeled_grid(path.with_name(path.stem + "_counts" + path.suffix))
    return PayoffMatrix(labels=labels, means=means, std_errs=std_errs,
                        episodes=counts.astype(np.int64))


def write_grid_csv(grid: np.ndarray, path) -> str:
    """Plain rectangular CSV of floats (heatmaps, flow fields)."""
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 2:
        raise ConfigError(f"expected a 2-d grid, got shape {grid.shape}")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in grid:
            writer.writerow([repr(float(v)) for v in row])
    return os.fspath(path)


def read_grid_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = [[float(v) for v in row] for row in csv.reader(fh) if row]
    return np.asarray(rows, dtype=np.float64)


# ---------------------------------------------------------------------------
# cross-play evaluation


def _make_env(task, config: OvercookedConfig | None):
    if isinstance(task, DualDestTask):
        return DualDestEnv(task=task)
    if isinstance(task, Layout):
        return OvercookedEnv(layout=task, config=config or OvercookedConfig())
    raise ConfigError(f"cannot build an environment from {type(task).__name__}")


def _episode_seed(root: int, *coords: int) -> int:
    seq = np.random.SeedSequence([int(root), *[int(c) for c in coords]])
    return int(seq.generate_state(1, np.uint64)[0] >> 1)


def _pair_scores(policy_a: Policy, policy_b: Policy, tasks: Sequence,
                 episodes_per_pair: int, root: int, coords: tuple[int, ...],
                 config: OvercookedConfig | None) -> list[float]:
    """Both seat orders of one pairing over every task; normalized scores.

    The episode seed depends only on the cell coordinates, so the same
    arguments reproduce the same scores regardless of evaluation order.
    """
    scores = []
    for ti, task in enumerate(tasks):
        env = _make_env(task, config)
        for e in range(episodes_per_pair):
            for seat in (0, 1):
                first, second = (policy_a, policy_b) if seat == 0 else (policy_b, policy_a)
                seed = _episode_seed(root, *coords, ti, e, seat)
                traj = rollout(env, first, second, seed)
                scores.append(episode_score(traj).normalized)
    return scores


def _mean_se(scores: Sequence[float]) -> tuple[float, float]:
    arr = np.asarray(scores, dtype=np.float64)
    mean = float(arr.mean())
    se = float(arr.std(ddof=1) / math.sqrt(len(arr))) if len(arr) > 1 else math.nan
    return mean, se


def eval_xp(pool: SeedPool, tasks: Sequence, episodes_per_pair: int = 1,
            seed: int = 0, config: OvercookedConfig | None = None) -> PayoffMatrix:
    """Cross-play every pair of pool members over a task set.

    Cell (i, j) averages both seat orders of the (i, j) pairing, so the
    matrix is symmetric by construction; the diagonal is self-play. Each
    cell sees `2 * len(tasks) * episodes_per_pair` episodes.
    """
    if not tasks:
        raise ConfigError("need at least one task")
    if episodes_per_pair < 1:
        raise ConfigError("episodes_per_pair must be positive")
    n = len(pool)
    means = np.zeros((n, n))
    ses = np.zeros((n, n))
    counts = np.zeros((n, n), dtype=np.int64)
    for i in range(n):
        for j in range(i, n):
            scores = _pair_scores(pool.policies[i], pool.policies[j], tasks,
                                  episodes_per_pair, seed, (i, j), config)
            mean, se = _mean_se(scores)
            means[i, j] = means[j, i] = mean
            ses[i, j] = ses[j, i] = se
            counts[i, j] = counts[j, i] = len(scores)
    return PayoffMatrix(labels=pool.member_labels, means=means,
                        std_errs=ses, episodes=counts)


def build_metagame(pools: Sequence[SeedPool], tasks: Sequence,
                   episodes_per_pair: int = 1, seed: int = 0,
                   config: OvercookedConfig | None = None) -> PayoffMatrix:
    """One payoff cell per pool pair: the mean over all member pairings.

    Cell (a, b) is the expected score of a uniformly drawn member of
    pool a playing a uniformly drawn member of pool b, measured
    exhaustively. The matrix is kept as measured; feed `symmetrized()`
    to the replicator ops.
    """
    if not tasks:
        raise ConfigError("need at least one task")
    labels = tuple(p.label for p in pools)
    if len(set(labels)) != len(labels):
        raise ConfigError("pool labels must be unique")
    n = len(pools)
    means = np.zeros((n, n))
    ses = np.zeros((n, n))
    counts = np.zeros((n, n), dtype=np.int64)
    for a in range(n):
        for b in range(a, n):
            scores = []
            for ia, pa in enumerate(pools[a].policies):
                for ib, pb in enumerate(pools[b].policies):
                    scores.extend(_pair_scores(pa, pb, tasks, episodes_per_pair,
                                               seed, (a, b, ia, ib), config))
            mean, se = _mean_se(scores)
            means[a, b] = means[b, a] = mean
            ses[a, b] = ses[b, a] = se
            counts[a, b] = counts[b, a] = len(scores)
    return PayoffMatrix(labels=labels, means=means, std_errs=ses, episodes=counts)


# ---------------------------------------------------------------------------
# replicator dynamics


def _check_simplex(x: np.ndarray, payoff: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    payoff = np.asarray(payoff, dtype=np.float64)
    if x.ndim != 1 or payoff.shape != (x.size, x.size):
        raise ConfigError(f"need x of length n and an n x n payoff, got "
                          f"{x.shape} and {payoff.shape}")
    if not np.all(np.isfinite(payoff)) or not np.all(np.isfinite(x)):
        raise ConfigError("nonfinite input")
    if abs(float(x.sum()) - 1.0) > 1e-9 or float(x.min()) < -1e-9:
        raise ConfigError(f"{x} is not on the probability simplex")
    return x, payoff


def _growth(x: np.ndarray, payoff: np.ndarray) -> np.ndarray:
    fitness = payoff @ x
    return x * (fitness - float(x @ fitness))


def replicator_gradient(x, payoff) -> np.ndarray:
    """Replicator growth x_i * ((A x)_i - x^T A x) at one mixture.

    Vertices and equal-fitness points map to exact zeros; adding a
    constant to every payoff entry leaves the gradient unchanged.
    """
    x, payoff = _check_simplex(x, payoff)
    return _growth(x, payoff)


def simplex_mesh(dim: int, subdivisions: int = 15) -> np.ndarray:
    """All barycentric grid points with the given subdivision count.

    Rows are mixtures k / subdivisions with k a nonnegative integer
    composition; for dim=3, subdivisions=15 that is C(17, 2) = 136
    points covering the triangle.
    """
    if dim < 2 or subdivisions < 1:
        raise ConfigError("need dim >= 2 and subdivisions >= 1")
    points = []
    for bars in itertools.combinations(range(subdivisions + dim - 1), dim - 1):
        edges = (-1,) + bars + (subdivisions + dim - 1,)
        counts = [edges[k + 1] - edges[k] - 1 for k in range(dim)]
        points.append(counts)
    return np.asarray(points, dtype=np.float64) / float(subdivisions)


@dataclasses.dataclass
class FlowResult:
    """Euler-integrated replicator trajectory plus a sampled field."""

    trajectory: np.ndarray       # (steps + 1, n)
    step_size: float
    mesh_points: np.ndarray      # (m, n)
    mesh_gradients: np.ndarray   # (m, n)

    @property
    def terminal(self) -> np.ndarray:
        return self.trajectory[-1]


def replicator_flow(x0, payoff, step_size: float = 0.01, steps: int = 2000,
                    mesh_subdivisions: int = 15) -> FlowResult:
    """Integrate the replicator dynamics from x0 with renormalized Euler.

    After each step the mixture is clipped at zero and rescaled to sum
    to one, so the whole trajectory stays on the simplex. A nonfinite
    iterate aborts with an error instead of continuing. The gradient
    field sampled on a barycentric mesh is returned alongside for
    plotting.
    """
    x, payoff = _check_simplex(x0, payoff)
    if step_size <= 0 or steps < 1:
        raise ConfigError("need a positive step size and at least one step")
    trajectory = np.empty((steps + 1, x.size), dtype=np.float64)
    trajectory[0] = x
    for k in range(1, steps + 1):
        # overflow here is not an error; the finiteness check below turns
        # it into a diagnostic abort
        with np.errstate(over="ignore", invalid="ignore"):
            x = x + step_size * _growth(x, payoff)
        if not np.all(np.isfinite(x)):
            raise FloatingPointError(f"replicator flow diverged at step {k}")
        x = np.clip(x, 0.0, None)
        total = float(x.sum())
        if total <= 0.0:
            raise FloatingPointError(f"replicator flow collapsed at step {k}")
        x = x / total
        trajectory[k] = x
    mesh = simplex_mesh(x.size, mesh_subdivisions)
    gradients = np.vstack([_growth(p, payoff) for p in mesh])
    return FlowResult(trajectory=trajectory, step_size=step_size,
                      mesh_points=mesh, mesh_gradients=gradients)


# ---------------------------------------------------------------------------
# survey statistics


@dataclasses.dataclass
class SurveyTable:
    """Per-participant, per-model Likert answers on the fixed 7 metrics."""

    participants: tuple[str, ...]
    models: tuple[str, ...]
    answers: np.ndarray            # (rows, 7) int

    def __post_init__(self):
        self.answers = np.asarray(self.answers, dtype=np.int64)
        rows = len(self.participants)
        if len(self.models) != rows:
            raise ConfigError("one model per participant row")
        if self.answers.shape != (rows, len(SURVEY_METRICS)):
            raise ConfigError(f"answers must be rows x {len(SURVEY_METRICS)}")
        if rows and (self.answers.min() < LIKERT_MIN or self.answers.max() > LIKERT_MAX):
            raise ConfigError(f"ratings must lie in [{LIKERT_MIN}, {LIKERT_MAX}]")

    def __len__(self) -> int:
        return len(self.participants)

    def item_table(self) -> np.ndarray:
        """Respondent-rows by metric-columns float table for statistics."""
        return self.answers.astype(np.float64)

    def for_model(self, model: str) -> "SurveyTable":
        keep = [k for k, m in enumerate(self.models) if m == model]
        return SurveyTable(
            participants=tuple(self.participants[k] for k in keep),
            models=tuple(self.models[k] for k in keep),
            answers=self.answers[keep] if keep else np.zeros((0, len(SURVEY_METRICS)), np.int64),
        )

    def model_means(self) -> dict[str, np.ndarray]:
        return {m: self.for_model(m).item_table().mean(axis=0)
                for m in dict.fromkeys(self.models)}

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["participant", "model", *SURVEY_METRICS])
            for participant, model, row in zip(self.participants, self.models, self.answers):
                writer.writerow([participant, model, *[int(v) for v in row]])

    @classmethod
    def from_csv(cls, path) -> "SurveyTable":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        expected = ["participant", "model", *SURVEY_METRICS]
        if not rows or rows[0] != expected:
            raise ConfigError(f"{path}: header must be exactly {expected}")
        participants, models, answers = [], [], []
        for row in rows[1:]:
            if len(row) != len(expected):
                raise ConfigError(f"{path}: row {row!r} has {len(row)} fields")
            participants.append(row[0])
            models.append(row[1])
            answers.append([int(v) for v in row[2:]])
        return cls(participants=tuple(participants), models=tuple(models),
                   answers=np.asarray(answers, dtype=np.int64).reshape(len(participants), -1)
                   if participants else np.zeros((0, len(SURVEY_METRICS)), np.int64))


def cronbach_alpha(table) -> float:
    """Internal consistency k/(k-1) * (1 - sum(var_i) / var_total).

    Computed from sums of squared deviations (the sample-variance
    denominators cancel) with a single final division, so a perfectly
    consistent integer table yields exactly 1.0. Zero total variance
    makes the statistic undefined and returns NaN.
    """
    t = np.asarray(table, dtype=np.float64)
    if t.ndim != 2 or t.shape[0] < 2 or t.shape[1] < 2:
        raise ConfigError("need at least two respondents and two items")
    if not np.all(np.isfinite(t)):
        raise ConfigError("nonfinite ratings")
    k = t.shape[1]
    ss_items = float(np.sum((t - t.mean(axis=0)) ** 2))
    totals = t.sum(axis=1)
    ss_total = float(np.sum((totals - totals.mean()) ** 2))
    if ss_total == 0.0:
        return math.nan
    return (k * (ss_total - ss_items)) / ((k - 1) * ss_total)


def pearson_matrix(table) -> np.ndarray:
    """Pairwise Pearson correlation between columns of a rating table.

    Symmetric with a unit diagonal; any column with zero variance makes
    every entry involving it (diagonal included) NaN, since the
    correlation is undefined there.
    """
    t = np.asarray(table, dtype=np.float64)
    if t.ndim != 2 or t.shape[0] < 2:
        raise ConfigError("need at least two respondents")
    if not np.all(np.isfinite(t)):
        raise ConfigError("nonfinite ratings")
    centered = t - t.mean(axis=0)
    ss = np.einsum("ij,ij->j", centered, centered)
    k = t.shape[1]
    corr = np.full((k, k), math.nan)
    for i in range(k):
        if ss[i] == 0.0:
            continue
        for j in range(i, k):
            if ss[j] == 0.0:
                continue
            if i == j:
                corr[i, i] = 1.0
                continue
            r = float(centered[:, i] @ centered[:, j]) / math.sqrt(ss[i] * ss[j])
            corr[i, j] = corr[j, i] = min(1.0, max(-1.0, r))
    return corr


# ---------------------------------------------------------------------------
# behavioral statistics


@dataclasses.dataclass
class BehaviorStats:
    """Collision counts and where each seat spent its time."""

    collisions: np.ndarray   # (episodes,) int
    heatmaps: np.ndarray     # (2, H, W) float, each summing to 1

    @property
    def mean_collisions(self) -> float:
        return float(self.collisions.mean())


def behavior_stats(trajectories: Sequence[Trajectory],
                   grid_shape: tuple[int, int] | None = None) -> BehaviorStats:
    """Per-episode collision counts plus per-seat visitation frequencies.

    Visitation counts every recorded state including the initial one,
    normalized per seat so each heatmap sums to one. The grid shape is
    inferred from the largest visited cell when not given.
    """
    if not trajectories:
        raise ConfigError("need at least one trajectory")
    for traj in trajectories:
        if traj.positions is None:
            raise ConfigError("trajectory has no recorded positions")
    if grid_shape is None:
        extent = np.max([t.positions.max(axis=(0, 1)) for t in trajectories], axis=0)
        grid_shape = (int(extent[0]) + 1, int(extent[1]) + 1)
    collisions = np.array([sum(1 for ev in t.events if ev.collision)
                           for t in trajectories], dtype=np.int64)
    heatmaps = np.zeros((2,) + tuple(grid_shape), dtype=np.float64)
    for traj in trajectories:
        for seat in (0, 1):
            cells = traj.positions[:, seat, :]
            if cells[:, 0].max() >= grid_shape[0] or cells[:, 1].max() >= grid_shape[1]:
                raise ConfigError("visited cell outside the stated grid shape")
            np.add.at(heatmaps[seat], (cells[:, 0], cells[:, 1]), 1.0)
    for seat in (0, 1):
        heatmaps[seat] /= heatmaps[seat].sum()
    return BehaviorStats(collisions=collisions, heatmaps=heatmaps)
