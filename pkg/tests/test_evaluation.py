"""Cross-play matrices, replicator dynamics, and study statistics."""

import math
import statistics

import numpy as np
import pytest

from cooplab import nets
from cooplab.checkpoint import save_net
from cooplab.core import ConfigError, StepEvents, Trajectory, rollout
from cooplab.dual_dest import AlwaysStayPolicy, DualDestEnv, dd_fixed_task
from cooplab.evaluation import (
    SURVEY_METRICS,
    BehaviorStats,
    FlowResult,
    PayoffMatrix,
    SeedPool,
    SurveyTable,
    behavior_stats,
    build_metagame,
    cronbach_alpha,
    eval_xp,
    pearson_matrix,
    read_grid_csv,
    read_payoff_csv,
    replicator_flow,
    replicator_gradient,
    simplex_mesh,
    write_grid_csv,
    write_payoff_csv,
)


# ---------------------------------------------------------------------------
# replicator gradient


def test_gradient_constant_payoff_is_exactly_zero():
    x = np.array([0.25, 0.25, 0.5])
    grad = replicator_gradient(x, np.full((3, 3), 7.0))
    assert grad.tolist() == [0.0, 0.0, 0.0]


def test_gradient_vertex_is_exactly_zero():
    rng = np.random.default_rng(3)
    payoff = rng.normal(size=(4, 4))
    for k in range(4):
        x = np.zeros(4)
        x[k] = 1.0
        assert replicator_gradient(x, payoff).tolist() == [0.0] * 4


def test_gradient_hand_case():
    grad = replicator_gradient([0.5, 0.5], [[2.0, 2.0], [1.0, 1.0]])
    assert grad.tolist() == [0.25, -0.25]


def test_gradient_interior_fixed_point_exact():
    grad = replicator_gradient([0.5, 0.5], [[0.0, 1.0], [1.0, 0.0]])
    assert grad.tolist() == [0.0, 0.0]


def test_gradient_constant_shift_invariance():
    rng = np.random.default_rng(11)
    payoff = rng.normal(size=(3, 3))
    x = np.array([0.5, 0.25, 0.25])
    base = replicator_gradient(x, payoff)
    shifted = replicator_gradient(x, payoff + 13.5)
    np.testing.assert_allclose(shifted, base, atol=1e-12)


def test_gradient_rejects_off_simplex_and_bad_shapes():
    payoff = np.eye(3)
    with pytest.raises(ConfigError):
        replicator_gradient([0.5, 0.5, 0.2], payoff)
    with pytest.raises(ConfigError):
        replicator_gradient([1.2, -0.2, 0.0], payoff)
    with pytest.raises(ConfigError):
        replicator_gradient([0.5, 0.5], payoff)
    with pytest.raises(ConfigError):
        replicator_gradient([np.nan, 0.5, 0.5], payoff)
    with pytest.raises(ConfigError):
        replicator_gradient([0.5, 0.25, 0.25], np.full((3, 3), np.inf))


# ---------------------------------------------------------------------------
# replicator flow


def test_flow_converges_to_dominant_vertex():
    payoff = np.array([[3.0, 3.0, 3.0],
                       [1.0, 2.0, 1.0],
                       [0.0, 1.0, 2.0]])
    # brute-force dominance check: row 0 beats every other row against
    # every pure opponent strategy
    for i in (1, 2):
        assert np.all(payoff[0] - payoff[i] > 0)
    flow = replicator_flow(np.full(3, 1.0) / 3.0, payoff, steps=4000)
    np.testing.assert_allclose(flow.terminal, [1.0, 0.0, 0.0], atol=1e-3)


def test_flow_constant_payoff_stays_put():
    x0 = np.array([0.25, 0.25, 0.5])
    flow = replicator_flow(x0, np.full((3, 3), 2.0), steps=50)
    assert np.all(flow.trajectory == x0)


def test_flow_vertex_is_stationary():
    payoff = np.random.default_rng(5).normal(size=(3, 3))
    flow = replicator_flow([0.0, 1.0, 0.0], payoff, steps=20)
    assert np.all(flow.trajectory == np.array([0.0, 1.0, 0.0]))


def test_flow_preserves_simplex():
    rng = np.random.default_rng(19)
    payoff = rng.normal(scale=5.0, size=(4, 4))
    x0 = np.array([0.1, 0.2, 0.3, 0.4])
    flow = replicator_flow(x0, payoff, steps=3000)
    sums = flow.trajectory.sum(axis=1)
    assert np.all(np.abs(sums - 1.0) <= 1e-9)
    assert flow.trajectory.min() >= -1e-12


def test_flow_aborts_on_divergence():
    payoff = np.array([[1e308, 1e308], [-1e308, -1e308]])
    with pytest.raises(FloatingPointError):
        replicator_flow([0.5, 0.5], payoff, steps=10)


def test_flow_terminal_matches_trajectory():
    flow = replicator_flow([0.5, 0.5], [[2.0, 2.0], [1.0, 1.0]], steps=30)
    assert flow.terminal.tolist() == flow.trajectory[-1].tolist()
    assert flow.trajectory.shape == (31, 2)


def test_mesh_size_and_membership():
    mesh = simplex_mesh(3, 15)
    assert mesh.shape == (136, 3)   # C(17, 2) compositions
    np.testing.assert_allclose(mesh.sum(axis=1), 1.0, atol=1e-12)
    assert mesh.min() >= 0.0
    # all vertices present
    for k in range(3):
        vertex = np.zeros(3)
        vertex[k] = 1.0
        assert any(np.array_equal(row, vertex) for row in mesh)


def test_flow_field_zero_at_vertices():
    payoff = np.random.default_rng(7).normal(size=(3, 3))
    flow = replicator_flow([0.5, 0.25, 0.25], payoff, steps=5)
    assert flow.mesh_points.shape == flow.mesh_gradients.shape
    for point, grad in zip(flow.mesh_points, flow.mesh_gradients):
        if np.max(point) == 1.0:
            assert grad.tolist() == [0.0, 0.0, 0.0]


def test_flow_rejects_bad_step_parameters():
    with pytest.raises(ConfigError):
        replicator_flow([0.5, 0.5], np.eye(2), step_size=0.0)
    with pytest.raises(ConfigError):
        replicator_flow([0.5, 0.5], np.eye(2), steps=0)


# ---------------------------------------------------------------------------
# survey statistics


def test_alpha_perfectly_consistent_table_is_exactly_one():
    column = np.array([1.0, 2.0, 3.0, 4.0])
    table = np.stack([column, column, column], axis=1)
    assert cronbach_alpha(table) == 1.0


def test_alpha_matches_variance_formula():
    rng = np.random.default_rng(23)
    table = rng.integers(1, 8, size=(9, 5)).astype(float)
    k = table.shape[1]
    item_vars = [statistics.variance(table[:, j]) for j in range(k)]
    total_var = statistics.variance(table.sum(axis=1))
    expected = k / (k - 1) * (1.0 - sum(item_vars) / total_var)
    assert cronbach_alpha(table) == pytest.approx(expected, abs=1e-9)


def test_alpha_negative_for_reversed_item():
    table = np.array([[1, 1, 4],
                      [2, 2, 3],
                      [3, 3, 2],
                      [4, 4, 1]], dtype=float)
    alpha = cronbach_alpha(table)
    assert alpha == -3.0
    assert alpha < 0


def test_alpha_zero_variance_is_undefined_not_zero():
    table = np.full((4, 3), 5.0)
    assert math.isnan(cronbach_alpha(table))


def test_alpha_rejects_tiny_tables():
    with pytest.raises(ConfigError):
        cronbach_alpha(np.ones((1, 3)))
    with pytest.raises(ConfigError):
        cronbach_alpha(np.ones((3, 1)))
    with pytest.raises(ConfigError):
        cronbach_alpha(np.array([[1.0, np.nan], [2.0, 3.0]]))


def test_pearson_perfect_linear_relation():
    x = np.array([1.0, 2.0, 3.0, 4.0, 5.0])
    table = np.stack([x, 2.0 * x + 3.0, -x], axis=1)
    corr = pearson_matrix(table)
    assert corr[0, 1] == pytest.approx(1.0, abs=1e-12)
    assert corr[0, 2] == pytest.approx(-1.0, abs=1e-12)
    assert np.all(np.diag(corr) == 1.0)


def test_pearson_hand_oracle():
    x = [1.0, 2.0, 3.0, 4.0, 5.0]
    y = [2.0, 1.0, 4.0, 3.0, 6.0]
    corr = pearson_matrix(np.stack([x, y], axis=1))
    assert corr[0, 1] == pytest.approx(statistics.correlation(x, y), abs=1e-12)


def test_pearson_zero_variance_column_is_undefined():
    rng = np.random.default_rng(2)
    table = rng.normal(size=(6, 3))
    table[:, 1] = 4.0
    corr = pearson_matrix(table)
    assert np.all(np.isnan(corr[1, :]))
    assert np.all(np.isnan(corr[:, 1]))
    assert corr[0, 0] == 1.0 and corr[2, 2] == 1.0
    assert corr[0, 2] == corr[2, 0]


def test_pearson_symmetric_unit_diagonal_bounded():
    rng = np.random.default_rng(31)
    table = rng.normal(size=(12, 5))
    corr = pearson_matrix(table)
    np.testing.assert_array_equal(corr, corr.T)
    assert np.all(np.diag(corr) == 1.0)
    assert np.all(np.abs(corr) <= 1.0)


def test_survey_table_roundtrip_and_validation(tmp_path):
    table = SurveyTable(
        participants=("p1", "p1", "p2"),
        models=("a", "b", "a"),
        answers=np.array([[7, 6, 5, 4, 3, 2, 1],
                          [1, 2, 3, 4, 5, 6, 7],
                          [4, 4, 4, 4, 4, 4, 4]]),
    )
    path = tmp_path / "survey.csv"
    table.to_csv(path)
    header = path.read_text().splitlines()[0]
    assert header == "participant,model," + ",".join(SURVEY_METRICS)
    loaded = SurveyTable.from_csv(path)
    assert loaded.participants == table.participants
    assert loaded.models == table.models
    np.testing.assert_array_equal(loaded.answers, table.answers)

    only_a = table.for_model("a")
    assert len(only_a) == 2
    np.testing.assert_allclose(table.model_means()["a"],
                               table.answers[[0, 2]].mean(axis=0))

    with pytest.raises(ConfigError):
        SurveyTable(participants=("p",), models=("a",),
                    answers=np.array([[8, 1, 1, 1, 1, 1, 1]]))
    bad = tmp_path / "bad.csv"
    bad.write_text("participant,model,wrong\np,a,3\n")
    with pytest.raises(ConfigError):
        SurveyTable.from_csv(bad)


# ---------------------------------------------------------------------------
# cross-play matrices


def _stay(label):
    policy = AlwaysStayPolicy()
    policy.policy_id = label
    return policy


def _stay_pool(label="stay", members=("s0", "s1")):
    return SeedPool(label=label, policies=tuple(_stay(m) for m in members))


def test_xp_identical_scripted_policies_give_flat_matrix():
    pool = _stay_pool()
    task = dd_fixed_task(horizon=20)
    matrix = eval_xp(pool, [task], episodes_per_pair=2, seed=0)
    # stay earns -1 every step: raw -20, normalized by 2H = -0.5
    assert np.all(matrix.means == -0.5)
    assert np.all(matrix.std_errs == 0.0)
    assert np.all(matrix.episodes == 4)   # 1 task * 2 episodes * 2 seatings
    assert matrix.labels == ("s0", "s1")


def test_xp_symmetric_by_construction_with_nets():
    task = dd_fixed_task(horizon=10)
    spec = nets.compact_spec(task.spec())
    pool = SeedPool(label="net", policies=tuple(
        nets.NetPolicy(nets.PolicyNet(spec, seed=s), policy_id=f"seed{s}")
        for s in (0, 1)))
    matrix = eval_xp(pool, [task], episodes_per_pair=1, seed=7)
    np.testing.assert_array_equal(matrix.means, matrix.means.T)
    assert np.all(np.isfinite(matrix.means))
    assert matrix.episodes[0, 0] == 2


def test_xp_deterministic_and_schedule_independent():
    task = dd_fixed_task(horizon=10)
    spec = nets.compact_spec(task.spec())
    def pool():
        return SeedPool(label="net", policies=tuple(
            nets.NetPolicy(nets.PolicyNet(spec, seed=s), policy_id=f"seed{s}")
            for s in (3, 4)))
    first = eval_xp(pool(), [task], episodes_per_pair=1, seed=11)
    second = eval_xp(pool(), [task], episodes_per_pair=1, seed=11)
    np.testing.assert_array_equal(first.means, second.means)

    # a cell recomputed in isolation matches the full-matrix value, so
    # evaluation order cannot matter
    from cooplab.evaluation import _mean_se, _pair_scores
    p = pool()
    scores = _pair_scores(p.policies[0], p.policies[1], [task], 1, 11, (0, 1), None)
    assert _mean_se(scores)[0] == first.means[0, 1]


def test_pool_from_checkpoints(tmp_path):
    task = dd_fixed_task(horizon=10)
    spec = nets.compact_spec(task.spec())
    paths = []
    for s in (0, 1):
        net = nets.PolicyNet(spec, seed=s)
        path = tmp_path / f"seed{s}.ckpt"
        save_net(path, net, {"algorithm": "ippo-selfplay", "env_kind": "dual-dest",
                             "seed": s, "steps": 0, "policy_id": f"run@{s}"})
        paths.append(path)
    pool = SeedPool.from_checkpoints("ippo", paths)
    assert pool.member_labels == ("run@0", "run@1")
    matrix = eval_xp(pool, [task], seed=1)
    assert matrix.labels == ("run@0", "run@1")


def test_pool_validation():
    with pytest.raises(ConfigError):
        SeedPool(label="one", policies=(_stay("a"),))
    with pytest.raises(ConfigError):
        SeedPool(label="dup", policies=(_stay("same"), _stay("same")))


def test_xp_rejects_degenerate_arguments():
    pool = _stay_pool()
    with pytest.raises(ConfigError):
        eval_xp(pool, [], episodes_per_pair=1)
    with pytest.raises(ConfigError):
        eval_xp(pool, [dd_fixed_task(horizon=10)], episodes_per_pair=0)


def test_metagame_identical_pools_flat():
    pools = [_stay_pool("alg-a", ("a0", "a1")), _stay_pool("alg-b", ("b0", "b1"))]
    task = dd_fixed_task(horizon=20)
    meta = build_metagame(pools, [task], episodes_per_pair=1, seed=0)
    assert meta.labels == ("alg-a", "alg-b")
    assert np.all(meta.means == -0.5)
    # 2x2 member pairings, 2 seatings each
    assert np.all(meta.episodes == 8)
    np.testing.assert_array_equal(meta.symmetrized(), meta.means)


def test_metagame_rejects_duplicate_labels():
    with pytest.raises(ConfigError):
        build_metagame([_stay_pool("x"), _stay_pool("x", ("c0", "c1"))],
                       [dd_fixed_task(horizon=10)])


def test_symmetrized_hand_matrix():
    matrix = PayoffMatrix(labels=("a", "b"),
                          means=np.array([[1.0, 3.0], [5.0, 7.0]]),
                          std_errs=np.zeros((2, 2)),
                          episodes=np.ones((2, 2), dtype=int))
    np.testing.assert_array_equal(matrix.symmetrized(),
                                  np.array([[1.0, 4.0], [4.0, 7.0]]))
    assert matrix.off_diagonal_mean() == 4.0
    assert matrix.diagonal_mean() == 4.0
    assert matrix.cell("b", "a") == 5.0


# ---------------------------------------------------------------------------
# behavioral statistics


def test_behavior_stats_stationary_agents():
    task = dd_fixed_task(horizon=15)
    env = DualDestEnv(task=task)
    stay = _stay("idle")
    trajs = [rollout(env, stay, stay, seed=s) for s in (0, 1)]
    stats = behavior_stats(trajs, grid_shape=(task.size, task.size))
    assert np.all(stats.collisions == 0)
    assert stats.mean_collisions == 0.0
    assert stats.heatmaps.shape == (2, 5, 5)
    for seat, start in zip((0, 1), task.starts):
        assert stats.heatmaps[seat][start] == 1.0
        assert stats.heatmaps[seat].sum() == pytest.approx(1.0)


def _synthetic_trajectory(flags, positions):
    t = len(flags)
    return Trajectory(
        kind="dual-dest", task_id="synthetic", seed=0, policy_ids=("x", "y"),
        actions=np.zeros((t, 2), dtype=np.int64),
        rewards=np.zeros(t, dtype=np.float32),
        dones=np.array([False] * (t - 1) + [True]),
        events=tuple(StepEvents(collision=f) for f in flags),
        norm_constant=1.0,
        positions=np.asarray(positions, dtype=np.int64),
    )


def test_behavior_stats_counts_collisions():
    positions = [[[0, 0], [1, 1]]] * 4
    trajs = [
        _synthetic_trajectory([True, False, True], positions),
        _synthetic_trajectory([False, False, False], positions),
    ]
    stats = behavior_stats(trajs, grid_shape=(2, 2))
    assert stats.collisions.tolist() == [2, 0]
    assert stats.mean_collisions == 1.0
    assert stats.heatmaps[0][0, 0] == 1.0
    assert stats.heatmaps[1][1, 1] == 1.0


def test_behavior_stats_validation():
    traj = _synthetic_trajectory([False], [[[0, 0], [3, 3]]] * 2)
    with pytest.raises(ConfigError):
        behavior_stats([])
    with pytest.raises(ConfigError):
        behavior_stats([traj], grid_shape=(2, 2))
    inferred = behavior_stats([traj])
    assert inferred.heatmaps.shape == (2, 4, 4)
    bare = _synthetic_trajectory([False], [[[0, 0], [1, 1]]] * 2)
    bare.positions = None
    with pytest.raises(ConfigError):
        behavior_stats([bare])


# ---------------------------------------------------------------------------
# CSV formats


def test_payoff_csv_roundtrip(tmp_path):
    matrix = PayoffMatrix(
        labels=("cec", "fcp", "ippo"),
        means=np.array([[0.9, 0.7, 0.5], [0.7, 0.8, 0.4], [0.5, 0.4, 0.95]]),
        std_errs=np.array([[0.01, 0.02, 0.03], [0.02, 0.01, np.nan],
                           [0.03, np.nan, 0.005]]),
        episodes=np.full((3, 3), 12, dtype=int),
    )
    main, se_path, counts_path = write_payoff_csv(matrix, tmp_path / "xp.csv")
    assert main.name == "xp.csv" and se_path.name == "xp_se.csv"
    assert counts_path.name == "xp_counts.csv"
    first = main.read_text().splitlines()[0]
    assert first == ",cec,fcp,ippo"
    loaded = read_payoff_csv(main)
    assert loaded.labels == matrix.labels
    np.testing.assert_array_equal(loaded.means, matrix.means)
    np.testing.assert_array_equal(loaded.std_errs, matrix.std_errs)
    np.testing.assert_array_equal(loaded.episodes, matrix.episodes)


def test_grid_csv_roundtrip(tmp_path):
    grid = np.arange(12, dtype=np.float64).reshape(3, 4) / 7.0
    path = tmp_path / "field.csv"
    write_grid_csv(grid, path)
    np.testing.assert_array_equal(read_grid_csv(path), grid)
    with pytest.raises(ConfigError):
        write_grid_csv(np.zeros(3), tmp_path / "bad.csv")


def test_payoff_matrix_validation():
    with pytest.raises(ConfigError):
        PayoffMatrix(labels=("a", "b"), means=np.zeros((3, 3)),
                     std_errs=np.zeros((3, 3)), episodes=np.ones((3, 3), int))
    with pytest.raises(ConfigError):
        PayoffMatrix(labels=("a", "a"), means=np.zeros((2, 2)),
                     std_errs=np.zeros((2, 2)), episodes=np.ones((2, 2), int))
    with pytest.raises(ConfigError):
        PayoffMatrix(labels=("a", "b"), means=np.zeros((2, 2)),
                     std_errs=np.zeros((2, 2)), episodes=np.zeros((2, 2), int))
