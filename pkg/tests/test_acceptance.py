"""Acceptance criteria, one test (and one printed verdict line) each.

Numeric and engine criteria run live. The training-dependent criteria
read artifacts produced by scripts/run_acceptance.py (committed under
artifacts/acceptance); a missing artifact fails the criterion with the
command that produces it. Run with -s to see the verdict lines.
"""
import json
import pathlib
import time

import numpy as np
import pytest

import oracles
from cooplab import evaluation, training
from cooplab.bench import measure_throughput
from cooplab.core import episode_score, rollout
from cooplab.dual_dest import DualDestEnv, OraclePolicy, dd_fixed_task
from cooplab.evaluation import (cronbach_alpha, pearson_matrix,
                                read_payoff_csv, replicator_flow,
                                replicator_gradient)
from cooplab.procgen import (generate_layout, held_out_layouts,
                             load_templates, matches_held_out,
                             validate_layout)

ART = pathlib.Path(__file__).resolve().parent.parent / "artifacts" / "acceptance"


def verdict(name: str, ok: bool, detail: str):
    print(f"\n[{name}] {'PASS' if ok else 'FAIL'}: {detail}")
    assert ok, f"{name}: {detail}"


def need(relpath: str) -> pathlib.Path:
    path = ART / relpath
    if not path.exists():
        pytest.fail(f"missing artifact {path}; run scripts/run_acceptance.py")
    return path


def final_returns(run: str, tail: int = 10) -> float:
    rows = [json.loads(l) for l in need(f"{run}/metrics.jsonl").open()]
    return float(np.mean([r["mean_return"] for r in rows[-tail:]]))


def off_diagonal_mean(csv_name: str) -> float:
    matrix = read_payoff_csv(need(f"evals/{csv_name}"))
    n = matrix.means.shape[0]
    return float(matrix.means[~np.eye(n, dtype=bool)].mean())


# ---------------------------------------------------------------- criterion 1

def test_dual_destination_oracle_score():
    t0 = time.perf_counter()
    env = DualDestEnv(task=dd_fixed_task())
    traj = rollout(env, OraclePolicy(), OraclePolicy(), seed=0)
    score = episode_score(traj)
    took = time.perf_counter() - t0
    ok = score.raw == 191.0 and score.normalized == 0.955 and took < 1.0
    verdict("dd-oracle", ok,
            f"raw {score.raw}, normalized {score.normalized}, {took:.3f}s")


# ---------------------------------------------------------------- criterion 2

def test_toy_cec_ordering():
    cec_held = off_diagonal_mean("cec_heldout.csv")
    ippo_held = off_diagonal_mean("ippo_heldout.csv")
    fcp_held = off_diagonal_mean("fcp_heldout.csv")
    cec_fixed = off_diagonal_mean("cec_fixed.csv")
    fcp_fixed = off_diagonal_mean("fcp_fixed.csv")
    ippo_fixed = off_diagonal_mean("ippo_fixed.csv")
    parts = [
        ("cec held-out >= 0.75", cec_held >= 0.75),
        ("ippo held-out <= 0.1", ippo_held <= 0.1),
        ("fcp held-out <= 0.1", fcp_held <= 0.1),
        ("fixed-task ordering cec > fcp > ippo",
         cec_fixed > fcp_fixed > ippo_fixed),
    ]
    detail = (f"held-out XP cec {cec_held:.3f} ippo {ippo_held:.3f} "
              f"fcp {fcp_held:.3f}; fixed XP cec {cec_fixed:.3f} "
              f"fcp {fcp_fixed:.3f} ippo {ippo_fixed:.3f}")
    failures = [name for name, ok in parts if not ok]
    verdict("toy-cec-ordering", not failures,
            detail + (f"; failed: {failures}" if failures else ""))


# ---------------------------------------------------------------- criterion 3

def test_generator_soundness_ten_thousand():
    t0 = time.perf_counter()
    rng = np.random.default_rng(12345)
    templates = load_templates()
    held = held_out_layouts()
    bad_valid = bad_shape = bad_missing = collisions = 0
    for i in range(10_000):
        layout = generate_layout(rng, templates, held, seed=i)
        report = validate_layout(layout)
        if not report.valid:
            bad_valid += 1
        if layout.height != 9 or layout.width != 9:
            bad_shape += 1
        if not (layout.onions and layout.plates and layout.pots
                and layout.goals):
            bad_missing += 1
        if matches_held_out(layout, held):
            collisions += 1
    took = time.perf_counter() - t0
    ok = (bad_valid == 0 and bad_shape == 0 and bad_missing == 0
          and collisions == 0 and took < 60.0)
    verdict("generator-soundness", ok,
            f"10000 layouts, {bad_valid} invalid, {bad_shape} off-size, "
            f"{bad_missing} missing objects, {collisions} held-out "
            f"collisions, {took:.1f}s")


# ---------------------------------------------------------------- criterion 4

def test_engine_throughput():
    row = measure_throughput(batch=256, seconds=1.0, seed=0)
    ok = row.steps_per_s >= 100_000
    verdict("engine-throughput", ok,
            f"{row.steps_per_s:,.0f} env-steps/s stepping "
            f"({row.obs_steps_per_s:,.0f} with observations) at batch 256")


# ---------------------------------------------------------------- criterion 5

def test_ppo_numerics():
    err, n_params = oracles.ppo_gradient_check(seed=0)
    gae_max = 0.0
    rng = np.random.default_rng(7)
    for _ in range(10):
        rewards = rng.normal(size=50)
        values = rng.normal(size=50)
        dones = rng.random(50) < 0.1
        bootstrap = float(rng.normal())
        adv, _ = training.compute_gae(rewards, values, dones, bootstrap,
                                      0.99, 0.95)
        ref = oracles.gae_bruteforce(rewards, values, dones, bootstrap,
                                     0.99, 0.95)
        gae_max = max(gae_max, float(np.max(np.abs(np.asarray(adv) - ref))))
    ok = err < 1e-3 and n_params <= 1000 and gae_max < 1e-10
    verdict("ppo-numerics", ok,
            f"grad FD rel err {err:.2e} over {n_params} params, "
            f"GAE brute-force gap {gae_max:.2e}")


# ---------------------------------------------------------------- criterion 6

def test_replicator_correctness():
    rng = np.random.default_rng(3)
    x = rng.dirichlet(np.ones(4))
    constant = np.full((4, 4), 2.5)
    zero_grad = replicator_gradient(x, constant)
    exactly_zero = bool(np.all(zero_grad == 0.0))

    payoff = np.array([[4.0, 3.0, 5.0],
                       [1.0, 2.0, 3.0],
                       [2.0, 1.0, 4.0]])
    dominant = all(payoff[0, j] > payoff[i, j]
                   for j in range(3) for i in (1, 2))
    flow = replicator_flow(np.full(3, 1 / 3), payoff, step_size=0.01,
                           steps=6000)
    vertex_gap = float(np.abs(flow.trajectory[-1] - [1.0, 0.0, 0.0]).max())

    derivative = replicator_gradient([0.5, 0.5], [[2.0, 2.0], [1.0, 1.0]])
    closed_form = np.allclose(derivative, [0.25, -0.25], atol=0, rtol=0)

    ok = exactly_zero and dominant and vertex_gap < 1e-3 and closed_form
    verdict("replicator", ok,
            f"constant grad zero: {exactly_zero}, dominant vertex gap "
            f"{vertex_gap:.2e}, ((2,2),(1,1)) at center -> "
            f"{tuple(derivative)}")


# ---------------------------------------------------------------- criterion 7

def test_recurrence_ablation():
    seeds = (401, 402, 403)
    pairs = [(final_returns(f"cec_s{s}"), final_returns(f"noner_s{s}"), s)
             for s in seeds]
    ok = all(noner < rec for rec, noner, _ in pairs)
    detail = "; ".join(f"s{s}: recurrent {rec:+.2f} vs flat {noner:+.2f}"
                       for rec, noner, s in pairs)
    verdict("recurrence-ablation", ok, detail)


# ---------------------------------------------------------------- criterion 8

def test_survey_statistics():
    # parallel forms: every item shifts each respondent by a constant
    consistent = np.arange(1, 6, dtype=float)[:, None] + np.array([0., 1., 2.])
    alpha_perfect = cronbach_alpha(consistent)

    rng = np.random.default_rng(11)
    worst = 0.0
    pearson_worst = 0.0
    for _ in range(20):
        table = rng.integers(1, 8, size=(9, 5)).astype(np.float64)
        table[:, 0] += np.linspace(0, 1, 9)      # avoid degenerate columns
        k = table.shape[1]
        item_var = table.var(axis=0, ddof=1).sum()
        total_var = table.sum(axis=1).var(ddof=1)
        alpha_oracle = k / (k - 1) * (1 - item_var / total_var)
        worst = max(worst, abs(cronbach_alpha(table) - alpha_oracle))
        pearson_worst = max(pearson_worst, float(np.max(np.abs(
            pearson_matrix(table) - np.corrcoef(table.T)))))
    ok = alpha_perfect == 1.0 and worst < 1e-9 and pearson_worst < 1e-9
    verdict("survey-statistics", ok,
            f"perfect-table alpha {alpha_perfect}, formula gap {worst:.1e}, "
            f"pearson gap {pearson_worst:.1e}")


# ---------------------------------------------------------------- criterion 9

def test_overcooked_desk_scale_learning():
    rows = [json.loads(l) for l in need("oc_cec/metrics.jsonl").open()]
    returns = np.array([r["mean_return"] for r in rows])
    windows = [w.mean() for w in np.array_split(returns, 10)]
    monotone = all(b >= a for a, b in zip(windows, windows[1:]))
    summary = json.loads(need("evals/summary.json").read_text())
    oc = summary["oc"]
    coverage = oc["layouts_with_delivery"] / oc["layouts"]
    ok = monotone and coverage >= 0.5
    verdict("overcooked-desk-scale", ok,
            f"10-window means {['%.1f' % w for w in windows]}, "
            f"delivery on {oc['layouts_with_delivery']}/{oc['layouts']} "
            f"layouts")
