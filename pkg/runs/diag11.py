"""Probe: does reward scaling unfreeze the actor on shaped dd-procgen?

Probe P (20M steps, input_scale 8, raw advantages, reward_scale 1) ended
frozen at uniform with value grad norms ~200.  Hypothesis: value targets
of O(+-100) force the critic into a high-gain regime whose gradients
monopolize the global clip.  Candidate fix: reward_scale 0.01 keeps value
targets O(1); normalized advantages restore actor signal size.

B: reward_scale 0.01, norm adv, input_scale 1, adam_eps 1e-5, lr 3e-4
C: same but lr 1e-3
"""
import json
import os
import sys
import time

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from cooplab.dual_dest import dd_fixed_task
from cooplab.training import PPOConfig, Trainer, TrainRunSpec

UPDATES = 150
ENVS = 16
ROLLOUT = 256

SOURCE = {"kind": "dd-procgen",
          "holdout": [dd_fixed_task().encode()],
          "approach_bonus": 0.5}

VARIANTS = {
    "B": dict(learning_rate=3e-4),
    "C": dict(learning_rate=1e-3),
}


def run(name, overrides):
    out = os.path.join(os.path.dirname(__file__), f"diag11-{name}")
    spec = TrainRunSpec(algorithm="cec", env_kind="dual-dest",
                        env_source=SOURCE, seed=7, num_envs=ENVS,
                        net_scale="compact", recurrent=True, input_scale=1.0)
    config = PPOConfig(total_steps=UPDATES * ENVS * ROLLOUT,
                       rollout_len=ROLLOUT, anneal_lr=False,
                       normalize_advantages=True, adam_eps=1e-5,
                       reward_scale=0.01, **overrides)
    t0 = time.time()
    Trainer(spec, config, out).train()
    took = time.time() - t0
    print(f"=== variant {name} ({took:.0f}s) ===", flush=True)
    with open(os.path.join(out, "metrics.jsonl")) as fh:
        records = [json.loads(line) for line in fh]
    for rec in records[::15] + [records[-1]]:
        print(f"  u={rec['update']:4d} ret={rec['mean_return']:8.2f} "
              f"deliv={rec.get('mean_deliveries', float('nan')):6.2f} "
              f"ent={rec['entropy']:.3f} vl={rec['value_loss']:.4f} "
              f"gn={rec['grad_norm']:8.3f} kl={rec['approx_kl']:.5f} "
              f"cf={rec['clip_frac']:.3f}", flush=True)


if __name__ == "__main__":
    for name in sys.argv[1:] or list(VARIANTS):
        run(name, VARIANTS[name])
