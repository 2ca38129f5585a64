"""Control probe: fixed-task self-play under the reward-scaled recipe.

If the policy cannot learn to park on the two greens of ONE memorizable
task, the blocker is in the training machinery, not in procgen
generalization.  Recipe mirrors diag11-C (reward_scale 0.01, normalized
advantages, lr 1e-3) on dd-fixed with approach shaping.
"""
import json
import os
import sys
import time

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from cooplab.training import PPOConfig, Trainer, TrainRunSpec

UPDATES = 300
ENVS = 16
ROLLOUT = 256

SOURCE = {"kind": "dd-fixed", "approach_bonus": 0.5}


def main():
    out = os.path.join(os.path.dirname(__file__), "diag12-ippo")
    spec = TrainRunSpec(algorithm="ippo-selfplay", env_kind="dual-dest",
                        env_source=SOURCE, seed=7, num_envs=ENVS,
                        net_scale="compact", recurrent=True, input_scale=1.0)
    config = PPOConfig(total_steps=UPDATES * ENVS * ROLLOUT,
                       rollout_len=ROLLOUT, anneal_lr=False,
                       normalize_advantages=True, adam_eps=1e-5,
                       reward_scale=0.01, learning_rate=1e-3)
    t0 = time.time()
    Trainer(spec, config, out).train()
    print(f"=== fixed-task ippo ({time.time() - t0:.0f}s) ===", flush=True)
    with open(os.path.join(out, "metrics.jsonl")) as fh:
        records = [json.loads(line) for line in fh]
    for rec in records[::20] + [records[-1]]:
        print(f"  u={rec['update']:4d} ret={rec['mean_return']:8.2f} "
              f"ent={rec['entropy']:.3f} vl={rec['value_loss']:.4f} "
              f"gn={rec['grad_norm']:8.3f} kl={rec['approx_kl']:.5f} "
              f"cf={rec['clip_frac']:.3f}", flush=True)


if __name__ == "__main__":
    main()
