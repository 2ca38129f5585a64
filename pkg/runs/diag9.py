"""Arms K/I/J: raw (un-normalized) advantages with eps=1e-8, scale=8.

K: fixed task, envs 8 (cheap read on the dynamics)
I: fixed task, envs 32
J: procgen tasks, envs 32
"""
import dataclasses
import sys

import numpy as np
import torch

sys.path.insert(0, "/root/pkg/src")
from cooplab import nets
from cooplab.dual_dest import dd_fixed_task
from cooplab.training import PPOConfig, TrainRunSpec, Trainer, ppo_update


def run_arm(label, source, algo, envs, updates, norm):
    spec = TrainRunSpec(algorithm=algo, env_kind="dual-dest",
                        env_source=source, seed=7, num_envs=envs)
    config = PPOConfig(adam_eps=1e-8, total_steps=80_000_000,
                       normalize_advantages=norm)
    tr = Trainer(spec, config, f"/root/pkg/runs/diag9-{label}")
    ns = dataclasses.replace(tr.net_spec, input_scale=8.0)
    init_seed = int(np.random.SeedSequence(spec.seed).spawn(4)[0].generate_state(1)[0])
    tr.net = nets.PolicyNet(ns, seed=init_seed)
    tr.net_spec = ns
    tr.hidden = tr.net.initial_hidden(tr.rows)
    tr.optimizer = torch.optim.Adam(tr.net.parameters(), lr=3e-4, eps=1e-8)
    update_rng = np.random.default_rng(11)
    print(f"=== arm {label}: algo={algo} source={source['kind']} envs={envs} "
          f"norm={norm}", flush=True)
    for u in range(updates):
        buf = tr.collect()
        stats = ppo_update(tr.net, tr.optimizer, buf, config, lr_now=3e-4,
                           rng=update_rng)
        events = float((buf.rewards > 0).sum()) / 2.0
        ret = float(np.mean(tr.recent_returns)) if tr.recent_returns else float("nan")
        if u % 10 == 0 or u == updates - 1:
            print(f"[{label}] u={u:4d} ret={ret:+8.3f} ev={events:6.1f} "
                  f"vl={stats['value_loss']:8.2f} kl={stats['approx_kl']:+.5f} "
                  f"ent={stats['entropy']:.4f} gn={stats['grad_norm']:8.2f}",
                  flush=True)


if __name__ == "__main__":
    held = [dd_fixed_task().encode()]
    run_arm("K", {"kind": "dd-fixed"}, "ippo-selfplay", 8, 400, False)
    run_arm("I", {"kind": "dd-fixed"}, "ippo-selfplay", 32, 300, False)
    run_arm("J", {"kind": "dd-procgen", "holdout": held}, "cec", 32, 300, False)
    print("DONE", flush=True)
