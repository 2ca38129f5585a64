"""Does freeing adam_eps (and input scale) unfreeze the actor?

Arms at envs=8, dd-fixed, flat lr 3e-4:
  A: eps=1e-5 scale=1  (baseline, known flat)   150 updates
  B: eps=1e-8 scale=1                           400 updates
  C: eps=1e-8 scale=8                           400 updates
"""
import dataclasses
import sys

import numpy as np
import torch

sys.path.insert(0, "/root/pkg/src")
from cooplab import nets
from cooplab.training import PPOConfig, TrainRunSpec, Trainer, ppo_update


def group_of(name):
    head = name.split(".")[0]
    if head in ("convs", "fcs"):
        return "enc"
    if head == "lstm":
        return "lstm"
    if head in ("actor", "actor_out"):
        return "actor"
    return "critic"


def run_arm(label, eps, scale, updates):
    spec = TrainRunSpec(algorithm="ippo-selfplay", env_kind="dual-dest",
                        env_source={"kind": "dd-fixed"}, seed=7, num_envs=8)
    config = PPOConfig(adam_eps=eps, total_steps=10_000_000)
    tr = Trainer(spec, config, f"/root/pkg/runs/diag6-{label}")
    if scale != 1.0:
        ns = dataclasses.replace(tr.net_spec, input_scale=scale)
        init_seed = int(np.random.SeedSequence(spec.seed).spawn(4)[0].generate_state(1)[0])
        tr.net = nets.PolicyNet(ns, seed=init_seed)
        tr.net_spec = ns
        tr.hidden = tr.net.initial_hidden(tr.rows)
        tr.optimizer = torch.optim.Adam(tr.net.parameters(), lr=3e-4, eps=eps)
    update_rng = np.random.default_rng(11)
    groups = {}
    for name, p in tr.net.named_parameters():
        groups.setdefault(group_of(name), []).append(p)
    print(f"=== arm {label}: eps={eps} scale={scale} "
          f"groups={ {k: sum(p.numel() for p in v) for k, v in groups.items()} }",
          flush=True)
    for u in range(updates):
        buf = tr.collect()
        before = {k: [p.detach().clone() for p in v] for k, v in groups.items()}
        stats = ppo_update(tr.net, tr.optimizer, buf, config, lr_now=3e-4,
                           rng=update_rng)
        deltas = {k: float(np.mean([float((p - b).abs().mean())
                                    for p, b in zip(groups[k], before[k])]))
                  for k in groups}
        events = float((buf.rewards > 0).sum()) / 2.0
        ret = float(np.mean(tr.recent_returns)) if tr.recent_returns else float("nan")
        if u % 10 == 0 or u == updates - 1:
            print(f"[{label}] u={u:4d} ret={ret:+8.3f} ev={events:5.1f} "
                  f"vl={stats['value_loss']:8.2f} kl={stats['approx_kl']:+.5f} "
                  f"ent={stats['entropy']:.4f} gn={stats['grad_norm']:7.2f} "
                  f"dA={deltas['actor']:.2e} dC={deltas['critic']:.2e} "
                  f"dL={deltas.get('lstm', 0.0):.2e} dE={deltas['enc']:.2e}",
                  flush=True)


if __name__ == "__main__":
    run_arm("A", 1e-5, 1.0, 150)
    run_arm("B", 1e-8, 1.0, 400)
    run_arm("C", 1e-8, 8.0, 400)
    print("DONE", flush=True)
