"""Force balance on the policy head after probe P: is the approach signal
in the GAE advantages, and does the surrogate gradient beat the entropy
bonus at the loss level?"""
import numpy as np
import torch

from cooplab import training
from cooplab.checkpoint import load_checkpoint
from cooplab.dual_dest import dd_fixed_task
from cooplab.training import PPOConfig, TrainRunSpec, Trainer

import dataclasses

CKPT = "runs/probeP/ckpt_0010002432.ckpt"

config = PPOConfig(total_steps=10_000, adam_eps=1e-8,
                   normalize_advantages=False, anneal_lr=False)
spec = TrainRunSpec(
    algorithm="cec", env_kind="dual-dest",
    env_source={"kind": "dd-procgen",
                "holdout": [dd_fixed_task().encode()],
                "approach_bonus": 0.5},
    seed=7, num_envs=32, input_scale=8.0)

trainer = Trainer(spec, config, out_dir="/tmp/diag10")
ck = load_checkpoint(CKPT)
trainer.net.load_params(ck.params)
print("loaded", CKPT, "meta steps", ck.meta["steps"])

buf = trainer.collect()
buf.finalize(config.gamma, config.gae_lambda)

# where is the signal: advantage conditioned on distance change
env = trainer.vec
obs = buf.obs.numpy()           # (T, rows, C, H, W)
acts = buf.actions.numpy()      # (T, rows)
adv = buf.advantages.numpy()
T, rows = acts.shape
print("rollout", T, "steps x", rows, "rows; mean reward",
      float(buf.rewards.mean()))

# recover per-step distance change from the shaped vs base reward:
# shaped = base + 0.5*(d_before - d_after); base is -1 except on goal (+2)
rew = buf.rewards.numpy()
base_like = np.where(rew >= 1.0, 2.0, -1.0)   # occupied steps pay +2
delta_dist = (rew - base_like) / 0.5          # positive = approached
approach = delta_dist > 0.25
retreat = delta_dist < -0.25
print(f"approach frac {approach.mean():.3f} retreat frac {retreat.mean():.3f}")
print(f"adv | approach {adv[approach].mean():+.4f}  "
      f"adv | retreat {adv[retreat].mean():+.4f}  "
      f"adv overall {adv.mean():+.4f} (std {adv.std():.3f})")

# force balance on the actor head for one full-buffer "minibatch"
batch = {
    "obs": buf.obs, "actions": buf.actions, "logp": buf.logp,
    "advantages": buf.advantages, "returns": buf.returns,
    "ep_start": buf.ep_start, "h0": buf.h0,
}
net = trainer.net
logits, values, _ = net.forward_sequence(batch["obs"], batch["h0"],
                                         batch["ep_start"])
dist = torch.distributions.Categorical(logits=logits)
new_logp = dist.log_prob(batch["actions"])
ratio = torch.exp(new_logp - batch["logp"])
surrogate = training.clipped_surrogate(ratio, batch["advantages"], 0.2).mean()
entropy = dist.entropy().mean()

actor = [p for name, p in net.named_parameters() if "actor" in name]
names = [name for name, _ in net.named_parameters() if "actor" in name]
print("actor params:", names)

g_pol = torch.autograd.grad(surrogate, actor, retain_graph=True)
g_ent = torch.autograd.grad(-config.entropy_coef * entropy, actor,
                            retain_graph=True)
pol_norm = torch.sqrt(sum((g ** 2).sum() for g in g_pol))
ent_norm = torch.sqrt(sum((g ** 2).sum() for g in g_ent))
cos = (sum((a * b).sum() for a, b in zip(g_pol, g_ent))
       / (pol_norm * ent_norm + 1e-12))
print(f"actor-head grad norms: surrogate {pol_norm:.5f} "
      f"entropy-term {ent_norm:.5f} cosine {cos:+.3f}")

# total gradient norm decomposition
all_params = list(net.parameters())
value_loss = torch.nn.functional.mse_loss(values, batch["returns"])
for label, term in (("surrogate", surrogate),
                    ("entropy", -config.entropy_coef * entropy),
                    ("value", config.value_coef * value_loss)):
    gs = torch.autograd.grad(term, all_params, retain_graph=True,
                             allow_unused=True)
    norm = torch.sqrt(sum((g ** 2).sum() for g in gs if g is not None))
    print(f"total grad norm from {label}: {norm:.4f}")

# does the policy already approach more than chance?
probs = torch.softmax(logits, dim=-1)
print("mean action probs", probs.mean(dim=(0, 1)).detach().numpy().round(4))
