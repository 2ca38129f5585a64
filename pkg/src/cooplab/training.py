"""PPO self-play and population training for the cooperative games.

Four regimes share one trainer:

* fixed-task self-play: both seats run the same parameters on one task,
  every episode (the usual independent-PPO baseline);
* distribution self-play: same, but every episode reset draws a fresh
  task from a generator, so the pair never sees the same world twice;
* population best response: one learning policy paired each episode
  with a partner sampled uniformly from a frozen checkpoint pool,
  sitting in a random seat;
* finetune: fixed-task self-play continued from a checkpoint at a
  reduced learning rate.

Rollouts are collected from a batch of aligned-episode environments, so
recurrent state resets hit every row at once and the update can run the
memory core over fused sequence chunks. When both seats learn, each
seat's transitions enter the same buffer and the same gradient.

A run is fully determined by (run spec, ppo config, seed): network init,
task draws, action sampling, and partner seating each consume an
independent child stream of the run seed, and checkpoints contain no
wall-clock state, so re-running a seed reproduces identical bytes.
"""

from __future__ import annotations

import dataclasses
import json
import os

import numpy as np
import torch
import yaml

from . import procgen
from .checkpoint import load_checkpoint, save_checkpoint
from .core import ConfigError
from .dual_dest import FULL, DualDestTask, DualDestVecEnv, dd_fixed_task, dd_sample_task
from .nets import (NetPolicy, PolicyNet, compact_spec, log_softmax,
                   reference_spec, sample_action)
from .overcooked import OvercookedConfig, OvercookedVecEnv

ALGORITHMS = ("ippo-selfplay", "cec", "fcp", "finetune")


@dataclasses.dataclass(frozen=True)
class PPOConfig:
    """Optimizer and objective constants; defaults follow the published
    table, with the step budget meant to be overridden for desk runs."""

    learning_rate: float = 3e-4
    rollout_len: int = 256
    total_steps: int = 3_000_000_000
    update_epochs: int = 4
    num_minibatches: int = 2
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_eps: float = 0.2
    entropy_coef: float = 0.005
    value_coef: float = 1.0
    max_grad_norm: float = 0.5
    anneal_lr: bool = True
    adam_eps: float = 1e-5
    normalize_advantages: bool = True
    reward_scale: float = 1.0          # multiplies rewards before GAE only

    def __post_init__(self):
        positive = (self.learning_rate, self.rollout_len, self.total_steps,
                    self.update_epochs, self.num_minibatches, self.value_coef,
                    self.max_grad_norm, self.adam_eps, self.reward_scale)
        if any(v <= 0 for v in positive) or self.entropy_coef < 0:
            raise ConfigError("ppo config fields must be positive")
        if not 0 < self.clip_eps < 1:
            raise ConfigError("clip epsilon must lie in (0,1)")
        if not (0 < self.gamma <= 1 and 0 < self.gae_lambda <= 1):
            raise ConfigError("gamma and lambda must lie in (0,1]")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclasses.dataclass(frozen=True)
class TrainRunSpec:
    """What to train: algorithm, world source, seating noise, seed."""

    algorithm: str
    env_kind: str                      # dual-dest | overcooked
    env_source: dict
    seed: int
    partner_eps: float = 0.0
    num_envs: int = 64
    checkpoint_every: int = 0          # env steps between snapshots; 0 = final only
    net_scale: str = "compact"         # compact | reference
    recurrent: bool = True
    input_scale: float = 1.0           # observation multiplier before the encoder
    torch_threads: int = 1

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algorithm!r}")
        if not 0.0 <= self.partner_eps <= 1.0:
            raise ConfigError("partner randomness must lie in [0,1]")
        if self.num_envs < 1 or self.torch_threads < 1:
            raise ConfigError("num_envs and torch_threads must be positive")
        if self.net_scale not in ("compact", "reference"):
            raise ConfigError(f"unknown net scale {self.net_scale!r}")
        if not (self.input_scale > 0 and np.isfinite(self.input_scale)):
            raise ConfigError("input scale must be positive and finite")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def write_run_config(path, run_spec: TrainRunSpec, config: PPOConfig) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump({"run": run_spec.to_dict(), "ppo": config.to_dict()},
                       fh, sort_keys=True)


def load_run_config(path) -> tuple[TrainRunSpec, PPOConfig]:
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    return TrainRunSpec(**raw["run"]), PPOConfig(**raw["ppo"])


# ------------------------------------------------------------------ envs

def _oc_config(source: dict) -> OvercookedConfig:
    keys = ("cook_time", "delivery_reward", "horizon",
            "onion_in_pot_bonus", "soup_pickup_bonus")
    return OvercookedConfig(**{k: source[k] for k in keys if k in source})


def resolve_env(env_kind: str, source: dict, batch: int,
                rng: np.random.Generator):
    """Build the vectorized world a run trains in.

    Source kinds: dd-fixed, dd-task (one encoded task), dd-procgen
    (fresh task per episode, held-out records rejected), oc-layout (one
    encoded kitchen), oc-corpus (uniform over a layout list), oc-procgen
    (fresh kitchen per episode). Recipe constants ride along in the
    source mapping for the kitchen kinds.
    """
    kind = source.get("kind")
    if env_kind == "dual-dest":
        obs = source.get("obs", FULL)
        horizon = source.get("horizon", 100)
        bonus = float(source.get("approach_bonus", 0.0))
        if kind == "dd-fixed":
            task = dd_fixed_task(obs=obs, horizon=horizon)
            return (DualDestVecEnv(batch, [task] * batch, rng,
                                   approach_bonus=bonus), task.spec())
        if kind == "dd-task":
            task = DualDestTask.decode(source["task"])
            return (DualDestVecEnv(batch, [task] * batch, rng,
                                   approach_bonus=bonus), task.spec())
        if kind == "dd-procgen":
            held = tuple(DualDestTask.decode(r) for r in source.get("holdout", ()))
            variant = source.get("variant", "single")

            def sample(task_rng):
                return dd_sample_task(task_rng, variant=variant, held_out=held,
                                      obs=obs, horizon=horizon)

            probe = sample(np.random.default_rng(0))
            return (DualDestVecEnv(batch, sample, rng,
                                   approach_bonus=bonus), probe.spec())
        raise ConfigError(f"unknown dual-dest source {kind!r}")
    if env_kind == "overcooked":
        config = _oc_config(source)
        if kind == "oc-layout":
            layout = procgen.decode_layout_line(source["layout"])
            return OvercookedVecEnv(batch, [layout] * batch, rng, config), config.spec()
        if kind == "oc-corpus":
            layouts = [procgen.decode_layout_line(line) for line in source["layouts"]]
            if not layouts:
                raise ConfigError("empty layout corpus")

            def pick(task_rng):
                return layouts[int(task_rng.integers(len(layouts)))]

            return OvercookedVecEnv(batch, pick, rng, config), config.spec()
        if kind == "oc-procgen":
            templates = procgen.load_templates()
            held = procgen.held_out_layouts()

            def gen(task_rng):
                return procgen.generate_layout(task_rng, templates, held)

            return OvercookedVecEnv(batch, gen, rng, config), config.spec()
        raise ConfigError(f"unknown overcooked source {kind!r}")
    raise ConfigError(f"unknown environment kind {env_kind!r}")


def resolve_net_spec(run_spec: TrainRunSpec, game_spec):
    if run_spec.net_scale == "reference":
        base = reference_spec(game_spec)
        if not run_spec.recurrent:
            base = dataclasses.replace(base, recurrent_width=0)
    else:
        base = compact_spec(game_spec, recurrent=run_spec.recurrent)
    if run_spec.input_scale != 1.0:
        base = dataclasses.replace(base, input_scale=run_spec.input_scale)
    return base


# ------------------------------------------------------------------ GAE

def compute_gae(rewards, values, dones, bootstrap_value, gamma: float,
                lam: float):
    """Generalized advantage estimation by the backward recursion
    delta_t = r_t + gamma*V_{t+1}*(1-done_t) - V_t,
    A_t = delta_t + gamma*lam*(1-done_t)*A_{t+1}; returns = A + V.

    Accepts (T,) or (T, rows) arrays; math in float64. The value after
    the window is `bootstrap_value` (scalar or (rows,)).
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=bool)
    boot = np.asarray(bootstrap_value, dtype=np.float64)
    if rewards.shape != values.shape or rewards.shape != dones.shape:
        raise ValueError("rewards, values, dones must share a shape")
    if not (np.isfinite(rewards).all() and np.isfinite(values).all()
            and np.isfinite(boot).all()):
        raise FloatingPointError("nonfinite inputs to advantage estimation")
    t_len = rewards.shape[0]
    advantages = np.zeros_like(rewards)
    running = np.zeros_like(boot, dtype=np.float64)
    next_value = boot
    for t in range(t_len - 1, -1, -1):
        alive = ~dones[t]
        delta = rewards[t] + gamma * next_value * alive - values[t]
        running = delta + gamma * lam * alive * running
        advantages[t] = running
        next_value = values[t]
    return advantages, advantages + values


# ------------------------------------------------------------------ buffer

@dataclasses.dataclass
class RolloutBuffer:
    """One collection window: (T, rows) tensors plus the recurrent state
    the window started from. Rows are independent sequences."""

    obs: torch.Tensor          # (T, R, C, H, W)
    actions: torch.Tensor      # (T, R)
    logp: torch.Tensor         # (T, R)
    values: torch.Tensor       # (T, R)
    rewards: torch.Tensor      # (T, R)
    dones: torch.Tensor        # (T, R) bool, done after the step
    ep_start: torch.Tensor     # (T, R) bool, step begins an episode
    h0: tuple | None           # recurrent state at window start
    bootstrap: torch.Tensor    # (R,) value of the post-window state
    advantages: torch.Tensor | None = None
    returns: torch.Tensor | None = None

    @property
    def rows(self) -> int:
        return self.obs.shape[1]

    def finalize(self, gamma: float, lam: float,
                 reward_scale: float = 1.0) -> None:
        """Fill advantages/returns. `reward_scale` rescales rewards before
        the recursion so value targets stay near unit size when raw
        episode returns run to hundreds; stored rewards stay untouched."""
        adv, ret = compute_gae(self.rewards.numpy() * reward_scale,
                               self.values.numpy(),
                               self.dones.numpy(), self.bootstrap.numpy(),
                               gamma, lam)
        self.advantages = torch.from_numpy(adv.astype(np.float32))
        self.returns = torch.from_numpy(ret.astype(np.float32))


# ------------------------------------------------------------------ update

def clipped_surrogate(ratio: torch.Tensor, adv: torch.Tensor,
                      clip_eps: float) -> torch.Tensor:
    """Per-sample negated PPO objective: -min(r*A, clip(r)*A). Flat in r
    beyond the clip range whenever the advantage pushes that way."""
    unclipped = ratio * adv
    clipped = torch.clamp(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * adv
    return -torch.minimum(unclipped, clipped)


def ppo_loss(net: PolicyNet, batch: dict, config: PPOConfig):
    """Clipped-surrogate loss on one minibatch of whole rows.

    Advantages are standardized per minibatch when the config asks for
    it; raw advantages otherwise keep sparse-reward gradients scaled by
    the actual payoff instead of inflating minibatch noise to unit size.
    Returns the scalar loss and unweighted diagnostic terms.
    """
    logits, values, _ = net.forward_sequence(batch["obs"], batch["h0"],
                                             batch["ep_start"])
    dist = torch.distributions.Categorical(logits=logits)
    new_logp = dist.log_prob(batch["actions"])
    entropy = dist.entropy().mean()
    ratio = torch.exp(new_logp - batch["logp"])
    adv = batch["advantages"]
    if config.normalize_advantages:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    policy_loss = clipped_surrogate(ratio, adv, config.clip_eps).mean()
    value_loss = torch.nn.functional.mse_loss(values, batch["returns"])
    loss = (policy_loss - config.entropy_coef * entropy
            + config.value_coef * value_loss)
    with torch.no_grad():
        stats = {
            "policy_loss": float(policy_loss), "value_loss": float(value_loss),
            "entropy": float(entropy),
            "approx_kl": float((batch["logp"] - new_logp).mean()),
            "clip_frac": float(((ratio - 1.0).abs() > config.clip_eps).float().mean()),
            "ratio_dev": float((ratio - 1.0).abs().max()),
        }
    return loss, stats


def _slice_hidden(h0, rows):
    if h0 is None:
        return None
    return (h0[0][:, rows].contiguous(), h0[1][:, rows].contiguous())


def ppo_update(net: PolicyNet, optimizer: torch.optim.Optimizer,
               buffer: RolloutBuffer, config: PPOConfig,
               lr_now: float | None = None,
               rng: np.random.Generator | None = None) -> dict:
    """Run the configured epochs x minibatches over one buffer in place.

    Minibatches split whole rows so each recurrent sequence stays intact.
    Raises on a nonfinite loss. Returns averaged diagnostics; ratio_first
    is the largest |ratio - 1| seen in the first minibatch of the first
    epoch, which should sit at float rounding when the buffer was
    collected by the same parameters.
    """
    if buffer.advantages is None:
        buffer.finalize(config.gamma, config.gae_lambda, config.reward_scale)
    if lr_now is not None:
        for group in optimizer.param_groups:
            group["lr"] = lr_now
    if rng is None:
        rng = np.random.default_rng(0)
    rows = buffer.rows
    position_splits = np.array_split(np.arange(rows), config.num_minibatches)
    if any(len(s) == 0 for s in position_splits):
        raise ConfigError(f"{rows} rows cannot fill {config.num_minibatches} minibatches")
    totals: dict[str, float] = {}
    ratio_first = None
    count = 0
    for epoch in range(config.update_epochs):
        perm = rng.permutation(rows)
        for mb_rows in (perm[s] for s in position_splits):
            idx = torch.from_numpy(np.sort(mb_rows))
            batch = {
                "obs": buffer.obs[:, idx], "actions": buffer.actions[:, idx],
                "logp": buffer.logp[:, idx], "advantages": buffer.advantages[:, idx],
                "returns": buffer.returns[:, idx],
                "ep_start": buffer.ep_start[:, idx],
                "h0": _slice_hidden(buffer.h0, idx),
            }
            loss, stats = ppo_loss(net, batch, config)
            if not torch.isfinite(loss):
                raise RuntimeError(f"nonfinite loss at epoch {epoch}: {stats}")
            optimizer.zero_grad()
            loss.backward()
            grad_norm = torch.nn.utils.clip_grad_norm_(net.parameters(),
                                                       config.max_grad_norm)
            optimizer.step()
            if ratio_first is None:
                ratio_first = stats["ratio_dev"]
            stats["grad_norm"] = float(grad_norm)
            for key, val in stats.items():
                totals[key] = totals.get(key, 0.0) + val
            count += 1
    out = {key: val / count for key, val in totals.items()}
    out["ratio_first"] = ratio_first
    return out


# ------------------------------------------------------------------ partners

def mixed_probs(logits: np.ndarray, eps: float) -> np.ndarray:
    """(1-eps) * softmax(logits) + eps * uniform, batched."""
    probs = np.exp(log_softmax(logits))
    return (1.0 - eps) * probs + eps / logits.shape[-1]


def sample_from_probs(probs: np.ndarray, rng: np.random.Generator):
    cumulative = np.cumsum(probs, axis=-1)
    draws = rng.random((probs.shape[0], 1))
    actions = (cumulative < draws).sum(axis=-1)
    actions = np.minimum(actions, probs.shape[-1] - 1)
    logp = np.log(probs[np.arange(len(actions)), actions])
    return actions.astype(np.int64), logp.astype(np.float32)


class MixedPolicy:
    """A policy whose action law is (1-eps) * base + eps * uniform."""

    def __init__(self, base: NetPolicy, eps: float):
        if not 0.0 <= eps <= 1.0:
            raise ConfigError("mixture weight must lie in [0,1]")
        self.base = base
        self.eps = eps
        self.policy_id = f"{base.policy_id}+rand{eps:g}"

    def initial_state(self, batch: int):
        return self.base.initial_state(batch)

    def act(self, obs, state, ep_start, rng):
        with torch.no_grad():
            logits, value, h_next = self.base.net.forward_step(
                torch.from_numpy(np.asarray(obs, dtype=np.float32)), state,
                torch.from_numpy(np.asarray(ep_start, dtype=bool)))
        actions, logp = sample_from_probs(mixed_probs(logits.numpy(), self.eps), rng)
        return actions, logp, value.numpy(), h_next


def wrap_partner_randomness(policy: NetPolicy, eps: float):
    """eps = 0 returns the policy unchanged; otherwise an eps-mixture."""
    if eps == 0.0:
        return policy
    return MixedPolicy(policy, eps)


# ------------------------------------------------------------------ trainer

def _as_int(seq: np.random.SeedSequence) -> int:
    return int(seq.generate_state(1)[0])


class Trainer:
    """Shared engine behind the public train_* entry points."""

    def __init__(self, run_spec: TrainRunSpec, config: PPOConfig, out_dir,
                 pool_paths=(), init_params=None, lr_scale: float = 1.0,
                 extra_meta=None):
        torch.set_num_threads(run_spec.torch_threads)
        self.run_spec = run_spec
        self.config = config
        self.out_dir = os.fspath(out_dir)
        self.lr_scale = lr_scale
        self.extra_meta = dict(extra_meta or {})
        os.makedirs(self.out_dir, exist_ok=True)
        streams = np.random.SeedSequence(run_spec.seed).spawn(4)
        env_rng = np.random.default_rng(streams[1])
        self.act_rng = np.random.default_rng(streams[2])
        self.partner_rng = np.random.default_rng(streams[3])
        self.vec, self.game_spec = resolve_env(run_spec.env_kind,
                                               run_spec.env_source,
                                               run_spec.num_envs, env_rng)
        self.net_spec = resolve_net_spec(run_spec, self.game_spec)
        self.net = PolicyNet(self.net_spec, seed=_as_int(streams[0]))
        if init_params is not None:
            try:
                self.net.load_params(init_params)
            except RuntimeError as exc:
                raise ConfigError(f"checkpoint does not fit this run's network: {exc}")
        self.optimizer = torch.optim.Adam(self.net.parameters(),
                                          lr=config.learning_rate * lr_scale,
                                          eps=config.adam_eps)
        self.pool: list[PolicyNet] = []
        for path in pool_paths:
            ckpt = load_checkpoint(path)
            member = ckpt.build_net()
            member.eval()
            for param in member.parameters():
                param.requires_grad_(False)
            self.pool.append(member)
        if run_spec.algorithm == "fcp" and not self.pool:
            raise ConfigError("population best-response needs a nonempty pool")
        self.is_population = bool(self.pool)
        self.dual_seat = not self.is_population and run_spec.partner_eps == 0.0
        batch = run_spec.num_envs
        self.rows = 2 * batch if self.dual_seat else batch
        self.obs = self.vec.reset()
        self.ep_start = np.ones(batch, dtype=bool)
        self.hidden = self.net.initial_hidden(self.rows)
        self.partner_hidden = None if self.dual_seat else self.net.initial_hidden(batch)
        self.partner_idx = np.zeros(batch, dtype=np.int64)
        self.learner_seat = np.zeros(batch, dtype=np.int64)
        self._assign_partners()
        self.env_steps = 0
        self.episode_acc = np.zeros(batch, dtype=np.float64)
        self.delivery_acc = np.zeros(batch, dtype=np.int64)
        self.recent_returns: list[float] = []
        self.recent_deliveries: list[float] = []

    # -- seating ----------------------------------------------------

    def _assign_partners(self) -> None:
        """Redraw pool partners and learner seats; episode-aligned."""
        batch = self.run_spec.num_envs
        if self.is_population:
            self.partner_idx = self.partner_rng.integers(len(self.pool), size=batch)
            self.learner_seat = self.partner_rng.integers(2, size=batch)
        elif not self.dual_seat:
            self.learner_seat = np.zeros(batch, dtype=np.int64)

    # -- stepping ---------------------------------------------------

    def _learner_obs(self) -> np.ndarray:
        batch = self.run_spec.num_envs
        if self.dual_seat:
            return np.concatenate([self.obs[:, 0], self.obs[:, 1]], axis=0)
        return self.obs[np.arange(batch), self.learner_seat]

    def _partner_actions(self, ep_start_rows: np.ndarray) -> np.ndarray:
        """Frozen-pool or mixture partner actions for the non-learner seat."""
        batch = self.run_spec.num_envs
        partner_obs = self.obs[np.arange(batch), 1 - self.learner_seat]
        obs_t = torch.from_numpy(partner_obs)
        start_t = torch.from_numpy(ep_start_rows)
        actions = np.zeros(batch, dtype=np.int64)
        if self.is_population:
            for member in np.unique(self.partner_idx):
                rows = np.nonzero(self.partner_idx == member)[0]
                h = _slice_hidden(self.partner_hidden, torch.from_numpy(rows))
                with torch.no_grad():
                    logits, _, h_next = self.pool[int(member)].forward_step(
                        obs_t[rows], h, start_t[rows])
                acts, _ = sample_from_probs(
                    mixed_probs(logits.numpy(), self.run_spec.partner_eps),
                    self.partner_rng)
                actions[rows] = acts
                if h_next is not None:
                    self.partner_hidden[0][:, rows] = h_next[0]
                    self.partner_hidden[1][:, rows] = h_next[1]
            return actions
        with torch.no_grad():
            logits, _, h_next = self.net.forward_step(obs_t, self.partner_hidden,
                                                      start_t)
        self.partner_hidden = h_next
        acts, _ = sample_from_probs(
            mixed_probs(logits.numpy(), self.run_spec.partner_eps), self.partner_rng)
        return acts

    def collect(self) -> RolloutBuffer:
        spec = self.game_spec
        t_len = self.config.rollout_len
        batch = self.run_spec.num_envs
        rows = self.rows
        obs_buf = torch.zeros((t_len, rows) + spec.obs_shape)
        act_buf = torch.zeros(t_len, rows, dtype=torch.long)
        logp_buf = torch.zeros(t_len, rows)
        val_buf = torch.zeros(t_len, rows)
        rew_buf = torch.zeros(t_len, rows)
        done_buf = torch.zeros(t_len, rows, dtype=torch.bool)
        start_buf = torch.zeros(t_len, rows, dtype=torch.bool)
        h0 = None
        if self.hidden is not None:
            h0 = (self.hidden[0].detach().clone(), self.hidden[1].detach().clone())
        for t in range(t_len):
            learner_obs = self._learner_obs()
            start_rows = (np.tile(self.ep_start, 2) if self.dual_seat
                          else self.ep_start)
            obs_t = torch.from_numpy(learner_obs)
            with torch.no_grad():
                logits, values, self.hidden = self.net.forward_step(
                    obs_t, self.hidden, torch.from_numpy(start_rows))
            acts, logp = sample_action(logits.numpy(), self.act_rng)
            joint = np.zeros((batch, 2), dtype=np.int64)
            if self.dual_seat:
                joint[:, 0] = acts[:batch]
                joint[:, 1] = acts[batch:]
            else:
                joint[np.arange(batch), self.learner_seat] = acts
                joint[np.arange(batch), 1 - self.learner_seat] = \
                    self._partner_actions(self.ep_start)
            obs_buf[t] = obs_t
            act_buf[t] = torch.from_numpy(acts)
            logp_buf[t] = torch.from_numpy(logp)
            val_buf[t] = values
            start_buf[t] = torch.from_numpy(start_rows)
            next_obs, rewards, dones, events = self.vec.step(joint)
            self.obs = next_obs
            self.episode_acc += rewards
            if "deliveries" in events:
                self.delivery_acc += events["deliveries"]
            if dones.any():
                if not dones.all():
                    raise ConfigError("environment rows fell out of alignment")
                self.recent_returns.extend(self.episode_acc.tolist())
                self.recent_deliveries.extend(self.delivery_acc.tolist())
                self.episode_acc[:] = 0.0
                self.delivery_acc[:] = 0
                self._assign_partners()
            rew_rows = np.tile(rewards, 2) if self.dual_seat else rewards
            done_rows = np.tile(dones, 2) if self.dual_seat else dones
            rew_buf[t] = torch.from_numpy(rew_rows.astype(np.float32))
            done_buf[t] = torch.from_numpy(done_rows)
            self.ep_start = dones.copy()
            self.env_steps += batch
        start_rows = np.tile(self.ep_start, 2) if self.dual_seat else self.ep_start
        with torch.no_grad():
            _, boot, _ = self.net.forward_step(
                torch.from_numpy(self._learner_obs()), self.hidden,
                torch.from_numpy(start_rows))
        self.recent_returns = self.recent_returns[-200:]
        self.recent_deliveries = self.recent_deliveries[-200:]
        return RolloutBuffer(obs=obs_buf, actions=act_buf, logp=logp_buf,
                             values=val_buf, rewards=rew_buf, dones=done_buf,
                             ep_start=start_buf, h0=h0, bootstrap=boot)

    # -- bookkeeping ------------------------------------------------

    def _meta(self) -> dict:
        meta = {"algorithm": self.run_spec.algorithm,
                "env_kind": self.run_spec.env_kind,
                "seed": self.run_spec.seed, "steps": self.env_steps,
                "net_scale": self.run_spec.net_scale,
                "recurrent": self.run_spec.recurrent,
                "policy_id": f"{os.path.basename(self.out_dir)}@{self.env_steps}"}
        meta.update(self.extra_meta)
        return meta

    def save(self) -> str:
        path = os.path.join(self.out_dir, f"ckpt_{self.env_steps:010d}.ckpt")
        save_checkpoint(path, self.net_spec, self.net.state_dict_np(), self._meta())
        return path

    def train(self) -> list[str]:
        config = self.config
        run = self.run_spec
        steps_per_rollout = config.rollout_len * run.num_envs
        num_updates = config.total_steps // steps_per_rollout
        if num_updates < 1:
            raise ConfigError("total_steps below one rollout window")
        write_run_config(os.path.join(self.out_dir, "config.yaml"), run, config)
        paths = []
        next_snapshot = run.checkpoint_every
        if run.checkpoint_every:
            paths.append(self.save())
        update_rng = np.random.default_rng(
            np.random.SeedSequence(run.seed).spawn(5)[4])
        norm = self.game_spec.norm_constant
        with open(os.path.join(self.out_dir, "metrics.jsonl"), "w") as log:
            for update in range(num_updates):
                frac = 1.0 - update / num_updates
                lr_now = config.learning_rate * self.lr_scale
                if config.anneal_lr:
                    lr_now *= frac
                buffer = self.collect()
                stats = ppo_update(self.net, self.optimizer, buffer, config,
                                   lr_now=lr_now, rng=update_rng)
                mean_return = (float(np.mean(self.recent_returns))
                               if self.recent_returns else float("nan"))
                record = {"update": update, "step": self.env_steps,
                          "mean_return": round(mean_return, 6),
                          "mean_return_normalized": round(mean_return / norm, 6),
                          "lr": lr_now}
                if self.recent_deliveries:
                    record["mean_deliveries"] = round(
                        float(np.mean(self.recent_deliveries)), 6)
                for key in ("policy_loss", "value_loss", "entropy", "approx_kl",
                            "clip_frac", "grad_norm", "ratio_first"):
                    record[key] = round(stats[key], 8)
                log.write(json.dumps(record) + "\n")
                log.flush()
                if run.checkpoint_every and self.env_steps >= next_snapshot:
                    paths.append(self.save())
                    next_snapshot += run.checkpoint_every
        paths.append(self.save())
        return paths


# ------------------------------------------------------------------ entry points

def train_selfplay(run_spec: TrainRunSpec, config: PPOConfig, out_dir) -> list[str]:
    """Self-play PPO: fixed task (ippo-selfplay) or a fresh task per
    episode (cec), per run_spec.env_source. Returns checkpoint paths."""
    if run_spec.algorithm not in ("ippo-selfplay", "cec"):
        raise ConfigError(f"not a self-play algorithm: {run_spec.algorithm!r}")
    return Trainer(run_spec, config, out_dir).train()


def build_selfplay_pool(env_kind: str, env_source: dict, config: PPOConfig,
                        out_dir, base_seed: int, runs: int = 8,
                        num_envs: int = 64, net_scale: str = "compact",
                        recurrent: bool = True,
                        input_scale: float = 1.0) -> list[str]:
    """Stage 1 of population training: independent self-play runs, each
    contributing snapshots at three stages (untrained, midway, final)."""
    pool = []
    for i in range(runs):
        spec = TrainRunSpec(algorithm="ippo-selfplay", env_kind=env_kind,
                            env_source=env_source, seed=base_seed + i,
                            num_envs=num_envs,
                            checkpoint_every=config.total_steps // 2,
                            net_scale=net_scale, recurrent=recurrent,
                            input_scale=input_scale)
        paths = train_selfplay(spec, config, os.path.join(out_dir, f"member{i}"))
        steps = [load_checkpoint(p).meta["steps"] for p in paths]
        mid = min(zip(steps, paths), key=lambda sp: abs(sp[0] - steps[-1] / 2))[1]
        pool.extend([paths[0], mid, paths[-1]])
    return pool


def train_fcp(run_spec: TrainRunSpec, config: PPOConfig, pool_paths,
              out_dir) -> list[str]:
    """Stage 2: best response to a frozen pool, one partner drawn
    uniformly per episode, learner seat coin-flipped per episode."""
    if run_spec.algorithm != "fcp":
        raise ConfigError("run spec must name the fcp algorithm")
    return Trainer(run_spec, config, out_dir,
                   pool_paths=tuple(pool_paths)).train()


def finetune(checkpoint_path, run_spec: TrainRunSpec, config: PPOConfig,
             out_dir, lr_scale: float = 0.1) -> list[str]:
    """Continue self-play from a checkpoint on one fixed world at a
    scaled-down learning rate (default one tenth). The emitted
    checkpoints record the source checkpoint's identity."""
    if run_spec.algorithm != "finetune":
        raise ConfigError("run spec must name the finetune algorithm")
    ckpt = load_checkpoint(checkpoint_path)
    trainer = Trainer(run_spec, config, out_dir, init_params=ckpt.params,
                      lr_scale=lr_scale,
                      extra_meta={"source_checkpoint": ckpt.meta.get(
                          "policy_id", os.path.basename(os.fspath(checkpoint_path))),
                          "lr_scale": lr_scale})
    if trainer.net_spec != ckpt.spec:
        raise ConfigError("checkpoint spec does not match the run's network spec")
    return trainer.train()
