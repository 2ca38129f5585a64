"""Actor-critic network: conv encoder, gated recurrent core, two heads.

The reference architecture encodes the observation planes with two 2x2
convolutions (stride 1, no padding, so 9x9 -> 8x8 -> 7x7), flattens, and
applies two dense layers. The encoding feeds a single-layer LSTM core
whose state is zeroed at episode boundaries; a spec may set the recurrent
width to 0, which replaces the core with the identity (the forward output
then depends only on the current observation). Actor and critic heads are
small dense stacks on the core output.

All parameters are 32-bit floats. Weights are orthogonally initialized
(semi-orthogonal along the smaller dimension for non-square matrices)
with per-layer gains: sqrt(2) for the encoder and head hidden layers,
0.01 for the actor output, 1.0 for the critic output, 1.0 for the LSTM
(each of its four gate blocks separately; gate order is torch's
input/forget/cell/output). All biases start at zero. ReLU everywhere.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np
import torch
from torch import nn

from .core import ConfigError


@dataclasses.dataclass(frozen=True)
class NetworkSpec:
    """Layer widths for one policy network.

    The reference scale is conv (64, 32), dense (512, 512), recurrent 256,
    actor (256, 192, 128) plus an extra 64 for the kitchen game, critic
    (512, 256) plus (192, 128) for the kitchen game. Desk-scale runs use
    `compact_spec`.
    """

    obs_shape: tuple[int, int, int]      # (planes, rows, cols)
    num_actions: int
    conv_channels: tuple[int, ...] = (64, 32)
    fc_widths: tuple[int, ...] = (512, 512)
    recurrent_width: int = 256           # 0 disables the recurrent core
    actor_widths: tuple[int, ...] = (256, 192, 128)
    critic_widths: tuple[int, ...] = (512, 256)
    # Fixed multiplier applied to observations before the first conv.
    # Board planes are sparse binaries with tiny norm; norm-preserving
    # orthogonal layers carry that starvation all the way to the heads,
    # which stalls the critic for thousands of updates. A constant input
    # scale conditions the features without touching the architecture.
    input_scale: float = 1.0

    def __post_init__(self):
        planes, rows, cols = self.obs_shape
        if min(planes, rows, cols) < 1 or self.num_actions < 2:
            raise ConfigError("bad observation shape or action count")
        if not (self.input_scale > 0 and math.isfinite(self.input_scale)):
            raise ConfigError("input_scale must be positive and finite")
        if any(w < 1 for w in (self.conv_channels + self.fc_widths
                               + self.actor_widths + self.critic_widths)):
            raise ConfigError("layer widths must be positive")
        if self.recurrent_width < 0:
            raise ConfigError("recurrent width must be >= 0")
        shrink = len(self.conv_channels)
        if rows - shrink < 1 or cols - shrink < 1:
            raise ConfigError(f"{len(self.conv_channels)} 2x2 convs do not fit "
                              f"on a {rows}x{cols} grid")

    @property
    def core_width(self) -> int:
        if self.recurrent_width:
            return self.recurrent_width
        return self.fc_widths[-1] if self.fc_widths else self.flat_size

    @property
    def flat_size(self) -> int:
        planes, rows, cols = self.obs_shape
        channels = self.conv_channels[-1] if self.conv_channels else planes
        return channels * (rows - len(self.conv_channels)) * (cols - len(self.conv_channels))

    def to_dict(self) -> dict:
        return {
            "obs_shape": list(self.obs_shape), "num_actions": self.num_actions,
            "conv_channels": list(self.conv_channels), "fc_widths": list(self.fc_widths),
            "recurrent_width": self.recurrent_width,
            "actor_widths": list(self.actor_widths),
            "critic_widths": list(self.critic_widths),
            "input_scale": self.input_scale,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "NetworkSpec":
        return cls(obs_shape=tuple(data["obs_shape"]), num_actions=data["num_actions"],
                   conv_channels=tuple(data["conv_channels"]),
                   fc_widths=tuple(data["fc_widths"]),
                   recurrent_width=data["recurrent_width"],
                   actor_widths=tuple(data["actor_widths"]),
                   critic_widths=tuple(data["critic_widths"]),
                   input_scale=float(data.get("input_scale", 1.0)))


def reference_spec(game_spec) -> NetworkSpec:
    """The published architecture for either game."""
    if game_spec.kind == "overcooked":
        return NetworkSpec(obs_shape=game_spec.obs_shape,
                           num_actions=game_spec.num_actions,
                           actor_widths=(256, 192, 128, 64),
                           critic_widths=(512, 256, 192, 128))
    return NetworkSpec(obs_shape=game_spec.obs_shape, num_actions=game_spec.num_actions)


def compact_spec(game_spec, recurrent: bool = True) -> NetworkSpec:
    """Small spec for single-core training runs; same topology, thinner."""
    if game_spec.kind == "overcooked":
        return NetworkSpec(obs_shape=game_spec.obs_shape,
                           num_actions=game_spec.num_actions,
                           conv_channels=(24, 24), fc_widths=(128,),
                           recurrent_width=96 if recurrent else 0,
                           actor_widths=(96,), critic_widths=(96,))
    return NetworkSpec(obs_shape=game_spec.obs_shape, num_actions=game_spec.num_actions,
                       conv_channels=(16, 16), fc_widths=(96,),
                       recurrent_width=64 if recurrent else 0,
                       actor_widths=(64,), critic_widths=(64,))


def _orthogonal(tensor: torch.Tensor, gain: float) -> None:
    nn.init.orthogonal_(tensor, gain=gain)


def _init_linear(layer: nn.Linear, gain: float) -> None:
    _orthogonal(layer.weight, gain)
    nn.init.zeros_(layer.bias)


class PolicyNet(nn.Module):
    """See the module docstring for the layout and init rules."""

    def __init__(self, spec: NetworkSpec, seed: int = 0):
        super().__init__()
        self.spec = spec
        planes = spec.obs_shape[0]
        with torch.random.fork_rng():
            torch.manual_seed(seed)
            convs = []
            in_ch = planes
            for out_ch in spec.conv_channels:
                conv = nn.Conv2d(in_ch, out_ch, kernel_size=2, stride=1)
                _orthogonal(conv.weight, math.sqrt(2))
                nn.init.zeros_(conv.bias)
                convs.append(conv)
                in_ch = out_ch
            self.convs = nn.ModuleList(convs)
            fcs = []
            width = spec.flat_size
            for out_w in spec.fc_widths:
                layer = nn.Linear(width, out_w)
                _init_linear(layer, math.sqrt(2))
                fcs.append(layer)
                width = out_w
            self.fcs = nn.ModuleList(fcs)
            if spec.recurrent_width:
                self.lstm = nn.LSTM(width, spec.recurrent_width)
                for name, param in self.lstm.named_parameters():
                    if "bias" in name:
                        nn.init.zeros_(param)
                    else:
                        # orthogonalize each gate block separately
                        for block in param.chunk(4, dim=0):
                            _orthogonal(block, 1.0)
            else:
                self.lstm = None
            width = spec.core_width
            actor = []
            for out_w in spec.actor_widths:
                layer = nn.Linear(width, out_w)
                _init_linear(layer, 2.0)
                actor.append(layer)
                width = out_w
            self.actor = nn.ModuleList(actor)
            self.actor_out = nn.Linear(width, spec.num_actions)
            _init_linear(self.actor_out, 0.01)
            width = spec.core_width
            critic = []
            for out_w in spec.critic_widths:
                layer = nn.Linear(width, out_w)
                _init_linear(layer, 2.0)
                critic.append(layer)
                width = out_w
            self.critic = nn.ModuleList(critic)
            self.critic_out = nn.Linear(width, 1)
            _init_linear(self.critic_out, 1.0)

    def encode(self, obs: torch.Tensor) -> torch.Tensor:
        """Conv + dense encoder over a flat batch of observations."""
        if not torch.isfinite(obs).all():
            raise FloatingPointError("nonfinite observation")
        x = obs * self.spec.input_scale if self.spec.input_scale != 1.0 else obs
        for conv in self.convs:
            x = torch.relu(conv(x))
        x = x.flatten(1)
        for fc in self.fcs:
            x = torch.relu(fc(x))
        return x

    def initial_hidden(self, batch: int):
        if self.lstm is None:
            return None
        width = self.spec.recurrent_width
        dtype = self.lstm.weight_hh_l0.dtype
        return (torch.zeros(1, batch, width, dtype=dtype),
                torch.zeros(1, batch, width, dtype=dtype))

    def _heads(self, core: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        x = core
        for layer in self.actor:
            x = torch.relu(layer(x))
        logits = self.actor_out(x)
        y = core
        for layer in self.critic:
            y = torch.relu(layer(y))
        value = self.critic_out(y).squeeze(-1)
        return logits, value

    def forward_step(self, obs: torch.Tensor, hidden, ep_start: torch.Tensor):
        """One time step over a batch: (B,C,H,W) -> (logits, value, hidden')."""
        feats = self.encode(obs)
        if self.lstm is None:
            logits, value = self._heads(feats)
            return logits, value, None
        if hidden is None:
            hidden = self.initial_hidden(obs.shape[0])
        keep = (~ep_start).to(feats.dtype).view(1, -1, 1)
        h = (hidden[0] * keep, hidden[1] * keep)
        out, h_next = self.lstm(feats.unsqueeze(0), h)
        logits, value = self._heads(out.squeeze(0))
        return logits, value, h_next

    def forward_sequence(self, obs: torch.Tensor, hidden, ep_start: torch.Tensor):
        """A whole rollout segment: (T,B,C,H,W) -> ((T,B,A), (T,B), hidden').

        Episode starts inside the segment zero the memory of the affected
        rows. When every reset step resets the whole batch at once (the
        aligned-episode layout the trainers produce) the core runs in a
        few fused chunks; otherwise it falls back to stepping.
        """
        t_len, batch = obs.shape[:2]
        feats = self.encode(obs.reshape(t_len * batch, *obs.shape[2:]))
        feats = feats.reshape(t_len, batch, -1)
        if self.lstm is None:
            logits, values = self._heads(feats.reshape(t_len * batch, -1))
            return (logits.reshape(t_len, batch, -1),
                    values.reshape(t_len, batch), None)
        if hidden is None:
            hidden = self.initial_hidden(batch)
        any_reset = ep_start.any(dim=1)
        all_reset = ep_start.all(dim=1)
        if bool((any_reset == all_reset).all()):
            outs = []
            start = 0
            h = hidden
            boundaries = [int(i) for i in torch.nonzero(any_reset).flatten()] + [t_len]
            for boundary in boundaries:
                if boundary > start:
                    out, h = self.lstm(feats[start:boundary], h)
                    outs.append(out)
                    start = boundary
                if boundary < t_len and any_reset[boundary]:
                    h = self.initial_hidden(batch)
            core = torch.cat(outs, dim=0) if len(outs) > 1 else outs[0]
        else:
            h = hidden
            steps = []
            for t in range(t_len):
                keep = (~ep_start[t]).to(feats.dtype).view(1, -1, 1)
                h = (h[0] * keep, h[1] * keep)
                out, h = self.lstm(feats[t:t + 1], h)
                steps.append(out)
            core = torch.cat(steps, dim=0)
        logits, values = self._heads(core.reshape(t_len * batch, -1))
        return logits.reshape(t_len, batch, -1), values.reshape(t_len, batch), h

    def state_dict_np(self) -> dict[str, np.ndarray]:
        return {name: tensor.detach().numpy().astype(np.float32, copy=True)
                for name, tensor in self.state_dict().items()}

    def load_params(self, params: dict[str, np.ndarray]) -> None:
        tensors = {name: torch.from_numpy(np.asarray(arr, dtype=np.float32))
                   for name, arr in params.items()}
        self.load_state_dict(tensors)


def net_init(spec: NetworkSpec, seed: int = 0) -> dict[str, np.ndarray]:
    """Freshly initialized named parameter arrays for `spec`."""
    return PolicyNet(spec, seed=seed).state_dict_np()


def net_forward(net: PolicyNet, obs: np.ndarray, hidden, ep_start: bool | np.ndarray):
    """Single-observation convenience wrapper around forward_step."""
    single = obs.ndim == 3
    if single:
        obs = obs[None]
        ep_start = np.array([bool(ep_start)])
    with torch.no_grad():
        logits, value, h_next = net.forward_step(
            torch.from_numpy(np.asarray(obs, dtype=np.float32)),
            hidden, torch.from_numpy(np.asarray(ep_start, dtype=bool)))
    if single:
        return logits[0].numpy(), float(value[0]), h_next
    return logits.numpy(), value.numpy(), h_next


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def sample_action(logits: np.ndarray, rng: np.random.Generator):
    """Sample from softmax(logits); returns (action ids, log-probabilities).

    Accepts a single logit vector or a batch; temperature is 1.
    """
    logits = np.asarray(logits)
    if not np.isfinite(logits).all():
        raise FloatingPointError("nonfinite logits")
    single = logits.ndim == 1
    batch_logits = logits[None] if single else logits
    logp = log_softmax(batch_logits)
    cumulative = np.cumsum(np.exp(logp), axis=-1)
    draws = rng.random((batch_logits.shape[0], 1))
    actions = (cumulative < draws).sum(axis=-1)
    actions = np.minimum(actions, batch_logits.shape[-1] - 1)
    picked = logp[np.arange(batch_logits.shape[0]), actions]
    if single:
        return int(actions[0]), float(picked[0])
    return actions.astype(np.int64), picked.astype(np.float32)


class NetPolicy:
    """core.Policy adapter around a PolicyNet for scalar rollouts and
    evaluation batches."""

    def __init__(self, net: PolicyNet, policy_id: str, greedy: bool = False):
        self.net = net
        self.policy_id = policy_id
        self.greedy = greedy

    def initial_state(self, batch: int):
        return self.net.initial_hidden(batch)

    def act(self, obs: np.ndarray, state, ep_start: np.ndarray,
            rng: np.random.Generator):
        with torch.no_grad():
            logits, value, h_next = self.net.forward_step(
                torch.from_numpy(np.asarray(obs, dtype=np.float32)), state,
                torch.from_numpy(np.asarray(ep_start, dtype=bool)))
        logits_np = logits.numpy()
        if self.greedy:
            actions = logits_np.argmax(axis=-1).astype(np.int64)
            logp = log_softmax(logits_np)[np.arange(len(actions)), actions]
        else:
            actions, logp = sample_action(logits_np, rng)
        return actions, np.asarray(logp, np.float32), value.numpy(), h_next
