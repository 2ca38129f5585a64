"""Network init scales, forward semantics, sampling, and checkpoints."""

import dataclasses

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from cooplab import checkpoint as ckpt
from cooplab import core, nets
from cooplab import dual_dest as dd
from cooplab import overcooked as oc
from cooplab import procgen


DD_SPEC = dd.dd_fixed_task().spec()
TINY = nets.NetworkSpec(obs_shape=(3, 4, 4), num_actions=4,
                        conv_channels=(6,), fc_widths=(16,),
                        recurrent_width=8, actor_widths=(8,), critic_widths=(8,))


def oc_game_spec():
    return oc.OvercookedEnv(procgen.held_out_layouts()[0]).spec


# ---------------------------------------------------------------- init

def test_reference_conv1_shape_overcooked():
    net = nets.PolicyNet(nets.reference_spec(oc_game_spec()))
    # out-channels x in-planes x 2 x 2 in framework order
    assert tuple(net.convs[0].weight.shape) == (64, 26, 2, 2)


def test_reference_head_widths():
    spec_oc = nets.reference_spec(oc_game_spec())
    assert spec_oc.actor_widths == (256, 192, 128, 64)
    assert spec_oc.critic_widths == (512, 256, 192, 128)
    assert spec_oc.num_actions == 6
    spec_dd = nets.reference_spec(DD_SPEC)
    assert spec_dd.actor_widths == (256, 192, 128)
    assert spec_dd.critic_widths == (512, 256)
    assert spec_dd.num_actions == 5
    assert spec_dd.recurrent_width == 256


def _expected_gains(net):
    """(name, 2-d weight, init scale) for every weight tensor."""
    out = []
    for i, conv in enumerate(net.convs):
        out.append((f"conv{i}", conv.weight.detach().flatten(1), np.sqrt(2)))
    for i, fc in enumerate(net.fcs):
        out.append((f"fc{i}", fc.weight.detach(), np.sqrt(2)))
    if net.lstm is not None:
        for name, param in net.lstm.named_parameters():
            if "weight" in name:
                for j, block in enumerate(param.detach().chunk(4, dim=0)):
                    out.append((f"lstm.{name}.gate{j}", block, 1.0))
    for i, layer in enumerate(net.actor):
        out.append((f"actor{i}", layer.weight.detach(), 2.0))
    out.append(("actor_out", net.actor_out.weight.detach(), 0.01))
    for i, layer in enumerate(net.critic):
        out.append((f"critic{i}", layer.weight.detach(), 2.0))
    out.append(("critic_out", net.critic_out.weight.detach(), 1.0))
    return out


@pytest.mark.parametrize("spec", [nets.compact_spec(DD_SPEC), TINY], ids=["compact", "tiny"])
def test_orthogonal_init_scales(spec):
    net = nets.PolicyNet(spec, seed=3)
    for name, weight, scale in _expected_gains(net):
        w = weight.numpy().astype(np.float64)
        rows, cols = w.shape
        gram = w @ w.T if rows <= cols else w.T @ w
        expected = scale ** 2 * np.eye(min(rows, cols))
        assert np.allclose(gram, expected, atol=1e-4), name
        # off-diagonals are zero to float32 roundoff, not just 1e-4
        off = gram - np.diag(np.diag(gram))
        assert np.abs(off).max() < 1e-5, name


def test_reference_scale_square_fc_orthogonal():
    net = nets.PolicyNet(nets.reference_spec(DD_SPEC), seed=0)
    w = net.fcs[1].weight.detach().numpy().astype(np.float64)
    assert w.shape == (512, 512)
    assert np.allclose(w.T @ w, 2.0 * np.eye(512), atol=1e-4)


def test_all_biases_exactly_zero():
    net = nets.PolicyNet(nets.compact_spec(DD_SPEC), seed=11)
    for name, param in net.named_parameters():
        if "bias" in name:
            assert not param.detach().numpy().any(), name


def test_net_init_deterministic_in_seed():
    a = nets.net_init(TINY, seed=5)
    b = nets.net_init(TINY, seed=5)
    c = nets.net_init(TINY, seed=6)
    assert a.keys() == b.keys()
    assert all(np.array_equal(a[k], b[k]) for k in a)
    assert any(not np.array_equal(a[k], c[k]) for k in a)
    assert all(arr.dtype == np.float32 for arr in a.values())


def test_spec_validation():
    with pytest.raises(core.ConfigError, match="do not fit"):
        nets.NetworkSpec(obs_shape=(3, 3, 3), num_actions=4,
                         conv_channels=(4, 4, 4))
    with pytest.raises(core.ConfigError, match="positive"):
        nets.NetworkSpec(obs_shape=(3, 5, 5), num_actions=4, fc_widths=(0,))
    with pytest.raises(core.ConfigError):
        nets.NetworkSpec(obs_shape=(3, 5, 5), num_actions=4, recurrent_width=-1)
    with pytest.raises(core.ConfigError, match="input_scale"):
        nets.NetworkSpec(obs_shape=(3, 5, 5), num_actions=4, input_scale=0.0)


def test_input_scale_multiplies_observations():
    base = nets.NetworkSpec(obs_shape=(3, 5, 5), num_actions=4)
    scaled = dataclasses.replace(base, input_scale=4.0)
    obs = np.random.default_rng(0).random((2, 3, 5, 5)).astype(np.float32)
    net_a = nets.PolicyNet(base, seed=9)
    net_b = nets.PolicyNet(scaled, seed=9)
    la, va, _ = net_a.forward_step(torch.from_numpy(4.0 * obs), None,
                                   torch.ones(2, dtype=torch.bool))
    lb, vb, _ = net_b.forward_step(torch.from_numpy(obs), None,
                                   torch.ones(2, dtype=torch.bool))
    assert torch.allclose(la, lb, atol=1e-6)
    assert torch.allclose(va, vb, atol=1e-6)
    round_trip = nets.NetworkSpec.from_dict(scaled.to_dict())
    assert round_trip.input_scale == 4.0


# ---------------------------------------------------------------- forward

def test_forward_logit_count_and_value_shape():
    for game_spec, n_act in [(DD_SPEC, 5), (oc_game_spec(), 6)]:
        net = nets.PolicyNet(nets.compact_spec(game_spec), seed=0)
        obs = np.zeros(game_spec.obs_shape, dtype=np.float32)
        logits, value, hidden = nets.net_forward(net, obs, None, True)
        assert logits.shape == (n_act,)
        assert isinstance(value, float)
        probs = np.exp(nets.log_softmax(logits))
        assert abs(probs.sum() - 1.0) < 1e-6


def test_forward_deterministic_and_does_not_mutate_hidden():
    net = nets.PolicyNet(TINY, seed=2)
    obs = torch.rand(3, 3, 4, 4)
    torch.manual_seed(0)
    hidden = (torch.randn(1, 3, 8), torch.randn(1, 3, 8))
    saved = (hidden[0].clone(), hidden[1].clone())
    flags = torch.tensor([False, True, False])
    out1 = net.forward_step(obs, hidden, flags)
    out2 = net.forward_step(obs, hidden, flags)
    assert torch.equal(out1[0], out2[0]) and torch.equal(out1[1], out2[1])
    assert torch.equal(hidden[0], saved[0]) and torch.equal(hidden[1], saved[1])


def test_episode_start_ignores_incoming_hidden():
    net = nets.PolicyNet(TINY, seed=2)
    obs = torch.rand(2, 3, 4, 4)
    torch.manual_seed(1)
    h_a = (torch.randn(1, 2, 8), torch.randn(1, 2, 8))
    h_b = (torch.randn(1, 2, 8), torch.randn(1, 2, 8))
    start = torch.tensor([True, True])
    logits_a, value_a, _ = net.forward_step(obs, h_a, start)
    logits_b, value_b, _ = net.forward_step(obs, h_b, start)
    assert torch.equal(logits_a, logits_b) and torch.equal(value_a, value_b)
    # without the flag the same two hiddens disagree
    cont = torch.tensor([False, False])
    logits_c, _, _ = net.forward_step(obs, h_a, cont)
    logits_d, _, _ = net.forward_step(obs, h_b, cont)
    assert not torch.equal(logits_c, logits_d)


def test_nonfinite_observation_rejected():
    net = nets.PolicyNet(TINY, seed=0)
    obs = np.full((3, 4, 4), np.nan, dtype=np.float32)
    with pytest.raises(FloatingPointError):
        nets.net_forward(net, obs, None, True)


def test_identity_core_ignores_history():
    spec = nets.NetworkSpec(obs_shape=(3, 4, 4), num_actions=4,
                            conv_channels=(6,), fc_widths=(16,),
                            recurrent_width=0, actor_widths=(8,), critic_widths=(8,))
    net = nets.PolicyNet(spec, seed=4)
    rng = np.random.default_rng(0)
    history = rng.random((6, 1, 3, 4, 4)).astype(np.float32)
    final = rng.random((1, 3, 4, 4)).astype(np.float32)

    def run(order):
        hidden = net.initial_hidden(1)
        for t in order:
            _, _, hidden = net.forward_step(torch.from_numpy(history[t]), hidden,
                                            torch.tensor([t == order[0]]))
        logits, value, _ = net.forward_step(torch.from_numpy(final), hidden,
                                            torch.tensor([False]))
        return logits, value

    base = run([0, 1, 2, 3, 4, 5])
    perm = run([5, 3, 1, 0, 4, 2])
    assert torch.equal(base[0], perm[0]) and torch.equal(base[1], perm[1])


def test_recurrent_core_does_depend_on_history():
    net = nets.PolicyNet(TINY, seed=4)
    rng = np.random.default_rng(0)
    history = rng.random((4, 1, 3, 4, 4)).astype(np.float32)
    final = torch.from_numpy(rng.random((1, 3, 4, 4)).astype(np.float32))

    def run(order):
        hidden = net.initial_hidden(1)
        for idx, t in enumerate(order):
            _, _, hidden = net.forward_step(torch.from_numpy(history[t]), hidden,
                                            torch.tensor([idx == 0]))
        logits, _, _ = net.forward_step(final, hidden, torch.tensor([False]))
        return logits

    assert not torch.equal(run([0, 1, 2, 3]), run([3, 2, 1, 0]))


def test_sequence_matches_stepwise_aligned_resets():
    net = nets.PolicyNet(TINY, seed=7)
    t_len, batch = 9, 4
    rng = np.random.default_rng(3)
    obs = torch.from_numpy(rng.random((t_len, batch, 3, 4, 4)).astype(np.float32))
    starts = torch.zeros(t_len, batch, dtype=torch.bool)
    starts[0] = True
    starts[5] = True
    seq_logits, seq_values, seq_h = net.forward_sequence(obs, None, starts)
    hidden = net.initial_hidden(batch)
    for t in range(t_len):
        logits, value, hidden = net.forward_step(obs[t], hidden, starts[t])
        assert torch.allclose(seq_logits[t], logits, atol=1e-6)
        assert torch.allclose(seq_values[t], value, atol=1e-6)
    assert torch.allclose(seq_h[0], hidden[0], atol=1e-6)


def test_sequence_matches_stepwise_ragged_resets():
    net = nets.PolicyNet(TINY, seed=7)
    t_len, batch = 8, 3
    rng = np.random.default_rng(4)
    obs = torch.from_numpy(rng.random((t_len, batch, 3, 4, 4)).astype(np.float32))
    starts = torch.from_numpy(rng.random((t_len, batch)) < 0.3)
    starts[0] = True
    seq_logits, seq_values, _ = net.forward_sequence(obs, None, starts)
    hidden = net.initial_hidden(batch)
    for t in range(t_len):
        logits, value, hidden = net.forward_step(obs[t], hidden, starts[t])
        assert torch.allclose(seq_logits[t], logits, atol=1e-6)
        assert torch.allclose(seq_values[t], value, atol=1e-6)


def test_sequence_identity_core():
    spec = nets.NetworkSpec(obs_shape=(3, 4, 4), num_actions=4,
                            conv_channels=(6,), fc_widths=(16,),
                            recurrent_width=0, actor_widths=(8,), critic_widths=(8,))
    net = nets.PolicyNet(spec, seed=1)
    obs = torch.rand(5, 2, 3, 4, 4)
    starts = torch.zeros(5, 2, dtype=torch.bool)
    logits, values, hidden = net.forward_sequence(obs, None, starts)
    assert logits.shape == (5, 2, 4) and values.shape == (5, 2)
    assert hidden is None


# ---------------------------------------------------------------- sampling

def test_sample_action_dominant_logit():
    logits = np.array([10.0, -10.0, -10.0, -10.0, -10.0])
    rng = np.random.default_rng(0)
    hits = sum(nets.sample_action(logits, rng)[0] == 0 for _ in range(10_000))
    assert hits / 10_000 > 0.99


def test_sample_action_uniform_within_three_sigma():
    n, k = 100_000, 5
    rng = np.random.default_rng(1)
    actions, _ = nets.sample_action(np.zeros((n, k)), rng)
    counts = np.bincount(actions, minlength=k)
    p = 1.0 / k
    sigma = np.sqrt(n * p * (1 - p))
    assert np.abs(counts - n * p).max() <= 3 * sigma


@settings(max_examples=50)
@given(st.lists(st.floats(-20, 20), min_size=2, max_size=8), st.integers(0, 2**31))
def test_sample_action_logp_is_log_softmax(raw, seed):
    logits = np.array(raw)
    action, logp = nets.sample_action(logits, np.random.default_rng(seed))
    expected = nets.log_softmax(logits)[action]
    assert abs(logp - expected) < 1e-9
    assert 0 <= action < len(raw)


def test_sample_action_rejects_nan():
    with pytest.raises(FloatingPointError):
        nets.sample_action(np.array([np.nan, 0.0]), np.random.default_rng(0))


def test_sample_action_batch_shapes():
    rng = np.random.default_rng(2)
    actions, logp = nets.sample_action(np.zeros((7, 5)), rng)
    assert actions.shape == (7,) and logp.shape == (7,)
    assert actions.dtype == np.int64


# ---------------------------------------------------------------- rollout glue

def test_net_policy_plays_full_episode():
    env = dd.DualDestEnv(dd.dd_fixed_task())
    net = nets.PolicyNet(nets.compact_spec(env.spec), seed=0)
    pol = nets.NetPolicy(net, "net-0")
    traj = core.rollout(env, pol, pol, seed=42)
    assert len(traj) == 100
    assert traj.dones[-1]
    assert np.isfinite(traj.logps).all() and np.isfinite(traj.values).all()
    assert ((traj.actions >= 0) & (traj.actions < 5)).all()


def test_net_policy_rollout_reproducible():
    env = dd.DualDestEnv(dd.dd_fixed_task())
    net = nets.PolicyNet(nets.compact_spec(env.spec), seed=0)
    pol = nets.NetPolicy(net, "net-0")
    t1 = core.rollout(env, pol, pol, seed=9)
    t2 = core.rollout(env, pol, pol, seed=9)
    assert np.array_equal(t1.actions, t2.actions)
    assert np.array_equal(t1.rewards, t2.rewards)


def test_greedy_policy_is_deterministic():
    env = dd.DualDestEnv(dd.dd_fixed_task())
    net = nets.PolicyNet(nets.compact_spec(env.spec), seed=1)
    pol = nets.NetPolicy(net, "net-greedy", greedy=True)
    t1 = core.rollout(env, pol, pol, seed=1)
    t2 = core.rollout(env, pol, pol, seed=2)
    assert np.array_equal(t1.actions, t2.actions)


# ---------------------------------------------------------------- checkpoints

def _meta(**extra):
    meta = {"algorithm": "selfplay", "env_kind": "dual-dest", "seed": 0,
            "steps": 1234, "policy_id": "pilot"}
    meta.update(extra)
    return meta


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    net = nets.PolicyNet(TINY, seed=8)
    path = tmp_path / "net.ckpt"
    ckpt.save_net(path, net, _meta())
    loaded = ckpt.load_checkpoint(path)
    assert loaded.spec == TINY
    assert loaded.meta["steps"] == 1234 and loaded.meta["algorithm"] == "selfplay"
    params = net.state_dict_np()
    assert loaded.params.keys() == params.keys()
    for name in params:
        assert np.array_equal(loaded.params[name], params[name]), name
        assert loaded.params[name].dtype == np.float32


def test_checkpoint_forward_equivalence(tmp_path):
    net = nets.PolicyNet(TINY, seed=9)
    path = tmp_path / "net.ckpt"
    ckpt.save_net(path, net, _meta())
    rebuilt = ckpt.load_checkpoint(path).build_net()
    obs = torch.rand(2, 3, 4, 4)
    start = torch.tensor([True, True])
    a = net.forward_step(obs, None, start)
    b = rebuilt.forward_step(obs, None, start)
    assert torch.equal(a[0], b[0]) and torch.equal(a[1], b[1])


def test_checkpoint_requires_training_metadata(tmp_path):
    net = nets.PolicyNet(TINY, seed=0)
    with pytest.raises(ckpt.CheckpointError, match="seed"):
        ckpt.save_checkpoint(tmp_path / "x.ckpt", TINY, net.state_dict_np(),
                             {"algorithm": "selfplay", "env_kind": "dual-dest",
                              "steps": 1})


def test_checkpoint_rejects_garbage(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"not a checkpoint at all")
    with pytest.raises(ckpt.CheckpointError, match="not a policy checkpoint"):
        ckpt.load_checkpoint(path)


def test_checkpoint_detects_truncation(tmp_path):
    net = nets.PolicyNet(TINY, seed=0)
    path = tmp_path / "net.ckpt"
    ckpt.save_net(path, net, _meta())
    blob = path.read_bytes()
    path.write_bytes(blob[:-40])
    with pytest.raises(ckpt.CheckpointError, match="truncated"):
        ckpt.load_checkpoint(path)


def test_load_policy_uses_stored_id(tmp_path):
    net = nets.PolicyNet(TINY, seed=0)
    path = tmp_path / "net.ckpt"
    ckpt.save_net(path, net, _meta(policy_id="stored-name"))
    assert ckpt.load_policy(path).policy_id == "stored-name"
