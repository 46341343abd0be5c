import numpy as np
import pytest
import torch

from patrolmarl.config import EnvParams, NetConfig
from patrolmarl.environment import reset
from patrolmarl.grid import parse_map, sample_map
from patrolmarl.network import (
    AllActionsMasked,
    NoRecordedForward,
    NonFiniteActivation,
    PolicyNet,
    Trunk,
    ValueNet,
    backward,
    categorical_entropy,
    forward_actor,
    forward_critic,
    init_weights,
    load_checkpoint,
    masked_log_softmax,
    masked_softmax,
    parameter_count,
    renormalize,
    save_checkpoint,
    zero_weights,
)
from patrolmarl.observations import encode_actor_view, encode_critic_view

from .oracles import central_differences, max_relative_error

D = torch.float64
TINY = NetConfig(conv_channels=(2,), dense=(3,), n_messages=3)


def test_renormalize_example():
    out = renormalize([0.2, 0.1, 0.3, 0.2, 0.2], [1, 0, 0, 1, 1])
    assert np.allclose(out, [1 / 3, 0, 0, 1 / 3, 1 / 3], atol=1e-9, rtol=0)
    assert out[1] == 0.0 and out[2] == 0.0


def test_masked_softmax_matches_renormalized_softmax():
    logits = torch.log(torch.tensor([0.2, 0.1, 0.3, 0.2, 0.2], dtype=D))
    mask = torch.tensor([1, 0, 0, 1, 1], dtype=torch.bool)
    p = masked_softmax(logits, mask)
    assert torch.allclose(p, torch.tensor([1 / 3, 0, 0, 1 / 3, 1 / 3], dtype=D), atol=1e-9, rtol=0)
    full = masked_softmax(logits, torch.ones(5, dtype=torch.bool))
    assert torch.allclose(full, torch.softmax(logits, -1))
    with pytest.raises(AllActionsMasked):
        masked_softmax(logits, torch.zeros(5, dtype=torch.bool))
    with pytest.raises(AllActionsMasked):
        renormalize([0.5, 0.5], [0, 0])


def test_masked_distribution_properties():
    gen = torch.Generator().manual_seed(0)
    for _ in range(200):
        logits = torch.randn(5, generator=gen, dtype=D) * 5
        mask = torch.rand(5, generator=gen) < 0.6
        if not mask.any():
            continue
        p = masked_softmax(logits, mask)
        assert abs(float(p.sum()) - 1.0) < 1e-9
        assert (p[~mask] == 0).all()
        logp = masked_log_softmax(logits, mask)
        assert torch.isfinite(categorical_entropy(logp))


def scene6_views(n_messages=16):
    grid = sample_map("scene6")
    world = reset(grid, 2, EnvParams(p_dyn_max=0.0), 0, positions=[(1, 2), (5, 0)],
                  batteries=[550.0, 300.0], p_dyn=[0.0, 0.0])
    actor = [encode_actor_view(grid, world, i, {0: 2, 1: 4}, 200.0) for i in (0, 1)]
    critic = [encode_critic_view(grid, world, 2, 200.0)]
    return grid, actor, critic


def test_zero_weights_give_uniform_over_valid():
    grid, views, critic_views = scene6_views()
    net = zero_weights(PolicyNet(6, 6))
    msg, move, _ = forward_actor(net, views)
    assert torch.allclose(msg, torch.full_like(msg, 1 / 16))
    assert torch.allclose(move[1], torch.tensor([1 / 3, 0, 0, 1 / 3, 1 / 3], dtype=D))
    critic = zero_weights(ValueNet(6, 6, 2))
    assert forward_critic(critic, critic_views, grid.shape).item() == 0.0


def test_full_size_shapes():
    net = PolicyNet(6, 6)
    assert net.trunk.flat_dim == 8 * 2 * 2
    assert net.hidden == 227
    assert net.move_head.out_features == 5 and net.msg_head.out_features == 16
    assert parameter_count(net) == 588_303
    assert parameter_count(ValueNet(6, 6, 2)) == 273_171


def test_init_determinism_and_variance():
    a = init_weights(PolicyNet(6, 6), 3)
    b = init_weights(PolicyNet(6, 6), 3)
    c = init_weights(PolicyNet(6, 6), 4)
    for (n, p), q, r in zip(a.named_parameters(), b.parameters(), c.parameters()):
        assert torch.equal(p, q)
        if "bias" not in n:
            assert not torch.equal(p, r)
    layer = init_weights(torch.nn.Linear(400, 300, dtype=D), 0)  # 1.2e5 samples
    var = layer.weight.detach().var().item()
    assert abs(var * 400 - 1.0) < 0.05
    assert layer.bias.detach().abs().max().item() == 0.0


def test_critic_determinism_and_nonfinite():
    grid, _, critic_views = scene6_views()
    v1 = forward_critic(init_weights(ValueNet(6, 6, 2), 1), critic_views, grid.shape)
    v2 = forward_critic(init_weights(ValueNet(6, 6, 2), 1), critic_views, grid.shape)
    assert v1.item() == v2.item()
    bad = init_weights(ValueNet(6, 6, 2), 1)
    with torch.no_grad():
        bad.value_head.bias.fill_(float("nan"))
    with pytest.raises(NonFiniteActivation):
        forward_critic(bad, critic_views, grid.shape)


def test_analytic_dense_gradient():
    torch.manual_seed(0)
    layer = torch.nn.Linear(4, 3, bias=False, dtype=D)
    x = torch.randn(4, dtype=D)
    y = torch.randn(3, dtype=D)
    out = layer(x)
    (gw,) = backward(layer, out, 2 * (out - y).detach())
    expected = 2 * torch.outer(layer.weight.detach() @ x - y, x)
    assert torch.allclose(gw, expected, atol=1e-14)


def test_zero_loss_gradient_and_no_forward():
    net = init_weights(ValueNet(6, 6, 2, TINY), 0)
    grid, _, critic_views = scene6_views()
    from patrolmarl.network import critic_inputs
    ch, ex = critic_inputs(critic_views, grid.shape)
    out = net(ch, ex)
    assert all(float(g.abs().max()) == 0.0 for g in backward(net, out, torch.zeros(1)))
    with pytest.raises(NoRecordedForward):
        backward(net, out.detach(), torch.ones(1))


def _fd_ok(module, loss_fn):
    params = [p for p in module.parameters()]
    loss = loss_fn()
    analytic = torch.autograd.grad(loss, params, allow_unused=True)
    analytic = [torch.zeros_like(p) if g is None else g for p, g in zip(params, analytic)]
    numeric = central_differences(loss_fn, params)
    return max_relative_error(analytic, numeric)


def test_gradcheck_each_layer_type():
    gen = torch.Generator().manual_seed(1)
    conv = torch.nn.Conv2d(2, 2, 3, dtype=D)
    x = torch.randn(2, 2, 4, 4, generator=gen, dtype=D)
    assert _fd_ok(conv, lambda: torch.tanh(conv(x)).pow(2).sum()) < 1e-4
    dense = torch.nn.Linear(5, 4, dtype=D)
    z = torch.randn(3, 5, generator=gen, dtype=D)
    assert _fd_ok(dense, lambda: torch.tanh(dense(z)).sin().sum()) < 1e-4
    gru = torch.nn.GRUCell(3, 3, dtype=D)
    u = torch.randn(4, 3, generator=gen, dtype=D)
    h0 = torch.randn(4, 3, generator=gen, dtype=D)
    assert _fd_ok(gru, lambda: gru(u, gru(u, h0)).pow(3).sum()) < 1e-4


def test_gradcheck_composed_policy_and_critic():
    grid = parse_map("C...\n....\n....\n")
    world = reset(grid, 2, EnvParams(), 0)
    views = [encode_actor_view(grid, world, i, {0: 1, 1: 3}, 200.0) for i in (0, 1)]
    from patrolmarl.network import actor_inputs, critic_inputs
    ch, ex, mask = actor_inputs(views)
    net = init_weights(PolicyNet(3, 4, TINY), 2, head_gain=1.0)
    assert parameter_count(net) < 250
    state = torch.randn(2, net.n_state, 3, dtype=D, generator=torch.Generator().manual_seed(0)) * 0.5 \
        if net.n_state > 1 else torch.randn(2, 1, 3, dtype=D, generator=torch.Generator().manual_seed(0)) * 0.5

    def loss():
        m, a, _ = net(ch, ex, mask, state)
        return (m[:, 1] + a[:, 0] + 0.3 * a[:, 4]).sum()

    assert _fd_ok(net, loss) < 1e-4
    critic = init_weights(ValueNet(3, 4, 2, TINY), 3)
    cch, cex = critic_inputs([encode_critic_view(grid, world, 2, 200.0)], grid.shape)
    assert _fd_ok(critic, lambda: (critic(cch, cex) - 0.7).pow(2).sum()) < 1e-4


def test_unroll_matches_stepwise_and_reaches_first_input():
    grid = parse_map("C...\n....\n....\n")
    world = reset(grid, 1, EnvParams(), 0)
    from patrolmarl.network import actor_inputs
    ch, ex, mask = actor_inputs([encode_actor_view(grid, world, 0, {0: 2}, 200.0)])
    L = 5
    gen = torch.Generator().manual_seed(0)
    chs = (ch.unsqueeze(1).repeat(1, L, 1, 1, 1) + 0.1 * torch.randn(1, L, *ch.shape[1:], generator=gen, dtype=D))
    chs.requires_grad_(True)
    exs = ex.unsqueeze(1).repeat(1, L, 1)
    masks = mask.unsqueeze(1).repeat(1, L, 1)
    net = init_weights(PolicyNet(3, 4, TINY), 0, head_gain=1.0)
    state = net.initial_state(1)
    m_all, a_all = net.unroll(chs, exs, masks, state)
    s = state
    for t in range(L):
        m, a, s = net(chs[:, t], exs[:, t], masks[:, t], s)
        assert torch.allclose(m, m_all[:, t], atol=1e-13)
        assert torch.allclose(a, a_all[:, t], atol=1e-13)
    (g,) = torch.autograd.grad(a_all[:, -1, 0].sum(), chs)
    assert float(g[:, 0].abs().sum()) > 0


def test_trunk_rejects_tiny_map():
    with pytest.raises(ValueError):
        Trunk(4, 4, 4, 6, conv_channels=(4, 8))


def test_checkpoint_round_trip(tmp_path):
    actor = init_weights(PolicyNet(6, 6, TINY), 5)
    critic = init_weights(ValueNet(6, 6, 2, TINY), 6)
    save_checkpoint(tmp_path / "ck", {"actor": actor, "critic": critic}, {"episode": 7})
    meta, states = load_checkpoint(tmp_path / "ck")
    assert meta == {"episode": 7}
    fresh = PolicyNet(6, 6, TINY)
    fresh.load_state_dict(states["actor"])
    for p, q in zip(actor.state_dict().values(), fresh.state_dict().values()):
        assert torch.equal(p, q)
    blob = (tmp_path / "ck.bin").read_bytes()
    assert len(blob) == 8 * sum(t.numel() for n in (actor, critic) for t in n.state_dict().values())
    save_checkpoint(tmp_path / "ck2", {"actor": actor, "critic": critic}, {"episode": 7})
    assert (tmp_path / "ck2.bin").read_bytes() == blob
    assert (tmp_path / "ck2.json").read_text() == (tmp_path / "ck.json").read_text()
