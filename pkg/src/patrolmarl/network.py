"""Actor and critic networks, masked categorical heads and checkpoints.

Both networks run a conv stack (3x3, stride 1, no padding, tanh) followed by
tanh dense layers; the actor adds a GRU cell and two heads (movement over 5
actions with invalid-action masking, message over ``n_messages``). Reverse-mode
gradients come from torch autograd in float64.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .config import NetConfig
from .grid import N_ACTIONS

DTYPE = torch.float64
CHECKPOINT_FORMAT = "patrolmarl-checkpoint"
CHECKPOINT_VERSION = 1

# structure channel carries the station as 100 and message channels reach 16
ACTOR_INPUT_SCALE = (0.1, 1.0, 1.0, 1.0 / 16)
CRITIC_INPUT_SCALE = (0.1, 1.0, 1.0)


class AllActionsMasked(ValueError):
    pass


class NonFiniteActivation(FloatingPointError):
    pass


class NoRecordedForward(RuntimeError):
    pass


def masked_softmax(logits: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Softmax over the entries where ``mask`` is true; masked entries get exactly 0."""
    mask = mask.to(torch.bool)
    if not bool(mask.any(dim=-1).all()):
        raise AllActionsMasked("every action is masked out")
    return torch.softmax(logits.masked_fill(~mask, -math.inf), dim=-1)


def renormalize(probs, mask) -> np.ndarray:
    """Apply an action mask to an already-normalised distribution."""
    probs = np.asarray(probs, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise AllActionsMasked("every action is masked out")
    out = np.where(mask, probs, 0.0)
    return out / out.sum()


def masked_log_softmax(logits: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    return torch.log_softmax(logits.masked_fill(~mask.to(torch.bool), -math.inf), dim=-1)


def categorical_entropy(logp: torch.Tensor) -> torch.Tensor:
    """Entropy from log-probabilities that may contain -inf for masked entries."""
    p = logp.exp()
    # zero the -inf entries before multiplying so the backward pass stays finite
    safe = torch.where(p > 0, logp, torch.zeros_like(logp))
    return -(p * safe).sum(dim=-1)


class Trunk(nn.Module):
    def __init__(self, in_channels: int, height: int, width: int, extra_dim: int,
                 conv_channels=(4, 8), dense=(512, 341, 227), input_scale=None):
        super().__init__()
        convs = []
        ch, h, w = in_channels, height, width
        for out in conv_channels:
            convs.append(nn.Conv2d(ch, out, kernel_size=3, stride=1, padding=0, dtype=DTYPE))
            ch, h, w = out, h - 2, w - 2
        if h < 1 or w < 1:
            raise ValueError(f"map {height}x{width} too small for {len(conv_channels)} conv layers")
        self.convs = nn.ModuleList(convs)
        self.flat_dim = ch * h * w
        self.extra_dim = extra_dim
        layers = []
        width_in = self.flat_dim + extra_dim
        for width_out in dense:
            layers.append(nn.Linear(width_in, width_out, dtype=DTYPE))
            width_in = width_out
        self.dense = nn.ModuleList(layers)
        self.out_dim = width_in
        scale = torch.ones(in_channels, dtype=DTYPE) if input_scale is None else torch.tensor(input_scale, dtype=DTYPE)
        self.register_buffer("input_scale", scale.view(1, -1, 1, 1))

    def forward(self, channels: torch.Tensor, extras: torch.Tensor) -> torch.Tensor:
        x = channels * self.input_scale
        for conv in self.convs:
            x = torch.tanh(conv(x))
        x = torch.cat([x.flatten(1), extras], dim=1)
        for layer in self.dense:
            x = torch.tanh(layer(x))
        return x


class PolicyNet(nn.Module):
    """Recurrent actor with a message head and a masked movement head.

    The message head sees the observation with the message channel blanked
    (messages are chosen first); the movement head sees everyone's messages.
    With ``separate_trunks`` each head gets its own trunk and GRU, otherwise
    they share one and the recurrent state is taken from the movement pass.
    """

    def __init__(self, height: int, width: int, cfg: NetConfig | None = None,
                 in_channels: int = 4, extra_dim: int = 1 + N_ACTIONS):
        super().__init__()
        cfg = cfg or NetConfig()
        self.cfg = cfg
        self.height, self.width = height, width
        self.in_channels = in_channels
        scale = ACTOR_INPUT_SCALE if in_channels == 4 else None
        make_trunk = lambda: Trunk(in_channels, height, width, extra_dim, cfg.conv_channels, cfg.dense, scale)
        self.trunk = make_trunk()
        hidden = self.trunk.out_dim
        self.gru = nn.GRUCell(hidden, hidden, dtype=DTYPE)
        if cfg.separate_trunks:
            self.comm_trunk = make_trunk()
            self.comm_gru = nn.GRUCell(hidden, hidden, dtype=DTYPE)
        self.hidden = hidden
        self.move_head = nn.Linear(hidden, N_ACTIONS, dtype=DTYPE)
        self.msg_head = nn.Linear(hidden, cfg.n_messages, dtype=DTYPE)

    @property
    def n_state(self) -> int:
        return 2 if self.cfg.separate_trunks else 1

    def initial_state(self, batch: int) -> torch.Tensor:
        return torch.zeros(batch, self.n_state, self.hidden, dtype=DTYPE)

    def comm(self, channels, extras, state) -> tuple[torch.Tensor, torch.Tensor]:
        """Message logits from the observation with the message channel blanked,
        plus the hidden state of that pass."""
        blank = channels.clone()
        blank[:, 3] = 0.0
        if self.cfg.separate_trunks:
            h = self.comm_gru(self.comm_trunk(blank, extras), state[:, 1])
        else:
            h = self.gru(self.trunk(blank, extras), state[:, 0])
        return self.msg_head(h), h

    def act(self, channels, extras, state) -> tuple[torch.Tensor, torch.Tensor]:
        """Raw (unmasked) movement logits and the hidden state of that pass."""
        h = self.gru(self.trunk(channels, extras), state[:, 0])
        return self.move_head(h), h

    def combine_state(self, h_act, h_comm) -> torch.Tensor:
        if self.cfg.separate_trunks:
            return torch.stack([h_act, h_comm], dim=1)
        return h_act.unsqueeze(1)

    def forward(self, channels, extras, mask, state):
        """Returns ``(message_logp, move_logp, new_state)``; ``channels`` must hold
        the message channel already filled in."""
        msg_logits, h_comm = self.comm(channels, extras, state)
        raw, h_act = self.act(channels, extras, state)
        return (torch.log_softmax(msg_logits, dim=-1), masked_log_softmax(raw, mask),
                self.combine_state(h_act, h_comm))

    def unroll(self, channels, extras, mask, state):
        """Run ``forward`` over a sequence: inputs are (N, L, ...).

        Same result as stepping ``forward`` L times, but the feed-forward trunk
        runs once over every step and only the GRU cell is looped.
        Returns ``(message_logp, move_logp)`` of shape (N, L, *).
        """
        n, length = channels.shape[:2]
        flat_ch = channels.flatten(0, 1)
        flat_ex = extras.flatten(0, 1)
        blank = flat_ch.clone()
        blank[:, 3] = 0.0
        if self.cfg.separate_trunks:
            f_comm = self.comm_trunk(blank, flat_ex).view(n, length, -1)
            f_act = self.trunk(flat_ch, flat_ex).view(n, length, -1)
        else:
            both = self.trunk(torch.cat([blank, flat_ch]), torch.cat([flat_ex, flat_ex]))
            f_comm, f_act = both.view(2, n, length, -1).unbind(0)
        h_comm_seq, h_act_seq = [], []
        s_act = state[:, 0]
        if self.cfg.separate_trunks:
            gi_comm = _gru_input(self.comm_gru, f_comm)
            gi_act = _gru_input(self.gru, f_act)
            s_comm = state[:, 1]
            for j in range(length):
                s_comm = _gru_step(self.comm_gru, gi_comm[:, j], s_comm)
                s_act = _gru_step(self.gru, gi_act[:, j], s_act)
                h_comm_seq.append(s_comm)
                h_act_seq.append(s_act)
        else:
            gi = _gru_input(self.gru, torch.cat([f_comm, f_act]))
            for j in range(length):
                h = _gru_step(self.gru, gi[:, j], torch.cat([s_act, s_act]))
                h_comm_seq.append(h[:n])
                s_act = h[n:]
                h_act_seq.append(s_act)
        h_comm = torch.stack(h_comm_seq, dim=1)
        h_act = torch.stack(h_act_seq, dim=1)
        msg_logp = torch.log_softmax(self.msg_head(h_comm), dim=-1)
        move_logp = masked_log_softmax(self.move_head(h_act), mask)
        return msg_logp, move_logp


def _gru_input(cell: nn.GRUCell, x: torch.Tensor) -> torch.Tensor:
    """Input half of a GRU cell for a whole sequence at once."""
    return torch.nn.functional.linear(x, cell.weight_ih, cell.bias_ih)


def _gru_step(cell: nn.GRUCell, gi: torch.Tensor, h: torch.Tensor) -> torch.Tensor:
    """``cell(x, h)`` given the precomputed input projection ``gi``."""
    gh = torch.nn.functional.linear(h, cell.weight_hh, cell.bias_hh)
    i_r, i_z, i_n = gi.chunk(3, dim=-1)
    h_r, h_z, h_n = gh.chunk(3, dim=-1)
    r = torch.sigmoid(i_r + h_r)
    z = torch.sigmoid(i_z + h_z)
    cand = torch.tanh(i_n + r * h_n)
    return (1 - z) * cand + z * h


class ValueNet(nn.Module):
    def __init__(self, height: int, width: int, max_agents: int, cfg: NetConfig | None = None,
                 in_channels: int = 3):
        super().__init__()
        cfg = cfg or NetConfig()
        self.max_agents = max_agents
        scale = CRITIC_INPUT_SCALE if in_channels == 3 else None
        self.trunk = Trunk(in_channels, height, width, 3 * max_agents, cfg.conv_channels, cfg.dense, scale)
        self.value_head = nn.Linear(self.trunk.out_dim, 1, dtype=DTYPE)

    def forward(self, channels, extras) -> torch.Tensor:
        return self.value_head(self.trunk(channels, extras)).squeeze(-1)


def init_weights(net: nn.Module, seed: int, head_gain: float = 0.01) -> nn.Module:
    """Scaled-uniform fan-in init: weights ~ U(-a, a), a = sqrt(3 / fan_in), so
    Var = 1 / fan_in; biases zero. Policy heads are further scaled by
    ``head_gain`` so the initial policy is close to uniform."""
    gen = torch.Generator().manual_seed(int(seed))
    with torch.no_grad():
        for name, p in net.named_parameters():
            if "bias" in name:
                p.zero_()
                continue
            fan_in = p.shape[1] * (p[0][0].numel() if p.dim() > 2 else 1)
            bound = math.sqrt(3.0 / fan_in)
            if name.startswith(("move_head", "msg_head")):
                bound *= head_gain
            p.copy_((torch.rand(p.shape, generator=gen, dtype=DTYPE) * 2 - 1) * bound)
    return net


def zero_weights(net: nn.Module) -> nn.Module:
    with torch.no_grad():
        for p in net.parameters():
            p.zero_()
    return net


def actor_inputs(views) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Stack actor ``ObservationView``s into (channels, extras, mask) tensors."""
    channels = torch.from_numpy(np.stack([v.channels for v in views]))
    extras = torch.tensor([[v.battery_scalar, *v.action_mask.astype(np.float64)] for v in views], dtype=DTYPE)
    mask = torch.from_numpy(np.stack([v.action_mask for v in views]))
    return channels, extras, mask


def critic_inputs(views, grid_shape) -> tuple[torch.Tensor, torch.Tensor]:
    h, w = grid_shape
    channels = torch.from_numpy(np.stack([v.channels for v in views]))
    scale = np.array([max(h - 1, 1), max(w - 1, 1)], dtype=np.float64)
    extras = torch.from_numpy(np.stack([
        np.concatenate([v.battery_vector, (v.location_list / scale).ravel()]) for v in views
    ]))
    return channels, extras


def forward_actor(net: PolicyNet, views, state=None):
    """Message and movement distributions for a batch of actor views.

    The views' message channel must be filled in. Returns probabilities
    ``(message_probs, move_probs, new_state)``.
    """
    channels, extras, mask = actor_inputs(views)
    if state is None:
        state = net.initial_state(len(views))
    msg_logp, move_logp, new_state = net(channels, extras, mask, state)
    return msg_logp.exp(), move_logp.exp(), new_state


def forward_critic(net: ValueNet, views, grid_shape) -> torch.Tensor:
    channels, extras = critic_inputs(views, grid_shape)
    value = net(channels, extras)
    if not torch.isfinite(value).all():
        raise NonFiniteActivation("critic produced a non-finite value")
    return value


def backward(net: nn.Module, outputs: torch.Tensor, loss_grad) -> list[torch.Tensor]:
    """Back-propagate ``loss_grad`` (dLoss/dOutputs) and return gradients in
    ``net.parameters()`` order (zeros for parameters the outputs don't touch)."""
    if outputs.grad_fn is None:
        raise NoRecordedForward("outputs were not produced by a recorded forward pass")
    params = list(net.parameters())
    grad = torch.as_tensor(loss_grad, dtype=outputs.dtype).reshape(outputs.shape)
    grads = torch.autograd.grad(outputs, params, grad_outputs=grad, allow_unused=True)
    return [torch.zeros_like(p) if g is None else g for p, g in zip(params, grads)]


def parameter_count(net: nn.Module) -> int:
    return sum(p.numel() for p in net.parameters())


# -- checkpoints --------------------------------------------------------------

def save_checkpoint(path, nets: dict[str, nn.Module], meta: dict | None = None) -> None:
    """Write ``<path>.json`` (manifest) and ``<path>.bin`` (little-endian float64).

    Manifest offsets count float64 elements from the start of the blob.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    layers, chunks, offset = [], [], 0
    for prefix, net in nets.items():
        for name, tensor in net.state_dict().items():
            arr = tensor.detach().cpu().numpy().astype("<f8", copy=False).ravel()
            layers.append({"name": f"{prefix}.{name}", "shape": list(tensor.shape), "offset": offset})
            chunks.append(arr)
            offset += arr.size
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "dtype": "float64-le",
        "meta": meta or {},
        "layers": layers,
    }
    path.with_suffix(".json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    blob = np.concatenate(chunks) if chunks else np.zeros(0, dtype="<f8")
    path.with_suffix(".bin").write_bytes(blob.astype("<f8").tobytes())


def load_checkpoint(path) -> tuple[dict, dict[str, dict[str, torch.Tensor]]]:
    """Returns ``(meta, {prefix: state_dict})``."""
    path = Path(path)
    manifest = json.loads(path.with_suffix(".json").read_text(encoding="utf-8"))
    if manifest.get("format") != CHECKPOINT_FORMAT or manifest.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint header")
    blob = np.frombuffer(path.with_suffix(".bin").read_bytes(), dtype="<f8")
    states: dict[str, dict[str, torch.Tensor]] = {}
    for layer in manifest["layers"]:
        prefix, name = layer["name"].split(".", 1)
        n = int(np.prod(layer["shape"])) if layer["shape"] else 1
        values = blob[layer["offset"]: layer["offset"] + n].astype(np.float64)
        states.setdefault(prefix, {})[name] = torch.from_numpy(values.copy()).reshape(layer["shape"])
    return manifest["meta"], states
