"""Reward stack R = R_p + R_b + R_c and the idleness normalisation it shares
with the observation encoder.

The battery term is a line through (b_l, -c_pbm + c_pbb) with slope numerator
``c_pbm`` (20) and intercept ``c_pbb`` (1 by default, 0.5 suits some maps).
Both are plain config values.
"""

from __future__ import annotations

import numpy as np

from .config import RewardParams


class NegativeIdleness(ValueError):
    pass


class ShapeMismatch(ValueError):
    pass


class OutOfRange(ValueError):
    pass


def normalize_idleness(idle, c_norm: float):
    """f(i) = 1 - exp(-i / c_norm). Works on scalars and arrays."""
    arr = np.asarray(idle, dtype=np.float64)
    if np.any(arr < 0):
        raise NegativeIdleness("idleness must be >= 0")
    out = -np.expm1(-arr / c_norm)
    return float(out) if out.ndim == 0 else out


def global_patrol_reward(norm_idle) -> float:
    """R'_p = (2 - mean - max) / 2 over normalised vertex idleness."""
    norm_idle = np.asarray(norm_idle, dtype=np.float64)
    return (2.0 - norm_idle.mean() - norm_idle.max()) / 2.0


def patrol_reward(norm_with, norm_without, params: RewardParams, max_agents: int = 1) -> float:
    """R_p for one agent from normalised vertex idleness with and without its visit.

    Both arrays hold vertex cells only. The difference reward is the drop in
    R'_p caused by removing this agent's visit from the step.
    """
    norm_with = np.asarray(norm_with, dtype=np.float64)
    norm_without = np.asarray(norm_without, dtype=np.float64)
    if norm_with.shape != norm_without.shape:
        raise ShapeMismatch(f"{norm_with.shape} != {norm_without.shape}")
    r_global = global_patrol_reward(norm_with)
    d_k = r_global - global_patrol_reward(norm_without)
    return r_global * params.c_rp + d_k * params.difference_scale(max_agents)


def battery_reward(b_k: float, params: RewardParams) -> float:
    if not (0.0 <= b_k <= 1.0):
        raise OutOfRange(f"battery fraction {b_k} outside [0, 1]")
    if b_k == 0.0:
        return -params.c_pb
    if b_k <= params.b_l:
        return -params.c_pbm * (b_k / params.b_l) + params.c_pbb
    return 0.0


def collision_reward(involved: bool, params: RewardParams) -> float:
    return -params.c_pc if involved else 0.0


def step_rewards(world, outcome, params: RewardParams, max_agents: int) -> dict[int, dict[str, float]]:
    """Per-agent reward components for every agent that acted this step.

    ``outcome.pre_visit_ticks`` carries vertex idleness after the time advance
    but before agents zeroed their cells; the counterfactual for agent k puts
    its own cell back to that value.

    The battery term scores recharging: it is evaluated with the remaining
    fraction when an agent starts a swap, with 0 when it runs flat, and is 0
    on every other step.
    """
    grid = world.grid
    vidx = grid.vertex_index
    with_ticks = world.idle_ticks[vidx]
    norm_with = normalize_idleness(with_ticks * world.minutes_per_tick, params.c_norm)
    r_global = global_patrol_reward(norm_with)
    pos_in_vertices = {int(f): i for i, f in enumerate(vidx)}
    c_d = params.difference_scale(max_agents)
    out = {}
    for aid, cell in outcome.final_cells.items():
        d_k = 0.0
        flat = grid.index(cell)
        if flat in pos_in_vertices:
            j = pos_in_vertices[flat]
            without = norm_with.copy()
            without[j] = normalize_idleness(
                outcome.pre_visit_ticks[flat] * world.minutes_per_tick, params.c_norm
            )
            d_k = r_global - global_patrol_reward(without)
        if aid in outcome.failed:
            r_b = battery_reward(0.0, params)
        elif aid in outcome.started_swap:
            r_b = battery_reward(outcome.started_swap[aid], params)
        else:
            r_b = 0.0
        comps = {
            "patrol": r_global * params.c_rp + d_k * c_d,
            "battery": r_b,
            "collision": collision_reward(aid in outcome.involved, params),
        }
        comps["total"] = comps["patrol"] + comps["battery"] + comps["collision"]
        out[aid] = comps
    return out
