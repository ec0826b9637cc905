"""
Test-time plan selection: predicts the background over the planning horizon,
rolls every candidate through the frame score, and picks (or keeps) a plan by
its truncated action value.

The value of a plan is the discounted sum of its gated per-waypoint rewards
over the reliable horizon. Everything here is deterministic.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass, field, replace
from typing import Final, Literal

from .errors import ConfigurationError, ValidationError
from .geometry import FloatArray, Pose2, Seconds, Vec2, to_local_array, to_world_array
from .metrics.evaluation import evaluate_plan
from .metrics.scoring import ScorerWeights
from .plans import CandidatePlan, constant_velocity_plan, plan_from_array
from .world import AgentState, PredictedFrame, WorldState

__all__ = (
    "CandidatePlan",
    "Propagation",
    "RolloutConfig",
    "adaptive_replan",
    "constant_velocity_plan",
    "discounted_sum",
    "gated",
    "plan_rewards",
    "prefix_reward",
    "propagate_world",
    "score_candidates",
    "select_candidate",
    "three_term_q",
    "transform_remainder",
    "truncated_q",
)

logger = logging.getLogger(__name__)

type Propagation = Literal["ConstantVelocity", "ConstantAcceleration"]
"""How background agents are extrapolated over the planning horizon."""

PROPAGATIONS: Final[tuple[Propagation, ...]] = ("ConstantVelocity", "ConstantAcceleration")

ACCEL_DECAY: Final = 1.0
"""Seconds over which a propagated acceleration decays linearly to zero."""

HISTORY_WINDOW: Final = 2.0


@dataclass(frozen=True, slots=True)
class RolloutConfig:
    """
    ``k`` is the execution prefix and ``horizon`` the reliable planning
    horizon, both in plan steps.
    """

    k: int
    horizon: int = 8
    gamma: float = 0.99
    propagation: Propagation = "ConstantVelocity"
    weights: ScorerWeights = field(default_factory=ScorerWeights)

    def __post_init__(self) -> None:
        if self.horizon < 1:
            raise ConfigurationError("rollout.horizon", "must be at least 1")
        if not 1 <= self.k <= self.horizon:
            raise ConfigurationError("rollout.k", f"must lie in [1, {self.horizon}], got {self.k}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigurationError("rollout.gamma", f"must lie in [0, 1], got {self.gamma}")
        if self.propagation not in PROPAGATIONS:
            raise ConfigurationError("rollout.propagation", f"unknown mode {self.propagation!r}")


# Prediction

def _travelled(v0: float, a0: float, t: Seconds, mode: Propagation) -> tuple[float, float, float]:
    """Distance, speed and acceleration after ``t`` seconds."""
    if mode == "ConstantVelocity" or a0 == 0.0:
        return v0 * t, v0, 0.0
    tau = min(t, ACCEL_DECAY)
    if a0 < 0.0 and v0 + a0 * ACCEL_DECAY / 2.0 <= 0.0:
        # stops within the decay window
        tau_stop = ACCEL_DECAY * (1.0 - math.sqrt(max(0.0, 1.0 + 2.0 * v0 / (a0 * ACCEL_DECAY))))
        if t >= tau_stop:
            s = v0 * tau_stop + a0 * (tau_stop**2 / 2.0 - tau_stop**3 / (6.0 * ACCEL_DECAY))
            return s, 0.0, 0.0
    s = v0 * tau + a0 * (tau**2 / 2.0 - tau**3 / (6.0 * ACCEL_DECAY))
    speed = v0 + a0 * (tau - tau**2 / (2.0 * ACCEL_DECAY))
    s += speed * (t - tau)
    accel = a0 * (1.0 - tau / ACCEL_DECAY)
    return s, speed, accel


def _advance(agent: AgentState, t: Seconds, mode: Propagation) -> AgentState:
    s, speed, accel = _travelled(agent.speed, agent.accel, t, mode)
    curvature = agent.yaw_rate / agent.speed if agent.speed > 0.1 else 0.0
    heading = agent.pose.heading
    turn = curvature * s
    if abs(turn) < 1e-9:
        offset = Vec2(s * math.cos(heading), s * math.sin(heading))
    else:
        offset = Vec2(
            (math.sin(heading + turn) - math.sin(heading)) / curvature,
            (math.cos(heading) - math.cos(heading + turn)) / curvature,
        )
    return replace(
        agent,
        pose=Pose2(agent.pose.position + offset, heading + turn),
        speed=speed,
        accel=accel,
        yaw_rate=curvature * speed,
    )


def propagate_world(
    world: WorldState, steps: int, dt: Seconds, mode: Propagation = "ConstantVelocity"
) -> list[PredictedFrame]:
    """
    Background predictions at ``(i + 1) * dt`` for ``i < steps``. Agents keep
    their speed (or their acceleration, decaying to zero over one second) and
    their path curvature; signals follow the logged schedule.

    :raises ValidationError: if ``steps`` is below 1.
    """
    if steps < 1:
        raise ValidationError("steps", f"must be at least 1, got {steps}")
    frames = []
    for i in range(steps):
        offset = (i + 1) * dt
        frames.append(
            PredictedFrame(
                offset,
                tuple(_advance(agent, offset, mode) for agent in world.agents),
                world.schedule.at(world.step + round(offset / world.sim_dt)),
            )
        )
    return frames


# Rewards and values

def gated(rewards: Sequence[float], violations: Sequence[bool]) -> list[float]:
    """Zeroes every reward from the first critical violation onwards."""
    out: list[float] = []
    failed = False
    for reward, violated in zip(rewards, violations):
        failed = failed or violated
        out.append(0.0 if failed else reward)
    return out


def discounted_sum(rewards: Sequence[float], gamma: float) -> float:
    total, weight = 0.0, 1.0
    for reward in rewards:
        total += weight * reward
        weight *= gamma
    return total


def _history(world: WorldState, dt: Seconds) -> FloatArray:
    spacing = max(1, round(dt / world.sim_dt))
    return world.history_positions(spacing, round(HISTORY_WINDOW / dt) + 1)


def plan_rewards(
    world: WorldState,
    plan: CandidatePlan,
    cfg: RolloutConfig,
    frames: Sequence[PredictedFrame] | None = None,
) -> list[float]:
    """Gated closed-loop frame score at every waypoint of ``plan``."""
    if frames is None:
        frames = propagate_world(world, plan.horizon, plan.dt, cfg.propagation)
    evaluation = evaluate_plan(world, plan, frames, cfg.weights, _history(world, plan.dt))
    violations = [not evaluation.flags_at(i).all() for i in range(plan.horizon)]
    return gated(evaluation.step_scores(cfg.weights), violations)


def prefix_reward(
    world: WorldState,
    plan: CandidatePlan,
    k: int,
    cfg: RolloutConfig,
    frames: Sequence[PredictedFrame] | None = None,
) -> float:
    """
    Discounted gated reward of the first ``k`` waypoints.

    :raises ValidationError: if ``k`` exceeds the plan.
    """
    if not 0 <= k <= plan.horizon:
        raise ValidationError("k", f"{k} outside [0, {plan.horizon}]")
    if k == 0:
        return 0.0
    return discounted_sum(plan_rewards(world, plan.truncated(k), cfg, frames), cfg.gamma)


def truncated_q(
    world: WorldState,
    plan: CandidatePlan,
    cfg: RolloutConfig,
    frames: Sequence[PredictedFrame] | None = None,
    horizon: int | None = None,
) -> float:
    """
    Truncated action value: the discounted gated reward over the reliable
    horizon (``cfg.horizon`` unless given).

    :raises ValidationError: if the plan is shorter than the horizon.
    """
    h = cfg.horizon if horizon is None else horizon
    if plan.horizon < h:
        raise ValidationError("plan", f"{plan.horizon} waypoints, horizon {h} required")
    return prefix_reward(world, plan, h, cfg, frames)


def three_term_q(rewards: Sequence[float], gamma: float, k: int, horizon: int) -> float:
    """
    The truncated value written as prefix reward plus the discounted value at
    ``k`` minus the discounted value at ``horizon``, each value being the
    discounted tail of ``rewards``. Equals the discounted sum of the first
    ``horizon`` rewards; exactly the prefix reward when ``k == horizon``.

    :raises ValidationError: if ``k`` or ``horizon`` is out of range.
    """
    if not 0 <= k <= horizon <= len(rewards):
        raise ValidationError("k", f"need 0 <= k <= horizon <= {len(rewards)}")
    prefix = discounted_sum(rewards[:k], gamma)
    if k == horizon:
        return prefix
    value_k = discounted_sum(rewards[k:], gamma)
    value_h = discounted_sum(rewards[horizon:], gamma)
    return math.fsum((prefix, gamma**k * value_k, -(gamma**horizon) * value_h))


# Selection

def score_candidates(
    world: WorldState,
    candidates: Sequence[CandidatePlan],
    cfg: RolloutConfig,
    frames: Sequence[PredictedFrame] | None = None,
    horizon: int | None = None,
) -> list[float]:
    """Truncated values of all candidates against one shared prediction."""
    h = cfg.horizon if horizon is None else horizon
    if frames is None and candidates:
        frames = propagate_world(world, h, candidates[0].dt, cfg.propagation)
    return [truncated_q(world, plan.truncated(h), cfg, frames, h) for plan in candidates]


def _best(candidates: Sequence[CandidatePlan], scores: Sequence[float]) -> tuple[CandidatePlan, float]:
    index = min(range(len(candidates)), key=lambda i: (-scores[i], candidates[i].id))
    return candidates[index], scores[index]


def select_candidate(
    world: WorldState,
    candidates: Sequence[CandidatePlan],
    cfg: RolloutConfig,
    frames: Sequence[PredictedFrame] | None = None,
) -> CandidatePlan:
    """
    The candidate with the highest truncated value; the lowest id wins ties.

    :raises ValidationError: if there are no candidates.
    """
    if not candidates:
        raise ValidationError("candidates", "at least one candidate is required")
    scores = score_candidates(world, candidates, cfg, frames)
    chosen, q = _best(candidates, scores)
    logger.debug("selected candidate %d (q=%.4f) of %d", chosen.id, q, len(candidates))
    return chosen


def transform_remainder(
    prev_plan: CandidatePlan, prev_origin: Pose2, executed_steps: int, new_pose: Pose2
) -> CandidatePlan | None:
    """
    The unexecuted waypoints of ``prev_plan`` re-expressed in the frame of
    ``new_pose``; None once the plan is exhausted.
    """
    if executed_steps >= prev_plan.horizon:
        return None
    world_points = to_world_array(prev_origin, prev_plan.array()[executed_steps:])
    return plan_from_array(
        to_local_array(new_pose, world_points), prev_plan.dt, prev_plan.id, prev_plan.policy_score
    )


def adaptive_replan(
    world: WorldState,
    remainder: CandidatePlan | None,
    candidates: Sequence[CandidatePlan],
    cfg: RolloutConfig,
    frames: Sequence[PredictedFrame] | None = None,
) -> tuple[CandidatePlan, bool]:
    """
    Keeps the persistent remainder when its truncated value over its own
    length equals or exceeds that of every new candidate's matching prefix;
    otherwise picks the best full candidate.

    :returns: the plan to execute and whether it is the retained remainder.
    :raises ValidationError: if there are no candidates.
    """
    if not candidates:
        raise ValidationError("candidates", "at least one candidate is required")
    if frames is None:
        frames = propagate_world(world, cfg.horizon, candidates[0].dt, cfg.propagation)
    if remainder is not None:
        h = min(remainder.horizon, cfg.horizon)
        kept = truncated_q(world, remainder, cfg, frames, h)
        challengers = score_candidates(world, candidates, cfg, frames, h)
        if kept >= max(challengers):
            logger.debug("retained plan %d (q=%.4f >= %.4f)", remainder.id, kept, max(challengers))
            return remainder, True
    chosen, q = _best(candidates, score_candidates(world, candidates, cfg, frames))
    logger.debug("switched to candidate %d (q=%.4f)", chosen.id, q)
    return chosen, False
