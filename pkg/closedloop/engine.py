"""
The simulation engine: open-loop evaluation against the log, closed-loop
simulation with cached plans between replan ticks, and suite execution.

An :class:`Episode` moves through three phases. It is *created* with its
scenario, policy and configuration; :meth:`Episode.warm_up` replays the log to
fill the history and makes it *running*; :meth:`Episode.step` advances it
until it is *finished*, after which :meth:`Episode.report` is available.
"""

from __future__ import annotations

import logging
import math
import os
from collections.abc import Callable, Mapping, Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Concatenate, Final, Literal, ParamSpec, Protocol, Self, TypeVar, final

import numpy as np

from .errors import ClosedLoopError, ConfigurationError, EpisodeError, PhaseError
from .events import Event, EventManager, FrameEvent, ReplanEvent
from .geometry import FloatArray, Pose2, Seconds, polyline_length
from .metrics.evaluation import evaluate_plan, lane_at, score_frame
from .metrics.features import comfort_scores, comfortable, ego_progress
from .metrics.scoring import PROGRESS_EPSILON, FrameScore, ScorerWeights, min_ade, route_completion
from .plans import CandidatePlan
from .policy import Observation, Policy, PolicySpec, expert_future, policy_propose
from .report import EpisodeFailure, EpisodeReport, FrameRecord, SuiteSummary, aggregate, driving_score, subscore_means
from .roadmap import Polyline, RoadMap
from .scenario import ObjectId, ScenarioDescription, validate_scenario
from .traffic import (
    TRAFFIC_KINDS,
    AdversaryScript,
    IdmParams,
    TrafficKind,
    TrafficModel,
    make_traffic,
    replay_agent,
    replay_step,
)
from .tta import (
    PROPAGATIONS,
    Propagation,
    RolloutConfig,
    adaptive_replan,
    discounted_sum,
    gated,
    select_candidate,
    transform_remainder,
)
from .utils import HistoryBuffer, WallClock
from .vehicle import ControlCommand, ControllerParams, EgoState, PidState, step_bicycle, track_plan
from .world import EgoSample, PredictedFrame, SignalSchedule, WorldState

logger = logging.getLogger(__name__)

type EngineMode = Literal["open-loop", "closed-loop"]
"""Open loop follows the log; closed loop executes the policy's plans."""

ENGINE_MODES: Final[tuple[EngineMode, ...]] = ("open-loop", "closed-loop")

type ScorerName = Literal["native", "truncated-q", "truncated-q-replan", "oracle"]
"""How a plan is selected among the candidates at a replan tick."""

SCORER_NAMES: Final[tuple[ScorerName, ...]] = ("native", "truncated-q", "truncated-q-replan", "oracle")

type Phase = Literal["created", "running", "finished"]
"""Lifecycle phase of an episode."""

type Termination = Literal["horizon", "collision", "route-complete"]

HISTORY_SECONDS: Final = 2.0
"""Length of the ego history kept for comfort and observations."""

EMERGENCY_DECEL: Final = 6.0

ROUTE_COMPLETE: Final = 0.999

THREADS_ENV: Final = "CLOSEDLOOP_THREADS"


@dataclass(frozen=True, slots=True)
class RolloutSettings:
    """Test-time scoring settings; ``k`` None means the replan interval in plan steps."""

    k: int | None = None
    gamma: float = 0.99
    propagation: Propagation = "ConstantVelocity"

    def __post_init__(self) -> None:
        if self.k is not None and self.k < 1:
            raise ConfigurationError("rollout.k", "must be at least 1")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigurationError("rollout.gamma", f"must lie in [0, 1], got {self.gamma}")
        if self.propagation not in PROPAGATIONS:
            raise ConfigurationError("rollout.propagation", f"unknown mode {self.propagation!r}")


def _integral(value: float) -> bool:
    return abs(value - round(value)) <= 1e-9


@dataclass(frozen=True, slots=True)
class EngineConfig:
    mode: EngineMode = "closed-loop"
    traffic: TrafficKind = "log-replay"
    sim_dt: Seconds = 0.1
    replan_rate: int = 5
    """Simulation steps between policy inferences."""
    horizon_steps: int = 80
    """Evaluated simulation steps after warm-up."""
    warmup: Seconds = 2.0
    scorer: ScorerName = "native"
    plan_dt: Seconds = 0.5
    plan_horizon: int = 8
    rollout: RolloutSettings = field(default_factory=RolloutSettings)
    weights: ScorerWeights = field(default_factory=ScorerWeights)
    controller: ControllerParams = field(default_factory=ControllerParams)
    idm: IdmParams = field(default_factory=IdmParams)
    adversary: AdversaryScript = field(default_factory=AdversaryScript)
    seed: int = 0
    terminate_on_collision: bool = True
    record_wallclock: bool = False

    def __post_init__(self) -> None:
        if self.mode not in ENGINE_MODES:
            raise ConfigurationError("mode", f"unknown mode {self.mode!r}")
        if self.traffic not in TRAFFIC_KINDS:
            raise ConfigurationError("traffic", f"unknown traffic mode {self.traffic!r}")
        if self.scorer not in SCORER_NAMES:
            raise ConfigurationError("scorer", f"unknown scorer {self.scorer!r}")
        if self.replan_rate < 1:
            raise ConfigurationError("replan_rate", "must be at least 1")
        if self.horizon_steps < 1:
            raise ConfigurationError("horizon_steps", "must be at least 1")
        if self.plan_horizon < 1:
            raise ConfigurationError("plan_horizon", "must be at least 1")
        if not (self.sim_dt > 0.0 and self.plan_dt > 0.0):
            raise ConfigurationError("sim_dt", "time steps must be positive")
        if self.warmup < 0.0:
            raise ConfigurationError("warmup", "must be non-negative")
        if not _integral(self.plan_dt / self.sim_dt):
            raise ConfigurationError("plan_dt", "must be an integral multiple of sim_dt")
        if self.scorer == "truncated-q-replan" and not _integral(
            self.replan_rate * self.sim_dt / self.plan_dt
        ):
            raise ConfigurationError(
                "replan_rate", "adaptive replanning needs replan intervals that are whole plan steps"
            )

    @property
    def warmup_steps(self) -> int:
        return round(self.warmup / self.sim_dt)

    @property
    def plan_spacing(self) -> int:
        """Simulation steps per plan step."""
        return round(self.plan_dt / self.sim_dt)

    def rollout_config(self) -> RolloutConfig:
        k = self.rollout.k
        if k is None:
            k = round(self.replan_rate * self.sim_dt / self.plan_dt)
        return RolloutConfig(
            k=min(max(k, 1), self.plan_horizon),
            horizon=self.plan_horizon,
            gamma=self.rollout.gamma,
            propagation=self.rollout.propagation,
            weights=self.weights,
        )

    def to_dict(self) -> dict[str, Any]:
        """The fully resolved configuration as a JSON-compatible document."""
        document: dict[str, Any] = {
            name: getattr(self, name)
            for name in (
                "mode", "traffic", "sim_dt", "replan_rate", "horizon_steps", "warmup",
                "scorer", "plan_dt", "plan_horizon", "seed", "terminate_on_collision",
                "record_wallclock",
            )
        }
        document["rollout"] = asdict(self.rollout)
        document["weights"] = asdict(self.weights)
        document["controller"] = asdict(self.controller)
        document["idm"] = asdict(self.idm)
        document["adversary"] = self.adversary.to_dict()
        return document


# Phase checks

P = ParamSpec("P")
R = TypeVar("R")


class EpisodeMethodDecorator(Protocol):
    """Interface for episode method decorators."""

    def __call__(
        self, meth: Callable[Concatenate[Episode, P], R], /
    ) -> Callable[Concatenate[Episode, P], R]:
        """Wraps the given Episode method with a phase check."""


def in_phase(*phases: Phase) -> EpisodeMethodDecorator:
    """
    A parametric decorator which, given one or more acceptable phases,
    returns a decorator adding a phase check to a method of :class:`Episode`.
    """
    def decorator(
        fun: Callable[Concatenate[Episode, P], R], /
    ) -> Callable[Concatenate[Episode, P], R]:
        def inner(self: Episode, /, *args: P.args, **kwargs: P.kwargs) -> R:
            if self.phase not in phases:
                raise PhaseError(self.phase, phases)
            return fun(self, *args, **kwargs)
        return inner
    return decorator


# Pure stepping

@dataclass(frozen=True, slots=True)
class _Context:
    """Everything constant over an episode."""

    scenario: ScenarioDescription
    cfg: EngineConfig
    roadmap: RoadMap
    schedule: SignalSchedule
    traffic: TrafficModel
    expert: Polyline
    route: FloatArray
    start: int
    end: int

    @property
    def history_capacity(self) -> int:
        return round(HISTORY_SECONDS / self.cfg.sim_dt) + 1

    @property
    def lk_samples(self) -> int:
        return round(self.cfg.weights.lk_window / self.cfg.sim_dt) + 1

    def comfort_history(self, world: WorldState) -> FloatArray:
        return world.history_positions(
            self.cfg.plan_spacing, round(HISTORY_SECONDS / self.cfg.plan_dt) + 1
        )


@dataclass(frozen=True, slots=True)
class _Sim:
    """The mutable part of a closed-loop episode, as a value."""

    world: WorldState
    pid: PidState
    offsets: tuple[float, ...]
    progress: float


@dataclass(frozen=True, slots=True)
class _Cached:
    """The plan being executed, its origin pose and the step it started at."""

    plan: CandidatePlan
    origin: Pose2
    start: int
    ec: float


def _log_ego(scenario: ScenarioDescription, step: int) -> EgoState:
    agent = replay_agent(scenario, scenario.ego_track, step)
    if agent is None:
        raise EpisodeError(f"ego log invalid at step {step} of {scenario.id}")
    return EgoState(agent.pose, agent.speed, agent.accel, agent.yaw_rate)


def _advance(ctx: _Context, sim: _Sim, cached: _Cached) -> tuple[_Sim, FrameScore, bool]:
    """One closed-loop simulation step: track, integrate, move traffic, score."""
    cfg = ctx.cfg
    world = sim.world
    elapsed = (world.step - cached.start) * cfg.sim_dt
    tracked = track_plan(world.ego, cached.plan, cached.origin, elapsed, cfg.controller, sim.pid, cfg.sim_dt)
    if tracked is None:
        command, pid, emergency = ControlCommand.saturated(-EMERGENCY_DECEL, 0.0), sim.pid, True
    else:
        (command, pid), emergency = tracked, False
    ego = step_bicycle(world.ego, command, cfg.sim_dt)
    agents = ctx.traffic.step(world, cfg.sim_dt)
    step = world.step + 1
    history = HistoryBuffer[EgoSample](ctx.history_capacity, world.history)
    history.push(EgoSample(step, ego.pose, ego.speed, ego.accel))
    following = replace(
        world,
        step=step,
        time=step * cfg.sim_dt,
        ego=ego,
        agents=agents,
        signals=ctx.schedule.at(step),
        history=history.snapshot(),
    )
    lane = lane_at(ctx.roadmap, ego.pose.position)
    offsets = (*sim.offsets, lane.lateral_offset if lane is not None else 0.0)[-ctx.lk_samples:]
    hc = comfortable(ctx.comfort_history(following), cfg.plan_dt, cfg.weights.thresholds)
    score = score_frame(
        following,
        cfg.weights,
        prev_position=world.ego.pose.position,
        signals=world.signals,
        lane=lane,
        offsets=offsets,
        hc=hc,
        ec=cached.ec,
    )
    progress = sim.progress
    if ctx.expert.length > PROGRESS_EPSILON:
        s, _, _ = ctx.expert.project(ego.pose.position)
        progress = max(progress, s)
    return _Sim(following, pid, offsets, progress), score, emergency


def _plan_ec(ctx: _Context, world: WorldState, plan: CandidatePlan) -> float:
    _, ec = comfort_scores(
        ctx.comfort_history(world), plan.world_points(world.ego.pose), plan.dt, ctx.cfg.weights.thresholds
    )
    return ec


def _oracle_value(ctx: _Context, sim: _Sim, plan: CandidatePlan) -> float:
    """Discounted gated frame score of executing ``plan`` under the true dynamics."""
    cached = _Cached(plan, sim.world.ego.pose, sim.world.step, _plan_ec(ctx, sim.world, plan))
    steps = min(plan.horizon * ctx.cfg.plan_spacing, ctx.end - sim.world.step)
    rewards, violations = [], []
    for _ in range(steps):
        sim, score, _ = _advance(ctx, sim, cached)
        rewards.append(score.epdms)
        violations.append(not score.critical_ok)
    return discounted_sum(gated(rewards, violations), ctx.cfg.rollout.gamma)


def oracle_select(ctx: _Context, sim: _Sim, candidates: Sequence[CandidatePlan]) -> CandidatePlan:
    values = [_oracle_value(ctx, sim, plan) for plan in candidates]
    index = min(range(len(candidates)), key=lambda i: (-values[i], candidates[i].id))
    logger.debug("oracle chose candidate %d (value %.4f)", candidates[index].id, values[index])
    return candidates[index]


# Episodes

@final
class Episode:
    """One simulated (or open-loop evaluated) scenario."""

    __phase: Phase
    __ctx: _Context
    __policy: Policy
    __policy_doc: dict[str, Any]
    __sim: _Sim
    __cached: _Cached | None
    __records: list[FrameRecord]
    __ade: list[float]
    __ego_trace: list[tuple[float, float, float]]
    __agent_traces: dict[ObjectId, list[tuple[int, float, float, float]]]
    __termination: Termination
    __switches: int
    __brakes: int
    __last_id: int | None
    __started: float
    __on_frame: EventManager[FrameEvent]
    __on_replan: EventManager[ReplanEvent]

    def __new__(
        cls,
        scenario: ScenarioDescription,
        policy: Policy,
        cfg: EngineConfig,
        policy_spec: PolicySpec | None = None,
    ) -> Self:
        """
        :raises ValidationError: if the scenario is invalid.
        :raises EpisodeError: if the scenario cannot support the requested run.
        """
        validate_scenario(scenario)
        if abs(scenario.dt - cfg.sim_dt) > 1e-9:
            raise EpisodeError(
                f"scenario {scenario.id} has dt {scenario.dt}, engine runs at {cfg.sim_dt}; resample it first"
            )
        start = cfg.warmup_steps
        last = scenario.step_count - 1
        if cfg.mode == "open-loop":
            if start + cfg.horizon_steps > last:
                raise EpisodeError(
                    f"scenario {scenario.id} has {scenario.step_count} steps, "
                    f"open loop needs {start + cfg.horizon_steps + 1}"
                )
            horizon = cfg.horizon_steps
        else:
            horizon = min(cfg.horizon_steps, last - start)
            if horizon < 1:
                raise EpisodeError(f"scenario {scenario.id} ends during warm-up")
            if horizon < cfg.horizon_steps:
                logger.warning(
                    "%s: horizon clamped from %d to %d steps", scenario.id, cfg.horizon_steps, horizon
                )
        ego_states = scenario.ego_track.states
        route = np.array(
            [[s.pose.position.x, s.pose.position.y] for s in ego_states if s.valid], dtype=np.float64
        )
        expert = np.array(
            [
                [s.pose.position.x, s.pose.position.y]
                for s in ego_states[start: start + horizon + 1]
                if s.valid
            ],
            dtype=np.float64,
        )
        roadmap = RoadMap(scenario.map_features)
        self = object.__new__(cls)
        self.__ctx = _Context(
            scenario=scenario,
            cfg=cfg,
            roadmap=roadmap,
            schedule=SignalSchedule.from_scenario(scenario),
            traffic=make_traffic(cfg.traffic, scenario, cfg.idm, cfg.adversary),
            expert=Polyline(expert),
            route=route,
            start=start,
            end=start + horizon,
        )
        self.__policy = policy
        self.__policy_doc = policy_spec.to_dict() if policy_spec is not None else {"name": policy.name}
        self.__phase = "created"
        self.__cached = None
        self.__records = []
        self.__ade = []
        self.__ego_trace = []
        self.__agent_traces = {}
        self.__termination = "horizon"
        self.__switches = 0
        self.__brakes = 0
        self.__last_id = None
        self.__on_frame = EventManager()
        self.__on_replan = EventManager()
        self.__on_replan.register(self.__count_switch)
        self.__on_frame.register(self.__count_brake)
        return self

    @property
    def phase(self) -> Phase:
        return self.__phase

    @property
    def on_frame(self) -> Event[FrameEvent]:
        return self.__on_frame

    @property
    def on_replan(self) -> Event[ReplanEvent]:
        return self.__on_replan

    @property
    def world(self) -> WorldState:
        """
        :raises PhaseError: before warm-up.
        """
        if self.__phase == "created":
            raise PhaseError(self.__phase, ("running", "finished"))
        return self.__sim.world

    def __count_switch(self, event: ReplanEvent) -> None:
        if self.__last_id is not None and event.candidate_id != self.__last_id:
            self.__switches += 1
        self.__last_id = event.candidate_id

    def __count_brake(self, event: FrameEvent) -> None:
        if event.emergency_brake:
            self.__brakes += 1

    def __trace(self, world: WorldState) -> None:
        pose = world.ego.pose
        self.__ego_trace.append((pose.position.x, pose.position.y, pose.heading))
        for agent in world.agents:
            self.__agent_traces.setdefault(agent.object_id, []).append(
                (world.step, agent.pose.position.x, agent.pose.position.y, agent.pose.heading)
            )

    @in_phase("created")
    def warm_up(self) -> None:
        """Replays the ego and agent logs up to the first evaluated step."""
        ctx = self.__ctx
        scenario, cfg = ctx.scenario, ctx.cfg
        self.__started = WallClock().now()
        history = HistoryBuffer[EgoSample](ctx.history_capacity)
        offsets: list[float] = []
        for step in range(ctx.start + 1):
            ego = _log_ego(scenario, step)
            history.push(EgoSample(step, ego.pose, ego.speed, ego.accel))
            lane = lane_at(ctx.roadmap, ego.pose.position)
            offsets.append(lane.lateral_offset if lane is not None else 0.0)
        world = WorldState(
            step=ctx.start,
            time=ctx.start * cfg.sim_dt,
            ego=_log_ego(scenario, ctx.start),
            agents=replay_step(scenario, ctx.start),
            signals=ctx.schedule.at(ctx.start),
            roadmap=ctx.roadmap,
            schedule=ctx.schedule,
            scenario=scenario,
            history=history.snapshot(),
            sim_dt=cfg.sim_dt,
        )
        self.__policy.reset(scenario, cfg.seed)
        if cfg.mode == "closed-loop":
            world = replace(world, agents=ctx.traffic.start(world))
        self.__sim = _Sim(world, PidState(), tuple(offsets[-ctx.lk_samples:]), 0.0)
        self.__trace(world)
        self.__phase = "running"
        logger.info("%s: %s episode started at step %d", scenario.id, cfg.mode, ctx.start)

    @in_phase("running")
    def step(self) -> FrameRecord | None:
        """
        Advances one simulation step.

        :returns: the frame scored during the step; open loop only scores at
                  replan ticks and returns None otherwise.
        :raises PolicyError: if the policy fails.
        """
        if self.__ctx.cfg.mode == "open-loop":
            record = self.__open_loop_step()
        else:
            record = self.__closed_loop_step()
        if self.__phase == "finished":
            logger.info("%s: finished (%s) after %d frames", self.__ctx.scenario.id,
                        self.__termination, len(self.__records))
        return record

    def __is_tick(self, step: int) -> bool:
        return (step - self.__ctx.start) % self.__ctx.cfg.replan_rate == 0

    def __observe(self) -> tuple[Observation, tuple[CandidatePlan, ...], int]:
        cfg = self.__ctx.cfg
        obs = Observation(self.__sim.world, self.__ctx.route, cfg.plan_dt, cfg.plan_horizon)
        output = policy_propose(self.__policy, obs)
        return obs, output.candidates, output.native_best

    def __open_loop_step(self) -> FrameRecord | None:
        ctx = self.__ctx
        cfg, scenario = ctx.cfg, ctx.scenario
        world = self.__sim.world
        record = None
        if self.__is_tick(world.step):
            obs, candidates, native = self.__observe()
            plan = candidates[native]
            last = scenario.step_count - 1
            frames = []
            for i in range(plan.horizon):
                future = min(world.step + (i + 1) * cfg.plan_spacing, last)
                frames.append(
                    PredictedFrame((i + 1) * plan.dt, replay_step(scenario, future), ctx.schedule.at(future))
                )
            evaluation = evaluate_plan(world, plan, frames, cfg.weights, ctx.comfort_history(world))
            truth = expert_future(obs)
            origin = np.zeros((1, 2))
            ep = ego_progress(
                polyline_length(np.vstack([origin, plan.array()])),
                polyline_length(np.vstack([origin, truth])),
            )
            record = FrameRecord(world.step, evaluation.open_loop_frame(cfg.weights, ep))
            self.__ade.append(min_ade([c.array() for c in candidates], truth))
            self.__records.append(record)
            self.__on_replan.trigger(ReplanEvent(world.step, plan.id, False, "native"))
            self.__on_frame.trigger(FrameEvent(world.step, record.score, world.ego.pose, False))
        step = world.step + 1
        ego = _log_ego(scenario, step)
        history = HistoryBuffer[EgoSample](ctx.history_capacity, world.history)
        history.push(EgoSample(step, ego.pose, ego.speed, ego.accel))
        following = replace(
            world,
            step=step,
            time=step * cfg.sim_dt,
            ego=ego,
            agents=replay_step(scenario, step),
            signals=ctx.schedule.at(step),
            history=history.snapshot(),
        )
        self.__sim = replace(self.__sim, world=following)
        self.__trace(following)
        if step >= ctx.end:
            self.__phase = "finished"
        return record

    def __replan(self) -> None:
        ctx = self.__ctx
        cfg = ctx.cfg
        world = self.__sim.world
        _, candidates, native = self.__observe()
        retained = False
        match cfg.scorer:
            case "native":
                plan = candidates[native]
            case "truncated-q":
                plan = select_candidate(world, candidates, cfg.rollout_config())
            case "truncated-q-replan":
                remainder = None
                if (cached := self.__cached) is not None:
                    executed = (world.step - cached.start) // cfg.plan_spacing
                    remainder = transform_remainder(cached.plan, cached.origin, executed, world.ego.pose)
                plan, retained = adaptive_replan(world, remainder, candidates, cfg.rollout_config())
            case "oracle":
                plan = oracle_select(ctx, self.__sim, candidates)
        self.__cached = _Cached(plan, world.ego.pose, world.step, _plan_ec(ctx, world, plan))
        logger.debug("%s: step %d chose candidate %d (retained=%s)", ctx.scenario.id, world.step, plan.id, retained)
        self.__on_replan.trigger(ReplanEvent(world.step, plan.id, retained, cfg.scorer))

    def __closed_loop_step(self) -> FrameRecord:
        ctx = self.__ctx
        if self.__is_tick(self.__sim.world.step) or self.__cached is None:
            self.__replan()
        assert self.__cached is not None
        sim, score, emergency = _advance(ctx, self.__sim, self.__cached)
        if emergency:
            logger.warning("%s: plan exhausted at step %d, emergency brake", ctx.scenario.id, sim.world.step)
        self.__sim = sim
        self.__trace(sim.world)
        record = FrameRecord(sim.world.step, score)
        self.__records.append(record)
        self.__on_frame.trigger(FrameEvent(sim.world.step, score, sim.world.ego.pose, emergency))
        length = ctx.expert.length
        if not score.nc and ctx.cfg.terminate_on_collision:
            self.__termination = "collision"
        elif length > PROGRESS_EPSILON and sim.progress / length >= ROUTE_COMPLETE:
            self.__termination = "route-complete"
        elif sim.world.step >= ctx.end:
            self.__termination = "horizon"
        else:
            return record
        self.__phase = "finished"
        return record

    @in_phase("finished")
    def report(self) -> EpisodeReport:
        ctx = self.__ctx
        cfg = ctx.cfg
        frames = tuple(self.__records)
        if cfg.mode == "open-loop":
            rc = 1.0
        else:
            rc = route_completion(np.array([p[:2] for p in self.__ego_trace]), ctx.expert.points)
        ds, epdms_mean = driving_score(rc, frames)
        return EpisodeReport(
            scenario_id=ctx.scenario.id,
            mode=cfg.mode,
            traffic=cfg.traffic,
            scorer=cfg.scorer if cfg.mode == "closed-loop" else "native",
            policy=self.__policy_doc,
            seed=cfg.seed,
            ds=ds,
            epdms_mean=epdms_mean,
            rc=rc,
            means=subscore_means(frames),
            frames=frames,
            termination=self.__termination,
            switches=self.__switches,
            emergency_brakes=self.__brakes,
            min_ade=math.fsum(self.__ade) / len(self.__ade) if self.__ade else None,
            ego_trace=tuple(self.__ego_trace),
            agent_traces={k: tuple(v) for k, v in self.__agent_traces.items()},
            config=cfg.to_dict(),
            wallclock=WallClock().now() - self.__started if cfg.record_wallclock else None,
        )

    def run(self) -> EpisodeReport:
        """Warms up, steps to the end and reports."""
        self.warm_up()
        while self.phase == "running":
            self.step()
        return self.report()


def run_open_loop(
    scenario: ScenarioDescription, policy: Policy, cfg: EngineConfig, policy_spec: PolicySpec | None = None
) -> EpisodeReport:
    """
    :raises ConfigurationError: if ``cfg`` is not an open-loop configuration.
    :raises EpisodeError: if the scenario is shorter than warm-up plus horizon.
    """
    if cfg.mode != "open-loop":
        raise ConfigurationError("mode", "run_open_loop needs mode 'open-loop'")
    return Episode(scenario, policy, cfg, policy_spec).run()


def run_closed_loop(
    scenario: ScenarioDescription, policy: Policy, cfg: EngineConfig, policy_spec: PolicySpec | None = None
) -> EpisodeReport:
    """
    :raises ConfigurationError: if ``cfg`` is not a closed-loop configuration.
    """
    if cfg.mode != "closed-loop":
        raise ConfigurationError("mode", "run_closed_loop needs mode 'closed-loop'")
    return Episode(scenario, policy, cfg, policy_spec).run()


# Suites

@dataclass(frozen=True, slots=True)
class SuiteResult:
    """Reports in input order (failed episodes omitted), the failures and the summary."""

    reports: tuple[EpisodeReport, ...]
    failures: tuple[EpisodeFailure, ...]
    summary: SuiteSummary | None


def worker_count(environ: Mapping[str, str] | None = None) -> int:
    """
    Worker processes allowed by ``CLOSEDLOOP_THREADS``: unset or 0 means one
    per CPU, 1 means serial execution in this process.

    :raises ConfigurationError: if the variable is not a non-negative integer.
    """
    raw = (os.environ if environ is None else environ).get(THREADS_ENV, "").strip()
    try:
        value = int(raw) if raw else 0
    except ValueError:
        raise ConfigurationError(THREADS_ENV, f"expected an integer, got {raw!r}") from None
    if value < 0:
        raise ConfigurationError(THREADS_ENV, "must be non-negative")
    return value if value > 0 else os.cpu_count() or 1


def _run_job(job: tuple[ScenarioDescription, PolicySpec, EngineConfig]) -> EpisodeReport | EpisodeFailure:
    scenario, spec, cfg = job
    try:
        return Episode(scenario, spec.build(), cfg, spec).run()
    except ClosedLoopError as error:
        logger.warning("%s (seed %d) failed: %s", scenario.id, cfg.seed, error)
        return EpisodeFailure(scenario.id, cfg.seed, type(error).__name__, str(error))


def run_jobs(
    jobs: Sequence[tuple[ScenarioDescription, PolicySpec, EngineConfig]], workers: int | None = None
) -> list[EpisodeReport | EpisodeFailure]:
    """Runs independent episodes, in parallel when allowed; results follow input order."""
    workers = worker_count() if workers is None else workers
    if workers <= 1 or len(jobs) <= 1:
        return [_run_job(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as executor:
        return list(executor.map(_run_job, jobs))


def run_suite(
    scenarios: Sequence[ScenarioDescription],
    spec: PolicySpec,
    cfg: EngineConfig,
    workers: int | None = None,
) -> SuiteResult:
    """
    Runs every scenario with a fresh policy built from ``spec``. Failing
    episodes are collected and the suite continues.

    :raises ConfigurationError: if there are no scenarios.
    """
    if not scenarios:
        raise ConfigurationError("scenarios", "at least one scenario is required")
    results = run_jobs([(scenario, spec, cfg) for scenario in scenarios], workers)
    reports = tuple(r for r in results if isinstance(r, EpisodeReport))
    failures = tuple(r for r in results if isinstance(r, EpisodeFailure))
    summary = aggregate(reports, len(failures)) if reports else None
    if summary is not None:
        logger.info("suite of %d: mean DS %.2f, %d failed", len(scenarios), summary.means["ds"], len(failures))
    return SuiteResult(reports, failures, summary)
