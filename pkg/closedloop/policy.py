"""
The policy adapter contract and the built-in synthetic policies.

A policy receives an :class:`Observation` at every replan tick and answers
with a set of candidate plans in the current ego frame, together with the
index of the candidate it would pick on its own.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Any, Final, Literal, Protocol, Self, final

import numpy as np

from .errors import ConfigurationError, PolicyError
from .geometry import FloatArray, Seconds, to_local_array
from .plans import CandidatePlan, constant_velocity_plan, plan_from_array
from .roadmap import RoadMap
from .scenario import FeatureId, ScenarioDescription, SignalState
from .utils import make_rng, stream_key
from .vehicle import EgoState
from .world import AgentState, EgoSample, WorldState

logger = logging.getLogger(__name__)

type PolicyName = Literal["expert", "constant-velocity", "noisy-expert", "lattice"]
"""Names accepted by :class:`PolicySpec`."""

POLICY_NAMES: Final[tuple[PolicyName, ...]] = ("expert", "constant-velocity", "noisy-expert", "lattice")

LATTICE_SPEED_COUNTS: Final[Mapping[int, int]] = MappingProxyType(
    {1: 1, 2: 1, 4: 2, 8: 2, 16: 4, 32: 4}
)
"""Number of distinct speeds in the lattice grid for each candidate count."""

LATTICE_MAX_CURVATURE: Final = 0.05


@dataclass(frozen=True, slots=True)
class Observation:
    """Ground-truth state handed to the policy at a replan tick."""

    world: WorldState
    route: FloatArray
    """The expert route centerline, world frame."""
    plan_dt: Seconds = 0.5
    plan_horizon: int = 8

    @property
    def step(self) -> int:
        return self.world.step

    @property
    def time(self) -> Seconds:
        return self.world.time

    @property
    def ego(self) -> EgoState:
        return self.world.ego

    @property
    def agents(self) -> tuple[AgentState, ...]:
        return self.world.agents

    @property
    def roadmap(self) -> RoadMap:
        return self.world.roadmap

    @property
    def signals(self) -> Mapping[FeatureId, SignalState]:
        return self.world.signals

    @property
    def history(self) -> tuple[EgoSample, ...]:
        return self.world.history


@dataclass(frozen=True, slots=True)
class PolicyOutput:
    candidates: tuple[CandidatePlan, ...]
    native_best: int = 0

    @property
    def best(self) -> CandidatePlan:
        return self.candidates[self.native_best]


class Policy(Protocol):
    """
    Interface for planning policies. Implementations must be deterministic
    functions of the last :meth:`reset` and the observation.
    """

    @property
    def name(self) -> str:
        """Identifier echoed into reports."""

    def reset(self, scenario: ScenarioDescription, seed: int) -> None:
        """Prepares the policy for a new episode."""

    def propose(self, obs: Observation) -> PolicyOutput:
        """Candidate plans for the current tick."""


def _check_output(output: PolicyOutput) -> PolicyOutput:
    if not output.candidates:
        raise PolicyError("policy returned no candidates")
    shape = {(c.horizon, c.dt) for c in output.candidates}
    if len(shape) != 1:
        raise PolicyError(f"candidates disagree on horizon and dt: {sorted(shape)}")
    if not 0 <= output.native_best < len(output.candidates):
        raise PolicyError(f"native_best {output.native_best} out of range")
    return output


def policy_propose(policy: Policy, obs: Observation) -> PolicyOutput:
    """
    Queries the policy and checks its output.

    :raises PolicyError: if the policy fails or returns malformed candidates.
    """
    try:
        output = policy.propose(obs)
    except PolicyError:
        raise
    except Exception as error:
        raise PolicyError(f"policy {policy.name} failed at step {obs.step}: {error!r}") from error
    return _check_output(output)


def expert_future(obs: Observation) -> FloatArray:
    """
    The logged ego positions at the plan's waypoint times, extrapolated at
    constant velocity past the end of the log, in the current ego frame.
    """
    scenario = obs.world.scenario
    states = scenario.ego_track.states
    last = max(i for i, state in enumerate(states) if state.valid)
    points = []
    for i in range(obs.plan_horizon):
        t = obs.time + (i + 1) * obs.plan_dt
        index = round(t / scenario.dt)
        if index <= last and states[index].valid:
            p = states[index].pose.position
            points.append((p.x, p.y))
        else:
            end = states[last]
            overshoot = t - last * scenario.dt
            p = end.pose.position + end.velocity * overshoot
            points.append((p.x, p.y))
    return to_local_array(obs.ego.pose, np.array(points))


def _normals(path: FloatArray) -> FloatArray:
    """Unit left normals of an ego-frame path starting after the origin."""
    full = np.vstack([[0.0, 0.0], path])
    d = np.diff(full, axis=0)
    heading = np.arctan2(d[:, 1], d[:, 0])
    short = np.linalg.norm(d, axis=1) < 1e-3
    heading[short] = 0.0
    return np.column_stack([-np.sin(heading), np.cos(heading)])


@final
class ExpertReplay:
    """Proposes the logged ego future as its single candidate."""

    @property
    def name(self) -> str:
        return "expert"

    def reset(self, scenario: ScenarioDescription, seed: int) -> None:
        pass

    def propose(self, obs: Observation) -> PolicyOutput:
        return PolicyOutput((plan_from_array(expert_future(obs), obs.plan_dt),))


@final
class ConstantVelocity:
    """Keeps the current speed straight ahead."""

    @property
    def name(self) -> str:
        return "constant-velocity"

    def reset(self, scenario: ScenarioDescription, seed: int) -> None:
        pass

    def propose(self, obs: Observation) -> PolicyOutput:
        plan = constant_velocity_plan(max(obs.ego.speed, 0.0), obs.plan_dt, obs.plan_horizon)
        return PolicyOutput((plan,))


class _SeededPolicy:
    """Shared seeding: one random stream per (seed, scenario, step)."""

    _seed: int
    _scenario_key: int

    def reset(self, scenario: ScenarioDescription, seed: int) -> None:
        self._seed = seed
        self._scenario_key = stream_key(scenario.id)

    def _rng(self, step: int) -> np.random.Generator:
        try:
            return make_rng(self._seed, self._scenario_key, step)
        except AttributeError:
            raise PolicyError("policy used before reset()") from None


@final
class NoisyExpert(_SeededPolicy):
    """
    Candidate 0 is the expert future; the others add a half-sine lateral
    excursion of random sign and amplitude ``sigma * U(0.5, 1.5)``, plus a
    longitudinal drift growing with the candidate index. The native choice
    comes from random scores, unrelated to plan quality.
    """

    __sigma: float
    __count: int
    __drift: float

    def __new__(cls, sigma: float = 1.0, num_candidates: int = 8, drift: float = 0.0) -> Self:
        if sigma < 0.0:
            raise ConfigurationError("policy.sigma", "must be non-negative")
        if num_candidates < 1:
            raise ConfigurationError("policy.num_candidates", "must be at least 1")
        self = object.__new__(cls)
        self.__sigma = sigma
        self.__count = num_candidates
        self.__drift = drift
        return self

    @property
    def name(self) -> str:
        return "noisy-expert"

    def propose(self, obs: Observation) -> PolicyOutput:
        rng = self._rng(obs.step)
        expert = expert_future(obs)
        normals = _normals(expert)
        tangents = np.column_stack([normals[:, 1], -normals[:, 0]])
        times = (np.arange(obs.plan_horizon) + 1) * obs.plan_dt
        profile = np.sin(math.pi * times / times[-1])
        amplitudes = self.__sigma * rng.uniform(0.5, 1.5, self.__count)
        signs = rng.choice((-1.0, 1.0), self.__count)
        scores = rng.uniform(0.0, 1.0, self.__count)
        candidates = [plan_from_array(expert, obs.plan_dt, 0, float(scores[0]))]
        for j in range(1, self.__count):
            lateral = signs[j] * amplitudes[j] * profile
            drift = 0.5 * self.__drift * (j / max(self.__count - 1, 1)) * times**2
            points = expert + normals * lateral[:, None] + tangents * drift[:, None]
            candidates.append(plan_from_array(points, obs.plan_dt, j, float(scores[j])))
        return PolicyOutput(tuple(candidates), int(np.argmax(scores)))


def lattice_grid(
    num_candidates: int, cruise: float = 8.0
) -> tuple[tuple[float, ...], tuple[float, ...]]:
    """
    Speeds and curvatures of a lattice with ``num_candidates`` plans.

    :raises ConfigurationError: for counts other than powers of two up to 32.
    """
    try:
        speed_count = LATTICE_SPEED_COUNTS[num_candidates]
    except KeyError:
        raise ConfigurationError(
            "policy.num_candidates", f"lattice supports {sorted(LATTICE_SPEED_COUNTS)}"
        ) from None
    curvature_count = num_candidates // speed_count
    speeds = np.linspace(0.75 * cruise, 1.25 * cruise, speed_count) if speed_count > 1 else [cruise]
    curvatures = (
        np.linspace(-LATTICE_MAX_CURVATURE, LATTICE_MAX_CURVATURE, curvature_count)
        if curvature_count > 1 else [0.0]
    )
    return tuple(float(v) for v in speeds), tuple(float(k) for k in curvatures)


def arc_points(speed: float, curvature: float, dt: Seconds, horizon: int) -> FloatArray:
    """Ego-frame points along a constant-curvature arc at constant speed."""
    s = speed * dt * (np.arange(horizon) + 1)
    if abs(curvature) < 1e-9:
        return np.column_stack([s, np.zeros_like(s)])
    return np.column_stack(
        [np.sin(curvature * s) / curvature, (1.0 - np.cos(curvature * s)) / curvature]
    )


@final
class Lattice(_SeededPolicy):
    """Constant-speed, constant-curvature plans over a speed by curvature grid."""

    __speeds: tuple[float, ...]
    __curvatures: tuple[float, ...]

    def __new__(cls, speeds: Sequence[float], curvatures: Sequence[float]) -> Self:
        if not speeds or not curvatures:
            raise ConfigurationError("policy.lattice", "speed and curvature grids must be non-empty")
        if any(v < 0.0 for v in speeds):
            raise ConfigurationError("policy.speeds", "speeds must be non-negative")
        self = object.__new__(cls)
        self.__speeds = tuple(speeds)
        self.__curvatures = tuple(curvatures)
        return self

    @property
    def name(self) -> str:
        return "lattice"

    def propose(self, obs: Observation) -> PolicyOutput:
        rng = self._rng(obs.step)
        candidates = []
        for v in self.__speeds:
            for kappa in self.__curvatures:
                points = arc_points(v, kappa, obs.plan_dt, obs.plan_horizon)
                candidates.append(plan_from_array(points, obs.plan_dt, len(candidates)))
        return PolicyOutput(tuple(candidates), int(rng.integers(len(candidates))))


@dataclass(frozen=True, slots=True)
class PolicySpec:
    """A policy name plus its parameters, as stored in configs and reports."""

    name: PolicyName
    params: Mapping[str, Any] = field(default_factory=dict)

    def build(self) -> Policy:
        """
        :raises ConfigurationError: for unknown names or parameters.
        """
        params = dict(self.params)
        try:
            match self.name:
                case "expert":
                    self.__no_params(params)
                    return ExpertReplay()
                case "constant-velocity":
                    self.__no_params(params)
                    return ConstantVelocity()
                case "noisy-expert":
                    return NoisyExpert(**params)
                case "lattice":
                    if "num_candidates" in params:
                        speeds, curvatures = lattice_grid(
                            int(params.pop("num_candidates")), float(params.pop("cruise", 8.0))
                        )
                        params.setdefault("speeds", speeds)
                        params.setdefault("curvatures", curvatures)
                    return Lattice(**params)
        except TypeError as error:
            raise ConfigurationError(f"policy.{self.name}", str(error)) from None
        raise ConfigurationError("policy.name", f"unknown policy {self.name!r}")

    def __no_params(self, params: Mapping[str, Any]) -> None:
        if params:
            raise ConfigurationError(f"policy.{self.name}", f"takes no parameters, got {sorted(params)}")

    def to_dict(self) -> dict[str, Any]:
        return {"name": self.name, **{k: _plain(v) for k, v in self.params.items()}}

    @classmethod
    def from_dict(cls, document: Mapping[str, Any]) -> PolicySpec:
        """
        :raises ConfigurationError: if the name is missing or unknown.
        """
        params = dict(document)
        name = params.pop("name", None)
        if name not in POLICY_NAMES:
            raise ConfigurationError("policy.name", f"unknown policy {name!r}")
        return cls(name, params)


def _plain(value: Any) -> Any:
    if isinstance(value, tuple | list):
        return [_plain(v) for v in value]
    return value
