"""Deterministic synthetic rollout kernel.

Stands in for a physics simulator: a parametric skill advances the base
along its heading at a fixed command speed, tracks a terrain-conformal
support height, and emits per-timestep mechanical power. Elevation changes
between control steps are the only hazard: each change beyond a small
deadband draws a failure event whose probability is logistic in how far
the change exceeds the skill's ascend/descend capability.

The support height at a position is the maximum terrain elevation inside
a window of half-length ``swing_clearance`` along the heading, which lets
long-swing skills bridge depressions narrower than twice their clearance
(this is how a gap-crossing skill clears gaps that kill a walking skill).
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field as dataclass_field

import numpy as np

from .terrain import Pose2p5D, TerrainField

FAILURE_DEADBAND = 0.02     # elevation changes below this never draw a failure, meters
SUPPORT_SAMPLE_STEP = 0.025  # sampling pitch inside the support window, meters

# Spawn-settling geometry: nominal foot offsets in the body frame and the
# acceptance limits applied to the terrain under them.
FOOT_X = 0.30
FOOT_Y = 0.19
SPAWN_RESIDUAL_TOL = 0.05   # max deviation of any foot from the fitted support plane
SPAWN_SLOPE_LIMIT = 1.2     # max gradient of the fitted support plane
BODY_CLEARANCE = 0.25       # max protrusion above the support plane under the body
_BODY_SAMPLES_X = np.linspace(-0.35, 0.35, 11)
_BODY_SAMPLES_Y = np.linspace(-0.22, 0.22, 7)


class InvalidSpawnError(ValueError):
    """Rollout started from a pose that fails the settling check."""


class CrashedTraceError(ValueError):
    """Cost of transport is undefined for a failed rollout."""


class ZeroDistanceError(ValueError):
    """No distance was covered after the warmup window."""


@dataclass(frozen=True)
class SkillProfile:
    """Parametric stand-in for one locomotion skill.

    ``max_ascend``/``max_descend`` are the largest single elevation changes
    the skill negotiates reliably; ``slip_sharpness`` controls how fast the
    failure probability rises past capability; ``swing_clearance`` is the
    half-length of the support window the skill bridges.
    """

    id: int
    name: str
    max_ascend: float
    max_descend: float
    base_power: float          # watts on flat ground at command speed
    power_per_ascend: float    # joules per meter of ascent
    power_per_descend: float   # joules per meter of descent
    slip_sharpness: float
    swing_clearance: float

    def __post_init__(self) -> None:
        if self.max_ascend < 0 or self.max_descend < 0:
            raise ValueError("capabilities must be >= 0")
        if self.base_power <= 0:
            raise ValueError("base_power must be > 0")
        if self.slip_sharpness <= 0:
            raise ValueError("slip_sharpness must be > 0")
        if self.swing_clearance < 0:
            raise ValueError("swing_clearance must be >= 0")


@dataclass(frozen=True)
class RobotParams:
    mass: float = 52.0
    gravity: float = 9.81
    command_speed: float = 0.6
    control_dt: float = 0.02
    time_limit: float = 4.0
    horizon_distance: float = 1.5

    def __post_init__(self) -> None:
        if self.mass <= 0 or self.gravity <= 0 or self.control_dt <= 0:
            raise ValueError("mass, gravity, and control_dt must be > 0")
        if self.command_speed <= 0 or self.time_limit <= 0 or self.horizon_distance <= 0:
            raise ValueError("command_speed, time_limit, and horizon_distance must be > 0")

    @property
    def max_steps(self) -> int:
        return int(math.floor(self.time_limit / self.control_dt + 1e-9))

    @property
    def horizon_steps(self) -> int:
        step_len = self.command_speed * self.control_dt
        return int(math.ceil(self.horizon_distance / step_len - 1e-9))


class RolloutOutcome(enum.Enum):
    REACHED_TARGET = "reached_target"
    BASE_COLLISION = "base_collision"
    TIMED_OUT = "timed_out"


@dataclass(frozen=True, eq=False)
class RolloutTrace:
    """Per-timestep record of one rollout.

    ``pose_array`` holds (x, y, z, yaw) per step; the ``poses`` property
    materializes Pose2p5D objects on demand.
    """

    powers: np.ndarray     # watts, one entry per executed step
    distances: np.ndarray  # cumulative meters traveled, non-decreasing
    pose_array: np.ndarray
    outcome: RolloutOutcome
    steps: int

    @property
    def poses(self) -> tuple[Pose2p5D, ...]:
        return tuple(Pose2p5D(x=r[0], y=r[1], z=r[2], yaw=r[3]) for r in self.pose_array)


def validate_spawn(field: TerrainField, pose: Pose2p5D) -> bool:
    """Synthetic settling check for a spawn pose.

    Fits a support plane through the four nominal foot points and accepts
    the pose when every foot is within 5 cm of the plane, the plane slope
    is below the stance limit, and nothing under the body rectangle rises
    more than the body clearance above the plane. Poses outside the field
    bounds are rejected.
    """
    if not field.contains(pose.x, pose.y):
        return False
    c, s = math.cos(pose.yaw), math.sin(pose.yaw)
    foot_local = np.array(
        [[FOOT_X, FOOT_Y], [FOOT_X, -FOOT_Y], [-FOOT_X, FOOT_Y], [-FOOT_X, -FOOT_Y]]
    )
    fx = pose.x + foot_local[:, 0] * c - foot_local[:, 1] * s
    fy = pose.y + foot_local[:, 0] * s + foot_local[:, 1] * c
    fz = np.asarray(field.elevation(fx, fy))
    design = np.column_stack([fx, fy, np.ones(4)])
    coef, *_ = np.linalg.lstsq(design, fz, rcond=None)
    residual = np.max(np.abs(fz - design @ coef))
    if residual > SPAWN_RESIDUAL_TOL:
        return False
    if math.hypot(coef[0], coef[1]) > SPAWN_SLOPE_LIMIT:
        return False
    bx = _BODY_SAMPLES_X[:, None]
    by = _BODY_SAMPLES_Y[None, :]
    wx = pose.x + bx * c - by * s
    wy = pose.y + bx * s + by * c
    wz = field.elevation(wx, wy)
    plane_z = coef[0] * wx + coef[1] * wy + coef[2]
    return bool(np.max(wz - plane_z) <= BODY_CLEARANCE)


def support_profile(
    field: TerrainField, pose: Pose2p5D, skill: SkillProfile, params: RobotParams
) -> np.ndarray:
    """Support elevation at every control-step position along the heading.

    Entry ``i`` is the windowed max elevation at distance ``i * v * dt``
    from the pose; length is ``params.max_steps + 1``.
    """
    step_len = params.command_speed * params.control_dt
    along = np.arange(params.max_steps + 1, dtype=float) * step_len
    return support_at(field, pose, skill, along)


def support_at(
    field: TerrainField, pose: Pose2p5D, skill: SkillProfile, along: np.ndarray
) -> np.ndarray:
    """Windowed-max support elevation at given distances along the heading."""
    sc = max(skill.swing_clearance, 1e-9)
    n_w = max(3, 2 * int(math.ceil(sc / SUPPORT_SAMPLE_STEP)) + 1)
    offsets = np.linspace(-sc, sc, n_w)
    s = np.asarray(along, dtype=float)[:, None] + offsets[None, :]
    c, sn = math.cos(pose.yaw), math.sin(pose.yaw)
    wx = pose.x + c * s
    wy = pose.y + sn * s
    elev = field.elevation(wx, wy)
    return elev.max(axis=1)


def simulate_from_support(
    support: np.ndarray,
    skill: SkillProfile,
    params: RobotParams,
    uniforms: np.ndarray,
) -> tuple[RolloutOutcome, int, np.ndarray, np.ndarray]:
    """Run the failure/power law over a precomputed support profile.

    ``uniforms[i]`` is the failure draw used by step ``i + 1``; draws are
    indexed by step so outcomes are independent of how many draws earlier
    steps consumed. Returns (outcome, steps, powers, step_dh).
    """
    max_steps = params.max_steps
    dh = np.diff(support[: max_steps + 1])
    dt = params.control_dt
    powers = (
        skill.base_power
        + skill.power_per_ascend * np.maximum(dh, 0.0) / dt
        + skill.power_per_descend * np.maximum(-dh, 0.0) / dt
    )
    events = np.abs(dh) > FAILURE_DEADBAND
    cap = np.where(dh > 0, skill.max_ascend, skill.max_descend)
    with np.errstate(over="ignore"):
        p_fail = 1.0 / (1.0 + np.exp(-skill.slip_sharpness * (np.abs(dh) - cap)))
    failed = events & (uniforms[:max_steps] < p_fail)
    fail_idx = np.flatnonzero(failed)
    first_fail = int(fail_idx[0]) + 1 if fail_idx.size else max_steps + 1
    reach_step = params.horizon_steps
    if first_fail <= min(reach_step, max_steps):
        return RolloutOutcome.BASE_COLLISION, first_fail, powers, dh
    if reach_step <= max_steps:
        return RolloutOutcome.REACHED_TARGET, reach_step, powers, dh
    return RolloutOutcome.TIMED_OUT, max_steps, powers, dh


def rollout(
    field: TerrainField,
    skill: SkillProfile,
    pose: Pose2p5D,
    params: RobotParams,
    rng: np.random.Generator,
) -> RolloutTrace:
    """Advance the base along its heading and record power, pose, and outcome."""
    if not validate_spawn(field, pose):
        raise InvalidSpawnError(f"pose ({pose.x:.3f}, {pose.y:.3f}, yaw {pose.yaw:.3f}) fails settling")
    support = support_profile(field, pose, skill, params)
    uniforms = rng.random(params.max_steps)
    return trace_from_support(support, skill, pose, params, uniforms)


def trace_from_support(
    support: np.ndarray,
    skill: SkillProfile,
    pose: Pose2p5D,
    params: RobotParams,
    uniforms: np.ndarray,
) -> RolloutTrace:
    """Build the full RolloutTrace for a precomputed support profile."""
    outcome, steps, powers, _ = simulate_from_support(support, skill, params, uniforms)
    step_len = params.command_speed * params.control_dt
    idx = np.arange(1, steps + 1, dtype=float)
    distances = idx * step_len
    c, s = math.cos(pose.yaw), math.sin(pose.yaw)
    pose_array = np.empty((steps, 4))
    pose_array[:, 0] = pose.x + c * distances
    pose_array[:, 1] = pose.y + s * distances
    pose_array[:, 2] = support[1 : steps + 1]
    pose_array[:, 3] = pose.yaw
    return RolloutTrace(
        powers=powers[:steps].copy(),
        distances=distances,
        pose_array=pose_array,
        outcome=outcome,
        steps=steps,
    )


def compute_cot(trace: RolloutTrace, params: RobotParams, warmup: float = 0.5) -> float:
    """Cost of transport of a successful rollout.

    Sums positive mechanical work per step after the warmup window and
    divides by weight times the distance covered in the same window. The
    accumulation is a plain sequential loop so the value is bit-identical
    to a naive per-timestep summation.
    """
    if trace.outcome is not RolloutOutcome.REACHED_TARGET:
        raise CrashedTraceError(f"cannot compute CoT for outcome {trace.outcome.value}")
    dt = params.control_dt
    start = int(math.ceil(warmup / dt - 1e-9))
    if start >= trace.steps:
        raise ZeroDistanceError("warmup window covers the whole trace")
    base = trace.distances[start - 1] if start >= 1 else 0.0
    distance = trace.distances[trace.steps - 1] - base
    if distance <= 0.0:
        raise ZeroDistanceError("no distance covered after warmup")
    energy = 0.0
    for i in range(start, trace.steps):
        p = trace.powers[i]
        if p > 0.0:
            energy += p * dt
    return energy / (params.mass * params.gravity * distance)


def trace_to_csv(trace: RolloutTrace) -> str:
    """Debug export: step, power, distance, x, y, z, yaw rows."""
    lines = ["step,power_w,distance_m,x,y,z,yaw"]
    for i in range(trace.steps):
        r = trace.pose_array[i]
        lines.append(
            f"{i + 1},{trace.powers[i]!r},{trace.distances[i]!r},{r[0]!r},{r[1]!r},{r[2]!r},{r[3]!r}"
        )
    lines.append(f"# outcome={trace.outcome.value}")
    return "\n".join(lines) + "\n"


_PROFILE_FIELDS = (
    "id",
    "max_ascend",
    "max_descend",
    "base_power",
    "power_per_ascend",
    "power_per_descend",
    "slip_sharpness",
    "swing_clearance",
)


def skill_profile_from_items(name: str, items: dict[str, str]) -> SkillProfile:
    """Build a profile from key=value items (values still strings)."""
    missing = [k for k in _PROFILE_FIELDS if k not in items]
    if missing:
        raise ValueError(f"skill {name!r}: missing keys {missing}")
    return SkillProfile(
        id=int(items["id"]),
        name=name,
        max_ascend=float(items["max_ascend"]),
        max_descend=float(items["max_descend"]),
        base_power=float(items["base_power"]),
        power_per_ascend=float(items["power_per_ascend"]),
        power_per_descend=float(items["power_per_descend"]),
        slip_sharpness=float(items["slip_sharpness"]),
        swing_clearance=float(items["swing_clearance"]),
    )
