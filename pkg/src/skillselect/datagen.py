"""Collection of labeled heightfield datasets from kernel rollouts.

For each sample a terrain is generated, a spawn pose is drawn until the
settling check passes, one heightfield is captured through the runtime
perception pipeline (extract -> noise -> forward-fill -> normalize), and
rollouts from that pose produce the label: a success rate over N rollouts
for viability, or the cost of transport of a single successful rollout.
Every sample derives all of its randomness from (master_seed, index), so
collection order and worker scheduling cannot change the dataset.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field as dataclass_field

import numpy as np

from . import seeding
from .simkernel import (
    RobotParams,
    RolloutOutcome,
    SkillProfile,
    compute_cot,
    rollout,
    support_profile,
    trace_from_support,
    validate_spawn,
)
from .terrain import (
    Heightfield,
    Pose2p5D,
    TerrainField,
    TerrainKind,
    TerrainSpec,
    extract_heightfield,
    forward_fill,
    generate_terrain,
    inject_noise,
    normalize,
)

SPAWN_MARGIN = 2.3  # keep spawns this far from the extent edges, meters


class RetriesExhaustedError(RuntimeError):
    """No valid spawn or successful rollout within the retry cap."""


class DatasetFormatError(ValueError):
    """Dataset file is malformed."""


class DatasetVersionError(DatasetFormatError):
    """Dataset file was written with an unsupported format version."""


class DatasetKind(enum.Enum):
    VIABILITY = "viability"
    COT = "cot"


@dataclass(frozen=True)
class FamilyRanges:
    """Difficulty ranges drawn per sample for one terrain family."""

    step_height: tuple[float, float] = (0.02, 0.32)
    step_depth: float = 0.30
    rough_amplitude: tuple[float, float] = (0.01, 0.12)
    discrete_amplitude: tuple[float, float] = (0.03, 0.18)
    discrete_size: tuple[float, float] = (0.4, 1.0)
    wall_height: tuple[float, float] = (0.15, 0.70)
    gap_width: tuple[float, float] = (0.25, 0.90)


@dataclass(frozen=True)
class CollectConfig:
    """Everything the collector needs besides the skill and seed."""

    families: dict[str, float]
    ranges: FamilyRanges = FamilyRanges()
    extent: tuple[float, float] = (12.0, 6.0)
    robot: RobotParams = RobotParams()
    rollouts_per_sample: int = 10
    spawn_retry_cap: int = 100
    noise_amplitude: float = 0.10
    test_fraction: float = 0.10
    stairs_spawn_x: tuple[float, float] = (-2.0, 2.0)
    stairs_yaw: tuple[float, float] = (-0.35, 0.35)
    obstacle_spawn_x: tuple[float, float] = (-2.5, 1.0)
    obstacle_yaw: tuple[float, float] = (-0.35, 0.35)
    open_yaw: tuple[float, float] = (-math.pi, math.pi)

    def __post_init__(self) -> None:
        if not self.families or sum(self.families.values()) <= 0:
            raise ValueError("families must have positive total weight")
        if any(w < 0 for w in self.families.values()):
            raise ValueError("family weights must be >= 0")
        unknown = [k for k in self.families if k not in {m.value for m in TerrainKind}]
        if unknown:
            raise ValueError(f"unknown terrain families: {unknown}")
        if self.rollouts_per_sample < 1:
            raise ValueError("rollouts_per_sample must be >= 1")
        if not 0.0 <= self.test_fraction < 1.0:
            raise ValueError("test_fraction must be in [0, 1)")


@dataclass(frozen=True, eq=False)
class ViabilitySample:
    heightfield: Heightfield
    label: float
    skill_id: int
    terrain_meta: TerrainSpec


@dataclass(frozen=True, eq=False)
class CotSample:
    heightfield: Heightfield
    label: float
    skill_id: int
    terrain_meta: TerrainSpec


@dataclass(eq=False)
class Dataset:
    kind: DatasetKind
    skill_id: int
    master_seed: int
    samples: list
    _test_fraction: float = 0.10

    @property
    def train_indices(self) -> list[int]:
        return self._split()[0]

    @property
    def test_indices(self) -> list[int]:
        return self._split()[1]

    def _split(self) -> tuple[list[int], list[int]]:
        return derive_split(len(self.samples), self.master_seed, self._test_fraction)

    def features(self) -> np.ndarray:
        return np.stack([s.heightfield.values for s in self.samples])

    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.samples], dtype=float)


def derive_split(count: int, master_seed: int, test_fraction: float = 0.10) -> tuple[list[int], list[int]]:
    """Disjoint, exhaustive train/test indices from a seeded shuffle."""
    rng = seeding.make_rng(master_seed, seeding.STREAM_SPLIT)
    order = rng.permutation(count)
    n_test = int(round(count * test_fraction))
    return sorted(order[n_test:].tolist()), sorted(order[:n_test].tolist())


def apportion(weights: dict[str, float], size: int) -> dict[str, int]:
    """Largest-remainder apportionment; counts sum to size, each within 1 of exact."""
    total = sum(weights.values())
    exact = {k: size * w / total for k, w in weights.items()}
    counts = {k: int(math.floor(v)) for k, v in exact.items()}
    leftover = size - sum(counts.values())
    by_remainder = sorted(weights, key=lambda k: (-(exact[k] - counts[k]), k))
    for k in by_remainder[:leftover]:
        counts[k] += 1
    return counts


def sample_spawn(
    field: TerrainField,
    rng: np.random.Generator,
    *,
    x_range: tuple[float, float] | None = None,
    y_range: tuple[float, float] | None = None,
    yaw_range: tuple[float, float] = (-math.pi, math.pi),
    retry_cap: int = 100,
) -> Pose2p5D:
    """First uniformly drawn pose that passes the settling check."""
    xmin, xmax, ymin, ymax = field.bounds
    if x_range is None:
        x_range = (xmin + SPAWN_MARGIN, xmax - SPAWN_MARGIN)
    if y_range is None:
        y_range = (ymin + SPAWN_MARGIN, ymax - SPAWN_MARGIN)
    if x_range[1] < x_range[0] or y_range[1] < y_range[0]:
        raise RetriesExhaustedError(f"empty spawn region for bounds {field.bounds}")
    for _ in range(retry_cap):
        x = rng.uniform(*x_range)
        y = rng.uniform(*y_range)
        yaw = rng.uniform(*yaw_range)
        z = field.elevation(x, y)
        pose = Pose2p5D(x=x, y=y, z=z, yaw=yaw)
        if validate_spawn(field, pose):
            return pose
    raise RetriesExhaustedError(
        f"no valid spawn within {retry_cap} attempts on {field.spec.kind.value} terrain"
    )


def capture_heightfield(
    field: TerrainField,
    pose: Pose2p5D,
    noise_rng: np.random.Generator,
    noise_amplitude: float = 0.10,
) -> Heightfield:
    """Runtime perception pipeline: extract -> noise -> fill -> normalize."""
    hf = extract_heightfield(field, pose)
    hf = inject_noise(hf, noise_rng, amplitude=noise_amplitude)
    hf = forward_fill(hf)
    return normalize(hf)


def collect_viability_sample(
    field: TerrainField,
    skill: SkillProfile,
    pose: Pose2p5D,
    n_rollouts: int,
    params: RobotParams,
    rng: np.random.SeedSequence,
    noise_amplitude: float = 0.10,
) -> ViabilitySample:
    """One heightfield and the success rate of N rollouts from the same pose.

    Timed-out rollouts count as failures, same as collisions. ``rng`` is a
    SeedSequence; children drive the heightfield noise and each rollout.
    """
    if n_rollouts < 1:
        raise ValueError("n_rollouts must be >= 1")
    if not validate_spawn(field, pose):
        raise_invalid_spawn(pose)
    noise_child, *rollout_children = rng.spawn(1 + n_rollouts)
    hf = capture_heightfield(
        field, pose, np.random.Generator(np.random.PCG64(noise_child)), noise_amplitude
    )
    support = support_profile(field, pose, skill, params)
    successes = 0
    for child in rollout_children:
        uniforms = np.random.Generator(np.random.PCG64(child)).random(params.max_steps)
        trace = trace_from_support(support, skill, pose, params, uniforms)
        if trace.outcome is RolloutOutcome.REACHED_TARGET:
            successes += 1
    return ViabilitySample(
        heightfield=hf,
        label=successes / n_rollouts,
        skill_id=skill.id,
        terrain_meta=field.spec,
    )


def collect_cot_sample(
    field: TerrainField,
    skill: SkillProfile,
    pose: Pose2p5D,
    params: RobotParams,
    rng: np.random.SeedSequence,
    noise_amplitude: float = 0.10,
    warmup: float = 0.5,
) -> CotSample | None:
    """One rollout's cost of transport, or None when the rollout failed."""
    if not validate_spawn(field, pose):
        raise_invalid_spawn(pose)
    noise_child, rollout_child = rng.spawn(2)
    hf = capture_heightfield(
        field, pose, np.random.Generator(np.random.PCG64(noise_child)), noise_amplitude
    )
    trace = rollout(field, skill, pose, params, np.random.Generator(np.random.PCG64(rollout_child)))
    if trace.outcome is not RolloutOutcome.REACHED_TARGET:
        return None
    label = compute_cot(trace, params, warmup=warmup)
    return CotSample(heightfield=hf, label=label, skill_id=skill.id, terrain_meta=field.spec)


def raise_invalid_spawn(pose: Pose2p5D) -> None:
    from .simkernel import InvalidSpawnError

    raise InvalidSpawnError(f"pose ({pose.x:.3f}, {pose.y:.3f}, yaw {pose.yaw:.3f}) fails settling")


def draw_terrain_spec(
    family: str, cfg: CollectConfig, rng: np.random.Generator, terrain_seed: int
) -> TerrainSpec:
    """Spec for one sample: family fixed, difficulty drawn from the ranges."""
    kind = TerrainKind(family)
    r = cfg.ranges
    kwargs = dict(kind=kind, extent=cfg.extent, seed=terrain_seed)
    if kind in (TerrainKind.STAIRS_UP, TerrainKind.STAIRS_DOWN):
        kwargs["step_height"] = rng.uniform(*r.step_height)
        kwargs["step_depth"] = r.step_depth
    elif kind is TerrainKind.ROUGH:
        kwargs["roughness_amplitude"] = rng.uniform(*r.rough_amplitude)
    elif kind is TerrainKind.DISCRETE:
        kwargs["roughness_amplitude"] = rng.uniform(*r.discrete_amplitude)
        kwargs["obstacle_size"] = rng.uniform(*r.discrete_size)
    elif kind is TerrainKind.WALL:
        kwargs["wall_height"] = rng.uniform(*r.wall_height)
    elif kind is TerrainKind.GAP:
        kwargs["gap_width"] = rng.uniform(*r.gap_width)
    return TerrainSpec(**kwargs)


def spawn_ranges_for(family: str, cfg: CollectConfig):
    """Per-family spawn region: obstacle families face the feature at x=0."""
    kind = TerrainKind(family)
    if kind in (TerrainKind.STAIRS_UP, TerrainKind.STAIRS_DOWN):
        return cfg.stairs_spawn_x, (-0.7, 0.7), cfg.stairs_yaw
    if kind in (TerrainKind.WALL, TerrainKind.GAP):
        return cfg.obstacle_spawn_x, (-0.7, 0.7), cfg.obstacle_yaw
    return None, None, cfg.open_yaw


def difficulty_of(spec: TerrainSpec) -> float:
    """The scalar difficulty knob of a spec's family (for bucketing)."""
    if spec.kind in (TerrainKind.STAIRS_UP, TerrainKind.STAIRS_DOWN):
        return spec.step_height
    if spec.kind in (TerrainKind.ROUGH, TerrainKind.DISCRETE):
        return spec.roughness_amplitude
    if spec.kind is TerrainKind.WALL:
        return spec.wall_height
    if spec.kind is TerrainKind.GAP:
        return spec.gap_width
    return 0.0


def build_dataset(
    cfg: CollectConfig,
    kind: DatasetKind,
    skill: SkillProfile,
    size: int,
    master_seed: int,
) -> Dataset:
    """Collect exactly ``size`` samples, stratified over terrain families.

    Family counts follow the configured weights to within one sample. For
    CoT, crashed rollouts are excluded and the sample index retries with a
    fresh pose (and terrain) until one rollout succeeds.
    """
    if size < 1:
        raise ValueError("size must be >= 1")
    counts = apportion(cfg.families, size)
    assignment: list[str] = []
    for family in sorted(counts):
        assignment.extend([family] * counts[family])
    order = seeding.make_rng(master_seed, seeding.STREAM_ASSIGN).permutation(size)
    families = [assignment[i] for i in order]

    samples = []
    for index in range(size):
        samples.append(_collect_one(cfg, kind, skill, families[index], master_seed, index))
    ds = Dataset(kind=kind, skill_id=skill.id, master_seed=master_seed, samples=samples)
    ds._test_fraction = cfg.test_fraction
    return ds


def _collect_one(
    cfg: CollectConfig,
    kind: DatasetKind,
    skill: SkillProfile,
    family: str,
    master_seed: int,
    index: int,
):
    x_range, y_range, yaw_range = spawn_ranges_for(family, cfg)
    for attempt in range(cfg.spawn_retry_cap):
        terrain_rng = seeding.make_rng(master_seed, seeding.STREAM_TERRAIN, index, attempt)
        terrain_seed = int(terrain_rng.integers(0, 2**63 - 1))
        spec = draw_terrain_spec(family, cfg, terrain_rng, terrain_seed)
        field = generate_terrain(spec)
        spawn_rng = seeding.make_rng(master_seed, seeding.STREAM_SPAWN, index, attempt)
        try:
            pose = sample_spawn(
                field,
                spawn_rng,
                x_range=x_range,
                y_range=y_range,
                yaw_range=yaw_range,
                retry_cap=cfg.spawn_retry_cap,
            )
        except RetriesExhaustedError:
            raise RetriesExhaustedError(
                f"sample {index}: no valid spawn on {family} terrain "
                f"(difficulty {difficulty_of(spec):.3f})"
            ) from None
        sample_seq = seeding.seed_sequence(master_seed, seeding.STREAM_ROLLOUT, index, attempt)
        if kind is DatasetKind.VIABILITY:
            return collect_viability_sample(
                field, skill, pose, cfg.rollouts_per_sample, cfg.robot, sample_seq,
                noise_amplitude=cfg.noise_amplitude,
            )
        sample = collect_cot_sample(
            field, skill, pose, cfg.robot, sample_seq, noise_amplitude=cfg.noise_amplitude
        )
        if sample is not None:
            return sample
    raise RetriesExhaustedError(
        f"sample {index}: no successful rollout on {family} terrain within "
        f"{cfg.spawn_retry_cap} attempts"
    )


# ---------------------------------------------------------------------------
# dataset files

DATASET_FORMAT_VERSION = 1

_META_FIELDS = (
    "kind", "step_height", "step_depth", "roughness_amplitude", "obstacle_size",
    "gap_width", "wall_height", "extent_x", "extent_y", "seed",
)


def write_dataset(ds: Dataset, path) -> None:
    with open(path, "w") as fh:
        fh.write(dataset_to_text(ds))


def read_dataset(path) -> Dataset:
    with open(path) as fh:
        return dataset_from_text(fh.read())


def dataset_to_text(ds: Dataset) -> str:
    lines = [
        f"# format_version={DATASET_FORMAT_VERSION},kind={ds.kind.value},"
        f"skill_id={ds.skill_id},rows=31,cols=11,count={len(ds.samples)},"
        f"master_seed={ds.master_seed},test_fraction={ds._test_fraction!r}"
    ]
    for sample in ds.samples:
        spec = sample.terrain_meta
        meta = [
            spec.kind.value,
            repr(spec.step_height), repr(spec.step_depth), repr(spec.roughness_amplitude),
            repr(spec.obstacle_size), repr(spec.gap_width), repr(spec.wall_height),
            repr(spec.extent[0]), repr(spec.extent[1]), str(spec.seed),
        ]
        values = ",".join(repr(float(v)) for v in sample.heightfield.values.reshape(-1))
        lines.append(f"{values},{sample.label!r},{','.join(meta)}")
    return "\n".join(lines) + "\n"


def dataset_from_text(text: str) -> Dataset:
    lines = text.splitlines()
    if not lines or not lines[0].startswith("#"):
        raise DatasetFormatError("missing header line")
    header: dict[str, str] = {}
    for part in lines[0].lstrip("#").strip().split(","):
        if "=" in part:
            key, _, value = part.partition("=")
            header[key.strip()] = value.strip()
    try:
        version = int(header["format_version"])
    except (KeyError, ValueError):
        raise DatasetFormatError("header missing format_version") from None
    if version != DATASET_FORMAT_VERSION:
        raise DatasetVersionError(
            f"expected format_version {DATASET_FORMAT_VERSION}, found {version}"
        )
    try:
        kind = DatasetKind(header["kind"])
        skill_id = int(header["skill_id"])
        count = int(header["count"])
        master_seed = int(header["master_seed"])
        rows = int(header["rows"])
        cols = int(header["cols"])
    except (KeyError, ValueError) as exc:
        raise DatasetFormatError(f"bad header field: {exc}") from None
    if (rows, cols) != (31, 11):
        raise DatasetFormatError(f"expected 31x11 grids, header says {rows}x{cols}")
    test_fraction = float(header.get("test_fraction", "0.1"))

    n_values = rows * cols
    expected_fields = n_values + 1 + len(_META_FIELDS)
    records = lines[1:]
    if len(records) != count:
        raise DatasetFormatError(f"header count={count} but file has {len(records)} records")
    sample_cls = ViabilitySample if kind is DatasetKind.VIABILITY else CotSample
    samples = []
    for lineno, record in enumerate(records, start=2):
        fields = record.split(",")
        if len(fields) != expected_fields:
            raise DatasetFormatError(
                f"line {lineno}: expected {expected_fields} fields, found {len(fields)}"
            )
        try:
            values = np.array([float(v) for v in fields[:n_values]]).reshape(rows, cols)
            label = float(fields[n_values])
            meta = fields[n_values + 1 :]
            spec = TerrainSpec(
                kind=TerrainKind(meta[0]),
                step_height=float(meta[1]),
                step_depth=float(meta[2]),
                roughness_amplitude=float(meta[3]),
                obstacle_size=float(meta[4]),
                gap_width=float(meta[5]),
                wall_height=float(meta[6]),
                extent=(float(meta[7]), float(meta[8])),
                seed=int(meta[9]),
            )
        except (ValueError, KeyError) as exc:
            raise DatasetFormatError(f"line {lineno}: {exc}") from None
        samples.append(
            sample_cls(
                heightfield=Heightfield.from_values(values),
                label=label,
                skill_id=skill_id,
                terrain_meta=spec,
            )
        )
    ds = Dataset(kind=kind, skill_id=skill_id, master_seed=master_seed, samples=samples)
    ds._test_fraction = test_fraction
    return ds
