"""Procedural terrain fields and robot-frame heightfield processing.

Terrain is a continuous elevation function over a bounded rectangle, so
stairs, walls, and gaps stay exactly piecewise constant instead of being
quantized into a world grid. Heightfields are sampled in the robot's
yaw-aligned frame on a fixed 31x11 grid: rows run from 2 m ahead of the
base to 1 m behind it, columns span a 1 m width, both at 0.1 m spacing.

The processing transforms mirror a perception stack at desk scale:
``extract_heightfield`` ray-casts from a sensor origin above the base and
marks shadowed cells occluded, ``inject_noise`` perturbs visible cells,
``forward_fill`` repairs occlusions column-wise from the back of the grid
toward the front, and ``normalize`` re-centers every value on the cell
under the base.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field as dataclass_field
from typing import Callable

import numpy as np

from . import seeding

ROWS = 31
COLS = 11
CELL_SIZE = 0.1
BASE_ROW = 20  # grid row directly under the robot base
CENTER_COL = 5

SENSOR_HEIGHT = 0.5  # ray-cast origin above the base, meters
RAY_SAMPLES = 24     # interior samples per occlusion ray

GAP_DEPTH = 1.0       # floor depth of gap terrain, meters
WALL_THICKNESS = 0.3  # along-track thickness of wall terrain, meters
ROUGH_LATTICE = 0.5   # value-noise lattice spacing, meters
BLOCK_DENSITY = 0.3   # discrete-terrain blocks per square meter

# Robot-frame offset of each grid cell: row 0 is 2 m ahead, row 30 is 1 m
# behind; column 5 is the centerline.
_FORWARD = (BASE_ROW - np.arange(ROWS, dtype=float))[:, None] * CELL_SIZE
_LATERAL = (np.arange(COLS, dtype=float) - CENTER_COL)[None, :] * CELL_SIZE
_FORWARD_GRID = np.broadcast_to(_FORWARD, (ROWS, COLS))
_LATERAL_GRID = np.broadcast_to(_LATERAL, (ROWS, COLS))


class InvalidSpecError(ValueError):
    """Terrain spec violates its invariants."""


class OutOfExtentError(ValueError):
    """Pose lies outside the terrain extent."""


class OccludedCenterError(ValueError):
    """Normalization requires a visible center cell."""


class FullyOccludedColumnError(ValueError):
    """Forward fill requires at least one visible cell per column."""


class TerrainKind(enum.Enum):
    FLAT = "flat"
    ROUGH = "rough"
    DISCRETE = "discrete"
    STAIRS_UP = "stairs_up"
    STAIRS_DOWN = "stairs_down"
    GAP = "gap"
    WALL = "wall"


@dataclass(frozen=True)
class TerrainSpec:
    """Parameters for one generated terrain.

    ``seed`` drives all randomness for the rough and discrete kinds; the
    same (spec, seed) pair always regenerates a bit-identical field.
    """

    kind: TerrainKind
    step_height: float = 0.0
    step_depth: float = 0.3
    roughness_amplitude: float = 0.0
    obstacle_size: float = 0.8
    gap_width: float = 0.5
    wall_height: float = 0.4
    extent: tuple[float, float] = (12.0, 6.0)
    seed: int = 0

    def __post_init__(self) -> None:
        if not isinstance(self.kind, TerrainKind):
            raise InvalidSpecError(f"kind must be a TerrainKind, got {self.kind!r}")
        if self.step_height < 0:
            raise InvalidSpecError(f"step_height must be >= 0, got {self.step_height}")
        if self.step_depth <= 0:
            raise InvalidSpecError(f"step_depth must be > 0, got {self.step_depth}")
        if self.roughness_amplitude < 0:
            raise InvalidSpecError("roughness_amplitude must be >= 0")
        if self.obstacle_size <= 0:
            raise InvalidSpecError("obstacle_size must be > 0")
        if self.gap_width <= 0:
            raise InvalidSpecError("gap_width must be > 0")
        if self.wall_height < 0:
            raise InvalidSpecError("wall_height must be >= 0")
        if self.extent[0] <= 0 or self.extent[1] <= 0:
            raise InvalidSpecError(f"extent must be strictly positive, got {self.extent}")
        if int(self.seed) < 0:
            raise InvalidSpecError("seed must be a non-negative integer")


@dataclass(frozen=True)
class Pose2p5D:
    """Planar pose with elevation; yaw is normalized to (-pi, pi]."""

    x: float
    y: float
    z: float = 0.0
    yaw: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "yaw", normalize_angle(self.yaw))


def normalize_angle(angle: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    wrapped = math.remainder(float(angle), math.tau)
    if wrapped <= -math.pi:
        wrapped += math.tau
    return wrapped


@dataclass(frozen=True, eq=False)
class Heightfield:
    """31x11 robot-frame elevation grid with an occlusion mask."""

    values: np.ndarray
    mask: np.ndarray  # True where the cell is occluded

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=float)
        if values.shape != (ROWS, COLS):
            raise ValueError(f"heightfield must be {ROWS}x{COLS}, got {values.shape}")
        mask = np.asarray(self.mask, dtype=bool)
        if mask.shape != (ROWS, COLS):
            raise ValueError(f"mask must be {ROWS}x{COLS}, got {mask.shape}")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)

    @classmethod
    def from_values(cls, values: np.ndarray) -> "Heightfield":
        """Heightfield with every cell visible."""
        return cls(values=np.asarray(values, dtype=float), mask=np.zeros((ROWS, COLS), dtype=bool))


@dataclass(frozen=True)
class TerrainField:
    """Continuous world elevation over a bounded rectangle.

    Queries are total: coordinates outside the bounds are clamped to the
    boundary, so the boundary value extends outward.
    """

    spec: TerrainSpec
    bounds: tuple[float, float, float, float]  # xmin, xmax, ymin, ymax
    resolution: float = CELL_SIZE
    _fn: Callable[[np.ndarray, np.ndarray], np.ndarray] = dataclass_field(
        default=None, repr=False, compare=False
    )

    def elevation(self, x, y):
        """Elevation in meters at world (x, y); accepts scalars or arrays."""
        xmin, xmax, ymin, ymax = self.bounds
        xa = np.clip(np.asarray(x, dtype=float), xmin, xmax)
        ya = np.clip(np.asarray(y, dtype=float), ymin, ymax)
        out = self._fn(xa, ya)
        if np.ndim(x) == 0 and np.ndim(y) == 0:
            return float(out)
        return np.asarray(out, dtype=float)

    def contains(self, x: float, y: float) -> bool:
        xmin, xmax, ymin, ymax = self.bounds
        return xmin <= x <= xmax and ymin <= y <= ymax

    def grid(self) -> np.ndarray:
        """Sample the field on its resolution grid (for CSV export)."""
        xmin, xmax, ymin, ymax = self.bounds
        xs = np.arange(xmin, xmax + self.resolution / 2, self.resolution)
        ys = np.arange(ymin, ymax + self.resolution / 2, self.resolution)
        return self.elevation(xs[:, None], ys[None, :])


def generate_terrain(spec: TerrainSpec) -> TerrainField:
    """Build the deterministic elevation field described by ``spec``."""
    ex, ey = spec.extent
    bounds = (-ex / 2.0, ex / 2.0, -ey / 2.0, ey / 2.0)
    builders = {
        TerrainKind.FLAT: _flat_fn,
        TerrainKind.ROUGH: _rough_fn,
        TerrainKind.DISCRETE: _discrete_fn,
        TerrainKind.STAIRS_UP: _stairs_fn_up,
        TerrainKind.STAIRS_DOWN: _stairs_fn_down,
        TerrainKind.GAP: _gap_fn,
        TerrainKind.WALL: _wall_fn,
    }
    fn = builders[spec.kind](spec, bounds)
    return TerrainField(spec=spec, bounds=bounds, resolution=CELL_SIZE, _fn=fn)


def _flat_fn(spec: TerrainSpec, bounds) -> Callable:
    def ev(x, y):
        return np.zeros(np.broadcast(x, y).shape)

    return ev


def stair_region_steps(spec: TerrainSpec) -> int:
    """Number of whole steps in the stair region (a quarter of the extent)."""
    region = spec.extent[0] / 4.0
    return max(1, int(math.floor(region / spec.step_depth + 1e-9)))


def _stairs_fn(spec: TerrainSpec, sign: float) -> Callable:
    h = spec.step_height
    d = spec.step_depth
    n_steps = stair_region_steps(spec)

    def ev(x, y):
        idx = np.floor(np.maximum(x, 0.0) / d)
        idx = np.minimum(idx, n_steps)
        z = sign * h * idx
        return np.where(x < 0.0, 0.0, z)

    return ev


def _stairs_fn_up(spec: TerrainSpec, bounds) -> Callable:
    return _stairs_fn(spec, 1.0)


def _stairs_fn_down(spec: TerrainSpec, bounds) -> Callable:
    return _stairs_fn(spec, -1.0)


def _rough_fn(spec: TerrainSpec, bounds) -> Callable:
    xmin, xmax, ymin, ymax = bounds
    s = ROUGH_LATTICE
    nx = int(math.ceil((xmax - xmin) / s)) + 1
    ny = int(math.ceil((ymax - ymin) / s)) + 1
    rng = seeding.make_rng(spec.seed, seeding.STREAM_TERRAIN)
    nodes = rng.uniform(-spec.roughness_amplitude, spec.roughness_amplitude, (nx + 1, ny + 1))

    def ev(x, y):
        u = (x - xmin) / s
        v = (y - ymin) / s
        i = np.clip(np.floor(u).astype(int), 0, nx - 1)
        j = np.clip(np.floor(v).astype(int), 0, ny - 1)
        tu = u - i
        tv = v - j
        # Hermite smoothstep keeps the surface C1, so per-step elevation
        # deltas in the kernel stay small on rough ground.
        tu = tu * tu * (3.0 - 2.0 * tu)
        tv = tv * tv * (3.0 - 2.0 * tv)
        z00 = nodes[i, j]
        z10 = nodes[i + 1, j]
        z01 = nodes[i, j + 1]
        z11 = nodes[i + 1, j + 1]
        return (
            z00 * (1 - tu) * (1 - tv)
            + z10 * tu * (1 - tv)
            + z01 * (1 - tu) * tv
            + z11 * tu * tv
        )

    return ev


def _discrete_fn(spec: TerrainSpec, bounds) -> Callable:
    xmin, xmax, ymin, ymax = bounds
    area = (xmax - xmin) * (ymax - ymin)
    n_blocks = max(1, int(round(BLOCK_DENSITY * area)))
    rng = seeding.make_rng(spec.seed, seeding.STREAM_TERRAIN)
    cx = rng.uniform(xmin, xmax, n_blocks)
    cy = rng.uniform(ymin, ymax, n_blocks)
    heights = rng.uniform(-spec.roughness_amplitude, spec.roughness_amplitude, n_blocks)
    half = spec.obstacle_size / 2.0

    def ev(x, y):
        z = np.zeros(np.broadcast(x, y).shape)
        for bx, by, bh in zip(cx, cy, heights):
            inside = (np.abs(x - bx) <= half) & (np.abs(y - by) <= half)
            z = np.where(inside, bh, z)
        return z

    return ev


def _gap_fn(spec: TerrainSpec, bounds) -> Callable:
    w = spec.gap_width

    def ev(x, y):
        inside = (x >= 0.0) & (x < w)
        return np.where(inside, -GAP_DEPTH, np.zeros(np.broadcast(x, y).shape))

    return ev


def _wall_fn(spec: TerrainSpec, bounds) -> Callable:
    h = spec.wall_height

    def ev(x, y):
        inside = (x >= 0.0) & (x < WALL_THICKNESS)
        return np.where(inside, h, np.zeros(np.broadcast(x, y).shape))

    return ev


def cell_world_coords(pose: Pose2p5D) -> tuple[np.ndarray, np.ndarray]:
    """World (x, y) of every grid cell center for a pose, shape (31, 11)."""
    c, s = math.cos(pose.yaw), math.sin(pose.yaw)
    wx = pose.x + _FORWARD_GRID * c - _LATERAL_GRID * s
    wy = pose.y + _FORWARD_GRID * s + _LATERAL_GRID * c
    return wx, wy


def extract_heightfield(field: TerrainField, pose: Pose2p5D) -> Heightfield:
    """Sample the field on the robot-frame grid and mark occluded cells.

    Occlusion uses a single ray from a sensor origin ``SENSOR_HEIGHT``
    above the base to each cell center; a cell is occluded when terrain
    rises above the ray anywhere strictly between the endpoints.
    """
    if not field.contains(pose.x, pose.y):
        raise OutOfExtentError(f"pose ({pose.x:.3f}, {pose.y:.3f}) outside bounds {field.bounds}")
    wx, wy = cell_world_coords(pose)
    values = field.elevation(wx, wy)
    mask = _occlusion_mask(field, pose.x, pose.y, wx, wy, values)
    return Heightfield(values=values, mask=mask)


def extract_heightfield_batch(
    field: TerrainField, xs: np.ndarray, ys: np.ndarray, yaws: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized extraction for B poses; returns values and masks (B, 31, 11)."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    yaws = np.asarray(yaws, dtype=float)
    c = np.cos(yaws)[:, None, None]
    s = np.sin(yaws)[:, None, None]
    wx = xs[:, None, None] + _FORWARD_GRID[None] * c - _LATERAL_GRID[None] * s
    wy = ys[:, None, None] + _FORWARD_GRID[None] * s + _LATERAL_GRID[None] * c
    values = field.elevation(wx, wy)
    sensor_z = field.elevation(xs, ys) + SENSOR_HEIGHT
    t = (np.arange(1, RAY_SAMPLES + 1, dtype=float) / (RAY_SAMPLES + 1))[:, None, None, None]
    px = xs[None, :, None, None] + t * (wx[None] - xs[None, :, None, None])
    py = ys[None, :, None, None] + t * (wy[None] - ys[None, :, None, None])
    rz = sensor_z[None, :, None, None] + t * (values[None] - sensor_z[None, :, None, None])
    terrain_z = field.elevation(px, py)
    masks = np.any(terrain_z > rz + 1e-6, axis=0)
    return values, masks


def _occlusion_mask(field, sx, sy, wx, wy, values) -> np.ndarray:
    sensor_z = field.elevation(sx, sy) + SENSOR_HEIGHT
    t = (np.arange(1, RAY_SAMPLES + 1, dtype=float) / (RAY_SAMPLES + 1))[:, None, None]
    px = sx + t * (wx[None] - sx)
    py = sy + t * (wy[None] - sy)
    rz = sensor_z + t * (values[None] - sensor_z)
    terrain_z = field.elevation(px, py)
    return np.any(terrain_z > rz + 1e-6, axis=0)


def inject_noise(hf: Heightfield, rng: np.random.Generator, amplitude: float = 0.10) -> Heightfield:
    """Perturb every visible cell with an independent uniform draw.

    The draw covers [-amplitude, +amplitude]; ``amplitude=0`` is the exact
    identity used by tests. Occluded cells and the mask are unchanged.
    """
    noise = rng.uniform(-amplitude, amplitude, size=(ROWS, COLS))
    values = np.where(hf.mask, hf.values, hf.values + noise)
    return Heightfield(values=values, mask=hf.mask.copy())


def normalize(hf: Heightfield) -> Heightfield:
    """Subtract the center-cell value so the cell under the base is 0."""
    if hf.mask[BASE_ROW, CENTER_COL]:
        raise OccludedCenterError("center cell is occluded; forward_fill before normalize")
    center = hf.values[BASE_ROW, CENTER_COL]
    return Heightfield(values=hf.values - center, mask=hf.mask.copy())


def forward_fill(hf: Heightfield) -> Heightfield:
    """Replace occluded cells with the last visible value behind them.

    Proceeds from the back row (1 m behind the base) toward the front row
    within each column. Occluded cells at the very back of a column, which
    have no visible value behind them, take the nearest visible value in
    front instead; a column with no visible cell at all is an error.
    """
    visible = ~hf.mask
    if not visible.any(axis=0).all():
        bad = np.flatnonzero(~visible.any(axis=0))
        raise FullyOccludedColumnError(f"columns fully occluded: {bad.tolist()}")
    values = hf.values.copy()
    # Rows behind the rearmost visible cell (if any) seed from that cell.
    rear_vis = ROWS - 1 - np.argmax(visible[::-1], axis=0)
    for col in np.flatnonzero(rear_vis < ROWS - 1):
        values[rear_vis[col] + 1 :, col] = values[rear_vis[col], col]
    carry = values[ROWS - 1].copy()
    for row in range(ROWS - 2, -1, -1):
        row_visible = visible[row]
        carry = np.where(row_visible, values[row], carry)
        values[row] = np.where(row_visible, values[row], carry)
    return Heightfield(values=values, mask=np.zeros((ROWS, COLS), dtype=bool))


def heightfield_to_csv(hf: Heightfield) -> str:
    """31 lines of 11 comma-separated decimal meters (row 0 first)."""
    lines = [",".join(repr(float(v)) for v in row) for row in hf.values]
    return "\n".join(lines) + "\n"


def terrain_grid_to_csv(field: TerrainField) -> str:
    """Sampled elevation grid as CSV, one row per along-track sample."""
    grid = field.grid()
    lines = [",".join(repr(float(v)) for v in row) for row in grid]
    return "\n".join(lines) + "\n"


_SPEC_KEYS = (
    "kind",
    "step_height",
    "step_depth",
    "roughness_amplitude",
    "obstacle_size",
    "gap_width",
    "wall_height",
    "extent_x",
    "extent_y",
    "seed",
)


def terrain_spec_to_config(spec: TerrainSpec) -> str:
    """Serialize a spec as line-oriented key=value text."""
    items = {
        "kind": spec.kind.value,
        "step_height": repr(spec.step_height),
        "step_depth": repr(spec.step_depth),
        "roughness_amplitude": repr(spec.roughness_amplitude),
        "obstacle_size": repr(spec.obstacle_size),
        "gap_width": repr(spec.gap_width),
        "wall_height": repr(spec.wall_height),
        "extent_x": repr(spec.extent[0]),
        "extent_y": repr(spec.extent[1]),
        "seed": str(spec.seed),
    }
    return "".join(f"{k} = {items[k]}\n" for k in _SPEC_KEYS)


def terrain_spec_from_config(text: str) -> TerrainSpec:
    """Parse key=value text back into a TerrainSpec."""
    items: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise InvalidSpecError(f"line {lineno}: expected key = value, got {raw!r}")
        key, _, value = line.partition("=")
        items[key.strip()] = value.strip()
    try:
        kind = TerrainKind(items["kind"])
    except KeyError:
        raise InvalidSpecError("missing required key: kind") from None
    except ValueError:
        valid = ", ".join(k.value for k in TerrainKind)
        raise InvalidSpecError(f"unknown terrain kind {items['kind']!r}; expected one of {valid}") from None

    def get_float(key: str, default: float) -> float:
        if key not in items:
            return default
        try:
            return float(items[key])
        except ValueError:
            raise InvalidSpecError(f"key {key}: not a number: {items[key]!r}") from None

    return TerrainSpec(
        kind=kind,
        step_height=get_float("step_height", 0.0),
        step_depth=get_float("step_depth", 0.3),
        roughness_amplitude=get_float("roughness_amplitude", 0.0),
        obstacle_size=get_float("obstacle_size", 0.8),
        gap_width=get_float("gap_width", 0.5),
        wall_height=get_float("wall_height", 0.4),
        extent=(get_float("extent_x", 12.0), get_float("extent_y", 6.0)),
        seed=int(get_float("seed", 0)),
    )
