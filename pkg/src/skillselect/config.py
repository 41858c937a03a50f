"""Line-oriented key=value configuration.

One ``key = value`` pair per line, ``#`` comments, blank lines ignored.
Keys are dotted paths (``skill.walk.base_power``); values stay strings
until a consumer asks for a typed view. ``DEFAULT_CONFIG`` holds every
default the pipeline uses; user files overlay it key by key.
"""
from __future__ import annotations

import hashlib


class ConfigError(ValueError):
    """Malformed configuration text or value."""


def parse_kv_text(text: str) -> dict[str, str]:
    """Parse key=value lines into an ordered dict of strings."""
    items: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        items[key] = value.strip()
    return items


def format_kv(items: dict[str, str]) -> str:
    """Serialize items back to key=value lines, sorted for stable hashing."""
    return "".join(f"{k} = {items[k]}\n" for k in sorted(items))


def config_hash(items: dict[str, str]) -> str:
    """SHA-256 of the canonical serialization of the effective config."""
    return hashlib.sha256(format_kv(items).encode()).hexdigest()


class Config:
    """Typed access over merged key=value items."""

    def __init__(self, items: dict[str, str]):
        self.items = dict(items)

    @classmethod
    def defaults(cls) -> "Config":
        return cls(parse_kv_text(DEFAULT_CONFIG))

    @classmethod
    def load(cls, text: str | None = None, overrides: dict[str, str] | None = None) -> "Config":
        """Defaults overlaid with optional config text and explicit overrides."""
        items = parse_kv_text(DEFAULT_CONFIG)
        if text is not None:
            items.update(parse_kv_text(text))
        if overrides:
            items.update(overrides)
        return cls(items)

    def get_str(self, key: str) -> str:
        try:
            return self.items[key]
        except KeyError:
            raise ConfigError(f"missing config key: {key}") from None

    def get_float(self, key: str) -> float:
        value = self.get_str(key)
        try:
            return float(value)
        except ValueError:
            raise ConfigError(f"key {key}: not a number: {value!r}") from None

    def get_int(self, key: str) -> int:
        value = self.get_str(key)
        try:
            return int(value)
        except ValueError:
            raise ConfigError(f"key {key}: not an integer: {value!r}") from None

    def get_range(self, key: str) -> tuple[float, float]:
        """Parse 'lo:hi' into a (lo, hi) pair."""
        value = self.get_str(key)
        parts = value.split(":")
        if len(parts) != 2:
            raise ConfigError(f"key {key}: expected lo:hi, got {value!r}")
        try:
            lo, hi = float(parts[0]), float(parts[1])
        except ValueError:
            raise ConfigError(f"key {key}: expected numbers in lo:hi, got {value!r}") from None
        if hi < lo:
            raise ConfigError(f"key {key}: range is reversed: {value!r}")
        return lo, hi

    def get_weights(self, key: str) -> dict[str, float]:
        """Parse 'name:w,name:w,...' into a dict of non-negative weights."""
        value = self.get_str(key)
        weights: dict[str, float] = {}
        for part in value.split(","):
            part = part.strip()
            if not part:
                continue
            name, _, w = part.partition(":")
            try:
                weights[name.strip()] = float(w)
            except ValueError:
                raise ConfigError(f"key {key}: bad weight entry {part!r}") from None
        if not weights or any(w < 0 for w in weights.values()) or sum(weights.values()) <= 0:
            raise ConfigError(f"key {key}: weights must be non-negative and sum > 0")
        return weights

    def subkeys(self, prefix: str) -> list[str]:
        """Distinct next path components under a dotted prefix."""
        prefix = prefix.rstrip(".") + "."
        names = []
        for key in self.items:
            if key.startswith(prefix):
                name = key[len(prefix) :].split(".", 1)[0]
                if name not in names:
                    names.append(name)
        return names

    def section(self, prefix: str) -> dict[str, str]:
        """All items under a dotted prefix, keys relative to it."""
        prefix = prefix.rstrip(".") + "."
        return {k[len(prefix) :]: v for k, v in self.items.items() if k.startswith(prefix)}

    def hash(self) -> str:
        return config_hash(self.items)


DEFAULT_CONFIG = """\
# skillselect default configuration
seed = 0

robot.mass = 52.0
robot.gravity = 9.81
robot.command_speed = 0.6
robot.control_dt = 0.02
robot.time_limit = 4.0
robot.horizon_distance = 1.5

skill.walk.id = 0
skill.walk.max_ascend = 0.10
skill.walk.max_descend = 0.10
skill.walk.base_power = 220.0
skill.walk.power_per_ascend = 900.0
skill.walk.power_per_descend = 300.0
skill.walk.slip_sharpness = 400.0
skill.walk.swing_clearance = 0.06

skill.ascend.id = 1
skill.ascend.max_ascend = 0.25
skill.ascend.max_descend = 0.12
skill.ascend.base_power = 300.0
skill.ascend.power_per_ascend = 750.0
skill.ascend.power_per_descend = 320.0
skill.ascend.slip_sharpness = 400.0
skill.ascend.swing_clearance = 0.10

skill.descend.id = 2
skill.descend.max_ascend = 0.12
skill.descend.max_descend = 0.25
skill.descend.base_power = 290.0
skill.descend.power_per_ascend = 850.0
skill.descend.power_per_descend = 260.0
skill.descend.slip_sharpness = 400.0
skill.descend.swing_clearance = 0.10

skill.climb.id = 3
skill.climb.max_ascend = 0.50
skill.climb.max_descend = 0.50
skill.climb.base_power = 380.0
skill.climb.power_per_ascend = 800.0
skill.climb.power_per_descend = 350.0
skill.climb.slip_sharpness = 400.0
skill.climb.swing_clearance = 0.12

skill.gap.id = 4
skill.gap.max_ascend = 0.12
skill.gap.max_descend = 0.12
skill.gap.base_power = 340.0
skill.gap.power_per_ascend = 900.0
skill.gap.power_per_descend = 350.0
skill.gap.slip_sharpness = 400.0
skill.gap.swing_clearance = 0.35

selector.window_length = 10
selector.tick_rate = 50.0
selector.threshold.walk = 0.95
selector.threshold.ascend = 0.925
selector.threshold.descend = 0.925
selector.threshold.climb = 0.925
selector.threshold.gap = 0.925

collect.rollouts_per_sample = 10
collect.spawn_retry_cap = 100
collect.noise_amplitude = 0.10
collect.test_fraction = 0.10
collect.extent_x = 12.0
collect.extent_y = 6.0
collect.families = flat:0.12,rough:0.14,discrete:0.10,stairs_up:0.24,stairs_down:0.24,wall:0.08,gap:0.08
collect.stairs.step_height_range = 0.02:0.32
collect.stairs.step_depth = 0.30
collect.rough.amplitude_range = 0.01:0.12
collect.discrete.amplitude_range = 0.03:0.18
collect.discrete.size_range = 0.4:1.0
collect.wall.height_range = 0.15:0.70
collect.gap.width_range = 0.25:0.90
collect.stairs.spawn_x_range = -2.0:2.0
collect.stairs.yaw_range = -0.35:0.35
collect.obstacle.spawn_x_range = -2.5:1.0
collect.obstacle.yaw_range = -0.35:0.35
collect.open.yaw_range = -3.141592653589793:3.141592653589793

train.learning_rate = 0.005
train.momentum = 0.9
train.batch_size = 64
train.epochs = 30

eval.sweep.height_range = 0.05:0.30
eval.sweep.increment = 0.025
eval.sweep.samples_per_height = 500
eval.sweep.rollouts_per_sample = 10
eval.cot_viability_cutoff = 0.9
eval.course.trials = 100
eval.course.lead_in = 2.5
eval.course.exit_length = 2.0
eval.course.num_steps = 6
eval.course.step_depth = 0.30
eval.course.width = 6.0
eval.course.time_margin = 5.0
"""
