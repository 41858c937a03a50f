"""Runtime skill selection with threshold filtering and commit hysteresis.

Every tick the selector predicts viability and cost of transport for each
registered skill, discards skills whose viability falls below their
threshold, and proposes the cheapest survivor (Stop when none survive).
Raw proposals feed a fixed-length sliding window; the executing decision
changes only when the whole window agrees, which suppresses flicker in
both directions. The committed decision starts at Stop.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field as dataclass_field
from typing import Mapping

import numpy as np

from .nnet import CnnModel, HeadKind, HeadKindMismatchError, forward
from .simkernel import SkillProfile
from .terrain import Heightfield


class SkillSetMismatchError(ValueError):
    """Prediction vectors and thresholds cover different skill sets."""


class DuplicateSkillError(ValueError):
    """A skill id is already registered."""


@dataclass(frozen=True)
class Decision:
    """Either a concrete skill to execute or Stop."""

    skill_id: int | None

    @classmethod
    def stop(cls) -> "Decision":
        return cls(skill_id=None)

    @classmethod
    def skill(cls, skill_id: int) -> "Decision":
        return cls(skill_id=int(skill_id))

    @property
    def is_stop(self) -> bool:
        return self.skill_id is None

    def __str__(self) -> str:
        return "stop" if self.is_stop else f"skill:{self.skill_id}"


STOP = Decision.stop()


@dataclass(frozen=True)
class SelectorConfig:
    """Per-skill viability thresholds plus window and tick-rate settings."""

    thresholds: Mapping[int, float]
    window_length: int = 10
    tick_rate_hz: float = 50.0

    def __post_init__(self) -> None:
        if self.window_length < 1:
            raise ValueError("window_length must be >= 1")
        if any(not 0.0 < t < 1.0 for t in self.thresholds.values()):
            raise ValueError("thresholds must lie in (0, 1)")


@dataclass(frozen=True)
class RegisteredSkill:
    profile: SkillProfile
    viability_model: CnnModel
    cot_model: CnnModel
    threshold: float


class SkillRegistry:
    """Registered skills with their predictor models, ordered by id."""

    def __init__(self) -> None:
        self._skills: dict[int, RegisteredSkill] = {}

    def register(
        self,
        profile: SkillProfile,
        viability_model: CnnModel,
        cot_model: CnnModel,
        threshold: float,
    ) -> "SkillRegistry":
        """Add a skill; existing entries and their models are untouched."""
        if profile.id in self._skills:
            raise DuplicateSkillError(f"skill id {profile.id} is already registered")
        if viability_model.head_kind is not HeadKind.VIABILITY:
            raise HeadKindMismatchError(
                f"viability model for {profile.name!r} has head {viability_model.head_kind.value}"
            )
        if cot_model.head_kind is not HeadKind.COT:
            raise HeadKindMismatchError(
                f"cot model for {profile.name!r} has head {cot_model.head_kind.value}"
            )
        self._skills[profile.id] = RegisteredSkill(
            profile=profile,
            viability_model=viability_model,
            cot_model=cot_model,
            threshold=threshold,
        )
        return self

    def ids(self) -> list[int]:
        return sorted(self._skills)

    def __len__(self) -> int:
        return len(self._skills)

    def __getitem__(self, skill_id: int) -> RegisteredSkill:
        return self._skills[skill_id]

    def config(self, window_length: int = 10, tick_rate_hz: float = 50.0) -> SelectorConfig:
        thresholds = {sid: self._skills[sid].threshold for sid in self.ids()}
        return SelectorConfig(
            thresholds=thresholds, window_length=window_length, tick_rate_hz=tick_rate_hz
        )


def register_skill(
    registry: SkillRegistry,
    profile: SkillProfile,
    viability_model: CnnModel,
    cot_model: CnnModel,
    threshold: float,
) -> SkillRegistry:
    """Functional wrapper around SkillRegistry.register."""
    return registry.register(profile, viability_model, cot_model, threshold)


@dataclass
class SelectorState:
    """Rolling window of raw decisions plus the committed decision."""

    window: deque = dataclass_field(default_factory=deque)
    committed: Decision = STOP


def raw_decision(
    viabilities: Mapping[int, float],
    cots: Mapping[int, float],
    cfg: SelectorConfig,
) -> Decision:
    """Filter unsafe skills, then pick the lowest predicted cost.

    Skills with viability below their threshold are discarded; with no
    survivors the proposal is Stop. Cost ties break to the lowest id.
    """
    skill_ids = set(cfg.thresholds)
    if set(viabilities) != skill_ids or set(cots) != skill_ids:
        raise SkillSetMismatchError(
            f"prediction skill sets {sorted(viabilities)} / {sorted(cots)} "
            f"do not match thresholds {sorted(skill_ids)}"
        )
    best: int | None = None
    best_cost = np.inf
    for sid in sorted(skill_ids):
        if viabilities[sid] < cfg.thresholds[sid]:
            continue
        if cots[sid] < best_cost:
            best = sid
            best_cost = cots[sid]
    return STOP if best is None else Decision.skill(best)


def push_decision(state: SelectorState, raw: Decision, cfg: SelectorConfig) -> Decision:
    """Window update and commit rule shared by tick and the fuzz harness."""
    state.window.append(raw)
    while len(state.window) > cfg.window_length:
        state.window.popleft()
    if len(state.window) == cfg.window_length and all(d == raw for d in state.window):
        state.committed = raw
    return state.committed


def tick(
    state: SelectorState,
    hf: Heightfield,
    registry: SkillRegistry,
    cfg: SelectorConfig,
) -> Decision:
    """One 50 Hz selector step on an already filled, normalized heightfield."""
    viabilities: dict[int, float] = {}
    cots: dict[int, float] = {}
    for sid in registry.ids():
        entry = registry[sid]
        viabilities[sid] = forward(entry.viability_model, hf).value
        cots[sid] = forward(entry.cot_model, hf).value
    raw = raw_decision(viabilities, cots, cfg)
    return push_decision(state, raw, cfg)


def tick_log_header(registry: SkillRegistry) -> str:
    """CSV header for per-tick logs: predictions plus raw/committed decisions."""
    cols = ["tick"]
    for sid in registry.ids():
        name = registry[sid].profile.name
        cols.append(f"viability_{name}")
    for sid in registry.ids():
        name = registry[sid].profile.name
        cols.append(f"cot_{name}")
    cols += ["raw", "committed"]
    return ",".join(cols)


def tick_log_row(
    tick_index: int,
    registry: SkillRegistry,
    viabilities: Mapping[int, float],
    cots: Mapping[int, float],
    raw: Decision,
    committed: Decision,
) -> str:
    cells = [str(tick_index)]
    cells += [repr(float(viabilities[sid])) for sid in registry.ids()]
    cells += [repr(float(cots[sid])) for sid in registry.ids()]
    cells += [str(raw), str(committed)]
    return ",".join(cells)
