"""Threshold-driven difficulty controller.

Each difficulty variable is sampled uniformly from ``[min, cur_max]``. A rolling
window of episode outcomes moves every ``cur_max`` up one step when the success
rate is above ``t_upper`` and down one step when it is below ``t_lower``. From
two thirds of training onward the ranges are pinned at their maxima.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional

import numpy as np

from .tasks import TASK_VARS, TaskKind

FORCE_MAX_PROGRESS = 2 / 3


class CurriculumError(RuntimeError):
    pass


@dataclass
class DifficultyVar:
    name: str
    min: float
    cur_max: float
    abs_max: float
    step: float = 1
    integer: bool = True

    def __post_init__(self):
        if not self.min <= self.cur_max <= self.abs_max:
            raise ValueError(f"{self.name}: need min <= cur_max <= abs_max, got "
                             f"{self.min}, {self.cur_max}, {self.abs_max}")
        if self.step <= 0:
            raise ValueError(f"{self.name}: step must be positive")

    def raise_(self) -> None:
        self.cur_max = min(self.abs_max, self.cur_max + self.step)

    def lower(self) -> None:
        self.cur_max = max(self.min, self.cur_max - self.step)

    def sample(self, rng: np.random.Generator) -> float:
        if self.integer:
            return int(rng.integers(int(self.min), int(self.cur_max) + 1))
        if self.cur_max <= self.min:
            return float(self.min)
        return float(rng.uniform(self.min, self.cur_max))


@dataclass
class CurriculumState:
    vars: list[DifficultyVar]
    t_lower: float = 0.5
    t_upper: float = 0.9
    window_size: int = 512
    window: deque = field(default_factory=deque)
    progress: float = 0.0
    forced: bool = False
    enabled: bool = True

    def __post_init__(self):
        if not 0 < self.t_lower < self.t_upper < 1:
            raise ValueError(f"thresholds must satisfy 0 < T_l < T_u < 1, got {self.t_lower}, {self.t_upper}")
        if self.window_size < 1:
            raise ValueError("window must hold at least one outcome")
        self.window = deque(self.window, maxlen=self.window_size)
        names = [v.name for v in self.vars]
        if len(set(names)) != len(names):
            raise ValueError("duplicate difficulty variable")

    @property
    def rate(self) -> float:
        return sum(self.window) / len(self.window) if self.window else float("nan")

    def ranges(self) -> dict[str, tuple[float, float]]:
        return {v.name: (v.min, v.cur_max) for v in self.vars}

    def record_outcome(self, success: bool) -> None:
        self.window.append(bool(success))

    def record_outcomes(self, outcomes: Iterable[bool]) -> None:
        for s in outcomes:
            self.record_outcome(s)

    def maybe_adjust(self) -> int:
        """Apply the threshold rule if the window is full; returns +1, -1 or 0."""
        if self.forced or not self.enabled or len(self.window) < self.window_size:
            return 0
        rate = self.rate
        if rate > self.t_upper:
            for v in self.vars:
                v.raise_()
            move = 1
        elif rate < self.t_lower:
            for v in self.vars:
                v.lower()
            move = -1
        else:
            return 0
        self.window.clear()
        return move

    def force_max(self) -> None:
        if self.progress < FORCE_MAX_PROGRESS - 1e-12:
            raise CurriculumError(f"force_max needs progress >= 2/3, got {self.progress:.4f}")
        for v in self.vars:
            v.cur_max = v.abs_max
        self.forced = True

    def set_progress(self, progress: float) -> None:
        """Advance the training clock; pins the ranges once the last third begins."""
        self.progress = float(progress)
        if not self.forced and self.progress >= FORCE_MAX_PROGRESS - 1e-12:
            self.force_max()

    def sample_difficulty(self, rng: np.random.Generator) -> dict[str, float]:
        return {v.name: v.sample(rng) for v in self.vars}

    # plain-data form for checkpoints
    def to_dict(self) -> dict:
        return {
            "vars": [vars(v).copy() for v in self.vars],
            "t_lower": self.t_lower, "t_upper": self.t_upper,
            "window_size": self.window_size, "window": list(self.window),
            "progress": self.progress, "forced": self.forced, "enabled": self.enabled,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "CurriculumState":
        return cls(vars=[DifficultyVar(**v) for v in d["vars"]], t_lower=d["t_lower"],
                   t_upper=d["t_upper"], window_size=d["window_size"], window=deque(d["window"]),
                   progress=d["progress"], forced=d["forced"], enabled=d["enabled"])

    def signature(self) -> tuple:
        return tuple((v.name, v.cur_max) for v in self.vars)


def state_from_vars(spec: Mapping[str, tuple], ranges: Optional[Mapping[str, tuple]] = None,
                    enabled: bool = True, start_at_max: bool = False, **kwargs) -> CurriculumState:
    """Controller over named variables; ``spec`` maps name -> (lo, hi, step, integer).

    ``ranges`` overrides ``(min, abs_max)`` per variable. With ``enabled=False``
    the ranges sit at their maxima for the whole run (the no-curriculum arm).
    """
    ranges = dict(ranges or {})
    unknown = set(ranges) - set(spec)
    if unknown:
        raise ValueError(f"unknown difficulty variables {sorted(unknown)}")
    out = []
    for name, (lo0, hi0, step, integer) in spec.items():
        lo, hi = ranges.get(name, (lo0, hi0))
        start = hi if (start_at_max or not enabled) else lo
        out.append(DifficultyVar(name, lo, start, hi, step, integer))
    return CurriculumState(out, enabled=enabled, **kwargs)


def task_curriculum(kind, ranges=None, enabled: bool = True, **kwargs) -> CurriculumState:
    spec = {name: (r.lo, r.hi, r.step, r.integer) for name, r in TASK_VARS[TaskKind(kind)].items()}
    return state_from_vars(spec, ranges, enabled, **kwargs)
