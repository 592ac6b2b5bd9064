"""Task registry: a uniform episode interface over maze games and combat scenarios."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import combat as cb
from .encoding import Observation, observe
from .engine import Action, N_MAZE_ACTIONS, apply_action
from .tasks import TASK_VARS, TaskKind, generate_instance


class Episode:
    """One running game seen from the controlled agents."""

    n_actions: int
    task: str

    def observations(self) -> list[Observation]:
        raise NotImplementedError

    def step(self, actions: list[int]) -> float:
        raise NotImplementedError

    @property
    def done(self) -> bool:
        raise NotImplementedError

    @property
    def success(self) -> bool:
        raise NotImplementedError

    @property
    def total_reward(self) -> float:
        raise NotImplementedError

    optimal_reward: Optional[float] = None
    won: Optional[bool] = None


class MazeEpisode(Episode):
    def __init__(self, task: str, state, hard: bool = False):
        self.task, self.state = task, state
        self.n_actions = N_MAZE_ACTIONS + (1 if hard else 0)
        self.optimal_reward = -state.oracle_units / 10 if state.oracle_units is not None else None

    def observations(self):
        return [observe(self.state)]

    def step(self, actions):
        return apply_action(self.state, Action(int(actions[0]))).reward

    @property
    def done(self):
        return self.state.terminated

    @property
    def success(self):
        return self.state.success

    @property
    def total_reward(self):
        return self.state.accumulated_reward


class CombatEpisode(Episode):
    n_actions = cb.N_COMBAT_ACTIONS

    def __init__(self, task: str, scenario: cb.CombatScenario, noise: float = 0.0):
        self.task, self.scenario, self.noise = task, scenario, noise

    def observations(self):
        sc = self.scenario
        obs = [cb.observe_combat(sc, i) for i, _ in sc.living("agent")]
        if self.noise > 0:
            obs = [cb.inject_feature_noise(o, sc.rng, self.noise) for o in obs]
        return obs

    def step(self, actions):
        return cb.combat_step(self.scenario, list(actions))[0]

    @property
    def done(self):
        return self.scenario.terminated

    @property
    def success(self):
        return self.scenario.won

    @property
    def won(self):
        return self.scenario.won

    @property
    def total_reward(self):
        return self.scenario.accumulated_reward


@dataclass(frozen=True)
class TaskSpec:
    name: str
    family: str  # "maze" or "combat"
    n_actions: int
    variables: dict  # name -> (lo, hi, step, integer)
    grid: tuple[int, int]  # largest board at the full ranges
    make: Callable[..., Episode]

    def window_grid(self, ranges: Optional[dict] = None) -> tuple[int, int]:
        """Largest board under (possibly narrowed) ranges."""
        if self.family != "maze":
            return self.grid
        ranges = ranges or {}
        w = ranges.get("width", self.variables["width"][:2])[1]
        h = ranges.get("height", self.variables["height"][:2])[1]
        return int(w), int(h)


def _maze_spec(kind: TaskKind, name: str, hard: bool = False) -> TaskSpec:
    variables = {k: (r.lo, r.hi, r.step, r.integer) for k, r in TASK_VARS[kind].items()}

    def make(vars: dict, rng: np.random.Generator, max_steps: int = 50, noise: float = 0.0) -> Episode:
        return MazeEpisode(name, generate_instance(kind, vars, rng, hard=hard, max_steps=max_steps), hard)

    grid = (int(variables["width"][1]), int(variables["height"][1]))
    return TaskSpec(name, "maze", N_MAZE_ACTIONS + (1 if hard else 0), variables, grid, make)


def _combat_spec(kind: cb.CombatKind) -> TaskSpec:
    def make(vars: dict, rng: np.random.Generator, max_steps: int = cb.MAX_STEPS, noise: float = 0.0) -> Episode:
        return CombatEpisode(kind.value, cb.generate_combat(kind, rng, vars, max_steps=max_steps), noise)

    return TaskSpec(kind.value, "combat", cb.N_COMBAT_ACTIONS, cb.COMBAT_VARS[kind], (cb.ARENA, cb.ARENA), make)


REGISTRY: dict[str, TaskSpec] = {k.value: _maze_spec(k, k.value) for k in TaskKind}
REGISTRY["multigoals_hard"] = _maze_spec(TaskKind.MULTIGOALS, "multigoals_hard", hard=True)
REGISTRY.update({k.value: _combat_spec(k) for k in cb.CombatKind})

MAZE_TASKS = tuple(k.value for k in TaskKind)


def get_task(name: str) -> TaskSpec:
    try:
        return REGISTRY[name]
    except KeyError:
        raise ValueError(f"unknown task {name!r}; known: {', '.join(sorted(REGISTRY))}") from None
