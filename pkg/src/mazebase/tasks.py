"""The ten maze games: instance generators, step rules and termination logic."""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

import numpy as np

from .engine import (
    DEFAULT_MAX_STEPS,
    GameState,
    GenerationError,
    InfoItem,
    Item,
    ItemKind,
    Position,
    StepEvent,
    color_word,
    empty_world,
    pct_count,
    pick_free,
    place_agent,
    scatter,
    check_start,
)

GOAL_NAMES = tuple(f"g{i}" for i in range(1, 7))
ORDINALS = ("first", "second", "third", "fourth", "fifth", "sixth")
EDGES = ("left", "right", "top", "bottom")
GENERATION_ATTEMPTS = 20

EXCLUSION_PENALTY = 0.5
WRONG_GOAL_PENALTY = 0.2


class TaskKind(str, Enum):
    MULTIGOALS = "multigoals"
    CONDITIONAL_GOALS = "conditional_goals"
    EXCLUSION = "exclusion"
    SWITCHES = "switches"
    LIGHT_KEY = "light_key"
    GOTO = "goto"
    GOTO_HIDDEN = "goto_hidden"
    PUSH_BLOCK = "push_block"
    PUSH_BLOCK_CARDINAL = "push_block_cardinal"
    BLOCKED_DOOR = "blocked_door"


@dataclass(frozen=True)
class VarRange:
    lo: float
    hi: float
    step: float = 1
    integer: bool = True


def _common(dim_lo: int, dim_hi: int, pct_hi: float) -> dict[str, VarRange]:
    return {
        "height": VarRange(dim_lo, dim_hi),
        "width": VarRange(dim_lo, dim_hi),
        "block_pct": VarRange(0, pct_hi, 2, integer=False),
        "water_pct": VarRange(0, pct_hi, 2, integer=False),
    }


_MAZE = _common(5, 10, 20)
_PUSH = _common(3, 7, 10)

TASK_VARS: dict[TaskKind, dict[str, VarRange]] = {
    TaskKind.MULTIGOALS: {**_MAZE, "n_goals": VarRange(2, 6), "n_active_goals": VarRange(1, 3)},
    TaskKind.EXCLUSION: {**_MAZE, "n_goals": VarRange(2, 6), "n_active_goals": VarRange(1, 3)},
    TaskKind.CONDITIONAL_GOALS: {**_MAZE, "n_colors": VarRange(2, 6), "n_goals": VarRange(2, 6)},
    TaskKind.SWITCHES: {**_MAZE, "n_switches": VarRange(1, 5), "n_colors": VarRange(1, 6)},
    TaskKind.LIGHT_KEY: {**_MAZE, "n_colors": VarRange(2, 6)},
    TaskKind.GOTO: dict(_MAZE),
    TaskKind.GOTO_HIDDEN: {**_MAZE, "n_goals": VarRange(1, 6)},
    TaskKind.PUSH_BLOCK: dict(_PUSH),
    TaskKind.PUSH_BLOCK_CARDINAL: dict(_PUSH),
    TaskKind.BLOCKED_DOOR: dict(_MAZE),
}


# --------------------------------------------------------------------------- task states


def _goal_at(state: GameState, pos) -> Optional[Item]:
    return state.get(pos, ItemKind.GOAL)


@dataclass
class MultigoalsState:
    order: list[str]
    next_index: int = 0
    hard: bool = False
    kind: TaskKind = TaskKind.MULTIGOALS

    def check(self, state: GameState) -> bool:
        return self.next_index >= len(self.order)

    def on_step(self, state: GameState, event: StepEvent):
        _expect_event(event)
        goal = _goal_at(state, state.agent)
        if goal is not None and self.next_index < len(self.order) and goal.name == self.order[self.next_index]:
            self.next_index += 1
            if not self.hard:
                goal.visited = True
        done = self.next_index >= len(self.order)
        return 0.0, done, done

    def copy(self):
        return MultigoalsState(list(self.order), self.next_index, self.hard)

    def key(self):
        return (self.kind.value, tuple(self.order), self.next_index, self.hard)


@dataclass
class ExclusionState:
    targets: frozenset
    forbidden: frozenset
    visited: set = field(default_factory=set)
    kind: TaskKind = TaskKind.EXCLUSION

    def check(self, state: GameState) -> bool:
        return self.targets <= self.visited

    def on_step(self, state: GameState, event: StepEvent):
        _expect_event(event)
        penalty = 0.0
        goal = _goal_at(state, state.agent)
        if goal is not None:
            if goal.name in self.forbidden:
                penalty = EXCLUSION_PENALTY
            elif goal.name in self.targets and goal.name not in self.visited:
                self.visited.add(goal.name)
                goal.visited = True
        done = self.targets <= self.visited
        return penalty, done, done

    def copy(self):
        return ExclusionState(self.targets, self.forbidden, set(self.visited))

    def key(self):
        return (self.kind.value, tuple(sorted(self.visited)))


@dataclass
class ConditionalGoalsState:
    switch_pos: Position
    if_color: int
    if_goal: str
    else_goal: str
    kind: TaskKind = TaskKind.CONDITIONAL_GOALS

    def target(self, state: GameState) -> str:
        sw = state.get(self.switch_pos, ItemKind.SWITCH)
        return self.if_goal if sw.color == self.if_color else self.else_goal

    def check(self, state: GameState) -> bool:
        goal = _goal_at(state, state.agent)
        return goal is not None and goal.name == self.target(state)

    def on_step(self, state: GameState, event: StepEvent):
        _expect_event(event)
        goal = _goal_at(state, state.agent)
        if goal is None:
            return 0.0, False, False
        if goal.name == self.target(state):
            return 0.0, True, True
        return WRONG_GOAL_PENALTY, False, False

    def copy(self):
        return self

    def key(self):
        return (self.kind.value,)


@dataclass
class SwitchesState:
    switch_positions: tuple
    kind: TaskKind = TaskKind.SWITCHES

    def uniform(self, state: GameState) -> bool:
        colors = {state.get(p, ItemKind.SWITCH).color for p in self.switch_positions}
        return len(colors) == 1

    def check(self, state: GameState) -> bool:
        # the game needs at least one toggle; an untouched board never counts as solved
        return False

    def on_step(self, state: GameState, event: StepEvent):
        _expect_event(event)
        done = event.toggled and self.uniform(state)
        return 0.0, done, done

    def copy(self):
        return self

    def key(self):
        return (self.kind.value,)


@dataclass
class ReachState:
    """Goto, Goto Hidden, Light Key and Blocked Door: finish on reaching one cell."""

    target: Position
    kind: TaskKind = TaskKind.GOTO

    def check(self, state: GameState) -> bool:
        return state.agent == self.target

    def on_step(self, state: GameState, event: StepEvent):
        _expect_event(event)
        done = state.agent == self.target
        return 0.0, done, done

    def copy(self):
        return self

    def key(self):
        return (self.kind.value,)


@dataclass
class PushState:
    """Push Block (onto ``switch_pos``) or Push Block Cardinal (onto ``edge``)."""

    switch_pos: Optional[Position] = None
    edge: Optional[str] = None
    kind: TaskKind = TaskKind.PUSH_BLOCK

    def block_ok(self, state: GameState, pos) -> bool:
        if self.edge is None:
            return pos == self.switch_pos
        return on_edge(pos, self.edge, state.width, state.height)

    def check(self, state: GameState) -> bool:
        return any(self.block_ok(state, p) for p, _ in state.find(ItemKind.PUSHABLE))

    def on_step(self, state: GameState, event: StepEvent):
        _expect_event(event)
        done = event.pushed and self.check(state)
        return 0.0, done, done

    def copy(self):
        return self

    def key(self):
        return (self.kind.value,)


def on_edge(pos, edge: str, width: int, height: int) -> bool:
    x, y = pos
    if edge == "left":
        return x == 0
    if edge == "right":
        return x == width - 1
    if edge == "bottom":
        return y == 0
    if edge == "top":
        return y == height - 1
    raise ValueError(f"unknown edge {edge!r}")


def _expect_event(event) -> None:
    if not isinstance(event, StepEvent):
        raise TypeError(f"unknown step event {event!r}")


def task_step_hook(kind, task_state, state: GameState, event):
    """Evaluate one task's rules after an engine action: (penalty, done, success)."""
    if TaskKind(kind) is not task_state.kind:
        raise ValueError(f"task state of kind {task_state.kind.value} does not match {kind}")
    return task_state.on_step(state, event)


# --------------------------------------------------------------------------- generators


def _int(vars: dict, name: str) -> int:
    return int(vars[name])


def _base_world(vars: dict, rng: np.random.Generator, max_steps: int) -> GameState:
    return empty_world(_int(vars, "width"), _int(vars, "height"), rng, max_steps)


def _scatter_obstacles(state: GameState, vars: dict, rng: np.random.Generator, exclude=frozenset()) -> None:
    n_block = pct_count(float(vars["block_pct"]), state.width, state.height)
    n_water = pct_count(float(vars["water_pct"]), state.width, state.height)
    free = len([p for p in state.free_cells() if p not in exclude])
    # keep a handful of cells open for the agent and task items
    n_block = max(0, min(n_block, free - 4))
    scatter(state, ItemKind.BLOCK, n_block, rng, exclude)
    free = len([p for p in state.free_cells() if p not in exclude])
    n_water = max(0, min(n_water, free - 4))
    scatter(state, ItemKind.WATER, n_water, rng, exclude)


def _place_goals(state: GameState, names, rng: np.random.Generator, where=None) -> dict[str, Position]:
    out = {}
    for name in names:
        p = pick_free(state, rng, where=where)
        state.add_item(p, Item(ItemKind.GOAL, name=name))
        out[name] = p
    return out


def _goal_names(rng: np.random.Generator, n: int) -> list[str]:
    idx = rng.permutation(len(GOAL_NAMES))[:n]
    return [GOAL_NAMES[int(i)] for i in idx]


def _gen_multigoals(vars, rng, max_steps, hard=False):
    n_goals = _int(vars, "n_goals")
    n_active = min(_int(vars, "n_active_goals"), n_goals)
    state = _base_world(vars, rng, max_steps)
    _scatter_obstacles(state, vars, rng)
    place_agent(state, rng)
    names = _goal_names(rng, n_goals)
    _place_goals(state, names, rng)
    order = [names[int(i)] for i in rng.permutation(n_goals)[:n_active]]
    state.infos = [InfoItem(("visit", g, ORDINALS[i])) for i, g in enumerate(order)]
    state.task_state = MultigoalsState(order=order, hard=hard)
    state.allow_breadcrumb = hard
    return state


def _gen_exclusion(vars, rng, max_steps):
    n_goals = _int(vars, "n_goals")
    n_active = min(_int(vars, "n_active_goals"), n_goals)
    state = _base_world(vars, rng, max_steps)
    _scatter_obstacles(state, vars, rng)
    place_agent(state, rng)
    names = _goal_names(rng, n_goals)
    _place_goals(state, names, rng)
    targets, forbidden = names[:n_active], names[n_active:]
    state.infos = [InfoItem(("visit", "all", "goals"))] + [InfoItem(("avoid", g)) for g in forbidden]
    state.task_state = ExclusionState(targets=frozenset(targets), forbidden=frozenset(forbidden))
    return state


def _gen_conditional(vars, rng, max_steps):
    n_colors = _int(vars, "n_colors")
    n_goals = _int(vars, "n_goals")
    state = _base_world(vars, rng, max_steps)
    _scatter_obstacles(state, vars, rng)
    place_agent(state, rng)
    sw_pos = pick_free(state, rng)
    sw_color = int(rng.integers(n_colors))
    state.add_item(sw_pos, Item(ItemKind.SWITCH, color=sw_color, num_states=n_colors))
    names = _goal_names(rng, n_goals)
    _place_goals(state, names, rng)
    if_goal, else_goal = names[0], names[1]
    # condition holds half the time so both branches of the rule occur
    if rng.random() < 0.5:
        if_color = sw_color
    else:
        others = [c for c in range(n_colors) if c != sw_color]
        if_color = others[int(rng.integers(len(others)))]
    state.infos = [
        InfoItem(("if", "switch", "is", color_word(if_color), "go", "to", if_goal)),
        InfoItem(("else", "go", "to", else_goal)),
    ]
    state.task_state = ConditionalGoalsState(sw_pos, if_color, if_goal, else_goal)
    return state


def _gen_switches(vars, rng, max_steps):
    n_sw = _int(vars, "n_switches")
    n_colors = _int(vars, "n_colors")
    state = _base_world(vars, rng, max_steps)
    _scatter_obstacles(state, vars, rng)
    place_agent(state, rng)
    colors = [int(c) for c in rng.integers(n_colors, size=n_sw)]
    if n_sw >= 2 and n_colors >= 2:
        while len(set(colors)) == 1:
            colors = [int(c) for c in rng.integers(n_colors, size=n_sw)]
    positions = []
    for c in colors:
        p = pick_free(state, rng)
        state.add_item(p, Item(ItemKind.SWITCH, color=c, num_states=n_colors))
        positions.append(p)
    state.infos = [InfoItem(("toggle", "switches", "to", "same", "color"))]
    state.task_state = SwitchesState(tuple(positions))
    return state


def _wall_world(vars, rng, max_steps):
    """World split by a full wall of blocks with one gap; returns (state, gap, side_of)."""
    state = _base_world(vars, rng, max_steps)
    w, h = state.width, state.height
    vertical = bool(rng.integers(2)) if (w >= 3 and h >= 3) else w >= 3
    if vertical:
        if w < 3:
            raise GenerationError("grid too narrow for a wall")
        wx = int(rng.integers(1, w - 1))
        gy = int(rng.integers(h))
        gap = Position(wx, gy)
        wall = [Position(wx, y) for y in range(h) if y != gy]
        approach = {Position(wx - 1, gy), Position(wx + 1, gy)}

        def side_of(p):
            return 0 if p.x < wx else (1 if p.x > wx else None)
    else:
        if h < 3:
            raise GenerationError("grid too short for a wall")
        wy = int(rng.integers(1, h - 1))
        gx = int(rng.integers(w))
        gap = Position(gx, wy)
        wall = [Position(x, wy) for x in range(w) if x != gx]
        approach = {Position(gx, wy - 1), Position(gx, wy + 1)}

        def side_of(p):
            return 0 if p.y < wy else (1 if p.y > wy else None)
    for p in wall:
        state.add_item(p, Item(ItemKind.BLOCK))
    return state, gap, side_of, approach


def _gen_light_key(vars, rng, max_steps):
    n_colors = _int(vars, "n_colors")
    state, gap, side_of, approach = _wall_world(vars, rng, max_steps)
    _scatter_obstacles(state, vars, rng, exclude=approach | {gap})
    agent_side = int(rng.integers(2))
    goal_side = int(rng.integers(2))
    sw_pos = pick_free(state, rng, exclude={gap} | approach, where=lambda p: side_of(p) == agent_side)
    state.add_item(sw_pos, Item(ItemKind.SWITCH, color=int(rng.integers(n_colors)), num_states=n_colors))
    state.add_item(gap, Item(ItemKind.DOOR, color=int(rng.integers(n_colors)), switch_pos=sw_pos))
    place_agent(state, rng, where=lambda p: side_of(p) == agent_side)
    name = _goal_names(rng, 1)[0]
    goal = _place_goals(state, [name], rng, where=lambda p: side_of(p) == goal_side)[name]
    state.infos = [InfoItem(("go", "to", name))]
    state.task_state = ReachState(goal, kind=TaskKind.LIGHT_KEY)
    return state


def _gen_blocked_door(vars, rng, max_steps):
    state, gap, side_of, approach = _wall_world(vars, rng, max_steps)
    _scatter_obstacles(state, vars, rng, exclude=approach | {gap})
    state.add_item(gap, Item(ItemKind.PUSHABLE))
    agent_side = int(rng.integers(2))
    goal_side = int(rng.integers(2))
    place_agent(state, rng, where=lambda p: side_of(p) == agent_side)
    name = _goal_names(rng, 1)[0]
    goal = _place_goals(state, [name], rng, where=lambda p: side_of(p) == goal_side)[name]
    state.infos = [InfoItem(("go", "to", name))]
    state.task_state = ReachState(goal, kind=TaskKind.BLOCKED_DOOR)
    return state


def _open_cells(state: GameState) -> list[Position]:
    return [Position(x, y) for y in range(state.height) for x in range(state.width)
            if not state.has(Position(x, y), ItemKind.BLOCK) and Position(x, y) != state.agent]


def _gen_goto(vars, rng, max_steps):
    state = _base_world(vars, rng, max_steps)
    _scatter_obstacles(state, vars, rng)
    place_agent(state, rng)
    cells = _open_cells(state)
    target = cells[int(rng.integers(len(cells)))]
    state.infos = [InfoItem(("go", "to", f"x={target.x}", f"y={target.y}"))]
    state.task_state = ReachState(target, kind=TaskKind.GOTO)
    return state


def _gen_goto_hidden(vars, rng, max_steps):
    n_goals = _int(vars, "n_goals")
    state = _base_world(vars, rng, max_steps)
    _scatter_obstacles(state, vars, rng)
    place_agent(state, rng)
    cells = _open_cells(state)
    if n_goals > len(cells):
        raise GenerationError("not enough open cells for hidden goals")
    idx = rng.choice(len(cells), size=n_goals, replace=False)
    names = _goal_names(rng, n_goals)
    listing = [(names[i], cells[int(j)]) for i, j in enumerate(idx)]
    target_name, target = listing[int(rng.integers(n_goals))]
    state.infos = [InfoItem((name, "at", f"x={p.x}", f"y={p.y}")) for name, p in listing]
    state.infos.append(InfoItem(("go", "to", target_name)))
    state.task_state = ReachState(target, kind=TaskKind.GOTO_HIDDEN)
    return state


def _gen_push_block(vars, rng, max_steps):
    state = _base_world(vars, rng, max_steps)
    _scatter_obstacles(state, vars, rng)
    place_agent(state, rng)
    sw_pos = pick_free(state, rng)
    state.add_item(sw_pos, Item(ItemKind.SWITCH, color=0, num_states=1))
    block = pick_free(state, rng)
    state.add_item(block, Item(ItemKind.PUSHABLE))
    state.push_targets = frozenset({sw_pos})
    state.infos = [InfoItem(("push", "block", "to", "switch"))]
    state.task_state = PushState(switch_pos=sw_pos, kind=TaskKind.PUSH_BLOCK)
    return state


def _gen_push_block_cardinal(vars, rng, max_steps):
    state = _base_world(vars, rng, max_steps)
    _scatter_obstacles(state, vars, rng)
    place_agent(state, rng)
    edge = EDGES[int(rng.integers(len(EDGES)))]
    block = pick_free(state, rng, where=lambda p: not on_edge(p, edge, state.width, state.height))
    state.add_item(block, Item(ItemKind.PUSHABLE))
    state.infos = [InfoItem(("push", "block", "to", edge))]
    state.task_state = PushState(edge=edge, kind=TaskKind.PUSH_BLOCK_CARDINAL)
    return state


GENERATORS: dict[TaskKind, Callable] = {
    TaskKind.MULTIGOALS: _gen_multigoals,
    TaskKind.EXCLUSION: _gen_exclusion,
    TaskKind.CONDITIONAL_GOALS: _gen_conditional,
    TaskKind.SWITCHES: _gen_switches,
    TaskKind.LIGHT_KEY: _gen_light_key,
    TaskKind.GOTO: _gen_goto,
    TaskKind.GOTO_HIDDEN: _gen_goto_hidden,
    TaskKind.PUSH_BLOCK: _gen_push_block,
    TaskKind.PUSH_BLOCK_CARDINAL: _gen_push_block_cardinal,
    TaskKind.BLOCKED_DOOR: _gen_blocked_door,
}


def full_ranges(kind) -> dict[str, tuple[float, float]]:
    return {name: (r.lo, r.hi) for name, r in TASK_VARS[TaskKind(kind)].items()}


def sample_vars(kind, rng: np.random.Generator, ranges: Optional[dict] = None) -> dict:
    """Draw every difficulty variable uniformly from ``ranges`` (default: the full task ranges)."""
    spec = TASK_VARS[TaskKind(kind)]
    ranges = ranges or {}
    out = {}
    for name, r in spec.items():
        lo, hi = ranges.get(name, (r.lo, r.hi))
        if r.integer:
            out[name] = int(rng.integers(int(lo), int(hi) + 1))
        else:
            out[name] = float(lo) if hi <= lo else float(rng.uniform(lo, hi))
    return out


def check_vars(kind, vars: dict) -> None:
    spec = TASK_VARS[TaskKind(kind)]
    for name, value in vars.items():
        if name not in spec:
            raise ValueError(f"{kind}: unknown difficulty variable {name!r}")
    # dimensions may be pushed below the paper ranges (tiny test instances) but not above
    for name, value in vars.items():
        r = spec[name]
        lo = 2 if name in ("height", "width") else r.lo
        if not lo <= value <= r.hi:
            raise ValueError(f"{kind}: {name}={value} outside [{lo}, {r.hi}]")


def generate_instance(kind, vars: Optional[dict], rng: np.random.Generator, hard: bool = False,
                      max_steps: int = DEFAULT_MAX_STEPS, attempts: int = GENERATION_ATTEMPTS) -> GameState:
    """Generate a solvable instance; missing variables are drawn from the full ranges."""
    from .oracle import Unsolvable, solve

    kind = TaskKind(kind)
    if hard and kind is not TaskKind.MULTIGOALS:
        raise ValueError("the breadcrumb variant exists only for multigoals")
    full = sample_vars(kind, rng)
    vars = {**full, **(vars or {})}
    check_vars(kind, vars)
    gen = GENERATORS[kind]
    last_error: Exception | None = None
    for _ in range(attempts):
        try:
            state = gen(vars, rng, max_steps, hard=True) if hard else gen(vars, rng, max_steps)
            check_start(state)
            if state.terminated:
                raise GenerationError("instance already solved at start")
            state.oracle_units = solve(state).units
            return state
        except (GenerationError, Unsolvable) as exc:
            last_error = exc
    raise GenerationError(f"{kind.value}: no solvable instance after {attempts} attempts ({last_error})")


def hard_multigoals_variant(flag: bool) -> Callable:
    """Multigoals generator; with ``flag`` the visited markers are hidden and breadcrumbs enabled."""

    def generate(vars, rng, **kw):
        return generate_instance(TaskKind.MULTIGOALS, vars, rng, hard=flag, **kw)

    return generate
