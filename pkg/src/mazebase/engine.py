"""Grid world core: items, actions, movement rules and per-step reward accounting.

Costs are tracked internally in integer tenths ("units") so that rewards sum
exactly: one action costs 1 unit, ending an action on water costs 2 more, and
task penalties are converted the same way.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import Any, NamedTuple, Optional

import numpy as np

STEP_UNITS = 1
WATER_UNITS = 2
DEFAULT_MAX_STEPS = 50


class GenerationError(RuntimeError):
    """Raised when a world or task instance cannot be generated."""


class Position(NamedTuple):
    x: int
    y: int

    def __add__(self, other):  # type: ignore[override]
        return Position(self.x + other[0], self.y + other[1])

    def __sub__(self, other):
        return Position(self.x - other[0], self.y - other[1])


class ItemKind(Enum):
    BLOCK = "block"
    WATER = "water"
    SWITCH = "switch"
    DOOR = "door"
    PUSHABLE = "pushable"
    CORNER = "corner"
    GOAL = "goal"
    BREADCRUMB = "breadcrumb"


class Action(IntEnum):
    MOVE_N = 0
    MOVE_S = 1
    MOVE_E = 2
    MOVE_W = 3
    TOGGLE = 4
    PUSH_N = 5
    PUSH_S = 6
    PUSH_E = 7
    PUSH_W = 8
    BREADCRUMB = 9


# x grows East, y grows North.
DIRECTIONS = {
    "N": (0, 1),
    "S": (0, -1),
    "E": (1, 0),
    "W": (-1, 0),
}
MOVE_DELTAS = {
    Action.MOVE_N: DIRECTIONS["N"],
    Action.MOVE_S: DIRECTIONS["S"],
    Action.MOVE_E: DIRECTIONS["E"],
    Action.MOVE_W: DIRECTIONS["W"],
}
PUSH_DELTAS = {
    Action.PUSH_N: DIRECTIONS["N"],
    Action.PUSH_S: DIRECTIONS["S"],
    Action.PUSH_E: DIRECTIONS["E"],
    Action.PUSH_W: DIRECTIONS["W"],
}
N_MAZE_ACTIONS = 9  # without the breadcrumb action


def color_word(color: int) -> str:
    return f"c{color + 1}"


@dataclass(slots=True)
class Item:
    kind: ItemKind
    color: int = 0
    num_states: int = 1
    name: Optional[str] = None
    visited: bool = False
    switch_pos: Optional[Position] = None  # doors only: location of the paired switch

    def tokens(self) -> tuple[str, ...]:
        k = self.kind
        if k is ItemKind.SWITCH or k is ItemKind.DOOR:
            return (k.value, color_word(self.color))
        if k is ItemKind.GOAL:
            if self.visited:
                return (k.value, self.name, "visited")
            return (k.value, self.name)
        return (k.value,)

    def key(self) -> tuple:
        return (self.kind.value, self.color, self.num_states, self.name, self.visited, self.switch_pos)


@dataclass(frozen=True)
class InfoItem:
    tokens: tuple[str, ...]

    def __post_init__(self):
        if not self.tokens:
            raise ValueError("info item needs at least one token")


@dataclass
class StepEvent:
    """What an action physically did; passed to the task rules after each step."""

    action: Action
    moved: bool = False
    toggled: bool = False
    pushed: bool = False


@dataclass
class StepResult:
    reward: float
    terminated: bool
    success: bool


@dataclass
class GameState:
    width: int
    height: int
    cells: dict[Position, list[Item]] = field(default_factory=dict)
    agent: Position = Position(0, 0)
    infos: list[InfoItem] = field(default_factory=list)
    step: int = 0
    max_steps: int = DEFAULT_MAX_STEPS
    cost_units: int = 0
    task_state: Any = None
    rng: Optional[np.random.Generator] = None
    terminated: bool = False
    success: bool = False
    allow_breadcrumb: bool = False
    # cells a pushed block may enter even though they hold an item (push-onto-switch task)
    push_targets: frozenset = frozenset()
    oracle_units: Optional[int] = None  # optimal cost in tenths, filled in by the generator

    @property
    def accumulated_reward(self) -> float:
        return -self.cost_units / 10

    def in_bounds(self, pos) -> bool:
        return 0 <= pos[0] < self.width and 0 <= pos[1] < self.height

    def items_at(self, pos) -> list[Item]:
        return self.cells.get(pos, [])

    def has(self, pos, kind: ItemKind) -> bool:
        for it in self.cells.get(pos, ()):
            if it.kind is kind:
                return True
        return False

    def get(self, pos, kind: ItemKind) -> Optional[Item]:
        for it in self.cells.get(pos, ()):
            if it.kind is kind:
                return it
        return None

    def add_item(self, pos, item: Item) -> Item:
        self.cells.setdefault(Position(*pos), []).append(item)
        return item

    def remove_item(self, pos, item: Item) -> None:
        lst = self.cells[pos]
        lst.remove(item)
        if not lst:
            del self.cells[pos]

    def find(self, kind: ItemKind) -> list[tuple[Position, Item]]:
        return [(p, it) for p, items in self.cells.items() for it in items if it.kind is kind]

    def free_cells(self) -> list[Position]:
        """Cells holding no items and not occupied by the agent, in row-major order."""
        out = []
        for y in range(self.height):
            for x in range(self.width):
                p = Position(x, y)
                if p not in self.cells and p != self.agent:
                    out.append(p)
        return out

    def clone(self) -> "GameState":
        new = copy.copy(self)
        new.cells = {p: [copy.copy(it) for it in items] for p, items in self.cells.items()}
        new.infos = list(self.infos)
        if self.task_state is not None:
            new.task_state = self.task_state.copy()
        if self.rng is not None:
            new.rng = copy.deepcopy(self.rng)
        return new

    def key(self) -> tuple:
        """Hashable snapshot of everything that influences future play."""
        cells = tuple(sorted((p, tuple(sorted(it.key() for it in items))) for p, items in self.cells.items()))
        ts = self.task_state.key() if self.task_state is not None else None
        return (self.agent, cells, ts, self.terminated)


@dataclass
class WorldConfig:
    """Inclusive ranges for world generation; percentages are of all grid cells."""

    height: tuple[int, int] = (5, 10)
    width: tuple[int, int] = (5, 10)
    block_pct: tuple[float, float] = (0.0, 20.0)
    water_pct: tuple[float, float] = (0.0, 20.0)
    max_steps: int = DEFAULT_MAX_STEPS

    def validate(self) -> None:
        for name in ("height", "width", "block_pct", "water_pct"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"empty range for {name}: {lo}..{hi}")
        if self.height[0] < 2 or self.width[0] < 2:
            raise ValueError("grid dimensions must be positive")
        for name in ("block_pct", "water_pct"):
            lo, hi = getattr(self, name)
            if lo < 0 or hi > 20:
                raise ValueError(f"{name} must lie in [0, 20], got {lo}..{hi}")


def corner_cells(width: int, height: int) -> list[Position]:
    return sorted({Position(0, 0), Position(width - 1, 0), Position(0, height - 1), Position(width - 1, height - 1)})


def empty_world(width: int, height: int, rng: Optional[np.random.Generator] = None,
                max_steps: int = DEFAULT_MAX_STEPS) -> GameState:
    if width < 2 or height < 2:
        raise GenerationError("grids need at least 2 cells per side")
    state = GameState(width=width, height=height, max_steps=max_steps, rng=rng)
    for p in corner_cells(width, height):
        state.add_item(p, Item(ItemKind.CORNER))
    state.agent = Position(-1, -1)  # unplaced
    return state


def pct_count(pct: float, width: int, height: int) -> int:
    return int(round(pct / 100.0 * width * height))


def scatter(state: GameState, kind: ItemKind, count: int, rng: np.random.Generator,
            exclude: frozenset | set = frozenset()) -> list[Position]:
    """Place ``count`` items of ``kind`` on distinct free cells."""
    free = [p for p in state.free_cells() if p not in exclude]
    if count > len(free):
        raise GenerationError(f"cannot place {count} {kind.value} items on {len(free)} free cells")
    chosen = rng.choice(len(free), size=count, replace=False) if count else []
    out = []
    for i in sorted(int(i) for i in chosen):
        state.add_item(free[i], Item(kind))
        out.append(free[i])
    return out


def pick_free(state: GameState, rng: np.random.Generator, exclude=frozenset(), where=None) -> Position:
    free = [p for p in state.free_cells() if p not in exclude and (where is None or where(p))]
    if not free:
        raise GenerationError("no free cell available")
    return free[int(rng.integers(len(free)))]


def place_agent(state: GameState, rng: np.random.Generator, where=None) -> Position:
    state.agent = Position(-1, -1)
    state.agent = pick_free(state, rng, where=where)
    return state.agent


def sample_dims(cfg: WorldConfig, rng: np.random.Generator) -> tuple[int, int]:
    h = int(rng.integers(cfg.height[0], cfg.height[1] + 1))
    w = int(rng.integers(cfg.width[0], cfg.width[1] + 1))
    return w, h


def sample_pct(rng: np.random.Generator, lo: float, hi: float) -> float:
    return float(lo) if hi <= lo else float(rng.uniform(lo, hi))


def generate_world(cfg: WorldConfig, rng: np.random.Generator, place_agent_now: bool = True) -> GameState:
    """Random world: uniform dims, corner markers, scattered blocks and water, agent on a free cell."""
    cfg.validate()
    w, h = sample_dims(cfg, rng)
    state = empty_world(w, h, rng, cfg.max_steps)
    n_block = pct_count(sample_pct(rng, *cfg.block_pct), w, h)
    n_water = pct_count(sample_pct(rng, *cfg.water_pct), w, h)
    n_free = len(state.free_cells())
    n_block = min(n_block, max(n_free - 1, 0))
    scatter(state, ItemKind.BLOCK, n_block, rng)
    n_water = min(n_water, max(len(state.free_cells()) - 1, 0))
    scatter(state, ItemKind.WATER, n_water, rng)
    if place_agent_now:
        place_agent(state, rng)
    return state


def switch_color_at(state: GameState, pos) -> Optional[int]:
    sw = state.get(pos, ItemKind.SWITCH)
    return None if sw is None else sw.color


def is_passable(state: GameState, pos) -> bool:
    if not state.in_bounds(pos):
        return False
    for it in state.cells.get(pos, ()):
        k = it.kind
        if k is ItemKind.BLOCK or k is ItemKind.PUSHABLE:
            return False
        if k is ItemKind.DOOR:
            if switch_color_at(state, it.switch_pos) != it.color:
                return False
    return True


def toggle(state: GameState) -> bool:
    """Advance the switch under the agent by one state; no-op without a switch."""
    sw = state.get(state.agent, ItemKind.SWITCH)
    if sw is None:
        return False
    sw.color = (sw.color + 1) % sw.num_states
    return True


def push_destination_ok(state: GameState, pos) -> bool:
    if not state.in_bounds(pos):
        return False
    if pos in state.push_targets:
        return all(it.kind is not ItemKind.PUSHABLE and it.kind is not ItemKind.BLOCK for it in state.items_at(pos))
    return pos not in state.cells


def push(state: GameState, direction) -> bool:
    """Move the pushable block adjacent to the agent one cell along ``direction``."""
    dx, dy = DIRECTIONS[direction] if isinstance(direction, str) else direction
    src = Position(state.agent.x + dx, state.agent.y + dy)
    block = state.get(src, ItemKind.PUSHABLE)
    if block is None:
        return False
    dst = Position(src.x + dx, src.y + dy)
    if not push_destination_ok(state, dst):
        return False
    state.remove_item(src, block)
    state.add_item(dst, block)
    return True


def drop_breadcrumb(state: GameState) -> None:
    if not state.has(state.agent, ItemKind.BREADCRUMB):
        state.add_item(state.agent, Item(ItemKind.BREADCRUMB))


def check_start(state: GameState) -> None:
    """Mark an instance whose task is already complete before any action."""
    if state.task_state is not None and state.task_state.check(state):
        state.terminated = True
        state.success = True


def apply_action(state: GameState, action) -> StepResult:
    if state.terminated:
        raise RuntimeError("cannot act on a terminated game")
    action = Action(action)
    event = StepEvent(action)
    if action in MOVE_DELTAS:
        dest = state.agent + MOVE_DELTAS[action]
        if is_passable(state, dest):
            state.agent = dest
            event.moved = True
    elif action is Action.TOGGLE:
        event.toggled = toggle(state)
    elif action in PUSH_DELTAS:
        event.pushed = push(state, PUSH_DELTAS[action])
    elif action is Action.BREADCRUMB:
        if not state.allow_breadcrumb:
            raise ValueError("breadcrumb action is not available in this game")
        drop_breadcrumb(state)

    state.step += 1
    units = STEP_UNITS
    if state.has(state.agent, ItemKind.WATER):
        units += WATER_UNITS
    done = success = False
    if state.task_state is not None:
        penalty, done, success = state.task_state.on_step(state, event)
        units += int(round(penalty * 10))
    state.cost_units += units
    if done:
        state.terminated = True
        state.success = success
    elif state.step >= state.max_steps:
        state.terminated = True
    return StepResult(reward=-units / 10, terminated=state.terminated, success=state.success)
