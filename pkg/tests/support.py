"""Shared builders and independent reference searches for the test suite.

The reference searches drive the real engine through ``apply_action`` on
cloned states, so they share no code with the oracle module.
"""
from __future__ import annotations

import heapq
import itertools
from typing import Iterable, Optional

import numpy as np

from mazebase.engine import (
    Action,
    GameState,
    Item,
    ItemKind,
    Position,
    apply_action,
    empty_world,
    is_passable,
)

MAZE_ACTIONS = tuple(Action(a) for a in range(9))


def board(width: int, height: int, agent=(0, 0), items: Optional[dict] = None, task_state=None,
          max_steps: int = 50, infos=()) -> GameState:
    """Hand-built world: corners, the given items, the agent."""
    state = empty_world(width, height, np.random.default_rng(0), max_steps)
    for pos, its in (items or {}).items():
        for it in (its if isinstance(its, (list, tuple)) else [its]):
            state.add_item(Position(*pos), it)
    state.agent = Position(*agent)
    state.task_state = task_state
    state.infos = list(infos)
    return state


def switch(color: int = 0, m: int = 1) -> Item:
    return Item(ItemKind.SWITCH, color=color, num_states=m)


def door(color: int, switch_pos) -> Item:
    return Item(ItemKind.DOOR, color=color, switch_pos=Position(*switch_pos))


def goal(name: str) -> Item:
    return Item(ItemKind.GOAL, name=name)


def block() -> Item:
    return Item(ItemKind.BLOCK)


def water() -> Item:
    return Item(ItemKind.WATER)


def pushable() -> Item:
    return Item(ItemKind.PUSHABLE)


def _bare_clone(state: GameState) -> GameState:
    rng, state.rng = state.rng, None
    try:
        return state.clone()
    finally:
        state.rng = rng


def engine_min_units(state: GameState, actions: Iterable[Action] = MAZE_ACTIONS,
                     limit: Optional[int] = None) -> Optional[int]:
    """Least total cost (tenths) of reaching success, by Dijkstra over engine states.

    The step cap is lifted so the result is comparable with an uncapped oracle.
    """
    actions = tuple(actions)
    start = _bare_clone(state)
    start.max_steps = 10 ** 9
    if start.terminated:
        return 0 if start.success else None
    counter = itertools.count()
    heap = [(0, next(counter), start)]
    best = {start.key(): 0}
    while heap:
        units, _, s = heapq.heappop(heap)
        if best.get(s.key(), None) != units:
            continue
        if limit is not None and units > limit:
            return None
        for a in actions:
            nxt = _bare_clone(s)
            try:
                apply_action(nxt, a)
            except ValueError:
                continue
            cost = units + (nxt.cost_units - s.cost_units)
            if nxt.success:
                # success is terminal; keep searching only for cheaper finishes
                k = ("done",)
                if cost < best.get(k, 1 << 60):
                    best[k] = cost
                continue
            k = nxt.key()
            if cost < best.get(k, 1 << 60) and cost < best.get(("done",), 1 << 60):
                best[k] = cost
                heapq.heappush(heap, (cost, next(counter), nxt))
    return best.get(("done",))


def best_rollout_units(state: GameState, horizon: int, actions: Iterable[Action] = MAZE_ACTIONS) -> Optional[int]:
    """Exhaustive depth-limited search: minimal cost of any action sequence of length <= horizon that succeeds."""
    actions = tuple(actions)
    memo: dict = {}

    def go(s: GameState, depth: int) -> Optional[int]:
        key = (s.key(), depth)
        if key in memo:
            return memo[key]
        best = None
        if depth > 0:
            for a in actions:
                nxt = _bare_clone(s)
                try:
                    apply_action(nxt, a)
                except ValueError:
                    continue
                step = nxt.cost_units - s.cost_units
                if nxt.success:
                    c = step
                elif nxt.terminated:
                    continue
                else:
                    sub = go(nxt, depth - 1)
                    if sub is None:
                        continue
                    c = step + sub
                if best is None or c < best:
                    best = c
        memo[key] = best
        return best

    start = _bare_clone(state)
    start.max_steps = 10 ** 9
    return go(start, horizon)


def enumerate_path_units(state: GameState, start, target) -> Optional[int]:
    """Cheapest simple path by enumerating every self-avoiding walk (tenths)."""
    start, target = Position(*start), Position(*target)
    if start == target:
        return 0
    best = [None]
    seen = {start}

    def cell_units(p):
        return 1 + (2 if state.has(p, ItemKind.WATER) else 0)

    def walk(p, units):
        for d in ((0, 1), (0, -1), (1, 0), (-1, 0)):
            q = Position(p.x + d[0], p.y + d[1])
            if q in seen or not is_passable(state, q):
                continue
            u = units + cell_units(q)
            if q == target:
                if best[0] is None or u < best[0]:
                    best[0] = u
                continue
            seen.add(q)
            walk(q, u)
            seen.remove(q)

    walk(start, 0)
    return best[0]


STEP_DIRS = ((Action.MOVE_N, (0, 1)), (Action.MOVE_S, (0, -1)), (Action.MOVE_E, (1, 0)), (Action.MOVE_W, (-1, 0)))


def cell_paths(state: GameState, start, extra_units=lambda p: 0):
    """Dijkstra over cells with the board as it stands: (units, first-action parents)."""
    start = Position(*start)
    dist = {start: 0}
    parent: dict = {}
    heap = [(0, start)]
    while heap:
        d, p = heapq.heappop(heap)
        if d != dist[p]:
            continue
        for a, (dx, dy) in STEP_DIRS:
            q = Position(p.x + dx, p.y + dy)
            if not is_passable(state, q):
                continue
            nd = d + 1 + (2 if state.has(q, ItemKind.WATER) else 0) + extra_units(q)
            if nd < dist.get(q, 1 << 60):
                dist[q] = nd
                parent[q] = (p, a)
                heapq.heappush(heap, (nd, q))
    return dist, parent


def path_to(parent, start, target) -> list:
    out = []
    p = Position(*target)
    while p != start:
        p, a = parent[p]
        out.append(a)
    return out[::-1]


def permutation_brute_force(state: GameState, names: list, extra_units=lambda p: 0) -> Optional[int]:
    """Try every visiting order of the named goals; play each in the engine; cheapest success (tenths)."""
    where = {it.name: p for p, it in state.find(ItemKind.GOAL)}
    best = None
    for order in itertools.permutations(names):
        s = _bare_clone(state)
        s.max_steps = 10 ** 9
        ok = True
        for name in order:
            dist, parent = cell_paths(s, s.agent, extra_units)
            if where[name] not in dist:
                ok = False
                break
            for a in path_to(parent, s.agent, where[name]):
                apply_action(s, a)
                if s.terminated:
                    break
            if s.terminated:
                break
        units = s.cost_units - state.cost_units
        if ok and s.success and (best is None or units < best):
            best = units
    return best
