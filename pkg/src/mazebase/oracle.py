"""Offline optimal-reward estimates for the maze games.

Every game reduces to a shortest path problem over a small augmented state
space (agent cell plus switch color or block cell), or to a short tour over a
handful of targets. Costs are integers in tenths of reward, so results are exact.
Used for reporting and solvability checks only; nothing here feeds training.
"""
from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

from .engine import (
    DIRECTIONS,
    GameState,
    ItemKind,
    Action,
    Position,
    STEP_UNITS,
    WATER_UNITS,
)
from .tasks import TaskKind, on_edge

EXACT_TOUR_LIMIT = 6

_MOVES = (
    (Action.MOVE_N, DIRECTIONS["N"]),
    (Action.MOVE_S, DIRECTIONS["S"]),
    (Action.MOVE_E, DIRECTIONS["E"]),
    (Action.MOVE_W, DIRECTIONS["W"]),
)
_PUSHES = (
    (Action.PUSH_N, DIRECTIONS["N"]),
    (Action.PUSH_S, DIRECTIONS["S"]),
    (Action.PUSH_E, DIRECTIONS["E"]),
    (Action.PUSH_W, DIRECTIONS["W"]),
)


class Unsolvable(Exception):
    """The instance has no action sequence that completes the task."""


@dataclass
class Solution:
    units: int
    plan: list[Action] = field(default_factory=list)
    exact: bool = True

    @property
    def reward(self) -> float:
        return -self.units / 10


class _Layout:
    """Static snapshot of a board, read once per search."""

    def __init__(self, state: GameState):
        self.width, self.height = state.width, state.height
        self.blocks: set = set()
        self.water: set = set()
        self.doors: dict = {}
        self.switches: dict = {}
        self.goals: dict = {}
        self.occupied: set = set()  # cells holding any item
        self.pushable: Optional[Position] = None
        for p, items in state.cells.items():
            for it in items:
                k = it.kind
                if k is ItemKind.BLOCK:
                    self.blocks.add(p)
                elif k is ItemKind.WATER:
                    self.water.add(p)
                elif k is ItemKind.DOOR:
                    self.doors[p] = it
                elif k is ItemKind.SWITCH:
                    self.switches[p] = it
                elif k is ItemKind.GOAL:
                    self.goals[p] = it.name
                elif k is ItemKind.PUSHABLE:
                    self.pushable = p
            if any(it.kind is not ItemKind.PUSHABLE for it in items):
                self.occupied.add(p)
        self.push_targets = state.push_targets

    def inside(self, p) -> bool:
        return 0 <= p[0] < self.width and 0 <= p[1] < self.height

    def door_open(self, p, switch_colors: Callable[[Position], int]) -> bool:
        door = self.doors[p]
        return switch_colors(door.switch_pos) == door.color

    def entry_cost(self, p) -> int:
        return STEP_UNITS + (WATER_UNITS if p in self.water else 0)


def _search(start, successors, is_goal):
    """Uniform-cost search; returns (units, actions) or None."""
    if is_goal(start):
        return 0, []
    dist = {start: 0}
    parent: dict = {}
    tie = itertools.count()
    heap = [(0, next(tie), start)]
    while heap:
        d, _, s = heapq.heappop(heap)
        if d > dist[s]:
            continue
        if is_goal(s):
            plan = []
            while s != start:
                s, a = parent[s]
                plan.append(a)
            plan.reverse()
            return d, plan
        for action, nxt, c in successors(s):
            nd = d + c
            if nd < dist.get(nxt, 1 << 60):
                dist[nxt] = nd
                parent[nxt] = (s, action)
                heapq.heappush(heap, (nd, next(tie), nxt))
    return None


def _pos_successors(layout: _Layout, extra=None, current_switches=None):
    """Moves on a board whose doors and blocks stay as they are now."""

    def color_of(p):
        return current_switches[p].color

    def succ(p):
        for action, (dx, dy) in _MOVES:
            q = Position(p[0] + dx, p[1] + dy)
            if not layout.inside(q) or q in layout.blocks or q == layout.pushable:
                continue
            if q in layout.doors and not layout.door_open(q, color_of):
                continue
            c = layout.entry_cost(q)
            if extra is not None:
                c += extra(q)
            yield action, q, c

    return succ


def _all_costs(layout: _Layout, source, extra=None):
    """Single-source costs and parent links to every reachable cell."""
    succ = _pos_successors(layout, extra, layout.switches)
    dist = {source: 0}
    parent: dict = {}
    tie = itertools.count()
    heap = [(0, next(tie), source)]
    while heap:
        d, _, s = heapq.heappop(heap)
        if d > dist[s]:
            continue
        for action, q, c in succ(s):
            nd = d + c
            if nd < dist.get(q, 1 << 60):
                dist[q] = nd
                parent[q] = (s, action)
                heapq.heappush(heap, (nd, next(tie), q))
    return dist, parent


def _path_actions(parent, source, target) -> list[Action]:
    plan = []
    s = target
    while s != source:
        s, a = parent[s]
        plan.append(a)
    plan.reverse()
    return plan


def min_cost_path(state: GameState, start, targets: Iterable) -> Optional[float]:
    """Least cost (positive, in reward units) of walking from ``start`` to any target cell.

    Doors and pushable blocks are taken as they currently stand. Returns None if
    no target is reachable.
    """
    layout = _Layout(state)
    goal = {Position(*t) for t in targets}
    res = _search(Position(*start), _pos_successors(layout, current_switches=layout.switches),
                  lambda p: p in goal)
    return None if res is None else res[0] / 10


# --------------------------------------------------------------------------- tours


def _best_order(start_cost: dict, pair_cost: dict, targets: list):
    """Cheapest open tour from the start through all targets: (units, order, exact)."""
    if not targets:
        return 0, [], True
    if len(targets) <= EXACT_TOUR_LIMIT:
        best = None
        for order in itertools.permutations(targets):
            c = start_cost[order[0]]
            for a, b in zip(order, order[1:]):
                c += pair_cost[a][b]
            if best is None or c < best[0]:
                best = (c, list(order))
        return best[0], best[1], True
    # nearest neighbour then 2-opt, for boards larger than the game ranges use
    remaining = list(targets)
    order = [min(remaining, key=lambda t: start_cost[t])]
    remaining.remove(order[0])
    while remaining:
        nxt = min(remaining, key=lambda t: pair_cost[order[-1]][t])
        order.append(nxt)
        remaining.remove(nxt)

    def cost(o):
        return start_cost[o[0]] + sum(pair_cost[a][b] for a, b in zip(o, o[1:]))

    improved = True
    best_c = cost(order)
    while improved:
        improved = False
        for i in range(len(order) - 1):
            for j in range(i + 1, len(order)):
                cand = order[:i] + order[i:j + 1][::-1] + order[j + 1:]
                c = cost(cand)
                if c < best_c:
                    order, best_c, improved = cand, c, True
    return best_c, order, False


def _tour_solution(state: GameState, layout: _Layout, targets: list, extra=None, finish=None) -> Solution:
    """Visit every target cell (any order); ``finish`` maps a target to trailing (units, actions)."""
    sources = [state.agent] + [t for t in targets if t != state.agent]
    tables = {s: _all_costs(layout, s, extra) for s in sources}
    for t in targets:
        if t not in tables[state.agent][0]:
            raise Unsolvable(f"target {t} unreachable")
    finish = finish or (lambda t: (0, []))
    start_cost = {t: tables[state.agent][0][t] + finish(t)[0] for t in targets}
    pair = {a: {b: tables[a][0][b] + finish(b)[0] for b in targets if b != a} for a in targets}
    units, order, exact = _best_order(start_cost, pair, targets)
    plan: list[Action] = []
    prev = state.agent
    for t in order:
        plan += _path_actions(tables[prev][1], prev, t) + finish(t)[1]
        prev = t
    return Solution(units, plan, exact)


# --------------------------------------------------------------------------- per task


def _solve_reach(state: GameState, layout: _Layout, target) -> Solution:
    res = _search(state.agent, _pos_successors(layout, current_switches=layout.switches),
                  lambda p: p == target)
    if res is None:
        raise Unsolvable("target unreachable")
    return Solution(*res)


def _solve_multigoals(state: GameState, layout: _Layout) -> Solution:
    ts = state.task_state
    by_name = {name: p for p, name in layout.goals.items()}
    units, plan, prev = 0, [], state.agent
    succ = _pos_successors(layout, current_switches=layout.switches)
    for name in ts.order[ts.next_index:]:
        target = by_name[name]
        res = _search(prev, succ, lambda p, t=target: p == t)
        if res is None:
            raise Unsolvable(f"goal {name} unreachable")
        units += res[0]
        plan += res[1]
        prev = target
    return Solution(units, plan, True)


def _solve_exclusion(state: GameState, layout: _Layout) -> Solution:
    ts = state.task_state
    forbidden = {p for p, name in layout.goals.items() if name in ts.forbidden}
    targets = sorted(p for p, name in layout.goals.items() if name in ts.targets and name not in ts.visited)

    def extra(q):
        return 5 if q in forbidden else 0

    return _tour_solution(state, layout, targets, extra)


def _solve_switches(state: GameState, layout: _Layout) -> Solution:
    switches = {p: layout.switches[p] for p in state.task_state.switch_positions}
    positions = sorted(switches)
    m = switches[positions[0]].num_states
    tables = {s: _all_costs(layout, s) for s in [state.agent] + positions}
    toggle_cost = {p: layout.entry_cost(p) for p in positions}
    best: Optional[Solution] = None
    if len(positions) == 1 or m == 1:
        # any toggle finishes the game
        for p in positions:
            if p in tables[state.agent][0]:
                c = tables[state.agent][0][p] + toggle_cost[p]
                if best is None or c < best.units:
                    best = Solution(c, _path_actions(tables[state.agent][1], state.agent, p) + [Action.TOGGLE])
        if best is None:
            raise Unsolvable("no switch reachable")
        return best
    for p in positions:
        if p not in tables[state.agent][0]:
            raise Unsolvable("switch unreachable")
    for color in range(m):
        need = {p: (color - switches[p].color) % m for p in positions}
        todo = [p for p in positions if need[p] > 0]
        if not todo:
            # already uniform: the game only ends on a toggle, so cycle one switch all the way round
            for p in positions:
                c = tables[state.agent][0][p] + m * toggle_cost[p]
                if best is None or c < best.units:
                    best = Solution(c, _path_actions(tables[state.agent][1], state.agent, p) + [Action.TOGGLE] * m)
            continue

        def finish(t, need=need):
            return need[t] * toggle_cost[t], [Action.TOGGLE] * need[t]

        start_cost = {t: tables[state.agent][0][t] + finish(t)[0] for t in todo}
        pair = {a: {b: tables[a][0][b] + finish(b)[0] for b in todo if b != a} for a in todo}
        units, order, exact = _best_order(start_cost, pair, todo)
        if best is None or units < best.units:
            plan, prev = [], state.agent
            for t in order:
                plan += _path_actions(tables[prev][1], prev, t) + finish(t)[1]
                prev = t
            best = Solution(units, plan, exact)
    if best is None:
        raise Unsolvable("switches cannot be made uniform")
    return best


def _solve_switch_gated(state: GameState, layout: _Layout, goal_test, penalty) -> Solution:
    """Search over (cell, color of the single switch) for Light Key and Conditional Goals."""
    (sw_pos, sw), = layout.switches.items()
    m = sw.num_states

    def succ(s):
        p, color = s
        for action, (dx, dy) in _MOVES:
            q = Position(p[0] + dx, p[1] + dy)
            if not layout.inside(q) or q in layout.blocks:
                continue
            if q in layout.doors and layout.doors[q].color != color:
                continue
            yield action, (q, color), layout.entry_cost(q) + penalty(q, color)
        if p == sw_pos and m > 1:
            nc = (color + 1) % m
            yield Action.TOGGLE, (p, nc), layout.entry_cost(p) + penalty(p, nc)

    res = _search((state.agent, sw.color), succ, lambda s: goal_test(*s))
    if res is None:
        raise Unsolvable("goal unreachable")
    return Solution(*res)


def _solve_light_key(state: GameState, layout: _Layout) -> Solution:
    target = state.task_state.target
    return _solve_switch_gated(state, layout, lambda p, c: p == target, lambda p, c: 0)


def _solve_conditional(state: GameState, layout: _Layout) -> Solution:
    ts = state.task_state

    def target_name(color):
        return ts.if_goal if color == ts.if_color else ts.else_goal

    def goal_test(p, color):
        return layout.goals.get(p) == target_name(color)

    def penalty(p, color):
        name = layout.goals.get(p)
        return 2 if name is not None and name != target_name(color) else 0

    return _solve_switch_gated(state, layout, goal_test, penalty)


def _solve_push(state: GameState, layout: _Layout, goal_test) -> Solution:
    """Search over (agent cell, block cell)."""
    if layout.pushable is None:
        raise Unsolvable("no pushable block")

    def push_ok(q):
        if not layout.inside(q) or q in layout.blocks:
            return False
        if q in layout.push_targets:
            return True
        return q not in layout.occupied

    def succ(s):
        a, b = s
        for action, (dx, dy) in _MOVES:
            q = Position(a[0] + dx, a[1] + dy)
            if not layout.inside(q) or q in layout.blocks or q == b:
                continue
            yield action, (q, b), layout.entry_cost(q)
        for action, (dx, dy) in _PUSHES:
            if (a[0] + dx, a[1] + dy) == b:
                nb = Position(b[0] + dx, b[1] + dy)
                if push_ok(nb):
                    yield action, (a, nb), layout.entry_cost(a)

    res = _search((state.agent, layout.pushable), succ, lambda s: goal_test(*s))
    if res is None:
        raise Unsolvable("push task unsolvable")
    return Solution(*res)


def solve(state: GameState) -> Solution:
    """Optimal cost and an action plan achieving it, from the state as given."""
    ts = state.task_state
    kind = ts.kind
    layout = _Layout(state)
    if kind in (TaskKind.GOTO, TaskKind.GOTO_HIDDEN, TaskKind.BLOCKED_DOOR):
        if kind is TaskKind.BLOCKED_DOOR:
            target = ts.target
            return _solve_push(state, layout, lambda a, b: a == target)
        return _solve_reach(state, layout, ts.target)
    if kind is TaskKind.LIGHT_KEY:
        return _solve_light_key(state, layout)
    if kind is TaskKind.CONDITIONAL_GOALS:
        return _solve_conditional(state, layout)
    if kind is TaskKind.MULTIGOALS:
        return _solve_multigoals(state, layout)
    if kind is TaskKind.EXCLUSION:
        return _solve_exclusion(state, layout)
    if kind is TaskKind.SWITCHES:
        return _solve_switches(state, layout)
    if kind is TaskKind.PUSH_BLOCK:
        sp = ts.switch_pos
        return _solve_push(state, layout, lambda a, b: b == sp)
    if kind is TaskKind.PUSH_BLOCK_CARDINAL:
        w, h = state.width, state.height
        return _solve_push(state, layout, lambda a, b: on_edge(b, ts.edge, w, h))
    raise ValueError(f"no oracle for {kind}")


def estimated_optimal(kind, state: GameState) -> float:
    """Best achievable total reward (negative) for the instance."""
    if TaskKind(kind) is not state.task_state.kind:
        raise ValueError(f"state holds a {state.task_state.kind.value} game, not {kind}")
    return solve(state).reward


def relative_reward(actual: float, optimal: float) -> float:
    if actual == 0:
        raise ValueError("relative reward is undefined for a zero actual reward")
    return optimal / actual
