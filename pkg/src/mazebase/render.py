"""ASCII frames for maze games and combat scenarios.

Each cell is two characters wide. Maze legend: ``@`` agent, ``#`` block,
``~`` water, ``s<color>`` switch, ``D<color>`` door, ``G<n>`` goal,
``P`` pushable block, ``+`` corner, ``.`` breadcrumb. Combat: ``A<n>``
agents, ``E<n>`` enemies.
"""
from __future__ import annotations

from .combat import CombatScenario
from .engine import GameState, ItemKind

LEGEND = {
    "agent": "@", "block": "#", "water": "~", "switch": "s<c>", "door": "D<c>", "goal": "G<n>",
    "pushable": "P", "corner": "+", "breadcrumb": ".",
}

# the first item kind present in a cell decides its glyph
_PRIORITY = (ItemKind.PUSHABLE, ItemKind.BLOCK, ItemKind.DOOR, ItemKind.SWITCH, ItemKind.GOAL,
             ItemKind.WATER, ItemKind.BREADCRUMB, ItemKind.CORNER)


def _glyph(item) -> str:
    k = item.kind
    if k is ItemKind.BLOCK:
        return "# "
    if k is ItemKind.WATER:
        return "~ "
    if k is ItemKind.SWITCH:
        return f"s{item.color}"
    if k is ItemKind.DOOR:
        return f"D{item.color}"
    if k is ItemKind.GOAL:
        return "G" + item.name.lstrip("g")
    if k is ItemKind.PUSHABLE:
        return "P "
    if k is ItemKind.CORNER:
        return "+ "
    if k is ItemKind.BREADCRUMB:
        return ". "
    return "? "


def draw_maze(state: GameState) -> str:
    lines = ["+" + "--" * state.width + "+"]
    for y in range(state.height - 1, -1, -1):
        row = []
        for x in range(state.width):
            items = state.items_at((x, y))
            if (x, y) == tuple(state.agent):
                row.append("@ ")
                continue
            cell = "  "
            for kind in _PRIORITY:
                hit = [it for it in items if it.kind is kind]
                if hit:
                    cell = _glyph(hit[0])
                    break
            row.append(cell)
        lines.append("|" + "".join(row) + "|")
    lines.append("+" + "--" * state.width + "+")
    lines.extend("  " + " ".join(info.tokens) for info in state.infos)
    return "\n".join(lines)


def draw_combat(sc: CombatScenario) -> str:
    cells = {}
    for i, u in enumerate(sc.agents):
        if u.alive:
            cells[tuple(u.pos)] = f"A{i + 1}"
    for j, u in enumerate(sc.enemies):
        if u.alive:
            cells[tuple(u.pos)] = f"E{j + 1}"
    lines = ["+" + "--" * sc.width + "+"]
    for y in range(sc.height - 1, -1, -1):
        lines.append("|" + "".join(cells.get((x, y), "  ") for x in range(sc.width)) + "|")
    lines.append("+" + "--" * sc.width + "+")
    for team, units in (("A", sc.agents), ("E", sc.enemies)):
        for i, u in enumerate(units):
            lines.append(f"  {team}{i + 1} hp={u.hp} cd={u.cooldown}")
    return "\n".join(lines)


def draw(episode) -> str:
    if hasattr(episode, "scenario"):
        return draw_combat(episode.scenario)
    return draw_maze(episode.state)
