"""Small-scale combat scenarios on an open arena: Kiting, Kiting hard and 2 vs 2.

Resolution within a step is simultaneous: attacks are collected first and the
damage is applied together (so both sides may die on the same step), then the
survivors move, then cooldowns tick down. Distances are Chebyshev; movement is
4-directional. Each landed shot removes one health point.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from .encoding import COORD_SPAN, MAX_CD, MAX_HP, ObsEntry, Observation, coord_word
from .engine import Position

ARENA = 12
MAX_STEPS = 100
STEP_REWARD = -0.01
WIN_REWARD = 1.0
HP_WEIGHT = 0.1
SIGHT = 10  # kiting bots ignore agents at this distance or farther
MIN_SPAWN_DISTANCE = 5
N_COMBAT_ACTIONS = 7

# agent actions
MOVE_N, MOVE_S, MOVE_E, MOVE_W, STAY = range(5)
ATTACK = 5  # ATTACK + k targets enemy k
_DELTAS = {MOVE_N: (0, 1), MOVE_S: (0, -1), MOVE_E: (1, 0), MOVE_W: (-1, 0)}


class CombatKind(str, Enum):
    KITING = "kiting"
    KITING_HARD = "kiting_hard"
    TWO_V_TWO = "2v2"


# difficulty variable per scenario: (lo, hi, step, integer); enemy hp is drawn from [lo, cur_max]
COMBAT_VARS = {
    CombatKind.KITING: {"enemy_hp": (4, 11, 1, True)},
    CombatKind.KITING_HARD: {"enemy_hp": (4, 11, 1, True)},
    CombatKind.TWO_V_TWO: {"enemy_hp": (3, 4, 1, True)},
}


@dataclass
class Unit:
    team: str
    pos: Position
    hp: int
    max_cooldown: int
    shot_range: int
    fumble_prob: float = 0.0
    cooldown: int = 0
    target: Optional[int] = None  # locked agent index (2v2 bots)

    @property
    def alive(self) -> bool:
        return self.hp > 0


@dataclass
class CombatScenario:
    kind: CombatKind
    agents: list[Unit]
    enemies: list[Unit]
    width: int = ARENA
    height: int = ARENA
    max_steps: int = MAX_STEPS
    step: int = 0
    terminated: bool = False
    won: bool = False
    lost: bool = False
    accumulated_reward: float = 0.0
    rng: Optional[np.random.Generator] = field(default=None, repr=False)
    idle_bots: bool = False
    shots: list = field(default_factory=list)  # (step, attacker team, attacker idx, target idx, distance)

    @property
    def success(self) -> bool:
        return self.won

    def living(self, team: str) -> list[tuple[int, Unit]]:
        units = self.agents if team == "agent" else self.enemies
        return [(i, u) for i, u in enumerate(units) if u.alive]

    def occupied(self) -> set:
        return {u.pos for u in self.agents + self.enemies if u.alive}

    def hp_difference(self) -> int:
        return sum(u.hp for u in self.agents) - sum(u.hp for u in self.enemies)


def distance(a, b) -> int:
    return max(abs(a[0] - b[0]), abs(a[1] - b[1]))


def _spawn(rng, n_agents: int, n_enemies: int, width: int, height: int):
    cells = [Position(x, y) for y in range(height) for x in range(width)]
    for _ in range(1000):
        picks = rng.choice(len(cells), size=n_agents + n_enemies, replace=False)
        pos = [cells[i] for i in picks]
        a, e = pos[:n_agents], pos[n_agents:]
        if all(distance(p, q) >= MIN_SPAWN_DISTANCE for p in a for q in e):
            return a, e
    raise RuntimeError("could not place combat units")


def generate_combat(kind, rng: np.random.Generator, vars: Optional[dict] = None,
                    max_steps: int = MAX_STEPS) -> CombatScenario:
    kind = CombatKind(kind)
    lo, hi, _, _ = COMBAT_VARS[kind]["enemy_hp"]
    vars = dict(vars or {})
    unknown = set(vars) - set(COMBAT_VARS[kind])
    if unknown:
        raise ValueError(f"{kind.value}: unknown difficulty variables {sorted(unknown)}")
    if kind is CombatKind.TWO_V_TWO:
        n_agents, n_enemies = 2, 2
    else:
        n_agents, n_enemies = 1, 2 if kind is CombatKind.KITING_HARD else 1
    agent_pos, enemy_pos = _spawn(rng, n_agents, n_enemies, ARENA, ARENA)
    if kind is CombatKind.TWO_V_TWO:
        agents = [Unit("agent", p, 3, 3, 6) for p in agent_pos]
        hps = [int(rng.integers(lo, hi + 1)) if "enemy_hp" not in vars else int(vars["enemy_hp"])
               for _ in enemy_pos]
        enemies = [Unit("enemy", p, h, 3, 6) for p, h in zip(enemy_pos, hps)]
    else:
        agents = [Unit("agent", agent_pos[0], int(rng.integers(2, 5)), 6, 7)]
        hps = [int(rng.integers(lo, hi + 1)) if "enemy_hp" not in vars else int(vars["enemy_hp"])
               for _ in enemy_pos]
        enemies = [Unit("enemy", p, h, 2, 4, fumble_prob=0.4) for p, h in zip(enemy_pos, hps)]
    return CombatScenario(kind, agents, enemies, max_steps=max_steps, rng=rng)


def _toward(src, dst) -> int:
    dx, dy = dst[0] - src[0], dst[1] - src[1]
    if dx == 0 and dy == 0:
        return STAY
    if abs(dx) >= abs(dy):
        return MOVE_E if dx > 0 else MOVE_W
    return MOVE_N if dy > 0 else MOVE_S


def _closest(unit: Unit, candidates: list[tuple[int, Unit]]) -> Optional[int]:
    if not candidates:
        return None
    return min(candidates, key=lambda c: (distance(unit.pos, c[1].pos), c[0]))[0]


def enemy_policy(scenario: CombatScenario, index: int) -> tuple[str, int]:
    """Heuristic bot action: ("attack", agent idx), ("move", direction) or ("stay", -1)."""
    enemy = scenario.enemies[index]
    living = scenario.living("agent")
    if not enemy.alive or not living or scenario.idle_bots:
        return "stay", -1
    if scenario.kind is CombatKind.TWO_V_TWO:
        if enemy.target is None or not scenario.agents[enemy.target].alive:
            enemy.target = None
            target = _closest(enemy, living)
        else:
            target = enemy.target
        agent = scenario.agents[target]
        d = distance(enemy.pos, agent.pos)
        if enemy.cooldown == 0 and d <= enemy.shot_range:
            enemy.target = target
            return "attack", target
        return "move", _toward(enemy.pos, agent.pos)
    target = _closest(enemy, living)
    agent = scenario.agents[target]
    d = distance(enemy.pos, agent.pos)
    if enemy.cooldown == 0 and d <= enemy.shot_range:
        return "attack", target
    if d < SIGHT:
        return "move", _toward(enemy.pos, agent.pos)
    return "stay", -1


def _agent_intent(action: int) -> tuple[str, int]:
    action = int(action)
    if action in _DELTAS:
        return "move", action
    if action == STAY:
        return "stay", -1
    if ATTACK <= action < N_COMBAT_ACTIONS:
        return "attack", action - ATTACK
    raise ValueError(f"invalid combat action {action}")


def combat_step(scenario: CombatScenario, agent_actions, rng: Optional[np.random.Generator] = None) -> tuple[float, bool, bool]:
    """Advance one step; returns (team reward, terminated, won)."""
    if scenario.terminated:
        raise RuntimeError("combat already finished")
    rng = rng if rng is not None else scenario.rng
    living_agents = [i for i, u in enumerate(scenario.agents) if u.alive]
    if len(agent_actions) != len(living_agents):
        raise ValueError(f"expected {len(living_agents)} agent actions, got {len(agent_actions)}")
    intents = [("agent", i, _agent_intent(a)) for i, a in zip(living_agents, agent_actions)]
    intents += [("enemy", j, enemy_policy(scenario, j)) for j, u in enumerate(scenario.enemies) if u.alive]

    # attacks land simultaneously
    damage: dict[tuple[str, int], int] = {}
    for team, i, (what, arg) in intents:
        if what != "attack":
            continue
        me = (scenario.agents if team == "agent" else scenario.enemies)[i]
        foes = scenario.enemies if team == "agent" else scenario.agents
        if not 0 <= arg < len(foes) or not foes[arg].alive or me.cooldown > 0:
            continue
        d = distance(me.pos, foes[arg].pos)
        if d > me.shot_range:
            continue
        key = ("enemy" if team == "agent" else "agent", arg)
        damage[key] = damage.get(key, 0) + 1
        me.cooldown = me.max_cooldown
        scenario.shots.append((scenario.step, team, i, arg, d))
    for (team, j), dmg in damage.items():
        unit = (scenario.agents if team == "agent" else scenario.enemies)[j]
        unit.hp = max(0, unit.hp - dmg)

    # survivors move; a move into an occupied or off-arena cell does nothing
    occupied = scenario.occupied()
    for team, i, (what, arg) in intents:
        unit = (scenario.agents if team == "agent" else scenario.enemies)[i]
        if what != "move" or not unit.alive:
            continue
        if unit.fumble_prob > 0 and rng.random() < unit.fumble_prob:
            continue
        dx, dy = _DELTAS[arg]
        dest = Position(unit.pos[0] + dx, unit.pos[1] + dy)
        if not (0 <= dest[0] < scenario.width and 0 <= dest[1] < scenario.height) or dest in occupied:
            continue
        occupied.discard(unit.pos)
        occupied.add(dest)
        unit.pos = dest

    for unit in scenario.agents + scenario.enemies:
        if unit.alive and unit.cooldown > 0:
            unit.cooldown -= 1

    scenario.step += 1
    reward = STEP_REWARD
    agents_alive = any(u.alive for u in scenario.agents)
    enemies_alive = any(u.alive for u in scenario.enemies)
    if not agents_alive or not enemies_alive or scenario.step >= scenario.max_steps:
        scenario.terminated = True
        scenario.won = agents_alive and not enemies_alive
        scenario.lost = not agents_alive  # a mutual kill counts as a loss
        reward += WIN_REWARD * scenario.won - WIN_REWARD * scenario.lost
        reward += HP_WEIGHT * scenario.hp_difference()
    scenario.accumulated_reward += reward
    return reward, scenario.terminated, scenario.won


# --------------------------------------------------------------------------- observations

def _unit_tokens(u: Unit, head: tuple) -> tuple:
    return head + (f"hp={min(u.hp, MAX_HP)}", f"cd={min(u.cooldown, MAX_CD)}")


def observe_combat(scenario: CombatScenario, agent_index: int) -> Observation:
    me = scenario.agents[agent_index]
    mx, my = me.pos
    entries = [ObsEntry((0, 0), _unit_tokens(me, ("self",)))]
    for i, u in enumerate(scenario.agents):
        if i != agent_index and u.alive:
            entries.append(ObsEntry((u.pos[0] - mx, u.pos[1] - my), _unit_tokens(u, ("ally",))))
    for j, u in enumerate(scenario.enemies):
        if u.alive:
            entries.append(ObsEntry((u.pos[0] - mx, u.pos[1] - my), _unit_tokens(u, ("enemy", f"e{j + 1}"))))
    for cx, cy in ((0, 0), (scenario.width - 1, 0), (0, scenario.height - 1),
                   (scenario.width - 1, scenario.height - 1)):
        entries.append(ObsEntry((cx - mx, cy - my), ("corner",)))
    return Observation(entries)


_NUMERIC = {"hp": MAX_HP, "cd": MAX_CD}


def _other(rng, lo: int, hi: int, current: int) -> int:
    v = int(rng.integers(lo, hi))  # one value short of the range: skip the current one
    return v + 1 if v >= current else v


def inject_feature_noise(obs: Observation, rng: np.random.Generator, p: float = 0.1,
                         stats: Optional[dict] = None) -> Observation:
    """Replace each numeric token of a unit entry by a different in-vocabulary value with probability p.

    Numeric tokens are hp, cooldown and the two coordinates of units (corners are
    arena landmarks and stay exact).
    """
    if p <= 0:
        return obs
    out = []
    n_numeric = n_replaced = 0
    for e in obs.entries:
        if e.loc is None or e.tokens[0] not in ("self", "ally", "enemy"):
            out.append(e)
            continue
        toks = list(e.tokens)
        for i, t in enumerate(toks):
            name, _, val = t.partition("=")
            if name in _NUMERIC and val:
                n_numeric += 1
                if rng.random() < p:
                    toks[i] = f"{name}={_other(rng, 0, _NUMERIC[name], int(val))}"
                    n_replaced += 1
        loc = list(e.loc)
        for a in range(2):
            n_numeric += 1
            if rng.random() < p:
                loc[a] = _other(rng, -COORD_SPAN, COORD_SPAN, loc[a])
                n_replaced += 1
        out.append(ObsEntry(tuple(loc), tuple(toks)))
    if stats is not None:
        stats["numeric"] = stats.get("numeric", 0) + n_numeric
        stats["replaced"] = stats.get("replaced", 0) + n_replaced
    return Observation(out)


# --------------------------------------------------------------------------- scripted agents

def attack_weakest_baseline(scenario: CombatScenario) -> list[int]:
    """Attack the weakest enemy in range when loaded, otherwise walk toward the weakest enemy."""
    actions = []
    enemies = scenario.living("enemy")
    for _, agent in scenario.living("agent"):
        if not enemies:
            actions.append(STAY)
            continue
        if agent.cooldown == 0:
            in_range = [(j, e) for j, e in enemies if distance(agent.pos, e.pos) <= agent.shot_range]
            if in_range:
                j = min(in_range, key=lambda c: (c[1].hp, c[0]))[0]
                actions.append(ATTACK + j)
                continue
        weakest = min(enemies, key=lambda c: (c[1].hp, c[0]))[1]
        actions.append(_toward(agent.pos, weakest.pos))
    return actions
