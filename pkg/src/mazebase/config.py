"""INI run configuration.

Grammar (``configparser``; every key optional except ``[model] kind``)::

    [run]         seed, out, workers
    [tasks]       names = goto multigoals ...
                  <task>.<variable> = lo hi      (narrow a difficulty range)
    [model]       kind = linear | mlp | memnn, lr, hidden, embed
    [train]       batch_size, n_batches, alpha, max_steps, noise, shard_size,
                  eval_every, eval_episodes, stop_success, stop_rel, stop_win,
                  checkpoint_every, rms_decay, rms_eps
    [curriculum]  enabled, t_lower, t_upper, window

Unknown sections or keys are errors.
"""
from __future__ import annotations

import configparser
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .envs import MAZE_TASKS, get_task
from .trainer import TrainConfig

OUT_ENV = "MAZEBASE_OUT"


class ConfigError(ValueError):
    pass


_INT, _FLOAT, _OPT_FLOAT, _OPT_INT, _BOOL = "int", "float", "opt_float", "opt_int", "bool"

_KEYS = {
    "run": {"seed": _INT, "out": "str", "workers": _INT},
    "model": {"kind": "str", "lr": _OPT_FLOAT, "hidden": _INT, "embed": _INT},
    "train": {"batch_size": _INT, "n_batches": _INT, "alpha": _FLOAT, "max_steps": _OPT_INT, "noise": _FLOAT,
              "shard_size": _INT, "eval_every": _INT, "eval_episodes": _INT, "stop_success": _OPT_FLOAT,
              "stop_rel": _OPT_FLOAT, "stop_win": _OPT_FLOAT, "checkpoint_every": _INT,
              "rms_decay": _FLOAT, "rms_eps": _FLOAT},
    "curriculum": {"enabled": _BOOL, "t_lower": _FLOAT, "t_upper": _FLOAT, "window": _INT},
}

# [section] key -> TrainConfig field
_FIELD = {("model", "kind"): "model", ("curriculum", "enabled"): "curriculum", ("run", "seed"): "seed",
          ("run", "workers"): "workers"}


@dataclass
class RunConfig:
    train: TrainConfig
    out: Path

    def to_ini(self) -> str:
        """Fully defaulted snapshot; parsing it back yields the same run."""
        c = self.train
        lines = ["[run]", f"seed = {c.seed}", f"out = {self.out}", f"workers = {c.workers}", "",
                 "[tasks]", "names = " + " ".join(c.tasks)]
        for task, rs in sorted(c.ranges.items()):
            for var, (lo, hi) in sorted(rs.items()):
                lines.append(f"{task}.{var} = {lo:g} {hi:g}")
        lines += ["", "[model]", f"kind = {c.model}", f"lr = {c.learning_rate!r}", f"hidden = {c.hidden}",
                  f"embed = {c.embed}", "", "[train]"]
        for key in _KEYS["train"]:
            v = getattr(c, key)
            lines.append(f"{key} = {'none' if v is None else repr(v) if isinstance(v, float) else v}")
        lines += ["", "[curriculum]", f"enabled = {str(c.curriculum).lower()}", f"t_lower = {c.t_lower!r}",
                  f"t_upper = {c.t_upper!r}", f"window = {c.window}", ""]
        return "\n".join(lines)


def _convert(kind: str, section: str, key: str, raw: str):
    raw = raw.strip()
    try:
        if kind == _INT:
            return int(raw)
        if kind == _FLOAT:
            return float(raw)
        if kind in (_OPT_FLOAT, _OPT_INT):
            if raw.lower() in ("", "none"):
                return None
            return int(raw) if kind == _OPT_INT else float(raw)
        if kind == _BOOL:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot read {raw!r} as {kind.replace('opt_', '')}") from None
    return raw


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str  # keys are case-sensitive
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    known = set(_KEYS) | {"tasks"}
    for section in cp.sections():
        if section not in known:
            raise ConfigError(f"unknown section [{section}]")
    if not cp.has_option("model", "kind"):
        raise ConfigError("missing required key [model] kind")

    values: dict = {}
    out = os.environ.get(OUT_ENV, "runs/default")
    for section, keys in _KEYS.items():
        if not cp.has_section(section):
            continue
        for key, raw in cp.items(section):
            if key not in keys:
                raise ConfigError(f"unknown key [{section}] {key}")
            v = _convert(keys[key], section, key, raw)
            if (section, key) == ("run", "out"):
                out = v
                continue
            values[_FIELD.get((section, key), key)] = v

    tasks, ranges = list(MAZE_TASKS), {}
    if cp.has_section("tasks"):
        for key, raw in cp.items("tasks"):
            if key == "names":
                tasks = raw.replace(",", " ").split()
                continue
            task, dot, var = key.partition(".")
            if not dot:
                raise ConfigError(f"unknown key [tasks] {key}")
            parts = raw.split()
            if len(parts) != 2:
                raise ConfigError(f"[tasks] {key}: expected 'lo hi', got {raw!r}")
            try:
                ranges.setdefault(task, {})[var] = (float(parts[0]), float(parts[1]))
            except ValueError:
                raise ConfigError(f"[tasks] {key}: expected two numbers, got {raw!r}") from None
    for task in ranges:
        if task not in tasks:
            raise ConfigError(f"[tasks] ranges given for {task!r}, which is not in names")
    for task in tasks:
        try:
            get_task(task)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    ranges = {task: normalize_ranges(task, rs) for task, rs in ranges.items()}

    cfg = TrainConfig(tasks=tasks, ranges=ranges, **values)
    try:
        cfg.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return RunConfig(cfg, Path(out))


def normalize_ranges(task: str, ranges: dict) -> dict:
    """Check variable names and give integer variables integer bounds."""
    spec = get_task(task)
    out = {}
    for var, (lo, hi) in ranges.items():
        if var not in spec.variables:
            raise ConfigError(f"{task}: unknown difficulty variable {var!r} "
                              f"(known: {', '.join(spec.variables)})")
        if spec.variables[var][3]:
            if lo != int(lo) or hi != int(hi):
                raise ConfigError(f"{task}.{var}: integer variable needs integer bounds")
            lo, hi = int(lo), int(hi)
        out[var] = (lo, hi)
    return out


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, str(path))


def parse_range_overrides(items: Optional[list[str]]) -> dict:
    """``["height=3:5", "block_pct=0:0"]`` -> {"height": (3, 5), "block_pct": (0, 0)}."""
    out = {}
    for item in items or []:
        name, eq, span = item.partition("=")
        lo, colon, hi = span.partition(":")
        try:
            if not eq:
                raise ValueError
            lo_v = float(lo)
            hi_v = float(hi) if colon else lo_v
        except ValueError:
            raise ConfigError(f"bad range {item!r}; expected name=lo:hi") from None
        out[name.strip()] = (lo_v, hi_v)
    return out
