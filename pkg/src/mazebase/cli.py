"""Command line: train, eval, render, gen, oracle.

Exit status is 0 on success, 1 on a runtime failure and 2 on a usage or
configuration error.
"""
from __future__ import annotations

import argparse
import csv
import io
import os
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from . import combat as cb
from .config import ConfigError, RunConfig, load_config, normalize_ranges, parse_range_overrides
from .encoding import Vocabulary, babi_serialize, observe
from .engine import Action
from .envs import MazeEpisode, get_task
from .neural.checkpoint import CheckpointError
from .neural.models import NumericError
from .oracle import solve
from .render import draw
from .trainer import EvalResult, Trainer, draw_episode, episode_rng, evaluate

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2
EVAL_HEADER = ["task", "episodes", "mean_reward", "success_rate", "rel_reward", "win_rate"]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# --------------------------------------------------------------------------- scripted policies

def oracle_policy(episode, agent: int = 0) -> int:
    """Follow the oracle plan computed at the first step."""
    if not isinstance(episode, MazeEpisode):
        raise UsageError("the oracle policy exists only for maze tasks")
    plan = getattr(episode, "_plan", None)
    if plan is None:
        plan = episode._plan = list(solve(episode.state).plan)
    k = episode.state.step
    return int(plan[k]) if k < len(plan) else 0


def random_policy(episode, agent: int = 0) -> int:
    rng = episode.state.rng if isinstance(episode, MazeEpisode) else episode.scenario.rng
    return int(rng.integers(episode.n_actions))


def weakest_policy(episode, agent: int = 0) -> int:
    if isinstance(episode, MazeEpisode):
        raise UsageError("the attack-weakest policy exists only for combat tasks")
    return cb.attack_weakest_baseline(episode.scenario)[agent]


POLICIES = {"oracle": oracle_policy, "random": random_policy, "weakest": weakest_policy}


# --------------------------------------------------------------------------- helpers

def _ranges(task: str, items) -> dict:
    return normalize_ranges(task, parse_range_overrides(items))


def _load_trainer(path, vocab_path=None) -> Trainer:
    vocab = Vocabulary.load(vocab_path) if vocab_path else None
    return Trainer.load(path, vocab=vocab, workers=1)


def _make_episodes(task: str, n: int, seed: int, ranges: dict, max_steps=None, stream: int = 1):
    spec = get_task(task)
    episodes, rngs = [], []
    for i in range(n):
        rng = episode_rng(seed, stream, 0, i)
        kwargs = {"max_steps": max_steps} if max_steps else {}
        episodes.append(draw_episode(spec, ranges, rng, **kwargs))
        rngs.append(rng)
    return episodes, rngs


def _eval_row(r: EvalResult) -> list[str]:
    f = lambda v: "" if v is None else f"{v:.6f}"  # noqa: E731
    return [r.task, str(r.episodes), f(r.mean_reward), f(r.success_rate), f(r.rel_reward), f(r.win_rate)]


def _write(text: str, out: Optional[str]) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


# --------------------------------------------------------------------------- commands

def cmd_train(args) -> int:
    run: RunConfig = load_config(args.config)
    if args.workers is not None:
        run.train.workers = args.workers
    if args.out:
        run.out = Path(args.out)
    run.out.mkdir(parents=True, exist_ok=True)
    ck = run.out / "checkpoint.mzb"
    if args.resume:
        if not ck.exists():
            raise UsageError(f"no checkpoint to resume from in {run.out}")
        trainer = Trainer.load(ck, workers=run.train.workers)
    else:
        for name in ("metrics.csv", "eval.csv"):
            (run.out / name).unlink(missing_ok=True)
        trainer = Trainer(run.train)
    (run.out / "config.resolved.ini").write_text(run.to_ini(), encoding="utf-8")
    Vocabulary.save(trainer.vocab, run.out / "vocab.txt")

    def progress(tr, rows):
        if not args.quiet:
            for r in rows:
                print(f"batch {r['batch']} {r['task']} reward {r['mean_reward']:.3f} "
                      f"success {r['success_rate']:.3f}", file=sys.stderr)

    trainer.train(metrics_path=run.out / "metrics.csv", eval_path=run.out / "eval.csv", checkpoint_path=ck,
                  callback=progress)
    print(f"trained {trainer.batch} batches; outputs in {run.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    if args.n < 1:
        raise UsageError("-n must be at least 1")
    if (args.checkpoint is None) == (args.policy is None):
        raise UsageError("give exactly one of --checkpoint or --policy")
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(EVAL_HEADER)
    if args.checkpoint:
        trainer = _load_trainer(args.checkpoint, args.vocab)
        tasks = args.task or trainer.config.tasks
        for task in tasks:
            ranges = _ranges(task, args.var) or trainer.config.ranges.get(task, {})
            res = evaluate(trainer.model, task, args.n, args.seed, trainer.encoder, ranges, trainer.config.max_steps)
            w.writerow(_eval_row(res))
    else:
        if not args.task:
            raise UsageError("--task is required with --policy")
        for task in args.task:
            res = evaluate(None, task, args.n, args.seed, None, _ranges(task, args.var),
                           policy=POLICIES[args.policy])
            w.writerow(_eval_row(res))
    _write(out.getvalue(), args.out)
    return EXIT_OK


def cmd_render(args) -> int:
    if (args.checkpoint is None) == (args.policy is None):
        raise UsageError("give exactly one of --checkpoint or --policy")
    trainer = _load_trainer(args.checkpoint, args.vocab) if args.checkpoint else None
    task = args.task or (trainer.config.tasks[0] if trainer else None)
    if task is None:
        raise UsageError("--task is required with --policy")
    ranges = _ranges(task, args.var)
    if trainer and not ranges:
        ranges = trainer.config.ranges.get(task, {})
    (episode,), (rng,) = _make_episodes(task, 1, args.seed, ranges)
    frames = [f"step 0\n{draw(episode)}"]
    policy = POLICIES[args.policy] if args.policy else None
    while not episode.done:
        if policy:
            actions = [policy(episode, k) for k in range(len(episode.observations()))]
        else:
            rows = [trainer.encoder.row(o) for o in episode.observations()]
            probs = trainer.model.policy(trainer.encoder.assemble(rows)).probs
            actions = [int(np.argmax(p)) for p in probs]
        reward = episode.step(actions)
        frames.append(f"step {len(frames)} actions {actions} reward {reward:+.2f}\n{draw(episode)}")
    frames.append(f"total reward {episode.total_reward:+.2f} success {episode.success}")
    _write("\n\n".join(frames) + "\n", args.out)
    return EXIT_OK


def cmd_gen(args) -> int:
    if args.n < 1:
        raise UsageError("-n must be at least 1")
    spec = get_task(args.task)
    if spec.family != "maze":
        raise UsageError("corpus generation is available for maze tasks only")
    episodes, _ = _make_episodes(args.task, args.n, args.seed, _ranges(args.task, args.var), stream=2)
    stories = []
    for ep in episodes:
        steps = []
        if args.initial_only:
            steps.append((observe(ep.state), None, None))
        else:
            while not ep.done:
                obs = observe(ep.state)
                a = oracle_policy(ep)
                steps.append((obs, Action(a), ep.step([a])))
            steps.append((observe(ep.state), None, None))
        stories.append(babi_serialize(steps))
    _write("".join(stories), args.out)
    return EXIT_OK


def cmd_oracle(args) -> int:
    if args.n < 1:
        raise UsageError("-n must be at least 1")
    if get_task(args.task).family != "maze":
        raise UsageError("the oracle is defined for maze tasks only")
    episodes, _ = _make_episodes(args.task, args.n, args.seed, _ranges(args.task, args.var), stream=3)
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["instance", "optimal_reward", "exact"])
    rewards, exact = [], True
    for i, ep in enumerate(episodes):
        sol = solve(ep.state)
        rewards.append(sol.reward)
        exact &= sol.exact
        if not args.summary:
            w.writerow([i, f"{sol.reward:.6f}", int(sol.exact)])
    w.writerow(["mean", f"{np.mean(rewards):.6f}", int(exact)])
    _write(out.getvalue(), args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mazebase", description="Grid games, policy-gradient training and evaluation.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    t = sub.add_parser("train", help="train a model from an INI config")
    t.add_argument("config")
    t.add_argument("--workers", type=int, default=None)
    t.add_argument("--out", default=None, help="output directory (overrides [run] out)")
    t.add_argument("--resume", action="store_true", help="continue from the checkpoint in the output directory")
    t.add_argument("--quiet", action="store_true")
    t.set_defaults(func=cmd_train)

    def common(sp, n_default, many_tasks=False):
        sp.add_argument("--task", action="append" if many_tasks else "store")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--var", action="append", metavar="NAME=LO:HI", help="narrow a difficulty range")
        sp.add_argument("--out", default=None, help="write to a file instead of stdout")
        if n_default is not None:
            sp.add_argument("-n", type=int, default=n_default)

    e = sub.add_parser("eval", help="greedy evaluation of a checkpoint or scripted policy")
    common(e, 1000, many_tasks=True)
    e.add_argument("--checkpoint")
    e.add_argument("--policy", choices=sorted(POLICIES))
    e.add_argument("--vocab", help="vocabulary file the checkpoint must match")
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("render", help="play one episode and print ASCII frames")
    common(r, None)
    r.add_argument("--checkpoint")
    r.add_argument("--policy", choices=sorted(POLICIES))
    r.add_argument("--vocab")
    r.set_defaults(func=cmd_render)

    g = sub.add_parser("gen", help="write a bAbI-style corpus of oracle episodes")
    common(g, 5)
    g.add_argument("--initial-only", action="store_true", help="only the starting observation of each game")
    g.set_defaults(func=cmd_gen)

    o = sub.add_parser("oracle", help="estimated optimal rewards of generated instances")
    common(o, 10000)
    o.add_argument("--summary", action="store_true", help="print only the mean")
    o.set_defaults(func=cmd_oracle)

    for sp in (g, o):
        sp.set_defaults(_needs_task=True)
    return p


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "_needs_task", False) and not args.task:
            raise UsageError("--task is required")
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"mazebase: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CheckpointError as exc:
        print(f"mazebase: checkpoint refused: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"mazebase: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"mazebase: numeric failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - report, don't dump a traceback on operators
        print(f"mazebase: failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
