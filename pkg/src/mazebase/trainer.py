"""Batched policy-gradient training with a learned baseline.

Every batch plays ``batch_size`` games to completion against a frozen copy of
the parameters, then takes one RMSProp step on

    loss = -(1/B) sum_t [ log p(a_t | x_t) * stop(R_t - b_t) - alpha * (R_t - b_t)^2 ]

with undiscounted suffix returns R_t. Episodes are split into fixed-size shards;
each episode draws all of its randomness from its own generator seeded by
(seed, batch, episode), and shard gradients are summed in shard order, so the
result does not depend on how many worker processes run the shards.
"""
from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .curriculum import CurriculumState, state_from_vars
from .encoding import INFO_SLOTS, GridCaps, Observation, Vocabulary, feature_counts, memory_tokens, window_for
from .engine import GenerationError
from .envs import Episode, TaskSpec, get_task
from .neural import autodiff as ad
from .neural import checkpoint as ckpt
from .neural.models import (DEFAULT_LR, MemoryBatch, Model, NumericError, build_model, greedy_action,
                            sample_action)
from .neural.optim import RMSProp

TRAIN_STREAM, EVAL_STREAM = 0, 1
GRAD_CHUNK = 4096  # decisions per backward pass; fixed so results never depend on batching


# --------------------------------------------------------------------------- inputs

class FeatureEncoder:
    """Bag-of-words rows over an egocentric window (linear and MLP models)."""

    def __init__(self, vocab: Vocabulary, caps: GridCaps):
        self.vocab, self.caps = vocab, caps
        self.dim = caps.dim(len(vocab))

    def row(self, obs: Observation):
        counts = feature_counts(obs, self.vocab, self.caps)
        cols = np.fromiter(sorted(counts), dtype=np.int64, count=len(counts))
        return cols, np.array([counts[c] for c in cols], dtype=np.float64)

    def assemble(self, rows: Sequence) -> sp.csr_matrix:
        lengths = np.fromiter((len(c) for c, _ in rows), dtype=np.int64, count=len(rows))
        indptr = np.concatenate(([0], np.cumsum(lengths)))
        cols = np.concatenate([c for c, _ in rows]) if rows else np.zeros(0, np.int64)
        vals = np.concatenate([v for _, v in rows]) if rows else np.zeros(0)
        return sp.csr_matrix((vals, cols, indptr), shape=(len(rows), self.dim))


class MemoryEncoder:
    """One bag per memory entry (memory network)."""

    def __init__(self, vocab: Vocabulary):
        self.vocab = vocab

    def row(self, obs: Observation):
        out = []
        for bag in memory_tokens(obs):
            ids = np.array([self.vocab[t] for t in bag], dtype=np.int64)
            cols, counts = np.unique(ids, return_counts=True)
            out.append((cols, counts.astype(np.float64)))
        return out

    def assemble(self, rows: Sequence) -> MemoryBatch:
        mems = [m for r in rows for m in r]
        seg = np.repeat(np.arange(len(rows)), [len(r) for r in rows])
        lengths = np.fromiter((len(c) for c, _ in mems), dtype=np.int64, count=len(mems))
        indptr = np.concatenate(([0], np.cumsum(lengths)))
        cols = np.concatenate([c for c, _ in mems]) if mems else np.zeros(0, np.int64)
        vals = np.concatenate([v for _, v in mems]) if mems else np.zeros(0)
        bags = sp.csr_matrix((vals, cols, indptr), shape=(len(mems), len(self.vocab)))
        return MemoryBatch(bags, seg.astype(np.intp), len(rows))


# --------------------------------------------------------------------------- trajectories

@dataclass
class Trajectory:
    task: str
    rows: list  # encoded inputs, one per decision
    actions: np.ndarray  # one per decision
    times: np.ndarray  # step index of each decision (several agents may act in one step)
    rewards: np.ndarray  # one per step
    success: bool
    total_reward: float
    optimal_reward: Optional[float] = None
    won: Optional[bool] = None
    episode_id: int = -1

    @property
    def length(self) -> int:
        return len(self.rewards)

    def returns(self) -> np.ndarray:
        """Suffix sums R_t = r_t + R_{t+1}, with R_T+1 = 0."""
        return np.cumsum(self.rewards[::-1])[::-1].copy()

    def decision_returns(self) -> np.ndarray:
        return self.returns()[self.times]

    @property
    def relative_reward(self) -> Optional[float]:
        if self.optimal_reward is None:
            return None
        return self.optimal_reward / self.total_reward


def sample_ranges(variables: dict, ranges: dict, rng: np.random.Generator) -> dict:
    """Draw each difficulty variable uniformly from its current range."""
    out = {}
    for name, (lo0, hi0, _, integer) in variables.items():
        lo, hi = ranges.get(name, (lo0, hi0))
        if integer:
            out[name] = int(rng.integers(int(lo), int(hi) + 1))
        else:
            out[name] = float(lo) if hi <= lo else float(rng.uniform(lo, hi))
    return out


VAR_REDRAWS = 5


def draw_episode(spec, ranges: dict, rng: np.random.Generator, **kwargs) -> Episode:
    """Sample difficulty variables and build an episode.

    Some variable draws (a 3x3 push board, say) rarely admit a solvable layout;
    after the generator gives up, the variables are drawn again.
    """
    for attempt in range(VAR_REDRAWS):
        vars = sample_ranges(spec.variables, ranges, rng)
        try:
            return spec.make(vars, rng, **kwargs)
        except GenerationError:
            if attempt == VAR_REDRAWS - 1:
                raise


@dataclass
class ShardJob:
    model: Model
    encoder: object
    tasks: tuple
    ranges: dict  # task -> {var: (lo, hi)}
    seed: int
    stream: int
    batch: int
    episodes: tuple  # episode ids
    greedy: bool = False
    max_steps: Optional[int] = None
    noise: float = 0.0
    alpha: Optional[float] = None  # when set, the shard also returns its summed gradient


def episode_rng(seed: int, stream: int, batch: int, episode: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(stream), int(batch), int(episode)])


def _start_episode(job: ShardJob, eid: int):
    rng = episode_rng(job.seed, job.stream, job.batch, eid)
    name = job.tasks[int(rng.integers(len(job.tasks)))] if len(job.tasks) > 1 else job.tasks[0]
    spec = get_task(name)
    kwargs = {"noise": job.noise}
    if job.max_steps is not None:
        kwargs["max_steps"] = job.max_steps
    return draw_episode(spec, job.ranges.get(name, {}), rng, **kwargs), rng


def play(model: Model, encoder, episodes: list[Episode], rngs: list, greedy: bool = False,
         policy: Optional[Callable] = None) -> list[Trajectory]:
    """Run episodes in lockstep; one batched forward pass per step over all acting agents.

    ``policy`` optionally replaces the model: it maps (episode, agent observation index) to an action.
    """
    n = len(episodes)
    rows = [[] for _ in range(n)]
    actions = [[] for _ in range(n)]
    times = [[] for _ in range(n)]
    rewards = [[] for _ in range(n)]
    active = [i for i in range(n) if not episodes[i].done]
    while active:
        owners, step_rows = [], []
        for i in active:
            for obs in episodes[i].observations():
                owners.append(i)
                step_rows.append(encoder.row(obs) if encoder is not None else None)
        if policy is None:
            probs = model.policy(encoder.assemble(step_rows)).probs
        chosen: dict[int, list[int]] = {i: [] for i in active}
        for j, i in enumerate(owners):
            if policy is not None:
                a = int(policy(episodes[i], len(chosen[i])))
            elif greedy:
                a = greedy_action(probs[j])
            else:
                a = sample_action(probs[j], rngs[i])
            chosen[i].append(a)
            rows[i].append(step_rows[j])
            actions[i].append(a)
            times[i].append(len(rewards[i]))
        for i in active:
            rewards[i].append(episodes[i].step(chosen[i]))
        active = [i for i in active if not episodes[i].done]
    out = []
    for i, ep in enumerate(episodes):
        out.append(Trajectory(ep.task, rows[i], np.asarray(actions[i], dtype=np.intp),
                              np.asarray(times[i], dtype=np.intp), np.asarray(rewards[i], dtype=np.float64),
                              bool(ep.success), float(ep.total_reward), ep.optimal_reward, ep.won))
    return out


def gradient_sum(trajectories: Sequence[Trajectory], model: Model, encoder, alpha: float) -> dict[str, np.ndarray]:
    """Summed (not averaged) gradient of the loss over every decision.

    The policy term uses the advantage R_t - b_t as a constant so no gradient
    reaches the baseline through it; the baseline only learns from the
    alpha-weighted squared error.
    """
    rows, acts, rets, owner = [], [], [], []
    for k, tr in enumerate(trajectories):
        rows.extend(tr.rows)
        acts.append(tr.actions)
        rets.append(tr.decision_returns())
        owner.extend([k] * len(tr.actions))
    grads = {name: np.zeros_like(v) for name, v in model.params.items()}
    if not rows:
        return grads
    acts = np.concatenate(acts)
    rets = np.concatenate(rets)
    for lo in range(0, len(rows), GRAD_CHUNK):
        hi = min(lo + GRAD_CHUNK, len(rows))
        leaves = model.leaves()
        logits, base = model.forward(encoder.assemble(rows[lo:hi]), leaves)
        r = rets[lo:hi]
        logp = ad.pick(ad.log_softmax(logits), acts[lo:hi])
        adv = r - base.value
        policy_term = ad.sum(ad.mul(logp, adv))
        base_term = ad.sum(ad.square(ad.sub(r, base)))
        loss = ad.neg(ad.sub(policy_term, ad.mul(base_term, float(alpha))))
        loss.backward()
        for name, leaf in leaves.items():
            if leaf.grad is not None:
                grads[name] += leaf.grad
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            bad = [tr.episode_id for tr in trajectories
                   if not np.all(np.isfinite(tr.rewards))] or [tr.episode_id for tr in trajectories]
            raise NumericError(f"non-finite gradient for {name}; episodes {bad[:10]}")
    return grads


def compute_update(trajectories: Sequence[Trajectory], model: Model, encoder, alpha: float,
                   n_episodes: Optional[int] = None) -> dict[str, np.ndarray]:
    """Batch-averaged gradient of the training loss (descend along it)."""
    n = n_episodes if n_episodes is not None else len(trajectories)
    if n < 1:
        raise ValueError("need at least one episode")
    grads = gradient_sum(trajectories, model, encoder, alpha)
    return {k: g / n for k, g in grads.items()}


def run_shard(job: ShardJob):
    """Worker entry point: play a shard of episodes, optionally with its gradient sum."""
    started = [_start_episode(job, eid) for eid in job.episodes]
    episodes = [e for e, _ in started]
    trajs = play(job.model, job.encoder, episodes, [r for _, r in started], greedy=job.greedy)
    for eid, tr in zip(job.episodes, trajs):
        tr.episode_id = eid
    grads = None
    if job.alpha is not None:
        grads = gradient_sum(trajs, job.model, job.encoder, job.alpha)
        for tr in trajs:
            tr.rows = []  # inputs are not needed by the caller any more
    return trajs, grads


# --------------------------------------------------------------------------- config

@dataclass
class TrainConfig:
    tasks: list = field(default_factory=lambda: ["goto"])
    model: str = "mlp"
    batch_size: int = 512
    n_batches: int = 20000
    alpha: float = 0.03
    lr: Optional[float] = None
    rms_decay: float = 0.97
    rms_eps: float = 1e-6
    seed: int = 0
    max_steps: Optional[int] = None
    curriculum: bool = True
    t_lower: float = 0.5
    t_upper: float = 0.9
    window: int = 512
    ranges: dict = field(default_factory=dict)  # task -> {var: (lo, hi)}
    noise: float = 0.1  # combat feature noise during training rollouts
    hidden: int = 50
    embed: int = 50
    workers: int = 1
    shard_size: int = 128
    eval_every: int = 0
    eval_episodes: int = 500
    stop_success: Optional[float] = None
    stop_rel: Optional[float] = None
    stop_win: Optional[float] = None
    checkpoint_every: int = 0

    def validate(self) -> None:
        if not self.tasks:
            raise ValueError("at least one task is required")
        for t in self.tasks:
            get_task(t)
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        if self.batch_size < 1 or self.n_batches < 1 or self.shard_size < 1:
            raise ValueError("batch_size, n_batches and shard_size must be positive")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")
        if self.model not in DEFAULT_LR:
            raise ValueError(f"unknown model kind {self.model!r}")
        counts = {get_task(t).n_actions for t in self.tasks}
        if len(counts) != 1:
            raise ValueError("all tasks in a run must share one action set")
        for t, rs in self.ranges.items():
            spec = get_task(t)
            for var, (lo, hi) in rs.items():
                if var not in spec.variables:
                    raise ValueError(f"{t}: unknown difficulty variable {var!r}")
                lo0, hi0 = spec.variables[var][:2]
                floor = 2 if var in ("width", "height") else lo0
                if not floor <= lo <= hi <= hi0:
                    raise ValueError(f"{t}: range for {var} must lie in [{floor}, {hi0}], got [{lo}, {hi}]")

    @property
    def learning_rate(self) -> float:
        return self.lr if self.lr is not None else DEFAULT_LR[self.model]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["ranges"] = {t: {v: tuple(r) for v, r in rs.items()} for t, rs in d.get("ranges", {}).items()}
        return cls(**d)


@dataclass
class EvalResult:
    task: str
    episodes: int
    mean_reward: float
    success_rate: float
    rel_reward: Optional[float]
    win_rate: Optional[float]


def summarize(task: str, trajs: Sequence[Trajectory]) -> EvalResult:
    n = len(trajs)
    rel = [t.relative_reward for t in trajs if t.relative_reward is not None]
    wins = [t.won for t in trajs if t.won is not None]
    return EvalResult(task, n, float(np.mean([t.total_reward for t in trajs])),
                      float(np.mean([t.success for t in trajs])),
                      float(np.mean(rel)) if rel else None,
                      float(np.mean(wins)) if wins else None)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


# --------------------------------------------------------------------------- trainer

class Trainer:
    def __init__(self, config: TrainConfig, vocab: Optional[Vocabulary] = None):
        config.validate()
        self.config = config
        self.vocab = vocab or Vocabulary.default()
        self.specs: list[TaskSpec] = [get_task(t) for t in config.tasks]
        self.n_actions = self.specs[0].n_actions
        w = max(s.window_grid(config.ranges.get(s.name))[0] for s in self.specs)
        h = max(s.window_grid(config.ranges.get(s.name))[1] for s in self.specs)
        self.caps = GridCaps(*window_for(w, h), INFO_SLOTS)
        rng = np.random.default_rng([config.seed, 99])
        if config.model == "memnn":
            self.encoder = MemoryEncoder(self.vocab)
            mcfg = {"kind": "memnn", "vocab_size": len(self.vocab), "n_actions": self.n_actions,
                    "dim": config.embed}
        else:
            self.encoder = FeatureEncoder(self.vocab, self.caps)
            mcfg = {"kind": config.model, "input_dim": self.encoder.dim, "n_actions": self.n_actions}
            if config.model == "mlp":
                mcfg["hidden"] = config.hidden
        self.model = build_model(mcfg, rng=rng)
        self.optimizer = RMSProp(self.model.params, config.learning_rate, config.rms_decay, config.rms_eps)
        self.curricula: dict[str, CurriculumState] = {
            s.name: state_from_vars(s.variables, config.ranges.get(s.name), enabled=config.curriculum,
                                    t_lower=config.t_lower, t_upper=config.t_upper, window_size=config.window)
            for s in self.specs
        }
        self.batch = 0
        self.stopped = False
        self._pool: Optional[ProcessPoolExecutor] = None

    # ---------------------------------------------------------------- columns
    def curriculum_columns(self) -> list[str]:
        names = []
        for s in self.specs:
            for v in s.variables:
                if f"cm_{v}" not in names:
                    names.append(f"cm_{v}")
        return names

    def metric_header(self) -> list[str]:
        return ["batch", "task", "mean_reward", "success_rate", "rel_reward", "win_rate"] + self.curriculum_columns()

    # ---------------------------------------------------------------- execution
    def _map(self, jobs: list[ShardJob]):
        if self.config.workers > 1 and len(jobs) > 1:
            if self._pool is None:
                self._pool = ProcessPoolExecutor(max_workers=self.config.workers)
            return list(self._pool.map(run_shard, jobs))
        return [run_shard(j) for j in jobs]

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def _jobs(self, n: int, stream: int, batch: int, ranges: dict, greedy: bool, alpha, tasks=None,
              noise: float = 0.0) -> list[ShardJob]:
        size = self.config.shard_size
        tasks = tuple(tasks or self.config.tasks)
        return [ShardJob(self.model, self.encoder, tasks, ranges, self.config.seed, stream, batch,
                         tuple(range(lo, min(lo + size, n))), greedy, self.config.max_steps, noise, alpha)
                for lo in range(0, n, size)]

    def rollout_batch(self) -> tuple[list[Trajectory], dict[str, np.ndarray]]:
        ranges = {name: cs.ranges() for name, cs in self.curricula.items()}
        jobs = self._jobs(self.config.batch_size, TRAIN_STREAM, self.batch, ranges, False, self.config.alpha,
                          noise=self.config.noise)
        trajs, total = [], None
        for shard_trajs, grads in self._map(jobs):
            trajs.extend(shard_trajs)
            if total is None:
                total = grads
            else:
                for k in total:
                    total[k] = total[k] + grads[k]
        return trajs, {k: g / len(trajs) for k, g in total.items()}

    def step(self) -> list[dict]:
        """One batch: rollouts, update, curriculum bookkeeping; returns metric rows."""
        trajs, grads = self.rollout_batch()
        self.optimizer.step(self.model.params, grads)
        rows = []
        for spec in self.specs:
            mine = [t for t in trajs if t.task == spec.name]
            cs = self.curricula[spec.name]
            if mine:
                res = summarize(spec.name, mine)
                row = {"batch": self.batch, "task": spec.name, "mean_reward": res.mean_reward,
                       "success_rate": res.success_rate, "rel_reward": res.rel_reward, "win_rate": res.win_rate}
                for v in cs.vars:
                    row[f"cm_{v.name}"] = float(v.cur_max)
                rows.append(row)
            cs.record_outcomes(t.success for t in mine)
            cs.maybe_adjust()
        self.batch += 1
        for cs in self.curricula.values():
            cs.set_progress(self.batch / self.config.n_batches)
        return rows

    def evaluate(self, task: Optional[str] = None, n_episodes: Optional[int] = None, tag: int = 0,
                 greedy: bool = True) -> EvalResult:
        """Greedy play over the full configured ranges of one task."""
        task = task or self.config.tasks[0]
        n = n_episodes or self.config.eval_episodes
        if n < 1:
            raise ValueError("n_episodes must be at least 1")
        spec = get_task(task)
        ranges = {task: {v: self.config.ranges.get(task, {}).get(v, spec.variables[v][:2])
                         for v in spec.variables}}
        trajs = []
        for shard, _ in self._map(self._jobs(n, EVAL_STREAM, tag, ranges, greedy, None, tasks=[task])):
            trajs.extend(shard)
        return summarize(task, trajs)

    def _targets_met(self, results: list[EvalResult]) -> bool:
        c = self.config
        if c.stop_success is None and c.stop_rel is None and c.stop_win is None:
            return False
        for r in results:
            if c.stop_success is not None and r.success_rate < c.stop_success:
                return False
            if c.stop_rel is not None and (r.rel_reward is None or r.rel_reward < c.stop_rel):
                return False
            if c.stop_win is not None and (r.win_rate is None or r.win_rate < c.stop_win):
                return False
        return True

    def train(self, metrics_path=None, eval_path=None, checkpoint_path=None,
              callback: Optional[Callable] = None) -> "Trainer":
        """Run until n_batches or an evaluation meets the stop targets."""
        metrics = _CsvLog(metrics_path, self.metric_header()) if metrics_path else None
        evals = _CsvLog(eval_path, ["batch", "task", "episodes", "mean_reward", "success_rate", "rel_reward",
                                    "win_rate"]) if eval_path else None
        try:
            while self.batch < self.config.n_batches and not self.stopped:
                rows = self.step()  # a numeric abort propagates; the last checkpoint stays intact
                if metrics:
                    metrics.write(rows)
                if callback:
                    callback(self, rows)
                ce = self.config.checkpoint_every
                if checkpoint_path and ce and self.batch % ce == 0:
                    self.save(checkpoint_path)
                ee = self.config.eval_every
                if ee and self.batch % ee == 0:
                    results = [self.evaluate(s.name, tag=self.batch) for s in self.specs]
                    if evals:
                        evals.write([{"batch": self.batch, **asdict(r)} for r in results])
                    if self._targets_met(results):
                        self.stopped = True
            if checkpoint_path:
                self.save(checkpoint_path)
        finally:
            self.close()
        return self

    @property
    def episodes_played(self) -> int:
        return self.batch * self.config.batch_size

    # ---------------------------------------------------------------- persistence
    def save(self, path) -> None:
        tensors = dict(self.model.params)
        tensors.update({f"opt/{k}": v for k, v in self.optimizer.state.items()})
        extra = {"config": self.config.to_dict(), "batch": self.batch, "stopped": self.stopped,
                 "curricula": {k: cs.to_dict() for k, cs in self.curricula.items()}}
        ckpt.save(path, self.model.config(), self.vocab.digest(), tensors, extra)

    @classmethod
    def load(cls, path, vocab: Optional[Vocabulary] = None, **overrides) -> "Trainer":
        vocab = vocab or Vocabulary.default()
        header, tensors = ckpt.load(path, expect_vocab=vocab.digest())
        extra = header["extra"]
        cfg = extra["config"]
        cfg.update(overrides)
        trainer = cls(TrainConfig.from_dict(cfg), vocab)
        if trainer.model.config() != header["model"]:
            raise ckpt.CheckpointError("checkpoint model does not match its stored config")
        for k in trainer.model.params:
            trainer.model.params[k] = tensors[k].copy()
        for k in trainer.optimizer.state:
            trainer.optimizer.state[k] = tensors[f"opt/{k}"].copy()
        trainer.batch = extra["batch"]
        trainer.stopped = extra.get("stopped", False)
        trainer.curricula = {k: CurriculumState.from_dict(d) for k, d in extra["curricula"].items()}
        return trainer


class _CsvLog:
    """Append-only CSV; each write is flushed so partial runs leave a valid file."""

    def __init__(self, path, header: list[str]):
        self.path, self.header = Path(path), header
        new = not self.path.exists() or self.path.stat().st_size == 0
        if new:
            with self.path.open("w", newline="") as f:
                csv.writer(f).writerow(header)

    def write(self, rows: list[dict]) -> None:
        with self.path.open("a", newline="") as f:
            w = csv.writer(f)
            for r in rows:
                w.writerow([_fmt(r.get(k)) for k in self.header])


def evaluate(model: Model, task: str, n_episodes: int, rng, encoder=None, ranges=None,
             max_steps: Optional[int] = None, policy: Optional[Callable] = None) -> EvalResult:
    """Greedy evaluation of ``model`` (or a scripted ``policy``) on ``task`` at the full ranges."""
    if n_episodes < 1:
        raise ValueError("n_episodes must be at least 1")
    seed = int(rng.integers(2 ** 62)) if isinstance(rng, np.random.Generator) else int(rng)
    spec = get_task(task)
    ranges = ranges or {}
    episodes, rngs = [], []
    for i in range(n_episodes):
        r = episode_rng(seed, EVAL_STREAM, 0, i)
        kwargs = {} if max_steps is None else {"max_steps": max_steps}
        episodes.append(draw_episode(spec, ranges, r, **kwargs))
        rngs.append(r)
    trajs = play(model, encoder, episodes, rngs, greedy=True, policy=policy)
    return summarize(task, trajs)
