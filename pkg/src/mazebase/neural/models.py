"""Linear, two-layer tanh and three-hop memory-network policies with a baseline head."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad

INIT_SCALE = 0.05
HIDDEN = 50
EMBED = 50
HOPS = 3


class ShapeError(ValueError):
    pass


class NumericError(FloatingPointError):
    pass


@dataclass
class MemoryBatch:
    """Memories of several observations: bag-of-words rows plus the owning observation id."""

    bags: sp.csr_matrix
    seg: np.ndarray
    n: int

    def __len__(self) -> int:
        return self.n


@dataclass
class PolicyOutput:
    logits: np.ndarray
    probs: np.ndarray
    baseline: np.ndarray


def _uniform(rng, shape) -> np.ndarray:
    return rng.uniform(-INIT_SCALE, INIT_SCALE, size=shape)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


class Model:
    """Parameters live in ``params`` (name -> float64 array); forward builds a fresh graph."""

    kind = "base"

    def __init__(self, n_actions: int, params: dict[str, np.ndarray]):
        self.n_actions = int(n_actions)
        self.params = params

    # subclasses implement _forward(batch, p) with p: name -> Tensor
    def _forward(self, batch, p: dict) -> tuple[ad.Tensor, ad.Tensor]:
        raise NotImplementedError

    def config(self) -> dict:
        raise NotImplementedError

    def leaves(self) -> dict[str, ad.Tensor]:
        return {k: ad.param(v) for k, v in self.params.items()}

    def forward(self, batch, leaves: Optional[dict] = None) -> tuple[ad.Tensor, ad.Tensor]:
        """Differentiable forward: (logits N x A, baseline N)."""
        return self._forward(batch, leaves if leaves is not None else self.leaves())

    def policy(self, batch) -> PolicyOutput:
        consts = {k: ad.Tensor(v) for k, v in self.params.items()}
        logits, base = self._forward(batch, consts)
        lv = logits.value
        if not np.all(np.isfinite(lv)):
            raise NumericError("non-finite policy logits")
        return PolicyOutput(lv, softmax(lv), base.value)

    def n_params(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    def copy(self) -> "Model":
        clone = object.__new__(type(self))
        clone.__dict__.update(self.__dict__)
        clone.params = {k: v.copy() for k, v in self.params.items()}
        return clone


def _heads(h: ad.Tensor, p: dict) -> tuple[ad.Tensor, ad.Tensor]:
    logits = ad.add(ad.matmul(h, p["W_out"]), p["b_out"])
    base = ad.reshape(ad.add(ad.matmul(h, p["W_base"]), p["b_base"]), (-1,))
    return logits, base


def _check_features(batch, dim: int) -> None:
    if batch.ndim != 2 or batch.shape[1] != dim:
        raise ShapeError(f"feature batch has shape {batch.shape}, model expects (*, {dim})")


def _features_times(batch, w) -> ad.Tensor:
    if sp.issparse(batch):
        return ad.spmatmul(batch.tocsr(), w)
    return ad.matmul(ad.Tensor(np.atleast_2d(batch)), w)


class LinearModel(Model):
    kind = "linear"

    def __init__(self, input_dim: int, n_actions: int, rng=None, params=None):
        self.input_dim = int(input_dim)
        if params is None:
            rng = rng if rng is not None else np.random.default_rng(0)
            params = {
                "W_out": _uniform(rng, (input_dim, n_actions)), "b_out": np.zeros(n_actions),
                "W_base": _uniform(rng, (input_dim, 1)), "b_base": np.zeros(1),
            }
        super().__init__(n_actions, params)

    def config(self) -> dict:
        return {"kind": self.kind, "input_dim": self.input_dim, "n_actions": self.n_actions}

    def _forward(self, batch, p):
        _check_features(batch, self.input_dim)
        logits = ad.add(_features_times(batch, p["W_out"]), p["b_out"])
        base = ad.reshape(ad.add(_features_times(batch, p["W_base"]), p["b_base"]), (-1,))
        return logits, base


class MLPModel(Model):
    kind = "mlp"

    def __init__(self, input_dim: int, n_actions: int, hidden: int = HIDDEN, rng=None, params=None):
        self.input_dim, self.hidden = int(input_dim), int(hidden)
        if params is None:
            rng = rng if rng is not None else np.random.default_rng(0)
            params = {
                "W_hid": _uniform(rng, (input_dim, hidden)), "b_hid": np.zeros(hidden),
                "W_out": _uniform(rng, (hidden, n_actions)), "b_out": np.zeros(n_actions),
                "W_base": _uniform(rng, (hidden, 1)), "b_base": np.zeros(1),
            }
        super().__init__(n_actions, params)

    def config(self) -> dict:
        return {"kind": self.kind, "input_dim": self.input_dim, "n_actions": self.n_actions,
                "hidden": self.hidden}

    def hidden_layer(self, batch, p) -> ad.Tensor:
        _check_features(batch, self.input_dim)
        return ad.tanh(ad.add(_features_times(batch, p["W_hid"]), p["b_hid"]))

    def _forward(self, batch, p):
        return _heads(self.hidden_layer(batch, p), p)


class MemNNModel(Model):
    """Three attention hops over embedded item memories.

    Embeddings E0..E3 are tied between adjacent hops: hop k addresses memories
    with E_k and reads them with E_{k+1}. The controller state starts from a
    learned query and is updated as ``u <- tanh(u H + read)``.
    """

    kind = "memnn"

    def __init__(self, vocab_size: int, n_actions: int, dim: int = EMBED, hops: int = HOPS, rng=None,
                 params=None):
        self.vocab_size, self.dim, self.hops = int(vocab_size), int(dim), int(hops)
        if params is None:
            rng = rng if rng is not None else np.random.default_rng(0)
            params = {f"E{k}": _uniform(rng, (vocab_size, dim)) for k in range(hops + 1)}
            params.update({
                "query": _uniform(rng, (1, dim)), "H": _uniform(rng, (dim, dim)),
                "W_out": _uniform(rng, (dim, n_actions)), "b_out": np.zeros(n_actions),
                "W_base": _uniform(rng, (dim, 1)), "b_base": np.zeros(1),
            })
        super().__init__(n_actions, params)
        self.last_attention: list[np.ndarray] = []

    def config(self) -> dict:
        return {"kind": self.kind, "vocab_size": self.vocab_size, "n_actions": self.n_actions,
                "dim": self.dim, "hops": self.hops}

    def _forward(self, batch: MemoryBatch, p):
        if not isinstance(batch, MemoryBatch):
            raise ShapeError("memory network expects a MemoryBatch")
        if batch.bags.shape[1] != self.vocab_size:
            raise ShapeError(f"memory bags have width {batch.bags.shape[1]}, vocabulary is {self.vocab_size}")
        counts = np.bincount(batch.seg, minlength=batch.n)
        if batch.n < 1 or np.any(counts == 0):
            raise ShapeError("every observation needs at least one memory entry")
        bags = batch.bags.tocsr()
        emb = [ad.spmatmul(bags, p[f"E{k}"]) for k in range(self.hops + 1)]
        u = ad.gather_rows(p["query"], np.zeros(batch.n, dtype=np.intp))
        self.last_attention = []
        for k in range(self.hops):
            scores = ad.rowdot(emb[k], ad.gather_rows(u, batch.seg))
            att = ad.segment_softmax(scores, batch.seg, batch.n)
            self.last_attention.append(att.value)
            read = ad.segment_sum(ad.mul(ad.reshape(att, (-1, 1)), emb[k + 1]), batch.seg, batch.n)
            u = ad.tanh(ad.add(ad.matmul(u, p["H"]), read))
        return _heads(u, p)


MODEL_KINDS: dict[str, Callable] = {"linear": LinearModel, "mlp": MLPModel, "memnn": MemNNModel}

DEFAULT_LR = {"linear": 1e-2, "mlp": 3e-3, "memnn": 1e-3}


def build_model(config: dict, rng=None, params=None) -> Model:
    cfg = dict(config)
    kind = cfg.pop("kind")
    if kind not in MODEL_KINDS:
        raise ValueError(f"unknown model kind {kind!r}; expected one of {sorted(MODEL_KINDS)}")
    return MODEL_KINDS[kind](**cfg, rng=rng, params=params)


def sample_action(po_probs: np.ndarray, rng: np.random.Generator) -> int:
    """Draw one index from a probability row (inverse CDF on a single uniform)."""
    probs = np.asarray(po_probs, dtype=np.float64)
    if not np.all(np.isfinite(probs)) or np.any(probs < 0):
        raise NumericError(f"invalid action probabilities {probs}")
    cdf = np.cumsum(probs)
    u = rng.random() * cdf[-1]
    return int(min(np.searchsorted(cdf, u, side="right"), len(probs) - 1))


def greedy_action(probs: np.ndarray) -> int:
    return int(np.argmax(probs))  # argmax returns the lowest index on ties
