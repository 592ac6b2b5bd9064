"""Egocentric text observations and their model-facing encodings.

An observation is a list of entries, one per located item (offset from the
agent) plus one per info item (no location). From it we build

* a sparse/dense bag-of-words vector with one slot per (window cell, word)
  and per (info slot, word), for the linear and MLP policies;
* one token bag per entry with the offset appended as ``x=..``/``y=..`` words,
  for the memory network;
* bAbI-style numbered sentences (``Block at [-1,+4].``).
"""
from __future__ import annotations

import hashlib
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .engine import Action, GameState
from .neural.models import MemoryBatch
from .tasks import EDGES, GOAL_NAMES, ORDINALS

COORD_SPAN = 11  # egocentric offsets; covers 10x10 mazes and the 12x12 combat arena
ABS_SPAN = 10
INFO_SLOTS = 8
MAX_HP = 11
MAX_CD = 6


class EncodingError(ValueError):
    pass


def coord_word(axis: str, v: int) -> str:
    return f"{axis}={v:+d}" if v else f"{axis}=0"


def _default_tokens() -> list[str]:
    toks = ["block", "water", "switch", "door", "pushable", "corner", "goal", "breadcrumb", "visited"]
    toks += [f"c{i}" for i in range(1, 7)]
    toks += list(GOAL_NAMES)
    toks += list(ORDINALS)
    # instruction words; "switch" and "block" double as item words
    toks += ["go", "to", "visit", "all", "goals", "avoid", "if", "is", "else",
             "toggle", "switches", "same", "color", "at", "push"]
    toks += list(EDGES)
    toks += ["self", "ally", "enemy", "e1", "e2"]
    toks += [f"hp={v}" for v in range(MAX_HP + 1)]
    toks += [f"cd={v}" for v in range(MAX_CD + 1)]
    for axis in ("x", "y"):
        toks += [coord_word(axis, v) for v in range(-COORD_SPAN, COORD_SPAN + 1)]
    for axis in ("x", "y"):
        toks += [f"{axis}={v}" for v in range(1, ABS_SPAN)]  # x=0 is shared with the offset word
    return toks


class Vocabulary:
    def __init__(self, tokens: Sequence[str]):
        self.tokens = list(tokens)
        self.index = {t: i for i, t in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise ValueError("duplicate tokens in vocabulary")

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token) -> bool:
        return token in self.index

    def __getitem__(self, token: str) -> int:
        try:
            return self.index[token]
        except KeyError:
            raise EncodingError(f"token {token!r} is not in the vocabulary") from None

    def word(self, i: int) -> str:
        return self.tokens[i]

    def digest(self) -> str:
        return hashlib.sha256("\n".join(self.tokens).encode()).hexdigest()

    def save(self, path) -> None:
        Path(path).write_text("".join(t + "\n" for t in self.tokens), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        return cls(Path(path).read_text(encoding="utf-8").splitlines())

    @classmethod
    def default(cls) -> "Vocabulary":
        return cls(_default_tokens())


@dataclass(frozen=True)
class ObsEntry:
    loc: Optional[tuple[int, int]]
    tokens: tuple[str, ...]


@dataclass
class Observation:
    entries: list[ObsEntry] = field(default_factory=list)

    def bags(self) -> list[tuple[Optional[tuple[int, int]], Counter]]:
        return [(e.loc, Counter(e.tokens)) for e in self.entries]


def observe(state: GameState) -> Observation:
    ax, ay = state.agent
    entries = []
    for p in sorted(state.cells, key=lambda q: (q[1], q[0])):
        for it in state.cells[p]:
            entries.append(ObsEntry((p[0] - ax, p[1] - ay), it.tokens()))
    for info in state.infos:
        entries.append(ObsEntry(None, tuple(info.tokens)))
    return Observation(entries)


def window_for(width: int, height: int) -> tuple[int, int]:
    """Egocentric window that covers every offset on a ``width`` x ``height`` board."""
    return 2 * width - 1, 2 * height - 1


@dataclass(frozen=True)
class GridCaps:
    """Feature layout: window width/height (odd, centred on the agent) and info slots."""

    w: int
    h: int
    k: int = INFO_SLOTS

    def dim(self, n_words: int) -> int:
        return (self.w * self.h + self.k) * n_words


def feature_counts(obs: Observation, vocab: Vocabulary, caps) -> dict[int, float]:
    """Sparse form of the bag-of-words vector: {index: count}."""
    w, h, k = caps if isinstance(caps, tuple) else (caps.w, caps.h, caps.k)
    n = len(vocab)
    rx, ry = (w - 1) // 2, (h - 1) // 2
    out: dict[int, float] = {}
    info_slot = 0
    index = vocab.index
    for e in obs.entries:
        if e.loc is None:
            if info_slot >= k:
                raise EncodingError(f"more than {k} info items")
            base = (w * h + info_slot) * n
            info_slot += 1
        else:
            dx, dy = e.loc
            if abs(dx) > rx or abs(dy) > ry:
                raise EncodingError(f"offset {e.loc} outside the {w}x{h} window")
            base = ((dy + ry) * w + (dx + rx)) * n
        for t in e.tokens:
            try:
                j = base + index[t]
            except KeyError:
                raise EncodingError(f"token {t!r} is not in the vocabulary") from None
            out[j] = out.get(j, 0.0) + 1.0
    return out


def to_feature_vector(obs: Observation, vocab: Vocabulary, grid_caps) -> np.ndarray:
    w, h, k = grid_caps if isinstance(grid_caps, tuple) else (grid_caps.w, grid_caps.h, grid_caps.k)
    vec = np.zeros((w * h + k) * len(vocab))
    for j, c in feature_counts(obs, vocab, (w, h, k)).items():
        vec[j] = c
    return vec


def memory_tokens(obs: Observation) -> list[tuple[str, ...]]:
    out = []
    for e in obs.entries:
        if e.loc is None:
            out.append(e.tokens)
        else:
            out.append(e.tokens + (coord_word("x", e.loc[0]), coord_word("y", e.loc[1])))
    return out


def to_memory_items(obs: Observation, vocab: Vocabulary) -> list[list[int]]:
    return [[vocab[t] for t in bag] for bag in memory_tokens(obs)]


# --------------------------------------------------------------------------- bAbI text

_LOC_RE = re.compile(r"^(\w+) at \[([+-]?\d+),([+-]?\d+)\](?: with (.+))?\.$")
_INFO_RE = re.compile(r"^Info: (.+)\.$")
_ACT_RE = re.compile(r"^Action: (\S+)\.\t(\S+)$")


def _fmt(v: int) -> str:
    return f"{v:+d}" if v else "0"


def sentence(entry: ObsEntry) -> str:
    if entry.loc is None:
        return "Info: " + " ".join(entry.tokens) + "."
    head, rest = entry.tokens[0], entry.tokens[1:]
    s = f"{head.capitalize()} at [{_fmt(entry.loc[0])},{_fmt(entry.loc[1])}]"
    if rest:
        s += " with " + " ".join(rest)
    return s + "."


def parse_sentence(text: str) -> ObsEntry:
    m = _LOC_RE.match(text)
    if m:
        rest = tuple(m.group(4).split()) if m.group(4) else ()
        return ObsEntry((int(m.group(2)), int(m.group(3))), (m.group(1).lower(),) + rest)
    m = _INFO_RE.match(text)
    if m:
        return ObsEntry(None, tuple(m.group(1).split()))
    raise EncodingError(f"unparseable sentence: {text!r}")


def action_name(action) -> str:
    if isinstance(action, Action):
        return action.name.lower()
    return str(action)


def babi_serialize(episode: Iterable, start: int = 1) -> str:
    """Render (observation, action, reward) steps as one numbered story.

    The action may be None for a trailing observation (e.g. an initial state dump).
    """
    lines = []
    n = start
    for obs, action, reward in episode:
        for e in obs.entries:
            lines.append(f"{n} {sentence(e)}")
            n += 1
        if action is not None:
            lines.append(f"{n} Action: {action_name(action)}.\t{reward!r}")
            n += 1
    return "\n".join(lines) + "\n"


def babi_parse(text: str) -> list[list[tuple[Observation, Optional[str], Optional[float]]]]:
    """Split a corpus into stories of (observation, action name, reward) steps."""
    stories = []
    story, entries = None, []
    prev = 0
    for raw in text.splitlines():
        if not raw.strip():
            continue
        num, body = raw.split(" ", 1)
        num = int(num)
        if num <= prev or story is None:
            if story is not None:
                if entries:
                    story.append((Observation(entries), None, None))
                stories.append(story)
            story, entries = [], []
        prev = num
        m = _ACT_RE.match(body)
        if m:
            story.append((Observation(entries), m.group(1), float(m.group(2))))
            entries = []
        else:
            entries.append(parse_sentence(body))
    if story is not None:
        if entries:
            story.append((Observation(entries), None, None))
        stories.append(story)
    return stories


# --------------------------------------------------------------------------- batches

def feature_matrix(observations: Sequence[Observation], vocab: Vocabulary, caps) -> sp.csr_matrix:
    """Stack the bag-of-words vectors of several observations into a CSR matrix."""
    w, h, k = caps if isinstance(caps, tuple) else (caps.w, caps.h, caps.k)
    indptr, indices, data = [0], [], []
    for obs in observations:
        counts = feature_counts(obs, vocab, (w, h, k))
        cols = sorted(counts)
        indices.extend(cols)
        data.extend(counts[c] for c in cols)
        indptr.append(len(indices))
    return sp.csr_matrix((np.asarray(data, dtype=np.float64), np.asarray(indices, dtype=np.int64),
                          np.asarray(indptr, dtype=np.int64)),
                         shape=(len(observations), (w * h + k) * len(vocab)))


def memory_batch(observations: Sequence[Observation], vocab: Vocabulary) -> MemoryBatch:
    """One bag-of-words row per memory entry, tagged with its observation index."""
    indptr, indices, data, seg = [0], [], [], []
    index = vocab.index
    for i, obs in enumerate(observations):
        for bag in memory_tokens(obs):
            counts = Counter()
            for t in bag:
                if t not in index:
                    raise EncodingError(f"token {t!r} is not in the vocabulary")
                counts[index[t]] += 1
            cols = sorted(counts)
            indices.extend(cols)
            seg.append(i)
            indptr.append(indptr[-1] + len(cols))
            data.extend(counts[c] for c in cols)
    bags = sp.csr_matrix((np.asarray(data, dtype=np.float64), np.asarray(indices, dtype=np.int64), np.asarray(indptr, dtype=np.int64)),
                         shape=(len(seg), len(vocab)))
    return MemoryBatch(bags, np.asarray(seg, dtype=np.intp), len(observations))
