"""Bratteli diagrams over a parameter word: paths, supertile hierarchies, approximants."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple

import numpy as np

from . import _kernels
from .geometry import TOL, AffineContraction, snap_key


class PathError(ValueError):
    pass


class SingularPathError(PathError):
    """The path stays on supertile boundaries, so its tiling is not produced."""


class PatchError(ValueError):
    pass


# ---------------------------------------------------------------- parameter words

@dataclass(frozen=True)
class Law:
    """Distribution of the symbol sequence: a repeated word or i.i.d. Bernoulli symbols."""

    kind: str
    word: tuple[int, ...] = ()
    probs: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind in ("fixed", "periodic"):
            if not self.word or min(self.word) < 0:
                raise ValueError("a fixed or periodic law needs a non-empty word of rule indices")
            object.__setattr__(self, "word", tuple(int(s) for s in self.word))
        elif self.kind == "bernoulli":
            p = tuple(float(x) for x in self.probs)
            if not p or min(p) <= 0 or abs(sum(p) - 1) > 1e-9:
                raise ValueError(f"Bernoulli probabilities must be positive and sum to 1, got {p}")
            object.__setattr__(self, "probs", p)
        else:
            raise ValueError(f"unknown law {self.kind!r}")

    @classmethod
    def fixed(cls, word):
        return cls("fixed", tuple(word))

    @classmethod
    def periodic(cls, word):
        return cls("periodic", tuple(word))

    @classmethod
    def bernoulli(cls, probs):
        return cls("bernoulli", probs=tuple(probs))

    @classmethod
    def parse(cls, text):
        """``fixed:12``, ``periodic:1,2`` or ``bernoulli:0.5,0.5``; rule symbols are 1-based."""
        kind, _, body = text.partition(":")
        kind = kind.strip().lower()
        if not body:
            raise ValueError(f"law {text!r} needs a ':' followed by its parameters")
        if kind == "bernoulli":
            return cls.bernoulli([float(x) for x in body.split(",")])
        return cls(kind, parse_word(body))

    def text(self):
        if self.kind == "bernoulli":
            return "bernoulli:" + ",".join(repr(p) for p in self.probs)
        return f"{self.kind}:" + format_word(self.word)

    @property
    def support(self):
        if self.kind == "bernoulli":
            return tuple(range(len(self.probs)))
        return tuple(sorted(set(self.word)))

    @property
    def deterministic(self):
        return self.kind != "bernoulli"

    def sample(self, n, seed=0):
        if self.kind != "bernoulli":
            reps = -(-n // len(self.word))
            return np.array((self.word * max(reps, 1))[:n], dtype=np.int64)
        u = np.random.default_rng(seed).random(n)
        return np.minimum(np.searchsorted(np.cumsum(self.probs), u, side="right"),
                          len(self.probs) - 1).astype(np.int64)

    def check(self, n_rules):
        if max(self.support) >= n_rules:
            raise ValueError(f"law uses rule {max(self.support) + 1} but the family has {n_rules}")
        if self.kind == "bernoulli" and len(self.probs) != n_rules:
            raise ValueError(f"{len(self.probs)} probabilities for {n_rules} rules")


def parse_word(text):
    """``"112"`` or ``"1,1,2"`` (1-based) -> ``(0, 0, 1)``."""
    text = text.strip()
    parts = text.split(",") if "," in text else list(text)
    try:
        word = tuple(int(p) - 1 for p in parts if p.strip())
    except ValueError:
        raise ValueError(f"bad word {text!r}") from None
    if not word or min(word) < 0:
        raise ValueError(f"bad word {text!r}: symbols start at 1")
    return word


def format_word(word):
    syms = [str(s + 1) for s in word]
    return ("," if any(len(s) > 1 for s in syms) else "").join(syms)


@dataclass(frozen=True)
class ParameterSequence:
    """Positive half of a symbol sequence, given by an explicit window then the law.

    ``offset`` implements the shift: ``shift(k)`` drops the first ``k`` symbols
    and appends them to the negative side.
    """

    law: Law
    seed: int = 0
    window: tuple[int, ...] = ()
    negative: tuple[int, ...] = ()
    offset: int = 0

    def prefix(self, n):
        total = self.offset + n
        w = list(self.window[:total])
        if len(w) < total:
            tail = self.law.sample(total, self.seed)
            w += tail[len(w):].tolist()
        return np.array(w[self.offset:total], dtype=np.int64)

    def shift(self, k=1):
        neg = self.negative + tuple(int(s) for s in self.prefix(k))
        return ParameterSequence(self.law, self.seed, self.window, neg, self.offset + k)


# ---------------------------------------------------------------- hierarchy

class Hierarchy:
    """Canonical supertiles of every (level, type) for a word ``x_1..x_K``.

    The level-``i`` supertile of type ``j`` has support ``A_j / theta_(i)``; its
    children are level-``i-1`` supertiles translated by ``b_e / theta_(i)``.
    Level-0 supertiles are the prototiles, and all tiles are at unit scale.
    """

    def __init__(self, family, word, collared=None):
        self.family = family
        self.word = np.asarray(word, dtype=np.int64).copy()
        self.word.setflags(write=False)
        if len(self.word) and (self.word.min() < 0 or self.word.max() >= family.N):
            raise PathError(f"word symbol out of range for a family with {family.N} rules")
        self.collared = collared
        self._tables = {}
        self._counts = {}

    @property
    def depth(self):
        return len(self.word)

    @cached_property
    def inv_scale(self):
        """``1 / theta_(i)`` for ``i = 0..K``."""
        th = self.family.thetas[self.word]
        return np.concatenate([[1.0], np.cumprod(1.0 / th)])

    def child_table(self, level):
        """CSR children of level-``level`` supertiles: ``(ptr, types, offsets, class_child)``."""
        if not 1 <= level <= self.depth:
            raise PathError(f"level {level} outside 1..{self.depth}")
        hit = self._tables.get(level)
        if hit is not None:
            return hit
        r = int(self.word[level - 1])
        ptr, src, off, _ = self.family.branch_tables
        n = ptr[r, -1]
        cc = self.collared.class_child(r) if self.collared is not None else np.full((1, 1), -1, dtype=np.int64)
        table = (np.ascontiguousarray(ptr[r]), np.ascontiguousarray(src[r, :n]),
                 np.ascontiguousarray(off[r, :n] * self.inv_scale[level]), np.ascontiguousarray(cc))
        self._tables[level] = table
        return table

    def count_matrix(self, level, collared=False):
        """``C[s, v]`` = number of level-0 tiles of kind ``s`` inside the level-``level`` supertile ``v``.

        Kinds are prototiles, or collared classes when ``collared`` is set.
        """
        key = (level, collared)
        hit = self._counts.get(key)
        if hit is not None:
            return hit
        if collared:
            mats = self.collared.matrices
            size = self.collared.size
        else:
            mats = self.family.matrices
            size = self.family.M
        if level == 0:
            out = np.eye(size, dtype=np.int64)
        else:
            out = int_matmul(self.count_matrix(level - 1, collared), mats[self.word[level - 1]])
        self._counts[key] = out
        return out

    def leaf_counts(self, level):
        return self.count_matrix(level).sum(axis=0)

    def support(self, level, vtype):
        return self.family.prototiles[vtype].scaled(self.inv_scale[level])

    def tree(self, level=None, vtype=0, shift=None, cls=-1):
        level = self.depth if level is None else level
        shift = np.zeros(self.family.dim) if shift is None else np.asarray(shift, dtype=float)
        return SupertileTree(self, level, int(vtype), shift, int(cls))

    def expand(self, level, types, trans, classes):
        """Children of level-``level`` nodes as arrays (see ``_kernels.expand``)."""
        ptr, ctype, coff, cc = self.child_table(level)
        return _kernels.expand(np.ascontiguousarray(types, dtype=np.int64),
                               np.ascontiguousarray(trans, dtype=np.float64),
                               np.ascontiguousarray(classes, dtype=np.int64), ptr, ctype, coff, cc)


def int_matmul(a, b):
    """Exact integer product, switching to Python ints before int64 could overflow."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.dtype != object and b.dtype != object:
        bound = np.abs(a).astype(float) @ np.abs(b).astype(float)
        if bound.size == 0 or bound.max() < 2.0 ** 62:
            return a.astype(np.int64) @ b.astype(np.int64)
    return a.astype(object) @ b.astype(object)


@dataclass(frozen=True)
class SupertileTree:
    """A level-``level`` supertile of type ``vtype`` whose canonical copy is moved by ``shift``."""

    hierarchy: Hierarchy
    level: int
    vtype: int
    shift: np.ndarray
    cls: int = -1

    @property
    def family(self):
        return self.hierarchy.family

    @property
    def support(self):
        return self.hierarchy.support(self.level, self.vtype).translated(self.shift)

    @property
    def volume(self):
        return self.family.volumes[self.vtype] * self.hierarchy.inv_scale[self.level] ** self.family.dim

    @property
    def leaf_count(self):
        return int(self.hierarchy.leaf_counts(self.level)[self.vtype])

    @property
    def global_scale(self):
        return float(self.hierarchy.inv_scale[self.level])

    def nodes(self, level=0):
        """``(types, translations, classes)`` of the level-``level`` pieces of this supertile."""
        types = np.array([self.vtype], dtype=np.int64)
        trans = self.shift[None, :].astype(float)
        classes = np.array([self.cls], dtype=np.int64)
        for lev in range(self.level, level, -1):
            types, trans, classes = self.hierarchy.expand(lev, types, trans, classes)
        return types, trans, classes

    def leaves(self):
        return self.nodes(0)

    def children(self):
        if self.level == 0:
            return []
        t, x, c = self.nodes(self.level - 1)
        return [SupertileTree(self.hierarchy, self.level - 1, int(ti), xi, int(ci)) for ti, xi, ci in zip(t, x, c)]

    def tiles(self):
        from .geometry import PlacedTile
        t, x, c = self.leaves()
        return [PlacedTile(int(ti), xi, None if ci < 0 else int(ci)) for ti, xi, ci in zip(t, x, c)]

    def translated(self, t):
        return SupertileTree(self.hierarchy, self.level, self.vtype, self.shift + np.asarray(t, dtype=float), self.cls)

    def patch(self, levels=1):
        return PatchWindow.from_tree(self, levels)


# ---------------------------------------------------------------- paths

class Edge(NamedTuple):
    level: int
    source: int
    target: int
    index: int  # position among the branches with the same source and target


@dataclass(frozen=True)
class BratteliPath:
    """Finite path ``e_1..e_k``; ``branches[l]`` indexes ``rules[word[l]].branches``."""

    family: object
    word: np.ndarray
    branches: tuple[int, ...]
    start: int | None = None

    def __post_init__(self):
        word = np.asarray(self.word, dtype=np.int64)
        object.__setattr__(self, "word", word)
        object.__setattr__(self, "branches", tuple(int(b) for b in self.branches))
        if len(self.branches) > len(word):
            raise PathError(f"path of length {len(self.branches)} needs {len(self.branches)} symbols, got {len(word)}")
        prev = self.start
        for lev, k in enumerate(self.branches):
            rule = self.family.rules[word[lev]]
            if not 0 <= k < len(rule.branches):
                raise PathError(f"level {lev + 1}: branch {k} not in rule {rule.name!r}")
            b = rule.branches[k]
            if prev is not None and b.source != prev:
                raise PathError(f"level {lev + 1}: edge starts at {b.source} but previous edge ends at {prev}")
            prev = b.target
        if not self.branches and self.start is None:
            raise PathError("an empty path needs a start vertex")
        if self.branches and self.start is None:
            object.__setattr__(self, "start", self.family.rules[word[0]].branches[self.branches[0]].source)

    def __len__(self):
        return len(self.branches)

    def _branch(self, lev):
        return self.family.rules[self.word[lev]].branches[self.branches[lev]]

    @property
    def edges(self):
        out = []
        for lev, k in enumerate(self.branches):
            rule = self.family.rules[self.word[lev]]
            b = rule.branches[k]
            same = [j for j in rule.into(b.target) if rule.branches[j].source == b.source]
            out.append(Edge(lev + 1, b.source, b.target, same.index(k)))
        return out

    @property
    def range(self):
        return self._branch(len(self) - 1).target if self.branches else self.start

    def vertex(self, level):
        """Vertex of the diagram reached after ``level`` edges."""
        return self.start if level == 0 else self._branch(level - 1).target

    def prefix(self, k):
        return BratteliPath(self.family, self.word[:max(k, 0)], self.branches[:k], self.start)

    def anchor_offset(self, hierarchy=None):
        """Position of this path's level-0 tile inside the canonical level-``k`` supertile."""
        inv = Hierarchy(self.family, self.word[:len(self)]).inv_scale if hierarchy is None else hierarchy.inv_scale
        c = np.zeros(self.family.dim)
        for lev in range(len(self)):
            c += self._branch(lev).offset * inv[lev + 1]
        return c


def compose_path_map(path):
    """``f_{e_k} o ... o f_{e_1}``."""
    fmap = AffineContraction.identity(path.family.dim)
    for lev, k in enumerate(path.branches):
        fmap = fmap.then(path.family.rules[path.word[lev]].branch_map(k))
    return fmap


def approximant(path, hierarchy=None):
    """k-th approximant: the blown-up supertile with the path's tile anchored at the origin."""
    if hierarchy is None:
        hierarchy = Hierarchy(path.family, path.word[:len(path)])
    elif len(hierarchy.word) < len(path) or np.any(hierarchy.word[:len(path)] != path.word[:len(path)]):
        raise PathError("hierarchy word does not match the path's parameters")
    return hierarchy.tree(len(path), path.range, -path.anchor_offset(hierarchy))


def is_boundary_path(path, level=None, margin=TOL):
    """Does the image of the level-0 tile touch the boundary of the level-``level`` container?"""
    level = len(path) if level is None else level
    if level > len(path):
        raise PathError(f"level {level} exceeds path length {len(path)}")
    sub = path.prefix(level)
    img = compose_path_map(sub)(path.family.prototiles[path.start].vertices)
    container = path.family.prototiles[sub.range]
    return bool(container.boundary_distance(img).min() <= margin)


def translation_between(p1, p2, level=None):
    """``tau`` with ``P_L(p1) = P_L(p2) + tau`` for two tail-equivalent paths of length ``L``."""
    if p1.family is not p2.family:
        raise PathError("paths belong to different families")
    n = len(p1)
    if len(p2) != n or np.any(p1.word[:n] != p2.word[:n]):
        raise PathError("paths need the same length and the same parameters")
    agree = n
    while agree > 0 and p1.branches[agree - 1] == p2.branches[agree - 1]:
        agree -= 1
    if p1.vertex(agree) != p2.vertex(agree):
        raise PathError("paths are not tail-equivalent")
    if level is not None and level < agree:
        raise PathError(f"paths differ at level {agree}, after the stated agreement level {level}")
    h = Hierarchy(p1.family, p1.word[:n])
    return p2.anchor_offset(h) - p1.anchor_offset(h)


@dataclass
class InfinitePath:
    """A finite prefix extended level by level by a deterministic policy.

    ``leftmost`` takes the first declared branch leaving the current vertex,
    ``cyclic`` rotates through them with the level, ``random`` draws one
    uniformly from a generator seeded by ``(seed, level)``.
    """

    family: object
    sequence: ParameterSequence
    prefix_branches: tuple[int, ...] = ()
    start: int | None = None
    policy: str = "leftmost"
    seed: int = 0
    _cache: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        if self.policy not in ("leftmost", "cyclic", "random"):
            raise ValueError(f"unknown extension policy {self.policy!r}")
        if self.start is None and not self.prefix_branches:
            if self.policy == "random":
                self.start = int(np.random.default_rng([self.seed, 0]).integers(self.family.M))
            else:
                self.start = 0
        self._cache = list(self.prefix_branches)

    def path(self, k):
        word = self.sequence.prefix(k)
        while len(self._cache) < k:
            lev = len(self._cache)
            rule = self.family.rules[word[lev]]
            cur = (BratteliPath(self.family, word[:lev], self._cache, self.start).range)
            opts = rule.out_of(cur)
            if not opts:
                raise PathError(f"vertex {cur} has no outgoing edge under rule {rule.name!r}")
            if self.policy == "leftmost":
                pick = opts[0]
            elif self.policy == "cyclic":
                pick = opts[lev % len(opts)]
            else:
                pick = opts[int(np.random.default_rng([self.seed, lev + 1]).integers(len(opts)))]
            self._cache.append(pick)
        return BratteliPath(self.family, word[:k], tuple(self._cache[:k]), self.start)

    def approximant(self, k, hierarchy=None):
        return approximant(self.path(k), hierarchy)

    def covering_depth(self, radius, k_max=60):
        """Smallest ``k`` whose approximant contains the ball of ``radius`` around the origin."""
        for k in range(k_max + 1):
            tree = self.approximant(k)
            if tree.support.boundary_distance(np.zeros((1, self.family.dim)))[0] >= radius:
                return k
        raise SingularPathError(
            f"the origin stays within {radius} of the approximant boundary up to level {k_max}; "
            "this path looks singular and its tiling is not generated")

    def tiling_patch(self, radius, k_max=60, levels=1):
        """All tiles of the path's tiling meeting the ball of ``radius`` around the origin."""
        k = self.covering_depth(radius, k_max)
        return self.approximant(k).patch(levels)


def nested_expand(ipath, k_max):
    """Approximants ``P_0 .. P_kmax`` of an infinite path; each contains the previous one."""
    if k_max < 0:
        raise ValueError("k_max must be non-negative")
    word = ipath.sequence.prefix(k_max)
    h = Hierarchy(ipath.family, word)
    return [approximant(ipath.path(k), h) for k in range(k_max + 1)]


# ---------------------------------------------------------------- patches

@dataclass(frozen=True)
class PatchWindow:
    """Unit-scale tiles plus the grouping into supertiles of levels ``1..L``.

    ``levels[i]`` holds ``(types, translations, parents, local_index)`` of the
    level-``i`` pieces; ``parents`` indexes ``levels[i + 1]`` (``-1`` at the top).
    """

    family: object
    word: np.ndarray
    levels: tuple
    classes: np.ndarray | None = None

    @classmethod
    def from_tree(cls, tree, levels=1):
        h = tree.hierarchy
        levels = min(levels, tree.level)
        types = np.array([tree.vtype], dtype=np.int64)
        trans = tree.shift[None, :].astype(float)
        classes = np.array([tree.cls], dtype=np.int64)
        stack = []
        parents = np.full(1, -1, dtype=np.int64)
        local = np.zeros(1, dtype=np.int64)
        for lev in range(tree.level, 0, -1):
            if lev <= levels:
                stack.append((types, trans, parents, local))
            ptr = h.child_table(lev)[0]
            counts = ptr[types + 1] - ptr[types]
            parents = np.repeat(np.arange(len(types)), counts)
            local = np.arange(int(counts.sum())) - np.repeat(np.cumsum(counts) - counts, counts)
            types, trans, classes = h.expand(lev, types, trans, classes)
        stack.append((types, trans, parents, local))
        stack.reverse()
        word = h.word[:tree.level]
        return cls(tree.family, word, tuple(stack), classes if (classes >= 0).any() else None)

    @property
    def types(self):
        return self.levels[0][0]

    @property
    def translations(self):
        return self.levels[0][1]

    def __len__(self):
        return len(self.types)

    def translate(self, t):
        t = np.asarray(t, dtype=float)
        levels = tuple((ty, x + t, p, loc) for (ty, x, p, loc) in self.levels)
        return PatchWindow(self.family, self.word, levels, self.classes)

    def renormalize(self):
        """Level-1 supertiles shrunk by ``theta_{x_1}``: a patch for the shifted parameters."""
        if len(self.levels) < 2:
            raise PatchError("patch has no level-1 grouping to renormalize")
        r = int(self.word[0])
        theta = self.family.thetas[r]
        ptr, src, off, _ = self.family.branch_tables
        t0, x0, par, loc = self.levels[0]
        t1, x1 = self.levels[1][0], self.levels[1][1]
        slot = ptr[r, t1[par]] + loc
        if np.any(src[r, slot] != t0):
            raise PatchError("tile types do not match the level-1 grouping")
        # each tile gives its supertile's placement; all members must agree
        inv1 = 1.0 / theta
        est = x0 - off[r, slot] * inv1
        sup = np.zeros_like(x1)
        sup[par] = est
        if np.abs(est - sup[par]).max(initial=0.0) > 1e-6:
            raise PatchError("tiles of one supertile disagree on its placement")
        levels = [(t1, sup * theta, self.levels[1][2], self.levels[1][3])]
        for ty, x, p, loc_ in self.levels[2:]:
            levels.append((ty, x * theta, p, loc_))
        return PatchWindow(self.family, self.word[1:], tuple(levels), None)

    def tile_set(self, grid=1e-6):
        return {(int(t), snap_key(x, grid)) for t, x in zip(self.types, self.translations)}

    def shapes(self):
        return [self.family.prototiles[t].translated(x) for t, x in zip(self.types, self.translations)]

    def jsonl_lines(self):
        """One JSON object per tile, sorted by snapped translation; indices are 1-based."""
        cls_ = self.classes
        order = sorted(range(len(self)), key=lambda i: (snap_key(self.translations[i]), int(self.types[i])))
        out = []
        for i in order:
            rec = {"proto": int(self.types[i]) + 1,
                   "collared": None if cls_ is None or cls_[i] < 0 else int(cls_[i]) + 1,
                   "x": [round(float(v), 9) + 0.0 for v in self.translations[i]]}
            out.append(json.dumps(rec, separators=(",", ":")))
        return out


# ---------------------------------------------------------------- path counts

@dataclass(frozen=True)
class GrowthRates:
    lam_minus: float
    lam_plus: float
    sequence: tuple  # (k, min_v log|E_v|/k, max_v log|E_v|/k)

    def gap_condition(self, dim):
        return self.lam_minus > 0 and self.lam_plus - self.lam_minus < self.lam_plus / dim


class DiagramError(ValueError):
    pass


def path_counts(family, word):
    """``|E_v|`` at levels ``0..K`` as exact integers (list of object arrays)."""
    c = np.ones(family.M, dtype=object)
    out = [c]
    for r in word:
        c = family.matrices[r].T.astype(object) @ c
        out.append(c)
    return out


def growth_rates(family, word, depth=None):
    word = np.asarray(word, dtype=np.int64)
    depth = len(word) if depth is None else depth
    if depth < 2:
        raise ValueError("depth must be at least 2")
    if len(word) < depth:
        raise ValueError(f"word of length {len(word)} is shorter than depth {depth}")
    seq = []
    for k, c in enumerate(path_counts(family, word[:depth])):
        if k == 0:
            continue
        if min(c) <= 0:
            raise DiagramError(f"vertex with no incoming paths at level {k}")
        logs = [math.log(int(v)) / k for v in c]
        seq.append((k, min(logs), max(logs)))
    return GrowthRates(seq[-1][1], seq[-1][2], tuple(seq))
