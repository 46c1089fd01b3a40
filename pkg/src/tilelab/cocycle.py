"""Collared tiles, the induced cochain matrices and their Lyapunov spectrum."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import _kernels
from ._parallel import pmap
from .bratteli import Hierarchy
from .geometry import SNAP, TOL, intersection_dimension, snap

TIE_TOL = 1e-9


class CollarError(ValueError):
    pass


class PeriodicWarning(UserWarning):
    pass


# ---------------------------------------------------------------- neighbours

def _is_axis_box(shape):
    if shape.dim == 1:
        return True
    v = shape.vertices
    if len(v) != 4:
        return False
    e = np.roll(v, -1, axis=0) - v
    return bool(np.all(np.abs(e).min(axis=1) <= 1e-12))


def touching_pairs(family, types, trans, tol=TOL):
    """Index pairs ``(i, j)``, ``i < j``, of placed tiles that intersect (touching counts)."""
    types = np.asarray(types)
    trans = np.asarray(trans, dtype=float)
    if len(types) < 2:
        return np.zeros((0, 2), dtype=np.int64)
    reach = max(float(np.sqrt((p.vertices ** 2).sum(axis=1)).max()) for p in family.prototiles)
    pairs = cKDTree(trans).query_pairs(2 * reach + 1e-6, output_type="ndarray")
    if len(pairs) == 0:
        return pairs.astype(np.int64)
    lo, hi = family.bboxes
    a, b = pairs[:, 0], pairs[:, 1]
    gap_lo = np.maximum(lo[types[a]] + trans[a], lo[types[b]] + trans[b])
    gap_hi = np.minimum(hi[types[a]] + trans[a], hi[types[b]] + trans[b])
    keep = np.all(gap_hi - gap_lo >= -tol, axis=1)
    pairs = pairs[keep]
    if all(_is_axis_box(p) for p in family.prototiles):
        return pairs
    cache = {}
    ok = np.zeros(len(pairs), dtype=bool)
    for n, (i, j) in enumerate(pairs):
        key = (int(types[i]), int(types[j]), tuple(snap(trans[j] - trans[i])))
        hit = cache.get(key)
        if hit is None:
            sa = family.prototiles[types[i]]
            sb = family.prototiles[types[j]].translated(trans[j] - trans[i])
            hit = cache[key] = intersection_dimension(sa, sb, tol) >= 0
        ok[n] = hit
    return pairs[ok]


def collar_keys(family, types, trans, which, with_offsets=False):
    """Class keys ``(center, ((neighbour, offset), ...))`` of the tiles listed in ``which``.

    Offsets in keys are integers on the snapping grid.  With ``with_offsets``
    each key comes paired with the unsnapped ``[(neighbour, offset), ...]``.
    """
    types = np.asarray(types)
    trans = np.asarray(trans, dtype=float)
    pairs = touching_pairs(family, types, trans)
    src = np.concatenate([pairs[:, 0], pairs[:, 1]]).astype(np.int64)
    dst = np.concatenate([pairs[:, 1], pairs[:, 0]]).astype(np.int64)
    rel = trans[dst] - trans[src]
    offs = snap(rel)
    order = np.lexsort(tuple(offs.T[::-1]) + (types[dst], src))
    src, dst, rel, offs = src[order], dst[order], rel[order], offs[order]
    start = np.searchsorted(src, np.arange(len(types) + 1))
    ntypes = types[dst].tolist()
    noffs = [tuple(o) for o in offs.tolist()]
    out = []
    for i in which:
        a, b = start[i], start[i + 1]
        ring = tuple(zip(ntypes[a:b], noffs[a:b]))
        key = (int(types[i]), ring)
        if with_offsets:
            out.append((key, [(t, rel[k]) for k, t in zip(range(a, b), ntypes[a:b])]))
        else:
            out.append(key)
    return out


def _interior_mask(family, types, trans, support, tol=TOL):
    verts, nverts, *_ = family.padded_geometry
    pts = verts[types] + trans[:, None, :]
    d = support.boundary_distance(pts.reshape(-1, family.dim)).reshape(len(types), -1)
    return d.min(axis=1) > tol


# ---------------------------------------------------------------- collared classes

@dataclass
class CollaredTileSet:
    """Translation classes of tiles with their touching neighbours, closed under substitution."""

    family: object
    rules: tuple[int, ...]
    keys: list
    children: dict = field(repr=False)  # rule -> (C, max_children) child classes, -1 padded
    offsets: dict = field(repr=False, default_factory=dict)  # key -> unsnapped neighbour ring

    @property
    def size(self):
        return len(self.keys)

    def __len__(self):
        return len(self.keys)

    def index(self, key):
        return self._index[key]

    def __post_init__(self):
        self._index = {k: i for i, k in enumerate(self.keys)}
        self.center_types = np.array([k[0] for k in self.keys], dtype=np.int64)
        n = self.family.N
        mats = np.zeros((n, self.size, self.size), dtype=np.int64)
        for r, table in self.children.items():
            for i in range(self.size):
                for j in table[i]:
                    if j >= 0:
                        mats[r, j, i] += 1
        self.matrices = mats

    @property
    def periodic(self):
        return self.size == 1

    def class_child(self, rule):
        if rule not in self.children:
            raise CollarError(f"collared classes were not closed under rule {rule + 1}")
        return self.children[rule]

    def neighbours(self, cls):
        """Neighbour types and offsets relative to the centre tile."""
        key = self.keys[cls]
        if key in self.offsets:
            return self.offsets[key]
        return [(t, np.asarray(off, dtype=float) * SNAP) for t, off in key[1]]

    def quotient(self):
        """``Q[type, class] = 1`` when the class is centred on that prototile."""
        q = np.zeros((self.family.M, self.size), dtype=np.int64)
        q[self.center_types, np.arange(self.size)] = 1
        return q

    def lift(self, beta_types):
        """Weights on prototiles pulled back to weights on classes."""
        return np.asarray(beta_types)[self.center_types]

    def first_class(self, vtype):
        hits = np.nonzero(self.center_types == vtype)[0]
        if len(hits) == 0:
            raise CollarError(f"no collared class is centred on prototile {vtype}")
        return int(hits[0])

    def describe(self, cls):
        ids = self.family.prototile_ids
        c, ring = self.keys[cls]
        parts = [f"{ids[t]}@{tuple(round(v * SNAP, 6) for v in off)}" for t, off in ring]
        return f"{ids[c]} | " + " ".join(parts)


def _substitute_class(family, rule, center, ring):
    """Child tiles of a collared tile's patch after one substitution, centre children first."""
    theta = family.rules[rule].theta
    ptr, src, off, _ = family.branch_tables
    types = [center] + [t for t, _ in ring]
    pos = [np.zeros(family.dim)] + [np.asarray(o, dtype=float) for _, o in ring]
    out_t, out_x = [], []
    n_center = 0
    for k, (t, p) in enumerate(zip(types, pos)):
        sl = slice(ptr[rule, t], ptr[rule, t + 1])
        out_t.append(src[rule, sl])
        out_x.append(p / theta + off[rule, sl] / theta)
        if k == 0:
            n_center = sl.stop - sl.start
    return np.concatenate(out_t), np.concatenate(out_x), n_center


def collared_tiles(family, rules=None, seed_depth=None, min_seed_tiles=400, max_classes=5000):
    """Collared classes seen in deep supertiles, closed under every rule in ``rules``.

    ``rules`` defaults to all rules; pass a law's support to restrict.
    """
    rules = tuple(range(family.N)) if rules is None else tuple(sorted(set(int(r) for r in rules)))
    if not rules:
        raise ValueError("need at least one rule")
    found = {}
    for r in rules:
        depth = 0
        h = None
        while True:
            depth += 1
            h = Hierarchy(family, [r] * depth)
            if seed_depth is not None and depth >= seed_depth:
                break
            if seed_depth is None and h.leaf_counts(depth).min() >= min_seed_tiles:
                break
            if depth > 60:
                raise CollarError("rule does not grow supertiles")
        for v in range(family.M):
            tree = h.tree(depth, v)
            t, x, _ = tree.leaves()
            inner = np.nonzero(_interior_mask(family, t, x, tree.support))[0]
            for key, ring in collar_keys(family, t, x, inner, with_offsets=True):
                found.setdefault(key, ring)
    if not found:
        raise CollarError("no interior tiles in the seed patches; increase the seed depth")

    # closure under substitution, remembering the child classes of each centre
    memo = {}
    todo = sorted(found)
    while todo:
        nxt = []
        for key in todo:
            for r in rules:
                t, x, nc = _substitute_class(family, r, key[0], found[key])
                kids = collar_keys(family, t, x, range(nc), with_offsets=True)
                memo[(r, key)] = [k for k, _ in kids]
                for kid, ring in kids:
                    if kid not in found:
                        found[kid] = ring
                        nxt.append(kid)
        if len(found) > max_classes:
            raise CollarError(f"collared classes did not stabilize within the cap of {max_classes}")
        todo = sorted(nxt)

    keys = sorted(found)
    index = {k: i for i, k in enumerate(keys)}
    ptr = family.branch_tables[0]
    children = {}
    for r in rules:
        width = int(max(ptr[r, 1:] - ptr[r, :-1]))
        table = np.full((len(keys), max(width, 1)), -1, dtype=np.int64)
        for i, key in enumerate(keys):
            kids = memo[(r, key)]
            table[i, :len(kids)] = [index[k] for k in kids]
        children[r] = table
    cset = CollaredTileSet(family, rules, keys, children, found)
    if cset.periodic:
        warnings.warn(f"{family.name or 'family'} has a single collared class: the tiling is periodic",
                      PeriodicWarning, stacklevel=2)
    return cset


def collared_matrix(rule, collared):
    """``[j, i]`` = number of class-``j`` children when a class-``i`` tile is substituted."""
    collared.class_child(rule)
    return collared.matrices[rule].copy()


def collar_supertile(collared, hierarchy, level, cls):
    """Histogram of leaf classes inside a level-``level`` supertile of class ``cls``, found geometrically.

    The centre supertile and its neighbouring supertiles are flattened and every
    centre leaf is collared from the flattened patch, without using the
    substitution memo.
    """
    family = collared.family
    center = collared.keys[cls][0]
    scale = hierarchy.inv_scale[level]
    parts = [(center, np.zeros(family.dim))] + [(t, off * scale) for t, off in collared.neighbours(cls)]
    ts, xs = [], []
    n_center = 0
    for k, (t, off) in enumerate(parts):
        lt, lx, _ = hierarchy.tree(level, t, off).leaves()
        ts.append(lt)
        xs.append(lx)
        if k == 0:
            n_center = len(lt)
    types, trans = np.concatenate(ts), np.concatenate(xs)
    # only neighbour tiles close to the centre supertile can touch its leaves
    lo, hi = family.bboxes
    reach = float((hi - lo).max()) + 1e-6
    c_lo = (lo[types[:n_center]] + trans[:n_center]).min(axis=0) - reach
    c_hi = (hi[types[:n_center]] + trans[:n_center]).max(axis=0) + reach
    near = np.all((trans >= c_lo) & (trans <= c_hi), axis=1)
    near[:n_center] = True
    types, trans = types[near], trans[near]
    hist = np.zeros(collared.size, dtype=np.int64)
    for key in collar_keys(family, types, trans, range(n_center)):
        try:
            hist[collared.index(key)] += 1
        except KeyError:
            raise CollarError(f"geometric collaring found an unknown class {key}") from None
    return hist


# ---------------------------------------------------------------- cocycle

def _cocycle_mats(family, collared):
    return family.matrices if collared is None else collared.matrices


def cocycle_apply(beta, word, family, collared=None):
    """``M(x_n)^T ... M(x_1)^T beta``: entry ``t`` is the beta-integral over a level-n supertile of kind ``t``."""
    mats = _cocycle_mats(family, collared)
    beta = np.asarray(beta)
    if beta.shape != (mats.shape[1],):
        raise ValueError(f"beta has length {beta.shape[0] if beta.ndim else 0}, expected {mats.shape[1]}")
    exact = beta.dtype.kind in "iu" or beta.dtype == object
    out = beta.astype(object) if exact else beta.astype(float)
    for r in word:
        if not 0 <= r < family.N:
            raise ValueError(f"word symbol {r + 1} out of range 1..{family.N}")
        if collared is not None:
            collared.class_child(int(r))
        m = mats[r].T
        out = m.astype(object) @ out if exact else m @ out
    if exact and all(abs(int(v)) < 2 ** 62 for v in out):
        return out.astype(np.int64)
    return out


def class_norm(beta):
    beta = np.asarray(beta, dtype=float)
    return float(np.abs(beta).max()) if beta.size else 0.0


def supertile_integrals(hierarchy, level, beta, collared=None):
    """Beta summed over the leaves of every level-``level`` canonical supertile, by flattening."""
    beta = np.asarray(beta)
    if collared is None:
        out = []
        for v in range(hierarchy.family.M):
            t, _, _ = hierarchy.tree(level, v).leaves()
            out.append(beta[t].sum())
        return np.array(out)
    return np.array([collar_supertile(collared, hierarchy, level, c) @ beta for c in range(collared.size)])


# ---------------------------------------------------------------- Lyapunov spectrum

@dataclass
class LyapunovReport:
    exponents: np.ndarray
    stderr: np.ndarray
    dim: int
    n: int
    samples: int
    seed: int
    burn_in: int
    law: str = ""
    notes: list = field(default_factory=list)

    @property
    def normalized(self):
        lam1 = self.exponents[0]
        nu = self.dim * self.exponents / lam1
        nu[0] = self.dim
        return nu

    @property
    def threshold(self):
        return (self.dim - 1) * self.exponents[0] / self.dim

    @property
    def mask(self):
        """Rapidly expanding directions: ``lambda_i >= (d-1) lambda_1 / d`` (ties count)."""
        return self.exponents >= self.threshold - TIE_TOL * max(1.0, abs(self.threshold))

    @property
    def ties(self):
        return np.abs(self.exponents - self.threshold) <= TIE_TOL * max(1.0, abs(self.threshold))

    def to_dict(self):
        clean = lambda a: [None if not math.isfinite(v) else float(v) for v in a]  # noqa: E731
        return {"exponents": clean(self.exponents), "normalized": clean(self.normalized),
                "mask": [bool(m) for m in self.mask], "threshold_ties": [bool(t) for t in self.ties],
                "stderr": clean(self.stderr), "n": self.n, "samples": self.samples, "seed": self.seed,
                "burn_in": self.burn_in, "law": self.law, "notes": list(self.notes)}


def default_burn_in(n):
    return min(64, n // 2)


def lyapunov_spectrum(family, law, n, samples=1, seed=0, collared=None, burn_in=None, threads=None):
    """QR-accumulated exponents of ``M(x_n)^T ... M(x_1)^T``, averaged over sampled words."""
    if n < 2:
        raise ValueError("word length n must be at least 2")
    law.check(family.N)
    burn = default_burn_in(n) if burn_in is None else burn_in
    if not 0 <= burn < n:
        raise ValueError(f"burn-in {burn} must lie in [0, {n})")
    mats_int = _cocycle_mats(family, collared)
    if collared is not None:
        for r in law.support:
            collared.class_child(r)
    mats = np.ascontiguousarray(np.transpose(mats_int, (0, 2, 1)).astype(np.float64))
    notes = []
    for r in law.support:
        zero = np.nonzero(~mats[r].any(axis=0))[0]
        if len(zero):
            notes.append(f"rule {r + 1}: cocycle matrix has zero column(s) {[int(z) + 1 for z in zero]}")

    def one(i):
        word = law.sample(n, seed + i)
        with np.errstate(divide="ignore"):
            acc = _kernels.qr_lyapunov(mats, word, burn)
        return np.sort(acc / (n - burn))[::-1]

    runs = np.array(pmap(one, range(samples), threads))
    mean = runs.mean(axis=0)
    with np.errstate(invalid="ignore"):
        se = runs.std(axis=0, ddof=1) / math.sqrt(samples) if samples > 1 else np.zeros_like(mean)
    se = np.where(np.isfinite(se), se, 0.0)
    return LyapunovReport(mean, se, family.dim, n, samples, seed, burn, law.text(), notes)


def lambda1_consistency(family, law, n, samples=1, seed=0, collared=None, burn_in=None):
    """Compare ``lambda_1`` with ``d`` times the mean of ``-log theta`` along the same words."""
    rep = lyapunov_spectrum(family, law, n, samples, seed, collared, burn_in)
    burn = rep.burn_in
    logs = -np.log(family.thetas)
    geo = np.mean([family.dim * logs[law.sample(n, seed + i)[burn:]].mean() for i in range(samples)])
    return {"lambda1": float(rep.exponents[0]), "geometric": float(geo),
            "difference": float(abs(rep.exponents[0] - geo)), "n": n, "samples": samples, "seed": seed}


# ---------------------------------------------------------------- rank stabilization

@dataclass
class StabilizedSubspace:
    rank: int
    basis: np.ndarray  # rows span the complement of the stabilized kernel
    ranks: list
    steps: int


def _exact_rank(mat):
    from sympy import ZZ
    from sympy.polys.matrices import DomainMatrix

    rows = [[ZZ(int(v)) for v in row] for row in mat]
    return DomainMatrix(rows, mat.shape, ZZ).convert_to(ZZ.get_field()).rank()


def stabilized_subspace(family, word, collared=None, patience=3):
    """Ranks of ``M(x_k)^T ... M(x_1)^T`` until they stop dropping for ``patience`` steps."""
    import sympy

    mats = _cocycle_mats(family, collared)
    size = mats.shape[1]
    prod = np.eye(size, dtype=object)
    ranks = [size]
    still = 0
    for k, r in enumerate(word, start=1):
        prod = mats[r].T.astype(object) @ prod
        rk = _exact_rank(prod)
        still = still + 1 if rk == ranks[-1] else 0
        ranks.append(rk)
        if still >= patience:
            rows = sympy.Matrix(prod.tolist()).rowspace()
            basis = np.array([[float(v) for v in row] for row in rows]).reshape(len(rows), size)
            basis /= np.linalg.norm(basis, axis=1, keepdims=True)
            return StabilizedSubspace(rk, basis, ranks, k)
    raise ValueError(f"rank did not stabilize within a word of length {len(word)} (ranks {ranks})")


# ---------------------------------------------------------------- finite-time Oseledets data

@dataclass
class Filtration:
    basis: np.ndarray       # columns, fastest growth first
    rates: np.ndarray       # log singular values / n
    blocks: list            # groups of column indices with indistinguishable rates
    n: int

    @property
    def merged(self):
        return any(len(b) > 1 for b in self.blocks)

    def coefficients(self, beta):
        return self.basis.T @ np.asarray(beta, dtype=float)

    def reconstruct(self, alpha):
        return self.basis @ np.asarray(alpha, dtype=float)


def _sign_fix(q):
    q = q.copy()
    for j in range(q.shape[1]):
        nz = np.nonzero(np.abs(q[:, j]) > 1e-12)[0]
        if len(nz) and q[nz[0], j] < 0:
            q[:, j] = -q[:, j]
    return q


def oseledets_filtration(family, word, collared=None, n=60, merge_tol=1e-8):
    """Right singular directions of the length-``n`` cocycle product, by backward QR.

    ``P^T = M(x_1) ... M(x_n) = Q R`` with a strongly graded ``R``, so the
    columns of ``Q`` approximate the right singular vectors of ``P``.
    """
    word = np.asarray(word, dtype=np.int64)
    if len(word) < n:
        raise ValueError(f"word of length {len(word)} is shorter than n={n}")
    mats = _cocycle_mats(family, collared).astype(float)
    size = mats.shape[1]
    q = np.eye(size)
    logsv = np.zeros(size)
    for r in word[:n][::-1]:
        q, rr = np.linalg.qr(mats[r] @ q)
        with np.errstate(divide="ignore"):
            logsv += np.log(np.abs(np.diag(rr)))
    order = np.argsort(-logsv, kind="stable")
    q, logsv = _sign_fix(q[:, order]), logsv[order]
    blocks = [[0]]
    for i in range(1, size):
        a, b = logsv[i - 1], logsv[i]
        same = (math.isinf(a) and a == b) or abs(a - b) <= merge_tol * max(abs(a), abs(b), 1.0)
        if same:
            blocks[-1].append(i)
        else:
            blocks.append([i])
    return Filtration(q, logsv / n, blocks, n)


def leading_component(filtration, beta, rel_tol=1e-8):
    """Index of the first basis direction on which ``beta`` has a non-negligible coefficient."""
    alpha = filtration.coefficients(beta)
    scale = max(np.linalg.norm(beta), 1e-300)
    hits = np.nonzero(np.abs(alpha) > rel_tol * scale)[0]
    return (int(hits[0]) if len(hits) else None), alpha
