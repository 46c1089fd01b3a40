"""Ergodic integrals over growing regions, deviation exponents, boundary paths, frequencies."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels
from ._parallel import pmap
from .bratteli import Hierarchy, InfinitePath, Law, ParameterSequence, SingularPathError, int_matmul, path_counts
from .cocycle import default_burn_in, leading_component, oseledets_filtration
from .geometry import TOL


class CoverageError(ValueError):
    """The region is not inside the available hierarchy."""


class FrequencyError(ValueError):
    pass


# ---------------------------------------------------------------- observables

@dataclass
class Observable:
    """Unit mass at the anchor of every tile, weighted by ``beta`` of its kind.

    Kinds are prototiles, or collared classes when ``collared`` is given.
    """

    beta: np.ndarray
    collared: object = None
    name: str = ""

    def __post_init__(self):
        self.beta = np.asarray(self.beta)
        size = self.collared.size if self.collared is not None else None
        if size is not None and self.beta.shape != (size,):
            raise ValueError(f"beta has {self.beta.shape[0]} entries for {size} collared classes")

    @property
    def is_collared(self):
        return self.collared is not None

    def mean(self, freqs):
        return float(np.dot(self.beta, freqs))

    def mean_removed(self, freqs, tol=1e-6):
        return abs(self.mean(freqs)) <= tol

    def centered(self, freqs):
        return Observable(self.beta - self.mean(freqs), self.collared, self.name)


def volume_observable(family, collared=None):
    size = family.M if collared is None else collared.size
    return Observable(np.ones(size, dtype=np.int64), collared, "volume")


# ---------------------------------------------------------------- packing

@dataclass
class Packing:
    """Greedy top-down packing of a region by whole supertiles.

    ``kappa[i, j]`` counts taken level-``i`` supertiles of type ``j``; the
    residual tiles are level-0 tiles cut by the region boundary.
    """

    kappa: np.ndarray
    integral: object
    residual_types: np.ndarray
    residual_trans: np.ndarray
    residual_counted: np.ndarray
    covered_volume: float

    @property
    def top_level(self):
        hit = np.nonzero(self.kappa.sum(axis=1))[0]
        return int(hit[-1]) if len(hit) else -1

    def level_counts(self):
        return {int(i): [int(v) for v in row] for i, row in enumerate(self.kappa) if row.any()}


def _check_coverage(tree, region):
    lo, hi = region.bbox
    if region.dim == 1:
        pts = np.array([lo, hi])
    else:
        pts = np.array([[lo[0], lo[1]], [hi[0], lo[1]], [hi[0], hi[1]], [lo[0], hi[1]]])
    if not tree.support.contains_points(pts, tol=1e-7).all():
        raise CoverageError(f"region {region.kind} of size {float(np.max(hi - lo)):.6g} is not inside the "
                            f"level-{tree.level} supertile; a deeper hierarchy is required")


def _weights(tree, observable, level):
    """Integral of the observable over every level-``level`` supertile kind."""
    h = tree.hierarchy
    beta = observable.beta
    cnt = h.count_matrix(level, collared=observable.is_collared)
    if beta.dtype.kind in "iu":
        return int_matmul(cnt.T, beta.astype(np.int64)[:, None])[:, 0]
    return cnt.T.astype(float) @ beta.astype(float)


def packing_decomposition(tree, region, observable=None, tol=TOL):
    """Take maximal supertiles inside ``region`` level by level; count cut level-0 tiles by anchor."""
    if region.dim != tree.family.dim:
        raise ValueError("region and family dimensions differ")
    _check_coverage(tree, region)
    fam, h = tree.family, tree.hierarchy
    collared = observable is not None and observable.is_collared
    if collared and tree.cls < 0:
        raise ValueError("a collared observable needs a tree with a root collared class")
    kind, a, b = region.kernel_args()
    bb_lo, bb_hi = fam.bboxes
    verts, nverts, *_ = fam.padded_geometry
    kappa = np.zeros((tree.level + 1, fam.M), dtype=np.int64)
    total = 0
    covered = 0.0
    types = np.array([tree.vtype], dtype=np.int64)
    trans = tree.shift[None, :].astype(float)
    classes = np.array([tree.cls], dtype=np.int64)
    res_t = np.zeros(0, dtype=np.int64)
    res_x = np.zeros((0, fam.dim))
    res_c = np.zeros(0, dtype=bool)
    for lev in range(tree.level, -1, -1):
        s = h.inv_scale[lev]
        status = _kernels.classify(types, np.ascontiguousarray(trans), bb_lo * s, bb_hi * s,
                                   np.ascontiguousarray(verts * s), nverts, kind, a, b, tol)
        inside = status == _kernels.INSIDE
        if inside.any():
            kappa[lev] += np.bincount(types[inside], minlength=fam.M)
            covered += float(fam.volumes[types[inside]].sum() * s ** fam.dim)
            if observable is not None:
                w = _weights(tree, observable, lev)
                kinds = classes[inside] if collared else types[inside]
                total += _exact_sum(w[kinds])
        part = status == _kernels.PARTIAL
        types, trans, classes = types[part], trans[part], classes[part]
        if lev > 0 and len(types):
            types, trans, classes = h.expand(lev, types, trans, classes)
        elif lev == 0:
            hit = region.contains_points(trans, tol) if len(types) else np.zeros(0, dtype=bool)
            res_t, res_x, res_c = types, trans, hit
            if observable is not None and hit.any():
                beta = observable.beta
                kinds = classes[hit] if collared else types[hit]
                total += _exact_sum(beta[kinds])
    return Packing(kappa, total if observable is not None else None, res_t, res_x, res_c, covered)


def _exact_sum(arr):
    if arr.dtype == object:
        return sum(int(v) for v in arr)
    if arr.dtype.kind in "iu":
        return int(arr.sum())
    return float(arr.sum())


def ergodic_integral(observable, tree, region):
    """Sum of ``beta`` over the tile anchors inside ``region``, computed hierarchically."""
    return packing_decomposition(tree, region, observable).integral


def ergodic_integral_bruteforce(observable, tree, region):
    """Same integral by flattening every tile of the tree."""
    _check_coverage(tree, region)
    types, trans, classes = tree.leaves()
    hit = region.contains_points(trans)
    kinds = classes[hit] if observable.is_collared else types[hit]
    return _exact_sum(observable.beta[kinds])


def packing_constants(family, base):
    """``(K1, K2)`` from prototile geometry and the base region ``B``.

    K1: a ball of radius ``diam * theta_(m)^-1`` inside ``T.B`` holds a whole
    level-``m`` supertile.  K2: taken level-``i`` supertiles sit in a boundary
    tube of width one level-``i+1`` diameter.
    """
    d = family.dim
    diam = float(family.diameters.max())
    vmin = float(family.volumes.min())
    tmin = float(family.thetas.min())
    r_in = float(base.half_widths.min()) if base.kind == "box" else float(base.radius)
    k1 = base.volume * (diam / (tmin * r_in)) ** d
    k2 = diam / (tmin * vmin)
    return k1, k2


def packing_bound_ratios(tree, packing, region):
    """Observed ``Vol(T.B) theta_(n)^d`` and ``max_i sum_j kappa_ij / (Vol(dT.B) theta_(i)^(d-1))``."""
    h = tree.hierarchy
    d = tree.family.dim
    n = packing.top_level
    r1 = region.volume / h.inv_scale[n] ** d if n >= 0 else math.inf
    r2 = 0.0
    for i in range(max(n, 0)):
        denom = region.boundary_measure * h.inv_scale[i] ** (1 - d)
        r2 = max(r2, packing.kappa[i].sum() / denom)
    return r1, r2


# ---------------------------------------------------------------- placing the hierarchy

def root_tree(family, word, collared=None, mode="aligned", seed=0, radius=None, k_max=None):
    """Level-``len(word)`` supertile placed for integration.

    ``aligned``: type 0 with the support's lower corner at the origin.
    ``generic``: the approximant of a seeded random path, anchored at its tile.
    """
    h = Hierarchy(family, word, collared)
    k = len(word)
    if mode == "aligned":
        tree = h.tree(k, 0)
        tree = tree.translated(-tree.support.bbox[0])
    elif mode == "generic":
        seq = ParameterSequence(Law.fixed(word), seed, window=tuple(int(s) for s in word))
        ip = InfinitePath(family, seq, policy="random", seed=seed)
        tree = ip.approximant(k, h)
    else:
        raise ValueError(f"unknown placement mode {mode!r}")
    if collared is not None:
        tree = replace(tree, cls=collared.first_class(tree.vtype))
    return tree


def required_depth(family, law, region, seed, mode, margin=1.0, k_cap=80):
    """Smallest depth whose placed root supertile contains ``region``."""
    word = law.sample(k_cap, seed)
    for k in range(1, k_cap + 1):
        tree = root_tree(family, word[:k], None, mode, seed)
        try:
            _check_coverage(tree, region)
        except CoverageError:
            continue
        if mode == "generic" and tree.support.boundary_distance(np.zeros((1, family.dim)))[0] < margin:
            continue
        return k
    raise SingularPathError(f"region is not covered by depth {k_cap}; the sampled path may be singular")


# ---------------------------------------------------------------- deviation series

def t_grid(family, t0, tmax, points=None):
    """``T_m = T0 * theta_max^(-m/2)`` up to ``tmax`` (or ``points`` values)."""
    step = 1.0 / math.sqrt(float(family.thetas.max()))
    if points is None:
        points = int(math.floor(math.log(tmax / t0) / math.log(step) + 1e-9)) + 1
    return t0 * step ** np.arange(points)


def envelope_fit(ts, values, windows=6):
    """Least-squares slope of ``log|I|`` vs ``log T`` through the largest ``|I|`` of each log-T window."""
    ts = np.asarray(ts, dtype=float)
    mag = np.abs(np.asarray(values, dtype=float))
    lt = np.log(ts)
    edges = np.linspace(lt[0], lt[-1], windows + 1)
    pts = []
    for w in range(windows):
        sel = (lt >= edges[w] - 1e-12) & ((lt < edges[w + 1] - 1e-12) if w < windows - 1 else (lt <= edges[-1] + 1e-12))
        sel &= mag > 0
        if sel.any():
            i = np.nonzero(sel)[0][np.argmax(mag[sel])]
            pts.append(i)
    if len(pts) < 4:
        raise ValueError(f"only {len(pts)} envelope points with non-zero |I|; need at least 4")
    x, y = lt[pts], np.log(mag[pts])
    slope, _ = np.polyfit(x, y, 1)
    return float(slope), [int(i) for i in pts]


def plain_fit(ts, values):
    ts, mag = np.asarray(ts, float), np.abs(np.asarray(values, float))
    keep = mag > 0
    if keep.sum() < 2:
        return math.nan
    return float(np.polyfit(np.log(ts[keep]), np.log(mag[keep]), 1)[0])


@dataclass
class DeviationReport:
    T_grid: np.ndarray
    integrals: list
    level_counts: list
    slope: float
    envelope: list
    predicted: float
    claim: str
    tolerance: float
    component: int | None
    alpha: list
    subsequence_T: list = field(default_factory=list)
    subsequence_I: list = field(default_factory=list)
    subsequence_slope: float = math.nan
    meta: dict = field(default_factory=dict)

    @property
    def passed(self):
        if self.claim == "boundary":
            return self.slope <= self.predicted + self.tolerance
        return abs(self.slope - self.predicted) <= self.tolerance

    def to_dict(self):
        return {"T": [float(t) for t in self.T_grid], "I": [_num(v) for v in self.integrals],
                "envelope_slope": self.slope, "envelope_points": self.envelope,
                "predicted": self.predicted, "claim": self.claim, "tolerance": self.tolerance,
                "component": self.component, "alpha": [float(a) for a in self.alpha],
                "subsequence": {"T": [float(t) for t in self.subsequence_T],
                                "I": [_num(v) for v in self.subsequence_I],
                                "slope": None if math.isnan(self.subsequence_slope) else self.subsequence_slope},
                "verdict": "pass" if self.passed else "fail", **self.meta}

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["T", "I", "logT", "logAbsI", "level_counts_json"])
        for t, v, lc in zip(self.T_grid, self.integrals, self.level_counts):
            la = math.log(abs(v)) if v != 0 else float("-inf")
            w.writerow([repr(float(t)), _num(v), repr(math.log(t)), repr(la),
                        json.dumps(lc, sort_keys=True, separators=(",", ":"))])
        return buf.getvalue()


def _num(v):
    return int(v) if isinstance(v, (int, np.integer)) else float(v)


def predicted_exponent(family, word, observable, n=60):
    """``(nu, claim, component, alpha)`` from the finite-time filtration of the cocycle.

    Directions come from the filtration; exponents come from forward QR with a
    burn-in, which removes the start-up bias of the finite product.
    """
    n = min(n, len(word))
    filt = oseledets_filtration(family, word, observable.collared, n=n)
    comp, alpha = leading_component(filt, observable.beta.astype(float), rel_tol=1e-6)
    mats = family.matrices if observable.collared is None else observable.collared.matrices
    mats = np.ascontiguousarray(np.transpose(mats, (0, 2, 1)).astype(np.float64))
    burn = default_burn_in(n)
    with np.errstate(divide="ignore"):
        rates = np.sort(_kernels.qr_lyapunov(mats, np.asarray(word[:n], dtype=np.int64), burn) / (n - burn))[::-1]
    d = family.dim
    if comp is None:
        return float(d - 1), "boundary", None, alpha
    thr = (d - 1) * rates[0] / d
    if rates[comp] < thr - 1e-9 * max(1.0, abs(thr)):
        return float(d - 1), "boundary", comp, alpha
    return float(d * rates[comp] / rates[0]), "expanding", comp, alpha


def deviation_series(observable, family, law, base, tmax, t0=None, seed=0, mode="aligned",
                     points=None, tolerance=None, threads=None, filtration_n=60):
    """``I(T) = integral of the observable over T.B`` on a geometric grid, with the fitted exponent."""
    law.check(family.N)
    t0 = 1.0 / math.sqrt(float(family.thetas.max())) if t0 is None else t0
    grid = t_grid(family, t0, tmax, points)
    big = base.scaled(grid[-1])
    depth = required_depth(family, law, big, seed, mode)
    word = law.sample(max(depth, filtration_n), seed)
    tree = root_tree(family, word[:depth], observable.collared, mode, seed)

    def one(t):
        p = packing_decomposition(tree, base.scaled(t), observable)
        return p.integral, p.level_counts()

    res = pmap(one, grid, threads)
    vals = [r[0] for r in res]
    slope, env = envelope_fit(grid, vals)
    nu, claim, comp, alpha = predicted_exponent(family, word, observable, filtration_n)
    tol = tolerance if tolerance is not None else (0.05 if family.dim == 1 else 0.1)

    # lower-bound protocol: times at which the parameter window around the origin recurs
    sub_t, sub_i = [], []
    window = min(3, depth)
    for n_k in range(1, depth + 1):
        if n_k + window <= len(word) and np.array_equal(word[n_k:n_k + window], word[:window]):
            t_k = t0 * tree.hierarchy.inv_scale[n_k] / tree.hierarchy.inv_scale[0]
            if t_k <= grid[-1] * (1 + 1e-12):
                region = base.scaled(t_k)
                if mode == "generic":
                    region = region.translated(_recurrence_centre(tree, n_k) - region.center)
                try:
                    sub_i.append(packing_decomposition(tree, region, observable).integral)
                    sub_t.append(t_k)
                except CoverageError:
                    break
    rep = DeviationReport(grid, vals, [r[1] for r in res], slope, env, nu, claim, tol, comp,
                          list(alpha), sub_t, sub_i, plain_fit(sub_t, sub_i) if len(sub_t) >= 2 else math.nan)
    rep.meta = {"mode": mode, "depth": depth, "seed": seed, "law": law.text(),
                "region": {"kind": base.kind, "center": base.center.tolist(),
                           "half_widths": None if base.half_widths is None else base.half_widths.tolist(),
                           "radius": base.radius},
                "observable": {"name": observable.name, "collared": observable.is_collared,
                               "beta": [_num(v) for v in observable.beta]}}
    return rep


def _recurrence_centre(tree, level):
    """Centre of the level-``level`` supertile that contains the origin."""
    h = tree.hierarchy
    types = np.array([tree.vtype])
    trans = tree.shift[None, :].astype(float)
    classes = np.array([tree.cls])
    origin = np.zeros((1, tree.family.dim))
    for lev in range(tree.level, level, -1):
        types, trans, classes = h.expand(lev, types, trans, classes)
        keep = [i for i in range(len(types))
                if h.support(lev - 1, types[i]).translated(trans[i]).contains_points(origin)[0]]
        types, trans, classes = types[keep[:1]], trans[keep[:1]], classes[keep[:1]]
    lo, hi = h.support(level, types[0]).translated(trans[0]).bbox
    return (lo + hi) / 2


# ---------------------------------------------------------------- boundary paths

@dataclass
class BoundaryDecay:
    k: np.ndarray
    mu_hat: np.ndarray
    stderr: np.ndarray
    rate: float
    partial_sums: np.ndarray
    rel_increment: float
    samples: int
    seed: int
    exact: np.ndarray | None = None

    def to_dict(self):
        d = {"k": self.k.tolist(), "mu_hat": self.mu_hat.tolist(), "stderr": self.stderr.tolist(),
             "rate": self.rate, "partial_sums": self.partial_sums.tolist(),
             "rel_increment": self.rel_increment, "summable": bool(self.rate < 1),
             "samples": self.samples, "seed": self.seed}
        if self.exact is not None:
            d["exact"] = self.exact.tolist()
        return d


def _level_weights(family, word):
    """Path counts per level, each row normalised to sum 1 (only ratios matter)."""
    rows = []
    for c in path_counts(family, word):
        c = np.array([float(v) for v in c])
        rows.append(c / c.sum())
    return np.array(rows)


def boundary_flags(family, word, samples, seed, margin=1e-9, chunk=4096, threads=None):
    """Sample ``samples`` paths tail-invariantly below a level-``len(word)`` top and flag boundary levels."""
    word = np.asarray(word, dtype=np.int64)
    k = len(word)
    counts = _level_weights(family, word)
    top = counts[k]
    top_cdf = np.cumsum(top)
    top_cdf /= top_cdf[-1]
    lev_counts = np.ascontiguousarray(counts[:k])
    ptr, src, off, _ = family.branch_tables
    verts, nverts, normals, offsets, nfaces = family.padded_geometry
    chunks = [(i, min(chunk, samples - i * chunk)) for i in range(-(-samples // chunk))]

    def run(job):
        idx, size = job
        rng = np.random.default_rng([seed, idx])
        top_u = rng.random(size)
        edge_u = rng.random((size, k))
        return _kernels.boundary(word, top_u, edge_u, top_cdf, lev_counts, ptr, src, off,
                                 family.thetas, normals, offsets, nfaces, verts, nverts, margin)

    return np.concatenate(pmap(run, chunks, threads), axis=0)


def fit_decay_rate(mu, min_value):
    k = np.arange(1, len(mu) + 1)
    keep = mu >= min_value
    if keep.sum() < 2:
        return math.nan
    slope = np.polyfit(k[keep], np.log(mu[keep]), 1)[0]
    return float(math.exp(slope))


def boundary_measure_decay(family, law, k_max, samples=100_000, seed=0, pad=8, margin=1e-9, threads=None):
    """Monte Carlo ``mu(dV_k)`` for ``k = 1..k_max`` with a geometric-rate fit."""
    law.check(family.N)
    word = law.sample(k_max + pad, seed)
    flags = boundary_flags(family, word, samples, seed, margin, threads=threads)[:, :k_max]
    mu = flags.mean(axis=0)
    se = np.sqrt(mu * (1 - mu) / samples)
    rate = fit_decay_rate(mu, 20.0 / samples)
    sums = np.cumsum(mu)
    rel = float(mu[-1] / sums[-1]) if sums[-1] > 0 else 0.0
    return BoundaryDecay(np.arange(1, k_max + 1), mu, se, rate, sums, rel, samples, seed)


def boundary_measure_exact(family, word, k_max, pad=8, margin=1e-9):
    """Exact ``mu(dV_k)`` for the same top-level weighting as the sampler, by pruned enumeration."""
    word = np.asarray(word, dtype=np.int64)
    top = k_max + pad
    if len(word) < top:
        raise ValueError(f"need a word of length {top}")
    h = Hierarchy(family, word[:top])
    leaves_top = np.array([float(v) for v in path_counts(family, word[:top])[top]])
    out = []
    for k in range(1, k_max + 1):
        # number of level-k supertiles of type v inside the level-top supertiles, one of each type
        above = np.eye(family.M, dtype=object)
        for lev in range(k + 1, top + 1):
            above = above @ family.matrices[word[lev - 1]].astype(object)
        n_sub = np.array([float(sum(above[v, :])) for v in range(family.M)])
        mu = 0.0
        for v in range(family.M):
            mu += n_sub[v] * _boundary_leaf_count(h, k, v, margin) / leaves_top.sum()
        out.append(mu)
    return np.array(out)


def _boundary_leaf_count(h, level, vtype, margin):
    """Leaves of a canonical supertile touching its boundary, expanding only boundary pieces."""
    sup = h.support(level, vtype)
    verts, nverts, *_ = h.family.padded_geometry
    types = np.array([vtype], dtype=np.int64)
    trans = np.zeros((1, h.family.dim))
    classes = np.array([-1], dtype=np.int64)
    for lev in range(level, 0, -1):
        types, trans, classes = h.expand(lev, types, trans, classes)
        pts = verts[types] * h.inv_scale[lev - 1] + trans[:, None, :]
        dist = sup.boundary_distance(pts.reshape(-1, h.family.dim)).reshape(len(types), -1).min(axis=1)
        keep = dist <= margin * h.inv_scale[level]
        types, trans, classes = types[keep], trans[keep], classes[keep]
    return len(types)


# ---------------------------------------------------------------- frequencies

@dataclass
class Frequencies:
    depths: list
    per_path: list          # per path: array (len(depths), kinds)
    discrepancy: float
    primitive_at: int
    collared: bool

    @property
    def top(self):
        return self.per_path[0][-1]

    def to_dict(self):
        return {"depths": list(self.depths), "paths": [p.tolist() for p in self.per_path],
                "discrepancy": self.discrepancy, "primitive_at": self.primitive_at,
                "collared": self.collared}


def primitivity_length(family, word, cap=50):
    prod = np.eye(family.M, dtype=object)
    for n, r in enumerate(word[:cap], start=1):
        prod = prod @ family.matrices[r].astype(object)
        if all(v > 0 for v in prod.ravel()):
            return n
    raise FrequencyError(f"no positive product within {cap} symbols: the family may be non-minimal for this law")


def patch_frequencies(family, law, depths, seed=0, collared=None, paths=2, cap=50):
    """Tile-kind frequencies in supertiles reached by independent random paths."""
    law.check(family.N)
    depths = sorted(int(d) for d in depths)
    kmax = depths[-1]
    prim = primitivity_length(family, law.sample(max(cap, kmax), seed), cap)
    per_path = []
    for p in range(paths):
        s = seed + p
        word = law.sample(kmax, s)
        h = Hierarchy(family, word, collared)
        seq = ParameterSequence(law, s, window=tuple(int(x) for x in word))
        ip = InfinitePath(family, seq, policy="random", seed=s)
        path = ip.path(kmax)
        rows = []
        for k in depths:
            v = path.vertex(k)
            kind = v if collared is None else collared.first_class(v)
            col = h.count_matrix(k, collared=collared is not None)[:, kind]
            col = np.array([float(x) for x in col])
            rows.append(col / col.sum())
        per_path.append(np.array(rows))
    disc = max(float(np.abs(per_path[0][-1] - q[-1]).max()) for q in per_path) if paths > 1 else 0.0
    return Frequencies(depths, per_path, disc, prim, collared is not None)
