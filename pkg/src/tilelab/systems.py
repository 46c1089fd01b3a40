"""Type-H families of graph iterated function systems: loading, validation, matrices."""
from __future__ import annotations

import ast
import math
import operator
from dataclasses import dataclass, field
from functools import cached_property
from itertools import product

import numpy as np
import tomli
import tomli_w

from .geometry import TOL, AffineContraction, GeometryError, TileShape, apply_map, overlap_volume


class FamilyError(ValueError):
    pass


# ---------------------------------------------------------------- expressions

_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
           ast.Div: operator.truediv, ast.Pow: operator.pow}
_UNARY = {ast.UAdd: operator.pos, ast.USub: operator.neg}
_FUNCS = {"sqrt": math.sqrt}


def evaluate(expr, constants=None):
    """Evaluate a number or arithmetic string such as ``"(1 + sqrt(5)) / 2"``."""
    if isinstance(expr, bool):
        raise FamilyError(f"expected a number, got {expr!r}")
    if isinstance(expr, (int, float)):
        return float(expr)
    if not isinstance(expr, str):
        raise FamilyError(f"expected a number or expression, got {expr!r}")
    constants = constants or {}
    try:
        tree = ast.parse(expr, mode="eval")
    except SyntaxError as exc:
        raise FamilyError(f"bad expression {expr!r}: {exc.msg}") from None

    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) and not isinstance(node.value, bool):
            return float(node.value)
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            return _BINOPS[type(node.op)](ev(node.left), ev(node.right))
        if isinstance(node, ast.UnaryOp) and type(node.op) in _UNARY:
            return _UNARY[type(node.op)](ev(node.operand))
        if isinstance(node, ast.Name):
            if node.id not in constants:
                raise FamilyError(f"unknown constant {node.id!r} in {expr!r}")
            return constants[node.id]
        if (isinstance(node, ast.Call) and isinstance(node.func, ast.Name)
                and node.func.id in _FUNCS and len(node.args) == 1 and not node.keywords):
            return _FUNCS[node.func.id](ev(node.args[0]))
        raise FamilyError(f"unsupported syntax in expression {expr!r}")

    try:
        return float(ev(tree))
    except (ZeroDivisionError, ValueError, OverflowError) as exc:
        raise FamilyError(f"cannot evaluate {expr!r}: {exc}") from None


# ---------------------------------------------------------------- data types

@dataclass(frozen=True)
class Branch:
    """One map of a rule: a copy of prototile ``source`` placed inside ``target``."""

    source: int
    target: int
    offset: np.ndarray
    theta: float | None = None  # per-branch override, only for malformed inputs

    def __post_init__(self):
        object.__setattr__(self, "offset", np.atleast_1d(np.asarray(self.offset, dtype=float)))


@dataclass(frozen=True)
class SubstitutionRule:
    theta: float
    branches: tuple[Branch, ...]
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "branches", tuple(self.branches))

    def scale_of(self, branch):
        return self.theta if branch.theta is None else branch.theta

    def branch_map(self, k):
        b = self.branches[k]
        return AffineContraction(self.scale_of(b), b.offset)

    @property
    def uniform(self):
        return all(b.theta is None or abs(b.theta - self.theta) <= 1e-12 for b in self.branches)

    def into(self, target):
        """Indices of the branches landing in ``target``, in declaration order."""
        return [k for k, b in enumerate(self.branches) if b.target == target]

    def out_of(self, source):
        return [k for k, b in enumerate(self.branches) if b.source == source]


def transition_matrix(rule, n_prototiles=None):
    """Integer matrix whose column ``p`` lists the child counts of parent ``p``.

    Entry ``[c, p]`` counts branches with source ``c`` and target ``p``.
    """
    if n_prototiles is None:
        n_prototiles = 1 + max(max(b.source, b.target) for b in rule.branches)
    m = np.zeros((n_prototiles, n_prototiles), dtype=np.int64)
    for b in rule.branches:
        m[b.source, b.target] += 1
    return m


@dataclass(frozen=True)
class TypeHFamily:
    prototiles: tuple[TileShape, ...]
    rules: tuple[SubstitutionRule, ...]
    name: str = ""
    prototile_ids: tuple[str, ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "prototiles", tuple(self.prototiles))
        object.__setattr__(self, "rules", tuple(self.rules))
        if not self.prototile_ids:
            object.__setattr__(self, "prototile_ids", tuple(_default_id(i) for i in range(len(self.prototiles))))
        if not self.prototiles or not self.rules:
            raise FamilyError("a family needs at least one prototile and one rule")
        dims = {p.dim for p in self.prototiles}
        if len(dims) != 1:
            raise FamilyError("prototiles of mixed dimension")
        for r in self.rules:
            for b in r.branches:
                if not (0 <= b.source < self.M and 0 <= b.target < self.M):
                    raise FamilyError(f"rule {r.name!r}: branch references prototile out of range")
                if b.offset.shape != (self.dim,):
                    raise FamilyError(f"rule {r.name!r}: offset dimension {b.offset.shape[0]} != {self.dim}")

    def __hash__(self):
        return id(self)

    def __eq__(self, other):
        return self is other

    @property
    def dim(self):
        return self.prototiles[0].dim

    @property
    def M(self):
        return len(self.prototiles)

    @property
    def N(self):
        return len(self.rules)

    @cached_property
    def thetas(self):
        return np.array([r.theta for r in self.rules])

    @cached_property
    def matrices(self):
        return np.stack([transition_matrix(r, self.M) for r in self.rules])

    def transition_matrix(self, k):
        return self.matrices[k]

    @cached_property
    def branch_tables(self):
        """Per rule CSR of branches grouped by target, padded into rectangular arrays.

        Returns ``(ptr, src, off, order)`` where ``order[r, j]`` is the branch
        index inside ``rules[r].branches`` for CSR slot ``j``.
        """
        n, m, d = self.N, self.M, self.dim
        nb = max(len(r.branches) for r in self.rules)
        ptr = np.zeros((n, m + 1), dtype=np.int64)
        src = np.zeros((n, nb), dtype=np.int64)
        off = np.zeros((n, nb, d))
        order = np.full((n, nb), -1, dtype=np.int64)
        for r, rule in enumerate(self.rules):
            pos = 0
            for v in range(m):
                ptr[r, v] = pos
                for k in rule.into(v):
                    src[r, pos] = rule.branches[k].source
                    off[r, pos] = rule.branches[k].offset
                    order[r, pos] = k
                    pos += 1
            ptr[r, m] = pos
        return ptr, src, off, order

    @cached_property
    def padded_geometry(self):
        """Vertex arrays padded to a common length plus half-plane data per prototile."""
        m, d = self.M, self.dim
        nv = max(len(p.vertices) for p in self.prototiles)
        verts = np.zeros((m, nv, d))
        nverts = np.zeros(m, dtype=np.int64)
        normals = np.zeros((m, nv, d))
        offsets = np.zeros((m, nv))
        nfaces = np.zeros(m, dtype=np.int64)
        for i, p in enumerate(self.prototiles):
            k = len(p.vertices)
            verts[i, :k] = p.vertices
            verts[i, k:] = p.vertices[0]
            nverts[i] = k
            n_, c_ = p.halfplanes()
            normals[i, :len(c_)] = n_
            offsets[i, :len(c_)] = c_
            nfaces[i] = len(c_)
        return verts, nverts, normals, offsets, nfaces

    @cached_property
    def bboxes(self):
        lo = np.stack([p.bbox[0] for p in self.prototiles])
        hi = np.stack([p.bbox[1] for p in self.prototiles])
        return lo, hi

    @cached_property
    def diameters(self):
        return np.array([p.diameter for p in self.prototiles])

    @cached_property
    def volumes(self):
        return np.array([p.volume for p in self.prototiles])

    def fingerprint(self):
        """Plain nested tuples; equal fingerprints mean identical families."""
        protos = tuple(tuple(p.vertices.round(12).ravel()) for p in self.prototiles)
        rules = tuple(
            (r.name, round(r.theta, 15),
             tuple((b.source, b.target, tuple(np.round(b.offset, 15)), b.theta) for b in r.branches))
            for r in self.rules)
        return self.name, self.prototile_ids, protos, rules


def _default_id(i):
    return chr(ord("a") + i) if i < 26 else f"t{i}"


# ---------------------------------------------------------------- TOML io

def load_family(text, validate=True):
    """Parse a TOML family description; with ``validate`` every type-H check must pass."""
    try:
        doc = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise FamilyError(f"parse error: {exc}") from None
    family = family_from_dict(doc)
    if validate:
        report = validate_type_h(family)
        if not report.ok:
            bad = next(c for c in report.checks if not c.passed)
            raise FamilyError(f"{bad.name}: {bad.detail}")
    return family


def load_family_file(path, validate=True):
    with open(path, "r", encoding="utf-8") as fh:
        return load_family(fh.read(), validate=validate)


def family_from_dict(doc):
    constants = {}
    for key, val in (doc.get("constants") or {}).items():
        constants[key] = evaluate(val, constants)
    ev = lambda v: evaluate(v, constants)  # noqa: E731

    protos, ids = [], []
    for entry in doc.get("prototile", []):
        pid = str(entry.get("id", _default_id(len(ids))))
        if pid in ids:
            raise FamilyError(f"duplicate prototile id {pid!r}")
        dim = int(entry.get("dim", 1 if "interval" in entry else 2))
        try:
            if "interval" in entry:
                lo, hi = (ev(v) for v in entry["interval"])
                shape = TileShape.interval(lo, hi)
            elif "polygon" in entry:
                shape = TileShape.polygon([[ev(c) for c in pt] for pt in entry["polygon"]])
            else:
                raise FamilyError(f"prototile {pid!r} needs 'interval' or 'polygon'")
        except GeometryError as exc:
            raise FamilyError(f"prototile {pid!r}: {exc}") from None
        if shape.dim != dim:
            raise FamilyError(f"prototile {pid!r}: dim={dim} but geometry is {shape.dim}-dimensional")
        protos.append(shape)
        ids.append(pid)
    if not protos:
        raise FamilyError("no [[prototile]] entries")
    index = {pid: i for i, pid in enumerate(ids)}

    rules = []
    for n, entry in enumerate(doc.get("rule", [])):
        rid = str(entry.get("id", n + 1))
        if "theta" not in entry:
            raise FamilyError(f"rule {rid!r} has no theta")
        theta = ev(entry["theta"])
        if not 0 < theta < 1:
            raise FamilyError(f"rule {rid!r}: theta={theta} is not in (0, 1)")
        branches = []
        for br in entry.get("branch", []):
            try:
                s, t = index[str(br["source"])], index[str(br["target"])]
            except KeyError as exc:
                raise FamilyError(f"rule {rid!r}: unknown prototile {exc.args[0]!r}") from None
            bt = ev(br["theta"]) if "theta" in br else None
            if bt is not None and not 0 < bt < 1:
                raise FamilyError(f"rule {rid!r}: branch theta={bt} is not in (0, 1)")
            branches.append(Branch(s, t, [ev(v) for v in br["offset"]], bt))
        if not branches:
            raise FamilyError(f"rule {rid!r} has no branches")
        rules.append(SubstitutionRule(theta, branches, rid))
    if not rules:
        raise FamilyError("no [[rule]] entries")
    return TypeHFamily(protos, rules, str(doc.get("name", "")), tuple(ids))


def family_to_dict(family):
    doc = {"name": family.name, "prototile": [], "rule": []}
    for pid, p in zip(family.prototile_ids, family.prototiles):
        entry = {"id": pid, "dim": p.dim}
        if p.dim == 1:
            entry["interval"] = [float(p.vertices[0, 0]), float(p.vertices[1, 0])]
        else:
            entry["polygon"] = [[float(x), float(y)] for x, y in p.vertices]
        doc["prototile"].append(entry)
    for r in family.rules:
        branches = []
        for b in r.branches:
            br = {"source": family.prototile_ids[b.source], "target": family.prototile_ids[b.target],
                  "offset": [float(v) for v in b.offset]}
            if b.theta is not None:
                br["theta"] = float(b.theta)
            branches.append(br)
        doc["rule"].append({"id": r.name, "theta": float(r.theta), "branch": branches})
    return doc


def dump_family(family):
    return tomli_w.dumps(family_to_dict(family))


# ---------------------------------------------------------------- validation

@dataclass
class Check:
    name: str
    passed: bool
    detail: str = ""
    witnesses: list = field(default_factory=list)


@dataclass
class ValidationReport:
    family: str
    checks: list[Check]

    @property
    def ok(self):
        return all(c.passed for c in self.checks)

    def __getitem__(self, name):
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def lines(self):
        out = []
        for c in self.checks:
            out.append(f"{'PASS' if c.passed else 'FAIL'}  {c.name}" + (f"  ({c.detail})" if c.detail else ""))
        return out

    def to_dict(self):
        return {"family": self.family, "ok": self.ok,
                "checks": [{"name": c.name, "passed": c.passed, "detail": c.detail,
                            "witnesses": c.witnesses} for c in self.checks]}


def validate_type_h(family, depth=2, vol_rtol=1e-6):
    """Run the four structural checks and report each with witnesses."""
    checks = [_check_contracting(family), _check_uniform(family),
              _check_attractor(family, vol_rtol), _check_compatibility(family, depth)]
    return ValidationReport(family.name, checks)


def _check_contracting(family):
    bad = []
    for r in family.rules:
        for k, b in enumerate(r.branches):
            s = r.scale_of(b)
            if not 0 < s < 1:
                bad.append({"rule": r.name, "branch": k, "theta": s})
    return Check("contracting", not bad, "" if not bad else f"{len(bad)} non-contracting branch(es)", bad)


def _check_uniform(family):
    bad = []
    for r in family.rules:
        scales = sorted({round(r.scale_of(b), 12) for b in r.branches})
        if len(scales) > 1:
            bad.append({"rule": r.name, "thetas": scales})
    detail = "" if not bad else "non-uniform scaling in rule(s) " + ", ".join(str(b["rule"]) for b in bad)
    return Check("uniform_scaling", not bad, detail, bad)


def _check_attractor(family, vol_rtol):
    bad = []
    d = family.dim
    origin = np.zeros((1, d))
    for pid, p in zip(family.prototile_ids, family.prototiles):
        if not p.contains_points(origin, tol=TOL, strict=True)[0]:
            bad.append({"prototile": pid, "problem": "origin not interior"})
    for r in family.rules:
        for k, b in enumerate(r.branches):
            img = apply_map(r.branch_map(k), family.prototiles[b.source])
            if not family.prototiles[b.target].contains_points(img.vertices, tol=1e-7).all():
                bad.append({"rule": r.name, "branch": k, "problem": "image leaves target"})
        for j in range(family.M):
            vol = sum(r.scale_of(r.branches[k]) ** d * family.volumes[r.branches[k].source] for k in r.into(j))
            want = family.volumes[j]
            if abs(vol - want) > vol_rtol * want:
                bad.append({"rule": r.name, "target": family.prototile_ids[j],
                            "problem": "volume identity", "volume": vol, "expected": want})
    detail = "" if not bad else "; ".join(
        f"{w.get('prototile') or w.get('rule')}: {w['problem']}" for w in bad[:4])
    return Check("shared_attractor", not bad, detail, bad)


def _pieces(family, j, word):
    """Images inside prototile ``j`` after subdividing with ``word[-1]`` then ``word[-2]`` ..."""
    maps = [(AffineContraction.identity(family.dim), j)]
    for r in reversed(word):
        rule = family.rules[r]
        nxt = []
        for fmap, t in maps:
            for k in rule.into(t):
                nxt.append((rule.branch_map(k).then(fmap), rule.branches[k].source))
        maps = nxt
    return [apply_map(f, family.prototiles[s]) for f, s in maps]


def _overlaps(shapes, tol):
    """Pairs of shapes whose interiors overlap on positive volume."""
    lo = np.stack([s.bbox[0] for s in shapes])
    hi = np.stack([s.bbox[1] for s in shapes])
    ext = np.minimum(hi[:, None, :], hi[None, :, :]) - np.maximum(lo[:, None, :], lo[None, :, :])
    cand = np.all(ext > tol, axis=2)
    out = []
    for a, b in zip(*np.nonzero(np.triu(cand, 1))):
        v = overlap_volume(shapes[a], shapes[b])
        if v > tol:
            out.append((int(a), int(b), float(v)))
    return out


def _check_compatibility(family, depth):
    bad = []
    words = [w for n in range(1, depth + 1) for w in product(range(family.N), repeat=n)]
    for w in words:
        for j in range(family.M):
            for a, b, v in _overlaps(_pieces(family, j, w), 1e-9):
                bad.append({"word": [family.rules[r].name for r in w], "prototile": family.prototile_ids[j],
                            "pieces": [a, b], "overlap_volume": v})
        if bad:
            break
    detail = "" if not bad else (f"positive-volume overlap {bad[0]['overlap_volume']:.6g} "
                                 f"in {bad[0]['prototile']} under rules {bad[0]['word']}")
    return Check("compatibility", not bad, detail, bad)


# ---------------------------------------------------------------- products

def product_family_2d(f, g, name=None):
    """Rectangles ``A_i x B_k`` with rule ``n`` built from rule ``n`` of each factor."""
    if f.dim != 1 or g.dim != 1:
        raise FamilyError("product_family_2d needs two 1-D families")
    if f.N != g.N:
        raise FamilyError(f"rule counts differ: {f.N} vs {g.N}")
    mg = g.M
    protos, ids = [], []
    for i, pf in enumerate(f.prototiles):
        for k, pg in enumerate(g.prototiles):
            (x0, x1), (y0, y1) = pf.vertices[:, 0], pg.vertices[:, 0]
            protos.append(TileShape.box((x0, y0), (x1, y1)))
            ids.append(f"{f.prototile_ids[i]}{g.prototile_ids[k]}")
    rules = []
    for rf, rg in zip(f.rules, g.rules):
        if abs(rf.theta - rg.theta) > 1e-12:
            raise FamilyError(f"theta mismatch between paired rules: {rf.theta} vs {rg.theta}")
        branches = [Branch(bf.source * mg + bg.source, bf.target * mg + bg.target,
                           [bf.offset[0], bg.offset[0]])
                    for bf in rf.branches for bg in rg.branches]
        rules.append(SubstitutionRule(rf.theta, branches, f"{rf.name}x{rg.name}" if rf.name != rg.name else rf.name))
    return TypeHFamily(protos, rules, name or f"{f.name}x{g.name}", tuple(ids))
