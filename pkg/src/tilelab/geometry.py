"""Intervals, convex polygons and the affine maps between them."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels

TOL = 1e-9
SNAP = 1e-6


class GeometryError(ValueError):
    pass


def snap(x, grid=SNAP):
    """Integer grid coordinates used for hashing translations."""
    return np.round(np.asarray(x, dtype=float) / grid).astype(np.int64)


def snap_key(x, grid=SNAP):
    return tuple(int(v) for v in np.atleast_1d(snap(x, grid)))


@dataclass(frozen=True)
class AffineContraction:
    """x -> scale * x + offset, the same scale in every coordinate."""

    scale: float
    offset: np.ndarray

    def __post_init__(self):
        if not self.scale > 0:
            raise GeometryError(f"scale must be positive, got {self.scale}")
        object.__setattr__(self, "offset", np.atleast_1d(np.asarray(self.offset, dtype=float)))

    @classmethod
    def identity(cls, dim):
        return cls(1.0, np.zeros(dim))

    @property
    def dim(self):
        return self.offset.shape[0]

    @property
    def contracting(self):
        return 0 < self.scale < 1

    def __call__(self, x):
        return self.scale * np.asarray(x, dtype=float) + self.offset

    def then(self, other):
        """``other ∘ self``: apply self first."""
        return AffineContraction(other.scale * self.scale, other.scale * self.offset + other.offset)

    def inverse(self):
        return AffineContraction(1.0 / self.scale, -self.offset / self.scale)


@dataclass(frozen=True)
class TileShape:
    """A closed interval (d=1) or convex CCW polygon (d=2).

    ``vertices`` has shape (n, d); intervals are stored as ``[[lo], [hi]]``.
    ``anchor`` is the distinguished point and moves with the shape.
    """

    vertices: np.ndarray
    anchor: np.ndarray = field(default=None)

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        object.__setattr__(self, "vertices", v)
        anchor = np.zeros(v.shape[1]) if self.anchor is None else np.atleast_1d(np.asarray(self.anchor, dtype=float))
        object.__setattr__(self, "anchor", anchor)
        d = v.shape[1]
        if d == 1:
            if v.shape[0] != 2 or v[1, 0] - v[0, 0] <= TOL:
                raise GeometryError(f"degenerate interval {v.ravel().tolist()}")
        elif d == 2:
            if v.shape[0] < 3:
                raise GeometryError("polygon needs at least 3 vertices")
            if _signed_area(v) <= TOL:
                raise GeometryError("polygon must be counter-clockwise with positive area")
            e = np.roll(v, -1, axis=0) - v
            cross = e[:, 0] * np.roll(e, -1, axis=0)[:, 1] - e[:, 1] * np.roll(e, -1, axis=0)[:, 0]
            if np.any(cross < -TOL):
                raise GeometryError("only convex polygons are supported")
        else:
            raise GeometryError(f"unsupported dimension {d}")

    @classmethod
    def interval(cls, lo, hi):
        return cls(np.array([[lo], [hi]], dtype=float))

    @classmethod
    def polygon(cls, points):
        return cls(np.asarray(points, dtype=float))

    @classmethod
    def box(cls, lo, hi):
        (x0, y0), (x1, y1) = lo, hi
        return cls(np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]], dtype=float))

    @property
    def dim(self):
        return self.vertices.shape[1]

    @property
    def volume(self):
        if self.dim == 1:
            return float(self.vertices[1, 0] - self.vertices[0, 0])
        return float(_signed_area(self.vertices))

    @property
    def perimeter(self):
        if self.dim == 1:
            return 2.0
        e = np.roll(self.vertices, -1, axis=0) - self.vertices
        return float(np.sqrt((e ** 2).sum(axis=1)).sum())

    @property
    def bbox(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    @property
    def diameter(self):
        v = self.vertices
        return float(np.sqrt(((v[:, None, :] - v[None, :, :]) ** 2).sum(axis=2)).max())

    def halfplanes(self):
        """Outward normals ``n`` and offsets ``c`` with the shape equal to ``{x : n.x <= c}``."""
        v = self.vertices
        if self.dim == 1:
            return np.array([[-1.0], [1.0]]), np.array([-v[0, 0], v[1, 0]])
        e = np.roll(v, -1, axis=0) - v
        n = np.stack([e[:, 1], -e[:, 0]], axis=1)
        n /= np.sqrt((n ** 2).sum(axis=1))[:, None]
        return n, (n * v).sum(axis=1)

    def translated(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return TileShape(self.vertices + t, self.anchor + t)

    def scaled(self, s):
        return TileShape(self.vertices * s, self.anchor * s)

    def contains_points(self, pts, tol=TOL, strict=False):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        n, c = self.halfplanes()
        val = pts @ n.T - c
        if strict:
            return np.all(val < -tol, axis=1)
        return np.all(val <= tol, axis=1)

    def boundary_distance(self, pts):
        """Signed distance to the boundary, positive inside."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        n, c = self.halfplanes()
        return (c - pts @ n.T).min(axis=1)


def _signed_area(v):
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


@dataclass(frozen=True)
class PlacedTile:
    """A unit-scale copy of prototile ``prototype`` moved by ``translation``."""

    prototype: int
    translation: np.ndarray
    collared_type: int | None = None

    def shape(self, prototiles):
        return prototiles[self.prototype].translated(self.translation)


def apply_map(fmap, obj):
    """Image of a shape or point under an affine contraction."""
    if isinstance(obj, TileShape):
        if obj.dim != fmap.dim:
            raise GeometryError(f"dimension mismatch: map {fmap.dim}, shape {obj.dim}")
        return TileShape(fmap(obj.vertices), fmap(obj.anchor))
    pt = np.atleast_1d(np.asarray(obj, dtype=float))
    if pt.shape[-1] != fmap.dim:
        raise GeometryError(f"dimension mismatch: map {fmap.dim}, point {pt.shape[-1]}")
    return fmap(pt)


def clip_polygon(poly, normal, c):
    """Sutherland-Hodgman clip of a vertex list against ``normal.x <= c``."""
    if len(poly) == 0:
        return poly
    out = []
    prev = poly[-1]
    prev_in = normal @ prev <= c
    for cur in poly:
        cur_in = normal @ cur <= c
        if cur_in != prev_in:
            a, b = normal @ prev - c, normal @ cur - c
            out.append(prev + (cur - prev) * (a / (a - b)))
        if cur_in:
            out.append(cur)
        prev, prev_in = cur, cur_in
    return np.array(out) if out else np.zeros((0, 2))


def _clip_convex(a, b, grow=0.0):
    poly = a.vertices
    normals, offsets = b.halfplanes()
    for n, c in zip(normals, offsets):
        poly = clip_polygon(poly, n, c + grow)
        if len(poly) == 0:
            break
    return poly


def _poly_area(p):
    if len(p) < 3:
        return 0.0
    return abs(_signed_area(p))


def overlap_volume(a, b):
    if a.dim != b.dim:
        raise GeometryError("dimension mismatch")
    if a.dim == 1:
        return max(0.0, min(a.vertices[1, 0], b.vertices[1, 0]) - max(a.vertices[0, 0], b.vertices[0, 0]))
    return _poly_area(_clip_convex(a, b))


def intersection_dimension(a, b, tol=TOL):
    """-1 if disjoint, d if interiors overlap, otherwise the dimension of the contact set."""
    if a.dim != b.dim:
        raise GeometryError("dimension mismatch")
    if tol <= 0:
        raise GeometryError("tol must be positive")
    if a.dim == 1:
        gap = min(a.vertices[1, 0], b.vertices[1, 0]) - max(a.vertices[0, 0], b.vertices[0, 0])
        if gap > tol:
            return 1
        return 0 if gap >= -tol else -1
    if overlap_volume(a, b) > tol:
        return 2
    contact = _clip_convex(a, b, grow=tol)
    if len(contact) == 0:
        return -1
    ext = np.sqrt(((contact[:, None, :] - contact[None, :, :]) ** 2).sum(axis=2)).max()
    return 1 if ext > 1e3 * tol else 0


@dataclass(frozen=True)
class Region:
    """Averaging domain B: an axis-aligned box (``interval`` in d=1) or a disk."""

    kind: str
    center: np.ndarray
    half_widths: np.ndarray | None = None
    radius: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "center", np.atleast_1d(np.asarray(self.center, dtype=float)))
        kind = "box" if self.kind == "interval" else self.kind
        object.__setattr__(self, "kind", kind)
        if kind == "box":
            hw = np.atleast_1d(np.asarray(self.half_widths, dtype=float))
            if hw.shape != self.center.shape or np.any(hw <= 0):
                raise GeometryError("box needs positive half-widths matching the centre")
            object.__setattr__(self, "half_widths", hw)
        elif kind == "disk":
            if self.radius is None or self.radius <= 0:
                raise GeometryError("disk needs a positive radius")
        else:
            raise GeometryError(f"unknown region kind {self.kind!r}")

    @classmethod
    def unit_box(cls, dim):
        """[0, 1]^d"""
        return cls("box", np.full(dim, 0.5), half_widths=np.full(dim, 0.5))

    @property
    def dim(self):
        return self.center.shape[0]

    def scaled(self, t):
        """T.B: every point multiplied by t."""
        if self.kind == "box":
            return Region("box", self.center * t, half_widths=self.half_widths * t)
        return Region("disk", self.center * t, radius=self.radius * t)

    def translated(self, v):
        return Region(self.kind, self.center + np.asarray(v, dtype=float), self.half_widths, self.radius)

    @property
    def bbox(self):
        if self.kind == "box":
            return self.center - self.half_widths, self.center + self.half_widths
        return self.center - self.radius, self.center + self.radius

    @property
    def volume(self):
        if self.kind == "box":
            return float(np.prod(2 * self.half_widths))
        return float(np.pi * self.radius ** 2) if self.dim == 2 else 2 * self.radius

    @property
    def boundary_measure(self):
        """(d-1)-dimensional measure of the boundary; a point count in d=1."""
        if self.dim == 1:
            return 2.0
        if self.kind == "box":
            return float(4 * self.half_widths.sum())
        return float(2 * np.pi * self.radius)

    def kernel_args(self):
        if self.kind == "box":
            lo, hi = self.bbox
            return _kernels.BOX, lo, hi
        return _kernels.DISK, self.center, np.array([self.radius])

    def contains_points(self, pts, tol=TOL):
        pts = np.ascontiguousarray(np.atleast_2d(np.asarray(pts, dtype=float)))
        kind, a, b = self.kernel_args()
        return _kernels.points_in_region(pts, kind, a, b, tol)

    def contains_shape(self, shape, tol=TOL):
        return bool(self.contains_points(shape.vertices, tol).all())

    def intersects_shape(self, shape, tol=TOL):
        if self.kind == "box":
            lo, hi = self.bbox
            if shape.dim == 1:
                return intersection_dimension(TileShape.interval(lo[0], hi[0]), shape, tol) >= 0
            return intersection_dimension(TileShape.box(lo, hi), shape, tol) >= 0
        return _point_shape_distance(self.center, shape) <= self.radius + tol


def _point_shape_distance(p, shape):
    if shape.contains_points(p[None, :])[0]:
        return 0.0
    v = shape.vertices
    if shape.dim == 1:
        return float(min(abs(p[0] - v[0, 0]), abs(p[0] - v[1, 0])))
    best = np.inf
    for a, b in zip(v, np.roll(v, -1, axis=0)):
        ab = b - a
        s = np.clip(np.dot(p - a, ab) / np.dot(ab, ab), 0.0, 1.0)
        best = min(best, float(np.linalg.norm(a + s * ab - p)))
    return best


def containment(region, tile, mode, tol=TOL):
    """Relation of a placed tile (a ``TileShape`` with anchor) to a region.

    ``region`` is a ``Region`` or a convex ``TileShape``.  ``mode`` is one of
    ``fully``, ``intersects``, ``anchor_in``.
    """
    if region.dim != tile.dim:
        raise GeometryError("dimension mismatch")
    if mode == "fully":
        if isinstance(region, Region):
            return region.contains_shape(tile, tol)
        return bool(region.contains_points(tile.vertices, tol).all())
    if mode == "intersects":
        if isinstance(region, Region):
            return region.intersects_shape(tile, tol)
        return intersection_dimension(region, tile, tol) >= 0
    if mode == "anchor_in":
        return bool(region.contains_points(tile.anchor[None, :], tol)[0])
    raise ValueError(f"unknown containment mode {mode!r}")
