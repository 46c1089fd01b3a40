"""Hot inner loops.

Every kernel has two implementations with identical signatures: a
``numba.njit`` loop version and a vectorized numpy version.  The numba path
is used when numba imports and ``TILELAB_NO_NUMBA`` is unset (or ``0``);
both are importable directly as ``<name>_numba`` / ``<name>_numpy`` so the
test-suite and the benchmark can compare them.
"""
import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

BOX, DISK = 0, 1
OUTSIDE, PARTIAL, INSIDE = 0, 1, 2


def numba_enabled():
    flag = os.environ.get("TILELAB_NO_NUMBA", "0").strip().lower()
    return numba is not None and flag in ("", "0", "false", "no")


def _jit(fn):
    if numba is None:
        return fn
    return numba.njit(cache=True, nogil=True)(fn)


# --------------------------------------------------------------------------
# points in region


def _points_in_region_loop(points, kind, a, b, tol):
    n, d = points.shape
    out = np.zeros(n, dtype=np.bool_)
    for i in range(n):
        if kind == BOX:
            ok = True
            for k in range(d):
                if points[i, k] < a[k] - tol or points[i, k] > b[k] + tol:
                    ok = False
                    break
            out[i] = ok
        else:
            s = 0.0
            for k in range(d):
                diff = points[i, k] - a[k]
                s += diff * diff
            out[i] = np.sqrt(s) <= b[0] + tol
    return out


def points_in_region_numpy(points, kind, a, b, tol):
    """Mask of points inside a closed box ``[a, b]`` or disk (centre ``a``, radius ``b[0]``)."""
    if kind == BOX:
        return np.all((points >= a - tol) & (points <= b + tol), axis=1)
    return np.sqrt(((points - a) ** 2).sum(axis=1)) <= b[0] + tol


points_in_region_numba = _jit(_points_in_region_loop)


# --------------------------------------------------------------------------
# supertile classification against a region


def _classify_loop(types, trans, bb_lo, bb_hi, verts, nverts, kind, a, b, tol):
    n, d = trans.shape
    out = np.empty(n, dtype=np.int8)
    for i in range(n):
        t = types[i]
        if kind == BOX:
            inside = True
            outside = False
            for k in range(d):
                lo = bb_lo[t, k] + trans[i, k]
                hi = bb_hi[t, k] + trans[i, k]
                if lo < a[k] - tol or hi > b[k] + tol:
                    inside = False
                if lo > b[k] + tol or hi < a[k] - tol:
                    outside = True
            if outside:
                out[i] = OUTSIDE
            elif inside:
                out[i] = INSIDE
            else:
                out[i] = PARTIAL
        else:
            r = b[0]
            # distance from centre to bbox
            s = 0.0
            for k in range(d):
                lo = bb_lo[t, k] + trans[i, k]
                hi = bb_hi[t, k] + trans[i, k]
                g = 0.0
                if a[k] < lo:
                    g = lo - a[k]
                elif a[k] > hi:
                    g = a[k] - hi
                s += g * g
            if np.sqrt(s) > r + tol:
                out[i] = OUTSIDE
                continue
            inside = True
            for v in range(nverts[t]):
                s = 0.0
                for k in range(d):
                    diff = verts[t, v, k] + trans[i, k] - a[k]
                    s += diff * diff
                if np.sqrt(s) > r + tol:
                    inside = False
                    break
            out[i] = INSIDE if inside else PARTIAL
    return out


def classify_numpy(types, trans, bb_lo, bb_hi, verts, nverts, kind, a, b, tol):
    """Classify translated supports as OUTSIDE / PARTIAL / INSIDE a convex region.

    ``verts`` is padded per type; padding rows repeat a real vertex so they
    never change the verdict.
    """
    lo = bb_lo[types] + trans
    hi = bb_hi[types] + trans
    if kind == BOX:
        inside = np.all((lo >= a - tol) & (hi <= b + tol), axis=1)
        outside = np.any((lo > b + tol) | (hi < a - tol), axis=1)
    else:
        gap = np.maximum(np.maximum(lo - a, a - hi), 0.0)
        outside = np.sqrt((gap ** 2).sum(axis=1)) > b[0] + tol
        pts = verts[types] + trans[:, None, :]
        inside = np.all(np.sqrt(((pts - a) ** 2).sum(axis=2)) <= b[0] + tol, axis=1)
    out = np.full(len(types), PARTIAL, dtype=np.int8)
    out[inside] = INSIDE
    out[outside] = OUTSIDE
    return out


classify_numba = _jit(_classify_loop)


# --------------------------------------------------------------------------
# one level of hierarchy expansion


def _expand_loop(types, trans, classes, child_ptr, child_type, child_off, class_child):
    n, d = trans.shape
    total = 0
    for i in range(n):
        total += child_ptr[types[i] + 1] - child_ptr[types[i]]
    out_t = np.empty(total, dtype=np.int64)
    out_x = np.empty((total, d), dtype=np.float64)
    out_c = np.empty(total, dtype=np.int64)
    pos = 0
    for i in range(n):
        t = types[i]
        c = classes[i]
        for j in range(child_ptr[t], child_ptr[t + 1]):
            out_t[pos] = child_type[j]
            for k in range(d):
                out_x[pos, k] = trans[i, k] + child_off[j, k]
            if c >= 0:
                out_c[pos] = class_child[c, j - child_ptr[t]]
            else:
                out_c[pos] = -1
            pos += 1
    return out_t, out_x, out_c


def expand_numpy(types, trans, classes, child_ptr, child_type, child_off, class_child):
    """Replace every node by its children (CSR child table indexed by node type)."""
    counts = child_ptr[types + 1] - child_ptr[types]
    total = int(counts.sum())
    parent = np.repeat(np.arange(len(types)), counts)
    starts = np.repeat(child_ptr[types], counts)
    local = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts)
    idx = starts + local
    out_t = child_type[idx].astype(np.int64)
    out_x = trans[parent] + child_off[idx]
    pc = classes[parent]
    out_c = np.full(total, -1, dtype=np.int64)
    known = pc >= 0
    if known.any():
        out_c[known] = class_child[pc[known], local[known]]
    return out_t, out_x, out_c


expand_numba = _jit(_expand_loop)


# --------------------------------------------------------------------------
# QR accumulation of a matrix cocycle


def _qr_lyapunov_loop(mats, word, burn_in):
    c = mats.shape[1]
    q = np.eye(c)
    acc = np.zeros(c)
    for t in range(word.shape[0]):
        z = mats[word[t]] @ q
        q, r = np.linalg.qr(z)
        q = np.ascontiguousarray(q)
        if t >= burn_in:
            for i in range(c):
                acc[i] += np.log(np.abs(r[i, i]))
    return acc


def qr_lyapunov_numpy(mats, word, burn_in):
    """Sum of log|diag R| over steps ``burn_in..len(word)-1`` of ``Q_t R_t = mats[word[t]] Q_{t-1}``."""
    c = mats.shape[1]
    q = np.eye(c)
    acc = np.zeros(c)
    for t, s in enumerate(word):
        q, r = np.linalg.qr(mats[s] @ q)
        if t >= burn_in:
            with np.errstate(divide="ignore"):
                acc += np.log(np.abs(np.diag(r)))
    return acc


qr_lyapunov_numba = _jit(_qr_lyapunov_loop)


# --------------------------------------------------------------------------
# Monte Carlo boundary paths


def _boundary_loop(word, top_u, edge_u, top_cdf, counts, br_ptr, br_src, br_off,
                   theta, normals, offsets, nfaces, verts, nverts, margin):
    """Sample paths top-down and flag levels where the level-0 tile image touches
    the boundary of its level-l container."""
    s_count = edge_u.shape[0]
    k = word.shape[0]
    d = br_off.shape[2]
    m = counts.shape[1]
    flags = np.zeros((s_count, k), dtype=np.bool_)
    edges = np.empty(k, dtype=np.int64)
    vmax = verts.shape[1]
    pts = np.empty((vmax, d))
    alive = np.empty(vmax, dtype=np.bool_)
    for s in range(s_count):
        # top vertex
        v = 0
        while v < m - 1 and top_u[s] > top_cdf[v]:
            v += 1
        # descend: level l edge chosen among branches of rule word[l-1] into v
        for lev in range(k, 0, -1):
            r = word[lev - 1]
            tot = 0.0
            for j in range(br_ptr[r, v], br_ptr[r, v + 1]):
                tot += counts[lev - 1, br_src[r, j]]
            target = edge_u[s, lev - 1] * tot
            acc = 0.0
            pick = br_ptr[r, v + 1] - 1
            for j in range(br_ptr[r, v], br_ptr[r, v + 1]):
                acc += counts[lev - 1, br_src[r, j]]
                if target < acc:
                    pick = j
                    break
            edges[lev - 1] = pick
            v = br_src[r, pick]
        # forward: track the vertices of the level-0 tile
        t0 = v
        for p in range(nverts[t0]):
            for q in range(d):
                pts[p, q] = verts[t0, p, q]
            alive[p] = True
        for lev in range(k):
            r = word[lev]
            j = edges[lev]
            # container type = target of edge j: recover from next edge or top
            tgt = br_tgt_of(br_ptr, r, j, m)
            any_alive = False
            for p in range(nverts[t0]):
                if not alive[p]:
                    continue
                for q in range(d):
                    pts[p, q] = theta[r] * pts[p, q] + br_off[r, j, q]
                on = False
                for f in range(nfaces[tgt]):
                    val = 0.0
                    for q in range(d):
                        val += normals[tgt, f, q] * pts[p, q]
                    if abs(val - offsets[tgt, f]) <= margin:
                        on = True
                        break
                alive[p] = on
                if on:
                    any_alive = True
            flags[s, lev] = any_alive
            if not any_alive:
                break
    return flags


def br_tgt_of(br_ptr, r, j, m):
    # branches of rule r are sorted by target; br_ptr[r] is the CSR pointer
    for v in range(m):
        if br_ptr[r, v] <= j < br_ptr[r, v + 1]:
            return v
    return -1


def boundary_numpy(word, top_u, edge_u, top_cdf, counts, br_ptr, br_src, br_off,
                   theta, normals, offsets, nfaces, verts, nverts, margin):
    """Vectorized over samples; same contract as the loop kernel."""
    s_count, k = edge_u.shape
    m = counts.shape[1]
    v = np.searchsorted(top_cdf[:-1], top_u, side="left").astype(np.int64)
    v = np.minimum(v, m - 1)
    edges = np.empty((s_count, k), dtype=np.int64)
    for lev in range(k, 0, -1):
        r = word[lev - 1]
        lo = br_ptr[r, v]
        hi = br_ptr[r, v + 1]
        nb = int((hi - lo).max())
        cand = lo[:, None] + np.arange(nb)[None, :]
        valid = cand < hi[:, None]
        cand_c = np.where(valid, cand, lo[:, None])
        w = np.where(valid, counts[lev - 1, br_src[r, cand_c]], 0.0)
        cum = np.cumsum(w, axis=1)
        target = edge_u[:, lev - 1] * cum[:, -1]
        pos = (cum <= target[:, None]).sum(axis=1)
        pos = np.minimum(pos, (hi - lo) - 1)
        pick = lo + pos
        edges[:, lev - 1] = pick
        v = br_src[r, pick]
    t0 = v
    pts = verts[t0].copy()
    alive = np.arange(verts.shape[1])[None, :] < nverts[t0][:, None]
    flags = np.zeros((s_count, k), dtype=bool)
    tgt_of = _target_table(br_ptr, m)
    for lev in range(k):
        r = word[lev]
        j = edges[:, lev]
        tgt = tgt_of[r, j]
        pts = theta[r] * pts + br_off[r, j][:, None, :]
        val = np.einsum("sfq,svq->svf", normals[tgt], pts)
        fmask = np.arange(normals.shape[1])[None, :] < nfaces[tgt][:, None]
        on = (np.abs(val - offsets[tgt][:, None, :]) <= margin) & fmask[:, None, :]
        alive = alive & on.any(axis=2)
        flags[:, lev] = alive.any(axis=1)
    return flags


def _target_table(br_ptr, m):
    nb = int(br_ptr[:, -1].max())
    out = np.full((br_ptr.shape[0], nb), -1, dtype=np.int64)
    for r in range(br_ptr.shape[0]):
        for v in range(m):
            out[r, br_ptr[r, v]:br_ptr[r, v + 1]] = v
    return out


if numba is not None:
    br_tgt_of = numba.njit(cache=True, nogil=True)(br_tgt_of)
boundary_numba = _jit(_boundary_loop)


def _select(name):
    impl = globals()[f"{name}_numba"] if numba_enabled() else globals()[f"{name}_numpy"]
    return impl


points_in_region = _select("points_in_region")
classify = _select("classify")
expand = _select("expand")
qr_lyapunov = _select("qr_lyapunov")
boundary = _select("boundary")

BACKEND = "numba" if numba_enabled() else "numpy"
