"""Deterministic serialisation: run manifests, JSON/JSONL/CSV files and SVG rendering."""
from __future__ import annotations

import datetime as _dt
import hashlib
import json
import os
from xml.sax.saxutils import escape

import numpy as np

from . import __version__
from .geometry import snap_key

PALETTE = ("#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948",
           "#b07aa1", "#ff9da7", "#9c755f", "#bab0ac", "#86bcb6", "#d37295")


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def timestamp():
    """UTC time, pinned by ``SOURCE_DATE_EPOCH`` when set."""
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    when = (_dt.datetime.fromtimestamp(int(epoch), _dt.timezone.utc) if epoch
            else _dt.datetime.now(_dt.timezone.utc).replace(microsecond=0))
    return when.isoformat().replace("+00:00", "Z")


def manifest(command, family_path, seed, params):
    return {"command": command,
            "family_sha256": sha256_file(family_path) if family_path else None,
            "seed": seed, "params": params, "version": __version__, "timestamp": timestamp()}


def dumps(obj):
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_text(path, text):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def read_jsonl(path):
    types, trans, classes = [], [], []
    with open(path, "r", encoding="utf-8") as fh:
        for n, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                types.append(int(rec["proto"]) - 1)
                trans.append([float(v) for v in rec["x"]])
                classes.append(-1 if rec.get("collared") is None else int(rec["collared"]) - 1)
            except (ValueError, KeyError, TypeError) as exc:
                raise ValueError(f"{path}:{n}: bad tile record ({exc})") from None
    if not types:
        return np.zeros(0, dtype=np.int64), np.zeros((0, 1)), np.zeros(0, dtype=np.int64)
    return np.array(types, dtype=np.int64), np.array(trans, dtype=float), np.array(classes, dtype=np.int64)


def _fmt(v):
    s = f"{v:.6f}".rstrip("0").rstrip(".")
    return "0" if s in ("-0", "") else s


def render_svg(types, trans, prototiles, classes=None, color_by="auto", stroke=0.02):
    """One ``<polygon>`` per tile (a ``<rect>`` strip in 1-D), ordered by snapped translation."""
    types = np.asarray(types)
    trans = np.asarray(trans, dtype=float)
    if len(types) == 0:
        raise ValueError("cannot render an empty patch")
    use_cls = classes is not None and np.all(np.asarray(classes) >= 0) and color_by != "proto"
    if color_by == "collared" and not use_cls:
        raise ValueError("patch carries no collared classes")
    keys = np.asarray(classes) if use_cls else types
    order = sorted(range(len(types)), key=lambda i: (snap_key(trans[i]), int(types[i])))
    dim = prototiles[0].dim
    shapes = [prototiles[types[i]].vertices + trans[i] for i in order]
    allv = np.concatenate(shapes)
    if dim == 1:
        lo, hi = allv.min(), allv.max()
        box = (lo, -0.5, hi - lo, 1.0)
    else:
        lo, hi = allv.min(axis=0), allv.max(axis=0)
        box = (lo[0], -hi[1], hi[0] - lo[0], hi[1] - lo[1])
    lines = ['<?xml version="1.0" encoding="UTF-8"?>',
             f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="{" ".join(_fmt(v) for v in box)}">',
             f'<g stroke="#222222" stroke-width="{_fmt(stroke)}" stroke-linejoin="round">']
    for i, v in zip(order, shapes):
        color = PALETTE[int(keys[i]) % len(PALETTE)]
        title = escape(f"proto {int(types[i]) + 1}" + (f" class {int(keys[i]) + 1}" if use_cls else ""))
        if dim == 1:
            a, b = v[:, 0].min(), v[:, 0].max()
            lines.append(f'<rect x="{_fmt(a)}" y="-0.5" width="{_fmt(b - a)}" height="1" fill="{color}">'
                         f'<title>{title}</title></rect>')
        else:
            pts = " ".join(f"{_fmt(x)},{_fmt(-y)}" for x, y in v)
            lines.append(f'<polygon points="{pts}" fill="{color}"><title>{title}</title></polygon>')
    lines += ["</g>", "</svg>", ""]
    return "\n".join(lines)
