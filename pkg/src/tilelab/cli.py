"""``tilelab`` command line: validate, expand, render, lyapunov, deviate, freqs, boundary."""
from __future__ import annotations

import argparse
import json
import os
import sys
import warnings
from dataclasses import replace

import numpy as np

from . import __version__
from .bratteli import Hierarchy, InfinitePath, Law, ParameterSequence, PatchWindow, parse_word
from .cocycle import PeriodicWarning, collared_tiles, lyapunov_spectrum
from .ergodic import (Observable, boundary_measure_decay, boundary_measure_exact, deviation_series,
                      patch_frequencies)
from .geometry import Region
from .output import dumps, manifest, read_jsonl, render_svg, write_text
from .systems import FamilyError, family_from_dict, family_to_dict, load_family_file, validate_type_h

EXIT_OK, EXIT_INVALID, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2, 3


class UsageError(Exception):
    pass


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from None


def parse_region(text, dim):
    """``unit``, ``box:LO:HI``, ``interval:LO:HI`` or ``disk:CENTRE:R`` with comma-separated coordinates."""
    kind, *parts = text.split(":")
    kind = kind.strip().lower()
    if kind == "unit" and not parts:
        return Region.unit_box(dim)
    if kind in ("box", "interval") and len(parts) == 2:
        lo, hi = np.array(_floats(parts[0])), np.array(_floats(parts[1]))
        if lo.shape != (dim,) or hi.shape != (dim,) or np.any(hi <= lo):
            raise UsageError(f"box needs {dim} lower and {dim} upper coordinates with lo < hi")
        return Region("box", (lo + hi) / 2, half_widths=(hi - lo) / 2)
    if kind == "disk" and len(parts) == 2:
        c, r = np.array(_floats(parts[0])), _floats(parts[1])
        if c.shape != (dim,) or len(r) != 1:
            raise UsageError(f"disk needs a {dim}-dimensional centre and one radius")
        return Region("disk", c, radius=r[0])
    raise UsageError(f"cannot parse region {text!r}")


def _checked(law, family):
    try:
        law.check(family.N)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    return law


def _law(args, family):
    if args.law:
        try:
            law = Law.parse(args.law)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    else:
        law = Law.bernoulli([1.0 / family.N] * family.N)
    return _checked(law, family)


def _collared(family, law, enabled):
    if not enabled:
        return None
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", PeriodicWarning)
        return collared_tiles(family, rules=list(law.support))


def _report(args, command, params, result):
    doc = {"manifest": manifest(command, args.family, args.seed, params), "result": result}
    write_text(args.out, dumps(doc))


# ---------------------------------------------------------------- commands

def cmd_validate(args):
    try:
        family = load_family_file(args.family, validate=False)
    except FamilyError as exc:
        print(f"FAIL  parse  ({exc})")
        return EXIT_INVALID
    report = validate_type_h(family, depth=args.depth)
    for line in report.lines():
        print(line)
    if args.out:
        _report(args, "validate", {"depth": args.depth}, report.to_dict())
    return EXIT_OK if report.ok else EXIT_INVALID


def cmd_expand(args):
    family = load_family_file(args.family)
    if args.word:
        try:
            law = _checked(Law.fixed(parse_word(args.word)), family)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    else:
        law = _law(args, family)
    start = None if args.start is None else args.start - 1
    if start is not None and not 0 <= start < family.M:
        raise UsageError(f"--start must lie in 1..{family.M}")
    word = law.sample(args.depth, args.seed)
    cset = _collared(family, law, args.collared)
    h = Hierarchy(family, word, cset)
    ip = InfinitePath(family, ParameterSequence(law, args.seed, window=tuple(int(s) for s in word)),
                      start=start, policy=args.policy, seed=args.seed)
    tree = ip.approximant(args.depth, h)
    if cset is not None:
        tree = replace(tree, cls=cset.first_class(tree.vtype))
    patch = PatchWindow.from_tree(tree, levels=0)
    lines = patch.jsonl_lines()
    write_text(args.out, "\n".join(lines) + "\n")
    params = {"word": [int(s) + 1 for s in word], "law": law.text(), "depth": args.depth,
              "policy": args.policy, "start": tree.vtype + 1 if start is None else args.start,
              "collared": bool(args.collared)}
    side = {"manifest": manifest("expand", args.family, args.seed, params),
            "family": family_to_dict(family), "tiles": len(lines),
            "collared_classes": None if cset is None else cset.size}
    write_text(args.out + ".manifest.json", dumps(side))
    print(f"{len(lines)} tiles -> {args.out}")
    return EXIT_OK


def cmd_render(args):
    types, trans, classes = read_jsonl(args.patch)
    if args.family:
        family = load_family_file(args.family)
    else:
        side = args.patch + ".manifest.json"
        if not os.path.exists(side):
            raise UsageError(f"no {side}; pass --family")
        with open(side, "r", encoding="utf-8") as fh:
            family = family_from_dict(json.load(fh)["family"])
    if len(types) and (types.max() >= family.M or trans.shape[1] != family.dim):
        raise ValueError("patch does not match the family's prototiles")
    svg = render_svg(types, trans, family.prototiles, classes, color_by=args.color)
    write_text(args.out, svg)
    print(f"{len(types)} tiles -> {args.out}")
    return EXIT_OK


def cmd_lyapunov(args):
    family = load_family_file(args.family)
    law = _law(args, family)
    cset = _collared(family, law, args.collared)
    rep = lyapunov_spectrum(family, law, args.n, args.samples, args.seed, cset, args.burn_in)
    _report(args, "lyapunov", {"law": law.text(), "n": args.n, "samples": args.samples,
                               "burn_in": rep.burn_in, "collared": bool(args.collared)}, rep.to_dict())
    print(" ".join(f"{v:.6f}" for v in rep.exponents))
    return EXIT_OK


def cmd_deviate(args):
    family = load_family_file(args.family)
    law = _law(args, family)
    beta = np.array(_floats(args.beta))
    if beta.shape != (family.M,) and not args.collared:
        raise UsageError(f"--beta needs {family.M} prototile weights")
    cset = _collared(family, law, args.collared)
    if cset is not None:
        if beta.shape == (family.M,):
            beta = cset.lift(beta)
        elif beta.shape != (cset.size,):
            raise UsageError(f"--beta needs {family.M} prototile or {cset.size} collared weights")
    if np.all(beta == np.round(beta)):
        beta = beta.astype(np.int64)
    base = parse_region(args.region, family.dim)
    rep = deviation_series(Observable(beta, cset, "cli"), family, law, base, args.tmax, t0=args.t0,
                           seed=args.seed, mode=args.mode, tolerance=args.tolerance)
    params = {"law": law.text(), "beta": [float(b) for b in beta], "region": args.region,
              "tmax": args.tmax, "t0": args.t0, "mode": args.mode, "collared": bool(args.collared)}
    _report(args, "deviate", params, rep.to_dict())
    root, _ = os.path.splitext(args.out)
    write_text(root + ".csv", rep.to_csv())
    print(f"slope {rep.slope:.4f}  predicted {rep.predicted:.4f} ({rep.claim})  "
          f"{'pass' if rep.passed else 'fail'}")
    return EXIT_OK


def cmd_freqs(args):
    family = load_family_file(args.family)
    law = _law(args, family)
    depths = [int(d) for d in _floats(args.depths)]
    if not depths or min(depths) < 0:
        raise UsageError("--depths must be non-negative integers")
    cset = _collared(family, law, args.collared)
    fr = patch_frequencies(family, law, depths, args.seed, cset, paths=args.paths)
    _report(args, "freqs", {"law": law.text(), "depths": depths, "paths": args.paths,
                            "collared": bool(args.collared)}, fr.to_dict())
    print(" ".join(f"{v:.6f}" for v in fr.top))
    return EXIT_OK


def cmd_boundary(args):
    family = load_family_file(args.family)
    law = _law(args, family)
    dec = boundary_measure_decay(family, law, args.kmax, args.samples, args.seed)
    if args.exact:
        dec.exact = boundary_measure_exact(family, law.sample(args.kmax + 8, args.seed), args.kmax)
    _report(args, "boundary", {"law": law.text(), "kmax": args.kmax, "samples": args.samples,
                               "exact": bool(args.exact)}, dec.to_dict())
    print(f"rate {dec.rate:.4f}  relative increment {dec.rel_increment:.3g}")
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser():
    p = argparse.ArgumentParser(prog="tilelab", description=__doc__)
    p.add_argument("--version", action="version", version=f"tilelab {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def family_cmd(name, fn, help_, out_default=None):
        s = sub.add_parser(name, help=help_)
        s.add_argument("family", help="family TOML file")
        s.add_argument("--seed", type=int, default=0)
        s.add_argument("--out", default=out_default, required=out_default is None and name != "validate")
        s.set_defaults(func=fn)
        return s

    s = family_cmd("validate", cmd_validate, "run the structural checks")
    s.add_argument("--depth", type=int, default=2)

    s = family_cmd("expand", cmd_expand, "write an approximant patch as JSON lines", "patch.jsonl")
    g = s.add_mutually_exclusive_group()
    g.add_argument("--word", help="rule symbols, 1-based (e.g. 111 or 1,2,1)")
    g.add_argument("--law", help="fixed:W | periodic:W | bernoulli:p1,p2,..")
    s.add_argument("--depth", type=int, required=True)
    s.add_argument("--policy", choices=("leftmost", "cyclic", "random"), default="leftmost")
    s.add_argument("--start", type=int, help="prototile at level 0 (1-based)")
    s.add_argument("--collared", action="store_true")

    s = sub.add_parser("render", help="render a JSONL patch to SVG")
    s.add_argument("patch")
    s.add_argument("--out", default="out.svg")
    s.add_argument("--family", help="family TOML (default: the patch's manifest sidecar)")
    s.add_argument("--color", choices=("auto", "proto", "collared"), default="auto")
    s.set_defaults(func=cmd_render)

    s = family_cmd("lyapunov", cmd_lyapunov, "Lyapunov spectrum of the cocycle", "report.json")
    s.add_argument("--law")
    s.add_argument("--n", type=int, default=200)
    s.add_argument("--samples", type=int, default=1)
    s.add_argument("--burn-in", type=int)
    s.add_argument("--collared", action="store_true")

    s = family_cmd("deviate", cmd_deviate, "deviation series of an ergodic integral", "dev.json")
    s.add_argument("--law")
    s.add_argument("--beta", required=True, help="comma-separated weights per prototile or collared class")
    s.add_argument("--region", default="unit")
    s.add_argument("--tmax", type=float, required=True)
    s.add_argument("--t0", type=float)
    s.add_argument("--mode", choices=("aligned", "generic"), default="aligned")
    s.add_argument("--tolerance", type=float)
    s.add_argument("--collared", action="store_true")

    s = family_cmd("freqs", cmd_freqs, "tile frequencies along random paths", "freqs.json")
    s.add_argument("--law")
    s.add_argument("--depths", default="5,10,20")
    s.add_argument("--paths", type=int, default=2)
    s.add_argument("--collared", action="store_true")

    s = family_cmd("boundary", cmd_boundary, "Monte Carlo boundary-path measure", "boundary.json")
    s.add_argument("--law")
    s.add_argument("--kmax", type=int, default=20)
    s.add_argument("--samples", type=int, default=100_000)
    s.add_argument("--exact", action="store_true", help="also enumerate boundary leaves exactly")
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"tilelab: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FamilyError as exc:
        print(f"tilelab: invalid family: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (ValueError, OSError, ArithmeticError, KeyError) as exc:
        print(f"tilelab: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
