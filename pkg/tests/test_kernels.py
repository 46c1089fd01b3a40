import os
import subprocess
import sys

import numpy as np
import pytest

from tilelab import _kernels
from tilelab.bratteli import Hierarchy, Law
from tilelab.cocycle import lyapunov_spectrum
from tilelab.ergodic import boundary_flags, packing_decomposition, root_tree
from tilelab.fixtures import load
from tilelab.geometry import Region

NAMES = ("points_in_region", "classify", "expand", "qr_lyapunov", "boundary")


@pytest.fixture(scope="module")
def recorded():
    """Arguments every kernel received during a small library workload."""
    calls = {k: [] for k in NAMES}
    originals = {k: getattr(_kernels, k) for k in NAMES}

    def spy(name):
        def call(*args):
            calls[name].append(tuple(a.copy() if isinstance(a, np.ndarray) else a for a in args))
            return originals[name](*args)
        return call

    for k in NAMES:
        setattr(_kernels, k, spy(k))
    try:
        four, prod = load("four1d"), load("prod2d")
        Hierarchy(prod, [0, 1, 0]).tree(3, 2).leaves()
        packing_decomposition(root_tree(four, [0, 1] * 3), Region("box", [700.3], half_widths=[500.0]))
        packing_decomposition(root_tree(prod, [0] * 4), Region("disk", [100.0, 90.0], radius=60.0))
        packing_decomposition(root_tree(prod, [0] * 4), Region("box", [100.0, 90.0], half_widths=[50.0, 20.0]))
        lyapunov_spectrum(prod, Law.bernoulli([0.5, 0.5]), 80)
        boundary_flags(four, [0, 1] * 6, 500, seed=1, threads=1)
        boundary_flags(prod, [0] * 8, 300, seed=2, threads=1)
    finally:
        for k, fn in originals.items():
            setattr(_kernels, k, fn)
    return calls


@pytest.mark.parametrize("name", NAMES)
def test_numba_and_numpy_agree(recorded, name):
    calls = recorded[name]
    assert calls, f"workload never reached {name}"
    fast, slow = getattr(_kernels, name + "_numba"), getattr(_kernels, name + "_numpy")
    for args in calls:
        a, b = fast(*args), slow(*args)
        a = a if isinstance(a, tuple) else (a,)
        b = b if isinstance(b, tuple) else (b,)
        for x, y in zip(a, b):
            if np.asarray(x).dtype.kind == "f":
                assert np.allclose(x, y, rtol=1e-12, atol=1e-12, equal_nan=True)
            else:
                assert np.array_equal(x, y)


def test_backend_flag():
    code = "from tilelab import _kernels; print(_kernels.BACKEND)"
    env = dict(os.environ, TILELAB_NO_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"


def test_results_identical_without_numba():
    code = ("import numpy as np\n"
            "from tilelab.fixtures import load\n"
            "from tilelab.bratteli import Law\n"
            "from tilelab.ergodic import deviation_series, Observable, boundary_measure_decay\n"
            "from tilelab.geometry import Region\n"
            "f = load('four1d')\n"
            "r = deviation_series(Observable(np.array([1, -1])), f, Law.parse('fixed:1'), Region.unit_box(1), 4**6)\n"
            "b = boundary_measure_decay(f, Law.parse('bernoulli:0.5,0.5'), 6, samples=2000, seed=3)\n"
            "print(r.integrals, b.mu_hat.tolist())\n")
    outs = []
    for flag in ("0", "1"):
        env = dict(os.environ, TILELAB_NO_NUMBA=flag)
        outs.append(subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True,
                                   check=True).stdout)
    assert outs[0] == outs[1]
