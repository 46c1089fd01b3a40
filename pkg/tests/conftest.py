import warnings

import pytest

from tilelab.cocycle import PeriodicWarning, collared_tiles
from tilelab.fixtures import load

_cache = {}


def family(name):
    if name not in _cache:
        _cache[name] = load(name)
    return _cache[name]


def collared(name, rules=None):
    key = ("collared", name, tuple(rules) if rules is not None else None)
    if key not in _cache:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", PeriodicWarning)
            _cache[key] = collared_tiles(family(name), rules=rules)
    return _cache[key]


@pytest.fixture
def fib():
    return family("fib1d")


@pytest.fixture
def four():
    return family("four1d")


@pytest.fixture
def doubling():
    return family("doubling")


@pytest.fixture
def prod():
    return family("prod2d")


@pytest.fixture
def square():
    return family("square2d")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: runs the CLI in subprocesses")


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[num])
