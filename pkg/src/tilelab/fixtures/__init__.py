"""Reference families shipped with the package."""
from importlib import resources

from ..systems import load_family, product_family_2d

NAMES = ("fib1d", "four1d", "doubling", "square2d", "prod2d")
BROKEN = ("broken_nonuniform", "broken_origin", "broken_overlap")


def path(name):
    return resources.files(__name__).joinpath(f"{name}.toml")


def text(name):
    return path(name).read_text(encoding="utf-8")


def load(name, validate=True):
    return load_family(text(name), validate=validate)


def prod2d():
    """FOUR1D x FOUR1D with rules paired by index (same result as ``load("prod2d")``)."""
    f = load("four1d")
    return product_family_2d(f, f, name="prod2d")
