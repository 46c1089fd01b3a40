"""Random substitution tilings, their renormalization cocycle and deviation of ergodic integrals."""
__version__ = "0.1.0"
