import numpy as np


def central_diff(f, x: np.ndarray, idx, h: float = 1e-6) -> float:
    """Central finite difference of scalar f at one coordinate of x,
    restoring x afterwards."""
    orig = x[idx]
    x[idx] = orig + h
    hi = f()
    x[idx] = orig - h
    lo = f()
    x[idx] = orig
    return (hi - lo) / (2.0 * h)


def rel_err(a: float, b: float, floor: float = 1e-8) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)
