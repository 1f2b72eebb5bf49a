"""Central finite differences, kept independent of the tape engine."""
import numpy as np

STEP = 1e-5


def numeric_grad(f, x: np.ndarray, step: float = STEP) -> np.ndarray:
    """d f / d x for scalar ``f`` of an array, perturbing ``x`` in place."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + step
        hi = f()
        x[i] = old - step
        lo = f()
        x[i] = old
        g[i] = (hi - lo) / (2 * step)
    return g


def rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """Largest componentwise relative error over entries with |analytic| > floor.

    Entries below the floor are compared in absolute terms against 1e-6 so
    that a wrong gradient near zero is still caught.
    """
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    big = np.abs(analytic) > floor
    err = 0.0
    if big.any():
        err = float(np.max(np.abs(analytic[big] - numeric[big]) / np.abs(analytic[big])))
    if (~big).any():
        small = float(np.max(np.abs(analytic[~big] - numeric[~big])))
        if small > 1e-6:
            err = max(err, small / floor)
    return err
