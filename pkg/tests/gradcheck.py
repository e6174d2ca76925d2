"""Central finite-difference oracle shared by the gradient tests.

The feature network is piecewise linear, so a difference stencil that moves
a rectifier input across zero does not measure the derivative. Coordinates
are drawn only where every pre-activation keeps its sign over the stencil;
the number of rejected draws is reported so tests can bound it.
"""

import numpy as np


def activation_pattern(extractor, layers=(1, 2, 3, 4)):
    def pattern(x):
        _, pre = extractor.forward(x, layers, return_cache=True)
        return np.concatenate([(z > 0).ravel() for z in pre])
    return pattern


def smooth_coords(rng, x, n, pattern=None, step=1e-3, max_draws=None):
    """Draw ``n`` coordinates whose stencil does not cross a kink.

    Returns ``(coords, rejected)``.
    """
    max_draws = max_draws or 20 * n
    base = pattern(x) if pattern else None
    coords, rejected = [], 0
    for _ in range(max_draws):
        c = tuple(int(rng.integers(0, s)) for s in x.shape)
        if pattern is not None:
            xp = x.copy()
            xm = x.copy()
            xp[c] += step
            xm[c] -= step
            if not (np.array_equal(pattern(xp), base) and np.array_equal(pattern(xm), base)):
                rejected += 1
                continue
        coords.append(c)
        if len(coords) == n:
            break
    return coords, rejected


def random_coords(rng, shape, n):
    return [tuple(int(rng.integers(0, s)) for s in shape) for _ in range(n)]


def relative_errors(fn, x, grad, coords, step=1e-3):
    """Relative error of ``grad`` against central differences of ``fn`` at ``coords``.

    The denominator is floored at 1e-6 of the largest gradient magnitude so
    coordinates with a vanishing derivative are compared absolutely.
    """
    floor = 1e-6 * max(float(np.max(np.abs(grad))), 1e-300)
    errs = []
    for c in coords:
        xp = x.copy()
        xm = x.copy()
        xp[c] += step
        xm[c] -= step
        fd = (fn(xp) - fn(xm)) / (2 * step)
        errs.append(abs(fd - grad[c]) / max(abs(fd), abs(grad[c]), floor))
    return np.array(errs)
