"""Small numerical helpers: vectorized monotone inversion and quadrature glue."""

import numpy as np

from .errors import IntegrationError

#: time tolerance for inverting cumulative rates
INVERT_TOL = 1e-12

_GL_CACHE = {}


def gauss_legendre(n):
    """(nodes, weights) of the n-point Gauss-Legendre rule mapped to [0, 1]."""
    if n not in _GL_CACHE:
        x, w = np.polynomial.legendre.leggauss(n)
        _GL_CACHE[n] = (0.5 * (x + 1.0), 0.5 * w)
    return _GL_CACHE[n]


def solve_monotone(g, lo, hi, target, deriv=None, tol=INVERT_TOL, max_iter=200):
    """Solve g(u) = target for nondecreasing g, elementwise on arrays.

    lo/hi must bracket the root.  Uses bisection, switching to Newton steps
    when a derivative is supplied and the step stays inside the bracket.
    """
    lo = np.array(lo, dtype=float, copy=True)
    hi = np.array(hi, dtype=float, copy=True)
    target = np.asarray(target, dtype=float)
    u = 0.5 * (lo + hi)
    for _ in range(max_iter):
        f = g(u) - target
        below = f < 0.0
        lo = np.where(below, u, lo)
        hi = np.where(below, hi, u)
        if deriv is not None:
            d = deriv(u)
            with np.errstate(divide="ignore", invalid="ignore"):
                step = np.where(d > 0.0, f / np.where(d > 0.0, d, 1.0), np.inf)
            cand = u - step
            ok = (cand > lo) & (cand < hi)
            u = np.where(ok, cand, 0.5 * (lo + hi))
        else:
            u = 0.5 * (lo + hi)
        if np.max(hi - lo) < tol:
            break
    return 0.5 * (lo + hi) if deriv is None else np.clip(u, lo, hi)


def adaptive_quad(f, a, b, points=(), tol=1e-10):
    """scipy.integrate.quad with kink splitting and an explicit failure signal."""
    import warnings

    from scipy.integrate import IntegrationWarning, quad

    cuts = sorted(p for p in points if a < p < b)
    edges = [a, *cuts, b]
    total, err = 0.0, 0.0
    # roundoff chatter from quad is superseded by the explicit check below
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", IntegrationWarning)
        for lo, hi in zip(edges[:-1], edges[1:]):
            val, e = quad(f, lo, hi, epsabs=tol, epsrel=tol, limit=200)
            total += val
            err += e
    if not np.isfinite(total) or err > max(1e-6, 1e-4 * abs(total)):
        raise IntegrationError(
            f"quadrature failed on [{a}, {b}]: value={total}, err={err}"
        )
    return total
