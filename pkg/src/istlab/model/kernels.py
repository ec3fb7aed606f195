"""Lifetime kernels K(t, dy): the law of a lifespan born at time t.

Kernels are Markov in the birth time; every variant supplies exact sampling
(by inversion), moments, expectations of test functions (tolerance 1e-8), a
cdf, and, for atomic variants, the explicit atom list.  Lifetimes are strictly
positive and almost surely finite.
"""

import numpy as np
from scipy.special import gamma as gamma_fn

from ..errors import DomainError, IntegrationError
from ..numerics import adaptive_quad, gauss_legendre
from .rates import RateFunction, rate_from_config

EXPECT_TOL = 1e-8


class LifetimeKernel:
    """Law of a lifetime given the birth time."""

    kind = "abstract"
    #: kernel map t -> K(t, .) is weakly continuous (one fixture variant is not)
    weakly_continuous = True
    #: law does not depend on the birth time
    time_invariant = False
    #: polynomial tail: no exponential moments (drives the tail-bound shape)
    heavy_tailed = False

    def sample(self, t, rng, size=None):
        """Draw lifetimes for birth times t (array-like); returns ndarray."""
        raise NotImplementedError

    def moment(self, t, p):
        """int y^p K(t, dy); +inf when the moment diverges."""
        raise NotImplementedError

    def expect(self, t, f, kinks=()):
        """int f(y) K(t, dy) to tolerance 1e-8; raises IntegrationError on divergence."""
        raise NotImplementedError

    def cdf(self, t, w):
        """K(t, [0, w]), elementwise in w."""
        raise NotImplementedError

    def atoms(self, t):
        """[(position, mass), ...] for purely atomic kernels, else None."""
        return None

    def seg_mass(self, t, u0, u1):
        """K(t, [u0, u1)), vectorized over segment edges.

        The generic version uses cdf differences, which is exact for kernels
        without atoms; atomic kernels override with half-open conventions.
        """
        return np.asarray(self.cdf(t, u1)) - np.asarray(self.cdf(t, u0))

    def seg_first(self, t, u0, u1):
        """int_{[u0,u1)} (v - u0) K(t, dv), vectorized over segment edges.

        By parts this is (u1-u0) F(u1) - int_{u0}^{u1} F - u0-shift terms;
        the generic version integrates the cdf with a 7-point Gauss rule per
        segment (exact enough for smooth cdfs on solver meshes).
        """
        u0 = np.asarray(u0, dtype=float)
        u1 = np.asarray(u1, dtype=float)
        nodes, weights = gauss_legendre(7)
        span = u1 - u0
        acc = np.zeros_like(span)
        for z, w in zip(nodes, weights):
            acc += w * np.asarray(self.cdf(t, u0 + span * z))
        return span * (np.asarray(self.cdf(t, u1)) - acc)

    def to_config(self):
        raise NotImplementedError


class Dirac(LifetimeKernel):
    """Deterministic lifetime a."""

    kind = "dirac"
    time_invariant = True

    def __init__(self, a):
        if a <= 0:
            raise DomainError(f"lifetimes must be positive, got a={a}")
        self.a = float(a)

    def sample(self, t, rng, size=None):
        n = size if size is not None else np.size(t)
        return np.full(n, self.a)

    def moment(self, t, p):
        return self.a**p

    def expect(self, t, f, kinks=()):
        return float(f(self.a))

    def cdf(self, t, w):
        return (np.asarray(w, dtype=float) >= self.a).astype(float)

    def atoms(self, t):
        return [(self.a, 1.0)]

    def seg_mass(self, t, u0, u1):
        u0 = np.asarray(u0, dtype=float)
        u1 = np.asarray(u1, dtype=float)
        return ((u0 <= self.a) & (self.a < u1)).astype(float)

    def seg_first(self, t, u0, u1):
        return (self.a - np.asarray(u0, dtype=float)) * self.seg_mass(t, u0, u1)

    def to_config(self):
        return {"kind": "dirac", "a": self.a}

    def __repr__(self):
        return f"Dirac({self.a})"


class Exponential(LifetimeKernel):
    """Lifetime with hazard d(.) read on absolute time: born at t, the lifespan
    y has survival exp(-int_t^{t+y} d).

    With constant d this is Exponential(d) independent of birth time (the
    Markovian case); a varying d makes the kernel genuinely time-dependent.
    """

    kind = "exponential"

    def __init__(self, death_rate):
        if not isinstance(death_rate, RateFunction):
            death_rate = rate_from_config(death_rate)
        self.death_rate = death_rate
        # lifetimes must be a.s. finite: the hazard must accumulate without bound
        if float(death_rate.cumulative(0.0, 1e12)) < 200.0:
            raise DomainError("death rate accumulates too little mass; lifetime law defective")
        from .rates import Constant

        self._const = death_rate.beta if isinstance(death_rate, Constant) else None
        self.time_invariant = self._const is not None

    def sample(self, t, rng, size=None):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        n = size if size is not None else len(t)
        e = rng.exponential(size=n)
        if self._const is not None:
            return e / self._const
        return np.asarray(self.death_rate.invert_forward(t, e))

    def survival(self, t, w):
        return np.exp(-self.death_rate.cumulative(t, np.asarray(t) + np.asarray(w)))

    def cdf(self, t, w):
        return 1.0 - self.survival(t, w)

    def moment(self, t, p):
        if self._const is not None:
            return gamma_fn(p + 1) / self._const**p
        # int y^p dens dy = p * int y^{p-1} survival dy (by parts)
        return adaptive_quad(
            lambda u: p * u ** (p - 1) * self.survival(t, u), 0.0, np.inf, tol=EXPECT_TOL
        )

    def expect(self, t, f, kinks=()):
        d = self.death_rate

        def integrand(u):
            return f(u) * float(d.value(t + u)) * float(self.survival(t, u))

        return adaptive_quad(integrand, 0.0, np.inf, points=kinks, tol=EXPECT_TOL)

    def seg_mass(self, t, u0, u1):
        return self.survival(t, u0) - self.survival(t, u1)

    def seg_first(self, t, u0, u1):
        # by parts: -(u1-u0) surv(u1) + int_{u0}^{u1} surv
        u0 = np.asarray(u0, dtype=float)
        u1 = np.asarray(u1, dtype=float)
        s1 = np.asarray(self.survival(t, u1))
        if self._const is not None:
            int_surv = (np.asarray(self.survival(t, u0)) - s1) / self._const
        else:
            nodes, weights = gauss_legendre(7)
            span = u1 - u0
            acc = np.zeros_like(span)
            for z, w in zip(nodes, weights):
                acc += w * np.asarray(self.survival(t, u0 + span * z))
            int_surv = span * acc
        return int_surv - (u1 - u0) * s1

    def __repr__(self):
        return f"Exponential({self.death_rate!r})"


class Pareto(LifetimeKernel):
    """Heavy-tailed lifetime with density k / y^{k+1} on [1, infinity)."""

    kind = "pareto"
    time_invariant = True
    heavy_tailed = True

    def __init__(self, k):
        if k <= 0:
            raise DomainError(f"tail index must be positive, got k={k}")
        self.k = float(k)

    def sample(self, t, rng, size=None):
        n = size if size is not None else np.size(t)
        return rng.random(n) ** (-1.0 / self.k)

    def moment(self, t, p):
        if p >= self.k:
            return np.inf
        return self.k / (self.k - p)

    def expect(self, t, f, kinks=()):
        # substitute w = y^{-k}: integral becomes int_0^1 f(w^{-1/k}) dw
        wk = sorted({float(c) ** (-self.k) for c in kinks if c > 1})
        return adaptive_quad(
            lambda w: f(w ** (-1.0 / self.k)), 0.0, 1.0, points=wk, tol=EXPECT_TOL
        )

    def cdf(self, t, w):
        w = np.asarray(w, dtype=float)
        return np.where(w < 1.0, 0.0, 1.0 - np.minimum(w, 1.0 / np.finfo(float).tiny) ** (-self.k))

    def seg_mass(self, t, u0, u1):
        a = np.maximum(np.asarray(u0, dtype=float), 1.0)
        c = np.maximum(np.asarray(u1, dtype=float), 1.0)
        return np.maximum(a, 1e-300) ** (-self.k) - np.maximum(c, 1e-300) ** (-self.k)

    def seg_first(self, t, u0, u1):
        # int_{[a,c)} v dK with a = max(u0,1), then shift by u0 * mass
        k = self.k
        u0 = np.asarray(u0, dtype=float)
        a = np.maximum(u0, 1.0)
        c = np.maximum(np.asarray(u1, dtype=float), 1.0)
        if k == 1.0:
            vm = np.log(np.maximum(c / np.maximum(a, 1e-300), 1.0))
        else:
            vm = k / (k - 1.0) * (a ** (1.0 - k) - c ** (1.0 - k))
        return vm - u0 * self.seg_mass(t, u0, u1)

    def to_config(self):
        return {"kind": "pareto", "k": self.k}

    def __repr__(self):
        return f"Pareto({self.k})"


class TwoPointDeath(LifetimeKernel):
    """Everyone dies at the next absolute death moment among {1, 2}.

    Born at t < 1: lifetime is 1-t or 2-t with probability 1/2 each; born at
    t in [1, 2): lifetime is 2-t.  Undefined for t >= 2.  The kernel map is
    not weakly continuous at t = 1; it exists as a closed-form test fixture.
    """

    kind = "two_point_death"
    weakly_continuous = False

    def _check(self, t):
        if np.any(np.asarray(t) >= 2.0) or np.any(np.asarray(t) < 0.0):
            raise DomainError("two_point_death kernel is defined for birth times in [0, 2)")

    def atoms(self, t):
        self._check(t)
        t = float(t)
        if t < 1.0:
            return [(1.0 - t, 0.5), (2.0 - t, 0.5)]
        return [(2.0 - t, 1.0)]

    def sample(self, t, rng, size=None):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        self._check(t)
        n = size if size is not None else len(t)
        u = rng.random(n)
        first = np.where(u < 0.5, 1.0 - t, 2.0 - t)
        return np.where(t < 1.0, first, 2.0 - t)

    def moment(self, t, p):
        return sum(m * y**p for y, m in self.atoms(t))

    def expect(self, t, f, kinks=()):
        return sum(m * f(y) for y, m in self.atoms(t))

    def cdf(self, t, w):
        w = np.asarray(w, dtype=float)
        out = np.zeros_like(w)
        for y, m in self.atoms(t):
            out = out + m * (w >= y)
        return out

    def seg_mass(self, t, u0, u1):
        u0 = np.asarray(u0, dtype=float)
        u1 = np.asarray(u1, dtype=float)
        out = np.zeros_like(u0)
        for y, m in self.atoms(t):
            out = out + m * ((u0 <= y) & (y < u1))
        return out

    def seg_first(self, t, u0, u1):
        u0 = np.asarray(u0, dtype=float)
        u1 = np.asarray(u1, dtype=float)
        out = np.zeros_like(u0)
        for y, m in self.atoms(t):
            out = out + m * (y - u0) * ((u0 <= y) & (y < u1))
        return out

    def to_config(self):
        return {"kind": "two_point_death"}

    def __repr__(self):
        return "TwoPointDeath()"


class TabulatedCdf(LifetimeKernel):
    """Piecewise-linear cdf on a lifetime grid (time-invariant).

    The implied density is piecewise constant; moments are exact for the
    interpolant, so the only approximation is the tabulation itself.
    """

    kind = "tabulated_cdf"
    time_invariant = True

    def __init__(self, lifetimes, cdf):
        y = np.asarray(lifetimes, dtype=float)
        c = np.asarray(cdf, dtype=float)
        if y.ndim != 1 or y.shape != c.shape or len(y) < 2:
            raise DomainError("lifetimes and cdf must be equal-length 1d arrays, len >= 2")
        if y[0] < 0 or np.any(np.diff(y) <= 0):
            raise DomainError("lifetimes must be nonnegative and strictly increasing")
        if c[0] != 0.0 or c[-1] != 1.0 or np.any(np.diff(c) < 0):
            raise DomainError("cdf must rise from 0 to 1 monotonically")
        self.lifetimes = y
        self.cdf_values = c
        self._dens = np.diff(c) / np.diff(y)

    def sample(self, t, rng, size=None):
        n = size if size is not None else np.size(t)
        return np.interp(rng.random(n), self.cdf_values, self.lifetimes)

    def moment(self, t, p):
        y = self.lifetimes
        return float(
            np.sum(self._dens * (y[1:] ** (p + 1) - y[:-1] ** (p + 1)) / (p + 1))
        )

    def expect(self, t, f, kinks=()):
        pts = sorted(set(self.lifetimes[1:-1]) | {float(k) for k in kinks})

        def integrand(u):
            i = np.clip(
                np.searchsorted(self.lifetimes, u, side="right") - 1,
                0,
                len(self._dens) - 1,
            )
            return f(u) * self._dens[i]

        return adaptive_quad(
            integrand, self.lifetimes[0], self.lifetimes[-1], points=pts, tol=EXPECT_TOL
        )

    def cdf(self, t, w):
        return np.interp(np.asarray(w, dtype=float), self.lifetimes, self.cdf_values)

    def seg_first(self, t, u0, u1):
        # exact for the piecewise-constant density: sum overlaps per piece
        u0 = np.asarray(u0, dtype=float)
        u1 = np.asarray(u1, dtype=float)
        out = np.zeros_like(u0)
        y = self.lifetimes
        for p in range(len(self._dens)):
            lo = np.maximum(u0, y[p])
            hi = np.minimum(u1, y[p + 1])
            span = np.maximum(hi - lo, 0.0)
            out += self._dens[p] * span * (0.5 * (lo + hi) - u0) * (span > 0)
        return out

    def to_config(self):
        return {
            "kind": "tabulated_cdf",
            "lifetimes": self.lifetimes.tolist(),
            "cdf": self.cdf_values.tolist(),
        }

    def __repr__(self):
        return f"TabulatedCdf(<{len(self.lifetimes)} nodes>)"


_KERNEL_KINDS = {
    "dirac": lambda d: Dirac(d["a"]),
    "exponential": lambda d: Exponential(d["death_rate"]),
    "pareto": lambda d: Pareto(d["k"]),
    "two_point_death": lambda d: TwoPointDeath(),
    "tabulated_cdf": lambda d: TabulatedCdf(d["lifetimes"], d["cdf"]),
}


def kernel_from_config(cfg):
    """Build a LifetimeKernel from its JSON-config fragment."""
    try:
        kind = cfg["kind"]
        return _KERNEL_KINDS[kind](cfg)
    except KeyError as e:
        raise DomainError(f"unknown or incomplete kernel config: {cfg!r} ({e})") from e


def kernel_moment(kernel, t, p):
    """p-th moment of the lifetime born at t."""
    return kernel.moment(t, p)


def kernel_expect(kernel, t, f, kinks=()):
    """int f(y) K(t, dy)."""
    return kernel.expect(t, f, kinks=kinks)
