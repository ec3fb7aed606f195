"""Birth-rate functions b(t) with exact cumulative integrals and inverses.

Every variant carries a closed-form (or exactly-integrated-interpolant)
cumulative ``int_{t0}^{t1} b``, an upper bound on subintervals for thinning,
and monotone inverses of the cumulative in both directions.  The inverses are
what the path simulators use to draw jump times, so they are vectorized.
"""

import numpy as np

from ..errors import DomainError
from ..numerics import solve_monotone


class RateFunction:
    """Nonnegative rate t -> b(t) on [0, infinity)."""

    kind = "abstract"

    def value(self, t):
        raise NotImplementedError

    def cumulative(self, t0, t1):
        """int_{t0}^{t1} b(s) ds, elementwise.  Requires t1 >= t0."""
        raise NotImplementedError

    def bound_on(self, t0, t1):
        """An upper bound for b on [t0, t1] (tight for monotone variants)."""
        raise NotImplementedError

    def invert_forward(self, t, target):
        """Smallest u >= 0 with cumulative(t, t+u) = target, elementwise.

        Returns inf where the total remaining mass never reaches the target.
        """
        t = np.asarray(t, dtype=float)
        target = np.asarray(target, dtype=float)
        hi = np.maximum(np.ones_like(t + target), target)
        for _ in range(200):
            short = self.cumulative(t, t + hi) < target
            if not np.any(short):
                break
            hi = np.where(short, 2.0 * hi, hi)
        else:
            return np.where(self.cumulative(t, t + hi) < target, np.inf, hi)
        return solve_monotone(
            lambda u: self.cumulative(t, t + u),
            np.zeros_like(hi),
            hi,
            target,
            deriv=lambda u: self.value(t + u),
        )

    def invert_backward(self, x, target):
        """u in [0, x] with cumulative(x-u, x) = target.

        Caller guarantees target <= cumulative(0, x).
        """
        x = np.asarray(x, dtype=float)
        target = np.asarray(target, dtype=float)
        return solve_monotone(
            lambda u: self.cumulative(x - u, x),
            np.zeros_like(x),
            x.copy(),
            target,
            deriv=lambda u: self.value(x - u),
        )

    def to_config(self):
        raise NotImplementedError

    def _check_order(self, t0, t1):
        if np.any(np.asarray(t1) < np.asarray(t0)):
            raise DomainError("cumulative_rate requires t1 >= t0")


class Constant(RateFunction):
    """b(t) = beta."""

    kind = "constant"

    def __init__(self, beta):
        if beta < 0:
            raise DomainError(f"rate must be nonnegative, got beta={beta}")
        self.beta = float(beta)

    def value(self, t):
        return np.full_like(np.asarray(t, dtype=float), self.beta)

    def cumulative(self, t0, t1):
        self._check_order(t0, t1)
        return self.beta * (np.asarray(t1, dtype=float) - t0)

    def bound_on(self, t0, t1):
        return self.beta

    def invert_forward(self, t, target):
        target = np.asarray(target, dtype=float)
        if self.beta == 0.0:
            return np.where(target <= 0.0, 0.0, np.inf)
        return target / self.beta

    def invert_backward(self, x, target):
        return np.asarray(target, dtype=float) / self.beta

    def to_config(self):
        return {"kind": "constant", "beta": self.beta}

    def __repr__(self):
        return f"Constant({self.beta})"


class Periodic(Constant):
    """Constant rate beta tagged with the offset c of a periodic criticality driver.

    The rate itself is flat; the periodicity lives in the kernel mean, and the
    offset is consumed by the criticality routines.
    """

    kind = "periodic"

    def __init__(self, beta, psi_offset=0.0):
        super().__init__(beta)
        self.psi_offset = float(psi_offset)

    def to_config(self):
        return {"kind": "periodic", "beta": self.beta, "psi_offset": self.psi_offset}

    def __repr__(self):
        return f"Periodic({self.beta}, psi_offset={self.psi_offset})"


class AsymptoticallyCritical(RateFunction):
    """b(t) = 1 + c / (1 + t); approaches the critical constant 1 like c/t."""

    kind = "asymptotically_critical"

    def __init__(self, c):
        if c < -1:
            raise DomainError(f"b(0) = 1 + c must be nonnegative, got c={c}")
        self.c = float(c)

    def value(self, t):
        t = np.asarray(t, dtype=float)
        return 1.0 + self.c / (1.0 + t)

    def cumulative(self, t0, t1):
        self._check_order(t0, t1)
        t0 = np.asarray(t0, dtype=float)
        t1 = np.asarray(t1, dtype=float)
        return (t1 - t0) + self.c * np.log((1.0 + t1) / (1.0 + t0))

    def bound_on(self, t0, t1):
        # monotone in t, so the sup sits at an endpoint
        return max(float(self.value(t0)), float(self.value(t1)))

    def to_config(self):
        return {"kind": "asymptotically_critical", "c": self.c}

    def __repr__(self):
        return f"AsymptoticallyCritical({self.c})"


class PiecewiseConstant(RateFunction):
    """Right-continuous step rate; the last piece extends to infinity."""

    kind = "piecewise_constant"

    def __init__(self, breakpoints, values):
        bp = np.asarray(breakpoints, dtype=float)
        vals = np.asarray(values, dtype=float)
        if bp.ndim != 1 or bp.shape != vals.shape or len(bp) == 0:
            raise DomainError("breakpoints and values must be equal-length 1d arrays")
        if bp[0] != 0.0 or np.any(np.diff(bp) <= 0):
            raise DomainError("breakpoints must start at 0 and strictly increase")
        if np.any(vals < 0):
            raise DomainError("rate values must be nonnegative")
        self.breakpoints = bp
        self.values = vals
        # prefix integral at each breakpoint
        self._prefix = np.concatenate(
            [[0.0], np.cumsum(vals[:-1] * np.diff(bp))]
        )

    def _antiderivative(self, t):
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.breakpoints, t, side="right") - 1
        idx = np.clip(idx, 0, len(self.values) - 1)
        return self._prefix[idx] + self.values[idx] * (t - self.breakpoints[idx])

    def value(self, t):
        t = np.asarray(t, dtype=float)
        idx = np.clip(
            np.searchsorted(self.breakpoints, t, side="right") - 1,
            0,
            len(self.values) - 1,
        )
        return self.values[idx]

    def cumulative(self, t0, t1):
        self._check_order(t0, t1)
        return self._antiderivative(t1) - self._antiderivative(t0)

    def bound_on(self, t0, t1):
        lo = np.searchsorted(self.breakpoints, t0, side="right") - 1
        hi = np.searchsorted(self.breakpoints, t1, side="right") - 1
        lo = max(lo, 0)
        hi = max(hi, 0)
        return float(np.max(self.values[lo : hi + 1]))

    def invert_forward(self, t, target):
        t = np.asarray(t, dtype=float)
        target = np.asarray(target, dtype=float)
        goal = self._antiderivative(t) + target
        end = self._prefix[-1]
        # segment containing the goal value of the antiderivative
        idx = np.searchsorted(self._prefix, goal, side="right") - 1
        idx = np.clip(idx, 0, len(self.values) - 1)
        with np.errstate(divide="ignore", invalid="ignore"):
            pos = self.breakpoints[idx] + (goal - self._prefix[idx]) / self.values[idx]
        # a zero-rate final piece can never reach the goal
        never = (goal > end) & (self.values[-1] == 0.0)
        pos = np.where(never, np.inf, pos)
        return pos - t

    def to_config(self):
        return {
            "kind": "piecewise_constant",
            "breakpoints": self.breakpoints.tolist(),
            "values": self.values.tolist(),
        }

    def __repr__(self):
        return f"PiecewiseConstant({self.breakpoints.tolist()}, {self.values.tolist()})"


class Tabulated(RateFunction):
    """Linear interpolation of sampled rates; constant beyond the last node.

    The cumulative is the exact integral of the interpolant (piecewise
    quadratic antiderivative), so additivity holds to rounding and the
    only approximation error is interpolation error, O(h^2 |b''|).
    """

    kind = "tabulated"

    def __init__(self, grid, values):
        g = np.asarray(grid, dtype=float)
        v = np.asarray(values, dtype=float)
        if g.ndim != 1 or g.shape != v.shape or len(g) < 2:
            raise DomainError("grid and values must be equal-length 1d arrays, len >= 2")
        if g[0] != 0.0 or np.any(np.diff(g) <= 0):
            raise DomainError("grid must start at 0 and strictly increase")
        if np.any(v < 0):
            raise DomainError("rate values must be nonnegative")
        self.grid = g
        self.values = v
        seg = 0.5 * (v[:-1] + v[1:]) * np.diff(g)
        self._prefix = np.concatenate([[0.0], np.cumsum(seg)])
        with np.errstate(divide="ignore", invalid="ignore"):
            self._slope = np.diff(v) / np.diff(g)

    def value(self, t):
        return np.interp(np.asarray(t, dtype=float), self.grid, self.values)

    def _antiderivative(self, t):
        t = np.asarray(t, dtype=float)
        idx = np.clip(
            np.searchsorted(self.grid, t, side="right") - 1, 0, len(self.grid) - 2
        )
        dt = t - self.grid[idx]
        inside = (
            self._prefix[idx] + self.values[idx] * dt + 0.5 * self._slope[idx] * dt * dt
        )
        beyond = self._prefix[-1] + self.values[-1] * (t - self.grid[-1])
        return np.where(t > self.grid[-1], beyond, inside)

    def cumulative(self, t0, t1):
        self._check_order(t0, t1)
        return self._antiderivative(t1) - self._antiderivative(t0)

    def bound_on(self, t0, t1):
        i0 = np.searchsorted(self.grid, t0, side="left")
        i1 = np.searchsorted(self.grid, t1, side="right")
        cand = [float(self.value(t0)), float(self.value(t1))]
        if i0 < i1:
            nodes = self.values[i0:i1]
            if len(nodes):
                cand.append(float(np.max(nodes)))
        return max(cand)

    def to_config(self):
        return {
            "kind": "tabulated",
            "grid": self.grid.tolist(),
            "values": self.values.tolist(),
        }

    def __repr__(self):
        return f"Tabulated(<{len(self.grid)} nodes on [0, {self.grid[-1]}]>)"


_RATE_KINDS = {
    "constant": lambda d: Constant(d["beta"]),
    "periodic": lambda d: Periodic(d["beta"], d.get("psi_offset", 0.0)),
    "asymptotically_critical": lambda d: AsymptoticallyCritical(d["c"]),
    "piecewise_constant": lambda d: PiecewiseConstant(d["breakpoints"], d["values"]),
    "tabulated": lambda d: Tabulated(d["grid"], d["values"]),
}


def rate_from_config(cfg):
    """Build a RateFunction from its JSON-config fragment."""
    try:
        kind = cfg["kind"]
        return _RATE_KINDS[kind](cfg)
    except KeyError as e:
        raise DomainError(f"unknown or incomplete rate config: {cfg!r} ({e})") from e


def cumulative_rate(b, t0, t1):
    """int_{t0}^{t1} b(s) ds."""
    return b.cumulative(t0, t1)
