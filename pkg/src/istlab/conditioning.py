"""Conditioned trees via harmonic reweighting of the contour dynamics.

Conditioning a tree on extinction, survival, or a height comparison is a
change of measure by a harmonic function h built from a scale table:

    h = S (extinction), 1 - S (survival),
        S_T (height <= T), 1 - S_T (height > T),

under which the dynamics stay of splitting-tree type with birth rate
b'(x) = b(x) (Kh)(x) / h(x) and lifetime kernel K^h(x, dy) proportional to
h(x+y) K(x, dy).  h is consumed as a grid table with linear interpolation;
for the open-ended events the grid only approximates the monotone limit on
its first half, so the tail is extrapolated log-linearly (exact in the
homogeneous case, where S is exponential).  Conditioned lifetimes are drawn
by rejection against the base kernel, with a grid inverse-CDF fallback when
the acceptance rate collapses.
"""

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .contour import simulate_pdmp_batch
from .errors import DomainError, RegimeError
from .model.kernels import LifetimeKernel, kernel_expect
from .model.rates import Tabulated
from .scale import _kernel_matrix
from .seeds import spawn_rng
from .stats import ks_two_sample
from .tree import tree_summaries_mc

EXT = "Ext"
EXTC = "ExtC"
HEIGHT_LE = "HeightLE"
HEIGHT_GT = "HeightGT"
EVENTS = (EXT, EXTC, HEIGHT_LE, HEIGHT_GT)

#: conditioned-kernel sampling: below this acceptance estimate the
#: rejection loop is replaced by a grid inverse-CDF draw
MIN_ACCEPT = 1e-4
_CDF_GRID = 4096


@dataclass(frozen=True)
class ConditionedParams:
    """Frozen (b', K^h) description ready for the simulators."""

    base_b: object
    base_K: object
    event: str
    T: float
    grid: np.ndarray
    h_values: np.ndarray
    kh_values: np.ndarray
    bprime_values: np.ndarray
    x_min: float
    h_increasing: bool
    tail_lambda: float
    tail_logc: float
    tail_rms: float
    is_identity: bool = False
    notes: tuple = ()

    def h(self, x):
        """Harmonic evaluated anywhere: table interpolation inside the grid,
        event-specific continuation beyond it."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        v = np.interp(x, self.grid, self.h_values)
        beyond = x > self.grid[-1]
        if np.any(beyond):
            if self.event == HEIGHT_LE:
                v[beyond] = 0.0
            elif self.event == HEIGHT_GT:
                v[beyond] = 1.0
            else:
                tail = np.exp(self.tail_logc - self.tail_lambda * x[beyond])
                v[beyond] = np.clip(tail, 0.0, 1.0)
        return v

    def kh(self, x):
        """(Kh)(x) interpolated from the build grid, constant beyond."""
        x = np.asarray(x, dtype=float)
        return np.interp(x, self.grid, self.kh_values)

    def rate(self):
        """Conditioned birth rate as a tabulated rate function.

        Grids floored at x_min are extended to 0 with the boundary value;
        below the floor the transform is not trusted anyway and the
        simulators report violations there.
        """
        if self.is_identity:
            return self.base_b
        grid, vals = self.grid, self.bprime_values
        if grid[0] > 0.0:
            grid = np.concatenate([[0.0], grid])
            vals = np.concatenate([[vals[0]], vals])
        return Tabulated(grid, vals)

    def kernel(self):
        """Conditioned lifetime kernel (h-reweighting of the base)."""
        if self.is_identity:
            return self.base_K
        return ConditionedKernel(self)

    def _quantiles(self, x, u):
        """Lifetime quantiles at level x by vectorized cdf bisection."""
        hi = 1.0
        top = float(np.max(u))
        while float(self.base_K.cdf(x, hi)) < top and hi < 1e15:
            hi *= 2.0
        lo_v = np.zeros_like(u)
        hi_v = np.full_like(u, hi)
        for _ in range(60):
            mid = 0.5 * (lo_v + hi_v)
            below = np.asarray(self.base_K.cdf(x, mid), float) < u
            lo_v = np.where(below, mid, lo_v)
            hi_v = np.where(below, hi_v, mid)
        return 0.5 * (lo_v + hi_v)

    def normalization(self, xs, segments=2**15):
        """Total mass of K^h(x, .), with the numerator re-integrated by a
        method independent of the build pass: atom sums for discrete
        kernels, an equal-mass quantile midpoint rule otherwise.  The rule
        splits at the end of the grid, where h switches to its event
        continuation: a cell straddling that jump would otherwise misassign
        a whole mass sliver, which dominates when the in-grid mass is thin.
        Equals 1 up to the rule's error; sharp at grid points (between them
        the denominator is itself interpolated)."""
        u_mid = (np.arange(segments) + 0.5) / segments
        out = []
        for x in np.atleast_1d(np.asarray(xs, dtype=float)):
            atoms = self.base_K.atoms(x)
            if atoms is not None:
                num = sum(w * float(self.h(x + y)) for y, w in atoms)
            else:
                y_star = float(self.grid[-1]) - x
                f_star = float(self.base_K.cdf(x, y_star)) if y_star > 0 else 0.0
                num = 0.0
                if f_star > 0.0:
                    ys = self._quantiles(x, u_mid * f_star)
                    num += f_star * float(np.mean(self.h(x + ys)))
                if f_star < 1.0:
                    if self.event == HEIGHT_LE:
                        pass  # h vanishes beyond the grid
                    elif self.event == HEIGHT_GT:
                        num += 1.0 - f_star
                    else:
                        u = f_star + u_mid * (1.0 - f_star)
                        ys = self._quantiles(x, np.minimum(u, 1.0 - 1e-14))
                        num += (1.0 - f_star) * float(np.mean(self.h(x + ys)))
            out.append(num / self.kh(x))
        return np.asarray(out)

    def dump_csv(self, fp, moment_stride=1):
        """CSV of (x, conditioned rate, first three conditioned moments)."""
        fp.write("x,b_prime,m1,m2,m3\n")
        kern = self.kernel()
        for x in self.grid[::moment_stride]:
            ms = [kern.moment(float(x), p) for p in (1, 2, 3)]
            bp = float(np.interp(x, self.grid, self.bprime_values))
            fp.write(f"{float(x)!r},{bp!r},{ms[0]!r},{ms[1]!r},{ms[2]!r}\n")

    def meta(self):
        return {
            "event": self.event,
            "T": self.T,
            "x_min": self.x_min,
            "grid_points": len(self.grid),
            "tail_lambda": self.tail_lambda,
            "tail_rms": self.tail_rms,
            "is_identity": self.is_identity,
            "notes": list(self.notes),
        }


class ConditionedKernel(LifetimeKernel):
    """K^h(x, dy) = h(x+y) K(x, dy) / (Kh)(x), sampled by rejection."""

    kind = "conditioned"
    time_invariant = False

    def __init__(self, params):
        self.params = params
        self.heavy_tailed = params.base_K.heavy_tailed
        self.weakly_continuous = params.base_K.weakly_continuous

    def _bound(self, t):
        """Upper bound of y -> h(t+y): monotone h makes this an endpoint."""
        if self.params.h_increasing:
            return np.ones(len(t))
        return np.maximum(self.params.h(t), 1e-300)

    def sample(self, t, rng, size=None):
        p = self.params
        scalar = size is None and np.ndim(t) == 0
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if size is not None and len(t) == 1:
            t = np.full(size, t[0])
        out = np.empty(len(t))
        M = self._bound(t)
        accept_est = p.kh(t) / M
        direct = accept_est < MIN_ACCEPT
        if np.any(direct):
            warnings.warn(
                "conditioned-kernel acceptance below "
                f"{MIN_ACCEPT:g} at {int(direct.sum())} points; "
                "using grid inverse-CDF",
                RuntimeWarning,
            )
            for i in np.flatnonzero(direct):
                out[i] = self._inverse_cdf_draw(t[i], rng)
        todo = np.flatnonzero(~direct)
        rounds = 0
        while len(todo):
            rounds += 1
            y = np.atleast_1d(p.base_K.sample(t[todo], rng))
            keep = rng.random(len(todo)) * M[todo] < p.h(t[todo] + y)
            out[todo[keep]] = y[keep]
            todo = todo[~keep]
            if rounds >= 10_000 and len(todo):
                warnings.warn(
                    "conditioned-kernel rejection stalled; "
                    f"grid inverse-CDF for {len(todo)} points",
                    RuntimeWarning,
                )
                for i in todo:
                    out[i] = self._inverse_cdf_draw(t[i], rng)
                break
        return float(out[0]) if scalar else out

    def _inverse_cdf_draw(self, t, rng):
        """Single draw through a tabulated h-weighted CDF of K(t, .)."""
        p = self.params
        base = p.base_K
        hi = 1.0
        while float(base.cdf(t, hi)) < 1.0 - 1e-10 and hi < 1e12:
            hi *= 2.0
        edges = np.linspace(0.0, hi, _CDF_GRID + 1)
        mass = np.diff(np.asarray(base.cdf(t, edges), dtype=float))
        mids = 0.5 * (edges[:-1] + edges[1:])
        w = mass * p.h(t + mids)
        total = w.sum()
        if total <= 0.0:
            raise RegimeError(f"conditioned kernel has no mass at t={t}")
        cum = np.cumsum(w) / total
        u = rng.random()
        j = int(np.searchsorted(cum, u, side="left"))
        c0 = cum[j - 1] if j > 0 else 0.0
        frac = (u - c0) / max(cum[j] - c0, 1e-300)
        return float(edges[j] + frac * (edges[j + 1] - edges[j]))

    def moment(self, t, p):
        num = kernel_expect(
            self.params.base_K,
            t,
            lambda y: self.params.h(t + y) * y**p,
            kinks=(max(self.params.T - t, 0.0),),
        )
        return float(num / self.params.kh(t))

    def expect(self, t, f, kinks=()):
        num = kernel_expect(
            self.params.base_K,
            t,
            lambda y: self.params.h(t + y) * f(y),
            kinks=tuple(kinks) + (max(self.params.T - t, 0.0),),
        )
        return float(num / self.params.kh(t))

    def to_config(self):
        return {
            "kind": self.kind,
            "event": self.params.event,
            "base": self.params.base_K.to_config(),
        }


def _tail_fit(grid, values):
    """Log-linear fit on the last tenth of the grid; returns
    (lam, logc, rms) of log h ~ logc - lam x."""
    n = max(8, len(grid) // 10)
    xs, vs = grid[-n:], values[-n:]
    good = vs > 0
    if good.sum() < 3:
        return np.inf, -np.inf, np.nan
    slope, intercept = np.polyfit(xs[good], np.log(vs[good]), 1)
    resid = np.log(vs[good]) - (slope * xs[good] + intercept)
    return float(-slope), float(intercept), float(np.sqrt(np.mean(resid**2)))


def condition_params(b, K, table, event, x_min=None, limit_fraction=0.5):
    """Build (b', K^h) for the requested conditioning event.

    table: a solved scale table; for the height events it *is* the harmonic
    input (its T defines the event), for Ext/ExtC only its first
    limit_fraction approximates the infinite-horizon limit, so the grid is
    truncated there and continued by the fitted exponential tail.
    """
    if event not in EVENTS:
        raise DomainError(f"unknown conditioning event {event!r}")
    increasing = event in (EXTC, HEIGHT_GT)

    if event in (EXT, EXTC):
        keep = table.grid <= table.T * limit_fraction
        if keep.sum() < 16:
            raise DomainError("scale table too short to truncate for the limit")
        grid = table.grid[keep].copy()
        S = table.values[keep].copy()
    else:
        grid = table.grid.copy()
        S = table.values.copy()

    h_vals = (1.0 - S) if increasing else S
    notes = []

    if event == HEIGHT_GT and np.any(S[grid > 0] >= 1.0 - 1e-12):
        raise RegimeError(
            "height-exceedance conditioning needs S_T(x) < 1 for x > 0; "
            "the supplied table reaches 1"
        )
    if np.max(h_vals) < 1e-9:
        raise RegimeError(
            f"degenerate conditioning: harmonic for {event} vanishes "
            "on the whole grid"
        )

    spread = float(np.max(h_vals) - np.min(h_vals))
    if spread <= 1e-12 and np.min(h_vals) > 0:
        return ConditionedParams(
            base_b=b, base_K=K, event=event, T=float(table.T),
            grid=grid, h_values=h_vals, kh_values=h_vals.copy(),
            bprime_values=np.asarray(b.value(grid), dtype=float),
            x_min=0.0, h_increasing=increasing,
            tail_lambda=0.0, tail_logc=float(np.log(h_vals[0])),
            tail_rms=0.0, is_identity=True,
            notes=("constant harmonic: identity transform",),
        )

    if increasing:
        if x_min is None:
            x_min = 4.0 * table.mesh
        sel = grid >= x_min
        if sel.sum() < 8:
            raise DomainError("x_min leaves too few grid points")
        grid, h_vals, S = grid[sel], h_vals[sel], S[sel]
        if h_vals[0] <= 0:
            raise RegimeError(
                f"harmonic for {event} vanishes at the floored start "
                f"x_min={x_min}"
            )
    else:
        x_min = 0.0

    if event in (EXT, EXTC):
        lam, logc, rms = _tail_fit(grid, h_vals)
        if not np.isfinite(lam):
            raise RegimeError(
                f"cannot extrapolate the harmonic tail for {event}"
            )
        if rms > 1e-2:
            notes.append(f"tail extrapolation rough (rms {rms:.2e})")
    else:
        lam, logc, rms = np.nan, np.nan, 0.0

    params_stub = ConditionedParams(
        base_b=b, base_K=K, event=event, T=float(table.T),
        grid=grid, h_values=h_vals, kh_values=np.ones_like(h_vals),
        bprime_values=np.ones_like(h_vals), x_min=float(x_min),
        h_increasing=increasing,
        tail_lambda=float(lam), tail_logc=float(logc), tail_rms=float(rms),
        notes=tuple(notes),
    )
    if np.any(h_vals <= 0.0) and event != HEIGHT_LE:
        raise RegimeError(f"harmonic for {event} vanishes inside the grid")

    # exact kernel integral of the piecewise-linear h over the grid span
    # (same segment machinery as the scale solver), plus the event-specific
    # continuation beyond the last grid point
    kh = _kernel_matrix(K, grid) @ h_vals
    u_end = grid[-1] - grid
    if event == HEIGHT_GT:
        # mass at or beyond the span carries h = 1; nudge below the edge so
        # an atom exactly on it is kept
        for j, x in enumerate(grid):
            w = u_end[j] * (1.0 - 1e-12)
            kh[j] += 1.0 - float(K.cdf(float(x), w))
    elif event in (EXT, EXTC):
        for j, x in enumerate(grid):
            u = float(u_end[j])
            kh[j] += kernel_expect(
                K, float(x),
                lambda y, x=float(x), u=u: np.where(
                    np.asarray(y) >= u, params_stub.h(x + np.asarray(y)), 0.0
                ),
                kinks=(u,),
            )
    hsafe = np.where(h_vals > 0, h_vals, np.inf)
    bprime = np.asarray(b.value(grid), dtype=float) * kh / hsafe

    return ConditionedParams(
        base_b=b, base_K=K, event=event, T=float(table.T),
        grid=grid, h_values=h_vals, kh_values=kh, bprime_values=bprime,
        x_min=float(x_min), h_increasing=increasing,
        tail_lambda=float(lam), tail_logc=float(logc), tail_rms=float(rms),
        notes=tuple(notes),
    )


def sample_conditioned_kernel(params, x, seed, size=None):
    """Draw one (or size) conditioned lifetimes at level x."""
    rng = seed if isinstance(seed, np.random.Generator) else spawn_rng(seed)
    kern = params.kernel()
    got = kern.sample(np.full(size or 1, float(x)), rng, size=size or 1)
    return got if size is not None else float(got[0])


def simulate_conditioned(params, x0, T, horizon, N, seed, threads=None):
    """Simulate N conditioned paths and trees and cross-validate.

    Returns a report dict: PDMP absorption statistics, event-specific
    violation counts, conditioned-tree summaries, and two-sample KS
    comparisons against base trees rejection-filtered on the event.

    The transform conditions the contour.  Only events that are
    intersections over child subtrees (Ext, HeightLE) leave the tree a
    branching process with the transformed pair, so the tree-level
    cross-validation runs for those two events only; for ExtC and
    HeightGT the report carries path statistics alone.
    """
    x0 = float(x0)
    floored = x0 < params.x_min
    if floored:
        x0 = params.x_min
    bprime, kprime = params.rate(), params.kernel()

    high = params.T if params.event == HEIGHT_LE else None
    run = simulate_pdmp_batch(
        bprime, kprime, x0, N, seed, horizon=horizon, high=high,
        record_paths=params.event == EXTC, threads=threads,
    )
    absorbed = run["exit_kind"] == 1
    report = {
        "event": params.event,
        "x0": x0,
        "floored": bool(floored),
        "absorbed_freq": float(np.mean(absorbed)),
        "mean_absorption_time": float(np.mean(run["exit_time"][absorbed]))
        if np.any(absorbed)
        else float("nan"),
        "final_value_mean": float(np.mean(run["final_value"])),
    }
    if params.event == HEIGHT_LE:
        report["height_violations"] = int(np.sum(run["exit_kind"] == 2))
    if params.event == EXTC:
        # below x_min the tabulated rate is floored, so paths may dip
        # under the floor or even absorb; both counts are reported
        report["absorbed_violations"] = int(np.sum(absorbed))
        reentries = 0
        for path, fv, dead in zip(run["paths"], run["final_value"], absorbed):
            lo = float(np.min(path.jump_from)) if len(path.jump_from) else x0
            end = 0.0 if dead else float(fv)
            if min(lo, end) < params.x_min:
                reentries += 1
        report["floor_reentries"] = reentries

    if params.event not in (EXT, HEIGHT_LE):
        report["ks_vs_filtered_base"] = {}
        return report

    # the mid-time population is a compared statistic; the Ext filter
    # probes later, where "extinct by the probe" approximates "extinct
    # ever" with a tail error e^{-probe} instead of e^{-T/2}
    levels = (0.5 * T, 0.75 * T)
    cond = tree_summaries_mc(
        bprime, kprime, x0, T, N,
        spawn_rng(seed, 1).integers(2**63), levels=levels, threads=threads,
    )
    base = tree_summaries_mc(
        params.base_b, params.base_K, x0, T, N,
        spawn_rng(seed, 2).integers(2**63), levels=levels, threads=threads,
    )

    pop_key = ("population", 0.5 * T)
    probe_key = ("population", 0.75 * T)
    if params.event == EXT:
        mask = base[probe_key] == 0
        if params.T <= T:
            mask &= base["height"] < params.T
    else:
        mask = base["height"] < params.T
    report["filter_fraction"] = float(np.mean(mask))

    ks = {}
    for name in ("height", "length"):
        if mask.sum() >= 30:
            stat, pv = ks_two_sample(cond[name], base[name][mask])
        else:
            stat, pv = float("nan"), float("nan")
        ks[name] = {"stat": stat, "pvalue": pv}
    if mask.sum() >= 30:
        stat, pv = ks_two_sample(cond[pop_key], base[pop_key][mask])
        ks["population_mid"] = {"stat": stat, "pvalue": pv}
    report["ks_vs_filtered_base"] = ks
    report["conditioned_means"] = {
        "height": float(np.mean(cond["height"])),
        "length": float(np.mean(cond["length"])),
        "population_mid": float(np.mean(cond[pop_key])),
    }
    if params.event == HEIGHT_LE:
        report["tree_height_violations"] = int(
            np.sum(cond["height"] > params.T + 1e-12)
        )
    return report
