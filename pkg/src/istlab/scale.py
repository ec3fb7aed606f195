"""Scale function S_T: two-barrier exit probabilities for the contour.

S_T(t) is the probability that the path started at level t hits 0 before
reaching level T.  It solves the fixed point

    S_T(t) = e^{-B(t)} (1 + int_0^t b(s) e^{B(s)}
             int_{[0, T-s)} S_T(s+v) K(s, dv) ds),    B(t) = int_0^t b,

which the solver iterates on a uniform grid: the outer integral by trapezoid
(precomputed lower-triangular matrix P with nonpositive exponents), the inner
kernel integral exactly against the piecewise-linear table (matrix W built
from the kernels' partial segment moments, with the half-open window [0,T-s)
respected so atoms sitting exactly at the barrier distance contribute zero).
S_T vanishes on [T, inf); the last grid node carries the left limit S_T(T-).

Closed forms for the Markovian case (lifetimes with hazard d) back the solver
as oracles and supply extinction probabilities by letting T grow.
"""

import json
from collections import namedtuple

import numpy as np

from .errors import ConsistencyError, ConvergenceError, DomainError
from .model.rates import Constant, RateFunction
from .numerics import gauss_legendre

MAX_SWEEPS = 10**4
#: mesh policy: target width 1/128, node count capped for memory
MESH_TARGET = 128
MESH_CAP = 4096


class ScaleTable:
    """Grid representation of S_T on [0, T] with linear interpolation.

    values[-1] stores the left limit S_T(T-); evaluation at t >= T returns 0
    (starting at the upper barrier loses immediately).
    """

    def __init__(self, T, grid, values, sweeps, sup_change, residual):
        self.T = float(T)
        self.grid = grid
        self.values = values
        self.mesh = float(grid[1] - grid[0])
        self.sweeps = int(sweeps)
        self.sup_change = float(sup_change)
        self.residual = float(residual)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        v = np.where(t < self.T, np.interp(t, self.grid, self.values), 0.0)
        return v if v.ndim else float(v)

    def left_limit(self):
        """S_T(T-): the last grid value."""
        return float(self.values[-1])

    def meta(self):
        return {
            "T": self.T,
            "M": len(self.grid) - 1,
            "mesh": self.mesh,
            "sweeps": self.sweeps,
            "sup_change": self.sup_change,
            "residual": self.residual,
        }

    def dump_csv(self, fp):
        fp.write("t,S\n")
        for t, v in zip(self.grid, self.values):
            fp.write(f"{float(t)!r},{float(v)!r}\n")
        fp.write(f"# meta {json.dumps(self.meta())}\n")

    def __repr__(self):
        return f"ScaleTable(T={self.T}, M={len(self.grid) - 1}, sweeps={self.sweeps})"


def default_mesh(T):
    """Node count for the target width, capped for memory."""
    return int(min(max(16, np.ceil(T * MESH_TARGET)), MESH_CAP))


def _kernel_matrix(K, grid):
    """W with (W @ S)_i = int_{[0, T-t_i)} S(t_i + v) K(t_i, dv) for the
    piecewise-linear table S; exact per segment via partial moments."""
    M = len(grid) - 1
    h = grid[1] - grid[0]
    W = np.zeros((M + 1, M + 1))
    if K.time_invariant:
        u = grid - grid[0]
        m0 = np.asarray(K.seg_mass(0.0, u[:-1], u[1:]), dtype=float)
        m1 = np.asarray(K.seg_first(0.0, u[:-1], u[1:]), dtype=float)
        lam = m1 / h
        for j in range(M):
            rows = np.arange(0, M - j)
            W[rows, rows + j] += m0[j] - lam[j]
            W[rows, rows + j + 1] += lam[j]
    else:
        for i in range(M):
            u = grid[i:] - grid[i]
            m0 = np.asarray(K.seg_mass(grid[i], u[:-1], u[1:]), dtype=float)
            m1 = np.asarray(K.seg_first(grid[i], u[:-1], u[1:]), dtype=float)
            lam = m1 / h
            W[i, i:M] += m0 - lam
            W[i, i + 1 :] += lam
    return W


def _outer_matrix(b, grid, B):
    """P with (P @ I)_j = e^{-B_j} int_0^{t_j} b(s) e^{B(s)} I(s) ds by
    trapezoid; exponents B_i - B_j <= 0 on the support, so no overflow."""
    M = len(grid) - 1
    h = grid[1] - grid[0]
    w = np.tril(np.full((M + 1, M + 1), h))
    w[:, 0] = 0.5 * h
    np.fill_diagonal(w, 0.5 * h)
    w[0, 0] = 0.0
    D = B[None, :] - B[:, None]
    np.multiply(D, w > 0.0, out=D)
    np.exp(D, out=D)
    D *= w
    D *= np.asarray(b.value(grid), dtype=float)[None, :]
    return D


def solve_scale(b, K, T, M=None, tol=1e-10, max_sweeps=MAX_SWEEPS, init=None):
    """Solve the S_T fixed point on a uniform grid of M cells.

    Picard iteration from the no-birth sub-solution e^{-B} (or a supplied
    warm start); stops when the sup-norm change drops below tol.  The
    returned table is validated: values in [0,1], nonincreasing in t up to
    1e-9.
    """
    if not T > 0:
        raise DomainError(f"need T > 0, got {T}")
    if M is None:
        M = default_mesh(T)
    if M < 16:
        raise DomainError(f"need at least 16 mesh cells, got {M}")
    if not tol > 0:
        raise DomainError("tolerance must be positive")
    grid = np.linspace(0.0, float(T), M + 1)
    B = np.asarray(b.cumulative(0.0, grid), dtype=float)
    expnegB = np.exp(-B)
    W = _kernel_matrix(K, grid)
    P = _outer_matrix(b, grid, B)
    S = expnegB.copy() if init is None else np.asarray(init, dtype=float).copy()
    sup_change = np.inf
    sweeps = 0
    while sup_change >= tol:
        sweeps += 1
        if sweeps > max_sweeps:
            raise ConvergenceError(
                f"scale solver: no convergence in {max_sweeps} sweeps "
                f"(last sup-change {sup_change:.3e})"
            )
        S_new = expnegB + P @ (W @ S)
        sup_change = float(np.max(np.abs(S_new - S)))
        S = S_new
    residual = float(np.max(np.abs(expnegB + P @ (W @ S) - S)))
    # discretization alone can push values past 1 (or wiggle) at the T h^2
    # scale on long subcritical horizons; structural bugs violate at O(h)
    h = grid[1] - grid[0]
    slack = max(1e-8, T * h * h)
    if np.any(S < -slack) or np.any(S > 1 + slack):
        raise ConsistencyError("scale table left [0, 1]")
    if np.any(np.diff(S) > slack):
        raise ConsistencyError("scale table is not nonincreasing in t")
    return ScaleTable(T, grid, np.clip(S, 0.0, 1.0), sweeps, sup_change, residual)


def ode_residual(table, b, K):
    """Sup of |S' - b (KS - S)| at interior nodes (central differences).

    Consistency check of the solved table with the integro-differential form;
    O(h^2) for smooth data.
    """
    grid, S = table.grid, table.values
    h = table.mesh
    W = _kernel_matrix(K, grid)
    I = W @ S
    bv = np.asarray(b.value(grid), dtype=float)
    dS = (S[2:] - S[:-2]) / (2 * h)
    rhs = bv[1:-1] * (I[1:-1] - S[1:-1])
    return float(np.max(np.abs(dS - rhs)))


def _ratio_integrand_suffix(b, d, T, edges, refine=8):
    """int_{edges_j}^{T} b(s) e^{-int_s^T (d-b)} ds for every edge, by
    composite Gauss-Legendre on each cell (cells refined for accuracy)."""
    nodes, weights = gauss_legendre(7)
    cells_lo = np.repeat(edges[:-1], refine) + np.tile(
        np.arange(refine), len(edges) - 1
    ) * np.repeat(np.diff(edges) / refine, refine)
    width = np.repeat(np.diff(edges) / refine, refine)
    acc = np.zeros_like(cells_lo)
    for z, w in zip(nodes, weights):
        s = cells_lo + width * z
        expo = b.cumulative(s, T) - d.cumulative(s, T)
        acc += w * np.asarray(b.value(s), dtype=float) * np.exp(expo)
    cell_int = acc * width
    suffix = np.concatenate([np.cumsum(cell_int[::-1])[::-1], [0.0]])
    return suffix[::refine]


def scale_markov_closed_form(b, d, T, t):
    """S_T for lifetimes with hazard d(.): the ratio
    (1 + int_t^T b e^{-int_s^T (d-b)} ds) / (1 + int_0^T ...).

    Exact for constant b, d; composite quadrature otherwise.  t may be an
    array; values at t >= T are the left limit of the display (use a solved
    table for the vanishing convention).
    """
    if not isinstance(b, RateFunction):
        b = Constant(b)
    if not isinstance(d, RateFunction):
        d = Constant(d)
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    if type(b) is Constant and type(d) is Constant:
        bb, dd = b.beta, d.beta
        if bb == dd:
            out = (1.0 + bb * (T - t_arr)) / (1.0 + bb * T)
        else:
            out = (dd - bb * np.exp((bb - dd) * (T - t_arr))) / (
                dd - bb * np.exp((bb - dd) * T)
            )
        return out if np.ndim(t) else float(out[0])
    base = np.linspace(0.0, float(T), 513)
    edges = np.unique(np.concatenate([base, np.clip(t_arr, 0.0, T)]))
    suffix = _ratio_integrand_suffix(b, d, T, edges)
    vals = (1.0 + suffix) / (1.0 + suffix[0])
    out = np.interp(np.clip(t_arr, 0.0, T), edges, vals)
    return out if np.ndim(t) else float(out[0])


def scale_W_constant(b, d, t):
    """Classical scale function for constant rates: (d - b e^{(b-d)t})/(d-b),
    with the limit 1 + b t when b = d."""
    t = np.asarray(t, dtype=float)
    if b == d:
        out = 1.0 + b * t
    else:
        out = (d - b * np.exp((b - d) * t)) / (d - b)
    return out if out.ndim else float(out)


PopulationLaw = namedtuple("PopulationLaw", ["p0", "q", "flagged"])

ExtinctionResult = namedtuple(
    "ExtinctionResult", ["probability", "diagnostics"]
)


def extinction_probability(b, K, t0, tol=1e-4, T0=None, T_max=512.0,
                           mesh_target=MESH_TARGET, full=False):
    """P(the tree dies out) for a root lifetime t0: the limit of S_T(t0).

    Doubles T until the increment drops below tol; S_T(t0) is nondecreasing
    in T, so the limit is approached from below (violations beyond 1e-9
    raise).  Returns the probability, or (probability, diagnostics) with
    full=True.
    """
    if t0 < 0:
        raise DomainError(f"root lifetime must be nonnegative, got {t0}")
    if t0 == 0.0:
        return (1.0, {"ladder_T": [], "ladder_values": []}) if full else 1.0
    T = T0 if T0 is not None else max(4.0, 2.0 * t0)
    ladder_T, ladder_vals = [], []
    prev_table = None
    value = None
    while T <= T_max:
        M = int(min(max(16, np.ceil(T * mesh_target)), MESH_CAP))
        init = None
        if prev_table is not None:
            grid = np.linspace(0.0, T, M + 1)
            carried = np.where(
                grid < prev_table.T,
                np.interp(grid, prev_table.grid, prev_table.values),
                0.0,
            )
            init = np.maximum(carried, np.exp(-np.asarray(b.cumulative(0.0, grid))))
        table = solve_scale(b, K, T, M=M, tol=min(tol * 1e-3, 1e-8), init=init)
        v = float(table(t0))
        ladder_T.append(T)
        ladder_vals.append(v)
        if value is not None:
            if v < value - 1e-9:
                raise ConsistencyError(
                    f"S_T(t0) decreased along the ladder: {value} -> {v} at T={T}"
                )
            if abs(v - value) < tol:
                diag = {
                    "ladder_T": ladder_T,
                    "ladder_values": ladder_vals,
                    "last_increment": v - value,
                    "ode_residual": ode_residual(table, b, K),
                }
                return (min(v, 1.0), diag) if full else min(v, 1.0)
        value = v
        prev_table = table
        T *= 2.0
    raise ConvergenceError(
        f"extinction ladder did not converge by T={T_max} "
        f"(last values {ladder_vals[-2:]})"
    )


def hitting_probability(table, s, t):
    """P(hit [T, inf) before [0, s] | start at t) = (S_T(s) - S_T(t))/S_T(s)."""
    if not 0 <= s <= t <= table.T:
        raise DomainError(f"need 0 <= s <= t <= T, got s={s}, t={t}, T={table.T}")
    Ss = float(table(s))
    if Ss <= 0.0:
        raise DomainError(
            "degenerate lower barrier: S_T(s) = 0, the barrier is never reached first"
        )
    return (Ss - float(table(t))) / Ss


def population_law(b, K, t0, t, tol=1e-10, M=None):
    """Parameters of the population-size law at time t for root lifetime t0.

    p0 = P(nobody alive at t) = S_t(t0); conditionally on {size k >= 1} the
    law is geometric: P(size = k | size > 0) = q (1-q)^{k-1} with
    q = S_t(t-), the left limit of the solved table.  For t <= t0 the root is
    still alive, so p0 = 0 (flagged).
    """
    if not t > 0:
        raise DomainError(f"need t > 0, got {t}")
    table = solve_scale(b, K, t, M=M, tol=tol)
    q = table.left_limit()
    if t <= t0:
        return PopulationLaw(0.0, q, True)
    return PopulationLaw(float(table(t0)), q, False)
