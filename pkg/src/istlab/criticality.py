"""Drift-based criticality verdicts and tree-length tail estimation.

The asymptotic criteria reduce to the sign of b(x)m(x) - 1 for large x
(m the kernel mean) and to the windowed integral

    Psi(x) = int_0^x (b(s)m(s) - 1) e^{-int_s^x b(u) du} ds,

whose tail negativity is sufficient for extinction.  "Large x" is
operationalized as the tail half of a user-supplied scan grid, with a
stabilization diagnostic, so every verdict ships with the numbers that
produced it.  Tail estimation runs the tree simulator and reports Wilson
intervals together with the applicable bound shape (fitted exponential for
light-tailed kernels, the polynomial lower bound for heavy tails).
"""

import json
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .errors import DomainError, RegimeError
from .model.kernels import Pareto, kernel_expect, kernel_moment
from .numerics import adaptive_quad
from .stats import empirical_survival, fit_exponential_tail, wilson_interval
from .tree import tree_summaries_mc

#: margin on the strict inequalities so quadrature noise cannot flip verdicts
MARGIN = 0.05

SUBCRITICAL = "SubcriticalSufficient"
SUPERCRITICAL = "SupercriticalSufficient"
INCONCLUSIVE = "Inconclusive"


@dataclass(frozen=True)
class CriticalityReport:
    verdict: str
    limsup_drift: float
    liminf_drift: float
    integral_condition_value: float
    second_moment_check: float
    stabilized: bool
    stabilization_change: float
    scan: np.ndarray
    drift: np.ndarray
    notes: tuple = ()

    def to_json(self):
        return json.dumps(
            {
                "verdict": self.verdict,
                "limsup_drift": self.limsup_drift,
                "liminf_drift": self.liminf_drift,
                "integral_condition_value": self.integral_condition_value,
                "second_moment_check": self.second_moment_check,
                "stabilized": self.stabilized,
                "stabilization_change": self.stabilization_change,
                "scan": list(map(float, self.scan)),
                "drift": [float(v) for v in self.drift],
                "notes": list(self.notes),
            },
            indent=2,
        )


def _moments_on_scan(K, scan, p):
    """Kernel p-th moment at every scan point (single call if invariant)."""
    if K.time_invariant:
        return np.full(len(scan), float(kernel_moment(K, float(scan[0]), p)))
    return np.array([float(kernel_moment(K, float(x), p)) for x in scan])


def classify_asymptotic(b, K, scan):
    """Asymptotic drift verdict over a scan grid.

    limsup/liminf of b(x)m(x) are surrogated by max/min over the tail half
    of the scan; SupercriticalSufficient additionally requires the scanned
    sup of b(x)m2(x)/x to be finite.  Stabilization (relative change of the
    drift between the last two scan quarters below 1%) is reported so a too
    short scan is visible.
    """
    scan = np.asarray(scan, dtype=float)
    if scan.ndim != 1 or len(scan) < 8:
        raise DomainError("scan grid needs at least 8 points")
    if np.any(np.diff(scan) <= 0) or scan[0] < 0:
        raise DomainError("scan grid must be nonnegative and increasing")
    notes = []
    m1 = _moments_on_scan(K, scan, 1)
    bvals = np.asarray(b.value(scan), dtype=float)
    drift = bvals * m1
    half = len(scan) // 2
    limsup_est = float(np.max(drift[half:]))
    liminf_est = float(np.min(drift[half:]))
    q3 = drift[half : half + (len(scan) - half) // 2]
    q4 = drift[half + (len(scan) - half) // 2 :]
    if np.all(np.isfinite(drift)):
        change = abs(np.mean(q4) - np.mean(q3)) / max(abs(np.mean(q3)), 1e-12)
        stabilized = bool(change < 0.01)
        if not stabilized:
            notes.append(
                f"drift not stabilized over the scan (tail change {change:.2%})"
            )
    else:
        change, stabilized = float("inf"), False

    m2 = _moments_on_scan(K, scan, 2)
    pos = scan > 0
    with np.errstate(invalid="ignore"):
        ratio = bvals[pos] * m2[pos] / scan[pos]
    second = float(np.max(ratio)) if np.all(np.isfinite(m2)) else np.inf

    if np.all(np.isfinite(drift)):
        mesh = min(0.05 / max(b.bound_on(0.0, scan[-1]), 1e-12), scan[-1] / 512)
        integral_value = integral_drift_scan(b, K, scan[-1], mesh)
    else:
        integral_value = float("nan")
        notes.append("kernel mean is infinite at scan points")

    if not np.all(np.isfinite(drift)):
        verdict = INCONCLUSIVE
    elif liminf_est > 1.0 + MARGIN and np.isfinite(second):
        verdict = SUPERCRITICAL
    elif limsup_est < 1.0 - MARGIN:
        verdict = SUBCRITICAL
    else:
        verdict = INCONCLUSIVE
        if liminf_est > 1.0 + MARGIN:
            notes.append("drift exceeds 1 but the second-moment check is infinite")

    return CriticalityReport(
        verdict=verdict,
        limsup_drift=limsup_est,
        liminf_drift=liminf_est,
        integral_condition_value=integral_value,
        second_moment_check=second,
        stabilized=stabilized,
        stabilization_change=float(change),
        scan=scan,
        drift=drift,
        notes=tuple(notes),
    )


def integral_drift_scan(b, K, x_max, mesh):
    """Tail max of Psi(x) = int_0^x (b m - 1) e^{-int_s^x b} ds over
    [x_max/2, x_max].

    Exponential-integrator recurrence on a uniform grid: the carried value
    is discounted by e^{-int} across each cell and the local contribution is
    added by trapezoid, so long windows lose no mass to underflow.
    """
    if not x_max > 0 or not mesh > 0:
        raise DomainError("x_max and mesh must be positive")
    n = int(np.ceil(x_max / mesh))
    grid = np.linspace(0.0, x_max, n + 1)
    m1 = _moments_on_scan(K, grid, 1)
    psi = np.asarray(b.value(grid), dtype=float) * m1 - 1.0
    if not np.all(np.isfinite(psi)):
        raise DomainError("kernel mean is infinite on the integration grid")
    dB = np.asarray(b.cumulative(grid[:-1], grid[1:]), dtype=float)
    damp = np.exp(-dB)
    h = grid[1] - grid[0]
    val = 0.0
    best = -np.inf
    for j in range(n):
        val = val * damp[j] + 0.5 * h * (psi[j] * damp[j] + psi[j + 1])
        if grid[j + 1] >= 0.5 * x_max:
            best = max(best, val)
    return float(best)


def discrete_drift(b, K, V, x):
    """PV(x) - V(x) for the one-step descent-and-jump transition kernel.

    PV(x) = int_0^x (int V(y+z) K(y,dz)) b(y) e^{-int_y^x b} dy
            + V(0) e^{-int_0^x b}.

    V must be positive and vectorized; the inner integral uses the kernel
    quadrature, the outer one adaptive quadrature on [0, x].
    """
    if x < 0:
        raise DomainError(f"need x >= 0, got {x}")
    if x == 0:
        return 0.0
    Bx = float(b.cumulative(0.0, x))

    def outer(ys):
        ys = np.atleast_1d(np.asarray(ys, dtype=float))
        inner = np.array(
            [kernel_expect(K, y, lambda z, y=y: V(y + z)) for y in ys]
        )
        damp = np.exp(np.asarray(b.cumulative(0.0, ys), dtype=float) - Bx)
        return inner * np.asarray(b.value(ys), dtype=float) * damp

    PV = adaptive_quad(outer, 0.0, x, tol=1e-12) + float(V(0.0)) * np.exp(-Bx)
    return float(PV - V(x))


def periodic_phi(beta, c, t):
    """Periodic drift envelope for b = beta constant and kernel-mean offset
    psi(t) = cos(t) + c, evaluated per period (t reduced mod 2 pi)."""
    if beta <= 0:
        raise DomainError(f"need beta > 0, got {beta}")
    t = np.asarray(t, dtype=float)
    tm = np.mod(t, 2.0 * np.pi)
    base = (
        -beta * np.exp(-beta * tm) * (1.0 + np.exp(-2.0 * np.pi * beta))
        + beta * np.cos(t)
        + np.sin(t)
    ) / (1.0 + beta * beta)
    out = base + c / beta
    return out if out.ndim else float(out)


def periodic_sup_phi(beta, c):
    """sup of periodic_phi over one period, by dense grid plus refinement."""
    grid = np.linspace(0.0, 2.0 * np.pi, 4097)[:-1]
    vals = periodic_phi(beta, c, grid)
    j = int(np.argmax(vals))
    lo = grid[max(j - 1, 0)]
    hi = grid[min(j + 1, len(grid) - 1)]
    res = optimize.minimize_scalar(
        lambda t: -periodic_phi(beta, c, t),
        bounds=(lo, hi),
        method="bounded",
        options={"xatol": 1e-13},
    )
    return float(max(np.max(vals), -res.fun))


@dataclass(frozen=True)
class TailEstimate:
    thresholds: np.ndarray
    survival: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    bound: np.ndarray
    bound_kind: str
    lambda_hat: float
    n: int
    report: CriticalityReport
    notes: tuple = ()

    def dump_csv(self, fp):
        fp.write("threshold,estimate,ci_low,ci_high,bound_value\n")
        for row in zip(self.thresholds, self.survival, self.ci_low,
                       self.ci_high, self.bound):
            fp.write(",".join(repr(float(v)) for v in row) + "\n")

    def to_json(self):
        return json.dumps(
            {
                "thresholds": list(map(float, self.thresholds)),
                "survival": list(map(float, self.survival)),
                "ci_low": list(map(float, self.ci_low)),
                "ci_high": list(map(float, self.ci_high)),
                "bound": list(map(float, self.bound)),
                "bound_kind": self.bound_kind,
                "lambda_hat": self.lambda_hat,
                "n": self.n,
                "notes": list(self.notes),
            },
            indent=2,
        )


def length_tail_estimate(b, K, x0, T, N, thresholds, seed, threads=None,
                         scan=None):
    """MC survival estimates P(L(T) >= t) with Wilson 95% intervals.

    Only meaningful when lengths stay finite at scale, so a supercritical
    drift verdict refuses with the scan attached.  Light-tailed kernels get
    a fitted exponential decay (lambda_hat) as the companion bound; the
    polynomial kernel gets its closed-form lower bound e^{-B(x0)} t^{-k}.
    """
    thresholds = np.asarray(thresholds, dtype=float)
    if np.any(thresholds <= 0):
        raise DomainError("thresholds must be positive")
    if scan is None:
        scan = np.linspace(1.0, 201.0, 101)
    report = classify_asymptotic(b, K, scan)
    if report.verdict == SUPERCRITICAL:
        raise RegimeError(
            "tail estimation refused: drift verdict is supercritical "
            f"(liminf b*m = {report.liminf_drift:.4f} over the scan tail)"
        )
    notes = []
    if report.verdict == INCONCLUSIVE:
        notes.append("drift verdict inconclusive; lengths may be heavy at scale")

    lengths = tree_summaries_mc(b, K, x0, T, N, seed, threads=threads)["length"]
    surv = empirical_survival(lengths, thresholds)
    hits = np.round(surv * N).astype(int)
    ci = np.array([wilson_interval(k, N) for k in hits])

    lambda_hat = float("nan")
    if K.heavy_tailed and isinstance(K, Pareto):
        bound = np.exp(-float(b.cumulative(0.0, x0))) * thresholds ** (-K.k)
        bound_kind = "pareto_lower_bound"
    else:
        try:
            lambda_hat, log_c = fit_exponential_tail(thresholds, surv)
            bound = np.exp(log_c - lambda_hat * thresholds)
            bound_kind = "exponential_fit"
        except DomainError as exc:
            bound = np.full_like(thresholds, np.nan)
            bound_kind = "none"
            notes.append(f"no tail fit: {exc}")

    return TailEstimate(
        thresholds=thresholds,
        survival=surv,
        ci_low=ci[:, 0],
        ci_high=ci[:, 1],
        bound=bound,
        bound_kind=bound_kind,
        lambda_hat=lambda_hat,
        n=int(N),
        report=report,
        notes=tuple(notes),
    )
