"""Contour paths: exploration of finished trees and the matching PDMP.

A contour path starts at some level x0, decreases with slope -1, and jumps
upward; hitting 0 absorbs it.  The same object is produced two ways: by the
depth-first exploration of a ChronoTree (one jump per non-root individual,
total duration = total tree length) and by direct simulation of the Markov
jump dynamics (from level x, the next jump comes after elapsed u with
survival exp(-int_{x-u}^x b), the jump size is drawn from the kernel at the
pre-jump level, and landings are capped at T when a cap is given).

The batch simulator runs whole chunks of paths in lockstep with vectorized
draws; chunk seeds are fixed by the splitting rule in seeds.py, so results
are independent of the thread count.
"""

import csv
import io

import numpy as np

from .errors import ConsistencyError, DomainError, ExplosionError
from .model.kernels import kernel_expect
from .seeds import CHUNK, parallel_map, spawn_rng
from .tree import tree_height

MAX_JUMPS = 10**7


class ContourPath:
    """Piecewise-linear cadlag path: slope -1 between upward jumps.

    Stores jump times s, pre-jump levels fr, landing levels to.  When fr is
    not supplied it is derived from the slope; tree explorations pass the
    exact birth levels so that upcrossing counts match population counts
    without rounding.
    """

    def __init__(self, x0, jump_times, jump_to, jump_from=None, horizon=None,
                 absorption_time=None, cap=None):
        self.x0 = float(x0)
        self.jump_times = np.asarray(jump_times, dtype=float)
        self.jump_to = np.asarray(jump_to, dtype=float)
        if jump_from is None:
            prev_t = np.concatenate([[0.0], self.jump_times[:-1]])
            prev_v = np.concatenate([[self.x0], self.jump_to[:-1]])
            jump_from = prev_v - (self.jump_times - prev_t)
        self.jump_from = np.asarray(jump_from, dtype=float)
        self.absorption_time = None if absorption_time is None else float(absorption_time)
        if horizon is None:
            if self.absorption_time is None:
                raise DomainError("a non-absorbed path needs an explicit horizon")
            horizon = self.absorption_time
        self.horizon = float(horizon)
        self.cap = cap
        if len(self.jump_times):
            if np.any(np.diff(self.jump_times) < 0):
                raise ConsistencyError("jump times must be nondecreasing")
            if np.any(self.jump_to < self.jump_from):
                raise ConsistencyError("jumps must be upward")

    def __repr__(self):
        a = "absorbed" if self.absorption_time is not None else "open"
        return (
            f"ContourPath(x0={self.x0}, {len(self.jump_times)} jumps, "
            f"horizon={self.horizon}, {a})"
        )


def contour_of_tree(tree):
    """Depth-first exploration of the tree.

    Starts at the root's death level; descends each life toward its birth,
    jumping into children in decreasing birth order (a jump goes from the
    child's birth level up to its death level).  The path lasts exactly the
    total tree length and is absorbed at 0.
    """
    nodes = tree.nodes
    kids = {label: [] for label in nodes}
    for label in sorted(nodes):
        if label:
            kids[label[:-1]].append(label)
    s = 0.0
    level = nodes[()][1]
    times, frs, tos = [], [], []
    stack = [((), len(kids[()]) - 1)]
    while stack:
        v, ptr = stack.pop()
        if ptr >= 0:
            c = kids[v][ptr]
            bc, dc = nodes[c]
            s += level - bc
            times.append(s)
            frs.append(bc)
            tos.append(dc)
            level = dc
            stack.append((v, ptr - 1))
            stack.append((c, len(kids[c]) - 1))
        else:
            s += level - nodes[v][0]
            level = nodes[v][0]
    return ContourPath(
        nodes[()][1], times, tos, jump_from=frs, horizon=s, absorption_time=s,
        cap=tree.truncation,
    )


def value_at(path, s):
    """Path value at time(s) s in [0, horizon], elementwise."""
    s = np.asarray(s, dtype=float)
    if np.any(s < 0) or np.any(s > path.horizon * (1 + 1e-12) + 1e-12):
        raise DomainError(f"query time outside [0, {path.horizon}]")
    if len(path.jump_times):
        idx = np.searchsorted(path.jump_times, s, side="right") - 1
        base_v = np.where(idx >= 0, path.jump_to[np.maximum(idx, 0)], path.x0)
        base_t = np.where(idx >= 0, path.jump_times[np.maximum(idx, 0)], 0.0)
        v = base_v - (s - base_t)
    else:
        v = path.x0 - s
    if path.absorption_time is not None:
        v = np.where(s >= path.absorption_time, 0.0, v)
    return v if v.ndim else float(v)


def first_exit(path, low, high):
    """First exit of [low, high]: ('low'|'high'|'none', time or None).

    Reaching low by descent counts at the crossing instant; a jump landing
    at or above high counts at the jump instant.
    """
    if not low < high:
        raise DomainError("need low < high")
    if not low <= path.x0 <= high:
        raise DomainError("need low <= x0 <= high")
    if path.x0 >= high:
        return ("high", 0.0)
    start_t = np.concatenate([[0.0], path.jump_times])
    start_v = np.concatenate([[path.x0], path.jump_to])
    for i in range(len(path.jump_times)):
        if path.jump_from[i] <= low:
            return ("low", start_t[i] + (start_v[i] - low))
        if path.jump_to[i] >= high:
            return ("high", path.jump_times[i])
    end_v = 0.0 if path.absorption_time is not None else value_at(path, path.horizon)
    if end_v <= low:
        return ("low", start_t[-1] + (start_v[-1] - low))
    return ("none", None)


def upcrossing_count(path, t):
    """Number of times the path crosses level t upward.

    Counts jumps with from < t <= to, plus one for the initial descent when
    x0 >= t; for a tree contour this equals the population alive at t.
    """
    if not t > 0:
        raise DomainError("level must be positive")
    n = int(np.count_nonzero((path.jump_from < t) & (t <= path.jump_to)))
    return n + (1 if path.x0 >= t else 0)


def negative_variation(path, a, b):
    """Total downward movement on [a, b]: the time spent unabsorbed."""
    if not 0 <= a <= b <= path.horizon * (1 + 1e-12) + 1e-12:
        raise DomainError(f"window must sit inside [0, {path.horizon}]")
    end = path.absorption_time if path.absorption_time is not None else np.inf
    return float(max(0.0, min(b, end) - min(a, end)))


def dump_path_csv(path, fp):
    """Rows (s, value, event): start, jumps (landing value), absorb or end."""
    w = csv.writer(fp, lineterminator="\n")
    w.writerow(["s", "value", "event"])
    w.writerow([repr(0.0), repr(path.x0), "start"])
    for s, to in zip(path.jump_times, path.jump_to):
        w.writerow([repr(float(s)), repr(float(to)), "jump"])
    if path.absorption_time is not None:
        w.writerow([repr(path.absorption_time), repr(0.0), "absorb"])
    else:
        w.writerow([repr(path.horizon), repr(float(value_at(path, path.horizon))), "end"])


def dumps_path_csv(path):
    buf = io.StringIO()
    dump_path_csv(path, buf)
    return buf.getvalue()


def load_path_csv(fp, cap=None):
    """Inverse of dump_path_csv (pre-jump levels rederived from the slope)."""
    rows = list(csv.reader(fp))
    if not rows or rows[0] != ["s", "value", "event"]:
        raise DomainError("path CSV must start with header s,value,event")
    if len(rows) < 2 or rows[1][2] != "start":
        raise DomainError("path CSV must begin with a start event")
    x0 = float(rows[1][1])
    times, tos = [], []
    absorption, horizon = None, None
    for s, v, event in rows[2:]:
        if event == "jump":
            times.append(float(s))
            tos.append(float(v))
        elif event == "absorb":
            absorption = float(s)
            horizon = float(s)
        elif event == "end":
            horizon = float(s)
        else:
            raise DomainError(f"unknown path event {event!r}")
    return ContourPath(x0, times, tos, horizon=horizon,
                       absorption_time=absorption, cap=cap)


def loads_path_csv(text, cap=None):
    return load_path_csv(io.StringIO(text), cap=cap)


def simulate_pdmp_batch(b, K, x0, n, seed, cap=None, horizon=None, low=0.0,
                        high=None, record_times=(), record_paths=False,
                        threads=None, max_jumps=MAX_JUMPS):
    """n lockstep paths of the jump dynamics from level x0.

    Per round, every active path draws one Exp(1) mark E; the path reaches
    the lower barrier when E >= int_low^x b, otherwise the jump elapses after
    u with int_{x-u}^x b = E (inverted on the exact cumulative).  Jump sizes
    come from the kernel at the pre-jump level, landings are capped at `cap`
    and stop the path at `high` when given.  Paths freeze at the horizon.

    Returns a dict with exit_kind (0 horizon, 1 low, 2 high), exit_time,
    final_value (level at the horizon for frozen paths, else the exit level),
    jump_count, values (marginals at record_times; 0 after absorption when
    low == 0, nan when undefined), and paths (when record_paths).
    """
    if x0 < low:
        raise DomainError(f"start level {x0} below the lower barrier {low}")
    if cap is not None and x0 > cap:
        raise DomainError(f"start level {x0} above the cap {cap}")
    if high is not None and x0 > high:
        raise DomainError(f"start level {x0} above the upper barrier {high}")
    rt = np.asarray(sorted(record_times), dtype=float)

    def run_chunk(args):
        j, m, offset = args
        rng = spawn_rng(seed, j)
        x = np.full(m, float(x0))
        clock = np.zeros(m)
        jump_count = np.zeros(m, dtype=np.int64)
        exit_kind = np.zeros(m, dtype=np.int8)
        exit_time = np.full(m, np.nan)
        final_value = np.full(m, np.nan)
        values = np.full((m, len(rt)), np.nan)
        if len(rt):
            values[:, rt == 0.0] = float(x0)
        recs = [([], [], []) for _ in range(m)] if record_paths else None
        idx = np.arange(m)
        rounds = 0
        while len(idx):
            rounds += 1
            if rounds > max_jumps:
                raise ExplosionError(
                    f"paths exceeded {max_jumps} jumps before absorption/horizon"
                )
            k = len(idx)
            E = rng.exponential(size=k)
            mass = np.asarray(b.cumulative(np.full(k, float(low)), x), dtype=float)
            nojump = E >= mass
            u = x - low
            if np.any(~nojump):
                u = np.where(nojump, u, 0.0)
                u[~nojump] = np.asarray(
                    b.invert_backward(x[~nojump], E[~nojump]), dtype=float
                )
            event_time = clock + u
            if horizon is not None:
                frozen = event_time > horizon
            else:
                frozen = np.zeros(k, dtype=bool)
            jumper = ~nojump & ~frozen
            # jump draws happen only for realized jumps, in active-set order
            if np.any(jumper):
                y = x[jumper] - u[jumper]
                sizes = np.asarray(K.sample(y, rng), dtype=float)
                land = y + sizes
                if cap is not None:
                    land = np.minimum(land, cap)
            else:
                y = land = np.empty(0)
            # marginals on the descending stretch of this round
            for r, s_r in enumerate(rt):
                if s_r == 0.0:
                    continue
                upper = np.where(frozen, horizon if horizon is not None else np.inf,
                                 event_time)
                hit = (clock < s_r) & (s_r <= upper)
                hit &= ~(jumper & (s_r == event_time))
                if np.any(hit):
                    values[idx[hit], r] = x[hit] - (s_r - clock[hit])
                at_jump = jumper & (s_r == event_time)
                if np.any(at_jump):
                    values[idx[at_jump], r] = land[at_jump[jumper]]
            if record_paths and np.any(jumper):
                for gi, t_i, y_i, l_i in zip(
                    idx[jumper], event_time[jumper], y, land
                ):
                    rec = recs[gi]
                    rec[0].append(float(t_i))
                    rec[1].append(float(y_i))
                    rec[2].append(float(l_i))
            # settle frozen paths
            if np.any(frozen):
                gi = idx[frozen]
                final_value[gi] = x[frozen] - (horizon - clock[frozen])
            # settle lower-barrier exits
            done_low = nojump & ~frozen
            if np.any(done_low):
                gi = idx[done_low]
                exit_kind[gi] = 1
                exit_time[gi] = event_time[done_low]
                final_value[gi] = low
            # settle upper-barrier exits
            cont = jumper.copy()
            if high is not None and np.any(jumper):
                hi_hit = land >= high
                if np.any(hi_hit):
                    gj = idx[jumper][hi_hit]
                    exit_kind[gj] = 2
                    exit_time[gj] = event_time[jumper][hi_hit]
                    final_value[gj] = land[hi_hit]
                    cont[np.flatnonzero(jumper)[hi_hit]] = False
                land = land[~hi_hit]
            jump_count[idx[jumper]] += 1
            # compact the active set
            x = land
            clock = event_time[cont]
            idx = idx[cont]
        if len(rt):
            absorbed = (exit_kind == 1) & (low == 0.0)
            for r, s_r in enumerate(rt):
                late = absorbed & (s_r >= exit_time)
                values[late, r] = 0.0
        out = {
            "exit_kind": exit_kind,
            "exit_time": exit_time,
            "final_value": final_value,
            "jump_count": jump_count,
            "values": values,
        }
        if record_paths:
            paths = []
            for i in range(m):
                t_i, f_i, l_i = recs[i]
                absorbed = exit_kind[i] == 1 and low == 0.0
                paths.append(
                    ContourPath(
                        x0, t_i, l_i, jump_from=f_i,
                        horizon=horizon if horizon is not None else
                        (exit_time[i] if exit_kind[i] else None),
                        absorption_time=exit_time[i] if absorbed else None,
                        cap=cap,
                    )
                )
            out["paths"] = paths
        return out

    chunks = []
    offset = 0
    for j in range((n + CHUNK - 1) // CHUNK):
        m = min(CHUNK, n - offset)
        chunks.append((j, m, offset))
        offset += m
    parts = parallel_map(run_chunk, chunks, threads=threads)
    out = {
        k: np.concatenate([p[k] for p in parts])
        for k in ("exit_kind", "exit_time", "final_value", "jump_count")
    }
    out["values"] = np.concatenate([p["values"] for p in parts], axis=0)
    out["record_times"] = rt
    if record_paths:
        out["paths"] = [p for part in parts for p in part["paths"]]
    return out


def simulate_pdmp(b, K, x0, cap=None, horizon=None, seed=None,
                  max_jumps=MAX_JUMPS):
    """One path of the jump dynamics; see simulate_pdmp_batch for the law."""
    if x0 < 0:
        raise DomainError(f"start level must be nonnegative, got {x0}")
    out = simulate_pdmp_batch(
        b, K, x0, 1, seed, cap=cap, horizon=horizon, record_paths=True,
        max_jumps=max_jumps,
    )
    return out["paths"][0]


def generator_residual(b, K, cap, f, x, h, n, seed, fprime=None, threads=None):
    """|MC difference quotient - generator| for the capped dynamics at x.

    The generator reads -f'(x) + b(x) int (f((x+y) /\\ cap) - f(x)) K(x, dy);
    the MC side averages f(X_h) over n paths started at x.  The residual
    decays like O(h) + O(n^{-1/2}).
    """
    if not 0 < x < cap:
        raise DomainError("x must lie strictly inside (0, cap)")
    out = simulate_pdmp_batch(
        b, K, x, n, seed, cap=cap, record_times=(h,), threads=threads
    )
    vals = out["values"][:, 0]
    emp = float(np.mean(f(vals)))
    if fprime is None:
        e = 1e-5 * max(1.0, abs(x))
        fp = (f(x - 2 * e) - 8 * f(x - e) + 8 * f(x + e) - f(x + 2 * e)) / (12 * e)
    else:
        fp = fprime(x)
    jump_part = kernel_expect(
        K, x, lambda y: f(np.minimum(x + y, cap)) - f(x), kinks=(cap - x,)
    )
    gen = -fp + float(b.value(x)) * jump_part
    return abs((emp - f(x)) / h - gen)


def tree_contour_mc(b, K, x0, T, n, seed, record_time=None, threads=None):
    """Absorption time, jump count, and one marginal of n tree contours.

    Simulates trees and explores them; used to compare the two contour
    constructions in law.
    """
    from .tree import simulate_tree

    def one(i):
        tr = simulate_tree(b, K, x0, T, seed=spawn_rng(seed, i))
        p = contour_of_tree(tr)
        v = np.nan
        if record_time is not None:
            v = value_at(p, record_time) if record_time <= p.horizon else 0.0
        return p.absorption_time, len(p.jump_times), v

    rows = parallel_map(one, range(n), threads=threads)
    arr = np.asarray(rows, dtype=float)
    return {
        "absorption_time": arr[:, 0],
        "jump_count": arr[:, 1].astype(np.int64),
        "value": arr[:, 2],
    }
