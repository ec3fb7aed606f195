"""Chronological trees under truncation: exact simulation and structure queries.

A tree is a map from Ulam-Harris labels (tuples of positive ints, root = ())
to (birth, death) pairs.  The root is born at 0 with a prescribed lifetime;
every individual alive on (birth, death] gives birth at the jump times of an
inhomogeneous Poisson process with intensity b(t), children draw lifetimes
from the kernel at their birth time, and all deaths are capped at the
truncation level T, so the tree is finite almost surely.
"""

import csv
import io

import numpy as np

from .errors import ConsistencyError, DomainError, ExplosionError
from .seeds import CHUNK, parallel_map, spawn_rng

MAX_NODES = 10**6


class ChronoTree:
    """Finished truncated tree: label -> (birth, death), plus metadata."""

    def __init__(self, nodes, truncation=None, root_lifetime=None, seed=None):
        self.nodes = dict(nodes)
        self.truncation = truncation
        self.root_lifetime = root_lifetime
        self.seed = seed
        labels = sorted(self.nodes)
        self._labels = labels
        self._births = np.array([self.nodes[s][0] for s in labels], dtype=float)
        self._deaths = np.array([self.nodes[s][1] for s in labels], dtype=float)

    def __len__(self):
        return len(self.nodes)

    def labels(self):
        """Labels in canonical (depth-first lexicographic) order."""
        return list(self._labels)

    def children(self, label):
        out = [s for s in self.nodes if len(s) == len(label) + 1 and s[: len(label)] == label]
        return sorted(out)

    def __repr__(self):
        return f"ChronoTree(<{len(self.nodes)} nodes, T={self.truncation}>)"


def _birth_times(b, lo, hi, bbar, rng):
    """Sorted inhomogeneous-Poisson birth times on (lo, hi], by thinning.

    Proposes Poisson(bbar*(hi-lo)) uniform points and accepts each with
    probability b(s)/bbar; exact for any bound bbar >= sup b on the interval.
    """
    if hi <= lo or bbar <= 0.0:
        return np.empty(0)
    n = rng.poisson(bbar * (hi - lo))
    if n == 0:
        return np.empty(0)
    s = lo + (hi - lo) * rng.random(n)
    keep = rng.random(n) * bbar < b.value(s)
    s = s[keep & (s > lo)]
    s.sort()
    return s


def simulate_tree(b, K, x0, T, seed=None, max_nodes=MAX_NODES):
    """Simulate a truncated chronological tree.

    The root has lifetime exactly min(x0, T); children of an individual born
    at s get lifetime K(s, .) capped so death <= T.  Deterministic given the
    seed: individuals are processed in breadth-first order.
    """
    if not x0 > 0:
        raise DomainError(f"root lifetime must be positive, got x0={x0}")
    if not (0 < T < np.inf):
        raise DomainError(f"truncation level must be finite positive, got T={T}")
    rng = np.random.default_rng(seed)
    bbar = b.bound_on(0.0, T)
    nodes = {(): (0.0, min(float(x0), float(T)))}
    queue = [()]
    while queue:
        label = queue.pop(0)
        lo, hi = nodes[label]
        births = _birth_times(b, lo, hi, bbar, rng)
        births = births[births < T]
        if len(births) == 0:
            continue
        lives = K.sample(births, rng)
        deaths = np.minimum(births + lives, T)
        for i, (bt, dt) in enumerate(zip(births, deaths), start=1):
            child = label + (i,)
            nodes[child] = (float(bt), float(dt))
            queue.append(child)
        if len(nodes) > max_nodes:
            raise ExplosionError(
                f"tree exceeded {max_nodes} nodes before the truncation level"
            )
    return ChronoTree(nodes, truncation=float(T), root_lifetime=float(x0), seed=seed)


def simulate_forest(b, K, x0, T, n, seed, threads=None, max_nodes=MAX_NODES):
    """n independent trees with per-replica seed streams (thread-count invariant)."""

    def one(i):
        return simulate_tree(b, K, x0, T, seed=spawn_rng(seed, i), max_nodes=max_nodes)

    return parallel_map(one, range(n), threads=threads)


def population_at(tree, t):
    """Number of individuals alive at t: birth < t <= death.

    Life intervals are left-open right-closed, so the count at t = 0 is 0.
    """
    cap = tree.truncation if tree.truncation is not None else tree_height(tree)
    if not 0 <= t <= cap:
        raise DomainError(f"t={t} outside [0, {cap}]")
    return int(np.count_nonzero((tree._births < t) & (t <= tree._deaths)))


def tree_length(tree):
    """Sum of all life-segment lengths."""
    return float(np.sum(tree._deaths - tree._births))


def tree_height(tree):
    """Latest death time."""
    return float(np.max(tree._deaths))


def check_tree(tree):
    """Assert the structural invariants; raises ConsistencyError on violation."""
    nodes = tree.nodes
    if () not in nodes or nodes[()][0] != 0.0:
        raise ConsistencyError("root must exist with birth time 0")
    cap = tree.truncation
    for label, (bt, dt) in nodes.items():
        if not dt > bt:
            raise ConsistencyError(f"node {label}: death {dt} <= birth {bt}")
        if cap is not None and dt > cap:
            raise ConsistencyError(f"node {label}: death {dt} > truncation {cap}")
        if label:
            parent = label[:-1]
            if parent not in nodes:
                raise ConsistencyError(f"node {label}: missing parent {parent}")
            pb, pd = nodes[parent]
            if not (pb < bt <= pd):
                raise ConsistencyError(
                    f"node {label}: birth {bt} outside parent interval ({pb}, {pd}]"
                )
            if label[-1] > 1:
                prev = parent + (label[-1] - 1,)
                if prev not in nodes or not nodes[prev][0] < bt:
                    raise ConsistencyError(
                        f"node {label}: sibling birth order violated"
                    )
    return True


def _format_label(label):
    return ".".join(str(i) for i in label)


def _parse_label(text):
    return tuple(int(p) for p in text.split(".")) if text else ()


def dump_tree_csv(tree, fp):
    """Write rows label,parent,birth,death in canonical order (root label empty)."""
    w = csv.writer(fp, lineterminator="\n")
    w.writerow(["label", "parent", "birth", "death"])
    for label in tree._labels:
        bt, dt = tree.nodes[label]
        w.writerow([_format_label(label), _format_label(label[:-1]), repr(bt), repr(dt)])


def dumps_tree_csv(tree):
    buf = io.StringIO()
    dump_tree_csv(tree, buf)
    return buf.getvalue()


def load_tree_csv(fp, truncation=None):
    """Inverse of dump_tree_csv; truncation metadata is optional."""
    rows = list(csv.reader(fp))
    if not rows or rows[0] != ["label", "parent", "birth", "death"]:
        raise DomainError("tree CSV must start with header label,parent,birth,death")
    nodes = {}
    for text, _parent, bt, dt in rows[1:]:
        nodes[_parse_label(text)] = (float(bt), float(dt))
    root_life = nodes.get((), (0.0, None))[1]
    return ChronoTree(nodes, truncation=truncation, root_lifetime=root_life)


def loads_tree_csv(text, truncation=None):
    return load_tree_csv(io.StringIO(text), truncation=truncation)


def tree_summaries_mc(b, K, x0, T, n, seed, levels=(), threads=None, max_total=10**8):
    """Monte Carlo summaries of n independent truncated trees.

    Runs the branching recursion in vectorized generation waves across whole
    chunks of replicas at once, tracking per-tree aggregates only: total
    length, height, node count, root child count, and the population at each
    requested level.  Same law as simulate_tree (identical birth thinning and
    lifetime draws), just without materializing labels, so it scales to 1e5+
    replicas.  Returns a dict of arrays of length n.
    """
    if not x0 > 0:
        raise DomainError(f"root lifetime must be positive, got x0={x0}")
    if not (0 < T < np.inf):
        raise DomainError(f"truncation level must be finite positive, got T={T}")
    levels = tuple(float(v) for v in levels)
    bbar = b.bound_on(0.0, T)

    def run_chunk(args):
        j, m = args
        rng = spawn_rng(seed, j)
        length = np.zeros(m)
        height = np.zeros(m)
        count = np.zeros(m, dtype=np.int64)
        rootkids = np.zeros(m, dtype=np.int64)
        pop = np.zeros((len(levels), m), dtype=np.int64)
        rep = np.arange(m)
        lo = np.zeros(m)
        hi = np.full(m, min(float(x0), float(T)))
        total = 0
        first = True
        while len(rep):
            total += len(rep)
            if total > max_total:
                raise ExplosionError("replica batch exceeded the node budget")
            np.add.at(length, rep, hi - lo)
            np.maximum.at(height, rep, hi)
            np.add.at(count, rep, 1)
            for li, lvl in enumerate(levels):
                alive = (lo < lvl) & (lvl <= hi)
                np.add.at(pop[li], rep[alive], 1)
            # propose births on (lo, hi] at the global bound, then thin
            nprop = rng.poisson(bbar * (hi - lo))
            parent = np.repeat(np.arange(len(rep)), nprop)
            if len(parent) == 0:
                break
            u = rng.random(len(parent))
            s = lo[parent] + (hi[parent] - lo[parent]) * u
            s = np.minimum(s, hi[parent])
            keep = (rng.random(len(parent)) * bbar < b.value(s)) & (s > lo[parent]) & (s < T)
            parent = parent[keep]
            s = s[keep]
            if first:
                np.add.at(rootkids, rep[parent], 1)
                first = False
            lives = K.sample(s, rng)
            rep = rep[parent]
            lo = s
            hi = np.minimum(s + lives, T)
        out = {
            "length": length,
            "height": height,
            "n_nodes": count,
            "root_children": rootkids,
        }
        for li, lvl in enumerate(levels):
            out[("population", lvl)] = pop[li]
        return out

    chunks = [(j, min(CHUNK, n - j * CHUNK)) for j in range((n + CHUNK - 1) // CHUNK)]
    parts = parallel_map(run_chunk, chunks, threads=threads)
    return {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}
