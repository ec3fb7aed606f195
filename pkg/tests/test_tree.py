"""Tree simulation: structure invariants, determinism, summaries, CSV."""

import numpy as np
import pytest

from istlab.errors import ConsistencyError, DomainError, ExplosionError
from istlab.model.kernels import Dirac, Exponential
from istlab.model.rates import Constant
from istlab.seeds import spawn_rng
from istlab.stats import ks_two_sample
from istlab.tree import (
    ChronoTree,
    check_tree,
    dumps_tree_csv,
    loads_tree_csv,
    population_at,
    simulate_forest,
    simulate_tree,
    tree_height,
    tree_length,
    tree_summaries_mc,
)

B = Constant(2.0)
K = Exponential(Constant(1.0))


def hand_tree():
    nodes = {(): (0.0, 2.0), (1,): (0.5, 1.2), (2,): (1.5, 1.9),
             (2, 1): (1.6, 1.7)}
    return ChronoTree(nodes, truncation=3.0, root_lifetime=2.0)


def test_hand_tree_queries():
    tr = hand_tree()
    assert len(tr) == 4
    assert check_tree(tr)
    assert tr.labels() == [(), (1,), (2,), (2, 1)]
    assert tr.children(()) == [(1,), (2,)]
    assert tr.children((2,)) == [(2, 1)]
    assert tree_length(tr) == pytest.approx(2.0 + 0.7 + 0.4 + 0.1)
    assert tree_height(tr) == 2.0
    assert population_at(tr, 0.0) == 0
    assert population_at(tr, 1.0) == 2
    assert population_at(tr, 1.65) == 3
    assert population_at(tr, 2.0) == 1
    with pytest.raises(DomainError):
        population_at(tr, 5.0)


def test_check_tree_catches_violations():
    bad = ChronoTree({(): (0.0, 1.0), (1,): (1.5, 2.0)}, truncation=3.0)
    with pytest.raises(ConsistencyError):
        check_tree(bad)
    orphan = ChronoTree({(): (0.0, 1.0), (1, 1): (0.5, 0.8)}, truncation=3.0)
    with pytest.raises(ConsistencyError):
        check_tree(orphan)


def test_simulate_tree_invariants():
    for seed in range(5):
        tr = simulate_tree(B, K, 1.5, 3.0, seed=seed)
        assert check_tree(tr)
        assert tr.nodes[()] == (0.0, 1.5)
        assert tree_height(tr) <= 3.0


def test_simulate_tree_root_capped_and_no_births():
    tr = simulate_tree(Constant(0.0), K, 5.0, 2.0, seed=0)
    assert len(tr) == 1
    assert tr.nodes[()] == (0.0, 2.0)


def test_simulate_tree_deterministic():
    a = simulate_tree(B, K, 1.0, 4.0, seed=123)
    b = simulate_tree(B, K, 1.0, 4.0, seed=123)
    assert a.nodes == b.nodes
    c = simulate_tree(B, K, 1.0, 4.0, seed=124)
    assert a.nodes != c.nodes


def test_simulate_tree_domain_and_explosion():
    with pytest.raises(DomainError):
        simulate_tree(B, K, 0.0, 1.0, seed=0)
    with pytest.raises(DomainError):
        simulate_tree(B, K, 1.0, np.inf, seed=0)
    with pytest.raises(ExplosionError):
        simulate_tree(Constant(30.0), K, 5.0, 6.0, seed=0, max_nodes=500)


def test_forest_uses_replica_streams():
    forest = simulate_forest(B, K, 1.0, 3.0, 3, seed=9)
    assert len(forest) == 3
    lone = simulate_tree(B, K, 1.0, 3.0, seed=spawn_rng(9, 1))
    assert forest[1].nodes == lone.nodes


def test_summaries_match_explicit_trees_in_law():
    n = 3000
    sums = tree_summaries_mc(B, K, 1.0, 3.0, n, seed=42, levels=(1.5,))
    explicit = simulate_forest(B, K, 1.0, 3.0, n, seed=43)
    heights = np.array([tree_height(t) for t in explicit])
    lengths = np.array([tree_length(t) for t in explicit])
    pops = np.array([population_at(t, 1.5) for t in explicit])
    assert sums["height"].shape == (n,)
    for mine, ref in [(sums["height"], heights), (sums["length"], lengths),
                      (sums[("population", 1.5)], pops)]:
        _, p = ks_two_sample(mine, ref)
        assert p > 0.01
    kids = np.array([len(t.children(())) for t in explicit])
    assert abs(np.mean(sums["root_children"]) - np.mean(kids)) < 0.15
    assert np.array_equal(
        sums["n_nodes"] >= 1, np.ones(n, dtype=bool)
    )


def test_summaries_thread_invariant():
    one = tree_summaries_mc(B, K, 1.0, 2.5, 500, seed=7, levels=(1.0,), threads=1)
    two = tree_summaries_mc(B, K, 1.0, 2.5, 500, seed=7, levels=(1.0,), threads=2)
    for key in one:
        assert np.array_equal(one[key], two[key])


def test_summaries_budget_guard():
    with pytest.raises(ExplosionError):
        tree_summaries_mc(Constant(20.0), K, 4.0, 5.0, 64, seed=1, max_total=2000)


def test_csv_round_trip():
    tr = simulate_tree(B, K, 1.2, 3.0, seed=11)
    text = dumps_tree_csv(tr)
    back = loads_tree_csv(text, truncation=3.0)
    assert back.nodes == tr.nodes
    assert tree_length(back) == tree_length(tr)
    with pytest.raises(DomainError):
        loads_tree_csv("not,a,tree\n1,2,3\n")
