import pytest

import jetclust as jc
from jetclust.rng import make_rng
from jetclust.trellis import _fill_table

from conftest import make_event


def test_two_leaf_event_is_the_unique_tree(small_config):
    tree = make_event(small_config, seed=3, n_leaves=2)
    leaves = tree.leaf_momenta()
    jc.PS_EVALUATIONS.reset()
    ll, mle_tree = jc.exact_mle(leaves, small_config)
    assert jc.PS_EVALUATIONS.count == 1
    s = jc.Splitting.from_children(*leaves)
    assert ll == pytest.approx(jc.splitting_log_likelihood(s, small_config), abs=1e-12)
    assert mle_tree.n_leaves == 2


@pytest.mark.parametrize("n,expected", [(3, 3), (4, 15), (5, 105), (6, 945)])
def test_enumeration_counts_double_factorial(small_config, n, expected):
    leaves = make_event(small_config, seed=5, n_leaves=n).leaf_momenta()
    _, count = jc.enumerate_all_trees(leaves, small_config)
    assert count == expected


@pytest.mark.parametrize("n", [3, 4, 5, 6, 7])
def test_exact_mle_matches_enumeration(small_config, n):
    leaves = make_event(small_config, seed=7, n_leaves=n).leaf_momenta()
    mle_ll, tree = jc.exact_mle(leaves, small_config)
    enum_ll, _ = jc.enumerate_all_trees(leaves, small_config)
    assert abs(mle_ll - enum_ll) <= 1e-9
    assert abs(jc.tree_log_likelihood(tree, small_config) - mle_ll) <= 1e-9


@pytest.mark.parametrize("n", [2, 3, 4, 5, 6])
def test_evaluation_count_closed_form(small_config, n):
    leaves = make_event(small_config, seed=11, n_leaves=n).leaf_momenta()
    jc.PS_EVALUATIONS.reset()
    jc.exact_mle(leaves, small_config)
    assert jc.PS_EVALUATIONS.count == (3**n + 1) // 2 - 2**n


def test_guards(small_config):
    leaves = make_event(small_config, seed=13, n_leaves=5).leaf_momenta()
    with pytest.raises(ValueError):
        jc.exact_mle(leaves, small_config, n_max=4)
    with pytest.raises(ValueError):
        jc.enumerate_all_trees(leaves * 2, small_config)
    with pytest.raises(ValueError):
        jc.exact_mle(leaves[:1], small_config)


def test_mle_dominates_planners(small_config, oracle_events):
    for event in oracle_events[:15]:
        mle_ll, _ = jc.exact_mle(event.leaves, small_config)
        _, greedy_ll = jc.cluster_greedy(event.leaves, small_config)
        _, random_ll = jc.cluster_random(event.leaves, small_config, make_rng(17, event.event_id))
        assert greedy_ll <= mle_ll + 1e-9
        assert random_ll <= mle_ll + 1e-9
        assert event.truth_ll <= mle_ll + 1e-9


def test_subset_momentum_sums_consistent(small_config):
    leaves = make_event(small_config, seed=19, n_leaves=5).leaf_momenta()
    _, best, psum = _fill_table(leaves, small_config)
    n = len(leaves)
    for mask in range(1, 1 << n):
        if mask & (mask - 1) == 0:
            continue
        a = best[mask]
        summed = psum[a] + psum[mask ^ a]
        for got, want in zip(summed.as_tuple(), psum[mask].as_tuple()):
            assert abs(got - want) <= 1e-12 * max(abs(want), 1.0) + 1e-12


def test_mle_tree_structure_is_valid(small_config):
    leaves = make_event(small_config, seed=23, n_leaves=6).leaf_momenta()
    _, tree = jc.exact_mle(leaves, small_config)
    assert tree.leaf_indices == list(range(6))
    assert len(tree.internal_indices()) == 5
    for idx in tree.internal_indices():
        ca, cb = tree.nodes[idx].children
        assert tree.nodes[ca].parent == idx
        assert tree.nodes[cb].parent == idx
