"""Kernel correctness against independent brute-force oracles.

The WL oracle rebuilds per-iteration histograms with string multiset
labels; the graphlet oracle enumerates all 3-node subsets directly.
"""

from collections import Counter
from itertools import combinations

import numpy as np
import pytest

from gkconv.graphs import (LabeledGraph, complete_graph, cycle_graph,
                           disjoint_union, path_graph, star_graph)
from gkconv.kernels import (GRAPHLET3, WL_SUBTREE, KernelConfig, KernelError,
                            WlColorTable, graphlet3_vector, kernel_eval,
                            kernel_matrix, wl_indistinguishable, wl_refine,
                            wl_subtree_kernel)
from conftest import random_graph

K3 = complete_graph(3)
P3 = path_graph(3)


def wl_string_histograms(g, h):
    """Reference WL feature: one histogram per iteration, string labels."""
    colors = [str(l) for l in g.labels]
    hists = [Counter(colors)]
    for _ in range(h):
        colors = [
            colors[v] + "|" + ",".join(sorted(colors[u] for u in g.adj[v]))
            for v in range(g.num_nodes)]
        hists.append(Counter(colors))
    return hists


def wl_oracle(g1, g2, h):
    h1 = wl_string_histograms(g1, h)
    h2 = wl_string_histograms(g2, h)
    return sum(sum(c1[key] * c2[key] for key in c1)
               for c1, c2 in zip(h1, h2))


def graphlet_oracle(g):
    tri = paths = 0
    for a, b, c in combinations(range(g.num_nodes), 3):
        m = g.has_edge(a, b) + g.has_edge(a, c) + g.has_edge(b, c)
        if m == 3:
            tri += 1
        elif m == 2:
            paths += 1
    return tri, paths


def test_wl_kernel_frozen_values():
    assert wl_subtree_kernel(K3, P3, iterations=1) == 12.0
    assert wl_subtree_kernel(K3, K3, iterations=1) == 18.0
    assert wl_subtree_kernel(P3, P3, iterations=1) == 14.0
    e = LabeledGraph(2, [(0, 1)], [0, 0])
    assert wl_subtree_kernel(e, e, iterations=1) == 8.0
    kc = KernelConfig(kind=WL_SUBTREE, wl_iterations=1, normalized=True)
    got = kernel_eval(kc, K3, P3)
    assert abs(got - 12.0 / np.sqrt(252.0)) < 1e-15


def test_wl_kernel_equals_string_oracle():
    rng = np.random.default_rng(42)
    for _ in range(120):
        g1 = random_graph(rng)
        g2 = random_graph(rng)
        h = int(rng.integers(1, 4))
        assert wl_subtree_kernel(g1, g2, iterations=h) == wl_oracle(g1, g2, h)


def test_wl_kernel_shared_table_matches_fresh():
    rng = np.random.default_rng(43)
    graphs = [random_graph(rng) for _ in range(12)]
    table = WlColorTable(3, 2)
    for g1 in graphs:
        for g2 in graphs:
            shared = wl_subtree_kernel(g1, g2, iterations=2, table=table)
            fresh = wl_subtree_kernel(g1, g2, iterations=2)
            assert shared == fresh


def test_wl_table_iteration_mismatch():
    with pytest.raises(KernelError):
        wl_subtree_kernel(K3, P3, iterations=2, table=WlColorTable(1, 3))


def test_wl_label_outside_dictionary():
    with pytest.raises(KernelError):
        WlColorTable(1, 1).refine(P3.with_labels([0, 1, 0]))


def test_wl_refine_colors():
    col = wl_refine(P3, 2)
    assert list(col.colors[0]) == list(P3.labels)
    # endpoint vs middle separate after one round
    final = col.colors[-1]
    assert final[0] == final[2] != final[1]


def test_graphlet_vector_matches_enumeration():
    rng = np.random.default_rng(44)
    for _ in range(100):
        g = random_graph(rng, n_max=10, dict_size=1)
        assert tuple(graphlet3_vector(g)) == graphlet_oracle(g)


def test_graphlet_frozen_values():
    assert tuple(graphlet3_vector(K3)) == (1, 0)
    assert tuple(graphlet3_vector(P3)) == (0, 1)
    assert tuple(graphlet3_vector(complete_graph(4))) == (4, 0)
    assert tuple(graphlet3_vector(cycle_graph(6))) == (0, 6)
    assert tuple(graphlet3_vector(star_graph(3))) == (0, 3)


def test_graphlet_kernel_ignores_labels():
    g = cycle_graph(4)
    h = g.with_labels([1, 0, 1, 0])
    kc = KernelConfig(kind=GRAPHLET3, wl_iterations=1, normalized=False)
    assert kernel_eval(kc, g, g) == kernel_eval(kc, h, h)


@pytest.mark.parametrize("kind", [WL_SUBTREE, GRAPHLET3])
@pytest.mark.parametrize("normalized", [False, True])
def test_kernel_symmetry(kind, normalized):
    rng = np.random.default_rng(45)
    kc = KernelConfig(kind=kind, wl_iterations=2, normalized=normalized)
    for _ in range(25):
        g1, g2 = random_graph(rng), random_graph(rng)
        assert kernel_eval(kc, g1, g2) == kernel_eval(kc, g2, g1)


@pytest.mark.parametrize("kind", [WL_SUBTREE, GRAPHLET3])
def test_kernel_isomorphism_invariance(kind):
    rng = np.random.default_rng(46)
    kc = KernelConfig(kind=kind, wl_iterations=3, normalized=True)
    base = random_graph(rng, n_max=7)
    probe = random_graph(rng, n_max=7)
    want = kernel_eval(kc, base, probe)
    for _ in range(50):
        perm = rng.permutation(base.num_nodes).tolist()
        assert kernel_eval(kc, base.permuted(perm), probe) == want


def test_normalized_self_kernel_is_one():
    rng = np.random.default_rng(47)
    for kind in (WL_SUBTREE, GRAPHLET3):
        norm = KernelConfig(kind=kind, wl_iterations=2, normalized=True)
        raw = KernelConfig(kind=kind, wl_iterations=2, normalized=False)
        done = 0
        while done < 20:
            g = random_graph(rng, n_max=8, n_min=3, p=0.5)
            if kernel_eval(raw, g, g) <= 0:
                continue  # no 3-node graphlets, nothing to normalize
            assert abs(kernel_eval(norm, g, g) - 1.0) <= 1e-12
            done += 1


def test_normalized_zero_vector_guard():
    # a single node has no 3-node graphlets at all
    lonely = LabeledGraph(1, [], [0])
    kc = KernelConfig(kind=GRAPHLET3, wl_iterations=1, normalized=True)
    assert kernel_eval(kc, lonely, K3) == 0.0
    assert kernel_eval(kc, lonely, lonely) == 0.0


@pytest.mark.parametrize("kind", [WL_SUBTREE, GRAPHLET3])
def test_gram_matrix_positive_semidefinite(kind):
    rng = np.random.default_rng(48)
    graphs = [random_graph(rng, n_max=8, n_min=2) for _ in range(10)]
    for normalized in (False, True):
        kc = KernelConfig(kind=kind, wl_iterations=2, normalized=normalized)
        gram = kernel_matrix(kc, graphs, graphs)
        assert np.allclose(gram, gram.T)
        eigs = np.linalg.eigvalsh(gram)
        assert eigs.min() >= -1e-8


def test_kernel_matrix_matches_pairwise_eval():
    rng = np.random.default_rng(49)
    left = [random_graph(rng) for _ in range(6)]
    right = [random_graph(rng) for _ in range(4)]
    for kind in (WL_SUBTREE, GRAPHLET3):
        kc = KernelConfig(kind=kind, wl_iterations=2, normalized=True)
        mat = kernel_matrix(kc, left, right)
        assert mat.shape == (6, 4)
        for i, g1 in enumerate(left):
            for j, g2 in enumerate(right):
                assert mat[i, j] == kernel_eval(kc, g1, g2)


def test_kernel_matrix_shared_table_and_caching():
    rng = np.random.default_rng(50)
    left = [random_graph(rng) for _ in range(5)]
    right = [random_graph(rng) for _ in range(5)]
    kc = KernelConfig(kind=WL_SUBTREE, wl_iterations=2, normalized=True)
    plain = kernel_matrix(kc, left, right)
    table = WlColorTable(3, 2)
    first = kernel_matrix(kc, left, right, table=table,
                          cache_left=True, cache_right=True)
    again = kernel_matrix(kc, left, right, table=table,
                          cache_left=True, cache_right=True)
    assert np.array_equal(plain, first)
    assert np.array_equal(first, again)


def test_wl_indistinguishable_cases():
    two_tri = disjoint_union(cycle_graph(3), cycle_graph(3))
    assert wl_indistinguishable(two_tri, cycle_graph(6))
    assert not wl_indistinguishable(K3, P3)
    assert not wl_indistinguishable(star_graph(3), path_graph(4))
    assert wl_indistinguishable(cycle_graph(4), cycle_graph(4))
    g = random_graph(np.random.default_rng(51), n_max=7)
    perm = np.random.default_rng(52).permutation(g.num_nodes).tolist()
    assert wl_indistinguishable(g, g.permuted(perm))


def test_kernel_config_validation():
    with pytest.raises(KernelError):
        KernelConfig(kind="unknown", wl_iterations=1, normalized=True)
    with pytest.raises(KernelError):
        KernelConfig(kind=WL_SUBTREE, wl_iterations=0, normalized=True)
