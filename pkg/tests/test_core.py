"""Tests for marginals, structures, kernels, and the Hilbert metric."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from msbridge.core import (
    BARYCENTRIC,
    PATH,
    SERIES_PARALLEL,
    GraphStructure,
    KernelSet,
    KernelUnderflowError,
    Marginal,
    ScalingFamily,
    build_empirical_marginal,
    build_kernel_set,
    canonical_variant,
    edge_costs,
    gibbs_kernel,
    hilbert_metric,
    squared_euclidean_cost,
)


def _positive_vectors(n=4):
    return st.lists(
        st.floats(min_value=1e-6, max_value=1e6, allow_nan=False, allow_infinity=False),
        min_size=n, max_size=n,
    ).map(np.asarray)


class TestSquaredEuclideanCost:
    def test_two_point_line(self):
        x = np.array([[0.0], [1.0]])
        c = squared_euclidean_cost(x, x)
        np.testing.assert_array_equal(c, [[0.0, 1.0], [1.0, 0.0]])

    def test_matches_double_loop(self):
        rng = np.random.default_rng(42)
        x = rng.normal(size=(5, 3))
        y = rng.normal(size=(7, 3))
        c = squared_euclidean_cost(x, y)
        expected = np.empty((5, 7))
        for i in range(5):
            for j in range(7):
                expected[i, j] = np.sum((x[i] - y[j]) ** 2)
        np.testing.assert_allclose(c, expected, rtol=1e-14)

    def test_self_cost_symmetric_zero_diagonal(self):
        rng = np.random.default_rng(7)
        x = rng.normal(size=(6, 2))
        c = squared_euclidean_cost(x, x)
        np.testing.assert_array_equal(c, c.T)
        np.testing.assert_array_equal(np.diag(c), np.zeros(6))

    def test_swap_is_transpose(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(4, 2))
        y = rng.normal(size=(5, 2))
        np.testing.assert_array_equal(squared_euclidean_cost(x, y),
                                      squared_euclidean_cost(y, x).T)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="dimensions disagree"):
            squared_euclidean_cost(np.zeros((2, 2)), np.zeros((2, 3)))


class TestGibbsKernel:
    def test_single_entry(self):
        c = np.array([[3.0]])
        k = gibbs_kernel(c, 2.0, normalize=False)
        np.testing.assert_allclose(k, [[np.exp(-1.5)]], rtol=1e-15)

    def test_normalization_divides_by_max(self):
        c = np.array([[0.0, 2.0], [4.0, 1.0]])
        k = gibbs_kernel(c, 1.0, normalize=True)
        np.testing.assert_allclose(k, np.exp(-c / 4.0), rtol=1e-15)

    def test_entries_in_unit_interval(self):
        rng = np.random.default_rng(0)
        c = rng.uniform(0.0, 10.0, size=(4, 5))
        k = gibbs_kernel(c, 0.5)
        assert np.all(k > 0.0) and np.all(k <= 1.0)

    @given(eps1=st.floats(0.05, 10.0), scale=st.floats(1.1, 5.0))
    @settings(max_examples=50, deadline=None)
    def test_monotone_in_epsilon(self, eps1, scale):
        c = np.array([[0.3, 1.7], [2.4, 0.9]])
        k1 = gibbs_kernel(c, eps1)
        k2 = gibbs_kernel(c, eps1 * scale)
        assert np.all(k2 >= k1)

    def test_underflow_raises_with_advice(self):
        c = np.array([[0.0, 1e7]])
        with pytest.raises(KernelUnderflowError, match="increase epsilon"):
            gibbs_kernel(c, 1.0, normalize=False)

    def test_negative_cost_rejected(self):
        with pytest.raises(ValueError, match="nonnegative"):
            gibbs_kernel(np.array([[-1.0]]), 1.0)


class TestHilbertMetric:
    def test_hand_value(self):
        # ratios 0.5 and 2 -> log 4
        assert hilbert_metric([1.0, 2.0], [2.0, 1.0]) == pytest.approx(np.log(4.0))

    def test_identical_vectors_give_exact_zero(self):
        u = np.array([0.3, 1.4, 2.2])
        assert hilbert_metric(u, u) == 0.0

    @given(u=_positive_vectors(), v=_positive_vectors())
    @settings(max_examples=100, deadline=None)
    def test_symmetry(self, u, v):
        np.testing.assert_allclose(hilbert_metric(u, v), hilbert_metric(v, u),
                                   rtol=1e-12)

    @given(u=_positive_vectors(), v=_positive_vectors(),
           alpha=st.floats(1e-3, 1e3))
    @settings(max_examples=100, deadline=None)
    def test_scale_invariance(self, u, v, alpha):
        np.testing.assert_allclose(hilbert_metric(alpha * u, v),
                                   hilbert_metric(u, v), rtol=1e-9, atol=1e-12)

    @given(u=_positive_vectors(), alpha=st.floats(1e-3, 1e3))
    @settings(max_examples=100, deadline=None)
    def test_zero_iff_proportional(self, u, alpha):
        assert hilbert_metric(u, alpha * u) <= 1e-9

    @given(u=_positive_vectors(), v=_positive_vectors(), w=_positive_vectors())
    @settings(max_examples=100, deadline=None)
    def test_triangle_inequality(self, u, v, w):
        duw = hilbert_metric(u, w)
        dv = hilbert_metric(u, v) + hilbert_metric(v, w)
        assert duw <= dv + 1e-9 * max(1.0, dv)

    def test_requires_positive(self):
        with pytest.raises(ValueError, match="positive"):
            hilbert_metric([1.0, 0.0], [1.0, 1.0])

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            hilbert_metric([1.0, 2.0], [1.0, 2.0, 3.0])


class TestMarginal:
    def test_empirical_is_uniform(self):
        m = build_empirical_marginal(np.arange(6.0).reshape(3, 2), label=(1, 2),
                                     time=0.5)
        np.testing.assert_array_equal(m.weights, np.full(3, 1.0 / 3.0))
        assert m.n == 3 and m.dim == 2
        assert m.label == (1, 2) and m.time == 0.5

    def test_rejects_negative_weights(self):
        with pytest.raises(ValueError, match="nonnegative"):
            Marginal(np.zeros((2, 1)), np.array([1.5, -0.5]))

    def test_rejects_bad_sum(self):
        with pytest.raises(ValueError, match="sum to 1"):
            Marginal(np.zeros((2, 1)), np.array([0.6, 0.6]))

    def test_rejects_length_mismatch(self):
        with pytest.raises(ValueError, match="disagree"):
            Marginal(np.zeros((3, 1)), np.array([0.5, 0.5]))

    def test_rejects_nan(self):
        with pytest.raises(ValueError, match="non-finite"):
            Marginal(np.array([[np.nan]]), np.array([1.0]))

    def test_rejects_empty(self):
        with pytest.raises(ValueError, match="non-empty"):
            build_empirical_marginal(np.zeros((0, 2)))

    def test_arrays_are_immutable(self):
        m = build_empirical_marginal(np.zeros((2, 1)))
        with pytest.raises(ValueError):
            m.points[0, 0] = 1.0


class TestGraphStructure:
    def test_path_index_set(self):
        st_ = GraphStructure(PATH, s=3)
        assert st_.index_set() == [(1, 1), (1, 2), (1, 3)]
        assert st_.size == 3

    def test_barycentric_index_set_order(self):
        st_ = GraphStructure(BARYCENTRIC, s=2, J=2, n0=3)
        assert st_.index_set() == [(0, 1), (0, 2), (1, 1), (1, 2), (2, 1), (2, 2)]
        assert st_.size == 6

    def test_series_parallel_index_set_order(self):
        st_ = GraphStructure(SERIES_PARALLEL, s=4, J=2)
        assert st_.index_set() == [(1, 1), (1, 2), (1, 3), (2, 2), (2, 3), (1, 4)]
        assert st_.size == 2 * 2 + 2

    def test_published_cardinalities(self):
        # J=4, s=7: 35 constrained nodes with a barycenter chain, 22 without
        assert GraphStructure(BARYCENTRIC, s=7, J=4, n0=5).size == 35
        assert GraphStructure(SERIES_PARALLEL, s=7, J=4).size == 22

    def test_path_requires_single_core(self):
        with pytest.raises(ValueError, match="J=1"):
            GraphStructure(PATH, s=3, J=2)

    def test_barycentric_requires_n0(self):
        with pytest.raises(ValueError, match="n0"):
            GraphStructure(BARYCENTRIC, s=3, J=2)

    def test_n0_rejected_elsewhere(self):
        with pytest.raises(ValueError, match="n0"):
            GraphStructure(PATH, s=3, n0=4)

    def test_degenerate_series_parallel_warns(self):
        with pytest.warns(UserWarning, match="single edge bundle"):
            GraphStructure(SERIES_PARALLEL, s=2, J=3)

    def test_too_few_snapshots(self):
        with pytest.raises(ValueError, match="two snapshots"):
            GraphStructure(PATH, s=1)

    def test_variant_aliases(self):
        assert canonical_variant("bc") == BARYCENTRIC
        assert canonical_variant("SP") == SERIES_PARALLEL
        assert canonical_variant("path") == PATH
        with pytest.raises(ValueError, match="unknown structure"):
            canonical_variant("ring")

    def test_edge_nodes_series_parallel(self):
        st_ = GraphStructure(SERIES_PARALLEL, s=4, J=2)
        assert st_.edge_nodes(("leg", 2, 1)) == ((1, 1), (2, 2))
        assert st_.edge_nodes(("leg", 2, 2)) == ((2, 2), (2, 3))
        assert st_.edge_nodes(("leg", 2, 3)) == ((2, 3), (1, 4))

    def test_edge_nodes_barycentric(self):
        st_ = GraphStructure(BARYCENTRIC, s=3, J=2, n0=2)
        assert st_.edge_nodes(("chain", 2)) == ((0, 2), (0, 3))
        assert st_.edge_nodes(("spoke", 2, 3)) == ((0, 3), (2, 3))


def _path_marginals(rng, s, n, d=2):
    return {(1, sig): build_empirical_marginal(rng.normal(size=(n, d)))
            for sig in range(1, s + 1)}


class TestBuildKernelSet:
    def test_shapes_and_positivity(self):
        rng = np.random.default_rng(0)
        structure = GraphStructure(BARYCENTRIC, s=2, J=2, n0=3)
        marginals = {}
        for sig in (1, 2):
            marginals[(0, sig)] = build_empirical_marginal(rng.normal(size=(3, 2)))
            for j in (1, 2):
                marginals[(j, sig)] = build_empirical_marginal(rng.normal(size=(4, 2)))
        ks = build_kernel_set(structure, marginals, epsilon=0.5)
        assert ks.kernels[("chain", 1)].shape == (3, 3)
        assert ks.kernels[("spoke", 2, 1)].shape == (3, 4)
        for k in ks.kernels.values():
            assert np.all(k > 0.0)

    def test_global_normalizer_shared_across_edges(self):
        rng = np.random.default_rng(1)
        structure = GraphStructure(PATH, s=3)
        marginals = _path_marginals(rng, 3, 4)
        ks = build_kernel_set(structure, marginals, epsilon=1.0)
        raw = edge_costs(structure, marginals)
        global_max = max(float(c.max()) for c in raw.values())
        assert ks.cost_normalizer == global_max
        for edge, c in raw.items():
            np.testing.assert_allclose(ks.kernels[edge],
                                       np.exp(-c / global_max), rtol=1e-15)

    def test_normalization_disabled(self):
        rng = np.random.default_rng(2)
        structure = GraphStructure(PATH, s=2)
        marginals = _path_marginals(rng, 2, 3)
        ks = build_kernel_set(structure, marginals, epsilon=2.0,
                              normalize_costs=False)
        assert ks.cost_normalizer == 1.0
        raw = edge_costs(structure, marginals)
        np.testing.assert_allclose(ks.kernels[("chain", 1)],
                                   np.exp(-raw[("chain", 1)] / 2.0), rtol=1e-15)

    def test_identical_supports_degenerate_normalizer(self):
        structure = GraphStructure(PATH, s=2)
        pts = np.zeros((2, 1))
        marginals = {(1, 1): build_empirical_marginal(pts),
                     (1, 2): build_empirical_marginal(pts)}
        ks = build_kernel_set(structure, marginals, epsilon=1.0)
        assert ks.cost_normalizer == 1.0
        np.testing.assert_array_equal(ks.kernels[("chain", 1)], np.ones((2, 2)))

    def test_underflow_advice_when_normalization_off(self):
        structure = GraphStructure(PATH, s=2)
        marginals = {(1, 1): build_empirical_marginal([[0.0]]),
                     (1, 2): build_empirical_marginal([[1e5]])}
        with pytest.raises(KernelUnderflowError):
            build_kernel_set(structure, marginals, epsilon=1.0,
                             normalize_costs=False)

    def test_missing_marginal_rejected(self):
        rng = np.random.default_rng(3)
        structure = GraphStructure(PATH, s=3)
        marginals = _path_marginals(rng, 2, 3)
        with pytest.raises(ValueError, match="missing"):
            build_kernel_set(structure, marginals, epsilon=1.0)


class TestScalingFamily:
    def test_ones(self):
        structure = GraphStructure(PATH, s=2)
        fam = ScalingFamily.ones(structure, {(1, 1): 2, (1, 2): 3})
        np.testing.assert_array_equal(fam.u[(1, 2)], np.ones(3))

    def test_rejects_nonpositive(self):
        structure = GraphStructure(PATH, s=2)
        with pytest.raises(ValueError, match="positive"):
            ScalingFamily(structure, {(1, 1): np.array([1.0, 0.0]),
                                      (1, 2): np.ones(2)})

    def test_rejects_wrong_keys(self):
        structure = GraphStructure(PATH, s=2)
        with pytest.raises(ValueError, match="keys"):
            ScalingFamily(structure, {(1, 1): np.ones(2)})
