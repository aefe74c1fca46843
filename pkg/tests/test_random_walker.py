import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import ndimage, sparse

from nucleoseg.errors import ConvergenceError, UnseededComponentError
from nucleoseg.random_walker import (
    build_graph,
    combine_probabilities,
    grow_seed_regions,
    laplacian,
    laplacian_row_sums,
    pcg,
    response_image,
    solve_dirichlet,
    solve_graph_dirichlet,
)
from nucleoseg.seeds import SeedSet


def dense_laplacian(image, mask, beta):
    """Loop-assembled Laplacian over foreground voxels in raster order."""
    index = {tuple(p): i for i, p in enumerate(np.argwhere(mask))}
    L = np.zeros((len(index), len(index)))
    for p, i in index.items():
        for axis in range(3):
            q = list(p)
            q[axis] += 1
            j = index.get(tuple(q))
            if j is None:
                continue
            w = math.exp(-beta * (image[p] - image[tuple(q)]) ** 2) + 1e-6
            L[i, j] -= w
            L[j, i] -= w
            L[i, i] += w
            L[j, j] += w
    return L, index


def absorbing_chain(W, seeds):
    """Absorption probabilities of a random walk with transition D^-1 W."""
    P = W / W.sum(axis=1, keepdims=True)
    free = np.setdiff1d(np.arange(len(W)), seeds)
    Q = P[np.ix_(free, free)]
    R = P[np.ix_(free, seeds)]
    N = np.linalg.inv(np.eye(len(free)) - Q)
    out = np.zeros((len(W), len(seeds)))
    out[seeds, np.arange(len(seeds))] = 1.0
    out[free] = N @ R
    return out


def random_connected_graph(rng, n):
    W = np.zeros((n, n))
    # a random spanning tree keeps the graph connected
    order = rng.permutation(n)
    for k in range(1, n):
        a, b = order[k], order[rng.integers(k)]
        W[a, b] = W[b, a] = rng.uniform(0.1, 1.0)
    extra = rng.random((n, n)) < 3.0 / n
    extra = np.triu(extra, 1)
    w = rng.uniform(0.1, 1.0, (n, n))
    W = np.where(extra & (W == 0), w, W)
    W = np.triu(W, 1)
    return W + W.T


class TestBuildGraph:
    def test_equal_intensities(self):
        g = build_graph(np.full((1, 1, 2), 0.3), np.ones((1, 1, 2), bool))
        assert g.weights.tolist() == [1.0 + 1e-6]

    def test_full_contrast_edge(self):
        image = np.array([[[0.0, 1.0]]])
        g = build_graph(image, np.ones(image.shape, bool), beta=50)
        assert g.weights[0] == pytest.approx(math.exp(-50) + 1e-6, rel=1e-15)
        assert math.exp(-50) == pytest.approx(1.9287498479639178e-22, rel=1e-12)

    def test_doubling_beta_decreases_weights(self, rng):
        image = rng.random((4, 4, 4))
        mask = np.ones(image.shape, bool)
        a = build_graph(image, mask, beta=25).weights
        b = build_graph(image, mask, beta=50).weights
        assert np.all(b < a)

    def test_edges_and_degrees(self, rng):
        mask = rng.random((5, 4, 3)) < 0.7
        image = rng.random(mask.shape)
        g = build_graph(image, mask)
        L, index = dense_laplacian(image, mask, 50)
        assert len(g.edges) == int((L < 0).sum() // 2)
        np.testing.assert_allclose(g.degrees, np.diag(L), rtol=1e-14)
        assert np.all(g.weights > 0)

    def test_empty_foreground(self):
        with pytest.raises(ValueError):
            build_graph(np.zeros((2, 2, 2)), np.zeros((2, 2, 2), bool))

    def test_nonpositive_beta(self):
        with pytest.raises(ValueError):
            build_graph(np.zeros((2, 2, 2)), np.ones((2, 2, 2), bool), beta=0)


class TestLaplacian:
    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_row_sums_exactly_zero(self, seed):
        rng = np.random.default_rng(seed)
        mask = rng.random((5, 5, 5)) < 0.6
        mask[0, 0, 0] = True
        L = laplacian(build_graph(rng.random(mask.shape), mask, beta=rng.uniform(1, 100)))
        assert np.all(laplacian_row_sums(L) == 0.0)
        diag = L.diagonal()
        for i in range(L.shape[0]):
            row = L.data[L.indptr[i] : L.indptr[i + 1]]
            assert abs(math.fsum(row)) <= 1e-15 * max(diag[i], 1.0)

    def test_matches_dense_assembly(self, rng):
        mask = rng.random((4, 5, 3)) < 0.8
        image = rng.random(mask.shape)
        L = laplacian(build_graph(image, mask)).toarray()
        D, _ = dense_laplacian(image, mask, 50)
        np.testing.assert_allclose(L, D, rtol=1e-13, atol=1e-15)
        assert np.array_equal(L, L.T)


class TestSolve:
    def _path(self, n):
        shape = (1, 1, n)
        return build_graph(np.zeros(shape), np.ones(shape, bool))

    def test_three_path_midpoint(self):
        f = solve_dirichlet(self._path(3), SeedSet([[0, 0, 0], [0, 0, 2]]))
        np.testing.assert_allclose(f.values[1], [0.5, 0.5], atol=1e-12)

    def test_five_path_interior(self):
        f = solve_dirichlet(self._path(5), SeedSet([[0, 0, 0], [0, 0, 4]]))
        np.testing.assert_allclose(f.values[1:4, 0], [0.75, 0.5, 0.25], atol=1e-10)

    @pytest.mark.parametrize("n", range(3, 18))
    def test_uniform_path_is_linear(self, n):
        f = solve_dirichlet(self._path(n), SeedSet([[0, 0, 0], [0, 0, n - 1]]))
        expected = 1.0 - np.arange(n) / (n - 1)
        np.testing.assert_allclose(f.values[:, 0], expected, atol=1e-8)

    def test_single_seed_gives_ones(self, rng):
        mask = np.ones((4, 4, 4), bool)
        f = solve_dirichlet(build_graph(rng.random(mask.shape), mask), SeedSet([[1, 2, 3]]))
        assert np.all(f.values == 1.0)

    def test_grid_matches_dense_solve(self, rng):
        mask = np.ones((6, 5, 4), bool)
        image = rng.random(mask.shape)
        seeds = SeedSet([[0, 0, 0], [5, 4, 3], [3, 0, 2]])
        f = solve_dirichlet(build_graph(image, mask), seeds, tol=1e-12)
        L, index = dense_laplacian(image, mask, 50)
        sv = [index[tuple(c)] for c in seeds.coords]
        free = np.setdiff1d(np.arange(len(L)), sv)
        x = np.linalg.solve(L[np.ix_(free, free)], -L[np.ix_(free, sv)])
        np.testing.assert_allclose(f.values[free], x, atol=1e-8)

    def test_matches_absorbing_chain_on_random_graphs(self):
        rng = np.random.default_rng(2024)
        for _ in range(20):
            n = int(rng.integers(5, 201))
            W = random_connected_graph(rng, n)
            K = int(rng.integers(2, 6))
            seeds = rng.choice(n, size=K, replace=False)
            L = sparse.csr_matrix(np.diag(W.sum(axis=1)) - W)
            got = solve_graph_dirichlet(L, seeds)
            np.testing.assert_allclose(got, absorbing_chain(W, seeds), atol=1e-6)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.integers(1, 5))
    def test_probability_field_invariants(self, seed, K):
        rng = np.random.default_rng(seed)
        mask = np.ones((5, 4, 4), bool)
        image = rng.random(mask.shape)
        flat = rng.choice(mask.size, size=K, replace=False)
        coords = np.column_stack(np.unravel_index(flat, mask.shape))
        f = solve_dirichlet(build_graph(image, mask), SeedSet(coords))
        assert np.all((f.values >= 0) & (f.values <= 1))
        np.testing.assert_allclose(f.values.sum(axis=1), 1.0, atol=1e-6)
        assert np.array_equal(f.values[f.seed_vertices], np.eye(K))

    def test_components_solved_independently(self):
        mask = np.zeros((7, 1, 1), bool)
        mask[:3] = mask[4:] = True
        g = build_graph(np.zeros(mask.shape), mask)
        f = solve_dirichlet(g, SeedSet([[0, 0, 0], [2, 0, 0], [5, 0, 0]]))
        assert f.values[:3, 2].sum() == 0
        assert np.all(f.values[3:, 2] == 1.0)
        np.testing.assert_allclose(f.values[1, :2], [0.5, 0.5])

    def test_unseeded_component(self):
        mask = np.zeros((5, 1, 1), bool)
        mask[0] = mask[4] = True
        g = build_graph(np.zeros(mask.shape), mask)
        with pytest.raises(UnseededComponentError, match="unseeded component"):
            solve_dirichlet(g, SeedSet([[0, 0, 0]]))

    def test_seed_off_foreground(self):
        mask = np.ones((3, 1, 1), bool)
        mask[2] = False
        with pytest.raises(ValueError):
            solve_dirichlet(build_graph(np.zeros(mask.shape), mask), SeedSet([[2, 0, 0]]))

    def test_nonconvergence_carries_residual(self, rng):
        A = laplacian(build_graph(rng.random((6, 6, 6)), np.ones((6, 6, 6), bool)))
        A = A + sparse.identity(A.shape[0]) * 1e-3
        with pytest.raises(ConvergenceError) as info:
            pcg(A.tocsr(), rng.random(A.shape[0]), tol=1e-12, maxiter=2)
        assert info.value.residual > 1e-12

    def test_pcg_solves_spd_system(self, rng):
        M = rng.random((30, 30))
        A = sparse.csr_matrix(M @ M.T + 30 * np.eye(30))
        b = rng.random((30, 2))
        x = pcg(A, b, tol=1e-12)
        np.testing.assert_allclose(A @ x, b, atol=1e-9)

    def test_executor_does_not_change_result(self, rng):
        from concurrent.futures import ThreadPoolExecutor

        mask = np.zeros((9, 4, 4), bool)
        mask[:4] = mask[5:] = True
        image = rng.random(mask.shape)
        seeds = SeedSet([[0, 0, 0], [3, 3, 3], [5, 0, 0], [8, 3, 3]])
        g = build_graph(image, mask)
        a = solve_dirichlet(g, seeds)
        with ThreadPoolExecutor(3) as pool:
            b = solve_dirichlet(g, seeds, executor=pool)
        assert np.array_equal(a.values, b.values)


class TestResponse:
    def test_balanced_point_is_maximum_and_seed_minimum(self):
        shape = (1, 1, 5)
        g = build_graph(np.zeros(shape), np.ones(shape, bool))
        f = solve_dirichlet(g, SeedSet([[0, 0, 0], [0, 0, 4]]))
        R = response_image(f).ravel()
        assert R[2] == 1.0 and R[0] == 0.0 and R[4] == 0.0

    def test_three_label_ordering(self):
        a = combine_probabilities([1 / 3, 1 / 3, 1 / 3])
        b = combine_probabilities([0.6, 0.3, 0.1])
        assert a == pytest.approx(3 * math.log(1 / 3))
        assert b == pytest.approx(math.log(0.018))
        assert a > b

    def test_single_seed_component_is_zero(self, rng):
        mask = np.ones((3, 3, 3), bool)
        f = solve_dirichlet(build_graph(rng.random(mask.shape), mask), SeedSet([[1, 1, 1]]))
        assert not response_image(f).any()

    def test_permuting_seeds(self, rng):
        mask = np.ones((6, 6, 5), bool)
        image = ndimage.gaussian_filter(rng.random(mask.shape), 1)
        seeds = SeedSet([[0, 0, 0], [5, 5, 4], [0, 5, 2], [3, 2, 1]])
        perm = np.array([2, 0, 3, 1])
        g = build_graph(image, mask)
        f = solve_dirichlet(g, seeds, tol=1e-12)
        fp = solve_dirichlet(g, seeds.permuted(perm), tol=1e-12)
        np.testing.assert_allclose(fp.values, f.values[:, perm], atol=1e-9)
        np.testing.assert_allclose(response_image(fp), response_image(f), atol=1e-8)

    def test_range(self, rng):
        mask = np.ones((5, 5, 5), bool)
        f = solve_dirichlet(
            build_graph(rng.random(mask.shape), mask), SeedSet([[0, 0, 0], [4, 4, 4]])
        )
        R = response_image(f)
        assert R.min() == 0.0 and R.max() == 1.0


class TestGrow:
    def test_profile_splits_at_crest(self):
        R = np.array([0.1, 0.4, 0.9, 0.4, 0.1]).reshape(5, 1, 1)
        out = grow_seed_regions(R, SeedSet([[0, 0, 0], [4, 0, 0]]), np.ones(R.shape, bool))
        assert out.ravel().tolist() == [1, 1, 1, 2, 2]

    def test_constant_response_fills_component(self):
        mask = np.zeros((6, 6, 1), bool)
        mask[1:5, 1:5] = True
        out = grow_seed_regions(np.full(mask.shape, 0.5), SeedSet([[2, 2, 0]]), mask)
        assert np.array_equal(out > 0, mask)

    def test_isolated_voxel(self):
        mask = np.zeros((3, 3, 3), bool)
        mask[1, 1, 1] = True
        out = grow_seed_regions(np.zeros(mask.shape), SeedSet([[1, 1, 1]]), mask)
        assert out.sum() == 1 and out[1, 1, 1] == 1

    def test_stops_at_strict_decrease(self):
        R = np.array([0.5, 0.7, 0.6, 0.9]).reshape(4, 1, 1)
        out = grow_seed_regions(R, SeedSet([[0, 0, 0]]), np.ones(R.shape, bool))
        assert out.ravel().tolist() == [1, 1, 0, 0]

    def test_delta_tolerates_small_dips(self):
        R = np.array([0.5, 0.7, 0.6, 0.9]).reshape(4, 1, 1)
        out = grow_seed_regions(R, SeedSet([[0, 0, 0]]), np.ones(R.shape, bool), delta=0.15)
        assert out.ravel().tolist() == [1, 1, 1, 1]

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.integers(1, 6))
    def test_regions_disjoint_and_contain_seeds(self, seed, K):
        rng = np.random.default_rng(seed)
        mask = rng.random((6, 6, 6)) < 0.7
        fg = np.flatnonzero(mask)
        if len(fg) < K:
            return
        flat = rng.choice(fg, size=K, replace=False)
        coords = np.column_stack(np.unravel_index(flat, mask.shape))
        R = rng.random(mask.shape)
        out = grow_seed_regions(R, SeedSet(coords), mask)
        for k, c in enumerate(coords, start=1):
            assert out[tuple(c)] == k
        assert not out[~mask].any()
        # labels are one per voxel by construction; check the growth rule
        for p in np.argwhere(out > 0):
            k = out[tuple(p)]
            if any(np.array_equal(p, c) for c in coords):
                continue
            nb = []
            for axis in range(3):
                for d in (-1, 1):
                    q = p.copy()
                    q[axis] += d
                    if 0 <= q[axis] < mask.shape[axis] and out[tuple(q)] == k:
                        nb.append(R[tuple(q)])
            assert nb and min(nb) <= R[tuple(p)]
