import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import ball
from nucleoseg.errors import ContourCollapsedError
from nucleoseg.levelset import (
    LocalizationParams,
    evolve,
    init_signed_distance,
    refine_all,
    smoothed_dirac,
    smoothed_heaviside,
    surface_area,
)


def dice(a, b):
    return 2 * np.count_nonzero(a & b) / (np.count_nonzero(a) + np.count_nonzero(b))


def sphericity(phi):
    """pi^(1/3) (6V)^(2/3) / A with the smoothed level-set area and volume."""
    grad = np.gradient(phi)
    area = np.sum(smoothed_dirac(phi) * np.sqrt(sum(g**2 for g in grad)))
    volume = np.sum(smoothed_heaviside(phi))
    return math.pi ** (1 / 3) * (6 * volume) ** (2 / 3) / area


def full_region(front, shape):
    out = np.zeros(shape, bool)
    out[front.slices] = front.region()
    return out


class TestHeaviside:
    def test_examples(self):
        assert smoothed_heaviside(0.0) == 0.5
        assert smoothed_heaviside(3.0, 1.5) == 1.0
        assert smoothed_heaviside(-3.0, 1.5) == 0.0
        assert smoothed_heaviside(0.75, 1.5) == pytest.approx(0.75 + 1 / (2 * math.pi), abs=1e-15)
        assert 0.75 + 1 / (2 * math.pi) == pytest.approx(0.90915, abs=1e-5)

    @given(st.floats(-10, 10), st.floats(-10, 10), st.floats(0.1, 5))
    def test_monotone_and_bounded(self, a, b, eps):
        lo, hi = sorted((a, b))
        h_lo, h_hi = smoothed_heaviside(lo, eps), smoothed_heaviside(hi, eps)
        assert 0 <= h_lo <= h_hi <= 1
        assert h_lo + (1 - h_lo) == 1

    def test_bad_eps(self):
        with pytest.raises(ValueError):
            smoothed_heaviside(0.0, 0.0)


class TestDirac:
    def test_examples(self):
        assert smoothed_dirac(0.0, 1.5) == pytest.approx(1 / 1.5, abs=1e-15)
        assert smoothed_dirac(1.6, 1.5) == 0.0
        assert smoothed_dirac(-2.0, 1.5) == 0.0

    def test_unit_mass(self):
        phi = np.linspace(-1.5, 1.5, 300001)
        mass = np.trapezoid(smoothed_dirac(phi, 1.5), phi)
        assert mass == pytest.approx(1.0, abs=1e-9)

    def test_is_derivative_of_heaviside(self):
        h = 1e-3
        phi = np.arange(-3.0, 3.0 + h / 2, h)
        numeric = np.gradient(smoothed_heaviside(phi, 1.5), h)
        assert np.max(np.abs(numeric - smoothed_dirac(phi, 1.5))) <= 1e-4 + 1e-12


class TestInit:
    def test_ball_center_depth(self):
        shape = (21, 21, 21)
        region = ball(shape, (10, 10, 10), 5)
        f = init_signed_distance(region.astype(np.int32), 1, radius=9)
        center = tuple(np.subtract((10, 10, 10), f.origin))
        # brute-force distance from the center to the complement
        out = np.argwhere(~region)
        d = np.sqrt(((out - 10) ** 2).sum(axis=1)).min()
        assert abs(f.phi[center] - d) <= 0.5
        assert abs(f.phi[center] - 5) <= 0.5 + 1e-12

    def test_single_voxel(self):
        labels = np.zeros((9, 9, 9), np.int32)
        labels[4, 4, 4] = 7
        f = init_signed_distance(labels, 7, radius=2, margin=1)
        region = full_region(f, labels.shape)
        assert np.array_equal(region, labels == 7)
        assert f.phi[tuple(np.subtract((4, 4, 4), f.origin))] == 0.5
        assert np.count_nonzero(f.phi > 0) == 1

    def test_region_is_reproduced(self, rng):
        labels = (rng.random((12, 12, 12)) < 0.4).astype(np.int32)
        f = init_signed_distance(labels, 1, radius=3)
        assert np.array_equal(full_region(f, labels.shape), labels == 1)

    def test_layers_and_ranges(self):
        labels = ball((24, 24, 24), (12, 11, 12), 6).astype(np.int32)
        f = init_signed_distance(labels, 1)
        f.check_layers()
        for k in (-1, 1):
            vals = np.abs(f.phi.ravel()[f.layer_lists()[k]])
            assert np.all((vals > 0.5) & (vals <= 1.5))

    def test_box_is_padded(self):
        labels = np.zeros((60, 60, 60), np.int32)
        labels[28:32, 28:32, 28:32] = 1
        f = init_signed_distance(labels, 1, radius=9, margin=3)
        assert f.slices == (slice(16, 44),) * 3

    def test_empty_region(self):
        with pytest.raises(ValueError):
            init_signed_distance(np.zeros((4, 4, 4), np.int32), 1)


class TestEvolve:
    def test_constant_image_without_curvature_is_stationary(self):
        labels = ball((26, 26, 26), (13, 12, 13), 6).astype(np.int32)
        f = init_signed_distance(labels, 1)
        start = f.region().copy()
        evolve(f, np.full(labels.shape, 0.4), LocalizationParams(lam=0, max_iters=25))
        assert np.array_equal(f.region(), start)
        assert f.converged

    def test_curvature_flow_shrinks_cube(self):
        shape = (30, 30, 30)
        labels = np.zeros(shape, np.int32)
        labels[8:22, 8:22, 8:22] = 1
        f = init_signed_distance(labels, 1)
        params = LocalizationParams()
        f.attach(np.full(shape, 0.5), params)
        areas = [surface_area(f.region())]
        volumes = [f.region().sum()]
        start = sphericity(f.phi)
        for _ in range(30):
            f.step(params)
            areas.append(surface_area(f.region()))
            volumes.append(f.region().sum())
        assert all(b <= a for a, b in zip(areas, areas[1:]))
        assert all(b <= a for a, b in zip(volumes, volumes[1:]))
        assert areas[-1] < areas[0]
        sphere = init_signed_distance(ball(shape, (15, 15, 15), 7).astype(np.int32), 1)
        assert start < 0.9
        assert sphericity(f.phi) > 0.97 * sphericity(sphere.phi)

    def test_binary_ball_converges_to_true_surface(self):
        shape = (40, 40, 40)
        c = 20.0
        image = ball(shape, (c, c, c), 8).astype(float)
        labels = ball(shape, (c, c, c), 10).astype(np.int32)
        f = init_signed_distance(labels, 1)
        evolve(f, image, LocalizationParams())
        assert f.converged
        pts = np.argwhere(f.lab == 0) + np.array(f.origin)
        r = np.sqrt(((pts - c) ** 2).sum(axis=1))
        assert np.all(np.abs(r - 8) <= 1.0)

    @settings(max_examples=6, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.sampled_from(["uniform_modeling", "means_separation"]))
    def test_layer_invariants_every_iteration(self, seed, kind):
        rng = np.random.default_rng(seed)
        shape = (28, 28, 28)
        truth = ball(shape, (14, 13, 14), rng.uniform(5, 8))
        image = np.clip(np.where(truth, 0.8, 0.1) + rng.normal(0, 0.15, shape), 0, 1)
        labels = ball(shape, (14 + rng.integers(-2, 3), 14, 13), rng.uniform(4, 9))
        f = init_signed_distance(labels.astype(np.int32), 1)
        params = LocalizationParams(energy_kind=kind)
        f.attach(image, params)
        for _ in range(15):
            f.step(params)
            f.check_layers()

    def test_collapse_raises(self):
        shape = (20, 20, 20)
        labels = np.zeros(shape, np.int32)
        labels[9:11, 9:11, 9:11] = 1
        f = init_signed_distance(labels, 1)
        with pytest.raises(ContourCollapsedError, match="contour collapsed"):
            evolve(f, np.full(shape, 0.5), LocalizationParams(lam=5.0, max_iters=100))


class TestParams:
    def test_defaults(self):
        p = LocalizationParams()
        assert (p.radius, p.lam, p.max_iters, p.convergence_frac) == (9.0, 0.5, 200, 0.001)

    @pytest.mark.parametrize(
        "kw",
        [{"radius": 0.5}, {"lam": -0.1}, {"energy_kind": "histogram_separation"},
         {"energy_kind": "bogus"}, {"max_iters": -1}],
    )
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            LocalizationParams(**kw)


class TestRefineAll:
    def test_zero_iterations_is_identity(self, rng):
        labels = rng.integers(0, 4, (10, 10, 10)).astype(np.int32)
        out = refine_all(labels, rng.random(labels.shape), LocalizationParams(max_iters=0))
        assert np.array_equal(out, labels)

    @pytest.mark.parametrize("kind", ["uniform_modeling", "means_separation"])
    def test_jagged_sphere_improves(self, kind):
        rng = np.random.default_rng(3)
        shape = (36, 36, 36)
        g = np.mgrid[:36, :36, :36]
        d = np.sqrt(((g - 18) ** 2).sum(axis=0))
        truth = d <= 9
        image = np.clip(np.where(truth, 0.8, 0.1) + rng.normal(0, 0.1, shape), 0, 1)
        jagged = truth.copy()
        flip = (d > 7) & (d < 11) & (rng.random(shape) < 0.3)
        jagged[flip] = ~jagged[flip]
        out = refine_all(jagged.astype(np.int32), image, LocalizationParams(energy_kind=kind))
        assert dice(out > 0, truth) > 0.98 > dice(jagged, truth)

    def test_adjacent_nuclei_stay_disjoint(self):
        shape = (40, 26, 26)
        a = ball(shape, (13, 13, 13), 7)
        b = ball(shape, (26, 13, 13), 7)
        rng = np.random.default_rng(5)
        image = np.clip(np.where(a | b, 0.8, 0.1) + rng.normal(0, 0.05, shape), 0, 1)
        labels = np.zeros(shape, np.int32)
        labels[a] = 1
        labels[b & ~a] = 2
        out = refine_all(labels, image)
        assert set(np.unique(out)) <= {0, 1, 2}
        assert (out == 1).sum() > 0.8 * a.sum()
        assert (out == 2).sum() > 0.8 * (b & ~a).sum()

    def test_collapse_keeps_input_region(self):
        shape = (20, 20, 20)
        labels = np.zeros(shape, np.int32)
        labels[9:11, 9:11, 9:11] = 1
        with pytest.warns(UserWarning, match="contour collapsed for label 1"):
            out = refine_all(labels, np.full(shape, 0.5), LocalizationParams(lam=5.0, max_iters=100))
        assert np.array_equal(out, labels)

    def test_workers_do_not_change_result(self):
        shape = (40, 26, 26)
        rng = np.random.default_rng(11)
        a = ball(shape, (12, 13, 13), 6)
        b = ball(shape, (27, 12, 14), 7)
        image = np.clip(np.where(a | b, 0.7, 0.15) + rng.normal(0, 0.1, shape), 0, 1)
        labels = ball(shape, (12, 13, 12), 7).astype(np.int32)
        labels[ball(shape, (27, 13, 14), 6)] = 2
        params = LocalizationParams(max_iters=30)
        assert np.array_equal(refine_all(labels, image, params), refine_all(labels, image, params, workers=3))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            refine_all(np.zeros((3, 3, 3), np.int32), np.zeros((3, 3, 4)))
