import numpy as np
import pytest

from gnfield.forward import (NonFiniteError, accumulate, aux_residual, objective, ray_residuals,
                             residuals)
from gnfield.rays import RayBatch, TraceConfig, build_samples
from gnfield.scene import empty_scene
from oracles import make_ray, random_rays, random_scene

LN2 = np.log(2.0)


def unit_grid():
    """4^3 grid of unit cells; the test ray visits cells (0,1,z) at their centers."""
    return empty_scene((4, 4, 4), ((0, 0, 0), (4, 4, 4)))


def column_cell(z):
    return (z * 4 + 1) * 4


def set_cell(sc, z, color, sigma):
    c = column_cell(z)
    sc.params[4 * c:4 * c + 3] = color
    sc.params[4 * c + 3] = sigma


RAY = make_ray([0.5, 1.5, -1.0], [0, 0, 1])
BLACK = (0.0, 0.0, 0.0)


def cfg(lam=0.0, bg=BLACK):
    return TraceConfig(1.0, background=bg, lambda_aux=lam, jitter=False)


class TestAccumulate:
    def test_empty_medium(self):
        sc = unit_grid()
        rad = accumulate(build_samples(sc, RAY, 1.0), sc, BLACK)
        np.testing.assert_allclose(rad.color, 0.0)
        assert rad.transmittance == 1.0

    def test_two_samples(self):
        sc = unit_grid()
        set_cell(sc, 0, (1, 0, 0), LN2)
        set_cell(sc, 1, (0, 1, 0), LN2)
        rad = accumulate(build_samples(sc, RAY, 1.0), sc, BLACK)
        np.testing.assert_allclose(rad.color, [0.5, 0.25, 0.0], atol=1e-15)
        assert rad.transmittance == pytest.approx(0.25)
        assert rad.grid_transmittance == pytest.approx(0.25)
        np.testing.assert_allclose(rad.per_sample_alpha, [0.5, 0.5, 0, 0])

    def test_opaque_limit(self):
        sc = unit_grid()
        set_cell(sc, 0, (0.3, 0.6, 0.9), 50.0)
        rad = accumulate(build_samples(sc, RAY, 1.0), sc, (1, 1, 1))
        np.testing.assert_allclose(rad.color, [0.3, 0.6, 0.9], atol=1e-6)
        assert rad.transmittance < 1e-6

    def test_background_shows_through(self):
        sc = unit_grid()
        rad = accumulate(build_samples(sc, RAY, 1.0), sc, (0.1, 0.2, 0.3))
        np.testing.assert_allclose(rad.color, [0.1, 0.2, 0.3])

    def test_weights_partition_unity(self):
        # unit colors and a unit background must composite to exactly one
        sc = random_scene((6, 6, 6), 3, 2, seed=4)
        sc.params.reshape(-1, 4)[:, :3] = 1.0
        rays = random_rays(sc, 64, seed=2)
        res, _ = residuals(rays, sc, TraceConfig(0.2, (1, 1, 1), 0.0, jitter=True))
        np.testing.assert_allclose(res[:, :3] + rays.targets, 1.0, atol=1e-12)

    def test_non_finite_raises(self):
        sc = unit_grid()
        set_cell(sc, 0, (np.nan, 0, 0), 1.0)
        with pytest.raises(NonFiniteError):
            accumulate(build_samples(sc, RAY, 1.0), sc)


class TestAux:
    def test_peak(self):
        assert aux_residual(0.5, 0.1) == pytest.approx(0.1)

    @pytest.mark.parametrize("T", [0.0, 1.0])
    def test_zeros(self, T):
        assert aux_residual(T, 0.1) == pytest.approx(0.0)

    def test_quarter(self):
        assert aux_residual(0.25, 0.1) == pytest.approx(0.075)

    def test_uses_grid_transmittance_only(self):
        # an opaque env layer must not count toward the grid opacity term
        sc = empty_scene((4, 4, 4), ((-1,) * 3, (1,) * 3), [(2, 4.0)])
        sc.params[4 * 64 + 3::4] = 20.0
        r = ray_residuals(make_ray([0.1, 0.1, 9.0], [0, 0, -1]), sc, cfg(0.1))
        assert r.aux_res == pytest.approx(0.0)


class TestResiduals:
    def test_perfect_fit(self):
        sc = unit_grid()
        set_cell(sc, 0, (1, 0, 0), LN2)
        set_cell(sc, 1, (0, 1, 0), LN2)
        ray = make_ray(RAY.origin, RAY.dir, target=(0.5, 0.25, 0.0))
        np.testing.assert_allclose(ray_residuals(ray, sc, cfg()).color_res, 0.0, atol=1e-15)

    def test_background_only_fit(self):
        sc = unit_grid()
        ray = make_ray(RAY.origin, RAY.dir, target=(1, 1, 1))
        r = ray_residuals(ray, sc, cfg(0.1, (1, 1, 1)))
        np.testing.assert_allclose(r.color_res, 0.0)
        assert r.aux_res == 0.0

    def test_two_samples_against_black(self):
        sc = unit_grid()
        set_cell(sc, 0, (1, 0, 0), LN2)
        set_cell(sc, 1, (0, 1, 0), LN2)
        r = ray_residuals(RAY, sc, cfg(0.1))
        np.testing.assert_allclose(r.color_res, [0.5, 0.25, 0.0], atol=1e-15)
        assert r.aux_res == pytest.approx(0.075)
        np.testing.assert_allclose(r.as_array(), [0.5, 0.25, 0.0, 0.075], atol=1e-15)

    def test_batch_matches_single_ray(self):
        sc = random_scene((5, 5, 5), 3, 2, seed=9)
        rays = random_rays(sc, 10, seed=9)
        c = TraceConfig(0.3, (0.2, 0.5, 0.9), 0.1, jitter=True, counter=1, seed=2)
        res, _ = residuals(rays, sc, c)
        for i in range(len(rays)):
            np.testing.assert_allclose(res[i], ray_residuals(rays.ray(i), sc, c).as_array(),
                                       atol=1e-13)


class TestObjective:
    def test_zero(self):
        sc = unit_grid()
        rays = RayBatch.from_rays([make_ray(RAY.origin, RAY.dir)])
        assert objective(rays, sc, cfg(0.1)) == 0.0

    def test_single_ray_value(self):
        # one sample of opacity 1/2 and color (1, 0.5, 0): residuals (0.5, 0.25, 0) and aux 0.1
        sc = unit_grid()
        set_cell(sc, 2, (1, 0.5, 0), LN2)
        rays = RayBatch.from_rays([RAY])
        assert objective(rays, sc, cfg(0.1)) == pytest.approx(0.16125)

    def test_additive(self):
        sc = random_scene((4, 4, 4), 2, 1, seed=1)
        rays = random_rays(sc, 7, seed=1)
        c = TraceConfig(0.25, lambda_aux=0.1, jitter=False)
        f = objective(rays, sc, c)
        doubled = RayBatch.concat([rays, rays])
        assert objective(doubled, sc, c) == pytest.approx(2 * f, rel=1e-14)

    def test_empty_ray_set(self):
        with pytest.raises(ValueError):
            objective(RayBatch(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros((0, 3)), []),
                      unit_grid(), cfg())

    def test_chunking_does_not_change_value(self):
        sc = random_scene((5, 5, 5), 2, 1, seed=3)
        rays = random_rays(sc, 40, seed=3)
        a = objective(rays, sc, TraceConfig(0.2, n_chunks=1))
        b = objective(rays, sc, TraceConfig(0.2, n_chunks=8))
        assert a == pytest.approx(b, rel=1e-14)
