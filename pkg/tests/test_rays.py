import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gnfield.rays import (Camera, RayBatch, TraceConfig, build_samples, camera_rays, generate_ray,
                          intersect_aabb, look_at)
from gnfield.scene import empty_scene, init_level
from oracles import make_ray, slab_oracle


@pytest.fixture
def cam():
    return Camera(np.eye(4), focal=80.0, width=101, height=61)


class TestGenerateRay:
    def test_center_pixel_looks_down_minus_z(self, cam):
        r = generate_ray(cam, 30, 50)
        np.testing.assert_allclose(r.dir, [0, 0, -1], atol=1e-12)
        np.testing.assert_allclose(r.origin, 0.0)

    def test_jitter_moves_direction(self, cam):
        a = generate_ray(cam, 10, 10, jitter=(0.0, 0.0))
        b = generate_ray(cam, 10, 10, jitter=(0.999, 0.999))
        assert not np.allclose(a.dir, b.dir)

    def test_corner_angle(self, cam):
        r = generate_ray(cam, 30, 0, jitter=(0.0, 0.5))
        angle = np.arccos(-r.dir[2])
        np.testing.assert_allclose(angle, np.arctan(0.5 * cam.width / cam.focal), atol=1e-6)
        assert r.dir[0] < 0 and abs(r.dir[1]) < 1e-12

    def test_row_zero_is_top(self, cam):
        assert generate_ray(cam, 0, 50).dir[1] > 0

    def test_pose_applied(self):
        pose = look_at([0, -4, 0], [0, 0, 0])
        c = Camera(pose, 50.0, 21, 21)
        r = generate_ray(c, 10, 10)
        np.testing.assert_allclose(r.dir, [0, 1, 0], atol=1e-12)
        np.testing.assert_allclose(r.origin, [0, -4, 0])

    def test_bad_inputs(self, cam):
        with pytest.raises(ValueError):
            generate_ray(cam, 61, 0)
        with pytest.raises(ValueError):
            generate_ray(cam, 0, 0, jitter=(1.0, 0.0))
        with pytest.raises(ValueError):
            Camera(np.eye(4) * 2, 10.0, 4, 4)
        with pytest.raises(ValueError):
            Camera(np.eye(4), -1.0, 4, 4)


def test_camera_rays_match_generate_ray(cam):
    rays = camera_rays(cam)
    assert len(rays) == cam.width * cam.height
    i = 7 * cam.width + 13
    np.testing.assert_allclose(rays.dirs[i], generate_ray(cam, 7, 13).dir, atol=1e-14)


def test_camera_ray_jitter_is_reproducible(cam):
    a = camera_rays(cam, jitter=True, counter=3, seed=1)
    b = camera_rays(cam, jitter=True, counter=3, seed=1)
    c = camera_rays(cam, jitter=True, counter=4, seed=1)
    np.testing.assert_array_equal(a.dirs, b.dirs)
    assert not np.allclose(a.dirs, c.dirs)


class TestIntersect:
    lo, hi = np.array([-1.0, -1, -1]), np.array([1.0, 1, 1])

    def test_through_center(self):
        tn, tf = intersect_aabb(make_ray([0, 0, 5], [0, 0, -1]), self.lo, self.hi)
        np.testing.assert_allclose([tn, tf], [4.0, 6.0])

    def test_parallel_outside_misses(self):
        assert intersect_aabb(make_ray([0, 2, 5], [0, 0, -1]), self.lo, self.hi) is None

    def test_behind_misses(self):
        assert intersect_aabb(make_ray([0, 0, 5], [0, 0, 1]), self.lo, self.hi) is None

    def test_origin_inside(self):
        tn, tf = intersect_aabb(make_ray([0, 0, 0], [1, 0, 0]), self.lo, self.hi)
        assert tn < 0 and tf == pytest.approx(1.0)

    def test_random_rays_against_brute_force(self):
        rng = np.random.default_rng(3)
        lo, hi = np.array([-1.0, -0.5, -2.0]), np.array([1.5, 0.5, 0.25])
        n_hit = 0
        for _ in range(1000):
            o = rng.uniform(-4, 4, 3)
            d = rng.normal(size=3)
            d /= np.linalg.norm(d)
            ray = make_ray(o, d)
            got = intersect_aabb(ray, lo, hi)
            want = slab_oracle(ray.origin, ray.dir, lo, hi)
            assert (got is None) == (want is None)
            if got is not None:
                n_hit += 1
                np.testing.assert_allclose(got, want, atol=1e-6)
        assert n_hit > 50


class TestBuildSamples:
    def test_miss_gives_no_samples(self):
        sc = init_level((4, 4, 4), 2, 2, aabb=((-1,) * 3, (1,) * 3))
        s = build_samples(sc, make_ray([0, 0, 20], [0, 0, 1]), 0.5)
        assert len(s) == 0

    def test_unit_cells_axis_aligned(self):
        sc = empty_scene((4, 4, 4), ((0, 0, 0), (4, 4, 4)))
        s = build_samples(sc, make_ray([0.5, 1.5, -1.0], [0, 0, 1]), 1.0)
        assert len(s) == s.n_grid == 4
        np.testing.assert_allclose(s.delta, 1.0)
        np.testing.assert_allclose(s.t, [1.5, 2.5, 3.5, 4.5])
        # samples sit on cell centers: one full-weight cell each
        for j in range(4):
            w = s.weights[j]
            assert np.count_nonzero(w) == 1 and w.max() == pytest.approx(1.0)
            assert s.cells[j][np.argmax(w)] == (j * 4 + 1) * 4 + 0

    def test_env_samples_follow_grid(self):
        sc = init_level((4, 4, 4), 2, 2, aabb=((-1,) * 3, (1,) * 3))
        s = build_samples(sc, make_ray([0.1, 0.2, 30.0], [0, 0, -1]), 0.5)
        assert s.kinds == ["grid"] * 4 + ["env-0", "env-1"]
        np.testing.assert_allclose(s.delta[4:], 1.0)
        assert np.all(np.diff(s.t) > 0)
        # env samples sit at the far side of each layer cube
        np.testing.assert_allclose(s.t[4:], [30.0 + 4.0, 30.0 + 9.0])

    def test_footprint_slots(self):
        sc = init_level((4, 4, 4), 2, 1, aabb=((-1,) * 3, (1,) * 3))
        s = build_samples(sc, make_ray([0.1, 0.2, 3.0], [0, 0, -1]), 0.5)
        slots, w = s.footprint(0, 3)
        assert np.all(slots % 4 == 3)
        assert w.sum() == pytest.approx(1.0)


@settings(max_examples=60, deadline=None)
@given(o=st.tuples(*[st.floats(-3, 3)] * 3), d=st.tuples(*[st.floats(-1, 1)] * 3),
       step=st.floats(0.05, 1.0), jitter=st.booleans())
def test_sample_list_properties(o, d, step, jitter):
    d = np.array(d)
    if np.linalg.norm(d) < 1e-3:
        d = np.array([0.0, 0.0, 1.0])
    sc = init_level((5, 4, 3), 2, 2, aabb=((-1, -1, -1), (1, 1, 1)))
    ray = make_ray(o, d, key=11)
    s = build_samples(sc, ray, step, jitter=jitter, counter=2, seed=5)
    np.testing.assert_allclose(s.weights.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(s.weights >= 0)
    assert np.all(s.delta > 0)
    assert np.all(np.diff(s.t) > 0)
    assert np.all(s.cells[s.weights > 0] < sc.n_cells)
    hit = intersect_aabb(ray, sc.grid.aabb_min, sc.grid.aabb_max)
    if hit is not None and hit[1] > max(hit[0], 0.0) + 1e-9:
        np.testing.assert_allclose(s.delta[:s.n_grid].sum(), hit[1] - max(hit[0], 0.0), atol=1e-9)
    else:
        assert s.n_grid == 0
    assert len(s) - s.n_grid == 2  # every ray leaves through both env layers


def test_trace_config_validation():
    with pytest.raises(ValueError):
        TraceConfig(0.0)
    with pytest.raises(ValueError):
        TraceConfig(0.1, n_chunks=0)
    assert TraceConfig(0.1, background=(0, 0.5, 1)).bg.tolist() == [0.0, 0.5, 1.0]


def test_raybatch_concat_and_subset():
    a = RayBatch(np.zeros((2, 3)), [[0, 0, 1]] * 2, np.ones((2, 3)), [1, 2])
    b = RayBatch(np.ones((1, 3)), [[1, 0, 0]], np.zeros((1, 3)), [3])
    c = RayBatch.concat([a, b])
    assert len(c) == 3 and c.keys.tolist() == [1, 2, 3]
    assert c.subset([2]).ray(0).key == 3
    with pytest.raises(ValueError):
        RayBatch(np.zeros((2, 3)), np.zeros((1, 3)), np.zeros((2, 3)), [0, 1])
