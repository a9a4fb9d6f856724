"""Simulation world, rendering, cut model, and batch harness tests."""

import json
from dataclasses import replace

import numpy as np
import pytest
from scipy import stats

from duopick.batch import (
    run_batch,
    run_trial,
    write_histogram_csv,
    write_report,
)
from duopick.collision import Plane
from duopick.errors import ConfigError, EmptyView
from duopick.estimator import FitConfig, coarse_pose, fit_superellipsoid
from duopick.executive import HarvestConfig
from duopick.geometry import PointCloud, RigidTransform
from duopick.sim import (
    CUT_TOLERANCE,
    DEFAULT_INTRINSICS,
    MAX_TILT,
    SPAWN,
    NoiseModel,
    SimWorld,
    apply_cut,
    centered_world,
    look_at,
    make_pepper,
    make_world,
    randomize_pepper,
    render_partial_cloud,
    tilt_angle,
)
from duopick.superellipsoid import canonical_coords, implicit_value, surface_normals


def upright_pepper(t=(0.0, 0.56, 0.66), **kw):
    return make_pepper(RigidTransform(np.eye(3), np.asarray(t, dtype=float)), **kw)


def test_spawn_tilt_bound_holds():
    rng = np.random.default_rng(0)
    for _ in range(10000):
        pose = randomize_pepper(SPAWN, rng)
        assert tilt_angle(pose.rotation) <= MAX_TILT + 1e-12
        assert np.all(pose.translation >= SPAWN.lo)
        assert np.all(pose.translation <= SPAWN.hi)


def test_spawn_positions_uniform_per_axis():
    rng = np.random.default_rng(1)
    t = np.array([randomize_pepper(SPAWN, rng).translation for _ in range(10000)])
    for axis in range(3):
        lo, hi = SPAWN.lo[axis], SPAWN.hi[axis]
        counts, _ = np.histogram(t[:, axis], bins=10, range=(lo, hi))
        # uniformity not rejected at the 1% level
        assert stats.chisquare(counts).pvalue > 0.01


def test_make_world_deterministic():
    a = make_world(42)
    b = make_world(42)
    c = make_world(43)
    assert np.array_equal(a.peppers[0].center, b.peppers[0].center)
    assert not np.array_equal(a.peppers[0].center, c.peppers[0].center)


def test_world_rejects_pepper_outside_spawn():
    stray = upright_pepper(t=(5.0, 5.0, 5.0))
    with pytest.raises(ValueError):
        SimWorld(spawn=SPAWN, peppers=[stray])


def test_rendered_fruit_points_lie_on_surface():
    pepper = upright_pepper()
    cam = look_at([0.0, 0.2, 0.7], pepper.center)
    fruit, ped = render_partial_cloud(pepper, cam, DEFAULT_INTRINSICS)
    f = implicit_value(canonical_coords(fruit.points, pepper.shape), pepper.shape)
    assert np.max(np.abs(f - 1.0)) < 1e-9
    # peduncle points stay within the modeled stem radius of the segment
    seg = pepper.peduncle_p1 - pepper.peduncle_p0
    rel = ped.points - pepper.peduncle_p0
    along = np.clip(rel @ seg / (seg @ seg), 0.0, 1.0)
    radial = rel - np.outer(along, seg)
    assert np.max(np.linalg.norm(radial, axis=1)) <= 0.003 + 1e-12


def test_rendered_fruit_points_face_the_camera():
    pepper = upright_pepper()
    cam = look_at([0.25, 0.2, 0.66], pepper.center)
    fruit, _ = render_partial_cloud(pepper, cam, DEFAULT_INTRINSICS)
    normals = surface_normals(canonical_coords(fruit.points, pepper.shape), pepper.shape)
    normals_w = normals @ pepper.shape.rotation().T
    toward_eye = cam.translation - fruit.points
    assert np.all(np.einsum("ij,ij->i", normals_w, toward_eye) > 0.0)


def test_back_side_is_culled():
    pepper = upright_pepper()
    cam = look_at([0.0, 0.2, 0.66], pepper.center)
    fruit, _ = render_partial_cloud(pepper, cam, DEFAULT_INTRINSICS)
    # the kept cloud is a strict partial view biased toward the camera
    assert 0 < len(fruit.points) < 600
    view = pepper.center - cam.translation
    view = view / np.linalg.norm(view)
    depth_points = (fruit.points - cam.translation) @ view
    depth_center = (pepper.center - cam.translation) @ view
    assert np.mean(depth_points) < depth_center


def test_point_noise_perturbs_surface():
    pepper = upright_pepper()
    cam = look_at([0.0, 0.2, 0.7], pepper.center)
    noisy = NoiseModel(sigma_p=0.002)
    fruit, _ = render_partial_cloud(
        pepper, cam, DEFAULT_INTRINSICS, noise=noisy, rng=np.random.default_rng(3))
    f = implicit_value(canonical_coords(fruit.points, pepper.shape), pepper.shape)
    assert np.max(np.abs(f - 1.0)) > 1e-6


def test_occluding_plane_raises_empty_view():
    pepper = upright_pepper()
    eye = np.array([0.0, 0.2, 0.7])
    cam = look_at(eye, pepper.center)
    midpoint = 0.5 * (eye + pepper.center)
    normal = (pepper.center - eye) / np.linalg.norm(pepper.center - eye)
    wall = Plane(point=midpoint, normal=normal)
    with pytest.raises(EmptyView):
        render_partial_cloud(pepper, cam, DEFAULT_INTRINSICS, occluders=[wall])


def test_camera_looking_away_sees_nothing():
    pepper = upright_pepper()
    eye = np.array([0.0, 0.2, 0.7])
    cam = look_at(eye, eye + (eye - pepper.center))
    with pytest.raises(EmptyView):
        render_partial_cloud(pepper, cam, DEFAULT_INTRINSICS)


def test_cut_through_peduncle_detaches():
    pepper = upright_pepper()
    mid = 0.5 * (pepper.peduncle_p0 + pepper.peduncle_p1)
    out = apply_cut(pepper, mid + [-0.05, 0.0, 0.0], mid + [0.05, 0.0, 0.0])
    assert out.detached and out.first
    assert out.miss_distance == pytest.approx(0.0, abs=1e-12)
    assert not pepper.attached


def test_cut_above_peduncle_misses_by_the_gap():
    pepper = upright_pepper()
    top = pepper.peduncle_p1
    blade = top + np.array([0.0, 0.0, 0.02])
    out = apply_cut(pepper, blade + [-0.05, 0.0, 0.0], blade + [0.05, 0.0, 0.0])
    assert not out.detached
    assert out.miss_distance == pytest.approx(0.02, abs=1e-12)
    assert pepper.attached


def test_cut_miss_monotone_in_lateral_offset():
    pepper = upright_pepper()
    mid = 0.5 * (pepper.peduncle_p0 + pepper.peduncle_p1)
    misses = []
    for dy in (0.0, 0.004, 0.012, 0.03, 0.08):
        probe = make_pepper(RigidTransform(np.eye(3), pepper.center.copy()))
        blade = mid + np.array([0.0, dy, 0.0])
        out = apply_cut(probe, blade + [-0.05, 0.0, 0.0], blade + [0.05, 0.0, 0.0])
        misses.append(out.miss_distance)
        assert out.detached == (dy <= CUT_TOLERANCE)
    assert np.all(np.diff(misses) >= 0.0)
    assert misses[-1] == pytest.approx(0.08, abs=1e-12)


def test_cut_is_one_way_and_recorded():
    pepper = upright_pepper()
    mid = 0.5 * (pepper.peduncle_p0 + pepper.peduncle_p1)
    first = apply_cut(pepper, mid + [-0.05, 0, 0], mid + [0.05, 0, 0])
    again = apply_cut(pepper, mid + [-0.05, 0, 0], mid + [0.05, 0, 0])
    assert first.first and not again.first
    assert again.detached
    assert len(pepper.cuts) == 2


def test_cut_rejects_bad_tolerance():
    pepper = upright_pepper()
    with pytest.raises(ValueError):
        apply_cut(pepper, [0, 0, 0], [1, 0, 0], tol=0.0)


def test_render_then_fit_recovers_axes():
    # four noise-free views give near-full coverage; with the priors off the
    # fit must close the loop on the true semi-axes
    pepper = upright_pepper()
    clouds = []
    peds = []
    eyes = [pepper.center + 0.35 * np.array([np.cos(b), np.sin(b), 0.3])
            for b in np.linspace(0.0, 2.0 * np.pi, 4, endpoint=False)]
    for eye in eyes:
        cam = look_at(eye, pepper.center)
        fruit, ped = render_partial_cloud(pepper, cam, DEFAULT_INTRINSICS)
        clouds.append(fruit.points)
        peds.append(ped.points)
    cloud = PointCloud(np.vstack(clouds))
    view = np.mean(eyes, axis=0)
    coarse = coarse_pose(cloud, PointCloud(np.vstack(peds)), view_origin=view)
    shape = fit_superellipsoid(cloud, coarse, FitConfig(lambda_c=0.0, lambda_s=0.0))
    got = sorted([shape.a, shape.b, shape.c])
    want = sorted([0.035, 0.033, 0.05])
    assert np.allclose(got, want, rtol=0.05)
    assert np.linalg.norm(shape.t - pepper.center) < 0.005


def test_centered_world_is_upright_at_spawn_center():
    world = centered_world()
    pepper = world.peppers[0]
    assert np.allclose(pepper.center, SPAWN.center)
    assert tilt_angle(pepper.shape.rotation()) == pytest.approx(0.0, abs=1e-12)


def test_batch_report_deterministic():
    a = run_batch(3)
    b = run_batch(3)
    assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)


def test_batch_report_shape(tmp_path):
    rep = run_batch(3)
    assert rep["schema"] == 1
    assert rep["trials"] == 3 and len(rep["rows"]) == 3
    assert sum(rep["histogram"]["trials"]) == 3
    assert [r["seed"] for r in rep["rows"]] == [0, 1, 2]
    bands = rep["band_rates"]
    assert bands["in_band"]["trials"] + bands["out_band"]["trials"] == 3
    write_report(rep, tmp_path / "report.json")
    write_histogram_csv(rep, tmp_path / "hist.csv")
    back = json.loads((tmp_path / "report.json").read_text())
    assert back["noise_assumptions"]["sigma_t"] == pytest.approx(0.005)
    lines = (tmp_path / "hist.csv").read_text().strip().splitlines()
    assert lines[0] == "x_lo,x_hi,trials,successes,rate"
    assert len(lines) == 1 + len(rep["histogram"]["trials"])


def test_batch_rejects_bad_templates():
    with pytest.raises(ConfigError):
        run_trial(0, template={"n_papers": 1})
    with pytest.raises(ConfigError):
        run_trial(0, template={"spawn": {"lo": [0, 0, 0], "hi": [-1, 0, 0]}})
    with pytest.raises(ConfigError):
        run_batch(0)


def test_batch_success_non_increasing_with_pose_noise():
    rates = []
    for sigma in (0.005, 0.02, 0.03):
        cfg = HarvestConfig(seed=300, noise=NoiseModel(sigma_t=sigma))
        rep = run_batch(50, cfg=cfg)
        rates.append(rep["success_rate"])
    assert rates[0] >= rates[1] >= rates[2]
    assert rates[0] > rates[2]   # the spread is wide enough to actually bite
