import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import brute_hd95, brute_nearest
from udfrecon.errors import EmptyInput, EmptySurface
from udfrecon.mesh import TriangleMesh
from udfrecon.meshing import AnalyticField, evaluate_grid, marching_cubes
from udfrecon.metrics import (
    DistanceReport,
    chamfer_single,
    evaluate_against_shape,
    evaluate_reconstruction,
    hausdorff95,
    nearest_distances,
    sample_mesh,
)
from udfrecon.synth import Sphere


@pytest.fixture(scope="module")
def sphere_mesh():
    grid = evaluate_grid(AnalyticField(Sphere(1.0), signed=True), (np.full(3, -1.2), np.full(3, 1.2)), 64)
    return marching_cubes(grid)


def brute_chamfer(a, b):
    return float(np.mean(brute_nearest(b, a)[1]))


# ---------------------------------------------------------------- point-set metrics

def test_chamfer_examples():
    assert chamfer_single([[0, 0, 0]], [[1, 0, 0]]) == 1.0
    pts = np.random.default_rng(0).random((50, 3))
    assert chamfer_single(pts, pts) == 0.0 and hausdorff95(pts, pts) == 0.0


def test_hd95_nearest_rank():
    a = np.zeros((100, 3))
    a[:, 0] = np.arange(1, 101)
    assert hausdorff95(a, [[0, 0, 0]]) == 95.0


def test_empty_sets_raise():
    with pytest.raises(EmptyInput):
        chamfer_single(np.zeros((0, 3)), [[0, 0, 0]])
    with pytest.raises(EmptyInput):
        hausdorff95([[0, 0, 0]], np.zeros((0, 3)))


def test_300_vs_400_matches_brute_force(rng):
    a, b = rng.random((300, 3)), rng.random((400, 3))
    assert chamfer_single(a, b) == brute_chamfer(a, b)
    assert hausdorff95(a, b) == brute_hd95(brute_nearest(b, a)[1])


def test_metrics_equal_brute_force_on_100_instances():
    r = np.random.default_rng(7)
    for _ in range(100):
        n, m = r.integers(1, 1001, size=2)
        a = r.normal(size=(n, 3))
        b = r.normal(size=(m, 3))
        d = brute_nearest(b, a)[1]
        assert np.array_equal(nearest_distances(a, b), d)
        assert chamfer_single(a, b) == float(np.mean(d))
        assert hausdorff95(a, b) == brute_hd95(d)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 200), st.integers(1, 200))
def test_metric_ordering_and_translation(seed, n, m):
    r = np.random.default_rng(seed)
    # lattice points produce plenty of exact ties
    a = r.integers(-3, 4, size=(n, 3)).astype(float)
    b = r.integers(-3, 4, size=(m, 3)).astype(float)
    d = brute_nearest(b, a)[1]
    assert chamfer_single(a, b) <= d.max() + 1e-12
    assert hausdorff95(a, b) <= d.max()
    shift = r.normal(size=3)
    assert chamfer_single(a + shift, b + shift) == pytest.approx(chamfer_single(a, b), abs=1e-12)
    assert hausdorff95(a + shift, b + shift) == pytest.approx(hausdorff95(a, b), abs=1e-12)


# ---------------------------------------------------------------- mesh sampling

def test_samples_inside_single_triangle():
    tri = np.array([[0.0, 0, 0], [2, 0, 0], [0, 1, 0]])
    pts = sample_mesh(TriangleMesh(tri, [[0, 1, 2]]), 2000, seed=3)
    # barycentric coordinates of points in the z = 0 triangle
    l1 = pts[:, 0] / 2
    l2 = pts[:, 1]
    assert np.all(pts[:, 2] == 0)
    assert np.all((l1 >= 0) & (l2 >= 0) & (1 - l1 - l2 >= -1e-12))


def test_area_weighted_split():
    verts = np.array([[0.0, 0, 0], [1, 0, 0], [0, 2, 0], [10, 0, 0], [13, 0, 0], [10, 2, 0]])
    mesh = TriangleMesh(verts, [[0, 1, 2], [3, 4, 5]])
    assert np.allclose(mesh.triangle_areas(), [1, 3])
    pts = sample_mesh(mesh, 10_000, seed=0)
    assert np.mean(pts[:, 0] >= 10) == pytest.approx(0.75, abs=0.03)


def test_sampling_is_seeded(sphere_mesh):
    assert np.array_equal(sample_mesh(sphere_mesh, 100, 4), sample_mesh(sphere_mesh, 100, 4))
    assert not np.array_equal(sample_mesh(sphere_mesh, 100, 4), sample_mesh(sphere_mesh, 100, 5))


def test_zero_area_mesh_raises():
    with pytest.raises(EmptySurface):
        sample_mesh(TriangleMesh([[0, 0, 0], [1, 1, 1], [2, 2, 2]], [[0, 1, 2]]), 10)
    with pytest.raises(EmptySurface):
        sample_mesh(TriangleMesh(np.zeros((3, 3)), np.zeros((0, 3))), 10)


# ---------------------------------------------------------------- reports

def check_invariants(rep: DistanceReport):
    vals = [rep.cd_single_a_to_b, rep.cd_single_b_to_a, rep.hd95_a_to_b, rep.hd95_b_to_a]
    assert all(v >= 0 for v in vals)
    assert rep.cd_bidirectional == 0.5 * (rep.cd_single_a_to_b + rep.cd_single_b_to_a)
    assert rep.hd95_bidirectional == max(rep.hd95_a_to_b, rep.hd95_b_to_a)


def test_identical_meshes_give_zero(sphere_mesh):
    rep = evaluate_reconstruction(sphere_mesh, sphere_mesh, n=5000, seed=0)
    assert all(getattr(rep, f) == 0.0 for f in DistanceReport.FIELDS[:6])


def test_translated_sphere(sphere_mesh):
    # a sphere small next to the offset: every point is 1 +- r away from the other
    small = sphere_mesh.transformed(lambda v: 0.01 * v)
    rep = evaluate_reconstruction(small.transformed(lambda v: v + [1.0, 0, 0]), small, n=10_000, seed=0)
    check_invariants(rep)
    assert rep.cd_bidirectional == pytest.approx(1.0, abs=0.02)


def test_translated_unit_sphere_matches_closed_form(sphere_mesh):
    # unit sphere offset by 1: E|s - 1| with s = |p - c| of density s/2 on [0, 2] is 1/2
    rep = evaluate_reconstruction(sphere_mesh.transformed(lambda v: v + [1.0, 0, 0]), sphere_mesh,
                                  n=20_000, seed=0)
    check_invariants(rep)
    assert rep.cd_bidirectional == pytest.approx(0.5, abs=0.03)


def test_single_mode_fills_one_direction(sphere_mesh):
    rep = evaluate_reconstruction(sphere_mesh, sphere_mesh, n=1000, mode="single")
    assert rep.cd_single_b_to_a is None and rep.cd_bidirectional is None
    assert rep.cd_single_a_to_b is not None
    with pytest.raises(ValueError):
        evaluate_reconstruction(sphere_mesh, sphere_mesh, n=10, mode="both")


def test_against_shape_uses_exact_oracle(sphere_mesh):
    rep = evaluate_against_shape(sphere_mesh, Sphere(1.0), n=5000, seed=1)
    check_invariants(rep)
    assert rep.cd_single_a_to_b <= 0.005


def test_report_serialisation():
    rep = DistanceReport(0.5, 0.25, 0.375, 1.0, 2.0, 2.0, n_samples=10, seed=3)
    assert json.loads(rep.to_json(name="x"))["cd_bidirectional"] == 0.375
    assert DistanceReport.csv_header().count(",") == rep.csv_row().count(",")
    assert rep.csv_row().startswith("0.5,0.25,0.375,1.0,2.0,2.0,10,3,")
