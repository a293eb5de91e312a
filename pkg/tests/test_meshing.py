import numpy as np
import pytest

from udfrecon.errors import EmptySurface
from udfrecon.mesh import TriangleMesh, boundary_edges, euler_characteristic, signed_volume
from udfrecon.meshing import (
    AnalyticField,
    MeshingParams,
    ScalarGrid,
    artifact_detector,
    evaluate_grid,
    extract_udf_mesh,
    grid_bbox,
    marching_cubes,
)
from udfrecon.metrics import evaluate_against_shape
from udfrecon.pointcloud import NormalizationTransform
from udfrecon.synth import SemiSphere, Sphere

UNIT_BOX = (np.full(3, -1.2), np.full(3, 1.2))


@pytest.fixture(scope="module")
def sphere_mesh_and_grid():
    grid = evaluate_grid(AnalyticField(Sphere(1.0)), UNIT_BOX, 64)
    return extract_udf_mesh(AnalyticField(Sphere(1.0)), grid=grid), grid


def hemisphere_mesh(n_theta=24, n_phi=64):
    """Lat-long triangulation of the x >= 0 unit hemisphere; its rim lies exactly on x = 0."""
    verts = [[1.0, 0.0, 0.0]]
    for i in range(1, n_theta + 1):
        th = 0.5 * np.pi * i / n_theta
        for j in range(n_phi):
            ph = 2 * np.pi * j / n_phi
            verts.append([np.cos(th), np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph)])
    ring = lambda i, j: 1 + (i - 1) * n_phi + j % n_phi  # noqa: E731
    tris = [[0, ring(1, j), ring(1, j + 1)] for j in range(n_phi)]
    for i in range(1, n_theta):
        for j in range(n_phi):
            a, b, c, d = ring(i, j), ring(i, j + 1), ring(i + 1, j), ring(i + 1, j + 1)
            tris += [[a, c, d], [a, d, b]]
    return TriangleMesh(np.array(verts), np.array(tris))


# ---------------------------------------------------------------- grid evaluation

def test_grid_value_near_origin():
    grid = evaluate_grid(AnalyticField(Sphere(1.0)), UNIT_BOX, 64)
    node = np.unravel_index(np.argmin(np.linalg.norm(grid.nodes(), axis=1)), (64,) * 3)
    assert abs(grid.values[node] - 1.0) <= grid.spacing.max()


def test_doubling_resolution_halves_interpolation_error(rng):
    field = AnalyticField(Sphere(1.0))
    q = rng.uniform(-1.1, 1.1, size=(20000, 3))
    errs = []
    for r in (33, 65):
        grid = evaluate_grid(field, UNIT_BOX, r)
        errs.append(np.abs(grid.interpolate(q) - Sphere(1.0).udf(q)).max())
    assert errs[1] <= 0.55 * errs[0]


def test_parallel_grid_is_bitwise_serial():
    field = AnalyticField(SemiSphere(1.0))
    a = evaluate_grid(field, UNIT_BOX, 48, threads=1)
    b = evaluate_grid(field, UNIT_BOX, 48, threads=4)
    assert np.array_equal(a.values, b.values) and np.array_equal(a.gradients, b.gradients)


@pytest.mark.parametrize("res", [15, 513])
def test_resolution_bounds(res):
    with pytest.raises(ValueError):
        evaluate_grid(AnalyticField(Sphere(1.0)), UNIT_BOX, res)


def test_grid_bbox_pads_each_axis():
    lo, hi = grid_bbox([[0, 0, 0], [1, 2, 0]])
    assert np.allclose(lo, [-0.05, -0.1, -0.1]) and np.allclose(hi, [1.05, 2.1, 0.1])


# ---------------------------------------------------------------- UDF extraction

def test_sphere_extraction_is_closed_and_close(sphere_mesh_and_grid):
    mesh, grid = sphere_mesh_and_grid
    assert euler_characteristic(mesh) == 2
    assert len(boundary_edges(mesh)) == 0
    rep = evaluate_against_shape(mesh, Sphere(1.0), n=20000, seed=0)
    assert rep.cd_bidirectional <= grid.cell_diagonal


def test_vertices_stay_in_dilated_source_cell(sphere_mesh_and_grid):
    mesh, grid = sphere_mesh_and_grid
    nc = grid.resolution - 1
    cell = np.stack(np.unravel_index(mesh.provenance, (nc,) * 3), axis=1)
    lo = grid.bbox_min + (cell - 0.5) * grid.spacing
    hi = lo + 2 * grid.spacing
    assert np.all((mesh.vertices >= lo - 1e-12) & (mesh.vertices <= hi + 1e-12))


def test_semi_sphere_extraction_is_open_without_far_triangles():
    shape = SemiSphere(1.0)
    grid = evaluate_grid(AnalyticField(shape), UNIT_BOX, 64)
    mesh = extract_udf_mesh(AnalyticField(shape), grid=grid)
    assert len(boundary_edges(mesh)) > 0
    assert np.all(shape.udf(mesh.centroids()) <= 2 * grid.cell_diagonal)


def test_scaled_field_still_lands_on_surface():
    field = AnalyticField(Sphere(1.0), scale=2.0)
    grid = evaluate_grid(field, UNIT_BOX, 64)
    mesh = extract_udf_mesh(field, grid=grid)
    assert mesh.n_triangles > 0
    assert np.abs(np.linalg.norm(mesh.vertices, axis=1) - 1.0).max() <= 2 * grid.cell_diagonal


def test_extraction_is_deterministic():
    field = AnalyticField(SemiSphere(0.4))
    a = extract_udf_mesh(field, resolution=32)
    b = extract_udf_mesh(field, resolution=32, threads=3)
    assert np.array_equal(a.vertices, b.vertices) and np.array_equal(a.triangles, b.triangles)


def test_extraction_transform_round_trip():
    field = AnalyticField(SemiSphere(0.4))
    tf = NormalizationTransform(0.02, np.array([5.0, -3.0, 1.0]))
    plain = extract_udf_mesh(field, resolution=32)
    mapped = extract_udf_mesh(field, resolution=32, transform=tf)
    assert np.array_equal(plain.triangles, mapped.triangles)
    assert np.allclose(mapped.vertices, tf.invert(plain.vertices), rtol=1e-9, atol=0)


def test_far_field_is_empty():
    with pytest.raises(EmptySurface):
        extract_udf_mesh(AnalyticField(Sphere(10.0)), resolution=16)


def test_meshing_params_reject_unknown_keys():
    from udfrecon.errors import ConfigError
    with pytest.raises(ConfigError):
        MeshingParams.from_dict({"resolution": 32, "bogus": 1})


# ---------------------------------------------------------------- marching cubes

def test_marching_cubes_sphere_radius():
    grid = evaluate_grid(AnalyticField(Sphere(1.0), signed=True), UNIT_BOX, 64)
    mesh = marching_cubes(grid)
    assert np.abs(np.linalg.norm(mesh.vertices, axis=1) - 1.0).max() <= grid.cell_diagonal
    assert euler_characteristic(mesh) == 2
    # triangles face toward increasing values, i.e. outward for an SDF
    assert signed_volume(mesh) > 0


def test_marching_cubes_no_crossing():
    grid = ScalarGrid(np.zeros(3), np.ones(3), 16, np.ones((16,) * 3))
    with pytest.raises(EmptySurface):
        marching_cubes(grid)


def test_marching_cubes_negation_flips_orientation():
    grid = evaluate_grid(AnalyticField(Sphere(1.0), signed=True), UNIT_BOX, 32)
    a = marching_cubes(grid)
    b = marching_cubes(ScalarGrid(grid.bbox_min, grid.bbox_max, 32, -grid.values))
    key = lambda v: v[np.lexsort(np.round(v, 12).T)]  # noqa: E731
    assert np.allclose(key(a.vertices), key(b.vertices), atol=1e-12)
    assert signed_volume(a) == pytest.approx(-signed_volume(b), rel=1e-9)


def test_marching_cubes_exact_on_linear_field():
    n = np.array([0.3, -0.5, 0.8])
    n /= np.linalg.norm(n)
    d = 0.1
    lo, hi = np.full(3, -1.0), np.full(3, 1.0)
    nodes = ScalarGrid(lo, hi, 24, np.zeros((24,) * 3)).nodes()
    grid = ScalarGrid(lo, hi, 24, (nodes @ n - d).reshape((24,) * 3))
    mesh = marching_cubes(grid)
    assert np.abs(mesh.vertices @ n - d).max() <= 1e-6


def test_marching_cubes_transform_round_trip():
    grid = evaluate_grid(AnalyticField(Sphere(0.3), signed=True), (np.full(3, -0.5), np.full(3, 0.5)), 32)
    tf = NormalizationTransform(0.05, np.array([1.0, 2.0, 3.0]))
    assert np.allclose(marching_cubes(grid, transform=tf).vertices,
                       tf.invert(marching_cubes(grid).vertices), rtol=1e-9, atol=0)


# ---------------------------------------------------------------- artifact detector

def test_detector_perfect_sphere():
    grid = evaluate_grid(AnalyticField(Sphere(1.0), signed=True), UNIT_BOX, 48)
    rep = artifact_detector(marching_cubes(grid), Sphere(1.0), grid.cell_diagonal)
    assert rep.hole_boundary_edges == 0 and rep.boundary_edges == 0
    assert rep.offside_triangle_fraction == 0.0


def test_detector_perfect_hemisphere():
    mesh = hemisphere_mesh()
    rep = artifact_detector(mesh, SemiSphere(1.0), 0.05)
    be = boundary_edges(mesh)
    assert len(be) == 64 and rep.boundary_edges == 64
    # every boundary vertex is on the equator rim x = 0
    assert np.allclose(mesh.vertices[be.ravel(), 0], 0.0, atol=1e-12)
    assert rep.hole_boundary_edges == 0 and rep.offside_triangle_fraction == 0.0


def test_detector_counts_punched_hole_and_mirror_cap():
    mesh = hemisphere_mesh()
    cen = mesh.centroids()
    keep = ~((cen[:, 0] > 0.6) & (cen[:, 0] < 0.8) & (cen[:, 1] > 0))
    holed = TriangleMesh(mesh.vertices, mesh.triangles[keep])
    assert artifact_detector(holed, SemiSphere(1.0), 0.05).hole_boundary_edges > 0
    # the mirrored cap lies entirely in the missing half: all offside
    mirrored = mesh.transformed(lambda v: v * [-1, 1, 1])
    assert artifact_detector(mirrored, SemiSphere(1.0), 0.05).offside_triangle_fraction > 0.9
