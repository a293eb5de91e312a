import numpy as np
import pytest

from udfrecon.io import (
    FormatError,
    read_cloud,
    read_mesh,
    read_pgm,
    read_pose,
    write_cloud,
    write_cloud_ply,
    write_mesh,
    write_pgm,
    write_pose,
)
from udfrecon.mesh import TriangleMesh
from udfrecon.synth import SemiSphere, sample_shape


@pytest.fixture
def cloud():
    return sample_shape(SemiSphere(1.0), 50, seed=0)


@pytest.mark.parametrize("binary", [True, False])
def test_cloud_ply_round_trip(tmp_path, cloud, binary):
    path = tmp_path / "c.ply"
    write_cloud_ply(path, cloud, binary=binary, comments=["config_hash abc"])
    back = read_cloud(path)
    assert back.has_features
    assert np.allclose(back.positions, cloud.positions, atol=1e-6)
    assert np.allclose(back.intensity, cloud.intensity, atol=1e-6)
    assert b"comment config_hash abc" in path.read_bytes()


def test_cloud_csv_round_trip_is_exact(tmp_path, cloud):
    path = tmp_path / "c.csv"
    write_cloud(path, cloud, comments=["x"])
    back = read_cloud(path)
    assert np.array_equal(back.positions, cloud.positions)
    assert np.array_equal(back.wave_dir, cloud.wave_dir)


def test_coordinates_only_ply(tmp_path):
    path = tmp_path / "p.ply"
    path.write_bytes(b"ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\n"
                     b"property float z\nend_header\n0 0 0\n1 2 3\n")
    c = read_cloud(path)
    assert not c.has_features
    assert np.array_equal(c.positions[1], [1, 2, 3])


@pytest.mark.parametrize("suffix", ["obj", "ply"])
def test_mesh_round_trip_is_exact(tmp_path, suffix, rng):
    m = TriangleMesh(rng.random((10, 3)), [[0, 1, 2], [2, 3, 4], [5, 6, 9]])
    path = tmp_path / f"m.{suffix}"
    write_mesh(path, m, comments=["config_hash 1234"])
    back = read_mesh(path)
    assert np.array_equal(back.vertices, m.vertices)
    assert np.array_equal(back.triangles, m.triangles)


def test_obj_quads_are_split(tmp_path):
    path = tmp_path / "q.obj"
    path.write_text("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1/1 2/2 3/3 4/4\n")
    assert read_mesh(path).n_triangles == 2


def test_pgm_and_pose_round_trip(tmp_path, rng):
    img = rng.integers(0, 256, size=(5, 9)).astype(np.uint8)
    write_pgm(tmp_path / "i.pgm", img)
    assert np.array_equal(read_pgm(tmp_path / "i.pgm"), img)
    pose = rng.random((4, 4))
    write_pose(tmp_path / "p.txt", pose)
    assert np.array_equal(read_pose(tmp_path / "p.txt"), pose)


def test_bad_files(tmp_path):
    (tmp_path / "x.ply").write_bytes(b"nope\n")
    with pytest.raises(FormatError):
        read_cloud(tmp_path / "x.ply")
    (tmp_path / "x.pgm").write_bytes(b"P2\n1 1\n255\n0\n")
    with pytest.raises(FormatError):
        read_pgm(tmp_path / "x.pgm")
    (tmp_path / "p.txt").write_text("1 2 3")
    with pytest.raises(FormatError):
        read_pose(tmp_path / "p.txt")
