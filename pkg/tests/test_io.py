import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from surfmotion import io
from surfmotion.mesh import make_icosphere, make_quad_sphere
from surfmotion.volgrid import VoxelGrid


@pytest.mark.parametrize("dtype", [np.uint8, np.int16, np.float32, np.float64])
def test_nrrd_roundtrip(tmp_path, dtype):
    data = (np.random.default_rng(0).random((5, 6, 7)) * 100).astype(dtype)
    g = VoxelGrid(data, spacing=(0.5, 1.0, 2.0), origin=(-3.0, 1.5, 0.25))
    io.write_nrrd(tmp_path / "a.nrrd", g)
    back = io.read_nrrd(tmp_path / "a.nrrd")
    np.testing.assert_array_equal(back.data, data)
    assert back.spacing == g.spacing and back.origin == g.origin


def test_nrrd_deterministic(tmp_path):
    g = VoxelGrid(np.arange(27, dtype=np.uint8).reshape(3, 3, 3))
    io.write_nrrd(tmp_path / "a.nrrd", g)
    io.write_nrrd(tmp_path / "b.nrrd", g)
    assert io.sha256(tmp_path / "a.nrrd") == io.sha256(tmp_path / "b.nrrd")


def test_nrrd_rejects_garbage(tmp_path):
    (tmp_path / "x.nrrd").write_bytes(b"hello")
    with pytest.raises(ValueError):
        io.read_nrrd(tmp_path / "x.nrrd")


def test_obj_roundtrip(tmp_path):
    for mesh in (make_quad_sphere(3), make_icosphere(1)):
        io.write_obj(tmp_path / "m.obj", mesh, precision=12)
        back = io.read_obj(tmp_path / "m.obj")
        assert type(back) is type(mesh)
        np.testing.assert_array_equal(back.faces, mesh.faces)
        np.testing.assert_allclose(back.vertices, mesh.vertices, atol=1e-11)


def test_points_obj(tmp_path):
    p = np.random.default_rng(0).normal(size=(10, 3))
    io.write_points_obj(tmp_path / "p.obj", p)
    np.testing.assert_allclose(io.read_obj(tmp_path / "p.obj"), p, atol=1e-6)


def test_obj_mixed_arity(tmp_path):
    (tmp_path / "m.obj").write_text("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3\nf 1 2 3 4\n")
    with pytest.raises(ValueError, match="arities"):
        io.read_obj(tmp_path / "m.obj")


@given(st.lists(st.floats(allow_nan=False, allow_infinity=False, width=64), min_size=1, max_size=20))
def test_vertex_csv_lossless_property(values):
    import tempfile
    from pathlib import Path

    with tempfile.TemporaryDirectory() as d:
        p = Path(d) / "v.csv"
        io.write_vertex_csv(p, values)
        np.testing.assert_array_equal(io.read_vertex_csv(p), np.asarray(values))


def test_matrix_csv_roundtrip(tmp_path):
    m = np.random.default_rng(0).normal(size=(3, 4))
    io.write_matrix_csv(tmp_path / "m.csv", m, row_label="frame", col_prefix="v")
    assert (tmp_path / "m.csv").read_text().startswith("frame,v0,v1,v2,v3\n0,")
    np.testing.assert_array_equal(io.read_matrix_csv(tmp_path / "m.csv"), m)


def test_json_sorted_and_numpy(tmp_path):
    io.write_json(tmp_path / "a.json", {"b": np.float64(1.5), "a": np.arange(2)})
    text = (tmp_path / "a.json").read_text()
    assert text.index('"a"') < text.index('"b"')
    assert io.read_json(tmp_path / "a.json") == {"a": [0, 1], "b": 1.5}
