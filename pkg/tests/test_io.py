import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flowlabel.core import FlowField, PointCloud, PseudoLabelSet
from flowlabel.io import (FlowFormatError, PlyError, read_cloud, read_flow, read_scene_pair,
                          scene_dirs, write_cloud, write_flow, write_scene)
from flowlabel.synth import SceneSpec, generate


def _write(path, text):
    path.write_bytes(text.encode("ascii"))
    return path


def test_minimal_ascii_file(tmp_path):
    f = _write(tmp_path / "one.ply",
               "ply\nformat ascii 1.0\nelement vertex 1\n"
               "property float x\nproperty float y\nproperty float z\nend_header\n0 0 0\n")
    cloud = read_cloud(f)
    assert len(cloud) == 1 and not cloud.has_colors and not cloud.has_normals
    np.testing.assert_array_equal(cloud.positions, [[0, 0, 0]])


def test_uchar_color_normalization(tmp_path):
    f = _write(tmp_path / "red.ply",
               "ply\nformat ascii 1.0\ncomment made by hand\nelement vertex 1\n"
               "property float x\nproperty float y\nproperty float z\n"
               "property uchar red\nproperty uchar green\nproperty uchar blue\n"
               "property float intensity\nend_header\n1 2 3 255 0 0 0.5\n")
    cloud = read_cloud(f)
    np.testing.assert_array_equal(cloud.colors, [[1.0, 0.0, 0.0]])
    np.testing.assert_array_equal(cloud.positions, [[1, 2, 3]])


def test_binary_reader_skips_unknown_properties_and_elements(tmp_path):
    header = ("ply\nformat binary_little_endian 1.0\nelement camera 1\nproperty int id\n"
              "element vertex 2\nproperty double x\nproperty uchar tag\nproperty double y\n"
              "property double z\nproperty float nx\nproperty float ny\nproperty float nz\n"
              "end_header\n")
    body = struct.pack("<i", 7)
    body += struct.pack("<dBdd3f", 1.5, 9, -2.0, 0.25, 0, 0, 1)
    body += struct.pack("<dBdd3f", 0.0, 9, 0.0, 0.0, 0, 0, 0)
    f = tmp_path / "b.ply"
    f.write_bytes(header.encode("ascii") + body)
    cloud = read_cloud(f)
    np.testing.assert_array_equal(cloud.positions, [[1.5, -2.0, 0.25], [0, 0, 0]])
    assert list(cloud.normal_valid) == [True, False]


@pytest.mark.parametrize("binary", [True, False])
def test_truncated_body(tmp_path, binary):
    cloud = PointCloud(np.arange(12.0).reshape(4, 3))
    f = tmp_path / "t.ply"
    write_cloud(f, cloud, binary=binary)
    data = f.read_bytes()
    f.write_bytes(data[:-10] if binary else data[: data.rindex(b"\n", 0, -1) + 1])
    with pytest.raises(PlyError, match="element count mismatch"):
        read_cloud(f)


def test_header_errors(tmp_path):
    big = _write(tmp_path / "be.ply", "ply\nformat binary_big_endian 1.0\nelement vertex 0\n"
                 "property float x\nproperty float y\nproperty float z\nend_header\n")
    with pytest.raises(PlyError, match="big_endian"):
        read_cloud(big)
    for text in ("plx\n", "ply\nformat ascii 1.0\nelement vertex 1\n",
                 "ply\nformat ascii 1.0\nproperty float x\nend_header\n",
                 "ply\nformat ascii 1.0\nelement vertex 1\nproperty quad x\nend_header\n"):
        with pytest.raises(PlyError, match="malformed header"):
            read_cloud(_write(tmp_path / "bad.ply", text))


def test_empty_flow_is_nine_bytes(tmp_path):
    f = tmp_path / "e.sfl"
    write_flow(f, FlowField.zeros(0))
    assert f.read_bytes() == b"SFL1\x00\x00\x00\x00\x00"
    assert len(read_flow(f)) == 0


def test_flow_layout_by_hand(tmp_path):
    f = tmp_path / "l.sfl"
    write_flow(f, PseudoLabelSet([[1.0, 2.0, 3.0], [9, 9, 9]], [True, False]))
    expected = b"SFL1" + struct.pack("<IB", 2, 1) + struct.pack("<6f", 1, 2, 3, 0, 0, 0) + b"\x01\x00"
    assert f.read_bytes() == expected
    back = read_flow(f)
    assert isinstance(back, PseudoLabelSet) and list(back.valid) == [True, False]


def test_flow_errors(tmp_path):
    f = tmp_path / "x.sfl"
    write_flow(f, FlowField(np.ones((3, 3))))
    data = f.read_bytes()
    f.write_bytes(b"SFL2" + data[4:])
    with pytest.raises(FlowFormatError, match="bad magic"):
        read_flow(f)
    f.write_bytes(data[:-4])
    with pytest.raises(FlowFormatError, match="count mismatch"):
        read_flow(f)
    f.write_bytes(data + b"\x00")
    with pytest.raises(FlowFormatError, match="count mismatch"):
        read_flow(f)
    f.write_bytes(b"SF")
    with pytest.raises(FlowFormatError, match="count mismatch"):
        read_flow(f)


def random_cloud(rng, n, colors, normals, eight_bit):
    pos = rng.normal(size=(n, 3)) * rng.uniform(0.1, 100)
    col = nrm = valid = None
    if colors:
        col = rng.integers(0, 256, (n, 3)) / 255.0 if eight_bit else rng.uniform(0, 1, (n, 3))
    if normals:
        nrm = rng.normal(size=(n, 3))
        nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
        valid = rng.uniform(size=n) > 0.2
        nrm[~valid] = 0.0
    return PointCloud(pos, col, nrm, valid)


def assert_clouds_identical(a, b):
    assert a.positions.tobytes() == b.positions.tobytes()
    for x, y in ((a.colors, b.colors), (a.normals, b.normals), (a.normal_valid, b.normal_valid)):
        assert (x is None) == (y is None)
        if x is not None:
            assert x.tobytes() == y.tobytes()


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 100_000), st.integers(0, 50), st.booleans(), st.booleans(), st.booleans(),
       st.booleans())
def test_cloud_roundtrip_is_bit_exact(tmp_path_factory, seed, n, colors, normals, eight_bit, binary):
    cloud = random_cloud(np.random.default_rng(seed), n, colors, normals, eight_bit)
    f = tmp_path_factory.mktemp("ply") / "c.ply"
    write_cloud(f, cloud, binary=binary)
    assert_clouds_identical(read_cloud(f), cloud)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 100_000), st.integers(0, 80), st.booleans())
def test_flow_roundtrip_is_bit_exact(tmp_path_factory, seed, n, with_valid):
    rng = np.random.default_rng(seed)
    # the container stores float32, so draw float32 values
    vec = (rng.normal(size=(n, 3)) * 10).astype(np.float32).astype(np.float64)
    flow = PseudoLabelSet(vec, rng.uniform(size=n) > 0.3) if with_valid else FlowField(vec)
    f = tmp_path_factory.mktemp("sfl") / "f.sfl"
    write_flow(f, flow)
    back = read_flow(f)
    assert type(back) is type(flow)
    if with_valid:
        assert back.labels.tobytes() == flow.labels.tobytes()
        assert back.valid.tobytes() == flow.valid.tobytes()
    else:
        assert back.vectors.tobytes() == flow.vectors.tobytes()
    g = f.with_name("g.sfl")
    write_flow(g, back)
    assert g.read_bytes() == f.read_bytes()


def test_scene_directory_roundtrip(tmp_path):
    scene = generate(SceneSpec(body_count=2, shapes=("box", "sphere"), color_mode="gradient", seed=3))
    out = write_scene(tmp_path / "s0", scene)
    P, Q, gt, pred = read_scene_pair(out)
    assert_clouds_identical(P, scene.P)
    assert_clouds_identical(Q, scene.Q)
    np.testing.assert_allclose(gt.vectors, scene.gt_flow.vectors, atol=1e-6)
    assert pred is None
    assert scene_dirs(tmp_path) == [out] and scene_dirs(out) == [out]
    write_flow(out / "pred.sfl", FlowField.zeros(3))
    with pytest.raises(ValueError, match="vectors"):
        read_scene_pair(out)
