import logging

import numpy as np
import pytest

from rino import binfmt, cache


def test_binfmt_roundtrip_with_complex_and_ints():
    arrays = {"a": np.arange(6).reshape(2, 3), "z": np.array([1 + 2j, -3j]), "s": np.float64(2.5)}
    data = binfmt.pack(b"TEST", 3, b"\x01" * 32, arrays)
    v, h, out = binfmt.unpack(data, b"TEST")
    assert (v, h) == (3, b"\x01" * 32)
    np.testing.assert_array_equal(out["a"], arrays["a"])
    np.testing.assert_array_equal(out["z"], arrays["z"])
    assert out["s"].shape == ()


def test_binfmt_detects_corruption_and_version():
    data = bytearray(binfmt.pack(b"TEST", 1, b"\0" * 32, {"x": np.ones(4)}))
    with pytest.raises(binfmt.VersionMismatch):
        binfmt.unpack(bytes(data), b"TEST", version=2)
    with pytest.raises(binfmt.ContainerError):
        binfmt.unpack(bytes(data), b"NOPE")
    data[50] ^= 0xFF
    with pytest.raises(binfmt.ChecksumError):
        binfmt.unpack(bytes(data), b"TEST")
    with pytest.raises(binfmt.ContainerError):
        binfmt.unpack(bytes(data[:10]), b"TEST")


def test_cache_roundtrip_is_bit_exact(tmp_path, blob_mesh, blob_shape):
    key = cache.cache_key(blob_mesh, 40, 12)
    path = cache.cache_path(str(tmp_path), key)
    cache.cache_store(path, key, blob_shape)
    got = cache.cache_load(path, key, blob_mesh)
    np.testing.assert_array_equal(got.basis.evecs, blob_shape.basis.evecs)
    np.testing.assert_array_equal(got.cbasis.evecs, blob_shape.cbasis.evecs)
    np.testing.assert_array_equal(got.cbasis.evals, blob_shape.cbasis.evals)
    for name in ("stiffness", "grad", "conn"):
        assert abs(getattr(got.ops, name) - getattr(blob_shape.ops, name)).max() == 0


def test_cache_key_depends_on_content_and_sizes(blob_mesh):
    k = cache.cache_key(blob_mesh, 40, 12)
    assert k != cache.cache_key(blob_mesh, 41, 12)
    assert k != cache.cache_key(blob_mesh.rotated(np.diag([1.0, -1.0, -1.0])), 40, 12)
    assert len(k) == 32


def test_cached_shape_miss_hit_and_corruption(tmp_path, blob_mesh, caplog):
    d = str(tmp_path)
    a, hit = cache.cached_shape(blob_mesh, 10, 4, d)
    assert not hit
    b, hit = cache.cached_shape(blob_mesh, 10, 4, d)
    assert hit
    np.testing.assert_array_equal(a.basis.evecs, b.basis.evecs)
    path = cache.cache_path(d, cache.cache_key(blob_mesh, 10, 4))
    raw = bytearray(open(path, "rb").read())
    raw[100] ^= 0x55
    open(path, "wb").write(bytes(raw))
    with pytest.raises(binfmt.ChecksumError):
        cache.cache_load(path, cache.cache_key(blob_mesh, 10, 4), blob_mesh)
    with caplog.at_level(logging.WARNING):
        c, hit = cache.cached_shape(blob_mesh, 10, 4, d)
    assert not hit and "corrupted" in caplog.text
    np.testing.assert_array_equal(c.basis.evecs, a.basis.evecs)


def test_missing_file_is_a_miss(tmp_path, blob_mesh):
    assert cache.cache_load(str(tmp_path / "none.rino"), b"\0" * 32, blob_mesh) is None
