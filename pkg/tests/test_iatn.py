import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import array_shapes, arrays

from ianet import iatn


class TestCodec:
    def test_layout(self):
        buf = iatn.encode(np.array([[1.0, 2.0, 3.0]]))
        assert buf[:4] == b"IATN"
        assert buf[4] == 2
        assert struct.unpack("<2I", buf[5:13]) == (1, 3)
        assert struct.unpack("<3f", buf[13:]) == (1.0, 2.0, 3.0)

    @given(arrays(np.float32, array_shapes(min_dims=0, max_dims=4, max_side=5), elements=st.floats(-1e6, 1e6, width=32)))
    def test_roundtrip(self, arr):
        out = iatn.decode(iatn.encode(arr))
        assert out.dtype == np.float32
        assert out.shape == arr.shape
        np.testing.assert_array_equal(out, arr)

    def test_bad_magic(self):
        with pytest.raises(iatn.FormatError, match="magic"):
            iatn.decode(b"NOPE\x00")

    def test_truncated_payload(self):
        buf = iatn.encode(np.zeros((2, 2)))
        with pytest.raises(iatn.FormatError, match="payload"):
            iatn.decode(buf[:-1])

    def test_truncated_header(self):
        with pytest.raises(iatn.FormatError):
            iatn.decode(b"IATN\x03\x01\x00")

    def test_float64_rounded_to_f32(self):
        out = iatn.decode(iatn.encode(np.array([0.1])))
        assert out[0] == np.float32(0.1)


class TestFiles:
    def test_relation_sidecar(self, tmp_path, rng):
        m = rng.random((6, 6))
        path = tmp_path / "rel.iatn"
        iatn.save_relation(path, m, (2, 3))
        assert (tmp_path / "rel.iatn.hdr").read_text() == "grid=2x3\n"
        back, grid = iatn.load_relation(path)
        assert grid == (2, 3)
        np.testing.assert_allclose(back, m, rtol=1e-7)

    def test_bundle_roundtrip(self, tmp_path, rng):
        tensors = {"a.weight": rng.standard_normal((2, 3)), "b": np.arange(4.0)}
        iatn.save_bundle(tmp_path / "ck", tensors)
        lines = (tmp_path / "ck" / "manifest.txt").read_text().splitlines()
        assert lines == ["a.weight\ta.weight.iatn", "b\tb.iatn"]
        back = iatn.load_bundle(tmp_path / "ck")
        assert set(back) == set(tensors)
        np.testing.assert_allclose(back["a.weight"], tensors["a.weight"], rtol=1e-7)

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            iatn.load_bundle(tmp_path)

    def test_malformed_manifest(self, tmp_path):
        (tmp_path / "manifest.txt").write_text("no tab here\n")
        with pytest.raises(iatn.FormatError, match=":1:"):
            iatn.load_bundle(tmp_path)
