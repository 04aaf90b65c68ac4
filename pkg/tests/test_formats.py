import struct

import numpy as np
import pytest

from tpvocc.errors import DataError
from tpvocc.formats import (bev_slice_image, read_mask, read_occg, read_tnsr,
                            write_mask, write_occg, write_ppm, write_tnsr)


class TestOccg:
    def test_roundtrip_bitexact(self, tmp_path):
        rng = np.random.default_rng(0)
        labels = rng.integers(0, 18, size=(5, 4, 3))
        path = tmp_path / "a.occg"
        write_occg(path, labels, 18)
        again, L = read_occg(path)
        assert L == 18
        np.testing.assert_array_equal(again, labels)
        write_occg(tmp_path / "b.occg", again, L)
        assert (tmp_path / "b.occg").read_bytes() == path.read_bytes()

    def test_header_layout(self, tmp_path):
        labels = np.zeros((2, 3, 4), dtype=np.uint8)
        labels[1, 0, 0] = 7
        path = tmp_path / "h.occg"
        write_occg(path, labels, 9)
        raw = path.read_bytes()
        assert raw[:4] == b"OCCG"
        assert struct.unpack_from("<5I", raw, 4) == (1, 2, 3, 4, 9)
        # x slowest: voxel (1, 0, 0) sits ny * nz = 12 bytes into the body
        assert raw[24 + 12] == 7
        assert len(raw) == 24 + 24

    def test_out_of_range_label_rejected(self, tmp_path):
        with pytest.raises(DataError):
            write_occg(tmp_path / "x.occg", np.full((1, 1, 1), 5), 4)

    def test_bad_magic_rejected(self, tmp_path):
        p = tmp_path / "bad.occg"
        p.write_bytes(b"NOPE" + b"\x00" * 32)
        with pytest.raises(DataError):
            read_occg(p)

    def test_truncated_rejected(self, tmp_path):
        p = tmp_path / "t.occg"
        write_occg(p, np.zeros((2, 2, 2), dtype=np.uint8), 2)
        p.write_bytes(p.read_bytes()[:-3])
        with pytest.raises(DataError):
            read_occg(p)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError):
            read_occg(tmp_path / "nope.occg")


class TestTnsr:
    @pytest.mark.parametrize("dtype", [np.float32, np.float64])
    def test_roundtrip_bitexact(self, tmp_path, dtype):
        rng = np.random.default_rng(1)
        t = rng.standard_normal((3, 4, 5)).astype(dtype)
        path = tmp_path / "t.tnsr"
        write_tnsr(path, t)
        again = read_tnsr(path)
        assert again.dtype == dtype
        np.testing.assert_array_equal(again, t)
        write_tnsr(tmp_path / "u.tnsr", again)
        assert (tmp_path / "u.tnsr").read_bytes() == path.read_bytes()

    def test_header_layout(self, tmp_path):
        t = np.arange(6, dtype=np.float32).reshape(2, 3)
        path = tmp_path / "h.tnsr"
        write_tnsr(path, t)
        raw = path.read_bytes()
        assert raw[:4] == b"TNSR"
        assert struct.unpack_from("<2I", raw, 4) == (1, 2)
        assert struct.unpack_from("<2I", raw, 12) == (2, 3)
        assert raw[20] == 1  # float32 tag
        assert np.frombuffer(raw[21:], dtype="<f4")[4] == 4.0

    def test_1d_and_4d(self, tmp_path):
        for shape in ((7,), (2, 3, 2, 2)):
            t = np.random.default_rng(2).standard_normal(shape)
            write_tnsr(tmp_path / "x.tnsr", t)
            np.testing.assert_array_equal(read_tnsr(tmp_path / "x.tnsr"), t)

    def test_integer_rejected(self, tmp_path):
        with pytest.raises(DataError):
            write_tnsr(tmp_path / "i.tnsr", np.zeros((2, 2), dtype=np.int32))

    def test_bad_dtype_tag_rejected(self, tmp_path):
        p = tmp_path / "bad.tnsr"
        write_tnsr(p, np.zeros(2, dtype=np.float32))
        raw = bytearray(p.read_bytes())
        raw[16] = 9
        p.write_bytes(bytes(raw))
        with pytest.raises(DataError):
            read_tnsr(p)


class TestMask:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(3)
        m = rng.random((4, 4, 2)) < 0.5
        write_mask(tmp_path / "m.occg", m)
        np.testing.assert_array_equal(read_mask(tmp_path / "m.occg"), m)

    def test_wrong_class_count_rejected(self, tmp_path):
        write_occg(tmp_path / "m.occg", np.zeros((2, 2, 2), dtype=np.uint8), 5)
        with pytest.raises(DataError):
            read_mask(tmp_path / "m.occg")


class TestSliceImages:
    def test_uniform_grid_uniform_image(self):
        img = bev_slice_image(np.full((4, 4, 2), 4, dtype=np.uint8), 0)
        assert img.shape == (4, 4, 3)
        assert np.all(img.reshape(-1, 3) == img[0, 0])

    def test_palette_index_is_class_id(self):
        from tpvocc.classes import PALETTE
        labels = np.zeros((2, 2, 1), dtype=np.uint8)
        labels[0, 0, 0] = 7
        img = bev_slice_image(labels, 0)
        # voxel (0, 0) renders at column 0, bottom row
        np.testing.assert_array_equal(img[-1, 0], PALETTE[7])
        np.testing.assert_array_equal(img[0, 0], PALETTE[0])

    def test_max_projection_ignores_free(self):
        labels = np.full((2, 2, 3), 17, dtype=np.uint8)
        labels[0, 0, 1] = 3
        img = bev_slice_image(labels, None)
        from tpvocc.classes import PALETTE
        np.testing.assert_array_equal(img[-1, 0], PALETTE[3])
        np.testing.assert_array_equal(img[0, 1], PALETTE[17])

    def test_flip_commutes_with_mirror(self):
        rng = np.random.default_rng(4)
        labels = rng.integers(0, 18, size=(5, 4, 2)).astype(np.uint8)
        flipped = labels[::-1]  # X flip
        np.testing.assert_array_equal(
            bev_slice_image(flipped, 0), bev_slice_image(labels, 0)[:, ::-1])

    def test_z_out_of_range(self):
        with pytest.raises(DataError):
            bev_slice_image(np.zeros((2, 2, 2), dtype=np.uint8), 5)


class TestPpm:
    def test_header_and_payload(self, tmp_path):
        img = np.zeros((2, 3, 3), dtype=np.uint8)
        img[0, 0] = (255, 0, 0)
        path = tmp_path / "i.ppm"
        write_ppm(path, img)
        raw = path.read_bytes()
        assert raw.startswith(b"P6\n3 2\n255\n")
        assert raw[len(b"P6\n3 2\n255\n"):][:3] == b"\xff\x00\x00"

    def test_bad_shape_rejected(self, tmp_path):
        with pytest.raises(DataError):
            write_ppm(tmp_path / "x.ppm", np.zeros((2, 3), dtype=np.uint8))
