import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hetcd.raster import (
    Raster, RasterFormatError, TrainingSet, as_mask, decode_raster, encode_pgm, encode_raster,
    extract_pairs, log_transform, normalize_channels, read_mask, read_raster, sample_mask,
    subsample, write_mask, write_raster,
)


def test_raster_rejects_non_finite():
    with pytest.raises(ValueError):
        Raster(np.array([[1.0, np.nan]]))


def test_raster_is_read_only():
    r = Raster(np.zeros((2, 2, 1)))
    with pytest.raises(ValueError):
        r.data[0, 0, 0] = 1.0


def test_two_dimensional_input_becomes_single_channel():
    assert Raster(np.zeros((3, 4))).shape == (3, 4, 1)


class TestNormalizeChannels:
    def test_min_max(self):
        out = normalize_channels(Raster(np.array([[2.0, 4.0, 6.0]])))
        np.testing.assert_array_equal(out.data[..., 0], [[0.0, 0.5, 1.0]])

    def test_constant_channel_is_zero(self):
        out = normalize_channels(Raster(np.array([[5.0, 5.0]])))
        np.testing.assert_array_equal(out.data, 0.0)

    def test_unit_range_unchanged(self):
        r = Raster(np.array([[0.0, 1.0]]))
        assert normalize_channels(r) == r

    def test_channels_are_independent(self):
        data = np.stack([np.array([[0.0, 10.0]]), np.array([[3.0, 3.0]])], axis=2)
        out = normalize_channels(Raster(data))
        np.testing.assert_array_equal(out.data[..., 0], [[0.0, 1.0]])
        np.testing.assert_array_equal(out.data[..., 1], [[0.0, 0.0]])


def test_log_transform_rejects_non_positive():
    with pytest.raises(ValueError):
        log_transform(Raster(np.array([[1.0, 0.0]])))


class TestExtractPairs:
    def setup_method(self):
        self.x = Raster(np.arange(12, dtype=float).reshape(2, 2, 3))
        self.y = Raster(-np.arange(8, dtype=float).reshape(2, 2, 2))

    def test_single_pixel(self):
        mask = np.array([[False, True], [False, False]])
        t = extract_pairs(self.x, self.y, mask)
        assert t.size == 1
        np.testing.assert_array_equal(t.inputs[0], self.x.data[0, 1])
        np.testing.assert_array_equal(t.targets[0], self.y.data[0, 1])

    def test_full_mask(self):
        t = extract_pairs(self.x, self.y, np.ones((2, 2), bool))
        assert t.size == 4

    def test_row_major_order(self):
        mask = np.array([[True, False], [False, True]])
        t = extract_pairs(self.x, self.y, mask)
        np.testing.assert_array_equal(t.pixel_indices, [[0, 0], [1, 1]])

    def test_empty_mask_rejected(self):
        with pytest.raises(ValueError):
            extract_pairs(self.x, self.y, np.zeros((2, 2), bool))

    def test_size_mismatch(self):
        with pytest.raises(ValueError):
            extract_pairs(self.x, Raster(np.zeros((3, 2, 1))), np.ones((2, 2), bool))


class TestSubsample:
    def setup_method(self):
        rng = np.random.default_rng(0)
        self.t = TrainingSet(rng.normal(size=(100, 2)), rng.normal(size=(100, 1)))

    def test_full_fraction_keeps_rows(self):
        out = subsample(self.t, 1.0, seed=3)
        assert sorted(map(tuple, out.inputs)) == sorted(map(tuple, self.t.inputs))

    def test_two_percent_of_hundred(self):
        assert subsample(self.t, 0.02, seed=0).size == 2

    def test_deterministic(self):
        a, b = subsample(self.t, 0.3, seed=9), subsample(self.t, 0.3, seed=9)
        np.testing.assert_array_equal(a.inputs, b.inputs)

    @pytest.mark.parametrize("fraction", [0.0, -0.1, 1.5])
    def test_bad_fraction(self, fraction):
        with pytest.raises(ValueError):
            subsample(self.t, fraction, seed=0)


def test_sample_mask_stays_in_region():
    region = np.zeros((20, 20), bool)
    region[:10] = True
    m = sample_mask(region, 0.02, seed=1)
    assert m.sum() == 8
    assert not (m & ~region).any()


@settings(max_examples=40, deadline=None)
@given(arrays(np.float32, st.tuples(st.integers(1, 5), st.integers(1, 5), st.integers(1, 3)),
              elements=st.floats(-1e6, 1e6, width=32)))
def test_round_trip_bit_identical(tmp_path_factory, data):
    path = tmp_path_factory.mktemp("r") / "a.hcdr"
    r = Raster(data.astype(np.float64))
    write_raster(r, path)
    back = read_raster(path)
    assert back == r
    assert back.data.tobytes() == r.data.tobytes()


class TestFormatErrors:
    def test_truncated(self):
        blob = struct.pack("<4sIIII", b"HCDR", 1, 2, 2, 1) + np.zeros(3, "<f4").tobytes()
        with pytest.raises(RasterFormatError, match="truncated"):
            decode_raster(blob)

    def test_bad_magic(self):
        blob = encode_raster(Raster(np.zeros((1, 1))))
        with pytest.raises(RasterFormatError, match="magic"):
            decode_raster(b"XXXX" + blob[4:])

    def test_trailing_bytes(self):
        with pytest.raises(RasterFormatError):
            decode_raster(encode_raster(Raster(np.zeros((1, 1)))) + b"\0")

    def test_non_finite_payload(self):
        blob = struct.pack("<4sIIII", b"HCDR", 1, 1, 1, 1) + np.array([np.inf], "<f4").tobytes()
        with pytest.raises(RasterFormatError):
            decode_raster(blob)

    def test_short_header(self):
        with pytest.raises(RasterFormatError):
            decode_raster(b"HCD")


def test_mask_round_trip(tmp_path):
    m = np.array([[True, False], [False, True]])
    write_mask(m, tmp_path / "m.hcdr")
    np.testing.assert_array_equal(read_mask(tmp_path / "m.hcdr"), m)


def test_mask_shape_check():
    with pytest.raises(ValueError):
        as_mask(np.ones((2, 2)), (3, 2, 1))


def test_pgm_header_and_levels():
    blob = encode_pgm(np.array([[0.0, 1.0, 0.5]]))
    assert blob.startswith(b"P5\n3 1\n255\n")
    assert list(blob[-3:]) == [0, 255, 128]
