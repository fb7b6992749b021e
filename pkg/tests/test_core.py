"""Tensor primitives and file formats, checked against independent oracles.

The tiling tests never reuse np.tile/np.pad from the implementation:
interior coverage is verified by index arithmetic and the border by a
from-scratch reflection indexer, so a bug in the production path cannot
hide in the reference path.
"""

import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from regionattack import (
    ImageFormatError,
    Region,
    as_image,
    clip01,
    gray_image,
    l2_distortion,
    linf_distortion,
    load_image,
    ppm_bytes,
    prediction_entropy,
    save_image,
    save_ppm,
    tile_region,
)


def reflect_index(i, size):
    """Mirror an out-of-range index back into [0, size) without repeating edges.

    This is the reference for 'reflect' border handling, written as the
    textbook fold: indices bounce between the walls with period 2*(size-1).
    """
    if size == 1:
        return 0
    period = 2 * (size - 1)
    i = i % period
    return i if i < size else period - i


def reference_tiled(region, height, width):
    """Index-arithmetic re-implementation of tile_region."""
    h, w, c = region.shape
    m, n = height // h, width // w
    top = (height - m * h) // 2
    left = (width - n * w) // 2
    out = np.empty((height, width, c))
    for i in range(height):
        for j in range(width):
            bi = reflect_index(i - top, m * h)
            bj = reflect_index(j - left, n * w)
            out[i, j, :] = region[bi % h, bj % w, :]
    return out


class TestRegion:
    def test_rejects_nonpositive_extent(self):
        with pytest.raises(ValueError):
            Region(0, 0, 0, 4)
        with pytest.raises(ValueError):
            Region(0, 0, 4, -1)

    def test_rejects_negative_corner(self):
        with pytest.raises(ValueError):
            Region(-1, 0, 2, 2)

    def test_validate_within_bounds(self):
        Region(2, 2, 4, 4).validate_within(8, 8)
        with pytest.raises(ValueError):
            Region(5, 0, 4, 4).validate_within(8, 8)


class TestImageBasics:
    def test_gray_image_is_half(self):
        x = gray_image(3, 5, 2)
        assert x.shape == (3, 5, 2)
        assert np.all(x == 0.5)

    def test_gray_image_rejects_bad_dims(self):
        with pytest.raises(ValueError):
            gray_image(0, 5)

    def test_as_image_requires_three_dims(self):
        with pytest.raises(ValueError):
            as_image(np.zeros((4, 4)))

    def test_clip_is_idempotent_and_bounded(self):
        x = np.array([[[-0.5, 0.2, 1.7]]])
        y = clip01(x)
        assert np.all(y >= 0.0) and np.all(y <= 1.0)
        assert np.array_equal(clip01(y), y)


class TestTiling:
    def test_exact_grid_matches_index_arithmetic(self):
        # no border: every output pixel is region[i mod h][j mod w]
        rng = np.random.default_rng(0)
        region = rng.random((3, 2, 2))
        out = tile_region(region, 9, 8)
        for i in range(9):
            for j in range(8):
                assert np.array_equal(out[i, j], region[i % 3, j % 2])

    def test_border_matches_reflection_oracle(self):
        rng = np.random.default_rng(1)
        region = rng.random((4, 4, 1))
        out = tile_region(region, 10, 11)
        ref = reference_tiled(region, 10, 11)
        assert np.array_equal(out, ref)

    def test_large_canvas_covers_centered_block(self):
        # 299 // 64 = 4 whole tiles => a 256x256 grid starting at offset 21
        rng = np.random.default_rng(2)
        region = rng.random((64, 64, 3))
        out = tile_region(region, 299, 299)
        top = (299 - 256) // 2
        assert top == 21
        grid = out[top : top + 256, top : top + 256, :]
        for bi in range(4):
            for bj in range(4):
                tile = grid[bi * 64 : (bi + 1) * 64, bj * 64 : (bj + 1) * 64, :]
                assert np.array_equal(tile, region)

    def test_region_equal_to_canvas_is_identity(self):
        rng = np.random.default_rng(3)
        region = rng.random((5, 7, 2))
        assert np.array_equal(tile_region(region, 5, 7), region)

    def test_oversized_region_rejected(self):
        with pytest.raises(ValueError):
            tile_region(np.zeros((9, 2, 1)), 8, 8)

    @settings(max_examples=60, deadline=None)
    @given(
        h=st.integers(1, 6),
        w=st.integers(1, 6),
        extra_h=st.integers(0, 9),
        extra_w=st.integers(0, 9),
        c=st.integers(1, 3),
        seed=st.integers(0, 2**31 - 1),
    )
    def test_property_matches_oracle(self, h, w, extra_h, extra_w, c, seed):
        height, width = h + extra_h, w + extra_w
        region = np.random.default_rng(seed).random((h, w, c))
        out = tile_region(region, height, width)
        assert out.shape == (height, width, c)
        assert np.array_equal(out, reference_tiled(region, height, width))


class TestDistortion:
    def test_l2_closed_form(self):
        x0 = gray_image(2, 2, 1)
        x = x0.copy()
        x[0, 0, 0] += 0.1
        x[1, 1, 0] -= 0.1
        # sqrt(0.01 + 0.01)
        assert math.isclose(l2_distortion(x, x0), math.sqrt(0.02), rel_tol=1e-12)

    def test_linf_closed_form(self):
        x0 = gray_image(2, 2, 1)
        x = x0.copy()
        x[0, 1, 0] += 0.1
        assert math.isclose(linf_distortion(x, x0), 0.1, rel_tol=1e-12)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            l2_distortion(gray_image(2, 2), gray_image(2, 3))


class TestEntropy:
    def test_uniform_hits_negative_log_k(self):
        assert math.isclose(prediction_entropy(np.full(4, 0.25)), -math.log(4), rel_tol=1e-12)
        assert math.isclose(prediction_entropy([0.5, 0.5]), -math.log(2), rel_tol=1e-12)

    def test_one_hot_is_zero(self):
        assert prediction_entropy([0.0, 1.0, 0.0]) == 0.0

    def test_matches_direct_sum(self):
        p = np.array([0.7, 0.2, 0.1])
        direct = sum(pi * math.log(pi) for pi in p)
        assert math.isclose(prediction_entropy(p), direct, rel_tol=1e-12)

    def test_rejects_negative_and_unnormalized(self):
        with pytest.raises(ValueError):
            prediction_entropy([0.5, -0.1, 0.6])
        with pytest.raises(ValueError):
            prediction_entropy([0.5, 0.4])

    def test_rejects_matrix(self):
        with pytest.raises(ValueError):
            prediction_entropy(np.full((2, 2), 0.25))


class TestImageFile:
    def test_round_trip_exact_at_float32(self, tmp_path):
        rng = np.random.default_rng(5)
        x = rng.random((6, 7, 3))
        path = str(tmp_path / "img.rna1")
        save_image(path, x)
        back = load_image(path)
        assert back.shape == x.shape
        assert np.array_equal(back, x.astype(np.float32).astype(np.float64))

    def test_header_layout(self, tmp_path):
        path = str(tmp_path / "img.rna1")
        save_image(path, gray_image(2, 3, 1))
        raw = open(path, "rb").read()
        magic, h, w, c = struct.unpack_from("<4sIII", raw)
        assert (magic, h, w, c) == (b"RNA1", 2, 3, 1)
        assert len(raw) == 16 + 2 * 3 * 1 * 4

    def test_truncated_header_rejected(self, tmp_path):
        path = tmp_path / "short.rna1"
        path.write_bytes(b"RNA1\x02")
        with pytest.raises(ImageFormatError):
            load_image(str(path))

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.rna1"
        path.write_bytes(struct.pack("<4sIII", b"NOPE", 2, 2, 1) + b"\x00" * 16)
        with pytest.raises(ImageFormatError):
            load_image(str(path))

    def test_payload_size_mismatch_rejected(self, tmp_path):
        path = tmp_path / "trunc.rna1"
        path.write_bytes(struct.pack("<4sIII", b"RNA1", 2, 2, 1) + b"\x00" * 12)
        with pytest.raises(ImageFormatError):
            load_image(str(path))


class TestPpmExport:
    def test_color_header_and_pixels(self):
        x = np.zeros((1, 2, 3))
        x[0, 0] = [0.0, 0.5, 1.0]
        x[0, 1] = [1.0, 1.0, 1.0]
        data = ppm_bytes(x)
        assert data.startswith(b"P6\n2 1\n255\n")
        body = data[len(b"P6\n2 1\n255\n") :]
        assert body == bytes([0, 128, 255, 255, 255, 255])

    def test_gray_uses_pgm_tag(self):
        data = ppm_bytes(gray_image(2, 2, 1))
        assert data.startswith(b"P5\n2 2\n255\n")
        assert set(data[len(b"P5\n2 2\n255\n") :]) == {128}

    def test_out_of_range_values_clip(self):
        x = np.array([[[-3.0]], [[7.0]]])
        body = ppm_bytes(x)[len(b"P5\n1 2\n255\n") :]
        assert body == bytes([0, 255])

    def test_two_channels_rejected(self):
        with pytest.raises(ValueError):
            ppm_bytes(np.zeros((2, 2, 2)))

    def test_save_ppm_writes_same_bytes(self, tmp_path):
        x = np.random.default_rng(6).random((3, 3, 3))
        path = tmp_path / "img.ppm"
        save_ppm(str(path), x)
        assert path.read_bytes() == ppm_bytes(x)
