import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from drcn.errors import DataError, DimensionError
from drcn.image import (
    ImagePlane,
    bicubic_resize,
    crop_border,
    extract_patches,
    load_luminance,
    make_eval_pair,
    modulo_crop,
    quantize_u8,
    read_planes,
    rgb_to_ycbcr,
    to_luminance,
    write_png,
    ycbcr_to_rgb,
)


def keys_cubic_scalar(x: float) -> float:
    ax = abs(x)
    if ax <= 1.0:
        return 1.5 * ax**3 - 2.5 * ax**2 + 1.0
    if ax < 2.0:
        return -0.5 * ax**3 + 2.5 * ax**2 - 4.0 * ax + 2.0
    return 0.0


def oracle_bicubic(data: np.ndarray, out_w: int, out_h: int, antialias: bool = True) -> np.ndarray:
    """Per-pixel direct summation over every nonzero kernel tap.

    Independent of the separable implementation: joint 2-d weights, explicit
    loops, normalization over the taps actually touched.
    """
    in_h, in_w = data.shape
    sy, sx = out_h / in_h, out_w / in_w
    ky = sy if (antialias and sy < 1.0) else 1.0
    kx = sx if (antialias and sx < 1.0) else 1.0
    out = np.zeros((out_h, out_w))
    for oy in range(out_h):
        uy = (oy + 0.5) / sy - 0.5
        y_lo = math.floor(uy - 2.0 / ky) - 1
        y_hi = math.ceil(uy + 2.0 / ky) + 1
        for ox in range(out_w):
            ux = (ox + 0.5) / sx - 0.5
            x_lo = math.floor(ux - 2.0 / kx) - 1
            x_hi = math.ceil(ux + 2.0 / kx) + 1
            acc = 0.0
            norm = 0.0
            for iy in range(y_lo, y_hi + 1):
                wy = ky * keys_cubic_scalar(ky * (uy - iy))
                if wy == 0.0:
                    continue
                cy = min(max(iy, 0), in_h - 1)
                for ix in range(x_lo, x_hi + 1):
                    wx = kx * keys_cubic_scalar(kx * (ux - ix))
                    if wx == 0.0:
                        continue
                    weight = wy * wx
                    acc += weight * data[cy, min(max(ix, 0), in_w - 1)]
                    norm += weight
            out[oy, ox] = acc / norm
    return out


class TestLuminance:
    def test_white(self):
        plane = ImagePlane(np.ones((2, 2)))
        y = to_luminance(plane, ImagePlane(np.ones((2, 2))), ImagePlane(np.ones((2, 2))))
        np.testing.assert_allclose(y.data, 235.0 / 255.0)

    def test_black(self):
        zeros = lambda: ImagePlane(np.zeros((2, 2)))
        y = to_luminance(zeros(), zeros(), zeros())
        np.testing.assert_allclose(y.data, 16.0 / 255.0)

    @given(st.floats(0, 1, allow_nan=False))
    @settings(deadline=None)
    def test_gray_is_affine(self, g):
        plane = lambda: ImagePlane(np.full((1, 1), g))
        y = to_luminance(plane(), plane(), plane())
        assert y.data[0, 0] == pytest.approx((219.0 * g + 16.0) / 255.0, abs=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            to_luminance(ImagePlane(np.zeros((2, 2))), ImagePlane(np.zeros((3, 2))), ImagePlane(np.zeros((2, 2))))

    def test_ycbcr_roundtrip(self):
        rng = np.random.default_rng(0)
        r, g, b = (ImagePlane(rng.random((5, 4))) for _ in range(3))
        y, cb, cr = rgb_to_ycbcr(r, g, b)
        r2, g2, b2 = ycbcr_to_rgb(y, cb, cr)
        np.testing.assert_allclose(r2.data, r.data, atol=1e-12)
        np.testing.assert_allclose(g2.data, g.data, atol=1e-12)
        np.testing.assert_allclose(b2.data, b.data, atol=1e-12)

    def test_luma_matches_ycbcr_y(self):
        rng = np.random.default_rng(1)
        r, g, b = (ImagePlane(rng.random((3, 3))) for _ in range(3))
        y, _, _ = rgb_to_ycbcr(r, g, b)
        np.testing.assert_allclose(to_luminance(r, g, b).data, y.data, atol=1e-12)


class TestBicubicResize:
    @given(st.floats(0, 1, allow_nan=False), st.integers(1, 9), st.integers(1, 9),
           st.integers(1, 9), st.integers(1, 9))
    @settings(deadline=None, max_examples=40)
    def test_constant_preserved(self, value, in_w, in_h, out_w, out_h):
        plane = ImagePlane(np.full((in_h, in_w), value))
        out = bicubic_resize(plane, out_w, out_h)
        assert out.data.shape == (out_h, out_w)
        np.testing.assert_allclose(out.data, value, atol=1e-9)

    def test_identity_resize_is_exact(self):
        rng = np.random.default_rng(2)
        plane = ImagePlane(rng.random((7, 5)))
        out = bicubic_resize(plane, 5, 7)
        np.testing.assert_array_equal(out.data, plane.data)

    def test_impulse_upscale_matches_oracle(self):
        data = np.zeros((6, 6))
        data[3, 2] = 1.0
        out = bicubic_resize(ImagePlane(data), 12, 12)
        np.testing.assert_allclose(out.data, oracle_bicubic(data, 12, 12), atol=1e-6)

    @pytest.mark.parametrize("seed,out_dims", [(0, (13, 9)), (1, (5, 4)), (2, (8, 17)), (3, (3, 3))])
    def test_random_resizes_match_oracle(self, seed, out_dims):
        rng = np.random.default_rng(seed)
        data = rng.random((9, 7))
        out_w, out_h = out_dims
        got = bicubic_resize(ImagePlane(data), out_w, out_h)
        np.testing.assert_allclose(got.data, oracle_bicubic(data, out_w, out_h), atol=1e-10)

    def test_downscale_antialias_matches_oracle(self):
        rng = np.random.default_rng(4)
        data = rng.random((12, 15))
        got = bicubic_resize(ImagePlane(data), 5, 4)
        np.testing.assert_allclose(got.data, oracle_bicubic(data, 5, 4), atol=1e-10)

    def test_antialias_flag_changes_downscale(self):
        rng = np.random.default_rng(5)
        plane = ImagePlane(rng.random((16, 16)))
        aa = bicubic_resize(plane, 8, 8, antialias=True)
        no_aa = bicubic_resize(plane, 8, 8, antialias=False)
        assert not np.allclose(aa.data, no_aa.data)

    def test_translation_equivariance_for_integer_shifts(self):
        rng = np.random.default_rng(6)
        base = rng.random((20, 20))
        shifted = np.roll(base, 3, axis=1)
        up = bicubic_resize(ImagePlane(base), 40, 40).data
        up_shifted = bicubic_resize(ImagePlane(shifted), 40, 40).data
        # compare interiors, away from the clamped borders
        margin = 10
        np.testing.assert_allclose(
            np.roll(up, 6, axis=1)[margin:-margin, margin:-margin],
            up_shifted[margin:-margin, margin:-margin],
            atol=1e-9,
        )

    def test_rejects_empty_output(self):
        with pytest.raises(ValueError):
            bicubic_resize(ImagePlane(np.zeros((4, 4))), 0, 3)


class TestCrops:
    def test_modulo_crop_examples(self):
        assert modulo_crop(ImagePlane(np.zeros((101, 101))), 2).data.shape == (100, 100)
        assert modulo_crop(ImagePlane(np.zeros((8, 6))), 2).data.shape == (8, 6)
        assert modulo_crop(ImagePlane(np.zeros((5, 7))), 3).data.shape == (3, 6)

    def test_modulo_crop_empty_result(self):
        with pytest.raises(DataError):
            modulo_crop(ImagePlane(np.zeros((2, 2))), 3)

    def test_crop_border_examples(self):
        plane = ImagePlane(np.arange(41 * 41, dtype=float).reshape(41, 41))
        assert crop_border(plane, 0).data.shape == (41, 41)
        assert crop_border(plane, 2).data.shape == (37, 37)

    def test_crop_border_composition(self):
        plane = ImagePlane(np.random.default_rng(7).random((20, 16)))
        twice = crop_border(crop_border(plane, 2), 3)
        once = crop_border(plane, 5)
        np.testing.assert_array_equal(twice.data, once.data)

    def test_crop_border_overcrop(self):
        with pytest.raises(DataError):
            crop_border(ImagePlane(np.zeros((6, 6))), 3)


class TestExtractPatches:
    def test_exact_fit_yields_one(self):
        plane = ImagePlane(np.random.default_rng(8).random((41, 41)))
        assert len(extract_patches(plane, plane)) == 1

    def test_two_columns(self):
        plane = ImagePlane(np.random.default_rng(9).random((41, 62)))
        assert len(extract_patches(plane, plane)) == 2

    def test_undersized_warns_and_skips(self):
        plane = ImagePlane(np.zeros((40, 40)))
        with pytest.warns(UserWarning):
            assert extract_patches(plane, plane) == []

    @given(st.integers(41, 120), st.integers(41, 120))
    @settings(deadline=None, max_examples=20)
    def test_count_formula(self, w, h):
        plane = ImagePlane(np.zeros((h, w)))
        pairs = extract_patches(plane, plane, size=41, stride=21)
        expected = ((w - 41) // 21 + 1) * ((h - 41) // 21 + 1)
        assert len(pairs) == expected

    def test_pairs_are_colocated(self):
        rng = np.random.default_rng(10)
        a = ImagePlane(rng.random((62, 83)))
        b = ImagePlane(rng.random((62, 83)))
        pairs = extract_patches(a, b)
        k = 0
        for top in range(0, 62 - 41 + 1, 21):
            for left in range(0, 83 - 41 + 1, 21):
                pa, pb = pairs[k]
                np.testing.assert_array_equal(pa, a.data[top : top + 41, left : left + 41])
                np.testing.assert_array_equal(pb, b.data[top : top + 41, left : left + 41])
                k += 1


class TestMakeEvalPair:
    def test_constant_image_survives(self):
        pair = make_eval_pair(ImagePlane(np.full((24, 24), 0.37)), scale=2)
        np.testing.assert_allclose(pair.input.data, pair.ground_truth.data, atol=1e-9)

    def test_dims_match_and_divisible(self):
        pair = make_eval_pair(ImagePlane(np.random.default_rng(11).random((37, 50))), scale=3)
        assert pair.input.data.shape == pair.ground_truth.data.shape == (36, 48)

    def test_idempotent_dimensions(self):
        rng = np.random.default_rng(12)
        pair = make_eval_pair(ImagePlane(rng.random((30, 31))), scale=2)
        again = make_eval_pair(pair.ground_truth, scale=2)
        assert again.ground_truth.data.shape == pair.ground_truth.data.shape

    def test_smooth_beats_noise_on_roundtrip(self):
        yy, xx = np.mgrid[0:32, 0:32] / 32.0
        smooth = 0.25 + 0.5 * xx * yy  # low-order polynomial
        noise = np.random.default_rng(13).random((32, 32))
        err = lambda img: np.abs(make_eval_pair(ImagePlane(img), 2).input.data - img).mean()
        assert err(smooth) < err(noise)

    def test_rejects_bad_scale(self):
        with pytest.raises(ValueError):
            make_eval_pair(ImagePlane(np.zeros((16, 16))), scale=5)


class TestPngIo:
    def test_quantize_convention(self):
        values = np.array([[-0.2, 0.0, 0.5, 1.0, 1.4]])
        np.testing.assert_array_equal(quantize_u8(values), [[0, 0, 128, 255, 255]])

    def test_gray_roundtrip(self, tmp_path):
        rng = np.random.default_rng(14)
        plane = ImagePlane(rng.integers(0, 256, size=(9, 13)).astype(np.float64) / 255.0)
        path = tmp_path / "gray.png"
        write_png(path, plane)
        loaded = read_planes(path)
        assert len(loaded) == 1
        np.testing.assert_allclose(loaded[0].data, plane.data, atol=1e-12)

    def test_rgb_roundtrip_and_luminance(self, tmp_path):
        rng = np.random.default_rng(15)
        planes = [ImagePlane(rng.integers(0, 256, size=(6, 7)) / 255.0) for _ in range(3)]
        path = tmp_path / "color.png"
        write_png(path, planes)
        loaded = read_planes(path)
        assert len(loaded) == 3
        luma = load_luminance(path)
        np.testing.assert_allclose(luma.data, to_luminance(*planes).data, atol=1e-12)

    def test_unsupported_suffix(self, tmp_path):
        path = tmp_path / "image.tiff"
        path.write_bytes(b"not an image")
        with pytest.raises(DataError):
            read_planes(path)

    def test_undecodable_file(self, tmp_path):
        path = tmp_path / "image.png"
        path.write_bytes(b"definitely not a png")
        with pytest.raises(DataError):
            read_planes(path)
