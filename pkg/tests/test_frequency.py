import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from i2ivuln.data import synthetic_patch
from i2ivuln.frequency import (
    JPEG_LUMA_TABLE,
    FrequencyMask,
    apply_mask,
    dct2,
    dct_matrix,
    idct2,
    jpeg_like,
    jpeg_quant_table,
)
from i2ivuln.metrics import psnr
from i2ivuln.tensor import ShapeError, make_rng


def test_dct_matches_scipy():
    fft = pytest.importorskip("scipy.fft")
    x = make_rng(0).standard_normal((12, 9, 2))
    ref = fft.dctn(x, type=2, norm="ortho", axes=(0, 1))
    np.testing.assert_allclose(dct2(x), ref, atol=1e-12)
    np.testing.assert_allclose(idct2(ref), fft.idctn(ref, type=2, norm="ortho", axes=(0, 1)), atol=1e-12)


def test_dct_matrix_frozen_entries():
    d = dct_matrix(4)
    np.testing.assert_allclose(d[0], 0.5)
    np.testing.assert_allclose(d[1], [0.6532814824381883, 0.2705980500730985, -0.2705980500730985, -0.6532814824381883])
    np.testing.assert_allclose(d @ d.T, np.eye(4), atol=1e-15)


def test_constant_image_dc_only():
    c = dct2(np.full((6, 10, 1), 7.0))
    assert c[0, 0, 0] == pytest.approx(7.0 * np.sqrt(60))
    c[0, 0, 0] = 0.0
    assert np.max(np.abs(c)) < 1e-12


def test_inverse_pair_48():
    x = make_rng(1).uniform(0, 255, (48, 48, 1))
    assert np.max(np.abs(idct2(dct2(x)) - x)) < 1e-9


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 96), st.integers(1, 96), st.integers(0, 2 ** 32))
def test_inverse_and_parseval(h, w, seed):
    x = make_rng(seed).uniform(-255, 255, (h, w, 1))
    c = dct2(x)
    assert np.max(np.abs(idct2(c) - x)) < 1e-9
    assert abs(np.sum(c ** 2) - np.sum(x ** 2)) <= 1e-9 * np.sum(x ** 2)


def test_accepts_2d():
    x = make_rng(2).standard_normal((5, 4))
    assert dct2(x).shape == (5, 4, 1)


def test_mask_convention():
    m = FrequencyMask(0.25, "low", 8, 12).array()[:, :, 0]
    assert m[:2, :3].all() and m.sum() == 6
    h = FrequencyMask(0.25, "high", 8, 12).array()[:, :, 0]
    assert h[6:, 9:].all() and h.sum() == 6
    # r = 1/W keeps exactly the first row and column entry
    one = FrequencyMask(1 / 8, "low", 8, 8).array()[:, :, 0]
    assert one[0, 0] == 1 and one.sum() == 1


def test_full_pass_mask_is_identity():
    d = make_rng(3).standard_normal((16, 16, 1))
    np.testing.assert_allclose(apply_mask(d, FrequencyMask(1.0, "low", 16, 16)), d, atol=1e-9)
    np.testing.assert_allclose(apply_mask(d, FrequencyMask(1.0, "high", 16, 16)), d, atol=1e-9)


def test_zero_ratio_removes_everything():
    d = make_rng(4).standard_normal((8, 8, 1))
    assert np.max(np.abs(apply_mask(d, FrequencyMask(0.0, "low", 8, 8)))) == 0.0


@pytest.mark.parametrize("band", ["low", "high"])
def test_masked_output_is_band_limited(band):
    d = make_rng(5).standard_normal((32, 32, 1))
    mask = FrequencyMask(0.25, band, 32, 32)
    out = dct2(apply_mask(d, mask))
    assert np.max(np.abs(out[mask.array() == 0])) < 1e-9


def test_mask_idempotent():
    d = make_rng(6).standard_normal((20, 24, 1))
    mask = FrequencyMask(3 / 8, "high", 20, 24)
    once = apply_mask(d, mask)
    np.testing.assert_allclose(apply_mask(once, mask), once, atol=1e-9)


@pytest.mark.parametrize("n", [8, 9, 16, 32])
def test_eighth_bands_disjoint(n):
    lo = FrequencyMask(1 / 8, "low", n, n).array()
    hi = FrequencyMask(1 / 8, "high", n, n).array()
    assert not np.any(lo * hi)


def test_half_bands_touch_without_overlap_on_even_dims():
    lo = FrequencyMask(0.5, "low", 16, 16).array()
    hi = FrequencyMask(0.5, "high", 16, 16).array()
    assert not np.any(lo * hi)


def test_mask_rejects_bad_args():
    with pytest.raises(ValueError):
        FrequencyMask(1.5, "low", 4, 4)
    with pytest.raises(ValueError):
        FrequencyMask(0.5, "mid", 4, 4)
    with pytest.raises(ShapeError):
        apply_mask(np.zeros((4, 4, 1)), FrequencyMask(0.5, "low", 4, 5))


def test_quant_table_libjpeg_scaling():
    np.testing.assert_array_equal(jpeg_quant_table(50), JPEG_LUMA_TABLE)
    assert jpeg_quant_table(100).max() == 1.0
    # quality 75 -> scale 50: floor((16*50 + 50)/100) = 8
    assert jpeg_quant_table(75)[0, 0] == 8.0
    assert jpeg_quant_table(10)[0, 0] == 80.0
    with pytest.raises(ValueError):
        jpeg_quant_table(0)
    with pytest.raises(ValueError):
        jpeg_like(np.zeros((8, 8, 1)), 101)


def test_jpeg_q100_smooth_gradient():
    yy, xx = np.mgrid[0:40, 0:40]
    x = (60 + 2.0 * yy + 1.5 * xx)[:, :, None]
    assert psnr(x, jpeg_like(x, 100)) > 45


def test_jpeg_constant_image():
    x = np.full((13, 21, 1), 93.0)
    assert np.max(np.abs(jpeg_like(x, 30) - x)) <= 1


def test_jpeg_quality_monotone_on_texture():
    x = synthetic_patch(make_rng(7), 48)
    assert psnr(x, jpeg_like(x, 75)) > psnr(x, jpeg_like(x, 10))


def test_jpeg_near_idempotent():
    x = synthetic_patch(make_rng(8), 48)
    once = jpeg_like(x, 75)
    assert abs(psnr(x, once) - psnr(x, jpeg_like(once, 75))) < 1.0


def test_jpeg_output_range_and_shape():
    x = make_rng(9).uniform(0, 255, (11, 19, 1))
    out = jpeg_like(x, 50)
    assert out.shape == x.shape and out.min() >= 0 and out.max() <= 255
    assert np.array_equal(out, np.round(out))


@pytest.mark.parametrize("quality", [10, 50, 75, 95])
def test_jpeg_agrees_with_libjpeg(quality):
    # Pillow's decoder uses integer DCT approximations, so pixels may differ by a few levels
    image = pytest.importorskip("PIL.Image")
    x = synthetic_patch(make_rng(quality), 48)
    buf = io.BytesIO()
    image.fromarray(x[:, :, 0].astype(np.uint8), "L").save(buf, "JPEG", quality=quality)
    ref = np.asarray(image.open(io.BytesIO(buf.getvalue())), dtype=np.float64)[:, :, None]
    ours = jpeg_like(x, quality)
    assert np.max(np.abs(ours - ref)) <= 4
    # at high quality the integer-DCT rounding is a larger share of the error
    assert abs(psnr(x, ours) - psnr(x, ref)) < 0.25
