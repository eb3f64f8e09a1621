import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from salience_align.heatmap import (DimensionMismatchError, Heatmap, HeatmapValueError,
                                    MalformedHeaderError, TruncatedDataError, UnsupportedMagicError,
                                    UnsupportedMaxvalError, clamp_negative, clip, load_grayscale,
                                    load_image, normalize_max, quantize, resize_bilinear,
                                    save_grayscale, save_image, subtract)

from conftest import write_pnm


def hm(values):
    return Heatmap(np.atleast_2d(np.asarray(values, dtype=float)))


def test_load_p5_bytes(tmp_path):
    f = write_pnm(tmp_path / "a.pgm", b"P5", 2, 2, bytes([0, 255, 128, 64]))
    m = load_grayscale(f)
    assert m.shape == (2, 2)
    assert m.flat().tolist() == [0, 255, 128, 64]


def test_load_rejects_color_as_grayscale(tmp_path):
    f = write_pnm(tmp_path / "c.ppm", b"P6", 1, 1, bytes([1, 2, 3]))
    with pytest.raises(UnsupportedMagicError, match="unsupported magic"):
        load_grayscale(f)
    assert load_image(f).tolist() == [[[1, 2, 3]]]


def test_header_with_comments_and_odd_whitespace(tmp_path):
    f = tmp_path / "c.pgm"
    f.write_bytes(b"P5 # comment\n2\t1 # more\n255\n" + bytes([9, 8]))
    assert load_grayscale(f).flat().tolist() == [9, 8]


@pytest.mark.parametrize("blob, err", [
    (b"P5\n2 2\n255\n" + bytes(3), TruncatedDataError),
    (b"P5\n2 2\n65535\n" + bytes(8), UnsupportedMaxvalError),
    (b"P5\n2\n", MalformedHeaderError),
    (b"P2\n1 1\n255\n0", UnsupportedMagicError),
    (b"P5\n0 2\n255\n", MalformedHeaderError),
])
def test_malformed_files(tmp_path, blob, err):
    f = tmp_path / "bad.pgm"
    f.write_bytes(blob)
    with pytest.raises(err):
        load_grayscale(f)


def test_save_single_pixel(tmp_path):
    save_grayscale(hm([[255]]), tmp_path / "a.pgm")
    assert (tmp_path / "a.pgm").read_bytes() == b"P5\n1 1\n255\n\xff"


def test_rounding_half_up(tmp_path):
    save_grayscale(hm([[254.5, 0.49, 0.5, 127.5]]), tmp_path / "a.pgm")
    assert list((tmp_path / "a.pgm").read_bytes()[-4:]) == [255, 0, 1, 128]


@pytest.mark.parametrize("v", [300.0, -0.6, np.nan])
def test_save_out_of_range(tmp_path, v):
    with pytest.raises(HeatmapValueError, match="value out of range"):
        save_grayscale(hm([[v]]), tmp_path / "a.pgm")
    assert not (tmp_path / "a.pgm").exists()


def test_quantize_matches_decimal_round_half_up():
    from decimal import ROUND_HALF_UP, Decimal

    vals = np.arange(0, 255.01, 0.25)
    expected = [int(Decimal(str(v)).quantize(Decimal(1), rounding=ROUND_HALF_UP)) for v in vals]
    assert quantize(vals).tolist() == expected


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 9), st.integers(1, 9), st.data())
def test_p5_round_trip_is_byte_identical(tmp_path_factory, w, h, data):
    payload = data.draw(st.binary(min_size=w * h, max_size=w * h))
    d = tmp_path_factory.mktemp("rt")
    src = write_pnm(d / "in.pgm", b"P5", w, h, payload)
    save_grayscale(load_grayscale(src), d / "out.pgm")
    assert (d / "out.pgm").read_bytes() == src.read_bytes()


def test_rgb_round_trip(tmp_path):
    img = np.random.default_rng(0).integers(0, 256, (3, 5, 3)).astype(float)
    save_image(img, tmp_path / "x.ppm")
    np.testing.assert_array_equal(load_image(tmp_path / "x.ppm"), img)


def test_heatmap_is_immutable():
    m = hm([[1.0, 2.0]])
    with pytest.raises(ValueError):
        m.values[0, 0] = 5


def test_heatmap_rejects_bad_input():
    with pytest.raises(ValueError, match="non-empty"):
        Heatmap(np.zeros((0, 3)))
    with pytest.raises(ValueError, match="expected 4 values"):
        Heatmap.from_flat(2, 2, [1, 2, 3])


# resize ---------------------------------------------------------------

def _bilinear_oracle(src, new_w, new_h):
    """Scalar loop; pixel centres at (i + 0.5) * n_in / n_out - 0.5, clamped."""
    h, w = src.shape
    out = np.empty((new_h, new_w))
    for i in range(new_h):
        for j in range(new_w):
            y = min(max((i + 0.5) * h / new_h - 0.5, 0.0), h - 1.0)
            x = min(max((j + 0.5) * w / new_w - 0.5, 0.0), w - 1.0)
            y0, x0 = int(np.floor(y)), int(np.floor(x))
            y1, x1 = min(y0 + 1, h - 1), min(x0 + 1, w - 1)
            fy, fx = y - y0, x - x0
            out[i, j] = ((1 - fy) * ((1 - fx) * src[y0, x0] + fx * src[y0, x1])
                         + fy * ((1 - fx) * src[y1, x0] + fx * src[y1, x1]))
    return out


def test_resize_2x1_to_4x1():
    out = resize_bilinear(hm([[0, 255]]), 4, 1)
    # centres map to x = -0.25, 0.25, 0.75, 1.25 -> clamped 0, 0.25, 0.75, 1
    np.testing.assert_allclose(out.flat(), [0, 63.75, 191.25, 255])
    np.testing.assert_allclose(out.values, _bilinear_oracle(np.array([[0.0, 255.0]]), 4, 1))


def test_resize_matches_scalar_oracle():
    rng = np.random.default_rng(3)
    for _ in range(20):
        src = rng.uniform(0, 255, (int(rng.integers(1, 12)), int(rng.integers(1, 12))))
        nw, nh = int(rng.integers(1, 20)), int(rng.integers(1, 20))
        np.testing.assert_allclose(resize_bilinear(Heatmap(src), nw, nh).values,
                                   _bilinear_oracle(src, nw, nh), atol=1e-9)


def test_resize_identity_and_constant():
    m = hm(np.random.default_rng(0).uniform(0, 255, (5, 7)))
    assert np.array_equal(resize_bilinear(m, 7, 5).values, m.values)
    c = resize_bilinear(hm(np.full((3, 4), 42.0)), 11, 2)
    np.testing.assert_allclose(c.values, 42.0)


def test_resize_rejects_nonpositive():
    with pytest.raises(ValueError, match="positive"):
        resize_bilinear(hm([[1.0]]), 0, 3)


# elementwise ------------------------------------------------------------

def test_normalize_max():
    np.testing.assert_allclose(normalize_max(hm([[0, 50, 100]])).flat(), [0, 127.5, 255])
    assert normalize_max(hm([[0, 0]])).flat().tolist() == [0, 0]
    m = hm([[10, 255, 3]])
    assert normalize_max(m).flat().tolist() == m.flat().tolist()


def test_clip():
    assert clip(hm([[0, 50, 200]]), 0, 100).flat().tolist() == [0, 50, 100]
    m = hm([[10, 20]])
    assert clip(m, 0, 100).flat().tolist() == [10, 20]
    with pytest.raises(ValueError, match="lo < hi"):
        clip(m, 5, 5)


def test_subtract():
    assert subtract(hm([[10, 20]]), hm([[5, 30]])).flat().tolist() == [5, -10]
    a = hm([[1, 2, 3]])
    assert subtract(a, a).flat().tolist() == [0, 0, 0]
    assert subtract(a, Heatmap.zeros(3, 1)).flat().tolist() == a.flat().tolist()
    with pytest.raises(DimensionMismatchError):
        subtract(a, Heatmap.zeros(2, 1))
    assert clamp_negative(hm([[-3, 4]])).flat().tolist() == [0, 4]


finite = arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6)),
                elements=st.floats(-1e3, 1e3, allow_nan=False))


@given(finite)
def test_clip_idempotent_and_bounded(v):
    once = clip(Heatmap(v), 0, 100)
    assert np.array_equal(clip(once, 0, 100).values, once.values)
    assert once.values.min() >= 0 and once.values.max() <= 100


@given(finite)
def test_normalize_peak(v):
    m = Heatmap(np.abs(v))
    out = normalize_max(m)
    if m.values.max() > 0:
        assert out.values.max() == 255.0
        assert np.array_equal(normalize_max(out).values, out.values)


def test_normalize_subnormal_peak():
    v = np.array([[5e-324, 1e-320, 0.0]])
    with np.errstate(all="raise"):
        out = normalize_max(Heatmap(v)).values
    assert out[0, 1] == 255.0 and out[0, 2] == 0.0
    assert 0 < out[0, 0] < 1
