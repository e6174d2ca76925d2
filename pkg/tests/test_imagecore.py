import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from vidstyle.imagecore import (ImageFormatError, blend, frame_filename, gaussian_init,
                                make_rng, read_pgm, read_ppm, write_pgm, write_ppm)


def test_read_ppm_scales_bytes(tmp_path):
    path = tmp_path / "a.ppm"
    path.write_bytes(b"P6\n2 1\n255\n" + bytes([255, 0, 0, 0, 0, 0]))
    img = read_ppm(path)
    assert img.shape == (1, 2, 3)
    np.testing.assert_array_equal(img.ravel(), [1, 0, 0, 0, 0, 0])


def test_read_ppm_with_comment(tmp_path):
    path = tmp_path / "c.ppm"
    path.write_bytes(b"P6\n# made by hand\n1 1\n255\n" + bytes([0, 51, 255]))
    np.testing.assert_allclose(read_ppm(path).ravel(), [0, 0.2, 1])


def test_read_ppm_rejects_pgm(tmp_path):
    path = tmp_path / "g.ppm"
    path.write_bytes(b"P5\n1 1\n255\n\x00")
    with pytest.raises(ImageFormatError, match="unsupported format"):
        read_ppm(path)


def test_read_ppm_truncated_payload_reports_offset(tmp_path):
    path = tmp_path / "t.ppm"
    path.write_bytes(b"P6\n2 2\n255\n" + bytes(5))
    with pytest.raises(ImageFormatError, match="byte offset 11"):
        read_ppm(path)


def test_read_ppm_rejects_16bit(tmp_path):
    path = tmp_path / "w.ppm"
    path.write_bytes(b"P6\n1 1\n65535\n" + bytes(6))
    with pytest.raises(ImageFormatError, match="maxval 65535 at byte offset 7"):
        read_ppm(path)


def test_read_ppm_malformed_header(tmp_path):
    path = tmp_path / "m.ppm"
    path.write_bytes(b"P6\n2 x\n255\n")
    with pytest.raises(ImageFormatError, match="byte offset 5"):
        read_ppm(path)


def test_write_zero_image(tmp_path):
    path = tmp_path / "z.ppm"
    write_ppm(np.zeros((4, 4, 3)), path)
    data = path.read_bytes()
    header = b"P6\n4 4\n255\n"
    assert data.startswith(header)
    assert data[len(header):] == bytes(48)


def test_write_quantizes_and_clamps(tmp_path):
    path = tmp_path / "q.ppm"
    write_ppm(np.array([[[0.5, 1.2, -0.3]]]), path)
    assert path.read_bytes()[-3:] == bytes([128, 255, 0])


def test_write_rejects_non_rgb(tmp_path):
    with pytest.raises(ValueError):
        write_ppm(np.zeros((2, 2, 1)), tmp_path / "x.ppm")


@settings(max_examples=30, deadline=None)
@given(hnp.arrays(np.uint8, hnp.array_shapes(min_dims=3, max_dims=3, max_side=6)
                  .map(lambda s: (s[0], s[1], 3))))
def test_ppm_round_trip(tmp_path_factory, raw):
    img = raw.astype(np.float64) / 255.0
    path = tmp_path_factory.mktemp("rt") / "f.ppm"
    write_ppm(img, path)
    np.testing.assert_array_equal(read_ppm(path), img)


def test_pgm_round_trip(tmp_path):
    mask = np.array([[0.0, 1.0], [1.0, 0.0]])
    write_pgm(mask, tmp_path / "m.pgm")
    assert (tmp_path / "m.pgm").read_bytes()[-4:] == bytes([0, 255, 255, 0])
    np.testing.assert_array_equal(read_pgm(tmp_path / "m.pgm"), mask)


def test_frame_filename():
    assert frame_filename(1) == "frame_0001.ppm"
    assert frame_filename(12, "out", "pgm") == "out_0012.pgm"


def test_gaussian_init_zero_stddev():
    img = gaussian_init(5, 4, 3, make_rng(0), mean=0.5, stddev=0.0)
    assert img.shape == (4, 5, 3)
    assert np.all(img == 0.5)


def test_gaussian_init_deterministic():
    a = gaussian_init(8, 8, 3, make_rng(7))
    b = gaussian_init(8, 8, 3, make_rng(7))
    assert a.tobytes() == b.tobytes()
    assert not np.array_equal(a, gaussian_init(8, 8, 3, make_rng(8)))


def test_gaussian_init_sample_mean():
    img = gaussian_init(64, 64, 3, make_rng(3), mean=0.5, stddev=0.1)
    assert abs(img.mean() - 0.5) < 0.01
    assert img.min() >= 0 and img.max() <= 1


def test_gaussian_init_rejects_negative_stddev():
    with pytest.raises(ValueError):
        gaussian_init(2, 2, 3, make_rng(0), stddev=-1)


def test_blend_degenerate_cases(rng):
    a, b = rng.random((6, 5, 3)), rng.random((6, 5, 3))
    np.testing.assert_array_equal(blend(a, b, np.ones((6, 5)), 1.0), a)
    for d in (0.0, 0.3, 1.0):
        np.testing.assert_array_equal(blend(a, b, np.zeros((6, 5)), d), b)


def test_blend_half():
    out = blend(np.ones((3, 3, 3)), np.zeros((3, 3, 3)), np.ones((3, 3)), 0.5)
    np.testing.assert_array_equal(out, 0.5)


def test_blend_shape_mismatch():
    with pytest.raises(ValueError):
        blend(np.zeros((2, 2, 3)), np.zeros((2, 3, 3)), np.ones((2, 2)), 0.5)
    with pytest.raises(ValueError):
        blend(np.zeros((2, 2, 3)), np.zeros((2, 2, 3)), np.ones((3, 2)), 0.5)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0, 1))
def test_blend_of_image_with_itself(seed, delta):
    r = np.random.default_rng(seed)
    a = r.random((4, 4, 3))
    m = r.random((4, 4))
    out = blend(a, a, m, delta)
    np.testing.assert_allclose(out, a, atol=1e-15)
    assert out.min() >= 0 and out.max() <= 1 + 1e-15
