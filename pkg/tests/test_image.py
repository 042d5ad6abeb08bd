"""Image loading, resize, CLAHE and ear-crop behavior."""

import numpy as np
import pytest

from fuseid.image import (
    EarLandmarks,
    ImageError,
    adaptive_hist_eq,
    crop_ear,
    load_image,
    load_landmarks,
    load_pgm,
    resize,
    write_landmarks,
    write_pgm,
)


def _write(tmp_path, name, data: bytes):
    path = tmp_path / name
    path.write_bytes(data)
    return path


class TestPgm:
    def test_decode_3x2(self, tmp_path):
        path = _write(tmp_path, "a.pgm", b"P5\n3 2\n255\n" + bytes([0, 1, 2, 3, 4, 5]))
        img = load_pgm(path)
        assert img.shape == (2, 3)
        assert img.tolist() == [[0, 1, 2], [3, 4, 5]]

    def test_decode_1x1(self, tmp_path):
        path = _write(tmp_path, "b.pgm", b"P5\n1 1\n255\n" + bytes([255]))
        img = load_pgm(path)
        assert img.shape == (1, 1)
        assert img[0, 0] == 255

    def test_header_comment(self, tmp_path):
        path = _write(tmp_path, "c.pgm", b"P5\n# made up\n2 1\n255\n" + bytes([7, 9]))
        assert load_pgm(path).tolist() == [[7, 9]]

    def test_truncated_header(self, tmp_path):
        path = _write(tmp_path, "d.pgm", b"P5\n3 ")
        with pytest.raises(ImageError, match="unreadable"):
            load_pgm(path)

    def test_truncated_raster(self, tmp_path):
        path = _write(tmp_path, "e.pgm", b"P5\n3 2\n255\n" + bytes([0, 1, 2]))
        with pytest.raises(ImageError, match="truncated"):
            load_pgm(path)

    def test_wrong_maxval(self, tmp_path):
        path = _write(tmp_path, "f.pgm", b"P5\n1 1\n65535\n" + bytes([0, 0]))
        with pytest.raises(ImageError, match="maxval"):
            load_pgm(path)

    def test_roundtrip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(7)
        img = rng.integers(0, 256, size=(13, 31), dtype=np.uint8)
        path = tmp_path / "rt.pgm"
        write_pgm(img, path)
        assert np.array_equal(load_pgm(path), img)
        assert np.array_equal(load_image(path), img)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ImageError, match="unreadable"):
            load_image(tmp_path / "nope.pgm")


class TestPngLoading:
    def test_grayscale_png(self, tmp_path):
        from PIL import Image

        arr = np.arange(64, dtype=np.uint8).reshape(8, 8)
        path = tmp_path / "g.png"
        Image.fromarray(arr, mode="L").save(path)
        assert np.array_equal(load_image(path), arr)

    def test_rgb_png_rec601(self, tmp_path):
        from PIL import Image

        rgb = np.zeros((2, 2, 3), dtype=np.uint8)
        rgb[0, 0] = (255, 0, 0)
        rgb[0, 1] = (0, 255, 0)
        rgb[1, 0] = (0, 0, 255)
        rgb[1, 1] = (10, 20, 30)
        path = tmp_path / "c.png"
        Image.fromarray(rgb, mode="RGB").save(path)
        img = load_image(path)
        expect = np.rint(
            0.299 * rgb[..., 0].astype(float)
            + 0.587 * rgb[..., 1]
            + 0.114 * rgb[..., 2]
        ).astype(np.uint8)
        assert np.array_equal(img, expect)


class TestResize:
    def test_downscale_dimensions(self):
        img = np.random.default_rng(0).integers(0, 256, size=(280, 400), dtype=np.uint8)
        out = resize(img, 200, 140)
        assert out.shape == (140, 200)

    def test_identity_bit_exact(self):
        img = np.random.default_rng(1).integers(0, 256, size=(200, 200), dtype=np.uint8)
        assert np.array_equal(resize(img, 200, 200), img)

    def test_aligned_corner_bilinear(self):
        # 2x1 [0, 200] -> 3x1 samples source at x = 0, 0.5, 1
        img = np.array([[0, 200]], dtype=np.uint8)
        assert resize(img, 3, 1).tolist() == [[0, 100, 200]]

    def test_zero_target_rejected(self):
        img = np.zeros((4, 4), dtype=np.uint8)
        with pytest.raises(ImageError):
            resize(img, 0, 4)

    def test_identity_property_random_sizes(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            h = int(rng.integers(1, 40))
            w = int(rng.integers(1, 40))
            img = rng.integers(0, 256, size=(h, w), dtype=np.uint8)
            assert np.array_equal(resize(img, w, h), img)


def _global_hist_eq_oracle(img: np.ndarray) -> np.ndarray:
    """Plain anchored histogram equalization, written independently."""
    hist = [0] * 256
    for v in img.ravel():
        hist[int(v)] += 1
    cdf = []
    total = 0
    for count in hist:
        total += count
        cdf.append(total)
    occupied = [v for v in range(256) if hist[v] > 0]
    anchor = cdf[occupied[0]]
    n = img.size
    out = np.empty_like(img)
    for v in range(256):
        if n == anchor:
            out_v = v
        else:
            out_v = round(255.0 * max(cdf[v] - anchor, 0) / (n - anchor))
        out[img == v] = out_v
    return out


class TestClahe:
    def test_constant_stays_constant(self):
        img = np.full((64, 64), 128, dtype=np.uint8)
        out = adaptive_hist_eq(img, (4, 4), 0.01)
        assert np.array_equal(out, img)

    def test_shape_preserved(self):
        img = np.random.default_rng(3).integers(0, 256, size=(96, 80), dtype=np.uint8)
        assert adaptive_hist_eq(img, (8, 8), 0.01).shape == img.shape

    def test_narrow_range_expands(self):
        rng = np.random.default_rng(4)
        img = rng.integers(100, 141, size=(64, 64), dtype=np.uint8)
        out = adaptive_hist_eq(img, (4, 4), 0.01)
        assert out.min() <= 100
        assert out.max() >= 140

    def test_single_tile_matches_plain_equalization_oracle(self):
        rng = np.random.default_rng(5)
        img = rng.integers(90, 171, size=(32, 32), dtype=np.uint8)
        out = adaptive_hist_eq(img, (1, 1), 1.0)  # no clipping, one tile
        assert np.array_equal(out, _global_hist_eq_oracle(img))

    def test_range_never_shrinks(self):
        rng = np.random.default_rng(6)
        for _ in range(20):
            lo = int(rng.integers(0, 200))
            hi = int(rng.integers(lo + 1, 256))
            img = rng.integers(lo, hi + 1, size=(64, 64), dtype=np.uint8)
            out = adaptive_hist_eq(img, (4, 4), float(rng.uniform(0.005, 1.0)))
            in_range = int(img.max()) - int(img.min())
            out_range = int(out.max()) - int(out.min())
            assert out_range >= in_range

    def test_degenerate_tile_grid(self):
        img = np.zeros((32, 32), dtype=np.uint8)
        with pytest.raises(ImageError, match="tile grid"):
            adaptive_hist_eq(img, (8, 8), 0.01)  # 4 px tiles

    def test_bad_clip_limit(self):
        img = np.zeros((64, 64), dtype=np.uint8)
        with pytest.raises(ImageError):
            adaptive_hist_eq(img, (4, 4), 0.0)


class TestCropEar:
    def test_exact_bounding_box(self):
        img = np.arange(100 * 100, dtype=np.int64).astype(np.uint8).reshape(100, 100)
        out = crop_ear(img, EarLandmarks((10, 10), (90, 90)), margin=0.0)
        assert out.shape == (81, 81)
        assert np.array_equal(out, img[10:91, 10:91])

    def test_corner_landmarks_clamped(self):
        img = np.zeros((100, 100), dtype=np.uint8)
        out = crop_ear(img, EarLandmarks((0, 0), (99, 99)), margin=0.5)
        assert out.shape == (100, 100)

    def test_landmark_outside_rejected(self):
        img = np.zeros((50, 50), dtype=np.uint8)
        with pytest.raises(ImageError, match="outside"):
            crop_ear(img, EarLandmarks((10, 10), (50, 10)), margin=0.0)

    def test_identical_landmarks_rejected(self):
        img = np.zeros((50, 50), dtype=np.uint8)
        with pytest.raises(ImageError, match="distinct"):
            crop_ear(img, EarLandmarks((10, 10), (10, 10)), margin=0.0)

    def test_crop_contained_property(self):
        rng = np.random.default_rng(8)
        img = rng.integers(0, 256, size=(60, 80), dtype=np.uint8)
        for _ in range(25):
            x1, x2 = sorted(rng.integers(0, 80, size=2).tolist())
            y1, y2 = sorted(rng.integers(0, 60, size=2).tolist())
            if (x1, y1) == (x2, y2):
                continue
            out = crop_ear(img, EarLandmarks((x1, y1), (x2, y2)), margin=float(rng.uniform(0, 1)))
            assert out.shape[0] <= 60 and out.shape[1] <= 80
            assert out.size >= 1

    def test_landmark_sidecar_roundtrip(self, tmp_path):
        lm = EarLandmarks((12, 34), (56, 78))
        path = tmp_path / "lm.txt"
        write_landmarks(lm, path)
        assert path.read_text() == "12 34 56 78\n"
        assert load_landmarks(path) == lm

    def test_landmark_sidecar_malformed(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("1 2 3\n")
        with pytest.raises(ImageError):
            load_landmarks(path)
