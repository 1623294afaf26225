import numpy as np
import pytest

from neurostage.imaging import (
    BinaryMask,
    GrayImage,
    PgmFormatError,
    flood_fill,
    gaussian_blur,
    gaussian_kernel1d,
    load_gray,
    multiply_contrast,
    resize_bilinear,
    save_gray,
    threshold,
)


def write(path, data):
    path.write_bytes(data)
    return str(path)


class TestPgm:
    def test_p5_decode(self, tmp_path):
        p = write(tmp_path / "a.pgm", b"P5\n2 2\n255\n" + bytes([0, 255, 10, 20]))
        img = load_gray(p)
        assert img == GrayImage.from_flat(2, 2, [0, 255, 10, 20])

    def test_p2_matches_p5(self, tmp_path):
        p2 = write(tmp_path / "a.pgm", b"P2\n2 2\n255\n0 255\n10 20\n")
        p5 = write(tmp_path / "b.pgm", b"P5\n2 2\n255\n" + bytes([0, 255, 10, 20]))
        assert load_gray(p2) == load_gray(p5)

    def test_comments_in_header(self, tmp_path):
        p = write(tmp_path / "a.pgm", b"P5\n# slice 12\n2 # width\n1\n255\n" + bytes([7, 8]))
        assert load_gray(p) == GrayImage.from_flat(2, 1, [7, 8])

    def test_network_input_size(self, tmp_path):
        img = GrayImage(np.zeros((248, 248), np.uint8))
        save_gray(img, tmp_path / "s.pgm")
        back = load_gray(tmp_path / "s.pgm")
        assert (back.width, back.height) == (248, 248)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_gray(tmp_path / "nope.pgm")

    @pytest.mark.parametrize(
        "data",
        [
            b"P6\n1 1\n255\n\x00",
            b"P5\n1 1\n",
            b"P5\nx y\n255\n\x00",
            b"P5\n1 1\n65535\n\x00\x00",
            b"P5\n2 2\n255\n\x00\x00",
            b"P2\n2 2\n255\n0 1 2\n",
        ],
    )
    def test_malformed(self, tmp_path, data):
        p = write(tmp_path / "bad.pgm", data)
        with pytest.raises(PgmFormatError):
            load_gray(p)

    def test_single_pixel_round_trip(self, tmp_path):
        img = GrayImage.from_flat(1, 1, [0])
        save_gray(img, tmp_path / "p.pgm")
        assert load_gray(tmp_path / "p.pgm") == img

    def test_round_trip_random_images(self, tmp_path, rng):
        for i in range(50):
            h, w = int(rng.integers(1, 40)), int(rng.integers(1, 40))
            img = GrayImage(rng.integers(0, 256, (h, w), dtype=np.uint8))
            save_gray(img, tmp_path / "r.pgm")
            assert load_gray(tmp_path / "r.pgm") == img


class TestGaussianBlur:
    @pytest.mark.parametrize("kernel,sigma", [(3, 1.0), (5, 1.0), (7, 0.4), (9, 3.0)])
    def test_constant_is_fixed_point(self, kernel, sigma):
        img = GrayImage(np.full((12, 9), 77, np.uint8))
        assert gaussian_blur(img, kernel, sigma) == img

    def test_kernel_size_one_is_identity(self, rng):
        img = GrayImage(rng.integers(0, 256, (8, 8), dtype=np.uint8))
        assert gaussian_blur(img, 1, 2.5) == img

    def test_impulse_matches_hand_kernel(self):
        # independent 3x3 kernel: exp(-(dx^2+dy^2)/2) normalized over taps
        px = np.zeros((5, 5), np.uint8)
        px[2, 2] = 255
        out = gaussian_blur(GrayImage(px), 3, 1.0)
        g = np.array([np.exp(-(d * d) / 2.0) for d in (-1, 0, 1)])
        k2d = np.outer(g, g)
        k2d /= k2d.sum()
        expected = np.floor(255.0 * k2d + 0.5).astype(int)
        assert np.array_equal(out.pixels[1:4, 1:4].astype(int), expected)
        assert out.pixels[0].sum() == 0

    def test_even_kernel_rejected(self):
        img = GrayImage(np.zeros((4, 4), np.uint8))
        with pytest.raises(ValueError):
            gaussian_blur(img, 4, 1.0)

    def test_kernel_normalized(self):
        taps = gaussian_kernel1d(7, 2.2)
        assert abs(taps.sum() - 1.0) < 1e-12


class TestThreshold:
    def test_all_zero_t0(self):
        mask = threshold(GrayImage(np.zeros((3, 3), np.uint8)), 0)
        assert mask.count() == 0

    def test_all_bright_t0(self):
        mask = threshold(GrayImage(np.full((3, 3), 255, np.uint8)), 0)
        assert mask.count() == 9

    def test_threshold_255_all_false(self, rng):
        img = GrayImage(rng.integers(0, 256, (6, 6), dtype=np.uint8))
        assert threshold(img, 255).count() == 0

    def test_matches_per_pixel_oracle(self, rng):
        for _ in range(20):
            img = GrayImage(rng.integers(0, 256, (10, 11), dtype=np.uint8))
            t = int(rng.integers(0, 256))
            mask = threshold(img, t)
            for r in range(10):
                for c in range(11):
                    assert mask.bits[r, c] == (img.pixels[r, c] > t)


class TestMultiplyContrast:
    def test_documented_factor(self):
        out = multiply_contrast(GrayImage(np.full((2, 2), 10, np.uint8)), 8)
        assert np.all(out.pixels == 80)

    def test_saturates(self):
        out = multiply_contrast(GrayImage(np.full((2, 2), 40, np.uint8)), 8)
        assert np.all(out.pixels == 255)

    def test_factor_one_identity(self, rng):
        img = GrayImage(rng.integers(0, 256, (5, 5), dtype=np.uint8))
        assert multiply_contrast(img, 1.0) == img

    def test_range_never_exceeded(self, rng):
        for factor in (0.25, 1.7, 8.0, 100.0):
            img = GrayImage(rng.integers(0, 256, (7, 7), dtype=np.uint8))
            out = multiply_contrast(img, factor)
            assert out.pixels.min() >= 0 and out.pixels.max() <= 255

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            multiply_contrast(GrayImage(np.zeros((1, 1), np.uint8)), 0)


class TestResize:
    def test_identity(self, rng):
        img = GrayImage(rng.integers(0, 256, (9, 7), dtype=np.uint8))
        assert resize_bilinear(img, 7, 9) == img

    def test_2x2_to_center_sample(self):
        img = GrayImage.from_flat(2, 2, [0, 255, 0, 255])
        out = resize_bilinear(img, 1, 1)
        # centre sample = mean of the four corners = 127.5, rounded half-up
        assert out.pixels[0, 0] == 128

    def test_to_network_size(self, rng):
        img = GrayImage(rng.integers(0, 256, (200, 180), dtype=np.uint8))
        out = resize_bilinear(img, 248, 248)
        assert (out.width, out.height) == (248, 248)

    def test_rejects_zero_dims(self):
        img = GrayImage(np.zeros((2, 2), np.uint8))
        with pytest.raises(ValueError):
            resize_bilinear(img, 0, 2)


def bfs_flood_oracle(mask, seeds, fill):
    """Independent reference: deque BFS per seed over the original bits."""
    from collections import deque

    bits = mask.bits.copy()
    reached = np.zeros_like(bits)
    for seed in seeds:
        target = mask.bits[seed]
        if target == fill:
            continue
        q = deque([seed])
        seen = {seed}
        while q:
            r, c = q.popleft()
            reached[r, c] = True
            for nr, nc in ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)):
                if 0 <= nr < mask.height and 0 <= nc < mask.width and (nr, nc) not in seen:
                    if mask.bits[nr, nc] == target:
                        seen.add((nr, nc))
                        q.append((nr, nc))
    bits[reached] = fill
    return BinaryMask(bits)


class TestFloodFill:
    def test_uniform_false_fills_everything(self):
        mask = BinaryMask(np.zeros((5, 5), bool))
        out = flood_fill(mask, [(0, 0)], True)
        assert out.count() == 25

    def test_checkerboard_isolates_single_pixel(self):
        bits = (np.indices((5, 5)).sum(axis=0) % 2).astype(bool)
        mask = BinaryMask(bits)
        out = flood_fill(mask, [(0, 0)], True)  # (0,0) is False, isolated
        assert out.bits[0, 0]
        assert out.count() == mask.count() + 1

    def test_out_of_bounds_seed(self):
        mask = BinaryMask(np.zeros((3, 3), bool))
        with pytest.raises(ValueError):
            flood_fill(mask, [(3, 0)], True)

    def test_idempotent(self, rng):
        for _ in range(25):
            mask = BinaryMask(rng.random((16, 16)) > 0.5)
            seeds = [(int(rng.integers(16)), int(rng.integers(16))) for _ in range(3)]
            fill = bool(rng.integers(2))
            once = flood_fill(mask, seeds, fill)
            twice = flood_fill(once, seeds, fill)
            assert once == twice

    def test_matches_bfs_oracle(self, rng):
        for _ in range(100):
            mask = BinaryMask(rng.random((32, 32)) > rng.uniform(0.3, 0.7))
            seeds = [(int(rng.integers(32)), int(rng.integers(32))) for _ in range(4)]
            fill = bool(rng.integers(2))
            assert flood_fill(mask, seeds, fill) == bfs_flood_oracle(mask, seeds, fill)

    def test_original_pixels_otherwise_unchanged(self, rng):
        mask = BinaryMask(rng.random((12, 12)) > 0.5)
        out = flood_fill(mask, [(6, 6)], True)
        # pixels that changed must all have become the fill value
        changed = mask.bits != out.bits
        assert np.all(out.bits[changed])


class TestGrayImageInvariants:
    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            GrayImage(np.array([[300]]))

    def test_rejects_wrong_length(self):
        with pytest.raises(ValueError):
            GrayImage.from_flat(2, 2, [1, 2, 3])

    def test_pixels_read_only(self):
        img = GrayImage(np.zeros((2, 2), np.uint8))
        with pytest.raises(ValueError):
            img.pixels[0, 0] = 1
