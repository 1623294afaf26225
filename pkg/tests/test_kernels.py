import numpy as np
import pytest

from neurostage._kernels import available_backends

BACKENDS = available_backends()
needs_compiled = pytest.mark.skipif(
    "compiled" not in BACKENDS, reason="compiled kernel core not built"
)


def naive_im2col(x, kh, kw, stride, pad):
    n, c, h, w = x.shape
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    cols = np.zeros((n, c * kh * kw, oh * ow), dtype=x.dtype)
    for i in range(n):
        for ci in range(c):
            for ky in range(kh):
                for kx in range(kw):
                    for oy in range(oh):
                        for ox in range(ow):
                            y, xx = oy * stride + ky - pad, ox * stride + kx - pad
                            if 0 <= y < h and 0 <= xx < w:
                                cols[i, (ci * kh + ky) * kw + kx, oy * ow + ox] = x[i, ci, y, xx]
    return cols


class TestFallbackCorrectness:
    def test_im2col_matches_naive(self, rng):
        mod = BACKENDS["python"]
        for stride, pad in ((1, 0), (1, 1), (2, 1), (2, 2)):
            x = rng.standard_normal((2, 3, 7, 8)).astype(np.float32)
            assert np.array_equal(mod.im2col(x, 3, 3, stride, pad), naive_im2col(x, 3, 3, stride, pad))

    def test_col2im_adjoint_of_im2col(self, rng):
        # <im2col(x), g> == <x, col2im(g)> since the ops are transposes
        mod = BACKENDS["python"]
        x = rng.standard_normal((2, 2, 6, 6))
        g = rng.standard_normal((2, 2 * 9, 36))
        cols = mod.im2col(x, 3, 3, 1, 1)
        back = mod.col2im(g, 2, 2, 6, 6, 3, 3, 1, 1)
        assert abs((cols * g).sum() - (x * back).sum()) < 1e-9

    def test_maxpool_matches_naive(self, rng):
        mod = BACKENDS["python"]
        x = rng.standard_normal((2, 3, 6, 8)).astype(np.float32)
        out, arg = mod.maxpool2_forward(x)
        for i in range(2):
            for c in range(3):
                for oy in range(3):
                    for ox in range(4):
                        win = x[i, c, 2 * oy : 2 * oy + 2, 2 * ox : 2 * ox + 2]
                        assert out[i, c, oy, ox] == win.max()

    def test_maxpool_tie_takes_first(self):
        mod = BACKENDS["python"]
        x = np.zeros((1, 1, 2, 2), np.float32)  # four-way tie
        out, arg = mod.maxpool2_forward(x)
        assert arg[0, 0, 0, 0] == 0

    def test_maxpool_backward_scatters(self, rng):
        mod = BACKENDS["python"]
        x = rng.standard_normal((1, 2, 4, 4)).astype(np.float32)
        out, arg = mod.maxpool2_forward(x)
        dout = rng.standard_normal(out.shape).astype(np.float32)
        dx = mod.maxpool2_backward(dout, arg)
        assert dx.shape == x.shape
        assert np.isclose(dx.sum(), dout.sum())


@needs_compiled
class TestBackendEquivalence:
    """The compiled core must reproduce the fallback bit for bit."""

    def test_im2col(self, rng):
        for dtype in (np.float32, np.float64):
            x = rng.standard_normal((3, 2, 9, 11)).astype(dtype)
            for stride, pad in ((1, 0), (1, 1), (2, 1), (3, 2)):
                a = BACKENDS["python"].im2col(x, 5, 5, stride, pad)
                b = BACKENDS["compiled"].im2col(x, 5, 5, stride, pad)
                assert a.dtype == b.dtype and np.array_equal(a, b)

    def test_col2im(self, rng):
        for dtype in (np.float32, np.float64):
            g = rng.standard_normal((2, 2 * 25, 49)).astype(dtype)
            a = BACKENDS["python"].col2im(g, 2, 2, 9, 9, 5, 5, 1, 1)
            b = BACKENDS["compiled"].col2im(np.ascontiguousarray(g), 2, 2, 9, 9, 5, 5, 1, 1)
            assert np.array_equal(a, b)

    def test_maxpool(self, rng):
        x = rng.standard_normal((2, 3, 12, 10)).astype(np.float32)
        ao, aa = BACKENDS["python"].maxpool2_forward(x)
        bo, ba = BACKENDS["compiled"].maxpool2_forward(x)
        assert np.array_equal(ao, bo) and np.array_equal(aa, ba)
        dout = rng.standard_normal(ao.shape).astype(np.float32)
        assert np.array_equal(
            BACKENDS["python"].maxpool2_backward(dout, aa),
            BACKENDS["compiled"].maxpool2_backward(dout, ba),
        )

    def test_flood_fill(self, rng):
        for _ in range(50):
            mask = (rng.random((40, 40)) > rng.uniform(0.3, 0.7)).astype(np.uint8)
            seeds_r = [int(rng.integers(40)) for _ in range(5)]
            seeds_c = [int(rng.integers(40)) for _ in range(5)]
            fill = int(rng.integers(2))
            a, b = mask.copy(), mask.copy()
            BACKENDS["python"].flood_fill(a, seeds_r, seeds_c, fill)
            BACKENDS["compiled"].flood_fill(b, seeds_r, seeds_c, fill)
            assert np.array_equal(a, b)
