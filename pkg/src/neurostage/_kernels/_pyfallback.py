"""Numpy implementations of the kernel API.

Accumulation orders are pinned so the compiled core can reproduce every
result bit-for-bit; see the per-function notes.
"""

import numpy as np


def flood_fill(work, rows, cols, fill):
    """4-connected flood fill on a binary uint8 raster, in place.

    Each seed fills the connected component sharing the seed's original
    value; seeds already at ``fill`` are no-ops.  Vectorised as frontier
    dilation over the frozen start-state region, which yields the same
    reached set as a pixel-by-pixel traversal.
    """
    fillable = work != fill
    frontier = np.zeros_like(fillable)
    seeded = False
    for r, c in zip(rows, cols):
        if fillable[r, c]:
            frontier[r, c] = True
            seeded = True
    if not seeded:
        return
    reached = np.zeros_like(fillable)
    while frontier.any():
        reached |= frontier
        nbr = np.zeros_like(fillable)
        nbr[1:, :] |= frontier[:-1, :]
        nbr[:-1, :] |= frontier[1:, :]
        nbr[:, 1:] |= frontier[:, :-1]
        nbr[:, :-1] |= frontier[:, 1:]
        frontier = nbr & fillable & ~reached
    work[reached] = fill


def im2col(x, kh, kw, stride, pad):
    """Unfold (N,C,H,W) into (N, C*kh*kw, out_h*out_w) patch columns.

    cols[n, (c*kh+ky)*kw+kx, oy*out_w+ox] = padded_x[n, c, oy*stride+ky, ox*stride+kx]
    """
    n, c, h, w = x.shape
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]
    return win.transpose(0, 1, 4, 5, 2, 3).reshape(n, c * kh * kw, oh * ow)


def col2im(cols, n, c, h, w, kh, kw, stride, pad):
    """Fold patch columns back onto an (N,C,H,W) grid, summing overlaps.

    Per output element the contributions arrive in ascending (ky, kx)
    order; the compiled core uses the same order.
    """
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    win = cols.reshape(n, c, kh, kw, oh, ow)
    for ky in range(kh):
        for kx in range(kw):
            xp[:, :, ky : ky + stride * oh : stride, kx : kx + stride * ow : stride] += win[
                :, :, ky, kx
            ]
    return xp[:, :, pad : pad + h, pad : pad + w].copy() if pad else xp


def maxpool2_forward(x):
    """2x2 stride-2 max pooling.

    Returns (out, arg) where arg holds the in-window index (row-major
    0..3) of the selected maximum; ties go to the first occurrence.
    """
    n, c, h, w = x.shape
    oh, ow = h // 2, w // 2
    win = x.reshape(n, c, oh, 2, ow, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, oh, ow, 4)
    arg = win.argmax(axis=4).astype(np.uint8)
    out = np.take_along_axis(win, arg[..., None].astype(np.intp), axis=4)[..., 0]
    return np.ascontiguousarray(out), arg


def maxpool2_backward(dout, arg):
    """Route pooled gradients back to the argmax positions."""
    n, c, oh, ow = dout.shape
    buf = np.zeros((n, c, oh, ow, 4), dtype=dout.dtype)
    np.put_along_axis(buf, arg[..., None].astype(np.intp), dout[..., None], axis=4)
    return buf.reshape(n, c, oh, ow, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, 2 * oh, 2 * ow)
