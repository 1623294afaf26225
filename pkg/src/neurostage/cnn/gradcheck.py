"""Finite-difference verification of every backward pass.

Runs layer fragments in double precision and compares analytic gradients
against central differences for every parameter and input element.
Dropout masks are frozen by reseeding the generator before each forward
pass, so the checked function is deterministic.
"""

from __future__ import annotations

import numpy as np

from .layers import softmax_rows


def _forward(layers, x, mask_seed):
    rng = np.random.default_rng(mask_seed)
    h = x
    for layer in layers:
        h = layer.forward(h, mode="train", rng=rng)
    return h


def gradient_check(layers, x, targets=None, epsilon=1e-5, mask_seed=0, readout_seed=1):
    """Max relative gradient error |a - n| / max(|a|, |n|, 1e-8) over all
    parameters and input elements of a layer fragment.

    With ``targets`` the scalar loss is softmax cross-entropy on the
    fragment output (checking the fused (p - target) gradient); otherwise
    a fixed random linear readout of the output is used.
    """
    x = np.asarray(x, dtype=np.float64)
    out0 = _forward(layers, x, mask_seed)
    readout = np.random.default_rng(readout_seed).standard_normal(out0.shape)

    def loss_of(out):
        if targets is None:
            return float((out * readout).sum())
        p = softmax_rows(out)
        picked = np.clip(p[np.arange(len(targets)), targets], 1e-12, None)
        return float(-np.log(picked).mean())

    # analytic pass
    if targets is None:
        dout = readout
    else:
        p = softmax_rows(out0)
        onehot = np.zeros_like(p)
        onehot[np.arange(len(targets)), targets] = 1.0
        dout = (p - onehot) / len(targets)
    d = dout
    for layer in reversed(layers):
        d = layer.backward(d)
    dx_analytic = d

    worst = 0.0

    def compare(analytic, numeric):
        nonlocal worst
        denom = max(abs(analytic), abs(numeric), 1e-8)
        worst = max(worst, abs(analytic - numeric) / denom)

    def numeric_at(write_slot, read_back):
        base = read_back()
        write_slot(base + epsilon)
        hi = loss_of(_forward(layers, x, mask_seed))
        write_slot(base - epsilon)
        lo = loss_of(_forward(layers, x, mask_seed))
        write_slot(base)
        return (hi - lo) / (2.0 * epsilon)

    for layer in layers:
        for name, param in layer.params.items():
            analytic = layer.grads[name]
            flat = param.reshape(-1)
            aflat = np.asarray(analytic).reshape(-1)
            for j in range(flat.shape[0]):
                num = numeric_at(
                    lambda v, f=flat, j=j: f.__setitem__(j, v),
                    lambda f=flat, j=j: float(f[j]),
                )
                compare(float(aflat[j]), num)

    xflat = x.reshape(-1)
    aflat = np.asarray(dx_analytic).reshape(-1)
    for j in range(xflat.shape[0]):
        num = numeric_at(
            lambda v, j=j: xflat.__setitem__(j, v),
            lambda j=j: float(xflat[j]),
        )
        compare(float(aflat[j]), num)

    return worst
