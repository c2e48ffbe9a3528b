"""Bit-exact numpy reference for the fabric's arithmetic.

``conv2d_staged`` reproduces the fabric's reduction tree exactly, in
float32 at every step, so simulator outputs can be compared word for
word:

- per kernel-column group, products fold kernel-row ascending
  (the first operand assigns, later ones add);
- group sums fold left-to-right across the block, i.e. kernel column
  descending, the block's own rightmost group last;
- block sums fold channel-slot ascending into the pass partial;
- pass partials fold pass ascending into the output (the first pass
  assigns, later passes add).

``conv2d_naive`` is an independent scalar-loop implementation used to
cross-check the staged one on inputs where every partial sum is exactly
representable (see ``synth_values``), making the result order
independent.
"""

from __future__ import annotations

import numpy as np

from .mapping import FoldPlan

F32 = np.float32


def relu_ref(x: np.ndarray) -> np.ndarray:
    """x > 0 keeps x, everything else (including -0.0) becomes +0.0."""
    x = np.asarray(x, dtype=F32)
    return np.where(x > 0, x, F32(0.0))


def pad_input(x: np.ndarray, pad: int) -> np.ndarray:
    x = np.asarray(x, dtype=F32)
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (pad, pad), (pad, pad)))


def conv2d_naive(x: np.ndarray, w: np.ndarray, stride: int = 1, pad: int = 0) -> np.ndarray:
    """Plain scalar-loop convolution, float32 accumulation, c/r/s ascending."""
    c_out, c_in, kh, kw = w.shape
    xp = pad_input(x, pad)
    assert xp.shape[0] == c_in
    p_out = (xp.shape[1] - kh) // stride + 1
    q_out = (xp.shape[2] - kw) // stride + 1
    w = np.asarray(w, dtype=F32)
    out = np.zeros((c_out, p_out, q_out), dtype=F32)
    for f in range(c_out):
        for p in range(p_out):
            for q in range(q_out):
                acc = F32(0.0)
                for c in range(c_in):
                    for r in range(kh):
                        for s in range(kw):
                            acc = F32(acc + F32(w[f, c, r, s] * xp[c, p * stride + r, q * stride + s]))
                out[f, p, q] = acc
    return out


def _shifted_view(xp: np.ndarray, c: int, r: int, s: int, stride: int, p_out: int, q_out: int):
    return xp[c, r : r + p_out * stride : stride, s : s + q_out * stride : stride]


def conv2d_staged(
    x: np.ndarray,
    w: np.ndarray,
    stride: int = 1,
    pad: int = 0,
    blocks_per_pass: int | None = None,
) -> np.ndarray:
    """Convolution in the fabric's exact fold order (see module docstring).

    Vectorized over output positions and filters; every accumulation
    step is one float32 array op, so each output element experiences the
    same operation sequence the fabric applies to it.
    """
    c_out, c_in, kh, kw = w.shape
    w = np.asarray(w, dtype=F32)
    xp = pad_input(x, pad)
    p_out = (xp.shape[1] - kh) // stride + 1
    q_out = (xp.shape[2] - kw) // stride + 1
    cpf = c_in if blocks_per_pass is None else blocks_per_pass
    out = np.zeros((c_out, p_out, q_out), dtype=F32)
    first_pass = True
    for c_lo in range(0, c_in, cpf):
        channels = range(c_lo, min(c_lo + cpf, c_in))
        pass_val = None
        for c in channels:  # channel slots ascending
            block_val = None
            for g in range(kw):  # groups left to right: s = kw-1-g
                s = kw - 1 - g
                group_val = None
                for r in range(kh):  # kernel rows ascending
                    prod = w[:, c, r, s][:, None, None] * _shifted_view(
                        xp, c, r, s, stride, p_out, q_out
                    )
                    group_val = prod if group_val is None else group_val + prod
                block_val = group_val if block_val is None else block_val + group_val
            pass_val = block_val if pass_val is None else pass_val + block_val
        if first_pass:
            out[:] = pass_val
            first_pass = False
        else:
            out += pass_val
    return out


def conv2d_for_plan(x: np.ndarray, w: np.ndarray, plan: FoldPlan) -> np.ndarray:
    """Staged convolution with the pass width the plan actually uses."""
    spec = plan.spec
    out = conv2d_staged(
        x, w, stride=spec.stride, pad=spec.pad,
        blocks_per_pass=plan.role_map.blocks_per_pass,
    )
    if spec.activation == "relu":
        out = relu_ref(out)
    return out


def maxpool_ref(x: np.ndarray, size: int = 2, stride: int | None = None) -> np.ndarray:
    """Channel-wise max pooling (order independent, any fold order matches)."""
    stride = size if stride is None else stride
    x = np.asarray(x, dtype=F32)
    c, h, w = x.shape
    p_out = (h - size) // stride + 1
    q_out = (w - size) // stride + 1
    out = np.empty((c, p_out, q_out), dtype=F32)
    for p in range(p_out):
        for q in range(q_out):
            win = x[:, p * stride : p * stride + size, q * stride : q * stride + size]
            out[:, p, q] = win.max(axis=(1, 2))
    return out


def synth_values(shape, seed: int, scale: float = 0.0625) -> np.ndarray:
    """Seeded test data: multiples of 2^-4 in [-2, 2].

    Products of two such values are multiples of 2^-8 with magnitude at
    most 4, so sums of up to ~2^15 of them stay exactly representable in
    float32 and reduction order cannot change the result.
    """
    rng = np.random.default_rng(seed)
    return (rng.integers(-32, 33, size=shape) * scale).astype(F32)
