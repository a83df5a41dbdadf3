"""Numerical core: convolution, correlation and the stochastic-unpooling map.

Array conventions (fixed; checkpoints depend on them)
-----------------------------------------------------
* A multi-band image/tensor is a C-contiguous float64 array of shape
  ``(bands, height, width)`` — band-major, row-major within each band.
* A single-band map is a 2-D float64 array ``(height, width)``.
* An indicator grid is an int32 array ``(blocks_y, blocks_x)`` whose entry is
  a category in ``{0, .., ph*pw}``: 0 means the whole pooling block is off,
  ``m > 0`` places the block's single value at row-major in-block position
  ``((m-1)//pw, (m-1)%pw)``.

Convolution is always *full* (output = input + kernel - 1) and correlation is
always *valid* (output = input - kernel + 1); no padding modes exist.
"""

import numpy as np

from . import _kernels
from .errors import ShapeError

MAX_ELEMENTS = 2**31


def as_map(a, name="input"):
    """Validate and return a C-contiguous float64 2-D map."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"{name}: expected a 2-D map, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ShapeError(f"{name}: contains non-finite values")
    return a


def as_tensor3(a, name="input"):
    """Validate and return a C-contiguous float64 (bands, H, W) tensor."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    if a.ndim == 2:
        a = a[None, :, :]
    if a.ndim != 3:
        raise ShapeError(f"{name}: expected a (bands, H, W) tensor, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ShapeError(f"{name}: contains non-finite values")
    return a


def conv_full(s, d):
    """Full 2-D convolution of a single-band map with a (multi-band) kernel.

    s: (Hs, Ws); d: (hd, wd) or (C, hd, wd).
    Returns (Hs+hd-1, Ws+wd-1) or (C, Hs+hd-1, Ws+wd-1).
    """
    s = as_map(s, "s")
    d = np.ascontiguousarray(d, dtype=np.float64)
    single = d.ndim == 2
    d3 = as_tensor3(d, "d")
    Hs, Ws = s.shape
    C, hd, wd = d3.shape
    out_h, out_w = Hs + hd - 1, Ws + wd - 1
    if out_h * out_w * C > MAX_ELEMENTS:
        raise ShapeError(f"conv_full output too large: {C}x{out_h}x{out_w}")
    out = np.empty((C, out_h, out_w))
    for c in range(C):
        out[c] = _kernels.conv_full(s, d3[c])
    return out[0] if single else out


def correlate_valid(b, c):
    """Valid 2-D correlation: A[i,j] = sum_{p,q} B[p+i,q+j] * C[p,q]."""
    b = as_map(b, "b")
    c = as_map(c, "c")
    if c.shape[0] > b.shape[0] or c.shape[1] > b.shape[1]:
        raise ShapeError(f"correlation kernel {c.shape} larger than input {b.shape}")
    return _kernels.correlate_valid(b, c)


def unpool_apply(x, z, ph, pw):
    """Place each pooled value at its indicator position (or drop it: off).

    x: (bh, bw) pooled values; z: (bh, bw) int categories in {0..ph*pw}.
    Returns the (bh*ph, bw*pw) sparse map.
    """
    x = as_map(x, "x")
    z = np.ascontiguousarray(z, dtype=np.int32)
    if ph < 1 or pw < 1:
        raise ShapeError(f"pooling ratios must be positive, got {ph}x{pw}")
    if z.shape != x.shape:
        raise ShapeError(f"indicator grid {z.shape} does not match pooled map {x.shape}")
    if z.min() < 0 or z.max() > ph * pw:
        raise ShapeError(f"indicator categories must lie in 0..{ph * pw}")
    return _kernels.unpool_apply(x, z, ph, pw)


def pool_adjoint(g, z, ph, pw):
    """Adjoint of unpool_apply: gather g at each block's active position.

    g: (bh*ph, bw*pw); z: (bh, bw). Returns (bh, bw); off blocks give 0.
    """
    g = as_map(g, "g")
    z = np.ascontiguousarray(z, dtype=np.int32)
    bh, bw = z.shape
    if g.shape != (bh * ph, bw * pw):
        raise ShapeError(f"gradient map {g.shape} does not match {bh}x{bw} blocks of {ph}x{pw}")
    return _kernels.pool_adjoint(g, z, ph, pw)


def expand_indicators(z, ph, pw):
    """Binary expansion of an indicator grid: at most one 1 per pooling block."""
    z = np.ascontiguousarray(z, dtype=np.int32)
    ones = np.ones(z.shape)
    return _kernels.unpool_apply(ones, z, ph, pw)
