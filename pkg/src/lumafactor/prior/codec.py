"""Fixed linear latent codec: 4x4 average pooling down, bilinear upsampling back.

Both maps are separable, ``E(x) = P_h x P_w^T`` and ``D(z) = U_h z U_w^T``,
so their adjoints are the transposed matrices. Arrays are channel-last,
``(..., H, W, C)``.
"""
from functools import lru_cache

import numpy as np

FACTOR = 4


@lru_cache(maxsize=32)
def pool_matrix(n):
    if n % FACTOR:
        raise ValueError(f"image size {n} is not a multiple of {FACTOR}")
    m = np.zeros((n // FACTOR, n))
    for i in range(n // FACTOR):
        m[i, i * FACTOR:(i + 1) * FACTOR] = 1.0 / FACTOR
    m.setflags(write=False)
    return m


@lru_cache(maxsize=32)
def upsample_matrix(n_small):
    """Bilinear x4 upsampling with half-pixel centers and clamped edges."""
    n = n_small * FACTOR
    m = np.zeros((n, n_small))
    x = np.clip((np.arange(n) + 0.5) / FACTOR - 0.5, 0.0, n_small - 1)
    x0 = np.floor(x).astype(int)
    x1 = np.minimum(x0 + 1, n_small - 1)
    f = x - x0
    np.add.at(m, (np.arange(n), x0), 1.0 - f)
    np.add.at(m, (np.arange(n), x1), f)
    m.setflags(write=False)
    return m


def _apply(rows, cols, x):
    # x: (..., H, W, C) -> rows @ x @ cols^T along the two spatial axes
    return np.einsum("ih,...hwc,jw->...ijc", rows, x, cols, optimize=True)


def encode(x):
    x = np.asarray(x, dtype=np.float64)
    h, w = x.shape[-3:-1]
    return _apply(pool_matrix(h), pool_matrix(w), x)


def encode_adjoint(g):
    g = np.asarray(g, dtype=np.float64)
    h, w = g.shape[-3:-1]
    return _apply(pool_matrix(h * FACTOR).T, pool_matrix(w * FACTOR).T, g)


def decode(z):
    z = np.asarray(z, dtype=np.float64)
    h, w = z.shape[-3:-1]
    return _apply(upsample_matrix(h), upsample_matrix(w), z)


def decode_adjoint(g):
    g = np.asarray(g, dtype=np.float64)
    h, w = g.shape[-3:-1]
    return _apply(upsample_matrix(h // FACTOR).T, upsample_matrix(w // FACTOR).T, g)


def encode_pair(albedo, orm):
    """Latent with channel layout [albedo (3) | orm (3)]."""
    return np.concatenate([encode(albedo), encode(orm)], axis=-1)


def decode_pair(z):
    img = decode(z)
    return img[..., :3], img[..., 3:]
