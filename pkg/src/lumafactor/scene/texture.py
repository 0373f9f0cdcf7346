from dataclasses import dataclass

import numpy as np

ROLES = ("albedo", "orm")


@dataclass
class TextureMap:
    """Row-major (height, width, 3) grid in [0, 1].

    Texel (i, j) has its center at uv = ((j + 0.5) / width, (i + 0.5) / height).
    For ``role == "orm"`` the channels are (occlusion, roughness, metallic).
    """

    data: np.ndarray
    role: str = "albedo"

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3 or self.data.shape[2] != 3:
            raise ValueError(f"texture must be (H, W, 3), got {self.data.shape}")
        if min(self.data.shape[:2]) < 4:
            raise ValueError("texture dimensions must be >= 4")
        if self.role not in ROLES:
            raise ValueError(f"unknown texture role {self.role!r}")

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]

    @classmethod
    def constant(cls, value, size=(128, 128), role="albedo"):
        data = np.empty((size[0], size[1], 3))
        data[:] = np.asarray(value, dtype=np.float64)
        return cls(data, role)

    def copy(self):
        return TextureMap(self.data.copy(), self.role)


@dataclass
class Footprint:
    """Flat texel indices and bilinear weights, both shaped (..., 4)."""

    index: np.ndarray
    weight: np.ndarray


def bilinear_footprint(u, v, width, height, wrap_u=False):
    """Bilinear footprint on a texel-centered grid.

    ``wrap_u`` wraps horizontally (used by lat-long maps); otherwise both axes
    clamp to the edge.
    """
    x = np.asarray(u, dtype=np.float64) * width - 0.5
    y = np.clip(np.asarray(v, dtype=np.float64) * height - 0.5, 0.0, height - 1)
    if not wrap_u:
        x = np.clip(x, 0.0, width - 1)
    x0 = np.floor(x)
    y0 = np.floor(y)
    fx = x - x0
    fy = y - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    y1 = np.minimum(y0 + 1, height - 1)
    if wrap_u:
        x1 = (x0 + 1) % width
        x0 = x0 % width
    else:
        x1 = np.minimum(x0 + 1, width - 1)
    index = np.stack([y0 * width + x0, y0 * width + x1, y1 * width + x0, y1 * width + x1], axis=-1)
    weight = np.stack([(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy], axis=-1)
    return Footprint(index, weight)


def gather(data, fp: Footprint):
    flat = data.reshape(-1, data.shape[-1])
    return np.einsum("...k,...kc->...c", fp.weight, flat[fp.index])


def scatter(grad, fp: Footprint, shape):
    """Adjoint of :func:`gather`: accumulate ``grad`` (..., C) into a grid of ``shape``."""
    h, w, c = shape
    idx = fp.index.reshape(-1, 4)
    wts = fp.weight.reshape(-1, 4)
    g = np.asarray(grad, dtype=np.float64).reshape(-1, c)
    out = np.empty((h * w, c))
    flat_idx = idx.ravel()
    for ch in range(c):
        out[:, ch] = np.bincount(flat_idx, weights=(wts * g[:, ch:ch + 1]).ravel(), minlength=h * w)
    return out.reshape(h, w, c)


def sample_texture(tex: TextureMap, uv):
    """Bilinear, clamp-to-edge lookup. Returns ``(values, footprint)``."""
    uv = np.asarray(uv, dtype=np.float64)
    fp = bilinear_footprint(uv[..., 0], uv[..., 1], tex.width, tex.height)
    return gather(tex.data, fp), fp
