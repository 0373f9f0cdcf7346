"""Lat-long HDR environment maps.

Convention: +z is up, row 0 touches theta = 0, phi = 0 points along +x and
phi increases towards +y. Light sampling is piecewise constant in solid angle
per texel, with probability proportional to luminance times texel solid angle.
"""
from dataclasses import dataclass, field

import numpy as np

from .texture import bilinear_footprint, gather

LUMA = np.array([0.2126, 0.7152, 0.0722])


def luminance(rgb):
    return np.asarray(rgb) @ LUMA


def texel_solid_angles(height, width):
    """Exact solid angle of every texel, shape (height, width)."""
    edges = np.cos(np.linspace(0.0, np.pi, height + 1))
    rows = (edges[:-1] - edges[1:]) * (2.0 * np.pi / width)
    return np.repeat(rows[:, None], width, axis=1)


def direction_to_uv(w):
    w = np.asarray(w, dtype=np.float64)
    theta = np.arccos(np.clip(w[..., 2], -1.0, 1.0))
    phi = np.mod(np.arctan2(w[..., 1], w[..., 0]), 2.0 * np.pi)
    return phi / (2.0 * np.pi), theta / np.pi


def uv_to_direction(u, v):
    phi = 2.0 * np.pi * u
    theta = np.pi * v
    st = np.sin(theta)
    return np.stack([st * np.cos(phi), st * np.sin(phi), np.cos(theta)], axis=-1)


@dataclass
class EnvironmentMap:
    data: np.ndarray
    # sampling tables, built in __post_init__
    pdf_texel: np.ndarray = field(init=False, repr=False)
    marginal_cdf: np.ndarray = field(init=False, repr=False)
    conditional_cdf: np.ndarray = field(init=False, repr=False)
    black: bool = field(init=False, repr=False)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        h, w = self.data.shape[:2]
        if self.data.ndim != 3 or self.data.shape[2] != 3 or w != 2 * h:
            raise ValueError(f"environment map must be (H, 2H, 3), got {self.data.shape}")
        if not np.all(np.isfinite(self.data)) or np.any(self.data < 0):
            raise ValueError("environment radiance must be finite and non-negative")
        self._build_distribution()

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]

    @classmethod
    def constant(cls, value, height=32):
        data = np.empty((height, 2 * height, 3))
        data[:] = np.asarray(value, dtype=np.float64)
        return cls(data)

    def scaled(self, factor):
        return EnvironmentMap(self.data * np.asarray(factor, dtype=np.float64))

    def _build_distribution(self):
        h, w = self.height, self.width
        lum = np.maximum(luminance(self.data), 0.0)
        peak = lum.max()
        self.black = not peak > 0.0
        omega = texel_solid_angles(h, w)
        if self.black:
            weights = omega.copy()
        else:
            # dividing by the peak first keeps the tables identical under
            # power-of-two rescaling of the map
            weights = (lum / peak) * omega
        row = weights.sum(axis=1)
        total = row.sum()
        self.marginal_cdf = np.concatenate([[0.0], np.cumsum(row) / total])
        self.marginal_cdf[-1] = 1.0
        safe = np.where(row > 0, row, 1.0)
        cond = np.concatenate([np.zeros((h, 1)), np.cumsum(weights, axis=1) / safe[:, None]], axis=1)
        cond[:, -1] = 1.0
        self.conditional_cdf = cond
        self.pdf_texel = weights / total / omega
        self.texel_omega = omega


def envmap_lookup(env: EnvironmentMap, w, return_footprint=False):
    """Bilinear radiance lookup: wraps in phi, clamps in theta."""
    u, v = direction_to_uv(w)
    fp = bilinear_footprint(u, v, env.width, env.height, wrap_u=True)
    value = gather(env.data, fp)
    if return_footprint:
        return value, fp
    return value


def texel_of(env: EnvironmentMap, w):
    u, v = direction_to_uv(w)
    j = np.clip(np.floor(u * env.width).astype(np.int64), 0, env.width - 1)
    i = np.clip(np.floor(v * env.height).astype(np.int64), 0, env.height - 1)
    return i, j


def envmap_pdf(env: EnvironmentMap, w):
    """Solid-angle pdf of :func:`envmap_sample` for direction ``w``."""
    if env.black:
        return np.full(np.shape(w)[:-1], 1.0 / (4.0 * np.pi))
    i, j = texel_of(env, w)
    return env.pdf_texel[i, j]


def _invert(cdf, u):
    idx = np.searchsorted(cdf, u, side="right") - 1
    idx = np.clip(idx, 0, len(cdf) - 2)
    lo = cdf[idx]
    width = cdf[idx + 1] - lo
    frac = np.where(width > 0, (u - lo) / np.where(width > 0, width, 1.0), 0.5)
    return idx, np.clip(frac, 0.0, 1.0)


def envmap_sample(env: EnvironmentMap, u):
    """Sample a direction proportional to luminance * solid angle.

    Returns ``(w, pdf, radiance)`` with radiance from :func:`envmap_lookup`.
    An all-black map falls back to uniform sphere sampling.
    """
    u = np.asarray(u, dtype=np.float64)
    h, wdt = env.height, env.width
    if env.black:
        z = 1.0 - 2.0 * u[..., 0]
        r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
        phi = 2.0 * np.pi * u[..., 1]
        w = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=-1)
        return w, np.full(u.shape[:-1], 1.0 / (4.0 * np.pi)), np.zeros(u.shape[:-1] + (3,))

    i, fu = _invert(env.marginal_cdf, u[..., 0])
    flat = u[..., 1].ravel()
    rows = i.ravel()
    j = np.empty_like(rows)
    fv = np.empty_like(flat)
    # conditional inversion per row; rows are few so loop over unique values
    for r in np.unique(rows):
        sel = rows == r
        j[sel], fv[sel] = _invert(env.conditional_cdf[r], flat[sel])
    j = j.reshape(i.shape)
    fv = fv.reshape(i.shape)

    c0 = np.cos(np.pi * i / h)
    c1 = np.cos(np.pi * (i + 1) / h)
    cos_t = c0 + (c1 - c0) * fu
    sin_t = np.sqrt(np.maximum(0.0, 1.0 - cos_t * cos_t))
    phi = 2.0 * np.pi * (j + fv) / wdt
    w = np.stack([sin_t * np.cos(phi), sin_t * np.sin(phi), cos_t], axis=-1)
    pdf = env.pdf_texel[i, j]
    return w, pdf, envmap_lookup(env, w)
