import numpy as np

from . import codec
from .schedule import COSINE, predict_eps, predict_x0


def denoise_cfg(denoiser, z_t, t, cond, guidance_scale=3.0):
    """Classifier-free guidance: v_u + s (v_c - v_u), v_u uses zeroed conditioning."""
    v_cond = denoiser.predict_v(z_t, t, cond)
    if guidance_scale == 1.0:
        return v_cond
    v_unc = denoiser.predict_v(z_t, t, np.zeros_like(cond))
    return v_unc + guidance_scale * (v_cond - v_unc)


def ddim_sample(denoiser, z_start, t_start, cond, n_steps=5, guidance_scale=3.0, schedule=COSINE):
    """Deterministic DDIM from ``t_start`` down to 0 on a uniform grid.

    ``denoiser`` is anything with ``predict_v(z_t, t, cond)``. Returns the
    final clean estimate.
    """
    if not 0.0 < t_start <= 1.0:
        raise ValueError("t_start must lie in (0, 1]")
    grid = t_start * (1.0 - np.arange(n_steps + 1) / n_steps)
    z = np.asarray(z_start, dtype=np.float64)
    x0 = z
    for t, t_next in zip(grid[:-1], grid[1:]):
        v = denoise_cfg(denoiser, z, t, cond, guidance_scale)
        x0 = predict_x0(z, v, t, schedule)
        eps = predict_eps(z, v, t, schedule)
        a, s = schedule(t_next)
        z = a * x0 + s * eps
    return x0


def predict_materials(denoiser, x, k=10, seed=0, n_steps=5, guidance_scale=3.0, t_start=0.98):
    """Average of ``k`` independent samplings from pure noise, clamped to [0, 1].

    ``x`` is an sRGB image (H, W, 3); returns ``(albedo, orm)`` at full resolution.
    """
    cond = codec.encode(x)
    h, w = cond.shape[:2]
    rng = np.random.default_rng(seed)
    acc_d = np.zeros((h * codec.FACTOR, w * codec.FACTOR, 3))
    acc_o = np.zeros_like(acc_d)
    for _ in range(k):
        z0 = rng.standard_normal((h, w, 6))
        z = ddim_sample(denoiser, z0, t_start, cond, n_steps, guidance_scale)
        d, o = codec.decode_pair(z)
        acc_d += np.clip(d, 0.0, 1.0)
        acc_o += np.clip(o, 0.0, 1.0)
    return np.clip(acc_d / k, 0.0, 1.0), np.clip(acc_o / k, 0.0, 1.0)
