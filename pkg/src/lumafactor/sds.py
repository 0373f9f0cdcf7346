"""Score distillation in latent and pixel space, plus the gamma decay schedule.

The prior's denoised estimate is treated as a constant target, so the loss is
a sum of two quadratics in the material buffers and the gradient is exact
through the (linear) codec.
"""
from dataclasses import dataclass

import numpy as np

from .prior import codec
from .prior.sampling import ddim_sample
from .prior.schedule import COSINE


class SdsError(FloatingPointError):
    pass


@dataclass(frozen=True)
class SdsConfig:
    lambda_latent: float = 1.0
    lambda_rgb: float = 1.0
    t_min: float = 0.02
    t_max: float = 0.98
    n_ddim: int = 5
    guidance_scale: float = 3.0
    gamma_0: float = 0.2
    gamma_end: float = 0.02
    total_iters: int = 2000

    def __post_init__(self):
        if not 0.0 < self.t_min < self.t_max < 1.0:
            raise ValueError("need 0 < t_min < t_max < 1")
        if self.lambda_latent < 0 or self.lambda_rgb < 0 or self.gamma_0 < 0 or self.gamma_end < 0:
            raise ValueError("weights must be non-negative")
        if self.n_ddim < 1:
            raise ValueError("n_ddim must be >= 1")


@dataclass
class SdsResult:
    loss: float
    grad_albedo: np.ndarray
    grad_orm: np.ndarray
    loss_latent: float
    loss_rgb: float
    t: float
    z_hat: np.ndarray


class OraclePrior:
    """Denoiser that returns the exact v for a known clean latent ``z_star``.

    DDIM with this model lands on ``z_star`` from any start; used to test the
    distillation mechanics independently of a trained network.
    """

    def __init__(self, z_star, schedule=COSINE):
        self.z_star = np.asarray(z_star, dtype=np.float64)
        self.schedule = schedule

    @classmethod
    def from_materials(cls, albedo, orm):
        return cls(codec.encode_pair(albedo, orm))

    def predict_v(self, z_t, t, cond):
        a, s = self.schedule(t)
        return (a * np.asarray(z_t) - self.z_star) / s


def gamma_schedule(i, cfg: SdsConfig):
    """gamma_0 * (gamma_end / gamma_0) ** (i / total_iters)."""
    if not 0 <= i <= cfg.total_iters:
        raise ValueError(f"iteration {i} outside [0, {cfg.total_iters}]")
    if cfg.gamma_0 == cfg.gamma_end or cfg.total_iters == 0:
        return float(cfg.gamma_0)
    if cfg.gamma_0 == 0.0 or cfg.gamma_end == 0.0:
        # geometric interpolation is undefined through zero; fall back to linear
        return float(cfg.gamma_0 + (cfg.gamma_end - cfg.gamma_0) * i / cfg.total_iters)
    return float(cfg.gamma_0 * (cfg.gamma_end / cfg.gamma_0) ** (i / cfg.total_iters))


def frozen_loss(albedo, orm, z_hat, cfg: SdsConfig):
    """Loss and buffer gradients for a fixed target latent ``z_hat``.

    Both terms are mean squared errors: over latent elements and over decoded
    pixel elements respectively.
    """
    z = codec.encode_pair(albedo, orm)
    dz = z - z_hat
    dx = codec.decode(dz)
    l_lat = float(np.mean(dz * dz))
    l_rgb = float(np.mean(dx * dx))
    g_z = (2.0 * cfg.lambda_latent / dz.size) * dz
    g_z = g_z + codec.decode_adjoint((2.0 * cfg.lambda_rgb / dx.size) * dx)
    g = codec.encode_adjoint(g_z)
    loss = cfg.lambda_latent * l_lat + cfg.lambda_rgb * l_rgb
    return loss, g[..., :3], g[..., 3:], l_lat, l_rgb


def sds_plus_loss(prior, albedo, orm, x_cond, cfg: SdsConfig, rng: np.random.Generator,
                  schedule=COSINE) -> SdsResult:
    """One (t, eps) draw: noise the current latent, denoise with ``n_ddim`` DDIM
    steps conditioned on ``x_cond``, and pull the buffers toward the result."""
    albedo = np.asarray(albedo, dtype=np.float64)
    orm = np.asarray(orm, dtype=np.float64)
    z = codec.encode_pair(albedo, orm)
    t = float(rng.uniform(cfg.t_min, cfg.t_max))
    eps = rng.standard_normal(z.shape)
    a, s = schedule(t)
    z_t = a * z + s * eps
    cond = codec.encode(x_cond)
    z_hat = ddim_sample(prior, z_t, t, cond, cfg.n_ddim, cfg.guidance_scale, schedule)
    if not np.all(np.isfinite(z_hat)):
        bad = int(np.count_nonzero(~np.isfinite(z_hat)))
        raise SdsError(f"prior produced {bad} non-finite latent values at t={t:.4f}; "
                       "is the checkpoint trained?")
    loss, g_d, g_o, l_lat, l_rgb = frozen_loss(albedo, orm, z_hat, cfg)
    return SdsResult(loss, g_d, g_o, l_lat, l_rgb, t, z_hat)


def distill(prior, albedo, orm, x_cond, cfg: SdsConfig, n_steps, lr=4.0, seed=0, callback=None):
    """Optimise material buffers directly against the prior, no renderer.

    Plain gradient descent with the step scaled by the latent element count, so
    ``lr`` is independent of resolution. Buffers are clamped to [0, 1] after
    every step. Returns the buffers and the per-step loss trace.
    """
    rng = np.random.default_rng(seed)
    albedo = np.array(albedo, dtype=np.float64)
    orm = np.array(orm, dtype=np.float64)
    n_z = codec.encode_pair(albedo, orm).size
    trace = []
    for i in range(n_steps):
        res = sds_plus_loss(prior, albedo, orm, x_cond, cfg, rng)
        albedo = np.clip(albedo - lr * n_z * res.grad_albedo, 0.0, 1.0)
        orm = np.clip(orm - lr * n_z * res.grad_orm, 0.0, 1.0)
        trace.append(res.loss)
        if callback:
            callback(i, albedo, orm, res)
    return albedo, orm, trace
