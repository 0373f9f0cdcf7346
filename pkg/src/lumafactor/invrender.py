"""Joint texture / environment optimisation against posed photographs.

Each iteration renders one view, compares it with the photograph in sRGB,
adds texel smoothness terms and (optionally) the distillation loss on the
pixel-center albedo/ORM buffers, then takes an Adam step on the textures and
the softplus pre-activation of the environment.
"""
import csv
import hashlib
import json
import logging
import os
import tempfile
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from .renderer import RenderConfig, backprop_aux, backprop_render, render, tonemap_srgb, tonemap_srgb_grad
from .scene import EnvironmentMap, Scene, TextureMap
from .scene.io import atomic_write_dir, write_pfm, write_png
from .sds import SdsConfig, gamma_schedule, sds_plus_loss

log = logging.getLogger(__name__)


class NumericalFailure(FloatingPointError):
    def __init__(self, message, checkpoint=None):
        super().__init__(message)
        self.checkpoint = checkpoint


@dataclass
class TrainView:
    x: np.ndarray      # sRGB photograph (H, W, 3)
    camera: object
    lights: tuple = None  # per-view analytic lights; None uses the shared list

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        if self.x.shape != (self.camera.height, self.camera.width, 3):
            raise ValueError(f"image {self.x.shape} does not match camera {self.camera.width}x{self.camera.height}")


@dataclass(frozen=True)
class OptimConfig:
    iterations: int = 2000
    lr_texture: float = 1e-2
    lr_env: float = 1e-2
    texture_size: int = 128
    env_height: int = 32
    init_albedo: float = 0.5
    init_orm: tuple = (0.0, 0.5, 0.0)
    init_env: float = 0.5
    reg_albedo: float = 1e-3
    reg_orm: float = 1e-3
    optimize_env: bool = True
    views_per_iter: int = 1
    seed: int = 0
    render: RenderConfig = RenderConfig(spp=4, background="env")
    sds: SdsConfig = None
    checkpoint_every: int = 0

    def to_dict(self):
        return asdict(self)

    def hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class OptimResult:
    k_d: TextureMap
    k_orm: TextureMap
    env: EnvironmentMap
    history: list = field(default_factory=list)
    iterations: int = 0


# ------------------------------------------------------------------ loss terms

def reconstruction_loss(x_linear, x_srgb):
    """Mean squared sRGB error; gradient is with respect to the linear image."""
    y = tonemap_srgb(x_linear)
    r = y - np.asarray(x_srgb, dtype=np.float64)
    loss = float(np.mean(r * r))
    grad = (2.0 / r.size) * r * tonemap_srgb_grad(x_linear)
    return loss, grad


def _tv(data):
    dx = np.diff(data, axis=1)
    dy = np.diff(data, axis=0)
    n = data.size
    loss = (np.abs(dx).sum() + np.abs(dy).sum()) / n
    g = np.zeros_like(data)
    sx = np.sign(dx) / n
    sy = np.sign(dy) / n
    g[:, 1:] += sx
    g[:, :-1] -= sx
    g[1:] += sy
    g[:-1] -= sy
    return float(loss), g


def regularization_loss(k_d, k_orm, w_albedo=1e-3, w_orm=1e-3):
    """Weighted L1 of horizontal and vertical texel differences, normalised by
    texel count. Returns ``(loss, g_kd, g_orm)``."""
    k_d = k_d.data if isinstance(k_d, TextureMap) else np.asarray(k_d, dtype=np.float64)
    k_orm = k_orm.data if isinstance(k_orm, TextureMap) else np.asarray(k_orm, dtype=np.float64)
    l_d, g_d = _tv(k_d)
    l_o, g_o = _tv(k_orm)
    return w_albedo * l_d + w_orm * l_o, w_albedo * g_d, w_orm * g_o


# ------------------------------------------------------------------ env param

def softplus(p):
    return np.logaddexp(0.0, p)


def softplus_inverse(y):
    y = np.asarray(y, dtype=np.float64)
    return y + np.log(-np.expm1(-y))


def _sigmoid(p):
    return 0.5 * (1.0 + np.tanh(0.5 * p))


# ------------------------------------------------------------------ checkpoint

def save_checkpoint(out_dir, k_d, k_orm, env, iteration, config_hash, history):
    """Write the checkpoint directory atomically (temp dir + rename)."""
    out_dir = Path(out_dir)
    out_dir.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=out_dir.name + ".", dir=out_dir.parent))
    write_png(tmp / "k_d.png", k_d.data)
    write_pfm(tmp / "k_d.pfm", k_d.data)
    write_png(tmp / "k_orm.png", k_orm.data)
    write_pfm(tmp / "k_orm.pfm", k_orm.data)
    write_pfm(tmp / "env.pfm", env.data)
    write_loss_history(tmp / "loss.csv", history)
    state = {"iteration": iteration, "config_hash": config_hash, "loss_history": "loss.csv"}
    (tmp / "state.json").write_text(json.dumps(state, indent=2, sort_keys=True))
    os.chmod(tmp, 0o755)
    atomic_write_dir(tmp, out_dir)
    return out_dir


def write_loss_history(path, history):
    cols = ["iter", "total", "l_recon", "l_reg", "l_sds", "gamma"]
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(cols)
        for h in history:
            w.writerow([repr(h[c]) if isinstance(h[c], float) else h[c] for c in cols])


# ------------------------------------------------------------------ main loop

def initial_state(cfg: OptimConfig):
    size = (cfg.texture_size, cfg.texture_size)
    k_d = TextureMap.constant(cfg.init_albedo, size, "albedo")
    k_orm = TextureMap.constant(cfg.init_orm, size, "orm")
    env = EnvironmentMap.constant(cfg.init_env, cfg.env_height)
    return k_d, k_orm, env


def optimize(views, mesh, cfg: OptimConfig = OptimConfig(), init=None, prior=None, lights=(),
             checkpoint_dir=None, progress=None) -> OptimResult:
    """Fit ``(k_d, k_orm, env)`` to ``views``.

    ``init`` is an optional ``(k_d, k_orm, env)`` triple. ``prior`` is any
    object with ``predict_v`` and is used only when ``cfg.sds`` is set. Loss
    components per iteration are returned in ``history``; the logged
    ``l_sds`` is already multiplied by ``gamma``.
    """
    if not views:
        raise ValueError("need at least one view")
    if cfg.sds is not None and prior is None:
        raise ValueError("distillation enabled but no prior given")
    k_d, k_orm, env = init if init is not None else initial_state(cfg)
    if cfg.iterations == 0:
        return OptimResult(k_d.copy(), k_orm.copy(), EnvironmentMap(env.data.copy()), [], 0)

    p_kd = torch.tensor(k_d.data, dtype=torch.float64)
    p_orm = torch.tensor(k_orm.data, dtype=torch.float64)
    p_env = torch.tensor(softplus_inverse(np.maximum(env.data, 1e-8)), dtype=torch.float64)
    groups = [{"params": [p_kd, p_orm], "lr": cfg.lr_texture}]
    if cfg.optimize_env:
        groups.append({"params": [p_env], "lr": cfg.lr_env})
    opt = torch.optim.Adam(groups)

    view_rng = np.random.default_rng([cfg.seed, 0])
    sds_rng = np.random.default_rng([cfg.seed, 1])
    config_hash = cfg.hash()
    history = []

    def current():
        return (TextureMap(p_kd.numpy().copy(), "albedo"), TextureMap(p_orm.numpy().copy(), "orm"),
                EnvironmentMap(softplus(p_env.numpy())))

    last_good = current()
    for i in range(cfg.iterations):
        kd_i, orm_i, env_i = current()
        g_kd = np.zeros_like(kd_i.data)
        g_orm = np.zeros_like(orm_i.data)
        g_env = np.zeros_like(env_i.data)
        l_recon = 0.0
        l_sds = 0.0
        gamma = gamma_schedule(min(i, cfg.sds.total_iters), cfg.sds) if cfg.sds is not None else 0.0

        batch = view_rng.integers(0, len(views), cfg.views_per_iter)
        seeds = view_rng.integers(0, 2**31 - 1, cfg.views_per_iter)
        for vi, seed in zip(batch, seeds):
            view = views[vi]
            vl = list(lights) if view.lights is None else list(view.lights)
            scene = Scene(mesh, kd_i, orm_i, env_i, vl)
            rcfg = replace(cfg.render, seed=int(seed))
            fwd = render(scene, view.camera, rcfg)
            lr_, g_img = reconstruction_loss(fwd.rgb_linear, view.x)
            l_recon += lr_ / len(batch)
            grads = backprop_render(scene, view.camera, rcfg, g_img / len(batch), fwd)
            g_kd += grads.k_d
            g_orm += grads.k_orm
            g_env += grads.env
            if gamma > 0.0:
                res = sds_plus_loss(prior, fwd.albedo, fwd.orm, view.x, cfg.sds, sds_rng)
                w = gamma / len(batch)
                l_sds += w * res.loss
                ga, go = backprop_aux(fwd.aux, w * res.grad_albedo, w * res.grad_orm)
                g_kd += ga
                g_orm += go

        l_reg, r_kd, r_orm = regularization_loss(kd_i.data, orm_i.data, cfg.reg_albedo, cfg.reg_orm)
        g_kd += r_kd
        g_orm += r_orm
        total = l_recon + l_reg + l_sds
        grads_ok = all(np.all(np.isfinite(g)) for g in (g_kd, g_orm, g_env))
        if not (np.isfinite(total) and grads_ok):
            ckpt = None
            if checkpoint_dir is not None:
                ckpt = save_checkpoint(checkpoint_dir, *last_good, i, config_hash, history)
            raise NumericalFailure(f"non-finite loss or gradient at iteration {i}", ckpt)
        history.append({"iter": i, "total": total, "l_recon": l_recon, "l_reg": l_reg,
                        "l_sds": l_sds, "gamma": gamma})
        last_good = (kd_i, orm_i, env_i)

        p_kd.grad = torch.from_numpy(g_kd)
        p_orm.grad = torch.from_numpy(g_orm)
        # d softplus(p) / dp = sigmoid(p)
        p_env.grad = torch.from_numpy(g_env * _sigmoid(p_env.numpy()))
        opt.step()
        with torch.no_grad():
            p_kd.clamp_(0.0, 1.0)
            p_orm.clamp_(0.0, 1.0)

        if progress is not None:
            progress(i, history[-1])
        if checkpoint_dir is not None and cfg.checkpoint_every and (i + 1) % cfg.checkpoint_every == 0:
            save_checkpoint(checkpoint_dir, *current(), i + 1, config_hash, history)

    k_d, k_orm, env = current()
    if checkpoint_dir is not None:
        save_checkpoint(checkpoint_dir, k_d, k_orm, env, cfg.iterations, config_hash, history)
    return OptimResult(k_d, k_orm, env, history, cfg.iterations)


def relight(k_d, k_orm, mesh, new_env, camera, cfg: RenderConfig = RenderConfig(spp=16), lights=()):
    """Render the recovered assets under a new illuminant; returns linear RGB."""
    scene = Scene(mesh, k_d, k_orm, new_env, list(lights))
    return render(scene, camera, cfg).rgb_linear


def write_relit(stem, rgb_linear):
    """Write ``stem.pfm`` (linear) and ``stem.png`` (sRGB)."""
    stem = Path(stem)
    write_pfm(stem.with_suffix(".pfm"), rgb_linear)
    write_png(stem.with_suffix(".png"), tonemap_srgb(rgb_linear))
