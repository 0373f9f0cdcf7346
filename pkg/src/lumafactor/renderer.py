"""Seeded Monte Carlo direct-lighting renderer and its adjoint.

Rendering is split in two phases. :func:`trace_samples` draws every random
decision (camera jitter, light and BRDF directions, MIS weights, visibility)
and records them on a :class:`Tape`. :func:`shade` turns a tape plus the
current textures and environment into pixels. Because the shading phase is
linear in the environment and smooth in the material parameters, its exact
adjoint (:func:`backprop_render`) is the detached-sampling gradient.
"""
import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .brdf import Material, brdf_pdf, dot, eval_brdf, eval_brdf_gradients, sample_brdf_direction
from .scene import Scene, envmap_lookup, envmap_pdf, envmap_sample, occluded, ray_intersect
from .scene.envmap import EnvironmentMap
from .scene.texture import Footprint, gather, sample_texture, scatter


class RenderContractError(RuntimeError):
    """Adjoint called with a tape that does not belong to the given camera/config."""


@dataclass(frozen=True)
class RenderConfig:
    spp: int = 4
    seed: int = 0
    background: str = "black"
    specular_enabled: bool = True
    shadows_enabled: bool = True

    def __post_init__(self):
        if self.spp < 1:
            raise ValueError("spp must be >= 1")
        if self.background not in ("black", "env"):
            raise ValueError("background must be 'black' or 'env'")


@dataclass
class RenderReport:
    n_pixels: int
    spp: int
    n_samples: int
    nan_count: int = 0
    seconds: float = 0.0

    def to_json(self, include_timing=True):
        d = asdict(self)
        if not include_timing:
            d.pop("seconds")
        return json.dumps(d, sort_keys=True)


@dataclass
class AuxRecord:
    """Pixel-center primary hits kept for :func:`backprop_aux`."""

    shape: tuple
    mask: np.ndarray
    fp_d: Footprint
    fp_orm: Footprint
    tex_shape_d: tuple
    tex_shape_orm: tuple


@dataclass
class LobeSamples:
    """One direction per hit sample plus its constant estimator weight."""

    w: np.ndarray
    scale: np.ndarray          # cos * visibility * mis / pdf (0 for discarded samples)
    fp_env: Footprint = None   # env lookup footprint; None for analytic lights
    radiance: np.ndarray = None  # fixed RGB radiance for analytic lights


@dataclass
class Tape:
    camera_key: tuple
    config: RenderConfig
    shape: tuple               # (H, W)
    spp: int
    hit_index: np.ndarray      # flat sample ids (into spp*H*W) that hit geometry
    n: np.ndarray
    wo: np.ndarray
    fp_d: Footprint
    fp_orm: Footprint
    lobes: list
    miss_index: np.ndarray
    fp_background: Footprint = None


@dataclass
class RenderBuffers:
    rgb_linear: np.ndarray
    albedo: np.ndarray
    orm: np.ndarray
    normal: np.ndarray
    mask: np.ndarray
    report: RenderReport
    tape: Tape = field(default=None, repr=False)
    aux: AuxRecord = field(default=None, repr=False)


def _camera_key(camera):
    return (camera.position, camera.target, camera.up, camera.fov_deg, camera.width, camera.height)


def _material(scene, uv):
    a, fp_d = sample_texture(scene.k_d, uv)
    orm, fp_o = sample_texture(scene.k_orm, uv)
    return Material.from_orm(a, orm), fp_d, fp_o


def trace_samples(scene: Scene, camera, cfg: RenderConfig, sampling_env: EnvironmentMap = None) -> Tape:
    """Draw all random decisions for one render.

    ``sampling_env`` overrides the map used to build the light-sampling
    distribution (defaults to ``scene.env``).
    """
    env = scene.env
    senv = sampling_env if sampling_env is not None else env
    h, w, spp = camera.height, camera.width, cfg.spp
    rng = np.random.default_rng(cfg.seed)
    u = rng.random((spp, h, w, 6))

    jj = np.arange(w)[None, None, :] + u[..., 0]
    ii = np.arange(h)[None, :, None] + u[..., 1]
    orig, dirs = camera.generate_rays(jj, ii)
    orig = orig.reshape(-1, 3)
    dirs = dirs.reshape(-1, 3)
    hit = ray_intersect(scene.mesh, orig, dirs)
    hit_index = np.flatnonzero(hit.mask)
    miss_index = np.flatnonzero(~hit.mask)

    p = hit.position[hit_index]
    n = hit.normal[hit_index]
    wo = -dirs[hit_index]
    uv = hit.uv[hit_index]
    mat, fp_d, fp_o = _material(scene, uv)
    front = dot(n, wo) > 0.0
    spec = cfg.specular_enabled
    uu = u.reshape(-1, 6)[hit_index]

    lobes = []

    # light sample
    wl, pdf_l, _ = envmap_sample(senv, uu[:, 2:4])
    cos_l = dot(n, wl)
    ok = front & (cos_l > 0.0) & (pdf_l > 0.0)
    if cfg.shadows_enabled and np.any(ok):
        vis = np.zeros(len(ok), dtype=bool)
        vis[ok] = ~occluded(scene.mesh, p[ok], wl[ok])
        ok &= vis
    pdf_bl = brdf_pdf(mat, n, wo, wl, spec)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale_l = np.where(ok, cos_l / (pdf_l + pdf_bl), 0.0)
    _, fp_l = envmap_lookup(env, wl, return_footprint=True)
    lobes.append(LobeSamples(wl, scale_l, fp_env=fp_l))

    # BRDF sample
    wb, pdf_b, _ = sample_brdf_direction(mat, n, wo, uu[:, 4:6], spec)
    cos_b = dot(n, wb)
    ok = front & (cos_b > 0.0) & (pdf_b > 0.0)
    if cfg.shadows_enabled and np.any(ok):
        vis = np.zeros(len(ok), dtype=bool)
        vis[ok] = ~occluded(scene.mesh, p[ok], wb[ok])
        ok &= vis
    pdf_lb = envmap_pdf(senv, wb)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale_b = np.where(ok, cos_b / (pdf_b + pdf_lb), 0.0)
    _, fp_b = envmap_lookup(env, wb, return_footprint=True)
    lobes.append(LobeSamples(wb, scale_b, fp_env=fp_b))

    # analytic lights, evaluated directly
    for light in scene.lights:
        if hasattr(light, "position"):
            d = np.asarray(light.position, dtype=np.float64) - p
            dist = np.linalg.norm(d, axis=-1)
            wlt = d / dist[:, None]
            irr = light.intensity / (dist * dist)
            tmax = dist
        else:
            wlt = np.broadcast_to(-np.asarray(light.direction, dtype=np.float64), p.shape)
            wlt = wlt / np.linalg.norm(wlt, axis=-1, keepdims=True)
            irr = np.full(len(p), light.irradiance)
            tmax = None
        cos_t = dot(n, wlt)
        ok = front & (cos_t > 0.0)
        if cfg.shadows_enabled and np.any(ok):
            vis = np.zeros(len(ok), dtype=bool)
            tm = None if tmax is None else tmax[ok] * (1.0 - 1e-6)
            vis[ok] = ~occluded(scene.mesh, p[ok], wlt[ok], tm)
            ok &= vis
        scale_t = np.where(ok, cos_t * irr, 0.0)
        lobes.append(LobeSamples(np.ascontiguousarray(wlt), scale_t, radiance=np.ones(3)))

    fp_bg = None
    if cfg.background == "env" and len(miss_index):
        _, fp_bg = envmap_lookup(env, dirs[miss_index], return_footprint=True)

    return Tape(_camera_key(camera), cfg, (h, w), spp, hit_index, n, wo, fp_d, fp_o, lobes,
                miss_index, fp_bg)


def _tape_material(scene, tape):
    a = gather(scene.k_d.data, tape.fp_d)
    orm = gather(scene.k_orm.data, tape.fp_orm)
    return Material.from_orm(a, orm)


def _lobe_radiance(scene, lobe):
    if lobe.fp_env is None:
        return np.broadcast_to(lobe.radiance, lobe.w.shape)
    return gather(scene.env.data, lobe.fp_env)


def shade(scene: Scene, tape: Tape):
    """Evaluate a tape against the scene's current textures and environment.

    Returns ``(rgb_linear, nan_count)``.
    """
    h, w = tape.shape
    n_total = tape.spp * h * w
    spec = tape.config.specular_enabled
    mat = _tape_material(scene, tape)
    values = np.zeros((n_total, 3))
    acc = np.zeros((len(tape.hit_index), 3))
    for lobe in tape.lobes:
        f = eval_brdf(mat, tape.n, lobe.w, tape.wo, spec)
        acc += (f * _lobe_radiance(scene, lobe)) * lobe.scale[:, None]
    values[tape.hit_index] = acc
    if tape.fp_background is not None:
        values[tape.miss_index] = gather(scene.env.data, tape.fp_background)
    bad = ~np.isfinite(values)
    nan_count = int(np.any(bad, axis=-1).sum())
    if nan_count:
        values[bad] = 0.0
    rgb = values.reshape(tape.spp, h, w, 3).mean(axis=0)
    return rgb, nan_count


def render_aux(scene: Scene, camera):
    """Pixel-center texture fetches: ``(albedo, orm, normal, mask, record)``."""
    h, w = camera.height, camera.width
    orig, dirs = camera.pixel_centers()
    hit = ray_intersect(scene.mesh, orig.reshape(-1, 3), dirs.reshape(-1, 3))
    mask = hit.mask
    uv = np.where(mask[:, None], hit.uv, 0.0)
    albedo, fp_d = sample_texture(scene.k_d, uv)
    orm, fp_o = sample_texture(scene.k_orm, uv)
    m3 = mask[:, None]
    albedo = np.where(m3, albedo, 0.0).reshape(h, w, 3)
    orm = np.where(m3, orm, 0.0).reshape(h, w, 3)
    normal = np.where(m3, hit.normal, 0.0).reshape(h, w, 3)
    # zero weights on background pixels so the adjoint ignores them
    fp_d = Footprint(fp_d.index, fp_d.weight * m3)
    fp_o = Footprint(fp_o.index, fp_o.weight * m3)
    record = AuxRecord((h, w), mask.reshape(h, w), fp_d, fp_o, scene.k_d.data.shape, scene.k_orm.data.shape)
    return albedo, orm, normal, mask.reshape(h, w), record


def render(scene: Scene, camera, cfg: RenderConfig = RenderConfig(), sampling_env=None) -> RenderBuffers:
    """Render RGB plus auxiliary buffers; identical inputs give identical bits."""
    t0 = time.perf_counter()
    tape = trace_samples(scene, camera, cfg, sampling_env)
    rgb, nan_count = shade(scene, tape)
    albedo, orm, normal, mask, aux = render_aux(scene, camera)
    report = RenderReport(camera.width * camera.height, cfg.spp, cfg.spp * camera.width * camera.height,
                          nan_count, time.perf_counter() - t0)
    return RenderBuffers(rgb, albedo, orm, normal, mask, report, tape, aux)


@dataclass
class SceneGradients:
    k_d: np.ndarray
    k_orm: np.ndarray
    env: np.ndarray


def backprop_render(scene: Scene, camera, cfg: RenderConfig, grad_rgb, forward) -> SceneGradients:
    """Adjoint of :func:`shade` for the tape stored by the forward render.

    ``forward`` is the :class:`RenderBuffers` (or bare :class:`Tape`) returned
    by the matching forward call. Sample directions, pdfs, MIS weights and
    visibility are held constant.
    """
    tape = forward.tape if isinstance(forward, RenderBuffers) else forward
    if tape is None or tape.config != cfg or tape.camera_key != _camera_key(camera):
        raise RenderContractError("backprop_render must use the camera, config and seed of the forward pass")
    h, w = tape.shape
    grad_rgb = np.asarray(grad_rgb, dtype=np.float64)
    if grad_rgb.shape != (h, w, 3):
        raise RenderContractError(f"gradient shape {grad_rgb.shape} does not match image {(h, w, 3)}")
    spec = cfg.specular_enabled
    g_all = np.broadcast_to(grad_rgb[None] / tape.spp, (tape.spp, h, w, 3)).reshape(-1, 3)
    g = g_all[tape.hit_index]

    mat = _tape_material(scene, tape)
    d_a = np.zeros((len(g), 3))
    d_r = np.zeros(len(g))
    d_m = np.zeros(len(g))
    g_env = np.zeros(scene.env.data.shape)
    for lobe in tape.lobes:
        f, df_da, df_dr, df_dm = eval_brdf_gradients(mat, tape.n, lobe.w, tape.wo, spec)
        rad = _lobe_radiance(scene, lobe)
        gl = g * rad * lobe.scale[:, None]
        d_a += gl * df_da
        d_r += np.sum(gl * df_dr, axis=-1)
        d_m += np.sum(gl * df_dm, axis=-1)
        if lobe.fp_env is not None:
            g_env += scatter(g * f * lobe.scale[:, None], lobe.fp_env, scene.env.data.shape)
    if tape.fp_background is not None:
        g_env += scatter(g_all[tape.miss_index], tape.fp_background, scene.env.data.shape)

    g_kd = scatter(d_a, tape.fp_d, scene.k_d.data.shape)
    g_orm = scatter(np.stack([np.zeros_like(d_r), d_r, d_m], axis=-1), tape.fp_orm, scene.k_orm.data.shape)
    return SceneGradients(g_kd, g_orm, g_env)


def backprop_aux(record: AuxRecord, grad_albedo=None, grad_orm=None):
    """Exact adjoint of the pixel-center texture fetch. Returns ``(g_kd, g_orm)``."""
    h, w = record.shape
    g_kd = np.zeros(record.tex_shape_d)
    g_orm = np.zeros(record.tex_shape_orm)
    if grad_albedo is not None:
        g_kd = scatter(np.asarray(grad_albedo).reshape(-1, 3), record.fp_d, record.tex_shape_d)
    if grad_orm is not None:
        g_orm = scatter(np.asarray(grad_orm).reshape(-1, 3), record.fp_orm, record.tex_shape_orm)
    return g_kd, g_orm


# ---------------------------------------------------------------- tonemapping

def tonemap_srgb(x):
    x = np.clip(np.asarray(x, dtype=np.float64), 0.0, 1.0)
    return np.where(x <= 0.0031308, 12.92 * x, 1.055 * np.power(x, 1.0 / 2.4) - 0.055)


def tonemap_srgb_grad(x):
    """d tonemap / dx, zero where the input is clamped."""
    x = np.asarray(x, dtype=np.float64)
    safe = np.maximum(x, 0.0031308)
    d = np.where(x <= 0.0031308, 12.92, 1.055 / 2.4 * np.power(safe, 1.0 / 2.4 - 1.0))
    return np.where((x < 0.0) | (x > 1.0), 0.0, d)


def inverse_tonemap_srgb(y):
    y = np.clip(np.asarray(y, dtype=np.float64), 0.0, 1.0)
    return np.where(y <= 0.04045, y / 12.92, np.power((y + 0.055) / 1.055, 2.4))
