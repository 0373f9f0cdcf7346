"""Procedural objects, materials, illuminants and camera rigs, and the
triplet dataset renderer used for prior training and held-out evaluation."""
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import map_coordinates

from .renderer import RenderConfig, render, tonemap_srgb
from .scene import Camera, EnvironmentMap, PointLight, Scene, SunLight, TextureMap
from .scene.envmap import uv_to_direction
from .scene.io import write_manifest, write_obj, write_pfm, write_png
from .scene.mesh import Mesh
from .scene.shapes import SHAPES, make_shape

FAMILIES = ("checker", "fbm-noise", "region-constant", "gradient")
ILLUMINANTS = ("procedural-env", "point-150", "sun")
OBJECT_RADIUS = 0.5


@dataclass
class SceneRecipe:
    seed: int = 0
    shape: str = "sphere"
    albedo_family: str = "region-constant"
    orm_family: str = "region-constant"
    illuminant: str = "procedural-env"
    n_views: int = 30
    resolution: int = 128
    texture_size: int = 128
    spp: int = 16
    env_height: int = 32
    env_scale: float = 1.0

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValueError(f"unknown shape {self.shape!r}")
        for fam in (self.albedo_family, self.orm_family):
            if fam not in FAMILIES:
                raise ValueError(f"unknown texture family {fam!r}; expected one of {FAMILIES}")
        if self.illuminant not in ILLUMINANTS:
            raise ValueError(f"unknown illuminant {self.illuminant!r}; expected one of {ILLUMINANTS}")
        if self.n_views < 1:
            raise ValueError("n_views must be >= 1")
        if self.resolution % 4:
            raise ValueError("resolution must be a multiple of 4")

    def to_dict(self):
        return asdict(self)


def random_recipe(seed, **overrides):
    """Shape, per-map texture families and illuminant drawn uniformly."""
    rng = np.random.default_rng([seed, 99])
    d = dict(seed=seed, shape=str(rng.choice(sorted(SHAPES))),
             albedo_family=str(rng.choice(FAMILIES)), orm_family=str(rng.choice(FAMILIES)),
             illuminant=str(rng.choice(ILLUMINANTS)))
    d.update(overrides)
    return SceneRecipe(**d)


def _rng(seed, stream):
    return np.random.default_rng([int(seed), stream])


# ------------------------------------------------------------------ cameras

def sample_cameras(seed, n=30, width=128, height=128, fov_deg=45.0):
    """Cameras on a hemisphere shell looking at the origin."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = _rng(seed, 1)
    az = np.radians(rng.uniform(0.0, 360.0, n))
    el = np.radians(rng.uniform(-15.0, 90.0, n))
    r = rng.uniform(1.5, 2.0, n)
    pos = np.stack([r * np.cos(el) * np.cos(az), r * np.cos(el) * np.sin(az), r * np.sin(el)], -1)
    return [Camera(tuple(p), (0.0, 0.0, 0.0), (0.0, 0.0, 1.0), fov_deg, width, height) for p in pos]


# ------------------------------------------------------------------ illumination

def procedural_env(rng, height=32, scale=1.0):
    """Sky/ground gradient plus 1-3 gaussian blobs with peak radiance in [2, 20]."""
    w = 2 * height
    v, u = np.meshgrid((np.arange(height) + 0.5) / height, (np.arange(w) + 0.5) / w, indexing="ij")
    d = uv_to_direction(u, v)
    z = d[..., 2:3]
    sky = rng.uniform([0.3, 0.4, 0.6], [0.6, 0.7, 1.0])
    ground = rng.uniform(0.1, 0.4, 3) * np.array([1.0, 0.9, 0.8])
    s = np.clip((z + 0.2) / 0.4, 0.0, 1.0)
    s = s * s * (3.0 - 2.0 * s)
    data = ground * (1.0 - s) + sky * s * (0.5 + 0.5 * np.clip(z, 0.0, 1.0))
    for _ in range(int(rng.integers(1, 4))):
        cz = rng.uniform(-0.2, 1.0)
        phi = rng.uniform(0.0, 2.0 * np.pi)
        c = np.array([np.sqrt(1 - cz * cz) * np.cos(phi), np.sqrt(1 - cz * cz) * np.sin(phi), cz])
        width = rng.uniform(0.08, 0.25)
        peak = rng.uniform(2.0, 20.0)
        tint = rng.uniform(0.8, 1.0, 3)
        ang = np.arccos(np.clip(d @ c, -1.0, 1.0))
        data = data + peak * tint * np.exp(-0.5 * (ang / width) ** 2)[..., None]
    return EnvironmentMap(scale * data)


def generate_illuminant(seed, kind, reference_camera=None, env_height=32, env_scale=1.0):
    """Returns ``(env, lights)``. Point lights follow the camera, so for
    ``point-150`` the light list holds one template light at the reference camera."""
    rng = _rng(seed, 2)
    if kind == "procedural-env":
        return procedural_env(rng, env_height, env_scale), []
    black = EnvironmentMap(np.zeros((env_height, 2 * env_height, 3)))
    if kind == "point-150":
        pos = reference_camera.position if reference_camera is not None else (0.0, 0.0, 2.0)
        return black, [PointLight(tuple(pos), 150.0)]
    if kind == "sun":
        if reference_camera is not None:
            direction = np.subtract(reference_camera.target, reference_camera.position)
        else:
            direction = np.array([0.0, 0.0, -1.0])
        direction = direction / np.linalg.norm(direction)
        return black, [SunLight(tuple(direction), float(rng.uniform(10.0, 20.0)))]
    raise ValueError(f"unknown illuminant {kind!r}")


# ------------------------------------------------------------------ materials

def _random_material(rng):
    albedo = rng.uniform(0.05, 0.95, 3)
    rough = rng.uniform(0.2, 0.9)
    metal = rng.uniform(0.0, 0.2) if rng.random() < 0.7 else rng.uniform(0.6, 1.0)
    return albedo, np.array([0.0, rough, metal])


def _texel_uv(size):
    v, u = np.meshgrid((np.arange(size) + 0.5) / size, (np.arange(size) + 0.5) / size, indexing="ij")
    return u, v


def _fbm(rng, size, octaves=4):
    out = np.zeros((size, size))
    amp, total = 1.0, 0.0
    for k in range(octaves):
        n = 2 ** (k + 2) + 1
        grid = rng.random((n, n))
        c = (np.arange(size) + 0.5) / size * (n - 1)
        yy, xx = np.meshgrid(c, c, indexing="ij")
        out += amp * map_coordinates(grid, [yy, xx], order=1, mode="nearest")
        total += amp
        amp *= 0.5
    out /= total
    lo, hi = out.min(), out.max()
    return (out - lo) / (hi - lo) if hi > lo else out


def region_layout(seed, size):
    """Voronoi partition of UV space into 2-5 regions; returns (labels, n)."""
    rng = _rng(seed, 3)
    n = int(rng.integers(2, 6))
    sites = rng.random((n, 2))
    u, v = _texel_uv(size)
    d = (u[..., None] - sites[:, 0]) ** 2 + (v[..., None] - sites[:, 1]) ** 2
    return np.argmin(d, axis=-1), n


def _family_map(family, seed, size, which, palette):
    """``which`` is 0 for albedo, 1 for ORM; ``palette`` the region materials."""
    rng = _rng(seed, 10 + which)
    a0, o0 = _random_material(rng)
    a1, o1 = _random_material(rng)
    lo, hi = (a0, a1) if which == 0 else (o0, o1)
    u, v = _texel_uv(size)
    if family == "region-constant":
        labels, _ = region_layout(seed, size)
        return palette[which][labels]
    if family == "checker":
        cells = int(rng.integers(2, 9))
        t = ((np.floor(u * cells) + np.floor(v * cells)) % 2)[..., None]
    elif family == "gradient":
        ang = rng.uniform(0.0, 2.0 * np.pi)
        t = (np.cos(ang) * (u - 0.5) + np.sin(ang) * (v - 0.5)) / np.sqrt(0.5) + 0.5
        t = np.clip(t, 0.0, 1.0)[..., None]
    elif family == "fbm-noise":
        t = _fbm(rng, size)[..., None]
    else:
        raise ValueError(f"unknown texture family {family!r}")
    return lo * (1.0 - t) + hi * t


def region_palette(seed):
    """Per-region (albedo, orm) values for the region-constant family."""
    _, n = region_layout(seed, 4)
    rng = _rng(seed, 4)
    mats = [_random_material(rng) for _ in range(n)]
    return np.array([m[0] for m in mats]), np.array([m[1] for m in mats])


def _fit_radius(mesh: Mesh, radius=OBJECT_RADIUS):
    s = radius / np.max(np.linalg.norm(mesh.positions, axis=-1))
    return Mesh(mesh.positions * s, mesh.normals, mesh.uvs, mesh.faces)


def generate_object(recipe: SceneRecipe):
    """Returns ``(mesh, k_d, k_orm)`` for the recipe."""
    mesh = _fit_radius(make_shape(recipe.shape))
    palette = region_palette(recipe.seed)
    size = recipe.texture_size
    k_d = np.clip(_family_map(recipe.albedo_family, recipe.seed, size, 0, palette), 0.0, 1.0)
    k_orm = np.clip(_family_map(recipe.orm_family, recipe.seed, size, 1, palette), 0.0, 1.0)
    k_orm[..., 0] = 0.0
    return mesh, TextureMap(k_d, "albedo"), TextureMap(k_orm, "orm")


# ------------------------------------------------------------------ dataset

@dataclass
class Dataset:
    out_dir: Path
    recipe: SceneRecipe
    cameras: list
    scene: Scene
    view_lights: list = field(repr=False, default_factory=list)


def _light_dict(light):
    if isinstance(light, PointLight):
        return {"type": "point", "position": list(light.position), "power": light.power}
    return {"type": "sun", "direction": list(light.direction), "power": light.power}


def lights_from_dicts(items):
    out = []
    for d in items:
        if d["type"] == "point":
            out.append(PointLight(tuple(d["position"]), float(d["power"])))
        elif d["type"] == "sun":
            out.append(SunLight(tuple(d["direction"]), float(d["power"])))
        else:
            raise ValueError(f"unknown light type {d['type']!r}")
    return out


def view_seed(recipe_seed, index):
    return int(np.random.SeedSequence([int(recipe_seed), 7, int(index)]).generate_state(1)[0])


def view_lights(recipe: SceneRecipe, lights, camera):
    if recipe.illuminant == "point-150":
        return [PointLight(camera.position, lights[0].power)]
    return list(lights)


def render_view(scene: Scene, camera, spp, seed):
    """``(x_srgb, albedo, orm, mask)`` for one view."""
    buf = render(scene, camera, RenderConfig(spp=spp, seed=seed, background="env"))
    return tonemap_srgb(buf.rgb_linear), buf.albedo, buf.orm, buf.mask


def render_dataset(recipe: SceneRecipe, out_dir, progress=None) -> Dataset:
    """Write ``views/NNN_{rgb,albedo,orm}.png``, ``env.pfm``, ``mesh.obj``,
    ground-truth ``k_d``/``k_orm`` maps, ``manifest.json`` and ``recipe.json``."""
    out = Path(out_dir)
    try:
        (out / "views").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create dataset directory {out}: {exc}") from exc
    mesh, k_d, k_orm = generate_object(recipe)
    cams = sample_cameras(recipe.seed, recipe.n_views, recipe.resolution, recipe.resolution)
    env, lights = generate_illuminant(recipe.seed, recipe.illuminant, cams[0], recipe.env_height,
                                      recipe.env_scale)
    scene = Scene(mesh, k_d, k_orm, env, lights)

    views, extras, per_view = [], [], []
    for i, cam in enumerate(cams):
        vl = view_lights(recipe, lights, cam)
        seed = view_seed(recipe.seed, i)
        x, alb, orm, _ = render_view(Scene(mesh, k_d, k_orm, env, vl), cam, recipe.spp, seed)
        rel = f"views/{i:03d}_rgb.png"
        _write(write_png, out / rel, x)
        _write(write_png, out / f"views/{i:03d}_albedo.png", alb)
        _write(write_png, out / f"views/{i:03d}_orm.png", orm)
        views.append((cam, rel))
        extras.append({"render_seed": seed, "spp": recipe.spp, "lights": [_light_dict(l) for l in vl]})
        per_view.append(vl)
        if progress:
            progress(i, len(cams))

    _write(write_pfm, out / "env.pfm", env.data)
    _write(write_obj, out / "mesh.obj", mesh)
    _write(write_pfm, out / "k_d.pfm", k_d.data)
    _write(write_pfm, out / "k_orm.pfm", k_orm.data)
    _write(write_png, out / "k_d.png", k_d.data)
    _write(write_png, out / "k_orm.png", k_orm.data)
    (out / "recipe.json").write_text(json.dumps(recipe.to_dict(), indent=2, sort_keys=True))
    write_manifest(out / "manifest.json", views, {"recipe": recipe.to_dict()}, extras)
    return Dataset(out, recipe, cams, scene, per_view)


def _write(fn, path, data):
    try:
        fn(path, data)
    except OSError as exc:
        raise OSError(f"failed writing {path}: {exc}") from exc
