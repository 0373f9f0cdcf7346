"""Scene assets: mesh, textures, environment map, analytic lights and cameras."""
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .camera import Camera
from .envmap import EnvironmentMap, envmap_lookup, envmap_pdf, envmap_sample
from .io import (AssetParseError, read_obj, read_pfm, read_png, write_obj, write_pfm,
                 write_png)
from .mesh import Hit, Mesh, occluded, ray_intersect, ray_intersect_brute_force
from .texture import TextureMap, sample_texture


@dataclass
class PointLight:
    """Isotropic point light; ``power`` in watts-like scene units."""

    position: tuple
    power: float = 150.0

    @property
    def intensity(self):
        return self.power / (4.0 * np.pi)


@dataclass
class SunLight:
    """Directional light; ``direction`` points from the light towards the scene."""

    direction: tuple
    power: float = 15.0

    @property
    def irradiance(self):
        return self.power / (4.0 * np.pi)


@dataclass
class Scene:
    mesh: Mesh
    k_d: TextureMap
    k_orm: TextureMap
    env: EnvironmentMap
    lights: list = field(default_factory=list)

    def with_textures(self, k_d=None, k_orm=None, env=None):
        return Scene(self.mesh, k_d or self.k_d, k_orm or self.k_orm, env or self.env, self.lights)


def _load_texture(path, role):
    path = Path(path)
    if path.suffix.lower() == ".pfm":
        data = read_pfm(path).astype(np.float64)
    else:
        data = read_png(path)
    return TextureMap(np.clip(data, 0.0, 1.0), role)


def load_assets(paths) -> Scene:
    """Load a scene from a mapping with keys ``mesh``, ``k_d``, ``k_orm``, ``env``."""
    mesh = read_obj(paths["mesh"])
    k_d = _load_texture(paths["k_d"], "albedo")
    k_orm = _load_texture(paths["k_orm"], "orm")
    env = EnvironmentMap(read_pfm(paths["env"]).astype(np.float64))
    return Scene(mesh, k_d, k_orm, env)


def save_assets(scene: Scene, out_dir):
    """Write mesh.obj, k_d.{png,pfm}, k_orm.{png,pfm} and env.pfm; return the path map."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"mesh": out / "mesh.obj", "k_d": out / "k_d.pfm", "k_orm": out / "k_orm.pfm",
             "env": out / "env.pfm"}
    write_obj(paths["mesh"], scene.mesh)
    write_pfm(paths["k_d"], scene.k_d.data)
    write_pfm(paths["k_orm"], scene.k_orm.data)
    write_png(out / "k_d.png", scene.k_d.data)
    write_png(out / "k_orm.png", scene.k_orm.data)
    write_pfm(paths["env"], scene.env.data)
    return paths


__all__ = [
    "AssetParseError", "Camera", "EnvironmentMap", "Hit", "Mesh", "PointLight", "Scene",
    "SunLight", "TextureMap", "envmap_lookup", "envmap_pdf", "envmap_sample", "load_assets",
    "occluded", "ray_intersect", "ray_intersect_brute_force", "read_obj", "read_pfm",
    "read_png", "sample_texture", "save_assets", "write_obj", "write_pfm", "write_png",
]
