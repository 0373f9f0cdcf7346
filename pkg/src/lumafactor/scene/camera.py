from dataclasses import asdict, dataclass

import numpy as np


@dataclass
class Camera:
    position: tuple
    target: tuple = (0.0, 0.0, 0.0)
    up: tuple = (0.0, 0.0, 1.0)
    fov_deg: float = 45.0
    width: int = 128
    height: int = 128

    def __post_init__(self):
        self.position = tuple(float(x) for x in self.position)
        self.target = tuple(float(x) for x in self.target)
        self.up = tuple(float(x) for x in self.up)
        self.fov_deg = float(self.fov_deg)
        self.width = int(self.width)
        self.height = int(self.height)
        if np.allclose(self.position, self.target):
            raise ValueError("camera position must differ from target")
        if not 1.0 < self.fov_deg < 179.0:
            raise ValueError(f"fov_deg must lie in (1, 179), got {self.fov_deg}")

    def to_dict(self):
        d = asdict(self)
        d["position"] = list(self.position)
        d["target"] = list(self.target)
        d["up"] = list(self.up)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(d["position"], d["target"], d["up"], d["fov_deg"], d["width"], d["height"])

    def basis(self):
        pos = np.array(self.position)
        fwd = np.array(self.target) - pos
        fwd /= np.linalg.norm(fwd)
        up = np.array(self.up)
        right = np.cross(fwd, up)
        if np.linalg.norm(right) < 1e-8:
            # looking along the up hint
            up = np.array([0.0, 1.0, 0.0]) if abs(fwd[1]) < 0.9 else np.array([1.0, 0.0, 0.0])
            right = np.cross(fwd, up)
        right /= np.linalg.norm(right)
        true_up = np.cross(right, fwd)
        return pos, fwd, right, true_up

    def generate_rays(self, px, py):
        """World-space rays through continuous pixel coordinates.

        ``px`` runs along the columns and ``py`` down the rows; pixel (i, j)
        covers [j, j + 1) x [i, i + 1).
        """
        pos, fwd, right, up = self.basis()
        tan_half = np.tan(np.radians(self.fov_deg) * 0.5)
        aspect = self.width / self.height
        sx = (2.0 * np.asarray(px) / self.width - 1.0) * tan_half * aspect
        sy = (1.0 - 2.0 * np.asarray(py) / self.height) * tan_half
        d = fwd + sx[..., None] * right + sy[..., None] * up
        d = d / np.linalg.norm(d, axis=-1, keepdims=True)
        return np.broadcast_to(pos, d.shape), d

    def pixel_centers(self):
        j, i = np.meshgrid(np.arange(self.width) + 0.5, np.arange(self.height) + 0.5)
        return self.generate_rays(j, i)
