"""v-prediction training of the conditional denoiser on (x, I_d, I_orm) triplets."""
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from ..scene.io import read_manifest, read_png
from . import codec
from .denoiser import Denoiser, DenoiserParams
from .schedule import COSINE

log = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class Triplet:
    x: np.ndarray
    albedo: np.ndarray
    orm: np.ndarray

    def __post_init__(self):
        if not (self.x.shape == self.albedo.shape == self.orm.shape):
            raise ValueError("triplet images must share a shape")
        if self.x.shape[0] % codec.FACTOR or self.x.shape[1] % codec.FACTOR:
            raise ValueError(f"image size must be a multiple of {codec.FACTOR}")


@dataclass
class TrainConfig:
    steps: int = 2000
    batch_size: int = 8
    patch: int = 64
    lr: float = 3e-3
    cfg_dropout: float = 0.05
    seed: int = 0
    width: int = 32
    n_freqs: int = 4
    lr_schedule: str = "constant"
    t_range: tuple = (0.02, 0.98)
    grad_clip: float = 1.0
    augment: bool = False

    def __post_init__(self):
        if not (np.isfinite(self.lr) and self.lr > 0):
            raise ValueError(f"lr must be a positive number, got {self.lr}")
        if self.steps < 0 or self.batch_size < 1 or self.patch < 4:
            raise ValueError("need steps >= 0, batch_size >= 1 and patch >= 4")
        if not 0.0 <= self.cfg_dropout <= 1.0:
            raise ValueError("cfg_dropout must be in [0, 1]")
        lo, hi = self.t_range
        if not 0.0 < lo < hi <= 1.0:
            raise ValueError("t_range must satisfy 0 < lo < hi <= 1")


@dataclass
class TrainResult:
    params: DenoiserParams
    losses: list
    dropped: np.ndarray = field(repr=False)   # (steps, batch) bool, conditioning zeroed
    timesteps: np.ndarray = field(repr=False)  # (steps, batch)


def load_triplets(dataset_dirs):
    """Read every view of the given ``render_dataset`` output directories."""
    out = []
    for d in dataset_dirs:
        d = Path(d)
        _, views = read_manifest(d / "manifest.json")
        for _, image_path in views:
            stem = Path(image_path).name.replace("_rgb.png", "")
            vdir = d / Path(image_path).parent
            out.append(Triplet(read_png(d / image_path), read_png(vdir / f"{stem}_albedo.png"),
                               read_png(vdir / f"{stem}_orm.png")))
    return out


def _crop(tr: Triplet, size, rng):
    h, w = tr.x.shape[:2]
    ph, pw = min(size, h), min(size, w)
    ph -= ph % codec.FACTOR
    pw -= pw % codec.FACTOR
    i = int(rng.integers(0, (h - ph) // codec.FACTOR + 1)) * codec.FACTOR
    j = int(rng.integers(0, (w - pw) // codec.FACTOR + 1)) * codec.FACTOR
    sl = (slice(i, i + ph), slice(j, j + pw))
    return tr.x[sl], tr.albedo[sl], tr.orm[sl]


def _augment(x, albedo, orm, rng):
    """Random dihedral transform of all three images plus a shared channel
    permutation of image and albedo. Permuting both is the same as permuting
    the illuminant's colour channels, so the triplet stays a valid render."""
    k = int(rng.integers(0, 4))
    flip = bool(rng.integers(0, 2))
    perm = rng.permutation(3)
    if x.shape[0] != x.shape[1]:
        k -= k % 2  # quarter turns would change the patch shape

    def geo(a):
        a = np.rot90(a, k, axes=(0, 1))
        return a[:, ::-1] if flip else a
    return geo(x)[..., perm], geo(albedo)[..., perm], geo(orm)


def train_denoiser(dataset, cfg: TrainConfig = TrainConfig(), schedule=COSINE, progress=None) -> TrainResult:
    """Minimise E || eps_theta(E(x), z_t, t) - v_t ||^2 with Adam.

    The conditioning dropout draws from its own random stream, so changing
    ``cfg_dropout`` only changes which samples see zeroed conditioning.
    """
    if not dataset:
        raise ValueError("dataset is empty")
    torch.manual_seed(cfg.seed)
    model = Denoiser(width=cfg.width, n_freqs=cfg.n_freqs)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    if cfg.lr_schedule == "cosine":
        sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=max(cfg.steps, 1))
    elif cfg.lr_schedule == "constant":
        sched = None
    else:
        raise ValueError(f"unknown lr_schedule {cfg.lr_schedule!r}")
    data_rng = np.random.default_rng([cfg.seed, 0])
    drop_rng = np.random.default_rng([cfg.seed, 1])

    # patches in a batch must share a shape; crop everything to the smallest image
    min_side = min(min(t.x.shape[:2]) for t in dataset)
    patch = min(cfg.patch, min_side)

    losses = []
    dropped = np.zeros((cfg.steps, cfg.batch_size), dtype=bool)
    tsteps = np.zeros((cfg.steps, cfg.batch_size))
    ref = None
    model.train()
    for step in range(cfg.steps):
        idx = data_rng.integers(0, len(dataset), cfg.batch_size)
        crops = [_crop(dataset[i], patch, data_rng) for i in idx]
        if cfg.augment:
            crops = [_augment(*c, data_rng) for c in crops]
        x = np.stack([c[0] for c in crops])
        z = codec.encode_pair(np.stack([c[1] for c in crops]), np.stack([c[2] for c in crops]))
        cond = codec.encode(x)
        t = cfg.t_range[0] + (cfg.t_range[1] - cfg.t_range[0]) * data_rng.random(cfg.batch_size)
        eps = data_rng.standard_normal(z.shape)
        a, s = schedule(t[:, None, None, None])
        z_t = a * z + s * eps
        v = a * eps - s * z
        drop = drop_rng.random(cfg.batch_size) < cfg.cfg_dropout
        cond[drop] = 0.0
        dropped[step] = drop
        tsteps[step] = t

        to_t = lambda arr: torch.from_numpy(np.ascontiguousarray(arr.transpose(0, 3, 1, 2), dtype=np.float32))
        pred = model(to_t(cond), to_t(z_t), torch.from_numpy(t.astype(np.float32)))
        loss = torch.mean((pred - to_t(v)) ** 2)
        opt.zero_grad()
        loss.backward()
        if cfg.grad_clip:
            torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
        opt.step()
        if sched is not None:
            sched.step()

        value = float(loss.item())
        losses.append(value)
        if not np.isfinite(value):
            raise TrainingDivergedError(f"non-finite loss at step {step}")
        if step == min(9, cfg.steps - 1):
            ref = float(np.mean(losses))
        if ref is not None and value > 10.0 * ref:
            raise TrainingDivergedError(f"loss {value:.4g} at step {step} exceeds 10x initial {ref:.4g}")
        if progress and step % 200 == 0:
            progress(step, value)
    model.eval()
    return TrainResult(DenoiserParams(model), losses, dropped, tsteps)


def write_loss_curve(path, losses):
    with open(path, "w") as f:
        f.write("step,loss\n")
        for i, v in enumerate(losses):
            f.write(f"{i},{v!r}\n")
