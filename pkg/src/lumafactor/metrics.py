"""PSNR / SSIM / L1, per-channel least-squares rescaling, and the per-view
evaluation report."""
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .scene.envmap import LUMA

PSNR_INF = float("inf")
SSIM_WINDOW = 8
C1 = 0.01 ** 2
C2 = 0.03 ** 2
SCALE_RANGE = (0.1, 10.0)


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return a, b


def _select(a, mask):
    if mask is None:
        return a.reshape(-1)
    return a[np.asarray(mask, dtype=bool)].reshape(-1)


def psnr(a, b, peak=1.0, mask=None):
    a, b = _pair(a, b)
    d = _select(a - b, mask)
    mse = float(np.mean(d * d))
    if mse == 0.0:
        return PSNR_INF
    return 10.0 * math.log10(peak * peak / mse)


def l1(a, b, mask=None):
    a, b = _pair(a, b)
    return float(np.mean(np.abs(_select(a - b, mask))))


def to_gray(img):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3 and img.shape[-1] == 3:
        return img @ LUMA
    return img


def ssim(a, b, window=SSIM_WINDOW):
    """Mean SSIM over every ``window`` x ``window`` uniform window (stride 1)
    of the luma images."""
    a, b = _pair(a, b)
    ga, gb = to_gray(a), to_gray(b)
    if min(ga.shape) < window:
        raise ValueError(f"image {ga.shape} smaller than the {window}x{window} SSIM window")
    wa = sliding_window_view(ga, (window, window))
    wb = sliding_window_view(gb, (window, window))
    mu_a = wa.mean(axis=(-1, -2))
    mu_b = wb.mean(axis=(-1, -2))
    var_a = wa.var(axis=(-1, -2))
    var_b = wb.var(axis=(-1, -2))
    cov = (wa * wb).mean(axis=(-1, -2)) - mu_a * mu_b
    num = (2 * mu_a * mu_b + C1) * (2 * cov + C2)
    den = (mu_a ** 2 + mu_b ** 2 + C1) * (var_a + var_b + C2)
    return float(np.mean(num / den))


def rescale_channels(pred, gt, mask=None):
    """Per-channel least-squares scale of ``pred`` onto ``gt`` over the mask.

    Scales are clamped to [0.1, 10]; a channel with no energy keeps scale 1.
    Returns ``(scaled, scales)`` with ``scaled`` clamped to [0, 1].
    """
    pred, gt = _pair(pred, gt)
    c = pred.shape[-1]
    p = pred.reshape(-1, c) if mask is None else pred[np.asarray(mask, dtype=bool)].reshape(-1, c)
    g = gt.reshape(-1, c) if mask is None else gt[np.asarray(mask, dtype=bool)].reshape(-1, c)
    num = np.sum(p * g, axis=0)
    den = np.sum(p * p, axis=0)
    scales = np.ones(c)
    ok = den > 0.0
    scales[ok] = np.clip(num[ok] / den[ok], *SCALE_RANGE)
    return np.clip(pred * scales, 0.0, 1.0), scales


# ------------------------------------------------------------------ report

@dataclass
class ClassMetrics:
    psnr: list = field(default_factory=list)
    ssim: list = field(default_factory=list)
    l1: list = field(default_factory=list)

    def means(self):
        out = {}
        for k in ("psnr", "ssim", "l1"):
            vals = getattr(self, k)
            if vals:
                out[k] = float(np.mean(vals))
        return out


@dataclass
class EvalReport:
    relit: ClassMetrics = field(default_factory=ClassMetrics)
    albedo: ClassMetrics = field(default_factory=ClassMetrics)
    orm: ClassMetrics = field(default_factory=ClassMetrics)
    n_views: int = 0
    n_samples: int = 1
    config_hash: str = ""

    def means(self):
        return {"relit": self.relit.means(), "albedo": self.albedo.means(), "orm": self.orm.means()}

    def to_dict(self):
        d = asdict(self)
        d["mean"] = self.means()
        return d

    def to_json(self):
        def enc(x):
            if isinstance(x, float) and math.isinf(x):
                return "inf"
            if isinstance(x, dict):
                return {k: enc(v) for k, v in x.items()}
            if isinstance(x, list):
                return [enc(v) for v in x]
            return x
        return json.dumps(enc(self.to_dict()), indent=2, sort_keys=True)

    def to_csv_row(self, method):
        m = self.means()
        cols = [m["relit"].get("psnr"), m["relit"].get("ssim"), m["relit"].get("l1"),
                m["albedo"].get("psnr"), m["albedo"].get("ssim"), m["albedo"].get("l1"),
                m["orm"].get("psnr"), m["orm"].get("l1")]
        return ",".join([method] + ["" if v is None else f"{v:.6g}" for v in cols])


CSV_HEADER = "method,relit_psnr,relit_ssim,relit_l1,albedo_psnr,albedo_ssim,albedo_l1,orm_psnr,orm_l1"

# ORM metrics use roughness and metallic only; occlusion is not modelled
ORM_CHANNELS = slice(1, 3)


def _average_samples(x):
    """Lists/tuples of k prediction samples are averaged before comparison."""
    if isinstance(x, (list, tuple)):
        return np.mean(np.stack([np.asarray(s, dtype=np.float64) for s in x]), axis=0)
    return np.asarray(x, dtype=np.float64)


def evaluate(pred_views, gt_views, config_hash=""):
    """Compare matched per-view predictions with ground truth.

    Each view is a dict with optional keys ``relit`` (sRGB), ``albedo``,
    ``orm`` and ``mask``. RGB and albedo are rescaled per channel against
    ground truth; ORM is compared directly.
    """
    if len(pred_views) != len(gt_views):
        raise ValueError(f"{len(pred_views)} predicted views vs {len(gt_views)} ground-truth views")
    rep = EvalReport(n_views=len(gt_views), config_hash=config_hash)
    for pv, gv in zip(pred_views, gt_views):
        mask = gv.get("mask")
        for key, cm in (("relit", rep.relit), ("albedo", rep.albedo)):
            if key in gv:
                p = _average_samples(pv[key])
                if isinstance(pv[key], (list, tuple)):
                    rep.n_samples = len(pv[key])
                g = np.asarray(gv[key], dtype=np.float64)
                p, _ = rescale_channels(p, g, mask)
                if mask is not None:
                    p = np.where(np.asarray(mask, bool)[..., None], p, g)
                cm.psnr.append(psnr(p, g, mask=mask))
                cm.ssim.append(ssim(p, g))
                cm.l1.append(l1(p, g, mask=mask))
        if "orm" in gv:
            p = _average_samples(pv["orm"])[..., ORM_CHANNELS]
            g = np.asarray(gv["orm"], dtype=np.float64)[..., ORM_CHANNELS]
            rep.orm.psnr.append(psnr(p, g, mask=mask))
            rep.orm.l1.append(l1(p, g, mask=mask))
    return rep
