"""PFM / PNG / OBJ readers and writers plus the per-view camera manifest."""
import json
import os
import re
from pathlib import Path

import numpy as np
from PIL import Image

from .camera import Camera
from .mesh import Mesh


class AssetParseError(ValueError):
    def __init__(self, path, offset, message):
        super().__init__(f"{path}: byte offset {offset}: {message}")
        self.path = str(path)
        self.offset = offset


# ---------------------------------------------------------------- PFM

def write_pfm(path, data):
    """Little-endian PFM (scale -1.0). Rows are stored bottom-to-top."""
    data = np.asarray(data, dtype=np.float32)
    if data.ndim == 2:
        data = data[..., None]
    h, w, c = data.shape
    if c not in (1, 3):
        raise ValueError("PFM supports 1 or 3 channels")
    header = f"{'PF' if c == 3 else 'Pf'}\n{w} {h}\n-1.0\n".encode("ascii")
    body = np.ascontiguousarray(data[::-1]).astype("<f4").tobytes()
    with open(path, "wb") as f:
        f.write(header + body)


def read_pfm(path):
    raw = Path(path).read_bytes()
    pos = 0
    fields = []
    # header is three whitespace-terminated tokens groups: kind, "w h", scale
    for _ in range(4):
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise AssetParseError(path, start, "truncated PFM header")
        fields.append((start, raw[start:pos].decode("ascii", errors="replace")))
    pos += 1  # single whitespace byte before the raster
    (k_off, kind), (w_off, ws), (h_off, hs), (s_off, ss) = fields
    if kind not in ("PF", "Pf"):
        raise AssetParseError(path, k_off, f"bad PFM magic {kind!r}")
    try:
        w, h = int(ws), int(hs)
    except ValueError:
        raise AssetParseError(path, w_off, "PFM dimensions are not integers") from None
    if w <= 0 or h <= 0:
        raise AssetParseError(path, w_off, "PFM dimensions must be positive")
    try:
        scale = float(ss)
    except ValueError:
        raise AssetParseError(path, s_off, f"bad PFM scale {ss!r}") from None
    c = 3 if kind == "PF" else 1
    n = w * h * c * 4
    if len(raw) - pos < n:
        raise AssetParseError(path, len(raw), f"PFM raster truncated: need {n} bytes after offset {pos}")
    dtype = "<f4" if scale < 0 else ">f4"
    data = np.frombuffer(raw, dtype=dtype, count=w * h * c, offset=pos).astype(np.float32)
    data = data.reshape(h, w, c)[::-1]
    return np.ascontiguousarray(data if c == 3 else data[..., 0])


# ---------------------------------------------------------------- PNG

def quantize8(img):
    return np.round(np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def write_png(path, img):
    """Write values in [0, 1] as 8-bit PNG (no transfer function applied)."""
    q = quantize8(img)
    mode = "L" if q.ndim == 2 else "RGB"
    Image.fromarray(q, mode=mode).save(path, format="PNG", optimize=False)


def read_png(path):
    try:
        with Image.open(path) as im:
            im.load()
            arr = np.asarray(im.convert("RGB") if im.mode not in ("L", "RGB") else im)
    except (OSError, SyntaxError) as exc:
        raise AssetParseError(path, 0, f"unreadable PNG: {exc}") from None
    return arr.astype(np.float64) / 255.0


# ---------------------------------------------------------------- OBJ

_INDEX = re.compile(r"^(-?\d+)(?:/(-?\d*)(?:/(-?\d*))?)?$")


def read_obj(path) -> Mesh:
    """Triangulated Wavefront OBJ with v/vt/vn triplets.

    Each distinct (v, vt, vn) triplet becomes one mesh vertex. Missing normals
    are filled with area-weighted face normals, missing uvs with zeros.
    """
    raw = Path(path).read_bytes()
    v, vt, vn, corners = [], [], [], []
    offset = 0
    for line in raw.splitlines(keepends=True):
        text = line.decode("utf-8", errors="replace").split("#", 1)[0].strip()
        parts = text.split()
        try:
            if not parts:
                pass
            elif parts[0] == "v":
                v.append([float(x) for x in parts[1:4]])
                if len(v[-1]) != 3:
                    raise ValueError("vertex needs 3 coordinates")
            elif parts[0] == "vt":
                vt.append([float(x) for x in parts[1:3]])
                if len(vt[-1]) != 2:
                    raise ValueError("texture coordinate needs 2 values")
            elif parts[0] == "vn":
                vn.append([float(x) for x in parts[1:4]])
                if len(vn[-1]) != 3:
                    raise ValueError("normal needs 3 coordinates")
            elif parts[0] == "f":
                face = []
                for tok in parts[1:]:
                    mt = _INDEX.match(tok)
                    if not mt:
                        raise ValueError(f"bad face token {tok!r}")
                    ids = []
                    for g, pool in zip(mt.groups(), (v, vt, vn)):
                        if not g:
                            ids.append(-1)
                            continue
                        i = int(g)
                        i = i - 1 if i > 0 else len(pool) + i
                        if not 0 <= i < len(pool):
                            raise ValueError(f"index {g} out of range")
                        ids.append(i)
                    face.append(tuple(ids))
                if len(face) < 3:
                    raise ValueError("face needs at least 3 vertices")
                for k in range(1, len(face) - 1):
                    corners.append((face[0], face[k], face[k + 1]))
        except ValueError as exc:
            raise AssetParseError(path, offset, str(exc)) from None
        offset += len(line)

    if not corners:
        raise AssetParseError(path, len(raw), "no faces found")
    keys = {}
    faces = []
    for tri in corners:
        faces.append([keys.setdefault(c, len(keys)) for c in tri])
    triplets = list(keys)
    pos = np.array([v[c[0]] for c in triplets], dtype=np.float64)
    uv = np.array([vt[c[1]] if c[1] >= 0 else (0.0, 0.0) for c in triplets], dtype=np.float64)
    faces = np.array(faces, dtype=np.int64)
    if all(c[2] >= 0 for c in triplets):
        nrm = np.array([vn[c[2]] for c in triplets], dtype=np.float64)
    else:
        nrm = vertex_normals(pos, faces)
    return Mesh(pos, nrm, uv, faces)


def vertex_normals(positions, faces):
    tri = positions[faces]
    fn = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    out = np.zeros_like(positions)
    for k in range(3):
        np.add.at(out, faces[:, k], fn)
    norm = np.linalg.norm(out, axis=-1, keepdims=True)
    return out / np.where(norm > 0, norm, 1.0)


def write_obj(path, mesh: Mesh):
    lines = []
    lines += [f"v {p[0]:.9g} {p[1]:.9g} {p[2]:.9g}" for p in mesh.positions]
    lines += [f"vt {t[0]:.9g} {t[1]:.9g}" for t in mesh.uvs]
    lines += [f"vn {n[0]:.9g} {n[1]:.9g} {n[2]:.9g}" for n in mesh.normals]
    for f in mesh.faces + 1:
        lines.append("f " + " ".join(f"{i}/{i}/{i}" for i in f))
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------- manifest

def write_manifest(path, views, extra=None, view_extra=None):
    """``views`` is a list of ``(camera, image_path)`` pairs; ``view_extra`` an
    optional list of per-view dicts merged into each entry."""
    entries = []
    for k, (cam, image_path) in enumerate(views):
        d = cam.to_dict()
        d["image_path"] = str(image_path)
        if view_extra is not None:
            d.update(view_extra[k])
        entries.append(d)
    doc = dict(extra or {})
    doc["views"] = entries
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True))


def read_manifest(path):
    doc = json.loads(Path(path).read_text())
    views = []
    for i, d in enumerate(doc.get("views", [])):
        missing = {"position", "target", "up", "fov_deg", "width", "height", "image_path"} - set(d)
        if missing:
            raise ValueError(f"{path}: view {i} is missing {sorted(missing)}")
        views.append((Camera.from_dict(d), d["image_path"]))
    return doc, views


def atomic_write_dir(tmp, final):
    """Replace directory ``final`` with ``tmp`` via rename."""
    final = Path(final)
    if final.exists():
        old = final.with_name(final.name + ".old")
        if old.exists():
            _rmtree(old)
        os.replace(final, old)
        os.replace(tmp, final)
        _rmtree(old)
    else:
        os.replace(tmp, final)


def _rmtree(p):
    import shutil
    shutil.rmtree(p)
