"""UV-unwrapped analytic meshes at unit scale, centered on the origin."""
import numpy as np

from .mesh import Mesh


def _grid_faces(rows, cols, offset=0):
    i, j = np.meshgrid(np.arange(rows), np.arange(cols), indexing="ij")
    a = (i * (cols + 1) + j).ravel() + offset
    b = a + 1
    c = a + cols + 1
    d = c + 1
    return np.concatenate([np.stack([a, c, b], 1), np.stack([b, c, d], 1)])


def uv_sphere(n_theta=24, n_phi=48, radius=1.0):
    t = np.linspace(0.0, np.pi, n_theta + 1)
    p = np.linspace(0.0, 2.0 * np.pi, n_phi + 1)
    T, P = np.meshgrid(t, p, indexing="ij")
    nrm = np.stack([np.sin(T) * np.cos(P), np.sin(T) * np.sin(P), np.cos(T)], -1).reshape(-1, 3)
    uv = np.stack([P / (2.0 * np.pi), T / np.pi], -1).reshape(-1, 2)
    faces = _grid_faces(n_theta, n_phi)
    pos = radius * nrm
    tri = pos[faces]
    area = np.linalg.norm(np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1)
    faces = faces[area > 1e-12]
    return Mesh(pos, nrm, uv, faces)


def quad(size=2.0, n=1):
    """Square in the z = 0 plane facing +z; v grows towards -y."""
    s = np.linspace(-size / 2, size / 2, n + 1)
    Y, X = np.meshgrid(s[::-1], s, indexing="ij")
    pos = np.stack([X, Y, np.zeros_like(X)], -1).reshape(-1, 3)
    uv = np.stack([(X + size / 2) / size, (size / 2 - Y) / size], -1).reshape(-1, 2)
    nrm = np.tile([0.0, 0.0, 1.0], (len(pos), 1))
    faces = _grid_faces(n, n)
    # make triangles counter-clockwise when seen from +z
    tri = pos[faces]
    flip = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])[:, 2] < 0
    faces[flip] = faces[flip][:, [0, 2, 1]]
    return Mesh(pos, nrm, uv, faces)


def cube(n=4, size=1.4):
    """Axis-aligned cube; each face gets one cell of a 3x2 UV atlas."""
    h = size / 2
    s = np.linspace(-h, h, n + 1)
    A, B = np.meshgrid(s, s, indexing="ij")
    axes = [(0, 1), (0, -1), (1, 1), (1, -1), (2, 1), (2, -1)]
    pos, nrm, uv, faces = [], [], [], []
    offset = 0
    margin = 0.02
    for f, (ax, sign) in enumerate(axes):
        u_ax, v_ax = [a for a in range(3) if a != ax]
        p = np.zeros(A.shape + (3,))
        p[..., ax] = sign * h
        p[..., u_ax] = A
        p[..., v_ax] = B
        cu, cv = f % 3, f // 3
        lu = (A + h) / size
        lv = (B + h) / size
        uv_f = np.stack([(cu + margin + lu * (1 - 2 * margin)) / 3.0, (cv + margin + lv * (1 - 2 * margin)) / 2.0], -1)
        nn = np.zeros(3)
        nn[ax] = sign
        fc = _grid_faces(n, n, offset)
        pf = p.reshape(-1, 3)
        tri = pf[fc - offset]
        out = np.einsum("ij,j->i", np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), nn) < 0
        fc[out] = fc[out][:, [0, 2, 1]]
        pos.append(pf)
        nrm.append(np.tile(nn, (len(pf), 1)))
        uv.append(uv_f.reshape(-1, 2))
        faces.append(fc)
        offset += len(pf)
    return Mesh(np.concatenate(pos), np.concatenate(nrm), np.concatenate(uv), np.concatenate(faces))


def torus(n_major=48, n_minor=24, major=0.7, minor=0.3):
    a = np.linspace(0.0, 2.0 * np.pi, n_major + 1)
    b = np.linspace(0.0, 2.0 * np.pi, n_minor + 1)
    A, B = np.meshgrid(a, b, indexing="ij")
    center = np.stack([major * np.cos(A), major * np.sin(A), np.zeros_like(A)], -1)
    nrm = np.stack([np.cos(B) * np.cos(A), np.cos(B) * np.sin(A), np.sin(B)], -1)
    pos = center + minor * nrm
    uv = np.stack([A / (2 * np.pi), B / (2 * np.pi)], -1)
    faces = _grid_faces(n_major, n_minor)
    pos = pos.reshape(-1, 3)
    nrm = nrm.reshape(-1, 3)
    tri = pos[faces]
    cn = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    flip = np.einsum("ij,ij->i", cn, nrm[faces[:, 0]]) < 0
    faces[flip] = faces[flip][:, [0, 2, 1]]
    return Mesh(pos, nrm, uv.reshape(-1, 2), faces)


SHAPES = {"sphere": uv_sphere, "cube": cube, "torus": torus, "quad": quad}


def make_shape(name, **kwargs):
    try:
        return SHAPES[name](**kwargs)
    except KeyError:
        raise ValueError(f"unknown shape {name!r}; expected one of {sorted(SHAPES)}") from None
