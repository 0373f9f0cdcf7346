import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from lumafactor.scene import (AssetParseError, Camera, EnvironmentMap, Scene, TextureMap, envmap_lookup,
                              envmap_pdf, envmap_sample, load_assets, ray_intersect,
                              ray_intersect_brute_force, read_obj, read_pfm, read_png, sample_texture,
                              save_assets, write_pfm, write_png)
from lumafactor.scene.envmap import direction_to_uv, luminance, texel_of, texel_solid_angles, uv_to_direction
from lumafactor.scene.io import read_manifest, write_manifest
from lumafactor.scene.mesh import occluded
from lumafactor.scene.shapes import cube, quad, torus, uv_sphere
from lumafactor.scene.texture import bilinear_footprint, gather, scatter


# ------------------------------------------------------------------ textures

def test_texel_center_returns_texel():
    rng = np.random.default_rng(0)
    tex = TextureMap(rng.random((8, 6, 3)))
    i, j = np.meshgrid(np.arange(8), np.arange(6), indexing="ij")
    uv = np.stack([(j + 0.5) / 6, (i + 0.5) / 8], -1)
    val, _ = sample_texture(tex, uv)
    np.testing.assert_allclose(val, tex.data, atol=1e-14)


def test_constant_map():
    tex = TextureMap.constant((0.1, 0.2, 0.3), (5, 7))
    uv = np.random.default_rng(1).random((100, 2))
    val, _ = sample_texture(tex, uv)
    np.testing.assert_allclose(val, np.tile([0.1, 0.2, 0.3], (100, 1)), atol=1e-15)


def test_two_by_two_center_is_mean():
    data = np.array([[[0, 0, 0], [1, 1, 1]], [[1, 1, 1], [0, 0, 0]]], dtype=float)
    fp = bilinear_footprint(0.5, 0.5, 2, 2)
    np.testing.assert_allclose(fp.weight, 0.25)
    np.testing.assert_allclose(gather(data, fp), [0.5, 0.5, 0.5])


def test_clamp_to_edge():
    tex = TextureMap(np.random.default_rng(2).random((4, 4, 3)))
    val, _ = sample_texture(tex, np.array([[0.0, 0.0], [1.0, 1.0], [1.0, 0.0]]))
    np.testing.assert_allclose(val, [tex.data[0, 0], tex.data[3, 3], tex.data[0, 3]])


@settings(max_examples=200, deadline=None)
@given(u=st.floats(0, 1), v=st.floats(0, 1), seed=st.integers(0, 2**16))
def test_sampling_is_convex_combination(u, v, seed):
    data = np.random.default_rng(seed).random((5, 9, 3))
    fp = bilinear_footprint(u, v, 9, 5)
    assert np.all(fp.weight >= 0) and abs(fp.weight.sum() - 1.0) < 1e-12
    val = gather(data, fp)
    corners = data.reshape(-1, 3)[fp.index]
    assert np.all(val >= corners.min(0) - 1e-12) and np.all(val <= corners.max(0) + 1e-12)


def test_scatter_is_adjoint_of_gather():
    rng = np.random.default_rng(3)
    data = rng.random((6, 10, 3))
    fp = bilinear_footprint(rng.random(50), rng.random(50), 10, 6)
    g = rng.standard_normal((50, 3))
    lhs = np.sum(gather(data, fp) * g)
    rhs = np.sum(data * scatter(g, fp, data.shape))
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_texture_validation():
    with pytest.raises(ValueError):
        TextureMap(np.zeros((3, 8, 3)))
    with pytest.raises(ValueError):
        TextureMap(np.zeros((8, 8, 2)))
    with pytest.raises(ValueError):
        TextureMap(np.zeros((8, 8, 3)), role="normal")


# ------------------------------------------------------------------ env maps

def random_env(seed, h=16):
    rng = np.random.default_rng(seed)
    return EnvironmentMap(rng.random((h, 2 * h, 3)) ** 3 * 4.0)


def test_direction_uv_round_trip():
    rng = np.random.default_rng(4)
    u, v = rng.random(500), rng.uniform(0.001, 0.999, 500)
    uu, vv = direction_to_uv(uv_to_direction(u, v))
    np.testing.assert_allclose(uu, u, atol=1e-12)
    np.testing.assert_allclose(vv, v, atol=1e-12)
    # +z is the top row, phi = 0 along +x
    assert direction_to_uv(np.array([0.0, 0.0, 1.0]))[1] == 0.0
    assert direction_to_uv(np.array([1.0, 0.0, 0.0]))[0] == 0.0


def test_constant_env_lookup():
    env = EnvironmentMap.constant((0.3, 0.5, 0.7), 8)
    w = np.random.default_rng(5).standard_normal((100, 3))
    w /= np.linalg.norm(w, axis=-1, keepdims=True)
    np.testing.assert_allclose(envmap_lookup(env, w), np.tile([0.3, 0.5, 0.7], (100, 1)), atol=1e-14)


def test_pole_lookup():
    data = np.zeros((8, 16, 3))
    data[0] = 1.0
    env = EnvironmentMap(data)
    np.testing.assert_allclose(envmap_lookup(env, np.array([0.0, 0.0, 1.0])), [1.0, 1.0, 1.0])


def test_solid_angles_sum_to_sphere():
    assert texel_solid_angles(16, 32).sum() == pytest.approx(4 * np.pi, rel=1e-12)


def test_pdf_normalises_over_texels():
    env = random_env(6)
    total = np.sum(env.pdf_texel * texel_solid_angles(env.height, env.width))
    assert abs(total - 1.0) < 1e-6


def test_sample_pdf_matches_rederived_texel_pdf():
    env = random_env(7)
    u = np.random.default_rng(8).random((1000, 2))
    w, pdf, rad = envmap_sample(env, u)
    i, j = texel_of(env, w)
    lum = luminance(env.data)
    omega = texel_solid_angles(env.height, env.width)
    ref = lum[i, j] / np.sum(lum * omega)
    np.testing.assert_allclose(pdf, ref, rtol=1e-5)
    np.testing.assert_allclose(envmap_pdf(env, w), pdf, rtol=1e-12)
    np.testing.assert_allclose(rad, envmap_lookup(env, w), rtol=1e-12)
    np.testing.assert_allclose(np.linalg.norm(w, axis=-1), 1.0, atol=1e-12)


def test_uniform_map_samples_uniform_sphere():
    env = EnvironmentMap.constant(1.0, 16)
    n = 100_000
    w, pdf, _ = envmap_sample(env, np.random.default_rng(9).random((n, 2)))
    np.testing.assert_allclose(pdf, 1.0 / (4 * np.pi), rtol=1e-9)
    # 16 x 8 equal-area bins in (phi, cos theta)
    pj = np.clip((np.mod(np.arctan2(w[:, 1], w[:, 0]), 2 * np.pi) / (2 * np.pi) * 16).astype(int), 0, 15)
    ci = np.clip(((w[:, 2] + 1) / 2 * 8).astype(int), 0, 7)
    counts = np.zeros((8, 16))
    np.add.at(counts, (ci, pj), 1)
    _, p = stats.chisquare(counts.ravel())
    assert p > 0.05


def test_single_bright_texel():
    data = np.zeros((8, 16, 3))
    data[3, 5] = 10.0
    env = EnvironmentMap(data)
    w, pdf, _ = envmap_sample(env, np.random.default_rng(10).random((2000, 2)))
    i, j = texel_of(env, w)
    assert np.all(i == 3) and np.all(j == 5)
    assert np.all(pdf > 0)


def test_importance_sampled_integral_matches_riemann_sum():
    env = random_env(11)
    riemann = np.sum(env.data * texel_solid_angles(env.height, env.width)[..., None], axis=(0, 1))
    # piecewise-constant radiance so the estimator uses the texel value itself
    n = 200_000
    w, pdf, _ = envmap_sample(env, np.random.default_rng(12).random((n, 2)))
    i, j = texel_of(env, w)
    est = np.mean(env.data[i, j] / pdf[:, None], axis=0)
    np.testing.assert_allclose(est, riemann, rtol=0.005)


def test_black_map_falls_back_to_uniform():
    env = EnvironmentMap.constant(0.0, 8)
    w, pdf, rad = envmap_sample(env, np.random.default_rng(13).random((100, 2)))
    np.testing.assert_allclose(pdf, 1.0 / (4 * np.pi))
    np.testing.assert_allclose(envmap_pdf(env, w), 1.0 / (4 * np.pi))
    assert np.all(rad == 0)


def test_env_validation():
    with pytest.raises(ValueError):
        EnvironmentMap(np.ones((8, 8, 3)))
    with pytest.raises(ValueError):
        EnvironmentMap(-np.ones((8, 16, 3)))
    with pytest.raises(ValueError):
        EnvironmentMap(np.full((8, 16, 3), np.nan))


def test_cdf_monotone():
    env = random_env(14)
    assert np.all(np.diff(env.marginal_cdf) >= 0) and env.marginal_cdf[-1] == 1.0
    assert np.all(np.diff(env.conditional_cdf, axis=1) >= 0)
    np.testing.assert_array_equal(env.conditional_cdf[:, -1], 1.0)


# ------------------------------------------------------------------ meshes

def test_sphere_center_ray():
    mesh = uv_sphere(48, 96)
    hit = ray_intersect(mesh, np.zeros((1, 3)), np.array([[1.0, 0.0, 0.0]]))
    assert hit.mask[0]
    assert hit.t[0] == pytest.approx(1.0, abs=2e-3)
    b = np.array([hit.b1[0], hit.b2[0]])
    assert np.all(b >= 0) and b.sum() <= 1


def test_miss():
    mesh = uv_sphere()
    hit = ray_intersect(mesh, np.array([[3.0, 0.0, 0.0]]), np.array([[1.0, 0.0, 0.0]]))
    assert not hit.mask[0]


def test_bvh_matches_brute_force():
    rng = np.random.default_rng(15)
    for mesh in (uv_sphere(), torus(), cube()):
        o = rng.uniform(-2, 2, (1000, 3))
        target = rng.uniform(-0.5, 0.5, (1000, 3))
        d = target - o
        d /= np.linalg.norm(d, axis=-1, keepdims=True)
        # a quarter of the rays start inside the object
        o[:250] = rng.uniform(-0.2, 0.2, (250, 3))
        a = ray_intersect(mesh, o, d)
        b = ray_intersect_brute_force(mesh, o, d)
        np.testing.assert_array_equal(a.tri, b.tri)
        np.testing.assert_array_equal(a.t, b.t)
        np.testing.assert_array_equal(a.b1, b.b1)


def test_occlusion_respects_tmax():
    mesh = quad(2.0)
    o = np.array([[0.0, 0.0, 1.0]])
    d = np.array([[0.0, 0.0, -1.0]])
    assert occluded(mesh, o, d)[0]
    assert not occluded(mesh, o, d, np.array([0.5]))[0]


def test_hit_normal_and_uv_interpolation():
    mesh = quad(2.0)
    hit = ray_intersect(mesh, np.array([[0.5, -0.5, 1.0]]), np.array([[0.0, 0.0, -1.0]]))
    np.testing.assert_allclose(hit.normal[0], [0, 0, 1])
    np.testing.assert_allclose(hit.uv[0], [0.75, 0.75], atol=1e-12)


def test_mesh_validation():
    from lumafactor.scene import Mesh
    with pytest.raises(ValueError):
        Mesh(np.zeros((3, 3)), np.ones((3, 3)), np.zeros((3, 2)), [[0, 1, 3]])


# ------------------------------------------------------------------ files

def test_pfm_round_trip_bit_exact(tmp_path):
    data = (np.random.default_rng(16).random((8, 16, 3)) * 100).astype(np.float32)
    write_pfm(tmp_path / "e.pfm", data)
    back = read_pfm(tmp_path / "e.pfm")
    assert back.dtype == np.float32
    assert np.array_equal(back.view(np.uint32), data.view(np.uint32))


def test_png_round_trip_quantisation(tmp_path):
    data = np.random.default_rng(17).random((9, 7, 3))
    write_png(tmp_path / "a.png", data)
    assert np.max(np.abs(read_png(tmp_path / "a.png") - data)) <= 1 / 255


def test_obj_cube_counts(tmp_path):
    verts = [(x, y, z) for x in (0, 1) for y in (0, 1) for z in (0, 1)]
    quads = [(1, 2, 4, 3), (5, 7, 8, 6), (1, 5, 6, 2), (3, 4, 8, 7), (1, 3, 7, 5), (2, 6, 8, 4)]
    text = "".join(f"v {x} {y} {z}\n" for x, y, z in verts)
    text += "".join("f " + " ".join(map(str, q)) + "\n" for q in quads)
    (tmp_path / "c.obj").write_text(text)
    mesh = read_obj(tmp_path / "c.obj")
    assert len(mesh.positions) == 8
    assert mesh.n_triangles == 12


def test_malformed_files_name_byte_offset(tmp_path):
    p = tmp_path / "bad.pfm"
    p.write_bytes(b"PX\n4 4\n-1.0\n" + bytes(4))
    with pytest.raises(AssetParseError, match="byte offset 0"):
        read_pfm(p)
    p.write_bytes(b"PF\n4 4\n-1.0\n" + bytes(20))
    with pytest.raises(AssetParseError, match="byte offset 32"):
        read_pfm(p)
    obj = tmp_path / "bad.obj"
    obj.write_bytes(b"v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 9\n")
    with pytest.raises(AssetParseError, match="byte offset 24"):
        read_obj(obj)
    png = tmp_path / "bad.png"
    png.write_bytes(b"not a png")
    with pytest.raises(AssetParseError, match="byte offset 0"):
        read_png(png)


def test_save_load_assets(tmp_path):
    rng = np.random.default_rng(18)
    scene = Scene(torus(16, 8), TextureMap(rng.random((8, 8, 3))), TextureMap(rng.random((8, 8, 3)), "orm"),
                  random_env(19, 8))
    paths = save_assets(scene, tmp_path / "a")
    back = load_assets(paths)
    np.testing.assert_array_equal(back.k_d.data, scene.k_d.data.astype(np.float32))
    np.testing.assert_array_equal(back.env.data, scene.env.data.astype(np.float32))
    # the reader renumbers vertices in first-use order, so compare triangles
    tri = lambda m: m.positions[m.faces]
    np.testing.assert_allclose(tri(back.mesh), tri(scene.mesh), atol=1e-8)
    np.testing.assert_allclose(back.mesh.uvs[back.mesh.faces], scene.mesh.uvs[scene.mesh.faces], atol=1e-8)
    assert np.max(np.abs(read_png(tmp_path / "a" / "k_d.png") - scene.k_d.data)) <= 1 / 255


def test_manifest_round_trip(tmp_path):
    cams = [Camera((1.0, 2.0, 0.5), fov_deg=40, width=32, height=24), Camera((0.0, -2.0, 1.0))]
    write_manifest(tmp_path / "m.json", [(c, f"views/{i}.png") for i, c in enumerate(cams)],
                   extra={"seed": 3}, view_extra=[{"spp": 4}, {"spp": 8}])
    doc, views = read_manifest(tmp_path / "m.json")
    assert doc["seed"] == 3 and doc["views"][1]["spp"] == 8
    assert [v[0] for v in views] == cams
    assert views[1][1] == "views/1.png"


def test_camera_invariants():
    with pytest.raises(ValueError):
        Camera((0, 0, 0), (0, 0, 0))
    with pytest.raises(ValueError):
        Camera((0, 0, 1), fov_deg=180)
    cam = Camera((0.0, -3.0, 0.0), width=9, height=9)
    _, d = cam.pixel_centers()
    np.testing.assert_allclose(d[4, 4], [0, 1, 0], atol=1e-12)
