"""Simplified Disney / Cook-Torrance BRDF with analytic material derivatives.

All functions are vectorised over leading array dimensions. Directions are
``(..., 3)`` arrays, albedo is ``(..., 3)``, roughness and metallic are ``(...)``.
"""
from dataclasses import dataclass

import numpy as np

R_MIN = 0.04
DIELECTRIC_F0 = 0.04
P_SPEC_MIN = 0.1
P_SPEC_MAX = 0.9

DIFFUSE = 0
SPECULAR = 1


@dataclass
class Material:
    albedo: np.ndarray
    roughness: np.ndarray
    metallic: np.ndarray

    @classmethod
    def from_values(cls, albedo, roughness, metallic):
        return cls(np.asarray(albedo, dtype=np.float64),
                   np.asarray(roughness, dtype=np.float64),
                   np.asarray(metallic, dtype=np.float64))

    @classmethod
    def from_orm(cls, albedo, orm):
        """Build from an albedo buffer and an (o, r, m) buffer; o is ignored."""
        orm = np.asarray(orm, dtype=np.float64)
        return cls(np.asarray(albedo, dtype=np.float64), orm[..., 1], orm[..., 2])


def dot(a, b):
    return np.sum(a * b, axis=-1)


def normalize(v):
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def orthonormal_basis(n):
    """Tangent frame (t, b) for unit normals ``n`` (Duff et al. 2017)."""
    sign = np.where(n[..., 2] >= 0.0, 1.0, -1.0)
    a = -1.0 / (sign + n[..., 2])
    b = n[..., 0] * n[..., 1] * a
    t = np.stack([1.0 + sign * n[..., 0] ** 2 * a, sign * b, -sign * n[..., 0]], axis=-1)
    bt = np.stack([b, sign + n[..., 1] ** 2 * a, -n[..., 1]], axis=-1)
    return t, bt


def _prepare(mat):
    a = np.clip(mat.albedo, 0.0, 1.0)
    m = np.clip(mat.metallic, 0.0, 1.0)
    r = np.clip(mat.roughness, R_MIN, 1.0)
    return a, r, m


def base_reflectance(albedo, metallic):
    """F0 = 0.04 (1 - m) + a m, per RGB channel."""
    m = metallic[..., None]
    return DIELECTRIC_F0 * (1.0 - m) + albedo * m


def ggx_ndf(n_dot_h, alpha):
    a2 = alpha * alpha
    d = n_dot_h * n_dot_h * (a2 - 1.0) + 1.0
    return a2 / (np.pi * d * d)


def _g1(x, k):
    return x / (x * (1.0 - k) + k)


def _terms(a, r, m, n, wi, wo):
    alpha = r * r
    h = normalize(wi + wo)
    nl = dot(n, wi)
    nv = dot(n, wo)
    nh = np.clip(dot(n, h), 0.0, 1.0)
    vh = np.clip(dot(wo, h), 0.0, 1.0)
    f0 = base_reflectance(a, m)
    return alpha, nl, nv, nh, vh, f0


def eval_brdf(mat: Material, n, wi, wo, specular=True):
    """Reflectance f_r(wi, wo) in 1/sr, shape ``(..., 3)``.

    With ``specular=False`` this is exactly the Lambertian term (1 - m) a / pi.
    Otherwise the diffuse lobe is weighted by the Fresnel transmittance at
    both directions so the sum never reflects more energy than it receives.
    """
    a, r, m = _prepare(mat)
    nl = dot(n, wi)
    nv = dot(n, wo)
    valid = (nl > 0.0) & (nv > 0.0)
    if not specular:
        out = (1.0 - m)[..., None] * a / np.pi
        return np.where(valid[..., None], out, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        alpha, nl, nv, nh, vh, f0 = _terms(a, r, m, n, wi, wo)
        nl_c = np.maximum(nl, 1e-12)
        nv_c = np.maximum(nv, 1e-12)
        ql = 1.0 - (1.0 - nl_c) ** 5
        qv = 1.0 - (1.0 - nv_c) ** 5
        diffuse = (1.0 - m)[..., None] * a * (1.0 - f0) ** 2 * (ql * qv)[..., None] / np.pi
        k = 0.5 * alpha
        dg = ggx_ndf(nh, alpha) * _g1(nl_c, k) * _g1(nv_c, k) / (4.0 * nl_c * nv_c)
        fresnel = f0 + (1.0 - f0) * ((1.0 - vh) ** 5)[..., None]
        out = diffuse + dg[..., None] * fresnel
    return np.where(valid[..., None], out, 0.0)


def eval_brdf_gradients(mat: Material, n, wi, wo, specular=True):
    """Return ``(f, df_da, df_dr, df_dm)``.

    ``df_da`` holds the diagonal of the 3x3 Jacobian (each channel of f only
    depends on the same channel of the albedo). Derivatives vanish where the
    parameter is clamped, including roughness at or below ``R_MIN``.
    """
    a, r, m = _prepare(mat)
    a_in = (mat.albedo > 0.0) & (mat.albedo < 1.0)
    m_in = (mat.metallic > 0.0) & (mat.metallic < 1.0)
    r_in = (mat.roughness > R_MIN) & (mat.roughness < 1.0)
    nl = dot(n, wi)
    nv = dot(n, wo)
    valid = ((nl > 0.0) & (nv > 0.0))[..., None]
    shape = np.broadcast_shapes(a.shape, nl.shape + (3,))
    if not specular:
        f = (1.0 - m)[..., None] * a / np.pi
        df_da = np.broadcast_to((1.0 - m)[..., None] / np.pi, shape) * a_in
        df_dm = -a / np.pi * m_in[..., None]
        df_dr = np.zeros(shape)
        return tuple(np.where(valid, np.broadcast_to(x, shape), 0.0) for x in (f, df_da, df_dr, df_dm))

    with np.errstate(divide="ignore", invalid="ignore"):
        alpha, nl, nv, nh, vh, f0 = _terms(a, r, m, n, wi, wo)
        nl_c = np.maximum(nl, 1e-12)
        nv_c = np.maximum(nv, 1e-12)
        ql = 1.0 - (1.0 - nl_c) ** 5
        qv = 1.0 - (1.0 - nv_c) ** 5
        q = (ql * qv)[..., None] / np.pi
        one_m = (1.0 - m)[..., None]
        t = 1.0 - f0
        diffuse = one_m * a * t * t * q

        k = 0.5 * alpha
        g1l = _g1(nl_c, k)
        g1v = _g1(nv_c, k)
        d = ggx_ndf(nh, alpha)
        denom = 4.0 * nl_c * nv_c
        dg = d * g1l * g1v / denom
        s5 = ((1.0 - vh) ** 5)[..., None]
        fresnel = f0 + (1.0 - f0) * s5
        f = diffuse + dg[..., None] * fresnel

        # F0 = 0.04 (1 - m) + a m
        df0_da = m[..., None]
        df0_dm = a - DIELECTRIC_F0
        dspec_df0 = dg[..., None] * (1.0 - s5)
        ddiff_df0 = -2.0 * one_m * a * t * q

        df_da = one_m * t * t * q + (ddiff_df0 + dspec_df0) * df0_da
        df_dm = -a * t * t * q + (ddiff_df0 + dspec_df0) * df0_dm

        # roughness enters through alpha = r^2 in D and in k = alpha / 2
        a2 = alpha * alpha
        dd = nh * nh * (a2 - 1.0) + 1.0
        dD_dalpha = 2.0 * alpha / (np.pi * dd ** 3) * (dd - 2.0 * a2 * nh * nh)
        dg1l_dk = -nl_c * (1.0 - nl_c) / (nl_c * (1.0 - k) + k) ** 2
        dg1v_dk = -nv_c * (1.0 - nv_c) / (nv_c * (1.0 - k) + k) ** 2
        dG_dalpha = 0.5 * (dg1l_dk * g1v + g1l * dg1v_dk)
        ddg_dalpha = (dD_dalpha * g1l * g1v + d * dG_dalpha) / denom
        df_dr = (ddg_dalpha * 2.0 * r * r_in)[..., None] * fresnel

    df_da = df_da * a_in
    df_dm = df_dm * m_in[..., None]
    return tuple(np.where(valid, np.broadcast_to(x, shape), 0.0) for x in (f, df_da, df_dr, df_dm))


def brdf_reciprocity_pair(mat: Material, n, wi, wo, specular=True):
    return eval_brdf(mat, n, wi, wo, specular), eval_brdf(mat, n, wo, wi, specular)


def specular_probability(mat: Material, specular=True):
    """Probability of picking the specular lobe when sampling."""
    a, _, m = _prepare(mat)
    if not specular:
        return np.zeros(np.shape(m))
    f0 = base_reflectance(a, m)
    return np.clip(m + f0.mean(axis=-1), P_SPEC_MIN, P_SPEC_MAX)


def _specular_pdf(alpha, n, wo, wi):
    h = normalize(wi + wo)
    nh = np.clip(dot(n, h), 0.0, 1.0)
    vh = np.abs(dot(wo, h))
    with np.errstate(divide="ignore", invalid="ignore"):
        p = ggx_ndf(nh, alpha) * nh / (4.0 * vh)
    return np.where(vh > 0.0, p, 0.0)


def brdf_pdf(mat: Material, n, wo, wi, specular=True):
    """Solid-angle density of :func:`sample_brdf_direction`; 0 below the surface."""
    _, r, _ = _prepare(mat)
    nl = dot(n, wi)
    p_spec = specular_probability(mat, specular)
    pdf = (1.0 - p_spec) * np.maximum(nl, 0.0) / np.pi
    if specular:
        pdf = pdf + p_spec * _specular_pdf(r * r, n, wo, wi)
    return np.where(nl > 0.0, pdf, 0.0)


def sample_cosine_hemisphere(u, n):
    r = np.sqrt(u[..., 0])
    phi = 2.0 * np.pi * u[..., 1]
    x = r * np.cos(phi)
    y = r * np.sin(phi)
    z = np.sqrt(np.maximum(0.0, 1.0 - u[..., 0]))
    t, b = orthonormal_basis(n)
    return x[..., None] * t + y[..., None] * b + z[..., None] * n


def sample_brdf_direction(mat: Material, n, wo, u, specular=True):
    """Importance-sample an incoming direction.

    ``u`` has shape ``(..., 2)``. The first uniform chooses the lobe and is
    then rescaled to [0, 1) for reuse. Returns ``(wi, pdf, lobe)``; samples
    that end up below the surface get ``pdf == 0`` and must be discarded.
    """
    _, r, _ = _prepare(mat)
    u = np.asarray(u, dtype=np.float64)
    p_spec = specular_probability(mat, specular)
    p_spec = np.broadcast_to(p_spec, u.shape[:-1])
    pick_spec = u[..., 0] < p_spec
    with np.errstate(divide="ignore", invalid="ignore"):
        u0 = np.where(pick_spec, u[..., 0] / p_spec, (u[..., 0] - p_spec) / (1.0 - p_spec))
    u0 = np.clip(u0, 0.0, np.nextafter(1.0, 0.0))
    uu = np.stack([u0, u[..., 1]], axis=-1)

    wi = sample_cosine_hemisphere(uu, n)
    if specular and np.any(pick_spec):
        alpha = np.broadcast_to(r * r, u.shape[:-1])
        tan2 = alpha * alpha * uu[..., 0] / (1.0 - uu[..., 0])
        cos_t = 1.0 / np.sqrt(1.0 + tan2)
        sin_t = np.sqrt(np.maximum(0.0, 1.0 - cos_t * cos_t))
        phi = 2.0 * np.pi * uu[..., 1]
        t, b = orthonormal_basis(n)
        h = (sin_t * np.cos(phi))[..., None] * t + (sin_t * np.sin(phi))[..., None] * b + cos_t[..., None] * n
        wr = 2.0 * dot(wo, h)[..., None] * h - wo
        wi = np.where(pick_spec[..., None], wr, wi)
    wi = normalize(wi)
    pdf = brdf_pdf(mat, n, wo, wi, specular)
    lobe = np.where(pick_spec, SPECULAR, DIFFUSE)
    return wi, pdf, lobe
