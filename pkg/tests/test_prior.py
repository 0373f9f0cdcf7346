import numpy as np
import pytest
import torch

from lumafactor.prior import (COSINE, Denoiser, DenoiserParams, TrainConfig, TrainingDivergedError, Triplet,
                              add_noise, ddim_sample, decode, decode_pair, denoise_cfg, encode, encode_pair,
                              predict_eps, predict_materials, predict_x0, train_denoiser, v_target)
from lumafactor.prior.codec import decode_adjoint, encode_adjoint
from lumafactor.prior.denoiser import COND_CHANNELS, LATENT_CHANNELS
from lumafactor.sds import OraclePrior


# ------------------------------------------------------------------ schedule

def test_variance_preserving_on_grid():
    t = np.linspace(0.0, 1.0, 1000)
    a, s = COSINE(t)
    assert np.max(np.abs(a * a + s * s - 1.0)) <= 1e-6
    assert np.all(np.diff(a) < 0)
    assert a[0] == pytest.approx(1.0) and s[0] == pytest.approx(0.0)
    assert a[-1] == pytest.approx(0.0, abs=1e-15) and s[-1] == pytest.approx(1.0)


def test_v_parameterisation_identities():
    rng = np.random.default_rng(0)
    for t in rng.uniform(0.0, 1.0, 20):
        z = rng.standard_normal((4, 4, 6))
        eps = rng.standard_normal((4, 4, 6))
        z_t = add_noise(z, t, eps)
        v = v_target(z, t, eps)
        np.testing.assert_allclose(predict_x0(z_t, v, t), z, atol=1e-12)
        np.testing.assert_allclose(predict_eps(z_t, v, t), eps, atol=1e-12)


def test_add_noise_limits():
    rng = np.random.default_rng(1)
    z, eps = rng.standard_normal((2, 4, 4, 6))
    np.testing.assert_allclose(add_noise(z, 1e-9, eps), z, atol=1e-8)
    np.testing.assert_allclose(add_noise(z, 1.0, eps), eps, atol=1e-12)


def test_noised_second_moment():
    rng = np.random.default_rng(2)
    z = rng.standard_normal((8, 8, 6))
    n = z.size
    for t in (0.2, 0.5, 0.8):
        a, s = COSINE(t)
        m = np.mean([np.sum(add_noise(z, t, rng.standard_normal(z.shape)) ** 2) for _ in range(1000)])
        assert m == pytest.approx(a * a * np.sum(z * z) + s * s * n, rel=0.05)


# ------------------------------------------------------------------ codec

def test_codec_constants_are_fixed_points():
    cd, co = np.full((16, 12, 3), 0.3), np.full((16, 12, 3), 0.7)
    z = encode_pair(cd, co)
    assert z.shape == (4, 3, 6)
    np.testing.assert_allclose(z[..., :3], 0.3, atol=1e-15)
    np.testing.assert_allclose(z[..., 3:], 0.7, atol=1e-15)
    d, o = decode_pair(z)
    np.testing.assert_allclose(d, cd, atol=1e-15)
    np.testing.assert_allclose(o, co, atol=1e-15)


def test_encode_of_decode_on_constant_regions():
    z = np.full((6, 6, 3), 0.4)
    np.testing.assert_allclose(encode(decode(z)), z, atol=1e-15)


def test_encode_energy_bound():
    x = np.random.default_rng(3).random((32, 32, 3))
    # block averaging: 16 * |E(x)|^2 <= |x|^2 by Jensen
    assert 16.0 * np.sum(encode(x) ** 2) <= np.sum(x ** 2)


def test_decode_is_low_pass():
    rng = np.random.default_rng(4)
    x = rng.random((32, 32, 3))
    y = decode(encode(x))
    assert np.var(y) < np.var(x)
    np.testing.assert_allclose(y.mean(), x.mean(), rtol=0.05)


def test_codec_adjoints_by_finite_differences():
    rng = np.random.default_rng(5)
    x = rng.random((16, 16, 3))
    gz = rng.standard_normal((4, 4, 3))
    ge = encode_adjoint(gz)
    z = rng.random((4, 4, 3))
    gx = rng.standard_normal((16, 16, 3))
    gd = decode_adjoint(gx)
    h = 1e-3
    for _ in range(50):
        i = tuple(rng.integers(0, 16, 2)) + (int(rng.integers(0, 3)),)
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        fd = (np.sum(encode(xp) * gz) - np.sum(encode(xm) * gz)) / (2 * h)
        assert ge[i] == pytest.approx(fd, rel=1e-6, abs=1e-12)
        j = tuple(rng.integers(0, 4, 2)) + (int(rng.integers(0, 3)),)
        zp, zm = z.copy(), z.copy()
        zp[j] += h
        zm[j] -= h
        fd = (np.sum(decode(zp) * gx) - np.sum(decode(zm) * gx)) / (2 * h)
        assert gd[j] == pytest.approx(fd, rel=1e-6, abs=1e-12)


def test_codec_rejects_bad_sizes():
    with pytest.raises(ValueError):
        encode(np.zeros((10, 12, 3)))


# ------------------------------------------------------------------ denoiser

def test_denoiser_shapes_and_size():
    model = Denoiser()
    assert model.n_parameters() < 100_000
    assert model.convs[0].in_channels == COND_CHANNELS + LATENT_CHANNELS + 2 * model.n_freqs
    p = DenoiserParams(model)
    out = p.predict_v(np.zeros((5, 7, 6)), 0.3, np.zeros((5, 7, 3)))
    assert out.shape == (5, 7, 6)
    # zero-initialised output layer
    assert np.all(out == 0.0)


class Recorder:
    def __init__(self, v_cond, v_unc):
        self.v_cond, self.v_unc = v_cond, v_unc
        self.conds = []

    def predict_v(self, z_t, t, cond):
        self.conds.append(np.array(cond))
        return self.v_unc if not np.any(cond) else self.v_cond


def test_cfg_degenerate_cases():
    rng = np.random.default_rng(6)
    vc, vu = rng.standard_normal((2, 4, 4, 6))
    z = rng.standard_normal((4, 4, 6))
    cond = rng.random((4, 4, 3)) + 0.1
    np.testing.assert_array_equal(denoise_cfg(Recorder(vc, vu), z, 0.5, cond, 1.0), vc)
    np.testing.assert_allclose(denoise_cfg(Recorder(vc, vu), z, 0.5, cond, 0.0), vu)
    np.testing.assert_allclose(denoise_cfg(Recorder(vc, vu), z, 0.5, cond, 3.0), vu + 3.0 * (vc - vu))
    rec = Recorder(vc, vc)
    for s in (0.0, 1.0, 3.0, 7.5):
        np.testing.assert_allclose(denoise_cfg(rec, z, 0.5, cond, s), vc)
    # the unconditional branch sees zeroed conditioning
    assert any(not c.any() for c in rec.conds)


def test_ddim_oracle_recovers_target_in_one_step():
    rng = np.random.default_rng(7)
    z_star = rng.standard_normal((4, 4, 6))
    oracle = OraclePrior(z_star)
    for t in (0.05, 0.5, 0.98, 1.0):
        z_start = rng.standard_normal((4, 4, 6))
        out = ddim_sample(oracle, z_start, t, np.zeros((4, 4, 3)), n_steps=1, guidance_scale=3.0)
        np.testing.assert_allclose(out, z_star, atol=1e-12)
    out = ddim_sample(oracle, rng.standard_normal((4, 4, 6)), 0.98, np.zeros((4, 4, 3)), n_steps=5)
    np.testing.assert_allclose(out, z_star, atol=1e-10)


def test_ddim_one_step_closed_form():
    rng = np.random.default_rng(8)
    v = rng.standard_normal((4, 4, 6))
    z = rng.standard_normal((4, 4, 6))
    rec = Recorder(v, v)
    out = ddim_sample(rec, z, 0.7, np.ones((4, 4, 3)), n_steps=1, guidance_scale=1.0)
    a, s = COSINE(0.7)
    np.testing.assert_allclose(out, a * z - s * v, atol=1e-14)


def test_ddim_small_t_is_identity():
    rng = np.random.default_rng(9)
    z = rng.standard_normal((4, 4, 6))
    rec = Recorder(rng.standard_normal((4, 4, 6)), None)
    out = ddim_sample(rec, z, 1e-6, np.ones((4, 4, 3)), n_steps=5, guidance_scale=1.0)
    np.testing.assert_allclose(out, z, atol=1e-4)
    with pytest.raises(ValueError):
        ddim_sample(rec, z, 0.0, np.ones((4, 4, 3)))


def test_predict_materials_deterministic_and_clamped():
    torch.manual_seed(0)
    model = Denoiser()
    # give the untrained net a non-zero output so clamping matters
    torch.nn.init.normal_(model.convs[-1].weight, std=0.5)
    p = DenoiserParams(model)
    x = np.random.default_rng(10).random((16, 16, 3))
    a1, o1 = predict_materials(p, x, k=1, seed=3)
    a2, o2 = predict_materials(p, x, k=1, seed=3)
    assert np.array_equal(a1, a2) and np.array_equal(o1, o2)
    a3, _ = predict_materials(p, x, k=1, seed=4)
    assert not np.array_equal(a1, a3)
    for arr in (a1, o1):
        assert arr.shape == (16, 16, 3) and arr.min() >= 0.0 and arr.max() <= 1.0


# ------------------------------------------------------------------ training

def _tiny_dataset(n=2, size=16, seed=0):
    rng = np.random.default_rng(seed)
    return [Triplet(rng.random((size, size, 3)), rng.random((size, size, 3)), rng.random((size, size, 3)))
            for _ in range(n)]


def test_training_deterministic():
    data = _tiny_dataset()
    cfg = TrainConfig(steps=30, batch_size=4, patch=16)
    a = train_denoiser(data, cfg)
    b = train_denoiser(data, cfg)
    assert a.losses == b.losses
    c = train_denoiser(data, TrainConfig(steps=30, batch_size=4, patch=16, seed=1))
    assert a.losses != c.losses


def test_dropout_replay():
    data = _tiny_dataset()
    r0 = train_denoiser(data, TrainConfig(steps=40, batch_size=4, patch=16, cfg_dropout=0.0))
    r5 = train_denoiser(data, TrainConfig(steps=40, batch_size=4, patch=16, cfg_dropout=0.05))
    # same data stream, only the dropped set differs
    np.testing.assert_array_equal(r0.timesteps, r5.timesteps)
    assert not r0.dropped.any()
    replay = np.random.default_rng([0, 1]).random((40, 4)) < 0.05
    np.testing.assert_array_equal(r5.dropped, replay)
    assert 0 < r5.dropped.sum() < 40 * 4


def test_untrained_loss_near_t_one():
    # constant triplets: every latent element equals the image value, so the
    # v target at t = 1 is -z and an untrained (v = 0) net scores E[z^2]
    size = 16
    vals = [(0.2, 0.5, 0.8), (0.9, 0.1, 0.4)]
    data = [Triplet(np.full((size, size, 3), 0.5), np.full((size, size, 3), a), np.full((size, size, 3), o))
            for a, o in zip(vals, vals[::-1])]
    res = train_denoiser(data, TrainConfig(steps=1, batch_size=64, patch=16, t_range=(0.999, 1.0)))
    ez2 = np.mean(np.square(vals))
    t = res.timesteps[0]
    a, s = COSINE(t)
    expected = np.mean(a * a) + np.mean(s * s) * ez2
    assert res.losses[0] == pytest.approx(expected, rel=0.02)


def test_divergence_guard(monkeypatch):
    import lumafactor.prior.training as training

    class Blowup(Denoiser):
        calls = 0

        def forward(self, cond, z_t, t):
            Blowup.calls += 1
            out = super().forward(cond, z_t, t)
            return out + 100.0 if Blowup.calls > 15 else out

    monkeypatch.setattr(training, "Denoiser", Blowup)
    with pytest.raises(TrainingDivergedError, match="exceeds 10x initial"):
        train_denoiser(_tiny_dataset(), TrainConfig(steps=30, batch_size=4, patch=16))


def test_empty_dataset_rejected():
    with pytest.raises(ValueError):
        train_denoiser([], TrainConfig(steps=1))


def test_triplet_validation():
    with pytest.raises(ValueError):
        Triplet(np.zeros((8, 8, 3)), np.zeros((8, 4, 3)), np.zeros((8, 8, 3)))
    with pytest.raises(ValueError):
        Triplet(np.zeros((6, 6, 3)), np.zeros((6, 6, 3)), np.zeros((6, 6, 3)))


def test_overfit_single_triplet_loss(overfit_run):
    _, res = overfit_run
    initial = np.mean(res.losses[:10])
    final = np.mean(res.losses[1950:2000])
    assert final < 0.1 * initial


def test_overfit_prediction_matches_training_buffers(overfit_run):
    tr, res = overfit_run
    albedo, orm = predict_materials(res.params, tr.x, k=10, guidance_scale=1.0)
    assert np.mean(np.abs(albedo - tr.albedo)) < 0.05
    assert np.mean(np.abs(orm - tr.orm)) < 0.05


def test_checkpoint_round_trip(tmp_path, overfit_run):
    tr, res = overfit_run
    path = tmp_path / "prior.smat"
    res.params.save(path)
    assert path.read_bytes()[:4] == b"SMAT"
    back = DenoiserParams.load(path)
    z = np.random.default_rng(11).standard_normal((16, 16, 6))
    cond = encode(tr.x)
    np.testing.assert_array_equal(back.predict_v(z, 0.4, cond), res.params.predict_v(z, 0.4, cond))


def test_checkpoint_errors(tmp_path):
    bad = tmp_path / "bad.smat"
    bad.write_bytes(b"XXXX" + bytes(12))
    with pytest.raises(ValueError, match="byte offset 0"):
        DenoiserParams.load(bad)
    good = tmp_path / "good.smat"
    DenoiserParams(Denoiser()).save(good)
    raw = good.read_bytes()
    (tmp_path / "short.smat").write_bytes(raw[:200])
    with pytest.raises(ValueError, match="byte offset"):
        DenoiserParams.load(tmp_path / "short.smat")
    (tmp_path / "ver.smat").write_bytes(raw[:4] + (99).to_bytes(4, "little") + raw[8:])
    with pytest.raises(ValueError, match="byte offset 4"):
        DenoiserParams.load(tmp_path / "ver.smat")


def test_augmentation_keeps_triplets_consistent():
    from lumafactor.prior.training import _augment
    rng = np.random.default_rng(12)
    albedo = rng.random((8, 8, 3))
    seen = set()
    for _ in range(40):
        x, a, o = _augment(0.5 * albedo, albedo, albedo.copy(), rng)
        np.testing.assert_array_equal(x, 0.5 * a)
        # same spatial transform for all three, channels permuted only in x and albedo
        np.testing.assert_array_equal(np.sort(a, -1), np.sort(o, -1))
        seen.add(a.tobytes())
    assert len(seen) > 20
    rect = rng.random((8, 12, 3))
    assert _augment(rect, rect, rect, rng)[0].shape == (8, 12, 3)


def test_augmented_training_runs():
    res = train_denoiser(_tiny_dataset(), TrainConfig(steps=5, batch_size=2, patch=16, augment=True))
    plain = train_denoiser(_tiny_dataset(), TrainConfig(steps=5, batch_size=2, patch=16))
    assert len(res.losses) == 5 and res.losses != plain.losses
