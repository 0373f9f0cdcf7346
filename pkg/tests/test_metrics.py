import json
import math

import numpy as np
import pytest

from oracles import grid_search_scale, psnr_closed_form
from lumafactor.metrics import CSV_HEADER, evaluate, l1, psnr, rescale_channels, ssim


def test_psnr_closed_forms():
    a = np.zeros((8, 8, 3))
    assert psnr(a, np.full_like(a, 0.5)) == pytest.approx(20 * math.log10(2), abs=1e-4)
    assert psnr(a, np.full_like(a, 0.5)) == pytest.approx(6.0206, abs=1e-4)
    assert psnr(a, np.full_like(a, 0.1)) == pytest.approx(20.0, abs=1e-9)
    assert psnr(a, a) == float("inf")
    assert psnr(a, np.full_like(a, 2.0), peak=4.0) == pytest.approx(psnr_closed_form(4.0, 4.0))


def test_psnr_against_oracle():
    rng = np.random.default_rng(0)
    a, b = rng.random((2, 16, 16, 3))
    assert psnr(a, b) == pytest.approx(psnr_closed_form(np.mean((a - b) ** 2)), rel=1e-12)


def test_masked_metrics_ignore_outside():
    a = np.zeros((4, 4, 3))
    b = a.copy()
    b[0] = 1.0
    mask = np.ones((4, 4), bool)
    mask[0] = False
    assert psnr(a, b, mask=mask) == float("inf")
    assert l1(a, b, mask=mask) == 0.0
    assert l1(a, b) == pytest.approx(0.25)


def test_shape_mismatch_rejected():
    with pytest.raises(ValueError):
        l1(np.zeros((2, 2)), np.zeros((2, 3)))


def test_ssim_identity_and_bounds():
    rng = np.random.default_rng(1)
    a = rng.random((24, 24, 3))
    assert ssim(a, a) == pytest.approx(1.0, abs=1e-12)
    b = np.clip(a + 0.2 * rng.standard_normal(a.shape), 0, 1)
    s = ssim(a, b)
    assert -1.0 <= s < 0.99
    assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)
    with pytest.raises(ValueError):
        ssim(np.zeros((4, 4)), np.zeros((4, 4)))


def test_rescale_matches_grid_search():
    rng = np.random.default_rng(2)
    for _ in range(20):
        gt = rng.random((7, 7, 3))
        c = rng.uniform(0.3, 3.0, 3)
        pred = gt / c + 0.05 * rng.standard_normal(gt.shape)
        _, scales = rescale_channels(pred, gt)
        for ch in range(3):
            ref = grid_search_scale(pred[..., ch].ravel().tolist(), gt[..., ch].ravel().tolist())
            assert abs(scales[ch] - ref) <= 1e-4


def test_rescale_exact_recovery_and_clamps():
    rng = np.random.default_rng(3)
    gt = rng.uniform(0.1, 0.5, (8, 8, 3))
    c = np.array([0.5, 2.0, 1.5])
    scaled, scales = rescale_channels(gt / c, gt)
    np.testing.assert_allclose(scales, c, rtol=1e-12)
    np.testing.assert_allclose(scaled, gt, atol=1e-12)
    _, s = rescale_channels(gt * 1000.0, gt)
    np.testing.assert_allclose(s, 0.1)
    _, s = rescale_channels(np.zeros_like(gt), gt)
    np.testing.assert_array_equal(s, 1.0)


def test_rescale_respects_mask():
    gt = np.full((4, 4, 3), 0.4)
    pred = np.full((4, 4, 3), 0.2)
    pred[0] = 5.0
    mask = np.ones((4, 4), bool)
    mask[0] = False
    _, s = rescale_channels(pred, gt, mask)
    np.testing.assert_allclose(s, 2.0)


def test_evaluate_report():
    rng = np.random.default_rng(4)
    gt = [{"relit": rng.random((16, 16, 3)), "albedo": rng.random((16, 16, 3)), "orm": rng.random((16, 16, 3)),
           "mask": np.ones((16, 16), bool)} for _ in range(2)]
    perfect = [{"relit": g["relit"] * 0.5, "albedo": [g["albedo"], g["albedo"]], "orm": g["orm"]} for g in gt]
    rep = evaluate(perfect, gt, config_hash="abc")
    m = rep.means()
    assert m["albedo"]["l1"] < 1e-12 and m["orm"]["l1"] == 0.0
    assert m["relit"]["ssim"] == pytest.approx(1.0)
    assert rep.n_views == 2 and rep.n_samples == 2
    doc = json.loads(rep.to_json())
    assert doc["mean"]["orm"]["psnr"] == "inf" and doc["config_hash"] == "abc"
    row = rep.to_csv_row("ours").split(",")
    assert row[0] == "ours" and len(row) == len(CSV_HEADER.split(","))
    with pytest.raises(ValueError):
        evaluate(perfect[:1], gt)


def test_orm_ignores_occlusion_channel():
    gt = [{"orm": np.full((8, 8, 3), 0.5)}]
    pred = [{"orm": np.concatenate([np.ones((8, 8, 1)), np.full((8, 8, 2), 0.5)], -1)}]
    assert evaluate(pred, gt).means()["orm"]["l1"] == 0.0
