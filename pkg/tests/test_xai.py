import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fdclab.augment import augment_matrix
from fdclab.nnet import Network
from fdclab.nnet.network import build_spec
from fdclab.xai import (CamHeatmap, attention_overlap, cam_from, export_overlay, grad_cam, overlay,
                        span_area_share, upsample_nearest)
from helpers import cam_fd_fixture, fd_cams

TINY = build_spec("tiny", [(4,), (3,)], (10,), input_shape=(1, 224, 224), pre_pools=3)


def image(seed=0):
    return np.random.default_rng(seed).random((1, 1, 224, 224))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 16), st.integers(0, 9), st.sampled_from([1, 2]))
def test_nonnegative_and_shape(seed, target, layer):
    m = Network(TINY, seed=seed % 7)
    cam = grad_cam(m, image(seed), target, layer)
    side = 28 if layer == 1 else 14
    assert cam.raw.shape == (side, side) and cam.upsampled.shape == (224, 224)
    assert (cam.raw >= 0).all() and np.isfinite(cam.raw).all()
    assert (cam.upsampled >= 0).all()


def test_zero_gradient_zero_map():
    m = Network(TINY, seed=1)
    m.layers[-1].params["weight"][5] = 0  # class 5 logit ignores every feature
    cam = grad_cam(m, image(), 5, 1)
    assert not cam.raw.any() and not cam.weights.any()


def test_errors():
    m = Network(TINY, seed=1)
    with pytest.raises(ValueError):
        grad_cam(m, image(), 0, 3)
    with pytest.raises(ValueError):
        grad_cam(m, image(), 10, 1)


def test_single_map_case():
    spec = build_spec("one", [(1,)], (10,), input_shape=(1, 224, 224), pre_pools=4)
    m = Network(spec, seed=2)
    m.layers[-1].params["weight"][3] = np.abs(m.layers[-1].params["weight"][3])  # alpha > 0
    x = image(3)
    cam = grad_cam(m, x, 3, 1)
    A = m.feature_maps[1][0, :, :, 0].astype(np.float64)
    assert cam.weights[0] > 0
    np.testing.assert_allclose(cam.raw, cam.weights[0] * np.maximum(A, 0), rtol=1e-12)


@pytest.mark.parametrize("layer", [1, 2])
def test_finite_difference_oracle(layer):
    m, x = cam_fd_fixture()
    refs = fd_cams(m, x, layer)
    assert any(ref.max() > 0 for ref in refs)
    for c, ref in enumerate(refs):
        cam = grad_cam(m, x, c, layer)
        assert np.abs(cam.raw - ref).max() <= 1e-3 * max(np.abs(ref).max(), 1e-12), c


def test_linearity_pre_relu():
    rng = np.random.default_rng(0)
    A, dA = rng.random((7, 7, 5)), rng.normal(size=(7, 7, 5))
    alpha, lin = cam_from(A, dA)
    alpha2, lin2 = cam_from(2 * A, dA)
    np.testing.assert_array_equal(alpha, alpha2)
    np.testing.assert_allclose(lin2, 2 * lin, rtol=1e-14)
    with pytest.raises(ValueError):
        cam_from(A, dA[:, :, :4])


def test_upsample_blocks():
    up = upsample_nearest(np.array([[1.0, 2.0], [3.0, 4.0]]))
    assert up.shape == (224, 224)
    for (i, j), v in np.ndenumerate(np.array([[1, 2], [3, 4]])):
        assert (up[112 * i:112 * (i + 1), 112 * j:112 * (j + 1)] == v).all()


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 28), st.integers(1, 28), st.integers(0, 2 ** 16))
def test_upsample_argmax_within_cell(h, w, seed):
    m = np.random.default_rng(seed).random((h, w))
    up = upsample_nearest(m)
    i, j = np.unravel_index(up.argmax(), up.shape)
    r, c = np.unravel_index(m.argmax(), m.shape)
    assert abs(i - (r + 0.5) * 224 / h) <= 224 / h and abs(j - (c + 0.5) * 224 / w) <= 224 / w


def _cam(up):
    return CamHeatmap(1, 0, up[::8, ::8], up, np.ones(1), 0.0)


def test_overlay_examples():
    img = np.random.default_rng(1).random((224, 224))
    np.testing.assert_array_equal(overlay(img, _cam(np.zeros((224, 224)))), img)
    np.testing.assert_allclose(overlay(img, _cam(np.full((224, 224), 3.0))), 0.5 * img + 0.5)


def fault_cols(lo, hi):
    fc = np.zeros(31, bool)
    fc[lo:hi] = True
    return fc


def test_overlap_examples():
    fc = fault_cols(20, 31)
    method = "All_Repeat"
    sdi = np.zeros((15, 31))
    sdi[:, 20:] = 1
    strip = augment_matrix(sdi, method)  # hot exactly on the fault columns
    assert attention_overlap(strip, fc, method) == 1.0
    assert attention_overlap(np.ones((224, 224)), fc, method) == pytest.approx(
        span_area_share(fc, method), abs=1e-12)
    with pytest.raises(ValueError, match="positive"):
        attention_overlap(np.zeros((224, 224)), fc, method)
    with pytest.raises(ValueError, match="span"):
        attention_overlap(np.ones((224, 224)), np.zeros(31, bool), method)


@pytest.mark.parametrize("method", ["All_Tile", "All_Repeat", "LR_Flip_Tile", "UD_Flip_Repeat"])
def test_area_share_matches_geometry(method):
    fc = fault_cols(5, 12)
    sdi = np.zeros((15, 31))
    sdi[:, 5:12] = 1
    assert span_area_share(fc, method) == pytest.approx(augment_matrix(sdi, method).mean())


def test_overlap_outside_strip_is_zero():
    fc = fault_cols(0, 5)
    sdi = np.zeros((15, 31))
    sdi[:, 25:] = 1
    assert attention_overlap(augment_matrix(sdi, "All_Tile"), fc, "All_Tile") == 0.0


def test_export_overlay(tmp_path):
    m = Network(TINY, seed=1)
    x = image(2)
    cam = grad_cam(m, x, 4, 2)
    meta = export_overlay(cam, x[0, 0], str(tmp_path / "sub" / "c"), {"overlap": 0.5})
    for suffix in ("_map.pgm", "_overlay.pgm", "_raw.csv", ".json"):
        assert (tmp_path / "sub" / f"c{suffix}").exists()
    assert (tmp_path / "sub" / "c_map.pgm").read_bytes().startswith(b"P5\n224 224\n255\n")
    raw = np.loadtxt(tmp_path / "sub" / "c_raw.csv", delimiter=",")
    np.testing.assert_allclose(raw, cam.raw, rtol=1e-7)
    on_disk = json.loads((tmp_path / "sub" / "c.json").read_text())
    assert on_disk == meta and meta["layer"] == 2 and meta["target"] == 4
    assert len(meta["weights"]) == 3 and meta["overlap"] == 0.5
