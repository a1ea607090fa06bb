import json

import numpy as np
import pytest
from hypothesis import given, strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from scratchattack.classifier import BuiltinClassifier
from scratchattack.defenses import (CHROMA_TABLE, LUMA_TABLE, DefenseError, DefenseSpec,
                                    clip_image, jpeg_roundtrip, median_filter, quant_tables,
                                    recovery_eval, write_recovery_csv, write_recovery_log)


def brute_median(x):
    h, w, c = x.shape
    out = np.empty_like(x)
    for i in range(h):
        for j in range(w):
            for k in range(c):
                vals = [x[min(max(i + di, 0), h - 1), min(max(j + dj, 0), w - 1), k]
                        for di in (-1, 0, 1) for dj in (-1, 0, 1)]
                out[i, j, k] = sorted(vals)[4]
    return out


def test_clip():
    x = np.array([[[1.5, -0.2, 0.5]]])
    assert_array_equal(clip_image(x), [[[1.0, 0.0, 0.5]]])
    y = np.random.default_rng(0).random((4, 4, 3))
    assert_array_equal(clip_image(y), y)


@given(st.integers(0, 2 ** 32 - 1))
def test_clip_idempotent_and_in_range(seed):
    x = np.random.default_rng(seed).normal(0.5, 2, (5, 5, 3))
    c = clip_image(x)
    assert_array_equal(clip_image(c), c)
    assert c.min() >= 0 and c.max() <= 1


def test_median_constant_identity():
    x = np.full((6, 7, 3), 0.4)
    assert_array_equal(median_filter(x), x)
    assert_array_equal(median_filter(median_filter(x)), x)


def test_median_removes_impulse():
    x = np.full((9, 9, 3), 0.2)
    x[4, 4] = 1.0
    assert_array_equal(median_filter(x), np.full((9, 9, 3), 0.2))
    assert_array_equal(median_filter(x), brute_median(x))


def test_median_erases_thin_scratch_interior():
    x = np.full((16, 16, 3), 0.3)
    x[3:13, 7] = [1.0, 0.0, 0.0]
    out = median_filter(x)
    assert_array_equal(out, brute_median(x))
    assert_array_equal(out[4:12, 7], np.full((8, 3), 0.3))


@given(st.integers(0, 2 ** 32 - 1), st.integers(3, 8), st.integers(3, 8))
def test_median_matches_brute_force_and_uses_input_values(seed, h, w):
    x = np.random.default_rng(seed).integers(0, 5, (h, w, 3)) / 4.0
    out = median_filter(x)
    assert_array_equal(out, brute_median(x))
    for i in range(h):
        for j in range(w):
            for k in range(3):
                hood = x[max(i - 1, 0):i + 2, max(j - 1, 0):j + 2, k]
                assert out[i, j, k] in hood


def test_median_too_small():
    with pytest.raises(DefenseError):
        median_filter(np.zeros((2, 5, 3)))


def test_quality_50_uses_standard_tables():
    luma, chroma = quant_tables(50)
    assert_array_equal(luma, LUMA_TABLE)
    assert_array_equal(chroma, CHROMA_TABLE)


def test_quality_range():
    for q in (0, 101, 50.5):
        with pytest.raises(DefenseError):
            quant_tables(q)


def dc_roundtrip(value, quality):
    """Predicted output for a constant image: only the DC term survives."""
    luma, chroma = quant_tables(quality)
    rgb = np.floor(np.asarray(value) * 255 + 0.5)
    r, g, b = rgb
    ycc = np.array([0.299 * r + 0.587 * g + 0.114 * b,
                    128 - 0.168736 * r - 0.331264 * g + 0.5 * b,
                    128 + 0.5 * r - 0.418688 * g - 0.081312 * b]) - 128
    # orthonormal 8x8 DCT: DC = 8 * mean
    # brute-force check of that identity on one block
    block = np.full((8, 8), ycc[0])
    n = np.arange(8)
    dc = sum(block[i, j] for i in n for j in n) / 8.0
    assert dc == pytest.approx(8 * ycc[0])
    q = np.array([luma[0, 0], chroma[0, 0], chroma[0, 0]])
    dcq = np.sign(8 * ycc) * np.floor(np.abs(8 * ycc) / q + 0.5) * q
    y, cb, cr = dcq / 8 + np.array([128, 0, 0])
    out = np.array([y + 1.402 * cr, y - 0.344136 * cb - 0.714136 * cr, y + 1.772 * cb])
    return np.clip(out, 0, 255) / 255


@pytest.mark.parametrize("quality", [1, 10, 50, 75, 90, 99, 100])
def test_jpeg_constant_image(quality):
    value = [0.2, 0.55, 0.9]
    x = np.tile(value, (13, 11, 1))
    out = jpeg_roundtrip(x, quality)
    assert np.ptp(out.reshape(-1, 3), axis=0).max() <= 1 / 255
    assert_allclose(out[0, 0], dc_roundtrip(value, quality), atol=1 / 255)


def test_jpeg_high_quality_error_small():
    x = np.random.default_rng(0).random((32, 32, 3))
    out = jpeg_roundtrip(x, 99)
    assert np.abs(out - x).mean() < 0.02
    assert out.shape == x.shape
    assert_array_equal(jpeg_roundtrip(x, 99), out)


def test_jpeg_range_and_input_check():
    x = np.random.default_rng(1).random((10, 10, 3))
    out = jpeg_roundtrip(x, 5)
    assert out.min() >= 0 and out.max() <= 1
    with pytest.raises(DefenseError):
        jpeg_roundtrip(x + 1, 90)


def test_defense_spec():
    assert DefenseSpec("jpeg", 90).label == "JPEG, quality = 90"
    with pytest.raises(DefenseError):
        DefenseSpec("blur")
    with pytest.raises(DefenseError):
        DefenseSpec("jpeg", 0)
    # median and JPEG clip network-domain inputs first
    x = np.full((4, 4, 3), 3.0)
    assert_array_equal(DefenseSpec("median").apply(x), np.ones((4, 4, 3)))


def threshold_model():
    """Class 1 iff mean red exceeds mean green; class 0 otherwise."""
    W = np.zeros((2, 12))
    W[1, 0::3] = 100.0
    W[1, 1::3] = -100.0
    return BuiltinClassifier([W], [np.zeros(2)])


def test_recovery_identity_defense_recovers_nothing():
    m = threshold_model()
    adv = np.zeros((2, 2, 3))
    adv[..., 0] = 0.9
    rep = recovery_eval([(0, adv)], DefenseSpec("clip"), m)
    assert rep.recovery_rate == 0.0 and rep.total == 1 and rep.image_rate == 0.0
    assert rep.network_rate is None


def test_recovery_rejects_non_adversarial_and_empty():
    m = threshold_model()
    clean = np.zeros((2, 2, 3))
    with pytest.raises(DefenseError):
        recovery_eval([], DefenseSpec("clip"), m)
    with pytest.raises(DefenseError):
        recovery_eval([(0, clean)], DefenseSpec("clip"), m)


def test_recovery_split_and_recount(tmp_path):
    m = threshold_model()
    net = np.zeros((2, 2, 3))
    net[..., 0] = [[5.0, 0.0], [0.0, 0.0]]
    net[..., 1] = 0.9                      # clip -> red mean 0.25 < green mean 0.9: recovered
    img = np.zeros((2, 2, 3))
    img[..., 0] = 0.9                      # stays adversarial
    benign = [(0, np.zeros((2, 2, 3))), (1, img)]
    rep = recovery_eval([(0, net), (0, img), (1, np.zeros((2, 2, 3)))], DefenseSpec("clip"), m, benign)
    assert rep.rejected == 0 and rep.total == 3
    assert rep.network_count == 1 and rep.network_rate == 100.0
    assert rep.image_count == 2
    assert rep.accuracy_drop == 0.0
    write_recovery_log(rep, tmp_path / "log.jsonl")
    write_recovery_csv([rep], tmp_path / "r.csv")
    rows = [json.loads(l) for l in open(tmp_path / "log.jsonl")]
    assert 100.0 * sum(r["after"] == r["label"] for r in rows) / len(rows) == rep.recovery_rate
    assert open(tmp_path / "r.csv").readline().strip() == "Method,Recovery Rate,Network Domain,Image Domain"
