import itertools
import math

import numpy as np
import pytest
from conftest import half_noise, iou
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import ndimage

from retex.graphcut import contrast_weights, mrf_energy, solve_binary_mrf
from retex.superpixels import relabel_connected, segment_stats, slic_superpixels
from retex.texture import (
    RegionPartition,
    detect_textures,
    extract_regions,
    graphcut_refine,
    iterative_threshold,
    refine_energy,
    texture_reliability,
    vote_segment_count,
    vote_superpixels,
    windowed_variations,
)


def _variations_oracle(lum, sigma):
    """Direct double sum over the clamped (2r+1)^2 window with separable Gaussian weights."""
    h, w = lum.shape
    rad = math.ceil(2 * sigma)
    t = np.arange(-rad, rad + 1)
    g1 = np.exp(-t * t / (2 * sigma * sigma))
    g1 /= g1.sum()
    gx = np.zeros_like(lum)
    gy = np.zeros_like(lum)
    for y in range(h):
        for x in range(w):
            gx[y, x] = lum[y, min(x + 1, w - 1)] - lum[y, x]
            gy[y, x] = lum[min(y + 1, h - 1), x] - lum[y, x]
    out = {k: np.zeros_like(lum) for k in ("dx", "dy", "sx", "sy")}
    for y in range(h):
        for x in range(w):
            for i, dy in enumerate(t):
                for j, dx in enumerate(t):
                    yy, xx = min(max(y + dy, 0), h - 1), min(max(x + dx, 0), w - 1)
                    wt = g1[i] * g1[j]
                    out["dx"][y, x] += wt * abs(gx[yy, xx])
                    out["dy"][y, x] += wt * abs(gy[yy, xx])
                    out["sx"][y, x] += wt * gx[yy, xx]
                    out["sy"][y, x] += wt * gy[yy, xx]
    return out["dx"], out["dy"], np.abs(out["sx"]), np.abs(out["sy"])


def test_constant_field_has_no_variation():
    v = windowed_variations(np.full((10, 12), 0.4))
    for m in (v.dx, v.dy, v.lx, v.ly):
        np.testing.assert_array_equal(m, 0.0)
    np.testing.assert_array_equal(texture_reliability(v), 0.0)


def test_ramp_total_equals_inherent():
    lum = np.tile(np.linspace(0, 1, 20), (15, 1))
    v = windowed_variations(lum)
    np.testing.assert_allclose(v.dx, v.lx, rtol=1e-12)
    R = texture_reliability(v)
    # dy = 0 on a horizontal ramp, so R = Dx / (Dx + eps) ~ 1 there
    assert np.all(R[:, :10] > 0.999) and np.all(R <= 1.0)


def test_checkerboard_matches_direct_summation():
    lum = (np.indices((8, 8)).sum(0) % 2).astype(float)
    v = windowed_variations(lum, 3.0)
    dx, dy, lx, ly = _variations_oracle(lum, 3.0)
    for got, want in ((v.dx, dx), (v.dy, dy), (v.lx, lx), (v.ly, ly)):
        np.testing.assert_allclose(got, want, atol=1e-13)
    R = texture_reliability(v)
    Roracle = dx / (lx + 1e-5) + dy / (ly + 1e-5)
    np.testing.assert_allclose(R, Roracle, rtol=1e-9, atol=1e-9)
    ramp = texture_reliability(windowed_variations(np.tile(np.linspace(0, 1, 8), (8, 1))))
    assert R[2:6, 2:6].min() > ramp[2:6, 2:6].max()


@given(st.integers(0, 2**31))
@settings(max_examples=25, deadline=None)
def test_reliability_nonnegative(seed):
    lum = np.random.default_rng(seed).random((12, 9))
    assert np.all(texture_reliability(windowed_variations(lum)) >= 0)


def test_threshold_binary_field():
    R = np.array([[0.0, 1.0], [0.0, 1.0]])
    th = iterative_threshold(R)
    assert th.threshold == 0.5 and th.history == [0.5, 0.5]
    np.testing.assert_array_equal(th.mask, R >= 0.5)


def test_threshold_constant_field_is_all_nt():
    th = iterative_threshold(np.full((4, 4), 3.0))
    assert th.degenerate and th.threshold == 3.0 and not th.mask.any()


def test_threshold_hand_trace():
    th = iterative_threshold(np.array([0.0, 0.0, 0.0, 10.0]))
    assert th.history == [2.5, 5.0, 5.0]
    np.testing.assert_array_equal(th.mask, [False, False, False, True])


@given(st.integers(0, 2**31))
@settings(max_examples=40, deadline=None)
def test_threshold_stays_in_range_and_terminates(seed):
    R = np.random.default_rng(seed).exponential(1.0, 200)
    th = iterative_threshold(R)
    assert th.iterations <= 64
    assert all(R.min() <= t <= R.max() for t in th.history)


def test_slic_constant_image_quarters():
    seg = slic_superpixels(np.full((64, 64, 3), 0.5), 4)
    sizes = np.bincount(seg.ravel())
    assert len(sizes) == 4 and sizes.min() >= 0.8 * sizes.max()


def test_slic_quadrants():
    r = np.zeros((64, 64, 3))
    r[:32, 32:] = (1, 0, 0)
    r[32:, :32] = (0, 1, 0)
    r[32:, 32:] = (0, 0, 1)
    seg = slic_superpixels(r, 4)
    quad = (np.arange(64)[:, None] >= 32) * 2 + (np.arange(64)[None, :] >= 32)
    assert seg.max() == 3
    for k in range(4):
        labs = np.unique(seg[quad == k])
        assert len(labs) == 1 and iou(seg == labs[0], quad == k) == 1.0


@pytest.mark.parametrize("K", [20, 100, 300])
def test_slic_segments_connected_and_compact(rng, K):
    seg = slic_superpixels(rng.random((60, 80, 3)), K)
    n = seg.max() + 1
    np.testing.assert_array_equal(np.unique(seg), np.arange(n))
    np.testing.assert_array_equal(relabel_connected(seg), seg)  # no label splits further
    assert 0.5 * K <= n <= 1.5 * K


def test_segment_stats_oracle(rng):
    seg = rng.integers(0, 4, (6, 7))
    vals = rng.random((6, 7, 2))
    m, v = segment_stats(seg, vals)
    for k in range(4):
        sel = vals[seg == k]
        np.testing.assert_allclose(m[k], sel.mean(0))
        np.testing.assert_allclose(v[k], sel.var(0), atol=1e-14)


def test_vote_majority_rules():
    seg = np.array([[0, 0, 0, 0, 0, 1, 2, 2, 2, 2]])
    noisy = np.array([[1, 1, 1, 0, 0, 0, 1, 1, 0, 0]], bool)
    out = vote_superpixels(noisy, seg)
    np.testing.assert_array_equal(out[0, :5], True)  # 3 of 5
    assert not out[0, 5]  # 0 of 1
    np.testing.assert_array_equal(out[0, 6:], False)  # 2 of 4 is a tie


@given(st.integers(0, 2**31))
@settings(max_examples=30, deadline=None)
def test_vote_idempotent(seed):
    g = np.random.default_rng(seed)
    seg = g.integers(0, 6, (8, 8))
    once = vote_superpixels(g.random((8, 8)) < 0.5, seg)
    np.testing.assert_array_equal(vote_superpixels(once, seg), once)


def _random_mrf(g, h=3, w=3):
    return g.random((h, w)) * 4, g.random((h, w)) * 4, g.random((h, w)) * 2, g.random((h, w)) * 2


def _brute_force_min(c0, c1, wr, wd):
    h, w = c0.shape
    best = np.inf
    for bits in itertools.product([0, 1], repeat=h * w):
        best = min(best, mrf_energy(np.array(bits).reshape(h, w), c0, c1, wr, wd))
    return best


def test_mrf_matches_enumeration(rng):
    for _ in range(40):
        c0, c1, wr, wd = _random_mrf(rng)
        lab = solve_binary_mrf(c0, c1, wr, wd)
        assert mrf_energy(lab, c0, c1, wr, wd) == pytest.approx(_brute_force_min(c0, c1, wr, wd), rel=1e-12, abs=1e-12)


def test_mrf_zero_weights_gives_unary_argmin(rng):
    c0, c1 = rng.random((5, 6)), rng.random((5, 6))
    z = np.zeros((5, 6))
    np.testing.assert_array_equal(solve_binary_mrf(c0, c1, z, z), c1 < c0)


def test_energy_oracle_on_toy():
    c0 = np.array([[1.0, 0.0]])
    c1 = np.array([[0.0, 2.0]])
    wr = np.array([[0.5, 0.0]])
    assert mrf_energy(np.array([[1, 0]]), c0, c1, wr, np.zeros((1, 2))) == 0.5
    assert mrf_energy(np.array([[0, 0]]), c0, c1, wr, np.zeros((1, 2))) == 1.0


def test_contrast_weights_formula():
    r = np.zeros((2, 2, 3))
    r[0, 1] = 0.1
    wr, wd = contrast_weights(r, 8.0, 0.1)
    assert wr[0, 0] == pytest.approx(8 * math.exp(-0.03 / 0.02))
    assert wd[0, 0] == 8.0 and wr[0, 1] == 0 and wd[1, 0] == 0


def test_speckle_removed_by_graphcut():
    r = np.full((21, 21, 3), 0.5)
    mask = np.zeros((21, 21), bool)
    mask[10, 10] = True
    R = np.where(mask, 2.0, 0.0)
    out = graphcut_refine(r, mask, R, 1.0)
    assert not out.any()
    assert refine_energy(r, out, mask, R, 1.0) < refine_energy(r, mask, mask, R, 1.0)


def test_graphcut_never_increases_energy(rng):
    r = rng.random((16, 16, 3))
    R = rng.exponential(1.0, (16, 16))
    mask = R > 1.0
    out = graphcut_refine(r, mask, R, 1.0)
    assert refine_energy(r, out, mask, R, 1.0) <= refine_energy(r, mask, mask, R, 1.0) + 1e-9


def test_extract_regions_rules():
    assert extract_regions(np.zeros((10, 10), bool), 4).regions == []
    m = np.zeros((10, 10), bool)
    m[1:4, 1:4] = True
    m[6:9, 6:9] = True
    m[0, 9] = True
    part = extract_regions(m, 4)
    assert len(part.regions) == 2
    assert [r.area for r in part.regions] == [9, 9]
    assert part.regions[0].bbox == (1, 1, 3, 3)
    assert part.labels[0, 9] == 0
    assert extract_regions(m, 10).regions == []
    diag = np.eye(4, dtype=bool)  # diagonal pixels are not 4-connected
    assert len(extract_regions(diag, 1).regions) == 4


def test_partition_save(tmp_path):
    lab = np.zeros((6, 6), int)
    lab[2:, 2:] = 1
    part = RegionPartition.from_labels(lab, 0.7)
    part.save(tmp_path / "p.png", tmp_path / "p.json")
    import json

    from PIL import Image

    np.testing.assert_array_equal(np.asarray(Image.open(tmp_path / "p.png")), lab)
    meta = json.loads((tmp_path / "p.json").read_text())
    assert meta == {"regions": [{"id": 1, "area": 16, "bbox": [2, 2, 4, 4]}], "threshold": 0.7}


def test_segment_count_rule():
    assert vote_segment_count(100) == 100
    assert vote_segment_count(256 * 256) == 109
    assert vote_segment_count(10**7) == 1500


def test_detection_half_noise():
    r, truth = half_noise(256)
    det = detect_textures(r)
    assert iou(det.partition.texture_mask, truth) >= 0.9
    assert len(det.partition.regions) == 1


def test_detection_flat_is_empty():
    det = detect_textures(np.full((64, 64, 3), 0.3))
    assert det.partition.regions == [] and not det.partition.texture_mask.any()


def test_detection_deterministic():
    r, _ = half_noise(96, seed=3)
    a, b = detect_textures(r), detect_textures(r)
    np.testing.assert_array_equal(a.partition.labels, b.partition.labels)
