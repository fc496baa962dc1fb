import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from retex.raster import resample_bilinear, to_luminance
from retex.synthesis import (
    Neighborhood,
    PatchProblem,
    SynthesisConfig,
    adaptive_domain,
    adaptive_window,
    decide_whole_image,
    em_iteration,
    extract_neighborhood,
    grid_positions,
    neighborhood_distance,
    penalty,
    sample_coords,
    synthesize_region,
    write_energy_trace,
)
from retex.texture import RegionPartition


def _nb(color, coord=(0.5, 0.5)):
    return Neighborhood((0, 0), np.array(color, float).reshape(1, 1, 3), np.array(coord, float).reshape(1, 1, 2))


def test_distance_examples():
    a = _nb((0.2, 0.3, 0.4))
    assert neighborhood_distance(a, a, 0.65) == 0.0
    assert neighborhood_distance(_nb((0, 0, 0)), _nb((1, 1, 1)), 0.1, 1.0) == 3.0
    assert neighborhood_distance(_nb((0, 0, 0)), _nb((1, 1, 1)), 0.1, float(penalty(1, 10))) == 33.0


def test_distance_size_mismatch():
    a = extract_neighborhood(np.zeros((10, 10, 3)), 0, 0, 4)
    b = extract_neighborhood(np.zeros((10, 10, 3)), 0, 0, 3)
    with pytest.raises(ValueError):
        neighborhood_distance(a, b, 0.1)


def test_spatial_term_uses_normalized_centres():
    c = sample_coords(0, 0, 2, 4, 8)
    np.testing.assert_allclose(c[0, 0], [0.125, 1 / 16])
    np.testing.assert_allclose(c[1, 1], [0.375, 3 / 16])


def test_extraction_clamps_inside():
    nb = extract_neighborhood(np.zeros((10, 12, 3)), 9, -3, 4)
    assert nb.anchor == (6, 0) and nb.colors.shape == (4, 4, 3)


def test_penalty_monotone():
    t = np.arange(5)
    mu = penalty(t, 10)
    assert mu[0] == 1.0 and np.all(np.diff(mu) > 0)
    np.testing.assert_array_equal(penalty(t, 0), 1.0)


def _toy_problem(seed, ex_shape=(20, 22), out_shape=(14, 18), n=4, stride=3, ex_stride=3):
    g = np.random.default_rng(seed)
    ex = g.random(ex_shape + (3,))
    out = g.random(out_shape + (3,))
    return PatchProblem(ex, None, out.shape, np.ones(out_shape, bool), n, stride, ex_stride), out, g


def _oracle_best(problem, out, p, domain, usage, omega, beta):
    """Exhaustive scan with the definitional distance; first minimum wins."""
    a = problem.neighborhood(out, p)
    best = (np.inf, -1)
    for q in domain:
        b = problem.neighborhood(None, q, exemplar=True)
        c = neighborhood_distance(a, b, omega, float(penalty(usage[q], beta)))
        if c < best[0]:
            best = (c, q)
    return best[1], best[0]


def test_best_match_exact_copy():
    g = np.random.default_rng(0)
    ex = g.random((16, 16, 3))
    pr = PatchProblem(ex, None, ex.shape, np.ones((16, 16), bool), 4, 4, 4)
    for p in range(pr.n_output):
        q, c = pr.best_match(ex, p, np.arange(pr.n_exemplar), np.zeros(pr.n_exemplar), 0.25, 10)
        assert c == 0.0 and tuple(pr.ex_pos[q]) == tuple(pr.out_pos[p])


def test_best_match_single_domain():
    pr, out, _ = _toy_problem(1)
    q, c = pr.best_match(out, 0, [7], np.zeros(pr.n_exemplar), 0.65, 10)
    assert q == 7 and c > 0


def test_best_match_empty_domain():
    pr, out, _ = _toy_problem(1)
    with pytest.raises(ValueError):
        pr.best_match(out, 0, [], np.zeros(pr.n_exemplar), 0.65, 10)


def test_best_match_ten_patch_oracle():
    g = np.random.default_rng(2)
    ex = g.random((4, 40, 3))
    pr = PatchProblem(ex, None, (4, 4, 3), np.ones((4, 4), bool), 4, 4, 4)
    assert pr.n_exemplar == 10
    out = g.random((4, 4, 3))
    usage = g.integers(0, 3, 10).astype(float)
    for omega, beta in ((0.65, 0.0), (0.1, 10.0), (50.0, 1.0)):
        got = pr.best_match(out, 0, np.arange(10), usage, omega, beta)
        want = _oracle_best(pr, out, 0, range(10), usage, omega, beta)
        assert got[0] == want[0] and got[1] == pytest.approx(want[1], rel=1e-12)


@given(st.integers(0, 2**31), st.sampled_from([0.0, 0.1, 0.65, 5.0]), st.sampled_from([0.0, 10.0]))
@settings(max_examples=25, deadline=None)
def test_bulk_matcher_equals_exhaustive_scan(seed, omega, beta):
    pr, out, g = _toy_problem(seed)
    usage = g.integers(0, 3, pr.n_exemplar).astype(float)
    idx, cost, raw = pr.match(out, omega, penalty(usage, beta), pr.full_windows())
    for p in range(pr.n_output):
        q, c = _oracle_best(pr, out, p, range(pr.n_exemplar), usage, omega, beta)
        assert idx[p] == q
        assert cost[p] == pytest.approx(c, rel=1e-12, abs=1e-14)
        assert cost[p] == pytest.approx(penalty(usage[q], beta) * raw[p], rel=1e-15)


def test_ties_go_to_smallest_index():
    ex = np.zeros((4, 16, 3))  # four identical patches
    pr = PatchProblem(ex, None, (4, 16, 3), np.ones((4, 16), bool), 4, 4, 4)
    out = np.zeros((4, 16, 3))
    # omega = 0 removes the position term, so every candidate ties at 0
    idx, cost, _ = pr.match(out, 0.0, np.ones(4), pr.full_windows())
    np.testing.assert_array_equal(idx, 0)
    seeded, _, _ = pr.match(out, 0.0, np.ones(4), pr.full_windows(), seed=np.full(pr.n_output, 3))
    np.testing.assert_array_equal(seeded, 0)


@given(st.integers(0, 2**31))
@settings(max_examples=20, deadline=None)
def test_seed_does_not_change_matches(seed):
    pr, out, g = _toy_problem(seed)
    mu = penalty(g.integers(0, 2, pr.n_exemplar), 10)
    a = pr.match(out, 0.25, mu, pr.full_windows())
    b = pr.match(out, 0.25, mu, pr.full_windows(), seed=g.integers(0, pr.n_exemplar, pr.n_output))
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)


@given(st.integers(0, 2**31), st.sampled_from([0.2, 0.4]))
@settings(max_examples=20, deadline=None)
def test_narrowed_cost_not_below_full(seed, frac):
    pr, out, g = _toy_problem(seed, ex_shape=(40, 36))
    mu = np.ones(pr.n_exemplar)
    full = pr.match(out, 0.25, mu, pr.full_windows())
    prev = g.integers(0, pr.n_exemplar, pr.n_output)
    narrow = pr.match(out, 0.25, mu, pr.narrowed_windows(prev, frac), seed=prev)
    assert np.all(narrow[1] >= full[1])
    for p in range(pr.n_output):
        dom = adaptive_domain(1, prev[p], pr, frac)
        assert narrow[0][p] in dom
        assert narrow[0][p] == _oracle_best(pr, out, p, dom, np.zeros(pr.n_exemplar), 0.25, 0)[0]


def test_adaptive_window_geometry():
    assert adaptive_window((50, 50), (100, 100), 1.0) == (0, 100, 0, 100)
    y0, y1, x0, x1 = adaptive_window((50, 50), (100, 100), 0.4)
    assert (y1 - y0, x1 - x0) == (63, 63) and y0 <= 50 < y1 and x0 <= 50 < x1
    assert adaptive_window((0, 0), (100, 100), 0.4) == (0, 63, 0, 63)
    assert adaptive_window((99, 99), (100, 100), 0.4) == (37, 100, 37, 100)
    y0, y1, x0, x1 = adaptive_window((10, 190), (100, 200), 0.2)
    assert (y1 - y0, x1 - x0) == (45, 89) and x1 == 200


def test_adaptive_domain_full_cases():
    pr, _, _ = _toy_problem(0)
    everything = np.arange(pr.n_exemplar)
    np.testing.assert_array_equal(adaptive_domain(0, 3, pr, 0.2), everything)
    np.testing.assert_array_equal(adaptive_domain(2, 3, pr, 0.2, first_step=True), everything)
    np.testing.assert_array_equal(adaptive_domain(1, 3, pr, 1.0), everything)
    assert 3 in adaptive_domain(2, 3, pr, 0.2)


def test_em_identity_fixed_point():
    ex = np.random.default_rng(4).random((24, 24, 3))
    pr = PatchProblem(ex, None, ex.shape, np.ones((24, 24), bool), 8, 4, 2)
    state, out = em_iteration(pr, ex, 0.1, 0.0)
    assert state.energy == 0.0
    np.testing.assert_array_equal(pr.ex_pos[state.idx], pr.out_pos)
    np.testing.assert_array_equal(out, ex)


def test_em_single_patch_is_copied_verbatim():
    g = np.random.default_rng(5)
    ex = g.random((12, 12, 3))
    out0 = g.random((4, 4, 3))
    pr = PatchProblem(ex, None, out0.shape, np.ones((4, 4), bool), 4, 4, 1)
    state, out = em_iteration(pr, out0, 0.1, 0.0)
    y, x = pr.ex_pos[state.idx[0]]
    np.testing.assert_array_equal(out, ex[y : y + 4, x : x + 4])


def test_em_two_iterations_non_increasing():
    g = np.random.default_rng(6)
    ex, out = g.random((16, 16, 3)), g.random((16, 16, 3))
    pr = PatchProblem(ex, None, out.shape, np.ones((16, 16), bool), 4, 2, 1)
    s1, out = em_iteration(pr, out, 0.25, 0.0)
    s2, _ = em_iteration(pr, out, 0.25, 0.0, s1.usage)
    assert s2.energy <= s1.energy * (1 + 1e-12)


def test_estep_average_oracle_and_bounds():
    pr, out, g = _toy_problem(7)
    idx = g.integers(0, pr.n_exemplar, pr.n_output)
    new = pr.e_step(out, idx)
    n = pr.n
    acc = np.zeros(out.shape)
    cnt = np.zeros(out.shape[:2])
    lo = np.full(out.shape, np.inf)
    hi = np.full(out.shape, -np.inf)
    for p, q in enumerate(idx):
        (py, px), (qy, qx) = pr.out_pos[p], pr.ex_pos[q]
        patch = pr.exemplar[qy : qy + n, qx : qx + n]
        acc[py : py + n, px : px + n] += patch
        cnt[py : py + n, px : px + n] += 1
        lo[py : py + n, px : px + n] = np.minimum(lo[py : py + n, px : px + n], patch)
        hi[py : py + n, px : px + n] = np.maximum(hi[py : py + n, px : px + n], patch)
    np.testing.assert_allclose(new, acc / cnt[..., None], rtol=1e-12)
    assert np.all(new >= lo) and np.all(new <= hi)


def test_estep_leaves_fixed_pixels():
    g = np.random.default_rng(8)
    ex, out = g.random((16, 16, 3)), g.random((16, 16, 3))
    free = np.zeros((16, 16), bool)
    free[4:9, 3:12] = True
    pr = PatchProblem(ex, None, out.shape, free, 4, 2, 2)
    assert all((free[y : y + 4, x : x + 4]).any() for y, x in pr.out_pos)
    _, new = em_iteration(pr, out, 0.1, 10)
    np.testing.assert_array_equal(new[~free], out[~free])


def test_usage_counts_sum_to_patch_count():
    pr, out, _ = _toy_problem(9)
    state, _ = em_iteration(pr, out, 0.1, 10.0)
    assert state.usage.sum() == pr.n_output and state.usage.min() >= 0


def test_logged_costs_carry_penalty():
    pr, out, g = _toy_problem(10)
    usage = g.integers(0, 4, pr.n_exemplar).astype(float)
    state, _ = em_iteration(pr, out, 0.1, 10.0, usage)
    np.testing.assert_allclose(state.cost, (1 + 10 * usage[state.idx]) * state.raw, rtol=1e-15)


def test_grid_positions_include_last():
    np.testing.assert_array_equal(grid_positions(18, 8, 4), [0, 4, 8, 10])
    np.testing.assert_array_equal(grid_positions(8, 8, 4), [0])


def test_synthesize_identity_is_bit_exact():
    ex = np.random.default_rng(11).random((70, 66, 3))
    res = synthesize_region(ex, ex)
    assert res.levels == 2
    np.testing.assert_array_equal(res.image, ex)
    assert all(e == 0.0 for _, _, e in res.trace) and res.energy == 0.0


def test_synthesize_small_regions():
    g = np.random.default_rng(12)
    ex = g.random((12, 12, 3))
    res = synthesize_region(ex, resample_bilinear(ex, 10, 12))
    assert res.levels == 1 and not res.skipped and res.image.shape == (12, 10, 3)
    tiny = g.random((6, 6, 3))
    res = synthesize_region(tiny, tiny[:, :5])
    assert res.skipped
    np.testing.assert_array_equal(res.image, tiny[:, :5])


def _dots(h, w, p=8):
    yy, xx = np.mgrid[0:h, 0:w]
    d = (yy % p - p / 2 + 0.5) ** 2 + (xx % p - p / 2 + 0.5) ** 2 < 5
    r = np.full((h, w, 3), 0.9)
    r[d] = (0.1, 0.2, 0.6)
    return r


def _peak_spacing(img, axis):
    lum = to_luminance(img)
    lum = lum - lum.mean(axis=axis, keepdims=True)
    n = lum.shape[axis]
    ac = np.fft.irfft(np.abs(np.fft.rfft(lum, axis=axis)) ** 2, n=n, axis=axis).mean(axis=1 - axis)
    return int(np.argmax(ac[3 : n // 2])) + 3


def test_periodic_texture_keeps_texel_spacing():
    ex = _dots(64, 64)
    init = resample_bilinear(ex, 32, 64)
    assert _peak_spacing(init, 1) == 4
    out = synthesize_region(ex, init).image
    assert out.shape == (64, 32, 3)
    assert abs(_peak_spacing(out, 1) - _peak_spacing(ex, 1)) <= 1
    assert abs(_peak_spacing(out, 0) - _peak_spacing(ex, 0)) <= 1


def test_synthesis_is_deterministic():
    g = np.random.default_rng(13)
    ex = g.random((40, 40, 3))
    init = resample_bilinear(ex, 30, 40)
    a, b = synthesize_region(ex, init), synthesize_region(ex, init)
    np.testing.assert_array_equal(a.image, b.image)
    assert a.trace == b.trace


def test_masked_region_only_changes_mask():
    g = np.random.default_rng(14)
    ex = g.random((40, 40, 3))
    init = g.random((40, 32, 3))
    mask = np.zeros((40, 32), bool)
    mask[10:30, 5:25] = True
    res = synthesize_region(ex, init, None, None, mask)
    np.testing.assert_array_equal(res.image[~mask], init[~mask])


@pytest.mark.parametrize("frac,expected", [(0.0, False), (0.69, False), (0.70, False), (0.71, True), (1.0, True)])
def test_whole_image_rule(frac, expected):
    lab = np.zeros((10, 10), int)
    lab.ravel()[: int(round(frac * 100))] = 1
    assert decide_whole_image(RegionPartition.from_labels(lab)) is expected


def test_config_invariants():
    with pytest.raises(ValueError):
        SynthesisConfig(omega_schedule=(0.1, 0.2))
    with pytest.raises(ValueError):
        SynthesisConfig(domain_fractions=(1.0, 0.0, 0.2))


def test_energy_trace_csv(tmp_path):
    p = tmp_path / "e.csv"
    write_energy_trace([(0, 0, 1.5), (0, 1, 1.25)], p)
    rows = list(csv.reader(open(p)))
    assert rows == [["level", "iteration", "energy"], ["0", "0", "1.5"], ["0", "1", "1.25"]]
