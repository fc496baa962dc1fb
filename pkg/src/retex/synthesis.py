"""Spatially constrained patch synthesis.

Output patches on a regular grid are matched to exemplar patches under a
colour + position distance with a reuse penalty, then every output pixel is
replaced by the average of the matched exemplar pixels covering it.  The two
steps alternate over a coarse-to-fine pyramid.

Positions inside a region are normalized to the region's bounding box, so the
spatial term compares where a patch sits relative to its own frame.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np
from numba import prange
from scipy.spatial import cKDTree

from .raster import build_pyramid, downsample2, pyramid_depth


@dataclass
class SynthesisConfig:
    patch_size: int = 8
    stride: int = 4
    exemplar_stride: int = 2
    omega_schedule: tuple = (0.65, 0.25, 0.1)
    beta: float = 10.0
    em_iters_per_level: int = 20
    domain_fractions: tuple = (1.0, 0.4, 0.2)
    whole_image_threshold: float = 0.70
    levels: int = 3

    def __post_init__(self):
        if len(self.omega_schedule) != self.levels or len(self.domain_fractions) != self.levels:
            raise ValueError("omega_schedule and domain_fractions need one entry per pyramid level")
        if self.patch_size < 1 or self.stride < 1 or self.exemplar_stride < 1:
            raise ValueError("patch size and strides must be positive")
        if self.beta < 0 or self.em_iters_per_level < 1:
            raise ValueError("beta must be >= 0 and at least one EM iteration is needed")
        if any(not 0 < f <= 1 for f in self.domain_fractions):
            raise ValueError("domain fractions must lie in (0, 1]")


@dataclass
class Neighborhood:
    anchor: tuple[int, int]  # (y, x) of the top-left sample
    colors: np.ndarray  # (n, n, 3)
    coords: np.ndarray  # (n, n, 2) normalized (y, x)


def sample_coords(y: int, x: int, n: int, frame_h: int, frame_w: int) -> np.ndarray:
    """Normalized pixel-centre coordinates of an n x n block in an h x w frame."""
    u = (y + np.arange(n) + 0.5) / frame_h
    v = (x + np.arange(n) + 0.5) / frame_w
    return np.stack(np.meshgrid(u, v, indexing="ij"), axis=-1)


def extract_neighborhood(img: np.ndarray, y: int, x: int, n: int) -> Neighborhood:
    h, w = img.shape[:2]
    y = min(max(y, 0), h - n)
    x = min(max(x, 0), w - n)
    return Neighborhood((y, x), img[y : y + n, x : x + n].copy(), sample_coords(y, x, n, h, w))


def penalty(t, beta: float):
    return 1.0 + beta * np.asarray(t, dtype=np.float64)


def neighborhood_distance(a: Neighborhood, b: Neighborhood, omega: float, mu: float = 1.0) -> float:
    """mu * (sum |c_a - c_b|^2 + omega * sum |x_a - x_b|^2) over corresponding samples."""
    if a.colors.shape != b.colors.shape:
        raise ValueError(f"neighbourhood sizes differ: {a.colors.shape} vs {b.colors.shape}")
    color = float(((a.colors - b.colors) ** 2).sum())
    spatial = float(((a.coords - b.coords) ** 2).sum())
    return mu * (color + omega * spatial)


# -- kernels -------------------------------------------------------------


@numba.njit(cache=True, inline="always")
def _axis_spatial(d, k, n):
    # n * sum_u (d + u*k)^2, u = 0..n-1: one axis of the rigid-grid position term
    s1 = n * (n - 1) / 2.0
    s2 = (n - 1) * n * (2 * n - 1) / 6.0
    v = n * (n * d * d + 2.0 * d * k * s1 + k * k * s2)
    return v if v > 0.0 else 0.0


@numba.njit(cache=True, inline="always")
def _spatial(py, px, qy, qx, n, o_h, o_w, e_h, e_w):
    """Closed form of sum |x_out - x_ex|^2 over two n x n sample grids."""
    dy = (py + 0.5) / o_h - (qy + 0.5) / e_h
    dx = (px + 0.5) / o_w - (qx + 0.5) / e_w
    return _axis_spatial(dy, 1.0 / o_h - 1.0 / e_h, n) + _axis_spatial(dx, 1.0 / o_w - 1.0 / e_w, n)


@numba.njit(cache=True, inline="always")
def _pair_cost(out, ex, py, px, qy, qx, n, spw, mu, best, beats_ties):
    """mu * (spw + colour SSD), or inf as soon as it cannot beat ``best``.

    ``beats_ties`` says whether an exact tie with ``best`` would win (the
    candidate has the smaller index).
    """
    c0 = mu * spw
    if c0 > best or (c0 == best and not beats_ties):
        return np.inf, 0.0
    col = 0.0
    nc = out.shape[2]
    for u in range(n):
        for v in range(n):
            for c in range(nc):
                t = out[py + u, px + v, c] - ex[qy + u, qx + v, c]
                col += t * t
        c1 = mu * (spw + col)
        if c1 > best or (c1 == best and not beats_ties):
            return np.inf, 0.0
    return mu * (spw + col), spw + col


@numba.njit(cache=True, parallel=True)
def _match_windows(out, ex, opos, epos, ecen, emean, rowptr, win, seed, mu, omega, n, o_h, o_w, e_h, e_w):
    # Exact argmin over (cost, index).  The seed only tightens the pruning
    # bound.  mu >= 1 and both spatial axis terms are convex and >= 0, so a
    # row (or the rest of a row past the minimizer) whose spatial part alone
    # exceeds the best cost cannot contain the winner.  The colour SSD is
    # bounded below by n^2 |mean difference|^2 (shrunk slightly for round-off).
    nc = out.shape[2]
    lb_scale = n * n * (1.0 - 1e-12)
    P = opos.shape[0]
    Q = epos.shape[0]
    R = rowptr.size - 1
    ky = 1.0 / o_h - 1.0 / e_h
    kx = 1.0 / o_w - 1.0 / e_w
    dmin_y = -ky * (n - 1) / 2.0
    dmin_x = -kx * (n - 1) / 2.0
    idx = np.full(P, -1, dtype=np.int64)
    cost = np.full(P, np.inf)
    raw = np.zeros(P)
    for p in prange(P):
        py = opos[p, 0]
        px = opos[p, 1]
        best = np.inf
        bi = Q
        br = 0.0
        s = seed[p]
        if s >= 0:
            dys = (py + 0.5) / o_h - (epos[s, 0] + 0.5) / e_h
            dxs = (px + 0.5) / o_w - (epos[s, 1] + 0.5) / e_w
            spw = omega * _axis_spatial(dys, ky, n) + omega * _axis_spatial(dxs, kx, n)
            best, br = _pair_cost(out, ex, py, px, epos[s, 0], epos[s, 1], n, spw, mu[s], np.inf, True)
            bi = s
        om = np.zeros(nc)
        for u in range(n):
            for v in range(n):
                for c in range(nc):
                    om[c] += out[py + u, px + v, c]
        om /= n * n
        ay = (py + 0.5) / o_h
        ax = (px + 0.5) / o_w
        for r in range(R):
            cy = ecen[rowptr[r], 0]
            if cy < win[p, 0]:
                continue
            if cy >= win[p, 1]:
                break
            qy = epos[rowptr[r], 0]
            dy = ay - (qy + 0.5) / e_h
            sy = omega * _axis_spatial(dy, ky, n)
            if sy > best:
                if dy < dmin_y:
                    break
                continue
            for q in range(rowptr[r], rowptr[r + 1]):
                cx = ecen[q, 1]
                if cx < win[p, 2]:
                    continue
                if cx >= win[p, 3]:
                    break
                qx = epos[q, 1]
                dx = ax - (qx + 0.5) / e_w
                spw = sy + omega * _axis_spatial(dx, kx, n)
                if spw > best:
                    if dx < dmin_x:
                        break
                    continue
                if q == s:
                    continue
                lb = 0.0
                for c in range(nc):
                    t = om[c] - emean[q, c]
                    lb += t * t
                lb = mu[q] * (spw + lb_scale * lb)
                if lb > best:
                    continue
                c, rr = _pair_cost(out, ex, py, px, qy, qx, n, spw, mu[q], best, q < bi)
                if c < best or (c == best and q < bi):
                    best = c
                    bi = q
                    br = rr
        idx[p] = bi if bi < Q else -1
        cost[p] = best
        raw[p] = br
    return idx, cost, raw


@numba.njit(cache=True)
def _match_list(out, ex, py, px, epos, cand, mu, omega, n, o_h, o_w, e_h, e_w):
    best = np.inf
    bi = -1
    br = 0.0
    for k in range(cand.size):
        q = cand[k]
        qy = epos[q, 0]
        qx = epos[q, 1]
        spw = omega * _spatial(py, px, qy, qx, n, o_h, o_w, e_h, e_w)
        c, r = _pair_cost(out, ex, py, px, qy, qx, n, spw, mu[q], best, False)
        if c < best:
            best = c
            bi = q
            br = r
    return bi, best, br


@numba.njit(cache=True)
def _estep(out, ex, opos, mpos, free, n):
    h, w, nc = out.shape
    cnt = np.zeros((h, w))
    acc = np.zeros((h, w, nc))
    for p in range(opos.shape[0]):
        py = opos[p, 0]
        px = opos[p, 1]
        qy = mpos[p, 0]
        qx = mpos[p, 1]
        for u in range(n):
            for v in range(n):
                y = py + u
                x = px + v
                if not free[y, x]:
                    continue
                cnt[y, x] += 1.0
                k = cnt[y, x]
                # running mean: identical contributions reproduce the value exactly
                for c in range(nc):
                    acc[y, x, c] += (ex[qy + u, qx + v, c] - acc[y, x, c]) / k
    res = out.copy()
    for y in range(h):
        for x in range(w):
            if cnt[y, x] > 0:
                for c in range(nc):
                    res[y, x, c] = acc[y, x, c]
    return res


# -- patch layout --------------------------------------------------------


def _block_sums(a, pos, n) -> np.ndarray:
    """Sum of ``a`` over the n x n block at each (y, x) in ``pos``."""
    ii = np.zeros((a.shape[0] + 1, a.shape[1] + 1) + a.shape[2:])
    ii[1:, 1:] = np.asarray(a, dtype=np.float64).cumsum(0).cumsum(1)
    y0, x0 = pos[:, 0], pos[:, 1]
    return ii[y0 + n, x0 + n] - ii[y0, x0 + n] - ii[y0 + n, x0] + ii[y0, x0]


def grid_positions(length: int, n: int, stride: int) -> np.ndarray:
    """Top-left offsets 0, stride, 2*stride, ... plus the last valid offset."""
    last = length - n
    g = np.arange(0, last + 1, stride)
    if g[-1] != last:
        g = np.append(g, last)
    return g


class PatchProblem:
    """Exemplar/output patch grids for one pyramid level."""

    def __init__(self, exemplar, ex_mask, output_shape, free, n, stride, ex_stride):
        self.exemplar = np.ascontiguousarray(exemplar, dtype=np.float64)
        self.n = n
        eh, ew = self.exemplar.shape[:2]
        oh, ow = output_shape[:2]
        self.ex_frame = (eh, ew)
        self.out_frame = (oh, ow)
        ys, xs = grid_positions(eh, n, ex_stride), grid_positions(ew, n, ex_stride)
        pos = np.array([(y, x) for y in ys for x in xs], dtype=np.int64)
        if ex_mask is not None:
            # same rule as for output patches, so a region always contains its own patches
            keep = _block_sums(ex_mask, pos, n) > 0
            if keep.any():
                pos = pos[keep]
        cen = pos + n // 2
        self.ex_pos = pos
        self.ex_center = cen
        self.ex_mean = _block_sums(self.exemplar, pos, n) / (n * n)
        # candidates are row-major; rowptr[r]:rowptr[r+1] share one top row
        starts = np.flatnonzero(np.diff(pos[:, 0], prepend=-1))
        self.rowptr = np.append(starts, len(pos)).astype(np.int64)
        self.free = np.ascontiguousarray(free, dtype=np.bool_)
        ys, xs = grid_positions(oh, n, stride), grid_positions(ow, n, stride)
        opos = np.array([(y, x) for y in ys for x in xs], dtype=np.int64)
        covered = _block_sums(self.free, opos, n)
        self.out_pos = opos[covered > 0]
        self._tree = None

    @property
    def n_exemplar(self) -> int:
        return len(self.ex_pos)

    @property
    def n_output(self) -> int:
        return len(self.out_pos)

    def full_windows(self) -> np.ndarray:
        eh, ew = self.ex_frame
        w = np.empty((self.n_output, 4), dtype=np.int64)
        w[:] = (0, eh, 0, ew)
        return w

    def narrowed_windows(self, prev: np.ndarray, fraction: float) -> np.ndarray:
        return np.array([adaptive_window(self.ex_center[q], self.ex_frame, fraction) for q in prev], dtype=np.int64)

    def neighborhood(self, img, p: int, exemplar: bool = False) -> Neighborhood:
        y, x = (self.ex_pos if exemplar else self.out_pos)[p]
        h, w = self.ex_frame if exemplar else self.out_frame
        src = self.exemplar if exemplar else img
        return Neighborhood((int(y), int(x)), src[y : y + self.n, x : x + self.n].copy(), sample_coords(y, x, self.n, h, w))

    def match(self, output, omega, mu, windows, seed=None):
        """Exact per-patch argmin inside each window; ``seed`` (indices known to
        lie inside the windows) only speeds up the search."""
        oh, ow = self.out_frame
        eh, ew = self.ex_frame
        if seed is None:
            seed = np.full(self.n_output, -1, dtype=np.int64)
        return _match_windows(
            np.ascontiguousarray(output), self.exemplar, self.out_pos, self.ex_pos, self.ex_center, self.ex_mean, self.rowptr,
            windows, np.ascontiguousarray(seed, dtype=np.int64), np.ascontiguousarray(mu, dtype=np.float64), float(omega), self.n, oh, ow, eh, ew,
        )

    def best_match(self, output, p: int, domain, usage, omega: float, beta: float):
        """Best exemplar index in ``domain`` for output patch ``p``; ties -> smallest index."""
        cand = np.unique(np.asarray(domain, dtype=np.int64))
        if cand.size == 0:
            raise ValueError("empty search domain")
        oh, ow = self.out_frame
        eh, ew = self.ex_frame
        py, px = self.out_pos[p]
        q, c, _ = _match_list(
            np.ascontiguousarray(output), self.exemplar, int(py), int(px), self.ex_pos, cand,
            penalty(usage, beta), float(omega), self.n, oh, ow, eh, ew,
        )
        return int(q), float(c)

    def e_step(self, output, idx) -> np.ndarray:
        return _estep(np.ascontiguousarray(output), self.exemplar, self.out_pos, self.ex_pos[idx], self.free, self.n)

    def snap(self, positions) -> np.ndarray:
        """Index of the nearest exemplar patch to each (y, x) position."""
        if self._tree is None:
            self._tree = cKDTree(self.ex_pos.astype(np.float64))
        _, idx = self._tree.query(np.asarray(positions, dtype=np.float64))
        return np.asarray(idx, dtype=np.int64)


def adaptive_window(center, frame, fraction: float):
    """(y0, y1, x0, x1) window covering ``fraction`` of the frame around ``center``,
    same aspect as the frame, shifted (not shrunk) to stay inside it."""
    h, w = frame
    if fraction >= 1.0:
        return 0, h, 0, w
    s = math.sqrt(fraction)
    wh = min(h, max(1, int(round(s * h))))
    ww = min(w, max(1, int(round(s * w))))
    y0 = min(max(int(center[0]) - wh // 2, 0), h - wh)
    x0 = min(max(int(center[1]) - ww // 2, 0), w - ww)
    return y0, y0 + wh, x0, x0 + ww


def adaptive_domain(level: int, prev_match: int, problem: PatchProblem, fraction: float, first_step: bool = False):
    """Exemplar patch indices searched for one output patch.

    The coarsest level and the first M-step of every level search everything.
    """
    if level == 0 or first_step or fraction >= 1.0 or prev_match is None:
        return np.arange(problem.n_exemplar)
    y0, y1, x0, x1 = adaptive_window(problem.ex_center[prev_match], problem.ex_frame, fraction)
    c = problem.ex_center
    return np.flatnonzero((c[:, 0] >= y0) & (c[:, 0] < y1) & (c[:, 1] >= x0) & (c[:, 1] < x1))


# -- EM ------------------------------------------------------------------


@dataclass
class MatchState:
    idx: np.ndarray
    cost: np.ndarray  # mu * raw
    raw: np.ndarray  # colour + omega * spatial, before the penalty
    mu: np.ndarray
    usage: np.ndarray  # t_p after this M-step

    @property
    def energy(self) -> float:
        return float(self.cost.sum())


def em_iteration(problem: PatchProblem, output, omega, beta, usage=None, windows=None, seed=None):
    """One M-step (match every output patch) and E-step (average the matches)."""
    if usage is None:
        usage = np.zeros(problem.n_exemplar)
    if windows is None:
        windows = problem.full_windows()
    mu = penalty(usage, beta)
    idx, cost, raw = problem.match(output, omega, mu, windows, seed)
    if (idx < 0).any():
        raise RuntimeError("a search window contained no exemplar patch")
    new_usage = np.bincount(idx, minlength=problem.n_exemplar).astype(np.float64)
    state = MatchState(idx, cost, raw, mu[idx], new_usage)
    return state, problem.e_step(output, idx)


def _downsample_mask(m: np.ndarray) -> np.ndarray:
    return downsample2(m.astype(np.float64)) >= 0.5


@dataclass
class SynthesisResult:
    image: np.ndarray
    trace: list = field(default_factory=list)  # (level, iteration, energy)
    states: list = field(default_factory=list)  # final MatchState per level
    levels: int = 0
    skipped: bool = False

    @property
    def energy(self) -> float:
        return self.states[-1].energy if self.states else 0.0


def synthesize_region(
    exemplar: np.ndarray,
    initial: np.ndarray,
    cfg: SynthesisConfig | None = None,
    ex_mask: np.ndarray | None = None,
    out_mask: np.ndarray | None = None,
) -> SynthesisResult:
    """Coarse-to-fine EM synthesis of ``initial`` from ``exemplar``.

    ``out_mask`` marks the pixels that may change (default: all).  Between
    levels the previous level's matches are carried up (offsets doubled) and
    averaged at the finer resolution to form the next starting image.
    """
    cfg = cfg or SynthesisConfig()
    n = cfg.patch_size
    exemplar = np.asarray(exemplar, dtype=np.float64)
    initial = np.asarray(initial, dtype=np.float64)
    if ex_mask is None:
        ex_mask = np.ones(exemplar.shape[:2], bool)
    if out_mask is None:
        out_mask = np.ones(initial.shape[:2], bool)
    if min(exemplar.shape[:2]) < n or min(initial.shape[:2]) < n or not out_mask.any():
        return SynthesisResult(initial.copy(), skipped=True)

    depth = min(
        pyramid_depth(exemplar.shape, cfg.levels, 4 * n), pyramid_depth(initial.shape, cfg.levels, 4 * n)
    )
    # with fewer levels keep the finest entries of each schedule
    omegas = list(cfg.omega_schedule)[-depth:]
    fracs = list(cfg.domain_fractions)[-depth:]
    ex_pyr = build_pyramid(exemplar, depth)
    init_pyr = build_pyramid(initial, depth)
    exm_pyr, outm_pyr = [ex_mask], [out_mask]
    for _ in range(depth - 1):
        exm_pyr.append(_downsample_mask(exm_pyr[-1]))
        outm_pyr.append(_downsample_mask(outm_pyr[-1]))
    exm_pyr, outm_pyr = exm_pyr[::-1], outm_pyr[::-1]

    result = SynthesisResult(initial.copy(), levels=depth)
    prev_problem, prev_state = None, None
    for lvl in range(depth):
        problem = PatchProblem(
            ex_pyr[lvl], exm_pyr[lvl], init_pyr[lvl].shape, outm_pyr[lvl], n, cfg.stride, cfg.exemplar_stride
        )
        if problem.n_output == 0:
            prev_problem, prev_state = None, None
            cur = init_pyr[lvl]
            continue
        cur = init_pyr[lvl]
        seed = None
        if prev_state is not None:
            seed = _upsample_matches(prev_problem, prev_state, problem)
            cur = problem.e_step(cur, seed)
        usage = None
        state = None
        prev_idx = None
        for it in range(cfg.em_iters_per_level):
            if it == 0 or fracs[lvl] >= 1.0 or lvl == 0:
                windows = problem.full_windows()
            else:
                windows = problem.narrowed_windows(state.idx, fracs[lvl])
            state, nxt = em_iteration(problem, cur, omegas[lvl], cfg.beta, usage, windows, seed)
            seed = state.idx
            result.trace.append((lvl, it, state.energy))
            usage = state.usage
            cur = nxt
            if prev_idx is not None and np.array_equal(prev_idx, state.idx):
                # same matches and same counters: every later sweep repeats this one
                break
            prev_idx = state.idx
        result.states.append(state)
        prev_problem, prev_state = problem, state
    result.image = np.clip(cur, 0.0, 1.0)
    return result


def _upsample_matches(coarse: PatchProblem, state: MatchState, fine: PatchProblem) -> np.ndarray:
    """Carry coarse matches to the finer grid: keep each patch's offset, doubled."""
    tree = cKDTree(coarse.out_pos.astype(np.float64))
    _, near = tree.query(fine.out_pos.astype(np.float64) / 2.0)
    near = np.asarray(near, dtype=np.int64)
    offset = coarse.ex_pos[state.idx[near]] - coarse.out_pos[near]
    guess = fine.out_pos + 2 * offset
    return fine.snap(guess)


def decide_whole_image(partition, threshold: float = 0.70) -> bool:
    """Synthesize the whole frame when strictly more than ``threshold`` of it is texture."""
    return partition.texture_fraction > threshold


def write_energy_trace(trace, path) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["level", "iteration", "energy"])
        for lvl, it, e in trace:
            w.writerow([lvl, it, repr(float(e))])
