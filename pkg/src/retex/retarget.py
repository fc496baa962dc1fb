"""Multi-operator retargeting: seam carving, homogeneous scaling and cropping,
planned greedily on a smoothed image and replayed on the original."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numba
import numpy as np

from .raster import resample_bilinear, to_luminance

VERTICAL = "vertical"  # one pixel per row, removes a column
HORIZONTAL = "horizontal"  # one pixel per column, removes a row

OPERATOR_ORDER = ("seam", "scale", "crop")


class RetargetError(ValueError):
    pass


@dataclass
class Seam:
    axis: str
    path: np.ndarray
    cost: float = 0.0


@dataclass
class SeamOp:
    axis: str
    path: np.ndarray
    insert: bool = False

    def to_json(self):
        d = {"type": "seam", "axis": self.axis, "path": [int(v) for v in self.path]}
        if self.insert:
            d["insert"] = True
        return d


@dataclass
class ScaleOp:
    to: tuple[int, int]  # (w, h)

    def to_json(self):
        return {"type": "scale", "to": list(self.to)}


@dataclass
class CropOp:
    window: tuple[int, int, int, int]  # x, y, w, h

    def to_json(self):
        return {"type": "crop", "window": list(self.window)}


@dataclass
class OperationLog:
    source: tuple[int, int]  # (w, h)
    target: tuple[int, int]
    ops: list = field(default_factory=list)

    def counts(self) -> dict:
        c = {"seam": 0, "scale": 0, "crop": 0}
        for op in self.ops:
            c[_op_kind(op)] += 1
        return c

    def to_json(self) -> dict:
        return {"source": list(self.source), "target": list(self.target), "ops": [op.to_json() for op in self.ops]}

    def dumps(self) -> str:
        return json.dumps(self.to_json())

    @classmethod
    def from_json(cls, d) -> "OperationLog":
        ops = []
        for o in d["ops"]:
            if o["type"] == "seam":
                ops.append(SeamOp(o["axis"], np.asarray(o["path"], dtype=np.int64), bool(o.get("insert", False))))
            elif o["type"] == "scale":
                ops.append(ScaleOp(tuple(o["to"])))
            elif o["type"] == "crop":
                ops.append(CropOp(tuple(o["window"])))
            else:
                raise ValueError(f"unknown operation type {o['type']!r}")
        return cls(tuple(d["source"]), tuple(d["target"]), ops)

    def final_dims(self) -> tuple[int, int]:
        w, h = self.source
        for op in self.ops:
            w, h = op_output_dims(op, w, h)
        return w, h


def _op_kind(op) -> str:
    return {SeamOp: "seam", ScaleOp: "scale", CropOp: "crop"}[type(op)]


def op_output_dims(op, w, h):
    if isinstance(op, SeamOp):
        d = 1 if op.insert else -1
        return (w + d, h) if op.axis == VERTICAL else (w, h + d)
    if isinstance(op, ScaleOp):
        return tuple(op.to)
    return op.window[2], op.window[3]


# -- seams ---------------------------------------------------------------


@numba.njit(cache=True)
def _vertical_seam(e):
    h, w = e.shape
    M = np.empty((h, w))
    M[0] = e[0]
    for i in range(1, h):
        for j in range(w):
            best = M[i - 1, j]
            if j > 0 and M[i - 1, j - 1] < best:
                best = M[i - 1, j - 1]
            if j + 1 < w and M[i - 1, j + 1] < best:
                best = M[i - 1, j + 1]
            M[i, j] = e[i, j] + best
    path = np.empty(h, dtype=np.int64)
    j = 0
    for k in range(1, w):
        if M[h - 1, k] < M[h - 1, j]:
            j = k
    path[h - 1] = j
    for i in range(h - 1, 0, -1):
        lo = max(j - 1, 0)
        hi = min(j + 1, w - 1)
        best = lo
        for k in range(lo + 1, hi + 1):
            if M[i - 1, k] < M[i - 1, best]:
                best = k
        j = best
        path[i - 1] = j
    return path


def path_cost(sig: np.ndarray, s: Seam) -> float:
    """Sequential sum of ``sig`` along the seam, first row (column) first."""
    a = sig if s.axis == VERTICAL else sig.T
    total = 0.0
    for i, j in enumerate(s.path):
        total += float(a[i, j])
    return total


def min_seam(sig: np.ndarray, axis: str = VERTICAL) -> Seam:
    """Minimum-cost 8-connected monotone seam; ties go to the smaller index."""
    sig = np.asarray(sig, dtype=np.float64)
    a = sig if axis == VERTICAL else sig.T
    if a.shape[1] < 2:
        raise RetargetError(f"cannot carve a {axis} seam from a dimension of size {a.shape[1]}")
    path = _vertical_seam(np.ascontiguousarray(a))
    s = Seam(axis, path)
    s.cost = path_cost(sig, s)
    return s


def _as_vertical(a, axis):
    return a if axis == VERTICAL else np.swapaxes(a, 0, 1)


def _check_path(a, path):
    if len(path) != a.shape[0] or np.any(path < 0) or np.any(path >= a.shape[1]):
        raise RetargetError("seam does not fit the array")
    if len(path) > 1 and np.abs(np.diff(path)).max() > 1:
        raise RetargetError("seam is not 8-connected")


def remove_seam(a: np.ndarray, s) -> np.ndarray:
    """Drop one pixel per row (vertical seam) or per column (horizontal)."""
    v = _as_vertical(np.asarray(a), s.axis)
    path = np.asarray(s.path)
    _check_path(v, path)
    h, w = v.shape[:2]
    keep = np.ones((h, w), dtype=bool)
    keep[np.arange(h), path] = False
    out = v[keep].reshape((h, w - 1) + v.shape[2:])
    return _as_vertical(out, s.axis).copy()


def insert_seam(a: np.ndarray, s, average: bool = True) -> np.ndarray:
    """Duplicate the seam pixel; the copy is the mean of the pixel and its right neighbour."""
    v = _as_vertical(np.asarray(a), s.axis)
    path = np.asarray(s.path)
    _check_path(v, path)
    h, w = v.shape[:2]
    rows = np.arange(h)
    nb = np.minimum(path + 1, w - 1)
    new = v[rows, path]
    if average:
        new = 0.5 * (v[rows, path] + v[rows, nb])
    out = np.empty((h, w + 1) + v.shape[2:], dtype=v.dtype)
    cols = np.arange(w + 1)[None, :]
    left = cols <= path[:, None]
    src = np.where(left, cols, cols - 1)
    out[:] = v[rows[:, None], src]
    out[rows, path + 1] = new
    return _as_vertical(out, s.axis).copy()


# -- cropping ------------------------------------------------------------


def window_sums(sig: np.ndarray, tw: int, th: int) -> np.ndarray:
    ii = np.zeros((sig.shape[0] + 1, sig.shape[1] + 1))
    ii[1:, 1:] = np.cumsum(np.cumsum(sig, axis=0), axis=1)
    return ii[th:, tw:] - ii[:-th, tw:] - ii[th:, :-tw] + ii[:-th, :-tw]


def crop_window(sig: np.ndarray, target_w: int, target_h: int) -> tuple[int, int, int, int]:
    """Window of the target size with the largest total significance; ties -> smallest (y, x)."""
    h, w = sig.shape
    if target_w > w or target_h > h or target_w < 1 or target_h < 1:
        raise RetargetError(f"crop {target_w}x{target_h} does not fit in {w}x{h}")
    sums = window_sums(np.asarray(sig, dtype=np.float64), target_w, target_h)
    y, x = np.unravel_index(int(np.argmax(sums)), sums.shape)
    return int(x), int(y), target_w, target_h


# -- replay --------------------------------------------------------------


def resample_nearest(a: np.ndarray, new_w: int, new_h: int) -> np.ndarray:
    h, w = a.shape[:2]
    ys = np.minimum(((np.arange(new_h) + 0.5) * h / new_h).astype(np.intp), h - 1)
    xs = np.minimum(((np.arange(new_w) + 0.5) * w / new_w).astype(np.intp), w - 1)
    return a[ys][:, xs]


class Track:
    """An array carried through a sequence of operations.

    Consecutive scalings are collapsed into one resample from the array as
    it was before the run, so replaying a log never compounds blur.
    """

    def __init__(self, a, kind: str = "raster"):
        self.a = np.asarray(a)
        self.kind = kind
        self._anchor = None

    def copy(self) -> "Track":
        t = Track(self.a, self.kind)
        t._anchor = self._anchor
        return t

    @property
    def dims(self):
        return self.a.shape[1], self.a.shape[0]

    def apply(self, op) -> "Track":
        if isinstance(op, ScaleOp):
            if self._anchor is None:
                self._anchor = self.a
            w, h = op.to
            if self.kind == "labels":
                self.a = resample_nearest(self._anchor, w, h)
            else:
                self.a = resample_bilinear(self._anchor, w, h)
            return self
        self._anchor = None
        if isinstance(op, SeamOp):
            if op.insert:
                self.a = insert_seam(self.a, op, average=self.kind != "labels")
            else:
                self.a = remove_seam(self.a, op)
        elif isinstance(op, CropOp):
            x, y, w, h = op.window
            if x < 0 or y < 0 or x + w > self.a.shape[1] or y + h > self.a.shape[0]:
                raise RetargetError(f"crop window {op.window} outside {self.dims}")
            self.a = self.a[y : y + h, x : x + w].copy()
        else:
            raise TypeError(f"not an operation: {op!r}")
        return self


def _replay(a, log: OperationLog, kind: str):
    if (a.shape[1], a.shape[0]) != tuple(log.source):
        raise RetargetError(f"log expects source {tuple(log.source)}, got {(a.shape[1], a.shape[0])}")
    t = Track(a, kind)
    for op in log.ops:
        t.apply(op)
    return t.a


def replay_log(original: np.ndarray, log: OperationLog) -> np.ndarray:
    return _replay(np.asarray(original, dtype=np.float64), log, "raster")


def map_partition(partition, log: OperationLog):
    from .texture import RegionPartition

    labels = _replay(partition.labels, log, "labels")
    return RegionPartition.from_labels(labels, partition.threshold)


def map_field(f: np.ndarray, log: OperationLog) -> np.ndarray:
    return _replay(np.asarray(f, dtype=np.float64), log, "field")


# -- planning ------------------------------------------------------------


def seam_energy(img: np.ndarray, sig: np.ndarray) -> np.ndarray:
    """Significance plus gradient magnitude of the (smoothed) image."""
    lum = to_luminance(img)
    gy, gx = np.gradient(lum) if min(lum.shape) > 1 else (np.zeros_like(lum), np.zeros_like(lum))
    return sig + np.abs(gx) + np.abs(gy)


def _box_sums(a: np.ndarray, n: int) -> np.ndarray:
    ii = np.zeros((a.shape[0] + 1, a.shape[1] + 1))
    ii[1:, 1:] = np.cumsum(np.cumsum(a, axis=0), axis=1)
    return ii[n:, n:] - ii[:-n, n:] - ii[n:, :-n] + ii[:-n, :-n]


def _grid(n_valid: int, stride: int) -> np.ndarray:
    g = np.arange(0, n_valid, stride)
    if g[-1] != n_valid - 1:
        g = np.append(g, n_valid - 1)
    return g


@numba.njit(cache=True)
def _best_shift_ssd(a, b, ys, xs, max_shift, n):
    hb, wb = b.shape[0], b.shape[1]
    nc = a.shape[2]
    out = np.empty((ys.size, xs.size))
    for i in range(ys.size):
        y = ys[i]
        for j in range(xs.size):
            x = xs[j]
            best = np.inf
            for d in range(-max_shift, max_shift + 1):
                xb = x + d
                if xb < 0 or xb + n > wb or y + n > hb:
                    continue
                acc = 0.0
                for u in range(n):
                    for v in range(n):
                        for c in range(nc):
                            t = a[y + u, x + v, c] - b[y + u, xb + v, c]
                            acc += t * t
                    if acc >= best:
                        break
                if acc < best:
                    best = acc
            out[i, j] = best
    return out


def _directed_distance(a, b, weight, max_shift, patch, stride):
    """Significance-weighted mean over patches of ``a`` of the SSD to the best
    patch of ``b`` shifted by at most ``max_shift`` columns (same row)."""
    ha, wa = a.shape[:2]
    ys = _grid(ha - patch + 1, stride)
    xs = _grid(wa - patch + 1, stride)
    best = _best_shift_ssd(np.ascontiguousarray(a), np.ascontiguousarray(b), ys, xs, max_shift, patch)
    best = np.where(np.isfinite(best), best, float(patch * patch * 3))
    pw = _box_sums(weight, patch)[np.ix_(ys, xs)] / (patch * patch) + 1e-3
    return float((pw * best).sum() / pw.sum())


def similarity_score(cand, cand_sig, src, src_sig, axis, max_shift, patch=8, stride=4) -> float:
    """Negative bidirectional patch distance between a candidate and the current image."""
    if axis == HORIZONTAL:
        cand, cand_sig, src, src_sig = (np.swapaxes(x, 0, 1) for x in (cand, cand_sig, src, src_sig))
    patch = min(patch, cand.shape[0], cand.shape[1], src.shape[0], src.shape[1])
    coherence = _directed_distance(cand, src, cand_sig, max_shift, patch, stride)
    completeness = _directed_distance(src, cand, src_sig, max_shift, patch, stride)
    return -(coherence + completeness)


INSERT_PENALTY = 10.0


@dataclass
class _State:
    img: Track
    sig: Track
    # raised along inserted seams so that later insertions spread out
    pen: Track

    def copy(self):
        return _State(self.img.copy(), self.sig.copy(), self.pen.copy())

    def apply(self, op):
        self.img.apply(op)
        self.sig.apply(op)
        self.pen.apply(op)
        return self


def _seam_candidate(st: _State, axis: str, count: int, enlarge: bool):
    st = st.copy()
    ops = []
    for _ in range(count):
        s = min_seam(seam_energy(st.img.a, st.sig.a) + st.pen.a, axis)
        op = SeamOp(axis, s.path, insert=enlarge)
        ops.append(op)
        st.apply(op)
        if enlarge:
            pv = _as_vertical(st.pen.a, axis).copy()
            rows = np.arange(len(s.path))
            pv[rows, s.path] += INSERT_PENALTY
            pv[rows, s.path + 1] += INSERT_PENALTY
            st.pen.a = _as_vertical(pv, axis).copy()
    return st, ops


def plan_multiop(
    smoothed: np.ndarray,
    sig: np.ndarray,
    target_w: int,
    target_h: int,
    batch: int = 5,
    patch: int = 8,
    stride: int = 4,
    return_image: bool = False,
):
    """Greedy batch-wise choice among seam carving, scaling and cropping.

    Each batch changes the active dimension by up to ``batch`` pixels with the
    operator whose result is most similar to the current image; ties prefer
    seam, then scale, then crop.
    """
    smoothed = np.asarray(smoothed, dtype=np.float64)
    h, w = smoothed.shape[:2]
    if sig.shape != (h, w):
        raise RetargetError("significance map does not match the image")
    if target_w < 16 or target_h < 16:
        raise RetargetError(f"target {target_w}x{target_h} is below the 16 px minimum")
    if batch < 1:
        raise RetargetError("batch size must be >= 1")
    log = OperationLog((w, h), (target_w, target_h))
    st = _State(
        Track(smoothed, "raster"),
        Track(np.asarray(sig, dtype=np.float64), "field"),
        Track(np.zeros((h, w)), "field"),
    )

    changes = [(abs(target_w - w) / w, VERTICAL), (abs(target_h - h) / h, HORIZONTAL)]
    # larger relative change first; width first on equal change
    order = [ax for _, ax in sorted(changes, key=lambda c: -c[0])]
    for axis in order:
        while True:
            cw, ch = st.img.dims
            cur, tgt = (cw, target_w) if axis == VERTICAL else (ch, target_h)
            if cur == tgt:
                break
            enlarge = tgt > cur
            step = min(batch, abs(tgt - cur))
            nxt = cur + step if enlarge else cur - step
            new_dims = (nxt, ch) if axis == VERTICAL else (cw, nxt)

            cands = []
            seam_st, seam_ops = _seam_candidate(st, axis, step, enlarge)
            cands.append(("seam", seam_st, seam_ops))
            scale_op = ScaleOp(new_dims)
            cands.append(("scale", st.copy().apply(scale_op), [scale_op]))
            if not enlarge:
                win = crop_window(st.sig.a, *new_dims)
                crop_op = CropOp(win)
                cands.append(("crop", st.copy().apply(crop_op), [crop_op]))

            best = None
            for name, cst, ops in cands:
                score = similarity_score(cst.img.a, cst.sig.a, st.img.a, st.sig.a, axis, step, patch, stride)
                if best is None or score > best[0]:
                    best = (score, name, cst, ops)
            _, _, st, ops = best
            log.ops.extend(ops)
    if log.final_dims() != (target_w, target_h):
        raise RetargetError("planner did not reach the target size")
    if return_image:
        return log, st.img.a
    return log
