"""SLIC over-segmentation with 4-connected, compactly numbered segments."""

from __future__ import annotations

import numpy as np
from scipy import ndimage
from skimage import measure
from skimage.segmentation import slic


def relabel_connected(labels: np.ndarray) -> np.ndarray:
    """Split every label into its 4-connected pieces; number them 0..n-1 in scan order."""
    labels = np.asarray(labels)
    # measure.label separates distinct values, so offset to keep 0 as a real label
    return measure.label(labels.astype(np.int64) + 1, background=0, connectivity=1) - 1


def _contacts(labels: np.ndarray) -> np.ndarray:
    """Unique (a, b, length) rows of 4-neighbour contacts between distinct labels."""
    pairs = []
    for a, b in ((labels[:, :-1], labels[:, 1:]), (labels[:-1, :], labels[1:, :])):
        d = a != b
        pairs.append(np.stack([a[d], b[d]], axis=1))
    p = np.concatenate(pairs)
    p = np.concatenate([p, p[:, ::-1]])
    if p.size == 0:
        return np.empty((0, 3), dtype=np.int64)
    uniq, cnt = np.unique(p, axis=0, return_counts=True)
    return np.column_stack([uniq, cnt])


def _absorb_small(labels: np.ndarray, min_size: int) -> np.ndarray:
    """Merge segments smaller than ``min_size`` into their longest-contact neighbour."""
    for _ in range(16):
        sizes = np.bincount(labels.ravel())
        small = sizes < min_size
        if not small.any() or sizes.size <= 1:
            break
        con = _contacts(labels)
        con = con[small[con[:, 0]]]
        if con.size == 0:
            break
        # per small label: neighbour with the longest contact, smallest id on ties
        order = np.lexsort((con[:, 1], -con[:, 2], con[:, 0]))
        con = con[order]
        firsts = np.unique(con[:, 0], return_index=True)[1]
        target = np.arange(sizes.size)
        for a, b in con[firsts, :2]:
            # never merge two small segments into each other in the same pass
            if not (small[b] and b < a):
                target[a] = b
        labels = relabel_connected(target[labels])
    return labels


def _enforce_connectivity(raw: np.ndarray, min_size: int) -> np.ndarray:
    """Keep each label's largest 4-connected piece; orphans join the nearest kept piece."""
    comp = relabel_connected(raw)
    n = int(comp.max()) + 1
    sizes = np.bincount(comp.ravel(), minlength=n)
    owner = np.zeros(n, dtype=np.int64)
    owner[comp.ravel()] = raw.ravel()
    # largest component per original label, smallest component id on ties
    order = np.lexsort((np.arange(n), -sizes, owner))
    keep = np.zeros(n, dtype=bool)
    keep[order[np.unique(owner[order], return_index=True)[1]]] = True
    core = keep[comp]
    if not core.all():
        _, (iy, ix) = ndimage.distance_transform_edt(~core, return_indices=True)
        comp = comp[iy, ix]
    return _absorb_small(relabel_connected(comp), min_size)


def slic_superpixels(r: np.ndarray, K: int, compactness: float = 10.0) -> np.ndarray:
    """SLIC in CIELAB+xy with a regular seed grid.

    Returns int labels 0..n-1 where each segment is 4-connected.
    """
    h, w = r.shape[:2]
    if K < 1 or K > h * w:
        raise ValueError(f"K must be in [1, {h * w}], got {K}")
    if K == 1:
        return np.zeros((h, w), dtype=np.int64)
    raw = slic(
        np.clip(r, 0.0, 1.0),
        n_segments=K,
        compactness=compactness,
        start_label=0,
        enforce_connectivity=False,
        convert2lab=True,
        channel_axis=-1,
    )
    return _enforce_connectivity(raw, max(1, (h * w) // (K * 8)))


def segment_stats(labels: np.ndarray, values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-segment mean and (population) variance of each channel of ``values``."""
    n = int(labels.max()) + 1
    flat = labels.ravel()
    counts = np.bincount(flat, minlength=n).astype(np.float64)
    v = values.reshape(flat.size, -1)
    means = np.empty((n, v.shape[1]))
    var = np.empty((n, v.shape[1]))
    for c in range(v.shape[1]):
        s = np.bincount(flat, weights=v[:, c], minlength=n)
        means[:, c] = s / counts
        dev = v[:, c] - means[flat, c]
        var[:, c] = np.bincount(flat, weights=dev * dev, minlength=n) / counts
    return means, var
