"""Exact two-label MRF minimisation on a 4-connected grid via max-flow."""

from __future__ import annotations

import maxflow
import numpy as np


def mrf_energy(labels, cost0, cost1, w_right, w_down) -> float:
    """Energy of a binary labelling.

    ``cost0``/``cost1`` are per-pixel unary costs; ``w_right[y, x]`` is paid
    when pixel (y, x) and (y, x+1) disagree, ``w_down[y, x]`` likewise with
    (y+1, x).  The last column of ``w_right`` and last row of ``w_down`` are
    ignored.
    """
    lab = np.asarray(labels, dtype=bool)
    e = np.where(lab, cost1, cost0).sum()
    e += (w_right[:, :-1] * (lab[:, :-1] != lab[:, 1:])).sum()
    e += (w_down[:-1, :] * (lab[:-1, :] != lab[1:, :])).sum()
    return float(e)


def solve_binary_mrf(cost0, cost1, w_right, w_down) -> np.ndarray:
    """Global minimiser of :func:`mrf_energy` (all costs and weights >= 0)."""
    cost0 = np.asarray(cost0, dtype=np.float64)
    cost1 = np.asarray(cost1, dtype=np.float64)
    h, w = cost0.shape
    g = maxflow.Graph[float]()
    nodes = g.add_grid_nodes((h, w))
    right = np.array([[0, 0, 0], [0, 0, 1], [0, 0, 0]])
    down = np.array([[0, 0, 0], [0, 0, 0], [0, 1, 0]])
    wr = np.array(w_right, dtype=np.float64)
    wr[:, -1] = 0.0
    wd = np.array(w_down, dtype=np.float64)
    wd[-1, :] = 0.0
    g.add_grid_edges(nodes, weights=wr, structure=right, symmetric=True)
    g.add_grid_edges(nodes, weights=wd, structure=down, symmetric=True)
    # a node in the sink segment has its source edge cut: source capacity = cost of label 1
    g.add_grid_tedges(nodes, cost1, cost0)
    g.maxflow()
    return np.asarray(g.get_grid_segments(nodes), dtype=bool)


def contrast_weights(r: np.ndarray, weight: float, sigma_c: float):
    """Pairwise weights ``weight * exp(-|c_p - c_q|^2 / (2 sigma_c^2))`` to the right/down neighbour."""
    h, w = r.shape[:2]
    wr = np.zeros((h, w))
    wd = np.zeros((h, w))
    dr = ((r[:, 1:] - r[:, :-1]) ** 2).sum(-1)
    dd = ((r[1:] - r[:-1]) ** 2).sum(-1)
    wr[:, :-1] = weight * np.exp(-dr / (2.0 * sigma_c**2))
    wd[:-1] = weight * np.exp(-dd / (2.0 * sigma_c**2))
    return wr, wd
