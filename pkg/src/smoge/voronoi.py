"""Voronoi cells of a mixing measure and the Voronoi parameter losses.

Cells are built on the atom locations omega = (alpha1, beta, sigma2) with
the plain Euclidean norm. A component equidistant from several reference
atoms goes to the lowest reference index, so the cells always partition the
components of G.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import MixingMeasure


@dataclass(frozen=True)
class VoronoiAssignment:
    cells: tuple[tuple[int, ...], ...]
    labels: np.ndarray
    distances: np.ndarray

    @property
    def sizes(self) -> np.ndarray:
        return np.array([len(c) for c in self.cells])


@dataclass(frozen=True)
class VoronoiLossReport:
    total: float
    weight_term: float
    per_cell_terms: np.ndarray
    empty_cells: tuple[int, ...]
    singleton_cells: tuple[int, ...]
    cells: tuple[tuple[int, ...], ...]

    def as_dict(self) -> dict:
        return {
            "total": self.total,
            "weight_term": self.weight_term,
            "per_cell_terms": [float(v) for v in self.per_cell_terms],
            "empty_cells": list(self.empty_cells),
            "singleton_cells": list(self.singleton_cells),
        }


def _check_pair(G: MixingMeasure, G_star: MixingMeasure):
    if G.family != G_star.family:
        raise ValueError(f"expert family mismatch: {G.family.name} vs {G_star.family.name}")
    if G.d != G_star.d:
        raise ValueError(f"dimension mismatch: {G.d} vs {G_star.d}")


def voronoi_cells(G: MixingMeasure, G_star: MixingMeasure) -> VoronoiAssignment:
    _check_pair(G, G_star)
    diff = G.omega[:, None, :] - G_star.omega[None, :, :]
    dist = np.sqrt(np.sum(diff**2, axis=2))
    labels = np.argmin(dist, axis=1)  # first minimum wins ties
    cells = tuple(tuple(int(i) for i in np.flatnonzero(labels == j)) for j in range(G_star.K))
    return VoronoiAssignment(cells, labels, dist)


def _block_gaps(G: MixingMeasure, G_star: MixingMeasure, i: int, j: int) -> np.ndarray:
    return np.array([
        np.linalg.norm(G.alpha1[i] - G_star.alpha1[j]),
        np.linalg.norm(G.beta[i] - G_star.beta[j]),
        abs(G.sigma2[i] - G_star.sigma2[j]),
    ])


def _loss(G, G_star, squared_multi: bool) -> VoronoiLossReport:
    vc = voronoi_cells(G, G_star)
    w, w_star = G.weights, G_star.weights
    weight_term = 0.0
    per_cell = np.zeros(G_star.K)
    for j, cell in enumerate(vc.cells):
        weight_term += abs(sum(w[i] for i in cell) - w_star[j])
        power = 2 if (squared_multi and len(cell) > 1) else 1
        for i in cell:
            per_cell[j] += w[i] * np.sum(_block_gaps(G, G_star, i, j) ** power)
    empty = tuple(j for j, c in enumerate(vc.cells) if not c)
    single = tuple(j for j, c in enumerate(vc.cells) if len(c) == 1)
    total = weight_term + float(per_cell.sum())
    return VoronoiLossReport(float(total), float(weight_term), per_cell, empty, single, vc.cells)


def loss_l1(G: MixingMeasure, G_star: MixingMeasure) -> VoronoiLossReport:
    """Weight mismatch per cell plus weighted first-power parameter gaps."""
    return _loss(G, G_star, squared_multi=False)


def loss_l2(G: MixingMeasure, G_star: MixingMeasure) -> VoronoiLossReport:
    """As ``loss_l1`` but gaps are squared inside cells with more than one member."""
    return _loss(G, G_star, squared_multi=True)
