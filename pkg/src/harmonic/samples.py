"""Seeded test functions on grids: symmetrized bumps, mean-zero bumps and spikes."""
from typing import Optional

import numpy as np

from src.harmonic.grid_quadrature import Grid, GridFunction, symmetrize


def _bump_values(grid: Grid, center: np.ndarray, width: float) -> np.ndarray:
    # quintic smoothstep in the radius, support |x - c| < width
    r = np.linalg.norm(grid.points - np.asarray(center, dtype=float), axis=1) / width
    s = np.clip(2.0 * r - 1.0, 0.0, 1.0)
    return 1.0 - s**3 * (10.0 - 15.0 * s + 6.0 * s**2)


def symmetric_bump(grid: Grid, center: np.ndarray | float, width: float) -> GridFunction:
    """G-average of a C^2 radial bump of radius `width` around `center`."""
    center = np.broadcast_to(np.asarray(center, dtype=float), (grid.dim,))
    return symmetrize(GridFunction(grid, _bump_values(grid, center, width)))


def mean_zero_bump(grid: Grid, center: np.ndarray | float, width: float) -> GridFunction:
    """Bump of radius `width` minus a rescaled bump of radius 2*width, integral zero."""
    center = np.broadcast_to(np.asarray(center, dtype=float), (grid.dim,))
    narrow = _bump_values(grid, center, width)
    wide = _bump_values(grid, center, 2.0 * width)
    w = grid.weights
    values = narrow - (w @ narrow) / (w @ wide) * wide
    # averaging over orbits keeps the integral
    return symmetrize(GridFunction(grid, values))


def spike(grid: Grid, index: int, height: float = 1.0) -> GridFunction:
    values = np.zeros(grid.size)
    values[index] = height
    return symmetrize(GridFunction(grid, values))


def _random_centers(grid: Grid, count: int, margin: float, rng: np.random.Generator) -> np.ndarray:
    limit = np.maximum(grid.half_widths - margin, 0.0)
    return rng.uniform(-limit, limit, size=(count, grid.dim))


def holder_suite(grid: Grid, count: int = 8, seed: int = 42, margin: float = 2.0) -> list[GridFunction]:
    """Symmetrized smooth bumps with widths spread geometrically over [4h, L/2]."""
    rng = np.random.default_rng(seed)
    widths = np.geomspace(4.0 * grid.min_spacing, 0.5 * grid.min_half_width, count)
    centers = _random_centers(grid, count, margin + widths.max(), rng)
    return [symmetric_bump(grid, c, float(wd)) for c, wd in zip(centers, widths)]


def invariant_corpus(grid: Grid, count: int = 20, seed: int = 42, margin: float = 2.0) -> list[GridFunction]:
    """Random signed sums of one to three symmetrized bumps."""
    rng = np.random.default_rng(seed)
    corpus = []
    for _ in range(count):
        terms = int(rng.integers(1, 4))
        widths = rng.uniform(2.0 * grid.min_spacing, 0.25 * grid.min_half_width, size=terms)
        centers = _random_centers(grid, terms, margin + widths.max(), rng)
        amplitudes = rng.uniform(-1.0, 1.0, size=terms)
        values = sum(a * _bump_values(grid, c, wd) for a, c, wd in zip(amplitudes, centers, widths))
        corpus.append(symmetrize(GridFunction(grid, values)))
    return corpus


def mean_zero_corpus(
    grid: Grid,
    count: int = 5,
    seed: int = 42,
    width: Optional[float] = None,
    margin: float = 2.0,
) -> list[GridFunction]:
    """Mean-zero bumps at mid scale; the widths vary by up to a factor 2 around `width`."""
    rng = np.random.default_rng(seed)
    base = width or 0.125 * grid.min_half_width
    widths = base * rng.uniform(0.75, 1.5, size=count)
    centers = _random_centers(grid, count, margin + 2.0 * widths.max(), rng)
    return [mean_zero_bump(grid, c, float(wd)) for c, wd in zip(centers, widths)]


def spike_corpus(grid: Grid, count: int = 5, seed: int = 42, margin: float = 2.0) -> list[GridFunction]:
    rng = np.random.default_rng(seed)
    candidates = np.flatnonzero(grid.interior_mask(margin))
    if candidates.size == 0:
        candidates = np.arange(grid.size)
    picks = rng.choice(candidates, size=min(count, candidates.size), replace=False)
    return [spike(grid, int(i)) for i in picks]
