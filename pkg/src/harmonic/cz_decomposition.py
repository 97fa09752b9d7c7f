"""
G-averaged Calderon-Zygmund decomposition on grids: maximal function, Whitney cubes of the
level set, the good/bad split and the weak (1,1) experiment.
"""
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from src.core.exceptions import IoFailure, LambdaTooSmall, NotInvariant, ValidationError
from src.core.logging_setup import get_logger
from src.core.report import VerificationReport
from src.harmonic.grid_quadrature import (
    Grid,
    GridFunction,
    OperatorMatrix,
    apply,
    invariance_defect,
    norm,
)
from src.harmonic.reflection_core import pairwise_orbit_distance

logger = get_logger("cz_decomposition")

INVARIANCE_TOL = 1e-9
RADIUS_TOL = 1e-9
_CENTER_CHUNK = 512


def ball_radius_index(distances: np.ndarray, spacing: float) -> np.ndarray:
    """Smallest m >= 0 with distance <= m * spacing."""
    return np.ceil(distances / spacing - RADIUS_TOL).astype(np.int64).clip(min=0)


def maximal_function(f: GridFunction) -> GridFunction:
    """
    Uncentered maximal function over grid balls.

    Balls are closed Euclidean balls centred at grid points with radii m * spacing, m >= 0;
    the mean of |f| is taken with the quadrature weights of the points inside. For each
    centre the balls are nested prefixes of the points sorted by distance, so a point
    receives the largest prefix mean among the balls that contain it.
    """
    grid = f.grid
    dist = grid.euclidean_distances
    absf = np.abs(f.values)
    w = grid.weights
    result = np.zeros(grid.size)
    for start in range(0, grid.size, _CENTER_CHUNK):
        rows = dist[start:start + _CENTER_CHUNK]
        order = np.argsort(rows, axis=1, kind="stable")
        rho = ball_radius_index(np.take_along_axis(rows, order, axis=1), grid.min_spacing)
        means = np.cumsum((absf * w)[order], axis=1) / np.cumsum(w[order], axis=1)
        ends = np.ones_like(rho, dtype=bool)
        ends[:, :-1] = rho[:, 1:] != rho[:, :-1]
        best = np.where(ends, means, -np.inf)
        best = np.maximum.accumulate(best[:, ::-1], axis=1)[:, ::-1]
        per_center = np.empty_like(best)
        np.put_along_axis(per_center, order, best, axis=1)
        np.maximum(result, per_center.max(axis=0), out=result)
    return GridFunction(grid, result)


@dataclass(frozen=True, eq=False)
class DyadicCube:
    level: int
    corner: tuple[int, ...]
    center: np.ndarray
    side: float
    indices: np.ndarray = field(repr=False)

    @property
    def diameter(self) -> float:
        return self.side * np.sqrt(len(self.corner))


@dataclass(frozen=True, eq=False)
class WhitneyCover:
    cubes: list[DyadicCube]
    slivers: np.ndarray
    whole_grid: bool = False

    def __iter__(self):
        return iter(self.cubes)

    def __len__(self) -> int:
        return len(self.cubes)

    def covered_mask(self, size: int) -> np.ndarray:
        mask = np.zeros(size, dtype=bool)
        for cube in self.cubes:
            mask[cube.indices] = True
        return mask


def _require_cubic(grid: Grid) -> None:
    if not np.allclose(grid.half_widths, grid.half_widths[0]):
        raise ValidationError(
            "Whitney cubes need a cubic box",
            {"half_widths": grid.half_widths.tolist()},
        )


def _cube_labels(grid: Grid, level: int) -> np.ndarray:
    n = grid.points_per_axis
    axis_idx = np.unravel_index(np.arange(grid.size), (n,) * grid.dim)
    # (x + L) / side = (2i + 1) 2^level / (2n), kept in integers
    per_axis = [((2 * i + 1) * 2**level) // (2 * n) for i in axis_idx]
    return np.ravel_multi_index(tuple(per_axis), (2**level,) * grid.dim)


def whitney(E: np.ndarray, grid: Grid) -> WhitneyCover:
    """
    Maximal dyadic cubes Q inside E with dist(Q, E^c) >= diam(Q).

    Cubes are anchored at the box corner; level l has side 2L / 2^l and the finest level is
    floor(log2 n), where every cube still holds a grid point. Subdivision is top down, so
    every emitted cube is maximal and the cubes are disjoint. Points of E that no admissible
    cube reaches are returned as slivers. An empty E gives an empty cover.
    """
    _require_cubic(grid)
    E = np.asarray(E, dtype=bool)
    if not E.any():
        return WhitneyCover(cubes=[], slivers=np.array([], dtype=np.int64))

    dim = grid.dim
    half = float(grid.half_widths[0])
    complement = np.flatnonzero(~E)
    whole_grid = complement.size == 0
    dist = grid.euclidean_distances
    max_level = int(np.floor(np.log2(grid.points_per_axis)))
    labels = [_cube_labels(grid, level) for level in range(max_level + 1)]

    cubes: list[DyadicCube] = []
    slivers: list[np.ndarray] = []

    def visit(level: int, corner: tuple[int, ...], members: np.ndarray) -> None:
        inside = E[members]
        if not inside.any():
            return
        side = 2.0 * half / 2**level
        if inside.all():
            gap = np.inf if whole_grid else float(dist[np.ix_(members, complement)].min())
            if gap >= side * np.sqrt(dim) * (1 - 1e-12):
                center = -half + (np.asarray(corner) + 0.5) * side
                cubes.append(DyadicCube(level, corner, center, side, members))
                return
        if level == max_level:
            slivers.append(members[inside])
            return
        child_labels = labels[level + 1][members]
        for offset in np.ndindex(*(2,) * dim):
            child = tuple(2 * c + o for c, o in zip(corner, offset))
            label = np.ravel_multi_index(child, (2 ** (level + 1),) * dim)
            sub = members[child_labels == label]
            if sub.size:
                visit(level + 1, child, sub)

    visit(0, (0,) * dim, np.arange(grid.size))
    sliver_idx = np.concatenate(slivers) if slivers else np.array([], dtype=np.int64)
    if whole_grid:
        logger.warning("Whitney cover requested for the whole grid; complement is empty")
    logger.debug(f"Whitney cover: {len(cubes)} cubes, {sliver_idx.size} sliver points")
    return WhitneyCover(cubes=cubes, slivers=np.sort(sliver_idx), whole_grid=whole_grid)


def whitney_geometry_violations(cover: WhitneyCover, E: np.ndarray, grid: Grid) -> int:
    """Count cubes breaking diam(Q) <= dist(Q, E^c) <= 4 diam(Q) (point-set distances)."""
    complement = np.flatnonzero(~np.asarray(E, dtype=bool))
    if complement.size == 0:
        return 0
    dist = grid.euclidean_distances
    bad = 0
    for cube in cover.cubes:
        gap = float(dist[np.ix_(cube.indices, complement)].min())
        diam = cube.diameter
        if gap < diam * (1 - 1e-12) or gap > 4.0 * diam * (1 + 1e-12):
            bad += 1
    return bad


@dataclass(frozen=True, eq=False)
class CZOutput:
    lam: float
    good: GridFunction
    bad: list[tuple[DyadicCube, GridFunction]]
    E_lambda: np.ndarray = field(repr=False)
    orbit_dilate: np.ndarray = field(repr=False)
    maximal: GridFunction = field(repr=False)
    cover: WhitneyCover = field(repr=False)


def _require_invariant(f: GridFunction, tol: float = INVARIANCE_TOL) -> None:
    defect = invariance_defect(f)
    if defect > tol * max(1.0, norm(f, "Linf")):
        errors = np.abs(f.values[f.grid.action_table] - f.values[None, :])
        s, i = np.unravel_index(int(np.argmax(errors)), errors.shape)
        j = int(f.grid.action_table[s, i])
        raise NotInvariant(
            f"Function is not G-invariant (defect {defect:.3e})",
            {"defect": defect, "pair": [f.grid.points[i].tolist(), f.grid.points[j].tolist()]},
        )


def cz_decompose(f: GridFunction, lam: float) -> CZOutput:
    """
    Split f = g + sum_j b_j at height lam.

    E_lam = {Mf > lam} is covered by Whitney cubes Q_j, and

        b_j = |G|^-1 sum_sigma (f - mean_{sigma Q_j} f) 1_{sigma Q_j},   g = f - sum_j b_j.

    Raises:
        ValidationError: lam is not positive.
        NotInvariant: f is not G-invariant.
        LambdaTooSmall: the level set is the whole grid.
    """
    if lam <= 0:
        raise ValidationError(f"lambda must be positive, got {lam}", {"lambda": lam})
    _require_invariant(f)
    grid = f.grid
    mf = maximal_function(f)
    E = mf.values > lam
    if E.all():
        raise LambdaTooSmall(
            f"Level set {{Mf > {lam:.4g}}} is the whole grid",
            {"lambda": lam, "min_maximal": float(mf.values.min())},
        )

    cover = whitney(E, grid)
    table = grid.action_table
    order = grid.group.order
    w = grid.weights
    bad: list[tuple[DyadicCube, GridFunction]] = []
    total_bad = np.zeros(grid.size)
    for cube in cover.cubes:
        counts = np.zeros(grid.size)
        np.add.at(counts, table[:, cube.indices].ravel(), 1.0)
        # f invariant, so the mean over sigma(Q) equals the mean over Q
        mean = float(w[cube.indices] @ f.values[cube.indices] / w[cube.indices].sum())
        b = (f.values - mean) * counts / order
        bad.append((cube, GridFunction(grid, b)))
        total_bad += b

    good = GridFunction(grid, f.values - total_bad)
    if cover.cubes:
        centers = np.asarray([c.center for c in cover.cubes])
        radii = np.asarray([4.0 * np.sqrt(grid.dim) * c.side for c in cover.cubes])
        dilate = np.any(pairwise_orbit_distance(grid.group, grid.points, centers) <= radii[None, :], axis=1)
    else:
        dilate = np.zeros(grid.size, dtype=bool)
    logger.info(
        f"CZ decomposition at lambda={lam:.4g}: |E|={int(E.sum())} points, "
        f"{len(cover.cubes)} cubes, {cover.slivers.size} sliver points"
    )
    return CZOutput(lam=lam, good=good, bad=bad, E_lambda=E, orbit_dilate=dilate, maximal=mf, cover=cover)


def verify_cz(
    out: CZOutput,
    f: GridFunction,
    constant_ceiling: Optional[float] = None,
    tol: float = 1e-10,
) -> VerificationReport:
    """
    Check the decomposition properties: exact reconstruction, |g| <= lam off E_lam, the
    measured constants for |g| on E_lam, the cube measure, ||g||_2 and ||b_j||_1, mean-zero
    bad parts, invariance of g and the Whitney geometry.
    """
    grid = f.grid
    w = grid.weights
    lam = out.lam
    ceiling = constant_ceiling if constant_ceiling is not None else 2.0**grid.dim * grid.group.order
    f_l1 = norm(f, "L1")
    bad_sum = sum((b.values for _, b in out.bad), np.zeros(grid.size))

    report = VerificationReport(suite="cz", config={"lambda": lam, "grid_size": grid.size})
    report.add("reconstruction_error", np.abs(f.values - out.good.values - bad_sum).max(), bound=tol)
    off = ~out.E_lambda
    excess = np.abs(out.good.values[off]) - lam
    report.add("off_level_set_excess", max(0.0, float(excess.max(initial=-np.inf))), bound=tol * max(1.0, lam))
    on = out.E_lambda
    c_on = float(np.abs(out.good.values[on]).max(initial=0.0)) / lam
    report.add("good_on_level_set_constant", c_on, bound=ceiling)

    cube_measure = float(sum(w[c.indices].sum() for c in out.cover.cubes))
    if f_l1 > 0:
        report.add("cube_measure_constant", lam * cube_measure / f_l1)
        report.add("orbit_dilate_measure_constant", lam * float(w[out.orbit_dilate].sum()) / f_l1)
        report.add("good_l2_constant", norm(out.good, "L2") / np.sqrt(lam * f_l1))
    bad_l1 = [
        norm(b, "L1") / (lam * float(w[cube.indices].sum()))
        for cube, b in out.bad
    ]
    if bad_l1:
        report.add("bad_l1_constant", max(bad_l1))
    residuals = [abs(float(w @ b.values)) for _, b in out.bad]
    report.add("bad_mean_residual", max(residuals, default=0.0), bound=tol)
    report.add("good_invariance_defect", invariance_defect(out.good), bound=tol)

    outside_orbit = 0
    for cube, b in out.bad:
        support = np.zeros(grid.size, dtype=bool)
        support[grid.action_table[:, cube.indices].ravel()] = True
        outside_orbit += int(np.count_nonzero(b.values[~support]))
    report.add("bad_support_violations", outside_orbit, bound=0)
    report.add(
        "whitney_geometry_violations",
        whitney_geometry_violations(out.cover, out.E_lambda, grid),
        bound=0,
    )
    report.add("sliver_points", out.cover.slivers.size, unit="points")
    report.add("cube_count", len(out.cover.cubes), unit="cubes")
    return report


def weak11_experiment(
    T: OperatorMatrix,
    corpus: Sequence[GridFunction],
    factors: Optional[Sequence[float]] = None,
    ceiling: float = 10.0,
) -> VerificationReport:
    """
    lam * |{|Tf| > lam}| / ||f||_1 over a corpus and lam = factor * ||f||_inf.

    A growth flag is raised when the largest ratio sits at the largest lambda.
    """
    factors = np.asarray(factors if factors is not None else np.geomspace(0.1, 10.0, 9), dtype=float)
    per_factor = np.zeros(factors.size)
    report = VerificationReport(suite="weak11", config={"factors": factors.tolist(), "corpus": len(corpus)})
    for f in corpus:
        f_l1 = norm(f, "L1")
        if f_l1 == 0:
            continue
        tf = apply(T, f)
        sup = norm(f, "Linf")
        for a, factor in enumerate(factors):
            lam = factor * sup
            per_factor[a] = max(per_factor[a], lam * norm(tf, "weakL1", lam) / f_l1)

    report.add_table("ratio_by_factor", list(zip(factors.tolist(), per_factor.tolist())))
    report.add("max_ratio", float(per_factor.max(initial=0.0)), bound=ceiling)
    growth = bool(per_factor.size > 1 and per_factor[-1] > per_factor[:-1].max())
    report.add("growth_in_lambda", float(growth), bound=0.0)
    return report


def dump_cubes(out: CZOutput, path: str | Path) -> None:
    """CSV of the Whitney cubes: level, corner indices, centre, side."""
    rows = []
    for cube in out.cover.cubes:
        row = {"level": cube.level, "side": cube.side}
        row.update({f"corner{a + 1}": c for a, c in enumerate(cube.corner)})
        row.update({f"center{a + 1}": c for a, c in enumerate(cube.center)})
        rows.append(row)
    try:
        pd.DataFrame(rows).to_csv(path, index=False, float_format="%.17g")
    except OSError as e:
        raise IoFailure(f"Cannot write cubes to {path}: {e}", {"path": str(path)}) from e
