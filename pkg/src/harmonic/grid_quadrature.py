"""
G-compatible midpoint grids on a centered box, grid functions and dense quadrature-weighted
operators.

An OperatorMatrix stores kernel values K(x_i, x_j); its action on a grid function is

    (Af)(x_i) = sum_j K(x_i, x_j) * w_j * f(x_j).
"""
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import pandas as pd
from scipy.spatial.distance import cdist

from src.core.exceptions import (
    GridMismatch,
    IncompatibleGroup,
    IoFailure,
    NoConvergence,
    ValidationError,
)
from src.core.logging_setup import get_logger
from src.harmonic.reflection_core import ReflectionGroup, pairwise_orbit_distance, product_table

logger = get_logger("grid_quadrature")

ACTION_TOL = 1e-9
OPERATOR_DUMP_VERSION = 1


@dataclass(frozen=True, eq=False)
class Grid:
    dim: int
    points: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    spacing: np.ndarray
    half_widths: np.ndarray
    points_per_axis: int
    group: ReflectionGroup = field(repr=False)
    action_table: np.ndarray = field(repr=False)

    @property
    def size(self) -> int:
        return int(self.points.shape[0])

    @property
    def volume(self) -> float:
        return float(np.prod(2.0 * self.half_widths))

    @property
    def min_spacing(self) -> float:
        return float(self.spacing.min())

    @property
    def min_half_width(self) -> float:
        return float(self.half_widths.min())

    @cached_property
    def orbit_distances(self) -> np.ndarray:
        """Dense matrix of d(x_i, x_j)."""
        return pairwise_orbit_distance(self.group, self.points, self.points)

    @cached_property
    def euclidean_distances(self) -> np.ndarray:
        return cdist(self.points, self.points)

    @cached_property
    def orbit_labels(self) -> np.ndarray:
        """Consecutive orbit ids per point, numbered by the smallest point index in each orbit."""
        _, labels = np.unique(self.action_table.min(axis=0), return_inverse=True)
        return labels.reshape(-1)

    def interior_mask(self, margin: float) -> np.ndarray:
        """Points at least `margin` away from every face of the box."""
        return np.all(np.abs(self.points) <= self.half_widths - margin + 1e-12, axis=1)

    def origin_index(self) -> Optional[int]:
        hits = np.flatnonzero(np.linalg.norm(self.points, axis=1) < ACTION_TOL * self.min_spacing)
        return int(hits[0]) if hits.size else None

    def compatible(self, other: "Grid") -> bool:
        return self is other or (
            self.size == other.size
            and self.group.order == other.group.order
            and np.array_equal(self.points, other.points)
        )


def grid_identity_scale(grid: Grid) -> int:
    """
    Smallest k with 2^k * spacing >= 2.

    From this scale on h(2^k d) vanishes between different orbits, so T_k only sees orbits.
    """
    return int(np.ceil(np.log2(2.0 / grid.min_spacing) - 1e-12))


def coarsest_scale(grid: Grid) -> int:
    """Smallest k with 2^(1-k) <= min half-width."""
    return int(np.ceil(1.0 - np.log2(grid.min_half_width) - 1e-12))


def _check_same_grid(*grids: Grid) -> None:
    first = grids[0]
    for other in grids[1:]:
        if not first.compatible(other):
            raise GridMismatch(
                "Objects live on different grids",
                {"sizes": [g.size for g in grids]},
            )


def build_grid(
    half_widths: float | Sequence[float],
    points_per_axis: int,
    group: ReflectionGroup,
) -> Grid:
    """
    Uniform cell-centred grid on [-L_1, L_1] x ... x [-L_N, L_N].

    Points are -L + (i + 1/2) h with h = 2L/n, each carrying weight prod(h). The action
    table maps every group element to a permutation of point indices.

    Raises:
        ValidationError: even or non-positive points_per_axis, non-positive half widths.
        IncompatibleGroup: some group element does not permute the grid points.
    """
    n = int(points_per_axis)
    if n <= 0 or n % 2 == 0:
        raise ValidationError(
            f"points_per_axis must be a positive odd integer, got {points_per_axis}",
            {"points_per_axis": points_per_axis},
        )
    dim = group.dim
    widths = np.broadcast_to(np.asarray(half_widths, dtype=float), (dim,)).copy()
    if np.any(widths <= 0):
        raise ValidationError("Box half widths must be positive", {"half_widths": widths.tolist()})

    spacing = 2.0 * widths / n
    axes = [-widths[a] + (np.arange(n) + 0.5) * spacing[a] for a in range(dim)]
    mesh = np.meshgrid(*axes, indexing="ij")
    points = np.column_stack([m.ravel() for m in mesh])
    weights = np.full(points.shape[0], float(np.prod(spacing)))

    table = np.empty((group.order, points.shape[0]), dtype=np.int64)
    for s, sigma in enumerate(group.elements):
        images = points @ sigma.T
        idx = np.rint((images + widths) / spacing - 0.5).astype(np.int64)
        inside = np.all((idx >= 0) & (idx < n), axis=1)
        if not inside.all():
            raise IncompatibleGroup(
                f"Group element {s} maps grid points outside the box",
                {"element": s, "point": points[int(np.argmin(inside))].tolist()},
            )
        flat = np.ravel_multi_index(tuple(idx.T), (n,) * dim)
        error = np.linalg.norm(images - points[flat], axis=1)
        if error.max() > ACTION_TOL * spacing.min():
            i = int(np.argmax(error))
            raise IncompatibleGroup(
                f"Group element {s} does not permute the grid",
                {"element": s, "point": points[i].tolist(), "image": images[i].tolist()},
            )
        table[s] = flat

    _validate_action_table(table, group)
    points.setflags(write=False)
    weights.setflags(write=False)
    table.setflags(write=False)
    grid = Grid(
        dim=dim,
        points=points,
        weights=weights,
        spacing=spacing,
        half_widths=widths,
        points_per_axis=n,
        group=group,
        action_table=table,
    )
    logger.info(f"Built grid: {grid.size} points in R^{dim}, spacing {spacing.min():.4g}, |G|={group.order}")
    return grid


def _validate_action_table(table: np.ndarray, group: ReflectionGroup) -> None:
    size = table.shape[1]
    for s, perm in enumerate(table):
        if np.bincount(perm, minlength=size).max() != 1:
            raise IncompatibleGroup(f"Action of element {s} is not a bijection", {"element": s})
    products = product_table(group)
    for s in range(group.order):
        for t in range(group.order):
            # (sigma tau)(p_i) = sigma(p_{pi_tau(i)})
            if not np.array_equal(table[products[s, t]], table[s][table[t]]):
                raise IncompatibleGroup(
                    f"Action table is not a homomorphism at pair ({s}, {t})",
                    {"pair": [s, t]},
                )


@dataclass(frozen=True, eq=False)
class GridFunction:
    grid: Grid = field(repr=False)
    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=float).reshape(-1)
        if values.shape[0] != self.grid.size:
            raise GridMismatch(
                f"Expected {self.grid.size} values, got {values.shape[0]}",
                {"expected": self.grid.size, "received": int(values.shape[0])},
            )
        if not np.all(np.isfinite(values)):
            raise ValidationError("Grid function has non-finite values", {})
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_callable(cls, grid: Grid, fn: Callable[[np.ndarray], np.ndarray]) -> "GridFunction":
        """Sample `fn`, which receives the (size, N) point array."""
        return cls(grid, np.asarray(fn(grid.points), dtype=float))

    @classmethod
    def constant(cls, grid: Grid, value: float = 1.0) -> "GridFunction":
        return cls(grid, np.full(grid.size, float(value)))

    def _other(self, other: "GridFunction | float") -> np.ndarray | float:
        if isinstance(other, GridFunction):
            _check_same_grid(self.grid, other.grid)
            return other.values
        return float(other)

    def __add__(self, other: "GridFunction | float") -> "GridFunction":
        return GridFunction(self.grid, self.values + self._other(other))

    def __sub__(self, other: "GridFunction | float") -> "GridFunction":
        return GridFunction(self.grid, self.values - self._other(other))

    def __mul__(self, other: "GridFunction | float") -> "GridFunction":
        return GridFunction(self.grid, self.values * self._other(other))

    __radd__ = __add__
    __rmul__ = __mul__

    def __neg__(self) -> "GridFunction":
        return GridFunction(self.grid, -self.values)


@dataclass(frozen=True, eq=False)
class OperatorMatrix:
    grid: Grid = field(repr=False)
    entries: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        entries = np.asarray(self.entries, dtype=float)
        if entries.shape != (self.grid.size, self.grid.size):
            raise GridMismatch(
                f"Operator shape {entries.shape} does not match grid size {self.grid.size}",
                {"shape": list(entries.shape), "grid_size": self.grid.size},
            )
        if not np.all(np.isfinite(entries)):
            raise ValidationError("Operator has non-finite entries", {})
        entries.setflags(write=False)
        object.__setattr__(self, "entries", entries)

    @classmethod
    def from_action(cls, grid: Grid, matrix: np.ndarray) -> "OperatorMatrix":
        """Operator whose action on value vectors is `matrix`."""
        return cls(grid, np.asarray(matrix, dtype=float) / grid.weights[None, :])

    @property
    def action(self) -> np.ndarray:
        return self.entries * self.grid.weights[None, :]

    def __add__(self, other: "OperatorMatrix") -> "OperatorMatrix":
        _check_same_grid(self.grid, other.grid)
        return OperatorMatrix(self.grid, self.entries + other.entries)

    def __sub__(self, other: "OperatorMatrix") -> "OperatorMatrix":
        _check_same_grid(self.grid, other.grid)
        return OperatorMatrix(self.grid, self.entries - other.entries)

    def __mul__(self, scalar: float) -> "OperatorMatrix":
        return OperatorMatrix(self.grid, self.entries * float(scalar))

    __rmul__ = __mul__

    def __neg__(self) -> "OperatorMatrix":
        return OperatorMatrix(self.grid, -self.entries)


def identity_operator(grid: Grid) -> OperatorMatrix:
    return OperatorMatrix(grid, np.diag(1.0 / grid.weights))


def zero_operator(grid: Grid) -> OperatorMatrix:
    return OperatorMatrix(grid, np.zeros((grid.size, grid.size)))


def multiplication_operator(f: GridFunction) -> OperatorMatrix:
    """Pointwise multiplication by f."""
    return OperatorMatrix(f.grid, np.diag(f.values / f.grid.weights))


def invariant_projector(grid: Grid) -> OperatorMatrix:
    """
    Orthogonal projection of L^2 onto G-invariant functions, f -> |G|^-1 sum_sigma f o sigma.

    For the trivial group this is the identity operator.
    """
    counts = np.zeros((grid.size, grid.size))
    rows = np.tile(np.arange(grid.size), grid.group.order)
    np.add.at(counts, (rows, grid.action_table.ravel()), 1.0)
    return OperatorMatrix(grid, counts / grid.group.order / grid.weights[None, :])


def symmetrize(f: GridFunction) -> GridFunction:
    """
    G-average of f. Each orbit receives the mean of f over its points, so the result is
    constant on orbits bit for bit.
    """
    labels = f.grid.orbit_labels
    sums = np.bincount(labels, weights=f.values)
    counts = np.bincount(labels)
    return GridFunction(f.grid, (sums / counts)[labels])


def invariance_defect(f: GridFunction) -> float:
    """max over sigma, i of |f(p_i) - f(sigma(p_i))|."""
    return float(np.abs(f.values[f.grid.action_table] - f.values[None, :]).max())


def operator_invariance_defect(A: OperatorMatrix) -> float:
    """max over sigma of |K(sigma x, sigma y) - K(x, y)|, 0 for a G-bi-invariant kernel."""
    defect = 0.0
    for perm in A.grid.action_table:
        defect = max(defect, float(np.abs(A.entries[np.ix_(perm, perm)] - A.entries).max()))
    return defect


class NormKind(str, Enum):
    L1 = "L1"
    L2 = "L2"
    LINF = "Linf"
    WEAK_L1 = "weakL1"


def inner(f: GridFunction, g: GridFunction) -> float:
    _check_same_grid(f.grid, g.grid)
    return float(np.sum(f.grid.weights * f.values * g.values))


def norm(f: GridFunction, which: NormKind | str = NormKind.L2, lam: Optional[float] = None) -> float:
    """
    Quadrature L^p norms. For weakL1 the measure of {|f| > lam} is returned.
    """
    kind = NormKind(which)
    values = np.abs(f.values)
    w = f.grid.weights
    if kind is NormKind.L1:
        return float(np.sum(w * values))
    if kind is NormKind.L2:
        return float(np.sqrt(np.sum(w * values * values)))
    if kind is NormKind.LINF:
        return float(values.max(initial=0.0))
    if lam is None or lam <= 0:
        raise ValidationError("weakL1 needs a positive level lambda", {"lambda": lam})
    return float(np.sum(w[values > lam]))


def apply(A: OperatorMatrix, f: GridFunction) -> GridFunction:
    _check_same_grid(A.grid, f.grid)
    return GridFunction(f.grid, A.entries @ (A.grid.weights * f.values))


def compose(A: OperatorMatrix, B: OperatorMatrix) -> OperatorMatrix:
    """Operator of f -> A(B(f)): entries A diag(w) B."""
    _check_same_grid(A.grid, B.grid)
    return OperatorMatrix(A.grid, (A.entries * A.grid.weights[None, :]) @ B.entries)


def adjoint(A: OperatorMatrix) -> OperatorMatrix:
    """Adjoint in the weighted inner product; the kernel is transposed."""
    return OperatorMatrix(A.grid, A.entries.T)


@dataclass(frozen=True)
class NormEstimate:
    value: float
    iterations: int
    converged: bool

    def __float__(self) -> float:
        return self.value


def operator_l2_norm(
    A: OperatorMatrix,
    tol: float = 1e-10,
    max_iter: int = 5000,
    seed: int = 0,
    strict: bool = False,
) -> NormEstimate:
    """
    Largest singular value of A on L^2(w) by power iteration on A*A.

    The symmetric form B = W^1/2 K W^1/2 has the same singular values as A in the weighted
    inner product. Iteration stops once two successive estimates differ by less than
    `tol` relative.

    Raises:
        ValidationError: tol is not positive.
        NoConvergence: max_iter is reached and `strict` is set. Payload holds the estimate.
    """
    if tol <= 0:
        raise ValidationError("tol must be positive", {"tol": tol})
    sqrt_w = np.sqrt(A.grid.weights)
    B = sqrt_w[:, None] * A.entries * sqrt_w[None, :]
    vec = np.random.default_rng(seed).standard_normal(A.grid.size)
    vec /= np.linalg.norm(vec)

    ev_prev = None
    ev = 0.0
    for it in range(1, max_iter + 1):
        dst = B.T @ (B @ vec)
        size = np.linalg.norm(dst)
        if size == 0.0:
            return NormEstimate(0.0, it, True)
        ev = float(np.sqrt(size))
        vec = dst / size
        if ev_prev is not None and abs(ev - ev_prev) < tol * ev:
            return NormEstimate(ev, it, True)
        ev_prev = ev

    logger.warning(f"Power iteration stopped at max_iter={max_iter} with estimate {ev:.6e}")
    if strict:
        raise NoConvergence(
            f"Operator norm did not converge within {max_iter} iterations",
            {"estimate": ev, "max_iter": max_iter},
        )
    return NormEstimate(ev, max_iter, False)


def dump_grid_function(f: GridFunction, path: str | Path) -> None:
    """CSV with columns x1..xN,value, one row per point in grid order."""
    frame = pd.DataFrame(f.grid.points, columns=[f"x{a + 1}" for a in range(f.grid.dim)])
    frame["value"] = f.values
    try:
        frame.to_csv(path, index=False, float_format="%.17g")
    except OSError as e:
        raise IoFailure(f"Cannot write grid function to {path}: {e}", {"path": str(path)}) from e


def load_grid_function(grid: Grid, path: str | Path) -> GridFunction:
    try:
        frame = pd.read_csv(path)
    except OSError as e:
        raise IoFailure(f"Cannot read grid function {path}: {e}", {"path": str(path)}) from e
    coords = frame[[f"x{a + 1}" for a in range(grid.dim)]].to_numpy()
    if coords.shape != grid.points.shape or np.abs(coords - grid.points).max() > ACTION_TOL:
        raise GridMismatch(f"Points in {path} do not match the grid", {"path": str(path)})
    return GridFunction(grid, frame["value"].to_numpy())


def dump_operator(A: OperatorMatrix, path: str | Path) -> None:
    """Binary dump: 16-byte header (rows, cols, version, reserved as uint32), then row-major doubles."""
    rows, cols = A.entries.shape
    header = np.array([rows, cols, OPERATOR_DUMP_VERSION, 0], dtype="<u4")
    try:
        with open(path, "wb") as fh:
            fh.write(header.tobytes())
            fh.write(np.ascontiguousarray(A.entries, dtype="<f8").tobytes())
    except OSError as e:
        raise IoFailure(f"Cannot write operator to {path}: {e}", {"path": str(path)}) from e


def load_operator(grid: Grid, path: str | Path) -> OperatorMatrix:
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise IoFailure(f"Cannot read operator {path}: {e}", {"path": str(path)}) from e
    rows, cols, version, _ = np.frombuffer(raw[:16], dtype="<u4")
    if version != OPERATOR_DUMP_VERSION:
        raise ValidationError(f"Unsupported operator dump version {version}", {"version": int(version)})
    if rows != grid.size or cols != grid.size:
        raise GridMismatch(
            f"Operator in {path} is {rows}x{cols}, grid has {grid.size} points",
            {"shape": [int(rows), int(cols)]},
        )
    entries = np.frombuffer(raw[16:], dtype="<f8").reshape(int(rows), int(cols)).copy()
    return OperatorMatrix(grid, entries)
