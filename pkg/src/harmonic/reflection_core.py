"""
Root systems, the finite reflection groups they generate, orbits and the orbit distance

    d(x, y) = min_{sigma in G} |x - sigma(y)|.
"""
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.spatial.distance import cdist

from src.core.exceptions import (
    ClosureViolation,
    IoFailure,
    NormViolation,
    OrderCapExceeded,
    ParallelViolation,
    ValidationError,
    ZeroRoot,
)
from src.core.logging_setup import get_logger
from src.core.report import VerificationReport

logger = get_logger("reflection_core")

ROOT_NORM_TOL = 1e-10
MATRIX_DEDUP_TOL = 1e-9
DEFAULT_MAX_ORDER = 1024
SQRT2 = np.sqrt(2.0)

_DIHEDRAL_NAME = re.compile(r"^I2\((\d+)\)$", re.IGNORECASE)


@dataclass(frozen=True, eq=False)
class RootSystem:
    ambient_dim: int
    roots: np.ndarray
    name: str = "custom"

    @property
    def size(self) -> int:
        return int(self.roots.shape[0])


@dataclass(frozen=True, eq=False)
class ReflectionGroup:
    dim: int
    elements: np.ndarray
    generator_indices: tuple[int, ...] = ()
    name: str = "custom"

    @property
    def order(self) -> int:
        return int(self.elements.shape[0])

    def apply(self, index: int, points: np.ndarray) -> np.ndarray:
        """Image of row vectors `points` under element `index`."""
        return np.asarray(points, dtype=float) @ self.elements[index].T


@dataclass(frozen=True, eq=False)
class OrbitSet:
    representative: np.ndarray
    points: np.ndarray = field(repr=False)

    @property
    def size(self) -> int:
        return int(self.points.shape[0])


def _preset_roots(name: str, dim: int | None) -> tuple[int, list[list[float]]]:
    key = name.upper()
    if key == "A1":
        return 1, [[SQRT2], [-SQRT2]]
    if key == "A1XA1":
        return 2, [[SQRT2, 0.0], [-SQRT2, 0.0], [0.0, SQRT2], [0.0, -SQRT2]]
    if key == "B2":
        return 2, [
            [SQRT2, 0.0], [-SQRT2, 0.0], [0.0, SQRT2], [0.0, -SQRT2],
            [1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0],
        ]
    if key == "A2":
        angles = np.arange(6) * np.pi / 3.0
        return 2, (SQRT2 * np.column_stack([np.cos(angles), np.sin(angles)])).tolist()
    if key == "TRIVIAL":
        return dim or 1, []
    match = _DIHEDRAL_NAME.match(name.strip())
    if match:
        return 2, _dihedral_roots(int(match.group(1))).tolist()
    raise ValidationError(
        f"Unknown root system preset '{name}'",
        {"presets": ["A1", "A1xA1", "B2", "A2", "TRIVIAL", "I2(m)"]},
    )


def _dihedral_roots(m: int) -> np.ndarray:
    if m < 1:
        raise ValidationError(f"Dihedral order must be positive, got {m}", {"m": m})
    angles = np.arange(2 * m) * np.pi / m
    roots = SQRT2 * np.column_stack([np.cos(angles), np.sin(angles)])
    # exact zeros keep sign-flip symmetric sets symmetric
    roots[np.abs(roots) < 1e-15] = 0.0
    return roots


def _validate_roots(roots: np.ndarray) -> None:
    if roots.shape[0] == 0:
        return
    sq_norms = np.einsum("ij,ij->i", roots, roots)
    bad = np.flatnonzero(np.abs(sq_norms - 2.0) > ROOT_NORM_TOL)
    if bad.size:
        i = int(bad[0])
        raise NormViolation(
            f"Root {roots[i].tolist()} has squared norm {sq_norms[i]:.12g}, expected 2",
            {"root": roots[i].tolist(), "squared_norm": float(sq_norms[i])},
        )

    gram = roots @ roots.T
    for i, alpha in enumerate(roots):
        # |<a,b>| = |a||b| for parallel roots of equal length
        parallel = np.flatnonzero(np.abs(np.abs(gram[i]) - 2.0) <= ROOT_NORM_TOL)
        same = [j for j in parallel if gram[i, j] > 0]
        opposite = [j for j in parallel if gram[i, j] < 0]
        if len(same) != 1 or len(opposite) != 1:
            raise ParallelViolation(
                f"Roots parallel to {alpha.tolist()} are not exactly {{alpha, -alpha}}",
                {"root": alpha.tolist(), "parallel": roots[parallel].tolist()},
            )

    for alpha in roots:
        images = reflect(alpha, roots)
        nearest = cdist(images, roots).min(axis=1)
        if np.any(nearest > ROOT_NORM_TOL):
            j = int(np.argmax(nearest))
            raise ClosureViolation(
                f"Reflection in {alpha.tolist()} maps {roots[j].tolist()} outside the root set",
                {"root": alpha.tolist(), "image": images[j].tolist()},
            )


def make_root_system(
    vectors_or_preset: str | Sequence[Sequence[float]] | np.ndarray,
    dim: int | None = None,
) -> RootSystem:
    """
    Build and validate a root system.

    Args:
        vectors_or_preset: a preset name (A1, A1xA1, B2, A2, TRIVIAL, I2(m)) or explicit
            root vectors. Explicit vectors are validated as given and never rescaled.
        dim: ambient dimension for TRIVIAL or for an empty explicit root list.

    Raises:
        NormViolation, ParallelViolation, ClosureViolation: the roots are not a normalized
            root system.
    """
    if isinstance(vectors_or_preset, str):
        name = vectors_or_preset
        ambient_dim, vectors = _preset_roots(name, dim)
    else:
        name = "custom"
        vectors = vectors_or_preset
        arr = np.asarray(vectors, dtype=float)
        ambient_dim = int(arr.shape[1]) if arr.ndim == 2 and arr.shape[0] else int(dim or 1)
    roots = np.asarray(vectors, dtype=float).reshape(-1, ambient_dim)
    if dim is not None and dim != ambient_dim:
        raise ValidationError(
            f"Root system {name} lives in dimension {ambient_dim}, requested {dim}",
            {"ambient_dim": ambient_dim, "dim": dim},
        )
    _validate_roots(roots)
    roots.setflags(write=False)
    logger.debug(f"Root system {name}: {roots.shape[0]} roots in R^{ambient_dim}")
    return RootSystem(ambient_dim=ambient_dim, roots=roots, name=name)


def dihedral_root_system(m: int) -> RootSystem:
    """Root system of the dihedral group I2(m): 2m roots of length sqrt(2) at angles j*pi/m."""
    return make_root_system(f"I2({m})")


def load_root_system(path: str | Path) -> RootSystem:
    """
    Read a root system from a text file: one root per line, whitespace separated
    coordinates. Blank lines and lines starting with '#' are skipped.
    """
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise IoFailure(f"Cannot read root file {path}: {e}", {"path": str(path)}) from e
    vectors = [
        [float(token) for token in line.split()]
        for line in lines
        if line.strip() and not line.lstrip().startswith("#")
    ]
    if len({len(v) for v in vectors}) > 1:
        raise ValidationError(f"Rows of {path} have different lengths", {"path": str(path)})
    system = make_root_system(vectors)
    return RootSystem(ambient_dim=system.ambient_dim, roots=system.roots, name=Path(path).stem)


def dump_root_system(rs: RootSystem, path: str | Path) -> None:
    text = "".join(" ".join(f"{v:.17g}" for v in root) + "\n" for root in rs.roots)
    try:
        Path(path).write_text(f"# {rs.name}\n{text}", encoding="utf-8")
    except OSError as e:
        raise IoFailure(f"Cannot write root file {path}: {e}", {"path": str(path)}) from e


def reflect(root: Sequence[float] | np.ndarray, point: Sequence[float] | np.ndarray) -> np.ndarray:
    """
    sigma_alpha(x) = x - 2 <x, alpha> / |alpha|^2 * alpha.

    `point` may be a single vector or a stack of row vectors.
    """
    alpha = np.asarray(root, dtype=float)
    x = np.asarray(point, dtype=float)
    norm_sq = float(alpha @ alpha)
    if norm_sq == 0.0:
        raise ZeroRoot("Cannot reflect about the zero vector", {"root": alpha.tolist()})
    coeff = 2.0 * (x @ alpha) / norm_sq
    return x - np.multiply.outer(coeff, alpha)


def reflection_matrix(root: Sequence[float] | np.ndarray) -> np.ndarray:
    alpha = np.asarray(root, dtype=float)
    norm_sq = float(alpha @ alpha)
    if norm_sq == 0.0:
        raise ZeroRoot("Cannot reflect about the zero vector", {"root": alpha.tolist()})
    return np.eye(alpha.size) - 2.0 * np.outer(alpha, alpha) / norm_sq


def _find(stack: list[np.ndarray], candidate: np.ndarray) -> int:
    if not stack:
        return -1
    diffs = np.abs(np.asarray(stack) - candidate).max(axis=(1, 2))
    hits = np.flatnonzero(diffs < MATRIX_DEDUP_TOL)
    return int(hits[0]) if hits.size else -1


def _lex_key(matrix: np.ndarray) -> tuple[float, ...]:
    return tuple(np.round(matrix, 9).ravel().tolist())


def generate_group(rs: RootSystem, max_order: int = DEFAULT_MAX_ORDER) -> ReflectionGroup:
    """
    Close {sigma_alpha : alpha in R} under matrix products, breadth first.

    Elements are ordered by BFS layer, then lexicographically on the matrix entries; element
    0 is the identity.

    Raises:
        OrderCapExceeded: the closure grows past `max_order`.
    """
    dim = rs.ambient_dim
    generators: list[np.ndarray] = []
    for alpha in rs.roots:
        mat = reflection_matrix(alpha)
        if _find(generators, mat) < 0:
            generators.append(mat)

    elements: list[np.ndarray] = [np.eye(dim)]
    frontier: list[np.ndarray] = [np.eye(dim)]
    while frontier:
        layer: list[np.ndarray] = []
        for element in frontier:
            for gen in generators:
                candidate = gen @ element
                if _find(elements, candidate) < 0 and _find(layer, candidate) < 0:
                    layer.append(candidate)
        layer.sort(key=_lex_key)
        elements.extend(layer)
        if len(elements) > max_order:
            raise OrderCapExceeded(
                f"Group generated by {rs.name} exceeds max_order={max_order}",
                {"max_order": max_order, "reached": len(elements)},
            )
        frontier = layer

    stack = np.asarray(elements).reshape(-1, dim, dim)
    stack.setflags(write=False)
    generator_indices = tuple(sorted(_find(elements, gen) for gen in generators))
    logger.info(f"Generated reflection group from {rs.name}: order {stack.shape[0]} in R^{dim}")
    return ReflectionGroup(dim=dim, elements=stack, generator_indices=generator_indices, name=rs.name)


def product_table(g: ReflectionGroup) -> np.ndarray:
    """table[i, j] = index of elements[i] @ elements[j]."""
    elements = list(g.elements)
    table = np.empty((g.order, g.order), dtype=np.int64)
    for i, a in enumerate(g.elements):
        for j, b in enumerate(g.elements):
            idx = _find(elements, a @ b)
            if idx < 0:
                raise ClosureViolation(
                    f"Product of elements {i} and {j} is not in the group",
                    {"pair": [i, j]},
                )
            table[i, j] = idx
    return table


def group_axiom_defects(g: ReflectionGroup) -> dict[str, float]:
    """Orthogonality, closure and inverse defects of the element list (all 0 for a valid group)."""
    eye = np.eye(g.dim)
    orthogonality = max(float(np.abs(m.T @ m - eye).max()) for m in g.elements)
    stack = g.elements
    closure = 0.0
    inverse = 0.0
    for a in stack:
        products = np.einsum("ij,gjk->gik", a, stack)
        per_element = np.abs(products[:, None] - stack[None]).max(axis=(2, 3)).min(axis=1)
        closure = max(closure, float(per_element.max()))
        inverse = max(inverse, float(np.abs(stack - a.T).max(axis=(1, 2)).min()))
    identity = float(np.abs(stack[0] - eye).max())
    return {
        "orthogonality": orthogonality,
        "closure": closure,
        "inverse": inverse,
        "identity": identity,
    }


def _dedup_points(points: np.ndarray, tol: float = MATRIX_DEDUP_TOL) -> np.ndarray:
    kept: list[np.ndarray] = []
    for p in points:
        if not kept or np.min(np.abs(np.asarray(kept) - p).max(axis=1)) >= tol:
            kept.append(p)
    return np.asarray(kept).reshape(-1, points.shape[1])


def orbit(g: ReflectionGroup, x: Sequence[float] | np.ndarray) -> OrbitSet:
    """The G-orbit of x, deduplicated within 1e-9 in group element order."""
    rep = np.asarray(x, dtype=float).reshape(g.dim)
    images = np.einsum("gij,j->gi", g.elements, rep)
    return OrbitSet(representative=rep, points=_dedup_points(images))


def pairwise_orbit_distance(g: ReflectionGroup, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Matrix D[i, j] = min over sigma of |x_i - sigma(y_j)|."""
    xs = np.asarray(xs, dtype=float).reshape(-1, g.dim)
    ys = np.asarray(ys, dtype=float).reshape(-1, g.dim)
    result = cdist(xs, ys)
    for sigma in g.elements[1:]:
        np.minimum(result, cdist(xs, ys @ sigma.T), out=result)
    return result


def orbit_distance(
    g: ReflectionGroup,
    x: Sequence[float] | np.ndarray,
    y: Sequence[float] | np.ndarray,
) -> float:
    return float(pairwise_orbit_distance(g, np.asarray(x)[None], np.asarray(y)[None])[0, 0])


def verify_group(g: ReflectionGroup, seed: int = 42, triples: int = 1000) -> VerificationReport:
    """
    Group axioms and pseudometric axioms of d on seeded random triples.

    The orbit distance is checked for symmetry, d <= |x - y|, the triangle inequality and
    bi-invariance d(sigma x, tau y) = d(x, y).
    """
    report = VerificationReport(suite="group", config={"group": g.name, "dim": g.dim, "seed": seed})
    report.add("group_order", g.order, unit="elements")
    for key, value in group_axiom_defects(g).items():
        report.add(f"{key}_defect", value, bound=1e-9)

    rng = np.random.default_rng(seed)
    x, y, z = (rng.uniform(-4.0, 4.0, size=(triples, g.dim)) for _ in range(3))
    dxy = np.array([orbit_distance(g, a, b) for a, b in zip(x, y)])
    dyx = np.array([orbit_distance(g, b, a) for a, b in zip(x, y)])
    dxz = np.array([orbit_distance(g, a, c) for a, c in zip(x, z)])
    dzy = np.array([orbit_distance(g, c, b) for b, c in zip(y, z)])
    euclid = np.linalg.norm(x - y, axis=1)

    report.add("symmetry_defect", np.max(np.abs(dxy - dyx)), bound=1e-9)
    report.add("euclidean_domination_excess", max(0.0, np.max(dxy - euclid)), bound=1e-9)
    report.add("triangle_excess", max(0.0, np.max(dxy - dxz - dzy)), bound=1e-9)

    sigmas = rng.integers(0, g.order, size=triples)
    taus = rng.integers(0, g.order, size=triples)
    moved = np.array([
        orbit_distance(g, g.elements[s] @ a, g.elements[t] @ b)
        for a, b, s, t in zip(x, y, sigmas, taus)
    ])
    report.add("bi_invariance_defect", np.max(np.abs(moved - dxy)), bound=1e-9)

    on_orbit = np.array([orbit_distance(g, a, g.elements[s] @ a) for a, s in zip(x, sigmas)])
    report.add("orbit_vanishing_defect", np.max(on_orbit), bound=1e-9)

    sizes = [orbit(g, a).size for a in x[:100]]
    report.add("orbit_size_divisibility_failures", sum(g.order % s != 0 for s in sizes), bound=0)
    logger.info(f"Group checks for {g.name}: {len(report.failed)} failed metrics")
    return report
