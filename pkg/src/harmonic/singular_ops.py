"""
Truncated G-invariant singular integrals and the T1 toolkit around them.

The example kernel is

    K(x, y) = sum_{k_min <= k <= k_max} c_k 2^(kN) phi(2^k d(x, y)),

with phi either the quintic smoothstep bump b or its zero-mean second difference
phi(t) = 2^(2N) b(4t) - 2 * 2^N b(2t) + b(t). Truncating the scale sum keeps every entry
finite, the diagonal included.
"""
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from src.core.exceptions import (
    EmptyLibrary,
    EpsTooSmall,
    GridMismatch,
    IoFailure,
    NotInvariant,
    OriginMissing,
    RTooLarge,
    ValidationError,
)
from src.core.logging_setup import get_logger
from src.core.report import VerificationReport
from src.harmonic.approx_identity import ScaleFamily, build_DkM, default_bump, quintic_bump
from src.harmonic.calderon_formula import CalderonSystem
from src.harmonic.grid_quadrature import (
    Grid,
    GridFunction,
    OperatorMatrix,
    adjoint,
    apply,
    build_grid,
    compose,
    inner,
    invariance_defect,
    multiplication_operator,
    norm,
    operator_invariance_defect,
    operator_l2_norm,
    symmetrize,
)
from src.harmonic.norms import MoleculeParams, bmo_norm, holder_norm, molecule_norm
from src.harmonic.reflection_core import (
    ReflectionGroup,
    generate_group,
    load_root_system,
    make_root_system,
    orbit_distance,
)

logger = get_logger("singular_ops")

PROFILES = ("smoothstep_d2", "smoothstep")
INVARIANCE_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class KernelSpec:
    group: ReflectionGroup = field(repr=False)
    profile: str = "smoothstep_d2"
    k_min: int = 0
    k_max: int = 4
    coefficients: Optional[tuple[float, ...]] = None

    def __post_init__(self) -> None:
        if self.profile not in PROFILES:
            raise ValidationError(f"Unknown kernel profile '{self.profile}'", {"profiles": list(PROFILES)})
        if self.k_min > self.k_max:
            raise ValidationError(
                f"k_min={self.k_min} exceeds k_max={self.k_max}",
                {"k_min": self.k_min, "k_max": self.k_max},
            )
        if self.coefficients is not None:
            if len(self.coefficients) != self.k_max - self.k_min + 1:
                raise ValidationError(
                    "One coefficient per scale is required",
                    {"scales": self.k_max - self.k_min + 1, "coefficients": len(self.coefficients)},
                )
            object.__setattr__(self, "coefficients", tuple(float(c) for c in self.coefficients))

    @property
    def dim(self) -> int:
        return self.group.dim

    @property
    def scales(self) -> range:
        return range(self.k_min, self.k_max + 1)

    def coefficient(self, k: int) -> float:
        return 1.0 if self.coefficients is None else self.coefficients[k - self.k_min]

    def phi(self, t: np.ndarray | float) -> np.ndarray:
        b = quintic_bump()
        t = np.asarray(t, dtype=float)
        if self.profile == "smoothstep":
            return b(t)
        N = self.dim
        return 2.0 ** (2 * N) * b(4.0 * t) - 2.0 * 2.0**N * b(2.0 * t) + b(t)


def kernel_values(spec: KernelSpec, distances: np.ndarray) -> np.ndarray:
    """K as a function of the orbit distance, evaluated elementwise."""
    distances = np.asarray(distances, dtype=float)
    total = np.zeros_like(distances)
    for k in spec.scales:
        total += spec.coefficient(k) * 2.0 ** (k * spec.dim) * spec.phi(2.0**k * distances)
    return total


def eval_kernel(spec: KernelSpec, x: Sequence[float] | np.ndarray, y: Sequence[float] | np.ndarray) -> float:
    return float(kernel_values(spec, np.asarray(orbit_distance(spec.group, x, y))))


@dataclass(frozen=True, eq=False)
class DiscreteSIO:
    operator: OperatorMatrix = field(repr=False)
    spec: Optional[KernelSpec] = None
    epsilon: float = 1.0

    @property
    def grid(self) -> Grid:
        return self.operator.grid


def build_discrete_sio(spec: KernelSpec, grid: Grid, epsilon: float = 1.0) -> DiscreteSIO:
    """
    Raises:
        GridMismatch: the grid carries a different group than the kernel.
    """
    if grid.dim != spec.dim or grid.group.order != spec.group.order:
        raise GridMismatch(
            "Kernel group and grid group differ",
            {"kernel": [spec.dim, spec.group.order], "grid": [grid.dim, grid.group.order]},
        )
    entries = kernel_values(spec, grid.orbit_distances)
    operator = OperatorMatrix(grid, 0.5 * (entries + entries.T))
    logger.info(f"Built {spec.profile} operator, scales [{spec.k_min}, {spec.k_max}], on {grid.size} points")
    return DiscreteSIO(operator=operator, spec=spec, epsilon=epsilon)


def estimate_kernel_constants(
    spec: KernelSpec,
    grid: Grid,
    epsilon: float = 1.0,
    sample_budget: int = 100_000,
    seed: int = 42,
) -> VerificationReport:
    """
    Measured constants of the size, smoothness and double-difference conditions.

    Smoothness ratios are taken over seeded admissible triples with
    spacing/2 <= d(x, x') <= d(x, y)/2, the double difference over quadruples admissible in
    both variables.
    """
    if not 0.0 < epsilon <= 1.0:
        raise ValidationError(f"epsilon must lie in (0, 1], got {epsilon}", {"epsilon": epsilon})
    N = grid.dim
    D = grid.orbit_distances
    K = kernel_values(spec, D)
    floor = 0.5 * grid.min_spacing
    rng = np.random.default_rng(seed)
    report = VerificationReport(
        suite="kernel_constants",
        config={"profile": spec.profile, "k_min": spec.k_min, "k_max": spec.k_max,
                "epsilon": epsilon, "sample_budget": sample_budget, "seed": seed},
    )

    far = D >= floor
    size = np.where(far, np.abs(K) * D**N, 0.0)
    i, j = np.unravel_index(int(np.argmax(size)), size.shape)
    report.add("size_constant", float(size[i, j]),
               witness=[*grid.points[i].tolist(), *grid.points[j].tolist()])

    x, xp, y = (rng.integers(0, grid.size, sample_budget) for _ in range(3))
    dxy, dxx = D[x, y], D[x, xp]
    keep = (dxx >= floor) & (dxy >= floor) & (dxx <= 0.5 * dxy)
    report.add("admissible_triples", int(keep.sum()), unit="triples")
    report.add("filter_violations", int(np.count_nonzero(dxx[keep] > 0.5 * dxy[keep])), bound=0)
    if keep.any():
        x, xp, y, dxy, dxx = x[keep], xp[keep], y[keep], dxy[keep], dxx[keep]
        scale = dxy ** (N + epsilon) / dxx**epsilon
        ratio_x = np.abs(K[x, y] - K[xp, y]) * scale
        ratio_y = np.abs(K[y, x] - K[y, xp]) * scale
        at = int(np.argmax(ratio_x))
        report.add("smoothness_x_constant", float(ratio_x[at]),
                   witness=[*grid.points[x[at]].tolist(), *grid.points[xp[at]].tolist()])
        report.add("smoothness_y_constant", float(ratio_y.max()))

    x, xp, y, yp = (rng.integers(0, grid.size, sample_budget) for _ in range(4))
    dxy, dxx, dyy = D[x, y], D[x, xp], D[y, yp]
    keep = (dxx >= floor) & (dyy >= floor) & (dxx <= 0.5 * dxy) & (dyy <= 0.5 * dxy)
    if keep.any():
        x, xp, y, yp = x[keep], xp[keep], y[keep], yp[keep]
        second = K[x, y] - K[xp, y] - K[x, yp] + K[xp, yp]
        ratio = np.abs(second) * D[x, y] ** (N + 2 * epsilon) / (D[x, xp] * D[y, yp]) ** epsilon
        report.add("double_difference_constant", float(ratio.max()))
    logger.info(f"Kernel constants estimated on {grid.size} points")
    return report


STABLE_CONSTANTS = ("size_constant", "smoothness_x_constant", "smoothness_y_constant")


def resolution_stability(
    spec: KernelSpec,
    half_width: float | Sequence[float],
    ns: Sequence[int],
    epsilon: float = 1.0,
    sample_budget: int = 100_000,
    seed: int = 42,
    norm_spread: float = 1.2,
    constant_ratio: float = 2.0,
) -> VerificationReport:
    """
    Rebuild the grid and the operator at every n and compare ||T|| and the kernel
    constants across resolutions.

    ||T|| is compared over all n (max/min), each kernel constant between consecutive n
    (the worst of max(a/b, b/a) is reported).

    Raises:
        ValidationError: fewer than two distinct resolutions.
    """
    ns = sorted(set(int(n) for n in ns))
    if len(ns) < 2:
        raise ValidationError("Resolution stability needs at least two grid sizes", {"ns": ns})
    report = VerificationReport(
        suite="resolution_stability",
        config={"ns": ns, "epsilon": epsilon, "sample_budget": sample_budget, "seed": seed},
    )
    norms: list[tuple[int, float]] = []
    constants: list[VerificationReport] = []
    for n in ns:
        grid = build_grid(half_width, n, spec.group)
        norms.append((n, operator_l2_norm(build_discrete_sio(spec, grid, epsilon).operator).value))
        constants.append(estimate_kernel_constants(spec, grid, epsilon, sample_budget, seed))
    report.add_table("operator_norm_by_n", norms)

    values = [v for _, v in norms]
    if min(values) > 0.0:
        report.add("operator_norm_spread", max(values) / min(values), bound=norm_spread)
    for name in STABLE_CONSTANTS:
        rows = []
        for n, rep in zip(ns, constants):
            try:
                rows.append((n, rep.metric(name).value))
            except KeyError:
                continue
        report.add_table(f"{name}_by_n", rows)
        ratios = [max(a / b, b / a) for (_, a), (_, b) in zip(rows, rows[1:]) if a > 0.0 and b > 0.0]
        if ratios:
            report.add(f"{name}_ratio", max(ratios), bound=constant_ratio)
    logger.info(f"Operator norms across resolutions: {norms}")
    return report


def _one(grid: Grid) -> GridFunction:
    return GridFunction.constant(grid, 1.0)


def _relative_defect(f: GridFunction) -> float:
    return invariance_defect(f) / max(1.0, norm(f, "Linf"))


def t1_diagnostics(
    T: DiscreteSIO,
    family: ScaleFamily,
    bmo_fraction: float = 0.1,
    molecule_scale: Optional[int] = None,
) -> VerificationReport:
    """
    T1 and T*1 on the interior region with their BMO norms against bmo_fraction * ||T||,
    invariance defects, ||T|| and a molecule test: molecule norms of a D_k column before
    and after T.
    """
    grid = T.grid
    if not grid.compatible(family.grid):
        raise GridMismatch("Operator and family live on different grids", {})
    interior = family.interior_mask()
    t_one = apply(T.operator, _one(grid))
    t_star_one = apply(adjoint(T.operator), _one(grid))
    op_norm = operator_l2_norm(T.operator).value

    report = VerificationReport(
        suite="t1",
        config={"bmo_fraction": bmo_fraction, "epsilon": T.epsilon,
                "profile": T.spec.profile if T.spec else "operator"},
    )
    report.add("operator_norm", op_norm)
    for name, image in (("T1", t_one), ("T_star_1", t_star_one)):
        bmo = bmo_norm(image, region=interior)
        report.add(f"bmo_{name}", bmo.value, bound=bmo_fraction * op_norm, witness=bmo.witness)
        report.add(f"invariance_defect_{name}", _relative_defect(image), bound=INVARIANCE_TOL, unit="relative")
        idx = np.flatnonzero(interior)
        report.add_table(name, [(float(i), float(image.values[i])) for i in idx])
    report.add("kernel_invariance_defect", operator_invariance_defect(T.operator), bound=INVARIANCE_TOL)

    scales = family.interior_scales()
    if scales:
        k = molecule_scale if molecule_scale is not None else scales[len(scales) // 2]
        candidates = np.flatnonzero(interior)
        if candidates.size:
            y0 = int(candidates[np.argmin(np.linalg.norm(grid.points[candidates], axis=1))])
            column = GridFunction(grid, family.D[k].entries[:, y0])
            params = MoleculeParams(beta=T.epsilon, gamma=T.epsilon, r=2.0**-k,
                                    center=tuple(grid.points[y0].tolist()))
            before = molecule_norm(column, params)
            after = molecule_norm(apply(T.operator, column), params)
            report.add("molecule_input", before.value)
            report.add("molecule_output", after.value)
            if before.value > 0:
                report.add("molecule_ratio", after.value / before.value)
            report.add("molecule_output_cancellation", after.components["cancellation_residual"])
    logger.info(f"T1 diagnostics: ||T||={op_norm:.4e}, {len(report.failed)} failed metrics")
    return report


@dataclass(frozen=True, eq=False)
class BumpPair:
    f: GridFunction = field(repr=False)
    g: GridFunction = field(repr=False)
    r: float
    center: tuple[float, ...]


def normalized_bump(grid: Grid, center: np.ndarray, r: float, eta: float) -> GridFunction:
    """
    Symmetrized tensor smoothstep bump supported in the orbit ball of radius r, with sup
    at most 1 and Holder seminorm at most r^-eta.
    """
    h = default_bump()
    scaled = 2.0 * np.sqrt(grid.dim) * np.abs(grid.points - center) / r
    psi = symmetrize(GridFunction(grid, np.prod(h(scaled), axis=1)))
    seminorm = holder_norm(psi, eta).value
    if seminorm > r**-eta:
        psi = psi * (r**-eta / seminorm)
    return psi


def bump_library(
    grid: Grid,
    eta: float,
    scales: Sequence[int],
    centers_per_scale: int = 4,
    seed: int = 42,
) -> list[BumpPair]:
    """
    Seeded bump pairs (psi_r, psi_r) and (psi_r, psi_{r/2}) at radii r = 2^-k, centred at
    grid points at least 2r away from the faces.
    """
    rng = np.random.default_rng(seed)
    library: list[BumpPair] = []
    for k in scales:
        r = 2.0**-k
        candidates = np.flatnonzero(grid.interior_mask(2.0 * r))
        if candidates.size == 0:
            continue
        picks = rng.choice(candidates, size=min(centers_per_scale, candidates.size), replace=False)
        for i in picks:
            c = grid.points[i]
            wide = normalized_bump(grid, c, r, eta)
            narrow = normalized_bump(grid, c, 0.5 * r, eta)
            library.append(BumpPair(wide, wide, r, tuple(c.tolist())))
            library.append(BumpPair(wide, narrow, r, tuple(c.tolist())))
    return library


def wbp_constant(T: DiscreteSIO, eta: float, library: Sequence[BumpPair]) -> VerificationReport:
    """
    sup over library pairs of |<g, Tf>| / r^N.

    Raises:
        EmptyLibrary: the library holds no pairs.
    """
    if not library:
        raise EmptyLibrary("The weak boundedness check needs at least one bump pair", {})
    N = T.grid.dim
    best, witness = 0.0, None
    per_radius: dict[float, float] = {}
    for pair in library:
        value = abs(inner(pair.g, apply(T.operator, pair.f))) / pair.r**N
        per_radius[pair.r] = max(per_radius.get(pair.r, 0.0), value)
        if value > best or witness is None:
            best, witness = value, [pair.r, *pair.center]
    report = VerificationReport(suite="wbp", config={"eta": eta, "pairs": len(library)})
    report.add("wbp_constant", best, witness=witness)
    report.add_table("wbp_by_radius", sorted(per_radius.items()))
    return report


def _spread(values: list[float]) -> Optional[float]:
    positive = [v for v in values if v > 0]
    return max(positive) / min(positive) if positive else None


def dk_Tf_decay(
    T: DiscreteSIO,
    f: GridFunction,
    family: ScaleFamily,
    alpha: float,
    M: int = 1,
    spread_bound: float = 4.0,
) -> VerificationReport:
    """
    sup over interior x of 2^(alpha k) |D_k(Tf)(x)| per interior scale with a fitted slope,
    and the smoothing ratios

        ||D_k f||_inf 2^(alpha k) / H(f),     H(D_k f) / (2^(alpha k) ||f||_inf)

    for D_k and D_k^M, where H is the Holder seminorm of order alpha.
    """
    interior = family.interior_mask()
    tf = apply(T.operator, f)
    report = VerificationReport(suite="dk_tf_decay", config={"alpha": alpha, "M": M})

    scales = family.interior_scales(M)
    curve = []
    for k in family.interior_scales():
        values = np.abs(apply(family.D[k], tf).values)[interior]
        curve.append((k, 2.0 ** (alpha * k) * float(values.max(initial=0.0))))
    report.add_table("dk_tf", curve)
    report.add("dk_tf_max", max((v for _, v in curve), default=0.0))
    positive = [(k, v) for k, v in curve if v > 0]
    if len(positive) >= 2:
        slope = float(np.polyfit([k for k, _ in positive], np.log2([v for _, v in positive]), 1)[0])
        report.add("dk_tf_slope", slope)

    H = holder_norm(f, alpha).value
    sup = norm(f, "Linf")
    if H == 0.0 or sup == 0.0:
        report.add("degenerate_input", 1.0)
        return report
    band = build_DkM(family, M)
    for label, ops in (("Dk", family.D), ("DkM", band)):
        down, up = [], []
        for k in scales:
            piece = apply(ops[k], f)
            down.append((k, norm(piece, "Linf") * 2.0 ** (alpha * k) / H))
            up.append((k, holder_norm(piece, alpha).value / (2.0 ** (alpha * k) * sup)))
        for direction, rows in (("sup_to_holder", down), ("holder_to_sup", up)):
            report.add_table(f"{label}_{direction}", rows)
            spread = _spread([v for _, v in rows])
            if spread is not None:
                report.add(f"{label}_{direction}_spread", spread, bound=spread_bound)
    return report


def extend_to_linfty(T: DiscreteSIO, f: GridFunction, R: float) -> GridFunction:
    """
    Local extension of T to a bounded G-invariant f on {|x| < R}:

        F^R(x) = T(g)(x) + sum_{|y| >= 2R} [K(x, y) - K(0, y)] f(y) w_y - C(R),
        C(R)   = sum_{1 <= |y| < 2R} K(0, y) f(y) w_y,

    with g = f 1{|y| < 2R}. F^R vanishes outside {|x| < R}. For R_2 > R_1 >= 1/2 the two
    extensions agree on {|x| < R_1}.

    Raises:
        OriginMissing: the origin is not a grid point.
        RTooLarge: R exceeds a quarter of the box half width.
        NotInvariant: f is not G-invariant.
    """
    grid = T.grid
    origin = grid.origin_index()
    if origin is None:
        raise OriginMissing("The L-infinity extension is anchored at the origin", {})
    if R <= 0 or R > 0.25 * grid.min_half_width:
        raise RTooLarge(
            f"R={R} must lie in (0, {0.25 * grid.min_half_width}]",
            {"R": R, "limit": 0.25 * grid.min_half_width},
        )
    if invariance_defect(f) > INVARIANCE_TOL * max(1.0, norm(f, "Linf")):
        raise NotInvariant("The extension needs a G-invariant input", {"defect": invariance_defect(f)})

    K = T.operator.entries
    wf = grid.weights * f.values
    radius = np.linalg.norm(grid.points, axis=1)
    near = radius < 2.0 * R
    far_part = np.where(near, 0.0, wf)
    shell = (radius >= 1.0) & near
    correction = float(K[origin] @ far_part) + float(K[origin] @ np.where(shell, wf, 0.0))
    values = K @ np.where(near, wf, 0.0) + K @ far_part - correction
    return GridFunction(grid, np.where(radius < R, values, 0.0))


def linfty_bmo(
    T: DiscreteSIO,
    corpus: Sequence[GridFunction],
    R: float,
    nested_tol: float = 1e-9,
) -> VerificationReport:
    """BMO norm of F^R on {|x| < R} per unit sup norm, plus the nested-radius consistency."""
    grid = T.grid
    inner_region = np.linalg.norm(grid.points, axis=1) < R
    report = VerificationReport(suite="linfty_bmo", config={"R": R, "corpus": len(corpus)})
    ratios = []
    nested = 0.0
    for f in corpus:
        sup = norm(f, "Linf")
        if sup == 0.0:
            continue
        F = extend_to_linfty(T, f, R)
        ratios.append(bmo_norm(F, region=inner_region).value / sup)
        if 0.5 * R >= 0.5:
            small = extend_to_linfty(T, f, 0.5 * R)
            inside = np.linalg.norm(grid.points, axis=1) < 0.5 * R
            nested = max(nested, float(np.abs(F.values - small.values)[inside].max(initial=0.0)))
    if ratios:
        report.add("linfty_bmo_constant", max(ratios))
    if 0.5 * R >= 0.5:
        report.add("nested_consistency_defect", nested, bound=nested_tol)
    return report


@dataclass(frozen=True, eq=False)
class ParaproductSystem:
    symbol: GridFunction = field(repr=False)
    operator: OperatorMatrix = field(repr=False)
    system: CalderonSystem = field(repr=False)


def build_paraproduct(b: GridFunction, system: CalderonSystem) -> ParaproductSystem:
    """
    Pi_b = sum_k D~_k diag(D_k b) S_k over the scales whose band avoids the coarse end.

    Raises:
        NotInvariant: b is not G-invariant.
    """
    if invariance_defect(b) > INVARIANCE_TOL * max(1.0, norm(b, "Linf")):
        raise NotInvariant("Paraproduct symbols must be G-invariant", {"defect": invariance_defect(b)})
    family = system.family
    total = np.zeros((b.grid.size, b.grid.size))
    for k, tilde in system.interior_tilde().items():
        piece = compose(compose(tilde, multiplication_operator(apply(family.D[k], b))), family.S[k])
        total += piece.entries
    return ParaproductSystem(symbol=b, operator=OperatorMatrix(b.grid, total), system=system)


def reproduced_symbol(b: GridFunction, system: CalderonSystem) -> GridFunction:
    """b~ = sum_k D~_k D_k b over the interior scales; the target of Pi_b(1)."""
    family = system.family
    total = GridFunction.constant(b.grid, 0.0)
    for k, tilde in system.interior_tilde().items():
        total = total + apply(tilde, apply(family.D[k], b))
    return total


def _carleson(b: GridFunction, family: ScaleFamily, scales: Sequence[int]) -> float:
    grid = b.grid
    interior = family.interior_mask()
    energy = {k: apply(family.D[k], b).values ** 2 for k in scales}
    best = 0.0
    for c in np.flatnonzero(interior):
        dist = grid.euclidean_distances[c]
        for j in scales:
            r = 2.0**-j
            ball = dist <= r
            mass = float(grid.weights[ball].sum())
            total = sum(float(grid.weights[ball] @ energy[k][ball]) for k in scales if 2.0**-k <= r)
            best = max(best, total / mass)
    return best


def verify_paraproduct(ps: ParaproductSystem, ceiling: float = 0.05) -> VerificationReport:
    """
    Pi_b(1) against b~, (Pi_b)*(1), ||Pi_b|| / ||b||_BMO, the Carleson bound of the symbol
    and the size constant of the kernel.
    """
    b = ps.symbol
    grid = b.grid
    family = ps.system.family
    report = VerificationReport(suite="paraproduct", config={"M": ps.system.M, "ceiling": ceiling})

    target = reproduced_symbol(b, ps.system)
    residual = norm(apply(ps.operator, _one(grid)) - target, "L2")
    target_norm = norm(target, "L2")
    if target_norm > 0.0:
        report.add("pi_one_residual", residual / target_norm, bound=ceiling, unit="relative")
    else:
        report.add("pi_one_residual", residual, bound=1e-12)
    report.add("pi_star_one", norm(apply(adjoint(ps.operator), _one(grid)), "L2"), bound=1e-8)

    op_norm = operator_l2_norm(ps.operator).value
    bmo = bmo_norm(b).value
    report.add("operator_norm", op_norm)
    report.add("symbol_bmo", bmo)
    if bmo > 0.0:
        report.add("norm_to_bmo", op_norm / bmo)
        carleson = _carleson(b, family, list(ps.system.interior_tilde()))
        report.add("carleson_constant", carleson / bmo**2)

    D = grid.orbit_distances
    far = D >= 0.5 * grid.min_spacing
    size = np.where(far, np.abs(ps.operator.entries) * D**grid.dim, 0.0)
    report.add("kernel_size_constant", float(size.max(initial=0.0)))
    return report


def paraproduct_corpus(
    corpus: Sequence[GridFunction],
    system: CalderonSystem,
    ratio_ceiling: float = 10.0,
) -> VerificationReport:
    """||Pi_b|| / ||b||_BMO across symbols; the spread of the ratios is bounded."""
    report = VerificationReport(suite="paraproduct_corpus", config={"corpus": len(corpus), "ceiling": ratio_ceiling})
    ratios = []
    for index, b in enumerate(corpus):
        bmo = bmo_norm(b).value
        if bmo == 0.0:
            continue
        value = operator_l2_norm(build_paraproduct(b, system).operator).value / bmo
        ratios.append(value)
        report.add(f"ratio[{index}]", value)
    spread = _spread(ratios)
    if spread is not None:
        report.add("ratio_spread", spread, bound=ratio_ceiling)
    return report


def t1_reduction(
    T: DiscreteSIO,
    system: CalderonSystem,
    slope_ceiling: float = 0.0,
) -> VerificationReport:
    """
    Reduced operator T~ = T - Pi_{T1} - (Pi_{T*1})* and its audit: T~1 and T~*1 against
    the triangle bound from the paraproduct residuals, ||T~||, the change when the
    reduction is repeated and the decay of ||D_k' T~ D_k|| in |k - k'|.
    """
    grid = T.grid
    family = system.family
    one = _one(grid)
    reduced, pieces = _reduce(T.operator, system)
    t_one, t_star_one, first, second = pieces

    report = VerificationReport(suite="t1_reduction", config={"M": system.M})
    audit = (
        ("reduced_T1", reduced, t_one, first, second),
        ("reduced_T_star_1", adjoint(reduced), t_star_one, second, first),
    )
    for name, op, image, own, other in audit:
        target = reproduced_symbol(image, system)
        bound = (
            norm(apply(own.operator, one) - target, "L2")
            + norm(image - target, "L2")
            + norm(apply(adjoint(other.operator), one), "L2")
            + 1e-9
        )
        report.add(name, norm(apply(op, one), "L2"), bound=bound)

    report.add("operator_norm", operator_l2_norm(T.operator).value)
    report.add("reduced_operator_norm", operator_l2_norm(reduced).value)
    twice, _ = _reduce(reduced, system)
    report.add("repeat_change", float(np.abs((twice - reduced).action).max()))

    curve = []
    scales = family.interior_scales()
    for k in scales:
        for kp in scales:
            value = operator_l2_norm(compose(compose(family.D[kp], reduced), family.D[k])).value
            if value > 0.0:
                curve.append((abs(k - kp), value))
    report.add_table("band_norms", curve)
    gaps = np.array([g for g, _ in curve], dtype=float)
    if np.unique(gaps).size >= 2:
        slope = float(np.polyfit(gaps, np.log2([v for _, v in curve]), 1)[0])
        report.add("band_decay_slope", slope, bound=slope_ceiling)
    return report


def _reduce(
    A: OperatorMatrix,
    system: CalderonSystem,
) -> tuple[OperatorMatrix, tuple[GridFunction, GridFunction, ParaproductSystem, ParaproductSystem]]:
    one = _one(A.grid)
    t_one = symmetrize(apply(A, one))
    t_star_one = symmetrize(apply(adjoint(A), one))
    first = build_paraproduct(t_one, system)
    second = build_paraproduct(t_star_one, system)
    reduced = A - first.operator - adjoint(second.operator)
    return reduced, (t_one, t_star_one, first, second)


def _mollifier_weights(t: np.ndarray) -> np.ndarray:
    inside = np.abs(t) < 1.0
    safe = np.where(inside, t, 0.0)
    return np.where(inside, np.exp(-1.0 / (1.0 - safe**2)), 0.0)


def mollify_G(f: GridFunction, eps: float) -> GridFunction:
    """
    h_eps(x) = sum_y psi(d(x, y)/eps) f(y) w_y / c(x), psi(t) = exp(-1/(1-t^2)) on |t| < 1,
    with c(x) normalising every row to quadrature sum 1.

    Raises:
        EpsTooSmall: eps below four grid spacings.
    """
    grid = f.grid
    if eps < 4.0 * grid.min_spacing:
        raise EpsTooSmall(
            f"eps={eps} is below 4 grid spacings ({4.0 * grid.min_spacing:.4g})",
            {"eps": eps, "spacing": grid.min_spacing},
        )
    kernel = _mollifier_weights(grid.orbit_distances / eps)
    kernel /= (kernel @ grid.weights)[:, None]
    return apply(OperatorMatrix(grid, kernel), f)


def mollifier_curve(f: GridFunction, factors: Sequence[float] = (16.0, 8.0, 4.0)) -> VerificationReport:
    """||h_eps - f||_2 for eps = factor * spacing, from the widest mollifier down."""
    grid = f.grid
    report = VerificationReport(suite="mollifier", config={"factors": list(factors)})
    curve = []
    defect = 0.0
    for factor in sorted(factors, reverse=True):
        eps = factor * grid.min_spacing
        smoothed = mollify_G(f, eps)
        curve.append((eps, norm(smoothed - f, "L2")))
        defect = max(defect, _relative_defect(smoothed))
    report.add_table("mollifier_error", curve)
    errors = [e for _, e in curve]
    report.add("non_monotone_steps", sum(1 for a, b in zip(errors, errors[1:]) if b > a), bound=0)
    report.add("output_invariance_defect", defect, bound=INVARIANCE_TOL, unit="relative")
    return report


def load_kernel_spec(path: str | Path) -> KernelSpec:
    """
    Read a kernel descriptor {group, profile, k_min, k_max, coefficients?, dim?}. `group`
    is a preset name or the path of a root file.
    """
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as e:
        raise IoFailure(f"Cannot read kernel descriptor {path}: {e}", {"path": str(path)}) from e
    except json.JSONDecodeError as e:
        raise ValidationError(f"Kernel descriptor {path} is not valid JSON: {e}", {"path": str(path)}) from e
    missing = [key for key in ("group", "k_min", "k_max") if key not in data]
    if missing:
        raise ValidationError(f"Kernel descriptor misses {missing}", {"missing": missing})
    source = str(data["group"])
    rs = load_root_system(source) if Path(source).is_file() else make_root_system(source, data.get("dim"))
    coefficients = data.get("coefficients")
    return KernelSpec(
        group=generate_group(rs),
        profile=data.get("profile", "smoothstep_d2"),
        k_min=int(data["k_min"]),
        k_max=int(data["k_max"]),
        coefficients=tuple(coefficients) if coefficients is not None else None,
    )


def dump_kernel_spec(spec: KernelSpec, path: str | Path) -> None:
    data = {
        "group": spec.group.name,
        "dim": spec.dim,
        "profile": spec.profile,
        "k_min": spec.k_min,
        "k_max": spec.k_max,
    }
    if spec.coefficients is not None:
        data["coefficients"] = list(spec.coefficients)
    try:
        Path(path).write_text(json.dumps(data, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    except OSError as e:
        raise IoFailure(f"Cannot write kernel descriptor {path}: {e}", {"path": str(path)}) from e
