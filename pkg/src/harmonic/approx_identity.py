"""
G-invariant approximation of the identity

    S_k = M_k T_k W_k T_k M_k,   T_k(x, y) = h(2^k d(x, y)),
    M_k = 1 / T_k(1),            W_k = 1 / T_k(M_k),

and the Littlewood-Paley pieces D_k = S_k - S_{k-1} over a finite scale range.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from src.core.config import get_settings
from src.core.exceptions import DegenerateNormalizer, ScaleOutOfRange, ValidationError
from src.core.logging_setup import get_logger
from src.core.report import VerificationReport
from src.harmonic.grid_quadrature import (
    Grid,
    GridFunction,
    OperatorMatrix,
    apply,
    coarsest_scale,
    compose,
    grid_identity_scale,
    invariance_defect,
    norm,
    operator_invariance_defect,
    operator_l2_norm,
)

logger = get_logger("approx_identity")

NORMALIZER_FLOOR = 1e-14
RESOLUTION_FACTOR = 4.0


@dataclass(frozen=True)
class BumpProfile:
    name: str
    fn: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    lipschitz: float

    def __call__(self, t: np.ndarray | float) -> np.ndarray:
        return self.fn(np.asarray(t, dtype=float))


def _cubic_smoothstep(t: np.ndarray) -> np.ndarray:
    s = np.clip(np.abs(t) - 1.0, 0.0, 1.0)
    return 1.0 - 3.0 * s**2 + 2.0 * s**3


def _quintic_smoothstep(t: np.ndarray) -> np.ndarray:
    s = np.clip(np.abs(t) - 1.0, 0.0, 1.0)
    return 1.0 - s**3 * (10.0 - 15.0 * s + 6.0 * s**2)


def default_bump() -> BumpProfile:
    """h = 1 on |t| <= 1, 0 on |t| >= 2, cubic smoothstep in between (C^1, Lipschitz 3/2)."""
    return BumpProfile(name="cubic_smoothstep", fn=_cubic_smoothstep, lipschitz=1.5)


def quintic_bump() -> BumpProfile:
    """C^2 variant of the default bump with the same plateau and support."""
    return BumpProfile(name="quintic_smoothstep", fn=_quintic_smoothstep, lipschitz=1.875)


def check_scale(grid: Grid, k: int) -> bool:
    """
    Validate a dyadic scale against the grid.

    Returns False when the scale is finer than 4 grid spacings. Such scales are still
    built, the discrete normalizer is just no longer comparable to the orbit-ball volume.

    Raises:
        ScaleOutOfRange: 2^(1-k) exceeds the box, or k is past the scale at which T_k
            only couples points of the same orbit.
    """
    k_coarse = coarsest_scale(grid)
    k_fine = grid_identity_scale(grid)
    if k < k_coarse or k > k_fine:
        raise ScaleOutOfRange(
            f"Scale k={k} outside the resolvable window [{k_coarse}, {k_fine}]",
            {"k": k, "coarsest": k_coarse, "finest": k_fine},
        )
    resolved = 2.0**-k >= RESOLUTION_FACTOR * grid.min_spacing
    if not resolved:
        logger.warning(f"Scale k={k}: 2^-k={2.0**-k:.4g} is below {RESOLUTION_FACTOR:g} grid spacings")
    return resolved


def build_Tk(grid: Grid, h: BumpProfile, k: int) -> OperatorMatrix:
    check_scale(grid, k)
    return OperatorMatrix(grid, h(2.0**k * grid.orbit_distances))


@dataclass(frozen=True, eq=False)
class ScaleFamily:
    grid: Grid = field(repr=False)
    profile: BumpProfile
    k_min: int
    k_max: int
    T: dict[int, OperatorMatrix] = field(repr=False)
    S: dict[int, OperatorMatrix] = field(repr=False)
    D: dict[int, OperatorMatrix] = field(repr=False)
    m: dict[int, np.ndarray] = field(repr=False)
    W: dict[int, np.ndarray] = field(repr=False)

    @property
    def scales(self) -> range:
        return range(self.k_min, self.k_max + 1)

    def interior_scales(self, M: int = 0) -> list[int]:
        """Scales whose band D_k^M does not reach the coarse end of the range (mean-zero rows)."""
        return [k for k in self.scales if k - M > self.k_min]

    @property
    def margin(self) -> float:
        """Width of the boundary layer excluded from sup-type estimates."""
        return 2.0 * 2.0**-self.k_min

    def interior_mask(self) -> np.ndarray:
        return self.grid.interior_mask(self.margin)


def _build_scale(grid: Grid, h: BumpProfile, k: int) -> tuple[OperatorMatrix, OperatorMatrix, np.ndarray, np.ndarray]:
    T = build_Tk(grid, h, k)
    w = grid.weights
    t_one = T.entries @ w
    if t_one.min() <= NORMALIZER_FLOOR:
        i = int(np.argmin(t_one))
        raise DegenerateNormalizer(
            f"T_{k}(1) vanishes at grid point {grid.points[i].tolist()}",
            {"k": k, "value": float(t_one[i])},
        )
    m = 1.0 / t_one
    W = 1.0 / (T.entries @ (w * m))
    left = m[:, None] * T.entries
    entries = (left * (w * W)[None, :]) @ left.T
    return T, OperatorMatrix(grid, 0.5 * (entries + entries.T)), m, W


def build_family(
    grid: Grid,
    h: Optional[BumpProfile] = None,
    k_min: int = 0,
    k_max: int = 4,
    max_workers: Optional[int] = None,
) -> ScaleFamily:
    """
    Build T_k, S_k and D_k for k_min <= k <= k_max.

    D_{k_min} = S_{k_min}, so that sum_k D_k = S_{k_max} exactly.

    Raises:
        ValidationError: k_min > k_max.
        ScaleOutOfRange: some scale is not resolvable on the grid.
        DegenerateNormalizer: T_k(1) vanishes somewhere.
    """
    if k_min > k_max:
        raise ValidationError(f"k_min={k_min} exceeds k_max={k_max}", {"k_min": k_min, "k_max": k_max})
    h = h or default_bump()
    scales = list(range(k_min, k_max + 1))
    workers = max_workers or get_settings().MAX_WORKERS
    # filled once here; the workers only read it
    grid.orbit_distances
    with ThreadPoolExecutor(max_workers=workers) as pool:
        built = list(pool.map(lambda k: _build_scale(grid, h, k), scales))

    T, S, m, W, D = {}, {}, {}, {}, {}
    for k, (t_k, s_k, m_k, w_k) in zip(scales, built):
        T[k], S[k], m[k], W[k] = t_k, s_k, m_k, w_k
        D[k] = s_k if k == k_min else s_k - S[k - 1]
    logger.info(f"Built scale family k in [{k_min}, {k_max}] with profile {h.name} on {grid.size} points")
    return ScaleFamily(grid=grid, profile=h, k_min=k_min, k_max=k_max, T=T, S=S, D=D, m=m, W=W)


def build_DkM(family: ScaleFamily, M: int) -> dict[int, OperatorMatrix]:
    """
    D_k^M = sum_{|j| <= M} D_{k+j}, clipped to the family range.

    The sum telescopes to S_b - S_{a-1} with a = max(k-M, k_min), b = min(k+M, k_max),
    and to S_b when a = k_min.
    """
    if M < 0:
        raise ValidationError(f"M must be non-negative, got {M}", {"M": M})
    result: dict[int, OperatorMatrix] = {}
    for k in family.scales:
        a = max(k - M, family.k_min)
        b = min(k + M, family.k_max)
        result[k] = family.S[b] if a == family.k_min else family.S[b] - family.S[a - 1]
    return result


def orbit_ball_measure(grid: Grid, r: float) -> np.ndarray:
    """|O_B(x_i, r)| = measure of {y : d(x_i, y) < r} for every grid point."""
    return (grid.orbit_distances < r).astype(float) @ grid.weights


def _local_pairs(
    D: np.ndarray,
    mask: np.ndarray,
    lower: float,
    upper: float,
    count: int,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    rows, cols = np.nonzero((D >= lower) & (D <= upper) & mask[:, None] & mask[None, :])
    if rows.size == 0:
        return rows, cols
    pick = rng.integers(0, rows.size, size=min(count, rows.size))
    return rows[pick], cols[pick]


def verify_aoi(
    family: ScaleFamily,
    f: Optional[GridFunction] = None,
    sample_budget: int = 100_000,
    seed: int = 42,
    row_sum_tol: float = 1e-12,
    identity_ceiling: float = 0.05,
) -> VerificationReport:
    """
    Measure the approximation-of-identity properties of a family.

    Reports the support and size of S_k, first and second difference ratios over sampled
    triples, row and column sums, the fine-scale identity gap and coarse-scale decay on a
    smooth invariant test function, the orbit-ball comparability of T_k(1) and the
    domination of sup_k |S_k f| by the maximal function.
    """
    from src.harmonic.cz_decomposition import maximal_function
    from src.harmonic.samples import symmetric_bump

    grid = family.grid
    N = grid.dim
    D = grid.orbit_distances
    w = grid.weights
    interior = family.interior_mask()
    rng = np.random.default_rng(seed)
    h_min = grid.min_spacing
    if f is None:
        f = symmetric_bump(grid, center=np.full(N, 0.5), width=1.0)

    report = VerificationReport(
        suite="aoi",
        config={"k_min": family.k_min, "k_max": family.k_max, "profile": family.profile.name,
                "grid_size": grid.size, "seed": seed, "sample_budget": sample_budget},
    )

    row_dev = col_dev = sym = kernel_inv = output_inv = 0.0
    support_violations = 0
    comparability_violations = 0
    radii: list[tuple[float, float]] = []
    size_consts: list[tuple[float, float]] = []
    lip_x: list[tuple[float, float]] = []
    lip_y: list[tuple[float, float]] = []
    second: list[tuple[float, float]] = []
    ball_ratios: list[float] = []
    resolved_sizes: list[float] = []
    unresolved = 0
    per_scale_budget = max(1, sample_budget // len(family.scales))

    for k in family.scales:
        S = family.S[k].entries
        row_dev = max(row_dev, float(np.abs(S @ w - 1.0).max()))
        col_dev = max(col_dev, float(np.abs(w @ S - 1.0).max()))
        sym = max(sym, float(np.abs(S - S.T).max()))
        support_violations += int(np.count_nonzero((D >= 2.0 ** (2 - k)) & (S != 0.0)))
        kernel_inv = max(kernel_inv, operator_invariance_defect(family.S[k]))
        out = apply(family.S[k], f)
        output_inv = max(output_inv, invariance_defect(out) / max(norm(f, "Linf"), 1e-300))

        rows = S[interior]
        nonzero = np.abs(rows) > 0
        radius = float(D[interior][nonzero].max()) if nonzero.any() else 0.0
        radii.append((k, radius))
        size = float(np.abs(rows).max()) * 2.0 ** (-k * N)
        size_consts.append((k, size))
        if 2.0**-k >= RESOLUTION_FACTOR * h_min:
            resolved_sizes.append(size)
        else:
            unresolved += 1

        t_one = family.T[k].entries @ w
        lower_ball = orbit_ball_measure(grid, 2.0**-k)
        upper_ball = orbit_ball_measure(grid, 2.0 ** (1 - k))
        comparability_violations += int(np.count_nonzero(
            interior & ((t_one < lower_ball * (1 - 1e-12)) | (t_one > upper_ball * (1 + 1e-12)))
        ))
        if interior.any():
            ball_ratios.extend((upper_ball[interior] / 2.0 ** ((1 - k) * N)).tolist())

        xi, xj = _local_pairs(D, interior, 0.5 * h_min, 2.0 ** (1 - k), per_scale_budget, rng)
        if xi.size:
            y = rng.integers(0, grid.size, size=xi.size)
            dx = D[xi, xj]
            lip_x.append((k, float(np.max(np.abs(S[xi, y] - S[xj, y]) / dx)) * 2.0 ** (-k * (N + 1))))
            lip_y.append((k, float(np.max(np.abs(S[y, xi] - S[y, xj]) / dx)) * 2.0 ** (-k * (N + 1))))
            yi, yj = _local_pairs(D, interior, 0.5 * h_min, 2.0 ** (1 - k), xi.size, rng)
            n_pairs = min(xi.size, yi.size)
            if n_pairs:
                a, b, c, e = xi[:n_pairs], xj[:n_pairs], yi[:n_pairs], yj[:n_pairs]
                dd = S[a, c] - S[b, c] - S[a, e] + S[b, e]
                ratio = np.abs(dd) / (D[a, b] * D[c, e])
                second.append((k, float(ratio.max()) * 2.0 ** (-k * (N + 2))))

    report.add("row_sum_deviation", row_dev, bound=row_sum_tol)
    report.add("col_sum_deviation", col_dev, bound=row_sum_tol)
    report.add("symmetry_defect", sym, bound=1e-10)
    report.add("support_violations", support_violations, bound=0, unit="entries")
    report.add("kernel_invariance_defect", kernel_inv, bound=1e-9)
    report.add("output_invariance_defect", output_inv, bound=1e-9, unit="relative")

    radius_values = [r for _, r in radii]
    non_decreasing = sum(1 for a, b in zip(radius_values, radius_values[1:]) if b >= a)
    report.add("support_radius_monotonicity_failures", non_decreasing, bound=0)
    report.add_table("support_radius", radii)
    report.add_table("size_constant", size_consts)
    report.add("size_constant_max", max(c for _, c in size_consts))
    if len(resolved_sizes) >= 2:
        report.add("size_constant_variation", max(resolved_sizes) / min(resolved_sizes), bound=2.0)
    report.add("scales_below_resolution", unresolved, unit="scales")

    if lip_x:
        report.add_table("lipschitz_x", lip_x)
        report.add_table("lipschitz_y", lip_y)
        report.add("lipschitz_x_constant", max(c for _, c in lip_x))
        report.add("lipschitz_y_constant", max(c for _, c in lip_y))
    if second:
        report.add_table("second_difference", second)
        report.add("second_difference_constant", max(c for _, c in second))

    f_norm = norm(f, "L2")
    gap = norm(apply(family.S[family.k_max], f) - f, "L2") / f_norm
    report.add("identity_gap_at_k_max", gap, bound=identity_ceiling, unit="relative")
    coarse = norm(apply(family.S[family.k_min], f), "L2") / (2.0 ** (family.k_min * N / 2) * f_norm)
    report.add("coarse_scale_decay", coarse, unit="relative")

    report.add("orbit_ball_comparability_violations", comparability_violations, bound=0, unit="points")
    if ball_ratios:
        report.add("orbit_ball_ratio_min", min(ball_ratios))
        report.add("orbit_ball_ratio_max", max(ball_ratios))

    mf = maximal_function(f).values
    sup_s = np.max([np.abs(apply(family.S[k], f).values) for k in family.scales], axis=0)
    positive = interior & (mf > 0)
    if positive.any():
        report.add("maximal_domination_constant", float(np.max(sup_s[positive] / mf[positive])))

    logger.info(f"AoI verification: {len(report.failed)} failed metrics over {len(family.scales)} scales")
    return report


def verify_almost_orthogonality(
    family: ScaleFamily,
    sample_budget: int = 100_000,
    seed: int = 42,
    epsilon: float = 1.0,
    slope_ceiling: float = -0.5,
) -> VerificationReport:
    """
    Operator norms and pointwise bounds of D_k D_l for every pair of scales.

    The slope of log2 ||D_k D_l|| against |k - l| is fitted by least squares over all pairs.
    """
    grid = family.grid
    N = grid.dim
    D = grid.orbit_distances
    w = grid.weights
    interior = family.interior_mask()
    rng = np.random.default_rng(seed)
    scales = list(family.scales)

    single = {k: operator_l2_norm(family.D[k]).value for k in scales}
    pair_norms: dict[tuple[int, int], float] = {}
    submult_failures = 0
    row_dev = 0.0
    pointwise: list[tuple[float, float]] = []
    interior_idx = np.flatnonzero(interior)
    per_pair = max(1, sample_budget // max(1, len(scales) ** 2))

    for k in scales:
        for l in scales:
            if l < k:
                pair_norms[(k, l)] = pair_norms[(l, k)]
                continue
            product = compose(family.D[k], family.D[l])
            value = operator_l2_norm(product).value
            pair_norms[(k, l)] = value
            if k == l and value > single[k] ** 2 * (1 + 1e-6) + 1e-12:
                submult_failures += 1
            if k > family.k_min and l > family.k_min:
                row_dev = max(row_dev, float(np.abs(product.entries @ w).max()))
            if interior_idx.size:
                i = rng.choice(interior_idx, size=per_pair)
                j = rng.choice(interior_idx, size=per_pair)
                scale = 2.0 ** -min(k, l)
                ratio = np.abs(product.entries[i, j]) * (scale + D[i, j]) ** (N + epsilon) / scale**epsilon
                pointwise.append((abs(k - l), float(ratio.max())))

    report = VerificationReport(
        suite="almost_orthogonality",
        config={"k_min": family.k_min, "k_max": family.k_max, "epsilon": epsilon, "seed": seed},
    )
    report.add("submultiplicativity_failures", submult_failures, bound=0)
    report.add("interior_row_sum_deviation", row_dev, bound=1e-10)
    if pointwise:
        report.add("pointwise_constant_max", max(c for _, c in pointwise))

    gaps = np.array([abs(k - l) for (k, l) in pair_norms], dtype=float)
    logs = np.array([np.log2(v) if v > 0 else np.nan for v in pair_norms.values()])
    report.add_table("pair_norms", [(abs(k - l), v) for (k, l), v in pair_norms.items() if k <= l])
    valid = np.isfinite(logs)
    if np.unique(gaps[valid]).size >= 2:
        slope = float(np.polyfit(gaps[valid], logs[valid], 1)[0])
        report.add("decay_slope", slope, bound=slope_ceiling)
        report.add("decay_exponent", -slope)
    logger.info(f"Almost orthogonality over {len(pair_norms)} scale pairs done")
    return report
