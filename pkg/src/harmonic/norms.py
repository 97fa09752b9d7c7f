"""
Discrete norm calculators: G-invariant Holder seminorm, smooth-molecule norm, BMO and the
homogeneous Besov norms built from a scale family.

Sup-type quantities are exact over all pairs when the grid has at most EXHAUSTIVE_LIMIT
points and estimated on a seeded sample otherwise; the breakdown records which mode ran.
"""
from typing import Mapping, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from src.core.exceptions import MissingTildeFamily, NotInvariant, ValidationError
from src.core.logging_setup import get_logger
from src.core.report import VerificationReport
from src.harmonic.approx_identity import ScaleFamily
from src.harmonic.cz_decomposition import ball_radius_index
from src.harmonic.grid_quadrature import GridFunction, OperatorMatrix, apply, invariance_defect, norm
from src.harmonic.reflection_core import pairwise_orbit_distance

logger = get_logger("norms")

EXHAUSTIVE_LIMIT = 4096
PAIR_SAMPLES = 1_000_000
BALL_CENTER_SAMPLES = 512


class NormBreakdown(BaseModel):
    value: float
    witness: Optional[list[float]] = None
    components: dict[str, float] = Field(default_factory=dict)
    mode: str = "exhaustive"
    flags: dict[str, bool] = Field(default_factory=dict)


class MoleculeParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    beta: float = Field(gt=0, le=1)
    gamma: float = Field(gt=0)
    r: float = Field(gt=0)
    center: tuple[float, ...]


def _pairs(size: int, exhaustive_limit: int, samples: int, seed: int) -> tuple[np.ndarray, np.ndarray, str]:
    if size <= exhaustive_limit:
        i, j = np.triu_indices(size, k=1)
        return i, j, "exhaustive"
    rng = np.random.default_rng(seed)
    return rng.integers(0, size, samples), rng.integers(0, size, samples), "sampled"


def holder_norm(
    f: GridFunction,
    eta: float,
    seed: int = 0,
    exhaustive_limit: int = EXHAUSTIVE_LIMIT,
    samples: int = PAIR_SAMPLES,
) -> NormBreakdown:
    """
    sup over d(x, y) >= spacing/2 of |f(x) - f(y)| / d(x, y)^eta.

    Raises:
        NotInvariant: f differs across an orbit, where d vanishes and the seminorm is
            infinite. The payload carries the offending pair and value=inf.
    """
    if not 0.0 < eta <= 1.0:
        raise ValidationError(f"eta must lie in (0, 1], got {eta}", {"eta": eta})
    grid = f.grid
    scale = max(1.0, norm(f, "Linf"))
    if invariance_defect(f) > 1e-9 * scale:
        errors = np.abs(f.values[grid.action_table] - f.values[None, :])
        s, i = np.unravel_index(int(np.argmax(errors)), errors.shape)
        j = int(grid.action_table[s, i])
        raise NotInvariant(
            "Holder seminorm is infinite: f differs on one orbit",
            {"value": float("inf"), "pair": [grid.points[i].tolist(), grid.points[j].tolist()]},
        )
    i, j, mode = _pairs(grid.size, exhaustive_limit, samples, seed)
    d = grid.orbit_distances[i, j]
    keep = d >= 0.5 * grid.min_spacing
    if not keep.any():
        return NormBreakdown(value=0.0, mode=mode)
    i, j, d = i[keep], j[keep], d[keep]
    ratio = np.abs(f.values[i] - f.values[j]) / d**eta
    best = int(np.argmax(ratio))
    value = float(ratio[best])
    return NormBreakdown(
        value=value,
        witness=[*grid.points[i[best]].tolist(), *grid.points[j[best]].tolist()],
        components={"smoothness": value},
        mode=mode,
    )


def molecule_norm(
    f: GridFunction,
    p: MoleculeParams,
    seed: int = 0,
    exhaustive_limit: int = EXHAUSTIVE_LIMIT,
    samples: int = PAIR_SAMPLES,
    cancellation_tol: float = 1e-8,
) -> NormBreakdown:
    """
    Smallest constant in the size and smoothness conditions of a smooth molecule centred at
    x0 with width r:

        |f(x)| <= C r^gamma / (r + d(x, x0))^(N+gamma),
        |f(x) - f(x')| <= C (d(x, x') / (r + d(x, x0)))^beta r^gamma / (r + d(x, x0))^(N+gamma)
            for d(x, x') <= (r + d(x, x0)) / 2.

    The integral of f is reported as the cancellation residual and only sets a flag.
    """
    grid = f.grid
    N = grid.dim
    center = np.asarray(p.center, dtype=float).reshape(1, N)
    d0 = pairwise_orbit_distance(grid.group, grid.points, center)[:, 0]
    envelope = (p.r + d0) ** (N + p.gamma) / p.r**p.gamma
    size_ratio = np.abs(f.values) * envelope
    size_at = int(np.argmax(size_ratio))
    size = float(size_ratio[size_at])

    i, j, mode = _pairs(grid.size, exhaustive_limit, samples, seed)
    # both orders, since the admissible radius depends on the first point
    i, j = np.concatenate([i, j]), np.concatenate([j, i])
    d = grid.orbit_distances[i, j]
    keep = (d >= 0.5 * grid.min_spacing) & (d <= 0.5 * (p.r + d0[i]))
    smooth = 0.0
    witness = grid.points[size_at].tolist()
    if keep.any():
        i, j, d = i[keep], j[keep], d[keep]
        ratio = np.abs(f.values[i] - f.values[j]) * envelope[i] * ((p.r + d0[i]) / d) ** p.beta
        best = int(np.argmax(ratio))
        smooth = float(ratio[best])
        if smooth > size:
            witness = [*grid.points[i[best]].tolist(), *grid.points[j[best]].tolist()]

    residual = abs(float(grid.weights @ f.values))
    return NormBreakdown(
        value=max(size, smooth),
        witness=witness,
        components={"size": size, "smoothness": smooth, "cancellation_residual": residual},
        mode=mode,
        flags={"cancellation": residual <= cancellation_tol},
    )


def bmo_norm(
    f: GridFunction,
    metric: str = "euclidean",
    region: Optional[np.ndarray] = None,
    seed: int = 0,
    exhaustive_limit: int = EXHAUSTIVE_LIMIT,
    center_samples: int = BALL_CENTER_SAMPLES,
) -> NormBreakdown:
    """
    sup over balls B of |B|^-1 sum_{x in B} w_x |f(x) - mean_B f|.

    Balls are closed, centred at grid points, with radii m * spacing (m >= 0), and measured
    with the quadrature weights. `metric="orbit"` uses orbit balls instead of Euclidean
    balls. With `region` set, f is restricted to the masked points before balls are formed.
    """
    grid = f.grid
    if metric == "euclidean":
        dist = grid.euclidean_distances
    elif metric == "orbit":
        dist = grid.orbit_distances
    else:
        raise ValidationError(f"Unknown BMO metric '{metric}'", {"metric": metric})
    idx = np.arange(grid.size) if region is None else np.flatnonzero(region)
    if idx.size == 0:
        return NormBreakdown(value=0.0, mode="exhaustive")
    values = f.values[idx]
    w = grid.weights[idx]
    sub = dist[np.ix_(idx, idx)]

    if idx.size <= exhaustive_limit:
        centers, mode = np.arange(idx.size), "exhaustive"
    else:
        rng = np.random.default_rng(seed)
        centers, mode = rng.choice(idx.size, size=center_samples, replace=False), "sampled"

    best, best_center, best_radius = 0.0, int(centers[0]), 0.0
    for c in centers:
        rho = ball_radius_index(sub[c], grid.min_spacing)
        levels = np.unique(rho)
        inside = rho[None, :] <= levels[:, None]
        mass = inside @ w
        mean = (inside @ (w * values)) / mass
        osc = (inside * np.abs(values[None, :] - mean[:, None])) @ w / mass
        at = int(np.argmax(osc))
        if osc[at] > best:
            best, best_center, best_radius = float(osc[at]), int(c), float(levels[at] * grid.min_spacing)

    return NormBreakdown(
        value=best,
        witness=[*grid.points[idx[best_center]].tolist(), best_radius],
        components={"oscillation": best},
        mode=mode,
        flags={"orbit_balls": metric == "orbit"},
    )


def besov_sup_norm(f: GridFunction, alpha: float, family: ScaleFamily) -> NormBreakdown:
    """sup over interior k and interior x of 2^(alpha k) |D_k f(x)|."""
    interior = family.interior_mask()
    best, witness = 0.0, None
    per_scale: dict[str, float] = {}
    for k in family.interior_scales():
        values = np.abs(apply(family.D[k], f).values) * 2.0 ** (alpha * k)
        values = np.where(interior, values, 0.0)
        at = int(np.argmax(values))
        per_scale[f"k={k}"] = float(values[at])
        if values[at] > best:
            best, witness = float(values[at]), [float(k), *family.grid.points[at].tolist()]
    return NormBreakdown(value=best, witness=witness, components=per_scale)


def besov_dual_norm(f: GridFunction, alpha: float, tilde: Mapping[int, OperatorMatrix]) -> NormBreakdown:
    """sum_k 2^(-alpha k) ||D~_k f||_1 over the given interior scales."""
    per_scale = {
        f"k={k}": 2.0 ** (-alpha * k) * norm(apply(op, f), "L1")
        for k, op in sorted(tilde.items())
    }
    return NormBreakdown(value=float(sum(per_scale.values())), components=per_scale)


def besov_norms(
    f: GridFunction,
    alpha: float,
    family: ScaleFamily,
    tilde: Optional[Mapping[int, OperatorMatrix]] = None,
) -> tuple[NormBreakdown, NormBreakdown]:
    """
    Both homogeneous Besov norms of f.

    Raises:
        ValidationError: alpha outside (0, 1).
        MissingTildeFamily: no reproducing-formula family was given for the second norm.
    """
    if not 0.0 < alpha < 1.0:
        raise ValidationError(f"alpha must lie in (0, 1), got {alpha}", {"alpha": alpha})
    if tilde is None:
        raise MissingTildeFamily("The dual Besov norm needs the D~_k family", {"alpha": alpha})
    return besov_sup_norm(f, alpha, family), besov_dual_norm(f, alpha, tilde)


def holder_besov_equivalence(
    test_functions: Sequence[GridFunction],
    alpha: float,
    family: ScaleFamily,
    ceiling: float = 10.0,
) -> VerificationReport:
    """
    Ratio of the Holder seminorm to the Besov sup norm per test function.

    Functions where both norms vanish are skipped and counted.
    """
    report = VerificationReport(
        suite="holder_besov",
        config={"alpha": alpha, "functions": len(test_functions), "ceiling": ceiling},
    )
    ratios: list[float] = []
    skipped = 0
    for index, f in enumerate(test_functions):
        holder = holder_norm(f, alpha).value
        besov = besov_sup_norm(f, alpha, family).value
        if holder == 0.0 or besov == 0.0:
            skipped += 1
            continue
        ratios.append(holder / besov)
        report.add(f"ratio[{index}]", holder / besov)
    report.add("degenerate_functions", skipped, unit="functions")
    if ratios:
        report.add("ratio_min", min(ratios), lower=1.0 / ceiling)
        report.add("ratio_max", max(ratios), bound=ceiling)
        report.add("ratio_spread", max(ratios) / min(ratios), bound=ceiling)
    logger.info(f"Holder/Besov equivalence over {len(ratios)} functions")
    return report
