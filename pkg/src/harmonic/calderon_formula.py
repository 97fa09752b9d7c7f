"""
Calderon reproducing formula on a finite scale family.

    T_M = sum_k D_k^M D_k,     R_M = P - T_M,     T_M^-1 = sum_m R_M^m,
    D~_k = T_M^-1 D_k^M,       D~~_k = D_k^M T_M^-1,

so that f = sum_k D~_k D_k f = sum_k D_k D~~_k f for every G-invariant f. P is the
invariant projector, the identity of L^2_G.
"""
from dataclasses import dataclass, field, replace
from typing import Literal, Optional, Sequence

import numpy as np

from src.core.exceptions import (
    NoConvergence,
    NotContractive,
    NotInvariant,
    RangeTooNarrow,
    ValidationError,
    ZeroInput,
)
from src.core.logging_setup import get_logger
from src.core.report import VerificationReport
from src.harmonic.approx_identity import ScaleFamily, build_DkM
from src.harmonic.grid_quadrature import (
    GridFunction,
    OperatorMatrix,
    apply,
    compose,
    invariance_defect,
    invariant_projector,
    norm,
    operator_invariance_defect,
    operator_l2_norm,
)

logger = get_logger("calderon_formula")

Ordering = Literal["DkM_first", "Dk_first"]

DEFAULT_TOL = 1e-6
DEFAULT_MAX_TERMS = 200
MEAN_ZERO_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class NeumannInverse:
    operator: OperatorMatrix = field(repr=False)
    truncation: int
    tail_bound: float
    contraction: float

    @property
    def terms(self) -> int:
        return self.truncation + 1


@dataclass(frozen=True, eq=False)
class CalderonSystem:
    family: ScaleFamily = field(repr=False)
    M: int
    ordering: str
    T_M: OperatorMatrix = field(repr=False)
    R_M: OperatorMatrix = field(repr=False)
    inverse: Optional[NeumannInverse] = None
    tilde_D: dict[int, OperatorMatrix] = field(default_factory=dict, repr=False)
    tilde_tilde_D: dict[int, OperatorMatrix] = field(default_factory=dict, repr=False)

    def interior_tilde(self) -> dict[int, OperatorMatrix]:
        """D~_k for the scales whose band stays clear of the coarse end."""
        return {k: self.tilde_D[k] for k in self.family.interior_scales(self.M) if k in self.tilde_D}


def check_order(family: ScaleFamily, M: int) -> None:
    if 2 * M > family.k_max - family.k_min:
        raise RangeTooNarrow(
            f"M={M} needs at least {2 * M} scales beyond k_min, range is [{family.k_min}, {family.k_max}]",
            {"M": M, "k_min": family.k_min, "k_max": family.k_max},
        )


def build_TM(family: ScaleFamily, M: int, ordering: Ordering = "DkM_first") -> tuple[OperatorMatrix, OperatorMatrix]:
    """
    T_M and R_M = P - T_M.

    The sum runs over every scale of the family with the clipped D_k^M. Both orderings
    cover the same pairs (a, b) with |a - b| <= M, so T_M is symmetric, T_M 1 = 1 and
    R_M 1 = 0.

    Raises:
        RangeTooNarrow: 2M exceeds k_max - k_min.
    """
    check_order(family, M)
    band = build_DkM(family, M)
    total = np.zeros((family.grid.size, family.grid.size))
    for k in family.scales:
        pair = (band[k], family.D[k]) if ordering == "DkM_first" else (family.D[k], band[k])
        total += compose(*pair).entries
    T = OperatorMatrix(family.grid, total)
    R = invariant_projector(family.grid) - T
    return T, R


def _truncation(r: float, tol: float) -> int:
    """Smallest m with r^(m+1) / (1 - r) < tol."""
    if r == 0.0:
        return 0
    m = max(0, int(np.floor(np.log(tol * (1.0 - r)) / np.log(r))))
    while r ** (m + 1) / (1.0 - r) >= tol:
        m += 1
    while m > 0 and r**m / (1.0 - r) < tol:
        m -= 1
    return m


def invert_TM(
    T_M: OperatorMatrix,
    R_M: OperatorMatrix,
    tol: float = DEFAULT_TOL,
    max_terms: int = DEFAULT_MAX_TERMS,
) -> NeumannInverse:
    """
    Partial Neumann sum P + R + ... + R^m* with the a priori tail bound r^(m*+1)/(1-r) < tol.

    Raises:
        NotContractive: ||R_M|| >= 1; the payload holds the measured norm.
        NoConvergence: the bound needs more than `max_terms` terms.
    """
    r = operator_l2_norm(R_M).value
    if r >= 1.0:
        raise NotContractive(f"||R_M|| = {r:.6e} is not below 1", {"norm": r})
    m_star = _truncation(r, tol)
    if m_star + 1 > max_terms:
        raise NoConvergence(
            f"Neumann series needs {m_star + 1} terms, max_terms={max_terms}",
            {"terms": m_star + 1, "max_terms": max_terms, "norm": r},
        )
    term = invariant_projector(T_M.grid)
    total = term.entries.copy()
    for _ in range(m_star):
        term = compose(term, R_M)
        total += term.entries
    tail = r ** (m_star + 1) / (1.0 - r) if r > 0.0 else 0.0
    logger.info(f"Neumann inverse: ||R_M||={r:.4e}, {m_star + 1} terms, tail bound {tail:.3e}")
    return NeumannInverse(
        operator=OperatorMatrix(T_M.grid, total),
        truncation=m_star,
        tail_bound=tail,
        contraction=r,
    )


def build_tilde_families(system: CalderonSystem) -> CalderonSystem:
    """Attach D~_k = T^-1 D_k^M and D~~_k = D_k^M T^-1 for every scale."""
    if system.inverse is None:
        raise ValidationError("D~_k need the Neumann inverse of T_M", {"M": system.M})
    inverse = system.inverse.operator
    band = build_DkM(system.family, system.M)
    tilde = {k: compose(inverse, band[k]) for k in system.family.scales}
    tilde_tilde = {k: compose(band[k], inverse) for k in system.family.scales}
    return replace(system, tilde_D=tilde, tilde_tilde_D=tilde_tilde)


def build_calderon_system(
    family: ScaleFamily,
    M: int,
    tol: float = DEFAULT_TOL,
    max_terms: int = DEFAULT_MAX_TERMS,
    ordering: Ordering = "DkM_first",
) -> CalderonSystem:
    T, R = build_TM(family, M, ordering)
    system = CalderonSystem(
        family=family,
        M=M,
        ordering=ordering,
        T_M=T,
        R_M=R,
        inverse=invert_TM(T, R, tol, max_terms),
    )
    return build_tilde_families(system)


def inversion_error(system: CalderonSystem) -> float:
    """||T_M T_M^-1 - P|| in operator norm."""
    product = compose(system.T_M, system.inverse.operator)
    return operator_l2_norm(product - invariant_projector(system.family.grid)).value


def verify_system(system: CalderonSystem, tol: float = DEFAULT_TOL) -> VerificationReport:
    """Identity split, inversion error against the tail bound, bi-invariance and D~_k cancellation."""
    family = system.family
    w = family.grid.weights
    report = VerificationReport(
        suite="calderon_system",
        config={"M": system.M, "ordering": system.ordering, "tol": tol},
    )
    split = system.T_M + system.R_M - invariant_projector(family.grid)
    report.add("identity_split_defect", float(np.abs(split.action).max()), bound=1e-10)
    report.add("contraction", system.inverse.contraction, bound=1.0)
    report.add("neumann_terms", system.inverse.terms, unit="terms")
    report.add("inversion_error", inversion_error(system), bound=tol + 1e-9)

    operators = [system.T_M, system.R_M, system.inverse.operator, *system.tilde_D.values()]
    report.add("bi_invariance_defect", max(operator_invariance_defect(A) for A in operators), bound=1e-9)

    row = col = 0.0
    for k in family.interior_scales(system.M):
        entries = system.tilde_D[k].entries
        row = max(row, float(np.abs(entries @ w).max()))
        col = max(col, float(np.abs(w @ entries).max()))
    report.add("tilde_row_cancellation", row, bound=1e-8)
    report.add("tilde_col_cancellation", col, bound=1e-8)
    return report


def reproduce(f: GridFunction, system: CalderonSystem, ceiling: float = 0.05) -> VerificationReport:
    """
    Reproduce f through both Calderon formulas and report the relative L^2 residuals.

    Raises:
        NotInvariant: f is not G-invariant.
        ZeroInput: f vanishes identically.
    """
    family = system.family
    f_norm = norm(f, "L2")
    if f_norm == 0.0:
        raise ZeroInput("Relative residual of the zero function is undefined", {})
    if invariance_defect(f) > 1e-9 * max(1.0, norm(f, "Linf")):
        raise NotInvariant("Reproduction needs a G-invariant input", {"defect": invariance_defect(f)})

    report = VerificationReport(
        suite="reproduce",
        config={"M": system.M, "ordering": system.ordering, "ceiling": ceiling},
    )
    # the reproduction corpus is mean-zero; a nonzero mean fails the precondition
    mean = abs(float(family.grid.weights @ f.values)) / norm(f, "L1")
    report.add("input_mean", mean, bound=MEAN_ZERO_TOL, unit="relative")
    if mean > MEAN_ZERO_TOL:
        logger.warning(f"Reproduction input is not mean-zero (relative mean {mean:.3e})")

    pieces = {k: apply(family.D[k], f) for k in family.scales}
    first = sum((apply(system.tilde_D[k], pieces[k]) for k in family.scales), GridFunction.constant(f.grid, 0.0))
    second = sum(
        (apply(family.D[k], apply(system.tilde_tilde_D[k], f)) for k in family.scales),
        GridFunction.constant(f.grid, 0.0),
    )
    interior = family.interior_scales(system.M)
    partial = sum((apply(system.tilde_D[k], pieces[k]) for k in interior), GridFunction.constant(f.grid, 0.0))

    report.add("residual_tilde_D", norm(first - f, "L2") / f_norm, bound=ceiling, unit="relative")
    report.add("residual_tilde_tilde_D", norm(second - f, "L2") / f_norm, bound=ceiling, unit="relative")
    report.add("interior_residual", norm(partial - f, "L2") / f_norm, unit="relative")
    report.add_table("energy", [(k, norm(pieces[k], "L2")) for k in family.scales])
    return report


def rm_contraction_curve(
    family: ScaleFamily,
    M_values: Sequence[int],
    ratio_ceiling: float = 0.8,
    sufficient: float = 0.9,
    ordering: Ordering = "DkM_first",
) -> VerificationReport:
    """||R_M|| against M with a least-squares fit of log2 ||R_M||."""
    report = VerificationReport(
        suite="rm_contraction",
        config={"M_values": list(M_values), "ratio_ceiling": ratio_ceiling, "ordering": ordering},
    )
    curve: list[tuple[int, float]] = []
    for M in sorted(M_values):
        _, R = build_TM(family, M, ordering)
        curve.append((M, operator_l2_norm(R).value))
    report.add_table("rm_norm", curve)

    values = [v for _, v in curve]
    increases = sum(1 for a, b in zip(values, values[1:]) if b >= a)
    report.add("non_decreasing_steps", increases, bound=0)
    report.add("final_norm", values[-1], bound=sufficient, passed=values[-1] < sufficient)

    positive = [(M, v) for M, v in curve if v > 0.0]
    if len(positive) >= 2:
        slope = float(np.polyfit([M for M, _ in positive], np.log2([v for _, v in positive]), 1)[0])
        report.add("decay_slope", slope)
        report.add("per_order_ratio", 2.0**slope, bound=ratio_ceiling)
    enough = [M for M, v in curve if v < sufficient]
    if enough:
        report.add("smallest_sufficient_M", enough[0])
    logger.info(f"R_M contraction curve: {curve}")
    return report
