from dataclasses import replace

import numpy as np
import pytest

from src.core.exceptions import (
    NoConvergence,
    NotContractive,
    NotInvariant,
    RangeTooNarrow,
    ValidationError,
    ZeroInput,
)
from src.harmonic.approx_identity import build_family
from src.harmonic.calderon_formula import (
    _truncation,
    build_tilde_families,
    build_TM,
    check_order,
    invert_TM,
    reproduce,
    rm_contraction_curve,
    verify_system,
)
from src.harmonic.grid_quadrature import GridFunction, apply, compose, invariant_projector, zero_operator
from src.harmonic.samples import mean_zero_corpus

pytestmark = pytest.mark.unit


def _one(grid):
    return GridFunction.constant(grid, 1.0)


def test_order_needs_enough_scales(a1_family):
    check_order(a1_family, 2)
    with pytest.raises(RangeTooNarrow) as excinfo:
        check_order(a1_family, 3)
    assert excinfo.value.payload["M"] == 3


@pytest.mark.parametrize("M", [0, 1, 2])
def test_identity_split(a1_family, M):
    T, R = build_TM(a1_family, M)
    P = invariant_projector(a1_family.grid)
    assert np.abs((T + R - P).action).max() < 1e-12
    assert np.allclose(apply(T, _one(a1_family.grid)).values, 1.0, atol=1e-10)
    assert np.abs(apply(R, _one(a1_family.grid)).values).max() < 1e-10
    assert np.allclose(T.entries, T.entries.T, atol=1e-10)


def test_orderings_agree(a1_family):
    first, _ = build_TM(a1_family, 1, "DkM_first")
    second, _ = build_TM(a1_family, 1, "Dk_first")
    assert np.allclose(first.action, second.action, atol=1e-10)


def test_remainder_is_the_off_band_sum(a1_family):
    # S_{k_max} is the invariant projector, so R_M collects the pairs with |a - b| > M
    M = 1
    _, R = build_TM(a1_family, M)
    expected = sum(
        compose(a1_family.D[a], a1_family.D[b]).action
        for a in a1_family.scales
        for b in a1_family.scales
        if abs(a - b) > M
    )
    assert np.allclose(R.action, expected, atol=1e-10)


@pytest.mark.parametrize("r, tol, expected", [(0.5, 1e-6, 20), (0.0, 1e-6, 0), (0.1, 1e-3, 3)])
def test_truncation(r, tol, expected):
    m = _truncation(r, tol)
    assert m == expected
    if r > 0:
        assert r ** (m + 1) / (1 - r) < tol
        assert m == 0 or r**m / (1 - r) >= tol


def test_neumann_inverse_of_a_half_contraction(a1_grid):
    P = invariant_projector(a1_grid)
    R = P * 0.5
    T = P - R
    inverse = invert_TM(T, R, tol=1e-6)
    assert inverse.truncation == 20
    assert inverse.terms == 21
    assert inverse.contraction == pytest.approx(0.5, rel=1e-9)
    assert inverse.tail_bound < 1e-6
    assert np.abs((compose(T, inverse.operator) - P).action).max() < 1e-6


def test_neumann_inverse_without_remainder(a1_grid):
    P = invariant_projector(a1_grid)
    inverse = invert_TM(P, zero_operator(a1_grid))
    assert inverse.terms == 1
    assert np.array_equal(inverse.operator.entries, P.entries)


def test_neumann_inverse_needs_contraction(a1_grid):
    P = invariant_projector(a1_grid)
    with pytest.raises(NotContractive) as excinfo:
        invert_TM(P * -0.5, P * 1.5)
    assert excinfo.value.payload["norm"] == pytest.approx(1.5, rel=1e-9)


def test_neumann_term_cap(a1_grid):
    P = invariant_projector(a1_grid)
    with pytest.raises(NoConvergence) as excinfo:
        invert_TM(P * 0.5, P * 0.5, max_terms=5)
    assert excinfo.value.payload["terms"] == 21


def test_system_checks(a1_system):
    report = verify_system(a1_system)
    for name in ("identity_split_defect", "contraction", "bi_invariance_defect",
                 "tilde_row_cancellation", "tilde_col_cancellation"):
        assert report.metric(name).passed, name
    assert report.metric("inversion_error").value < 1e-5


def test_tilde_families_cover_every_scale(a1_system):
    scales = list(a1_system.family.scales)
    assert sorted(a1_system.tilde_D) == scales
    assert sorted(a1_system.tilde_tilde_D) == scales
    assert sorted(a1_system.interior_tilde()) == [3, 4]


def test_tilde_families_need_the_inverse(a1_system):
    with pytest.raises(ValidationError):
        build_tilde_families(replace(a1_system, inverse=None))


def test_inverse_fixes_constants(a1_system):
    one = _one(a1_system.family.grid)
    assert np.allclose(apply(a1_system.inverse.operator, one).values, 1.0, atol=1e-10)


@pytest.mark.parametrize("sample", ["a1_bump", "a1_wave"])
def test_reproduction(a1_system, request, sample):
    f = request.getfixturevalue(sample)
    report = reproduce(f, a1_system)
    assert report.metric("residual_tilde_D").value < 1e-4
    assert report.metric("residual_tilde_tilde_D").value < 1e-4
    assert len(report.tables["energy"]) == 5


def test_reproduction_is_linear(a1_system, a1_wave):
    once = reproduce(a1_wave, a1_system).metric("residual_tilde_D").value
    thrice = reproduce(a1_wave * 3.0, a1_system).metric("residual_tilde_D").value
    assert thrice == pytest.approx(once, rel=1e-6, abs=1e-14)


def test_mean_zero_input_reports_its_mean(a1_system, a1_wave):
    assert reproduce(a1_wave, a1_system).metric("input_mean").value < 1e-12


def test_reproduction_input_checks(a1_system):
    grid = a1_system.family.grid
    with pytest.raises(ZeroInput):
        reproduce(GridFunction.constant(grid, 0.0), a1_system)
    with pytest.raises(NotInvariant):
        reproduce(GridFunction.from_callable(grid, lambda p: p[:, 0]), a1_system)


def test_system_on_b2(b2_grid):
    family = build_family(b2_grid, k_min=0, k_max=3)
    T, R = build_TM(family, 1)
    assert np.abs(apply(R, _one(b2_grid)).values).max() < 1e-10
    assert np.abs((T + R - invariant_projector(b2_grid)).action).max() < 1e-12


def test_contraction_curve_table(a1_family):
    report = rm_contraction_curve(a1_family, [2, 1])
    table = report.tables["rm_norm"]
    assert [row[0] for row in table] == [1.0, 2.0]
    assert all(row[1] >= 0.0 for row in table)
    assert "non_decreasing_steps" in {m.name for m in report.metrics}


def test_contraction_curve_matches_system(a1_family, a1_system):
    report = rm_contraction_curve(a1_family, [2])
    assert report.metric("final_norm").value == pytest.approx(a1_system.inverse.contraction, rel=1e-6)


def test_input_with_a_mean_fails_the_precondition(a1_system, a1_bump, a1_wave):
    assert reproduce(a1_bump, a1_system).metric("input_mean").passed is False
    assert reproduce(a1_wave, a1_system).metric("input_mean").passed is True


def test_final_norm_is_gated_on_the_sufficient_level(a1_family):
    report = rm_contraction_curve(a1_family, [1, 2])
    final = report.metric("final_norm")
    assert final.bound == 0.9
    assert final.passed == (final.value < 0.9)
    strict = rm_contraction_curve(a1_family, [1, 2], sufficient=final.value)
    assert strict.metric("final_norm").passed is False


def test_system_on_the_fine_grid(a1_fine_system):
    report = verify_system(a1_fine_system)
    for name in ("identity_split_defect", "contraction", "bi_invariance_defect",
                 "tilde_row_cancellation", "tilde_col_cancellation"):
        assert report.metric(name).passed, name
    assert report.metric("inversion_error").value < 1e-5
    assert sorted(a1_fine_system.interior_tilde()) == [4, 5, 6]


def test_reproduction_on_the_fine_grid(a1_fine_system):
    for f in mean_zero_corpus(a1_fine_system.family.grid, count=3, seed=7):
        report = reproduce(f, a1_fine_system)
        assert report.metric("input_mean").passed
        assert report.metric("residual_tilde_D").value < 1e-4
        assert report.metric("residual_tilde_tilde_D").value < 1e-4
        assert len(report.tables["energy"]) == 7
