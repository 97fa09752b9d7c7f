import numpy as np
import pytest

from src.core.exceptions import ScaleOutOfRange, ValidationError
from src.harmonic.approx_identity import (
    build_DkM,
    build_family,
    check_scale,
    default_bump,
    orbit_ball_measure,
    quintic_bump,
    verify_almost_orthogonality,
    verify_aoi,
)
from src.harmonic.grid_quadrature import GridFunction, apply, invariant_projector, norm
from src.harmonic.samples import symmetric_bump

pytestmark = pytest.mark.unit


@pytest.mark.parametrize("profile", [default_bump(), quintic_bump()])
def test_bump_profile_shape(profile):
    t = np.array([0.0, 0.5, 1.0, 1.5, 2.0, 3.0, -1.5])
    values = profile(t)
    assert np.allclose(values[:3], 1.0)
    assert 0.0 < values[3] < 1.0
    assert values[4] == 0.0 and values[5] == 0.0
    assert values[6] == values[3]


def test_check_scale(a1_grid):
    assert check_scale(a1_grid, 0) is True
    assert check_scale(a1_grid, 4) is False
    with pytest.raises(ScaleOutOfRange):
        check_scale(a1_grid, 5)
    with pytest.raises(ScaleOutOfRange):
        check_scale(a1_grid, -2)


def test_family_range_validation(a1_grid):
    with pytest.raises(ValidationError):
        build_family(a1_grid, k_min=3, k_max=1)
    with pytest.raises(ScaleOutOfRange):
        build_family(a1_grid, k_min=0, k_max=6)


def test_row_sums_and_symmetry(a1_family):
    w = a1_family.grid.weights
    for k in a1_family.scales:
        S = a1_family.S[k].entries
        assert np.abs(S @ w - 1.0).max() < 1e-12
        assert np.abs(S - S.T).max() < 1e-12
        if k > a1_family.k_min:
            assert np.abs(a1_family.D[k].entries @ w).max() < 1e-12


def test_telescoping_sum(a1_family):
    total = sum(a1_family.D[k].entries for k in a1_family.scales)
    assert np.allclose(total, a1_family.S[a1_family.k_max].entries, atol=1e-12)


def test_finest_scale_is_the_invariant_projector(a1_family):
    P = invariant_projector(a1_family.grid)
    assert np.allclose(a1_family.S[4].action, P.action, atol=1e-12)


def test_band_operators_telescope(a1_family):
    for M in (0, 1, 2):
        band = build_DkM(a1_family, M)
        for k in a1_family.scales:
            expected = sum(
                a1_family.D[j].entries for j in range(k - M, k + M + 1) if j in a1_family.scales
            )
            assert np.allclose(band[k].entries, expected, atol=1e-12)


def test_negative_band_order(a1_family):
    with pytest.raises(ValidationError):
        build_DkM(a1_family, -1)


def test_interior_scales(a1_family):
    assert a1_family.interior_scales() == [1, 2, 3, 4]
    assert a1_family.interior_scales(2) == [3, 4]
    assert a1_family.margin == 2.0


def test_tiny_orbit_balls_hold_whole_orbits(a1_grid):
    measure = orbit_ball_measure(a1_grid, 0.5 * a1_grid.min_spacing)
    sizes = np.bincount(a1_grid.orbit_labels)[a1_grid.orbit_labels]
    assert np.allclose(measure, sizes * a1_grid.weights)


def test_constants_are_reproduced(a1_family):
    one = GridFunction.constant(a1_family.grid)
    for k in a1_family.scales:
        assert np.allclose(apply(a1_family.S[k], one).values, 1.0, atol=1e-12)


def test_verify_aoi_structural_metrics(a1_family):
    report = verify_aoi(a1_family, sample_budget=2000, seed=3)
    for name in (
        "row_sum_deviation",
        "col_sum_deviation",
        "symmetry_defect",
        "support_violations",
        "kernel_invariance_defect",
        "output_invariance_defect",
    ):
        assert report.metric(name).passed, name
    assert report.metric("scales_below_resolution").value == 4
    assert len(report.tables["support_radius"]) == 5


def test_verify_aoi_on_b2(b2_grid):
    family = build_family(b2_grid, k_min=0, k_max=2)
    report = verify_aoi(family, sample_budget=500)
    assert report.metric("row_sum_deviation").passed
    assert report.metric("support_violations").value == 0


def test_almost_orthogonality_report(a1_family):
    report = verify_almost_orthogonality(a1_family, sample_budget=2000)
    assert report.metric("interior_row_sum_deviation").passed
    assert len(report.tables["pair_norms"]) == 15
    assert "decay_slope" in {m.name for m in report.metrics}


def test_coarse_scale_decay_is_an_l2_ratio(a1_family, a1_grid):
    f = symmetric_bump(a1_grid, center=0.5, width=1.0)
    report = verify_aoi(a1_family, f=f, sample_budget=500)
    expected = norm(apply(a1_family.S[0], f), "L2") / norm(f, "L2")
    assert report.metric("coarse_scale_decay").value == pytest.approx(expected, rel=1e-12)


class TestFineGrid:
    def test_resolved_interior_scales(self, a1_fine_family):
        resolved = [k for k in a1_fine_family.interior_scales() if check_scale(a1_fine_family.grid, k)]
        assert resolved == [1, 2]

    def test_structural_metrics(self, a1_fine_family):
        report = verify_aoi(a1_fine_family, sample_budget=2000, seed=3)
        for name in ("row_sum_deviation", "symmetry_defect", "support_violations",
                     "kernel_invariance_defect", "output_invariance_defect"):
            assert report.metric(name).passed, name
        assert report.metric("scales_below_resolution").value == 2

    def test_identity_gap_below_the_identity_scale(self, a1_fine_family, a1_fine_grid):
        f = symmetric_bump(a1_fine_grid, center=0.5, width=1.0)
        gap = norm(apply(a1_fine_family.S[4], f) - f, "L2") / norm(f, "L2")
        assert 0.0 < gap < 0.5
        report = verify_aoi(a1_fine_family, f=f, sample_budget=500)
        assert report.metric("identity_gap_at_k_max").value == pytest.approx(gap, rel=1e-12)

    def test_almost_orthogonality(self, a1_fine_family):
        report = verify_almost_orthogonality(a1_fine_family, sample_budget=2000)
        assert report.metric("submultiplicativity_failures").passed
        assert report.metric("interior_row_sum_deviation").passed
        assert report.metric("decay_slope").value < 0.0
