import numpy as np
import pandas as pd
import pytest

from src.core.exceptions import LambdaTooSmall, NotInvariant, ValidationError
from src.harmonic.cz_decomposition import (
    ball_radius_index,
    cz_decompose,
    dump_cubes,
    maximal_function,
    verify_cz,
    weak11_experiment,
    whitney,
    whitney_geometry_violations,
)
from src.harmonic.grid_quadrature import GridFunction, build_grid, identity_operator
from src.harmonic.reflection_core import generate_group, make_root_system
from src.harmonic.samples import invariant_corpus, spike_corpus, symmetric_bump

pytestmark = pytest.mark.unit


def _brute_maximal(f):
    grid = f.grid
    x = grid.points[:, 0]
    h = grid.min_spacing
    absf = np.abs(f.values)
    result = np.zeros(grid.size)
    for c in x:
        for m in range(grid.size + 1):
            ball = np.abs(x - c) <= m * h + 1e-12
            mean = grid.weights[ball] @ absf[ball] / grid.weights[ball].sum()
            result[ball] = np.maximum(result[ball], mean)
    return result


def _level_between_values(mf, quantile):
    # a level strictly between two distinct values of Mf
    values = np.unique(np.round(mf, 10))
    at = min(int(quantile * values.size), values.size - 2)
    return 0.5 * (values[at] + values[at + 1])


def test_ball_radius_index():
    d = np.array([0.0, 0.5, 1.0, 1.0000000001, 1.2])
    assert ball_radius_index(d, 0.5).tolist() == [0, 1, 2, 2, 3]


def test_maximal_function_dominates_the_function(a1_bump):
    mf = maximal_function(a1_bump)
    assert np.all(mf.values >= np.abs(a1_bump.values) - 1e-12)


def test_maximal_function_against_brute_force(tiny_grid, rng):
    f = GridFunction(tiny_grid, rng.standard_normal(tiny_grid.size))
    assert np.allclose(maximal_function(f).values, _brute_maximal(f), rtol=1e-12, atol=1e-14)


def test_maximal_function_of_constant(b2_grid):
    mf = maximal_function(GridFunction.constant(b2_grid, -2.0))
    assert np.allclose(mf.values, 2.0)


def test_whitney_of_empty_set(a1_grid):
    cover = whitney(np.zeros(a1_grid.size, dtype=bool), a1_grid)
    assert len(cover) == 0
    assert cover.slivers.size == 0


def test_whitney_needs_a_cubic_box():
    grid = build_grid([2.0, 1.0], 9, generate_group(make_root_system("TRIVIAL", 2)))
    with pytest.raises(ValidationError):
        whitney(np.ones(grid.size, dtype=bool), grid)


def test_whitney_cubes_are_disjoint_and_inside(b2_group):
    grid = build_grid(2.0, 17, b2_group)
    E = np.linalg.norm(grid.points, axis=1) < 1.5
    cover = whitney(E, grid)
    assert len(cover) > 0
    covered = np.concatenate([cube.indices for cube in cover.cubes])
    assert covered.size == np.unique(covered).size
    assert E[covered].all()
    assert whitney_geometry_violations(cover, E, grid) == 0
    # every point of E is either covered or a sliver
    assert np.array_equal(np.sort(np.concatenate([covered, cover.slivers])), np.flatnonzero(E))


@pytest.mark.parametrize("quantile", [0.5, 0.8])
def test_cz_decomposition_properties(a1_bump, quantile):
    lam = _level_between_values(maximal_function(a1_bump).values, quantile)
    out = cz_decompose(a1_bump, lam)
    report = verify_cz(out, a1_bump)
    for name in (
        "reconstruction_error",
        "off_level_set_excess",
        "bad_mean_residual",
        "good_invariance_defect",
        "bad_support_violations",
        "whitney_geometry_violations",
    ):
        assert report.metric(name).passed, name
    assert report.metric("cube_count").value == len(out.bad)


def test_cz_on_b2(b2_grid):
    f = symmetric_bump(b2_grid, center=[0.5, 0.3], width=0.8)
    lam = _level_between_values(maximal_function(f).values, 0.6)
    out = cz_decompose(f, lam)
    report = verify_cz(out, f)
    assert report.metric("reconstruction_error").passed
    assert report.metric("off_level_set_excess").passed
    assert report.metric("bad_mean_residual").passed
    assert report.metric("good_invariance_defect").passed


def test_cz_level_checks(a1_bump):
    with pytest.raises(ValidationError):
        cz_decompose(a1_bump, 0.0)
    with pytest.raises(LambdaTooSmall):
        cz_decompose(a1_bump, 1e-12)
    with pytest.raises(NotInvariant):
        cz_decompose(GridFunction.from_callable(a1_bump.grid, lambda p: p[:, 0] + 5.0), 1.0)


def test_cz_above_the_maximum_has_no_bad_parts(a1_bump):
    out = cz_decompose(a1_bump, 2.0 * maximal_function(a1_bump).values.max())
    assert out.bad == []
    assert np.array_equal(out.good.values, a1_bump.values)


def test_weak_type_of_the_identity(a1_grid):
    corpus = invariant_corpus(a1_grid, count=5) + spike_corpus(a1_grid, count=3)
    report = weak11_experiment(identity_operator(a1_grid), corpus, ceiling=1.0)
    assert report.metric("max_ratio").value <= 1.0 + 1e-12
    assert report.metric("growth_in_lambda").value == 0.0
    assert len(report.tables["ratio_by_factor"]) == 9


def test_dump_cubes(tmp_path, a1_bump):
    lam = _level_between_values(maximal_function(a1_bump).values, 0.5)
    out = cz_decompose(a1_bump, lam)
    path = tmp_path / "cubes.csv"
    dump_cubes(out, path)
    if out.cover.cubes:
        frame = pd.read_csv(path)
        assert len(frame) == len(out.cover.cubes)
        assert {"level", "side", "corner1", "center1"} <= set(frame.columns)
