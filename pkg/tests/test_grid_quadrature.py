import numpy as np
import pytest

from src.core.exceptions import GridMismatch, IncompatibleGroup, NoConvergence, ValidationError
from src.harmonic.grid_quadrature import (
    GridFunction,
    OperatorMatrix,
    adjoint,
    apply,
    build_grid,
    coarsest_scale,
    compose,
    dump_grid_function,
    dump_operator,
    grid_identity_scale,
    identity_operator,
    inner,
    invariance_defect,
    invariant_projector,
    load_grid_function,
    load_operator,
    norm,
    operator_invariance_defect,
    operator_l2_norm,
    symmetrize,
)

pytestmark = pytest.mark.unit


def _random_operator(grid, rng):
    return OperatorMatrix(grid, rng.standard_normal((grid.size, grid.size)))


def test_grid_geometry(a1_grid):
    h = 8.0 / 33
    assert a1_grid.size == 33
    assert a1_grid.min_spacing == pytest.approx(h)
    assert a1_grid.points[0, 0] == pytest.approx(-4.0 + 0.5 * h)
    assert np.allclose(np.sort(a1_grid.points[:, 0]), -np.sort(a1_grid.points[:, 0])[::-1])
    assert a1_grid.weights.sum() == pytest.approx(a1_grid.volume)
    assert a1_grid.origin_index() == 16


def test_scale_window(a1_grid):
    assert grid_identity_scale(a1_grid) == 4
    assert coarsest_scale(a1_grid) == -1


def test_even_point_count_rejected(a1_group):
    with pytest.raises(ValidationError):
        build_grid(4.0, 32, a1_group)


def test_group_must_preserve_the_box(b2_group):
    # the coordinate swap of B2 leaves a non-square box
    with pytest.raises(IncompatibleGroup):
        build_grid([2.0, 1.0], 9, b2_group)


def test_action_table_is_a_permutation_per_element(b2_grid):
    for perm in b2_grid.action_table:
        assert sorted(perm) == list(range(b2_grid.size))
    assert b2_grid.action_table.shape == (8, 81)


def test_orbit_labels(b2_grid):
    labels = b2_grid.orbit_labels
    # orbits of B2 on a 9 x 9 centred grid: origin, axes, diagonals, generic points
    assert labels.max() + 1 == 15
    for perm in b2_grid.action_table:
        assert np.array_equal(labels[perm], labels)


def test_grid_function_size_check(a1_grid):
    with pytest.raises(GridMismatch):
        GridFunction(a1_grid, np.zeros(5))


def test_grid_function_values_are_frozen(a1_grid):
    source = np.ones(a1_grid.size)
    f = GridFunction(a1_grid, source)
    source[0] = 7.0
    assert f.values[0] == 1.0
    with pytest.raises(ValueError):
        f.values[0] = 3.0


def test_norms_of_constants(a1_grid):
    one = GridFunction.constant(a1_grid)
    assert norm(one, "L1") == pytest.approx(8.0)
    assert norm(one, "L2") == pytest.approx(np.sqrt(8.0))
    assert norm(one, "Linf") == 1.0
    assert norm(one * 3.0, "weakL1", lam=2.0) == pytest.approx(8.0)
    assert inner(one, one) == pytest.approx(8.0)


def test_weak_norm_needs_level(a1_grid):
    with pytest.raises(ValidationError):
        norm(GridFunction.constant(a1_grid), "weakL1")


def test_symmetrize_is_exactly_invariant(b2_grid, rng):
    f = GridFunction(b2_grid, rng.standard_normal(b2_grid.size))
    assert invariance_defect(f) > 0
    g = symmetrize(f)
    assert invariance_defect(g) == 0.0
    assert inner(g, GridFunction.constant(b2_grid)) == pytest.approx(inner(f, GridFunction.constant(b2_grid)))


def test_projector_matches_symmetrize(b2_grid, rng):
    f = GridFunction(b2_grid, rng.standard_normal(b2_grid.size))
    P = invariant_projector(b2_grid)
    assert np.allclose(apply(P, f).values, symmetrize(f).values, atol=1e-12)
    assert np.allclose(compose(P, P).action, P.action, atol=1e-12)
    assert operator_invariance_defect(P) < 1e-9


def test_trivial_group_projector_is_identity(trivial_grid):
    assert np.allclose(invariant_projector(trivial_grid).action, np.eye(trivial_grid.size))


def test_identity_is_neutral_for_compose(a1_grid, rng):
    A = _random_operator(a1_grid, rng)
    identity = identity_operator(a1_grid)
    assert np.allclose(compose(identity, A).entries, A.entries)
    assert np.allclose(compose(A, identity).entries, A.entries)


def test_adjoint_in_weighted_inner_product(a1_grid, rng):
    A = _random_operator(a1_grid, rng)
    f = GridFunction(a1_grid, rng.standard_normal(a1_grid.size))
    g = GridFunction(a1_grid, rng.standard_normal(a1_grid.size))
    assert inner(apply(A, f), g) == pytest.approx(inner(f, apply(adjoint(A), g)), rel=1e-10)


def test_compose_matches_repeated_apply(a1_grid, rng):
    A, B = _random_operator(a1_grid, rng), _random_operator(a1_grid, rng)
    f = GridFunction(a1_grid, rng.standard_normal(a1_grid.size))
    assert np.allclose(apply(compose(A, B), f).values, apply(A, apply(B, f)).values)


def test_operator_norms_of_projections(b2_grid):
    assert operator_l2_norm(identity_operator(b2_grid)).value == pytest.approx(1.0, rel=1e-9)
    P = invariant_projector(b2_grid)
    assert operator_l2_norm(P * 2.0).value == pytest.approx(2.0, rel=1e-9)


def test_operator_norm_against_dense_svd(a1_grid, rng):
    A = _random_operator(a1_grid, rng)
    sqrt_w = np.sqrt(a1_grid.weights)
    expected = np.linalg.norm(sqrt_w[:, None] * A.entries * sqrt_w[None, :], 2)
    estimate = operator_l2_norm(A, tol=1e-12, max_iter=20000)
    assert estimate.value == pytest.approx(expected, rel=1e-5)


def test_strict_power_iteration_raises(a1_grid, rng):
    A = _random_operator(a1_grid, rng)
    with pytest.raises(NoConvergence) as excinfo:
        operator_l2_norm(A, max_iter=1, strict=True)
    assert excinfo.value.payload["max_iter"] == 1
    assert not operator_l2_norm(A, max_iter=1).converged


def test_operators_on_different_grids(a1_grid, trivial_grid):
    with pytest.raises(GridMismatch):
        identity_operator(a1_grid) + identity_operator(trivial_grid)


def test_grid_function_file_round_trip(tmp_path, b2_grid, rng):
    f = GridFunction(b2_grid, rng.standard_normal(b2_grid.size))
    path = tmp_path / "f.csv"
    dump_grid_function(f, path)
    assert np.array_equal(load_grid_function(b2_grid, path).values, f.values)


def test_grid_function_file_on_wrong_grid(tmp_path, a1_grid, trivial_grid):
    path = tmp_path / "f.csv"
    dump_grid_function(GridFunction.constant(trivial_grid), path)
    shifted = build_grid(2.0, 33, trivial_grid.group)
    with pytest.raises(GridMismatch):
        load_grid_function(shifted, path)


def test_operator_file_round_trip(tmp_path, a1_grid, rng):
    A = _random_operator(a1_grid, rng)
    path = tmp_path / "a.bin"
    dump_operator(A, path)
    assert path.stat().st_size == 16 + 8 * 33 * 33
    assert np.array_equal(load_operator(a1_grid, path).entries, A.entries)


def test_operator_file_version_check(tmp_path, a1_grid):
    path = tmp_path / "a.bin"
    header = np.array([33, 33, 2, 0], dtype="<u4").tobytes()
    path.write_bytes(header + np.zeros(33 * 33).tobytes())
    with pytest.raises(ValidationError):
        load_operator(a1_grid, path)
