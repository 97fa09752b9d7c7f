"""
Acceptance checks on the pinned A1 configuration: box [-8, 8], 257 points, scales 0..6,
M in {1, 2, 3}, seed 42. Every operator is a dense 257 x 257 matrix, so the module is slow.
"""
import numpy as np
import pytest

from src.harmonic import samples
from src.harmonic.approx_identity import verify_almost_orthogonality
from src.harmonic.calderon_formula import reproduce, rm_contraction_curve, verify_system
from src.harmonic.grid_quadrature import GridFunction
from src.harmonic.norms import holder_besov_equivalence
from src.harmonic.singular_ops import build_paraproduct, dk_Tf_decay, paraproduct_corpus, verify_paraproduct
from src.suite.config import load_suite_config
from src.suite.runner import HOLDER_ALPHA, SuiteContext

pytestmark = [pytest.mark.slow, pytest.mark.integration]


@pytest.fixture(scope="module")
def reference():
    return SuiteContext(load_suite_config())


@pytest.fixture(scope="module")
def corpus(reference):
    return samples.mean_zero_corpus(reference.grid, seed=reference.config.seed)


def test_reference_configuration(reference):
    cfg = reference.config
    assert (cfg.group, cfg.n, cfg.box) == ("A1", 257, 8.0)
    assert (cfg.k_min, cfg.k_max, cfg.m_values, cfg.seed) == (0, 6, [1, 2, 3], 42)


def test_almost_orthogonality_decays(reference):
    cfg = reference.config
    report = verify_almost_orthogonality(reference.family, sample_budget=cfg.sample_budget, seed=cfg.seed)
    assert report.metric("decay_slope").value <= -0.5


class TestCalderon:
    def test_remainder_contracts_with_M(self, reference):
        report = rm_contraction_curve(reference.family, reference.config.m_values)
        norms = [row[1] for row in report.tables["rm_norm"]]
        assert all(b < a for a, b in zip(norms, norms[1:]))
        assert norms[-1] < 0.9
        assert report.metric("final_norm").passed

    @pytest.mark.parametrize("M", [1, 2, 3])
    def test_system(self, reference, M):
        report = verify_system(reference.system(M), tol=reference.config.tol)
        assert report.metric("inversion_error").value <= 1e-5
        assert report.metric("tilde_row_cancellation").value <= 1e-8
        assert report.metric("tilde_col_cancellation").value <= 1e-8

    def test_reproduction_at_M3(self, reference, corpus):
        system = reference.system(3)
        for f in corpus:
            report = reproduce(f, system)
            assert report.metric("input_mean").passed
            assert report.metric("residual_tilde_D").value <= 0.05
            assert report.metric("residual_tilde_tilde_D").value <= 0.05


class TestParaproduct:
    def test_constant_symbol_vanishes(self, reference):
        ps = build_paraproduct(GridFunction.constant(reference.grid, 1.0), reference.system(3))
        assert np.abs(ps.operator.action).max() <= 1e-12

    def test_symbols(self, reference, corpus):
        system = reference.system(3)
        for b in corpus:
            report = verify_paraproduct(build_paraproduct(b, system))
            assert report.metric("pi_star_one").value <= 1e-8
            assert report.metric("pi_one_residual").value <= 0.05

    def test_ratio_spread(self, reference, corpus):
        report = paraproduct_corpus(corpus, reference.system(3), ratio_ceiling=10.0)
        assert report.metric("ratio_spread").value <= 10.0


class TestNorms:
    def test_holder_besov_equivalence(self, reference):
        holder = samples.holder_suite(reference.grid, seed=reference.config.seed)
        report = holder_besov_equivalence(holder, HOLDER_ALPHA, reference.family, ceiling=10.0)
        assert report.metric("ratio_min").value >= 0.1
        assert report.metric("ratio_max").value <= 10.0

    def test_smoothing_ratios(self, reference):
        holder = samples.holder_suite(reference.grid, seed=reference.config.seed)
        report = dk_Tf_decay(reference.sio, holder[0], reference.family, HOLDER_ALPHA, M=1, spread_bound=4.0)
        spreads = [m for m in report.metrics if m.name.endswith("_spread")]
        assert spreads
        for metric in spreads:
            assert metric.value <= 4.0, metric.name
