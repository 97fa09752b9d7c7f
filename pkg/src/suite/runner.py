"""
Suite orchestration: one shared context (group, grid, family, Calderon systems, example
operator) per configuration and one verification function per suite name.
"""
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from functools import cached_property
from pathlib import Path
from typing import Callable

import numpy as np

from src.core.config import get_settings
from src.core.exceptions import BaseAppException, LambdaTooSmall, ValidationError
from src.core.logging_setup import get_logger
from src.core.report import Metric, VerificationReport
from src.harmonic import samples
from src.harmonic.approx_identity import ScaleFamily, build_family, verify_almost_orthogonality, verify_aoi
from src.harmonic.calderon_formula import (
    CalderonSystem,
    build_calderon_system,
    reproduce,
    rm_contraction_curve,
    verify_system,
)
from src.harmonic.cz_decomposition import cz_decompose, maximal_function, verify_cz, weak11_experiment
from src.harmonic.grid_quadrature import Grid, GridFunction, build_grid, identity_operator
from src.harmonic.norms import MoleculeParams, besov_norms, holder_besov_equivalence, molecule_norm
from src.harmonic.reflection_core import (
    ReflectionGroup,
    generate_group,
    load_root_system,
    make_root_system,
    verify_group,
)
from src.harmonic.singular_ops import (
    DiscreteSIO,
    KernelSpec,
    build_discrete_sio,
    build_paraproduct,
    bump_library,
    dk_Tf_decay,
    estimate_kernel_constants,
    linfty_bmo,
    mollifier_curve,
    paraproduct_corpus,
    resolution_stability,
    t1_diagnostics,
    t1_reduction,
    verify_paraproduct,
    wbp_constant,
)
from src.suite.config import SuiteConfig

logger = get_logger("runner")

GROUP_PRESETS = ("A1", "A1xA1", "B2")
CZ_QUANTILES = (0.5, 0.75, 0.9)
HOLDER_ALPHA = 0.5


class SuiteContext:
    """Lazily built objects shared by every suite of one run. Safe for concurrent readers."""

    def __init__(self, config: SuiteConfig):
        self.config = config
        self._lock = threading.Lock()
        self._systems: dict[int, CalderonSystem] = {}

    @cached_property
    def group(self) -> ReflectionGroup:
        source = self.config.group
        if Path(source).is_file():
            rs = load_root_system(source)
        else:
            rs = make_root_system(source, self.config.dim)
        return generate_group(rs, self.config.max_order)

    @cached_property
    def grid(self) -> Grid:
        return build_grid(self.config.box, self.config.n, self.group)

    @cached_property
    def family(self) -> ScaleFamily:
        return build_family(self.grid, k_min=self.config.k_min, k_max=self.config.k_max)

    @cached_property
    def sio(self) -> DiscreteSIO:
        spec = KernelSpec(group=self.group, k_min=self.config.k_min, k_max=self.config.k_max)
        return build_discrete_sio(spec, self.grid)

    def system(self, M: int) -> CalderonSystem:
        with self._lock:
            if M not in self._systems:
                self._systems[M] = build_calderon_system(
                    self.family, M, tol=self.config.tol, max_terms=self.config.max_terms
                )
            return self._systems[M]

    def warm(self) -> None:
        """Build the shared objects up front so that parallel suites only read them."""
        self.family
        self.sio
        self.grid.euclidean_distances


def merge_worst(target: VerificationReport, reports: list[VerificationReport], prefix: str) -> None:
    """Keep, per metric name, a failing instance if there is one, else the largest value."""
    worst: dict[str, Metric] = {}
    for report in reports:
        for metric in report.metrics:
            current = worst.get(metric.name)
            if current is None or (current.passed is not False and (
                metric.passed is False or metric.value > current.value
            )):
                worst[metric.name] = metric
    for name, metric in worst.items():
        target.metrics.append(metric.model_copy(update={"name": f"{prefix}.{name}"}))


def _config_echo(config: SuiteConfig) -> dict:
    return config.model_dump(mode="json", exclude={"out", "csv", "parallel", "timing"})


def suite_group(ctx: SuiteContext) -> VerificationReport:
    report = VerificationReport(suite="group", config=_config_echo(ctx.config))
    report.extend(verify_group(ctx.group, seed=ctx.config.seed))
    for preset in GROUP_PRESETS:
        g = generate_group(make_root_system(preset), ctx.config.max_order)
        report.extend(verify_group(g, seed=ctx.config.seed), prefix=preset)
    return report


def suite_aoi(ctx: SuiteContext) -> VerificationReport:
    cfg = ctx.config
    report = VerificationReport(suite="aoi", config=_config_echo(cfg))
    report.extend(verify_aoi(ctx.family, sample_budget=cfg.sample_budget, seed=cfg.seed))
    report.extend(
        verify_almost_orthogonality(ctx.family, sample_budget=cfg.sample_budget, seed=cfg.seed),
        prefix="orthogonality",
    )
    return report


def suite_reproduce(ctx: SuiteContext) -> VerificationReport:
    cfg = ctx.config
    report = VerificationReport(suite="reproduce", config=_config_echo(cfg))
    report.extend(
        rm_contraction_curve(ctx.family, cfg.m_values, ratio_ceiling=cfg.rm_ratio_ceiling),
        prefix="contraction",
    )
    corpus = samples.mean_zero_corpus(ctx.grid, seed=cfg.seed)
    residuals = []
    for M in cfg.m_values:
        system = ctx.system(M)
        report.extend(verify_system(system, tol=cfg.tol), prefix=f"M{M}")
        runs = [reproduce(f, system, ceiling=cfg.reproduce_ceiling) for f in corpus]
        merge_worst(report, runs, prefix=f"M{M}.reproduce")
        residuals.append((M, max(r.metric("residual_tilde_D").value for r in runs)))
    report.add_table("residual_by_M", residuals)
    values = [v for _, v in residuals]
    report.add("residual_non_monotone_steps", sum(1 for a, b in zip(values, values[1:]) if b > a))
    return report


def weak11_corpus(grid: Grid, seed: int) -> list[GridFunction]:
    """Smooth invariant inputs followed by point masses, the extreme L^1 inputs."""
    return samples.invariant_corpus(grid, seed=seed) + samples.spike_corpus(grid, seed=seed)


def suite_cz(ctx: SuiteContext) -> VerificationReport:
    cfg = ctx.config
    report = VerificationReport(suite="cz", config=_config_echo(cfg))
    corpus = samples.invariant_corpus(ctx.grid, seed=cfg.seed)
    runs = []
    skipped = 0
    for f in corpus:
        mf = maximal_function(f).values
        for q in CZ_QUANTILES:
            try:
                out = cz_decompose(f, float(np.quantile(mf, q)))
            except LambdaTooSmall:
                skipped += 1
                continue
            runs.append(verify_cz(out, f, constant_ceiling=cfg.cz_constant_ceiling))
    merge_worst(report, runs, prefix="decomposition")
    report.add("skipped_levels", skipped, unit="levels")

    weak_corpus = weak11_corpus(ctx.grid, cfg.seed)
    identity = identity_operator(ctx.grid)
    report.extend(weak11_experiment(identity, weak_corpus, ceiling=1.0), prefix="weak11_identity")
    report.extend(
        weak11_experiment(ctx.sio.operator, weak_corpus, ceiling=cfg.weak11_ceiling),
        prefix="weak11_kernel",
    )
    return report


def resolution_ladder(n: int) -> list[int]:
    """Odd grid sizes around n: roughly half, n itself and 2n - 1 (129, 257, 513 for n = 257)."""
    half = (n + 1) // 2
    if half % 2 == 0:
        half += 1
    return sorted({max(3, half), n, 2 * n - 1})


def suite_t1(ctx: SuiteContext) -> VerificationReport:
    cfg = ctx.config
    grid, family, sio = ctx.grid, ctx.family, ctx.sio
    report = VerificationReport(suite="t1", config=_config_echo(cfg))
    report.extend(
        estimate_kernel_constants(sio.spec, grid, sample_budget=cfg.sample_budget, seed=cfg.seed),
        prefix="kernel",
    )
    report.extend(t1_diagnostics(sio, family, bmo_fraction=cfg.bmo_fraction), prefix="diagnostics")
    library = bump_library(grid, sio.epsilon, family.interior_scales(), seed=cfg.seed)
    report.extend(wbp_constant(sio, sio.epsilon, library), prefix="wbp")

    holder = samples.holder_suite(grid, seed=cfg.seed)
    report.extend(
        dk_Tf_decay(sio, holder[0], family, HOLDER_ALPHA, M=min(cfg.m_values), spread_bound=cfg.smoothing_spread),
        prefix="decay",
    )
    R = min(1.0, 0.25 * grid.min_half_width)
    report.extend(linfty_bmo(sio, samples.invariant_corpus(grid, count=5, seed=cfg.seed), R), prefix="linfty")
    report.extend(mollifier_curve(holder[-1]), prefix="mollifier")
    report.extend(
        resolution_stability(sio.spec, cfg.box, resolution_ladder(cfg.n), sio.epsilon,
                             sample_budget=cfg.sample_budget, seed=cfg.seed),
        prefix="resolution",
    )
    return report


def suite_paraproduct(ctx: SuiteContext) -> VerificationReport:
    cfg = ctx.config
    system = ctx.system(max(cfg.m_values))
    report = VerificationReport(suite="paraproduct", config=_config_echo(cfg))
    corpus = samples.mean_zero_corpus(ctx.grid, seed=cfg.seed)

    constant = build_paraproduct(GridFunction.constant(ctx.grid, 1.0), system)
    report.add("constant_symbol_entries", float(np.abs(constant.operator.action).max()), bound=1e-12)
    runs = [verify_paraproduct(build_paraproduct(b, system), ceiling=cfg.reproduce_ceiling) for b in corpus]
    merge_worst(report, runs, prefix="symbol")
    report.extend(paraproduct_corpus(corpus, system, ratio_ceiling=cfg.paraproduct_ratio_ceiling), prefix="corpus")
    report.extend(t1_reduction(ctx.sio, system), prefix="reduction")
    return report


def suite_norms(ctx: SuiteContext) -> VerificationReport:
    cfg = ctx.config
    family = ctx.family
    system = ctx.system(max(cfg.m_values))
    report = VerificationReport(suite="norms", config=_config_echo(cfg))
    holder = samples.holder_suite(ctx.grid, seed=cfg.seed)
    report.extend(
        holder_besov_equivalence(holder, HOLDER_ALPHA, family, ceiling=cfg.equivalence_ceiling),
        prefix="equivalence",
    )
    sup_norm, dual_norm = besov_norms(holder[0], HOLDER_ALPHA, family, system.interior_tilde())
    report.add("besov_sup", sup_norm.value, witness=sup_norm.witness)
    report.add("besov_dual", dual_norm.value)

    interior = np.flatnonzero(family.interior_mask())
    worst_residual = 0.0
    molecule_values = []
    for k, tilde in system.interior_tilde().items():
        y0 = int(interior[np.argmin(np.linalg.norm(ctx.grid.points[interior], axis=1))])
        column = GridFunction(ctx.grid, tilde.entries[:, y0])
        params = MoleculeParams(beta=1.0, gamma=1.0, r=2.0**-k, center=tuple(ctx.grid.points[y0].tolist()))
        result = molecule_norm(column, params)
        molecule_values.append((k, result.value))
        worst_residual = max(worst_residual, result.components["cancellation_residual"])
    report.add_table("tilde_molecule_norm", molecule_values)
    if molecule_values:
        report.add("tilde_molecule_norm_max", max(v for _, v in molecule_values),
                   passed=bool(np.isfinite(max(v for _, v in molecule_values))))
        report.add("tilde_cancellation_residual", worst_residual, bound=1e-8)
    return report


SUITES: dict[str, Callable[[SuiteContext], VerificationReport]] = {
    "group": suite_group,
    "aoi": suite_aoi,
    "reproduce": suite_reproduce,
    "cz": suite_cz,
    "t1": suite_t1,
    "paraproduct": suite_paraproduct,
    "norms": suite_norms,
}
SUITE_NAMES = (*SUITES, "all")


def _run_one(name: str, ctx: SuiteContext) -> VerificationReport:
    try:
        return SUITES[name](ctx)
    except BaseAppException as e:
        e.payload.setdefault("suite", name)
        logger.error(f"Suite '{name}' failed: {e.message}")
        raise


def run_suite(name: str, config: SuiteConfig) -> VerificationReport:
    """
    Run one suite, or every suite for "all", on a shared context.

    Raises:
        ValidationError: unknown suite name.
        BaseAppException: any module error, with payload["suite"] naming the suite.
    """
    if name not in SUITE_NAMES:
        raise ValidationError(f"Unknown suite '{name}'", {"suites": list(SUITE_NAMES)})
    start = time.perf_counter()
    ctx = SuiteContext(config)
    if name != "all":
        report = _run_one(name, ctx)
    else:
        report = VerificationReport(suite="all", config=_config_echo(config))
        if config.parallel:
            ctx.warm()
            with ThreadPoolExecutor(max_workers=get_settings().MAX_WORKERS) as pool:
                parts = list(pool.map(lambda n: _run_one(n, ctx), SUITES))
        else:
            parts = [_run_one(n, ctx) for n in SUITES]
        for suite_name, part in zip(SUITES, parts):
            report.extend(part, prefix=suite_name)
    report.wall_time = time.perf_counter() - start
    status = "passed" if report.all_passed else f"{len(report.failed)} metrics failed"
    logger.info(f"Suite '{name}' finished in {report.wall_time:.2f}s: {status}")
    return report
