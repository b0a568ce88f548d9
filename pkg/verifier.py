# ─────────────────────────────────────────────────────────────
# verifier.py
# Local Tb Verification Harness
#
# Staged verification pipeline. For one cube Q⁰ it runs:
#   1. kernel       CZ estimates, adjoint identity
#   2. systems      accretive (p,u) system(s) and their constants
#   3. decompose    CZ decomposition of every b_Q
#   4. preparatory  Cotlar domination, off-diagonal estimates, T_# testing
#   5. stopping     stopping forest, Φ, the sparse system for T_Φ
#   6. suppress     suppressed testing, swept over the power m
#   7. martingale   adapted martingale identities, LP and Carleson ratios
#   8. wbp          weak boundedness, every applicable case
#   9. baby_tb      baby Tb bound for T_Φ
#  10. bilinear     pairing decomposition, coefficient kernel decay
#  11. final        b_{Q⁰} = 1_{Φ=0}/|{Φ=0}|, bounded and indicator testing
#
# Every stage is run at depth N and N+1 (two worker threads) and
# each measured constant becomes one record of the report.
# A structural error stops the depth at that stage; the error
# carries the stage name.
#
# Performance notes:
#   - Operators cache their weight matrix (see operators.py), so
#     stages share one matrix per operator and depth.
#   - Per-stage timing via time.perf_counter(), returned in the
#     envelope only; reports stay bit-identical.
# ─────────────────────────────────────────────────────────────

import logging
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))
from config import MAX_WORKERS, PERF_LOGGING_ENABLED, RESUM_TOL
from src.accretive import (
    AccretiveSystem,
    global_testing_check,
    make_indicator_system,
    make_rough_system,
    save_system,
    validate,
)
from src.bilinear import (
    baby_tb_bound,
    coefficient_kernel_norms,
    decompose_pairing,
    save_parts_csv,
    telescoping_check,
    wbp_check,
)
from src.dyadic import DyadicCube, ExponentConfig, GridFunction, hardy_check, inner, iter_cubes
from src.errors import ERROR_CODES, ConfigError, HarnessError
from src.kernels import make_kernel, suppressed_size_check, verify_cz_estimates
from src.martingale import (
    AdaptedMartingale,
    carleson_embedding_check,
    decompose,
    littlewood_paley_ratios,
    paraproduct_carleson_norms,
)
from src.operators import (
    DiscreteOperator,
    apply,
    cotlar_check,
    suppression_domination_check,
    tsharp_weak_testing,
)
from src.reports import FAIL, PASS, Measurement, VerificationReport, combine
from src.run_config import STAGES
from src.stopping import (
    StoppingParameters,
    cz_decompose,
    error_envelope_norm,
    iterate_forest,
    offdiag_verify,
    save_forest,
    suppressed_testfn_verify,
)

logger = logging.getLogger(__name__)


# ── Stage graph ───────────────────────────────────────────────
# stage -> stages whose artifacts it consumes
DEPENDS = {
    "kernel": (),
    "systems": ("kernel",),
    "decompose": ("systems",),
    "preparatory": ("systems",),
    "stopping": ("systems",),
    "suppress": ("stopping",),
    "martingale": ("stopping",),
    "wbp": ("stopping",),
    "baby_tb": ("wbp",),
    "bilinear": ("stopping",),
    "final": ("stopping",),
}

CHEBYSHEV_LAMBDAS = (10.0, 100.0, 1000.0)
HARDY_MAX_CELLS = 1024
SIZE_CHECK_CUBES = 16


def plan_stages(selected):
    """Selected stages plus everything they depend on, in pipeline order."""
    needed = set()
    stack = list(selected)
    while stack:
        stage = stack.pop()
        if stage not in DEPENDS:
            raise ConfigError(f"unknown stage {stage!r}")
        if stage not in needed:
            needed.add(stage)
            stack.extend(DEPENDS[stage])
    return [s for s in STAGES if s in needed]


# ── Per-depth state ───────────────────────────────────────────
@dataclass(eq=False)
class DepthRun:
    config: object
    depth: int
    base_depth: int
    output_dir: str = None
    measurements: list = field(default_factory=list)
    stage_times: dict = field(default_factory=dict)
    facts: dict = field(default_factory=dict)
    stage: str = None

    def __post_init__(self):
        self.dim = self.config.dim
        self.root = DyadicCube.root(self.dim)

    def measure(self, name, anchor, kind, value, status=PASS, tolerance=None):
        self.measurements.append((self.stage, Measurement(name, anchor, kind, value, status, tolerance)))

    def rng(self, salt):
        return np.random.default_rng((self.config.seed, STAGES.index(self.stage), salt))

    def random_function(self, rng):
        # drawn on the base grid so both depths see the same function
        return GridFunction(rng.standard_normal((2 ** self.base_depth,) * self.dim)).refine(self.depth)

    def artifact_dir(self, name):
        if not self.output_dir:
            return None
        path = os.path.join(self.output_dir, f"depth-{self.depth}", name)
        os.makedirs(os.path.dirname(path), exist_ok=True)
        return path


def _relative(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-300)


# ── Stages ────────────────────────────────────────────────────
def _stage_kernel(run):
    cfg = run.config
    run.kernel = make_kernel(cfg.kernel, cfg.dim, cfg.alpha, depth=run.depth, lipschitz=cfg.lipschitz)
    run.op = DiscreteOperator(run.kernel, run.depth)

    est = verify_cz_estimates(run.kernel, cfg.kernel_samples, seed=cfg.seed)
    run.measure("cz-size", "kernel-size", "status", est["max_size_ratio"], est["status"])
    run.measure("cz-holder", "kernel-smoothness", "status", est["max_holder_ratio"], est["status"])

    rng = run.rng(0)
    f, g = run.random_function(rng), run.random_function(rng)
    lhs = inner(apply(run.op, f), g)
    rhs = inner(f, apply(run.op.adjoint(), g))
    run.measure("adjoint-identity", "adjoint-pairing", "identity", _relative(lhs, rhs))


def _make_system(cfg, depth, seed, base_depth):
    if cfg.system == "indicator":
        return make_indicator_system(cfg.dim, depth, cfg.p, cfg.u)
    return make_rough_system(cfg.dim, depth, cfg.p, cfg.roughness, seed, cfg.u, base_depth)


def _stage_systems(run):
    cfg = run.config
    run.system1 = _make_system(cfg, run.depth, cfg.seed, run.base_depth)
    # T* = −T for antisymmetric kernels, so one system serves both sides
    run.system2 = (run.system1 if run.kernel.antisymmetric
                   else _make_system(cfg, run.depth, cfg.seed + 1, run.base_depth))
    run.facts["single_system"] = run.system2 is run.system1

    for label, system in (("", run.system1), ("adjoint-", run.system2)):
        if label and system is run.system1:
            continue
        op = run.op if not label else run.op.adjoint()
        v = validate(system, op)
        run.measure(f"{label}nondegeneracy", "unit-mean", "identity", v["nondeg_defect"])
        run.measure(f"{label}accretive-size", "test-function-size", "stability", v["worst_size"])
        run.measure(f"{label}local-testing", "local-testing", "stability", v["worst_testing"])
        run.measure(f"{label}buffered-testing", "buffered-testing", "stability", v["worst_buffered"])

    g = global_testing_check(run.system1, run.op)
    run.measure("global-testing", "global-testing", "stability", g["worst_global_testing"])

    # coarsest level whose cubes hold at most HARDY_MAX_CELLS cells
    level = 0
    while 2 ** (cfg.dim * (run.depth - level)) > HARDY_MAX_CELLS:
        level += 1
    worst = 0.0
    for cube in iter_cubes(cfg.dim, run.depth, max_level=level):
        if cube.level == level:
            worst = max(worst, hardy_check(run.system1[cube], cube, cfg.u)["ratio"])
    run.measure("hardy-annulus", "hardy-annulus", "stability", worst)

    path = run.artifact_dir("system")
    if path:
        save_system(run.system1, path)


def _stopping_parameters(cfg, kernel):
    return StoppingParameters(
        delta=cfg.delta,
        stop_c=cfg.stop_c,
        eta=cfg.eta,
        epsilon=cfg.epsilon,
        sigma=cfg.sigma,
        c_sigma=cfg.c_sigma,
        use_offdiag=cfg.use_offdiag or not kernel.antisymmetric,
        suppression_power=cfg.suppression_power,
    )


def _stage_decompose(run):
    threshold = _stopping_parameters(run.config, run.kernel).threshold
    p, u = run.system1.p, run.system1.u
    residual, envelope, fraction, chebyshev = 0.0, 0.0, 0.0, True
    for cube, b in run.system1.items():
        dec = cz_decompose(b, cube, p, threshold, run.kernel.alpha)
        residual = max(residual, dec.identity_residual())
        envelope = max(envelope, error_envelope_norm(dec, u) / cube.volume ** (1.0 / u))
        fraction = max(fraction, dec.bad_fraction)
        chebyshev = chebyshev and dec.bad_fraction <= dec.chebyshev_fraction() + 1e-12
    run.measure("cz-decomposition", "good-bad-splitting", "identity", residual)
    run.measure("cz-chebyshev", "bad-cube-measure", "certificate", chebyshev)
    run.measure("cz-bad-fraction", "bad-cube-measure", "info", fraction)
    run.measure("error-envelope", "error-envelope", "stability", envelope)


def _stage_preparatory(run):
    cfg = run.config
    s1, s2 = run.system1, run.system2
    exponents = ExponentConfig(p=s1.p, q=s2.p, u=s1.u, v=s2.u)
    rng = run.rng(0)
    worst = 0.0
    for f in (s1[run.root], run.random_function(rng)):
        worst = max(worst, cotlar_check(run.kernel, s2, f, exponents, op=run.op)["C_cotlar"])
    run.measure("cotlar-domination", "cotlar-domination", "stability", worst)

    for lam in sorted(set(CHEBYSHEV_LAMBDAS) | {cfg.offdiag_lambda}):
        res = offdiag_verify(s1, run.op, run.root, lam)
        run.measure(f"offdiag-chebyshev lambda={lam:g}", "ample-collection", "status",
                    res["violator_measure"], res["status"])
        if lam == cfg.offdiag_lambda:
            run.measure("offdiag-average", "offdiag-average", "stability", res["worst_average"])
            run.measure("offdiag-sup", "offdiag-pointwise", "stability", res["worst_sup"])
            run.measure("ample-fraction", "ample-collection", "info", res["ample_fraction"])

    weak = tsharp_weak_testing(s1, run.op, cfg.u)
    run.measure("tsharp-weak-testing", "maximal-truncation-testing", "stability", weak["worst_weak_testing"])


def _stage_stopping(run):
    cfg = run.config
    params = _stopping_parameters(cfg, run.kernel)
    partner = None if run.system2 is run.system1 else run.system2
    forest, profile = iterate_forest(run.system1, run.op, params, partner_system=partner)
    run.forest, run.profile = forest, profile

    for key, holds in forest.certificates(profile).items():
        # δ is replaced by the measured δ_eff when the bad fraction exceeds it
        kind = "info" if key == "delta_bound" else "certificate"
        run.measure(f"stopping-{key.replace('_', '-')}", "stopping-measure", kind, holds)
    run.measure("sparseness-tau", "sparse-family", "stability", forest.tau)
    run.measure("phi-positive-measure", "suppression-profile", "info", profile.positive_measure())
    run.measure("delta-effective", "stopping-measure", "info", forest.delta_effective)

    m = cfg.suppression_power or cfg.dim
    run.op_phi = DiscreteOperator(run.kernel, run.depth, profile=profile.with_power(m))
    run.system_phi = forest.suppressed_system()
    run.system2_phi = forest.partner.suppressed_system() if forest.partner is not None else run.system_phi
    run.facts.update({
        "trivial_profile": profile.is_zero,
        "generations": len(forest.tops),
        "family_size": len(forest.family),
        "bad_cubes": len(forest.all_bad),
        "depth_truncated": forest.depth_truncated,
        "suppression_power": m,
    })

    path = run.artifact_dir("forest")
    if path:
        save_forest(forest, path, profile)


def _suppression_powers(dim):
    return sorted({math.ceil(dim / 2), dim, 2 * dim})


def _stage_suppress(run):
    cfg = run.config
    for m in _suppression_powers(cfg.dim):
        profile = run.profile.with_power(m)
        op_m = DiscreteOperator(run.kernel, run.depth, profile=profile)
        res = suppressed_testfn_verify(run.forest, profile, op_m, cfg.u)
        run.measure(f"suppressed-sup-norm m={m}", "good-part-size", "status", res["sup_norm"], res["status"])
        run.measure(f"suppressed-testing-p m={m}", "suppressed-testing", "stability", res["worst_testing_p"])
        run.measure(f"suppressed-testing-t m={m}", "suppressed-testing", "stability", res["worst_testing_t"])
        run.measure(f"suppressed-offdiag m={m}", "suppressed-offdiag", "stability", res["worst_offdiag"])
        run.measure(f"suppressed-nondegeneracy m={m}", "suppressed-nondegeneracy", "info", res["worst_nondeg"])
        run.measure(f"suppressed-domination m={m}", "suppressed-domination", "stability", res["worst_domination"])

    dom = suppression_domination_check(run.op_phi, run.system1[run.root])
    run.measure("suppression-domination", "suppression-domination", "stability", dom["C_supp"])

    # T_Φ f = T f when supp f ⊆ {Φ = 0}
    rng = run.rng(0)
    zero = run.profile.values.values == 0
    f = run.random_function(rng).masked(zero)
    diff = np.abs(apply(run.op_phi, f).values - apply(run.op, f).values).max()
    scale = max(float(np.abs(apply(run.op, f).values).max()), 1e-300)
    run.measure("suppression-agreement", "suppressed-agrees-off-support", "identity", float(diff) / scale)

    worst, status = 0.0, PASS
    for k, cube in enumerate(run.forest.all_bad[:SIZE_CHECK_CUBES]):
        res = suppressed_size_check(run.kernel, run.op_phi.profile, cube, samples=200, seed=cfg.seed + k)
        worst = max(worst, res["max_scaled_size"])
        status = FAIL if res["status"] == FAIL else status
    run.measure("suppressed-size", "suppressed-kernel-size", "status", worst, status)


def _stage_martingale(run):
    cfg = run.config
    rng = run.rng(0)
    mart1 = AdaptedMartingale(run.system_phi)
    mart2 = mart1 if run.system2_phi is run.system_phi else AdaptedMartingale(run.system2_phi)
    run.martingales = (mart1, mart2)

    summary = decompose(run.random_function(rng), run.system_phi, mart1).summary()
    for key in ("reconstruction", "square_identity", "coefficients", "localization", "omega_support"):
        run.measure(f"martingale-{key.replace('_', '-')}", "adapted-martingale", "identity", summary[key])

    functions = [run.random_function(rng) for _ in range(4)]
    for key, ratio in littlewood_paley_ratios(mart1, functions, cfg.lp_exponents).items():
        run.measure(f"littlewood-paley {key}", "square-function", "stability", ratio)

    carleson = paraproduct_carleson_norms(mart1, run.system2_phi, run.op_phi, cfg.carleson_s)
    run.measure("carleson-paraproduct-a", "paraproduct-carleson", "stability", carleson["norm_a"], carleson["status"])
    run.measure("carleson-paraproduct-b", "paraproduct-carleson", "stability", carleson["norm_b"], carleson["status"])
    embedding = carleson_embedding_check(carleson["theta_a"], run.random_function(rng), cfg.carleson_s)
    run.measure("carleson-embedding", "carleson-embedding", "stability", embedding["ratio"], embedding["status"])


def _wbp_modes(run):
    mode = run.config.wbp_mode
    if mode != "auto":
        return [mode]
    modes = []
    if run.kernel.antisymmetric and run.system2_phi is run.system_phi:
        modes.append("antisymmetric")
    modes.extend(["special_offdiag", "all_cubes"])
    return modes


def _stage_wbp(run):
    modes = _wbp_modes(run)
    run.facts["wbp_modes"] = modes
    for mode in modes:
        if mode == "all_cubes":
            res = wbp_check(run.op, run.system1, run.system2, mode)
        else:
            res = wbp_check(run.op_phi, run.system_phi, run.system2_phi, mode)
        name = "wbp-" + mode.replace("_", "-")
        if res["cancels"]:
            run.measure(name, "weak-boundedness", "identity", res["worst_relative"], res["status"])
        else:
            run.measure(name, "weak-boundedness", "stability", res["worst_ratio"], res["status"])
        if mode == "antisymmetric":
            continue
        run.measure(f"{name}-testing", "weak-boundedness", "stability", res["worst_testing"])
        run.measure(f"{name}-annulus", "hardy-annulus", "status", res["worst_annulus"],
                    PASS if res["hardy_dominates"] else FAIL)
        run.measure(f"{name}-hardy-bound", "hardy-annulus", "info", res["worst_hardy_bound"])
        run.measure(f"{name}-hardy-constant", "hardy-annulus", "info", res["hardy_constant"])
        run.measure(f"{name}-sibling-hardy", "hardy-annulus", "info", res["sibling_domination"])
        run.measure(f"{name}-sibling-hardy-constant", "hardy-annulus", "info", res["sibling_hardy_constant"])
        run.measure(f"{name}-offdiag", "weak-boundedness", "stability", res["worst_offdiag"])
        run.measure(f"{name}-linearity", "weak-boundedness", "identity", res["linearity_residual"], tolerance=RESUM_TOL)
        if mode == "all_cubes":
            run.measure("wbp-offdiag-sup", "offdiag-pointwise", "stability", res["offdiag_sup"])


def _stage_baby_tb(run):
    cfg = run.config
    res = baby_tb_bound(run.op_phi, run.system_phi, run.system2_phi, cfg.s_prime, cfg.baby_tb_samples, cfg.seed,
                        sample_depth=run.base_depth)
    run.measure("baby-tb-suppressed", "baby-tb", "stability", res["worst_normalized_pairing"], res["status"])


def _stage_bilinear(run):
    cfg = run.config
    rng = run.rng(0)
    f, g = run.random_function(rng), run.random_function(rng)
    pairing = decompose_pairing(run.op_phi, f, g, run.system_phi, run.system2_phi)
    nested = max(check["residual"] for check in pairing.nested_checks.values())
    run.measure("pairing-resummation", "pairing-decomposition", "identity", pairing.resummation_residual,
                tolerance=RESUM_TOL)
    run.measure("nested-split", "paraproduct-split", "identity", nested, tolerance=RESUM_TOL)
    run.measure("psi-sup", "paraproduct-split", "stability", pairing.psi_sup)

    worst = 0.0
    for cube in (DyadicCube(min(3, run.depth), (0,) * cfg.dim),
                 DyadicCube(min(3, run.depth), (2 ** min(3, run.depth) - 1,) * cfg.dim)):
        worst = max(worst, telescoping_check(run.system2_phi, g, cube)["residual"])
    run.measure("telescoping", "paraproduct-telescoping", "identity", worst)

    # both depths fit the same k range
    k_max = min(cfg.k_max, run.base_depth - 1)
    kernels = coefficient_kernel_norms(run.op, run.system1, run.system2, k_max, cfg.m_max)
    k_slope, m_slope = kernels["k_slope"], kernels["m_slope"]
    run.measure("coefficient-kernel-k-slope", "coefficient-kernel-decay", "status", k_slope, kernels["status"])
    run.measure("coefficient-kernel-m-slope", "coefficient-kernel-decay", "status", m_slope, kernels["status"])
    run.measure("remainder-kernel-k-slope", "coefficient-kernel-decay", "info", kernels["remainder_k_slope"])

    path = run.artifact_dir("bilinear_parts.csv")
    if path:
        save_parts_csv(pairing, path)


def _stage_final(run):
    cfg = run.config
    zero = run.profile.values.values == 0
    if not zero.any():
        raise ConfigError("the suppression profile is positive everywhere; no room for the final test function")
    b = GridFunction(np.where(zero, 1.0 / zero.mean(), 0.0))
    final = AccretiveSystem({run.root: b}, np.inf, cfg.u, name="final")
    v = validate(final, run.op)
    run.measure("final-bounded-testing", "final-test-function", "stability", v["worst_testing"])
    run.measure("final-size", "final-test-function", "info", v["worst_size"])

    res = baby_tb_bound(run.op, final, final, cfg.s_prime, cfg.baby_tb_samples, cfg.seed,
                        sample_depth=run.base_depth)
    run.measure("baby-tb-final", "baby-tb", "stability", res["worst_normalized_pairing"], res["status"])

    cubes = list(iter_cubes(cfg.dim, run.depth))
    masks = np.stack([GridFunction.indicator(q, run.depth).flat for q in cubes])
    values = np.abs(run.op.apply_batch(masks))
    counts = masks.sum(axis=1)
    for r in cfg.lp_exponents:
        testing = ((values ** r * masks).sum(axis=1) / counts) ** (1.0 / r)
        run.measure(f"indicator-testing r={r:g}", "indicator-testing", "stability", float(testing.max()))


STAGE_FUNCTIONS = {
    "kernel": _stage_kernel,
    "systems": _stage_systems,
    "decompose": _stage_decompose,
    "preparatory": _stage_preparatory,
    "stopping": _stage_stopping,
    "suppress": _stage_suppress,
    "martingale": _stage_martingale,
    "wbp": _stage_wbp,
    "baby_tb": _stage_baby_tb,
    "bilinear": _stage_bilinear,
    "final": _stage_final,
}


# ── Depth runner ──────────────────────────────────────────────
def _run_depth(config, depth, plan, output_dir=None):
    """Run the planned stages at one depth; errors are tagged with their stage."""
    run = DepthRun(config.with_depth(depth), depth, config.depth, output_dir)
    for stage in plan:
        run.stage = stage
        t0 = time.perf_counter()
        try:
            STAGE_FUNCTIONS[stage](run)
        except HarnessError as exc:
            exc.stage, exc.depth = stage, depth
            raise
        except Exception as exc:
            wrapped = HarnessError(f"stage {stage} failed at depth {depth}: {exc}")
            wrapped.stage, wrapped.depth = stage, depth
            raise wrapped from exc
        run.stage_times[stage] = _elapsed_ms(t0)
        if PERF_LOGGING_ENABLED:
            logger.info("depth %d stage %-11s %8.1f ms", depth, stage, run.stage_times[stage])
    return run


def run_pipeline(config, output_dir=None):
    """
    Run the staged pipeline at N (and N+1) and return a VerificationReport.

    Only the stages named in config.stages produce records; their
    dependencies run silently. With `output_dir`, artifacts go to
    output_dir/depth-N/ and the report to output_dir/report.{json,csv}.

    Raises:
        HarnessError (with .stage and .depth) on the first structural error
    """
    config.validate()
    plan = plan_stages(config.stages)
    depths = [config.depth, config.depth + 1] if config.two_depths else [config.depth]
    logger.info("pipeline: d=%d depths=%s stages=%s", config.dim, depths, ",".join(plan))

    with ThreadPoolExecutor(max_workers=min(MAX_WORKERS, len(depths))) as pool:
        futures = [pool.submit(_run_depth, config, depth, plan, output_dir) for depth in depths]
        runs = [future.result() for future in futures]

    selected = set(config.stages)
    per_depth = [[m for stage, m in run.measurements if stage in selected] for run in runs]
    records = combine(per_depth[0], per_depth[1] if len(per_depth) > 1 else None, config.stability_band)

    report = VerificationReport(
        config=config.to_dict(),
        depths=depths,
        records=records,
        provenance={
            "stages": {stage: list(DEPENDS[stage]) for stage in plan},
            "selected": [s for s in plan if s in selected],
            "runs": {str(run.depth): run.facts for run in runs},
        },
        timings={str(run.depth): run.stage_times for run in runs},
    )
    if output_dir:
        report.save(output_dir)
    logger.info("pipeline finished: %d records, %d failing", len(records), len(report.failures))
    return report


# ── Main Verification Function ────────────────────────────────
def verify(config, output_dir=None):
    """
    Run the pipeline and wrap the outcome in a result envelope.

    Returns:
        dict: {
            "valid": bool,              # True if every record passed
            "reason": str,              # Error code
            "message": str,             # Human-readable explanation
            "details": dict,            # Report, or the failing stage and error
            "inference_time_ms": float, # Total time in milliseconds
            "stage_times_ms": dict      # Per-depth, per-stage timing breakdown
        }
    """
    t_start = time.perf_counter()
    try:
        report = run_pipeline(config, output_dir)
    except HarnessError as exc:
        logger.error("stage %s failed: %s", getattr(exc, "stage", "config"), exc)
        return _build_result(False, exc.code, {
            "stage": getattr(exc, "stage", None),
            "depth": getattr(exc, "depth", None),
            "error": str(exc),
        }, t_start=t_start)

    reason = "SUCCESS" if report.passed else "TOLERANCE_FAILED"
    return _build_result(report.passed, reason, report.to_dict(), stage_times=report.timings, t_start=t_start)


# ── Timing helper ────────────────────────────────────────────
def _elapsed_ms(t0):
    """Return milliseconds elapsed since t0."""
    return round((time.perf_counter() - t0) * 1000, 2)


# ── Helper: Build result dictionary ──────────────────────────
def _build_result(valid, reason, details=None, stage_times=None, t_start=None):
    """Build standardized result dictionary with optional timing data."""
    total_ms = round((time.perf_counter() - t_start) * 1000, 2) if t_start else 0
    result = {
        "valid": valid,
        "reason": reason,
        "message": ERROR_CODES.get(reason, "Unknown error"),
        "details": details or {},
    }
    if PERF_LOGGING_ENABLED:
        result["inference_time_ms"] = total_ms
        result["stage_times_ms"] = stage_times or {}
    return result


# ── Utility: Batch verification ──────────────────────────────
def verify_batch(configs, output_dir=None):
    """
    Verify several configs one after the other.

    Example:
        configs = [RunConfig(kernel="hilbert"), RunConfig(kernel="zero")]
        for result in verify_batch(configs):
            print(result["reason"])
    """
    return [verify(c, os.path.join(output_dir, f"run-{k}") if output_dir else None)
            for k, c in enumerate(configs)]


# ── Command Line Interface ────────────────────────────────────
if __name__ == "__main__":
    from src.run_config import load_config

    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        config = load_config(sys.argv[1] if len(sys.argv) > 1 else None)
    except ConfigError as exc:
        print(f"\n  Config error: {exc}\n")
        sys.exit(2)
    result = verify(config, config.output_dir)

    print("\n" + "-" * 50)
    print("  Local Tb Verification Result")
    print("-" * 50)
    print(f"  Valid  : {result['valid']}")
    print(f"  Reason : {result['reason']}")
    print(f"  Message: {result['message']}")
    if PERF_LOGGING_ENABLED:
        print(f"  Time   : {result.get('inference_time_ms', 'N/A')} ms")
    print("-" * 50 + "\n")

    sys.exit(0 if result["valid"] else 1)
