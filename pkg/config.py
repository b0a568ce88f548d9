# ─────────────────────────────────────────────────────────────
# config.py
# Local Tb Verification Harness — Configuration
#
# All defaults, thresholds and tolerances in one place.
# RunConfig (src/run_config.py) starts from these values and
# layers a JSON config file, LOCALTB_* env vars and CLI flags on top.
# ─────────────────────────────────────────────────────────────

# ── Grid ──────────────────────────────────────────────────────
# Reference cube is [0,1)^d. Depth N means 2^N cells per axis.
#
# Cost of one dense operator matrix is (2^{dN})^2 entries:
#   d=1, N=8  ->  65 536 pairs
#   d=2, N=5  ->  1 048 576 pairs
# Every verifier is also re-run at N+1 for the depth-stability check,
# so keep these modest.
DEFAULT_DIM = 1
DEFAULT_DEPTH = {1: 8, 2: 5}
MAX_DEPTH = {1: 12, 2: 7}


# ── Kernel ────────────────────────────────────────────────────
# Hölder exponent declared for every kernel. Kept below 1/2;
# constants only improve when alpha decreases.
DEFAULT_KERNEL = "hilbert"
DEFAULT_ALPHA = 0.4

# Lipschitz constant of the graph A(x) = L sin(2πx)/(2π) used by
# the cauchy_lipschitz kernel.
CAUCHY_LIPSCHITZ = 0.5

# Number of random admissible quadruples for the kernel estimates.
KERNEL_SAMPLES = 2000


# ── Suppression ───────────────────────────────────────────────
# Power m in K_Φ = |x−y|^{2m} K / (|x−y|^{2m} + Φ(x)^m Φ(y)^m).
# None means m = d.
SUPPRESSION_POWER = None


# ── Exponents ─────────────────────────────────────────────────
# p   : size exponent of the test functions (3/2 is the case
#       1/p + 1/q > 1 that needs the suppressed machinery)
# u   : testing exponent
# s'  : exponent of the baby Tb bound, must exceed max(t', 2)
P_EXPONENT = 1.5
U_EXPONENT = 1.5
BABY_TB_S_PRIME = 4.0
LP_EXPONENTS = (1.5, 2.0, 3.0)
CARLESON_S = 1.5


# ── Stopping construction ─────────────────────────────────────
# b-stopping threshold is STOP_C / DELTA:
#   maximal cubes with avg |b|^p >= STOP_C / DELTA are bad cubes.
#
# With the defaults the threshold is 1024, so only genuinely rough
# test functions (spikes of height ~100 at p = 3/2) produce bad cubes.
DELTA = 1.0 / 64.0
STOP_C = 16.0

# Degeneracy level for the Tb-stopping condition |avg b~| <= eta.
ETA = 0.5

# None means chosen by stopping_parameters() so that the measure
# chain leaves a positive sparseness margin on every cube.
EPSILON = None
SIGMA = None
C_SIGMA = None

# Include the off-diagonal stopping condition. It is required for
# non-antisymmetric kernels and optional otherwise.
USE_OFFDIAG = False

# Level for the non-stopping condition in offdiag_verify().
OFFDIAG_LAMBDA = 100.0


# ── Accretive systems ─────────────────────────────────────────
# "indicator" (b_Q = 1_Q) or "rough" (unit-mean spikes).
DEFAULT_SYSTEM = "rough"
ROUGHNESS = 8.0


# ── Bilinear decomposition ────────────────────────────────────
K_MAX = 5
M_MAX = 4
BABY_TB_SAMPLES = 64


# ── Tolerances ────────────────────────────────────────────────
# Relative tolerance for exact identities (reconstruction,
# decomposition, transpose, antisymmetric cancellation).
IDENTITY_TOL = 1e-10
# Re-summation of the pairing decomposition.
RESUM_TOL = 1e-8
# Default depth-stability band: const(N+1)/const(N) in [1-b, 1+b].
STABILITY_BAND = 0.25
# Slope bands for the coefficient kernel decay fits.
K_SLOPE_BAND = (-0.1, 1.1)   # added to alpha / absolute upper bound
M_SLOPE_MARGIN = 0.2


# ── Performance ───────────────────────────────────────────────
# Kernel matrices are cached per operator while they fit in this
# budget. Larger operators are applied by streaming row blocks.
MATRIX_CACHE_BYTES = 2 * 1024 ** 3
ROW_BLOCK = 256

# Above this many cells the maximal truncation falls back to the
# dyadic epsilon grid and the report flags "approximate sup".
EXACT_SUP_MAX_CELLS = 4096

# Worker threads for the two depths of the stability check.
MAX_WORKERS = 2


# ── Output ────────────────────────────────────────────────────
DEFAULT_OUTPUT_DIR = "runs"
ENV_PREFIX = "LOCALTB_"
DEFAULT_SEED = 0


# ── Performance Logging ───────────────────────────────────────
# When True, run_pipeline() returns per-stage timing data in its
# result envelope and logs stage latency. Timings never go into the
# JSON report so reports stay bit-identical for identical configs.
PERF_LOGGING_ENABLED = True
