# ─────────────────────────────────────────────────────────────
# errors.py
# Local Tb Verification Harness — Error codes
#
# Structural violations raise one of these. Measured constants
# never raise: they are reported and judged by the harness.
# ─────────────────────────────────────────────────────────────


# ── Error Codes ───────────────────────────────────────────────
ERROR_CODES = {
    "SUCCESS": "All verifiers passed within tolerance.",
    "TOLERANCE_FAILED": "At least one verifier is outside its tolerance band.",
    "CONFIG_ERROR": "The run configuration is invalid.",
    "LEAF_CUBE": "The cube is at the finest depth and has no children.",
    "SUPPORT_VIOLATION": "A function is not supported inside its cube.",
    "DIMENSION_MISMATCH": "Kernel, grid or function dimensions do not agree.",
    "DEGENERATE_SYSTEM": "The accretive system violates nondegeneracy.",
    "DEGENERATE_DENOMINATOR": "An adapted average vanished on an admissible cube.",
    "SPARSENESS_VIOLATED": "The family is not sparse for the requested tau.",
    "NO_SPARSENESS_MARGIN": "Stopping parameters leave no sparseness margin (tau <= 0).",
    "MODE_MISMATCH": "The requested mode does not match the available structure.",
    "INTERNAL_ERROR": "An unexpected error occurred.",
}


class HarnessError(Exception):
    code = "INTERNAL_ERROR"

    def __init__(self, message=None):
        super().__init__(message or ERROR_CODES[self.code])


class ConfigError(HarnessError):
    code = "CONFIG_ERROR"


class LeafCubeError(HarnessError):
    code = "LEAF_CUBE"


class SupportError(HarnessError):
    code = "SUPPORT_VIOLATION"


class DimensionMismatchError(HarnessError):
    code = "DIMENSION_MISMATCH"


class DegenerateSystemError(HarnessError):
    code = "DEGENERATE_SYSTEM"


class DegenerateDenominatorError(HarnessError):
    code = "DEGENERATE_DENOMINATOR"


class SparsenessError(HarnessError):
    code = "SPARSENESS_VIOLATED"

    def __init__(self, message=None, cube=None):
        super().__init__(message)
        self.cube = cube


class NoSparsenessMarginError(HarnessError):
    code = "NO_SPARSENESS_MARGIN"


class ModeMismatchError(HarnessError):
    code = "MODE_MISMATCH"
