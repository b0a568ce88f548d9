# ─────────────────────────────────────────────────────────────
# run_config.py
# Local Tb Verification Harness — Run configuration
#
# RunConfig collects every knob of a run. Values are layered:
#   config.py defaults < JSON file < LOCALTB_* environment < CLI flags
# and validated once, before any computation starts.
# ─────────────────────────────────────────────────────────────

import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, fields, replace
from typing import Optional

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
from config import (
    BABY_TB_S_PRIME,
    BABY_TB_SAMPLES,
    C_SIGMA,
    CARLESON_S,
    CAUCHY_LIPSCHITZ,
    DEFAULT_ALPHA,
    DEFAULT_DEPTH,
    DEFAULT_DIM,
    DEFAULT_KERNEL,
    DEFAULT_OUTPUT_DIR,
    DEFAULT_SEED,
    DEFAULT_SYSTEM,
    DELTA,
    ENV_PREFIX,
    EPSILON,
    ETA,
    K_MAX,
    KERNEL_SAMPLES,
    LP_EXPONENTS,
    M_MAX,
    MAX_DEPTH,
    OFFDIAG_LAMBDA,
    P_EXPONENT,
    ROUGHNESS,
    SIGMA,
    STABILITY_BAND,
    STOP_C,
    SUPPRESSION_POWER,
    U_EXPONENT,
    USE_OFFDIAG,
)
from src.errors import ConfigError
from src.kernels import KERNEL_NAMES

logger = logging.getLogger(__name__)


STAGES = ("kernel", "systems", "decompose", "preparatory", "stopping", "suppress", "martingale",
          "wbp", "baby_tb", "bilinear", "final")
SYSTEM_KINDS = ("rough", "indicator")
WBP_MODES = ("auto", "antisymmetric", "special_offdiag", "all_cubes")

# Nested JSON layout: section -> fields.
SECTIONS = {
    "grid": ("dim", "depth", "two_depths"),
    "kernel": ("kernel", "alpha", "lipschitz", "kernel_samples"),
    "system": ("system", "roughness", "p", "u"),
    "exponents": ("s_prime", "lp_exponents", "carleson_s"),
    "stopping": ("delta", "stop_c", "eta", "epsilon", "sigma", "c_sigma", "use_offdiag",
                 "offdiag_lambda", "suppression_power"),
    "bilinear": ("k_max", "m_max", "baby_tb_samples", "wbp_mode"),
    "run": ("seed", "stages", "output_dir", "stability_band"),
}


@dataclass
class RunConfig:
    dim: int = DEFAULT_DIM
    depth: Optional[int] = None
    two_depths: bool = True
    kernel: str = DEFAULT_KERNEL
    alpha: float = DEFAULT_ALPHA
    lipschitz: float = CAUCHY_LIPSCHITZ
    kernel_samples: int = KERNEL_SAMPLES
    system: str = DEFAULT_SYSTEM
    roughness: float = ROUGHNESS
    p: float = P_EXPONENT
    u: float = U_EXPONENT
    s_prime: float = BABY_TB_S_PRIME
    lp_exponents: tuple = LP_EXPONENTS
    carleson_s: float = CARLESON_S
    delta: float = DELTA
    stop_c: float = STOP_C
    eta: float = ETA
    epsilon: Optional[float] = EPSILON
    sigma: Optional[float] = SIGMA
    c_sigma: Optional[float] = C_SIGMA
    use_offdiag: bool = USE_OFFDIAG
    offdiag_lambda: float = OFFDIAG_LAMBDA
    suppression_power: Optional[int] = SUPPRESSION_POWER
    k_max: int = K_MAX
    m_max: int = M_MAX
    baby_tb_samples: int = BABY_TB_SAMPLES
    wbp_mode: str = "auto"
    seed: int = DEFAULT_SEED
    stages: tuple = STAGES
    output_dir: str = DEFAULT_OUTPUT_DIR
    stability_band: float = STABILITY_BAND

    def __post_init__(self):
        if self.depth is None and self.dim in DEFAULT_DEPTH:
            self.depth = DEFAULT_DEPTH[self.dim]
        self.lp_exponents = tuple(float(r) for r in self.lp_exponents)
        self.stages = tuple(self.stages)

    # ── validation
    def validate(self):
        """Raise ConfigError on the first out-of-range value; returns self."""
        if self.dim not in (1, 2):
            raise ConfigError(f"dimension must be 1 or 2, got {self.dim}")
        if not isinstance(self.depth, int) or not 1 <= self.depth <= MAX_DEPTH[self.dim]:
            raise ConfigError(f"depth must lie in 1..{MAX_DEPTH[self.dim]} for d = {self.dim}, got {self.depth}")
        if self.two_depths and self.depth + 1 > MAX_DEPTH[self.dim]:
            raise ConfigError(f"depth {self.depth} + 1 exceeds the maximum {MAX_DEPTH[self.dim]}")
        if self.kernel not in KERNEL_NAMES:
            raise ConfigError(f"unknown kernel {self.kernel!r}; choose from {', '.join(KERNEL_NAMES)}")
        if not 0 < self.alpha < 1:
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.system not in SYSTEM_KINDS:
            raise ConfigError(f"unknown system {self.system!r}")
        if self.roughness < 1:
            raise ConfigError(f"roughness must be >= 1, got {self.roughness}")
        for name in ("p", "u", "s_prime"):
            if not getattr(self, name) > 1:
                raise ConfigError(f"exponent {name} must exceed 1, got {getattr(self, name)}")
        if any(not r > 1 for r in self.lp_exponents):
            raise ConfigError(f"Littlewood-Paley exponents must exceed 1, got {self.lp_exponents}")
        if not 1 < self.carleson_s <= 2:
            raise ConfigError(f"Carleson exponent must lie in (1, 2], got {self.carleson_s}")
        if not 0 < self.delta < 1:
            raise ConfigError(f"delta must lie in (0, 1), got {self.delta}")
        if not 0 < self.eta <= 1:
            raise ConfigError(f"eta must lie in (0, 1], got {self.eta}")
        if self.stop_c <= 0 or self.offdiag_lambda <= 0:
            raise ConfigError("stopping constant and lambda must be positive")
        for name in ("epsilon", "sigma", "c_sigma"):
            value = getattr(self, name)
            if value is not None and value <= 0:
                raise ConfigError(f"{name} must be positive, got {value}")
        if self.suppression_power is not None and self.suppression_power < 1:
            raise ConfigError(f"suppression power must be >= 1, got {self.suppression_power}")
        if not 0 <= self.k_max <= self.depth:
            raise ConfigError(f"k_max must lie in 0..{self.depth}, got {self.k_max}")
        if self.m_max < 1 or self.baby_tb_samples < 1 or self.kernel_samples < 1:
            raise ConfigError("m_max and sample counts must be positive")
        if self.wbp_mode not in WBP_MODES:
            raise ConfigError(f"unknown weak boundedness mode {self.wbp_mode!r}")
        unknown = [s for s in self.stages if s not in STAGES]
        if unknown:
            raise ConfigError(f"unknown stage(s): {', '.join(unknown)}")
        if not 0 < self.stability_band < 1:
            raise ConfigError(f"stability band must lie in (0, 1), got {self.stability_band}")
        return self

    # ── serialization
    def to_dict(self):
        flat = asdict(self)
        flat["lp_exponents"] = list(self.lp_exponents)
        flat["stages"] = list(self.stages)
        return {section: {name: flat[name] for name in names} for section, names in SECTIONS.items()}

    @classmethod
    def from_dict(cls, data):
        """Accepts the nested layout of to_dict() or a flat mapping."""
        if data is not None and not isinstance(data, dict):
            raise ConfigError(f"config must be a JSON object, got {type(data).__name__}")
        known = {f.name for f in fields(cls)}
        flat = {}
        for key, value in (data or {}).items():
            if key in SECTIONS and isinstance(value, dict):
                flat.update(value)
            else:
                flat[key] = value
        unknown = sorted(set(flat) - known)
        if unknown:
            raise ConfigError(f"unknown configuration key(s): {', '.join(unknown)}")
        return cls(**flat)

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
        return path

    def with_depth(self, depth):
        return replace(self, depth=depth)


# ── Layered loading ───────────────────────────────────────────
def _coerce(name, raw):
    """Parse an environment string into the type of the field `name`."""
    default = RunConfig.__dataclass_fields__[name].default
    if raw.lower() in ("none", "null", ""):
        return None
    if name in ("lp_exponents",):
        return tuple(float(v) for v in raw.split(","))
    if name == "stages":
        return tuple(v.strip() for v in raw.split(",") if v.strip())
    if isinstance(default, bool) or name in ("two_depths", "use_offdiag"):
        return raw.lower() in ("1", "true", "yes", "on")
    if name in ("dim", "depth", "seed", "k_max", "m_max", "baby_tb_samples", "kernel_samples", "suppression_power"):
        return int(raw)
    if isinstance(default, str):
        return raw
    return float(raw)


def env_overrides(environ=None):
    environ = os.environ if environ is None else environ
    out = {}
    for f in fields(RunConfig):
        key = ENV_PREFIX + f.name.upper()
        if key in environ:
            try:
                out[f.name] = _coerce(f.name, environ[key])
            except ValueError as exc:
                raise ConfigError(f"cannot parse {key}={environ[key]!r}: {exc}") from exc
    return out


def load_config(path=None, overrides=None, environ=None):
    """
    Build a validated RunConfig from defaults, a JSON file, LOCALTB_*
    environment variables and explicit overrides (CLI flags), in that order.
    """
    data = {}
    if path:
        try:
            with open(path) as fh:
                data = json.load(fh)
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    config = RunConfig.from_dict(data)
    layered = {**env_overrides(environ), **{k: v for k, v in (overrides or {}).items() if v is not None}}
    if "dim" in layered and "depth" not in layered and not (data.get("grid", {}).get("depth") or data.get("depth")):
        layered["depth"] = DEFAULT_DEPTH.get(layered["dim"])
    if layered:
        config = replace(config, **layered)
    logger.debug("run config: %s", config)
    return config.validate()
