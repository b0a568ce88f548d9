# ─────────────────────────────────────────────────────────────
# app.py
# Local Tb Verification Harness — FastAPI Application
#
# REST API that wraps the verification pipeline.
# Endpoints:
#   POST /pipeline       — Upload a JSON run config and run it
#   POST /verify-kernel  — CZ estimates for one kernel
#   GET  /health         — Health check
#
# Run:
#   uvicorn app:app --reload --port 8000
# ─────────────────────────────────────────────────────────────

import json
import os
from datetime import datetime, timezone
from typing import Optional

import numpy as np
from fastapi import FastAPI, File, Query, Request, UploadFile
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from config import DEFAULT_ALPHA, DEFAULT_DEPTH, DEFAULT_SEED, KERNEL_SAMPLES
from src.errors import ERROR_CODES, HarnessError
from src.kernels import make_kernel, verify_cz_estimates
from src.run_config import RunConfig
from verifier import verify


# ── Constants ─────────────────────────────────────────────────
API_VERSION = "1.0.0"
MAX_FILE_SIZE = 1 * 1024 * 1024  # 1 MB
ALLOWED_CONTENT_TYPES = {
    "application/json",
    "application/octet-stream",
    "text/plain",
}
ALLOWED_EXTENSIONS = {".json"}
MAX_KERNEL_SAMPLES = 100_000


# ── FastAPI App ───────────────────────────────────────────────
app = FastAPI(
    title="Local Tb Verification API",
    description=(
        "Run the local Tb verification pipeline on an uploaded run "
        "config and get back the per-verifier report."
    ),
    version=API_VERSION,
)


def _error(status_code, code, message):
    return JSONResponse(
        status_code=status_code,
        content={"success": False, "error": {"code": code, "message": message}},
    )


def _is_verbose(request, verbose):
    return verbose or request.headers.get("X-Verbose", "").lower() in ("true", "1", "yes")


# ── POST /pipeline ────────────────────────────────────────────
@app.post("/pipeline")
async def run_pipeline_endpoint(
    request: Request,
    file: UploadFile = File(...),
    verbose: bool = Query(False, description="Include the full report and stage timings"),
):
    """
    Upload a JSON run config (nested or flat keys) and run the pipeline.

    By default returns a minimal response (success, valid, reason,
    message, failing record names). Pass ?verbose=true or header
    X-Verbose: true for the full report.
    """
    verbose = _is_verbose(request, verbose)

    # ── Step 1: Validate file extension and content type ──────
    filename = file.filename or ""
    ext = os.path.splitext(filename)[1].lower()
    if ext not in ALLOWED_EXTENSIONS:
        return _error(400, "INVALID_FILE_TYPE",
                      f"File type '{ext or 'unknown'}' is not supported. Only JSON config files are accepted.")
    if file.content_type and file.content_type not in ALLOWED_CONTENT_TYPES:
        return _error(400, "INVALID_FILE_TYPE",
                      f"Content type '{file.content_type}' is not supported. Only JSON config files are accepted.")

    # ── Step 2: Read file and check size ──────────────────────
    contents = await file.read()
    if len(contents) > MAX_FILE_SIZE:
        return _error(413, "FILE_TOO_LARGE",
                      f"Config size ({len(contents) / 1024:.1f} KB) exceeds the maximum of "
                      f"{MAX_FILE_SIZE // 1024} KB.")
    if len(contents) == 0:
        return _error(400, "EMPTY_FILE", "The uploaded file is empty.")

    # ── Step 3: Parse and validate the config ─────────────────
    try:
        config = RunConfig.from_dict(json.loads(contents)).validate()
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        return _error(400, "CONFIG_ERROR", f"Config is not valid JSON: {e}")
    except HarnessError as e:
        return _error(400, e.code, str(e))
    except TypeError as e:
        return _error(400, "CONFIG_ERROR", f"Config has values of the wrong type: {e}")

    # ── Step 4: Run the pipeline (no artifacts on disk) ───────
    try:
        result = verify(config)
    except Exception as e:
        return _error(500, "INTERNAL_ERROR", f"An unexpected error occurred: {str(e)}")

    if result["reason"] not in ("SUCCESS", "TOLERANCE_FAILED"):
        status = 400 if result["reason"] == "CONFIG_ERROR" else 422
        details = result["details"]
        return _error(status, result["reason"], f"stage {details.get('stage')}: {details.get('error')}")

    if verbose:
        content = {
            "success": True,
            "result": result,
            "inference_time_ms": result.get("inference_time_ms"),
            "timestamp": datetime.now(timezone.utc).isoformat(),
        }
    else:
        records = result["details"]["records"]
        content = {
            "success": True,
            "valid": result["valid"],
            "reason": result["reason"],
            "message": result["message"],
            "failed": [r["name"] for r in records if r["status"] != "PASS"],
        }
    return JSONResponse(status_code=200, content=json.loads(json.dumps(content, default=str)))


# ── POST /verify-kernel ───────────────────────────────────────
class KernelRequest(BaseModel):
    kernel: str = "hilbert"
    dim: int = 1
    alpha: float = DEFAULT_ALPHA
    samples: int = KERNEL_SAMPLES
    seed: int = DEFAULT_SEED
    depth: Optional[int] = None


@app.post("/verify-kernel")
async def verify_kernel_endpoint(body: KernelRequest):
    """CZ size and Hölder ratios of a named kernel on sampled admissible quadruples."""
    if not 0 < body.samples <= MAX_KERNEL_SAMPLES:
        return _error(400, "CONFIG_ERROR", f"samples must lie in 1..{MAX_KERNEL_SAMPLES}")
    try:
        kernel = make_kernel(body.kernel, body.dim, body.alpha, depth=body.depth)
        result = verify_cz_estimates(kernel, body.samples, seed=body.seed)
    except HarnessError as e:
        return _error(400, e.code, str(e))
    except Exception as e:
        return _error(500, "INTERNAL_ERROR", f"An unexpected error occurred: {str(e)}")
    return {"success": True, "valid": result["status"] == "PASS", "result": result,
            "message": ERROR_CODES["SUCCESS" if result["status"] == "PASS" else "TOLERANCE_FAILED"]}


# ── GET /health ───────────────────────────────────────────────
@app.get("/health")
async def health_check():
    """API status, version, numpy version and the default depth per dimension."""
    return {
        "status": "healthy",
        "version": API_VERSION,
        "numpy_version": np.__version__,
        "default_depth": {str(d): n for d, n in DEFAULT_DEPTH.items()},
    }


# ── Run directly with: python app.py ─────────────────────────
if __name__ == "__main__":
    import uvicorn
    uvicorn.run("app:app", host="0.0.0.0", port=8000, reload=True)
