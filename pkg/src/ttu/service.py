"""HTTP prediction service over a fitted model bundle.

Responses are pure functions of (bundle, request): the bundle snapshot is
immutable, every number is serialized with 17 significant digits, and
repeated identical requests produce byte-identical bodies.
"""

from __future__ import annotations

import json
from typing import Optional

import numpy as np
from fastapi import FastAPI, Request, Response
from fastapi.middleware.cors import CORSMiddleware

from .bundle import ModelBundle
from .model import EvidenceState, predict_logit_draws
from .special import inv_logit

API_PREFIX = "/api/v1"
TRAJECTORY_STEP_MIN = 5.0
DEFAULT_LEVEL = 0.95


def _format_float(x: float) -> str:
    return format(float(x), ".17g")


def dumps17(obj) -> str:
    """Deterministic JSON with floats at 17 significant digits."""
    if isinstance(obj, float):
        return _format_float(obj)
    if isinstance(obj, (np.floating,)):
        return _format_float(float(obj))
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if obj is None:
        return "null"
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        return "{" + ",".join(
            f"{json.dumps(str(k))}:{dumps17(v)}" for k, v in obj.items()) + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        return "[" + ",".join(dumps17(v) for v in obj) + "]"
    raise TypeError(f"cannot serialize {type(obj)}")


def _json_response(obj, status_code: int = 200) -> Response:
    return Response(content=dumps17(obj), status_code=status_code,
                    media_type="application/json")


def _error(status: int, code: str, detail: str) -> Response:
    return _json_response({"code": code, "detail": detail}, status_code=status)


class PredictionEngine:
    """Precomputed thinned posterior table plus covariate plumbing."""

    def __init__(self, bundle: ModelBundle, level: float = DEFAULT_LEVEL):
        bundle.ensure_servable()
        self.bundle = bundle
        self.level = level
        self.theta, self.stride = bundle.serving_table()
        self.cfg = bundle.model_cfg

    def covariate_vector(self, age_years: Optional[float],
                         sex: Optional[str]) -> np.ndarray:
        age_std, age_mis = self.bundle.standardize_age(age_years)
        if sex is None:
            sex01, sex_mis = 0, 1
        else:
            sex01, sex_mis = (1 if sex == "M" else 0), 0
        return np.array([age_std, age_mis, sex01, sex_mis], dtype=float)

    def summarize(self, state: EvidenceState, x: np.ndarray) -> dict:
        probs = inv_logit(predict_logit_draws(state, x, self.theta, self.cfg))
        alpha = (1.0 - self.level) / 2.0
        lo, hi = np.quantile(probs, [alpha, 1.0 - alpha])
        return {"p_mean": float(probs.mean()), "p_low": float(lo),
                "p_high": float(hi), "level": self.level,
                "model_id": self.bundle.model_id}

    def trajectory(self, x: np.ndarray) -> dict:
        C = self.cfg.censor_limit_min
        grid = np.arange(0.0, C + TRAJECTORY_STEP_MIN / 2, TRAJECTORY_STEP_MIN)
        alpha = (1.0 - self.level) / 2.0
        out = {"t_min": grid.tolist(), "level": self.level,
               "model_id": self.bundle.model_id}
        for kind, maker in (("not_yet", EvidenceState.not_yet),
                            ("voided_at", EvidenceState.voided_at)):
            mean = np.empty(grid.size)
            lo = np.empty(grid.size)
            hi = np.empty(grid.size)
            for i, t in enumerate(grid):
                probs = inv_logit(
                    predict_logit_draws(maker(float(t)), x, self.theta, self.cfg))
                mean[i] = probs.mean()
                lo[i], hi[i] = np.quantile(probs, [alpha, 1.0 - alpha])
            out[kind] = {"p_mean": mean.tolist(), "p_low": lo.tolist(),
                         "p_high": hi.tolist()}
        return out


def _parse_state(raw) -> EvidenceState:
    if not isinstance(raw, dict) or "kind" not in raw:
        raise ValueError("state must be an object with a 'kind' field")
    kind = raw["kind"]
    if kind in ("voided_at", "not_yet"):
        if "t_min" not in raw or not isinstance(raw["t_min"], (int, float)) \
                or isinstance(raw["t_min"], bool):
            raise ValueError(f"state {kind!r} requires numeric t_min")
        return EvidenceState(kind, float(raw["t_min"]))
    if kind in ("not_observed", "voided_censored"):
        return EvidenceState(kind)
    raise ValueError(f"unknown state kind {kind!r}")


def create_app(bundle: Optional[ModelBundle], cors_origin: Optional[str] = None,
               level: float = DEFAULT_LEVEL) -> FastAPI:
    app = FastAPI(title="ttu-risk-service", docs_url=None, redoc_url=None)
    if cors_origin:
        app.add_middleware(
            CORSMiddleware, allow_origins=[cors_origin], allow_methods=["*"],
            allow_headers=["*"])
    engine = PredictionEngine(bundle, level=level) if bundle is not None else None

    def no_bundle() -> Response:
        return _error(503, "no_bundle", "no model bundle is loaded")

    @app.post(f"{API_PREFIX}/predict")
    async def predict(request: Request) -> Response:
        if engine is None:
            return no_bundle()
        try:
            body = await request.json()
        except Exception:
            return _error(400, "schema", "body is not valid JSON")
        if not isinstance(body, dict):
            return _error(400, "schema", "body must be a JSON object")
        age = body.get("age_years")
        sex = body.get("sex")
        if age is not None and (isinstance(age, bool)
                                or not isinstance(age, (int, float)) or age < 0):
            return _error(400, "schema", "age_years must be a nonnegative number")
        if sex is not None and sex not in ("F", "M"):
            return _error(400, "schema", "sex must be 'F' or 'M'")
        try:
            state = _parse_state(body.get("state"))
        except ValueError as exc:
            return _error(400, "schema", str(exc))
        if state.t_min is not None and not \
                0.0 <= state.t_min <= engine.cfg.censor_limit_min:
            return _error(400, "range",
                          f"t_min must lie in [0, {engine.cfg.censor_limit_min}]")
        x = engine.covariate_vector(age, sex)
        return _json_response(engine.summarize(state, x))

    @app.get(f"{API_PREFIX}/curve")
    async def curve() -> Response:
        if engine is None or engine.bundle.curve is None:
            return no_bundle()
        c = engine.bundle.curve
        return _json_response({
            "t_min": c.grid_min.tolist(),
            "observed": c.observed.tolist(),
            "post_mean": c.posterior_mean.tolist(),
            "band_low": c.band_low.tolist(),
            "band_high": c.band_high.tolist(),
            "level": c.level,
            "n1": c.n1,
            "model_id": engine.bundle.model_id,
        })

    @app.get(f"{API_PREFIX}/trajectory")
    async def trajectory(age: Optional[float] = None,
                         sex: Optional[str] = None) -> Response:
        if engine is None:
            return no_bundle()
        if sex is not None and sex not in ("F", "M"):
            return _error(400, "schema", "sex must be 'F' or 'M'")
        if age is not None and age < 0:
            return _error(400, "schema", "age must be nonnegative")
        x = engine.covariate_vector(age, sex)
        return _json_response(engine.trajectory(x))

    @app.get(f"{API_PREFIX}/meta")
    async def meta() -> Response:
        if engine is None:
            return no_bundle()
        return _json_response({
            "manifest": engine.bundle.manifest,
            "diagnostics_summary": {
                "max_rhat": engine.bundle.diagnostics.max_rhat,
                "failed": engine.bundle.diagnostics.failed,
                "divergence_count": engine.bundle.diagnostics.divergence_count,
                "ebfmi_min": float(np.min(engine.bundle.diagnostics.ebfmi)),
                "mean_accept": engine.bundle.diagnostics.mean_accept,
            },
            "thinning_stride": engine.stride,
            "serving_draws": int(engine.theta.shape[0]),
        })

    return app


def serve(bundle: ModelBundle, host: str = "127.0.0.1", port: int = 8000,
          cors_origin: Optional[str] = None) -> None:
    import uvicorn
    app = create_app(bundle, cors_origin=cors_origin)
    uvicorn.run(app, host=host, port=port, log_level="warning")
