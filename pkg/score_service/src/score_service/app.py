"""FastAPI application: binary scoring frames over HTTP.

POST /score   body = request frame, response = response frame
              (malformed frames get HTTP 400 with a nonzero status byte)
GET  /healthz JSON {"version": ..., "stages": [...]}

Backends are stateless predictors; the mock backend evaluates the analytic
closed form from a mu-parameter file, and external backends are loaded from
a ``module:attribute`` path exposing the same predict contract.
"""
from __future__ import annotations

import importlib
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from fastapi import FastAPI, Request, Response

from . import __version__
from .analytic import AnalyticStage, load_stages, make_alpha_bar
from .wire import FrameError, decode_request, encode_error, encode_response

STAGE_NAMES = {0: "geometry", 1: "appearance"}


@dataclass(frozen=True)
class ServiceConfig:
    params_path: str | None = None        # mock backend mu-parameter file
    schedule_kind: str = "cosine"
    external: str | None = None           # "module:attribute" backend override


class ExternalBackend:
    """Adapter seam for real diffusion backends.

    The referenced attribute must be a callable or object with
    ``predict(z, t, T, prompt_present, conditions, stage) -> ndarray`` where
    conditions maps role name to a (C, h, w) float array.
    """

    def __init__(self, spec: str):
        module_name, _, attr = spec.partition(":")
        if not attr:
            raise ValueError("external backend spec must be 'module:attribute'")
        obj = getattr(importlib.import_module(module_name), attr)
        self._predict = obj.predict if hasattr(obj, "predict") else obj

    def predict(self, z, t, T, prompt_present, conditions, stage):
        return self._predict(z=z, t=t, T=T, prompt_present=prompt_present,
                             conditions=conditions, stage=stage)


class MockBackend:
    """Analytic closed-form predictor (delta-target distribution)."""

    def __init__(self, stages: dict[int, AnalyticStage], schedule_kind: str):
        self.stages = stages
        self.schedule_kind = schedule_kind

    @lru_cache(maxsize=16)
    def _alpha_bar(self, T: int) -> np.ndarray:
        return make_alpha_bar(T, self.schedule_kind)

    def predict(self, z, t, T, prompt_present, conditions, stage):
        if stage not in self.stages:
            raise ValueError(f"no backend for stage {STAGE_NAMES.get(stage, stage)}")
        return self.stages[stage].predict(z, t, T, prompt_present, conditions,
                                          self._alpha_bar(T))


def build_backend(config: ServiceConfig):
    if config.external:
        return ExternalBackend(config.external)
    return MockBackend(load_stages(config.params_path), config.schedule_kind)


def create_app(config: ServiceConfig | None = None) -> FastAPI:
    config = config or ServiceConfig()
    backend = build_backend(config)
    app = FastAPI(title="score-service", version=__version__)

    @app.get("/healthz")
    def healthz():
        stages = (sorted(STAGE_NAMES[s] for s in backend.stages)
                  if isinstance(backend, MockBackend) else ["geometry", "appearance"])
        return {"version": __version__, "stages": stages}

    @app.post("/score")
    async def score(request: Request):
        body = await request.body()
        try:
            req = decode_request(body)
        except FrameError as exc:
            return Response(content=encode_error(1, str(exc)), status_code=400,
                            media_type="application/octet-stream")
        try:
            conditions = {k: v for k, v in req.tensors.items() if k != "z"}
            eps = backend.predict(req.tensors["z"], req.t, req.T, req.prompt_present,
                                  conditions, req.stage)
            eps = np.asarray(eps)
            if eps.shape != req.tensors["z"].shape:
                raise ValueError(
                    f"backend returned {eps.shape}, expected {req.tensors['z'].shape}"
                )
        except ValueError as exc:
            return Response(content=encode_error(2, str(exc)), status_code=400,
                            media_type="application/octet-stream")
        return Response(content=encode_response(eps.astype(np.float32)),
                        media_type="application/octet-stream")

    return app


def serve(config: ServiceConfig | None = None, host: str = "127.0.0.1",
          port: int = 8321) -> None:
    import uvicorn

    uvicorn.run(create_app(config), host=host, port=port, log_level="warning")
