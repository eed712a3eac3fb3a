"""Scoring microservice for the binary noise-prediction frame protocol."""

__version__ = "0.1.0"

from .analytic import AnalyticStage, default_params, load_stages, make_alpha_bar
from .app import MockBackend, ServiceConfig, create_app, serve
from .wire import FrameError, Request, decode_request, encode_error, encode_request, encode_response

__all__ = [
    "AnalyticStage", "FrameError", "MockBackend", "Request", "ServiceConfig",
    "create_app", "decode_request", "default_params", "encode_error",
    "encode_request", "encode_response", "load_stages", "make_alpha_bar", "serve",
]
