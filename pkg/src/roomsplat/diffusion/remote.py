"""HTTP client for remote score providers speaking the binary frame protocol."""
from __future__ import annotations

import urllib.error
import urllib.request

import numpy as np

from ..errors import ContractError, ParseError, TransportError
from .conditions import LATENT_CHANNELS, ConditionSet, Stage
from .wire import ScoreRequest, decode_response, encode_request


class RemoteScoreProvider:
    """Forwards predictions to a service endpoint; no retries by default.

    ``endpoint`` is the full URL the frame is POSTed to, e.g.
    ``http://127.0.0.1:8321/score``.
    """

    def __init__(self, endpoint: str, stage: Stage, T: int,
                 timeout: float = 30.0, latent_channels: int | None = None):
        self.endpoint = endpoint
        self.stage = Stage(stage)
        self.T = int(T)
        self.timeout = timeout
        self._channels = latent_channels or LATENT_CHANNELS[self.stage]

    @property
    def latent_channels(self) -> int:
        return self._channels

    def _post(self, body: bytes) -> bytes:
        request = urllib.request.Request(
            self.endpoint, data=body, method="POST",
            headers={"Content-Type": "application/octet-stream"},
        )
        try:
            with urllib.request.urlopen(request, timeout=self.timeout) as resp:
                return resp.read()
        except urllib.error.HTTPError as exc:
            # The server answered: a protocol-level failure, not transport.
            payload = exc.read()
            try:
                decode_response(payload)
            except ContractError:
                raise
            except ParseError:
                pass
            raise ContractError(
                f"provider at {self.endpoint} answered HTTP {exc.code}"
            ) from exc
        except (urllib.error.URLError, TimeoutError, ConnectionError, OSError) as exc:
            raise TransportError(f"cannot reach provider at {self.endpoint}: {exc}") from exc

    def predict(self, z_t: np.ndarray, t: int, cond: ConditionSet,
                c: int = 0) -> np.ndarray:
        z_t = np.asarray(z_t)
        req = ScoreRequest(
            stage=self.stage, prompt_present=cond.prompt_present, T=self.T,
            t=int(t), c=int(c), z=z_t.astype(np.float32),
            semantic=None if cond.semantic is None else cond.semantic.astype(np.float32),
            normal=None if cond.normal is None else cond.normal.astype(np.float32),
            depth=None if cond.depth is None else cond.depth.astype(np.float32),
        )
        raw = self._post(encode_request(req))
        try:
            eps = decode_response(raw)
        except ParseError as exc:
            raise ContractError(f"malformed response from {self.endpoint}: {exc}") from exc
        if eps.shape != z_t.shape:
            raise ContractError(
                f"provider returned shape {eps.shape}, expected {tuple(z_t.shape)}"
            )
        return eps.astype(np.float64)
