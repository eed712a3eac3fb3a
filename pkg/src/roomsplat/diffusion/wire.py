"""Binary frame codec for the score-provider wire protocol.

Request frame (all integers little-endian):

    magic 'SCR1' | u8 stage | u8 prompt_present | u16 T | u16 t | u16 c
    | u8 n_tensors | tensors...

    tensor: u8 role | u8 channels | u16 h | u16 w | f32 LE row-major payload
    roles: 0 = z_t, 1 = semantic, 2 = normal, 3 = depth

Response frame:

    magic 'EPS1' | u8 status | (status == 0) one tensor with role 0
                             | (status != 0) utf-8 error message
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from ..errors import ContractError, ParseError
from .conditions import ConditionSet, Stage

REQUEST_MAGIC = b"SCR1"
RESPONSE_MAGIC = b"EPS1"

ROLE_Z = 0
ROLE_SEMANTIC = 1
ROLE_NORMAL = 2
ROLE_DEPTH = 3
_ROLE_NAMES = {ROLE_Z: "z_t", ROLE_SEMANTIC: "semantic", ROLE_NORMAL: "normal",
               ROLE_DEPTH: "depth"}

_HEADER = struct.Struct("<4sBBHHHB")
_TENSOR_HEADER = struct.Struct("<BBHH")


@dataclass(frozen=True)
class ScoreRequest:
    stage: Stage
    prompt_present: bool
    T: int
    t: int
    c: int
    z: np.ndarray                       # (C, h, w) float32
    semantic: np.ndarray | None = None
    normal: np.ndarray | None = None
    depth: np.ndarray | None = None

    def condition_set(self) -> ConditionSet:
        if self.semantic is None:
            raise ContractError("request carries no semantic condition")
        return ConditionSet(semantic=self.semantic, normal=self.normal,
                            depth=self.depth, prompt_present=self.prompt_present)


def _pack_tensor(role: int, arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr, dtype="<f4")
    if arr.ndim != 3:
        raise ContractError(f"tensor role {role}: expected (C, h, w), got {arr.shape}")
    c, h, w = arr.shape
    if c > 255 or h > 65535 or w > 65535:
        raise ContractError(f"tensor role {role}: dimensions too large for the wire")
    return _TENSOR_HEADER.pack(role, c, h, w) + arr.tobytes()


def _unpack_tensor(buf: bytes, offset: int) -> tuple[int, np.ndarray, int]:
    if offset + _TENSOR_HEADER.size > len(buf):
        raise ParseError("frame truncated inside a tensor header")
    role, c, h, w = _TENSOR_HEADER.unpack_from(buf, offset)
    offset += _TENSOR_HEADER.size
    nbytes = 4 * c * h * w
    if offset + nbytes > len(buf):
        raise ParseError(f"frame truncated inside tensor payload (role {role})")
    arr = np.frombuffer(buf, dtype="<f4", count=c * h * w, offset=offset).reshape(c, h, w)
    return role, arr.copy(), offset + nbytes


def encode_request(req: ScoreRequest) -> bytes:
    tensors = [(ROLE_Z, req.z)]
    for role, arr in ((ROLE_SEMANTIC, req.semantic), (ROLE_NORMAL, req.normal),
                      (ROLE_DEPTH, req.depth)):
        if arr is not None:
            tensors.append((role, arr))
    head = _HEADER.pack(REQUEST_MAGIC, int(req.stage), int(bool(req.prompt_present)),
                        req.T, req.t, req.c, len(tensors))
    return head + b"".join(_pack_tensor(role, arr) for role, arr in tensors)


def decode_request(buf: bytes) -> ScoreRequest:
    if len(buf) < _HEADER.size:
        raise ParseError("request frame shorter than header")
    magic, stage, prompt, big_t, t, c, n_tensors = _HEADER.unpack_from(buf, 0)
    if magic != REQUEST_MAGIC:
        raise ParseError(f"bad request magic {magic!r}")
    if stage not in (0, 1):
        raise ParseError(f"unknown stage byte {stage}")
    offset = _HEADER.size
    found: dict[int, np.ndarray] = {}
    for _ in range(n_tensors):
        role, arr, offset = _unpack_tensor(buf, offset)
        if role not in _ROLE_NAMES:
            raise ParseError(f"unknown tensor role {role}")
        if role in found:
            raise ParseError(f"duplicate tensor role {role}")
        found[role] = arr
    if offset != len(buf):
        raise ParseError(f"{len(buf) - offset} trailing byte(s) after the last tensor")
    if ROLE_Z not in found:
        raise ParseError("request frame is missing the z_t tensor")
    return ScoreRequest(
        stage=Stage(stage), prompt_present=bool(prompt), T=big_t, t=t, c=c,
        z=found[ROLE_Z], semantic=found.get(ROLE_SEMANTIC),
        normal=found.get(ROLE_NORMAL), depth=found.get(ROLE_DEPTH),
    )


def encode_response(eps: np.ndarray) -> bytes:
    return RESPONSE_MAGIC + bytes([0]) + _pack_tensor(ROLE_Z, eps)


def encode_error_response(status: int, message: str) -> bytes:
    if not 1 <= status <= 255:
        raise ValueError("error status must be in [1, 255]")
    return RESPONSE_MAGIC + bytes([status]) + message.encode("utf-8")


def decode_response(buf: bytes) -> np.ndarray:
    if len(buf) < 5:
        raise ParseError("response frame shorter than header")
    if buf[:4] != RESPONSE_MAGIC:
        raise ParseError(f"bad response magic {buf[:4]!r}")
    status = buf[4]
    if status != 0:
        message = buf[5:].decode("utf-8", errors="replace") or "unspecified provider error"
        raise ContractError(f"provider returned status {status}: {message}")
    role, arr, offset = _unpack_tensor(buf, 5)
    if role != ROLE_Z:
        raise ContractError(f"response tensor has role {role}, expected 0")
    if offset != len(buf):
        raise ParseError(f"{len(buf) - offset} trailing byte(s) in response")
    return arr
