"""Frame codec for the scoring protocol (service-side implementation).

Request frame (little-endian):

    magic 'SCR1' | u8 stage | u8 prompt_present | u16 T | u16 t | u16 c
    | u8 n_tensors | tensors...
    tensor: u8 role | u8 channels | u16 h | u16 w | f32 LE row-major payload
    roles: 0 = z_t, 1 = semantic, 2 = normal, 3 = depth

Response frame: magic 'EPS1' | u8 status | (ok) tensor role 0
                                         | (error) utf-8 message
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

REQUEST_MAGIC = b"SCR1"
RESPONSE_MAGIC = b"EPS1"

ROLE_NAMES = {0: "z", 1: "semantic", 2: "normal", 3: "depth"}

_HEADER = struct.Struct("<4sBBHHHB")
_TENSOR = struct.Struct("<BBHH")


class FrameError(ValueError):
    """Malformed frame."""


@dataclass(frozen=True)
class Request:
    stage: int
    prompt_present: bool
    T: int
    t: int
    c: int
    tensors: dict  # role name -> (C, h, w) float32 array


def decode_request(buf: bytes) -> Request:
    if len(buf) < _HEADER.size:
        raise FrameError("request shorter than header")
    magic, stage, prompt, big_t, t, c, n_tensors = _HEADER.unpack_from(buf, 0)
    if magic != REQUEST_MAGIC:
        raise FrameError(f"bad magic {magic!r}")
    if stage not in (0, 1):
        raise FrameError(f"unknown stage {stage}")
    offset = _HEADER.size
    tensors = {}
    for _ in range(n_tensors):
        if offset + _TENSOR.size > len(buf):
            raise FrameError("truncated tensor header")
        role, channels, h, w = _TENSOR.unpack_from(buf, offset)
        offset += _TENSOR.size
        if role not in ROLE_NAMES:
            raise FrameError(f"unknown tensor role {role}")
        name = ROLE_NAMES[role]
        if name in tensors:
            raise FrameError(f"duplicate tensor role {role}")
        count = channels * h * w
        if offset + 4 * count > len(buf):
            raise FrameError(f"truncated payload for role {role}")
        tensors[name] = np.frombuffer(buf, dtype="<f4", count=count,
                                      offset=offset).reshape(channels, h, w).copy()
        offset += 4 * count
    if offset != len(buf):
        raise FrameError(f"{len(buf) - offset} trailing byte(s)")
    if "z" not in tensors:
        raise FrameError("missing z_t tensor")
    return Request(stage=stage, prompt_present=bool(prompt), T=big_t, t=t, c=c,
                   tensors=tensors)


def encode_response(eps: np.ndarray) -> bytes:
    eps = np.ascontiguousarray(eps, dtype="<f4")
    if eps.ndim != 3:
        raise FrameError(f"response tensor must be (C, h, w), got {eps.shape}")
    c, h, w = eps.shape
    return (RESPONSE_MAGIC + bytes([0]) + _TENSOR.pack(0, c, h, w) + eps.tobytes())


def encode_error(status: int, message: str) -> bytes:
    return RESPONSE_MAGIC + bytes([status & 0xFF]) + message.encode("utf-8")


def encode_request(stage: int, prompt_present: bool, T: int, t: int, c: int,
                   tensors: dict) -> bytes:
    """Inverse of decode_request, mainly for tests and client tooling."""
    role_ids = {v: k for k, v in ROLE_NAMES.items()}
    parts = []
    order = ["z", "semantic", "normal", "depth"]
    present = [name for name in order if tensors.get(name) is not None]
    for name in present:
        arr = np.ascontiguousarray(tensors[name], dtype="<f4")
        ch, h, w = arr.shape
        parts.append(_TENSOR.pack(role_ids[name], ch, h, w) + arr.tobytes())
    head = _HEADER.pack(REQUEST_MAGIC, stage, int(bool(prompt_present)), T, t, c,
                        len(present))
    return head + b"".join(parts)
