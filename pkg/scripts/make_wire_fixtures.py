#!/usr/bin/env python3
"""Regenerate the golden wire-protocol frames under fixtures/wire/.

Both the package tests and the score service tests decode these bytes and
assert the exact field values, so the files pin the protocol.
"""
from pathlib import Path

import numpy as np

from roomsplat.diffusion import Stage
from roomsplat.diffusion.wire import ScoreRequest, encode_request, encode_response


def patterned(shape, offset=0.0):
    n = int(np.prod(shape))
    return (np.arange(n, dtype=np.float32).reshape(shape) / 64.0 + offset)


def main() -> None:
    out = Path(__file__).resolve().parent.parent / "fixtures" / "wire"
    out.mkdir(parents=True, exist_ok=True)
    request = ScoreRequest(
        stage=Stage.APPEARANCE, prompt_present=True, T=1000, t=500, c=25,
        z=patterned((3, 4, 5)),
        semantic=patterned((3, 4, 5), offset=0.25),
        normal=patterned((3, 4, 5), offset=0.5),
        depth=patterned((1, 4, 5), offset=0.75),
    )
    (out / "golden_request.bin").write_bytes(encode_request(request))
    (out / "golden_response.bin").write_bytes(encode_response(patterned((3, 4, 5), offset=-1.0)))
    print(f"wrote golden frames to {out}")


if __name__ == "__main__":
    main()
