"""Binary channel-ensemble files (``SIMCHAN1``), little-endian.

Layout::

    magic   8 bytes  b"SIMCHAN1"
    u32     version (= 1)
    u32     N
    u32     K
    u32     ensemble_count
    per ensemble:
        u64        placement_id
        u64        realization_id
        K x f64    beta
        N*K x (f64 re, f64 im)   H, row-major
"""
from __future__ import annotations

import struct
from pathlib import Path
from typing import Sequence

import numpy as np

from .channel import ChannelEnsemble

MAGIC = b"SIMCHAN1"
VERSION = 1
_HEADER = struct.Struct("<8sIIII")


class ChannelFormatError(ValueError):
    pass


class ChannelDimensionError(ValueError):
    pass


def _record_dtype(N: int, K: int) -> np.dtype:
    return np.dtype([
        ("placement_id", "<u8"),
        ("realization_id", "<u8"),
        ("beta", "<f8", (K,)),
        ("H", "<c16", (N, K)),
    ])


def export_channels(ensembles: Sequence[ChannelEnsemble], path) -> None:
    if not ensembles:
        raise ChannelDimensionError("nothing to export")
    N, K = ensembles[0].H.shape
    rec = np.zeros(len(ensembles), dtype=_record_dtype(N, K))
    for i, ens in enumerate(ensembles):
        if ens.H.shape != (N, K):
            raise ChannelDimensionError(f"ensemble {i} has shape {ens.H.shape}, expected {(N, K)}")
        rec[i] = (ens.placement_id, ens.realization_id, ens.beta, ens.H)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, N, K, len(ensembles)))
        fh.write(rec.tobytes())


def import_channels(path, expected_N: int | None = None, expected_K: int | None = None) -> list[ChannelEnsemble]:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ChannelFormatError(f"truncated header: {len(data)} bytes, need {_HEADER.size}")
    magic, version, N, K, count = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise ChannelFormatError(f"bad magic {magic!r} at offset 0, expected {MAGIC!r}")
    if version != VERSION:
        raise ChannelFormatError(f"unsupported version {version} at offset 8")
    dtype = _record_dtype(N, K)
    expected_len = _HEADER.size + count * dtype.itemsize
    if len(data) != expected_len:
        raise ChannelFormatError(
            f"file is {len(data)} bytes but header declares N={N}, K={K}, "
            f"{count} ensembles ({expected_len} bytes)"
        )
    if expected_N is not None and N != expected_N:
        raise ChannelDimensionError(f"file has N={N}, configuration expects N={expected_N}")
    if expected_K is not None and K != expected_K:
        raise ChannelDimensionError(f"file has K={K}, configuration expects K={expected_K}")
    rec = np.frombuffer(data, dtype=dtype, count=count, offset=_HEADER.size)
    return [
        ChannelEnsemble(
            H=np.array(r["H"], dtype=np.complex128),
            beta=np.array(r["beta"], dtype=float),
            placement_id=int(r["placement_id"]),
            realization_id=int(r["realization_id"]),
        )
        for r in rec
    ]
