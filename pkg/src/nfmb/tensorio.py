"""NFMB binary tensor format.

Layout (all little-endian): magic bytes ``NFMB``, format version u32, then
M, N, P, Q as u32, then the row-major tensor as interleaved real/imag
float64. A JSON sidecar ``<path>.json`` carries the metadata dict.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .channel import ChannelTensor

MAGIC = b"NFMB"
VERSION = 1


class TensorFormatError(ValueError):
    """Raised on malformed tensor files."""


def _atomic_write_bytes(path, payload: bytes):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str):
    _atomic_write_bytes(path, text.encode("utf-8"))


def sidecar_path(path) -> Path:
    return Path(str(path) + ".json")


def save_tensor(path, tensor: ChannelTensor):
    """Write the tensor and its JSON sidecar atomically."""
    header = MAGIC + struct.pack(
        "<5I", VERSION, tensor.m_tx, tensor.n_rx, tensor.n_subbands, tensor.n_frames
    )
    interleaved = np.empty((tensor.data.size, 2), dtype="<f8")
    flat = tensor.data.ravel()
    interleaved[:, 0] = flat.real
    interleaved[:, 1] = flat.imag
    _atomic_write_bytes(path, header + interleaved.tobytes())
    atomic_write_text(
        sidecar_path(path), json.dumps(tensor.meta, indent=2, sort_keys=True) + "\n"
    )


def load_tensor(path) -> ChannelTensor:
    """Read a tensor written by :func:`save_tensor`; sidecar is optional."""
    raw = Path(path).read_bytes()
    if len(raw) < 24:
        raise TensorFormatError(f"{path}: truncated header")
    if raw[:4] != MAGIC:
        raise TensorFormatError(f"{path}: bad magic {raw[:4]!r}, expected {MAGIC!r}")
    version, m_tx, n_rx, n_sub, n_frames = struct.unpack("<5I", raw[4:24])
    if version != VERSION:
        raise TensorFormatError(f"{path}: unsupported format version {version}")
    count = m_tx * n_rx * n_sub * n_frames
    expected = 24 + 16 * count
    if len(raw) != expected:
        raise TensorFormatError(
            f"{path}: payload is {len(raw)} bytes, expected {expected}"
        )
    interleaved = np.frombuffer(raw, dtype="<f8", offset=24).reshape(count, 2)
    data = (interleaved[:, 0] + 1j * interleaved[:, 1]).reshape(
        m_tx * n_rx, n_sub * n_frames
    )
    meta = {}
    sp = sidecar_path(path)
    if sp.exists():
        meta = json.loads(sp.read_text())
    return ChannelTensor(
        data=data,
        m_tx=m_tx,
        n_rx=n_rx,
        n_subbands=n_sub,
        n_frames=n_frames,
        meta=meta,
    )
