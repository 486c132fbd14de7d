"""Deterministic binary checkpoints.

Layout (all integers little-endian):

+ bytes 0..3    magic ``BSNK``
+ bytes 4..7    format version (u32, currently 1)
+ bytes 8..15   header length H (u64)
+ H bytes       UTF-8 JSON header: ``{"networks": {name: {"sizes": [...],
                "activations": [...]}}, "scalars": {...}, "strings": {...}}``
                with sorted keys and no whitespace
+ rest          raw little-endian float64 parameter payload: for each
                network name in sorted order, each layer in order, the
                weight matrix (C order) followed by the bias vector

The same inputs always produce the same bytes (no timestamps, no
compression), and ``load(save(x)) == x`` bit-exactly.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Mapping, Optional

import numpy as np

from .core import Layer, Network

MAGIC = b"BSNK"
VERSION = 1


class CheckpointError(ValueError):
    """Unreadable or structurally invalid checkpoint file."""


def _header_bytes(
    networks: Mapping[str, Network],
    scalars: Mapping[str, float],
    strings: Mapping[str, str],
) -> bytes:
    header = {
        "networks": {
            name: {
                "sizes": net.layer_sizes(),
                "activations": [l.activation for l in net.layers],
            }
            for name, net in networks.items()
        },
        "scalars": {k: float(v) for k, v in scalars.items()},
        "strings": {k: str(v) for k, v in strings.items()},
    }
    return json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")


def save_bundle(
    path: Path | str,
    networks: Mapping[str, Network],
    scalars: Optional[Mapping[str, float]] = None,
    strings: Optional[Mapping[str, str]] = None,
) -> None:
    """Write networks plus scalar/string metadata to one checkpoint file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = _header_bytes(networks, scalars or {}, strings or {})
    chunks = [MAGIC, struct.pack("<I", VERSION), struct.pack("<Q", len(header)), header]
    for name in sorted(networks):
        for layer in networks[name].layers:
            chunks.append(layer.w.astype("<f8", copy=False).tobytes(order="C"))
            chunks.append(layer.b.astype("<f8", copy=False).tobytes(order="C"))
    path.write_bytes(b"".join(chunks))


def load_bundle(
    path: Path | str,
) -> tuple[dict[str, Network], dict[str, float], dict[str, str]]:
    """Read a checkpoint; returns (networks, scalars, strings)."""
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < 16 or blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    (version,) = struct.unpack("<I", blob[4:8])
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    (hlen,) = struct.unpack("<Q", blob[8:16])
    if 16 + hlen > len(blob):
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(blob[16 : 16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: bad header: {exc}") from None

    offset = 16 + hlen
    networks: dict[str, Network] = {}
    for name in sorted(header.get("networks", {})):
        desc = header["networks"][name]
        sizes = desc["sizes"]
        activations = desc["activations"]
        if len(activations) != len(sizes) - 1:
            raise CheckpointError(f"{path}: network {name}: sizes/activations mismatch")
        layers = []
        for n_in, n_out, act in zip(sizes, sizes[1:], activations):
            need = (n_out * n_in + n_out) * 8
            if offset + need > len(blob):
                raise CheckpointError(f"{path}: truncated payload in network {name}")
            w = np.frombuffer(blob, dtype="<f8", count=n_out * n_in, offset=offset)
            offset += n_out * n_in * 8
            b = np.frombuffer(blob, dtype="<f8", count=n_out, offset=offset)
            offset += n_out * 8
            layers.append(
                Layer(
                    w=np.ascontiguousarray(w.reshape(n_out, n_in)),
                    b=np.ascontiguousarray(b),
                    activation=act,
                )
            )
        networks[name] = Network(layers=tuple(layers))
    if offset != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - offset} trailing bytes")
    return networks, dict(header.get("scalars", {})), dict(header.get("strings", {}))


def save_network(net: Network, path: Path | str) -> None:
    """Single-network convenience wrapper around :func:`save_bundle`."""
    save_bundle(path, {"net": net})


def load_network(path: Path | str) -> Network:
    """Inverse of :func:`save_network`; bit-exact."""
    networks, _, _ = load_bundle(path)
    if set(networks) != {"net"}:
        raise CheckpointError(f"{path}: expected a single-network checkpoint")
    return networks["net"]
