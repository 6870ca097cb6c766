"""Binary network checkpoints.

Layout (all integers little-endian)::

    offset  size  field
    0       8     magic  b"GDROPCK\\0"
    8       4     u32 format version (1)
    12      4     u32 length L of the JSON header
    16      L     UTF-8 JSON: {"spec": <NetworkSpec dict>, "meta": {...}}
    16+L    4     u32 number of tensor entries E
    ...           E entries, each:
                    u16 name length, name (UTF-8),
                    u8 ndim, ndim x u32 dims,
                    u64 byte offset into the data section, u64 element count
    ...           data section: float64 little-endian blobs

Entry names are ``<layer>/weight``, ``<layer>/bias`` and ``gate/<site>``.
A copy of the JSON header is written next to the checkpoint as
``<path>.json`` for humans; loading only reads the binary file.
"""

import json
import struct
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from .errors import GenDropoutError
from .gates import GateParams
from .network import INPUT_SITE, Network, NetworkSpec

__all__ = ["MAGIC", "VERSION", "CheckpointError", "save_checkpoint", "load_checkpoint"]

MAGIC = b"GDROPCK\0"
VERSION = 1


class CheckpointError(GenDropoutError, ValueError):
    pass


def _entries(net: Network):
    for name, w, b in zip(net.layer_names, net.weights, net.biases):
        yield f"{name}/weight", w
        yield f"{name}/bias", b
    for site in net.gate_sites():
        yield f"gate/{site}", net.gates[site].k


def save_checkpoint(net: Network, path, meta: Optional[dict] = None) -> None:
    header = json.dumps({"spec": net.spec.to_dict(), "meta": meta or {}}, indent=2, sort_keys=True)
    hbytes = header.encode("utf-8")
    table, blobs, offset = [], [], 0
    for name, arr in _entries(net):
        arr = np.ascontiguousarray(arr, dtype="<f8")
        nb = name.encode("utf-8")
        table.append(struct.pack("<H", len(nb)) + nb + struct.pack("<B", arr.ndim)
                     + struct.pack(f"<{arr.ndim}I", *arr.shape) + struct.pack("<QQ", offset, arr.size))
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<II", VERSION, len(hbytes)) + hbytes)
        fh.write(struct.pack("<I", len(table)))
        for entry in table:
            fh.write(entry)
        for blob in blobs:
            fh.write(blob)
    Path(f"{path}.json").write_text(header + "\n")


def load_checkpoint(path) -> Tuple[Network, dict]:
    """Return ``(network, meta)``."""
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version, hlen = struct.unpack_from("<II", raw, 8)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    pos = 16
    header = json.loads(raw[pos:pos + hlen].decode("utf-8"))
    pos += hlen
    (count,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    entries = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", raw, pos)
        pos += 2
        name = raw[pos:pos + nlen].decode("utf-8")
        pos += nlen
        (ndim,) = struct.unpack_from("<B", raw, pos)
        pos += 1
        dims = struct.unpack_from(f"<{ndim}I", raw, pos)
        pos += 4 * ndim
        off, size = struct.unpack_from("<QQ", raw, pos)
        pos += 16
        entries[name] = (dims, off, size)
    data_start = pos

    def tensor(name):
        if name not in entries:
            raise CheckpointError(f"{path}: missing tensor '{name}'")
        dims, off, size = entries[name]
        start = data_start + off
        if start + 8 * size > len(raw):
            raise CheckpointError(f"{path}: tensor '{name}' runs past end of file")
        return np.frombuffer(raw, dtype="<f8", count=size, offset=start).astype(np.float64).reshape(dims)

    spec = NetworkSpec.from_dict(header["spec"])
    names = spec.layer_names()
    weights = [tensor(f"{n}/weight") for n in names]
    biases = [tensor(f"{n}/bias") for n in names]
    gates = {}
    sites = ([INPUT_SITE] if spec.input_gate is not None else []) + [
        n for n, l in zip(names, spec.layers) if l.gate is not None]
    for site in sites:
        gspec = spec.input_gate if site == INPUT_SITE else spec.layers[names.index(site)].gate
        gates[site] = GateParams(tensor(f"gate/{site}"), gspec.granularity, site)
    return Network(spec, weights, biases, gates), header.get("meta", {})
