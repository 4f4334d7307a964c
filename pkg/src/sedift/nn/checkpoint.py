"""Versioned binary checkpoint container for network parameters.

Layout: magic "SDNN", format version (u32 LE), header-length-prefixed JSON
(architecture config plus caller metadata plus a blob directory), then one
raw little-endian float64 blob per parameter in directory order. Every blob
carries a CRC32 in the directory so truncation or corruption is caught at
load time.
"""

from __future__ import annotations

import json
import struct
import zlib

import numpy as np

from ..errors import CheckpointError
from .model import DiscriminatorNet, GeneratorConfig, GeneratorNet

MAGIC = b"SDNN"
FORMAT_VERSION = 1


def save_checkpoint(net, path, extra: dict = None):
    """Write a generator or discriminator to `path`; `extra` rides along as JSON."""
    if isinstance(net, GeneratorNet):
        kind, config = "generator", net.config.to_dict()
    elif isinstance(net, DiscriminatorNet):
        kind, config = "discriminator", net.config_dict()
    else:
        raise CheckpointError(f"cannot checkpoint object of type {type(net).__name__}")
    names = sorted(net.params)
    directory = []
    blobs = []
    for name in names:
        blob = np.ascontiguousarray(net.params[name], dtype="<f8").tobytes()
        directory.append({"name": name, "shape": list(net.params[name].shape),
                          "crc32": zlib.crc32(blob)})
        blobs.append(blob)
    header = json.dumps({"kind": kind, "config": config,
                         "extra": extra or {}, "params": directory},
                        sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path):
    """Read a checkpoint; returns (net, extra). Validates magic, version, CRCs."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(raw) < 12 or raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    version, header_len = struct.unpack("<II", raw[4:12])
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: format version {version} unsupported, this build reads {FORMAT_VERSION}")
    if len(raw) < 12 + header_len:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(raw[12:12 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from exc
    offset = 12 + header_len
    params = {}
    for entry in header["params"]:
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        nbytes = count * 8
        blob = raw[offset:offset + nbytes]
        if len(blob) != nbytes:
            raise CheckpointError(f"{path}: truncated blob for {entry['name']!r}")
        if zlib.crc32(blob) != entry["crc32"]:
            raise CheckpointError(f"{path}: checksum mismatch in {entry['name']!r}")
        params[entry["name"]] = np.frombuffer(blob, dtype="<f8").astype(np.float64) \
            .reshape(entry["shape"])
        offset += nbytes
    if offset != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - offset} trailing bytes")
    if header["kind"] == "generator":
        net = GeneratorNet(GeneratorConfig.from_dict(header["config"]), params=params)
    elif header["kind"] == "discriminator":
        net = DiscriminatorNet(params=params, **header["config"])
    else:
        raise CheckpointError(f"{path}: unknown checkpoint kind {header['kind']!r}")
    return net, header["extra"]
