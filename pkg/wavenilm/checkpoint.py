"""Versioned checkpoint container for trained networks

Layout: 8-byte magic, uint32 version, uint32 header length (little endian),
UTF-8 JSON header with sorted keys, then every parameter array in declaration
order as little-endian 32-bit floats. The header echoes the network
configuration, carries caller metadata (scenario, scales, load names), and a
manifest of parameter names and shapes. Identical parameters and metadata give
identical bytes.
"""

import json
import logging
import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointError, ConfigError
from .network import Network, NetworkConfig

logger = logging.getLogger(__name__)

MAGIC = b"WNILMCKP"
VERSION = 1
_PREFIX = struct.Struct("<8sII")


def encode_checkpoint(network, metadata=None):
    """Return the checkpoint bytes for *network*"""
    params = network.parameters()
    header = {
        "network": network.config.to_dict(),
        "metadata": metadata or {},
        "manifest": [[name, list(values.shape)] for name, values in params.items()],
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode(
        "utf-8"
    )
    chunks = [_PREFIX.pack(MAGIC, VERSION, len(header_bytes)), header_bytes]
    for values in params.values():
        chunks.append(np.ascontiguousarray(values, dtype="<f4").tobytes())
    return b"".join(chunks)


def decode_checkpoint(payload, dtype=np.float64):
    """Return (network, metadata) from checkpoint bytes"""
    if len(payload) < _PREFIX.size:
        raise CheckpointError("checkpoint is truncated (no header)")
    magic, version, header_length = _PREFIX.unpack_from(payload)
    if magic != MAGIC:
        raise CheckpointError("not a wavenilm checkpoint (bad magic)")
    if version != VERSION:
        raise CheckpointError(
            f"checkpoint version {version} is not supported (expected {VERSION})"
        )
    start = _PREFIX.size
    try:
        header = json.loads(payload[start : start + header_length].decode("utf-8"))
        config = NetworkConfig.from_dict(header["network"])
    except (ValueError, KeyError, ConfigError) as error:
        raise CheckpointError(f"checkpoint header is corrupted: {error}") from None
    network = Network(config, dtype=dtype)
    params = network.parameters()
    manifest = [(name, tuple(shape)) for name, shape in header.get("manifest", [])]
    expected = [(name, values.shape) for name, values in params.items()]
    if manifest != expected:
        raise CheckpointError("checkpoint manifest does not match its network config")
    offset = start + header_length
    for name, values in params.items():
        size = values.size * 4
        if offset + size > len(payload):
            raise CheckpointError(f"checkpoint is truncated in parameter {name}")
        stored = np.frombuffer(payload, dtype="<f4", count=values.size, offset=offset)
        values[...] = stored.reshape(values.shape)
        offset += size
    if offset != len(payload):
        raise CheckpointError("checkpoint has trailing bytes after the parameters")
    return network, header.get("metadata", {})


def save_checkpoint(path, network, metadata=None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_checkpoint(network, metadata))
    logger.debug("wrote checkpoint %s", path)
    return path


def load_checkpoint(path, dtype=np.float64):
    """Return (network, metadata) stored in the file at *path*"""
    path = Path(path)
    try:
        payload = path.read_bytes()
    except OSError as error:
        raise CheckpointError(f"cannot read checkpoint {path}: {error}") from None
    return decode_checkpoint(payload, dtype=dtype)
