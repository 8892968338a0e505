"""Versioned checkpoint container.

Layout: an 8-byte magic, a little-endian uint32 header length, a JSON
header, then the raw bytes of every array (C order, little-endian
float64) in the order the header declares. The header carries a
format version, the full model config, normalization stats, optional
calibration stats, a sha256 digest of the payload, and caller-supplied
metadata. Nothing time- or host-dependent is written, so identical
runs produce identical files.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import NormStats
from .errors import InputError
from .model import (
    DiscriminatorParams,
    GeneratorParams,
    ModelConfig,
    discriminator_array_names,
    generator_array_names,
)

MAGIC = b"FLOWCKPT"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    config: ModelConfig
    generator: GeneratorParams
    discriminator: DiscriminatorParams
    norm_stats: NormStats
    calibration: dict | None = None
    meta: dict | None = None


def _calibration_to_dict(cal) -> dict | None:
    if cal is None:
        return None
    if isinstance(cal, dict):
        return cal
    return cal.to_dict()


def save_checkpoint(
    path,
    config: ModelConfig,
    generator: GeneratorParams,
    discriminator: DiscriminatorParams,
    norm_stats: NormStats,
    calibration=None,
    meta: dict | None = None,
) -> Path:
    gen_names = generator_array_names(config)
    disc_names = discriminator_array_names(config)
    if set(gen_names) != set(generator.arrays):
        raise InputError("generator arrays do not match the config's layout")
    if set(disc_names) != set(discriminator.arrays):
        raise InputError("discriminator arrays do not match the config's layout")

    manifest = []
    chunks = []
    for group, names, arrays in (
        ("generator", gen_names, generator.arrays),
        ("discriminator", disc_names, discriminator.arrays),
    ):
        for name in names:
            arr = np.ascontiguousarray(arrays[name], dtype="<f8")
            if not np.all(np.isfinite(arr)):
                raise InputError(f"array '{name}' contains non-finite values")
            manifest.append({"group": group, "name": name, "shape": list(arr.shape)})
            chunks.append(arr.tobytes())
    payload = b"".join(chunks)

    header = {
        "format_version": FORMAT_VERSION,
        "model_config": config.to_dict(),
        "norm_stats": norm_stats.to_dict(),
        "calibration": _calibration_to_dict(calibration),
        "arrays": manifest,
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
        "meta": meta or {},
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(len(blob).to_bytes(4, "little"))
        fh.write(blob)
        fh.write(payload)
    return path


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise InputError(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    if raw[:8] != MAGIC:
        raise InputError(f"not a checkpoint file: {path}")
    hlen = int.from_bytes(raw[8:12], "little")
    header = json.loads(raw[12 : 12 + hlen].decode())
    if header.get("format_version") != FORMAT_VERSION:
        raise InputError(
            f"unsupported checkpoint format version {header.get('format_version')}"
        )
    payload = raw[12 + hlen :]
    if hashlib.sha256(payload).hexdigest() != header["payload_sha256"]:
        raise InputError("checkpoint payload digest mismatch; file is corrupted")

    config = ModelConfig.from_dict(header["model_config"])
    gen = GeneratorParams()
    disc = DiscriminatorParams()
    offset = 0
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 8
        arr = np.frombuffer(payload[offset : offset + nbytes], dtype="<f8").reshape(shape)
        offset += nbytes
        target = gen.arrays if entry["group"] == "generator" else disc.arrays
        target[entry["name"]] = np.array(arr)  # own, writable copy
    if offset != len(payload):
        raise InputError("checkpoint payload size does not match its manifest")

    return Checkpoint(
        config=config,
        generator=gen,
        discriminator=disc,
        norm_stats=NormStats.from_dict(header["norm_stats"]),
        calibration=header.get("calibration"),
        meta=header.get("meta") or {},
    )
