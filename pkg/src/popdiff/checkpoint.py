"""Checkpoint persistence: a JSON manifest plus a raw little-endian blob.

Layout of ``params.bin``: 32 bytes of SHA-256 over the canonical schema JSON,
then every tensor's row-major bytes at the offsets recorded in
``manifest.json``.  Any JSON parser plus raw byte reads can reconstruct the
network in another language; round trips are bit-exact.  Both files are
written atomically, manifest last, so an interrupted save never yields a
loadable-but-wrong checkpoint.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .diffusion import DiffusionConfig
from .ioutil import atomic_write_bytes, atomic_write_text
from .network import NetworkConfig, NetworkParams, init_params
from .schema import AttributeSchema
from .training import TrainConfig

__all__ = ["Checkpoint", "CheckpointError", "save_checkpoint", "load_checkpoint"]

FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.json"
BLOB_NAME = "params.bin"

_DTYPES = {"float32": np.dtype("<f4"), "float64": np.dtype("<f8")}


class CheckpointError(RuntimeError):
    """Missing, inconsistent, or corrupt checkpoint data."""


@dataclass
class Checkpoint:
    params: NetworkParams
    schema: AttributeSchema
    network_config: NetworkConfig
    diffusion_config: DiffusionConfig
    train_config: TrainConfig
    seed: int
    epoch: int


def _schema_digest(schema: AttributeSchema) -> bytes:
    canonical = json.dumps(
        schema.to_json_dict(), sort_keys=True, separators=(",", ":")
    ).encode("utf-8")
    return hashlib.sha256(canonical).digest()


def _dtype_name(dtype: np.dtype) -> str:
    for name, dt in _DTYPES.items():
        if dtype == dt:
            return name
    raise CheckpointError(f"unsupported tensor dtype {dtype}")


def save_checkpoint(
    directory: str | Path,
    params: NetworkParams,
    schema: AttributeSchema,
    diffusion_config: DiffusionConfig,
    train_config: TrainConfig,
    *,
    seed: int,
    epoch: int,
) -> Path:
    """Write ``manifest.json`` and ``params.bin`` under ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    digest = _schema_digest(schema)

    index = []
    chunks = [digest]
    offset = len(digest)
    for name, tensor in params.tensors.items():
        dtype = _DTYPES[_dtype_name(tensor.data.dtype)]
        raw = np.ascontiguousarray(tensor.data, dtype=dtype).tobytes()
        index.append(
            {
                "name": name,
                "shape": list(tensor.data.shape),
                "dtype": _dtype_name(tensor.data.dtype),
                "offset": offset,
                "nbytes": len(raw),
            }
        )
        chunks.append(raw)
        offset += len(raw)

    manifest = {
        "format_version": FORMAT_VERSION,
        "schema": schema.to_json_dict(),
        "schema_sha256": digest.hex(),
        "network_config": params.config.to_dict(),
        "diffusion_config": diffusion_config.to_dict(),
        "train_config": train_config.to_dict(),
        "seed": seed,
        "epoch": epoch,
        "tensors": index,
    }
    atomic_write_bytes(directory / BLOB_NAME, b"".join(chunks))
    atomic_write_text(
        directory / MANIFEST_NAME, json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    )
    return directory


def load_checkpoint(directory: str | Path) -> Checkpoint:
    """Reconstruct params and configs; validates hashes, offsets, and shapes."""
    directory = Path(directory)
    manifest_path = directory / MANIFEST_NAME
    blob_path = directory / BLOB_NAME
    if not manifest_path.exists():
        raise CheckpointError(f"no manifest at {manifest_path}")
    if not blob_path.exists():
        raise CheckpointError(f"no parameter blob at {blob_path}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"manifest is not valid JSON: {exc}") from exc
    if manifest.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"unsupported format version {manifest.get('format_version')!r}"
        )
    try:
        schema = AttributeSchema.from_json_dict(manifest["schema"])
        net_config = NetworkConfig.from_dict(manifest["network_config"])
        diff_config = DiffusionConfig.from_dict(manifest["diffusion_config"])
        train_config = TrainConfig.from_dict(manifest["train_config"])
        seed = int(manifest["seed"])
        epoch = int(manifest["epoch"])
        index = manifest["tensors"]
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"malformed manifest: {exc}") from exc

    blob = blob_path.read_bytes()
    digest = _schema_digest(schema)
    if len(blob) < len(digest):
        raise CheckpointError("parameter blob is truncated")
    if blob[: len(digest)] != digest:
        raise CheckpointError("schema hash mismatch between manifest and blob")
    if manifest.get("schema_sha256") != digest.hex():
        raise CheckpointError("manifest schema_sha256 does not match its schema")

    tensors = {}
    expected_offset = len(digest)
    for entry in index:
        try:
            name = entry["name"]
            shape = tuple(int(s) for s in entry["shape"])
            dtype = _DTYPES[entry["dtype"]]
            offset = int(entry["offset"])
            nbytes = int(entry["nbytes"])
        except (KeyError, TypeError, ValueError) as exc:
            raise CheckpointError(f"malformed tensor index entry: {exc}") from exc
        if offset != expected_offset:
            raise CheckpointError(f"tensor {name!r}: offset {offset} is not contiguous")
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        if nbytes != count * dtype.itemsize:
            raise CheckpointError(f"tensor {name!r}: nbytes does not match shape")
        if offset + nbytes > len(blob):
            raise CheckpointError(f"tensor {name!r}: extends past end of blob")
        data = np.frombuffer(blob, dtype=dtype, count=count, offset=offset)
        tensors[name] = data.reshape(shape).copy()
        expected_offset = offset + nbytes
    if expected_offset != len(blob):
        raise CheckpointError(
            f"blob has {len(blob) - expected_offset} trailing bytes"
        )

    params = init_params(net_config, schema, seed=0)
    expected_shapes = {n: t.data.shape for n, t in params.tensors.items()}
    got_shapes = {n: a.shape for n, a in tensors.items()}
    if expected_shapes != got_shapes:
        missing = sorted(set(expected_shapes) - set(got_shapes))
        surplus = sorted(set(got_shapes) - set(expected_shapes))
        if missing or surplus:
            raise CheckpointError(
                f"tensor set mismatch: missing {missing}, unexpected {surplus}"
            )
        bad = sorted(
            n for n in expected_shapes if expected_shapes[n] != got_shapes[n]
        )
        raise CheckpointError(f"tensor shape mismatch for {bad}")
    for name, array in tensors.items():
        params.tensors[name].data = array
    return Checkpoint(
        params=params,
        schema=schema,
        network_config=net_config,
        diffusion_config=diff_config,
        train_config=train_config,
        seed=seed,
        epoch=epoch,
    )
