"""
Binary checkpoint of a trained model pair.

Layout::

    [8 bytes]  little-endian uint64: length of the JSON header in bytes
    [header]   UTF-8 JSON: format tag, version, model config, tensor table,
               caller extras (schema, vocabularies, ...)
    [payload]  little-endian float64 values of every tensor, in table order

Offsets in the tensor table count float64 values from the payload start.
The header is written with sorted keys so identical models produce
identical files.
"""

from __future__ import annotations

import json
import logging
import struct
from collections.abc import Mapping
from pathlib import Path
from typing import Any

import numpy as np

from .errors import DataError
from .gradcore import as_tensor
from .model import MlpConfig, ModelPair, Network

logger = logging.getLogger(__name__)

FORMAT_TAG = "adaprl-checkpoint"
FORMAT_VERSION = 1
_LENGTH = struct.Struct("<Q")


def save_checkpoint(path: str | Path, pair: ModelPair, extras: Mapping[str, Any] | None = None) -> None:
    tensors = []
    payload = []
    offset = 0
    for label, network in (("main", pair.main), ("aux", pair.aux)):
        for name, values in network.params.items():
            tensors.append({"network": label, "name": name, "shape": list(values.shape), "offset": offset})
            payload.append(np.ascontiguousarray(values, dtype="<f8").tobytes())
            offset += values.size

    header = {
        "format": FORMAT_TAG,
        "version": FORMAT_VERSION,
        "config": pair.config.to_json(),
        "tensors": tensors,
        "extras": dict(extras or {}),
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with Path(path).open("wb") as fh:
        fh.write(_LENGTH.pack(len(blob)))
        fh.write(blob)
        for chunk in payload:
            fh.write(chunk)
    logger.debug("wrote checkpoint %s (%d values)", path, offset)


def load_checkpoint(path: str | Path) -> tuple[ModelPair, dict[str, Any]]:
    """Read a checkpoint; returns the model pair and the extras mapping."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc.strerror}") from exc
    if len(raw) < _LENGTH.size:
        raise DataError(f"{path} is not a checkpoint (truncated header)")
    (length,) = _LENGTH.unpack_from(raw)
    if _LENGTH.size + length > len(raw):
        raise DataError(f"{path} is not a checkpoint (header length {length} exceeds file size)")
    try:
        header = json.loads(raw[_LENGTH.size : _LENGTH.size + length].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"{path} is not a checkpoint: {exc}") from exc
    if not isinstance(header, dict) or header.get("format") != FORMAT_TAG:
        raise DataError(f"{path} is not a checkpoint (missing format tag)")
    if header.get("version") != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {header.get('version')!r}")

    payload = np.frombuffer(raw, dtype="<f8", offset=_LENGTH.size + length)
    config = MlpConfig.from_json(header["config"])
    params: dict[str, dict[str, np.ndarray]] = {"main": {}, "aux": {}}
    for entry in header["tensors"]:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        start = int(entry["offset"])
        if start + count > payload.size:
            raise DataError(f"{path}: tensor {entry['network']}/{entry['name']} runs past the payload")
        params[entry["network"]][entry["name"]] = as_tensor(
            payload[start : start + count].astype(np.float64).reshape(entry["shape"])
        )

    pair = ModelPair(
        main=Network(config, config.n_targets, params["main"]),
        aux=Network(config, 2 * config.n_targets, params["aux"]),
    )
    return pair, dict(header.get("extras", {}))
