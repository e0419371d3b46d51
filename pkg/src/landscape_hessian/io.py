"""On-disk formats: parameter files, CSV tables and run manifests."""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from . import __version__
from .nn import MlpConfig, MlpParams

PARAMS_MAGIC = b"LSHP"
PARAMS_VERSION = 1
# magic, version, n, h, L, K, bias flag, P
_HEADER = struct.Struct("<4sIIIIIIQ")


class ParamsFormatError(ValueError):
    pass


def save_params(params: MlpParams, path) -> None:
    c = params.config
    theta = params.flatten()
    header = _HEADER.pack(PARAMS_MAGIC, PARAMS_VERSION, c.input_dim, c.hidden_dim, c.num_layers,
                          c.num_classes, int(c.bias), theta.size)
    Path(path).write_bytes(header + theta.astype("<f8").tobytes())


def load_params(path) -> MlpParams:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ParamsFormatError(f"{path}: file too short for a parameter header")
    magic, version, n, h, L, K, bias, count = _HEADER.unpack_from(raw)
    if magic != PARAMS_MAGIC:
        raise ParamsFormatError(f"{path}: bad magic {magic!r}")
    if version != PARAMS_VERSION:
        raise ParamsFormatError(f"{path}: unsupported version {version}")
    config = MlpConfig(n, h, L, K, bool(bias))
    if count != config.num_params or len(raw) != _HEADER.size + 8 * count:
        raise ParamsFormatError(f"{path}: parameter count does not match the stored config")
    theta = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).astype(np.float64)
    return MlpParams.from_flat(config, theta)


def fmt(value) -> str:
    """17 significant digits, enough to round-trip a double."""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return format(float(value), ".17g")


def write_csv(path, header: list[str], rows, comments: list[str] = (), trailer: list[str] = ()) -> None:
    """Plain comma-separated output with ``\\n`` line endings.

    ``comments`` go before the header and ``trailer`` after the rows, each
    prefixed with ``#``.
    """
    lines = [f"# {c}" for c in comments]
    lines.append(",".join(header))
    lines.extend(",".join(fmt(v) for v in row) for row in rows)
    lines.extend(f"#{t}" for t in trailer)
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def file_fingerprint(paths) -> dict:
    h = hashlib.sha256()
    length = 0
    for p in paths:
        raw = Path(p).read_bytes()
        length += len(raw)
        h.update(raw)
    return {"length": length, "sha256": h.hexdigest()}


def write_manifest(path, command: str, parameters: dict, seed: int, dataset: dict, duration: float) -> dict:
    manifest = {
        "command": command,
        "parameters": parameters,
        "seed": seed,
        "version": __version__,
        "dataset": dataset,
        "wall_clock_seconds": duration,
    }
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return manifest
