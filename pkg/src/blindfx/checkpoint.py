"""JSON checkpoint envelope shared by operators, denoisers and discriminators.

Floats are written with ``repr`` precision, so a save/load round trip is
bit-exact.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

FORMAT = "blindfx-checkpoint"
VERSION = 1


class CheckpointError(ValueError):
    pass


def dumps(kind: str, config: dict, params, extra: dict | None = None) -> str:
    record = {
        "format": FORMAT,
        "version": VERSION,
        "kind": kind,
        "config": config,
        "params": np.asarray(params, dtype=np.float64).tolist(),
    }
    if extra:
        record["extra"] = extra
    return json.dumps(record, sort_keys=True)


def save(path, kind: str, config: dict, params, extra: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(dumps(kind, config, params, extra))
    os.replace(tmp, path)
    return path


def load(path, expect_kind: str | None = None) -> dict:
    try:
        record = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if record.get("format") != FORMAT:
        raise CheckpointError(f"{path} is not a {FORMAT} file")
    if record.get("version") != VERSION:
        raise CheckpointError(f"{path}: unsupported version {record.get('version')}")
    if expect_kind is not None and record["kind"] != expect_kind:
        raise CheckpointError(f"{path}: holds a '{record['kind']}' model, expected '{expect_kind}'")
    record["params"] = np.asarray(record["params"], dtype=np.float64)
    return record
