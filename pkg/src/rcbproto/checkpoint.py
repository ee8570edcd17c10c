"""Model checkpoints: a text header followed by a little-endian float64 blob.

Header::

    RCBPROTO-CHECKPOINT 1
    [config]
    H = 80
    ...
    [params]
    <name> <comma-separated shape> <byte offset into blob>
    ...
    [end]
"""
from __future__ import annotations

import os
from typing import Union

import numpy as np

from .embedder import ModelConfig, ModelParams, check_params, params_from_arrays

MAGIC_LINE = "RCBPROTO-CHECKPOINT"
VERSION = 1
END = b"[end]\n"


class CheckpointError(ValueError):
    pass


def dumps(params: ModelParams, config: ModelConfig) -> bytes:
    check_params(params, config)
    lines = [f"{MAGIC_LINE} {VERSION}", "[config]"]
    lines += [f"{k} = {v}" for k, v in config.as_dict().items()]
    lines.append("[params]")
    chunks = []
    offset = 0
    for name, t in params.named_tensors():
        shape = ",".join(str(n) for n in t.shape)
        lines.append(f"{name} {shape} {offset}")
        raw = np.ascontiguousarray(t.data, dtype="<f8").tobytes()
        chunks.append(raw)
        offset += len(raw)
    header = ("\n".join(lines) + "\n").encode("ascii") + END
    return header + b"".join(chunks)


def loads(blob: bytes) -> tuple[ModelParams, ModelConfig]:
    first, _, _ = blob.partition(b"\n")
    parts = first.decode("ascii", errors="replace").split()
    if len(parts) != 2 or parts[0] != MAGIC_LINE:
        raise CheckpointError("bad magic: not a checkpoint file")
    if parts[1] != str(VERSION):
        raise CheckpointError(f"unsupported checkpoint version {parts[1]}")
    end = blob.find(b"\n" + END)
    if end < 0:
        raise CheckpointError("truncated: header terminator missing")
    header = blob[: end + 1].decode("ascii", errors="replace").splitlines()[1:]
    data = blob[end + 1 + len(END) :]

    section = None
    cfg: dict[str, str] = {}
    table = []
    for line in header:
        if line in ("[config]", "[params]"):
            section = line
        elif section == "[config]":
            key, sep, value = line.partition("=")
            if not sep:
                raise CheckpointError(f"bad config line {line!r}")
            cfg[key.strip()] = value.strip()
        elif section == "[params]":
            try:
                name, shape, offset = line.split(" ")
                dims = tuple(int(n) for n in shape.split(",")) if shape else ()
                table.append((name, dims, int(offset)))
            except ValueError as exc:
                raise CheckpointError(f"bad parameter line {line!r}") from exc
        else:
            raise CheckpointError(f"unexpected header line {line!r}")
    try:
        config = ModelConfig.from_dict(cfg)
    except (TypeError, ValueError) as exc:
        raise CheckpointError(f"invalid config: {exc}") from exc

    arrays = {}
    for name, dims, offset in table:
        count = int(np.prod(dims)) if dims else 1
        if offset < 0 or offset + 8 * count > len(data):
            raise CheckpointError(f"truncated: block {name} runs past the end of the blob")
        arrays[name] = np.frombuffer(data, dtype="<f8", count=count, offset=offset).reshape(dims).copy()
    try:
        params = params_from_arrays(arrays)
        check_params(params, config)
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"parameters inconsistent with config: {exc}") from exc
    return params, config


def save(path: Union[str, os.PathLike], params: ModelParams, config: ModelConfig) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(params, config))


def load(path: Union[str, os.PathLike]) -> tuple[ModelParams, ModelConfig]:
    with open(path, "rb") as fh:
        return loads(fh.read())
