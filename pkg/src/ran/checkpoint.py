"""Bit-exact text checkpoints.

Layout::

    RAN-CKPT v1
    @config {"...": ...}                     (optional, one line of JSON)
    <name>\\t<dim> <dim> ...\\t<hex> <hex> ...  (one line per parameter)
    @end <number of parameters>

Each ``<hex>`` is the 16-digit lowercase big-endian hexadecimal encoding of
one IEEE-754 binary64 bit pattern, so values survive any platform exactly.
The ``@end`` trailer makes truncation at a line boundary detectable.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from ._io import atomic_write_text
from .errors import CheckpointVersionError, ParseError
from .tensor import Parameter, Tensor

MAGIC = "RAN-CKPT"
VERSION = "v1"


@dataclass
class Checkpoint:
    params: dict[str, Parameter]
    config: dict = field(default_factory=dict)
    version: str = VERSION


def encode_values(arr: np.ndarray) -> str:
    raw = np.ascontiguousarray(arr, dtype=">f8").tobytes().hex()
    return " ".join(raw[i : i + 16] for i in range(0, len(raw), 16))


def format_checkpoint(params: Mapping[str, Parameter | Tensor | np.ndarray], config: dict | None = None) -> str:
    lines = [f"{MAGIC} {VERSION}"]
    if config is not None:
        lines.append("@config " + json.dumps(config, sort_keys=True, separators=(",", ":")))
    for name, p in params.items():
        if any(c.isspace() for c in name):
            raise ValueError(f"parameter name {name!r} contains whitespace")
        arr = p.value.data if isinstance(p, Parameter) else (p.data if isinstance(p, Tensor) else np.asarray(p))
        shape = " ".join(str(s) for s in arr.shape)
        lines.append(f"{name}\t{shape}\t{encode_values(arr)}")
    lines.append(f"@end {len(params)}")
    return "\n".join(lines) + "\n"


def save_checkpoint(params, path, config: dict | None = None) -> None:
    atomic_write_text(path, format_checkpoint(params, config))


def parse_checkpoint(data: bytes, path=None) -> Checkpoint:
    offset = 0
    lines = []
    for raw in data.splitlines(keepends=True):
        lines.append((offset, raw))
        offset += len(raw)
    if not lines:
        raise ParseError("empty checkpoint", path=path, offset=0)

    def text(off, raw):
        try:
            return raw.decode("ascii").rstrip("\r\n")
        except UnicodeDecodeError:
            raise ParseError("non-ASCII content", path=path, offset=off) from None

    header = text(*lines[0]).split()
    if len(header) != 2 or header[0] != MAGIC:
        raise ParseError(f"not a {MAGIC} file", path=path, offset=0)
    if header[1] != VERSION:
        raise CheckpointVersionError(f"checkpoint format {header[1]} is not supported (expected {VERSION})")

    config: dict = {}
    params: dict[str, Parameter] = {}
    declared = None
    for off, raw in lines[1:]:
        line = text(off, raw)
        if declared is not None:
            if line.strip():
                raise ParseError("content after @end", path=path, offset=off)
            continue
        if not raw.endswith(b"\n"):
            raise ParseError("truncated line", path=path, offset=off + len(raw))
        if line.startswith("@config "):
            try:
                config = json.loads(line[len("@config ") :])
            except json.JSONDecodeError as exc:
                raise ParseError(f"bad config JSON: {exc.msg}", path=path, offset=off + 8 + exc.pos) from None
            continue
        if line.startswith("@end"):
            try:
                declared = int(line.split()[1])
            except (IndexError, ValueError):
                raise ParseError("malformed @end trailer", path=path, offset=off) from None
            continue
        fields = line.split("\t")
        if len(fields) != 3:
            raise ParseError("expected name, shape and values separated by tabs", path=path, offset=off)
        name, shape_txt, hex_txt = fields
        try:
            shape = tuple(int(s) for s in shape_txt.split())
        except ValueError:
            raise ParseError(f"bad shape for {name}", path=path, offset=off + len(name) + 1) from None
        tokens = hex_txt.split()
        expected = int(np.prod(shape, dtype=np.int64))
        values_off = off + len(name) + len(shape_txt) + 2
        if len(tokens) != expected:
            raise ParseError(f"{name}: {len(tokens)} values for shape {shape}", path=path, offset=values_off)
        for tok in tokens:
            if len(tok) != 16:
                raise ParseError(f"{name}: malformed value {tok!r}", path=path, offset=hex_txt.index(tok) + values_off)
        try:
            arr = np.frombuffer(bytes.fromhex("".join(tokens)), dtype=">f8").astype(np.float64).reshape(shape)
        except ValueError:
            raise ParseError(f"{name}: invalid hexadecimal", path=path, offset=values_off) from None
        if name in params:
            raise ParseError(f"duplicate parameter {name}", path=path, offset=off)
        params[name] = Parameter(name, Tensor(arr))
    if declared is None:
        raise ParseError("missing @end trailer (file truncated?)", path=path, offset=len(data))
    if declared != len(params):
        raise ParseError(f"@end declares {declared} parameters, found {len(params)}", path=path, offset=len(data))
    return Checkpoint(params=params, config=config, version=header[1])


def read_checkpoint(path) -> Checkpoint:
    return parse_checkpoint(Path(path).read_bytes(), path=path)


def load_checkpoint(path) -> dict[str, Parameter]:
    return read_checkpoint(path).params
