"""JSON-lines dataset files, manifests, and the array wire format.

Arrays travel as {"shape": [...], "data": [flat row-major]} so every reader
can validate shapes.  All JSON is emitted with sorted keys and compact
separators, which makes identical content byte-identical on disk.
"""

from __future__ import annotations

import hashlib
import json
import os
from typing import Iterable, Iterator, List

import numpy as np


def encode_array(arr: np.ndarray) -> dict:
    arr = np.asarray(arr)
    return {"shape": list(arr.shape), "data": arr.astype(np.float64).reshape(-1).tolist()}


def decode_array(obj: dict) -> np.ndarray:
    shape = tuple(int(s) for s in obj["shape"])
    data = np.asarray(obj["data"], dtype=np.float64)
    if data.size != int(np.prod(shape)):
        raise ValueError(f"array payload has {data.size} values, shape {shape} "
                         f"needs {int(np.prod(shape))}")
    return data.reshape(shape)


def dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def write_json(path: str, obj) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(dumps(obj))
        fh.write("\n")
    os.replace(tmp, path)


def read_json(path: str):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def write_jsonl(path: str, records: Iterable[dict]) -> int:
    """Write records one per line; returns the number written."""
    n = 0
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(dumps(rec))
            fh.write("\n")
            n += 1
    os.replace(tmp, path)
    return n


def read_jsonl(path: str) -> Iterator[dict]:
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield json.loads(line)


def sha256_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()
