"""
Tensor Archive
Flat archive of named arrays: a readable JSON manifest followed by raw little-endian buffers
"""

import json
from pathlib import Path
from typing import Any, Dict, Tuple, Union

import numpy as np
from loguru import logger

from tensor_core.errors import ContractError

FORMAT_TAG = "DSTOY-ARCHIVE 1"


def _little_endian(array: np.ndarray) -> np.ndarray:
    array = np.ascontiguousarray(array)
    return array.astype(array.dtype.newbyteorder("<"), copy=False)


def save_archive(path: Union[str, Path], arrays: Dict[str, np.ndarray],
                 metadata: Dict[str, Any] = None) -> Path:
    """Write arrays (in sorted name order) plus JSON-serialisable metadata"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    manifest = []
    buffers = []
    offset = 0
    for name in sorted(arrays):
        array = _little_endian(np.asarray(arrays[name]))
        raw = array.tobytes(order="C")
        manifest.append({
            "name": name,
            "shape": list(array.shape),
            "dtype": array.dtype.str,
            "offset": offset,
            "nbytes": len(raw),
        })
        buffers.append(raw)
        offset += len(raw)

    header = json.dumps({"metadata": metadata or {}, "tensors": manifest},
                        indent=1, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(f"{FORMAT_TAG}\n{len(header)}\n".encode("ascii"))
        f.write(header)
        f.write(b"\n")
        for raw in buffers:
            f.write(raw)

    logger.debug(f"Wrote archive {path} with {len(manifest)} tensors ({offset} bytes)")
    return path


def load_archive(path: Union[str, Path]) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
    path = Path(path)
    with open(path, "rb") as f:
        tag = f.readline().decode("ascii", errors="replace").strip()
        if tag != FORMAT_TAG:
            raise ContractError(f"{path} is not a tensor archive (format tag '{tag}')")
        header_len = int(f.readline().decode("ascii").strip())
        header = json.loads(f.read(header_len).decode("utf-8"))
        f.read(1)
        body = f.read()

    arrays = {}
    for entry in header["tensors"]:
        start = entry["offset"]
        raw = body[start:start + entry["nbytes"]]
        array = np.frombuffer(raw, dtype=np.dtype(entry["dtype"])).reshape(entry["shape"])
        arrays[entry["name"]] = array.astype(array.dtype.newbyteorder("="), copy=True)
    return arrays, header["metadata"]
