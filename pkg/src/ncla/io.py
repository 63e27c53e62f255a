"""Embedding matrix files: raw little-endian row-major data plus a JSON sidecar."""
import json
from pathlib import Path

import numpy as np

_DTYPES = {32: "<f4", 64: "<f8"}


def sidecar_path(path):
    return Path(path).with_suffix(".json")


def write_embeddings(path, H, precision=64, source=None):
    """Write ``H`` to ``path`` (``.bin``) and its header next to it (``.json``)."""
    path = Path(path)
    H = np.ascontiguousarray(H, dtype=_DTYPES[precision])
    path.write_bytes(H.tobytes(order="C"))
    header = {"N": H.shape[0], "D": H.shape[1], "precision": precision, "byte_order": "little",
              "layout": "row-major", "source_checkpoint_sha256": source}
    sidecar_path(path).write_text(json.dumps(header, indent=2) + "\n")
    return path


def read_embeddings(path):
    path = Path(path)
    meta_path = sidecar_path(path)
    if not meta_path.is_file():
        raise FileNotFoundError(f"embedding header {meta_path} missing")
    meta = json.loads(meta_path.read_text())
    data = np.frombuffer(path.read_bytes(), dtype=_DTYPES[int(meta["precision"])])
    if data.size != meta["N"] * meta["D"]:
        raise ValueError(f"{path}: expected {meta['N']}x{meta['D']} values, found {data.size}")
    return data.reshape(meta["N"], meta["D"]).astype(np.float64), meta
