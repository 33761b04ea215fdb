"""Standalone writer for the kspace layer-dump interchange format.

Implements the byte layout independently of the analysis package so the
producer and consumer stay decoupled; the format is the contract:

    magic "KVD1" | layer_index u32 | dim u32 | count u64
    | sample_ids count*u32 | labels count*u8 | data count*dim*f32 row-major

(all little-endian; file size = 20 + 5*count + 4*count*dim), plus a
``manifest.json`` carrying format_version, model_name, benchmark_name,
hidden_dim and the layer_files map.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"KVD1"
FORMAT_VERSION = 1

LABEL_TEXT = 0
LABEL_IMAGE = 1
LABEL_OTHER = 2


def write_layer_file(
    path: str | Path,
    layer_index: int,
    data: np.ndarray,
    labels: np.ndarray,
    sample_ids: np.ndarray,
) -> None:
    """Serialize one layer's pooled token vectors."""
    data = np.ascontiguousarray(data, dtype="<f4")
    if data.ndim != 2:
        raise ValueError(f"data must be 2-D, got shape {data.shape}")
    count, dim = data.shape
    labels = np.ascontiguousarray(labels, dtype=np.uint8)
    sample_ids = np.ascontiguousarray(sample_ids, dtype="<u4")
    if labels.shape != (count,) or sample_ids.shape != (count,):
        raise ValueError("labels/sample_ids length must equal the data row count")
    if count and not np.isin(labels, (LABEL_TEXT, LABEL_IMAGE, LABEL_OTHER)).all():
        raise ValueError("labels must be 0 (text), 1 (image) or 2 (other)")
    if count and not np.isfinite(data).all():
        raise ValueError("data contains NaN or Inf")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IIQ", layer_index, dim, count))
        fh.write(sample_ids.tobytes())
        fh.write(labels.tobytes())
        fh.write(data.tobytes())


def write_manifest(
    dump_dir: str | Path,
    model_name: str,
    benchmark_name: str,
    hidden_dim: int,
    layer_files: dict[int, str],
) -> Path:
    path = Path(dump_dir) / "manifest.json"
    obj = {
        "format_version": FORMAT_VERSION,
        "model_name": model_name,
        "benchmark_name": benchmark_name,
        "hidden_dim": hidden_dim,
        "layer_files": {str(k): v for k, v in sorted(layer_files.items())},
    }
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path
