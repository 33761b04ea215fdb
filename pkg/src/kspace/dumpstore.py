"""Binary storage for token-labeled key-vector dumps.

One file per decoder layer, pooling the tokens of every benchmark sample.
Layout (all integers and floats little-endian):

    magic "KVD1" (4 bytes ASCII)
    layer_index : u32
    dim         : u32
    count       : u64
    sample_ids  : count x u32
    labels      : count x u8     (0 = text, 1 = image, 2 = other/special)
    data        : count x dim x f32, row-major

Total size is exactly ``20 + 5*count + 4*count*dim`` bytes. A directory of
layer files is described by ``manifest.json`` with keys ``format_version``,
``model_name``, ``benchmark_name``, ``hidden_dim`` and ``layer_files`` (an
object mapping decimal layer-index strings to relative paths).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    FormatError,
    StorageError,
    TruncationError,
    ValidationError,
)

MAGIC = b"KVD1"
HEADER_SIZE = 20
FORMAT_VERSION = 1

LABEL_TEXT = 0
LABEL_IMAGE = 1
LABEL_OTHER = 2
_VALID_LABELS = (LABEL_TEXT, LABEL_IMAGE, LABEL_OTHER)

_HEADER_DTYPE = np.dtype([("layer_index", "<u4"), ("dim", "<u4"), ("count", "<u8")])


def file_size_for(count: int, dim: int) -> int:
    """Exact on-disk size of a dump with the given shape."""
    return HEADER_SIZE + 5 * count + 4 * count * dim


@dataclass(eq=False)
class LayerDump:
    """All pooled key vectors of one decoder layer, with modality labels."""

    layer_index: int
    dim: int
    sample_ids: np.ndarray  # (count,) uint32
    labels: np.ndarray      # (count,) uint8
    data: np.ndarray        # (count, dim) float32, row-major

    @property
    def count(self) -> int:
        return int(self.data.shape[0])

    def validate(self) -> None:
        """Raise ValidationError unless every invariant holds."""
        if self.layer_index < 0:
            raise ValidationError(f"layer_index must be >= 0, got {self.layer_index}")
        if self.dim < 1:
            raise ValidationError(f"dim must be >= 1, got {self.dim}")
        if self.data.ndim != 2 or self.data.shape[1] != self.dim:
            raise ValidationError(
                f"data must be (count, {self.dim}), got shape {self.data.shape}"
            )
        n = self.count
        if self.sample_ids.shape != (n,):
            raise ValidationError(
                f"sample_ids must have length {n}, got {self.sample_ids.shape}"
            )
        if self.labels.shape != (n,):
            raise ValidationError(f"labels must have length {n}, got {self.labels.shape}")
        if n and self.sample_ids.min() < 0:
            raise ValidationError("sample_ids must be non-negative")
        if n and not np.isin(self.labels, _VALID_LABELS).all():
            bad = sorted(set(np.unique(self.labels)) - set(_VALID_LABELS))
            raise ValidationError(f"unknown label code(s) {bad}; expected 0/1/2")
        if n and not np.isfinite(self.data).all():
            raise ValidationError("data contains NaN or Inf")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, LayerDump):
            return NotImplemented
        return (
            self.layer_index == other.layer_index
            and self.dim == other.dim
            and np.array_equal(self.sample_ids, other.sample_ids)
            and np.array_equal(self.labels, other.labels)
            and self.data.dtype == other.data.dtype
            # bit-identical float comparison, NaN-free by invariant
            and self.data.tobytes() == other.data.tobytes()
        )

    def label_counts(self) -> dict[int, int]:
        """Token counts per label code (0, 1, 2)."""
        return {code: int(np.count_nonzero(self.labels == code)) for code in _VALID_LABELS}


def make_layer_dump(
    layer_index: int,
    data: np.ndarray,
    labels: np.ndarray,
    sample_ids: np.ndarray | None = None,
) -> LayerDump:
    """Build a validated LayerDump, coercing array dtypes to the wire types."""
    data = np.ascontiguousarray(data, dtype="<f4")
    labels = np.asarray(labels, dtype=np.uint8)
    if sample_ids is None:
        sample_ids = np.arange(data.shape[0], dtype="<u4")
    dump = LayerDump(
        layer_index=int(layer_index),
        dim=int(data.shape[1]),
        sample_ids=np.asarray(sample_ids, dtype="<u4"),
        labels=labels,
        data=data,
    )
    dump.validate()
    return dump


def write_layer_dump(dump: LayerDump, path: str | Path) -> None:
    """Serialize a dump; validates first so nothing is written on bad input."""
    dump.validate()
    header = np.zeros(1, dtype=_HEADER_DTYPE)
    header["layer_index"] = dump.layer_index
    header["dim"] = dump.dim
    header["count"] = dump.count
    try:
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(header.tobytes())
            fh.write(np.ascontiguousarray(dump.sample_ids, dtype="<u4").tobytes())
            fh.write(np.ascontiguousarray(dump.labels, dtype=np.uint8).tobytes())
            fh.write(np.ascontiguousarray(dump.data, dtype="<f4").tobytes())
    except OSError as exc:
        raise StorageError(f"failed to write {path}: {exc}") from exc


def read_layer_dump(path: str | Path) -> LayerDump:
    """Decode and re-validate a dump file.

    Raises FormatError on bad magic, TruncationError when the byte count
    disagrees with the header, ValidationError on bad label codes or
    non-finite data.
    """
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise StorageError(f"failed to read {path}: {exc}") from exc

    if len(raw) < HEADER_SIZE:
        raise TruncationError(f"{path}: file shorter than the {HEADER_SIZE}-byte header")
    if raw[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}, expected {MAGIC!r}")
    header = np.frombuffer(raw, dtype=_HEADER_DTYPE, count=1, offset=4)[0]
    layer_index = int(header["layer_index"])
    dim = int(header["dim"])
    count = int(header["count"])
    if dim < 1:
        raise ValidationError(f"{path}: header dim must be >= 1, got {dim}")
    expected = file_size_for(count, dim)
    if len(raw) != expected:
        raise TruncationError(
            f"{path}: size is {len(raw)} bytes but header (count={count}, dim={dim}) "
            f"implies {expected}"
        )
    offset = HEADER_SIZE
    sample_ids = np.frombuffer(raw, dtype="<u4", count=count, offset=offset).copy()
    offset += 4 * count
    labels = np.frombuffer(raw, dtype=np.uint8, count=count, offset=offset).copy()
    offset += count
    data = np.frombuffer(raw, dtype="<f4", count=count * dim, offset=offset)
    data = data.reshape(count, dim).copy()

    dump = LayerDump(
        layer_index=layer_index, dim=dim, sample_ids=sample_ids, labels=labels, data=data
    )
    dump.validate()
    return dump


@dataclass
class Manifest:
    """Index of a dump directory: which file holds which decoder layer."""

    model_name: str
    benchmark_name: str
    hidden_dim: int
    layer_files: dict[int, str]
    format_version: int = FORMAT_VERSION

    def to_json(self) -> str:
        obj = {
            "format_version": self.format_version,
            "model_name": self.model_name,
            "benchmark_name": self.benchmark_name,
            "hidden_dim": self.hidden_dim,
            "layer_files": {str(k): v for k, v in sorted(self.layer_files.items())},
        }
        return json.dumps(obj, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "Manifest":
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise FormatError(f"manifest is not valid JSON: {exc}") from exc
        try:
            return cls(
                model_name=str(obj["model_name"]),
                benchmark_name=str(obj["benchmark_name"]),
                hidden_dim=int(obj["hidden_dim"]),
                layer_files={int(k): str(v) for k, v in obj["layer_files"].items()},
                format_version=int(obj["format_version"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"manifest missing or malformed field: {exc}") from exc


MANIFEST_NAME = "manifest.json"


def write_manifest(manifest: Manifest, dump_dir: str | Path) -> Path:
    path = Path(dump_dir) / MANIFEST_NAME
    try:
        path.write_text(manifest.to_json(), encoding="utf-8")
    except OSError as exc:
        raise StorageError(f"failed to write {path}: {exc}") from exc
    return path


def read_manifest(dump_dir: str | Path) -> Manifest:
    path = Path(dump_dir) / MANIFEST_NAME
    if not path.is_file():
        raise ValidationError(f"no {MANIFEST_NAME} in {dump_dir}")
    try:
        return Manifest.from_json(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise StorageError(f"failed to read {path}: {exc}") from exc


@dataclass
class LayerSummary:
    """Per-layer token tally produced by validate_dump_dir."""

    layer_index: int
    dim: int
    n_text: int
    n_image: int
    n_other: int
    path: str

    @property
    def total(self) -> int:
        return self.n_text + self.n_image + self.n_other


@dataclass
class ValidationSummary:
    model_name: str
    benchmark_name: str
    hidden_dim: int
    layers: list[LayerSummary] = field(default_factory=list)
    errors: list[str] = field(default_factory=list)


def validate_dump_dir(dump_dir: str | Path) -> ValidationSummary:
    """Check every manifest invariant and tally tokens per layer.

    Returns the summary when the directory is fully valid; raises
    ValidationError carrying all collected problems otherwise (the partially
    filled summary is attached as ``exc.summary``).
    """
    dump_dir = Path(dump_dir)
    manifest = read_manifest(dump_dir)
    summary = ValidationSummary(
        model_name=manifest.model_name,
        benchmark_name=manifest.benchmark_name,
        hidden_dim=manifest.hidden_dim,
    )
    for layer_index, rel_path in sorted(manifest.layer_files.items()):
        path = dump_dir / rel_path
        if not path.is_file():
            summary.errors.append(f"layer {layer_index}: missing file {path}")
            continue
        try:
            dump = read_layer_dump(path)
        except (ValidationError, StorageError) as exc:
            summary.errors.append(f"layer {layer_index}: {exc}")
            continue
        if dump.layer_index != layer_index:
            summary.errors.append(
                f"layer {layer_index}: file {rel_path} embeds layer_index "
                f"{dump.layer_index}"
            )
        if dump.dim != manifest.hidden_dim:
            summary.errors.append(
                f"layer {layer_index}: dim mismatch, manifest hidden_dim="
                f"{manifest.hidden_dim} but file has dim={dump.dim}"
            )
        counts = dump.label_counts()
        summary.layers.append(
            LayerSummary(
                layer_index=layer_index,
                dim=dump.dim,
                n_text=counts[LABEL_TEXT],
                n_image=counts[LABEL_IMAGE],
                n_other=counts[LABEL_OTHER],
                path=str(rel_path),
            )
        )
    if summary.errors:
        exc = ValidationError(
            f"{dump_dir}: {len(summary.errors)} problem(s):\n  "
            + "\n  ".join(summary.errors)
        )
        exc.summary = summary  # type: ignore[attr-defined]
        raise exc
    return summary


def dump_dir_paths(dump_dir: str | Path) -> dict[int, Path]:
    """Absolute layer-file path per layer index, per the manifest."""
    dump_dir = Path(dump_dir)
    manifest = read_manifest(dump_dir)
    return {idx: dump_dir / rel for idx, rel in sorted(manifest.layer_files.items())}
