import numpy as np
import pytest

from kspace.dumpstore import (
    HEADER_SIZE,
    LABEL_IMAGE,
    LABEL_TEXT,
    LayerDump,
    Manifest,
    file_size_for,
    make_layer_dump,
    read_layer_dump,
    read_manifest,
    validate_dump_dir,
    write_layer_dump,
    write_manifest,
)
from kspace.errors import (
    FormatError,
    KspaceError,
    StorageError,
    TruncationError,
    ValidationError,
)
from kspace.rng import make_rng
from kspace.synth import generate_dump, make_spec

def test_file_size_small_example(tmp_path):
    dump = make_layer_dump(
        0,
        np.zeros((2, 3), dtype=np.float32),
        np.array([0, 1], dtype=np.uint8),
        np.array([0, 1], dtype="<u4"),
    )
    path = tmp_path / "layer0.kvd"
    write_layer_dump(dump, path)
    assert path.stat().st_size == 54  # 20 header + 8 ids + 2 labels + 24 data
    assert file_size_for(2, 3) == 54


def test_round_trip_bit_identical(tmp_path):
    gen = make_rng(99)
    data = gen.normal(size=(1000, 64)).astype(np.float32)
    labels = gen.integers(0, 3, size=1000).astype(np.uint8)
    dump = make_layer_dump(7, data, labels)
    path = tmp_path / "layer7.kvd"
    write_layer_dump(dump, path)
    loaded = read_layer_dump(path)
    assert loaded == dump
    assert loaded.data.tobytes() == data.tobytes()


def test_nan_rejected_nothing_written(tmp_path):
    data = np.zeros((3, 2), dtype=np.float32)
    data[1, 0] = np.nan
    dump = LayerDump(
        layer_index=0,
        dim=2,
        sample_ids=np.zeros(3, dtype="<u4"),
        labels=np.zeros(3, dtype=np.uint8),
        data=data,
    )
    path = tmp_path / "bad.kvd"
    with pytest.raises(ValidationError):
        write_layer_dump(dump, path)
    assert not path.exists()


def test_bad_magic(tmp_path, random_dump):
    path = tmp_path / "x.kvd"
    dump = random_dump(1)
    write_layer_dump(dump, path)
    raw = bytearray(path.read_bytes())
    raw[:4] = b"XXXX"
    path.write_bytes(bytes(raw))
    with pytest.raises(FormatError, match="KVD1"):
        read_layer_dump(path)


def test_truncation_detected(tmp_path, random_dump):
    path = tmp_path / "x.kvd"
    dump = random_dump(2, count=10, dim=4)
    write_layer_dump(dump, path)
    raw = path.read_bytes()
    # keep the header claiming count=10 but drop half the payload
    path.write_bytes(raw[: HEADER_SIZE + 5 * 10 + 4 * 5 * 4])
    with pytest.raises(TruncationError):
        read_layer_dump(path)


def test_unknown_label_code(tmp_path, random_dump):
    path = tmp_path / "x.kvd"
    dump = random_dump(3, count=5, dim=2)
    write_layer_dump(dump, path)
    raw = bytearray(path.read_bytes())
    raw[HEADER_SIZE + 4 * 5] = 9  # first label byte
    path.write_bytes(bytes(raw))
    with pytest.raises(ValidationError, match="label"):
        read_layer_dump(path)


def test_size_law_randomized_shapes(tmp_path):
    gen = make_rng(42)
    for trial in range(25):
        count = int(gen.integers(0, 10_000))
        dim = int(gen.integers(1, 257))
        data = gen.normal(size=(count, dim)).astype(np.float32)
        labels = gen.integers(0, 3, size=count).astype(np.uint8)
        dump = make_layer_dump(trial, data, labels)
        path = tmp_path / f"t{trial}.kvd"
        write_layer_dump(dump, path)
        assert path.stat().st_size == HEADER_SIZE + 5 * count + 4 * count * dim
        assert read_layer_dump(path) == dump


def test_decoding_is_total_under_fuzz(tmp_path, random_dump):
    """Every mutated/truncated byte string either decodes or raises a KspaceError."""
    gen = make_rng(7)
    base_path = tmp_path / "base.kvd"
    write_layer_dump(random_dump(11, count=30, dim=3), base_path)
    base = base_path.read_bytes()
    target = tmp_path / "fuzz.kvd"
    for _ in range(200):
        raw = bytearray(base)
        mode = gen.integers(0, 3)
        if mode == 0:
            raw = raw[: gen.integers(0, len(raw))]
        elif mode == 1:
            pos = int(gen.integers(0, len(raw)))
            raw[pos] = int(gen.integers(0, 256))
        else:
            raw = bytearray(gen.integers(0, 256, size=int(gen.integers(0, 200))).astype(np.uint8).tobytes())
        target.write_bytes(bytes(raw))
        try:
            dump = read_layer_dump(target)
            dump.validate()
        except KspaceError:
            pass  # categorized rejection is the expected outcome


def test_manifest_round_trip(tmp_path):
    manifest = Manifest(
        model_name="m", benchmark_name="b", hidden_dim=16,
        layer_files={0: "layer0.kvd", 3: "layer3.kvd"},
    )
    write_manifest(manifest, tmp_path)
    loaded = read_manifest(tmp_path)
    assert loaded == manifest


def test_validate_dump_dir_counts(tmp_path):
    spec = make_spec("separated", n_img=1000, n_txt=1000, seed=5, layers=[0, 2])
    generate_dump(spec, tmp_path)
    summary = validate_dump_dir(tmp_path)
    assert len(summary.layers) == 2
    for layer in summary.layers:
        assert layer.n_image == 1000
        assert layer.n_text == 1000
        assert layer.n_other == 0


def test_validate_missing_file(tmp_path):
    spec = make_spec("identical", n_img=10, n_txt=10, seed=1, layers=[0])
    generate_dump(spec, tmp_path)
    (tmp_path / "layer0.kvd").unlink()
    with pytest.raises(ValidationError, match="missing file"):
        validate_dump_dir(tmp_path)


def test_validate_dim_mismatch(tmp_path):
    spec = make_spec("identical", n_img=10, n_txt=10, dim=4, seed=1, layers=[0])
    generate_dump(spec, tmp_path)
    manifest = read_manifest(tmp_path)
    manifest.hidden_dim = 512
    write_manifest(manifest, tmp_path)
    with pytest.raises(ValidationError, match="dim mismatch"):
        validate_dump_dir(tmp_path)


def test_validate_embedded_layer_index_mismatch(tmp_path):
    spec = make_spec("identical", n_img=10, n_txt=10, dim=4, seed=1, layers=[0])
    generate_dump(spec, tmp_path)
    manifest = read_manifest(tmp_path)
    manifest.layer_files = {5: "layer0.kvd"}
    write_manifest(manifest, tmp_path)
    with pytest.raises(ValidationError, match="embeds layer_index"):
        validate_dump_dir(tmp_path)


def test_read_missing_file_is_storage_error(tmp_path):
    with pytest.raises(StorageError):
        read_layer_dump(tmp_path / "nope.kvd")


def test_label_counts():
    dump = make_layer_dump(
        0,
        np.zeros((4, 2), dtype=np.float32),
        np.array([LABEL_TEXT, LABEL_IMAGE, LABEL_IMAGE, 2], dtype=np.uint8),
    )
    counts = dump.label_counts()
    assert counts == {0: 1, 1: 2, 2: 1}
