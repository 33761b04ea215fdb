import numpy as np
import pytest

from kspace_extract.dumpwriter import write_layer_file, write_manifest


def test_byte_layout_matches_consumer_writer(tmp_path):
    """Independent writers must produce identical bytes for identical dumps."""
    from kspace.dumpstore import make_layer_dump, write_layer_dump

    rng = np.random.default_rng(0)
    data = rng.normal(size=(257, 12)).astype(np.float32)
    labels = rng.integers(0, 3, size=257).astype(np.uint8)
    ids = rng.integers(0, 40, size=257).astype("<u4")

    ours = tmp_path / "ours.kvd"
    write_layer_file(ours, 3, data, labels, ids)
    theirs = tmp_path / "theirs.kvd"
    write_layer_dump(make_layer_dump(3, data, labels, ids), theirs)
    assert ours.read_bytes() == theirs.read_bytes()


def test_size_law(tmp_path):
    data = np.zeros((10, 7), dtype=np.float32)
    path = tmp_path / "x.kvd"
    write_layer_file(path, 0, data, np.zeros(10, np.uint8), np.zeros(10, "<u4"))
    assert path.stat().st_size == 20 + 5 * 10 + 4 * 10 * 7


def test_zero_count_file(tmp_path):
    path = tmp_path / "empty.kvd"
    write_layer_file(
        path, 2, np.zeros((0, 32), np.float32), np.zeros(0, np.uint8), np.zeros(0, "<u4")
    )
    assert path.stat().st_size == 20
    from kspace.dumpstore import read_layer_dump

    dump = read_layer_dump(path)
    assert dump.count == 0 and dump.dim == 32 and dump.layer_index == 2


def test_rejects_bad_inputs(tmp_path):
    path = tmp_path / "bad.kvd"
    with pytest.raises(ValueError):
        write_layer_file(path, 0, np.zeros((2, 2), np.float32),
                         np.array([0, 9], np.uint8), np.zeros(2, "<u4"))
    nan = np.zeros((2, 2), np.float32)
    nan[0, 0] = np.nan
    with pytest.raises(ValueError):
        write_layer_file(path, 0, nan, np.zeros(2, np.uint8), np.zeros(2, "<u4"))


def test_manifest_readable_by_consumer(tmp_path):
    from kspace.dumpstore import read_manifest

    write_manifest(tmp_path, "model-x", "bench-y", 32, {0: "layer0.kvd"})
    manifest = read_manifest(tmp_path)
    assert manifest.model_name == "model-x"
    assert manifest.hidden_dim == 32
    assert manifest.layer_files == {0: "layer0.kvd"}
