import numpy as np
import pytest

from kappagan import store


def test_round_trip(tmp_path):
    arrays = {"a": np.arange(12, dtype=np.float64).reshape(3, 4), "b": np.array([1, -2], dtype=np.int64),
              "empty": np.zeros((0, 2))}
    store.write_container(tmp_path / "x.bin", {"kind": "demo", "n": 3}, arrays)
    header, back = store.read_container(tmp_path / "x.bin")
    assert header == {"kind": "demo", "n": 3}
    for k, v in arrays.items():
        assert back[k].dtype == v.dtype and np.array_equal(back[k], v)


def test_rejects_foreign_and_truncated(tmp_path):
    (tmp_path / "bad.bin").write_bytes(b"not a container")
    with pytest.raises(store.ContainerError):
        store.read_container(tmp_path / "bad.bin")
    store.write_container(tmp_path / "x.bin", {}, {"a": np.ones(4)})
    blob = (tmp_path / "x.bin").read_bytes()
    (tmp_path / "y.bin").write_bytes(blob + b"\0")
    with pytest.raises(store.ContainerError):
        store.read_container(tmp_path / "y.bin")


def test_atomic_write_leaves_no_temp_files(tmp_path):
    store.atomic_write_text(tmp_path / "out.txt", "hello\n")
    assert [p.name for p in tmp_path.iterdir()] == ["out.txt"]
