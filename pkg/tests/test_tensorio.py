import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from snnpar.tensorio import FormatError, load_checkpoint, read_tensor, save_checkpoint, write_tensor

f32_arrays = hnp.arrays(np.float32, hnp.array_shapes(min_dims=0, max_dims=4, max_side=5),
                        elements=st.floats(width=32, allow_nan=False))


@settings(max_examples=40, deadline=None)
@given(arr=f32_arrays)
def test_tensor_round_trip_bit_exact(tmp_path_factory, arr):
    path = tmp_path_factory.mktemp("t") / "x.sntf"
    write_tensor(path, arr)
    back = read_tensor(path)
    assert back.shape == arr.shape and back.dtype == np.float32
    assert back.tobytes() == arr.tobytes()


def test_tensor_layout(tmp_path):
    write_tensor(tmp_path / "x.sntf", np.array([[1.5, -2.0, 0.25]], np.float32))
    raw = (tmp_path / "x.sntf").read_bytes()
    assert raw[:6] == b"SNTF1\0"
    assert np.frombuffer(raw[6:30], "<u8").tolist() == [2, 1, 3]
    assert np.frombuffer(raw[30:], "<f4").tolist() == [1.5, -2.0, 0.25]


def test_nan_and_inf_survive(tmp_path):
    arr = np.array([np.nan, np.inf, -np.inf, -0.0], np.float32)
    write_tensor(tmp_path / "x.sntf", arr)
    assert read_tensor(tmp_path / "x.sntf").tobytes() == arr.tobytes()


def test_corrupt_tensor_files(tmp_path):
    write_tensor(tmp_path / "x.sntf", np.ones((2, 2), np.float32))
    raw = (tmp_path / "x.sntf").read_bytes()
    for name, blob in [("trunc", raw[:-1]), ("extra", raw + b"\0"), ("magic", b"SNTF2\0" + raw[6:]),
                       ("empty", b"")]:
        (tmp_path / name).write_bytes(blob)
        with pytest.raises(FormatError):
            read_tensor(tmp_path / name)


def test_checkpoint_round_trip(tmp_path, rng):
    state = {"a.weight": rng.normal(size=(3, 4)).astype(np.float32), "b": np.zeros(0, np.float32),
             "scalar": np.float32(2.5) * np.ones((), np.float32), "ünï": rng.normal(size=7).astype(np.float32)}
    save_checkpoint(tmp_path / "c.snpk", state)
    back = load_checkpoint(tmp_path / "c.snpk")
    assert list(back) == list(state)
    for k in state:
        assert back[k].shape == state[k].shape and back[k].tobytes() == state[k].tobytes()
    assert not (tmp_path / "c.snpk.tmp").exists()


def test_truncated_checkpoint(tmp_path, rng):
    save_checkpoint(tmp_path / "c.snpk", {"w": rng.normal(size=10).astype(np.float32)})
    raw = (tmp_path / "c.snpk").read_bytes()
    (tmp_path / "bad.snpk").write_bytes(raw[:-4])
    with pytest.raises(FormatError):
        load_checkpoint(tmp_path / "bad.snpk")
