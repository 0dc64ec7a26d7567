"""Portable tensor format and checkpoint serialization contracts."""

import numpy as np
import pytest

from sketchstyle.config import TrainConfig
from sketchstyle.errors import IoError
from sketchstyle.nn import Conv2d, Linear, Module
from sketchstyle.tensorio import (CKPT_MAGIC, MAGIC, load_checkpoint,
                                  load_tensor, restore_params, save_checkpoint,
                                  save_tensor, tensor_from_bytes,
                                  tensor_to_bytes)


def test_tensor_bytes_layout():
    arr = np.arange(6, dtype=np.float32).reshape(2, 3)
    raw = tensor_to_bytes(arr)
    assert raw[:8] == MAGIC
    # dtype code 0, ndim 2, dims 2 and 3, then 6 little-endian floats
    assert raw[8:12] == b"\x00\x00\x00\x00"
    assert raw[12:16] == b"\x02\x00\x00\x00"
    assert raw[16:24] == b"\x02\x00\x00\x00\x03\x00\x00\x00"
    assert len(raw) == 24 + 6 * 4
    np.testing.assert_array_equal(np.frombuffer(raw[24:], dtype="<f4").reshape(2, 3), arr)


@pytest.mark.parametrize("shape", [(), (1,), (3, 4), (2, 3, 4, 5)])
def test_tensor_roundtrip_bit_exact(tmp_path, shape):
    rng = np.random.default_rng([233, len(shape)])
    arr = rng.standard_normal(shape).astype(np.float32)
    p = tmp_path / "t.bin"
    save_tensor(arr, p)
    back = load_tensor(p)
    assert back.dtype == np.float32 and back.shape == arr.shape
    np.testing.assert_array_equal(back, arr)


def test_tensor_preserves_non_finite_values(tmp_path):
    arr = np.array([np.inf, -np.inf, np.nan, 0.0], np.float32)
    p = tmp_path / "t.bin"
    save_tensor(arr, p)
    np.testing.assert_array_equal(np.isnan(load_tensor(p)), np.isnan(arr))


def test_tensor_bad_magic_raises(tmp_path):
    p = tmp_path / "t.bin"
    p.write_bytes(b"NOTMAGIC" + b"\x00" * 16)
    with pytest.raises(IoError):
        load_tensor(p)


def test_tensor_truncation_and_trailing_raise(tmp_path):
    raw = tensor_to_bytes(np.ones((2, 2), np.float32))
    p = tmp_path / "t.bin"
    p.write_bytes(raw[:-3])
    with pytest.raises(IoError):
        load_tensor(p)
    p.write_bytes(raw + b"\x00")
    with pytest.raises(IoError):
        load_tensor(p)


def test_tensor_unsupported_dtype_code_raises():
    raw = bytearray(tensor_to_bytes(np.ones(2, np.float32)))
    raw[8] = 7
    with pytest.raises(IoError):
        tensor_from_bytes(bytes(raw))


class TwoLayer(Module):
    def __init__(self, seed=0):
        rng = np.random.default_rng(seed)
        self.conv = Conv2d(rng, 2, 3, 3, padding=1)
        self.fc = Linear(rng, 4, 2)


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    m = TwoLayer(seed=1)
    p = tmp_path / "m.ckpt"
    cfg = TrainConfig(seed=5)
    save_checkpoint(p, m.named_parameters(), cfg.to_dict(), step=17, seed=5)
    manifest, tensors = load_checkpoint(p)
    assert manifest["step"] == 17 and manifest["seed"] == 5
    assert TrainConfig.from_dict(manifest["config"]).seed == 5
    m2 = TwoLayer(seed=2)
    restore_params(m2, tensors)
    for (na, pa), (nb, pb) in zip(m.named_parameters(), m2.named_parameters()):
        assert na == nb
        np.testing.assert_array_equal(pa.data, pb.data)


def test_checkpoint_bad_magic_raises(tmp_path):
    p = tmp_path / "m.ckpt"
    p.write_bytes(b"WRONGMAG" + b"\x00" * 32)
    with pytest.raises(IoError):
        load_checkpoint(p)


def test_restore_missing_or_mismatched_params_raise(tmp_path):
    m = TwoLayer()
    with pytest.raises(IoError):
        restore_params(m, {})
    wrong = {n: np.zeros((1, 1), np.float32) for n, _ in m.named_parameters()}
    with pytest.raises(IoError):
        restore_params(m, wrong)


def test_checkpoint_magic_distinct_from_tensor_magic():
    assert MAGIC != CKPT_MAGIC and len(MAGIC) == len(CKPT_MAGIC) == 8
