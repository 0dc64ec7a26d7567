"""Generator-side checks: emission determinism, manifest integrity,
tensor-file round-trips, and reference-kernel sanity."""

import json
import os

import numpy as np
import pytest
import torch

from goldenvec import IntegrityError, emit_goldens, verify_manifest
from goldenvec import refops
from goldenvec.tensorfile import read_tensor, write_tensor


@pytest.fixture(scope="module")
def emitted(tmp_path_factory):
    out = tmp_path_factory.mktemp("goldens")
    manifest_path = emit_goldens(7, str(out))
    return out, manifest_path


def test_emission_deterministic(emitted, tmp_path):
    out, _ = emitted
    emit_goldens(7, str(tmp_path))
    for name in sorted(os.listdir(out)):
        a = (out / name).read_bytes()
        b = (tmp_path / name).read_bytes()
        assert a == b, f"{name} differs between same-seed emissions"


def test_three_cases_per_op(emitted):
    _, manifest_path = emitted
    with open(manifest_path) as f:
        manifest = json.load(f)
    per_op = {}
    for case in manifest["cases"]:
        per_op[case["op"]] = per_op.get(case["op"], 0) + 1
    assert set(per_op) == {"conv2d", "pooling_chain", "instance_stats", "adain",
                           "dmi", "fmt", "idn", "attn_res_block",
                           "gradient_match", "gram_l2", "frechet_distance"}
    assert all(n >= 3 for n in per_op.values()), per_op


def test_fresh_directory_verifies(emitted):
    out, _ = emitted
    info = verify_manifest(str(out))
    assert info["cases"] >= 33


def test_flipped_byte_fails_naming_file(emitted, tmp_path):
    out, _ = emitted
    for name in os.listdir(out):
        (tmp_path / name).write_bytes((out / name).read_bytes())
    victim = sorted(n for n in os.listdir(out) if n.endswith(".tns"))[0]
    raw = bytearray((tmp_path / victim).read_bytes())
    raw[-1] ^= 0xFF
    (tmp_path / victim).write_bytes(bytes(raw))
    with pytest.raises(IntegrityError, match=victim.replace(".", r"\.")):
        verify_manifest(str(tmp_path))


def test_empty_dir_missing_manifest(tmp_path):
    with pytest.raises(IntegrityError, match="missing manifest"):
        verify_manifest(str(tmp_path))


def test_tensorfile_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    for shape in [(), (3,), (2, 3, 4, 5)]:
        arr = rng.standard_normal(shape).astype(np.float32)
        path = tmp_path / "t.tns"
        write_tensor(path, arr)
        back = read_tensor(path)
        assert back.shape == arr.shape
        assert np.array_equal(back, arr)


def test_dmi_identity_params():
    rng = np.random.default_rng(1)
    f = torch.from_numpy(rng.standard_normal((2, 3, 4, 4)).astype(np.float32))
    mask = torch.from_numpy((rng.random((2, 1, 4, 4)) < 0.5).astype(np.float32))
    one = torch.ones((3, 1, 1))
    zero = torch.zeros((3, 1, 1))
    out = refops.dmi(f, mask, one, zero, one, zero)
    assert torch.equal(out, f)


def test_adain_hits_target_moments():
    rng = np.random.default_rng(2)
    f = torch.from_numpy(rng.standard_normal((1, 4, 8, 8)).astype(np.float32))
    mu = torch.from_numpy(rng.standard_normal((1, 4, 1, 1)).astype(np.float32))
    sigma = torch.rand((1, 4, 1, 1)) + 0.5
    out = refops.adain(f, mu, sigma)
    got_mu, got_sigma = refops.channel_stats(out)
    assert torch.allclose(got_mu, mu, atol=1e-4)
    assert torch.allclose(got_sigma, sigma, atol=1e-3)


def test_fmt_preserves_constants():
    rng = np.random.default_rng(3)
    f = torch.full((1, 2, 16, 16), 1.5)
    for _ in range(3):
        s1 = torch.from_numpy((rng.random((1, 1, 16, 16)) < 0.4).astype(np.float32))
        s2 = torch.from_numpy((rng.random((1, 1, 16, 16)) < 0.4).astype(np.float32))
        out = refops.fmt(f, s1, s2)
        assert torch.equal(out, f)


def test_fmt_zero_input_sketch_is_tiled_plain(emitted):
    rng = np.random.default_rng(4)
    f = torch.from_numpy(rng.standard_normal((1, 1, 16, 16)).astype(np.float32))
    sk = torch.from_numpy((rng.random((1, 1, 16, 16)) < 0.3).astype(np.float32))
    zero = torch.zeros((1, 1, 16, 16))
    out = refops.fmt(f, sk, zero)
    # every 4x4 tile block must be constant
    blocks = out.reshape(1, 1, 4, 4, 4, 4)
    assert (blocks.amax(dim=(3, 5)) == blocks.amin(dim=(3, 5))).all()


def test_frechet_one_dimensional_value():
    val = refops.frechet_distance(np.zeros(1), np.ones((1, 1)),
                                  np.ones(1), np.full((1, 1), 4.0))
    assert abs(val - 2.0) < 1e-9


def test_gram_l2_self_is_zero():
    rng = np.random.default_rng(5)
    a = rng.standard_normal((1, 3, 5, 5)).astype(np.float32)
    assert refops.gram_l2(a, a) == 0.0
