"""Verification against externally produced golden test vectors.

A goldens directory holds ``manifest.json`` plus portable tensor files.
Manifest schema::

    {"version": 1,
     "cases": [{"id": str, "op": str,
                "inputs":  {name: filename},   # differentiable leaves
                "params":  {name: filename},   # module parameters
                "attrs":   {...},              # op hyper-parameters
                "expected": {name: filename},  # forward outputs
                "expected_grads": {name: filename},  # d(sum of outputs)/d(name)
                "tol_forward": float, "tol_grad": float}],
     "hashes": {filename: sha256 hex}}

Gradient convention: the scalar probe is the plain element sum of every
declared output, in manifest order.
"""

from __future__ import annotations

import hashlib
import json
import os

import numpy as np

from . import tensor as T
from .config import FmtConfig
from .errors import ContractError, IoError
from .layers import (AttnResBlock, DmiParams, IdnPredictor, adain, dmi_forward,
                     fmt, idn_forward)
from .losses import gradient_match
from .metrics import GaussianStats, frechet_distance, gram_l2
from .nn import Conv2d, Linear
from .tensor import Tensor
from .tensorio import load_tensor


def _leaf(arr):
    return Tensor(arr, requires_grad=True)


def _load_module(module, params):
    for name, p in module.named_parameters():
        if name not in params:
            raise ContractError(f"golden case missing parameter {name}")
        if params[name].shape != p.data.shape:
            raise ContractError(f"golden parameter {name} shape {params[name].shape} "
                                f"!= {p.data.shape}")
        p.data = params[name].astype(np.float32)
    return module


def _pool_chain(x: Tensor) -> Tensor:
    size = x.data.shape[2]
    while size > 10:
        x = T.max_pool2d(x, 5, 3)
        size = x.data.shape[2]
    return T.adaptive_avg_pool2d(x, 4, 4)


def _run_conv2d(inputs, params, attrs):
    x = _leaf(inputs["x"])
    conv = Conv2d(np.random.default_rng(0), 1, 1, 1)
    conv.weight.data = params["weight"].astype(np.float32)
    conv.bias.data = params["bias"].astype(np.float32)
    conv.stride = int(attrs.get("stride", 1))
    conv.padding = int(attrs.get("padding", 0))
    return {"out": conv(x)}, {"x": x, "weight": conv.weight, "bias": conv.bias}


def _run_pooling_chain(inputs, params, attrs):
    x = _leaf(inputs["x"])
    return {"out": _pool_chain(x)}, {"x": x}


def _run_instance_stats(inputs, params, attrs):
    x = _leaf(inputs["x"])
    mu, sigma = T.instance_stats(x)
    return {"mu": mu, "sigma": sigma}, {"x": x}


def _run_adain(inputs, params, attrs):
    f = _leaf(inputs["f"])
    mu = _leaf(inputs["mu_style"])
    sigma = _leaf(inputs["sigma_style"])
    out = adain(f, mu, sigma, float(attrs.get("eps", 1e-5)))
    return {"out": out}, {"f": f, "mu_style": mu, "sigma_style": sigma}


def _run_dmi(inputs, params, attrs):
    f = _leaf(inputs["f"])
    mask = Tensor(inputs["mask"])
    p = DmiParams(f.data.shape[1])
    _load_module(p, params)
    leaves = {"f": f}
    leaves.update(dict(p.named_parameters()))
    return {"out": dmi_forward(f, mask, p)}, leaves


def _run_fmt(inputs, params, attrs):
    f = Tensor(inputs["f"])
    cfg = FmtConfig(resolutions=(f.data.shape[2],))
    out = fmt(f, Tensor(inputs["style_sketch"]), Tensor(inputs["input_sketch"]), cfg)
    return {"out": out}, {}


def _run_idn(inputs, params, attrs):
    f = _leaf(inputs["f"])
    pred = IdnPredictor(np.random.default_rng(0), f.data.shape[1], f.data.shape[2])
    _load_module(pred, params)
    mu, sigma, content = idn_forward(f, pred, float(attrs.get("eps", 1e-5)))
    leaves = {"f": f}
    leaves.update(dict(pred.named_parameters()))
    return {"mu": mu, "sigma": sigma, "content": content}, leaves


def _run_attn_res_block(inputs, params, attrs):
    f = _leaf(inputs["f"])
    v = _leaf(inputs["v"])
    block = AttnResBlock(np.random.default_rng(0), f.data.shape[1],
                         params["gate.weight"].shape[1])
    _load_module(block, params)
    leaves = {"f": f, "v": v}
    leaves.update(dict(block.named_parameters()))
    return {"out": block(f, v)}, leaves


def _run_gradient_match(inputs, params, attrs):
    a = _leaf(inputs["a"])
    b = _leaf(inputs["b"])
    return {"out": gradient_match(a, b)}, {"a": a, "b": b}


def _run_gram_l2(inputs, params, attrs):
    val = gram_l2(inputs["a"], inputs["b"])
    return {"out": Tensor(np.float32(val))}, {}


def _run_frechet(inputs, params, attrs):
    sa = GaussianStats(inputs["mean_a"].astype(np.float64), inputs["cov_a"].astype(np.float64))
    sb = GaussianStats(inputs["mean_b"].astype(np.float64), inputs["cov_b"].astype(np.float64))
    return {"out": Tensor(np.float32(frechet_distance(sa, sb)))}, {}


RUNNERS = {
    "conv2d": _run_conv2d,
    "pooling_chain": _run_pooling_chain,
    "instance_stats": _run_instance_stats,
    "adain": _run_adain,
    "dmi": _run_dmi,
    "fmt": _run_fmt,
    "idn": _run_idn,
    "attn_res_block": _run_attn_res_block,
    "gradient_match": _run_gradient_match,
    "gram_l2": _run_gram_l2,
    "frechet_distance": _run_frechet,
}


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def run_case(case: dict, root) -> dict:
    """Execute one golden case; returns a result row with max errors."""
    op = case["op"]
    if op not in RUNNERS:
        raise ContractError(f"unknown golden op {op!r}")
    load = lambda fname: load_tensor(os.path.join(root, fname))
    inputs = {k: load(v) for k, v in case.get("inputs", {}).items()}
    params = {k: load(v) for k, v in case.get("params", {}).items()}
    outputs, leaves = RUNNERS[op](inputs, params, case.get("attrs", {}))

    fwd_err = 0.0
    for name, fname in case["expected"].items():
        want = load(fname)
        got = outputs[name].data
        if got.shape != want.shape:
            raise ContractError(f"{case['id']}: output {name} shape {got.shape} "
                                f"!= expected {want.shape}")
        fwd_err = max(fwd_err, float(np.abs(got.astype(np.float64) - want).max()))

    grad_err = 0.0
    exp_grads = case.get("expected_grads", {})
    if exp_grads:
        loss = None
        for name in case["expected"]:
            s = T.tsum(outputs[name])
            loss = s if loss is None else T.add(loss, s)
        for leaf in leaves.values():
            leaf.grad = None
        T.backward(loss)
        for name, fname in exp_grads.items():
            want = load(fname)
            got = leaves[name].grad
            got = np.zeros_like(want) if got is None else got
            grad_err = max(grad_err, float(np.abs(got.astype(np.float64) - want).max()))

    ok = fwd_err <= case["tol_forward"] and grad_err <= case.get("tol_grad", 0.0)
    return {"id": case["id"], "op": op, "forward_err": fwd_err,
            "grad_err": grad_err, "ok": ok}


def verify_manifest(manifest_path) -> list:
    """Check file hashes, run every case; returns result rows."""
    root = os.path.dirname(os.path.abspath(manifest_path))
    try:
        with open(manifest_path) as f:
            manifest = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise IoError(f"cannot read goldens manifest {manifest_path}: {e}")
    for fname, want in manifest.get("hashes", {}).items():
        got = _sha256(os.path.join(root, fname))
        if got != want:
            raise ContractError(f"goldens file {fname} hash mismatch: {got} != {want}")
    return [run_case(c, root) for c in manifest["cases"]]
