"""Golden case emission.

``emit_goldens(seed, out_dir)`` writes portable tensor files plus
``manifest.json`` describing every case: op name, input/parameter/expected
file names, op attributes, and tolerances.  Expected values are always
computed from the float32-quantized tensors actually stored on disk, and
the gradient convention is: scalar probe = plain element sum of every
declared output, in manifest order.

Forward tolerance is 1e-4 absolute (0 for cases that must be bit-exact);
gradient tolerance is declared per case as 1e-3 relative to the largest
expected-gradient magnitude (floored at 1).
"""

from __future__ import annotations

import hashlib
import json
import os

import numpy as np
import torch

from . import refops
from .tensorfile import write_tensor

TOL_FORWARD = 1e-4
TOL_GRAD_REL = 1e-3


def _sketch(rng, shape, p=0.3):
    return (rng.random(shape) < p).astype(np.float32)


def _normal(rng, shape):
    return rng.standard_normal(shape).astype(np.float32)


# ---------------------------------------------------------------------------
# case builders: each returns
#   (inputs, params, attrs, compute, grad_leaves, tol_forward)
# where compute(tensors) -> ordered {name: np.ndarray} of outputs and
# grad_leaves lists the leaf names to differentiate (empty = forward-only).
# ---------------------------------------------------------------------------

def _torch_case(compute_t):
    """Wrap a torch-graph builder into (outputs, grads) evaluation."""

    def run(inputs, params, grad_leaves):
        tensors = {k: torch.from_numpy(v.copy()) for k, v in {**inputs, **params}.items()}
        for name in grad_leaves:
            tensors[name].requires_grad_(True)
        outputs = compute_t(tensors)
        grads = {}
        if grad_leaves:
            loss = sum(o.sum() for o in outputs.values())
            loss.backward()
            for name in grad_leaves:
                g = tensors[name].grad
                grads[name] = (np.zeros_like(inputs.get(name, params.get(name)))
                               if g is None else g.detach().numpy())
        return {k: o.detach().numpy() for k, o in outputs.items()}, grads

    return run


def _conv_cases(rng, k):
    n, cin, cout, kernel, stride, padding, size = [
        (2, 3, 4, 3, 1, 1, 8), (1, 2, 3, 3, 2, 0, 7), (2, 1, 2, 1, 1, 0, 5)][k]
    inputs = {"x": _normal(rng, (n, cin, size, size))}
    params = {"weight": _normal(rng, (cout, cin, kernel, kernel)) * 0.3,
              "bias": _normal(rng, (cout,))}
    attrs = {"stride": stride, "padding": padding}

    def compute(t):
        return {"out": torch.nn.functional.conv2d(
            t["x"], t["weight"], t["bias"], stride=stride, padding=padding)}

    return inputs, params, attrs, _torch_case(compute), ["x", "weight", "bias"], TOL_FORWARD


def _pool_cases(rng, k):
    size = (16, 32, 64)[k]
    inputs = {"x": _normal(rng, (1, 2, size, size))}
    return (inputs, {}, {}, _torch_case(lambda t: {"out": refops.pooling_chain(t["x"])}),
            ["x"], TOL_FORWARD)


def _stats_cases(rng, k):
    shape = [(1, 3, 6, 6), (2, 2, 5, 7), (3, 1, 4, 4)][k]
    inputs = {"x": _normal(rng, shape)}

    def compute(t):
        mu, sigma = refops.channel_stats(t["x"])
        return {"mu": mu, "sigma": sigma}

    return inputs, {}, {}, _torch_case(compute), ["x"], TOL_FORWARD


def _adain_cases(rng, k):
    if k == 0:
        # one channel [1,2,3,4] re-normalized to mu=10 sigma=2
        inputs = {"f": np.arange(1.0, 5.0, dtype=np.float32).reshape(1, 1, 2, 2),
                  "mu_style": np.full((1, 1, 1, 1), 10.0, np.float32),
                  "sigma_style": np.full((1, 1, 1, 1), 2.0, np.float32)}
    else:
        shape = [(1, 2, 4, 4), (2, 3, 5, 5)][k - 1]
        inputs = {"f": _normal(rng, shape),
                  "mu_style": _normal(rng, (shape[0], shape[1], 1, 1)),
                  "sigma_style": np.abs(_normal(rng, (shape[0], shape[1], 1, 1))) + 0.5}

    def compute(t):
        return {"out": refops.adain(t["f"], t["mu_style"], t["sigma_style"])}

    return (inputs, {}, {"eps": refops.EPS}, _torch_case(compute),
            ["f", "mu_style", "sigma_style"], TOL_FORWARD)


def _dmi_cases(rng, k):
    leaves = ["f", "w_c", "b_c", "w_p", "b_p"]
    if k == 0:
        # identity parameters leave the input untouched, bit-exactly
        c = 3
        inputs = {"f": _normal(rng, (2, c, 4, 4)), "mask": _sketch(rng, (2, 1, 4, 4))}
        params = {n: np.full((c, 1, 1), 1.0 if n[0] == "w" else 0.0, np.float32)
                  for n in leaves[1:]}
        tol = 0.0
    elif k == 1:
        # 2x2 worked example with hand-computable output
        inputs = {"f": np.array([[[[1.0, 2.0], [3.0, 4.0]]]], np.float32),
                  "mask": np.array([[[[1.0, 0.0], [0.0, 1.0]]]], np.float32)}
        params = {"w_c": np.full((1, 1, 1), 2.0, np.float32),
                  "b_c": np.full((1, 1, 1), 0.5, np.float32),
                  "w_p": np.full((1, 1, 1), 0.5, np.float32),
                  "b_p": np.full((1, 1, 1), -1.0, np.float32)}
        tol = TOL_FORWARD
    else:
        c = 4
        inputs = {"f": _normal(rng, (1, c, 6, 6)), "mask": _sketch(rng, (1, 1, 6, 6))}
        params = {n: _normal(rng, (c, 1, 1)) for n in leaves[1:]}
        tol = TOL_FORWARD

    def compute(t):
        return {"out": refops.dmi(t["f"], t["mask"], t["w_c"], t["b_c"],
                                  t["w_p"], t["b_p"])}

    return inputs, params, {}, _torch_case(compute), leaves, tol


def _fmt_cases(rng, k):
    if k < 3:
        size, c = [(16, 2), (32, 1), (64, 2)][k]
        style_sk = _sketch(rng, (1, 1, size, size))
        input_sk = _sketch(rng, (1, 1, size, size))
    else:
        # all-zero input sketch: output is the tiled plain summary everywhere
        size, c = 16, 1
        style_sk = _sketch(rng, (1, 1, size, size))
        input_sk = np.zeros((1, 1, size, size), np.float32)
    inputs = {"f": _normal(rng, (1, c, size, size)),
              "style_sketch": style_sk, "input_sketch": input_sk}

    def compute(t):
        return {"out": refops.fmt(t["f"], t["style_sketch"], t["input_sketch"])}

    return inputs, {}, {}, _torch_case(compute), [], 1e-5


def _idn_cases(rng, k):
    c, size = [(2, 8), (3, 6), (1, 10)][k]
    mid = (size + 1) // 2
    inputs = {"f": _normal(rng, (2, c, size, size))}
    params = {"conv1.weight": _normal(rng, (c, c, 3, 3)) * 0.3,
              "conv1.bias": _normal(rng, (c,)) * 0.1,
              "conv2.weight": _normal(rng, (c, c, mid, mid)) * 0.1,
              "conv2.bias": _normal(rng, (c,)) * 0.1}

    def compute(t):
        mu, sigma, content = refops.idn(t["f"], t["conv1.weight"], t["conv1.bias"],
                                        t["conv2.weight"], t["conv2.bias"])
        return {"mu": mu, "sigma": sigma, "content": content}

    return (inputs, params, {"eps": refops.EPS}, _torch_case(compute),
            ["f"] + list(params), TOL_FORWARD)


def _attn_cases(rng, k):
    c, s, size = [(4, 6, 8), (2, 3, 5), (3, 8, 7)][k]
    inputs = {"f": _normal(rng, (2, c, size, size)), "v": _normal(rng, (2, s))}
    params = {"conv1.weight": _normal(rng, (c, c, 3, 3)) * 0.3,
              "conv1.bias": _normal(rng, (c,)) * 0.1,
              "conv2.weight": _normal(rng, (c, c, 3, 3)) * 0.3,
              "conv2.bias": _normal(rng, (c,)) * 0.1,
              "gate.weight": _normal(rng, (c, s)) * 0.5,
              "gate.bias": _normal(rng, (c,)) * 0.1}

    def compute(t):
        return {"out": refops.attn_res_block(
            t["f"], t["v"], t["conv1.weight"], t["conv1.bias"],
            t["conv2.weight"], t["conv2.bias"], t["gate.weight"], t["gate.bias"])}

    return inputs, params, {}, _torch_case(compute), ["f", "v"] + list(params), TOL_FORWARD


def _gradmatch_cases(rng, k):
    if k == 0:
        # identical inputs: loss and every gradient are exactly zero
        a = _normal(rng, (1, 1, 16, 16))
        inputs = {"a": a, "b": a.copy()}
        tol = 0.0
    else:
        shape = [(1, 2, 16, 16), (2, 1, 32, 32)][k - 1]
        inputs = {"a": _normal(rng, shape), "b": _normal(rng, shape)}
        tol = TOL_FORWARD

    def compute(t):
        return {"out": refops.gradient_match(t["a"], t["b"])}

    return inputs, {}, {}, _torch_case(compute), ["a", "b"], tol


def _graml2_cases(rng, k):
    shape = [(1, 2, 4, 4), (1, 3, 6, 6), (1, 4, 5, 5)][k]
    a = _normal(rng, shape)
    b = a.copy() if k == 0 else _normal(rng, shape)  # k=0: distance to self is 0
    inputs = {"a": a, "b": b}

    def run(inputs, params, grad_leaves):
        return {"out": np.float32(refops.gram_l2(inputs["a"], inputs["b"]))}, {}

    return inputs, {}, {}, run, [], 0.0 if k == 0 else TOL_FORWARD


def _frechet_cases(rng, k):
    if k == 0:
        # 1-D: means 0 vs 1, variances 1 vs 4 -> distance 2
        inputs = {"mean_a": np.zeros(1, np.float32), "cov_a": np.ones((1, 1), np.float32),
                  "mean_b": np.ones(1, np.float32),
                  "cov_b": np.full((1, 1), 4.0, np.float32)}
    else:
        d = (3, 5)[k - 1]
        def cov():
            m = _normal(rng, (d, d))
            return m @ m.T / d + 0.1 * np.eye(d, dtype=np.float32)
        inputs = {"mean_a": _normal(rng, (d,)), "cov_a": cov(),
                  "mean_b": _normal(rng, (d,)), "cov_b": cov()}

    def run(inputs, params, grad_leaves):
        return {"out": np.float32(refops.frechet_distance(
            inputs["mean_a"], inputs["cov_a"], inputs["mean_b"], inputs["cov_b"]))}, {}

    return inputs, {}, {}, run, [], TOL_FORWARD


BUILDERS = {
    "conv2d": (_conv_cases, 3),
    "pooling_chain": (_pool_cases, 3),
    "instance_stats": (_stats_cases, 3),
    "adain": (_adain_cases, 3),
    "dmi": (_dmi_cases, 3),
    "fmt": (_fmt_cases, 4),
    "idn": (_idn_cases, 3),
    "attn_res_block": (_attn_cases, 3),
    "gradient_match": (_gradmatch_cases, 3),
    "gram_l2": (_graml2_cases, 3),
    "frechet_distance": (_frechet_cases, 3),
}


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def emit_goldens(seed: int, out_dir) -> str:
    """Write every golden case under ``out_dir``; returns the manifest path."""
    os.makedirs(out_dir, exist_ok=True)
    cases, files = [], []

    for op_index, (op, (builder, count)) in enumerate(sorted(BUILDERS.items())):
        for k in range(count):
            rng = np.random.default_rng([seed, op_index, k])
            inputs, params, attrs, run, grad_leaves, tol_fwd = builder(rng, k)
            cid = f"{op}_{k:02d}"

            def store(role, name, arr):
                fname = f"{cid}.{role}.{name.replace('.', '_')}.tns"
                files.append(fname)
                return fname, write_tensor(os.path.join(out_dir, fname), arr)

            in_files, q_inputs = {}, {}
            for name, arr in inputs.items():
                in_files[name], q_inputs[name] = store("in", name, arr)
            par_files, q_params = {}, {}
            for name, arr in params.items():
                par_files[name], q_params[name] = store("par", name, arr)

            outputs, grads = run(q_inputs, q_params, grad_leaves)
            out_files = {n: store("out", n, a)[0] for n, a in outputs.items()}
            grad_files = {n: store("grad", n, a)[0] for n, a in grads.items()}
            tol_grad = 0.0
            if grads:
                gmax = max(float(np.abs(g).max()) for g in grads.values())
                tol_grad = TOL_GRAD_REL * max(1.0, gmax)

            cases.append({"id": cid, "op": op, "inputs": in_files,
                          "params": par_files, "attrs": attrs,
                          "expected": out_files, "expected_grads": grad_files,
                          "tol_forward": tol_fwd, "tol_grad": tol_grad})

    manifest = {"version": 1, "cases": cases,
                "hashes": {f: _sha256(os.path.join(out_dir, f)) for f in files}}
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
    return path
