"""Toy-scale phase-aware chunk-prediction network with exact gradients.

Three two-layer tanh encoders (ultrasound, external, proprioceptive) plus a
learned phase-embedding row fuse additively into a context vector. The
context is broadcast over the chunk horizon with a learned time embedding,
passed through one self-attention block with residual feed-forward, and
decoded by two independent linear heads, one per arm. Everything is float64
numpy with a hand-written backward pass so gradients can be verified against
finite differences.
"""

from __future__ import annotations

import json
import math

import numpy as np

US_DIM = 8
EXT_DIM = 12
PROP_DIM = 14
N_PHASES = 4
ACTION_DIM = 7  # position xyz + quaternion wxyz

CHECKPOINT_VERSION = 1


def init_params(horizon: int, d_model: int = 32, ff_dim: int = 32,
                seed: int = 0) -> dict:
    """Seeded parameter initialization; all tensors float64."""
    rng = np.random.default_rng(seed)

    def w(shape):
        fan_in = shape[-1]
        return rng.normal(scale=1.0 / math.sqrt(fan_in), size=shape)

    params = {}
    for name, dim in (("enc_us", US_DIM), ("enc_ext", EXT_DIM), ("enc_prop", PROP_DIM)):
        params[f"{name}.w1"] = w((d_model, dim))
        params[f"{name}.b1"] = np.zeros(d_model)
        params[f"{name}.w2"] = w((d_model, d_model))
        params[f"{name}.b2"] = np.zeros(d_model)
    params["phase_embed"] = rng.normal(scale=0.1, size=(N_PHASES, d_model))
    params["time_embed"] = rng.normal(scale=0.1, size=(horizon, d_model))
    for name in ("attn.wq", "attn.wk", "attn.wv"):
        params[name] = w((d_model, d_model))
    params["ffn.w1"] = w((ff_dim, d_model))
    params["ffn.b1"] = np.zeros(ff_dim)
    params["ffn.w2"] = w((d_model, ff_dim))
    params["ffn.b2"] = np.zeros(d_model)
    params["head_probe.w"] = w((ACTION_DIM, d_model))
    params["head_probe.b"] = np.zeros(ACTION_DIM)
    params["head_needle.w"] = w((ACTION_DIM, d_model))
    params["head_needle.b"] = np.zeros(ACTION_DIM)
    return params


def _encode(params, prefix, x):
    h = np.tanh(x @ params[f"{prefix}.w1"].T + params[f"{prefix}.b1"])
    return h @ params[f"{prefix}.w2"].T + params[f"{prefix}.b2"], h


def _softmax(s):
    m = s.max(axis=-1, keepdims=True)
    e = np.exp(s - m)
    return e / e.sum(axis=-1, keepdims=True)


def forward(params: dict, us, ext, prop, phase_idx, want_cache: bool = False):
    """Batch forward pass.

    us (B, 8), ext (B, 12), prop (B, 14), phase_idx (B,) in 0..3.
    Returns (probe_actions (B, H, 7), needle_actions (B, H, 7)[, cache]).
    """
    us = np.atleast_2d(np.asarray(us, dtype=np.float64))
    ext = np.atleast_2d(np.asarray(ext, dtype=np.float64))
    prop = np.atleast_2d(np.asarray(prop, dtype=np.float64))
    phase_idx = np.atleast_1d(np.asarray(phase_idx, dtype=np.int64))

    e_us, h_us = _encode(params, "enc_us", us)
    e_ext, h_ext = _encode(params, "enc_ext", ext)
    e_prop, h_prop = _encode(params, "enc_prop", prop)
    c = e_us + e_ext + e_prop + params["phase_embed"][phase_idx]

    d = c.shape[1]
    x = c[:, None, :] + params["time_embed"][None, :, :]        # (B,H,d)
    q = x @ params["attn.wq"]
    k = x @ params["attn.wk"]
    v = x @ params["attn.wv"]
    scores = q @ k.transpose(0, 2, 1) / math.sqrt(d)            # (B,H,H)
    attn = _softmax(scores)
    z = attn @ v
    x1 = x + z
    f_pre = x1 @ params["ffn.w1"].T + params["ffn.b1"]
    f = np.tanh(f_pre)
    x2 = x1 + f @ params["ffn.w2"].T + params["ffn.b2"]
    probe = x2 @ params["head_probe.w"].T + params["head_probe.b"]
    needle = x2 @ params["head_needle.w"].T + params["head_needle.b"]

    if not want_cache:
        return probe, needle
    cache = {
        "us": us, "ext": ext, "prop": prop, "phase_idx": phase_idx,
        "h_us": h_us, "h_ext": h_ext, "h_prop": h_prop,
        "x": x, "q": q, "k": k, "v": v, "attn": attn,
        "x1": x1, "f": f, "x2": x2, "d": d,
    }
    return probe, needle, cache


def backward(params: dict, cache: dict, d_probe, d_needle) -> dict:
    """Exact gradients of a scalar loss w.r.t. every parameter tensor,
    given the loss gradients at both head outputs."""
    grads = {}
    x2 = cache["x2"]
    grads["head_probe.w"] = np.einsum("bhk,bhd->kd", d_probe, x2)
    grads["head_probe.b"] = d_probe.sum(axis=(0, 1))
    grads["head_needle.w"] = np.einsum("bhk,bhd->kd", d_needle, x2)
    grads["head_needle.b"] = d_needle.sum(axis=(0, 1))
    d_x2 = d_probe @ params["head_probe.w"] + d_needle @ params["head_needle.w"]

    f = cache["f"]
    x1 = cache["x1"]
    d_f = d_x2 @ params["ffn.w2"]
    grads["ffn.w2"] = np.einsum("bhd,bhf->df", d_x2, f)
    grads["ffn.b2"] = d_x2.sum(axis=(0, 1))
    d_fpre = d_f * (1.0 - f * f)
    grads["ffn.w1"] = np.einsum("bhf,bhd->fd", d_fpre, x1)
    grads["ffn.b1"] = d_fpre.sum(axis=(0, 1))
    d_x1 = d_x2 + d_fpre @ params["ffn.w1"]

    attn, q, k, v, x = cache["attn"], cache["q"], cache["k"], cache["v"], cache["x"]
    d = cache["d"]
    d_z = d_x1
    d_attn = d_z @ v.transpose(0, 2, 1)
    d_v = attn.transpose(0, 2, 1) @ d_z
    # softmax backward per row
    d_scores = attn * (d_attn - (d_attn * attn).sum(axis=-1, keepdims=True))
    d_scores /= math.sqrt(d)
    d_q = d_scores @ k
    d_k = d_scores.transpose(0, 2, 1) @ q
    grads["attn.wq"] = np.einsum("bhd,bhk->dk", x, d_q)
    grads["attn.wk"] = np.einsum("bhd,bhk->dk", x, d_k)
    grads["attn.wv"] = np.einsum("bhd,bhk->dk", x, d_v)
    d_x = d_x1 + d_q @ params["attn.wq"].T + d_k @ params["attn.wk"].T \
        + d_v @ params["attn.wv"].T

    grads["time_embed"] = d_x.sum(axis=0)
    d_c = d_x.sum(axis=1)                                   # (B,d)

    phase_idx = cache["phase_idx"]
    g_embed = np.zeros_like(params["phase_embed"])
    np.add.at(g_embed, phase_idx, d_c)
    grads["phase_embed"] = g_embed

    for prefix, inp, h in (("enc_us", cache["us"], cache["h_us"]),
                           ("enc_ext", cache["ext"], cache["h_ext"]),
                           ("enc_prop", cache["prop"], cache["h_prop"])):
        grads[f"{prefix}.w2"] = np.einsum("bd,bk->dk", d_c, h)
        grads[f"{prefix}.b2"] = d_c.sum(axis=0)
        d_h = d_c @ params[f"{prefix}.w2"]
        d_pre = d_h * (1.0 - h * h)
        grads[f"{prefix}.w1"] = np.einsum("bd,bf->df", d_pre, inp)
        grads[f"{prefix}.b1"] = d_pre.sum(axis=0)
    return grads


def save_checkpoint(path, params: dict, meta: dict):
    """Versioned container: named tensors plus a JSON metadata blob."""
    meta = {"version": CHECKPOINT_VERSION, **meta}
    arrays = {f"param/{k}": v for k, v in params.items()}
    arrays["__meta__"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    np.savez(path, **arrays)


def load_checkpoint(path):
    data = np.load(path)
    meta = json.loads(bytes(data["__meta__"]).decode())
    if meta.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {meta.get('version')!r}")
    params = {
        k[len("param/"):]: data[k].astype(np.float64)
        for k in data.files if k.startswith("param/")
    }
    return params, meta
