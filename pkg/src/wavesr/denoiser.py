"""Shared noise-prediction network with manual backpropagation.

A compact fully-convolutional residual network in plain numpy (float64).
Inputs are the noisy state and a parent-scale conditioning image, stacked
on the channel axis; a sinusoidal time embedding and a learned per-scale
embedding are projected and broadcast-added to the first feature map.
The final convolution is zero-initialised so an untrained network predicts
zero noise.

Gradients are exact for the network as implemented (verified against
central finite differences in the test suite), which keeps the whole
training loop deterministic and double-precision end to end.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, asdict, field
from pathlib import Path

import numpy as np

from .errors import ImageIOError, NumericError

_PAD_MODES = ("zero", "wrap")
CHECKPOINT_MAGIC = b"WSRD0001"


@dataclass(frozen=True)
class NetConfig:
    in_channels: int = 3
    width: int = 32
    blocks: int = 6
    emb_dim: int = 64
    levels: int = 6          # scale-embedding table has levels + 1 rows
    timesteps: int = 100     # normalisation for the time embedding
    pad_mode: str = "zero"
    shared: bool = True      # one parameter set for all scales

    def __post_init__(self):
        if self.emb_dim % 2 != 0:
            raise ValueError("emb_dim must be even")
        if self.pad_mode not in _PAD_MODES:
            raise ValueError(f"pad_mode must be one of {_PAD_MODES}")
        if min(self.in_channels, self.width, self.blocks, self.emb_dim) < 1 or self.levels < 0:
            raise ValueError("invalid network dimensions")
        if self.timesteps < 1:
            raise ValueError("timesteps must be >= 1")


@dataclass(frozen=True)
class DenoiserInput:
    x_t: np.ndarray
    parent: np.ndarray | None
    t: int
    s: int


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


# ---------------------------------------------------------------------------
# Primitive layers.

def _pad_input(x, pad_mode):
    mode = "constant" if pad_mode == "zero" else "wrap"
    return np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)), mode=mode)


def _fold_pad_grad(dxp, pad_mode):
    # Adjoint of _pad_input: fold the pad borders back (wrap) or drop them (zero).
    if pad_mode == "zero":
        return dxp[:, 1:-1, 1:-1, :]
    d = dxp.copy()
    # columns (axis 2), then rows (axis 1) - reverse of np.pad's axis order
    d[:, :, -2, :] += d[:, :, 0, :]
    d[:, :, 1, :] += d[:, :, -1, :]
    d = d[:, :, 1:-1, :]
    d[:, -2, :, :] += d[:, 0, :, :]
    d[:, 1, :, :] += d[:, -1, :, :]
    return d[:, 1:-1, :, :]


def conv3x3_forward(x, w, b, pad_mode):
    """Same-size 3x3 convolution. Returns output and the cache for backward."""
    n, h, wd, cin = x.shape
    cout = w.shape[3]
    xp = _pad_input(x, pad_mode)
    windows = np.lib.stride_tricks.sliding_window_view(xp, (3, 3), axis=(1, 2))
    # windows: (n, h, wd, cin, 3, 3) -> columns ordered (ki, kj, cin) to match w
    cols = np.ascontiguousarray(windows.transpose(0, 1, 2, 4, 5, 3)).reshape(n * h * wd, 9 * cin)
    out = (cols @ w.reshape(9 * cin, cout) + b).reshape(n, h, wd, cout)
    return out, (cols, x.shape, w, pad_mode)


def conv3x3_backward(dout, cache, need_dx=True):
    cols, x_shape, w, pad_mode = cache
    n, h, wd, cin = x_shape
    cout = w.shape[3]
    dflat = dout.reshape(n * h * wd, cout)
    db = dflat.sum(axis=0)
    dw = (cols.T @ dflat).reshape(3, 3, cin, cout)
    if not need_dx:
        return dw, db, None
    dcols = (dflat @ w.reshape(9 * cin, cout).T).reshape(n, h, wd, 3, 3, cin)
    dxp = np.zeros((n, h + 2, wd + 2, cin))
    for ki in range(3):
        for kj in range(3):
            dxp[:, ki:ki + h, kj:kj + wd, :] += dcols[:, :, :, ki, kj, :]
    return dw, db, _fold_pad_grad(dxp, pad_mode)


def silu_forward(x):
    s = 1.0 / (1.0 + np.exp(-x))
    return x * s, (x, s)


def silu_backward(dout, cache):
    x, s = cache
    return dout * s * (1.0 + x * (1.0 - s))


def time_embedding(t, timesteps, dim):
    """Sinusoidal embedding of t / T; t is an integer array of shape (N,)."""
    tau = np.asarray(t, dtype=np.float64) / timesteps
    half = dim // 2
    freqs = np.exp(np.linspace(0.0, np.log(10000.0), half))
    ang = tau[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


# ---------------------------------------------------------------------------
# Parameter handling.

def init_params(cfg: NetConfig, rng) -> dict:
    """Fan-in scaled uniform init; output layer zeroed."""
    def conv(cin, cout):
        limit = np.sqrt(1.0 / (9 * cin))
        return rng.uniform(-limit, limit, size=(3, 3, cin, cout))

    def dense(din, dout):
        limit = np.sqrt(1.0 / din)
        return rng.uniform(-limit, limit, size=(din, dout))

    f, e, c = cfg.width, cfg.emb_dim, cfg.in_channels
    p = {
        "conv_in.w": conv(2 * c, f),
        "conv_in.b": np.zeros(f),
        "time_proj.w": dense(e, f),
        "time_proj.b": np.zeros(f),
        "scale_emb": rng.uniform(-np.sqrt(1.0 / e), np.sqrt(1.0 / e), size=(cfg.levels + 1, e)),
        "scale_proj.w": dense(e, f),
        "scale_proj.b": np.zeros(f),
    }
    for i in range(cfg.blocks):
        p[f"block{i}.conv1.w"] = conv(f, f)
        p[f"block{i}.conv1.b"] = np.zeros(f)
        p[f"block{i}.conv2.w"] = conv(f, f)
        p[f"block{i}.conv2.b"] = np.zeros(f)
    p["conv_out.w"] = np.zeros((3, 3, f, c))
    p["conv_out.b"] = np.zeros(c)
    return p


def forward(params: dict, x, parent, t, s, cfg: NetConfig):
    """Batched forward pass.

    x: (N, H, W, C); parent: same shape or None (treated as zeros);
    t, s: integer arrays of shape (N,). Returns (output, cache).
    """
    n = x.shape[0]
    if parent is None:
        parent = np.zeros_like(x)
    inp = np.concatenate([x, parent], axis=3)
    h0, c_in = conv3x3_forward(inp, params["conv_in.w"], params["conv_in.b"], cfg.pad_mode)
    temb = time_embedding(t, cfg.timesteps, cfg.emb_dim)
    semb = params["scale_emb"][np.asarray(s)]
    add = (temb @ params["time_proj.w"] + params["time_proj.b"]
           + semb @ params["scale_proj.w"] + params["scale_proj.b"])
    h = h0 + add[:, None, None, :]
    block_caches = []
    for i in range(cfg.blocks):
        u, cu = conv3x3_forward(h, params[f"block{i}.conv1.w"], params[f"block{i}.conv1.b"], cfg.pad_mode)
        a, ca = silu_forward(u)
        r, cr = conv3x3_forward(a, params[f"block{i}.conv2.w"], params[f"block{i}.conv2.b"], cfg.pad_mode)
        h = h + r
        block_caches.append((cu, ca, cr))
    out, c_out = conv3x3_forward(h, params["conv_out.w"], params["conv_out.b"], cfg.pad_mode)
    cache = (c_in, temb, semb, np.asarray(s), block_caches, c_out, n)
    return out, cache


def backward(params: dict, cache, dout, cfg: NetConfig) -> dict:
    """Exact gradients of a scalar loss with upstream gradient dout."""
    c_in, temb, semb, s_idx, block_caches, c_out, n = cache
    grads = {}
    dw, db, dh = conv3x3_backward(dout, c_out)
    grads["conv_out.w"], grads["conv_out.b"] = dw, db
    for i in reversed(range(cfg.blocks)):
        cu, ca, cr = block_caches[i]
        dw2, db2, da = conv3x3_backward(dh, cr)
        du = silu_backward(da, ca)
        dw1, db1, dh_branch = conv3x3_backward(du, cu)
        grads[f"block{i}.conv2.w"], grads[f"block{i}.conv2.b"] = dw2, db2
        grads[f"block{i}.conv1.w"], grads[f"block{i}.conv1.b"] = dw1, db1
        dh = dh + dh_branch
    dadd = dh.sum(axis=(1, 2))
    grads["time_proj.w"] = temb.T @ dadd
    grads["time_proj.b"] = dadd.sum(axis=0)
    grads["scale_proj.w"] = semb.T @ dadd
    grads["scale_proj.b"] = dadd.sum(axis=0)
    demb = np.zeros_like(params["scale_emb"])
    np.add.at(demb, s_idx, dadd @ params["scale_proj.w"].T)
    grads["scale_emb"] = demb
    dw, db, _ = conv3x3_backward(dh, c_in, need_dx=False)
    grads["conv_in.w"], grads["conv_in.b"] = dw, db
    return grads


def _check_input(inp: DenoiserInput, cfg: NetConfig):
    if not 1 <= inp.t <= cfg.timesteps:
        raise ValueError(f"timestep {inp.t} outside [1, {cfg.timesteps}]")
    if not 0 <= inp.s <= cfg.levels:
        raise ValueError(f"scale {inp.s} outside [0, {cfg.levels}]")
    if inp.s >= 1:
        if inp.parent is None:
            raise ValueError(f"scale {inp.s} requires a parent image")
        if inp.parent.shape != inp.x_t.shape:
            raise ValueError(f"parent shape {inp.parent.shape} != x_t shape {inp.x_t.shape}")
    elif inp.parent is not None:
        raise ValueError("scale 0 takes no parent (a zero block is fed internally)")


def predict_noise(inp: DenoiserInput, params: dict, cfg: NetConfig) -> np.ndarray:
    """Single-example noise prediction; output has the shape of inp.x_t."""
    _check_input(inp, cfg)
    parent = None if inp.parent is None else inp.parent[None]
    out, _ = forward(params, inp.x_t[None], parent, np.array([inp.t]), np.array([inp.s]), cfg)
    return out[0]


def loss_and_grad(batch, params: dict, cfg: NetConfig):
    """Mean squared noise-prediction error over a batch, with exact gradients.

    batch: non-empty list of (DenoiserInput, target) pairs sharing one shape.
    """
    if not batch:
        raise ValueError("empty batch")
    shape = batch[0][0].x_t.shape
    for inp, tgt in batch:
        _check_input(inp, cfg)
        if inp.x_t.shape != shape or tgt.shape != shape:
            raise ValueError("all batch elements must share one shape")
    xs = np.stack([inp.x_t for inp, _ in batch])
    parents = np.stack([
        inp.parent if inp.parent is not None else np.zeros(shape) for inp, _ in batch
    ])
    ts = np.array([inp.t for inp, _ in batch])
    ss = np.array([inp.s for inp, _ in batch])
    targets = np.stack([tgt for _, tgt in batch])
    out, cache = forward(params, xs, parents, ts, ss, cfg)
    diff = out - targets
    loss = float(np.mean(diff ** 2))
    grads = backward(params, cache, 2.0 * diff / diff.size, cfg)
    return loss, grads


def adam_step(params, grads, state: AdamState, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One Adam update with bias correction; returns (new_params, new_state)."""
    if lr <= 0:
        raise ValueError("lr must be > 0")
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient in '{name}'")
    step = state.step + 1
    new_params, m, v = {}, {}, {}
    for name, p in params.items():
        g = grads[name]
        m[name] = beta1 * state.m.get(name, 0.0) + (1 - beta1) * g
        v[name] = beta2 * state.v.get(name, 0.0) + (1 - beta2) * g * g
        m_hat = m[name] / (1 - beta1 ** step)
        v_hat = v[name] / (1 - beta2 ** step)
        new_params[name] = p - lr * m_hat / (np.sqrt(v_hat) + eps)
    return new_params, AdamState(m=m, v=v, step=step)


# ---------------------------------------------------------------------------
# Model container and checkpoint format (see docs/checkpoint-format.md).

@dataclass
class DenoiserModel:
    cfg: NetConfig
    params_sets: list  # length 1 when cfg.shared, else cfg.levels + 1

    def params_for(self, s: int) -> dict:
        return self.params_sets[0] if self.cfg.shared else self.params_sets[s]


def init_model(cfg: NetConfig, rng) -> DenoiserModel:
    n_sets = 1 if cfg.shared else cfg.levels + 1
    return DenoiserModel(cfg=cfg, params_sets=[init_params(cfg, rng) for _ in range(n_sets)])


def save_checkpoint(path, model: DenoiserModel) -> None:
    tensors = []
    payload = []
    for set_idx, params in enumerate(model.params_sets):
        for name in sorted(params):
            arr = np.ascontiguousarray(params[name], dtype=np.float64)
            tensors.append({"set": set_idx, "name": name, "shape": list(arr.shape)})
            payload.append(arr.tobytes())
    header = json.dumps(
        {"version": 1, "config": asdict(model.cfg), "sets": len(model.params_sets), "tensors": tensors},
        sort_keys=True,
    ).encode()
    with Path(path).open("wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for chunk in payload:
            fh.write(chunk)


def load_checkpoint(path) -> DenoiserModel:
    data = Path(path).read_bytes()
    if data[:8] != CHECKPOINT_MAGIC:
        raise ImageIOError(f"{path}: not a denoiser checkpoint")
    (hlen,) = struct.unpack("<I", data[8:12])
    header = json.loads(data[12:12 + hlen].decode())
    cfg = NetConfig(**header["config"])
    sets = [dict() for _ in range(header["sets"])]
    offset = 12 + hlen
    for spec in header["tensors"]:
        count = int(np.prod(spec["shape"])) if spec["shape"] else 1
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=offset).reshape(spec["shape"])
        sets[spec["set"]][spec["name"]] = arr.copy()
        offset += count * 8
    return DenoiserModel(cfg=cfg, params_sets=sets)
