"""A three-layer convolutional noise predictor with hand-written gradients.

Layout: conv3x3(C -> F) + time embedding, SiLU, conv3x3(F -> F) + time
embedding, SiLU, conv3x3(F -> 1). The time embedding is a fixed sinusoidal
table row projected by a learned (D, F) matrix and added per channel.
Activations are kept channels-last internally.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .conditioning import DenoiserInput
from .errors import TrainingError, WeightsShapeError, WeightsTruncatedError, WeightsVersionError
from .rng import SeededRng
from .schedule import NoiseSchedule

PARAM_NAMES = ("conv1_w", "conv1_b", "temb1", "conv2_w", "conv2_b", "temb2", "conv3_w", "conv3_b")
MAGIC = b"CFD1"
FORMAT_VERSION = 1


def sinusoidal_table(T: int, dim: int) -> np.ndarray:
    t = np.arange(T + 1, dtype=float)[:, None]
    freqs = 10000.0 ** (-np.arange(0, dim, 2, dtype=float) / dim)
    table = np.zeros((T + 1, dim))
    table[:, 0::2] = np.sin(t * freqs)
    table[:, 1::2] = np.cos(t * freqs)[:, : dim // 2]
    return table


@dataclass
class TinyDenoiserWeights:
    in_channels: int
    hidden: int
    emb_dim: int
    T: int
    params: dict[str, np.ndarray]
    table: np.ndarray = field(repr=False)

    def expected_shapes(self) -> dict[str, tuple[int, ...]]:
        C, F, D = self.in_channels, self.hidden, self.emb_dim
        return {
            "conv1_w": (F, C, 3, 3), "conv1_b": (F,), "temb1": (D, F),
            "conv2_w": (F, F, 3, 3), "conv2_b": (F,), "temb2": (D, F),
            "conv3_w": (1, F, 3, 3), "conv3_b": (1,),
            "table": (self.T + 1, D),
        }

    def validate(self):
        shapes = self.expected_shapes()
        for name in PARAM_NAMES:
            if name not in self.params:
                raise WeightsShapeError(f"missing tensor {name}")
            if self.params[name].shape != shapes[name]:
                raise WeightsShapeError(f"{name}: shape {self.params[name].shape}, expected {shapes[name]}")
            if not np.all(np.isfinite(self.params[name])):
                raise WeightsShapeError(f"{name} contains non-finite values")
        if self.table.shape != shapes["table"]:
            raise WeightsShapeError(f"table: shape {self.table.shape}, expected {shapes['table']}")

    def copy(self) -> "TinyDenoiserWeights":
        return TinyDenoiserWeights(self.in_channels, self.hidden, self.emb_dim, self.T,
                                   {k: v.copy() for k, v in self.params.items()}, self.table.copy())

    def equals(self, other: "TinyDenoiserWeights") -> bool:
        return (
            (self.in_channels, self.hidden, self.emb_dim, self.T)
            == (other.in_channels, other.hidden, other.emb_dim, other.T)
            and all(np.array_equal(self.params[k], other.params[k]) for k in PARAM_NAMES)
            and np.array_equal(self.table, other.table)
        )


def init_weights(in_channels: int, T: int, rng: SeededRng, hidden: int = 12, emb_dim: int = 16,
                 zero: bool = False) -> TinyDenoiserWeights:
    C, F, D = in_channels, hidden, emb_dim
    w = TinyDenoiserWeights(C, F, D, T, {}, sinusoidal_table(T, D))
    scales = {
        "conv1_w": np.sqrt(2.0 / (9 * C)), "conv1_b": 0.0, "temb1": 1.0 / np.sqrt(D),
        "conv2_w": np.sqrt(2.0 / (9 * F)), "conv2_b": 0.0, "temb2": 1.0 / np.sqrt(D),
        "conv3_w": 0.1 * np.sqrt(1.0 / (9 * F)), "conv3_b": 0.0,
    }
    for name, shape in w.expected_shapes().items():
        if name == "table":
            continue
        w.params[name] = np.zeros(shape) if zero else scales[name] * rng.normal(shape)
    return w


def _silu(z):
    s = 1.0 / (1.0 + np.exp(-z))
    return z * s, s


def _im2col(x):
    """x: (N, H, W, C) -> (N*H*W, C*9), zero padding 1."""
    N, H, W, C = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    win = sliding_window_view(xp, (3, 3), axis=(1, 2))  # (N, H, W, C, 3, 3)
    return win.reshape(N * H * W, C * 9)


def _conv_input_grad(dh, w):
    """Gradient w.r.t. a same-padded conv input: correlate ``dh`` with the flipped kernel."""
    N, H, W, F = dh.shape
    C = w.shape[1]
    wflip = w[:, :, ::-1, ::-1].transpose(0, 2, 3, 1).reshape(F * 9, C)
    return (_im2col(dh) @ wflip).reshape(N, H, W, C)


def _forward(weights: TinyDenoiserWeights, X: np.ndarray, t: np.ndarray):
    """X: (N, C, H, W); returns output (N, H, W) and the cache for backprop."""
    p = weights.params
    N, C, H, W = X.shape
    if C != weights.in_channels:
        raise ValueError(f"input has {C} channels, weights expect {weights.in_channels}")
    F = weights.hidden
    x = np.ascontiguousarray(X.transpose(0, 2, 3, 1))
    emb = weights.table[t]  # (N, D)
    cols1 = _im2col(x)
    h1 = (cols1 @ p["conv1_w"].reshape(F, -1).T).reshape(N, H, W, F)
    h1 += p["conv1_b"] + (emb @ p["temb1"])[:, None, None, :]
    a1, s1 = _silu(h1)
    cols2 = _im2col(a1)
    h2 = (cols2 @ p["conv2_w"].reshape(F, -1).T).reshape(N, H, W, F)
    h2 += p["conv2_b"] + (emb @ p["temb2"])[:, None, None, :]
    a2, s2 = _silu(h2)
    cols3 = _im2col(a2)
    out = (cols3 @ p["conv3_w"].reshape(1, -1).T).reshape(N, H, W) + p["conv3_b"][0]
    cache = (emb, cols1, h1, s1, cols2, h2, s2, cols3)
    return out, cache


def _backward(weights: TinyDenoiserWeights, dout: np.ndarray, cache) -> dict[str, np.ndarray]:
    p = weights.params
    F = weights.hidden
    emb, cols1, h1, s1, cols2, h2, s2, cols3 = cache
    g = {}
    d3 = dout.reshape(-1, 1)
    g["conv3_w"] = (d3.T @ cols3).reshape(p["conv3_w"].shape)
    g["conv3_b"] = np.array([dout.sum()])
    da2 = _conv_input_grad(dout[..., None], p["conv3_w"])
    dh2 = da2 * s2 * (1.0 + h2 * (1.0 - s2))
    g["conv2_b"] = dh2.sum(axis=(0, 1, 2))
    g["temb2"] = emb.T @ dh2.sum(axis=(1, 2))
    d2 = dh2.reshape(-1, F)
    g["conv2_w"] = (d2.T @ cols2).reshape(p["conv2_w"].shape)
    da1 = _conv_input_grad(dh2, p["conv2_w"])
    dh1 = da1 * s1 * (1.0 + h1 * (1.0 - s1))
    g["conv1_b"] = dh1.sum(axis=(0, 1, 2))
    g["temb1"] = emb.T @ dh1.sum(axis=(1, 2))
    d1 = dh1.reshape(-1, F)
    g["conv1_w"] = (d1.T @ cols1).reshape(p["conv1_w"].shape)
    return g


def tiny_forward(weights: TinyDenoiserWeights, inp: DenoiserInput) -> np.ndarray:
    """Deterministic eps prediction with the same shape as ``inp.x_t``."""
    if inp.channels != weights.in_channels:
        raise ValueError(f"input has {inp.channels} channels, weights expect {weights.in_channels}")
    X = inp.stacked()
    t = np.broadcast_to(np.asarray(inp.t, dtype=int), (X.shape[0],))
    out, _ = _forward(weights, X, t)
    return out.reshape(np.shape(inp.x_t))


def loss_and_grads(weights: TinyDenoiserWeights, X: np.ndarray, t: np.ndarray, eps: np.ndarray):
    """Mean squared error against ``eps`` and its gradient for every parameter."""
    out, cache = _forward(weights, X, t)
    if np.shape(eps) != out.shape:
        raise ValueError(f"eps has shape {np.shape(eps)}, expected {out.shape}")
    diff = out - eps
    loss = float(np.mean(diff ** 2))
    grads = _backward(weights, 2.0 * diff / diff.size, cache)
    return loss, grads


class TinyDenoiser:
    def __init__(self, weights: TinyDenoiserWeights):
        weights.validate()
        self.weights = weights

    @property
    def in_channels(self) -> int:
        return self.weights.in_channels

    def __call__(self, inp: DenoiserInput) -> np.ndarray:
        return tiny_forward(self.weights, inp)


@dataclass(frozen=True)
class OptimizerConfig:
    lr: float = 1e-3
    momentum: float = 0.9
    batch_size: int = 16
    epochs: int = 200


def _make_input(x_t, b, p, extra):
    chans = [x_t, b, p, *extra]
    return np.stack([np.asarray(c, dtype=float) for c in chans], axis=1)


def train(weights: TinyDenoiserWeights, x0, brain, pathology, schedule: NoiseSchedule,
          opt: OptimizerConfig, rng: SeededRng, extra=()):
    """SGD with momentum on the denoising objective.

    Data arrays carry a leading sample axis; ``extra`` holds any additional
    conditioning channels (also (N, H, W)). Returns (new weights, per-epoch
    mean losses). The input weights are not modified.
    """
    x0 = np.asarray(x0, dtype=float)
    if len(x0) == 0:
        raise ValueError("training set is empty")
    if opt.lr < 0 or opt.batch_size < 1 or opt.epochs < 0:
        raise ValueError(f"invalid optimizer config {opt}")
    w = weights.copy()
    vel = {k: np.zeros_like(w.params[k]) for k in PARAM_NAMES}
    ab = schedule.alpha_bar
    n = len(x0)
    losses = []
    for epoch in range(1, opt.epochs + 1):
        order = rng.permutation(n)
        batch_losses = []
        for start in range(0, n, opt.batch_size):
            idx = order[start:start + opt.batch_size]
            t = rng.integers(1, schedule.T + 1, size=len(idx))
            eps = rng.normal((len(idx),) + x0.shape[1:])
            a = ab[t][:, None, None]
            x_t = np.sqrt(a) * x0[idx] + np.sqrt(1.0 - a) * eps
            X = _make_input(x_t, brain[idx], pathology[idx], [e[idx] for e in extra])
            loss, grads = loss_and_grads(w, X, t, eps)
            if not np.isfinite(loss):
                raise TrainingError(epoch, loss)
            for k in PARAM_NAMES:
                vel[k] = opt.momentum * vel[k] - opt.lr * grads[k]
                w.params[k] += vel[k]
            batch_losses.append(loss)
        epoch_loss = float(np.mean(batch_losses))
        if not np.isfinite(epoch_loss):
            raise TrainingError(epoch, epoch_loss)
        losses.append(epoch_loss)
    return w, losses


def save_weights(weights: TinyDenoiserWeights, path) -> None:
    """Little-endian: magic, u16 version, u16 tensor count, u16 C/F/D, u32 T,
    then per tensor (u8 name length, name, u8 ndim, u32 dims), then raw f64 data."""
    weights.validate()
    tensors = [(k, weights.params[k]) for k in PARAM_NAMES] + [("table", weights.table)]
    head = bytearray(MAGIC)
    head += struct.pack("<HHHHHI", FORMAT_VERSION, len(tensors), weights.in_channels,
                        weights.hidden, weights.emb_dim, weights.T)
    for name, arr in tensors:
        nb = name.encode()
        head += struct.pack("<B", len(nb)) + nb + struct.pack("<B", arr.ndim)
        head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    body = b"".join(np.ascontiguousarray(arr, dtype="<f8").tobytes() for _, arr in tensors)
    with open(path, "wb") as f:
        f.write(bytes(head) + body)


def load_weights(path, in_channels: int | None = None) -> TinyDenoiserWeights:
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 4 or data[:4] != MAGIC:
        raise WeightsVersionError(f"{path}: bad magic {data[:4]!r}, expected {MAGIC!r}")
    pos = 4

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(data):
            raise WeightsTruncatedError(f"{path}: header truncated at byte {pos}")
        vals = struct.unpack_from(fmt, data, pos)
        pos += size
        return vals

    version, count, C, F, D, T = take("<HHHHHI")
    if version != FORMAT_VERSION:
        raise WeightsVersionError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    if in_channels is not None and C != in_channels:
        raise WeightsShapeError(f"{path}: weights have {C} input channels, model configured for {in_channels}")
    shapes = []
    for _ in range(count):
        (ln,) = take("<B")
        if pos + ln > len(data):
            raise WeightsTruncatedError(f"{path}: header truncated in tensor name")
        name = data[pos:pos + ln].decode("utf-8", errors="replace")
        pos += ln
        (ndim,) = take("<B")
        shapes.append((name, take(f"<{ndim}I")))
    params = {}
    table = None
    for name, shape in shapes:
        nbytes = 8 * int(np.prod(shape))
        if pos + nbytes > len(data):
            raise WeightsTruncatedError(f"{path}: data for {name} truncated")
        arr = np.frombuffer(data, dtype="<f8", count=nbytes // 8, offset=pos).reshape(shape).astype(float)
        pos += nbytes
        if name == "table":
            table = arr
        else:
            params[name] = arr
    if pos != len(data):
        raise WeightsShapeError(f"{path}: {len(data) - pos} trailing bytes after declared tensors")
    if table is None:
        raise WeightsShapeError(f"{path}: missing timestep table")
    w = TinyDenoiserWeights(C, F, D, T, params, table)
    w.validate()
    return w
