"""Dense Euclidean encoder, end-to-end backprop through the head, and optimizers.

Euclidean parameters (encoder weights, and the weights of a Euclidean head)
train with SGD + momentum. For a hyperbolic head the offsets ``p`` take a
Riemannian SGD step through the exponential map and the normals ``a`` a
plain gradient step.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import geometry as geo
from .mlr import (
    ClipConfig,
    LinearHead,
    MlrHead,
    NumericalError,
    _lift_forward,
    _log_softmax,
    _radial_slope_over_n,
    forward,
    init_linear_head,
    init_mlr_head,
    loss_and_grads,
    metric_factor,
    riemannian_scale,
)
from .rng import Xoshiro256pp

ACTIVATIONS = ("relu", "tanh", "identity")


@dataclass(frozen=True)
class Dense:
    W: np.ndarray  # (out, in)
    b: np.ndarray  # (out,)
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[0],):
            raise ValueError(f"inconsistent layer shapes W{self.W.shape} b{self.b.shape}")


@dataclass(frozen=True)
class Encoder:
    layers: tuple[Dense, ...]

    def __post_init__(self):
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.W.shape[0] != nxt.W.shape[1]:
                raise ValueError(f"layer dims do not chain: {prev.W.shape} -> {nxt.W.shape}")

    @property
    def input_dim(self) -> int:
        return self.layers[0].W.shape[1]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].W.shape[0]


def init_encoder(sizes, rng: Xoshiro256pp, activation: str = "relu",
                 output_gain: float = 1.0) -> Encoder:
    """Fan-in scaled uniform init (bound sqrt(6/fan_in) before ReLU, sqrt(3/fan_in) otherwise).

    ``sizes`` is ``[input, hidden..., output]``; the last layer is linear and
    its bound is multiplied by ``output_gain``.
    """
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        last = i == len(sizes) - 2
        act = "identity" if last else activation
        bound = math.sqrt((6.0 if act == "relu" else 3.0) / fan_in)
        if last:
            bound *= output_gain
        W = rng.uniform((fan_out, fan_in), -bound, bound)
        layers.append(Dense(W, np.zeros(fan_out), act))
    return Encoder(tuple(layers))


def _act(name, z):
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    return z


def _act_grad(name, z, h):
    if name == "relu":
        return (z > 0).astype(np.float64)
    if name == "tanh":
        return 1.0 - h * h
    return np.ones_like(z)


class _EncCache(NamedTuple):
    inputs: list  # input to each layer
    pre: list  # pre-activations


def _encode(enc: Encoder, X: np.ndarray):
    if X.shape[-1] != enc.input_dim:
        raise ValueError(f"input dim {X.shape[-1]} != encoder input dim {enc.input_dim}")
    inputs, pre = [], []
    h = X
    for layer in enc.layers:
        inputs.append(h)
        z = h @ layer.W.T + layer.b
        pre.append(z)
        h = _act(layer.activation, z)
    return h, _EncCache(inputs, pre)


def encode(enc: Encoder, x) -> np.ndarray:
    X = np.asarray(x, dtype=np.float64)
    out, _ = _encode(enc, np.atleast_2d(X))
    return out[0] if X.ndim == 1 else out


def _encoder_backward(enc: Encoder, cache: _EncCache, d_out: np.ndarray):
    grads = [None] * len(enc.layers)
    g = d_out
    for i in range(len(enc.layers) - 1, -1, -1):
        layer = enc.layers[i]
        z = cache.pre[i]
        g = g * _act_grad(layer.activation, z, _act(layer.activation, z))
        dW = g.T @ cache.inputs[i]
        db = g.sum(axis=0)
        if not (np.all(np.isfinite(dW)) and np.all(np.isfinite(db))):
            raise NumericalError(f"non-finite gradient in encoder layer {i}")
        grads[i] = (dW, db)
        g = g @ layer.W
    return grads, g


def _encoder_jvp(enc: Encoder, cache: _EncCache, direction) -> np.ndarray:
    """Directional derivative of the encoder output along parameter change ``direction``."""
    dh = np.zeros_like(cache.inputs[0])
    for i, layer in enumerate(enc.layers):
        dW, db = direction[i]
        dz = cache.inputs[i] @ dW.T + db + dh @ layer.W.T
        z = cache.pre[i]
        dh = dz * _act_grad(layer.activation, z, _act(layer.activation, z))
    return dh


# -- training state ---------------------------------------------------------


@dataclass
class TrainState:
    encoder: Encoder
    head: MlrHead | LinearHead
    clip: ClipConfig = field(default_factory=ClipConfig)
    lr_e: float = 0.1
    lr_h: float = 0.01
    momentum: float = 0.9
    embedding_grad: str = "riemannian"
    velocity: dict = field(default_factory=dict)
    step: int = 0
    rng: Xoshiro256pp = field(default_factory=lambda: Xoshiro256pp(0))

    @property
    def hyperbolic(self) -> bool:
        return isinstance(self.head, MlrHead)

    @property
    def c(self) -> float:
        return self.head.c if self.hyperbolic else 1.0


def new_state(sizes, n_classes: int, seed: int, head: str = "hyperbolic",
              clip: ClipConfig = ClipConfig(), c: float = 1.0, output_gain: float = 1.0,
              **kwargs) -> TrainState:
    rng = Xoshiro256pp(seed)
    enc = init_encoder(sizes, rng.spawn(), output_gain=output_gain)
    head_rng = rng.spawn()
    if head == "hyperbolic":
        h = init_mlr_head(n_classes, sizes[-1], head_rng, c)
    elif head == "euclidean":
        h = init_linear_head(n_classes, sizes[-1], head_rng)
    else:
        raise ValueError(f"unknown head kind {head!r}")
    return TrainState(encoder=enc, head=h, clip=clip, rng=rng, **kwargs)


class Gradients(NamedTuple):
    loss: float
    encoder: list  # [(dW, db), ...]
    head: dict
    logits: np.ndarray
    lifted: np.ndarray | None
    features: np.ndarray

    def encoder_norm(self) -> float:
        return math.sqrt(sum(float(np.sum(dW * dW) + np.sum(db * db)) for dW, db in self.encoder))


def backward(state: TrainState, X, y, embedding_grad: str | None = None) -> Gradients:
    """Batch-mean loss and gradients for every parameter.

    With ``embedding_grad="riemannian"`` (the state default) the gradient
    reaching the encoder is the Riemannian gradient at the hyperbolic
    embedding; ``"euclidean"`` gives the exact derivative of the loss.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    if X.shape[0] == 0:
        raise ValueError("empty batch")
    mode = embedding_grad or state.embedding_grad
    feats, cache = _encode(state.encoder, X)
    out = loss_and_grads(state.head, feats, y, state.clip, embedding_grad=mode)
    enc_grads, _ = _encoder_backward(state.encoder, cache, out.d_features)
    return Gradients(out.loss, enc_grads, out.grads, out.logits, out.lifted, feats)


def input_gradient(state: TrainState, X, y) -> tuple[float, np.ndarray]:
    """Exact gradient of the per-sample loss w.r.t. the inputs (used by attacks).

    The loss is summed over the batch so each row is that sample's own gradient.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    feats, cache = _encode(state.encoder, X)
    out = loss_and_grads(state.head, feats, y, state.clip, embedding_grad="euclidean")
    _, d_in = _encoder_backward(state.encoder, cache, out.d_features)
    return out.loss, d_in * X.shape[0]


def per_sample_loss(state: TrainState, X, y) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    feats, _ = _encode(state.encoder, X)
    logits, _ = forward(state.head, feats, state.clip)
    T = state.clip.T if state.clip.mode == "temperature" else 1.0
    return -_log_softmax(logits / T)[np.arange(len(y)), y]


def logits_of(state: TrainState, X) -> np.ndarray:
    feats = encode(state.encoder, np.atleast_2d(np.asarray(X, dtype=np.float64)))
    return forward(state.head, feats, state.clip)[0]


def embed_inputs(state: TrainState, X) -> np.ndarray:
    """Hyperbolic embeddings of inputs (Euclidean features for a linear head)."""
    feats = encode(state.encoder, np.atleast_2d(np.asarray(X, dtype=np.float64)))
    if not state.hyperbolic:
        return feats
    return _lift_forward(feats, state.clip, state.c).x


# -- optimizers -------------------------------------------------------------


def _euclidean_params(state: TrainState) -> dict[str, np.ndarray]:
    params = {}
    for i, layer in enumerate(state.encoder.layers):
        params[f"enc.{i}.W"] = layer.W
        params[f"enc.{i}.b"] = layer.b
    if not state.hyperbolic:
        params["head.W"] = state.head.W
        params["head.b"] = state.head.b
    return params


def _euclidean_grads(state: TrainState, grads: Gradients) -> dict[str, np.ndarray]:
    out = {}
    for i, (dW, db) in enumerate(grads.encoder):
        out[f"enc.{i}.W"] = dW
        out[f"enc.{i}.b"] = db
    if not state.hyperbolic:
        out["head.W"] = grads.head["W"]
        out["head.b"] = grads.head["b"]
    return out


def sgd_step(state: TrainState, grads: Gradients) -> TrainState:
    """Momentum SGD on the Euclidean parameters: v <- mu v + g; w <- w - lr_e v."""
    params = _euclidean_params(state)
    gs = _euclidean_grads(state, grads)
    velocity, new = {}, {}
    for name, w in params.items():
        g = gs[name]
        if g.shape != w.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {w.shape} for {name}")
        v = state.momentum * state.velocity.get(name, np.zeros_like(w)) + g
        velocity[name] = v
        new[name] = w - state.lr_e * v
    layers = tuple(
        Dense(new[f"enc.{i}.W"], new[f"enc.{i}.b"], layer.activation)
        for i, layer in enumerate(state.encoder.layers)
    )
    head = state.head
    if not state.hyperbolic:
        head = LinearHead(new["head.W"], new["head.b"])
    return replace(state, encoder=Encoder(layers), head=head, velocity=velocity)


def rsgd_step(head: MlrHead, grad_p, grad_a, lr: float) -> MlrHead:
    """p <- exp_p(-lr * rgrad_p) then reprojected; a <- a - lr * grad_a."""
    c = head.c
    rgrad = riemannian_scale(head.p, grad_p, c)
    p = geo.exp_at(head.p, -lr * rgrad, c)
    a = head.a - lr * np.asarray(grad_a)
    return MlrHead(p=p, a=a, c=c)


@dataclass(frozen=True)
class StepRecord:
    step: int
    loss: float
    encoder_grad_norm: float
    mean_embedding_norm: float
    min_metric_factor: float
    accuracy: float


class MetricTrace:
    """Append-only per-step log."""

    columns = ("step", "loss", "encoder_grad_norm", "mean_embedding_norm",
               "min_metric_factor", "accuracy")

    def __init__(self):
        self._records: list[StepRecord] = []

    def append(self, rec: StepRecord) -> None:
        self._records.append(rec)

    def __len__(self):
        return len(self._records)

    def __iter__(self):
        return iter(self._records)

    def __getitem__(self, i):
        return self._records[i]

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self._records], dtype=np.float64)


def train_step(state: TrainState, X, y) -> tuple[TrainState, StepRecord]:
    grads = backward(state, X, y)
    new = sgd_step(state, grads)
    if state.hyperbolic:
        new.head = rsgd_step(state.head, grads.head["p"], grads.head["a"], state.lr_h)
        norms = np.linalg.norm(grads.lifted, axis=-1)
        min_factor = float(np.min(metric_factor(grads.lifted, state.c)))
    else:
        norms = np.linalg.norm(grads.features, axis=-1)
        min_factor = float("nan")
    new.step = state.step + 1
    acc = float(np.mean(np.argmax(grads.logits, axis=-1) == np.asarray(y)))
    rec = StepRecord(state.step, grads.loss, grads.encoder_norm(), float(np.mean(norms)),
                     min_factor, acc)
    return new, rec


# -- first-order probe of one encoder step ------------------------------------


def _lift_jvp(lc, d: np.ndarray, cfg: ClipConfig, c: float) -> np.ndarray:
    sc = math.sqrt(c)
    f0 = lc.features
    if np.any(lc.clipped):
        n0 = np.where(lc.norm0 > 0, lc.norm0, 1.0)
        d_clip = (lc.nv / n0) * (d - np.sum(f0 * d, axis=-1, keepdims=True) * f0 / n0**2)
        d = np.where(lc.clipped, d_clip, d)
    v, nv = lc.v, lc.nv
    safe = np.where(nv > 0, nv, 1.0)
    vd = np.sum(v * d, axis=-1, keepdims=True)
    f = np.where(nv > 0, np.tanh(sc * nv) / (sc * safe), 1.0)
    free = f * d + _radial_slope_over_n(nv, c) * vd * v
    m = (1.0 - geo.BOUNDARY_EPS) / sc
    proj = (m / safe) * (d - vd * v / safe**2)
    return np.where(lc.projected, proj, free)


def taylor_step_check(state: TrainState, X, y, eta: float) -> float:
    """|x^H after one plain encoder step of size eta - its first-order prediction|.

    The step direction is the encoder gradient as ``backward`` produces it,
    so in Riemannian mode a vanishing metric factor also freezes the embedding.
    Returns the Frobenius norm of the deviation over the batch.
    """
    if not state.hyperbolic:
        raise ValueError("taylor_step_check needs a hyperbolic head")
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    grads = backward(state, X, y)
    feats, cache = _encode(state.encoder, X)
    lc = _lift_forward(feats, state.clip, state.c)
    direction = [(-eta * dW, -eta * db) for dW, db in grads.encoder]
    d_feat = _encoder_jvp(state.encoder, cache, direction)
    predicted = lc.x + _lift_jvp(lc, d_feat, state.clip, state.c)
    stepped = Encoder(tuple(
        Dense(layer.W + dW, layer.b + db, layer.activation)
        for layer, (dW, db) in zip(state.encoder.layers, direction)
    ))
    actual = _lift_forward(_encode(stepped, X)[0], state.clip, state.c).x
    return float(np.linalg.norm(actual - predicted))


def embedding_movement(state: TrainState, X, y, eta: float) -> tuple[float, float]:
    """(actual, first-order predicted) movement norms of x^H for one plain encoder step."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    grads = backward(state, X, y)
    feats, cache = _encode(state.encoder, X)
    lc = _lift_forward(feats, state.clip, state.c)
    direction = [(-eta * dW, -eta * db) for dW, db in grads.encoder]
    pred = _lift_jvp(lc, _encoder_jvp(state.encoder, cache, direction), state.clip, state.c)
    stepped = Encoder(tuple(
        Dense(layer.W + dW, layer.b + db, layer.activation)
        for layer, (dW, db) in zip(state.encoder.layers, direction)
    ))
    actual = _lift_forward(_encode(stepped, X)[0], state.clip, state.c).x - lc.x
    return float(np.linalg.norm(actual)), float(np.linalg.norm(pred))


# -- checkpoints --------------------------------------------------------------

CKPT_MAGIC = b"HYPCLIPCKPT\x00"
CKPT_VERSION = 1


def save_checkpoint(state: TrainState, path) -> None:
    """Deterministic little-endian dump of every parameter, buffer, PRNG word and the step."""
    arrays: dict[str, np.ndarray] = {}
    for i, layer in enumerate(state.encoder.layers):
        arrays[f"enc.{i}.W"] = layer.W
        arrays[f"enc.{i}.b"] = layer.b
    for k, v in state.head.params().items():
        arrays[f"head.{k}"] = v
    for k in sorted(state.velocity):
        arrays[f"velocity.{k}"] = state.velocity[k]
    arrays["rng"] = np.array(state.rng.state, dtype=np.uint64)

    meta = {
        "version": CKPT_VERSION,
        "step": state.step,
        "head": "hyperbolic" if state.hyperbolic else "euclidean",
        "c": state.c,
        "activations": [layer.activation for layer in state.encoder.layers],
        "clip": {"mode": state.clip.mode, "r": state.clip.r, "beta": state.clip.beta, "T": state.clip.T},
        "lr_e": state.lr_e,
        "lr_h": state.lr_h,
        "momentum": state.momentum,
        "embedding_grad": state.embedding_grad,
        "arrays": [],
    }
    blobs = []
    offset = 0
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        dtype = "<u8" if arr.dtype == np.uint64 else "<f8"
        raw = arr.astype(dtype).tobytes()
        meta["arrays"].append({"name": name, "dtype": dtype, "shape": list(arr.shape),
                               "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<II", CKPT_VERSION, len(header)))
        fh.write(header)
        for raw in blobs:
            fh.write(raw)


def load_checkpoint(path) -> TrainState:
    data = Path(path).read_bytes()
    if not data.startswith(CKPT_MAGIC):
        raise ValueError(f"{path}: not a checkpoint file")
    pos = len(CKPT_MAGIC)
    version, hlen = struct.unpack_from("<II", data, pos)
    if version != CKPT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    pos += 8
    meta = json.loads(data[pos:pos + hlen].decode("utf-8"))
    base = pos + hlen
    arrays = {}
    for entry in meta["arrays"]:
        start = base + entry["offset"]
        buf = data[start:start + entry["nbytes"]]
        arrays[entry["name"]] = np.frombuffer(buf, dtype=entry["dtype"]).reshape(entry["shape"]).copy()

    layers = tuple(
        Dense(arrays[f"enc.{i}.W"], arrays[f"enc.{i}.b"], act)
        for i, act in enumerate(meta["activations"])
    )
    if meta["head"] == "hyperbolic":
        head = MlrHead(arrays["head.p"], arrays["head.a"], meta["c"])
    else:
        head = LinearHead(arrays["head.W"], arrays["head.b"])
    velocity = {k[len("velocity."):]: v for k, v in arrays.items() if k.startswith("velocity.")}
    return TrainState(
        encoder=Encoder(layers),
        head=head,
        clip=ClipConfig(**meta["clip"]),
        lr_e=meta["lr_e"],
        lr_h=meta["lr_h"],
        momentum=meta["momentum"],
        embedding_grad=meta["embedding_grad"],
        velocity=velocity,
        step=meta["step"],
        rng=Xoshiro256pp.from_state(int(w) for w in arrays["rng"]),
    )
