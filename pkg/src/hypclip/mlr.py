"""Hyperbolic multinomial logistic regression head with feature clipping.

Pipeline for a batch of Euclidean features ``f`` (shape ``(B, n)``)::

    f --clip to norm r--> v --exp0 (+ boundary projection)--> x in the ball
      --per-class Poincare-hyperplane score--> logits --softmax CE--> loss

All gradients are analytic. ``loss_and_grads`` can hand the encoder either the
exact Euclidean gradient of the loss w.r.t. the features or the version in
which the gradient at the hyperbolic embedding is first converted into a
Riemannian gradient, i.e. multiplied by (1 - c|x|^2)^2 / 4. The latter is how
hyperbolic networks are usually trained and is what starves the encoder of
gradient once embeddings approach the boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from .geometry import BOUNDARY_EPS, _mobius_add, exp0

CLIP_MODES = ("hard_clip", "soft_penalty", "temperature", "none")
EMBEDDING_GRADS = ("euclidean", "riemannian")

VANILLA_CLIP_R = 15.0


class NumericalError(ArithmeticError):
    """A forward or backward pass produced non-finite values."""


@dataclass(frozen=True)
class ClipConfig:
    mode: str = "hard_clip"
    r: float = 1.0
    beta: float = 0.0
    T: float = 1.0

    def __post_init__(self):
        if self.mode not in CLIP_MODES:
            raise ValueError(f"unknown clip mode {self.mode!r}; expected one of {CLIP_MODES}")
        if not self.r > 0:
            raise ValueError(f"clip radius must be positive, got {self.r}")
        if self.beta < 0:
            raise ValueError(f"beta must be nonnegative, got {self.beta}")
        if not self.T > 0:
            raise ValueError(f"temperature must be positive, got {self.T}")

    @classmethod
    def vanilla(cls) -> "ClipConfig":
        """The usual unclipped baseline: a numerical-safety clip at 15."""
        return cls(mode="hard_clip", r=VANILLA_CLIP_R)


@dataclass(frozen=True)
class MlrHead:
    """Per-class hyperplane offsets ``p`` (inside the ball) and normals ``a``, both (K, n)."""

    p: np.ndarray
    a: np.ndarray
    c: float = 1.0

    def __post_init__(self):
        if self.p.shape != self.a.shape or self.p.ndim != 2:
            raise ValueError(f"p and a must both be (K, n); got {self.p.shape} and {self.a.shape}")
        if np.any(np.linalg.norm(self.a, axis=-1) == 0):
            raise ValueError("hyperplane normals must be nonzero")

    @property
    def n_classes(self) -> int:
        return self.p.shape[0]

    @property
    def dim(self) -> int:
        return self.p.shape[1]

    def params(self) -> dict[str, np.ndarray]:
        return {"p": self.p, "a": self.a}


@dataclass(frozen=True)
class LinearHead:
    """Ordinary Euclidean softmax layer, the in-framework ENN baseline."""

    W: np.ndarray
    b: np.ndarray

    @property
    def n_classes(self) -> int:
        return self.W.shape[0]

    @property
    def dim(self) -> int:
        return self.W.shape[1]

    def params(self) -> dict[str, np.ndarray]:
        return {"W": self.W, "b": self.b}


def init_mlr_head(n_classes: int, dim: int, rng, c: float = 1.0) -> MlrHead:
    """Offsets at the origin, normals ~ N(0, 1/n) per coordinate."""
    a = rng.normal((n_classes, dim), scale=1.0 / math.sqrt(dim))
    return MlrHead(p=np.zeros((n_classes, dim)), a=a, c=c)


def init_linear_head(n_classes: int, dim: int, rng) -> LinearHead:
    W = rng.normal((n_classes, dim), scale=1.0 / math.sqrt(dim))
    return LinearHead(W=W, b=np.zeros(n_classes))


class LossOutput(NamedTuple):
    loss: float
    logits: np.ndarray
    lifted: np.ndarray | None
    d_features: np.ndarray
    grads: dict


# -- feature clipping and the exponential lift ------------------------------


def clip_features(x, r: float) -> np.ndarray:
    """min(1, r/|x|) * x along the last axis; zero stays zero."""
    if not r > 0:
        raise ValueError(f"clip radius must be positive, got {r}")
    x = np.asarray(x, dtype=np.float64)
    norm = np.linalg.norm(x, axis=-1, keepdims=True)
    scale = np.where(norm > r, r / np.where(norm > 0, norm, 1.0), 1.0)
    return x * scale


def lift(x, cfg: ClipConfig, c: float = 1.0) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if cfg.mode == "hard_clip":
        x = clip_features(x, cfg.r)
    return exp0(x, c)


@dataclass
class _LiftCache:
    features: np.ndarray
    v: np.ndarray
    clipped: np.ndarray  # (B, 1) bool
    norm0: np.ndarray
    nv: np.ndarray
    projected: np.ndarray
    x: np.ndarray = field(repr=False)


def _lift_forward(features: np.ndarray, cfg: ClipConfig, c: float) -> _LiftCache:
    sc = math.sqrt(c)
    norm0 = np.linalg.norm(features, axis=-1, keepdims=True)
    if cfg.mode == "hard_clip":
        # the kink |f| == r takes the interior (identity) branch
        clipped = norm0 > cfg.r
        v = np.where(clipped, features * (cfg.r / np.where(norm0 > 0, norm0, 1.0)), features)
    else:
        clipped = np.zeros_like(norm0, dtype=bool)
        v = features
    nv = np.where(clipped, cfg.r, norm0)
    t = np.tanh(sc * nv)
    projected = t >= 1.0 - BOUNDARY_EPS
    rho = np.where(projected, 1.0 - BOUNDARY_EPS, t)
    safe = np.where(nv > 0, nv, 1.0)
    x = np.where(nv > 0, rho * v / (sc * safe), 0.0)
    return _LiftCache(features, v, clipped, norm0, nv, projected, x)


def _radial_slope_over_n(nv: np.ndarray, c: float) -> np.ndarray:
    """f'(n)/n for f(n) = tanh(sqrt(c) n)/(sqrt(c) n), with a series near 0."""
    sc = math.sqrt(c)
    y = sc * nv
    small = y < 1e-3
    ys = np.where(small, 1.0, y)
    exact = (ys / np.cosh(ys) ** 2 - np.tanh(ys)) * c / ys**3
    series = c * (-2.0 / 3.0 + 8.0 * y * y / 15.0)
    return np.where(small, series, exact)


def _lift_backward(cache: _LiftCache, g: np.ndarray, c: float) -> np.ndarray:
    """Vector-Jacobian product of the lift: dL/dx -> dL/dfeatures."""
    sc = math.sqrt(c)
    v, nv = cache.v, cache.nv
    safe = np.where(nv > 0, nv, 1.0)
    vg = np.sum(v * g, axis=-1, keepdims=True)
    # interior of the ball: x = f(|v|) v
    f = np.where(nv > 0, np.tanh(sc * nv) / (sc * safe), 1.0)
    g_free = f * g + _radial_slope_over_n(nv, c) * vg * v
    # projected onto the boundary sphere: only the tangential part survives
    m = (1.0 - BOUNDARY_EPS) / sc
    g_proj = (m / safe) * (g - vg * v / safe**2)
    g_v = np.where(cache.projected, g_proj, g_free)
    if not np.any(cache.clipped):
        return g_v
    n0 = np.where(cache.norm0 > 0, cache.norm0, 1.0)
    f0 = cache.features
    g_clip = (cache.nv / n0) * (g_v - np.sum(f0 * g_v, axis=-1, keepdims=True) * f0 / n0**2)
    return np.where(cache.clipped, g_clip, g_v)


# -- Poincare hyperplane scores ---------------------------------------------


def _check_normal(a: np.ndarray) -> None:
    if np.any(np.linalg.norm(a, axis=-1) == 0):
        raise ValueError("hyperplane normal a must be nonzero")


def signed_plane_score(x, p, a, c: float = 1.0) -> np.ndarray:
    """(lambda_p |a| / sqrt c) asinh(2 sqrt(c) <z,a> / ((1 - c|z|^2)|a|)), z = (-p) + x.

    Magnitude is lambda_p |a| times the distance from x to the hyperplane
    through p with normal a; the sign says which side x is on.
    """
    x, p, a = (np.asarray(t, dtype=np.float64) for t in (x, p, a))
    _check_normal(a)
    sc = math.sqrt(c)
    z = _mobius_add(-p, x, c)
    na = np.linalg.norm(a, axis=-1)
    lam = 2.0 / (1.0 - c * np.sum(p * p, axis=-1))
    za = np.sum(z * a, axis=-1)
    zz = np.sum(z * z, axis=-1)
    return lam * na / sc * np.arcsinh(2.0 * sc * za / ((1.0 - c * zz) * na))


def plane_distance(x, p, a, c: float = 1.0) -> np.ndarray:
    """Geodesic distance from x to the Poincare hyperplane {y : <(-p) + y, a> = 0}."""
    x, p, a = (np.asarray(t, dtype=np.float64) for t in (x, p, a))
    _check_normal(a)
    sc = math.sqrt(c)
    z = _mobius_add(-p, x, c)
    na = np.linalg.norm(a, axis=-1)
    za = np.abs(np.sum(z * a, axis=-1))
    zz = np.sum(z * z, axis=-1)
    return np.arcsinh(2.0 * sc * za / ((1.0 - c * zz) * na)) / sc


def riemannian_scale(x, euclid_grad, c: float = 1.0) -> np.ndarray:
    """Inverse-metric rescaling (1 - c|x|^2)^2 / 4 of a Euclidean gradient at x."""
    x = np.asarray(x, dtype=np.float64)
    factor = (1.0 - c * np.sum(x * x, axis=-1, keepdims=True)) ** 2 / 4.0
    return factor * np.asarray(euclid_grad, dtype=np.float64)


def metric_factor(x, c: float = 1.0) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return (1.0 - c * np.sum(x * x, axis=-1)) ** 2 / 4.0


class _ScoreCache(NamedTuple):
    z: np.ndarray
    za: np.ndarray
    zz: np.ndarray
    na: np.ndarray
    lam: np.ndarray
    arg: np.ndarray
    ash: np.ndarray


def _scores_forward(x: np.ndarray, head: MlrHead) -> tuple[np.ndarray, _ScoreCache]:
    c = head.c
    sc = math.sqrt(c)
    P, A = head.p, head.a
    z = _mobius_add(-P[None, :, :], x[:, None, :], c)  # (B, K, n)
    za = np.einsum("bkn,kn->bk", z, A)
    zz = np.sum(z * z, axis=-1)
    na = np.linalg.norm(A, axis=-1)
    lam = 2.0 / (1.0 - c * np.sum(P * P, axis=-1))
    one_m = np.maximum(1.0 - c * zz, 1e-300)
    arg = 2.0 * sc * za / (one_m * na)
    ash = np.arcsinh(arg)
    logits = lam * na / sc * ash
    return logits, _ScoreCache(z, za, zz, na, lam, arg, ash)


def _mobius_add_vjp(u, v, g, c):
    """Gradients of <g, u (+) v> w.r.t. u and v."""
    uv = _dot(u, v)
    uu = _dot(u, u)
    vv = _dot(v, v)
    alpha = 1.0 + 2.0 * c * uv + c * vv
    beta = 1.0 - c * uu
    den = 1.0 + 2.0 * c * uv + c * c * uu * vv
    out = (alpha * u + beta * v) / den
    gn = g / den
    g_den = -_dot(g, out) / den
    gnu = _dot(gn, u)
    gnv = _dot(gn, v)
    gu = alpha * gn + 2.0 * c * gnu * v - 2.0 * c * gnv * u + g_den * (2.0 * c * v + 2.0 * c * c * vv * u)
    gv = beta * gn + gnu * (2.0 * c * u + 2.0 * c * v) + g_den * (2.0 * c * u + 2.0 * c * c * uu * v)
    return gu, gv


def _dot(x, y):
    return np.sum(x * y, axis=-1, keepdims=True)


def _scores_backward(x, head: MlrHead, cache: _ScoreCache, G: np.ndarray):
    """Backprop dL/dlogits (B, K) to x, p and a."""
    c = head.c
    sc = math.sqrt(c)
    P, A = head.p, head.a
    z, za, zz, na, lam, arg, ash = cache
    one_m = np.maximum(1.0 - c * zz, 1e-300)
    g_arg = G * (lam * na / sc) / np.hypot(1.0, arg)
    g_za = g_arg * 2.0 * sc / (one_m * na)
    g_zz = g_arg * arg * c / one_m
    g_na = G * lam / sc * ash - g_arg * arg / na
    g_lam = G * na / sc * ash

    g_z = g_za[..., None] * A[None] + 2.0 * g_zz[..., None] * z
    g_a = np.einsum("bk,bkn->kn", g_za, z) + np.sum(g_na, axis=0)[:, None] * A / na[:, None]

    gu, gv = _mobius_add_vjp(-P[None, :, :], x[:, None, :], g_z, c)
    g_x = np.sum(gv, axis=1)
    g_p = -np.sum(gu, axis=0) + (np.sum(g_lam, axis=0) * c * lam * lam)[:, None] * P
    return g_x, g_p, g_a


# -- softmax cross-entropy --------------------------------------------------


def _log_softmax(z: np.ndarray) -> np.ndarray:
    m = np.max(z, axis=-1, keepdims=True)
    s = z - m
    return s - np.log(np.sum(np.exp(s), axis=-1, keepdims=True))


def softmax(z: np.ndarray) -> np.ndarray:
    return np.exp(_log_softmax(np.asarray(z, dtype=np.float64)))


def _cross_entropy(logits: np.ndarray, labels: np.ndarray, T: float = 1.0):
    """Mean CE of softmax(logits / T) and dL/dlogits."""
    B = logits.shape[0]
    logp = _log_softmax(logits / T)
    loss = -float(np.mean(logp[np.arange(B), labels]))
    G = np.exp(logp)
    G[np.arange(B), labels] -= 1.0
    return loss, G / (B * T)


def _as_batch(features, labels=None):
    f = np.asarray(features, dtype=np.float64)
    single = f.ndim == 1
    if single:
        f = f[None, :]
    if labels is None:
        return f, None, single
    y = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if y.shape[0] != f.shape[0]:
        raise ValueError("features and labels disagree on batch size")
    return f, y, single


def forward(head, features, cfg: ClipConfig = ClipConfig()):
    """Raw logits (B, K) and the hyperbolic embeddings (None for a LinearHead).

    Temperature scaling is applied inside the loss, not here.
    """
    f, _, single = _as_batch(features)
    if f.shape[-1] != head.dim:
        raise ValueError(f"feature dim {f.shape[-1]} != head dim {head.dim}")
    if isinstance(head, LinearHead):
        logits = f @ head.W.T + head.b
        lifted = None
    else:
        x = _lift_forward(f, cfg, head.c).x
        logits, _ = _scores_forward(x, head)
        lifted = x[0] if single else x
    return (logits[0] if single else logits), lifted


def predict(head, features, cfg: ClipConfig = ClipConfig()) -> np.ndarray:
    """Argmax class; ties go to the smallest index."""
    logits, _ = forward(head, features, cfg)
    return np.argmax(logits, axis=-1)


def loss_and_grads(head, features, labels, cfg: ClipConfig = ClipConfig(),
                   embedding_grad: str = "euclidean") -> LossOutput:
    """Mean softmax cross-entropy over the batch and its gradients.

    ``d_features`` has one row per sample (gradient of the batch-mean loss).
    ``grads`` holds the head parameter gradients keyed like ``head.params()``.
    """
    if embedding_grad not in EMBEDDING_GRADS:
        raise ValueError(f"embedding_grad must be one of {EMBEDDING_GRADS}")
    f, y, _ = _as_batch(features, labels)
    if f.shape[-1] != head.dim:
        raise ValueError(f"feature dim {f.shape[-1]} != head dim {head.dim}")
    K = head.n_classes
    if np.any((y < 0) | (y >= K)):
        raise ValueError(f"labels must lie in [0, {K})")
    T = cfg.T if cfg.mode == "temperature" else 1.0

    if isinstance(head, LinearHead):
        logits = f @ head.W.T + head.b
        loss, G = _cross_entropy(logits, y, T)
        out = LossOutput(loss, logits, None, G @ head.W, {"W": G.T @ f, "b": G.sum(axis=0)})
        _check_finite(out)
        return out

    lc = _lift_forward(f, cfg, head.c)
    x = lc.x
    logits, sc_cache = _scores_forward(x, head)
    loss, G = _cross_entropy(logits, y, T)
    g_x, g_p, g_a = _scores_backward(x, head, sc_cache, G)
    if cfg.mode == "soft_penalty" and cfg.beta > 0:
        B = f.shape[0]
        loss += cfg.beta * float(np.mean(np.sum(x * x, axis=-1)))
        g_x = g_x + (2.0 * cfg.beta / B) * x
    if embedding_grad == "riemannian":
        g_x = riemannian_scale(x, g_x, head.c)
    d_features = _lift_backward(lc, g_x, head.c)
    out = LossOutput(loss, logits, x, d_features, {"p": g_p, "a": g_a})
    _check_finite(out)
    return out


def _check_finite(out: LossOutput) -> None:
    if not math.isfinite(out.loss):
        raise NumericalError(f"non-finite loss {out.loss}")
    if not np.all(np.isfinite(out.d_features)):
        raise NumericalError("non-finite gradient w.r.t. features")
    for name, g in out.grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for head parameter {name!r}")


def with_params(head, **params):
    return replace(head, **params)
