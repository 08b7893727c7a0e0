"""Poincare-ball geometry in gyrovector form.

Points live in the open ball ``{x : c * |x|^2 < 1}`` where ``c > 0`` is the
magnitude of the (negative) curvature. Every function accepts plain numpy
arrays with the vector on the last axis and broadcasts over leading axes.
All arithmetic is float64.

Any operation that produces a point projects it back inside the ball to
norm at most ``(1 - BOUNDARY_EPS) / sqrt(c)``.
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

BOUNDARY_EPS = 1e-5
ATANH_CLAMP = 1.0 - 1e-15


class BallDomainError(ValueError):
    """A point is on or outside the ball boundary."""


def _as_vec(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def _check_curvature(c: float) -> float:
    c = float(c)
    if not c > 0.0:
        raise ValueError(f"curvature magnitude must be positive, got {c}")
    return c


def _same_dim(*arrays: np.ndarray) -> None:
    dims = {a.shape[-1] for a in arrays}
    if len(dims) != 1:
        raise ValueError(f"dimension mismatch: {sorted(dims)}")


def _sqnorm(x: np.ndarray) -> np.ndarray:
    return np.sum(x * x, axis=-1, keepdims=True)


def _dot(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return np.sum(x * y, axis=-1, keepdims=True)


def artanh(z):
    """0.5 * ln((1 + z) / (1 - z)) with |z| clamped to 1 - 1e-15."""
    z = np.clip(z, -ATANH_CLAMP, ATANH_CLAMP)
    return 0.5 * (np.log1p(z) - np.log1p(-z))


def _require_interior(x: np.ndarray, c: float) -> None:
    if np.any(c * _sqnorm(x) >= 1.0):
        raise BallDomainError("point lies on or outside the Poincare ball")


def max_norm(c: float = 1.0) -> float:
    return (1.0 - BOUNDARY_EPS) / math.sqrt(c)


def project(x, c: float = 1.0) -> np.ndarray:
    """Pull points with c|x|^2 >= (1 - eps)^2 back to norm (1 - eps)/sqrt(c)."""
    x = _as_vec(x)
    c = _check_curvature(c)
    norm = np.sqrt(_sqnorm(x))
    limit = max_norm(c)
    scale = np.where(norm >= limit, limit / np.where(norm > 0, norm, 1.0), 1.0)
    return x * scale


def conformal_factor(x, c: float = 1.0) -> np.ndarray:
    """lambda_x = 2 / (1 - c|x|^2). Returns a scalar array per point."""
    x = _as_vec(x)
    c = _check_curvature(c)
    _require_interior(x, c)
    return 2.0 / (1.0 - c * np.sum(x * x, axis=-1))


def _mobius_add(u: np.ndarray, v: np.ndarray, c: float) -> np.ndarray:
    uv = _dot(u, v)
    uu = _sqnorm(u)
    vv = _sqnorm(v)
    num = (1.0 + 2.0 * c * uv + c * vv) * u + (1.0 - c * uu) * v
    den = 1.0 + 2.0 * c * uv + c * c * uu * vv
    return num / den


def mobius_add(u, v, c: float = 1.0) -> np.ndarray:
    u, v = _as_vec(u), _as_vec(v)
    c = _check_curvature(c)
    _same_dim(u, v)
    return project(_mobius_add(u, v, c), c)


def mobius_scalar_mul(r, v, c: float = 1.0) -> np.ndarray:
    """r (x) v = tanh(r * artanh(sqrt(c)|v|)) v / (sqrt(c)|v|); 0 maps to 0."""
    v = _as_vec(v)
    c = _check_curvature(c)
    r = np.asarray(r, dtype=np.float64)
    if r.ndim:
        r = r[..., None]
    sc = math.sqrt(c)
    norm = np.sqrt(_sqnorm(v))
    safe = np.where(norm > 0, norm, 1.0)
    out = np.tanh(r * artanh(sc * norm)) * v / (sc * safe)
    return project(np.where(norm > 0, out, 0.0), c)


def exp0(v, c: float = 1.0) -> np.ndarray:
    """Exponential map at the origin: tanh(sqrt(c)|v|) v / (sqrt(c)|v|)."""
    v = _as_vec(v)
    c = _check_curvature(c)
    sc = math.sqrt(c)
    norm = np.sqrt(_sqnorm(v))
    safe = np.where(norm > 0, norm, 1.0)
    out = np.tanh(sc * norm) * v / (sc * safe)
    return project(np.where(norm > 0, out, 0.0), c)


def log0(y, c: float = 1.0) -> np.ndarray:
    y = _as_vec(y)
    c = _check_curvature(c)
    sc = math.sqrt(c)
    norm = np.sqrt(_sqnorm(y))
    safe = np.where(norm > 0, norm, 1.0)
    return np.where(norm > 0, artanh(sc * norm) * y / (sc * safe), 0.0)


def exp_at(x, v, c: float = 1.0) -> np.ndarray:
    """Exponential map at base point x applied to tangent vector v."""
    x, v = _as_vec(x), _as_vec(v)
    c = _check_curvature(c)
    _same_dim(x, v)
    sc = math.sqrt(c)
    lam = 2.0 / (1.0 - c * _sqnorm(x))
    norm = np.sqrt(_sqnorm(v))
    safe = np.where(norm > 0, norm, 1.0)
    step = np.where(norm > 0, np.tanh(sc * lam * norm / 2.0) * v / (sc * safe), 0.0)
    return project(_mobius_add(np.broadcast_to(x, step.shape), step, c), c)


def log_at(x, y, c: float = 1.0) -> np.ndarray:
    """Logarithmic map: the tangent vector at x pointing to y; zero when x == y."""
    x, y = _as_vec(x), _as_vec(y)
    c = _check_curvature(c)
    _same_dim(x, y)
    sc = math.sqrt(c)
    w = _mobius_add(-x, y, c)
    norm = np.sqrt(_sqnorm(w))
    safe = np.where(norm > 0, norm, 1.0)
    lam = 2.0 / (1.0 - c * _sqnorm(x))
    return np.where(norm > 0, (2.0 / (sc * lam)) * artanh(sc * norm) * w / safe, 0.0)


def distance(x, y, c: float = 1.0) -> np.ndarray:
    """Geodesic distance (2/sqrt(c)) artanh(sqrt(c) |(-x) + y|)."""
    x, y = _as_vec(x), _as_vec(y)
    c = _check_curvature(c)
    _same_dim(x, y)
    sc = math.sqrt(c)
    w = _mobius_add(-x, y, c)
    d = (2.0 / sc) * artanh(sc * np.sqrt(np.sum(w * w, axis=-1)))
    # (-x) + x is only zero up to rounding
    return np.where(np.all(x == y, axis=-1), 0.0, d)


def origin_distance(x, c: float = 1.0) -> np.ndarray:
    """s ln((s + |x|) / (s - |x|)) with s = 1/sqrt(c)."""
    x = _as_vec(x)
    c = _check_curvature(c)
    _require_interior(x, c)
    s = 1.0 / math.sqrt(c)
    norm = np.sqrt(np.sum(x * x, axis=-1))
    return s * np.log((s + norm) / (s - norm))


def gyroline(a, b, t, c: float = 1.0) -> np.ndarray:
    """Point a + ((-a + b) (x) t) on the geodesic through a (t=0) and b (t=1)."""
    a, b = _as_vec(a), _as_vec(b)
    c = _check_curvature(c)
    _same_dim(a, b)
    step = mobius_scalar_mul(t, _mobius_add(-a, b, c), c)
    return project(_mobius_add(np.broadcast_to(a, step.shape), step, c), c)


def angle(at, toward1, toward2, c: float = 1.0) -> float:
    """Interior angle at ``at`` of the geodesics to ``toward1`` and ``toward2``.

    The ball is conformal, so this is the Euclidean angle between the two
    logarithmic-map tangent vectors.
    """
    u = log_at(at, toward1, c)
    v = log_at(at, toward2, c)
    nu, nv = float(np.linalg.norm(u)), float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        raise ValueError("angle undefined: coincident points")
    cos = float(np.dot(u, v)) / (nu * nv)
    return math.acos(min(1.0, max(-1.0, cos)))


class TriangleDefect(NamedTuple):
    radians: float
    degenerate: bool

    @property
    def degrees(self) -> float:
        return math.degrees(self.radians)


def triangle_defect(p1, p2, p3, c: float = 1.0, tol: float = 1e-12) -> TriangleDefect:
    """pi minus the angle sum of the geodesic triangle p1 p2 p3.

    Coincident vertices or vertices on one geodesic give ``(0.0, True)``.
    """
    p1, p2, p3 = _as_vec(p1), _as_vec(p2), _as_vec(p3)
    sides = (distance(p1, p2, c), distance(p2, p3, c), distance(p1, p3, c))
    if min(float(s) for s in sides) <= tol:
        return TriangleDefect(0.0, True)
    angles = (angle(p1, p2, p3, c), angle(p2, p3, p1, c), angle(p3, p1, p2, c))
    if any(a <= 1e-9 or a >= math.pi - 1e-9 for a in angles):
        return TriangleDefect(0.0, True)
    return TriangleDefect(math.pi - sum(angles), False)
