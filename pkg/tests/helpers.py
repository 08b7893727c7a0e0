"""Shared oracles for the test-suite."""

import numpy as np

from hypclip.mlr import ClipConfig, MlrHead

FD_STEP = 1e-6


def central_difference(f, x: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    """Gradient of scalar ``f`` at ``x`` by central differences, one coordinate at a time."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = f(x)
        flat[i] = old - h
        down = f(x)
        flat[i] = old
        g[i] = (up - down) / (2 * h)
    return grad


def rel_error(analytic, numeric, floor: float = 1e-7) -> float:
    """Largest deviation relative to the size of the numeric gradient."""
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    scale = max(float(np.max(np.abs(numeric))), floor)
    return float(np.max(np.abs(analytic - numeric))) / scale


def random_vectors(rng, shape, lo, hi):
    """Rows with uniformly random direction and norm in [lo, hi]."""
    v = rng.normal(size=shape)
    v /= np.linalg.norm(v, axis=-1, keepdims=True)
    return v * rng.uniform(lo, hi, size=shape[:-1] + (1,))


CLIP_CHOICES = (
    ClipConfig("hard_clip", r=1.0),
    ClipConfig("hard_clip", r=2.5),
    ClipConfig.vanilla(),
    ClipConfig("none"),
    ClipConfig("soft_penalty", beta=0.1),
    ClipConfig("temperature", T=2.0),
)


def five_point_difference(f, x: np.ndarray, h: float) -> np.ndarray:
    """Fourth-order central stencil; tolerates a larger step where rounding dominates."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat, g = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        vals = []
        for k in (2, 1, -1, -2):
            flat[i] = old + k * h
            vals.append(f(x))
        flat[i] = old
        g[i] = (-vals[0] + 8 * vals[1] - 8 * vals[2] + vals[3]) / (12 * h)
    return grad


# Beyond this value of sqrt(c)|f| tanh rounds to within 1e-5 of one and the
# unclipped lift lands on the projection sphere.
SATURATION_NORM = 5.0


def random_head_problem(seed: int, saturate: bool = False):
    """A well-conditioned random head, feature batch, labels and clip mode.

    Features have norm <= 10 when the clip radius keeps them off the boundary,
    otherwise <= SATURATION_NORM / sqrt(c); ``saturate=True`` instead forces every
    unclipped feature past the projection threshold.
    """
    rng = np.random.default_rng(seed)
    K = int(rng.integers(2, 6))
    n = int(rng.integers(2, 7))
    B = int(rng.integers(1, 5))
    c = float(rng.choice([0.5, 1.0, 2.0]))
    p = random_vectors(rng, (K, n), 0.0, 0.5) / np.sqrt(max(c, 1.0))
    a = random_vectors(rng, (K, n), 0.1, 2.0)
    cfg = CLIP_CHOICES[seed % len(CLIP_CHOICES)]
    bounded = cfg.mode == "hard_clip" and cfg.r < SATURATION_NORM
    if saturate:
        feats = random_vectors(rng, (B, n), 7.0, 10.0) / np.sqrt(min(c, 1.0))
    else:
        feats = random_vectors(rng, (B, n), 0.0, 10.0 if bounded else SATURATION_NORM / np.sqrt(c))
    labels = rng.integers(0, K, size=B)
    return MlrHead(p=p, a=a, c=c), feats, labels, cfg


def threshold_sweep(in_s, out_s):
    """(FPR95, AUROC, AUPR) by enumerating every threshold; score >= t counts as in-distribution."""
    in_s, out_s = np.asarray(in_s, float), np.asarray(out_s, float)
    pts = [(0.0, 0.0)]
    aupr = 0.0
    prev_tpr = 0.0
    for t in sorted(set(in_s) | set(out_s), reverse=True):
        tp = int(np.sum(in_s >= t))
        fp = int(np.sum(out_s >= t))
        tpr, fpr = tp / len(in_s), fp / len(out_s)
        pts.append((fpr, tpr))
        aupr += (tpr - prev_tpr) * tp / (tp + fp)
        prev_tpr = tpr
    fpr95 = min(f for f, t in pts if t >= 0.95)
    auroc = sum((f2 - f1) * (t1 + t2) / 2 for (f1, t1), (f2, t2) in zip(pts, pts[1:]))
    return fpr95, auroc, aupr
