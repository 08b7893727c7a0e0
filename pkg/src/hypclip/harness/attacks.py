"""FGSM and l-infinity PGD against a trained model."""

from __future__ import annotations

import numpy as np

from ..net import TrainState, input_gradient

PIXEL_RANGE = (0.0, 1.0)


def fgsm_delta(grad, eps: float) -> np.ndarray:
    return eps * np.sign(grad)


def fgsm(state: TrainState, X, y, eps: float, bounds=PIXEL_RANGE) -> np.ndarray:
    """x + eps * sign(dl/dx), clamped to ``bounds`` (pass None to skip clamping)."""
    if eps < 0:
        raise ValueError("eps must be >= 0")
    X = np.asarray(X, dtype=np.float64)
    if eps == 0:
        return X.copy()
    _, grad = input_gradient(state, X, y)
    adv = X + fgsm_delta(grad.reshape(X.shape), eps)
    return np.clip(adv, *bounds) if bounds is not None else adv


def project_linf(x, origin, eps: float) -> np.ndarray:
    return np.clip(x, origin - eps, origin + eps)


def pgd(state: TrainState, X, y, eps: float, steps: int, step_size: float,
        bounds=PIXEL_RANGE) -> np.ndarray:
    """Iterated sign steps, each followed by projection onto the eps-box and the input range.

    Starts from the clean input, so one step of size eps is exactly FGSM.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if eps < 0 or step_size <= 0:
        raise ValueError("eps must be >= 0 and step_size > 0")
    X0 = np.asarray(X, dtype=np.float64)
    adv = X0.copy()
    for _ in range(steps):
        _, grad = input_gradient(state, adv, y)
        adv = project_linf(adv + step_size * np.sign(grad.reshape(X0.shape)), X0, eps)
        if bounds is not None:
            adv = np.clip(adv, *bounds)
    return adv
