"""Output decoding and the three training losses.

Raw network outputs per pair, in column order:

0. distance logit, ``r = DISTANCE_SCALE * softplus(raw0)`` meters
1. log relative spread, ``b_rel = exp(raw1)``; spread in meters is ``b_rel * r``
2. azimuth beta, radians
3. polar angle psi, radians
4. matching logit, ``p = sigmoid(raw4)``

Every loss function returns the batch-mean value and its gradient with
respect to the raw outputs, so losses compose by simple addition.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError

DISTANCE_SCALE = 20.0
PROB_CLAMP = 1e-7


def softplus(x):
    return np.logaddexp(0.0, x)


def sigmoid(x):
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class DecodedOutput:
    r: np.ndarray
    spread_b: np.ndarray
    spread_rel: np.ndarray
    beta: np.ndarray
    psi: np.ndarray
    ism_prob: np.ndarray

    def __len__(self):
        return len(self.r)


def decode(raw):
    """Map raw outputs (B, 5) or (5,) to constrained quantities."""
    raw = np.atleast_2d(np.asarray(raw, dtype=float))
    r = DISTANCE_SCALE * softplus(raw[:, 0])
    b_rel = np.exp(raw[:, 1])
    return DecodedOutput(r=r, spread_b=b_rel * r, spread_rel=b_rel, beta=raw[:, 2].copy(),
                         psi=raw[:, 3].copy(), ism_prob=sigmoid(raw[:, 4]))


# -- scalar forms ---------------------------------------------------------------

def laplace_loss(x, r, b):
    """Relative Laplace negative log-likelihood ``|1 - r/x| / b + log(2 b)``."""
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise DataError("ground-truth distance must be positive")
    return np.abs(1.0 - r / x) / b + np.log(2.0 * b)


def bce_loss(p, y):
    p = np.clip(np.asarray(p, dtype=float), PROB_CLAMP, 1.0 - PROB_CLAMP)
    return -(y * np.log(p) + (1 - y) * np.log(1.0 - p))


def angle_loss(beta_pred, psi_pred, beta_gt, psi_gt):
    return np.abs(np.asarray(beta_pred) - beta_gt) + np.abs(np.asarray(psi_pred) - psi_gt)


# -- batch losses with gradients w.r.t. raw outputs -------------------------------

def laplace_term(raw, r_gt, mask=None):
    """Mean Laplace loss over ``mask`` (rows with mask 0 contribute nothing).

    The mean is taken over the whole batch so that per-loss weights keep the
    same meaning whether or not some rows are masked.
    """
    n = len(raw)
    if np.any(r_gt <= 0):
        raise DataError("ground-truth distance must be positive")
    m = np.ones(n) if mask is None else np.asarray(mask, dtype=float)
    r = DISTANCE_SCALE * softplus(raw[:, 0])
    b = np.exp(raw[:, 1])
    resid = 1.0 - r / r_gt
    per = np.abs(resid) / b + np.log(2.0) + raw[:, 1]
    grad = np.zeros_like(raw)
    dr = -np.sign(resid) / (r_gt * b)
    grad[:, 0] = m * dr * DISTANCE_SCALE * sigmoid(raw[:, 0]) / n
    grad[:, 1] = m * (1.0 - np.abs(resid) / b) / n
    return float((m * per).sum() / n), grad, np.sign(resid)


def ism_term(raw, labels):
    n = len(raw)
    p = sigmoid(raw[:, 4])
    clamped = (p < PROB_CLAMP) | (p > 1.0 - PROB_CLAMP)
    per = bce_loss(p, labels)
    grad = np.zeros_like(raw)
    grad[:, 4] = np.where(clamped, 0.0, p - labels) / n
    return float(per.sum() / n), grad, clamped


def angle_term(raw, beta_gt, psi_gt):
    n = len(raw)
    db = raw[:, 2] - beta_gt
    dp = raw[:, 3] - psi_gt
    grad = np.zeros_like(raw)
    grad[:, 2] = np.sign(db) / n
    grad[:, 3] = np.sign(dp) / n
    return float((np.abs(db) + np.abs(dp)).sum() / n), grad, np.concatenate([np.sign(db), np.sign(dp)])


@dataclass(frozen=True)
class LossWeights:
    laplace: float = 1.0
    ism: float = 1.0
    angle: float = 1.0


def composed_loss(raw, gt, labels, weights=LossWeights(), distance_mask=None):
    """Weighted sum of the three losses.

    Returns ``(total, grad, parts, kinks)`` where ``parts`` maps loss name to
    its unweighted batch mean and ``kinks`` collects the sign patterns of the
    non-smooth terms (used by the gradient checker).
    """
    lap, g_lap, k_lap = laplace_term(raw, gt[:, 0], distance_mask)
    bce, g_bce, k_bce = ism_term(raw, labels)
    ang, g_ang, k_ang = angle_term(raw, gt[:, 1], gt[:, 2])
    total = weights.laplace * lap + weights.ism * bce + weights.angle * ang
    grad = weights.laplace * g_lap + weights.ism * g_bce + weights.angle * g_ang
    kinks = np.concatenate([k_lap, k_bce.astype(float), k_ang])
    return total, grad, {"laplace": lap, "ism": bce, "angle": ang}, kinks
