"""Block losses on (batch, 2m, 2m, 2) predictions of the full MSR matrix.

Channel 0 holds real parts and channel 1 imaginary parts, so squared
Frobenius norms of complex blocks are plain sums of squares over both channels.
"""

from __future__ import annotations

import numpy as np


def _check(pred, target):
    if pred.shape != target.shape or pred.ndim != 4:
        raise ValueError(f"prediction {pred.shape} and target {target.shape} must match as (B, n, n, c)")


def loss_l1(pred: np.ndarray, target: np.ndarray):
    """Mean over the batch of sum_ij ||F_ij - F_ij^C||_F^2; returns (loss, dloss/dpred)."""
    _check(pred, target)
    B = pred.shape[0]
    r = pred - target
    return float(np.sum(r * r) / B), (2.0 / B) * r


def assemble_with_truth(pred, target, m1: int):
    """[[F11^C, F12], [F21^C, F22^C]]: predictions with the true upper-right block."""
    A = pred.copy()
    A[:, :m1, m1:, :] = target[:, :m1, m1:, :]
    return A


def seam_penalty(A: np.ndarray, m1: int):
    """Squared jumps across the block interfaces of A; returns (value, dvalue/dA)."""
    dv = A[:, :, m1 - 1, :] - A[:, :, m1, :]
    dh = A[:, m1 - 1, :, :] - A[:, m1, :, :]
    g = np.zeros_like(A)
    g[:, :, m1 - 1, :] += 2 * dv
    g[:, :, m1, :] -= 2 * dv
    g[:, m1 - 1, :, :] += 2 * dh
    g[:, m1, :, :] -= 2 * dh
    return float(np.sum(dv * dv) + np.sum(dh * dh)), g


def loss_l2(pred: np.ndarray, target: np.ndarray, m1: int, alpha: float = 1e-3):
    """loss_l1 plus (alpha / B) times the seam penalty of the assembled matrix.

    The true F12 enters the seams, so seam gradients inside the (1,2) block are
    dropped; the F12 prediction is still driven by the L1 part.
    """
    l1, g1 = loss_l1(pred, target)
    n = pred.shape[1]
    if not 0 < m1 < n:
        raise ValueError("m1 out of range")
    if alpha == 0:
        return l1, g1
    B = pred.shape[0]
    term, gA = seam_penalty(assemble_with_truth(pred, target, m1), m1)
    gA[:, :m1, m1:, :] = 0.0
    return l1 + (alpha / B) * term, g1 + (alpha / B) * gA
