"""Closed-form flow algebra: interpolation, velocity transforms, losses.

Every function here is an exact element-wise formula on (H, D) motion
arrays.  The linear path between an action ``x0`` and a reaction ``x1`` is

    x_t = t * x1 + (1 - (1 - sigma_min) * t) * x0

with a small residual coupling ``sigma_min`` to ``x0`` at t = 1.  The
velocity of that path, the conversions between endpoint prediction and
velocity prediction, and the recovery of the path start from an endpoint
estimate are all closed forms in (x_t, t, sigma_min).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import geometry as geo
from .errors import ShapeMismatch, SingularTime

SIGMA_MIN_DEFAULT = 1e-4
_SINGULAR_GUARD = 1e-9


def _check_pair(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch(f"shapes differ: {a.shape} vs {b.shape}")
    return a, b


def _denom(t: float, sigma_min: float) -> float:
    d = 1.0 - (1.0 - sigma_min) * t
    if d <= _SINGULAR_GUARD:
        raise SingularTime(f"1 - (1 - sigma_min) * t = {d:.3e} at t = {t}")
    return d


def interpolate(x0: np.ndarray, x1: np.ndarray, t: float, sigma_min: float) -> np.ndarray:
    """Point on the linear path at time t; t = 0 gives x0 exactly."""
    x0, x1 = _check_pair(x0, x1)
    return t * x1 + (1.0 - (1.0 - sigma_min) * t) * x0


def target_velocity(x0: np.ndarray, x1: np.ndarray, sigma_min: float) -> np.ndarray:
    """Path velocity x1 - (1 - sigma_min) * x0; constant in t."""
    x0, x1 = _check_pair(x0, x1)
    return x1 - (1.0 - sigma_min) * x0


def v_from_x1(x1_hat: np.ndarray, x_t: np.ndarray, t: float, sigma_min: float) -> np.ndarray:
    """Velocity implied by an endpoint estimate at state (x_t, t)."""
    x1_hat, x_t = _check_pair(x1_hat, x_t)
    return (x1_hat - (1.0 - sigma_min) * x_t) / _denom(t, sigma_min)


def x1_from_v(v: np.ndarray, x_t: np.ndarray, t: float, sigma_min: float) -> np.ndarray:
    """Endpoint estimate implied by a velocity; exact inverse of v_from_x1."""
    v, x_t = _check_pair(v, x_t)
    return (1.0 - sigma_min) * x_t + (1.0 - (1.0 - sigma_min) * t) * v


def x1_from_v_t(v: ad.Tensor, x_t: ad.Tensor, t: float, sigma_min: float) -> ad.Tensor:
    """Tape variant of :func:`x1_from_v` for training in velocity mode."""
    return v * (1.0 - (1.0 - sigma_min) * t) + x_t * (1.0 - sigma_min)


def x0_hat(x1_hat: np.ndarray, x_t: np.ndarray, t: float, sigma_min: float) -> np.ndarray:
    """Path start recovered from an endpoint estimate: (x_t - t*x1_hat) / denom."""
    x1_hat, x_t = _check_pair(x1_hat, x_t)
    return (x_t - t * x1_hat) / _denom(t, sigma_min)


def x0_hat_expanded(x1_hat: np.ndarray, x_t: np.ndarray, t: float,
                    sigma_min: float) -> np.ndarray:
    """Equivalent expanded form of :func:`x0_hat`:

        x1_hat + (x_t - (1 + sigma_min * t) * x1_hat) / denom

    Kept alongside the compact form so their equality is testable.
    """
    x1_hat, x_t = _check_pair(x1_hat, x_t)
    return x1_hat + (x_t - (1.0 + sigma_min * t) * x1_hat) / _denom(t, sigma_min)


def fm_loss(pred: np.ndarray, target: np.ndarray) -> float:
    """Mean squared error over all entries."""
    pred, target = _check_pair(pred, target)
    return float(np.mean((pred - target) ** 2))


@dataclass
class InteractionTargets:
    """Constant side of the interaction loss for one (x0, gt_x1) pair.

    Holds the actor FK/rotation/translation terms and the ground-truth
    relative quantities so they are computed once per sample, not per
    training step.  ``concat`` merges per-sample targets frame-wise so one
    flattened prediction covers a whole batch.
    """

    a_pos: np.ndarray      # (H, K, 3)
    a_rot_t: np.ndarray    # (H, K+1, 3, 3), transposed actor rotations
    a_trans: np.ndarray    # (H, 3)
    gt_pos: np.ndarray     # ground-truth-relative FK positions
    gt_rot: np.ndarray     # ground-truth-relative rotation matrices
    gt_trans: np.ndarray   # ground-truth-relative root translations

    @staticmethod
    def concat(targets: list["InteractionTargets"]) -> "InteractionTargets":
        return InteractionTargets(*(np.concatenate([getattr(t, f) for t in targets])
                                    for f in ("a_pos", "a_rot_t", "a_trans",
                                              "gt_pos", "gt_rot", "gt_trans")))


def interaction_targets(skel: geo.Skeleton, x0: np.ndarray,
                        gt_x1: np.ndarray) -> InteractionTargets:
    k = skel.joint_count
    h = x0.shape[0]

    def parts(x):
        pos = geo.motion_joint_positions(skel, x)
        rot = geo.rot6d_decode(x[:, :6 * (k + 1)].reshape(h, k + 1, 6))
        return pos, rot, x[:, 6 * (k + 1):]

    a_pos, a_rot, a_trans = parts(np.asarray(x0, dtype=np.float64))
    g_pos, g_rot, g_trans = parts(np.asarray(gt_x1, dtype=np.float64))
    a_rot_t = np.swapaxes(a_rot, -1, -2)
    return InteractionTargets(a_pos, a_rot_t, a_trans, g_pos - a_pos,
                              g_rot @ a_rot_t, g_trans - a_trans)


def interaction_loss(pred_x1: np.ndarray, gt_x1: np.ndarray, x0: np.ndarray,
                     skel: geo.Skeleton) -> float:
    """Interaction loss between predicted and ground-truth reactions.

    Three terms, each (1/H) * sum of squared differences between the
    ground-truth-relative and prediction-relative quantities against the
    same actor: per-joint FK positions, per-slot relative rotation matrices
    (all K joint rotations plus the root orientation, each times the
    transposed actor matrix), and root translations.
    """
    pred_x1, gt_x1 = _check_pair(pred_x1, gt_x1)
    _check_pair(pred_x1, x0)
    h = pred_x1.shape[0]
    k = skel.joint_count
    t = interaction_targets(skel, x0, gt_x1)
    pos = geo.motion_joint_positions(skel, pred_x1)
    rot = geo.rot6d_decode(pred_x1[:, :6 * (k + 1)].reshape(h, k + 1, 6))
    loss = (np.sum((t.gt_pos - (pos - t.a_pos)) ** 2)
            + np.sum((t.gt_rot - rot @ t.a_rot_t) ** 2)
            + np.sum((t.gt_trans - (pred_x1[:, 6 * (k + 1):] - t.a_trans)) ** 2))
    return float(loss / h)


def interaction_loss_t(pred_x1: ad.Tensor, gt_x1: np.ndarray, x0: np.ndarray,
                       skel: geo.Skeleton,
                       targets: InteractionTargets | None = None) -> ad.Tensor:
    """Tape variant of :func:`interaction_loss`, differentiable in pred_x1."""
    h = pred_x1.shape[0]
    k = skel.joint_count
    t = targets if targets is not None else interaction_targets(skel, x0, gt_x1)

    pos, rot = geo.fk_positions_t(skel, pred_x1)
    d_pos = ad.constant(t.gt_pos + t.a_pos) - pos
    d_rot = ad.constant(t.gt_rot) - rot @ ad.constant(t.a_rot_t)
    d_trans = ad.constant(t.gt_trans + t.a_trans) - pred_x1[:, 6 * (k + 1):]
    total = (d_pos * d_pos).sum() + (d_rot * d_rot).sum() + (d_trans * d_trans).sum()
    return total * (1.0 / h)
