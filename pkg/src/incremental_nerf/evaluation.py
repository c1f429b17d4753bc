"""Trajectory alignment and quality metrics.

Estimated and reference trajectories live in unrelated gauges, so they are
compared after a least-squares similarity alignment. Each camera
contributes its center and one virtual point on its optical axis, which
pins rotations and keeps the fit well-posed when all centers are collinear.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import Degenerate, DimensionMismatch, DomainError
from ._validation import check_trajectory
from .geometry import axis_angle_to_matrix, matrix_to_axis_angle

METRIC_COLUMNS = ("scene", "ΔR", "ΔT", "PSNR")


@dataclass(frozen=True)
class Sim3:
    scale: float = 1.0
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if not self.scale > 0:
            raise DomainError("similarity scale must be positive")

    def apply(self, points):
        """``s R p + t`` for ``(N, 3)`` or ``(3,)`` points."""
        return self.scale * np.asarray(points) @ self.rotation.T + self.translation

    def inverse(self):
        Rt = self.rotation.T
        return Sim3(1.0 / self.scale, Rt, -(Rt @ self.translation) / self.scale)

    def apply_poses(self, rotations, translations):
        """Transform camera-to-world poses given as axis-angles and centers."""
        R = axis_angle_to_matrix(np.asarray(rotations, float).reshape(-1, 3))
        new_R = self.rotation @ R
        return matrix_to_axis_angle(new_R), self.apply(np.asarray(translations, float).reshape(-1, 3))


@dataclass
class TrajectoryMetrics:
    delta_r: float
    delta_t: float
    per_image_r: np.ndarray
    per_image_t: np.ndarray
    alignment: Sim3


def augment_virtual_points(rotations, translations, depth=1.0, axes=(2,)):
    """Camera centers followed by virtual points on the chosen camera axes.

    With the default ``axes=(2,)`` this returns ``(2N, 3)``: rows ``0..N-1``
    are centers and ``N..2N-1`` the points ``R (0, 0, depth) + t``. Each
    further axis appends another block of ``N`` points.
    """
    rot = np.asarray(rotations, dtype=np.float64).reshape(-1, 3)
    trans = np.asarray(translations, dtype=np.float64).reshape(-1, 3)
    if rot.shape != trans.shape:
        raise DimensionMismatch("rotation and translation counts differ")
    R = axis_angle_to_matrix(rot).reshape(-1, 3, 3)
    blocks = [trans] + [R[:, :, k] * depth + trans for k in axes]
    return np.concatenate(blocks, axis=0)


def align_sim3(estimated, reference):
    """Closed-form similarity minimizing ``sum |s R e_i + t - r_i|^2``.

    Raises
    ------
    Degenerate
        Fewer than 3 points, or the cross-covariance has rank < 2.
    """
    X = np.asarray(estimated, dtype=np.float64)
    Y = np.asarray(reference, dtype=np.float64)
    if X.shape != Y.shape or X.ndim != 2 or X.shape[1] != 3:
        raise DimensionMismatch("point sets must both be (N, 3)")
    if X.shape[0] < 3:
        raise Degenerate("need at least 3 point pairs")
    mu_x, mu_y = X.mean(0), Y.mean(0)
    Xc, Yc = X - mu_x, Y - mu_y
    var_x = (Xc**2).sum() / X.shape[0]
    cov = Yc.T @ Xc / X.shape[0]
    U, D, Vt = np.linalg.svd(cov)
    if var_x <= 1e-300 or D[1] <= 1e-12 * max(D[0], 1e-300):
        raise Degenerate("point covariance is rank-deficient")
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2, 2] = -1
    R = U @ S @ Vt
    s = float(np.trace(np.diag(D) @ S) / var_x)
    t = mu_y - s * R @ mu_x
    return Sim3(s, R, t)


def rotation_error(R_a, R_b):
    """Geodesic angle between rotations, in degrees.

    Evaluated as ``atan2(sin, cos)`` of the relative rotation, which equals
    ``arccos((tr - 1) / 2)`` but stays accurate near 0 and 180 degrees.
    """
    Ra = np.asarray(R_a, dtype=np.float64)
    Rb = np.asarray(R_b, dtype=np.float64)
    rel = np.swapaxes(Ra, -1, -2) @ Rb
    cos = np.clip((np.trace(rel, axis1=-2, axis2=-1) - 1.0) / 2.0, -1.0, 1.0)
    skew = np.stack(
        [rel[..., 2, 1] - rel[..., 1, 2], rel[..., 0, 2] - rel[..., 2, 0], rel[..., 1, 0] - rel[..., 0, 1]],
        axis=-1,
    )
    sin = np.linalg.norm(skew, axis=-1) / 2.0
    return np.degrees(np.arctan2(sin, cos))


def translation_error(t_a, t_b):
    """Euclidean distance per camera."""
    return np.linalg.norm(np.asarray(t_a, float) - np.asarray(t_b, float), axis=-1)


def trajectory_scale(translations):
    """RMS distance of camera centers from their centroid (1 if they coincide)."""
    c = np.asarray(translations, dtype=np.float64).reshape(-1, 3)
    spread = np.sqrt(((c - c.mean(0)) ** 2).sum(-1).mean())
    return float(spread) if spread > 1e-12 else 1.0


def align_trajectories(est_rotations, est_translations, ref_rotations, ref_translations):
    """Similarity taking the estimated trajectory onto the reference.

    Virtual points sit at each trajectory's own scale along the optical
    axis, so an exact similarity image of the reference is recovered
    exactly whatever its scale factor. When centers and optical-axis points
    are collinear (motion along the viewing direction) points on the
    camera x and y axes are added as well to pin the roll.
    """
    est_scale = trajectory_scale(est_translations)
    ref_scale = trajectory_scale(ref_translations)
    try:
        return align_sim3(
            augment_virtual_points(est_rotations, est_translations, est_scale),
            augment_virtual_points(ref_rotations, ref_translations, ref_scale),
        )
    except Degenerate:
        axes = (0, 1, 2)
        return align_sim3(
            augment_virtual_points(est_rotations, est_translations, est_scale, axes),
            augment_virtual_points(ref_rotations, ref_translations, ref_scale, axes),
        )


def evaluate_trajectory(est_rotations, est_translations, ref_rotations, ref_translations):
    """Mean rotation error (degrees) and mean center error after alignment."""
    est_rot = np.asarray(est_rotations, float).reshape(-1, 3)
    ref_rot = np.asarray(ref_rotations, float).reshape(-1, 3)
    if est_rot.shape != ref_rot.shape:
        raise DimensionMismatch("trajectories have different lengths")
    sim = align_trajectories(est_rot, est_translations, ref_rot, ref_translations)
    R_est = sim.rotation @ axis_angle_to_matrix(est_rot)
    R_ref = axis_angle_to_matrix(ref_rot)
    per_r = rotation_error(R_est, R_ref)
    per_t = translation_error(sim.apply(np.asarray(est_translations, float).reshape(-1, 3)),
                              np.asarray(ref_translations, float).reshape(-1, 3))
    return TrajectoryMetrics(float(per_r.mean()), float(per_t.mean()), per_r, per_t, sim)


def psnr(image_a, image_b):
    """``10 log10(1 / MSE)`` over all pixels and channels; ``inf`` when identical."""
    a = np.asarray(image_a, dtype=np.float64)
    b = np.asarray(image_b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatch(f"image shapes differ: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * np.log10(1.0 / mse)


def format_metrics_table(rows, sep="\t"):
    """Delimited table with columns scene, ΔR, ΔT, PSNR.

    ``rows`` are mappings with keys ``scene``, ``delta_r``, ``delta_t`` and
    optionally ``psnr``; a missing value prints as ``-``, a failed run as
    its ``status`` string.
    """
    def fmt(v):
        if v is None:
            return "-"
        if isinstance(v, str):
            return v
        return f"{v:.4f}"

    lines = [sep.join(METRIC_COLUMNS)]
    for row in rows:
        if row.get("status"):
            vals = [row["status"]] * 3
        else:
            vals = [fmt(row.get("delta_r")), fmt(row.get("delta_t")), fmt(row.get("psnr"))]
        lines.append(sep.join([str(row["scene"])] + vals))
    return "\n".join(lines)


class TrajectoryAligner(TransformerMixin, BaseEstimator):
    """Fit a similarity from an estimated trajectory onto a reference one.

    Trajectories are ``(N, 6)`` arrays of ``[wx, wy, wz, tx, ty, tz]``.
    ``transform`` maps any trajectory in the estimated gauge into the
    reference gauge; ``score`` is the negative mean rotation error.
    """

    def fit(self, X, y):
        X, y = check_trajectory(X), check_trajectory(y)
        if X.shape != y.shape:
            raise DimensionMismatch("trajectories have different lengths")
        self.alignment_ = align_trajectories(X[:, :3], X[:, 3:], y[:, :3], y[:, 3:])
        return self

    def transform(self, X):
        check_is_fitted(self, "alignment_")
        X = check_trajectory(X)
        rot, trans = self.alignment_.apply_poses(X[:, :3], X[:, 3:])
        return np.hstack([rot.reshape(-1, 3), trans])

    def score(self, X, y):
        check_is_fitted(self, "alignment_")
        X, y = check_trajectory(X), check_trajectory(y)
        aligned = self.transform(X)
        err = rotation_error(axis_angle_to_matrix(aligned[:, :3]), axis_angle_to_matrix(y[:, :3]))
        return -float(np.mean(err))

