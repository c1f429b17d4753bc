"""Camera model, SO(3) parameterization, ray generation and image pyramids.

Poses are camera-to-world: a camera-frame point ``x_c`` maps to
``x_w = R(omega) @ x_c + t``. Cameras look down their local +z axis with
image ``v`` growing along local +y, and the principal point sits at the
image center.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
from scipy.spatial.transform import Rotation

from .exceptions import DomainError, NotARotation, TooSmall

SMALL_ANGLE = 1e-8

__all__ = [
    "CameraPose",
    "Intrinsics",
    "Ray",
    "ImagePyramid",
    "axis_angle_to_matrix",
    "rodrigues",
    "matrix_to_axis_angle",
    "canonical_axis_angle",
    "focal_from_fov",
    "pixel_ray",
    "camera_rays",
    "pixel_centers",
    "build_pyramid",
    "downsample",
]


@dataclass(frozen=True)
class CameraPose:
    rotation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=np.float64).reshape(3)
        trans = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(rot)) and np.all(np.isfinite(trans))):
            raise DomainError("pose components must be finite")
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", trans)

    @property
    def matrix(self):
        return axis_angle_to_matrix(self.rotation)

    @property
    def center(self):
        return self.translation


@dataclass(frozen=True)
class Intrinsics:
    focal: float
    width: int
    height: int

    def __post_init__(self):
        if not (np.isfinite(self.focal) and self.focal > 0):
            raise DomainError(f"focal must be positive, got {self.focal}")
        if self.width < 1 or self.height < 1:
            raise DomainError("image dimensions must be positive")

    @property
    def cx(self):
        return self.width / 2.0

    @property
    def cy(self):
        return self.height / 2.0

    def scaled(self, factor):
        """Intrinsics for an image resized by ``factor`` in both axes."""
        return Intrinsics(
            self.focal * factor, int(self.width * factor), int(self.height * factor)
        )


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        if not np.any(self.direction):
            raise DomainError("ray direction must be nonzero")

    def at(self, t):
        return self.origin + self.direction * t


@dataclass
class ImagePyramid:
    """Levels ordered coarsest first; ``levels[-1]`` is the source image."""

    levels: list

    @property
    def depth(self):
        return len(self.levels)

    def __getitem__(self, k):
        return self.levels[k]


def _hat(omega):
    zero = torch.zeros_like(omega[..., 0])
    wx, wy, wz = omega[..., 0], omega[..., 1], omega[..., 2]
    return torch.stack(
        [
            torch.stack([zero, -wz, wy], dim=-1),
            torch.stack([wz, zero, -wx], dim=-1),
            torch.stack([-wy, wx, zero], dim=-1),
        ],
        dim=-2,
    )


def rodrigues(omega):
    """Differentiable Rodrigues map for a ``(..., 3)`` tensor of axis-angles.

    Uses ``R = I + a [w]x + b [w]x^2`` with ``a = sin(t)/t`` and
    ``b = (1 - cos t)/t^2``, switching to the second-order Taylor expansion
    of both coefficients below ``SMALL_ANGLE``. The squared angle is used in
    the small branch so the gradient at exactly zero is finite.
    """
    theta_sq = (omega * omega).sum(-1)
    small = theta_sq < SMALL_ANGLE**2
    safe_sq = torch.where(small, torch.ones_like(theta_sq), theta_sq)
    theta = torch.sqrt(safe_sq)
    half_sin = torch.sin(0.5 * theta)
    a_large = torch.sin(theta) / theta
    b_large = 2.0 * half_sin * half_sin / safe_sq
    a = torch.where(small, 1.0 - theta_sq / 6.0, a_large)
    b = torch.where(small, 0.5 - theta_sq / 24.0, b_large)
    K = _hat(omega)
    eye = torch.eye(3, dtype=omega.dtype, device=omega.device).expand(K.shape)
    return eye + a[..., None, None] * K + b[..., None, None] * (K @ K)


def axis_angle_to_matrix(omega):
    """Rotation matrix of an axis-angle vector (or stack of them), as numpy."""
    omega = np.asarray(omega, dtype=np.float64)
    if not np.all(np.isfinite(omega)):
        raise DomainError("axis-angle must be finite")
    return rodrigues(torch.from_numpy(omega)).numpy()


def matrix_to_axis_angle(R, atol=1e-6):
    """Inverse of :func:`axis_angle_to_matrix` with angle in ``[0, pi]``.

    Raises
    ------
    NotARotation
        If ``R^T R`` deviates from identity by more than ``atol`` or
        ``det(R) <= 0``.
    """
    R = np.asarray(R, dtype=np.float64)
    single = R.ndim == 2
    Rs = R.reshape(-1, 3, 3)
    eye = np.eye(3)
    gram_err = np.abs(np.swapaxes(Rs, -1, -2) @ Rs - eye).max(axis=(-1, -2))
    if np.any(~np.isfinite(gram_err)) or np.any(gram_err > atol):
        raise NotARotation(f"R^T R differs from identity by {gram_err.max():.3g}")
    if np.any(np.linalg.det(Rs) <= 0):
        raise NotARotation("determinant is not positive")
    out = Rotation.from_matrix(Rs).as_rotvec()
    return out[0] if single else out


def canonical_axis_angle(omega):
    """Equivalent axis-angle with magnitude in ``[0, pi]``.

    Evaluation only; the optimizer works on the raw parameter.
    """
    return matrix_to_axis_angle(axis_angle_to_matrix(omega))


def focal_from_fov(fov, width):
    """Pinhole focal length in pixels for a horizontal field of view in degrees."""
    if not (0.0 < fov < 180.0):
        raise DomainError(f"field of view must be in (0, 180) degrees, got {fov}")
    return (width / 2.0) / np.tan(np.deg2rad(fov) / 2.0)


def pixel_ray(pose, intrinsics, pixel):
    """World-space ray through continuous pixel coordinates ``(u, v)``."""
    u, v = float(pixel[0]), float(pixel[1])
    local = np.array(
        [(u - intrinsics.cx) / intrinsics.focal, (v - intrinsics.cy) / intrinsics.focal, 1.0]
    )
    return Ray(pose.translation.copy(), pose.matrix @ local)


def pixel_centers(width, height):
    """``(H*W, 2)`` array of pixel-center coordinates ``(u, v)``, row-major."""
    v, u = np.mgrid[0:height, 0:width]
    return np.stack([u.ravel() + 0.5, v.ravel() + 0.5], axis=-1).astype(np.float64)


def camera_rays(rotations, translations, focal, width, height, pixels):
    """Batched, differentiable version of :func:`pixel_ray`.

    Parameters
    ----------
    rotations, translations : Tensor, shape (B, 3)
        Per-ray camera parameters (already gathered per ray).
    focal : Tensor, scalar
    width, height : int
    pixels : Tensor, shape (B, 2)

    Returns
    -------
    origins, directions : Tensor, shape (B, 3)
    """
    local = torch.stack(
        [
            (pixels[:, 0] - width / 2.0) / focal,
            (pixels[:, 1] - height / 2.0) / focal,
            torch.ones_like(pixels[:, 0]),
        ],
        dim=-1,
    )
    R = rodrigues(rotations)
    directions = (R @ local.unsqueeze(-1)).squeeze(-1)
    return translations, directions


_BINOMIAL = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0


def _blur_axis(image, axis):
    pad = [(0, 0)] * image.ndim
    pad[axis] = (2, 2)
    padded = np.pad(image, pad, mode="edge")
    n = image.shape[axis]
    out = np.zeros_like(image)
    for k, w in enumerate(_BINOMIAL):
        out += w * np.take(padded, np.arange(k, k + n), axis=axis)
    return out


def downsample(image):
    """One pyramid step: separable 5-tap binomial blur, then keep even pixels."""
    blurred = _blur_axis(_blur_axis(image, 0), 1)
    h, w = image.shape[0] // 2, image.shape[1] // 2
    return blurred[0 : 2 * h : 2, 0 : 2 * w : 2]


def build_pyramid(image, depth):
    """Gaussian pyramid of ``depth`` levels, coarsest first."""
    image = np.asarray(image)
    if depth < 1:
        raise DomainError("pyramid depth must be at least 1")
    need = 2 ** (depth - 1)
    if image.shape[0] < need or image.shape[1] < need:
        raise TooSmall(
            f"image {image.shape[1]}x{image.shape[0]} too small for depth {depth}"
        )
    levels = [image]
    for _ in range(depth - 1):
        levels.append(downsample(levels[-1]))
    return ImagePyramid(levels[::-1])
