"""Differentiable volume rendering by discrete quadrature along camera rays.

For samples ``t_1 < ... < t_N`` with spacings ``d_i = t_{i+1} - t_i`` (the
last one reaching ``t_far``)::

    alpha_i = 1 - exp(-sigma_i d_i)
    T_i     = exp(-sum_{j<i} sigma_j d_j)
    w_i     = T_i alpha_i
    color   = sum_i w_i c_i

Whatever transmittance survives the last sample hits a black background.
The spacing is measured in the ray parameter ``t`` of ``o + d t`` with the
unnormalized camera direction, so ``t`` is depth along the optical axis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .exceptions import DomainError
from .geometry import camera_rays, pixel_centers, pixel_ray

__all__ = [
    "SamplingConfig",
    "RenderOutput",
    "sample_ray",
    "sample_t",
    "composite",
    "composite_batch",
    "render_rays",
    "render_pixel",
    "render_image",
    "render_pixels",
]


@dataclass(frozen=True)
class SamplingConfig:
    t_near: float = 0.1
    t_far: float = 6.0
    samples_per_ray: int = 64
    stratified: bool = True

    def __post_init__(self):
        if not (0 <= self.t_near < self.t_far):
            raise DomainError("need 0 <= t_near < t_far")
        if self.samples_per_ray < 2:
            raise DomainError("need at least 2 samples per ray")

    def deterministic(self, samples_per_ray=None):
        return SamplingConfig(
            self.t_near, self.t_far, samples_per_ray or self.samples_per_ray, False
        )


@dataclass
class RenderOutput:
    color: np.ndarray
    weights: np.ndarray
    residual_transmittance: float
    transmittance: np.ndarray


def sample_t(config, n_rays, generator=None, dtype=torch.float64):
    """``(n_rays, S)`` sample depths: bin midpoints, or one uniform draw per bin."""
    S = config.samples_per_ray
    width = (config.t_far - config.t_near) / S
    edges = config.t_near + width * torch.arange(S, dtype=dtype)
    if config.stratified:
        u = torch.rand((n_rays, S), generator=generator, dtype=dtype)
    else:
        u = torch.full((n_rays, S), 0.5, dtype=dtype)
    return edges + width * u


def sample_ray(config, rng=None):
    """Sample depths for a single ray as a numpy array."""
    return sample_t(config, 1, rng).numpy()[0]


def composite_batch(t, densities, colors, t_far):
    """Quadrature over a batch of rays.

    Parameters
    ----------
    t, densities : Tensor, shape (B, S)
    colors : Tensor, shape (B, S, 3)
    t_far : float

    Returns
    -------
    color (B, 3), weights (B, S), residual (B,), transmittance (B, S)
    """
    far = torch.full_like(t[:, :1], t_far)
    deltas = torch.cat([t[:, 1:], far], dim=-1) - t
    optical = densities * deltas
    # exclusive cumulative sum: T_0 = 1
    accumulated = torch.cumsum(optical, dim=-1) - optical
    transmittance = torch.exp(-accumulated)
    alpha = -torch.expm1(-optical)
    weights = transmittance * alpha
    color = (weights.unsqueeze(-1) * colors).sum(dim=-2)
    residual = torch.exp(-optical.sum(dim=-1))
    return color, weights, residual, transmittance


def composite(t_values, densities, colors, t_far=None):
    """Composite a single ray given as plain sequences.

    ``t_far`` defaults to one extra spacing past the last sample when omitted.
    """
    t = torch.as_tensor(np.asarray(t_values, dtype=np.float64))[None]
    sig = torch.as_tensor(np.asarray(densities, dtype=np.float64))[None]
    col = torch.as_tensor(np.asarray(colors, dtype=np.float64)).reshape(1, -1, 3)
    if not (t.shape[1] == sig.shape[1] == col.shape[1]):
        raise DomainError("t_values, densities and colors must have equal length")
    if t_far is None:
        t_far = float(2 * t[0, -1] - t[0, -2]) if t.shape[1] > 1 else float(t[0, -1])
    color, weights, residual, trans = composite_batch(t, sig, col, t_far)
    return RenderOutput(
        color[0].numpy(), weights[0].numpy(), float(residual[0]), trans[0].numpy()
    )


def render_rays(field_fn, origins, directions, config, generator=None, chunk=None):
    """Render ``(B, 3)`` rays through ``field_fn(points, view_dirs)``.

    Returns ``(color, weights, residual, t)``; differentiable when the inputs
    and the field are.
    """
    B = origins.shape[0]
    dtype = origins.dtype
    if chunk is not None and B > chunk:
        parts = [
            render_rays(field_fn, origins[i : i + chunk], directions[i : i + chunk],
                        config, generator)
            for i in range(0, B, chunk)
        ]
        return tuple(torch.cat(p) for p in zip(*parts))
    t = sample_t(config, B, generator, dtype)
    S = t.shape[1]
    points = origins[:, None, :] + directions[:, None, :] * t[..., None]
    view = directions / torch.linalg.norm(directions, dim=-1, keepdim=True)
    view = view[:, None, :].expand(B, S, 3)
    colors, densities = field_fn(points.reshape(-1, 3), view.reshape(-1, 3))
    color, weights, residual, _ = composite_batch(
        t, densities.reshape(B, S), colors.reshape(B, S, 3), config.t_far
    )
    return color, weights, residual, t


def render_pixel(field_fn, pose, intrinsics, pixel, sampling, rng=None):
    """Render one pixel; ``field_fn`` takes and returns torch tensors."""
    ray = pixel_ray(pose, intrinsics, pixel)
    t = sample_t(sampling, 1, rng)
    o = torch.from_numpy(ray.origin)[None]
    d = torch.from_numpy(ray.direction)[None]
    points = (o[:, None] + d[:, None] * t[..., None]).reshape(-1, 3)
    view = (d / torch.linalg.norm(d)).expand_as(points)
    with torch.no_grad():
        colors, densities = field_fn(points, view)
        color, weights, residual, trans = composite_batch(
            t, densities.reshape(1, -1), colors.reshape(1, -1, 3), sampling.t_far
        )
    return RenderOutput(
        color[0].numpy(), weights[0].numpy(), float(residual[0]), trans[0].numpy()
    )


def render_pixels(field_fn, rotations, translations, focal, width, height, pixels,
                  sampling, generator=None):
    """Differentiable render of per-ray camera parameters; returns ``(B, 3)``."""
    origins, directions = camera_rays(rotations, translations, focal, width, height, pixels)
    return render_rays(field_fn, origins, directions, sampling, generator)[0]


def render_image(field_fn, pose, intrinsics, sampling, generator=None, chunk=4096,
                 dtype=torch.float64):
    """Render a full ``(H, W, 3)`` image for one :class:`CameraPose`."""
    W, H = intrinsics.width, intrinsics.height
    pix = torch.from_numpy(pixel_centers(W, H)).to(dtype)
    n = pix.shape[0]
    rot = torch.as_tensor(pose.rotation, dtype=dtype).expand(n, 3)
    trans = torch.as_tensor(pose.translation, dtype=dtype).expand(n, 3)
    focal = torch.tensor(float(intrinsics.focal), dtype=dtype)
    with torch.no_grad():
        origins, directions = camera_rays(rot, trans, focal, W, H, pix)
        color = render_rays(field_fn, origins, directions, sampling, generator, chunk)[0]
    return color.reshape(H, W, 3).numpy()
