"""Estimator wrapper around the coarse-to-fine pipeline.

``IncrementalRadianceField().fit(images)`` recovers one camera pose per
image, a shared focal length and the radiance field; ``predict(poses)``
renders novel views from the fitted field.
"""

from __future__ import annotations

import numpy as np
import torch
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import _validation as val
from .autodiff import LrSchedule
from .evaluation import evaluate_trajectory
from .exceptions import DomainError
from .field import FieldConfig, RadianceField
from .geometry import CameraPose, Intrinsics
from .rendering import SamplingConfig, render_image
from .scheduler import ScheduleConfig, TrainConfig, coarse_to_fine

_DTYPES = {"float32": torch.float32, "float64": torch.float64}


class IncrementalRadianceField(BaseEstimator):
    """Jointly recover camera parameters and a radiance field from an image sequence.

    Parameters
    ----------
    n_init, n_part, n_glob : int
        Warm-up image count, partial-window size and global-refinement period.
    xi_init, xi : int
        Optimizer steps for the warm-up and for every other phase.
    pyramid_depth : int
        Number of resolution levels; the coarsest runs the incremental loop.
    layers, hidden_dim : int
        Size of the sine-activated field trunk.
    t_near, t_far, samples_per_ray : float, float, int
        Ray bounds and quadrature samples.
    batch_rays, eval_rays : int
        Rays per optimizer step and rays in each phase's fixed loss probe.
    mode : {"incremental", "joint"}
        ``"joint"`` optimizes every pose at once from zero (baseline).
    dtype : {"float64", "float32"}

    Attributes
    ----------
    poses_ : ndarray of shape (n_images, 6)
        Recovered ``[wx, wy, wz, tx, ty, tz]`` camera-to-world poses.
    focal_ : float
        Focal length in pixels at the finest level.
    field_ : RadianceField
    log_ : list of PhaseRecord
    snapshots_ : list of dict
        Poses and focal after each pyramid level.
    """

    def __init__(self, n_init=3, n_part=3, n_glob=5, xi_init=3000, xi=900, pyramid_depth=3,
                 layers=8, hidden_dim=128, first_layer_frequency=30.0, hidden_frequency=1.0,
                 t_near=0.1, t_far=6.0, samples_per_ray=64, batch_rays=1024, eval_rays=1024,
                 beta=1.0, init_fov=53.0, field_lr=1e-3, field_lr_decay=0.9954,
                 field_lr_every=200, camera_lr=1e-3, camera_lr_decay=0.9,
                 camera_lr_every=2000, mode="incremental", seed=0, dtype="float64"):
        self.n_init = n_init
        self.n_part = n_part
        self.n_glob = n_glob
        self.xi_init = xi_init
        self.xi = xi
        self.pyramid_depth = pyramid_depth
        self.layers = layers
        self.hidden_dim = hidden_dim
        self.first_layer_frequency = first_layer_frequency
        self.hidden_frequency = hidden_frequency
        self.t_near = t_near
        self.t_far = t_far
        self.samples_per_ray = samples_per_ray
        self.batch_rays = batch_rays
        self.eval_rays = eval_rays
        self.beta = beta
        self.init_fov = init_fov
        self.field_lr = field_lr
        self.field_lr_decay = field_lr_decay
        self.field_lr_every = field_lr_every
        self.camera_lr = camera_lr
        self.camera_lr_decay = camera_lr_decay
        self.camera_lr_every = camera_lr_every
        self.mode = mode
        self.seed = seed
        self.dtype = dtype

    # configuration objects, built from the flat hyper-parameters

    def schedule_config(self):
        return ScheduleConfig(self.n_init, self.n_part, self.n_glob, self.xi_init, self.xi,
                              self.pyramid_depth)

    def field_config(self):
        return FieldConfig(self.layers, self.hidden_dim, self.first_layer_frequency,
                           self.hidden_frequency)

    def sampling_config(self):
        return SamplingConfig(self.t_near, self.t_far, self.samples_per_ray)

    def train_config(self):
        val.check_count(self.batch_rays, "batch_rays")
        val.check_count(self.eval_rays, "eval_rays")
        val.check_positive(self.beta, "beta")
        if not 0 < self.init_fov < 180:
            raise DomainError(f"init_fov must lie in (0, 180), got {self.init_fov}")
        return TrainConfig(
            sampling=self.sampling_config(),
            batch_rays=self.batch_rays,
            eval_rays=self.eval_rays,
            beta=self.beta,
            field_schedule=LrSchedule(self.field_lr, self.field_lr_decay, self.field_lr_every),
            camera_schedule=LrSchedule(self.camera_lr, self.camera_lr_decay, self.camera_lr_every),
            init_fov=self.init_fov,
        )

    def fit(self, X, y=None, on_phase=None):
        """Run the pipeline on images ``X`` of shape ``(N, H, W, 3)``; ``y`` is ignored."""
        schedule = self.schedule_config()
        X = val.check_images(X, min_count=schedule.n_init)
        val.check_choice(self.mode, "mode", {"incremental", "joint"})
        val.check_choice(self.dtype, "dtype", set(_DTYPES))
        val.check_count(self.seed, "seed", minimum=0)
        state = coarse_to_fine(
            X, schedule, self.train_config(), self.field_config(), seed=self.seed,
            dtype=_DTYPES[self.dtype], mode=self.mode, on_phase=on_phase,
        )
        self.state_ = state
        self.poses_ = np.hstack([state.store.rotations.numpy(), state.store.translations.numpy()])
        self.focal_ = float(state.store.focal)
        self.field_ = RadianceField(state.field_config, state.store.theta.detach().clone())
        self.log_ = list(state.log)
        self.snapshots_ = list(state.snapshots)
        self.image_size_ = (X.shape[2], X.shape[1])
        self.n_images_ = X.shape[0]
        return self

    def predict(self, poses, focal=None, size=None, seed=None):
        """Render one ``(H, W, 3)`` image per ``[wx, wy, wz, tx, ty, tz]`` row.

        Defaults to the fitted focal length and training resolution; stratified
        sampling uses ``seed`` (the estimator seed when omitted).
        """
        check_is_fitted(self, "field_")
        poses = val.check_trajectory(np.atleast_2d(poses))
        width, height = size or self.image_size_
        intr = Intrinsics(self.focal_ if focal is None else focal, width, height)
        gen = torch.Generator().manual_seed(self.seed if seed is None else seed)
        fn = self.field_.as_callable()
        dtype = self.field_.theta.dtype
        return np.stack([
            render_image(fn, CameraPose(p[:3], p[3:]), intr, self.sampling_config(), gen, dtype=dtype)
            for p in poses
        ])

    def trajectory_metrics(self, reference, level=-1):
        """ΔR / ΔT of the poses after pyramid ``level`` against ``(N, 6)`` ground truth."""
        check_is_fitted(self, "snapshots_")
        ref = val.check_trajectory(reference, self.n_images_)
        snap = self.snapshots_[level]
        return evaluate_trajectory(snap["rotations"], snap["translations"], ref[:, :3], ref[:, 3:])

    def score(self, X, y):
        """Negative mean rotation error (degrees) against ground-truth poses ``y``."""
        return -self.trajectory_metrics(y).delta_r
