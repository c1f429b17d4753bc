"""Incremental training schedule: initialization, implicit localization,
implicit partial / global optimization, and the coarse-to-fine outer loop.

Every phase runs ``epochs`` optimizer steps; one step (an "epoch" for the
learning-rate schedules) renders one random batch of rays drawn uniformly
from all pixels of the phase's images. Schedule counters restart at zero
in each phase. Each phase appends a :class:`PhaseRecord` to the run log
with its loss on a fixed evaluation ray set before and after the phase.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from .autodiff import (
    CAMERA_SCHEDULE,
    FIELD_SCHEDULE,
    GroupAdam,
    Learnable,
    ParameterStore,
    grads_by_group,
    leaves,
    pixel_loss,
)
from .exceptions import DomainError, Diverged, NonFiniteGradient
from .field import FieldConfig, field_forward, init_theta
from .geometry import build_pyramid, focal_from_fov, pixel_centers
from .rendering import SamplingConfig, render_pixels

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ScheduleConfig:
    n_init: int = 3
    n_part: int = 3
    n_glob: int = 5
    xi_init: int = 3000
    xi: int = 900
    pyramid_depth: int = 3

    def __post_init__(self):
        if self.n_init < 2:
            raise DomainError("n_init must be at least 2")
        if self.n_part < 1 or self.n_glob < 1:
            raise DomainError("n_part and n_glob must be at least 1")
        if self.xi_init < 1 or self.xi < 1:
            raise DomainError("iteration counts must be at least 1")
        if self.pyramid_depth < 1:
            raise DomainError("pyramid depth must be at least 1")


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer and sampling knobs shared by every phase."""

    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    batch_rays: int = 1024
    eval_rays: int = 1024
    beta: float = 1.0
    field_schedule: object = FIELD_SCHEDULE
    camera_schedule: object = CAMERA_SCHEDULE
    init_fov: float = 53.0


@dataclass
class PhaseRecord:
    phase: str
    image_index: int | None
    level: int
    epochs: int
    start_loss: float
    end_loss: float
    wall_time: float
    registered: int

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True)


@dataclass
class LevelData:
    """Images of one pyramid level flattened for ray batching."""

    colors: torch.Tensor  # (N, H*W, 3)
    pixels: torch.Tensor  # (H*W, 2)
    width: int
    height: int

    @classmethod
    def from_images(cls, images, dtype=torch.float64):
        images = np.asarray(images)
        n, h, w, _ = images.shape
        colors = torch.as_tensor(images.reshape(n, h * w, 3).astype(np.float64)).to(dtype)
        pixels = torch.from_numpy(pixel_centers(w, h)).to(dtype)
        return cls(colors, pixels, w, h)

    @property
    def n_images(self):
        return self.colors.shape[0]

    @property
    def n_pixels(self):
        return self.pixels.shape[0]


@dataclass
class TrainState:
    store: ParameterStore
    field_config: FieldConfig
    schedule: ScheduleConfig
    train: TrainConfig
    field_opt: GroupAdam
    camera_opt: GroupAdam
    generator: torch.Generator
    registered: list = field(default_factory=list)
    phase: str = "new"
    level: int = 0
    log: list = field(default_factory=list)
    total_steps: int = 0
    snapshots: list = field(default_factory=list)
    on_phase: object = None

    @property
    def dtype(self):
        return self.store.theta.dtype


def new_state(n_images, width, field_config=None, schedule=None, train=None, seed=0,
              dtype=torch.float64, on_phase=None):
    """Fresh state: SIREN weights, zero poses, focal from the initial field of view."""
    field_config = field_config or FieldConfig()
    schedule = schedule or ScheduleConfig()
    train = train or TrainConfig()
    theta = init_theta(field_config, seed, dtype)
    store = ParameterStore.create(theta, n_images, focal_from_fov(train.init_fov, width), dtype)
    return TrainState(
        store=store,
        field_config=field_config,
        schedule=schedule,
        train=train,
        field_opt=GroupAdam(train.field_schedule),
        camera_opt=GroupAdam(train.camera_schedule),
        generator=torch.Generator().manual_seed(int(seed) + 1),
        on_phase=on_phase,
    )


def _predict(state, data, tensors, image_idx, pixel_idx, sampling, generator=None):
    cfg = state.field_config
    theta = tensors["theta"]
    return render_pixels(
        lambda x, d: field_forward(theta, cfg, x, d),
        tensors["rotations"][image_idx],
        tensors["translations"][image_idx],
        tensors["focal"],
        data.width,
        data.height,
        data.pixels[pixel_idx],
        sampling,
        generator,
    )


def _eval_indices(n_images, n_pixels, budget):
    total = n_images * n_pixels
    flat = torch.arange(total) if total <= budget else torch.linspace(0, total - 1, budget).long()
    return flat


def phase_loss(state, data, image_ids, chunk=2048):
    """Mean pixel loss over a fixed ray set with deterministic sampling."""
    image_ids = torch.as_tensor(list(image_ids), dtype=torch.long)
    flat = _eval_indices(len(image_ids), data.n_pixels, state.train.eval_rays)
    sampling = state.train.sampling.deterministic()
    tensors = {g: state.store.group(g) for g in ("theta", "rotations", "translations", "focal")}
    total, count = 0.0, 0
    with torch.no_grad():
        for i in range(0, flat.numel(), chunk):
            f = flat[i : i + chunk]
            img = image_ids[f // data.n_pixels]
            pix = f % data.n_pixels
            pred = _predict(state, data, tensors, img, pix, sampling)
            loss = pixel_loss(pred, data.colors[img, pix], state.train.beta)
            total += float(loss) * f.numel()
            count += f.numel()
    return total / count


def _optimize(state, data, image_ids, learnable, epochs, phase, image_index=None):
    """Run ``epochs`` Adam steps on the learnable slots over ``image_ids``."""
    state.phase = phase
    ids = torch.as_tensor(list(image_ids), dtype=torch.long)
    total = len(ids) * data.n_pixels
    batch = min(state.train.batch_rays, total)
    start_time = time.perf_counter()
    start_loss = phase_loss(state, data, ids)
    for epoch in range(epochs):
        if batch == total:
            flat = torch.arange(total)
        else:
            flat = torch.randperm(total, generator=state.generator)[:batch]
        img = ids[flat // data.n_pixels]
        pix = flat % data.n_pixels
        tensors = leaves(state.store, learnable)
        pred = _predict(state, data, tensors, img, pix, state.train.sampling, state.generator)
        loss = pixel_loss(pred, data.colors[img, pix], state.train.beta)
        if not torch.isfinite(loss):
            raise Diverged("non-finite loss", phase, image_index, state.level)
        try:
            grads = grads_by_group(loss, tensors, learnable)
        except NonFiniteGradient as exc:
            raise Diverged(str(exc), phase, image_index, state.level) from exc
        with torch.no_grad():
            field_grads = {k: v for k, v in grads.items() if k == "theta"}
            camera_grads = {k: v for k, v in grads.items() if k != "theta"}
            if field_grads:
                state.field_opt.step(state.store, field_grads, learnable, epoch)
            if camera_grads:
                state.camera_opt.step(state.store, camera_grads, learnable, epoch)
        state.total_steps += 1
    end_loss = phase_loss(state, data, ids)
    if not np.isfinite(end_loss):
        raise Diverged("non-finite evaluation loss", phase, image_index, state.level)
    record = PhaseRecord(
        phase, image_index, state.level, epochs, start_loss, end_loss,
        time.perf_counter() - start_time, len(state.registered),
    )
    state.log.append(record)
    logger.info(
        "%s image=%s level=%d loss %.5f -> %.5f (%.1fs)",
        phase, image_index, state.level, start_loss, end_loss, record.wall_time,
    )
    return record


def _emit(state, record):
    """Hand a finished phase to the observer, after all of its mutations."""
    if state.on_phase is not None:
        state.on_phase(record)
    return state


def initialize(state, data):
    """Warm up the field, the first translations and focal on the first images.

    Rotations stay frozen at zero. Afterwards only image 0 is registered;
    the other warm-up poses are discarded (reset to zero, moments cleared).
    """
    if state.registered:
        raise DomainError("initialize expects an empty registered set")
    n_init = state.schedule.n_init
    if data.n_images < n_init:
        raise DomainError(f"need at least {n_init} images to initialize")
    ids = tuple(range(n_init))
    learnable = Learnable(theta=True, focal=True, translations=ids)
    record = _optimize(state, data, ids, learnable, state.schedule.xi_init, "initialize", 0)
    discard = list(range(1, n_init))
    with torch.no_grad():
        state.store.rotations[discard] = 0
        state.store.translations[discard] = 0
    state.camera_opt.reset_rows("translations", discard, state.store.translations)
    state.camera_opt.reset_rows("rotations", discard, state.store.rotations)
    state.registered = [0]
    record.registered = 1
    return _emit(state, record)


def localize(state, data, image_index):
    """Register ``image_index``: copy the previous pose, then fit only this pose."""
    expected = max(state.registered) + 1 if state.registered else 0
    if image_index != expected:
        raise DomainError(f"next image to localize is {expected}, got {image_index}")
    n = image_index
    with torch.no_grad():
        state.store.rotations[n] = state.store.rotations[n - 1]
        state.store.translations[n] = state.store.translations[n - 1]
    state.camera_opt.reset_rows("rotations", [n], state.store.rotations)
    state.camera_opt.reset_rows("translations", [n], state.store.translations)
    learnable = Learnable(rotations=(n,), translations=(n,))
    record = _optimize(state, data, (n,), learnable, state.schedule.xi, "localize", n)
    state.registered.append(n)
    record.registered = len(state.registered)
    return _emit(state, record)


def partial_window(registered, n_part):
    return tuple(registered[-n_part:])


def partial_optimize(state, data):
    """Refine the field and the poses of the latest ``n_part`` images; focal frozen."""
    if not state.registered:
        raise DomainError("partial optimization needs a registered image")
    window = partial_window(state.registered, state.schedule.n_part)
    learnable = Learnable(theta=True, rotations=window, translations=window)
    record = _optimize(state, data, window, learnable, state.schedule.xi, "partial",
                       state.registered[-1])
    return _emit(state, record)


def global_optimize(state, data, epochs=None):
    """Refine the field, every registered pose and the focal length."""
    if not state.registered:
        raise DomainError("global optimization needs a registered image")
    ids = tuple(state.registered)
    learnable = Learnable(theta=True, focal=True, rotations=ids, translations=ids)
    record = _optimize(state, data, ids, learnable, epochs or state.schedule.xi, "global",
                       state.registered[-1])
    return _emit(state, record)


def run_incremental(state, data):
    """Register the remaining images in order: localize, partial, maybe global."""
    for n in range(max(state.registered) + 1, data.n_images):
        try:
            localize(state, data, n)
            partial_optimize(state, data)
            if len(state.registered) % state.schedule.n_glob == 0:
                global_optimize(state, data)
        except Diverged as exc:
            if exc.image_index is None:
                exc.image_index = n
            raise
    return state


def joint_optimize(state, data, epochs):
    """All poses, focal and field at once from zero poses (comparison baseline)."""
    ids = tuple(range(data.n_images))
    learnable = Learnable(theta=True, focal=True, rotations=ids, translations=ids)
    state.registered = list(ids)
    return _emit(state, _optimize(state, data, ids, learnable, epochs, "joint", None))


def global_triggers(n_images, n_glob):
    """Registered-set sizes at which global optimization fires."""
    return [n for n in range(2, n_images + 1) if n % n_glob == 0]


def planned_epochs(n_images, schedule, coarse_only=False):
    """Exact optimizer-step count of the incremental pipeline."""
    s = schedule
    steps = s.xi_init + (n_images - 1) * 2 * s.xi + len(global_triggers(n_images, s.n_glob)) * s.xi
    if not coarse_only:
        steps += (s.pyramid_depth - 1) * s.xi
    return steps


def _snapshot(state, data):
    state.snapshots.append(
        {
            "level": state.level,
            "width": data.width,
            "height": data.height,
            "rotations": state.store.rotations.detach().clone().numpy(),
            "translations": state.store.translations.detach().clone().numpy(),
            "focal": float(state.store.focal),
            "total_steps": state.total_steps,
        }
    )


def image_pyramids(images, depth):
    """Per-level image stacks, coarsest first."""
    pyramids = [build_pyramid(img, depth) for img in np.asarray(images, dtype=np.float64)]
    return [np.stack([p[k] for p in pyramids]) for k in range(depth)]


def coarse_to_fine(images, schedule=None, train=None, field_config=None, seed=0,
                   dtype=torch.float64, mode="incremental", on_phase=None):
    """Full pipeline on an ``(N, H, W, 3)`` image sequence.

    The coarsest level runs the incremental pipeline (or, with
    ``mode="joint"``, one joint phase of the same length); each finer level
    doubles the focal length and runs one global optimization.
    """
    schedule = schedule or ScheduleConfig()
    if mode not in ("incremental", "joint"):
        raise DomainError(f"unknown mode {mode!r}")
    levels = image_pyramids(images, schedule.pyramid_depth)
    coarse = LevelData.from_images(levels[0], dtype)
    state = new_state(coarse.n_images, coarse.width, field_config, schedule, train, seed,
                      dtype, on_phase)
    if mode == "incremental":
        initialize(state, coarse)
        run_incremental(state, coarse)
    else:
        joint_optimize(state, coarse, planned_epochs(coarse.n_images, schedule, coarse_only=True))
    _snapshot(state, coarse)
    previous = coarse
    for k in range(1, schedule.pyramid_depth):
        state.level = k
        data = LevelData.from_images(levels[k], dtype)
        with torch.no_grad():
            state.store.focal *= data.width / previous.width
        global_optimize(state, data)
        _snapshot(state, data)
        previous = data
    state.phase = "done"
    return state


def joint_baseline(images, schedule=None, train=None, field_config=None, seed=0,
                   dtype=torch.float64, on_phase=None):
    return coarse_to_fine(images, schedule, train, field_config, seed, dtype, "joint", on_phase)
