"""Loss, gradients over the learnable parameter slots, Adam, and lr schedules.

Reverse-mode differentiation is delegated to ``torch.autograd``; this module
decides which slots are learnable, flattens their gradients in a fixed order
(field weights, rotations, translations, focal) and applies Adam to exactly
those slots. Frozen slots are never written, so they stay bitwise constant.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .exceptions import DomainError, NonFiniteGradient

GROUPS = ("theta", "rotations", "translations", "focal")


def smooth_l1(predicted, target, beta=1.0):
    """Elementwise Smooth-L1: ``0.5 d^2 / beta`` below ``beta``, else ``|d| - beta/2``.

    Accepts floats, numpy arrays or tensors.
    """
    if not beta > 0:
        raise DomainError(f"beta must be positive, got {beta}")
    if isinstance(predicted, torch.Tensor) or isinstance(target, torch.Tensor):
        diff = torch.abs(torch.as_tensor(target) - predicted)
        return torch.where(diff < beta, 0.5 * diff * diff / beta, diff - 0.5 * beta)
    diff = np.abs(np.asarray(target, dtype=np.float64) - np.asarray(predicted, dtype=np.float64))
    out = np.where(diff < beta, 0.5 * diff * diff / beta, diff - 0.5 * beta)
    return float(out) if out.ndim == 0 else out


def pixel_loss(predicted, target, beta=1.0):
    """Smooth-L1 summed over color channels, averaged over rays."""
    return smooth_l1(predicted, target, beta).sum(-1).mean()


@dataclass
class ParameterStore:
    """Field weights, per-image camera parameters and the shared focal length."""

    theta: torch.Tensor
    rotations: torch.Tensor
    translations: torch.Tensor
    focal: torch.Tensor

    @classmethod
    def create(cls, theta, n_images, focal, dtype=torch.float64):
        return cls(
            theta.detach().clone().to(dtype),
            torch.zeros(n_images, 3, dtype=dtype),
            torch.zeros(n_images, 3, dtype=dtype),
            torch.tensor(float(focal), dtype=dtype),
        )

    def group(self, name):
        return getattr(self, name)

    def clone(self):
        return ParameterStore(*(self.group(g).detach().clone() for g in GROUPS))

    @property
    def n_images(self):
        return self.rotations.shape[0]


@dataclass(frozen=True)
class Learnable:
    """Which slots an optimization phase may change."""

    theta: bool = False
    focal: bool = False
    rotations: tuple = ()
    translations: tuple = ()

    def rows(self, name):
        """Index tuple of learnable rows, ``None`` for all, ``()`` for none."""
        if name == "theta":
            return None if self.theta else ()
        if name == "focal":
            return None if self.focal else ()
        return tuple(getattr(self, name))

    def is_active(self, name):
        return self.rows(name) != ()

    def count(self, store):
        n = store.theta.numel() if self.theta else 0
        n += 3 * len(self.rotations) + 3 * len(self.translations)
        return n + (1 if self.focal else 0)


def leaves(store, learnable):
    """Detached copies of the store's groups; active groups require grad."""
    return {
        g: store.group(g).detach().requires_grad_(learnable.is_active(g)) for g in GROUPS
    }


def grads_by_group(loss, tensors, learnable):
    """``{group: gradient rows}`` for every active group, checking finiteness."""
    active = [g for g in GROUPS if learnable.is_active(g)]
    raw = torch.autograd.grad(loss, [tensors[g] for g in active], allow_unused=True)
    out = {}
    for g, grad in zip(active, raw):
        if grad is None:
            grad = torch.zeros_like(tensors[g])
        rows = learnable.rows(g)
        if rows is not None:
            grad = grad[list(rows)]
        if not torch.all(torch.isfinite(grad)):
            raise NonFiniteGradient(f"non-finite gradient in group {g!r}")
        out[g] = grad
    return out


def backward(loss, tensors, learnable):
    """Flat gradient over the learnable slots, ordered theta, rotations, translations, focal.

    Frozen groups and frozen rows are absent from the result.
    """
    per_group = grads_by_group(loss, tensors, learnable)
    parts = [per_group[g].reshape(-1) for g in GROUPS if g in per_group]
    if not parts:
        return torch.zeros(0, dtype=loss.dtype)
    return torch.cat(parts)


@dataclass
class AdamState:
    first_moment: torch.Tensor
    second_moment: torch.Tensor
    step_count: torch.Tensor
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def zeros_like(cls, params, **kw):
        params = torch.as_tensor(params)
        return cls(
            torch.zeros_like(params),
            torch.zeros_like(params),
            torch.zeros(params.shape, dtype=torch.int64),
            **kw,
        )


def adam_step(state, params, grads, lr):
    """One bias-corrected Adam update; returns ``(new_params, new_state)``.

    ``state.step_count`` may be a scalar or hold one counter per entry.
    """
    params = torch.as_tensor(params)
    grads = torch.as_tensor(grads, dtype=params.dtype)
    b1, b2 = state.beta1, state.beta2
    step = state.step_count + 1
    m = b1 * state.first_moment + (1 - b1) * grads
    v = b2 * state.second_moment + (1 - b2) * grads * grads
    stepf = step.to(params.dtype)
    m_hat = m / (1 - b1**stepf)
    v_hat = v / (1 - b2**stepf)
    new = params - lr * m_hat / (torch.sqrt(v_hat) + state.epsilon)
    return new, AdamState(m, v, step, b1, b2, state.epsilon)


@dataclass(frozen=True)
class LrSchedule:
    base: float
    decay: float
    every: int

    def __post_init__(self):
        if self.base <= 0 or self.decay <= 0 or self.every < 1:
            raise DomainError("schedule needs base > 0, decay > 0, every >= 1")


def lr_at(schedule, epoch):
    """``base * decay ** floor(epoch / every)``."""
    if epoch < 0:
        raise DomainError("epoch must be non-negative")
    return schedule.base * schedule.decay ** (epoch // schedule.every)


FIELD_SCHEDULE = LrSchedule(1e-3, 0.9954, 200)
CAMERA_SCHEDULE = LrSchedule(1e-3, 0.9, 2000)


@dataclass
class GroupAdam:
    """Adam over named parameter groups with per-slot moments and step counts.

    One instance serves the field weights, another all camera parameters,
    each with its own schedule. Only slots listed as learnable are touched.
    """

    schedule: LrSchedule
    states: dict = field(default_factory=dict)

    def _state(self, name, tensor):
        st = self.states.get(name)
        if st is None or st.first_moment.shape != tensor.shape:
            st = AdamState.zeros_like(tensor.detach())
            self.states[name] = st
        return st

    def reset_rows(self, name, rows, like):
        st = self._state(name, like)
        idx = list(rows)
        st.first_moment[idx] = 0
        st.second_moment[idx] = 0
        st.step_count[idx] = 0

    def step(self, store, grads, learnable, epoch):
        lr = lr_at(self.schedule, epoch)
        for name, grad in grads.items():
            param = store.group(name)
            st = self._state(name, param)
            rows = learnable.rows(name)
            if rows is None:
                new, new_st = adam_step(st, param, grad, lr)
                param.copy_(new)
                self.states[name] = new_st
                continue
            idx = list(rows)
            sub = AdamState(
                st.first_moment[idx], st.second_moment[idx], st.step_count[idx],
                st.beta1, st.beta2, st.epsilon,
            )
            new, new_sub = adam_step(sub, param[idx], grad, lr)
            param[idx] = new
            st.first_moment[idx] = new_sub.first_moment
            st.second_moment[idx] = new_sub.second_moment
            st.step_count[idx] = new_sub.step_count
        return lr
