"""Sine-activated radiance field ``(position, direction) -> (color, density)``.

The weights live in one flat vector so the optimizer and the checkpoint
format see a single contiguous block. Layout, in order:

* trunk layer 0: ``W (3, H)``, ``b (H,)``; activation ``sin(w0 * (x W + b))``
* trunk layers 1..L-1: ``W (H, H)``, ``b (H,)``; activation ``sin(w_h * (.))``
* density head: ``W (H, 1)``, ``b (1,)``; softplus
* color head: ``W (H + 3, 3)``, ``b (3,)`` over ``[trunk, direction]``; sigmoid

Direction only enters the color head, so density depends on position alone.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .exceptions import DomainError, FormatError

POSITION_DIM = 3
DIRECTION_DIM = 3
COLOR_CHANNELS = 3


@dataclass(frozen=True)
class FieldConfig:
    layers: int = 8
    hidden_dim: int = 128
    first_layer_frequency: float = 30.0
    hidden_frequency: float = 1.0

    def __post_init__(self):
        if self.layers < 2:
            raise DomainError("field needs at least 2 layers")
        if self.hidden_dim < 1:
            raise DomainError("hidden_dim must be positive")

    def shapes(self):
        """``[(name, weight_shape, bias_shape)]`` in storage order."""
        H = self.hidden_dim
        out = [("trunk0", (POSITION_DIM, H), (H,))]
        out += [(f"trunk{k}", (H, H), (H,)) for k in range(1, self.layers)]
        out.append(("density", (H, 1), (1,)))
        out.append(("color", (H + DIRECTION_DIM, COLOR_CHANNELS), (COLOR_CHANNELS,)))
        return out

    @property
    def n_params(self):
        return sum(math.prod(w) + math.prod(b) for _, w, b in self.shapes())


def unflatten(theta, config):
    """Split the flat vector into ``{name: (W, b)}`` views."""
    params, offset = {}, 0
    for name, wshape, bshape in config.shapes():
        nw, nb = math.prod(wshape), math.prod(bshape)
        W = theta[offset : offset + nw].view(wshape)
        offset += nw
        b = theta[offset : offset + nb].view(bshape)
        offset += nb
        params[name] = (W, b)
    return params


def field_forward(theta, config, positions, directions):
    """Evaluate the field on ``(N, 3)`` positions and unit directions.

    Returns ``(colors (N, 3), densities (N,))``.
    """
    p = unflatten(theta, config)
    W, b = p["trunk0"]
    h = torch.sin(config.first_layer_frequency * (positions @ W + b))
    for k in range(1, config.layers):
        W, b = p[f"trunk{k}"]
        h = torch.sin(config.hidden_frequency * (h @ W + b))
    W, b = p["density"]
    density = F.softplus(h @ W + b).squeeze(-1)
    W, b = p["color"]
    color = torch.sigmoid(torch.cat([h, directions], dim=-1) @ W + b)
    return color, density


def init_theta(config, seed, dtype=torch.float64):
    """SIREN initialization, deterministic in ``seed``.

    First layer weights are uniform in ``+-1/fan_in``; every later layer is
    uniform in ``+-sqrt(6/fan_in)/w_h``. Biases are uniform in
    ``+-1/sqrt(fan_in)``.
    """
    gen = torch.Generator().manual_seed(int(seed))
    chunks = []
    for name, wshape, bshape in config.shapes():
        fan_in = wshape[0]
        if name == "trunk0":
            bound = 1.0 / fan_in
        else:
            bound = math.sqrt(6.0 / fan_in) / config.hidden_frequency
        W = (torch.rand(wshape, generator=gen, dtype=torch.float64) * 2 - 1) * bound
        bb = 1.0 / math.sqrt(fan_in)
        b = (torch.rand(bshape, generator=gen, dtype=torch.float64) * 2 - 1) * bb
        chunks += [W.reshape(-1), b.reshape(-1)]
    return torch.cat(chunks).to(dtype)


class RadianceField:
    """Field weights together with their configuration."""

    def __init__(self, config, theta):
        theta = torch.as_tensor(theta)
        if theta.numel() != config.n_params:
            raise DomainError(
                f"expected {config.n_params} weights for {config}, got {theta.numel()}"
            )
        self.config = config
        self.theta = theta.reshape(-1)

    @classmethod
    def initialize(cls, config=None, seed=0, dtype=torch.float64):
        config = config or FieldConfig()
        return cls(config, init_theta(config, seed, dtype))

    def __call__(self, positions, directions):
        """Evaluate on numpy or torch inputs, returning the same kind."""
        as_numpy = isinstance(positions, np.ndarray)
        x = torch.as_tensor(np.asarray(positions) if as_numpy else positions, dtype=self.theta.dtype)
        d = torch.as_tensor(np.asarray(directions) if as_numpy else directions, dtype=self.theta.dtype)
        single = x.ndim == 1
        x, d = x.reshape(-1, 3), d.reshape(-1, 3)
        with torch.no_grad():
            color, density = field_forward(self.theta, self.config, x, d)
        if single:
            color, density = color[0], density[0]
        if as_numpy:
            return color.numpy(), density.numpy()
        return color, density

    def as_callable(self, theta=None):
        """``fn(positions, directions) -> (color, density)`` for the renderer."""
        theta = self.theta if theta is None else theta
        config = self.config
        return lambda x, d: field_forward(theta, config, x, d)


def eval_field(field, position, direction):
    """Single-point evaluation: ``(color (3,), density)`` as numpy."""
    color, density = field(np.asarray(position, float), np.asarray(direction, float))
    return color, float(density)


# checkpoint: magic, version, layers, hidden_dim, first freq, hidden freq, count,
# then `count` little-endian float64 weights
_MAGIC = b"INRFCKPT"
_HEADER = struct.Struct("<8sIIIddQ")


def save_checkpoint(path, field):
    theta = field.theta.detach().to(torch.float64).numpy().astype("<f8")
    cfg = field.config
    with open(path, "wb") as fh:
        fh.write(
            _HEADER.pack(
                _MAGIC, 1, cfg.layers, cfg.hidden_dim,
                cfg.first_layer_frequency, cfg.hidden_frequency, theta.size,
            )
        )
        fh.write(theta.tobytes())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise FormatError("checkpoint shorter than its header", field="header")
    magic, version, layers, hidden, w0, wh, count = _HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise FormatError("not a field checkpoint", field="magic")
    if version != 1:
        raise FormatError(f"unsupported checkpoint version {version}", field="version")
    config = FieldConfig(layers, hidden, w0, wh)
    if count != config.n_params:
        raise FormatError("weight count does not match header config", field="count")
    body = raw[_HEADER.size :]
    if len(body) != 8 * count:
        raise FormatError("truncated weight block", field="weights")
    theta = torch.from_numpy(np.frombuffer(body, dtype="<f8").astype(np.float64))
    return RadianceField(config, theta)
