"""Analytic Gaussian-blob scenes, known trajectories, and dataset files.

Dataset directory layout::

    manifest.txt        key = value lines: format, width, height, count,
                        channels, trajectory_kind, and focal when ground
                        truth is present
    image_0000.f32 ...  one file per image: little-endian float32 planes,
                        channel-major (C, H, W)
    poses.txt           optional ground truth, one line per image:
                        "index wx wy wz tx ty tz" (camera-to-world axis-angle
                        and translation), floats written with repr()

Externally captured 8-bit PPM sequences can be read with
:func:`load_ppm_directory`; a ``poses.txt`` in the same line format and a
``manifest.txt`` carrying ``focal`` are picked up when present.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
import torch

from .exceptions import DomainError, FormatError
from .geometry import CameraPose, Intrinsics, focal_from_fov
from .rendering import SamplingConfig, render_image

FORMAT_TAG = "incremental-nerf-dataset/1"


@dataclass(frozen=True)
class Blob:
    center: tuple
    radius: float
    peak_density: float
    color: tuple

    def __post_init__(self):
        if self.radius <= 0:
            raise DomainError("blob radius must be positive")
        if self.peak_density < 0:
            raise DomainError("blob peak density must be non-negative")
        if not all(0.0 <= c <= 1.0 for c in self.color):
            raise DomainError("blob colors must lie in [0, 1]")


@dataclass
class AnalyticScene:
    blobs: list = field(default_factory=list)

    def __call__(self, positions, directions=None):
        """Torch evaluation on ``(N, 3)`` positions; directions are ignored."""
        dtype = positions.dtype
        n = positions.shape[0]
        if not self.blobs:
            return (torch.full((n, 3), 0.5, dtype=dtype), torch.zeros(n, dtype=dtype))
        centers = torch.tensor([b.center for b in self.blobs], dtype=dtype)
        radii = torch.tensor([b.radius for b in self.blobs], dtype=dtype)
        peaks = torch.tensor([b.peak_density for b in self.blobs], dtype=dtype)
        colors = torch.tensor([b.color for b in self.blobs], dtype=dtype)
        sq = ((positions[:, None, :] - centers[None]) ** 2).sum(-1)
        per_blob = peaks * torch.exp(-sq / (2.0 * radii**2))
        density = per_blob.sum(-1)
        gray = torch.full((n, 3), 0.5, dtype=dtype)
        weighted = (per_blob @ colors) / density.clamp_min(1e-300)[:, None]
        color = torch.where((density < 1e-12)[:, None], gray, weighted)
        return color, density


def analytic_field(scene, position, direction=None):
    """Single-point ``(color, density)`` of an analytic scene, as numpy."""
    x = torch.as_tensor(np.asarray(position, dtype=np.float64)).reshape(1, 3)
    color, density = scene(x)
    return color[0].numpy(), float(density[0])


def default_scene(seed=0, n_blobs=5, center=(0.0, 0.0, 0.0), extent=0.2,
                  blob_radius=(0.0625, 0.1125), peak_density=(24.0, 56.0)):
    """Random blob scene around ``center``, colors bright enough to track.

    The defaults fit a unit-radius camera orbit: blob centers lie within
    ``extent`` of ``center`` on each axis.
    """
    rng = np.random.default_rng(seed)
    blobs = []
    for _ in range(n_blobs):
        c = np.asarray(center) + rng.uniform(-extent, extent, size=3)
        blobs.append(
            Blob(
                center=tuple(float(v) for v in c),
                radius=float(rng.uniform(*blob_radius)),
                peak_density=float(rng.uniform(*peak_density)),
                color=tuple(float(v) for v in rng.uniform(0.15, 1.0, size=3)),
            )
        )
    return AnalyticScene(blobs)


def generate_trajectory(kind, count, *, step=0.1, step_deg=15.0, radius=1.0,
                        fov=50.0, width=32, height=32):
    """Known camera-to-world poses and intrinsics.

    ``forward`` moves along +z by ``step`` with no rotation. ``arc`` places
    cameras on a circle of ``radius`` in the x-z plane, yawing by
    ``step_deg`` per frame, each looking at the origin.
    """
    if count < 2:
        raise DomainError("a trajectory needs at least 2 cameras")
    if radius <= 0:
        raise DomainError("radius must be positive")
    intr = Intrinsics(focal_from_fov(fov, width), width, height)
    poses = []
    if kind == "forward":
        for j in range(count):
            poses.append(CameraPose(np.zeros(3), np.array([0.0, 0.0, step * j])))
    elif kind == "arc":
        for j in range(count):
            yaw = np.deg2rad(step_deg * j)
            omega = np.array([0.0, yaw, 0.0])
            R = CameraPose(omega).matrix
            poses.append(CameraPose(omega, R @ np.array([0.0, 0.0, -radius])))
    else:
        raise DomainError(f"unknown trajectory kind {kind!r}")
    return poses, intr


@dataclass
class SceneDataset:
    images: np.ndarray
    poses: list | None = None
    focal: float | None = None
    trajectory_kind: str = "unknown"

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float32)
        if self.images.ndim != 4 or self.images.shape[-1] != 3:
            raise DomainError("images must have shape (N, H, W, 3)")
        if self.poses is not None and len(self.poses) != len(self.images):
            raise DomainError("ground-truth pose count must equal image count")

    @property
    def count(self):
        return self.images.shape[0]

    @property
    def height(self):
        return self.images.shape[1]

    @property
    def width(self):
        return self.images.shape[2]

    @property
    def has_ground_truth(self):
        return self.poses is not None

    @property
    def intrinsics(self):
        if self.focal is None:
            return None
        return Intrinsics(self.focal, self.width, self.height)

    def pose_array(self):
        """``(N, 6)`` array of ``[wx, wy, wz, tx, ty, tz]`` ground truth."""
        if self.poses is None:
            return None
        return np.array([np.r_[p.rotation, p.translation] for p in self.poses])

    def __eq__(self, other):
        if not isinstance(other, SceneDataset):
            return NotImplemented
        if self.images.shape != other.images.shape:
            return False
        if self.images.tobytes() != other.images.tobytes():
            return False
        if self.trajectory_kind != other.trajectory_kind or self.focal != other.focal:
            return False
        if (self.poses is None) != (other.poses is None):
            return False
        if self.poses is not None:
            return self.pose_array().tobytes() == other.pose_array().tobytes()
        return True


def render_dataset(scene, poses, intrinsics, oversample=1024, t_near=0.1, t_far=6.0,
                   kind="unknown"):
    """Render ground-truth images with deterministic midpoint quadrature."""
    sampling = SamplingConfig(t_near, t_far, oversample, stratified=False)
    images = [render_image(scene, pose, intrinsics, sampling, chunk=256) for pose in poses]
    return SceneDataset(
        np.stack(images).astype(np.float32), list(poses), float(intrinsics.focal), kind
    )


def make_synthetic(kind="arc", count=12, size=32, step=0.1, step_deg=15.0, radius=1.0,
                   fov=50.0, n_blobs=5, seed=0, oversample=1024, t_near=0.1, t_far=6.0,
                   extent=0.2, blob_radius=(0.0625, 0.1125)):
    """Scene + trajectory + render in one call, with matching scene placement.

    The arc orbits the scene center at ``radius``; the forward scene sits
    ``radius`` beyond the last camera.
    """
    poses, intr = generate_trajectory(kind, count, step=step, step_deg=step_deg,
                                      radius=radius, fov=fov, width=size, height=size)
    if kind == "forward":
        center = (0.0, 0.0, radius + step * (count - 1))
    else:
        center = (0.0, 0.0, 0.0)
    scene = default_scene(seed, n_blobs, center=center, extent=extent, blob_radius=blob_radius)
    return render_dataset(scene, poses, intr, oversample, t_near, t_far, kind)


# --- persistence -----------------------------------------------------------

def write_poses(path, poses):
    with open(path, "w") as fh:
        for i, p in enumerate(poses):
            vals = " ".join(repr(float(v)) for v in np.r_[p.rotation, p.translation])
            fh.write(f"{i} {vals}\n")


def read_poses(path):
    """Parse a poses file into a list of :class:`CameraPose` ordered by index."""
    entries = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 7:
                raise FormatError(f"{path}:{lineno}: expected 7 fields", field="poses")
            try:
                idx = int(parts[0])
                vals = np.array([float(v) for v in parts[1:]])
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}", field="poses") from exc
            entries[idx] = CameraPose(vals[:3], vals[3:])
    if sorted(entries) != list(range(len(entries))):
        raise FormatError(f"{path}: indices are not 0..N-1", field="poses")
    return [entries[i] for i in range(len(entries))]


def _read_manifest(path):
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise FormatError(f"{path}:{lineno}: expected key = value", field="manifest")
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out


def save_dataset(path, dataset):
    os.makedirs(path, exist_ok=True)
    lines = [
        f"format = {FORMAT_TAG}",
        f"width = {dataset.width}",
        f"height = {dataset.height}",
        f"count = {dataset.count}",
        "channels = 3",
        f"trajectory_kind = {dataset.trajectory_kind}",
    ]
    if dataset.focal is not None:
        lines.append(f"focal = {float(dataset.focal)!r}")
    with open(os.path.join(path, "manifest.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    for i, img in enumerate(dataset.images):
        planes = np.ascontiguousarray(img.transpose(2, 0, 1)).astype("<f4")
        with open(os.path.join(path, f"image_{i:04d}.f32"), "wb") as fh:
            fh.write(planes.tobytes())
    pose_path = os.path.join(path, "poses.txt")
    if dataset.poses is not None:
        write_poses(pose_path, dataset.poses)
    elif os.path.exists(pose_path):
        os.remove(pose_path)


def _int_field(manifest, key):
    if key not in manifest:
        raise FormatError(f"manifest lacks {key!r}", field=key)
    try:
        value = int(manifest[key])
    except ValueError as exc:
        raise FormatError(f"manifest {key!r} is not an integer", field=key) from exc
    if value < 1:
        raise FormatError(f"manifest {key!r} must be positive", field=key)
    return value


def load_dataset(path):
    manifest_path = os.path.join(path, "manifest.txt")
    if not os.path.isfile(manifest_path):
        raise FileNotFoundError(manifest_path)
    manifest = _read_manifest(manifest_path)
    if manifest.get("format") != FORMAT_TAG:
        raise FormatError(f"unknown dataset format {manifest.get('format')!r}", field="format")
    width, height, count = (_int_field(manifest, k) for k in ("width", "height", "count"))
    channels = _int_field(manifest, "channels")
    if channels != 3:
        raise FormatError("only 3-channel datasets are supported", field="channels")
    images = np.empty((count, height, width, 3), dtype=np.float32)
    expected = 4 * 3 * height * width
    for i in range(count):
        name = f"image_{i:04d}.f32"
        fpath = os.path.join(path, name)
        if not os.path.isfile(fpath):
            raise FormatError(f"missing image file {name}", field=name)
        with open(fpath, "rb") as fh:
            raw = fh.read()
        if len(raw) != expected:
            raise FormatError(f"{name}: {len(raw)} bytes, expected {expected}", field=name)
        planes = np.frombuffer(raw, dtype="<f4").reshape(3, height, width)
        images[i] = planes.transpose(1, 2, 0)
    poses = focal = None
    pose_path = os.path.join(path, "poses.txt")
    if os.path.isfile(pose_path):
        poses = read_poses(pose_path)
        if len(poses) != count:
            raise FormatError("pose count does not match image count", field="poses")
        if "focal" not in manifest:
            raise FormatError("ground-truth poses present but focal missing", field="focal")
    if "focal" in manifest:
        try:
            focal = float(manifest["focal"])
        except ValueError as exc:
            raise FormatError("focal is not a number", field="focal") from exc
    return SceneDataset(images, poses, focal, manifest.get("trajectory_kind", "unknown"))


def load_ppm_directory(path):
    """Read a sorted directory of 8-bit PPM frames as a dataset."""
    from PIL import Image

    names = sorted(n for n in os.listdir(path) if n.lower().endswith(".ppm"))
    if not names:
        raise FormatError(f"no .ppm files in {path}", field="images")
    frames = []
    for name in names:
        try:
            with Image.open(os.path.join(path, name)) as im:
                frames.append(np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0)
        except OSError as exc:
            raise FormatError(f"{name}: {exc}", field=name) from exc
    if len({f.shape for f in frames}) != 1:
        raise FormatError("frames differ in size", field="images")
    poses = focal = None
    manifest_path = os.path.join(path, "manifest.txt")
    if os.path.isfile(manifest_path):
        manifest = _read_manifest(manifest_path)
        if "focal" in manifest:
            focal = float(manifest["focal"])
    pose_path = os.path.join(path, "poses.txt")
    if os.path.isfile(pose_path):
        poses = read_poses(pose_path)
        if len(poses) != len(frames):
            raise FormatError("pose count does not match frame count", field="poses")
    return SceneDataset(np.stack(frames), poses, focal, "external")


def open_dataset(path):
    """Load either the native format or a PPM frame directory."""
    if os.path.isfile(os.path.join(path, "manifest.txt")):
        manifest = _read_manifest(os.path.join(path, "manifest.txt"))
        if manifest.get("format") == FORMAT_TAG:
            return load_dataset(path)
    return load_ppm_directory(path)
