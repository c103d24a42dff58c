"""Binary subject masks and the shot metrics derived from them.

Pixel coordinates: x grows rightward, y grows downward, and integer
coordinates address pixel centres with (0, 0) at the top-left pixel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Optional, TextIO

import numpy as np

if TYPE_CHECKING:
    from .simenv import WorldState


class SubjectNotVisible(ValueError):
    """Raised when a metric needs a centroid but the mask is empty."""


@dataclass(frozen=True)
class CameraIntrinsics:
    width_px: int = 120
    height_px: int = 90
    fov_h: float = 1.0

    def __post_init__(self):
        if self.width_px <= 0 or self.height_px <= 0:
            raise ValueError("frame dimensions must be positive")
        if not 0.0 < self.fov_h < math.pi:
            raise ValueError("fov_h must lie in (0, pi)")

    @property
    def midpoint_px(self) -> float:
        return self.width_px / 2

    @property
    def focal_px(self) -> float:
        return self.midpoint_px / math.tan(self.fov_h / 2)

    @property
    def total_pixels(self) -> int:
        return self.width_px * self.height_px


@dataclass(frozen=True)
class BinaryMask:
    """Row-major boolean grid, ``bits[y, x]``."""

    bits: np.ndarray

    def __post_init__(self):
        if self.bits.ndim != 2:
            raise ValueError("mask must be two-dimensional")
        if self.bits.dtype != np.bool_:
            object.__setattr__(self, "bits", self.bits.astype(bool))

    @classmethod
    def empty(cls, width_px: int, height_px: int) -> "BinaryMask":
        return cls(np.zeros((height_px, width_px), dtype=bool))

    @property
    def width_px(self) -> int:
        return self.bits.shape[1]

    @property
    def height_px(self) -> int:
        return self.bits.shape[0]

    @property
    def total_pixels(self) -> int:
        return self.bits.size

    def dump(self, fh: TextIO) -> None:
        """Write the plain-text debug form: ``W H`` then one 0/1 row per line."""
        fh.write(f"{self.width_px} {self.height_px}\n")
        for row in self.bits:
            fh.write("".join("1" if b else "0" for b in row) + "\n")

    @classmethod
    def load(cls, fh: TextIO) -> "BinaryMask":
        w, h = (int(v) for v in fh.readline().split())
        rows = [fh.readline().strip() for _ in range(h)]
        if any(len(r) != w for r in rows):
            raise ValueError("mask row length does not match header")
        return cls(np.array([[c == "1" for c in r] for r in rows], dtype=bool).reshape(h, w))


@dataclass(frozen=True)
class Moments:
    m00: float
    m10: float
    m01: float

    @property
    def visible(self) -> bool:
        return self.m00 > 0

    @property
    def centroid_x(self) -> Optional[float]:
        return self.m10 / self.m00 if self.m00 > 0 else None

    @property
    def centroid_y(self) -> Optional[float]:
        return self.m01 / self.m00 if self.m00 > 0 else None


@dataclass(frozen=True)
class ShotMetrics:
    """Per-frame shot description. Centroid and angles are None when the subject is lost."""

    area_frac: float
    centroid_x: Optional[float]
    centroid_y: Optional[float]
    pixel_offset: Optional[float]
    camera_offset: Optional[float]
    subject_offset: Optional[float]
    subject_visible: bool


@dataclass(frozen=True)
class DeltaParams:
    expected: float
    maximum: float

    def __post_init__(self):
        if not 0.0 < self.expected < self.maximum:
            raise ValueError(f"need 0 < expected < maximum, got {self.expected}, {self.maximum}")


def camera_pose(world: "WorldState"):
    """Return (position, forward, right, up) unit vectors of the turret camera.

    World frame is top-down with the y axis to the *right* of the x axis, so
    positive heading and pan both turn clockwise (to the right).
    """
    yaw = world.robot_heading + world.pan
    pitch = world.tilt
    cy, sy = math.cos(yaw), math.sin(yaw)
    cp, sp = math.cos(pitch), math.sin(pitch)
    pos = np.array([world.robot_x, world.robot_y, world.camera_height])
    forward = np.array([cp * cy, cp * sy, sp])
    right = np.array([-sy, cy, 0.0])
    up = np.array([-sp * cy, -sp * sy, cp])
    return pos, forward, right, up


def project_subject(world: "WorldState", cam: CameraIntrinsics):
    """Pinhole projection of the subject sphere to (u, v, radius_px), or None if behind the camera."""
    pos, forward, right, up = camera_pose(world)
    d = np.array([world.subject_x, world.subject_y, world.subject_z]) - pos
    depth = float(d @ forward)
    if depth <= 0.0:
        return None
    dist = math.sqrt(float(d @ d))
    f = cam.focal_px
    # principal point sits at the geometric frame centre in pixel-centre coordinates
    u = (cam.width_px - 1) / 2 + f * float(d @ right) / depth
    v = (cam.height_px - 1) / 2 - f * float(d @ up) / depth
    return u, v, f * world.subject_radius / dist


def rasterize_disk(u: float, v: float, radius: float, width: int, height: int) -> BinaryMask:
    """Set every pixel whose centre lies within ``radius`` of (u, v)."""
    bits = np.zeros((height, width), dtype=bool)
    x0, x1 = max(0, math.ceil(u - radius)), min(width - 1, math.floor(u + radius))
    y0, y1 = max(0, math.ceil(v - radius)), min(height - 1, math.floor(v + radius))
    if x0 > x1 or y0 > y1:
        return BinaryMask(bits)
    xs = np.arange(x0, x1 + 1, dtype=float) - u
    ys = np.arange(y0, y1 + 1, dtype=float) - v
    bits[y0:y1 + 1, x0:x1 + 1] = ys[:, None] ** 2 + xs[None, :] ** 2 <= radius * radius
    return BinaryMask(bits)


def render_mask(world: "WorldState", cam: CameraIntrinsics) -> BinaryMask:
    if world.subject_radius <= 0:
        raise ValueError("subject radius must be positive")
    proj = project_subject(world, cam)
    if proj is None:
        return BinaryMask.empty(cam.width_px, cam.height_px)
    return rasterize_disk(*proj, cam.width_px, cam.height_px)


def compute_moments(mask: BinaryMask) -> Moments:
    bits = mask.bits
    cols = bits.sum(axis=0, dtype=np.int64)
    rows = bits.sum(axis=1, dtype=np.int64)
    m00 = int(cols.sum())
    m10 = int(cols @ np.arange(bits.shape[1], dtype=np.int64))
    m01 = int(rows @ np.arange(bits.shape[0], dtype=np.int64))
    return Moments(float(m00), float(m10), float(m01))


def area_percentage(m: Moments, mask: BinaryMask) -> float:
    return m.m00 / mask.total_pixels


def camera_offset_angle(centroid_x: Optional[float], cam: CameraIntrinsics) -> float:
    if centroid_x is None:
        raise SubjectNotVisible("centroid undefined: subject not visible")
    pixel_offset = centroid_x - cam.midpoint_px
    return pixel_offset * ((cam.fov_h / 2) / cam.midpoint_px)


def subject_offset_angle(alpha: float, pan: float) -> float:
    return alpha + pan


def delta_metric(actual: float, params: DeltaParams) -> float:
    """Normalised relative error: +1 at zero, 0 on target, -1 at the maximum."""
    if not 0.0 <= actual <= params.maximum:
        raise ValueError(f"actual value {actual} outside [0, {params.maximum}]")
    dp = abs(actual - params.expected)
    if actual < params.expected:
        return dp / params.expected
    return dp / (params.expected - params.maximum)


def shot_metrics(mask: BinaryMask, cam: CameraIntrinsics, pan: float) -> ShotMetrics:
    m = compute_moments(mask)
    area = area_percentage(m, mask)
    if not m.visible:
        return ShotMetrics(area, None, None, None, None, None, False)
    cx, cy = m.centroid_x, m.centroid_y
    alpha = camera_offset_angle(cx, cam)
    return ShotMetrics(
        area_frac=area,
        centroid_x=cx,
        centroid_y=cy,
        pixel_offset=cx - cam.midpoint_px,
        camera_offset=alpha,
        subject_offset=subject_offset_angle(alpha, pan),
        subject_visible=True,
    )
