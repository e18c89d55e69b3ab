"""Pinhole stereo-rig geometry and the monocular / stereo error models.

Camera frame convention: x to the right, y down, z forward. The left camera
sits at the origin and the right camera at ``(baseline_m, 0, 0)``; images are
rectified so corresponding points share the same row.
"""

from __future__ import annotations

import functools
import json
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DomainError

__all__ = [
    "StereoRig",
    "SphericalCoord",
    "HeightPrior",
    "KITTI_RIG",
    "project",
    "normalize",
    "disparity_to_depth",
    "depth_to_disparity",
    "stereo_pixel_error",
    "task_error_constant",
    "monocular_task_error",
    "cartesian_to_spherical",
    "spherical_to_cartesian",
    "crossover_distance",
]


@dataclass(frozen=True)
class StereoRig:
    baseline_m: float = 0.54
    focal_px: float = 721.0
    principal_point: tuple[float, float] = (620.0, 190.0)
    image_size: tuple[int, int] = (1240, 380)

    def __post_init__(self):
        if not self.baseline_m > 0:
            raise DomainError(f"baseline_m must be positive, got {self.baseline_m}")
        if not self.focal_px > 0:
            raise DomainError(f"focal_px must be positive, got {self.focal_px}")
        u0, v0 = self.principal_point
        w, h = self.image_size
        if not (0 <= u0 <= w and 0 <= v0 <= h):
            raise DomainError("principal point lies outside the image")

    @property
    def bf(self):
        """Baseline times focal length, in pixel-meters."""
        return self.baseline_m * self.focal_px

    def to_dict(self):
        u0, v0 = self.principal_point
        w, h = self.image_size
        return {"baseline_m": self.baseline_m, "focal_px": self.focal_px,
                "u0": u0, "v0": v0, "width": w, "height": h}

    @classmethod
    def from_dict(cls, d):
        return cls(baseline_m=float(d["baseline_m"]), focal_px=float(d["focal_px"]),
                   principal_point=(float(d["u0"]), float(d["v0"])),
                   image_size=(int(d["width"]), int(d["height"])))

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


KITTI_RIG = StereoRig()


@dataclass(frozen=True)
class SphericalCoord:
    r: float
    beta: float
    psi: float


@dataclass(frozen=True)
class HeightPrior:
    """Distribution of human stature.

    ``mean_m`` is the height assumed by monocular reasoning. Sampling uses a
    single Gaussian ``(mean_m, std_m)`` unless ``mixture`` lists
    ``(weight, mean, std)`` components, e.g. separate male/female modes.
    """

    mean_m: float = 1.71
    std_m: float = 0.09
    mixture: tuple[tuple[float, float, float], ...] = field(default=())

    def __post_init__(self):
        if not (self.mean_m > 0 and self.std_m > 0):
            raise DomainError("height prior needs positive mean and std")
        if self.mixture:
            w = sum(c[0] for c in self.mixture)
            if abs(w - 1.0) > 1e-9:
                raise DomainError(f"mixture weights sum to {w}, expected 1")

    def sample(self, rng, size):
        if not self.mixture:
            return rng.normal(self.mean_m, self.std_m, size)
        weights = np.array([c[0] for c in self.mixture])
        comp = rng.choice(len(self.mixture), size=size, p=weights)
        means = np.array([c[1] for c in self.mixture])[comp]
        stds = np.array([c[2] for c in self.mixture])[comp]
        return rng.normal(means, stds)


def project(point3d, rig, eye="left"):
    """Project camera-frame points (..., 3) to pixel coordinates (..., 2)."""
    p = np.asarray(point3d, dtype=float)
    z = p[..., 2]
    if np.any(z <= 0):
        raise DomainError("cannot project a point with non-positive depth")
    if eye == "left":
        x = p[..., 0]
    elif eye == "right":
        x = p[..., 0] - rig.baseline_m
    else:
        raise ValueError(f"eye must be 'left' or 'right', got {eye!r}")
    u0, v0 = rig.principal_point
    u = rig.focal_px * x / z + u0
    v = rig.focal_px * p[..., 1] / z + v0
    return np.stack([u, v], axis=-1)


def normalize(kp_pixels, rig):
    """Pixel coordinates (..., 2) -> normalized image coordinates."""
    kp = np.asarray(kp_pixels, dtype=float)
    u0, v0 = rig.principal_point
    out = np.empty_like(kp)
    out[..., 0] = (kp[..., 0] - u0) / rig.focal_px
    out[..., 1] = (kp[..., 1] - v0) / rig.focal_px
    return out


def disparity_to_depth(d, rig):
    d = np.asarray(d, dtype=float)
    if np.any(d <= 0):
        raise DomainError("disparity must be positive")
    z = rig.bf / d
    return float(z) if z.ndim == 0 else z


def depth_to_disparity(z, rig):
    z = np.asarray(z, dtype=float)
    if np.any(z <= 0):
        raise DomainError("depth must be positive")
    d = rig.bf / z
    return float(d) if d.ndim == 0 else d


def stereo_pixel_error(z, rig, e_d=1.0):
    """Depth error caused by a disparity error of ``e_d`` pixels at depth ``z``."""
    z = np.asarray(z, dtype=float)
    if np.any(z <= 0) or np.any(np.asarray(e_d) < 0):
        raise DomainError("need z > 0 and e_d >= 0")
    e = z * z * e_d / rig.bf
    return float(e) if np.ndim(e) == 0 else e


_C_LOCK = threading.Lock()


@functools.lru_cache(maxsize=None)
def _task_error_constant(prior, n_samples, seed):
    rng = np.random.default_rng(seed)
    m = prior.mean_m
    total = 0.0
    chunk = 250_000
    done = 0
    while done < n_samples:
        n = min(chunk, n_samples - done)
        h = prior.sample(rng, n)
        total += np.abs(m / h - 1.0).sum()
        done += n
    return total / n_samples


def task_error_constant(prior=HeightPrior(), n_samples=1_000_000, seed=0):
    """Relative distance error of assuming every person has the mean height.

    A person of true height ``h`` whose image is read as someone of height
    ``mean_m`` is placed at ``r * mean_m / h``; the constant is the expected
    ``|mean_m / h - 1|`` over the prior, estimated by seeded Monte Carlo and
    cached per ``(prior, n_samples, seed)``.
    """
    with _C_LOCK:
        return _task_error_constant(prior, int(n_samples), int(seed))


def monocular_task_error(r_gt, prior=HeightPrior()):
    r = np.asarray(r_gt, dtype=float)
    if np.any(r < 0):
        raise DomainError("distance must be non-negative")
    e = task_error_constant(prior) * r
    return float(e) if e.ndim == 0 else e


def cartesian_to_spherical(xyz):
    """(x, y, z) -> (r, beta, psi); vectorized over leading axes.

    Returns a SphericalCoord for a single point, otherwise an (..., 3) array.
    """
    p = np.asarray(xyz, dtype=float)
    x, y, z = p[..., 0], p[..., 1], p[..., 2]
    if np.any(z <= 0):
        raise DomainError("spherical coordinates need z > 0 (front-facing camera)")
    r = np.sqrt(x * x + y * y + z * z)
    beta = np.arctan2(x, z)
    psi = np.arctan2(y, np.hypot(x, z))
    if p.ndim == 1:
        return SphericalCoord(float(r), float(beta), float(psi))
    return np.stack([r, beta, psi], axis=-1)


def spherical_to_cartesian(sph):
    """Inverse of :func:`cartesian_to_spherical`; returns (..., 3) meters."""
    if isinstance(sph, SphericalCoord):
        sph = (sph.r, sph.beta, sph.psi)
    s = np.asarray(sph, dtype=float)
    r, beta, psi = s[..., 0], s[..., 1], s[..., 2]
    rho = r * np.cos(psi)
    return np.stack([rho * np.sin(beta), r * np.sin(psi), rho * np.cos(beta)], axis=-1)


def crossover_distance(rig=KITTI_RIG, prior=HeightPrior(), e_d=1.0, lo=1.0, hi=200.0, tol=1e-10):
    """Distance where the stereo pixel error equals the monocular task error.

    Found by bisection on ``stereo_pixel_error(z) - monocular_task_error(z)``,
    which is negative below the crossover and positive above it.
    """
    def gap(z):
        return stereo_pixel_error(z, rig, e_d) - monocular_task_error(z, prior)

    if gap(lo) >= 0 or gap(hi) <= 0:
        raise DomainError("no sign change in the bracket")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if gap(mid) < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)

