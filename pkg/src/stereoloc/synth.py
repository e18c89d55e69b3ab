"""Synthetic stereo frames of pedestrians.

Each person is a planar skeleton at constant depth, projected into both
rectified views with Gaussian pixel noise. Some people are hidden from the
right camera to model occlusion in one view.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ._rng import substream
from .errors import DataError, DomainError
from .geometry import HeightPrior, StereoRig, project
from .jsonl import read_jsonl, write_jsonl
from .skeleton import HIP_JOINTS, NUM_JOINTS, KeypointSet, posed_offsets

HEIGHT_BOUNDS = (1.0, 2.2)


@dataclass(frozen=True)
class SceneConfig:
    n_people: tuple[int, int] = (1, 6)
    distance_range: tuple[float, float] = (5.0, 50.0)
    azimuth_range: tuple[float, float] = (-0.65, 0.65)
    camera_height_m: float = 1.65
    # per-person ground level varies uniformly by this much (slopes, curbs, pitch)
    ground_offset_m: float = 0.5
    noise_px: float = 1.0
    mono_only_fraction: float = 0.15
    height_prior: HeightPrior = field(default_factory=HeightPrior)
    # uniform tail (lo, hi) drawn with probability tail_fraction
    height_tail: tuple[float, float] | None = None
    tail_fraction: float = 1.0
    pose_jitter: float = 0.03
    min_visible_joints: int = 9
    max_retries: int = 200

    def __post_init__(self):
        lo, hi = self.distance_range
        if not (4.0 < lo < hi < 60.0):
            raise DomainError(f"distance range must lie within (4, 60) m, got {self.distance_range}")
        if self.n_people[0] < 1 or self.n_people[1] < self.n_people[0]:
            raise DomainError(f"bad pedestrian count range {self.n_people}")
        if self.ground_offset_m < 0:
            raise DomainError("ground_offset_m must be non-negative")
        if not 0.0 <= self.mono_only_fraction <= 1.0:
            raise DomainError("mono_only_fraction must lie in [0, 1]")
        if self.height_tail is not None:
            tlo, thi = self.height_tail
            if not (HEIGHT_BOUNDS[0] <= tlo < thi <= HEIGHT_BOUNDS[1]):
                raise DomainError(f"height tail {self.height_tail} outside {HEIGHT_BOUNDS}")

    def to_dict(self):
        d = asdict(self)
        d["height_prior"] = asdict(self.height_prior)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "height_prior" in d:
            hp = dict(d["height_prior"])
            hp["mixture"] = tuple(tuple(c) for c in hp.get("mixture", ()))
            d["height_prior"] = HeightPrior(**hp)
        for key in ("n_people", "distance_range", "azimuth_range", "height_tail"):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        return cls(**d)

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class SceneInstance:
    person_id: int
    center3d: np.ndarray
    height_m: float
    visible_left: bool
    visible_right: bool
    occlusion_level: float
    left: KeypointSet | None = None
    right: KeypointSet | None = None

    def to_dict(self):
        return {
            "person_id": self.person_id,
            "center": [float(c) for c in self.center3d],
            "height_m": self.height_m,
            "visible_left": self.visible_left,
            "visible_right": self.visible_right,
            "occlusion_level": self.occlusion_level,
            "left": self.left.to_dict() if self.left is not None else None,
            "right": self.right.to_dict() if self.right is not None else None,
        }

    @classmethod
    def from_dict(cls, d):
        left = KeypointSet.from_dict(d["left"], "left") if d.get("left") else None
        right = KeypointSet.from_dict(d["right"], "right") if d.get("right") else None
        center = d.get("center")
        return cls(
            person_id=int(d["person_id"]),
            center3d=np.array(center, dtype=float) if center is not None else None,
            height_m=float(d["height_m"]) if d.get("height_m") is not None else None,
            visible_left=bool(d.get("visible_left", left is not None)),
            visible_right=bool(d.get("visible_right", right is not None)),
            occlusion_level=float(d.get("occlusion_level", 0.0)),
            left=left,
            right=right,
        )


@dataclass
class FrameAnnotation:
    frame_id: int
    rig: StereoRig
    instances: list[SceneInstance]

    def left_sets(self):
        """(person_id, KeypointSet) for every instance seen by the left camera."""
        return [(inst.person_id, inst.left) for inst in self.instances
                if inst.visible_left and inst.left is not None]

    def right_sets(self):
        """Right detections ordered left-to-right in the image, as a detector would list them."""
        found = [(inst.person_id, inst.right) for inst in self.instances
                 if inst.visible_right and inst.right is not None]
        return sorted(found, key=lambda item: (item[1].uv[item[1].visible, 0].mean(), item[0]))

    def instance(self, person_id):
        for inst in self.instances:
            if inst.person_id == person_id:
                return inst
        raise KeyError(person_id)

    def to_dict(self):
        return {"frame_id": self.frame_id, "rig": self.rig.to_dict(),
                "instances": [inst.to_dict() for inst in self.instances]}

    @classmethod
    def from_dict(cls, d):
        insts = [SceneInstance.from_dict(i) for i in d["instances"]]
        for inst in insts:
            if inst.visible_left and inst.left is None:
                raise DataError(f"instance {inst.person_id} is visible_left but has no left keypoints")
        return cls(frame_id=int(d["frame_id"]), rig=StereoRig.from_dict(d["rig"]), instances=insts)


def _sample_height(config, rng):
    if config.height_tail is not None and rng.random() < config.tail_fraction:
        return float(rng.uniform(*config.height_tail))
    prior = config.height_prior
    lo = max(HEIGHT_BOUNDS[0], prior.mean_m - 6 * prior.std_m)
    hi = min(HEIGHT_BOUNDS[1], prior.mean_m + 6 * prior.std_m)
    while True:
        h = float(prior.sample(rng, 1)[0])
        if lo <= h <= hi:
            return h


def _observe(joints3d, rig, eye, noise_px, rng):
    uv = project(joints3d, rig, eye)
    if noise_px > 0:
        uv = uv + rng.normal(0.0, noise_px, uv.shape)
    w, h = rig.image_size
    vis = (uv[:, 0] >= 0) & (uv[:, 0] < w) & (uv[:, 1] >= 0) & (uv[:, 1] < h)
    return KeypointSet(uv, vis, eye)


def observe_person(center, height_m, rig, noise_px=0.0, rng=None, offsets=None):
    """Left and right keypoints of a planar person with mid-hip at ``center``."""
    if offsets is None:
        offsets = posed_offsets()
    if noise_px > 0 and rng is None:
        raise ValueError("pixel noise needs an rng")
    joints = np.asarray(center, dtype=float) + np.column_stack([offsets * height_m, np.zeros(NUM_JOINTS)])
    return (_observe(joints, rig, "left", noise_px, rng),
            _observe(joints, rig, "right", noise_px, rng))


def generate_scene(config, rng_seed, rig=None, frame_id=0):
    """Sample one stereo frame.

    People are placed uniformly in radial distance and azimuth with their
    feet ``camera_height_m`` below the camera, give or take a uniform
    ``ground_offset_m``, so foot position alone does not reveal distance
    without knowing the person's height. A person
    must show both hips and ``min_visible_joints`` joints in the left view,
    otherwise the placement is redrawn (up to ``max_retries`` times).
    """
    rig = rig or StereoRig()
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    n = int(rng.integers(config.n_people[0], config.n_people[1] + 1))
    instances = []
    for pid in range(n):
        for _ in range(config.max_retries):
            h = _sample_height(config, rng)
            r = rng.uniform(*config.distance_range)
            beta = rng.uniform(*config.azimuth_range)
            ground = config.camera_height_m + rng.uniform(-config.ground_offset_m, config.ground_offset_m)
            y = ground - 0.48 * h
            rho = np.sqrt(r * r - y * y)
            center = np.array([rho * np.sin(beta), y, rho * np.cos(beta)])
            offsets = posed_offsets(rng, config.pose_jitter)
            left, right = observe_person(center, h, rig, config.noise_px, rng, offsets)
            if left.visible.sum() >= config.min_visible_joints and left.visible[list(HIP_JOINTS)].all():
                break
        else:
            raise DomainError(f"could not place person {pid} in the field of view "
                              f"after {config.max_retries} attempts")
        vis_right = bool(right.visible.sum() >= config.min_visible_joints)
        if rng.random() < config.mono_only_fraction:
            vis_right = False
        n_seen = int(left.visible.sum()) + (int(right.visible.sum()) if vis_right else 0)
        instances.append(SceneInstance(
            person_id=pid, center3d=center, height_m=h,
            visible_left=True, visible_right=vis_right,
            occlusion_level=1.0 - n_seen / (2 * NUM_JOINTS),
            left=left, right=right if vis_right else None,
        ))
    return FrameAnnotation(frame_id=frame_id, rig=rig, instances=instances)


def generate_frames(config, n_frames, seed, rig=None, start_id=0):
    """``n_frames`` frames, each from its own seed substream."""
    return [generate_scene(config, substream(seed, "scene", start_id + i), rig, frame_id=start_id + i)
            for i in range(n_frames)]


def dataset_split(frames, ratios=(0.8, 0.2), seed=0):
    """Partition frames (not instances) into len(ratios) disjoint subsets."""
    ratios = np.asarray(ratios, dtype=float)
    if abs(ratios.sum() - 1.0) > 1e-9 or np.any(ratios < 0):
        raise DomainError(f"split ratios must be non-negative and sum to 1, got {ratios.tolist()}")
    n = len(frames)
    if n < len(ratios):
        raise DomainError(f"cannot split {n} frames into {len(ratios)} parts")
    order = substream(seed, "split").permutation(n)
    counts = np.floor(ratios * n + 1e-9).astype(int)
    counts[-1] = n - counts[:-1].sum()
    parts, start = [], 0
    for c in counts:
        parts.append([frames[i] for i in sorted(order[start:start + c])])
        start += c
    return parts


def write_frames(path, frames):
    write_jsonl(path, (f.to_dict() for f in frames))


def read_frames(path):
    return list(read_jsonl(path, FrameAnnotation.from_dict))

