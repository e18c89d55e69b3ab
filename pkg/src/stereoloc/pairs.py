"""Left/right keypoint pairs: the unit of training and inference.

A pair feature vector is the left skeleton in normalized coordinates
followed by the left-minus-right difference, 4 * 17 = 68 floats laid out
joint-major (x0, y0, x1, y1, ...). Joints hidden in either view contribute
a zero difference; a *null pair* (no right candidate) has an all-zero
difference half.

Besides the per-pair API (:func:`knowledge_injection`, :func:`flip_augment`)
the module works on :class:`PairTable`, a columnar batch of pairs used by
the training loop.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._rng import substream
from .errors import DataError, DomainError
from .geometry import SphericalCoord, cartesian_to_spherical, spherical_to_cartesian
from .jsonl import read_jsonl, write_jsonl
from .skeleton import FLIP_PERMUTATION, NUM_JOINTS

FEATURE_DIM = 4 * NUM_JOINTS
KI_HEIGHT_RANGE = (1.2, 2.0)
_KI_DOMAIN = (1.0, 2.2)


def build_pairs(left_xy, right_xy, left_vis=None, right_vis=None):
    """All-vs-all pair features.

    ``left_xy`` is (N_L, J, 2) normalized keypoints, ``right_xy`` (N_R, J, 2);
    visibility masks default to all-visible. Returns ``(features, left_idx,
    right_idx, pair_vis)`` ordered left-major; ``right_idx`` is -1 for the
    null pair emitted for each left instance when N_R = 0.
    """
    left_xy = np.asarray(left_xy, dtype=float).reshape(-1, NUM_JOINTS, 2)
    right_xy = np.asarray(right_xy, dtype=float).reshape(-1, NUM_JOINTS, 2)
    n_l, n_r = len(left_xy), len(right_xy)
    lv = np.ones((n_l, NUM_JOINTS), bool) if left_vis is None else np.asarray(left_vis, bool).reshape(n_l, NUM_JOINTS)
    rv = np.ones((n_r, NUM_JOINTS), bool) if right_vis is None else np.asarray(right_vis, bool).reshape(n_r, NUM_JOINTS)
    left_xy = np.where(lv[..., None], left_xy, 0.0)
    if n_l == 0:
        return (np.zeros((0, FEATURE_DIM)), np.zeros(0, int), np.zeros(0, int),
                np.zeros((0, NUM_JOINTS), bool))
    if n_r == 0:
        feats = np.concatenate([left_xy.reshape(n_l, -1), np.zeros((n_l, 2 * NUM_JOINTS))], axis=1)
        return feats, np.arange(n_l), np.full(n_l, -1), np.zeros((n_l, NUM_JOINTS), bool)
    li, ri = np.meshgrid(np.arange(n_l), np.arange(n_r), indexing="ij")
    li, ri = li.ravel(), ri.ravel()
    pv = lv[li] & rv[ri]
    delta = np.where(pv[..., None], left_xy[li] - right_xy[ri], 0.0)
    feats = np.concatenate([left_xy[li].reshape(len(li), -1), delta.reshape(len(li), -1)], axis=1)
    return feats, li, ri, pv


@dataclass
class PairSample:
    features: np.ndarray
    ism_label: int
    gt: SphericalCoord | None
    left_person_id: int
    right_person_id: int | None
    left_vis: np.ndarray
    pair_vis: np.ndarray
    height_m: float | None = None
    gt_right: SphericalCoord | None = None
    height_right_m: float | None = None
    frame_id: int = -1
    is_null_pair: bool = False
    is_augmented: bool = False

    def to_dict(self):
        def sph(s):
            return None if s is None else [s.r, s.beta, s.psi]
        return {
            "features": self.features.tolist(),
            "ism_label": int(self.ism_label),
            "gt": sph(self.gt),
            "gt_right": sph(self.gt_right),
            "left_person_id": self.left_person_id,
            "right_person_id": self.right_person_id,
            "left_vis": self.left_vis.astype(int).tolist(),
            "pair_vis": self.pair_vis.astype(int).tolist(),
            "height_m": self.height_m,
            "height_right_m": self.height_right_m,
            "frame_id": self.frame_id,
            "is_null_pair": self.is_null_pair,
            "is_augmented": self.is_augmented,
        }

    @classmethod
    def from_dict(cls, d):
        feats = np.array(d["features"], dtype=float)
        if feats.shape != (FEATURE_DIM,):
            raise DataError(f"feature vector has length {feats.size}, expected {FEATURE_DIM}")
        label = int(d["ism_label"])
        if label not in (0, 1):
            raise DataError(f"ism_label must be 0 or 1, got {label}")

        def sph(v):
            return None if v is None else SphericalCoord(*map(float, v))
        return cls(
            features=feats, ism_label=label, gt=sph(d.get("gt")),
            left_person_id=d["left_person_id"], right_person_id=d.get("right_person_id"),
            left_vis=np.array(d["left_vis"], bool), pair_vis=np.array(d["pair_vis"], bool),
            height_m=d.get("height_m"), gt_right=sph(d.get("gt_right")),
            height_right_m=d.get("height_right_m"), frame_id=int(d.get("frame_id", -1)),
            is_null_pair=bool(d.get("is_null_pair", False)),
            is_augmented=bool(d.get("is_augmented", False)),
        )


def _instance_gt(inst, rig, eye):
    if inst.center3d is None:
        return None
    c = np.array(inst.center3d, dtype=float)
    if eye == "right":
        c[0] -= rig.baseline_m
    return cartesian_to_spherical(c)


def label_pairs(features, left_idx, right_idx, pair_vis, left_instances, right_instances, rig,
                left_vis=None, frame_id=-1):
    """Attach ISM labels and ground truth to raw pair features.

    The target is always the LEFT instance; ``ism_label`` is 1 iff both sides
    carry the same person id. Pairs whose left instance has no ground truth
    are dropped.
    """
    out = []
    for k in range(len(features)):
        linst = left_instances[left_idx[k]]
        gt = _instance_gt(linst, rig, "left")
        if gt is None:
            continue
        null = right_idx[k] < 0
        rinst = None if null else right_instances[right_idx[k]]
        lvis = (np.asarray(left_vis[left_idx[k]], bool) if left_vis is not None
                else np.ones(NUM_JOINTS, bool))
        out.append(PairSample(
            features=features[k].copy(),
            ism_label=int(not null and rinst.person_id == linst.person_id),
            gt=gt,
            left_person_id=linst.person_id,
            right_person_id=None if null else rinst.person_id,
            left_vis=lvis,
            pair_vis=np.asarray(pair_vis[k], bool).copy(),
            height_m=linst.height_m,
            gt_right=None if null else _instance_gt(rinst, rig, "right"),
            height_right_m=None if null else rinst.height_m,
            frame_id=frame_id,
            is_null_pair=bool(null),
        ))
    return out


def null_pair(left_xy, left_vis):
    """Feature vector of a left instance with no right candidate."""
    feats, *_ = build_pairs(np.asarray(left_xy)[None], np.zeros((0, NUM_JOINTS, 2)),
                            np.asarray(left_vis)[None])
    return feats[0]


def pairs_from_frame(frame, null_fraction=0.0, rng=None):
    """Labeled pairs of one frame.

    Every left instance is paired with every right detection; with no right
    detections each left instance gets a null pair. ``null_fraction`` adds an
    extra null pair for that fraction of left instances (needs ``rng``).
    """
    rig = frame.rig
    lefts = [frame.instance(pid) for pid, _ in frame.left_sets()]
    rights = [frame.instance(pid) for pid, _ in frame.right_sets()]
    lxy = np.array([i.left.normalized(rig) for i in lefts]).reshape(-1, NUM_JOINTS, 2)
    lvis = np.array([i.left.visible for i in lefts]).reshape(-1, NUM_JOINTS)
    rxy = np.array([i.right.normalized(rig) for i in rights]).reshape(-1, NUM_JOINTS, 2)
    rvis = np.array([i.right.visible for i in rights]).reshape(-1, NUM_JOINTS)
    feats, li, ri, pv = build_pairs(lxy, rxy, lvis, rvis)
    samples = label_pairs(feats, li, ri, pv, lefts, rights, rig, lvis, frame.frame_id)
    if null_fraction > 0 and len(rights) > 0:
        for k, inst in enumerate(lefts):
            if rng.random() < null_fraction:
                samples.extend(label_pairs(null_pair(lxy[k], lvis[k])[None], [0], [-1],
                                           np.zeros((1, NUM_JOINTS), bool), [inst], [], rig,
                                           lvis[k][None], frame.frame_id))
    return samples


def balance_pairs(pairs, seed=0, replicate=False):
    """Equalize label-0 and label-1 counts among non-null pairs.

    The majority class is subsampled without replacement (or, with
    ``replicate``, the minority class is resampled with replacement).
    Null pairs are passed through untouched. Original order is preserved.
    """
    labels = np.array([p.ism_label for p in pairs], dtype=int)
    null = np.array([p.is_null_pair for p in pairs], dtype=bool)
    pos = np.flatnonzero((labels == 1) & ~null)
    neg = np.flatnonzero((labels == 0) & ~null)
    if len(pos) == 0:
        raise DomainError("balancing needs at least one true pair")
    rng = substream(seed, "balance")
    if len(neg) == len(pos):
        keep = np.concatenate([pos, neg])
    elif replicate:
        small, big = (pos, neg) if len(pos) < len(neg) else (neg, pos)
        extra = rng.choice(small, size=len(big) - len(small), replace=True)
        keep = np.concatenate([big, small, extra])
    else:
        small, big = (pos, neg) if len(pos) < len(neg) else (neg, pos)
        keep = np.concatenate([small, rng.choice(big, size=len(small), replace=False)])
    keep = np.sort(np.concatenate([keep, np.flatnonzero(null)]), kind="stable")
    return [pairs[i] for i in keep]


@dataclass
class PairTable:
    """Columnar storage for many pairs; angles in radians, distances in meters."""

    features: np.ndarray          # (N, 68)
    ism: np.ndarray               # (N,) 0/1
    gt: np.ndarray                # (N, 3) r, beta, psi of the left instance
    gt_right: np.ndarray          # (N, 3) right instance in the right camera frame, NaN if null
    height: np.ndarray            # (N,)
    height_right: np.ndarray      # (N,)
    left_vis: np.ndarray          # (N, J) bool
    pair_vis: np.ndarray          # (N, J) bool
    left_id: np.ndarray           # (N,)
    right_id: np.ndarray          # (N,) -1 for null pairs
    frame_id: np.ndarray          # (N,)
    is_null: np.ndarray           # (N,) bool
    is_aug: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.is_aug is None:
            self.is_aug = np.zeros(len(self.ism), bool)

    def __len__(self):
        return len(self.ism)

    @classmethod
    def from_samples(cls, samples):
        def sph(s):
            return [np.nan] * 3 if s is None else [s.r, s.beta, s.psi]

        def num(v):
            return np.nan if v is None else float(v)
        n = len(samples)
        return cls(
            features=np.array([p.features for p in samples], dtype=float).reshape(n, FEATURE_DIM),
            ism=np.array([p.ism_label for p in samples], dtype=float),
            gt=np.array([sph(p.gt) for p in samples], dtype=float).reshape(n, 3),
            gt_right=np.array([sph(p.gt_right) for p in samples], dtype=float).reshape(n, 3),
            height=np.array([num(p.height_m) for p in samples]),
            height_right=np.array([num(p.height_right_m) for p in samples]),
            left_vis=np.array([p.left_vis for p in samples], bool).reshape(n, NUM_JOINTS),
            pair_vis=np.array([p.pair_vis for p in samples], bool).reshape(n, NUM_JOINTS),
            left_id=np.array([p.left_person_id for p in samples], dtype=int),
            right_id=np.array([-1 if p.right_person_id is None else p.right_person_id for p in samples],
                              dtype=int),
            frame_id=np.array([p.frame_id for p in samples], dtype=int),
            is_null=np.array([p.is_null_pair for p in samples], bool),
            is_aug=np.array([p.is_augmented for p in samples], bool),
        )

    def to_samples(self):
        def sph(row):
            return None if np.isnan(row).any() else SphericalCoord(*map(float, row))

        def num(v):
            return None if np.isnan(v) else float(v)
        return [PairSample(
            features=self.features[k].copy(), ism_label=int(self.ism[k]), gt=sph(self.gt[k]),
            left_person_id=int(self.left_id[k]),
            right_person_id=None if self.is_null[k] else int(self.right_id[k]),
            left_vis=self.left_vis[k].copy(), pair_vis=self.pair_vis[k].copy(),
            height_m=num(self.height[k]), gt_right=sph(self.gt_right[k]),
            height_right_m=num(self.height_right[k]), frame_id=int(self.frame_id[k]),
            is_null_pair=bool(self.is_null[k]), is_augmented=bool(self.is_aug[k]),
        ) for k in range(len(self))]

    def take(self, idx):
        idx = np.asarray(idx)
        return PairTable(**{name: getattr(self, name)[idx] for name in _COLUMNS})

    @staticmethod
    def concat(tables):
        return PairTable(**{name: np.concatenate([getattr(t, name) for t in tables])
                            for name in _COLUMNS})


_COLUMNS = ("features", "ism", "gt", "gt_right", "height", "height_right", "left_vis",
            "pair_vis", "left_id", "right_id", "frame_id", "is_null", "is_aug")


def depth_from_spherical(gt):
    """Depth z of (..., 3) spherical coordinates."""
    gt = np.asarray(gt, dtype=float)
    return gt[..., 0] * np.cos(gt[..., 2]) * np.cos(gt[..., 1])


def inject_knowledge(table, new_heights, rig):
    """Vectorized knowledge injection; returns a new table.

    Rescaling a person and their position by ``k = h_new / h_source`` about
    the left camera center leaves the left image unchanged, so only the
    targets move: ``r' = k r`` at the same angles. For true pairs the
    normalized disparity ``baseline / z`` becomes ``baseline / (k z)`` and the
    difference x-components are shifted by that amount, which keeps the
    per-joint detection noise intact. False and null pairs carry no disparity
    information about the left person, so only their target changes.
    """
    h = np.asarray(new_heights, dtype=float)
    if np.any(h <= _KI_DOMAIN[0]) or np.any(h >= _KI_DOMAIN[1]):
        raise DomainError(f"injected heights must lie in {_KI_DOMAIN}")
    if np.any(~np.isfinite(table.height)):
        raise DomainError("knowledge injection needs the source height of every pair")
    k = h / table.height
    out = table.take(np.arange(len(table)))
    out.gt = table.gt.copy()
    out.gt[:, 0] *= k
    true = table.ism == 1
    if true.any():
        z = depth_from_spherical(table.gt[true])
        shift = rig.baseline_m / (z * k[true]) - rig.baseline_m / z
        dx = out.features[true, 2 * NUM_JOINTS::2]
        out.features[true, 2 * NUM_JOINTS::2] = np.where(table.pair_vis[true], dx + shift[:, None], 0.0)
        # same person seen from the right camera, moved with the left one
        moved = spherical_to_cartesian(out.gt[true])
        moved[:, 0] -= rig.baseline_m
        out.gt_right[true] = cartesian_to_spherical(moved)
    out.height = h
    out.height_right = np.where(true, h, table.height_right)
    out.is_aug = np.ones(len(table), bool)
    return out


def flip_table(table):
    """Horizontal flip with left/right swap; an involution.

    The mirrored right view becomes the new left view (joint labels swapped
    so a front-facing person stays front-facing). Joints seen by only one
    camera cannot be recovered for the other side and are dropped. Null
    pairs are simply mirrored.
    """
    j = NUM_JOINTS
    perm = np.array(FLIP_PERMUTATION)
    out = table.take(np.arange(len(table)))
    left = table.features[:, :2 * j].reshape(-1, j, 2)
    delta = table.features[:, 2 * j:].reshape(-1, j, 2)
    right = np.where(table.pair_vis[..., None], left - delta, 0.0)
    null = table.is_null

    new_left = np.empty_like(left)
    new_left[null] = left[null] * np.array([-1.0, 1.0])
    new_left[~null] = right[~null] * np.array([-1.0, 1.0])
    new_right = left * np.array([-1.0, 1.0])
    pv = table.pair_vis
    new_delta = np.where(pv[..., None], new_left - new_right, 0.0)
    new_left = new_left[:, perm]
    new_delta = new_delta[:, perm]
    out.features = np.concatenate([new_left.reshape(-1, 2 * j), new_delta.reshape(-1, 2 * j)], axis=1)
    out.pair_vis = pv[:, perm]
    out.left_vis = np.where(null[:, None], table.left_vis, pv)[:, perm]

    mirror = np.array([1.0, -1.0, 1.0])
    out.gt = np.where(null[:, None], table.gt, table.gt_right) * mirror
    out.gt_right = np.where(null[:, None], table.gt_right, table.gt * mirror)
    out.height = np.where(null, table.height, table.height_right)
    out.height_right = np.where(null, table.height_right, table.height)
    out.left_id = np.where(null, table.left_id, table.right_id)
    out.right_id = np.where(null, table.right_id, table.left_id)
    return out


def knowledge_injection(pair, h, rig):
    """Single-pair form of :func:`inject_knowledge` with target height ``h``."""
    return inject_knowledge(PairTable.from_samples([pair]), [h], rig).to_samples()[0]


def flip_augment(pair):
    """Single-pair form of :func:`flip_table`."""
    return flip_table(PairTable.from_samples([pair])).to_samples()[0]


def sample_ki_heights(rng, n):
    return rng.uniform(*KI_HEIGHT_RANGE, size=n)


def write_pairs(path, pairs):
    write_jsonl(path, (p.to_dict() for p in pairs))


def read_pairs(path):
    return list(read_jsonl(path, PairSample.from_dict))
