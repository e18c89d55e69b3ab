"""Per-frame prediction: every left person gets exactly one localization."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import SphericalCoord, spherical_to_cartesian
from .jsonl import read_jsonl, write_jsonl
from .model import decode
from .pairs import build_pairs
from .skeleton import NUM_JOINTS

MONO_THRESHOLD = 0.5


@dataclass
class Localization:
    left_instance_id: int
    position_xyz: np.ndarray
    spherical: SphericalCoord
    interval_halfwidth: float
    ism_score: float
    mode_flag: str
    right_index: int = -1
    frame_id: int = -1
    box: tuple | None = None

    def to_dict(self):
        x, y, z = (float(v) for v in self.position_xyz)
        return {"frame_id": self.frame_id, "instance_id": self.left_instance_id,
                "x": x, "y": y, "z": z, "r": self.spherical.r, "beta": self.spherical.beta,
                "psi": self.spherical.psi, "b": self.interval_halfwidth, "ism": self.ism_score,
                "mode": self.mode_flag, "right_index": self.right_index,
                "box": list(self.box) if self.box is not None else None}

    @classmethod
    def from_dict(cls, d):
        sph = SphericalCoord(float(d["r"]), float(d["beta"]), float(d["psi"]))
        return cls(left_instance_id=int(d["instance_id"]),
                   position_xyz=np.array([d["x"], d["y"], d["z"]], dtype=float),
                   spherical=sph, interval_halfwidth=float(d["b"]), ism_score=float(d["ism"]),
                   mode_flag=str(d["mode"]), right_index=int(d.get("right_index", -1)),
                   frame_id=int(d.get("frame_id", -1)),
                   box=tuple(d["box"]) if d.get("box") is not None else None)


def select_pairs(n_left, n_right, ism_prob, spread_rel, rule="ism"):
    """Index of the chosen pair per left instance (pairs are left-major).

    ``rule="ism"`` picks the highest matching probability, ``"spread"`` the
    smallest relative interval. Ties go to the lowest right index.
    """
    n_cand = max(n_right, 1)
    if rule == "ism":
        score = np.asarray(ism_prob).reshape(n_left, n_cand)
    elif rule == "spread":
        score = -np.asarray(spread_rel).reshape(n_left, n_cand)
    else:
        raise ValueError(f"unknown selection rule {rule!r}")
    best = np.argmax(score, axis=1)  # argmax returns the first maximum
    return np.arange(n_left) * n_cand + best, best


def predict_frame(left, right, network, rig, rule="ism", left_ids=None, frame_id=-1):
    """Localize every left instance.

    ``left`` and ``right`` are lists of KeypointSet in pixels. All
    ``N_L * N_R`` pairs go through the network as a single batch.
    """
    n_l, n_r = len(left), len(right)
    if n_l == 0:
        return []
    lxy = np.array([k.normalized(rig) for k in left]).reshape(n_l, NUM_JOINTS, 2)
    lvis = np.array([k.visible for k in left]).reshape(n_l, NUM_JOINTS)
    rxy = np.array([k.normalized(rig) for k in right]).reshape(n_r, NUM_JOINTS, 2)
    rvis = np.array([k.visible for k in right]).reshape(n_r, NUM_JOINTS)
    feats, _, ri, _ = build_pairs(lxy, rxy, lvis, rvis)
    out = decode(network.forward(feats, "eval"))
    chosen, best = select_pairs(n_l, n_r, out.ism_prob, out.spread_rel, rule)
    ids = list(range(n_l)) if left_ids is None else list(left_ids)
    result = []
    for i, k in enumerate(chosen):
        sph = SphericalCoord(float(out.r[k]), float(out.beta[k]), float(out.psi[k]))
        ism = float(out.ism_prob[k]) if n_r > 0 else 0.0
        stereo = n_r > 0 and ism >= MONO_THRESHOLD
        result.append(Localization(
            left_instance_id=ids[i], position_xyz=spherical_to_cartesian(sph), spherical=sph,
            interval_halfwidth=float(out.spread_b[k]), ism_score=ism,
            mode_flag="stereo" if stereo else "mono", right_index=int(ri[k]) if n_r else -1,
            frame_id=frame_id, box=left[i].bbox()))
    return result


def predict_frames(frames, network, rule="ism"):
    """Predictions for FrameAnnotations; right detections in image order."""
    out = []
    for frame in frames:
        left = frame.left_sets()
        right = frame.right_sets()
        out.extend(predict_frame([k for _, k in left], [k for _, k in right], network, frame.rig,
                                 rule, left_ids=[pid for pid, _ in left], frame_id=frame.frame_id))
    return out


def match_to_ground_truth(boxes_pred, boxes_gt, iou_threshold=0.5):
    """Greedy one-to-one matching by descending IoU.

    Returns a list of ``(pred_index, gt_index, iou)``.
    """
    cand = []
    for i, bp in enumerate(boxes_pred):
        for j, bg in enumerate(boxes_gt):
            iou = box_iou(bp, bg)
            if iou >= iou_threshold:
                cand.append((iou, i, j))
    cand.sort(key=lambda c: (-c[0], c[1], c[2]))
    used_p, used_g, matches = set(), set(), []
    for iou, i, j in cand:
        if i in used_p or j in used_g:
            continue
        used_p.add(i)
        used_g.add(j)
        matches.append((i, j, iou))
    return matches


def box_iou(a, b):
    if a is None or b is None:
        return 0.0
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union if union > 0 else 0.0


def write_localizations(path, locs):
    write_jsonl(path, (l.to_dict() for l in locs))


def read_localizations(path):
    return list(read_jsonl(path, Localization.from_dict))
