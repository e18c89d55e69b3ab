"""Localization metrics and geometric baselines.

Errors are radial unless stated otherwise. Distance bins are half-open
``[lo, hi)`` except the last, which includes 50 m.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import HeightPrior, SphericalCoord, disparity_to_depth, spherical_to_cartesian
from .inference import Localization, match_to_ground_truth
from .skeleton import ANKLE_JOINTS, HEAD_JOINTS, HIP_JOINTS

DISTANCE_BINS = (("<10", 0.0, 10.0), ("10-20", 10.0, 20.0), ("20-30", 20.0, 30.0), ("30-50", 30.0, 50.0))
DIFFICULTIES = ("easy", "moderate", "hard")


# -- scalar metrics -------------------------------------------------------------

def ale(r_pred, r_gt):
    """Mean absolute radial error; None for an empty set."""
    r_pred, r_gt = np.asarray(r_pred, float), np.asarray(r_gt, float)
    if r_pred.size == 0:
        return None
    return float(np.mean(np.abs(r_pred - r_gt)))


def ralp(entries, n_gt, rel_threshold=0.05, n_points=40):
    """Relative average localization precision, in percent.

    ``entries`` is a sequence of ``(confidence, r_pred, r_gt_or_None)``, one
    per prediction; ``None`` marks a prediction with no matched ground truth.
    A prediction is a true positive when ``|r_pred - r_gt| < rel_threshold *
    r_gt``. Precision is interpolated (max over higher recall) and averaged
    over recall levels ``1/n_points, ..., 1``. Unmatched ground truths only
    enter through ``n_gt``.
    """
    if n_gt == 0:
        return None
    entries = sorted(enumerate(entries), key=lambda e: (-e[1][0], e[0]))
    tp = np.array([g is not None and abs(p - g) < rel_threshold * g for _, (_, p, g) in entries], float)
    if tp.size == 0:
        return 0.0
    ctp = np.cumsum(tp)
    precision = ctp / np.arange(1, len(tp) + 1)
    recall = ctp / n_gt
    total = 0.0
    for level in np.arange(1, n_points + 1) / n_points:
        ok = recall >= level - 1e-12
        total += precision[ok].max() if ok.any() else 0.0
    return 100.0 * total / n_points


def coverage_and_size(r_pred, r_gt, b):
    """Fraction of ground truths inside ``r_pred +- b`` and mean ``b / r_pred``."""
    r_pred, r_gt, b = (np.asarray(v, float) for v in (r_pred, r_gt, b))
    ok = np.isfinite(b)
    if not ok.any():
        return None, None
    inside = np.abs(r_pred[ok] - r_gt[ok]) <= b[ok]
    return float(inside.mean()), float(np.mean(b[ok] / r_pred[ok]))


def box_stats(values):
    """Tukey box-plot summary; outliers lie beyond 1.5 IQR from the quartiles."""
    v = np.sort(np.asarray(values, float))
    if v.size == 0:
        return None
    q1, med, q3 = np.percentile(v, [25, 50, 75])
    iqr = q3 - q1
    lo_fence, hi_fence = q1 - 1.5 * iqr, q3 + 1.5 * iqr
    inside = v[(v >= lo_fence) & (v <= hi_fence)]
    return {"min": float(v[0]), "whisker_low": float(inside.min()), "q1": float(q1),
            "median": float(med), "q3": float(q3), "whisker_high": float(inside.max()),
            "max": float(v[-1]), "outliers": [float(x) for x in v[(v < lo_fence) | (v > hi_fence)]]}


def difficulty(visible_right, bbox_height_px, easy_px=40.0, hard_px=25.0):
    """Disjoint difficulty regime of one instance."""
    if not visible_right or bbox_height_px < hard_px:
        return "hard"
    if bbox_height_px >= easy_px:
        return "easy"
    return "moderate"


def difficulty_split(instances, easy_px=40.0, hard_px=25.0):
    """Map each SceneInstance to its regime; every instance lands in exactly one."""
    return [difficulty(inst.visible_right, inst.left.bbox_height(), easy_px, hard_px) for inst in instances]


def distance_bin(r):
    for name, lo, hi in DISTANCE_BINS:
        if lo <= r < hi or (hi == DISTANCE_BINS[-1][2] and r == hi):
            return name
    return None


def loglog_slope(distance, values):
    """Least-squares exponent ``k`` of ``values ~ distance**k``."""
    d, v = np.asarray(distance, float), np.asarray(values, float)
    ok = (d > 0) & (v > 0)
    if ok.sum() < 2:
        return None
    return float(np.polyfit(np.log(d[ok]), np.log(v[ok]), 1)[0])


# -- baselines ------------------------------------------------------------------

def _radial_from_depth(z, kp, rig):
    """Radial distance of the mid-hip ray at depth ``z`` (centroid if hips are hidden)."""
    hips = list(HIP_JOINTS)
    if kp.visible[hips].all():
        uv = kp.uv[hips].mean(axis=0)
    else:
        uv = kp.uv[kp.visible].mean(axis=0)
    u0, v0 = rig.principal_point
    xs, ys = (uv[0] - u0) / rig.focal_px, (uv[1] - v0) / rig.focal_px
    return float(z * np.sqrt(1.0 + xs * xs + ys * ys))


def b_median_depth(left, right, rig):
    """Depth from the median disparity over joints seen by both cameras; None if undefined."""
    both = left.visible & right.visible
    if not both.any():
        return None
    d = float(np.median(left.uv[both, 0] - right.uv[both, 0]))
    if d <= 0:
        return None
    return disparity_to_depth(d, rig)


def b_median_baseline(left, right, rig):
    """Radial distance of a matched pair from its median disparity, or None."""
    z = b_median_depth(left, right, rig)
    return None if z is None else _radial_from_depth(z, left, rig)


def b_pose_similarity(left, candidates):
    """Zero-centered L2 pose distance to each candidate; returns ``(best, scores)``.

    Only joints visible in both poses enter the distance; candidates sharing
    no joint score infinity.
    """
    if not candidates:
        raise ValueError("need at least one candidate")
    scores = []
    for cand in candidates:
        both = left.visible & cand.visible
        if not both.any():
            scores.append(np.inf)
            continue
        a = left.uv[both] - left.uv[both].mean(axis=0)
        b = cand.uv[both] - cand.uv[both].mean(axis=0)
        scores.append(float(np.linalg.norm((a - b).ravel())))
    scores = np.array(scores)
    return int(np.argmin(scores)), scores


def mono_geometric_baseline(left, rig, prior=HeightPrior()):
    """Distance assuming the person has the prior mean height; None if head or ankles are hidden."""
    head = [j for j in HEAD_JOINTS if left.visible[j]]
    ankles = [j for j in ANKLE_JOINTS if left.visible[j]]
    if not head or not ankles:
        return None
    pixel_height = left.uv[ankles, 1].max() - left.uv[head, 1].min()
    if pixel_height <= 0:
        return None
    z = rig.focal_px * prior.mean_m / pixel_height
    return _radial_from_depth(z, left, rig)


def _baseline_loc(frame_id, pid, r, kp, rig, ism=1.0, mode="stereo", right_index=-1):
    u0, v0 = rig.principal_point
    hips = list(HIP_JOINTS)
    uv = kp.uv[hips].mean(axis=0) if kp.visible[hips].all() else kp.uv[kp.visible].mean(axis=0)
    beta = float(np.arctan2(uv[0] - u0, rig.focal_px))
    ys = (uv[1] - v0) / rig.focal_px
    xs = (uv[0] - u0) / rig.focal_px
    psi = float(np.arctan2(ys, np.sqrt(1.0 + xs * xs)))
    sph = SphericalCoord(float(r), beta, psi)
    return Localization(left_instance_id=pid, position_xyz=spherical_to_cartesian(sph), spherical=sph,
                        interval_halfwidth=float("nan"), ism_score=ism, mode_flag=mode,
                        right_index=right_index, frame_id=frame_id, box=kp.bbox())


def baseline_localizations(frames, method, association=None, prior=HeightPrior()):
    """Localizations from a geometric baseline.

    ``method`` is ``"b_median"``, ``"b_pose"`` (pose-similarity association
    followed by median disparity) or ``"mono"``. For ``"b_median"`` the
    association comes from ``association`` (a list of Localizations carrying
    ``right_index``, e.g. network predictions) or, if omitted, from ground
    truth. Instances without a usable estimate are left out, which lowers
    recall.
    """
    chosen = {}
    if association is not None:
        chosen = {(l.frame_id, l.left_instance_id): l for l in association}
    out = []
    for frame in frames:
        rig = frame.rig
        rights = frame.right_sets()
        for pid, kp in frame.left_sets():
            if method == "mono":
                r = mono_geometric_baseline(kp, rig, prior)
                if r is not None:
                    out.append(_baseline_loc(frame.frame_id, pid, r, kp, rig, ism=0.0, mode="mono"))
                continue
            if not rights:
                continue
            if method == "b_median":
                if association is not None:
                    loc = chosen.get((frame.frame_id, pid))
                    if loc is None or loc.right_index < 0 or loc.mode_flag != "stereo":
                        continue
                    ri = loc.right_index
                else:
                    ids = [rid for rid, _ in rights]
                    if pid not in ids:
                        continue
                    ri = ids.index(pid)
            elif method == "b_pose":
                ri, _ = b_pose_similarity(kp, [k for _, k in rights])
            else:
                raise ValueError(f"unknown baseline {method!r}")
            r = b_median_baseline(kp, rights[ri][1], rig)
            if r is not None:
                out.append(_baseline_loc(frame.frame_id, pid, r, kp, rig, right_index=ri))
    return out


# -- aggregate report -------------------------------------------------------------

@dataclass
class MatchedInstance:
    frame_id: int
    person_id: int
    r_gt: float
    xyz_gt: np.ndarray
    visible_right: bool
    difficulty: str
    bin: str | None
    loc: Localization | None
    right_correct: bool | None


def _confidence(loc, kind):
    b = loc.interval_halfwidth
    if kind == "ism":
        return loc.ism_score
    if kind == "inv_b":
        return 1.0 / b if np.isfinite(b) and b > 0 else 0.0
    if kind == "ism_inv_b":
        if not (np.isfinite(b) and b > 0):
            return loc.ism_score
        return max(loc.ism_score, 1e-6) / b
    raise ValueError(f"unknown confidence kind {kind!r}")


def match_frames(localizations, frames, iou_threshold=0.5, easy_px=40.0, hard_px=25.0):
    """Match predictions to ground-truth instances frame by frame.

    Returns ``(matched, unmatched_predictions)``; ``matched`` has one entry
    per ground-truth left instance (``loc`` None when nothing matched).
    """
    by_frame = {}
    for loc in localizations:
        by_frame.setdefault(loc.frame_id, []).append(loc)
    matched, unmatched = [], []
    for frame in frames:
        preds = by_frame.pop(frame.frame_id, [])
        gts = [frame.instance(pid) for pid, _ in frame.left_sets()]
        right_ids = [rid for rid, _ in frame.right_sets()]
        pairs = match_to_ground_truth([p.box for p in preds], [g.left.bbox() for g in gts], iou_threshold)
        gt_to_pred = {j: i for i, j, _ in pairs}
        for j, g in enumerate(gts):
            loc = preds[gt_to_pred[j]] if j in gt_to_pred else None
            correct = None
            if loc is not None and g.visible_right:
                correct = 0 <= loc.right_index < len(right_ids) and right_ids[loc.right_index] == g.person_id
            r = float(np.linalg.norm(g.center3d))
            matched.append(MatchedInstance(frame.frame_id, g.person_id, r, np.asarray(g.center3d, float),
                                           g.visible_right,
                                           difficulty(g.visible_right, g.left.bbox_height(), easy_px, hard_px),
                                           distance_bin(r), loc, correct))
        used = set(gt_to_pred.values())
        unmatched.extend(p for i, p in enumerate(preds) if i not in used)
    for rest in by_frame.values():
        unmatched.extend(rest)
    # canonical order so aggregates do not depend on input order, not even in the last bit
    matched.sort(key=lambda m: (m.frame_id, m.person_id))
    unmatched.sort(key=lambda p: (p.frame_id, p.left_instance_id, p.spherical.r))
    return matched, unmatched


def _group_metrics(group, unmatched, confidence, rel_threshold):
    hits = [m for m in group if m.loc is not None]
    r_pred = np.array([m.loc.spherical.r for m in hits])
    r_gt = np.array([m.r_gt for m in hits])
    b = np.array([m.loc.interval_halfwidth for m in hits])
    err = np.abs(r_pred - r_gt)
    euclid = np.array([np.linalg.norm(m.loc.position_xyz - m.xyz_gt) for m in hits])
    cov, size = coverage_and_size(r_pred, r_gt, b) if hits else (None, None)
    entries = [(_confidence(m.loc, confidence), m.loc.spherical.r, m.r_gt) for m in hits]
    entries += [(_confidence(p, confidence), p.spherical.r, None) for p in unmatched]
    assoc = [m.right_correct for m in hits if m.right_correct is not None]
    return {
        "count": len(hits),
        "n_gt": len(group),
        "recall": len(hits) / len(group) if group else None,
        "ale": ale(r_pred, r_gt),
        "ale_std": float(err.std()) if hits else None,
        "ale_euclidean": float(euclid.mean()) if hits else None,
        "ralp": ralp(entries, len(group), rel_threshold),
        "coverage": cov,
        "interval_size": size,
        "association_accuracy": float(np.mean(assoc)) if assoc else None,
        "box": box_stats(err) if hits else None,
    }


def evaluate(localizations, frames, confidence="ism_inv_b", rel_threshold=0.05,
             iou_threshold=0.5, easy_px=40.0, hard_px=25.0):
    """Metrics report (a JSON-ready dict) for predictions against ground truth."""
    matched, unmatched = match_frames(localizations, frames, iou_threshold, easy_px, hard_px)
    report = {"difficulty": {}, "bins": {}, "bins_stereo": {}, "bins_mono_only": {}}
    for name in DIFFICULTIES:
        report["difficulty"][name] = _group_metrics([m for m in matched if m.difficulty == name], [],
                                                    confidence, rel_threshold)
    report["difficulty"]["all"] = _group_metrics(matched, unmatched, confidence, rel_threshold)
    for name, _, _ in DISTANCE_BINS:
        in_bin = [m for m in matched if m.bin == name]
        report["bins"][name] = _group_metrics(in_bin, [], confidence, rel_threshold)
        report["bins_stereo"][name] = _group_metrics([m for m in in_bin if m.visible_right], [],
                                                     confidence, rel_threshold)
        report["bins_mono_only"][name] = _group_metrics([m for m in in_bin if not m.visible_right], [],
                                                        confidence, rel_threshold)
    decided = [m for m in matched if m.loc is not None]
    ism_ok = [(m.right_correct and m.loc.mode_flag == "stereo") if m.visible_right
              else m.loc.mode_flag == "mono" for m in decided]
    report["ism_accuracy"] = float(np.mean(ism_ok)) if ism_ok else None
    report["n_unmatched_predictions"] = len(unmatched)
    return report


def spread_points(localizations, frames):
    """(distance, b, mode, visible_right) per matched instance, for spread-vs-distance curves."""
    matched, _ = match_frames(localizations, frames)
    return [(m.r_gt, m.loc.interval_halfwidth, m.loc.mode_flag, m.visible_right)
            for m in matched if m.loc is not None]


def error_points(localizations, frames):
    """(distance, absolute radial error, difficulty) per matched instance."""
    matched, _ = match_frames(localizations, frames)
    return [(m.r_gt, abs(m.loc.spherical.r - m.r_gt), m.difficulty) for m in matched if m.loc is not None]


# -- writers ----------------------------------------------------------------------

_TABLE_FIELDS = ("group", "name", "count", "n_gt", "recall", "ale", "ale_std", "ale_euclidean",
                 "ralp", "coverage", "interval_size", "association_accuracy")


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.10g}"
    return v


def write_report(report, out_dir, prefix="metrics"):
    """Write ``<prefix>.json``, ``<prefix>_table.csv`` and ``<prefix>_boxplots.csv``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / f"{prefix}.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    with open(out_dir / f"{prefix}_table.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(_TABLE_FIELDS)
        for group in ("difficulty", "bins", "bins_stereo", "bins_mono_only"):
            for name, m in report[group].items():
                w.writerow([group, name] + [_fmt(m[k]) for k in _TABLE_FIELDS[2:]])
    write_boxplots(report, out_dir / f"{prefix}_boxplots.csv")


def write_boxplots(report, path):
    keys = ("min", "whisker_low", "q1", "median", "q3", "whisker_high", "max")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("group", "name") + keys + ("n_outliers", "outliers"))
        for group in ("difficulty", "bins"):
            for name, m in report[group].items():
                box = m["box"]
                if box is None:
                    continue
                w.writerow([group, name] + [_fmt(box[k]) for k in keys]
                           + [len(box["outliers"]), " ".join(f"{x:.6g}" for x in box["outliers"])])


def write_points(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) if not isinstance(v, (bool, np.bool_)) else int(v) for v in row])
