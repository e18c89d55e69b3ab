"""Hand-built 12-instance evaluation fixture.

Every person stands on the optical axis, center (0, 0, r_gt), so the
ground-truth radial distance is exactly r_gt. Each left keypoint set has
two visible joints spanning a box of height H pixels; predictions reuse
the same box (IoU 1) so matching is unambiguous. Right keypoints are the
left ones shifted 5 px to the left, and boxes within a frame are laid out
left to right, so right detections keep the left order.

All predicted distances are binary-exact, so errors are exact too.

 id frame r_gt  right  H    regime    bin    r_pred  err    b      ism   conf=ism/b  5% TP  covered
 A  0     5     yes    120  easy      <10    5.125   0.125  0.2    0.9   4.5         yes    yes
 B  0     10    yes    60   easy      10-20  10.625  0.625  0.5    0.8   1.6         no     no
 C  0     8     no     80   hard      <10    8.25    0.25   0.4    0.1   0.25        yes    yes
 D  1     20    yes    30   moderate  20-30  20.875  0.875  1.0    0.95  0.95        yes    yes
 E  1     20    yes    30   moderate  20-30  21.125  1.125  1.0    0.7   0.7         no     no
 F  1     15    yes    40   easy      10-20  15.0    0      0.3    0.99  3.3         yes    yes
 G  2     25    yes    24   hard      20-30  24.0    1      1.0    0.6   0.6         yes    yes (1 <= 1)
 H  2     30    no     50   hard      30-50  33.0    3      2.0    0.2   0.1         no     no
 I  2     40    yes    25   moderate  30-50  41.0    1      1.5    0.85  0.5667      yes    yes
 J  3     45    yes    20   hard      30-50  (no prediction: false negative)
 K  3     12    yes    100  easy      10-20  12.25   0.25   0.125  0.9   7.2         yes    no
 L  3     50    no     20   hard      30-50  47.0    3      4.0    0.3   0.075       no     yes
 X  3     (unmatched prediction, box off to the side) 30.0  1.0  0.5  0.5  false positive

Regimes: Easy needs both views and H >= 40, Hard is mono-only or H < 25,
Moderate is the rest (so H = 40 is Easy and H = 25 is Moderate).
Distance 50 falls in the last bin, whose upper edge is inclusive.

ALE (matched, radial): errors sum to 11.25 over 11 matches -> 11.25 / 11.
  easy: (0.125 + 0.625 + 0 + 0.25) / 4 = 0.25
  moderate: (0.875 + 1.125 + 1) / 3 = 1
  hard: (0.25 + 1 + 3 + 3) / 4 = 1.8125, recall 4 / 5
  bins: <10 0.375 / 2, 10-20 0.875 / 3, 20-30 3 / 3, 30-50 7 / 3 (recall 3 / 4)

Coverage |err| <= b: A C D F G I L -> 7 / 11.

5% precision, ranked by confidence (ties impossible by construction):
  rank     1  2  3  4  5  6  7  8  9  10 11 12
  id       K  A  F  B  D  E  G  I  X  C  H  L
  TP       1  1  1  0  1  0  1  1  0  1  0  0
  cum TP   1  2  3  3  4  4  5  6  6  7  7  7
  prec     1  1  1 3/4 4/5 4/6 5/7 6/8 6/9 7/10 7/11 7/12
  recall = cum TP / 12
  Interpolated precision at recall level t = max precision at recall >= t:
    t <= 3/12 (levels 1..10 of 40):      1
    3/12 < t <= 4/12 (levels 11..13):    4/5
    4/12 < t <= 6/12 (levels 14..20):    6/8
    6/12 < t <= 7/12 (levels 21..23):    7/10
    t > 7/12 (levels 24..40):            0
  sum = 10 + 3 * 0.8 + 7 * 0.75 + 3 * 0.7 = 19.75  ->  100 * 19.75 / 40 = 49.375 %

Association: E picks the right detection of F. Stereo-visible matched
instances A B D E F G I K -> 7 / 8 correct. Full decision accuracy
(true partner flagged stereo, or mono-only flagged mono; mono below 0.5):
all but E -> 10 / 11.

Box plot of the 11 errors, sorted 0 .125 .25 .25 .625 .875 1 1 1.125 3 3,
linear-interpolated quartiles: q1 = 0.25, median = 0.875,
q3 = (1 + 1.125) / 2 = 1.0625; IQR 0.8125; upper fence 2.28125, so both 3s
are outliers and the upper whisker is 1.125; the lower whisker is 0.
"""

import numpy as np

from stereoloc.geometry import KITTI_RIG, SphericalCoord, spherical_to_cartesian
from stereoloc.inference import Localization
from stereoloc.skeleton import NUM_JOINTS, KeypointSet
from stereoloc.synth import FrameAnnotation, SceneInstance

# id, frame, r_gt, visible_right, H, u, r_pred, b, ism, right_index
ROWS = [
    ("A", 0, 5.0, True, 120.0, 100.0, 5.125, 0.2, 0.9, 0),
    ("B", 0, 10.0, True, 60.0, 300.0, 10.625, 0.5, 0.8, 1),
    ("C", 0, 8.0, False, 80.0, 500.0, 8.25, 0.4, 0.1, 0),
    ("D", 1, 20.0, True, 30.0, 100.0, 20.875, 1.0, 0.95, 0),
    ("E", 1, 20.0, True, 30.0, 300.0, 21.125, 1.0, 0.7, 2),
    ("F", 1, 15.0, True, 40.0, 500.0, 15.0, 0.3, 0.99, 2),
    ("G", 2, 25.0, True, 24.0, 100.0, 24.0, 1.0, 0.6, 0),
    ("H", 2, 30.0, False, 50.0, 300.0, 33.0, 2.0, 0.2, -1),
    ("I", 2, 40.0, True, 25.0, 500.0, 41.0, 1.5, 0.85, 1),
    ("J", 3, 45.0, True, 20.0, 100.0, None, None, None, None),
    ("K", 3, 12.0, True, 100.0, 300.0, 12.25, 0.125, 0.9, 1),
    ("L", 3, 50.0, False, 20.0, 500.0, 47.0, 4.0, 0.3, -1),
]
EXTRA_FP = dict(frame=3, r=30.0, b=1.0, ism=0.5, box=(1000.0, 10.0, 1010.0, 30.0))


def _kp(u, height, eye, shift=0.0):
    uv = np.zeros((NUM_JOINTS, 2))
    vis = np.zeros(NUM_JOINTS, bool)
    uv[0] = (u + shift, 100.0)
    uv[1] = (u + shift + height / 2, 100.0 + height)
    vis[:2] = True
    return KeypointSet(uv, vis, eye)


def _loc(frame, pid, r, b, ism, box, right_index):
    sph = SphericalCoord(r, 0.0, 0.0)
    return Localization(left_instance_id=pid, position_xyz=spherical_to_cartesian(sph), spherical=sph,
                        interval_halfwidth=b, ism_score=ism, mode_flag="stereo" if ism >= 0.5 else "mono",
                        right_index=right_index, frame_id=frame, box=box)


def build():
    """Frames and localizations of the fixture."""
    frames = {}
    locs = []
    for pid, (name, f, r_gt, vr, h, u, r_pred, b, ism, ri) in enumerate(ROWS):
        left = _kp(u, h, "left")
        right = _kp(u, h, "right", shift=-5.0) if vr else None
        inst = SceneInstance(pid, np.array([0.0, 0.0, r_gt]), 1.7, True, vr, 0.0, left, right)
        frames.setdefault(f, FrameAnnotation(f, KITTI_RIG, [])).instances.append(inst)
        if r_pred is not None:
            locs.append(_loc(f, pid, r_pred, b, ism, left.bbox(), ri))
    locs.append(_loc(EXTRA_FP["frame"], 99, EXTRA_FP["r"], EXTRA_FP["b"], EXTRA_FP["ism"], EXTRA_FP["box"], 0))
    return [frames[k] for k in sorted(frames)], locs


_SIZE_TERMS = [(0.2, 5.125), (0.5, 10.625), (0.4, 8.25), (1.0, 20.875), (1.0, 21.125), (0.3, 15.0),
               (1.0, 24.0), (2.0, 33.0), (1.5, 41.0), (0.125, 12.25), (4.0, 47.0)]

EXPECTED = {
    "all": {"ale": 11.25 / 11, "ralp": 49.375, "coverage": 7 / 11, "recall": 11 / 12, "count": 11, "n_gt": 12,
            "interval_size": sum(b / r for b, r in _SIZE_TERMS) / 11, "association_accuracy": 7 / 8},
    "easy": {"ale": 0.25, "count": 4, "n_gt": 4, "recall": 1.0},
    "moderate": {"ale": 1.0, "count": 3, "n_gt": 3, "recall": 1.0},
    "hard": {"ale": 1.8125, "count": 4, "n_gt": 5, "recall": 0.8},
    "bins": {"<10": 0.375 / 2, "10-20": 0.875 / 3, "20-30": 1.0, "30-50": 7.0 / 3},
    "bin_recall_30_50": 0.75,
    "ism_accuracy": 10 / 11,
    "difficulty_labels": {"A": "easy", "B": "easy", "C": "hard", "D": "moderate", "E": "moderate",
                          "F": "easy", "G": "hard", "H": "hard", "I": "moderate", "J": "hard",
                          "K": "easy", "L": "hard"},
    "box_all": {"whisker_low": 0.0, "q1": 0.25, "median": 0.875, "q3": 1.0625, "whisker_high": 1.125,
                "outliers": [3.0, 3.0]},
}
