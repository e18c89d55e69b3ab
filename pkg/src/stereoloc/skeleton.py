"""COCO-17 joint layout and a canonical upright planar person.

Offsets are ``(dx, dy)`` in fractions of body height relative to the
mid-hip point, y pointing down, for a person facing the camera (so the
person's left side lies at positive x).
"""

import numpy as np

JOINT_NAMES = (
    "nose", "left_eye", "right_eye", "left_ear", "right_ear",
    "left_shoulder", "right_shoulder", "left_elbow", "right_elbow",
    "left_wrist", "right_wrist", "left_hip", "right_hip",
    "left_knee", "right_knee", "left_ankle", "right_ankle",
)
NUM_JOINTS = len(JOINT_NAMES)
JOINT_INDEX = {name: i for i, name in enumerate(JOINT_NAMES)}

HEAD_JOINTS = tuple(JOINT_INDEX[n] for n in ("nose", "left_eye", "right_eye", "left_ear", "right_ear"))
ANKLE_JOINTS = (JOINT_INDEX["left_ankle"], JOINT_INDEX["right_ankle"])
HIP_JOINTS = (JOINT_INDEX["left_hip"], JOINT_INDEX["right_hip"])

# index of the mirrored counterpart of every joint
FLIP_PERMUTATION = tuple(
    JOINT_INDEX[n.replace("left_", "@").replace("right_", "left_").replace("@", "right_")]
    for n in JOINT_NAMES
)

# eyes at -0.52 and ankles at +0.48: head-to-ankle extent is exactly 1
TEMPLATE_OFFSETS = np.array([
    [0.000, -0.500],   # nose
    [0.015, -0.520],   # left_eye
    [-0.015, -0.520],  # right_eye
    [0.040, -0.510],   # left_ear
    [-0.040, -0.510],  # right_ear
    [0.120, -0.330],   # left_shoulder
    [-0.120, -0.330],  # right_shoulder
    [0.150, -0.180],   # left_elbow
    [-0.150, -0.180],  # right_elbow
    [0.160, -0.040],   # left_wrist
    [-0.160, -0.040],  # right_wrist
    [0.070, 0.000],    # left_hip
    [-0.070, 0.000],   # right_hip
    [0.070, 0.240],    # left_knee
    [-0.070, 0.240],   # right_knee
    [0.070, 0.480],    # left_ankle
    [-0.070, 0.480],   # right_ankle
])

# joints whose horizontal offset is perturbed per person (limb swing)
_JITTER_JOINTS = np.array([JOINT_INDEX[n] for n in (
    "left_elbow", "right_elbow", "left_wrist", "right_wrist",
    "left_knee", "right_knee", "left_ankle", "right_ankle")])


def vertical_extent(offsets=TEMPLATE_OFFSETS):
    return offsets[list(ANKLE_JOINTS), 1].max() - offsets[list(HEAD_JOINTS), 1].min()


def posed_offsets(rng=None, jitter=0.0):
    """Template offsets with horizontal limb jitter of std ``jitter``.

    Only x-offsets move, so the head-to-ankle extent stays exactly 1.
    """
    offsets = TEMPLATE_OFFSETS.copy()
    if rng is not None and jitter > 0:
        offsets[_JITTER_JOINTS, 0] += rng.normal(0.0, jitter, len(_JITTER_JOINTS))
    return offsets


class KeypointSet:
    """2D joints of one person in one image.

    ``uv`` holds pixel coordinates (J, 2); ``visible`` is a boolean mask.
    Invisible joints are stored as (0, 0).
    """

    __slots__ = ("uv", "visible", "eye")

    def __init__(self, uv, visible=None, eye="left"):
        uv = np.array(uv, dtype=float).reshape(NUM_JOINTS, 2)
        if visible is None:
            visible = np.ones(NUM_JOINTS, dtype=bool)
        visible = np.array(visible, dtype=bool).reshape(NUM_JOINTS)
        uv[~visible] = 0.0
        self.uv = uv
        self.visible = visible
        self.eye = eye

    def normalized(self, rig):
        """Normalized image coordinates, (0, 0) at invisible joints."""
        u0, v0 = rig.principal_point
        out = np.zeros((NUM_JOINTS, 2))
        vis = self.visible
        out[vis, 0] = (self.uv[vis, 0] - u0) / rig.focal_px
        out[vis, 1] = (self.uv[vis, 1] - v0) / rig.focal_px
        return out

    def bbox(self):
        """(u_min, v_min, u_max, v_max) over visible joints, or None."""
        if not self.visible.any():
            return None
        pts = self.uv[self.visible]
        return (float(pts[:, 0].min()), float(pts[:, 1].min()),
                float(pts[:, 0].max()), float(pts[:, 1].max()))

    def bbox_height(self):
        box = self.bbox()
        return 0.0 if box is None else box[3] - box[1]

    def to_dict(self):
        return {"uv": self.uv.tolist(), "vis": self.visible.astype(int).tolist()}

    @classmethod
    def from_dict(cls, d, eye="left"):
        return cls(d["uv"], d["vis"], eye)

    def __repr__(self):
        return f"KeypointSet(eye={self.eye!r}, visible={int(self.visible.sum())}/{NUM_JOINTS})"
