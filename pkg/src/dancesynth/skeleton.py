"""The 17-joint skeleton convention used throughout the package.

Joint order follows the common 17-keypoint video-lifting convention
(pelvis first, right leg, left leg, torso chain, left arm, right arm).
Poses are stored root-relative: the pelvis sits at the origin of every
frame and global translation is out of scope.
"""

from __future__ import annotations

JOINT_NAMES: tuple[str, ...] = (
    "pelvis",
    "right_hip",
    "right_knee",
    "right_ankle",
    "left_hip",
    "left_knee",
    "left_ankle",
    "spine",
    "thorax",
    "neck",
    "head",
    "left_shoulder",
    "left_elbow",
    "left_wrist",
    "right_shoulder",
    "right_elbow",
    "right_wrist",
)

N_JOINTS = len(JOINT_NAMES)
N_COORDS = 3 * N_JOINTS  # 51 scalar channels per frame

PARENT: dict[str, str | None] = {
    "pelvis": None,
    "right_hip": "pelvis",
    "right_knee": "right_hip",
    "right_ankle": "right_knee",
    "left_hip": "pelvis",
    "left_knee": "left_hip",
    "left_ankle": "left_knee",
    "spine": "pelvis",
    "thorax": "spine",
    "neck": "thorax",
    "head": "neck",
    "left_shoulder": "thorax",
    "left_elbow": "left_shoulder",
    "left_wrist": "left_elbow",
    "right_shoulder": "thorax",
    "right_elbow": "right_shoulder",
    "right_wrist": "right_elbow",
}

BONES: tuple[tuple[int, int], ...] = tuple(
    (JOINT_NAMES.index(parent), JOINT_NAMES.index(child))
    for child, parent in PARENT.items()
    if parent is not None
)

# Interior joints: (incoming bone endpoint, vertex, outgoing bone endpoint).
# The plausibility metrics measure the interior angle at the vertex.
INTERIOR_JOINTS: tuple[tuple[str, str, str], ...] = (
    ("pelvis", "right_hip", "right_knee"),
    ("right_hip", "right_knee", "right_ankle"),
    ("pelvis", "left_hip", "left_knee"),
    ("left_hip", "left_knee", "left_ankle"),
    ("pelvis", "spine", "thorax"),
    ("thorax", "neck", "head"),
    ("thorax", "left_shoulder", "left_elbow"),
    ("left_shoulder", "left_elbow", "left_wrist"),
    ("thorax", "right_shoulder", "right_elbow"),
    ("right_shoulder", "right_elbow", "right_wrist"),
)

INTERIOR_JOINT_NAMES: tuple[str, ...] = tuple(v for _, v, _ in INTERIOR_JOINTS)

INTERIOR_TRIPLES: tuple[tuple[int, int, int], ...] = tuple(
    (JOINT_NAMES.index(a), JOINT_NAMES.index(b), JOINT_NAMES.index(c))
    for a, b, c in INTERIOR_JOINTS
)
