"""Core domain types: joint topologies, bodies, frames, and sequences.

Joints are numbered 1-based throughout, matching the Kinect-v2 convention
used by the NTU skeleton files. Any 0-based indexing is an internal detail
of the array code and never leaks through the public surface.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional, Sequence, Tuple

import numpy as np


class SkelimgError(Exception):
    """Base class for all errors raised by this package."""


@dataclass(frozen=True)
class SampleMeta:
    """Capture metadata for one skeleton sample.

    Ids are >= 1 for data parsed from NTU-style filenames; 0 means
    "unknown" and is only used for synthetic or hand-built sequences.
    """

    setup_id: int = 0
    camera_id: int = 0
    performer_id: int = 0
    replication_id: int = 0
    action_id: int = 0
    source_name: str = ""


@dataclass(frozen=True)
class SkeletonTopology:
    """A rooted tree over 1-based joint ids with ordered children.

    The child order is part of the value: it determines the depth-first
    chain, so two topologies with equal edge sets but different edge order
    are distinct.
    """

    joint_count: int
    edges: Tuple[Tuple[int, int], ...]  # (parent, child) in child order
    root: int

    def children(self, joint: int) -> Tuple[int, ...]:
        return self._child_map.get(joint, ())

    @property
    def _child_map(self) -> dict:
        # Derived lazily and cached on the instance; the dataclass is frozen
        # so we stash via object.__setattr__.
        cached = self.__dict__.get("_children")
        if cached is None:
            cached = {}
            for parent, child in self.edges:
                cached.setdefault(parent, []).append(child)
            cached = {k: tuple(v) for k, v in cached.items()}
            object.__setattr__(self, "_children", cached)
        return cached


@dataclass(frozen=True)
class Body:
    """One tracked person in one frame: an id plus joint_count 3D points."""

    body_id: str
    joints: np.ndarray  # (joint_count, 3) float64, read-only

    def __post_init__(self):
        joints = np.asarray(self.joints, dtype=np.float64)
        if joints.ndim != 2 or joints.shape[1] != 3:
            raise SkelimgError(f"body joints must be (J, 3), got {joints.shape}")
        if not np.all(np.isfinite(joints)):
            raise SkelimgError("body joints contain non-finite coordinates")
        joints.setflags(write=False)
        object.__setattr__(self, "joints", joints)


@dataclass(frozen=True)
class Frame:
    bodies: Tuple[Body, ...]
    timestamp_index: int = 0


@dataclass(frozen=True)
class SkeletonSequence:
    frames: Tuple[Frame, ...]
    meta: SampleMeta = field(default_factory=SampleMeta)

    def __post_init__(self):
        if len(self.frames) < 1:
            raise SkelimgError("sequence must contain at least one frame")

    @property
    def frame_count(self) -> int:
        return len(self.frames)


# Kinect-v2 joint numbering (1-based), as used in NTU skeleton files.
SPINE_BASE = 1
SPINE_MID = 2
NECK = 3
HEAD = 4
LEFT_SHOULDER = 5
LEFT_ELBOW = 6
LEFT_WRIST = 7
LEFT_HAND = 8
RIGHT_SHOULDER = 9
RIGHT_ELBOW = 10
RIGHT_WRIST = 11
RIGHT_HAND = 12
LEFT_HIP = 13
LEFT_KNEE = 14
LEFT_ANKLE = 15
LEFT_FOOT = 16
RIGHT_HIP = 17
RIGHT_KNEE = 18
RIGHT_ANKLE = 19
RIGHT_FOOT = 20
SPINE_SHOULDER = 21
LEFT_HAND_TIP = 22
LEFT_THUMB = 23
RIGHT_HAND_TIP = 24
RIGHT_THUMB = 25

KINECT25_JOINT_COUNT = 25

# Edge list in depth-first child order. The order is load-bearing: the
# depth-first chain over this tree must reproduce the published traversal
# (spine-shoulder subtree first with neck, left arm, right arm; then the
# lower body with left leg before right leg; thumbs hang off the hand tips).
_KINECT25_EDGES: Tuple[Tuple[int, int], ...] = (
    (SPINE_MID, SPINE_SHOULDER),
    (SPINE_SHOULDER, NECK),
    (NECK, HEAD),
    (SPINE_SHOULDER, LEFT_SHOULDER),
    (LEFT_SHOULDER, LEFT_ELBOW),
    (LEFT_ELBOW, LEFT_WRIST),
    (LEFT_WRIST, LEFT_HAND),
    (LEFT_HAND, LEFT_HAND_TIP),
    (LEFT_HAND_TIP, LEFT_THUMB),
    (SPINE_SHOULDER, RIGHT_SHOULDER),
    (RIGHT_SHOULDER, RIGHT_ELBOW),
    (RIGHT_ELBOW, RIGHT_WRIST),
    (RIGHT_WRIST, RIGHT_HAND),
    (RIGHT_HAND, RIGHT_HAND_TIP),
    (RIGHT_HAND_TIP, RIGHT_THUMB),
    (SPINE_MID, SPINE_BASE),
    (SPINE_BASE, LEFT_HIP),
    (LEFT_HIP, LEFT_KNEE),
    (LEFT_KNEE, LEFT_ANKLE),
    (LEFT_ANKLE, LEFT_FOOT),
    (SPINE_BASE, RIGHT_HIP),
    (RIGHT_HIP, RIGHT_KNEE),
    (RIGHT_KNEE, RIGHT_ANKLE),
    (RIGHT_ANKLE, RIGHT_FOOT),
)


@lru_cache(maxsize=1)
def kinect25_topology() -> SkeletonTopology:
    """The 25-joint Kinect-v2 skeleton tree rooted at the mid spine."""
    return SkeletonTopology(
        joint_count=KINECT25_JOINT_COUNT,
        edges=_KINECT25_EDGES,
        root=SPINE_MID,
    )


def validate_topology(topology: SkeletonTopology) -> Optional[str]:
    """Check the tree invariants; return None if ok, else a description
    of the first violation found (never raises on bad structure)."""
    n = topology.joint_count
    if n < 1:
        return f"bad joint count {n}"
    if not 1 <= topology.root <= n:
        return f"bad joint id {topology.root} (root)"
    for parent, child in topology.edges:
        for j in (parent, child):
            if not 1 <= j <= n:
                return f"bad joint id {j}"

    visited = set()
    stack = [topology.root]
    while stack:
        joint = stack.pop()
        if joint in visited:
            return f"cycle found: joint {joint} reached twice"
        visited.add(joint)
        stack.extend(reversed(topology.children(joint)))

    for j in range(1, n + 1):
        if j not in visited:
            return f"disconnected joint {j}"

    if len(topology.edges) != n - 1:
        return f"edge count {len(topology.edges)} != joint count - 1"
    return None


def make_sequence(
    frames_joints: Sequence[np.ndarray],
    meta: SampleMeta = SampleMeta(),
    body_id: str = "b0",
) -> SkeletonSequence:
    """Convenience constructor: one body per frame from (J, 3) arrays."""
    frames = tuple(
        Frame(bodies=(Body(body_id=body_id, joints=j),), timestamp_index=t)
        for t, j in enumerate(frames_joints)
    )
    return SkeletonSequence(frames=frames, meta=meta)
