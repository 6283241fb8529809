"""Skeleton-image representations.

A skeleton sequence becomes a small "image": rows follow a joint ordering,
columns follow time, and the three channels carry the x/y/z coordinates.
The main representation arranges joints along an Euler-tour chain of the
skeleton tree and re-expresses every joint relative to one of four stable
reference joints (shoulders and hips), yielding four images per sequence.
Baseline encodings (flat joint order, tree chain with absolute coordinates,
frame differences, random joint order) share the same normalize/resize
pipeline so they differ only in the arrangement step.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image

from .core import (
    LEFT_HIP,
    LEFT_SHOULDER,
    RIGHT_HIP,
    RIGHT_SHOULDER,
    Body,
    SampleMeta,
    SkeletonSequence,
    SkeletonTopology,
    SkelimgError,
    validate_topology,
)

DEFAULT_WIDTH = 100  # resized frame count; configurable in every builder
PAD_BODY_ID = ""  # body_id used for zero-filled person slots

# Per-reference image tags, in the fixed (a)-(d) order:
# left shoulder, right shoulder, left hip, right hip.
REFERENCE_SUFFIXES = ("a", "b", "c", "d")


@dataclass(frozen=True)
class Chain:
    """A walk over the skeleton tree in which consecutive entries are
    always adjacent joints; depth-first chains revisit a parent after
    each child subtree, so their length is 2*edges + 1."""

    joints: Tuple[int, ...]
    topology: SkeletonTopology

    def __len__(self) -> int:
        return len(self.joints)


@dataclass(frozen=True)
class ReferenceJointSet:
    """The four reference joints used for relative-coordinate images."""

    left_shoulder: int = LEFT_SHOULDER
    right_shoulder: int = RIGHT_SHOULDER
    left_hip: int = LEFT_HIP
    right_hip: int = RIGHT_HIP

    def as_tuple(self) -> Tuple[int, int, int, int]:
        return (self.left_shoulder, self.right_shoulder, self.left_hip, self.right_hip)

    def __post_init__(self):
        if len(set(self.as_tuple())) != 4:
            raise SkelimgError("reference joints must be four distinct joints")


@dataclass(frozen=True)
class SkeletonImage:
    """An H x W x C array in [0, 1] plus provenance."""

    data: np.ndarray  # float32, read-only
    kind: str
    persons: int = 1
    source_meta: SampleMeta = field(default_factory=SampleMeta)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float32)
        if data.ndim != 3:
            raise SkelimgError(f"image data must be H x W x C, got shape {data.shape}")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def shape(self) -> Tuple[int, int, int]:
        return self.data.shape


def depth_first_chain(topology: SkeletonTopology) -> Chain:
    """Euler-tour joint ordering: start at the root, descend children in
    topology order, and record the parent again on every backtrack."""
    problem = validate_topology(topology)
    if problem is not None:
        raise SkelimgError(f"invalid topology: {problem}")

    order: List[int] = []
    # Each stack entry is (joint, index of next child to visit).
    stack: List[List[int]] = [[topology.root, 0]]
    order.append(topology.root)
    while stack:
        joint, next_child = stack[-1]
        children = topology.children(joint)
        if next_child < len(children):
            stack[-1][1] += 1
            child = children[next_child]
            order.append(child)
            stack.append([child, 0])
        else:
            stack.pop()
            if stack:
                order.append(stack[-1][0])
    return Chain(joints=tuple(order), topology=topology)


def identity_order(topology: SkeletonTopology) -> Tuple[int, ...]:
    """Plain 1..joint_count ordering (no tree structure)."""
    return tuple(range(1, topology.joint_count + 1))


def reference_transform(body: Body, joint_order: Sequence[int], ref: int) -> np.ndarray:
    """Positions of `joint_order` relative to the reference joint, (J, 3)."""
    positions = body.joints[np.asarray(joint_order, dtype=np.intp) - 1]
    return positions - body.joints[ref - 1]


def assemble_matrix(
    seq: SkeletonSequence,
    body_slot: int,
    joint_order: Sequence[int],
    ref: Optional[int] = None,
) -> np.ndarray:
    """Stack per-frame joint coordinates into a (J, T, 3) float64 array.

    `body_slot` indexes the frame's body list (0-based); it must exist in
    every frame, which body selection guarantees. When `ref` is given,
    the reference joint's same-frame position is subtracted from every row.
    """
    order = np.asarray(joint_order, dtype=np.intp) - 1
    out = np.empty((len(order), len(seq.frames), 3), dtype=np.float64)
    for t, frame in enumerate(seq.frames):
        if body_slot >= len(frame.bodies):
            raise SkelimgError(
                f"body slot {body_slot} missing in frame {t}; run body selection first"
            )
        joints = frame.bodies[body_slot].joints
        column = joints[order]
        if ref is not None:
            column = column - joints[ref - 1]
        out[:, t, :] = column
    return out


def normalize_minmax(matrix: np.ndarray) -> np.ndarray:
    """Rescale each coordinate channel to [0, 1] over the whole matrix.

    A channel with no spread maps to the midpoint 0.5 (this makes an
    all-zero padded person a uniform neutral image).
    """
    m = np.asarray(matrix, dtype=np.float64)
    if not np.all(np.isfinite(m)):
        raise SkelimgError("cannot normalize non-finite values")
    mins = m.min(axis=(0, 1))
    maxs = m.max(axis=(0, 1))
    out = np.empty_like(m)
    for c in range(m.shape[2]):
        span = maxs[c] - mins[c]
        if span == 0.0:
            out[:, :, c] = 0.5
        else:
            out[:, :, c] = (m[:, :, c] - mins[c]) / span
    return out


def resize_temporal(matrix: np.ndarray, target: int) -> np.ndarray:
    """Linearly interpolate along the time axis to `target` columns.

    Output column k samples source coordinate k*(T-1)/(target-1); a single
    output column uses source coordinate 0, and single-frame inputs are
    replicated. Equal source and target lengths reproduce the input exactly.
    """
    m = np.asarray(matrix, dtype=np.float64)
    frames = m.shape[1]
    if target < 1:
        raise SkelimgError(f"resize target must be >= 1, got {target}")
    if target == 1:
        src = np.zeros(1, dtype=np.float64)
    else:
        src = np.arange(target, dtype=np.float64) * (frames - 1) / (target - 1)
    lo = np.floor(src).astype(np.intp)
    hi = np.minimum(lo + 1, frames - 1)
    w = src - lo
    return (1.0 - w)[None, :, None] * m[:, lo, :] + w[None, :, None] * m[:, hi, :]


def _check_person_slots(seq: SkeletonSequence, persons: int) -> None:
    if persons < 1:
        raise SkelimgError(f"persons must be >= 1, got {persons}")
    for t, frame in enumerate(seq.frames):
        if len(frame.bodies) < persons:
            raise SkelimgError(
                f"frame {t} has {len(frame.bodies)} bodies, need {persons}; "
                "run body selection first"
            )


def _finish_image(
    person_matrices: Iterable[np.ndarray],
    kind: str,
    persons: int,
    meta: SampleMeta,
    width: int,
) -> SkeletonImage:
    # Normalize per person, then resize, then stack persons on channels.
    processed = [
        resize_temporal(normalize_minmax(m), width) for m in person_matrices
    ]
    data = np.concatenate(processed, axis=2).astype(np.float32)
    return SkeletonImage(data=data, kind=kind, persons=persons, source_meta=meta)


def build_tsrji(
    seq: SkeletonSequence,
    refs: ReferenceJointSet = ReferenceJointSet(),
    persons: int = 1,
    topology: Optional[SkeletonTopology] = None,
    width: int = DEFAULT_WIDTH,
) -> Tuple[SkeletonImage, SkeletonImage, SkeletonImage, SkeletonImage]:
    """The tree-chain + reference-joint representation: four images, one
    per reference joint, each (chain length) x width x (3 * persons)."""
    from .core import kinect25_topology

    topology = topology or kinect25_topology()
    _check_person_slots(seq, persons)
    chain = depth_first_chain(topology)
    images = []
    for suffix, ref in zip(REFERENCE_SUFFIXES, refs.as_tuple()):
        mats = [
            assemble_matrix(seq, slot, chain.joints, ref=ref)
            for slot in range(persons)
        ]
        images.append(_finish_image(mats, f"tsrji_{suffix}", persons, seq.meta, width))
    return tuple(images)


def build_refjoints(
    seq: SkeletonSequence,
    refs: ReferenceJointSet = ReferenceJointSet(),
    persons: int = 1,
    topology: Optional[SkeletonTopology] = None,
    width: int = DEFAULT_WIDTH,
) -> Tuple[SkeletonImage, SkeletonImage, SkeletonImage, SkeletonImage]:
    """Reference-joint relative coordinates over the flat 1..J joint order
    (the reference technique without the tree chain)."""
    from .core import kinect25_topology

    topology = topology or kinect25_topology()
    _check_person_slots(seq, persons)
    order = identity_order(topology)
    images = []
    for suffix, ref in zip(REFERENCE_SUFFIXES, refs.as_tuple()):
        mats = [
            assemble_matrix(seq, slot, order, ref=ref) for slot in range(persons)
        ]
        images.append(
            _finish_image(mats, f"refjoints_{suffix}", persons, seq.meta, width)
        )
    return tuple(images)


def build_tssi(
    seq: SkeletonSequence,
    persons: int = 1,
    topology: Optional[SkeletonTopology] = None,
    width: int = DEFAULT_WIDTH,
) -> SkeletonImage:
    """Tree-chain ordering with absolute coordinates."""
    from .core import kinect25_topology

    topology = topology or kinect25_topology()
    _check_person_slots(seq, persons)
    chain = depth_first_chain(topology)
    mats = [assemble_matrix(seq, slot, chain.joints) for slot in range(persons)]
    return _finish_image(mats, "tssi", persons, seq.meta, width)


def build_du(
    seq: SkeletonSequence,
    persons: int = 1,
    topology: Optional[SkeletonTopology] = None,
    width: int = DEFAULT_WIDTH,
) -> SkeletonImage:
    """Flat 1..J joint order with absolute coordinates."""
    from .core import kinect25_topology

    topology = topology or kinect25_topology()
    _check_person_slots(seq, persons)
    order = identity_order(topology)
    mats = [assemble_matrix(seq, slot, order) for slot in range(persons)]
    return _finish_image(mats, "du", persons, seq.meta, width)


def build_motion(
    seq: SkeletonSequence,
    persons: int = 1,
    topology: Optional[SkeletonTopology] = None,
    width: int = DEFAULT_WIDTH,
) -> SkeletonImage:
    """Per-joint forward differences between consecutive frames."""
    from .core import kinect25_topology

    topology = topology or kinect25_topology()
    if len(seq.frames) < 2:
        raise SkelimgError("motion image needs at least 2 frames")
    _check_person_slots(seq, persons)
    order = identity_order(topology)
    mats = []
    for slot in range(persons):
        m = assemble_matrix(seq, slot, order)
        mats.append(m[:, 1:, :] - m[:, :-1, :])
    return _finish_image(mats, "motion", persons, seq.meta, width)


def random_joint_order(topology: SkeletonTopology, seed: int) -> Tuple[int, ...]:
    """Seeded permutation of 1..joint_count."""
    rng = np.random.default_rng(seed)
    return tuple(int(j) for j in rng.permutation(topology.joint_count) + 1)


def build_random_order(
    seq: SkeletonSequence,
    persons: int = 1,
    seed: int = 0,
    topology: Optional[SkeletonTopology] = None,
    width: int = DEFAULT_WIDTH,
) -> SkeletonImage:
    """Seeded random permutation of the joints, absolute coordinates."""
    from .core import kinect25_topology

    topology = topology or kinect25_topology()
    _check_person_slots(seq, persons)
    order = random_joint_order(topology, seed)
    mats = [assemble_matrix(seq, slot, order) for slot in range(persons)]
    return _finish_image(mats, "random", persons, seq.meta, width)


def stack(images: Sequence[SkeletonImage], kind: str = "composite") -> SkeletonImage:
    """Concatenate images along the channel axis (same H and W required)."""
    if not images:
        raise SkelimgError("cannot stack an empty image list")
    h, w, _ = images[0].shape
    for img in images[1:]:
        if img.shape[:2] != (h, w):
            raise SkelimgError(
                f"shape mismatch in stack: {img.shape[:2]} vs {(h, w)}"
            )
    data = np.concatenate([img.data for img in images], axis=2)
    return SkeletonImage(
        data=data,
        kind=kind,
        persons=images[0].persons,
        source_meta=images[0].source_meta,
    )


def quantize_to_image(image: SkeletonImage) -> np.ndarray:
    """Map unit-interval values to 8-bit pixels: round(v * 255)."""
    return np.round(image.data.astype(np.float64) * 255.0).astype(np.uint8)


def encode_pngs(image: SkeletonImage) -> List[Tuple[str, bytes]]:
    """PNG-encode an image: one RGB file for 3-channel images, otherwise
    one grayscale file per channel. Returns (name suffix, bytes) pairs;
    pixel width is the time axis, pixel height the joint axis."""
    pixels = quantize_to_image(image)
    outputs: List[Tuple[str, bytes]] = []
    if pixels.shape[2] == 3:
        buf = io.BytesIO()
        Image.fromarray(pixels, mode="RGB").save(buf, format="PNG")
        outputs.append(("", buf.getvalue()))
    else:
        for c in range(pixels.shape[2]):
            buf = io.BytesIO()
            Image.fromarray(pixels[:, :, c], mode="L").save(buf, format="PNG")
            outputs.append((f"_c{c:02d}", buf.getvalue()))
    return outputs


TENSOR_MAGIC = "skelimg"
TENSOR_VERSION = "v1"


def tensor_bytes(image: SkeletonImage) -> bytes:
    """Serialize: ASCII header `skelimg v1 H W C kind`, then little-endian
    float32 values in row-major (H, W, C) order."""
    h, w, c = image.shape
    header = f"{TENSOR_MAGIC} {TENSOR_VERSION} {h} {w} {c} {image.kind}\n"
    return header.encode("ascii") + image.data.astype("<f4").tobytes(order="C")


def image_from_tensor_bytes(data: bytes, meta: SampleMeta = SampleMeta()) -> SkeletonImage:
    newline = data.find(b"\n")
    if newline < 0:
        raise SkelimgError("corrupt tensor file: missing header line")
    try:
        header = data[:newline].decode("ascii")
    except UnicodeDecodeError as exc:
        raise SkelimgError("corrupt tensor file: non-ASCII header") from exc
    parts = header.split()
    if len(parts) != 6 or parts[0] != TENSOR_MAGIC or parts[1] != TENSOR_VERSION:
        raise SkelimgError(f"corrupt tensor file: bad header {header!r}")
    try:
        h, w, c = int(parts[2]), int(parts[3]), int(parts[4])
    except ValueError as exc:
        raise SkelimgError(f"corrupt tensor file: bad dimensions in {header!r}") from exc
    kind = parts[5]
    payload = data[newline + 1 :]
    expected = h * w * c * 4
    if len(payload) != expected:
        raise SkelimgError(
            f"corrupt tensor file: payload {len(payload)} bytes, expected {expected}"
        )
    values = np.frombuffer(payload, dtype="<f4").reshape(h, w, c)
    return SkeletonImage(data=values, kind=kind, source_meta=meta)


def write_tensor_file(image: SkeletonImage, path) -> None:
    with open(path, "wb") as fh:
        fh.write(tensor_bytes(image))


def read_tensor_file(path, meta: SampleMeta = SampleMeta()) -> SkeletonImage:
    with open(path, "rb") as fh:
        return image_from_tensor_bytes(fh.read(), meta=meta)


# Selector strings accepted by the batch encoder and the command line.
SELECTORS = (
    "du",
    "tssi",
    "refjoints",
    "tsrji-stacked",
    "tsrji-late",
    "tsrji-a",
    "tsrji-b",
    "tsrji-c",
    "tsrji-d",
    "motion",
    "random",
)


def encode_sequence(
    seq: SkeletonSequence,
    selector: str,
    persons: int = 1,
    seed: int = 0,
    topology: Optional[SkeletonTopology] = None,
    width: int = DEFAULT_WIDTH,
) -> List[SkeletonImage]:
    """Build the image(s) a selector names. `tsrji-late` yields the four
    per-reference images; the stacked selectors yield one composite."""
    if selector == "du":
        return [build_du(seq, persons, topology, width)]
    if selector == "tssi":
        return [build_tssi(seq, persons, topology, width)]
    if selector == "motion":
        return [build_motion(seq, persons, topology, width)]
    if selector == "random":
        return [build_random_order(seq, persons, seed, topology, width)]
    if selector == "refjoints":
        images = build_refjoints(seq, ReferenceJointSet(), persons, topology, width)
        return [stack(images, kind="refjoints_stacked")]
    if selector == "tsrji-stacked":
        images = build_tsrji(seq, ReferenceJointSet(), persons, topology, width)
        return [stack(images, kind="tsrji_stacked")]
    if selector == "tsrji-late":
        return list(build_tsrji(seq, ReferenceJointSet(), persons, topology, width))
    if selector.startswith("tsrji-") and selector[-1] in REFERENCE_SUFFIXES:
        idx = REFERENCE_SUFFIXES.index(selector[-1])
        images = build_tsrji(seq, ReferenceJointSet(), persons, topology, width)
        return [images[idx]]
    raise SkelimgError(f"unknown representation selector {selector!r}")
