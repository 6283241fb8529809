"""NTU skeleton file and filename ingestion.

The `.skeleton` text layout: first line is the frame count; each frame
starts with a body count; each body contributes one info line (only the
leading body id is kept), a joint-count line, and one line per joint whose
first three fields are the x/y/z coordinates in meters. Trailing fields on
body and joint lines (depth/color projections, orientation, tracking
state) are tolerated and ignored.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .core import (
    Body,
    Frame,
    SampleMeta,
    SkeletonSequence,
    SkeletonTopology,
    SkelimgError,
)
from .representations import PAD_BODY_ID

_NTU_NAME = re.compile(
    r"^S(?P<setup>\d{3})C(?P<camera>\d{3})P(?P<performer>\d{3})"
    r"R(?P<replication>\d{3})A(?P<action>\d{3})(?P<ext>\.[A-Za-z0-9.]+)?$"
)

_FIELD_PATTERNS = (
    ("setup", r"^S\d{3}"),
    ("camera", r"S\d{3}C\d{3}"),
    ("performer", r"S\d{3}C\d{3}P\d{3}"),
    ("replication", r"S\d{3}C\d{3}P\d{3}R\d{3}"),
    ("action", r"S\d{3}C\d{3}P\d{3}R\d{3}A\d{3}"),
)


class MalformedNameError(SkelimgError):
    pass


class SkeletonFileError(SkelimgError):
    """Parse failure in a .skeleton file; carries the 1-based frame index
    when the problem is frame-local."""

    def __init__(self, message: str, frame: Optional[int] = None):
        self.frame = frame
        if frame is not None:
            message = f"{message} (frame {frame})"
        super().__init__(message)


def parse_ntu_filename(name: str) -> SampleMeta:
    """Extract setup/camera/performer/replication/action ids from an
    `SsssCcccPpppRrrrAaaa` style file name."""
    base = name.rsplit("/", 1)[-1]
    match = _NTU_NAME.match(base)
    if match is None:
        # Name the first field that fails to parse.
        for field_name, pattern in _FIELD_PATTERNS:
            if re.match(pattern, base) is None:
                raise MalformedNameError(
                    f"malformed skeleton name {name!r}: missing {field_name} field"
                )
        raise MalformedNameError(f"malformed skeleton name {name!r}")
    stem = base[: base.index(".")] if "." in base else base
    return SampleMeta(
        setup_id=int(match.group("setup")),
        camera_id=int(match.group("camera")),
        performer_id=int(match.group("performer")),
        replication_id=int(match.group("replication")),
        action_id=int(match.group("action")),
        source_name=stem,
    )


def parse_skeleton_file(
    content: str,
    topology: SkeletonTopology,
    meta: SampleMeta = SampleMeta(),
) -> SkeletonSequence:
    """Parse NTU .skeleton text into a sequence over the given topology."""
    lines = content.splitlines()
    cursor = 0

    def next_line(frame: Optional[int]) -> str:
        nonlocal cursor
        while cursor < len(lines):
            line = lines[cursor].strip()
            cursor += 1
            if line:
                return line
        raise SkeletonFileError("truncated file: ran out of lines", frame=frame)

    def read_int(what: str, frame: Optional[int]) -> int:
        token = next_line(frame)
        try:
            return int(token)
        except ValueError:
            raise SkeletonFileError(
                f"non-numeric field: expected {what}, got {token!r}", frame=frame
            ) from None

    frame_count = read_int("frame count", None)
    if frame_count < 1:
        raise SkeletonFileError(f"frame count must be >= 1, got {frame_count}")

    frames: List[Frame] = []
    for t in range(frame_count):
        frame_no = t + 1
        body_count = read_int("body count", frame_no)
        bodies: List[Body] = []
        for _ in range(body_count):
            info = next_line(frame_no).split()
            body_id = info[0]
            joint_count = read_int("joint count", frame_no)
            if joint_count != topology.joint_count:
                raise SkeletonFileError(
                    f"joint-count mismatch: file says {joint_count}, "
                    f"topology has {topology.joint_count}",
                    frame=frame_no,
                )
            joints = np.empty((joint_count, 3), dtype=np.float64)
            for j in range(joint_count):
                fields = next_line(frame_no).split()
                if len(fields) < 3:
                    raise SkeletonFileError(
                        f"joint line has {len(fields)} fields, need at least 3",
                        frame=frame_no,
                    )
                try:
                    joints[j] = [float(fields[0]), float(fields[1]), float(fields[2])]
                except ValueError:
                    raise SkeletonFileError(
                        f"non-numeric field in joint line: {fields[:3]!r}",
                        frame=frame_no,
                    ) from None
            bodies.append(Body(body_id=body_id, joints=joints))
        frames.append(Frame(bodies=tuple(bodies), timestamp_index=t))
    return SkeletonSequence(frames=tuple(frames), meta=meta)


def _body_sort_key(body_id: str):
    # Numeric ids compare numerically ("9" before "10"); otherwise fall
    # back to the string itself.
    try:
        return (0, int(body_id), body_id)
    except ValueError:
        return (1, 0, body_id)


def select_bodies(seq: SkeletonSequence, max_bodies: int) -> SkeletonSequence:
    """Pick the `max_bodies` most plausible people and pin them to fixed
    slots in every frame.

    Ranking: longest presence across frames, then highest total motion
    energy (sum of squared frame-to-frame joint displacements), then the
    smaller body id. Frames where a selected body is absent get an
    all-zero placeholder body, and slots with no body at all are
    zero-filled, so every output frame has exactly `max_bodies` bodies.
    """
    if max_bodies < 1:
        raise SkelimgError(f"max_bodies must be >= 1, got {max_bodies}")
    if not seq.frames:
        raise SkelimgError("cannot select bodies from an empty sequence")

    joint_count = None
    presence: dict = {}
    positions: dict = {}
    for t, frame in enumerate(seq.frames):
        for body in frame.bodies:
            if body.body_id == PAD_BODY_ID:
                continue  # placeholder from a previous selection pass
            if joint_count is None:
                joint_count = body.joints.shape[0]
            presence.setdefault(body.body_id, []).append(t)
            positions[(body.body_id, t)] = body.joints

    if joint_count is None:
        raise SkelimgError("sequence contains no bodies to select")

    def motion_energy(body_id: str) -> float:
        frames_present = presence[body_id]
        total = 0.0
        for prev, cur in zip(frames_present, frames_present[1:]):
            if cur == prev + 1:
                delta = positions[(body_id, cur)] - positions[(body_id, prev)]
                total += float(np.sum(delta * delta))
        return total

    ranked = sorted(
        presence,
        key=lambda b: (-len(presence[b]), -motion_energy(b), _body_sort_key(b)),
    )
    selected = ranked[:max_bodies]

    zero = np.zeros((joint_count, 3), dtype=np.float64)
    new_frames = []
    for t, frame in enumerate(seq.frames):
        by_id = {b.body_id: b for b in frame.bodies if b.body_id != PAD_BODY_ID}
        slots = []
        for body_id in selected:
            body = by_id.get(body_id)
            if body is None:
                body = Body(body_id=PAD_BODY_ID, joints=zero)
            slots.append(body)
        while len(slots) < max_bodies:
            slots.append(Body(body_id=PAD_BODY_ID, joints=zero))
        new_frames.append(Frame(bodies=tuple(slots), timestamp_index=frame.timestamp_index))
    return SkeletonSequence(frames=tuple(new_frames), meta=seq.meta)


@dataclass(frozen=True)
class IndexEntry:
    meta: SampleMeta
    path: str


@dataclass(frozen=True)
class DatasetIndex:
    entries: Tuple[IndexEntry, ...]
    dataset_kind: str  # ntu60 | ntu120 | synthetic

    def __len__(self) -> int:
        return len(self.entries)


_ACTION_LIMITS = {"ntu60": 60, "ntu120": 120}


def build_index(
    root_listing: Iterable[str], kind: str = "synthetic"
) -> Tuple[DatasetIndex, List[Tuple[str, str]]]:
    """Index all parseable names; return (index, skipped) where skipped
    holds (name, reason) pairs. Duplicate source names are an error."""
    if kind not in ("ntu60", "ntu120", "synthetic"):
        raise SkelimgError(f"unknown dataset kind {kind!r}")
    limit = _ACTION_LIMITS.get(kind)
    entries = {}
    skipped: List[Tuple[str, str]] = []
    for path in root_listing:
        try:
            meta = parse_ntu_filename(path)
        except MalformedNameError as exc:
            skipped.append((path, str(exc)))
            continue
        if limit is not None and meta.action_id > limit:
            skipped.append((path, f"action {meta.action_id} out of range for {kind}"))
            continue
        if meta.source_name in entries:
            raise SkelimgError(f"duplicate source name {meta.source_name!r}")
        entries[meta.source_name] = IndexEntry(meta=meta, path=path)
    ordered = tuple(entries[name] for name in sorted(entries))
    return DatasetIndex(entries=ordered, dataset_kind=kind), skipped


def index_csv(index: DatasetIndex) -> str:
    """One line per entry: source_name,setup,camera,performer,replication,action."""
    lines = ["source_name,setup,camera,performer,replication,action"]
    for entry in index.entries:
        m = entry.meta
        lines.append(
            f"{m.source_name},{m.setup_id},{m.camera_id},{m.performer_id},"
            f"{m.replication_id},{m.action_id}"
        )
    return "\n".join(lines) + "\n"
