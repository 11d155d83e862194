"""Sequence manifests, day/night modality and prior-frame windows.

A manifest is a JSON-lines file, one record per image::

    {"path": "cam1/IMG_0001.JPG", "camera": "ABC1", "timestamp": "2020-03-01T12:00:00"}

Relative paths are resolved against the manifest's directory. An optional
``"modality": "day" | "night"`` key overrides the classification policy.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterator, Mapping

import numpy as np
from PIL import Image


DEFAULT_WINDOW = 12
DEFAULT_CHROMA_THRESHOLD = 8.0


class ManifestError(ValueError):
    """A manifest record is malformed or inconsistent."""


class ImageDecodeError(OSError):
    """An image path could not be read or decoded."""

    def __init__(self, path, reason):
        super().__init__(f"cannot decode image {path}: {reason}")
        self.path = Path(path)
        self.reason = reason


class Modality(str, enum.Enum):
    DAY = "day"
    NIGHT = "night"


@dataclass(frozen=True)
class ModalityPolicy:
    """How frames without an explicit modality are labelled.

    ``kind="chroma"`` labels a frame Night when its mean per-pixel channel
    spread is below ``chroma_threshold`` (0-255 scale); infrared frames are
    near-greyscale. ``kind="clock"`` labels Night for wall-clock hours in
    ``[night_start, night_end)`` wrapping midnight.
    """

    kind: str = "chroma"
    chroma_threshold: float = DEFAULT_CHROMA_THRESHOLD
    night_start: int = 18
    night_end: int = 6

    def __post_init__(self):
        if self.kind not in ("chroma", "clock"):
            raise ValueError(f"unknown modality policy {self.kind!r}")


@dataclass(frozen=True)
class Frame:
    path: Path
    camera_id: str
    timestamp: datetime
    modality: Modality
    index: int

    @property
    def utc(self) -> datetime:
        return _to_utc(self.timestamp)


@dataclass(frozen=True)
class SequenceManifest:
    """Frames grouped per camera, each group sorted by timestamp."""

    frames: Mapping[str, tuple[Frame, ...]] = field(default_factory=dict)

    @property
    def cameras(self) -> frozenset[str]:
        return frozenset(self.frames)

    def camera_frames(self, camera_id: str) -> tuple[Frame, ...]:
        return self.frames[camera_id]

    def __iter__(self) -> Iterator[Frame]:
        for cam in sorted(self.frames):
            yield from self.frames[cam]

    def __len__(self) -> int:
        return sum(len(v) for v in self.frames.values())

    def __contains__(self, frame) -> bool:
        seq = self.frames.get(getattr(frame, "camera_id", None), ())
        return 0 <= frame.index < len(seq) and seq[frame.index] == frame


@dataclass(frozen=True)
class PriorWindow:
    """The ``k`` same-camera, same-modality frames preceding a query frame."""

    query: Frame
    members: tuple[Frame, ...]

    @property
    def k(self) -> int:
        return len(self.members)

    def describe(self) -> dict:
        return {
            "k": self.k,
            "modality": self.query.modality.value,
            "indices": [f.index for f in self.members],
            "paths": [str(f.path) for f in self.members],
        }


@dataclass(frozen=True)
class Unavailable:
    """Marker returned when a full prior window cannot be formed."""

    frame: Frame
    reason: str


def load_rgb(path) -> np.ndarray:
    """Decode an image file to an ``H x W x 3`` float64 array on 0-255."""
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    except (OSError, ValueError) as exc:
        raise ImageDecodeError(path, exc) from exc
    if arr.ndim != 3 or arr.shape[2] != 3 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ImageDecodeError(path, f"unexpected shape {arr.shape}")
    return arr


def parse_timestamp(text: str) -> datetime:
    if not isinstance(text, str):
        raise ValueError(f"timestamp must be a string, got {type(text).__name__}")
    s = text.strip()
    if s.endswith(("Z", "z")):
        s = s[:-1] + "+00:00"
    return datetime.fromisoformat(s)


def _to_utc(ts: datetime) -> datetime:
    # naive timestamps are taken to be UTC already
    if ts.tzinfo is None:
        return ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def chroma_spread(image: np.ndarray) -> float:
    """Mean over pixels of ``max(|R-G|, |R-B|, |G-B|)``."""
    img = np.asarray(image, dtype=np.float64)
    r, g, b = img[..., 0], img[..., 1], img[..., 2]
    spread = np.maximum(np.maximum(np.abs(r - g), np.abs(r - b)), np.abs(g - b))
    return float(spread.mean())


def classify_modality(frame, policy: ModalityPolicy = ModalityPolicy(), image=None) -> Modality:
    """Label ``frame`` Day or Night under ``policy``.

    ``frame`` only needs ``path`` and ``timestamp`` attributes. For the chroma
    policy an already-decoded ``image`` may be passed to avoid a second read.
    """
    if policy.kind == "clock":
        ts = getattr(frame, "timestamp", None)
        if ts is None:
            raise ValueError("clock modality policy needs a timestamp")
        h = ts.hour
        if policy.night_start > policy.night_end:
            night = h >= policy.night_start or h < policy.night_end
        else:
            night = policy.night_start <= h < policy.night_end
        return Modality.NIGHT if night else Modality.DAY

    if image is None:
        image = load_rgb(frame.path)
    if chroma_spread(image) < policy.chroma_threshold:
        return Modality.NIGHT
    return Modality.DAY


def _parse_line(line: str, lineno: int, base: Path) -> dict:
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ManifestError(f"line {lineno}: invalid JSON ({exc.msg})") from None
    if not isinstance(rec, dict):
        raise ManifestError(f"line {lineno}: expected a JSON object")
    for key in ("path", "camera", "timestamp"):
        if key not in rec:
            raise ManifestError(f"line {lineno}: missing key {key!r}")
        if not isinstance(rec[key], str) or not rec[key]:
            raise ManifestError(f"line {lineno}: {key!r} must be a non-empty string")
    try:
        ts = parse_timestamp(rec["timestamp"])
    except ValueError as exc:
        raise ManifestError(f"line {lineno}: bad timestamp {rec['timestamp']!r} ({exc})") from None
    modality = rec.get("modality")
    if modality is not None:
        try:
            modality = Modality(str(modality).lower())
        except ValueError:
            raise ManifestError(f"line {lineno}: modality must be 'day' or 'night'") from None
    path = Path(rec["path"])
    if not path.is_absolute():
        path = base / path
    return {"path": path, "camera": rec["camera"], "timestamp": ts,
            "modality": modality, "line": lineno}


def load_manifest(manifest_file, policy: ModalityPolicy = ModalityPolicy()) -> SequenceManifest:
    """Read a JSON-lines manifest and resolve every frame's modality.

    Frames are grouped by camera, time-sorted and indexed ``0..n-1`` per
    camera. Two records sharing ``(camera, timestamp)`` are rejected. Blank
    lines are ignored.
    """
    manifest_file = Path(manifest_file)
    base = manifest_file.parent
    records = []
    with open(manifest_file, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            records.append(_parse_line(line, lineno, base))

    seen: dict[tuple[str, datetime], int] = {}
    for rec in records:
        key = (rec["camera"], _to_utc(rec["timestamp"]))
        if key in seen:
            raise ManifestError(
                f"lines {seen[key]} and {rec['line']}: duplicate timestamp "
                f"{rec['timestamp'].isoformat()} for camera {rec['camera']!r}")
        seen[key] = rec["line"]

    grouped: dict[str, list[dict]] = {}
    for rec in records:
        grouped.setdefault(rec["camera"], []).append(rec)

    frames = {}
    for cam in sorted(grouped):
        recs = sorted(grouped[cam], key=lambda r: _to_utc(r["timestamp"]))
        seq = []
        for i, rec in enumerate(recs):
            modality = rec["modality"]
            if modality is None:
                probe = Frame(rec["path"], cam, rec["timestamp"], Modality.DAY, i)
                modality = classify_modality(probe, policy)
            seq.append(Frame(rec["path"], cam, rec["timestamp"], modality, i))
        frames[cam] = tuple(seq)
    return SequenceManifest(frames)


def write_manifest(frames, path, base=None) -> None:
    """Write frames as manifest records, modality made explicit.

    Paths are written relative to ``base`` (default: the output file's
    directory) when possible, so the file re-ingests to the same frames.
    """
    path = Path(path)
    base = Path(base) if base is not None else path.parent
    with open(path, "w", encoding="utf-8") as fh:
        for f in frames:
            try:
                p = f.path.resolve().relative_to(base.resolve())
            except ValueError:
                p = f.path.resolve()
            rec = {"path": p.as_posix(), "camera": f.camera_id,
                   "timestamp": f.timestamp.isoformat(), "modality": f.modality.value}
            fh.write(json.dumps(rec) + "\n")


def validate_images(manifest: SequenceManifest) -> list[str]:
    """Decode every frame and check per-camera dimensions agree.

    Returns a list of problems; empty when the manifest is fully valid.
    """
    problems = []
    for cam in sorted(manifest.frames):
        dims = None
        for f in manifest.frames[cam]:
            try:
                with Image.open(f.path) as im:
                    im.load()
                    size = im.size
            except OSError as exc:
                problems.append(f"{f.path}: cannot decode ({exc})")
                continue
            if dims is None:
                dims = size
            elif size != dims:
                problems.append(
                    f"{f.path}: size {size[0]}x{size[1]} differs from camera "
                    f"{cam!r} size {dims[0]}x{dims[1]}")
    return problems


def prior_window(manifest: SequenceManifest, frame: Frame, k: int = DEFAULT_WINDOW):
    """Return the ``k`` latest same-modality frames before ``frame``.

    Members come from the same camera, have index strictly below
    ``frame.index`` and are sorted ascending. Returns :class:`Unavailable`
    when fewer than ``k`` qualify.
    """
    if not isinstance(k, (int, np.integer)) or isinstance(k, bool) or k < 1:
        raise ValueError(f"window size must be a positive integer, got {k!r}")
    if frame not in manifest:
        raise ValueError(f"frame {frame.path} is not part of the manifest")
    seq = manifest.frames[frame.camera_id]
    picked = []
    for other in reversed(seq[:frame.index]):
        if other.modality is frame.modality:
            picked.append(other)
            if len(picked) == k:
                return PriorWindow(frame, tuple(reversed(picked)))
    return Unavailable(
        frame, f"only {len(picked)} prior {frame.modality.value} frames, need {k}")
