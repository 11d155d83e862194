"""Camera-level stratified train/val/test partitioning.

Object sizes are grouped into small/medium/large by k-medoids (PAM) over
normalised box areas. Each candidate 3-way camera partition is scored by
the summed across-subset population variance of

* objects per image, per class;
* objects per image, per class and size category;
* the fraction of each class's objects seen in daytime frames;

and the feasible partition with the smallest score wins.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .ingest import Frame, Modality, SequenceManifest

SIZE_LABELS = ("small", "medium", "large")
SUBSET_NAMES = ("train", "val", "test")
DEFAULT_MAX_EVAL_FRACTION = 0.25
LARGE_SEARCH_WARNING = 16


class AnnotationError(ValueError):
    pass


class InfeasiblePartition(ValueError):
    """No camera partition satisfies the requested constraints."""


@dataclass(frozen=True)
class ClassSet:
    names: tuple[str, ...]

    def __post_init__(self):
        names = tuple(self.names)
        if not names:
            raise ValueError("class set must not be empty")
        if len(set(names)) != len(names):
            raise ValueError(f"class names must be unique: {names}")
        object.__setattr__(self, "names", names)

    def __len__(self) -> int:
        return len(self.names)

    @classmethod
    def parse(cls, text: str) -> "ClassSet":
        return cls(tuple(s.strip() for s in text.split(",") if s.strip()))


@dataclass(frozen=True)
class AnnotationRecord:
    frame: Frame
    class_id: int
    cx: float
    cy: float
    w: float
    h: float

    @property
    def area(self) -> float:
        return self.w * self.h


# --- annotation parsing ----------------------------------------------------

def _label_path(label_dir: Path, frame: Frame) -> Path | None:
    for cand in (label_dir / frame.camera_id / (frame.path.stem + ".txt"),
                 label_dir / (frame.path.stem + ".txt")):
        if cand.is_file():
            return cand
    return None


def _read_index(index_file) -> set[str]:
    entries = set()
    for line in Path(index_file).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            entries.add(line)
    return entries


def _in_index(frame: Frame, entries: set[str]) -> bool:
    return (str(frame.path) in entries or frame.path.name in entries
            or frame.path.stem in entries
            or f"{frame.camera_id}/{frame.path.name}" in entries)


def _check_flat_collisions(label_dir: Path, manifest: SequenceManifest):
    owners: dict[str, str] = {}
    for f in manifest:
        if (label_dir / f.camera_id / (f.path.stem + ".txt")).is_file():
            continue
        if not (label_dir / (f.path.stem + ".txt")).is_file():
            continue
        prev = owners.setdefault(f.path.stem, f.camera_id)
        if prev != f.camera_id:
            raise AnnotationError(
                f"label file {f.path.stem}.txt is ambiguous between cameras "
                f"{prev!r} and {f.camera_id!r}; use per-camera label subdirectories")


def labelled_frames(label_dir, manifest: SequenceManifest, index_file=None) -> list[Frame]:
    """Frames counted as labelled: those with a label file, plus any frame
    named in ``index_file`` (one path, file name or stem per line)."""
    label_dir = Path(label_dir)
    entries = _read_index(index_file) if index_file else set()
    return [f for f in manifest
            if _label_path(label_dir, f) is not None or (entries and _in_index(f, entries))]


def parse_label_file(path, frame: Frame, n_classes: int) -> list[AnnotationRecord]:
    """Parse ``class_id cx cy w h`` lines (normalised coordinates)."""
    records = []
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        parts = line.split()
        if not parts:
            continue
        where = f"{path}:{lineno}"
        if len(parts) != 5:
            raise AnnotationError(f"{where}: expected 5 fields, got {len(parts)}")
        try:
            cls_f = float(parts[0])
            cx, cy, w, h = (float(v) for v in parts[1:])
        except ValueError:
            raise AnnotationError(f"{where}: non-numeric field") from None
        if not cls_f.is_integer() or not 0 <= cls_f < n_classes:
            raise AnnotationError(f"{where}: class id {parts[0]} out of range 0..{n_classes - 1}")
        vals = (cx, cy, w, h)
        if not all(math.isfinite(v) and 0.0 <= v <= 1.0 for v in vals):
            raise AnnotationError(f"{where}: coordinates must lie in [0, 1]")
        if w * h <= 0:
            raise AnnotationError(f"{where}: box has zero area")
        records.append(AnnotationRecord(frame, int(cls_f), cx, cy, w, h))
    return records


def parse_annotations(label_dir, manifest: SequenceManifest, classes: ClassSet) -> list[AnnotationRecord]:
    """Read YOLO-style label files for every manifest frame that has one.

    Label files are looked up as ``<label_dir>/<camera>/<stem>.txt`` first,
    then ``<label_dir>/<stem>.txt``.
    """
    label_dir = Path(label_dir)
    _check_flat_collisions(label_dir, manifest)
    records = []
    for f in manifest:
        p = _label_path(label_dir, f)
        if p is not None:
            records.extend(parse_label_file(p, f, len(classes)))
    return records


# --- k-medoids ------------------------------------------------------------

@dataclass(frozen=True)
class SizeClusters:
    medoids: tuple[float, ...]
    cost: float = float("nan")
    build_cost: float = float("nan")

    @property
    def labels(self) -> tuple[str, ...]:
        if len(self.medoids) == 3:
            return SIZE_LABELS
        return tuple(f"size{i}" for i in range(len(self.medoids)))


def _candidate_costs(x: np.ndarray, nearest: np.ndarray, chunk: int) -> np.ndarray:
    """Total cost if each point were added as a medoid, given current nearest distances."""
    out = np.empty(x.size)
    for s in range(0, x.size, chunk):
        cand = x[s:s + chunk]
        out[s:s + chunk] = np.minimum(nearest[None, :], np.abs(cand[:, None] - x[None, :])).sum(axis=1)
    return out


def kmedoids_pam(areas: Sequence[float], k: int = 3, max_iter: int = 1000,
                 chunk: int = 256) -> SizeClusters:
    """Partitioning Around Medoids on 1-D data with absolute distance.

    BUILD greedily adds the point that lowers total cost most; SWAP then
    applies the single best (medoid, non-medoid) exchange while it strictly
    lowers the cost. Costs equal up to rounding (relative 1e-12) count as
    ties, which go to the lowest data index (candidate first, then the
    medoid being replaced), so results are deterministic.
    """
    x = np.asarray(areas, dtype=np.float64).ravel()
    n = x.size
    if k < 1:
        raise ValueError("k must be >= 1")
    n_distinct = np.unique(x).size
    if n_distinct < k:
        raise ValueError(f"need at least {k} distinct values, got {n_distinct}")
    tol = 1e-12 * max(float(np.abs(x - np.median(x)).sum()), np.finfo(float).tiny)

    # BUILD
    medoids: list[int] = []
    is_med = np.zeros(n, dtype=bool)
    nearest = np.full(n, math.inf)
    for _ in range(k):
        costs = _candidate_costs(x, nearest, chunk)
        costs[is_med] = math.inf
        i = int(np.flatnonzero(costs <= costs.min() + tol)[0])
        medoids.append(i)
        is_med[i] = True
        nearest = np.minimum(nearest, np.abs(x - x[i]))
    cost = float(nearest.sum())
    build_cost = cost

    # SWAP
    for _ in range(max_iter):
        dist = np.abs(x[None, :] - x[np.array(medoids)][:, None])   # (k, n)
        table = np.empty((k, n))
        for slot in range(k):
            others = np.delete(dist, slot, axis=0)
            rest = others.min(axis=0) if others.size else np.full(n, math.inf)
            table[slot] = _candidate_costs(x, rest, chunk)
        table[:, is_med] = math.inf
        best = table.min()
        if not best < cost - tol:
            break
        slots, cands = np.nonzero(table <= best + tol)
        i, _, slot = min((int(c), medoids[s], int(s)) for s, c in zip(slots, cands))
        is_med[medoids[slot]] = False
        medoids[slot] = i
        is_med[i] = True
        cost = float(np.abs(x[None, :] - x[np.array(medoids)][:, None]).min(axis=0).sum())

    return SizeClusters(tuple(sorted(float(x[m]) for m in medoids)), cost, build_cost)


def medoid_cost(areas, medoids) -> float:
    x = np.asarray(areas, dtype=np.float64)
    m = np.asarray(medoids, dtype=np.float64)
    return float(np.abs(x[:, None] - m[None, :]).min(axis=1).sum())


def assign_size(record_or_area, clusters: SizeClusters) -> int:
    """Index of the nearest medoid; equidistant areas go to the smaller one."""
    area = getattr(record_or_area, "area", record_or_area)
    d = [abs(area - m) for m in clusters.medoids]
    return int(np.argmin(d))


# --- per-camera statistics -------------------------------------------------

@dataclass
class CameraProfile:
    """Raw annotation counts for one camera; means are derived."""

    camera_id: str
    image_count: int
    day_images: int
    night_images: int
    class_counts: np.ndarray        # (M,)
    size_counts: np.ndarray         # (M, P)
    day_counts: np.ndarray          # (M,) objects seen in day frames
    night_counts: np.ndarray        # (M,)

    @property
    def class_means(self) -> np.ndarray:
        return self.class_counts / self.image_count

    @property
    def size_means(self) -> np.ndarray:
        return self.size_counts / self.image_count

    @property
    def day_ratio(self) -> list[float | None]:
        """Day fraction per class; ``None`` where the class never occurs."""
        out = []
        for d, nt in zip(self.day_counts, self.night_counts):
            out.append(None if d + nt == 0 else float(d / (d + nt)))
        return out

    def scaled(self, factor: int) -> "CameraProfile":
        return CameraProfile(self.camera_id, self.image_count * factor,
                             self.day_images * factor, self.night_images * factor,
                             self.class_counts * factor, self.size_counts * factor,
                             self.day_counts * factor, self.night_counts * factor)


def camera_profile(camera_id: str, records: Sequence[AnnotationRecord],
                   frames: Sequence[Frame], clusters: SizeClusters,
                   classes: ClassSet) -> CameraProfile:
    """Aggregate annotation counts for ``camera_id``.

    ``frames`` are the labelled frames (any camera; filtered here) and
    ``records`` the annotations (filtered likewise).
    """
    cam_frames = [f for f in frames if f.camera_id == camera_id]
    if not cam_frames:
        raise ValueError(f"camera {camera_id!r} has no labelled images")
    m, p = len(classes), len(clusters.medoids)
    class_counts = np.zeros(m)
    size_counts = np.zeros((m, p))
    day_counts = np.zeros(m)
    night_counts = np.zeros(m)
    labelled = set(cam_frames)
    for r in records:
        if r.frame.camera_id != camera_id:
            continue
        if r.frame not in labelled:
            raise ValueError(f"annotation for {r.frame.path} whose frame is not labelled")
        class_counts[r.class_id] += 1
        size_counts[r.class_id, assign_size(r, clusters)] += 1
        if r.frame.modality is Modality.DAY:
            day_counts[r.class_id] += 1
        else:
            night_counts[r.class_id] += 1
    day_images = sum(1 for f in cam_frames if f.modality is Modality.DAY)
    return CameraProfile(camera_id, len(cam_frames), day_images, len(cam_frames) - day_images,
                         class_counts, size_counts, day_counts, night_counts)


def build_profiles(records, frames, clusters, classes) -> dict[str, CameraProfile]:
    cams = sorted({f.camera_id for f in frames})
    return {c: camera_profile(c, records, frames, clusters, classes) for c in cams}


# --- objective -------------------------------------------------------------

@dataclass(frozen=True)
class SubsetStats:
    cameras: tuple[str, ...]
    image_count: int
    day_images: int
    night_images: int
    class_means: np.ndarray          # (M,) objects per image
    size_means: np.ndarray           # (M, P) objects per image
    day_ratio: np.ndarray            # (M,) day fraction, nan where undefined

    def to_dict(self, classes: ClassSet, size_labels: Sequence[str]) -> dict:
        return {
            "cameras": list(self.cameras),
            "images": self.image_count,
            "day_images": self.day_images,
            "night_images": self.night_images,
            "class_distribution": {c: float(v) for c, v in zip(classes.names, self.class_means)},
            "size_distribution": {
                c: {s: float(v) for s, v in zip(size_labels, row)}
                for c, row in zip(classes.names, self.size_means)},
            "day_ratio": {c: (None if math.isnan(v) else float(v))
                          for c, v in zip(classes.names, self.day_ratio)},
        }


def subset_stats(profiles: Sequence[CameraProfile]) -> SubsetStats:
    """Pool counts over a subset's cameras and normalise per image."""
    if not profiles:
        raise ValueError("empty subset")
    images = sum(p.image_count for p in profiles)
    cls = sum(p.class_counts for p in profiles)
    size = sum(p.size_counts for p in profiles)
    day = sum(p.day_counts for p in profiles)
    night = sum(p.night_counts for p in profiles)
    tot = day + night
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(tot > 0, day / np.where(tot > 0, tot, 1), np.nan)
    return SubsetStats(tuple(sorted(p.camera_id for p in profiles)), images,
                       sum(p.day_images for p in profiles),
                       sum(p.night_images for p in profiles),
                       cls / images, size / images, ratio)


@dataclass(frozen=True)
class VarianceTerms:
    class_var: float
    size_var: float
    ratio_var: float

    def total(self, weights=(1.0, 1.0, 1.0)) -> float:
        return (weights[0] * self.class_var + weights[1] * self.size_var
                + weights[2] * self.ratio_var)


def _ratio_variance(ratios: np.ndarray) -> float:
    total = 0.0
    for col in ratios.T:
        vals = col[~np.isnan(col)]
        if vals.size >= 2:
            total += float(np.var(vals))
    return total


def variance_terms(subsets: Sequence[Sequence[CameraProfile]]) -> VarianceTerms:
    """Across-subset population variances, summed over classes (and sizes)."""
    if len(subsets) != 3:
        raise ValueError(f"expected 3 subsets, got {len(subsets)}")
    stats = [subset_stats(s) for s in subsets]
    return _terms_from_stats(stats)


def _terms_from_stats(stats: Sequence[SubsetStats]) -> VarianceTerms:
    cm = np.stack([s.class_means for s in stats])
    sm = np.stack([s.size_means for s in stats])
    rt = np.stack([s.day_ratio for s in stats])
    return VarianceTerms(float(np.var(cm, axis=0).sum()),
                         float(np.var(sm, axis=0).sum()),
                         _ratio_variance(rt))


# --- search ----------------------------------------------------------------

@dataclass
class PartitionSpec:
    subsets: tuple[tuple[str, ...], tuple[str, ...], tuple[str, ...]]
    objective: float
    terms: VarianceTerms
    stats: tuple[SubsetStats, SubsetStats, SubsetStats]
    evaluated: int = 0
    feasible: int = 0
    constraints: dict = field(default_factory=dict)

    def __post_init__(self):
        flat = [c for s in self.subsets for c in s]
        if len(flat) != len(set(flat)):
            raise ValueError("partition subsets overlap")


def _normalise_forced(forced: Mapping[str, int] | None, cameras) -> dict[str, int]:
    out = {}
    for cam, slot in (forced or {}).items():
        if cam not in cameras:
            raise InfeasiblePartition(f"forced camera {cam!r} is not in the dataset")
        if isinstance(slot, str):
            if slot in SUBSET_NAMES:
                slot = SUBSET_NAMES.index(slot) + 1
            else:
                slot = int(slot)
        if slot not in (1, 2, 3):
            raise InfeasiblePartition(f"forced subset for {cam!r} must be 1, 2 or 3, got {slot!r}")
        out[cam] = slot
    return out


def search_partition(profiles: Mapping[str, CameraProfile] | Sequence[CameraProfile],
                     sizes: tuple[int, int, int],
                     forced: Mapping[str, int] | None = None,
                     max_eval_fraction: float = DEFAULT_MAX_EVAL_FRACTION,
                     term_weights=(1.0, 1.0, 1.0)) -> PartitionSpec:
    """Exhaustively search camera partitions (train, val, test).

    ``sizes`` gives the number of cameras per subset and ``forced`` pins
    cameras to subset 1, 2 or 3. Candidates whose val or test image count
    exceeds ``max_eval_fraction`` of all labelled images are rejected. The
    lowest weighted objective wins; ties go to the lexicographically
    smallest (val, test) camera lists.
    """
    if not isinstance(profiles, Mapping):
        profiles = {p.camera_id: p for p in profiles}
    cams = sorted(profiles)
    sizes = tuple(int(s) for s in sizes)
    if len(sizes) != 3 or any(s < 1 for s in sizes):
        raise InfeasiblePartition(f"sizes must be three positive integers, got {sizes}")
    if sum(sizes) != len(cams):
        raise InfeasiblePartition(
            f"subset sizes {sizes} sum to {sum(sizes)} but there are {len(cams)} cameras")
    if not 0 < max_eval_fraction <= 1:
        raise InfeasiblePartition(f"max_eval_fraction must be in (0, 1], got {max_eval_fraction}")
    forced = _normalise_forced(forced, set(cams))
    for slot in (1, 2, 3):
        pinned = sum(1 for v in forced.values() if v == slot)
        if pinned > sizes[slot - 1]:
            raise InfeasiblePartition(
                f"{pinned} cameras forced into subset {slot} but its size is {sizes[slot - 1]}")
    if len(cams) > LARGE_SEARCH_WARNING:
        n_part = math.factorial(len(cams)) // math.prod(math.factorial(s) for s in sizes)
        warnings.warn(f"exhaustive partition search over {n_part} candidates", RuntimeWarning)

    total_images = sum(profiles[c].image_count for c in cams)
    cap = max_eval_fraction * total_images
    pinned = {s: [c for c in cams if forced.get(c) == s] for s in (1, 2, 3)}

    best = None
    evaluated = feasible = 0
    free2 = [c for c in cams if c not in forced]
    for extra2 in itertools.combinations(free2, sizes[1] - len(pinned[2])):
        c2 = tuple(sorted(pinned[2] + list(extra2)))
        free3 = [c for c in free2 if c not in extra2]
        for extra3 in itertools.combinations(free3, sizes[2] - len(pinned[3])):
            c3 = tuple(sorted(pinned[3] + list(extra3)))
            c1 = tuple(c for c in cams if c not in c2 and c not in c3)
            evaluated += 1
            if (sum(profiles[c].image_count for c in c2) > cap
                    or sum(profiles[c].image_count for c in c3) > cap):
                continue
            feasible += 1
            stats = tuple(subset_stats([profiles[c] for c in sub]) for sub in (c1, c2, c3))
            terms = _terms_from_stats(stats)
            obj = terms.total(term_weights)
            if best is None or obj < best[0] or (obj == best[0] and (c2, c3) < best[1][1:]):
                best = (obj, (c1, c2, c3), terms, stats)
    if best is None:
        raise InfeasiblePartition(
            f"no partition keeps val and test within {max_eval_fraction:.0%} of "
            f"{total_images} images ({evaluated} candidates evaluated)")
    obj, subsets, terms, stats = best
    return PartitionSpec(subsets, obj, terms, stats, evaluated, feasible,
                         {"sizes": list(sizes), "forced": dict(sorted(forced.items())),
                          "max_eval_fraction": max_eval_fraction,
                          "term_weights": list(term_weights)})


def split_report(partition: PartitionSpec, classes: ClassSet, clusters: SizeClusters) -> dict:
    """JSON-ready summary; per-subset values come straight from the search."""
    return {
        "objective": partition.objective,
        "terms": {"class": partition.terms.class_var, "size": partition.terms.size_var,
                  "day_ratio": partition.terms.ratio_var},
        "evaluated": partition.evaluated,
        "feasible": partition.feasible,
        "constraints": partition.constraints,
        "size_medoids": dict(zip(clusters.labels, clusters.medoids)),
        "subsets": {name: st.to_dict(classes, clusters.labels)
                    for name, st in zip(SUBSET_NAMES, partition.stats)},
    }


def emit_split(partition: PartitionSpec, manifest: SequenceManifest, out_dir,
               classes: ClassSet, clusters: SizeClusters) -> dict:
    """Write ``train/val/test.jsonl`` manifests and ``split_report.json``.

    Each manifest holds every frame of its cameras (labelled or not) so the
    background model can still draw on unlabelled frames. Returns the report.
    """
    import json

    from .ingest import write_manifest

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = {}
    for name, cams in zip(SUBSET_NAMES, partition.subsets):
        path = out_dir / f"{name}.jsonl"
        write_manifest([f for c in cams for f in manifest.frames.get(c, ())], path)
        files[name] = path.name
    report = split_report(partition, classes, clusters)
    report["manifests"] = files
    (out_dir / "split_report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n",
                                               encoding="utf-8")
    return report
