"""Per-camera annotation tables (image counts, class counts by modality)."""

from __future__ import annotations

import csv
from pathlib import Path

from .split import CameraProfile, ClassSet


def stats_rows(profiles: dict[str, CameraProfile], classes: ClassSet) -> tuple[list[str], list[list]]:
    header = ["Camera", "No. Images", "No. Day Images", "No. Night Images"]
    header += [f"No. {c}" for c in classes.names]
    header += [f"No. {c}, Day" for c in classes.names]
    header += [f"No. {c}, Night" for c in classes.names]
    rows = []
    for cam in sorted(profiles):
        p = profiles[cam]
        row = [cam, p.image_count, p.day_images, p.night_images]
        row += [int(v) for v in p.class_counts]
        row += [int(v) for v in p.day_counts]
        row += [int(v) for v in p.night_counts]
        rows.append(row)
    return header, rows


def write_stats_csv(profiles, classes: ClassSet, path) -> Path:
    header, rows = stats_rows(profiles, classes)
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return path
