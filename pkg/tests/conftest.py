import json
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np
import pytest
from PIL import Image


def write_png(path, arr):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.asarray(arr, dtype=np.uint8), mode="RGB").save(path)
    return path


def day_image(rng, h, w):
    return rng.integers(0, 256, size=(h, w, 3))


def night_image(rng, h, w):
    g = rng.integers(0, 256, size=(h, w, 1))
    return np.repeat(g, 3, axis=2)


def write_manifest(path, records):
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")
    return path


def make_sequence(root, camera, pattern, h=12, w=16, seed=0, start=datetime(2020, 3, 1, 0, 0, 0),
                  step=timedelta(minutes=30), explicit=False):
    """Write one PNG per character of ``pattern`` ('D' colour, 'N' grey).

    Returns manifest records in time order.
    """
    rng = np.random.default_rng(seed)
    recs = []
    for i, ch in enumerate(pattern):
        img = day_image(rng, h, w) if ch == "D" else night_image(rng, h, w)
        rel = f"{camera}/img_{i:03d}.png"
        write_png(Path(root) / rel, img)
        rec = {"path": rel, "camera": camera, "timestamp": (start + i * step).isoformat()}
        if explicit:
            rec["modality"] = "day" if ch == "D" else "night"
        recs.append(rec)
    return recs


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# --- split fixtures ---------------------------------------------------------

def profile(cam, images, day_images, class_counts, size_counts, day_counts):
    """CameraProfile from plain lists; night counts are class minus day counts."""
    from tlstack.split import CameraProfile

    cc = np.array(class_counts, dtype=float)
    dc = np.array(day_counts, dtype=float)
    return CameraProfile(cam, images, day_images, images - day_images, cc,
                         np.array(size_counts, dtype=float), dc, cc - dc)


def six_camera_profiles():
    """Two classes, three size bins. Class 1 never appears on camera F."""
    return [
        profile("A", 10, 6, [12, 3], [[4, 6, 2], [1, 1, 1]], [8, 1]),
        profile("B", 4, 4, [5, 0], [[1, 3, 1], [0, 0, 0]], [5, 0]),
        profile("C", 20, 11, [30, 9], [[10, 15, 5], [2, 4, 3]], [14, 6]),
        profile("D", 7, 2, [7, 7], [[0, 7, 0], [7, 0, 0]], [1, 2]),
        profile("E", 15, 15, [9, 2], [[3, 3, 3], [0, 1, 1]], [9, 2]),
        profile("F", 3, 1, [6, 0], [[2, 2, 2], [0, 0, 0]], [0, 0]),
    ]


def random_profiles(rng, n_cams, n_classes=3, n_sizes=3):
    out = []
    for i in range(n_cams):
        images = int(rng.integers(1, 60))
        day_images = int(rng.integers(0, images + 1))
        sizes = rng.integers(0, 20, (n_classes, n_sizes))
        if rng.random() < 0.3:
            sizes[int(rng.integers(n_classes))] = 0   # class absent on this camera
        counts = sizes.sum(axis=1)
        day = np.array([rng.integers(0, c + 1) for c in counts])
        out.append(profile(f"cam{i:02d}", images, day_images, counts, sizes, day))
    return out
