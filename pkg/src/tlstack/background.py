"""Temporal-average background model."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ingest import DEFAULT_WINDOW, Modality, PriorWindow, Unavailable, load_rgb, prior_window

LUMA_WEIGHTS = (0.299, 0.587, 0.114)


@dataclass(frozen=True)
class BackgroundModel:
    rgb: np.ndarray      # H x W x 3, float64, real-valued
    grey: np.ndarray     # H x W, float64
    window: PriorWindow
    modality: Modality


@dataclass(frozen=True)
class Skipped:
    frame: object
    reason: str


def _as_rgb(image) -> np.ndarray:
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected an H x W x 3 image, got shape {arr.shape}")
    return arr


def temporal_average(images) -> np.ndarray:
    """Per-pixel, per-channel arithmetic mean of equally sized RGB images."""
    images = [_as_rgb(im) for im in images]
    if not images:
        raise ValueError("cannot average an empty list of images")
    shape = images[0].shape
    for im in images[1:]:
        if im.shape != shape:
            raise ValueError(f"image dimensions differ: {im.shape} vs {shape}")
    # float64 holds sums of 8-bit values exactly
    total = np.zeros(shape, dtype=np.float64)
    for im in images:
        total += im
    return total / len(images)


def luminosity_grey(image) -> np.ndarray:
    """Luminosity greyscale: ``0.299 R + 0.587 G + 0.114 B``, unrounded."""
    img = _as_rgb(image)
    wr, wg, wb = LUMA_WEIGHTS
    return wr * img[..., 0] + wg * img[..., 1] + wb * img[..., 2]


def build_background(manifest, frame, k: int = DEFAULT_WINDOW, load=load_rgb):
    """Background model for ``frame`` from its prior window.

    Returns :class:`Skipped` when the window is unavailable. ``load`` decodes
    a path to an RGB array; decode errors propagate with the offending path.
    """
    window = prior_window(manifest, frame, k)
    if isinstance(window, Unavailable):
        return Skipped(frame, window.reason)
    rgb = temporal_average(load(m.path) for m in window.members)
    return BackgroundModel(rgb=rgb, grey=luminosity_grey(rgb), window=window,
                           modality=frame.modality)
