"""Colour-corrected difference mask and 5-plane feature stacks."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

DEFAULT_STRIDE = 4
DEFAULT_RIDGE = 1e-6

PLANE_NAMES = ("R", "G", "B", "T", "D")
T_PLANE = 3
D_PLANE = 4


@dataclass(frozen=True)
class ColorMatrix:
    """3x3 map applied to row-vector pixels, ``corrected = pixel @ m``."""

    m: np.ndarray
    rank: int
    ridge: float
    samples: int

    @property
    def rank_deficient(self) -> bool:
        return self.rank < 3

    def diagnostics(self) -> dict:
        return {"rank": self.rank, "rank_deficient": self.rank_deficient,
                "ridge": self.ridge, "samples": self.samples}


@dataclass(frozen=True)
class FeatureStack:
    """Planes R, G, B, T, D as a ``5 x H x W`` float32 array on [0, 1]."""

    planes: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        p = self.planes
        if p.ndim != 3 or p.shape[0] != 5:
            raise ValueError(f"feature stack needs shape (5, H, W), got {p.shape}")
        if p.dtype != np.float32:
            raise ValueError(f"feature stack planes must be float32, got {p.dtype}")

    @property
    def height(self) -> int:
        return self.planes.shape[1]

    @property
    def width(self) -> int:
        return self.planes.shape[2]


def _check_pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 3 or a.shape[2] != 3:
        raise ValueError(f"expected an H x W x 3 image, got shape {a.shape}")
    if a.shape != b.shape:
        raise ValueError(f"image dimensions differ: {a.shape} vs {b.shape}")
    return a, b


def fit_color_matrix(current, background, sample_stride: int = DEFAULT_STRIDE,
                     ridge: float = DEFAULT_RIDGE) -> ColorMatrix:
    """Least-squares colour map taking ``background`` toward ``current``.

    Pixels are sampled on a ``sample_stride`` grid and the ridge-stabilised
    normal equations ``(T'T + ridge I) M = T'I`` are solved, with rows of
    ``T`` the background pixels and rows of ``I`` the current pixels.
    """
    cur, bg = _check_pair(current, background)
    if sample_stride < 1:
        raise ValueError("sample_stride must be >= 1")
    if ridge < 0:
        raise ValueError("ridge must be >= 0")
    t = bg[::sample_stride, ::sample_stride].reshape(-1, 3)
    i = cur[::sample_stride, ::sample_stride].reshape(-1, 3)
    if t.shape[0] < 3:
        raise ValueError(f"only {t.shape[0]} sampled pixels; need at least 3")
    gram = t.T @ t
    rank = int(np.linalg.matrix_rank(gram))
    rhs = t.T @ i
    lhs = gram + ridge * np.eye(3)
    try:
        m = np.linalg.solve(lhs, rhs)
    except np.linalg.LinAlgError:
        # ridge == 0 with a singular gram matrix
        m = np.linalg.lstsq(t, i, rcond=None)[0]
    return ColorMatrix(m=m, rank=rank, ridge=float(ridge), samples=int(t.shape[0]))


def apply_color_correction(background, m) -> np.ndarray:
    """Multiply every background pixel by ``m`` and clamp to [0, 255]."""
    mat = m.m if isinstance(m, ColorMatrix) else np.asarray(m, dtype=np.float64)
    bg = np.asarray(background, dtype=np.float64)
    return np.clip(bg @ mat, 0.0, 255.0)


def diff_mask(current, corrected_bg) -> np.ndarray:
    """Mean absolute channel difference per pixel, on [0, 255]."""
    a, b = _check_pair(current, corrected_bg)
    d = np.abs(a - b)
    return (d[..., 0] + d[..., 1] + d[..., 2]) / 3.0


def assemble_stack(current, bg, dm, provenance=None) -> FeatureStack:
    """Stack the normalised current RGB, background grey and difference mask.

    ``bg`` is a :class:`~tlstack.background.BackgroundModel` or a bare grey
    plane. RGB planes are exactly ``current / 255`` in float32.
    """
    cur = np.asarray(current, dtype=np.float64)
    grey = np.asarray(getattr(bg, "grey", bg), dtype=np.float64)
    dm = np.asarray(dm, dtype=np.float64)
    if cur.ndim != 3 or cur.shape[2] != 3:
        raise ValueError(f"expected an H x W x 3 image, got shape {cur.shape}")
    hw = cur.shape[:2]
    if grey.shape != hw or dm.shape != hw:
        raise ValueError(
            f"plane dimensions differ: rgb {hw}, background {grey.shape}, mask {dm.shape}")
    planes = np.empty((5,) + hw, dtype=np.float32)
    planes[0:3] = np.moveaxis(cur / 255.0, 2, 0)
    # luminosity weights sum to 1 only up to rounding, so clamp
    planes[T_PLANE] = np.clip(grey / 255.0, 0.0, 1.0)
    planes[D_PLANE] = np.clip(dm / 255.0, 0.0, 1.0)
    return FeatureStack(planes, dict(provenance or {}))


def value_gain_t_channel(stack: FeatureStack, gain: float) -> FeatureStack:
    """Apply an HSV value gain to the background plane only.

    The colour planes are augmented elsewhere; the difference mask is never
    augmented so its intensity is preserved.
    """
    if not gain > 0:
        raise ValueError(f"gain must be positive, got {gain}")
    planes = stack.planes.copy()
    planes[T_PLANE] = np.clip(planes[T_PLANE] * np.float32(gain), 0.0, 1.0)
    return replace(stack, planes=planes)
