"""Learnable weighting of the background and difference-mask channels.

Two layers operate on a ``5 x H x W`` stack (R, G, B, T, D):

* fixed weights: channels T and D scaled by ``sigmoid(alpha)`` and
  ``sigmoid(beta)``;
* a squeeze-and-excitation variant: two 3x3 convolutions with a ReLU in
  between, global average pooling, then ``sigmoid(w2 @ relu(w1 @ z))``
  yields the two scales.

Both expose explicit forward and backward passes in numpy. Colour channels
pass through untouched.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

N_CHANNELS = 5
SCALED = (3, 4)


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    # split by sign to avoid overflow in exp
    return np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                    np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p) - np.log1p(-p)


@dataclass
class FixedWeights:
    alpha: float = 0.0
    beta: float = 0.0

    @classmethod
    def from_scales(cls, t_scale: float, d_scale: float) -> "FixedWeights":
        return cls(float(logit(t_scale)), float(logit(d_scale)))

    @property
    def scales(self) -> tuple[float, float]:
        return float(sigmoid(self.alpha)), float(sigmoid(self.beta))


@dataclass
class SEParams:
    conv1: np.ndarray  # (5, 5, 3, 3) out, in, kh, kw
    conv2: np.ndarray  # (5, 5, 3, 3)
    w1: np.ndarray     # (5, 5)
    w2: np.ndarray     # (2, 5)

    SHAPES = {"conv1": (5, 5, 3, 3), "conv2": (5, 5, 3, 3), "w1": (5, 5), "w2": (2, 5)}

    def __post_init__(self):
        for name, shape in self.SHAPES.items():
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.shape != shape:
                raise ValueError(f"{name} must have shape {shape}, got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} has non-finite entries")
            setattr(self, name, arr)

    def fields(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in self.SHAPES}

    def copy(self) -> "SEParams":
        return SEParams(**{k: v.copy() for k, v in self.fields().items()})


def _check_stack(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[0] != N_CHANNELS:
        raise ValueError(f"expected a (5, H, W) tensor, got shape {x.shape}")
    return x


# --- fixed weights ---------------------------------------------------------

def fixed_forward(stack, p: FixedWeights) -> np.ndarray:
    x = _check_stack(stack)
    a, b = p.scales
    out = x.copy()
    out[3] *= a
    out[4] *= b
    return out


def fixed_backward(stack, p: FixedWeights, upstream_grad):
    """Return ``(grad_alpha, grad_beta, grad_stack)``."""
    x = _check_stack(stack)
    g = np.asarray(upstream_grad, dtype=np.float64)
    if g.shape != x.shape:
        raise ValueError(f"upstream gradient shape {g.shape} != input shape {x.shape}")
    a, b = p.scales
    grad_alpha = a * (1.0 - a) * float(np.sum(g[3] * x[3]))
    grad_beta = b * (1.0 - b) * float(np.sum(g[4] * x[4]))
    gx = g.copy()
    gx[3] *= a
    gx[4] *= b
    return grad_alpha, grad_beta, gx


# --- squeeze-and-excitation ------------------------------------------------

def _patches(x: np.ndarray) -> np.ndarray:
    """``(C, 3, 3, H, W)`` view of zero-padded 3x3 neighbourhoods."""
    c, h, w = x.shape
    xp = np.zeros((c, h + 2, w + 2))
    xp[:, 1:-1, 1:-1] = x
    cols = np.empty((c, 3, 3, h, w))
    for p in range(3):
        for q in range(3):
            cols[:, p, q] = xp[:, p:p + h, q:q + w]
    return cols


def conv3x3(x: np.ndarray, kernel: np.ndarray):
    """Zero-padded stride-1 3x3 cross-correlation without bias.

    Returns the output and the patch tensor needed for the backward pass.
    """
    cols = _patches(x)
    return np.einsum("ocpq,cpqhw->ohw", kernel, cols), cols


def conv3x3_backward(grad_out: np.ndarray, kernel: np.ndarray, cols: np.ndarray):
    """Gradients of :func:`conv3x3` w.r.t. its kernel and its input."""
    grad_k = np.einsum("ohw,cpqhw->ocpq", grad_out, cols)
    _, c, _, _ = kernel.shape
    h, w = grad_out.shape[1:]
    gp = np.zeros((c, h + 2, w + 2))
    for p in range(3):
        for q in range(3):
            gp[:, p:p + h, q:q + w] += np.einsum("oc,ohw->chw", kernel[:, :, p, q], grad_out)
    return grad_k, gp[:, 1:-1, 1:-1]


@dataclass
class SECache:
    x: np.ndarray
    cols1: np.ndarray
    a1: np.ndarray
    cols2: np.ndarray
    z: np.ndarray
    h: np.ndarray
    s: np.ndarray
    params: SEParams

    @property
    def relu_preactivations(self) -> tuple[np.ndarray, np.ndarray]:
        return self.a1, self.h


def se_forward(stack, p: SEParams):
    """Return ``(out, cache)``; ``out`` has channels 4-5 rescaled."""
    x = _check_stack(stack)
    a1, cols1 = conv3x3(x, p.conv1)
    r1 = np.maximum(a1, 0.0)
    feat, cols2 = conv3x3(r1, p.conv2)
    z = feat.mean(axis=(1, 2))
    h = p.w1 @ z
    s = sigmoid(p.w2 @ np.maximum(h, 0.0))
    out = x.copy()
    out[3] *= s[0]
    out[4] *= s[1]
    return out, SECache(x, cols1, a1, cols2, z, h, s, p)


def se_backward(cache: SECache, upstream_grad):
    """Reverse-mode gradients for :func:`se_forward`.

    Returns ``(grads, grad_stack)`` where ``grads`` maps each SEParams field
    to an array of the same shape.
    """
    x, p, s = cache.x, cache.params, cache.s
    g = np.asarray(upstream_grad, dtype=np.float64)
    if g.shape != x.shape:
        raise ValueError(f"upstream gradient shape {g.shape} != cached input shape {x.shape}")

    grad_s = np.array([np.sum(g[3] * x[3]), np.sum(g[4] * x[4])])
    grad_u = grad_s * s * (1.0 - s)
    hr = np.maximum(cache.h, 0.0)
    grad_w2 = np.outer(grad_u, hr)
    grad_h = (p.w2.T @ grad_u) * (cache.h > 0)
    grad_w1 = np.outer(grad_h, cache.z)
    grad_z = p.w1.T @ grad_h

    _, hh, ww = x.shape
    grad_feat = np.broadcast_to((grad_z / (hh * ww))[:, None, None], x.shape)
    grad_conv2, grad_r1 = conv3x3_backward(grad_feat, p.conv2, cache.cols2)
    grad_a1 = grad_r1 * (cache.a1 > 0)
    grad_conv1, grad_x_conv = conv3x3_backward(grad_a1, p.conv1, cache.cols1)

    grad_x = g.copy()
    grad_x[3] *= s[0]
    grad_x[4] *= s[1]
    grad_x += grad_x_conv
    grads = {"conv1": grad_conv1, "conv2": grad_conv2, "w1": grad_w1, "w2": grad_w2}
    return grads, grad_x


def init_params(scheme: str, seed: int = 0):
    """Fresh parameters: ``"fixed"`` gives alpha = beta = 0, ``"se"`` gives
    He-uniform weights (bound ``sqrt(6 / fan_in)``) from ``seed``."""
    if scheme == "fixed":
        return FixedWeights(0.0, 0.0)
    if scheme != "se":
        raise ValueError(f"unknown weighting scheme {scheme!r}")
    rng = np.random.default_rng(seed)
    out = {}
    for name, shape in SEParams.SHAPES.items():
        fan_in = int(np.prod(shape[1:]))
        bound = np.sqrt(6.0 / fan_in)
        out[name] = rng.uniform(-bound, bound, size=shape)
    return SEParams(**out)


# --- parameter files -------------------------------------------------------
# u32 header length, JSON header {"scheme", "fields": [{"name", "shape"}]},
# then the fields' values as little-endian float32 in header order.

def save_params(params, path) -> None:
    if isinstance(params, FixedWeights):
        scheme = "fixed"
        fields = {"alpha": np.array([params.alpha]), "beta": np.array([params.beta])}
    elif isinstance(params, SEParams):
        scheme = "se"
        fields = params.fields()
    else:
        raise TypeError(f"cannot save {type(params).__name__}")
    header = {"scheme": scheme,
              "fields": [{"name": k, "shape": list(v.shape)} for k, v in fields.items()]}
    hdr = json.dumps(header, sort_keys=True).encode("utf-8")
    blob = b"".join(np.ascontiguousarray(v, dtype="<f4").tobytes() for v in fields.values())
    Path(path).write_bytes(struct.pack("<I", len(hdr)) + hdr + blob)


def load_params(path):
    data = Path(path).read_bytes()
    if len(data) < 4:
        raise ValueError("parameter file truncated")
    (n,) = struct.unpack_from("<I", data, 0)
    header = json.loads(data[4:4 + n].decode("utf-8"))
    off = 4 + n
    values = {}
    for spec in header["fields"]:
        shape = tuple(spec["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=off)
        values[spec["name"]] = arr.astype(np.float64).reshape(shape)
        off += 4 * count
    if off != len(data):
        raise ValueError("parameter file size does not match its header")
    if header["scheme"] == "fixed":
        return FixedWeights(float(values["alpha"][0]), float(values["beta"][0]))
    return SEParams(**values)
