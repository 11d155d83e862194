"""Central finite-difference checks for the weighting layers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import weighting as W

STEP = 1e-5
REL_TOL = 1e-4
KINK_EPS = 1e-6


@dataclass
class BlockResult:
    name: str
    checked: int = 0
    skipped: int = 0
    max_rel_err: float = 0.0
    failures: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.checked > 0 and not self.failures


def rel_err(a: float, b: float) -> float:
    denom = max(abs(a), abs(b))
    return 0.0 if denom == 0.0 else abs(a - b) / denom


def _record(res: BlockResult, idx, analytic, numeric, tol):
    err = rel_err(analytic, numeric)
    res.checked += 1
    res.max_rel_err = max(res.max_rel_err, err)
    if err > tol:
        res.failures.append((idx, analytic, numeric, err))


def check_fixed(seed: int, shape=(5, 8, 8), h: float = STEP, tol: float = REL_TOL):
    """Compare :func:`fixed_backward` with central differences."""
    rng = np.random.default_rng(seed)
    x = rng.normal(size=shape)
    up = rng.normal(size=shape)
    p = W.FixedWeights(*rng.normal(size=2))

    def loss(alpha, beta, xx):
        return float(np.sum(W.fixed_forward(xx, W.FixedWeights(alpha, beta)) * up))

    ga, gb, gx = W.fixed_backward(x, p, up)
    results = {k: BlockResult(k) for k in ("alpha", "beta", "input")}
    num_a = (loss(p.alpha + h, p.beta, x) - loss(p.alpha - h, p.beta, x)) / (2 * h)
    num_b = (loss(p.alpha, p.beta + h, x) - loss(p.alpha, p.beta - h, x)) / (2 * h)
    _record(results["alpha"], (), ga, num_a, tol)
    _record(results["beta"], (), gb, num_b, tol)
    for idx in np.ndindex(shape):
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        num = (loss(p.alpha, p.beta, xp) - loss(p.alpha, p.beta, xm)) / (2 * h)
        _record(results["input"], idx, gx[idx], num, tol)
    return results


def _kinked(*caches) -> bool:
    """True when ReLU inputs change sign or sit next to zero across evaluations."""
    base_masks = None
    for c in caches:
        pre = c.relu_preactivations
        if any(np.any(np.abs(a) < KINK_EPS) for a in pre):
            return True
        masks = [a > 0 for a in pre]
        if base_masks is None:
            base_masks = masks
        elif any(not np.array_equal(m, b) for m, b in zip(masks, base_masks)):
            return True
    return False


def check_se(seed: int, shape=(5, 8, 8), h: float = STEP, tol: float = REL_TOL,
             params: W.SEParams | None = None):
    """Compare :func:`se_backward` with central differences on every
    parameter coordinate and every input coordinate."""
    rng = np.random.default_rng(seed)
    x = rng.normal(size=shape)
    up = rng.normal(size=shape)
    p = params if params is not None else W.init_params("se", seed)

    def evaluate(pp, xx):
        out, cache = W.se_forward(xx, pp)
        return float(np.sum(out * up)), cache

    _, cache = W.se_forward(x, p)
    grads, gx = W.se_backward(cache, up)
    results = {}
    for name, arr in p.fields().items():
        res = results[name] = BlockResult(name)
        for idx in np.ndindex(arr.shape):
            pp, pm = p.copy(), p.copy()
            getattr(pp, name)[idx] += h
            getattr(pm, name)[idx] -= h
            fp, cp = evaluate(pp, x)
            fm, cm = evaluate(pm, x)
            if _kinked(cache, cp, cm):
                res.skipped += 1
                continue
            _record(res, idx, grads[name][idx], (fp - fm) / (2 * h), tol)
    res = results["input"] = BlockResult("input")
    for idx in np.ndindex(shape):
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        fp, cp = evaluate(p, xp)
        fm, cm = evaluate(p, xm)
        if _kinked(cache, cp, cm):
            res.skipped += 1
            continue
        _record(res, idx, gx[idx], (fp - fm) / (2 * h), tol)
    return results


def run_suite(seeds=range(10), shape=(5, 8, 8)) -> dict[str, dict[str, BlockResult]]:
    """Run both checks over ``seeds``; keys are ``"fixed"`` and ``"se"``."""
    merged: dict[str, dict[str, BlockResult]] = {"fixed": {}, "se": {}}
    for seed in seeds:
        for scheme, fn in (("fixed", check_fixed), ("se", check_se)):
            for name, r in fn(seed, shape).items():
                acc = merged[scheme].setdefault(name, BlockResult(name))
                acc.checked += r.checked
                acc.skipped += r.skipped
                acc.max_rel_err = max(acc.max_rel_err, r.max_rel_err)
                acc.failures.extend((seed,) + f for f in r.failures)
    return merged
