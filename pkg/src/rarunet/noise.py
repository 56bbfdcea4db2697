"""Synthetic label noise: erosion, dilation and elastic deformation of binary masks.

Each corruption is tuned so that the Dice overlap between the clean and the
corrupted mask (the noise level alpha) hits a requested value.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np
from scipy import ndimage

KINDS = ("erosion", "dilation", "elastic")
_SQUARE = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class NoiseSpec:
    kind: str
    alpha_target: float
    tolerance: float = 0.03
    seed: int = 0
    sigma_e: float = 4.0
    magnitude: Optional[float] = None  # elastic only; None means "search for it"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown noise kind {self.kind!r}; expected one of {KINDS}")
        if not 0.0 <= self.alpha_target <= 1.0:
            raise ValueError(f"alpha_target must lie in [0, 1], got {self.alpha_target}")
        if self.tolerance <= 0:
            raise ValueError("tolerance must be positive")
        if self.sigma_e <= 0:
            raise ValueError("sigma_e must be positive")
        if self.magnitude is not None and self.magnitude < 0:
            raise ValueError("magnitude must be non-negative")


@dataclass
class CorruptionRecord:
    sample_id: int
    kind: Optional[str]
    alpha_target: Optional[float]
    alpha_achieved: Optional[float]
    corrupted: bool
    infeasible: bool = False


class Calibration(NamedTuple):
    mask: np.ndarray
    alpha_achieved: float
    feasible: bool
    intensity: float


def _as_mask(mask) -> np.ndarray:
    m = np.asarray(mask)
    if m.ndim != 2:
        raise ValueError(f"masks are 2-D, got shape {m.shape}")
    return m.astype(bool)


def erode(mask, iterations: int) -> np.ndarray:
    """Erode with a 3x3 square; pixels outside the image count as background."""
    if iterations < 0:
        raise ValueError("iterations must be >= 0")
    m = _as_mask(mask)
    if iterations == 0 or not m.any():
        return m.copy()
    return ndimage.binary_erosion(m, structure=_SQUARE, iterations=iterations, border_value=0)


def dilate(mask, iterations: int) -> np.ndarray:
    """Dilate with a 3x3 square, clipped at the image border."""
    if iterations < 0:
        raise ValueError("iterations must be >= 0")
    m = _as_mask(mask)
    if iterations == 0 or not m.any():
        return m.copy()
    return ndimage.binary_dilation(m, structure=_SQUARE, iterations=iterations)


def overlap_alpha(gt, noisy) -> float:
    """Dice overlap of two masks; 1.0 when both are empty."""
    g, m = _as_mask(gt), _as_mask(noisy)
    if g.shape != m.shape:
        raise ValueError(f"mask shapes differ: {g.shape} vs {m.shape}")
    total = int(g.sum()) + int(m.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(g, m).sum()) / total


def gaussian_kernel1d(sigma: float) -> np.ndarray:
    """Normalized Gaussian taps on [-ceil(3 sigma), ceil(3 sigma)]."""
    radius = int(math.ceil(3 * sigma))
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(t * t) / (2 * sigma * sigma))
    return k / k.sum()


def displacement_fields(shape, sigma_e: float, seed: int):
    """Two smooth fields with peak absolute value 1 (unless identically zero).

    Uniform noise on [-1, 1] is smoothed by a separable truncated Gaussian with
    zero padding, then rescaled so that ``magnitude`` is the largest
    displacement in pixels.
    """
    rng = np.random.default_rng(seed)
    k = gaussian_kernel1d(sigma_e)
    out = []
    for _ in range(2):
        f = rng.uniform(-1.0, 1.0, size=shape)
        f = ndimage.correlate1d(f, k, axis=0, mode="constant", cval=0.0)
        f = ndimage.correlate1d(f, k, axis=1, mode="constant", cval=0.0)
        peak = np.abs(f).max()
        out.append(f / peak if peak > 0 else f)
    return out[0], out[1]


def _warp(mask: np.ndarray, dy: np.ndarray, dx: np.ndarray, magnitude: float) -> np.ndarray:
    h, w = mask.shape
    rows, cols = np.indices((h, w))
    src_r = np.floor(rows + magnitude * dy + 0.5).astype(np.int64)
    src_c = np.floor(cols + magnitude * dx + 0.5).astype(np.int64)
    inside = (src_r >= 0) & (src_r < h) & (src_c >= 0) & (src_c < w)
    out = np.zeros_like(mask)
    out[inside] = mask[src_r[inside], src_c[inside]]
    return out


def elastic_deform(mask, sigma_e: float, magnitude: float, seed: int) -> np.ndarray:
    """Nearest-neighbour resampling of ``mask`` along a smooth random displacement.

    Out-of-image samples read background, so the result stays binary.
    """
    if sigma_e <= 0:
        raise ValueError("sigma_e must be positive")
    m = _as_mask(mask)
    if magnitude == 0:
        return m.copy()
    dy, dx = displacement_fields(m.shape, sigma_e, seed)
    return _warp(m, dy, dx, magnitude)


# ---------------------------------------------------------------- calibration

class _GradedMorphology:
    """Erosion or dilation with a fractional intensity.

    ``level = i + f`` applies ``i`` full iterations and then moves the fraction
    ``f`` of the next ring of pixels, in the order of a smooth random priority
    field. The resulting masks form a monotone chain in ``level``.
    """

    def __init__(self, mask: np.ndarray, kind: str, seed: int):
        step = erode if kind == "erosion" else dilate
        chain = [mask]
        limit = 2 * max(mask.shape) + 2
        while len(chain) <= limit:
            nxt = step(chain[-1], 1)
            if np.array_equal(nxt, chain[-1]):
                break
            chain.append(nxt)
        self.chain = chain
        self.kind = kind
        rng = np.random.default_rng(seed)
        self.priority = ndimage.gaussian_filter(rng.random(mask.shape), 2.0)
        self.rings = []
        for a, b in zip(chain[:-1], chain[1:]):
            ring = a & ~b if kind == "erosion" else b & ~a
            idx = np.flatnonzero(ring)
            self.rings.append(idx[np.argsort(self.priority.reshape(-1)[idx], kind="stable")])

    @property
    def max_level(self) -> float:
        return float(len(self.chain) - 1)

    def at(self, level: float) -> np.ndarray:
        level = min(max(level, 0.0), self.max_level)
        i = int(math.floor(level))
        if i >= len(self.rings):
            return self.chain[-1].copy()
        frac = level - i
        out = self.chain[i].copy().reshape(-1)
        take = self.rings[i][: int(math.floor(frac * len(self.rings[i])))]
        out[take] = self.kind != "erosion"
        return out.reshape(self.chain[0].shape)


def calibrate(gt, spec: NoiseSpec, max_steps: int = 48) -> Calibration:
    """Corrupt ``gt`` with ``spec.kind`` so that its Dice overlap with ``gt`` hits the target.

    The intensity (fractional iterations for erosion/dilation, peak
    displacement for elastic) is bisected assuming overlap decreases with
    intensity. The closest mask seen is returned; ``feasible`` is False when
    no intensity got within ``spec.tolerance``.
    """
    g = _as_mask(gt)
    if not g.any():
        raise ValueError("calibrate needs a non-empty ground-truth mask")
    target = spec.alpha_target

    if spec.kind == "elastic":
        if spec.magnitude is not None:
            noisy = elastic_deform(g, spec.sigma_e, spec.magnitude, spec.seed)
            a = overlap_alpha(g, noisy)
            return Calibration(noisy, a, abs(a - target) <= spec.tolerance, spec.magnitude)
        dy, dx = displacement_fields(g.shape, spec.sigma_e, spec.seed)
        make = lambda level: _warp(g, dy, dx, level)  # noqa: E731
        hi = float(max(g.shape))
    else:
        graded = _GradedMorphology(g, spec.kind, spec.seed)
        make = graded.at
        hi = graded.max_level

    best = Calibration(g.copy(), 1.0, abs(1.0 - target) <= spec.tolerance, 0.0)
    if best.feasible and target >= 1.0:
        return best
    lo = 0.0
    for _ in range(max_steps):
        mid = 0.5 * (lo + hi)
        noisy = make(mid)
        a = overlap_alpha(g, noisy)
        if abs(a - target) < abs(best.alpha_achieved - target):
            best = Calibration(noisy, a, abs(a - target) <= spec.tolerance, mid)
        if abs(a - target) <= spec.tolerance / 4:
            break
        if a > target:
            lo = mid
        else:
            hi = mid
    # the far end of the range can be closer than anything the bisection visited
    end = make(hi)
    a = overlap_alpha(g, end)
    if abs(a - target) < abs(best.alpha_achieved - target):
        best = Calibration(end, a, abs(a - target) <= spec.tolerance, hi)
    return best


def choose_corrupted(train_ids: Sequence[int], beta: float, seed: int) -> list:
    """floor(beta * n) ids drawn uniformly without replacement, returned sorted."""
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must lie in [0, 1], got {beta}")
    ids = sorted(int(i) for i in train_ids)
    k = int(math.floor(beta * len(ids) + 1e-9))
    rng = np.random.default_rng(seed)
    picked = rng.choice(len(ids), size=k, replace=False) if k else []
    return sorted(ids[i] for i in picked)


def sample_seed(seed: int, sample_id: int) -> int:
    return int(np.random.SeedSequence([seed, sample_id]).generate_state(1)[0])


def corrupt_masks(masks: dict, train_ids: Sequence[int], beta: float, specs: Sequence[NoiseSpec], seed: int):
    """Corrupt a beta fraction of the training masks.

    Returns ``(noisy, records)``: noisy masks for the chosen ids only, and one
    record per training id. Each chosen sample gets one noise kind drawn
    uniformly from ``specs``.
    """
    if not specs and beta > 0:
        raise ValueError("at least one NoiseSpec is needed when beta > 0")
    chosen = set(choose_corrupted(train_ids, beta, seed))
    rng = np.random.default_rng([seed, 1])
    noisy, records = {}, []
    for sid in sorted(int(i) for i in train_ids):
        if sid not in chosen:
            records.append(CorruptionRecord(sid, None, None, None, False))
            continue
        base = specs[int(rng.integers(len(specs)))]
        spec = NoiseSpec(base.kind, base.alpha_target, base.tolerance, sample_seed(seed, sid), base.sigma_e, base.magnitude)
        result = calibrate(masks[sid], spec)
        noisy[sid] = result.mask
        records.append(
            CorruptionRecord(sid, spec.kind, spec.alpha_target, result.alpha_achieved, True, not result.feasible)
        )
    return noisy, records
