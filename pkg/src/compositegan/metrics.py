"""Windowed structural similarity and the max-match sample-quality score.

SSIM follows the classic construction: Gaussian-weighted 11x11 windows,
stride 1, valid region only (no padding), luminance/contrast/structure
product averaged over window positions. Color images are reduced to
luminance with ITU-R 601 weights before comparison.

The quality score Q of a sample set S against test images x_1..x_N is the
mean over test items of the best SSIM against any sample. Scores are in
[-1, 1]; larger means more similar.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import correlate1d

from .errors import ShapeError

LUMA_WEIGHTS = (0.299, 0.587, 0.114)


@dataclass(frozen=True)
class SsimParams:
    window: int = 11
    window_stddev: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    dynamic_range: float = 1.0

    def __post_init__(self):
        if self.window < 3 or self.window % 2 == 0:
            raise ValueError(f"window must be odd and >= 3, got {self.window}")
        if self.k1 <= 0 or self.k2 <= 0:
            raise ValueError("k1 and k2 must be positive")
        if self.window_stddev <= 0:
            raise ValueError("window_stddev must be positive")
        if self.dynamic_range <= 0:
            raise ValueError("dynamic_range must be positive")


def gaussian_window(size: int, stddev: float) -> np.ndarray:
    """Normalized 1-D Gaussian tap weights of odd length `size`."""
    half = (size - 1) // 2
    x = np.arange(-half, half + 1, dtype=np.float64)
    w = np.exp(-(x * x) / (2.0 * stddev * stddev))
    return w / w.sum()


def to_luminance(img: np.ndarray) -> np.ndarray:
    """Reduce (3,H,W) to (H,W) with ITU-R 601 weights; pass (H,W) through."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return img
    if img.ndim == 3 and img.shape[0] == 3:
        r, g, b = LUMA_WEIGHTS
        return r * img[0] + g * img[1] + b * img[2]
    raise ShapeError(f"expected (H,W) or (3,H,W) image, got {img.shape}")


def _filter_valid(arr: np.ndarray, taps: np.ndarray) -> np.ndarray:
    """Separable windowed weighted mean over the last two axes, valid region only."""
    half = (len(taps) - 1) // 2
    out = correlate1d(arr, taps, axis=-1, mode="constant")
    out = correlate1d(out, taps, axis=-2, mode="constant")
    return out[..., half:-half, half:-half]


def _moments(imgs: np.ndarray, taps: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Windowed mean and variance for a stack of images (..., H, W)."""
    mu = _filter_valid(imgs, taps)
    var = _filter_valid(imgs * imgs, taps) - mu * mu
    return mu, var


def _ssim_from_moments(mu_a, var_a, mu_b, var_b, cross, p: SsimParams) -> np.ndarray:
    c1 = (p.k1 * p.dynamic_range) ** 2
    c2 = (p.k2 * p.dynamic_range) ** 2
    cov = cross - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return num / den


def _check_pair(a: np.ndarray, b: np.ndarray, p: SsimParams) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"image shapes differ: {a.shape} vs {b.shape}")
    if a.shape[-2] < p.window or a.shape[-1] < p.window:
        raise ValueError(
            f"image {a.shape[-2]}x{a.shape[-1]} is smaller than the {p.window}x{p.window} window"
        )


def ssim(a: np.ndarray, b: np.ndarray, params: SsimParams | None = None) -> float:
    """Mean SSIM between two images, each (H,W) grayscale or (3,H,W) color in [0, L]."""
    p = params or SsimParams()
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"image shapes differ: {a.shape} vs {b.shape}")
    ya, yb = to_luminance(a), to_luminance(b)
    _check_pair(ya, yb, p)
    taps = gaussian_window(p.window, p.window_stddev)
    mu_a, var_a = _moments(ya, taps)
    mu_b, var_b = _moments(yb, taps)
    cross = _filter_valid(ya * yb, taps)
    return float(np.mean(_ssim_from_moments(mu_a, var_a, mu_b, var_b, cross, p)))


@dataclass(frozen=True)
class QReport:
    """Max-match quality of a sample set against test images."""

    q: float
    item_scores: np.ndarray  # (N,) best SSIM per test item
    item_best: np.ndarray  # (N,) index into the sample set of the best match
    sample_count: int
    test_count: int
    params: SsimParams = field(default_factory=SsimParams)

    @property
    def item_stddev(self) -> float:
        """Sample standard deviation of the per-item scores (spread across test items)."""
        if self.test_count < 2:
            return 0.0
        return float(np.std(self.item_scores, ddof=1))

    def to_text(self) -> str:
        p = self.params
        lines = [
            "q-metric report",
            f"test_count = {self.test_count}",
            f"sample_count = {self.sample_count}",
            f"ssim_window = {p.window}",
            f"ssim_window_stddev = {p.window_stddev}",
            f"ssim_k1 = {p.k1}",
            f"ssim_k2 = {p.k2}",
            f"ssim_dynamic_range = {p.dynamic_range}",
            f"Q = {self.q:.6f} +/- {self.item_stddev:.6f} (stddev across test items)",
        ]
        return "\n".join(lines) + "\n"

    def per_item_csv(self) -> str:
        rows = ["item,best_sample,score"]
        for i, (j, s) in enumerate(zip(self.item_best, self.item_scores)):
            rows.append(f"{i},{int(j)},{float(s):.10f}")
        return "\n".join(rows) + "\n"


def _as_stack(imgs, what: str) -> np.ndarray:
    """Coerce a list/array of images to a luminance stack (N,H,W)."""
    arr = np.asarray(imgs, dtype=np.float64)
    if arr.ndim == 4 and arr.shape[1] == 3:
        r, g, b = LUMA_WEIGHTS
        return r * arr[:, 0] + g * arr[:, 1] + b * arr[:, 2]
    if arr.ndim == 3:
        return arr
    raise ShapeError(f"{what} must be (N,H,W) or (N,3,H,W), got {arr.shape}")


def q_metric(samples, test, params: SsimParams | None = None) -> QReport:
    """Best-match mean SSIM of `test` items against the sample set `samples`.

    The pairwise score matrix is computed with per-image moments cached, so
    evaluation cost is one cross-correlation per (sample, test) pair. The
    result is independent of evaluation order.
    """
    p = params or SsimParams()
    s = _as_stack(samples, "samples")
    t = _as_stack(test, "test")
    if s.shape[0] < 1 or t.shape[0] < 1:
        raise ValueError("need at least one sample and one test image")
    if s.shape[1:] != t.shape[1:]:
        raise ShapeError(f"sample images {s.shape[1:]} and test images {t.shape[1:]} differ")
    _check_pair(s[0], t[0], p)

    taps = gaussian_window(p.window, p.window_stddev)
    mu_s, var_s = _moments(s, taps)
    best_score = np.empty(t.shape[0])
    best_index = np.empty(t.shape[0], dtype=np.int64)
    for i in range(t.shape[0]):
        mu_t, var_t = _moments(t[i], taps)
        cross = _filter_valid(s * t[i][None], taps)
        maps = _ssim_from_moments(mu_s, var_s, mu_t[None], var_t[None], cross, p)
        scores = maps.mean(axis=(-2, -1))
        best_index[i] = int(np.argmax(scores))
        best_score[i] = scores[best_index[i]]
    return QReport(
        q=float(best_score.mean()),
        item_scores=best_score,
        item_best=best_index,
        sample_count=s.shape[0],
        test_count=t.shape[0],
        params=p,
    )
