"""PSNR and SSIM on ``[C, H, W]`` frames in [0, 1].

PSNR averages the squared error over all channels. SSIM is computed on the
BT.601 luminance of RGB input (single-channel input is used as is) with an
11x11 Gaussian window (sigma 1.5) evaluated at every fully covered position.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import correlate2d

from ..errors import UsageError, ValidationError

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])
PSNR_CAP = 100.0


def _np(a) -> np.ndarray:
    if hasattr(a, "detach"):
        a = a.detach().cpu().numpy()
    return np.asarray(a, dtype=np.float64)


def psnr(a, b, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; ``math.inf`` for identical inputs."""
    a, b = _np(a), _np(b)
    if a.shape != b.shape:
        raise ValidationError(f"shapes differ: {a.shape} vs {b.shape}")
    if peak <= 0:
        raise ValidationError("peak must be positive")
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return math.inf
    return float(10 * np.log10(peak * peak / mse))


def luminance(frame) -> np.ndarray:
    f = _np(frame)
    if f.ndim == 2:
        return f
    if f.shape[0] == 3:
        return np.tensordot(LUMA_WEIGHTS, f, axes=1)
    if f.shape[0] == 1:
        return f[0]
    raise ValidationError(f"expected 1 or 3 channels, got shape {f.shape}")


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2
    g = np.exp(-(ax ** 2) / (2 * sigma ** 2))
    w = np.outer(g, g)
    return w / w.sum()


def ssim_map(a, b, window: int = 11, k1: float = 0.01, k2: float = 0.03,
             sigma: float = 1.5, data_range: float = 1.0) -> np.ndarray:
    x, y = luminance(a), luminance(b)
    if x.shape != y.shape:
        raise ValidationError(f"shapes differ: {x.shape} vs {y.shape}")
    if window % 2 == 0:
        raise UsageError("window must be odd")
    if min(x.shape) < window:
        raise UsageError(f"frame {x.shape} is smaller than the {window}x{window} window")
    w = gaussian_window(window, sigma)
    c1, c2 = (k1 * data_range) ** 2, (k2 * data_range) ** 2

    def filt(z):
        return correlate2d(z, w, mode="valid")

    mu_x, mu_y = filt(x), filt(y)
    sxx = filt(x * x) - mu_x ** 2
    syy = filt(y * y) - mu_y ** 2
    sxy = filt(x * y) - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * sxy + c2)
    den = (mu_x ** 2 + mu_y ** 2 + c1) * (sxx + syy + c2)
    return num / den


def ssim(a, b, window: int = 11, k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean structural similarity."""
    return float(ssim_map(a, b, window, k1, k2).mean())


@dataclass
class MetricReport:
    psnr_db: float
    ssim: float
    per_frame_psnr: list[float] = field(default_factory=list)
    per_frame_ssim: list[float] = field(default_factory=list)

    def records(self):
        for i, (p, s) in enumerate(zip(self.per_frame_psnr, self.per_frame_ssim)):
            yield {"frame": i, "psnr_db": p, "ssim": s}

    def summary(self) -> dict:
        return {"frames": len(self.per_frame_psnr), "psnr_db": self.psnr_db, "ssim": self.ssim}


def evaluate_sequence(restored, sharp, peak: float = 1.0) -> MetricReport:
    """Per-frame and mean PSNR/SSIM; infinite PSNRs are capped before averaging."""
    if len(restored) != len(sharp):
        raise ValidationError(f"{len(restored)} restored frames vs {len(sharp)} sharp frames")
    if len(restored) == 0:
        raise UsageError("no frames to evaluate")
    ps = [psnr(r, s, peak) for r, s in zip(restored, sharp)]
    ss = [ssim(r, s) for r, s in zip(restored, sharp)]
    return MetricReport(float(np.mean(np.minimum(ps, PSNR_CAP))), float(np.mean(ss)), ps, ss)
