"""Independent reference implementations used as test oracles.

Everything here is plain Python / numpy loops, deliberately not sharing
code paths with the library.
"""

import math

import numpy as np
import torch

from memdeblur.memory.bank import MemoryBank, MemoryEntry


def _locations(t):
    """[C, H, W] -> list of C-vectors in row-major location order."""
    a = np.asarray(t.detach().numpy() if hasattr(t, "detach") else t, dtype=np.float64)
    if a.ndim == 4:
        a = a[0]
    c, h, w = a.shape
    return [a[:, y, x] for y in range(h) for x in range(w)]


def loop_affinity(query, bank, similarity):
    qs = _locations(query)
    ms = [m for e in bank.entries for m in _locations(e.key)]
    s = np.zeros((len(qs), len(ms)))
    for i, q in enumerate(qs):
        for j, m in enumerate(ms):
            if similarity == "dot":
                s[i, j] = sum(q[c] * m[c] for c in range(len(q)))
            else:
                s[i, j] = -sum((q[c] - m[c]) ** 2 for c in range(len(q)))
    return s


def loop_weights(s, ck, mode):
    s = np.asarray(s, dtype=np.float64)
    out = np.zeros_like(s)
    for i in range(s.shape[0]):
        row = s[i] / math.sqrt(ck) if mode == "standard" else s[i]
        mx = max(row)
        ex = [math.exp(v - mx) for v in row]
        tot = sum(ex)
        for j, e in enumerate(ex):
            out[i, j] = e / tot if mode == "standard" else e / (math.sqrt(ck) * tot)
    return out


def loop_readout(query, bank, mode, similarity):
    """Triple loop sum_p v[c, p] * W[q, p]; returns (value_r, value_h) as [C, H, W]."""
    a = np.asarray(query.detach().numpy(), dtype=np.float64)
    if a.ndim == 4:
        a = a[0]
    ck, h, w = a.shape
    wts = loop_weights(loop_affinity(query, bank, similarity), ck, mode)
    outs = []
    for stream in ("value_r", "value_h"):
        vals = [getattr(e, stream) for e in bank.entries]
        if any(v is None for v in vals):
            outs.append(None)
            continue
        locs = [m for v in vals for m in _locations(v)]
        cv = len(locs[0])
        out = np.zeros((cv, h * w))
        for q in range(h * w):
            for c in range(cv):
                acc = 0.0
                for p in range(len(locs)):
                    acc += locs[p][c] * wts[q, p]
                out[c, q] = acc
        outs.append(out.reshape(cv, h, w))
    return tuple(outs)


def random_bank(rng, ck, cv, shapes, direction="forward", capacity=16):
    bank = MemoryBank(direction, capacity)
    for i, (h, w) in enumerate(shapes, start=1):
        key = torch.as_tensor(rng.standard_normal((ck, h, w)))
        v_h = torch.as_tensor(rng.standard_normal((cv, h, w)))
        v_r = torch.as_tensor(rng.standard_normal((cv, h, w))) if direction == "forward" else None
        bank.write(MemoryEntry(key=key, value_h=v_h, value_r=v_r, frame_index=i, direction=direction))
    return bank


def central_difference(fn, x, h=1e-6):
    """Numerical gradient of scalar ``fn`` at float64 tensor ``x``."""
    x = x.detach().clone()
    grad = torch.zeros_like(x)
    flat, gflat = x.view(-1), grad.view(-1)
    with torch.no_grad():
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + h
            fp = float(fn(x))
            flat[i] = orig - h
            fm = float(fn(x))
            flat[i] = orig
            gflat[i] = (fp - fm) / (2 * h)
    return grad


def analytic_gradient(fn, x):
    x = x.detach().clone().requires_grad_(True)
    fn(x).backward()
    return x.grad.detach()


def max_relative_error(analytic, numeric):
    """Largest absolute discrepancy relative to the largest gradient magnitude."""
    scale = max(float(numeric.abs().max()), float(analytic.abs().max()), 1e-12)
    return float((analytic - numeric).abs().max()) / scale


def gradient_error(fn, x, h=1e-6):
    return max_relative_error(analytic_gradient(fn, x), central_difference(fn, x, h))


def bilinear_half_oracle(img):
    """Bilinear x0.5 on even dims with half-pixel centres equals 2x2 block averaging."""
    h, w = img.shape
    out = np.zeros((h // 2, w // 2))
    for y in range(h // 2):
        for x in range(w // 2):
            out[y, x] = (img[2 * y, 2 * x] + img[2 * y + 1, 2 * x]
                         + img[2 * y, 2 * x + 1] + img[2 * y + 1, 2 * x + 1]) / 4
    return out


def loop_mse(a, b):
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    acc = 0.0
    for x, y in zip(a, b):
        acc += (x - y) ** 2
    return acc / len(a)


def loop_psnr(a, b, peak=1.0):
    return 10 * math.log10(peak * peak / loop_mse(a, b))


def loop_ssim(x, y, window=11, sigma=1.5, k1=0.01, k2=0.03, data_range=1.0):
    """Reference SSIM: explicit weighted statistics per fully covered window."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    r = (window - 1) / 2
    g = [math.exp(-((i - r) ** 2) / (2 * sigma * sigma)) for i in range(window)]
    wts = [[g[i] * g[j] for j in range(window)] for i in range(window)]
    tot = sum(map(sum, wts))
    wts = [[v / tot for v in row] for row in wts]
    c1, c2 = (k1 * data_range) ** 2, (k2 * data_range) ** 2
    vals = []
    for top in range(x.shape[0] - window + 1):
        for left in range(x.shape[1] - window + 1):
            mx = my = 0.0
            for i in range(window):
                for j in range(window):
                    mx += wts[i][j] * x[top + i, left + j]
                    my += wts[i][j] * y[top + i, left + j]
            vx = vy = cxy = 0.0
            for i in range(window):
                for j in range(window):
                    dx = x[top + i, left + j] - mx
                    dy = y[top + i, left + j] - my
                    vx += wts[i][j] * dx * dx
                    vy += wts[i][j] * dy * dy
                    cxy += wts[i][j] * dx * dy
            vals.append(((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2)))
    return sum(vals) / len(vals)


def luma(frame):
    f = np.asarray(frame, dtype=np.float64)
    return 0.299 * f[0] + 0.587 * f[1] + 0.114 * f[2]


def loop_charbonnier(pred, target, eps):
    p = np.asarray(pred, dtype=np.float64).ravel()
    t = np.asarray(target, dtype=np.float64).ravel()
    return sum(math.sqrt((a - b) ** 2 + eps * eps) for a, b in zip(p, t)) / len(p)


def pixel_shuffle_oracle(a, r):
    """out[c, y*r + i, x*r + j] = a[c*r*r + i*r + j, y, x]."""
    cin, h, w = a.shape
    c = cin // (r * r)
    out = np.zeros((c, h * r, w * r))
    for ch in range(c):
        for y in range(h):
            for x in range(w):
                for i in range(r):
                    for j in range(r):
                        out[ch, y * r + i, x * r + j] = a[ch * r * r + i * r + j, y, x]
    return out
