"""Analytic multiply-accumulate accounting for a restoration run.

Layer shapes come from a forward pass on the ``meta`` device (no memory or
arithmetic); MACs per layer are then

    Conv2d           C_in/groups * C_out * k_h * k_w * H_out * W_out
    ConvTranspose2d  C_in * C_out/groups * k_h * k_w * H_in * W_in
    attention        Q * P * C_k (affinity) + Q * P * C_v per value stream

and are summed over the period-gated schedule of memory writes and reads
with FIFO capacity, mirroring :class:`memdeblur.pipeline.MemDeblurNet`.
Elementwise ops, softmax and bilinear resampling are not counted.
"""

from __future__ import annotations

import math
import time
from collections import defaultdict
from dataclasses import dataclass, field

import torch
import torch.nn as nn

from ..config import ModelConfig
from ..memory.bank import should_memorize
from ..pipeline import MemDeblurNet


@dataclass
class ComputeProfile:
    """``gmacs`` and ``breakdown`` are per frame (sequence total / N)."""

    gmacs: float
    params: int
    wall_seconds: float | None
    breakdown: dict[str, float] = field(default_factory=dict)
    total_macs: int = 0
    frames: int = 1
    frame_dims: tuple[int, int] = (0, 0)

    def to_dict(self) -> dict:
        return {"gmacs": self.gmacs, "params": self.params, "wall_seconds": self.wall_seconds,
                "total_macs": self.total_macs, "frames": self.frames,
                "frame_dims": list(self.frame_dims), "breakdown": dict(self.breakdown)}


def layer_macs(module: nn.Module, out: torch.Tensor, inp: torch.Tensor) -> int:
    if isinstance(module, nn.Conv2d):
        kh, kw = module.kernel_size
        per_out = module.in_channels // module.groups * kh * kw
        return per_out * out[0].numel()
    if isinstance(module, nn.ConvTranspose2d):
        kh, kw = module.kernel_size
        per_in = module.out_channels // module.groups * kh * kw
        return per_in * inp[0].numel()
    return 0


def module_macs(module: nn.Module, *inputs: torch.Tensor) -> int:
    """Sum of conv MACs for one call of ``module`` on batch-1 ``inputs``."""
    total = 0

    def hook(m, args, out):
        nonlocal total
        total += layer_macs(m, out, args[0])

    handles = [m.register_forward_hook(hook) for m in module.modules()
               if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d))]
    try:
        with torch.no_grad():
            module(*inputs)
    finally:
        for h in handles:
            h.remove()
    return total


def level_dims(frame_dims, scales: int, multiple: int) -> list[tuple[int, int]]:
    """Padded spatial dims of every pyramid level."""
    h, w = frame_dims
    dims = []
    for s in range(scales):
        if s:
            h, w = math.ceil(h / 2), math.ceil(w / 2)
        dims.append((h + (-h % multiple), w + (-w % multiple)))
    return dims


def _per_call_costs(model: MemDeblurNet, hw) -> dict[str, int]:
    cfg = model.config
    ch = cfg.base_channels
    fh, fw = hw[0] // cfg.downsample_stride, hw[1] // cfg.downsample_stride
    meta = dict(device="meta")
    frame = torch.empty(1, cfg.in_channels, *hw, **meta)
    x = torch.empty(1, ch, fh, fw, **meta)
    mem = torch.empty(1, model.memory_channels, fh, fw, **meta)
    br = model.branch
    costs = {
        "downsampler": module_macs(br.downsampler, frame),
        "backward_cell": module_macs(br.backward_cell, x, x, x, mem, x),
        "forward_cell": module_macs(br.forward_cell, x, x, x, mem, mem, x),
        "fusion": module_macs(br.fusion, x, x),
        "upsampler": module_macs(br.upsampler, x, frame),
    }
    if model.codec is not None:
        c = model.codec
        kh, kw = fh // cfg.encoder_stride, fw // cfg.encoder_stride
        v = torch.empty(1, cfg.value_channels, kh, kw, **meta)
        costs.update({
            "key_encoder": module_macs(c.key_encoder, x),
            "value_r_encoder": module_macs(c.value_r_encoder, torch.cat([x, x], 1)),
            "value_h_encoder": module_macs(c.value_h_encoder, torch.cat([x, x], 1)),
            "decoder_r": module_macs(c.decoder_r, v),
            "decoder_h": module_macs(c.decoder_h, v),
            "key_locations": kh * kw,
        })
    return costs


def count_macs(config: ModelConfig, frame_dims, n_frames: int, time_run: bool = False) -> ComputeProfile:
    """MACs of restoring ``n_frames`` frames of ``frame_dims`` (H, W) with ``config``.

    With ``time_run`` the real model is also run once on random input on
    CPU and its wall time recorded; only sensible for small inputs.
    """
    with torch.device("meta"):
        model = MemDeblurNet(config)
    params = sum(p.numel() for p in model.parameters())
    totals: dict[str, int] = defaultdict(int)
    mem_on = config.use_memory
    ck, cv = config.key_channels, config.value_channels
    fwd_bank: list[int] = []
    bwd_bank: list[int] = []

    def write(bank, locs):
        bank.append(locs)
        del bank[: max(0, len(bank) - config.capacity)]

    def attend(bank, q, streams):
        p = sum(bank)
        totals["attention"] += q * p * (ck + streams * cv)

    dims = level_dims(frame_dims, config.scales, config.pad_multiple)
    for s in range(config.scales, 0, -1):
        cost = _per_call_costs(model, dims[s - 1])
        q = cost.get("key_locations", 0)
        totals["downsampler"] += n_frames * cost["downsampler"]
        if mem_on:
            totals["key_encoder"] += n_frames * cost["key_encoder"]
        if config.bidirectional:
            for i in range(n_frames, 0, -1):
                if mem_on and bwd_bank:
                    attend(bwd_bank, q, 1)
                    totals["decoder_h"] += cost["decoder_h"]
                totals["backward_cell"] += cost["backward_cell"]
                if mem_on and should_memorize(i, s, config.periods):
                    totals["value_h_encoder"] += cost["value_h_encoder"]
                    write(bwd_bank, q)
        for i in range(1, n_frames + 1):
            if mem_on and fwd_bank:
                attend(fwd_bank, q, 2)
                totals["decoder_r"] += cost["decoder_r"]
                totals["decoder_h"] += cost["decoder_h"]
            if mem_on and config.bidirectional and bwd_bank:
                attend(bwd_bank, q, 1)
                totals["decoder_h"] += cost["decoder_h"]
            totals["forward_cell"] += cost["forward_cell"]
            totals["fusion"] += cost["fusion"]
            totals["upsampler"] += cost["upsampler"]
            totals["downsampler"] += cost["downsampler"]  # D(R_i)
            if mem_on and should_memorize(i, s, config.periods):
                totals["value_r_encoder"] += cost["value_r_encoder"]
                totals["value_h_encoder"] += cost["value_h_encoder"]
                write(fwd_bank, q)

    breakdown = {k: v / n_frames / 1e9 for k, v in sorted(totals.items())}
    wall = None
    if time_run:
        wall = _time_run(config, frame_dims, n_frames)
    return ComputeProfile(
        gmacs=sum(breakdown.values()), params=params, wall_seconds=wall, breakdown=breakdown,
        total_macs=sum(totals.values()), frames=n_frames, frame_dims=tuple(frame_dims),
    )


def _time_run(config, frame_dims, n_frames) -> float:
    from ..pipeline import restore_sequence

    gen = torch.Generator().manual_seed(0)
    model = MemDeblurNet(config).eval()
    frames = torch.rand(n_frames, config.in_channels, *frame_dims, generator=gen)
    start = time.perf_counter()
    restore_sequence(model, frames)
    return time.perf_counter() - start
