"""Multi-scale bidirectional restoration of a frame sequence.

Per scale, coarsest first: a backward sweep fills the hidden-feature-only
backward bank, then a forward sweep reads both banks, fuses the two hidden
states, restores each frame and writes (key, r-value, h-value) entries. The
two banks persist across scales, so finer scales attend over coarse-scale
memories.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .blocks import ResidualBlock, init_weights
from .branch import DeblurBranch
from .config import ModelConfig
from .errors import EmptyMemoryError, UsageError, ValidationError
from .memory.bank import BACKWARD, FORWARD, MemoryBank, MemoryEntry, readout, should_memorize
from .memory.codec import MemoryCodec


def reflect_pad(x: torch.Tensor, pad_h: int, pad_w: int) -> torch.Tensor:
    """Reflect-pad the bottom/right edges, reflecting repeatedly when the pad exceeds the size."""
    while pad_h > 0 or pad_w > 0:
        step_h = min(pad_h, x.shape[-2] - 1)
        step_w = min(pad_w, x.shape[-1] - 1)
        if step_h == 0 and step_w == 0:
            # 1-pixel dimension: reflection is undefined, replicate instead
            x = F.pad(x, (0, pad_w, 0, pad_h), mode="replicate")
            break
        lead = x.shape[:-3]
        flat = x.reshape(-1, *x.shape[-3:])
        flat = F.pad(flat, (0, step_w, 0, step_h), mode="reflect")
        x = flat.reshape(*lead, *flat.shape[-3:])
        pad_h -= step_h
        pad_w -= step_w
    return x


@dataclass
class ScalePyramid:
    """``levels[s-1]`` holds scale ``s`` as ``[B, N, C, H_pad, W_pad]``; ``sizes`` the unpadded dims."""

    levels: list[torch.Tensor]
    sizes: list[tuple[int, int]]

    def crop(self, scale: int, x: torch.Tensor) -> torch.Tensor:
        h, w = self.sizes[scale - 1]
        return x[..., :h, :w]

    def unpadded(self, scale: int) -> torch.Tensor:
        return self.crop(scale, self.levels[scale - 1])


def _as_sequence_batch(frames) -> tuple[torch.Tensor, bool]:
    if isinstance(frames, (list, tuple)):
        if not frames:
            raise UsageError("frame sequence is empty")
        frames = torch.stack([torch.as_tensor(np.asarray(f)) if not torch.is_tensor(f) else f for f in frames])
    elif not torch.is_tensor(frames):
        frames = torch.as_tensor(np.asarray(frames))
    if frames.dim() == 4:
        return frames.unsqueeze(0), True
    if frames.dim() != 5:
        raise ValidationError(f"expected [N,C,H,W] or [B,N,C,H,W] frames, got {tuple(frames.shape)}")
    return frames, False


def build_pyramid(frames, scales: int = 3, multiple: int = 16) -> ScalePyramid:
    """Bilinear half-resolution levels, each reflect-padded to ``multiple``."""
    if scales not in (1, 2, 3):
        raise UsageError(f"scales must be 1, 2 or 3, got {scales}")
    seq, _ = _as_sequence_batch(frames)
    if seq.shape[1] == 0:
        raise UsageError("frame sequence is empty")
    b, n, c = seq.shape[:3]
    levels, sizes = [], []
    cur = seq
    for s in range(1, scales + 1):
        if s > 1:
            h, w = math.ceil(cur.shape[-2] / 2), math.ceil(cur.shape[-1] / 2)
            flat = cur.reshape(b * n, c, *cur.shape[-2:])
            cur = F.interpolate(flat, size=(h, w), mode="bilinear", align_corners=False).reshape(b, n, c, h, w)
        h, w = cur.shape[-2:]
        sizes.append((h, w))
        levels.append(reflect_pad(cur, -h % multiple, -w % multiple))
    return ScalePyramid(levels, sizes)


@dataclass
class RecurrentState:
    h_f: torch.Tensor
    h_b: torch.Tensor


def reset_state(config: ModelConfig, feature_shape=None, batch: int = 1,
                dtype=torch.float32) -> tuple[RecurrentState, MemoryBank, MemoryBank]:
    """Zero hidden states and fresh, empty forward/backward banks."""
    if feature_shape is None:
        feature_shape = (config.pad_multiple // config.downsample_stride,) * 2
    shape = (batch, config.base_channels, *feature_shape)
    state = RecurrentState(torch.zeros(shape, dtype=dtype), torch.zeros(shape, dtype=dtype))
    return (state, MemoryBank(FORWARD, config.capacity), MemoryBank(BACKWARD, config.capacity))


@dataclass
class AttentionTrace:
    frame_index: int
    scale: int
    bank: str
    mode: str
    key_channels: int
    weights: np.ndarray  # [Q, P] for batch element 0
    query_shape: tuple[int, int]
    entries: list[dict]
    keys: list[np.ndarray] = field(default_factory=list)
    values_h: list[np.ndarray] = field(default_factory=list)
    values_r: list[np.ndarray | None] = field(default_factory=list)


@dataclass
class RestorationResult:
    """``restored[s-1]`` is scale ``s``, cropped to the unpadded level dims."""

    restored: list[torch.Tensor]
    pyramid: ScalePyramid
    forward_bank: MemoryBank
    backward_bank: MemoryBank
    attention_traces: list[AttentionTrace] = field(default_factory=list)


class MemDeblurNet(nn.Module):
    def __init__(self, config: ModelConfig | None = None):
        super().__init__()
        self.config = config = config or ModelConfig.toy()
        ch = config.base_channels
        if config.use_memory:
            self.codec = MemoryCodec(ch, config.key_channels, config.value_channels,
                                     config.decode_channels, config.encoder_stride,
                                     config.codec_block_count)
            mem_ch = self.codec.memory_channels
        else:
            self.codec = None
            mem_ch = 0
        self.memory_channels = mem_ch
        self.branch = DeblurBranch(config.in_channels, ch, mem_ch, config.downsample_stride,
                                   config.dense_block_count, config.res_block_count,
                                   config.fuse_kernel)
        self.reset_parameters()

    def reset_parameters(self):
        init_weights(self)
        for m in self.modules():
            if isinstance(m, ResidualBlock):
                init_weights(m, 0.1)
        # small final layer: close to the identity on frames at initialization
        init_weights(self.branch.upsampler.tail, 0.01)

    def zero_residual_(self):
        """Zero the final upsampler layer so the network is the identity on frames."""
        self.branch.upsampler.zero_tail_()
        return self

    def _memory(self, bank, key, like, scale, frame_index, traces):
        if self.codec is None:
            return like.new_zeros(like.shape[0], 0, *like.shape[-2:])
        try:
            out = readout(bank, key, self.config.attention_mode, self.config.similarity)
        except EmptyMemoryError:
            return self.codec.zero_memory(like)
        if traces is not None:
            traces.append(_make_trace(bank, out.weights, key, scale, frame_index, self.config))
        return self.codec.decode(out.value_r, out.value_h)

    def forward(self, frames, trace: bool = False, banks=None) -> RestorationResult:
        cfg = self.config
        pyramid = build_pyramid(frames, cfg.scales, cfg.pad_multiple)
        seq = pyramid.levels[0]
        b, n = seq.shape[:2]
        if banks is None:
            _, fwd_bank, bwd_bank = reset_state(cfg)
        else:
            fwd_bank, bwd_bank = banks
        traces = [] if trace else None
        br, codec = self.branch, self.codec
        restored = [None] * cfg.scales
        coarse = None  # D(R^{s+1}) per frame

        for s in range(cfg.scales, 0, -1):
            level = pyramid.levels[s - 1]
            xs = [br.downsample(level[:, i]) for i in range(n)]
            zero = torch.zeros_like(xs[0])
            keys = [codec.encode_key(x) for x in xs] if codec is not None else [None] * n
            if coarse is None:
                ups = [zero] * n
            else:
                ups = [F.interpolate(c, size=zero.shape[-2:], mode="bilinear", align_corners=False)
                       for c in coarse]

            h_b = [zero] * n
            if cfg.bidirectional:
                h = zero
                for i in range(n - 1, -1, -1):
                    x_next = xs[i + 1] if i + 1 < n else zero
                    m_b = self._memory(bwd_bank, keys[i], zero, s, i + 1, traces)
                    h = br.backward_step(xs[i], x_next, h, m_b, ups[i])
                    h_b[i] = h
                    if codec is not None and should_memorize(i + 1, s, cfg.periods):
                        bwd_bank.write(MemoryEntry(
                            key=keys[i], value_h=codec.encode_value_h(xs[i], h),
                            frame_index=i + 1, scale=s, direction=BACKWARD))

            h_f, x_prev = zero, zero
            outs, feats = [], []
            for i in range(n):
                m_f = self._memory(fwd_bank, keys[i], zero, s, i + 1, traces)
                m_b = self._memory(bwd_bank, keys[i], zero, s, i + 1, traces) if cfg.bidirectional \
                    else torch.zeros_like(m_f)
                carry = zero if cfg.drop_recurrent_carry else h_f
                h_f = br.forward_step(xs[i], x_prev, carry, m_f, m_b, ups[i])
                h = br.fuse(h_f, h_b[i])
                r_frame = br.upsample(h, level[:, i])
                r_feat = br.downsample(r_frame)
                if codec is not None and should_memorize(i + 1, s, cfg.periods):
                    fwd_bank.write(MemoryEntry(
                        key=keys[i], value_r=codec.encode_value_r(xs[i], r_feat),
                        value_h=codec.encode_value_h(xs[i], h),
                        frame_index=i + 1, scale=s, direction=FORWARD))
                x_prev = r_feat if cfg.prev_from_restored else xs[i]
                outs.append(r_frame)
                feats.append(r_feat)
            restored[s - 1] = pyramid.crop(s, torch.stack(outs, 1))
            coarse = feats

        return RestorationResult(restored, pyramid, fwd_bank, bwd_bank, traces or [])


def _make_trace(bank, weights, key, scale, frame_index, cfg) -> AttentionTrace:
    def np0(t):
        return None if t is None else t[0].detach().cpu().double().numpy()

    return AttentionTrace(
        frame_index=frame_index, scale=scale, bank=bank.direction, mode=cfg.attention_mode,
        key_channels=cfg.key_channels, weights=np0(weights),
        query_shape=tuple(key.shape[-2:]), entries=bank.geometry(),
        keys=[np0(e.key) for e in bank.entries],
        values_h=[np0(e.value_h) for e in bank.entries],
        values_r=[np0(e.value_r) for e in bank.entries],
    )


def restore_sequence(model: MemDeblurNet, frames, trace: bool = False) -> RestorationResult:
    """Restore ``frames`` (``[N,C,H,W]`` or ``[B,N,C,H,W]``) without tracking gradients.

    For unbatched input the restored tensors are unbatched too.
    """
    seq, single = _as_sequence_batch(frames)
    param = next(model.parameters())
    seq = seq.to(dtype=param.dtype, device=param.device)
    with torch.no_grad():
        result = model(seq, trace=trace)
    if single:
        result.restored = [r[0] for r in result.restored]
    return result
