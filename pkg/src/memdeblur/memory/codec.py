"""Learned projections into and out of memory space.

The encoders map a feature map (optionally concatenated with a second
feature map) to a ``stride``-times smaller key or value; the decoders lift a
readout back to feature resolution with a single pixel shuffle.
"""

from __future__ import annotations

import torch
import torch.nn as nn

from ..blocks import ResidualBlock, conv3x3, lrelu, pixel_shuffle
from ..errors import ValidationError


class MemoryEncoder(nn.Module):
    """Strided patchify conv, residual blocks, 3x3 projection.

    The key encoder and both value encoders share this architecture but
    never share parameters.
    """

    def __init__(self, in_ch, out_ch, mid_ch, stride=4, blocks=1):
        super().__init__()
        self.stride = stride
        self.entry = nn.Conv2d(in_ch, mid_ch, stride, stride)
        self.act = lrelu()
        self.body = nn.Sequential(*[ResidualBlock(mid_ch) for _ in range(blocks)])
        self.proj = conv3x3(mid_ch, out_ch)

    def forward(self, x):
        h, w = x.shape[-2:]
        if h % self.stride or w % self.stride:
            raise ValidationError(f"feature dims {h}x{w} not divisible by encoder stride {self.stride}")
        return self.proj(self.body(self.act(self.entry(x))))


class MemoryDecoder(nn.Module):
    def __init__(self, in_ch, out_ch, upscale=4, blocks=1):
        super().__init__()
        self.upscale = upscale
        self.body = nn.Sequential(*[ResidualBlock(in_ch) for _ in range(blocks)])
        self.expand = conv3x3(in_ch, out_ch * upscale * upscale)

    def forward(self, v):
        return pixel_shuffle(self.expand(self.body(v)), self.upscale)


class MemoryCodec(nn.Module):
    """K, V_r, V_h encoders and G_r, G_h decoders."""

    def __init__(self, feat_ch, key_ch, value_ch, decode_ch, stride=4, blocks=1):
        super().__init__()
        self.key_channels = key_ch
        self.value_channels = value_ch
        self.decode_channels = decode_ch
        self.key_encoder = MemoryEncoder(feat_ch, key_ch, feat_ch, stride, blocks)
        self.value_r_encoder = MemoryEncoder(2 * feat_ch, value_ch, feat_ch, stride, blocks)
        self.value_h_encoder = MemoryEncoder(2 * feat_ch, value_ch, feat_ch, stride, blocks)
        self.decoder_r = MemoryDecoder(value_ch, decode_ch, stride, blocks)
        self.decoder_h = MemoryDecoder(value_ch, decode_ch, stride, blocks)

    @property
    def memory_channels(self) -> int:
        return 2 * self.decode_channels

    def encode_key(self, x):
        return self.key_encoder(x)

    def encode_value_r(self, x, r):
        if x.shape != r.shape:
            raise ValidationError(f"x {tuple(x.shape)} and r {tuple(r.shape)} differ in shape")
        return self.value_r_encoder(torch.cat([x, r], 1))

    def encode_value_h(self, x, h):
        if x.shape != h.shape:
            raise ValidationError(f"x {tuple(x.shape)} and h {tuple(h.shape)} differ in shape")
        return self.value_h_encoder(torch.cat([x, h], 1))

    def decode(self, value_r, value_h):
        """Decode both streams and concatenate ``[m_r, m_h]``; a missing r stream is zero-filled."""
        if value_r is not None and value_r.shape[-2:] != value_h.shape[-2:]:
            raise ValidationError("value_r and value_h differ in spatial dims")
        m_h = self.decoder_h(value_h)
        m_r = torch.zeros_like(m_h) if value_r is None else self.decoder_r(value_r)
        return torch.cat([m_r, m_h], 1)

    def zero_memory(self, like):
        """Decoded-memory placeholder for an empty bank, at the resolution of ``like``."""
        b, _, h, w = like.shape
        return like.new_zeros(b, self.memory_channels, h, w)
