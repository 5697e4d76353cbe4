"""Deblurring branch: downsampler, recurrent cells, fusion and upsampler."""

from __future__ import annotations

import math

import torch
import torch.nn as nn

from .blocks import ResidualBlock, ResidualDenseBlock, conv3x3, lrelu
from .errors import ValidationError


def _check_same_shape(**tensors):
    shapes = {name: tuple(t.shape) for name, t in tensors.items()}
    if len(set(shapes.values())) != 1:
        raise ValidationError(f"inputs must share a shape, got {shapes}")


class Downsampler(nn.Module):
    """Frame -> feature map at 1/stride resolution (strided convs + residual dense blocks)."""

    def __init__(self, in_ch, ch, stride=4, dense_blocks=1):
        super().__init__()
        self.stride = stride
        layers = [conv3x3(in_ch, ch), lrelu()]
        for _ in range(int(math.log2(stride))):
            layers += [conv3x3(ch, ch, stride=2), lrelu()]
        self.head = nn.Sequential(*layers)
        self.body = nn.Sequential(*[ResidualDenseBlock(ch) for _ in range(dense_blocks)])

    def forward(self, frame):
        h, w = frame.shape[-2:]
        if h % self.stride or w % self.stride:
            raise ValidationError(f"frame dims {h}x{w} not divisible by stride {self.stride}")
        return self.body(self.head(frame))


class RecurrentCell(nn.Module):
    """Channel concat of the inputs -> conv -> residual blocks.

    The same class serves as the backward cell (inputs x_i, x_{i+1},
    h_{i+1}^b, m^b, x_coarse_up) and the forward cell (inputs x_i, x_prev,
    h_{i-1}^f, m^f, m^b, x_coarse_up); only ``in_ch`` differs.
    """

    def __init__(self, in_ch, ch, res_blocks=2):
        super().__init__()
        self.entry = nn.Sequential(conv3x3(in_ch, ch), lrelu())
        self.body = nn.Sequential(*[ResidualBlock(ch) for _ in range(res_blocks)])

    def forward(self, *inputs):
        spatial = {tuple(t.shape[-2:]) for t in inputs}
        batch = {t.shape[0] for t in inputs}
        if len(spatial) != 1 or len(batch) != 1:
            raise ValidationError(
                f"recurrent cell inputs disagree in batch/spatial dims: {[tuple(t.shape) for t in inputs]}"
            )
        return self.body(self.entry(torch.cat(inputs, 1)))


class Fusion(nn.Module):
    """One convolution over ``[h_f, h_b]``."""

    def __init__(self, ch, kernel=3):
        super().__init__()
        self.conv = nn.Conv2d(2 * ch, ch, kernel, 1, kernel // 2)

    def forward(self, h_f, h_b):
        _check_same_shape(h_f=h_f, h_b=h_b)
        return self.conv(torch.cat([h_f, h_b], 1))


class Upsampler(nn.Module):
    """Hidden state -> restored frame via transposed convs plus a global residual.

    ``tail`` is the final layer; when its weights and bias are zero the
    output is exactly the input frame.
    """

    def __init__(self, ch, out_ch=3, stride=4):
        super().__init__()
        self.stride = stride
        layers = []
        for _ in range(int(math.log2(stride))):
            layers += [nn.ConvTranspose2d(ch, ch, 4, 2, 1), lrelu()]
        self.body = nn.Sequential(*layers)
        self.tail = conv3x3(ch, out_ch)

    def forward(self, h, frame):
        if h.shape[-2] * self.stride != frame.shape[-2] or h.shape[-1] * self.stride != frame.shape[-1]:
            raise ValidationError(
                f"hidden state {tuple(h.shape)} is not 1/{self.stride} of frame {tuple(frame.shape)}"
            )
        return frame + self.tail(self.body(h))

    def zero_tail_(self):
        nn.init.zeros_(self.tail.weight)
        nn.init.zeros_(self.tail.bias)
        return self


class DeblurBranch(nn.Module):
    def __init__(self, in_ch, ch, mem_ch, stride=4, dense_blocks=1, res_blocks=2, fuse_kernel=3):
        super().__init__()
        self.channels = ch
        self.downsampler = Downsampler(in_ch, ch, stride, dense_blocks)
        # x_i, x_{i+1}, h_{i+1}^b, m^b, x_coarse_up
        self.backward_cell = RecurrentCell(4 * ch + mem_ch, ch, res_blocks)
        # x_i, x_{i-1}, h_{i-1}^f, m^f, m^b, x_coarse_up
        self.forward_cell = RecurrentCell(4 * ch + 2 * mem_ch, ch, res_blocks)
        self.fusion = Fusion(ch, fuse_kernel)
        self.upsampler = Upsampler(ch, in_ch, stride)

    def downsample(self, frame):
        return self.downsampler(frame)

    def backward_step(self, x_i, x_next, h_next, m_b, x_coarse_up):
        _check_same_shape(x_i=x_i, x_next=x_next, h_next=h_next, x_coarse_up=x_coarse_up)
        return self.backward_cell(x_i, x_next, h_next, m_b, x_coarse_up)

    def forward_step(self, x_i, x_prev, h_prev, m_f, m_b, x_coarse_up):
        _check_same_shape(x_i=x_i, x_prev=x_prev, h_prev=h_prev, x_coarse_up=x_coarse_up)
        return self.forward_cell(x_i, x_prev, h_prev, m_f, m_b, x_coarse_up)

    def fuse(self, h_f, h_b):
        return self.fusion(h_f, h_b)

    def upsample(self, h, frame):
        return self.upsampler(h, frame)
