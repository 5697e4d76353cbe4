"""Convolutional building blocks shared by both branches."""

import torch
import torch.nn as nn
import torch.nn.functional as F


@torch.no_grad()
def init_weights(module, scale=1.0):
    """Kaiming-normal conv weights (leaky-relu gain) times ``scale``, zero biases."""
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
            nn.init.kaiming_normal_(m.weight, a=0.1, mode="fan_in", nonlinearity="leaky_relu")
            m.weight.mul_(scale)
            if m.bias is not None:
                nn.init.zeros_(m.bias)


def conv3x3(in_ch, out_ch, stride=1):
    return nn.Conv2d(in_ch, out_ch, 3, stride, 1)


def lrelu():
    return nn.LeakyReLU(0.1)


class ResidualBlock(nn.Module):
    """conv-lrelu-conv with an identity skip, no normalization."""

    def __init__(self, ch, res_scale=1.0):
        super().__init__()
        self.conv1 = conv3x3(ch, ch)
        self.conv2 = conv3x3(ch, ch)
        self.act = lrelu()
        self.res_scale = res_scale

    def forward(self, x):
        return x + self.res_scale * self.conv2(self.act(self.conv1(x)))


class DenseLayer(nn.Module):
    def __init__(self, in_ch, growth):
        super().__init__()
        self.conv = conv3x3(in_ch, growth)
        self.act = lrelu()

    def forward(self, x):
        return torch.cat([x, self.act(self.conv(x))], 1)


class ResidualDenseBlock(nn.Module):
    """Densely connected convs, 1x1 local fusion and a local residual."""

    def __init__(self, ch, growth=None, layers=3):
        super().__init__()
        growth = growth or max(ch // 2, 1)
        self.dense = nn.Sequential(*[DenseLayer(ch + i * growth, growth) for i in range(layers)])
        self.fusion = nn.Conv2d(ch + layers * growth, ch, 1)

    def forward(self, x):
        return x + self.fusion(self.dense(x))


def pixel_shuffle(x, factor):
    """Depth-to-space.

    Channel ``c * f**2 + i * f + j`` of the input lands at output channel
    ``c``, row ``y * f + i``, column ``x * f + j`` (row-major within each
    ``f x f`` block). This matches ``torch.nn.functional.pixel_shuffle``.
    """
    return F.pixel_shuffle(x, factor)
