"""Key-value memory of blurry-sharp feature pairs.

Keys and values are ``[B, C, H, W]`` tensors (a rank-3 ``[C, H, W]`` tensor is
accepted wherever a single sample is meant). Entries written at different
scales have different spatial sizes; each entry is flattened on its own and
the location axes are concatenated in write order, so a query at one scale
can attend over memories written at any other scale.
"""

from __future__ import annotations

import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field

import torch

from ..errors import ConfigError, EmptyMemoryError, UsageError, ValidationError

FORWARD = "forward"
BACKWARD = "backward"
DIRECTIONS = (FORWARD, BACKWARD)


def should_memorize(frame_index: int, scale: int, periods: Mapping[int, int] | Sequence[int]) -> bool:
    """Whether frame ``frame_index`` (1-based) is written to memory at ``scale``.

    ``periods`` maps scale -> period, either as a mapping or as a sequence
    indexed by ``scale - 1``.
    """
    if scale not in (1, 2, 3):
        raise ConfigError(f"unknown scale {scale}")
    try:
        period = periods[scale] if isinstance(periods, Mapping) else periods[scale - 1]
    except (KeyError, IndexError) as exc:
        raise ConfigError(f"no memorization period for scale {scale}") from exc
    if period < 1:
        raise ConfigError(f"period for scale {scale} must be >= 1, got {period}")
    if frame_index < 1:
        raise ValidationError(f"frame_index is 1-based, got {frame_index}")
    return (frame_index - 1) % period == 0


def _batched(t: torch.Tensor, name: str) -> torch.Tensor:
    if t.dim() == 3:
        return t.unsqueeze(0)
    if t.dim() != 4:
        raise ValidationError(f"{name} must be rank 3 or 4, got shape {tuple(t.shape)}")
    return t


@dataclass
class MemoryEntry:
    key: torch.Tensor
    value_h: torch.Tensor
    value_r: torch.Tensor | None = None
    frame_index: int = 1
    scale: int = 1
    direction: str = FORWARD

    def __post_init__(self):
        if self.direction not in DIRECTIONS:
            raise ValidationError(f"direction must be one of {DIRECTIONS}")
        if self.scale not in (1, 2, 3):
            raise ValidationError(f"scale must be 1, 2 or 3, got {self.scale}")
        if self.frame_index < 1:
            raise ValidationError(f"frame_index is 1-based, got {self.frame_index}")
        self.key = _batched(self.key, "key")
        self.value_h = _batched(self.value_h, "value_h")
        if self.value_r is not None:
            self.value_r = _batched(self.value_r, "value_r")
        if self.direction == FORWARD and self.value_r is None:
            raise ValidationError("forward entries carry both value_r and value_h")
        if self.direction == BACKWARD and self.value_r is not None:
            raise ValidationError("backward entries store hidden-feature values only")
        for name in ("value_h", "value_r"):
            v = getattr(self, name)
            if v is None:
                continue
            if v.shape[0] != self.key.shape[0] or v.shape[-2:] != self.key.shape[-2:]:
                raise ValidationError(
                    f"{name} shape {tuple(v.shape)} does not match key shape {tuple(self.key.shape)}"
                )

    @property
    def spatial(self) -> tuple[int, int]:
        return tuple(self.key.shape[-2:])

    @property
    def locations(self) -> int:
        h, w = self.spatial
        return h * w


@dataclass
class MemoryBank:
    """FIFO-bounded store; ``history`` logs every write, evicted or not."""

    direction: str = FORWARD
    capacity: int = 5
    entries: list[MemoryEntry] = field(default_factory=list)
    history: list[tuple[int, int]] = field(default_factory=list)

    def __post_init__(self):
        if self.direction not in DIRECTIONS:
            raise ValidationError(f"direction must be one of {DIRECTIONS}")
        if self.capacity < 1:
            raise ConfigError(f"capacity must be >= 1, got {self.capacity}")

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def empty(self) -> bool:
        return not self.entries

    @property
    def locations(self) -> int:
        return sum(e.locations for e in self.entries)

    def write(self, entry: MemoryEntry) -> "MemoryBank":
        if entry.direction != self.direction:
            raise UsageError(f"cannot write a {entry.direction} entry into a {self.direction} bank")
        if self.entries:
            ref = self.entries[0]
            if entry.key.shape[:2] != ref.key.shape[:2]:
                raise ValidationError("key batch/channel dims differ from existing entries")
            if entry.value_h.shape[1] != ref.value_h.shape[1]:
                raise ValidationError("value channel width differs from existing entries")
        self.entries.append(entry)
        self.history.append((entry.scale, entry.frame_index))
        if len(self.entries) > self.capacity:
            del self.entries[: len(self.entries) - self.capacity]
        return self

    def stacked_keys(self) -> torch.Tensor:
        """Memory keys as ``[B, C_k, P]`` in write order."""
        return torch.cat([e.key.flatten(2) for e in self.entries], dim=2)

    def stacked_values(self, stream: str) -> torch.Tensor | None:
        vals = [getattr(e, f"value_{stream}") for e in self.entries]
        if any(v is None for v in vals):
            return None
        return torch.cat([v.flatten(2) for v in vals], dim=2)

    def geometry(self) -> list[dict]:
        return [
            {"frame_index": e.frame_index, "scale": e.scale, "direction": e.direction,
             "height": e.spatial[0], "width": e.spatial[1]}
            for e in self.entries
        ]


def affinity(query: torch.Tensor, bank: MemoryBank, similarity: str = "dot") -> torch.Tensor:
    """Similarity between every query location and every memory location.

    Returns ``[Q, P]`` for a rank-3 query and ``[B, Q, P]`` for a batched one.
    """
    if bank.empty:
        raise EmptyMemoryError("memory bank is empty")
    single = query.dim() == 3
    q = _batched(query, "query").flatten(2)  # B, C, Q
    mem = bank.stacked_keys()  # B, C, P
    if q.shape[1] != mem.shape[1]:
        raise ValidationError(f"query has {q.shape[1]} key channels, memory has {mem.shape[1]}")
    if q.shape[0] != mem.shape[0]:
        raise ValidationError("query and memory batch sizes differ")
    if similarity == "dot":
        s = q.transpose(1, 2) @ mem
    elif similarity == "neg_l2":
        # -(|q|^2 - 2 q.m + |m|^2)
        qq = q.pow(2).sum(1).unsqueeze(2)
        mm = mem.pow(2).sum(1).unsqueeze(1)
        s = 2 * (q.transpose(1, 2) @ mem) - qq - mm
    else:
        raise ConfigError(f"unknown similarity {similarity!r}")
    return s[0] if single else s


def attention_weights(s: torch.Tensor, key_channels: int, mode: str = "verbatim") -> torch.Tensor:
    """Normalize affinities over the memory axis (last dim).

    ``verbatim`` divides the softmax by sqrt(C_k) so rows sum to 1/sqrt(C_k);
    ``standard`` is the usual softmax(S / sqrt(C_k)).
    """
    if key_channels < 1:
        raise ValidationError(f"key_channels must be >= 1, got {key_channels}")
    scale = math.sqrt(key_channels)
    if mode == "verbatim":
        return torch.softmax(s, dim=-1) / scale
    if mode == "standard":
        return torch.softmax(s / scale, dim=-1)
    raise ConfigError(f"unknown attention mode {mode!r}")


@dataclass
class Readout:
    value_r: torch.Tensor | None
    value_h: torch.Tensor
    weights: torch.Tensor


def readout(bank: MemoryBank, query: torch.Tensor, mode: str = "verbatim",
            similarity: str = "dot") -> Readout:
    """Attention-weighted sum of memory values for every query location.

    One weight matrix serves both value streams. ``value_r`` is ``None`` for
    backward banks.
    """
    single = query.dim() == 3
    q = _batched(query, "query")
    s = affinity(q, bank, similarity)
    w = attention_weights(s, q.shape[1], mode)  # B, Q, P
    b, _, h, wd = q.shape

    def gather(stream: str) -> torch.Tensor | None:
        mem = bank.stacked_values(stream)  # B, C_v, P
        if mem is None:
            return None
        out = (mem @ w.transpose(1, 2)).reshape(b, mem.shape[1], h, wd)
        return out[0] if single else out

    return Readout(gather("r"), gather("h"), w[0] if single else w)
