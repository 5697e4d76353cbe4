"""Attention heatmaps from recorded restoration traces.

A query location is given in pixel coordinates of the (padded) frame at
the trace's scale. Its attention row is split by memory entry, min-max
normalized over the whole row for display and nearest-upscaled from key
resolution to the memory frame's resolution.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from ..errors import UsageError


@dataclass
class Heatmap:
    """Display maps per memory entry plus the written files."""

    query_cell: tuple[int, int]
    maps: list[np.ndarray]  # per entry, [0, 1], at memory frame resolution
    entries: list[dict]
    argmax: tuple[int, int, int]  # (entry, y, x) in key-grid coordinates
    paths: list[Path] = field(default_factory=list)
    composite: Path | None = None


def _row_for(trace, query_location, stride):
    hq, wq = trace.query_shape
    y, x = query_location
    if not (0 <= y < hq * stride and 0 <= x < wq * stride):
        raise UsageError(
            f"query location {tuple(query_location)} outside the {hq * stride}x{wq * stride} "
            f"frame at scale {trace.scale}")
    cy, cx = int(y) // stride, int(x) // stride
    return (cy, cx), np.asarray(trace.weights)[cy * wq + cx]


def split_row(row: np.ndarray, entries: list[dict]) -> list[np.ndarray]:
    """Cut a flat attention row into per-entry ``[h, w]`` grids."""
    out, start = [], 0
    for e in entries:
        n = e["height"] * e["width"]
        out.append(row[start:start + n].reshape(e["height"], e["width"]))
        start += n
    if start != row.size:
        raise UsageError(f"trace row has {row.size} locations, bank geometry covers {start}")
    return out


def normalize_row(row: np.ndarray) -> np.ndarray:
    """Min-max scale to [0, 1]; a constant row maps to all ones."""
    lo, hi = float(row.min()), float(row.max())
    if hi == lo:
        return np.ones_like(row, dtype=np.float64)
    return (row - lo) / (hi - lo)


def attention_heatmap(trace, query_location, output_path, frames=None, stride: int = 16) -> Heatmap:
    """Write one heatmap PNG per memory entry and, with ``frames``, a side-by-side composite.

    ``frames`` maps scale to padded ``[N, C, H, W]`` input frames (as
    returned by :func:`memdeblur.io.load_trace`); when given, the key-grid
    stride is inferred from them. Per-entry files are named
    ``<stem>_entry<j>_s<scale>_f<frame>.png``; the composite is
    ``<stem>.png``.
    """
    if frames is not None and trace.scale in frames:
        stride = frames[trace.scale].shape[-2] // trace.query_shape[0]
    cell, row = _row_for(trace, query_location, stride)
    grids = split_row(normalize_row(row), trace.entries)
    flat = int(np.argmax(row))
    best = 0
    for e in trace.entries:
        n = e["height"] * e["width"]
        if flat < n:
            break
        flat -= n
        best += 1
    by, bx = divmod(flat, trace.entries[best]["width"])

    out = Path(output_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    stem = out.with_suffix("")
    maps, paths = [], []
    for j, (g, e) in enumerate(zip(grids, trace.entries)):
        up = np.kron(g, np.ones((stride, stride)))
        maps.append(up)
        p = Path(f"{stem}_entry{j}_s{e['scale']}_f{e['frame_index']}.png")
        Image.fromarray(np.rint(up * 255).astype(np.uint8), mode="L").save(p)
        paths.append(p)

    result = Heatmap(cell, maps, list(trace.entries), (best, int(by), int(bx)), paths)
    if frames is not None:
        result.composite = _composite(trace, cell, maps, frames, stride, stem.with_suffix(".png"))
    return result


def _composite(trace, cell, maps, frames, stride, path: Path) -> Path:
    from ..plotting import figure

    n = len(maps)
    fig, axes = figure(nrows=2, ncols=n + 1, size=(2.2 * (n + 1), 4.6))
    axes = np.asarray(axes).reshape(2, n + 1)
    query = frames[trace.scale][trace.frame_index - 1]
    axes[0, 0].imshow(np.clip(query.transpose(1, 2, 0), 0, 1))
    axes[0, 0].add_patch(_cell_patch(cell, stride))
    axes[0, 0].set_title(f"query s{trace.scale} f{trace.frame_index}", fontsize=8)
    axes[1, 0].axis("off")
    for j, (m, e) in enumerate(zip(maps, trace.entries), start=1):
        src = frames.get(e["scale"])
        if src is not None:
            axes[0, j].imshow(np.clip(src[e["frame_index"] - 1].transpose(1, 2, 0), 0, 1))
        axes[0, j].set_title(f"memory s{e['scale']} f{e['frame_index']}", fontsize=8)
        axes[1, j].imshow(m, cmap="inferno", vmin=0, vmax=1, interpolation="nearest")
    for ax in axes.flat:
        ax.set_xticks([])
        ax.set_yticks([])
    fig.savefig(path, dpi=120)
    import matplotlib.pyplot as plt

    plt.close(fig)
    return path


def _cell_patch(cell, stride):
    from matplotlib.patches import Rectangle

    cy, cx = cell
    return Rectangle((cx * stride - 0.5, cy * stride - 0.5), stride, stride,
                     fill=False, edgecolor="cyan", linewidth=1.5)


def select_trace(traces, frame_index: int, scale: int, bank: str = "forward"):
    for t in traces:
        if t.frame_index == frame_index and t.scale == scale and t.bank == bank:
            return t
    available = sorted({(t.bank, t.scale, t.frame_index) for t in traces})
    raise UsageError(f"no {bank} trace for frame {frame_index} at scale {scale}; available: {available}")
