"""Frame directories, synthetic data, and the binary container used for
checkpoints, attention traces and memory-bank dumps.

Container layout (all integers little-endian)::

    8 bytes   magic b"MEMDEBLR"
    u32       format version
    u64       header length L
    L bytes   UTF-8 JSON header (sorted keys, compact separators)
    ...       array payload: each array as contiguous little-endian float32

The header's ``arrays`` list gives ``name``, ``shape`` and byte ``offset``
(relative to the payload start) for every array, in payload order.
"""

from __future__ import annotations

import base64
import json
import os
import re
import shutil
import struct
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .config import ModelConfig, TrainConfig
from .errors import SequenceIOError, UsageError, ValidationError
from .memory.bank import MemoryBank, MemoryEntry

MAGIC = b"MEMDEBLR"
FORMAT_VERSION = 1
FRAME_PATTERN = "frame_{:06d}.png"
_FRAME_RE = re.compile(r"^frame_(\d{6})\.png$")


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("MEMDEBLUR_THREADS", "4")))
    except ValueError:
        return 1


# --------------------------------------------------------------------------
# container

def write_container(path, header: dict, arrays: dict[str, np.ndarray]) -> None:
    layout, chunks, offset = [], [], 0
    for name, arr in arrays.items():
        data = np.ascontiguousarray(np.asarray(arr, dtype="<f4")).tobytes()
        layout.append({"name": name, "shape": list(np.shape(arr)), "offset": offset})
        chunks.append(data)
        offset += len(data)
    header = dict(header, arrays=layout)
    raw = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", FORMAT_VERSION, len(raw)))
        fh.write(raw)
        for c in chunks:
            fh.write(c)


def read_container(path) -> tuple[dict, dict[str, np.ndarray]]:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise SequenceIOError(f"cannot read {path}: {exc}") from exc
    if blob[:8] != MAGIC:
        raise SequenceIOError(f"{path} is not a memdeblur container")
    version, hlen = struct.unpack_from("<IQ", blob, 8)
    if version != FORMAT_VERSION:
        raise SequenceIOError(f"{path}: unsupported format version {version}")
    start = 8 + 12
    header = json.loads(blob[start:start + hlen])
    payload = start + hlen
    arrays = {}
    for entry in header.pop("arrays"):
        count = int(np.prod(entry["shape"], dtype=np.int64))
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=payload + entry["offset"])
        arrays[entry["name"]] = arr.reshape(entry["shape"]).copy()
    return header, arrays


# --------------------------------------------------------------------------
# checkpoints

def _rng_state(state) -> dict:
    return {
        "numpy": state.rng.bit_generator.state,
        "torch": base64.b64encode(torch.get_rng_state().numpy().tobytes()).decode(),
    }


def checkpoint_payload(state) -> tuple[dict, dict[str, np.ndarray]]:
    model, opt = state.model, state.optimizer
    arrays: dict[str, np.ndarray] = {}
    names = []
    for name, p in model.named_parameters():
        names.append(name)
        arrays[f"param/{name}"] = p.detach().cpu().numpy()
    steps = {}
    params = dict(model.named_parameters())
    for name, p in params.items():
        st = opt.state.get(p)
        if not st:
            continue
        steps[name] = float(st["step"])
        arrays[f"adam/exp_avg/{name}"] = st["exp_avg"].detach().cpu().numpy()
        arrays[f"adam/exp_avg_sq/{name}"] = st["exp_avg_sq"].detach().cpu().numpy()
    header = {
        "kind": "checkpoint",
        "model_config": model.config.to_dict(),
        "train_config": state.train_config.to_dict(),
        "epoch": state.epoch,
        "step": state.step,
        "losses": list(state.losses),
        "metrics": list(state.metrics),
        "rng": _rng_state(state),
        "adam_steps": steps,
        "lr": [g["lr"] for g in opt.param_groups],
        "param_names": names,
    }
    return header, arrays


def save_checkpoint(state, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header, arrays = checkpoint_payload(state)
    write_container(path, header, arrays)
    return path


def load_checkpoint(path, restore_rng: bool = True):
    """Rebuild a :class:`memdeblur.training.TrainState` from ``path``."""
    from .pipeline import MemDeblurNet
    from .training import TrainState, make_optimizer

    header, arrays = read_container(path)
    if header.get("kind") != "checkpoint":
        raise SequenceIOError(f"{path} is not a checkpoint")
    mcfg = ModelConfig.from_dict(header["model_config"])
    tcfg = TrainConfig.from_dict(header["train_config"])
    model = MemDeblurNet(mcfg)
    params = dict(model.named_parameters())
    with torch.no_grad():
        for name in header["param_names"]:
            params[name].copy_(torch.from_numpy(arrays[f"param/{name}"]))
    opt = make_optimizer(model, tcfg)
    for group, lr in zip(opt.param_groups, header["lr"]):
        group["lr"] = lr
    for name, step in header["adam_steps"].items():
        opt.state[params[name]] = {
            "step": torch.tensor(step),
            "exp_avg": torch.from_numpy(arrays[f"adam/exp_avg/{name}"]),
            "exp_avg_sq": torch.from_numpy(arrays[f"adam/exp_avg_sq/{name}"]),
        }
    rng = np.random.default_rng()
    rng.bit_generator.state = header["rng"]["numpy"]
    if restore_rng:
        raw = base64.b64decode(header["rng"]["torch"])
        torch.set_rng_state(torch.from_numpy(np.frombuffer(raw, dtype=np.uint8).copy()))
    return TrainState(model, opt, rng, tcfg, header["epoch"], header["step"],
                      list(header["losses"]), list(header["metrics"]))


def load_model(path):
    """Model only, in eval mode, from a checkpoint."""
    state = load_checkpoint(path, restore_rng=False)
    return state.model.eval()


# --------------------------------------------------------------------------
# memory banks and attention traces

def bank_arrays(bank: MemoryBank, prefix: str = "") -> tuple[list[dict], dict[str, np.ndarray]]:
    meta, arrays = [], {}
    for j, e in enumerate(bank.entries):
        meta.append({"direction": e.direction, "scale": e.scale, "frame_index": e.frame_index,
                     "has_value_r": e.value_r is not None})
        arrays[f"{prefix}entry{j}/key"] = e.key.detach().cpu().numpy()
        arrays[f"{prefix}entry{j}/value_h"] = e.value_h.detach().cpu().numpy()
        if e.value_r is not None:
            arrays[f"{prefix}entry{j}/value_r"] = e.value_r.detach().cpu().numpy()
    return meta, arrays


def save_bank(bank: MemoryBank, path) -> None:
    meta, arrays = bank_arrays(bank)
    write_container(path, {"kind": "memory_bank", "direction": bank.direction,
                           "capacity": bank.capacity, "entries": meta}, arrays)


def load_bank(path) -> MemoryBank:
    header, arrays = read_container(path)
    if header.get("kind") != "memory_bank":
        raise SequenceIOError(f"{path} is not a memory bank dump")
    bank = MemoryBank(header["direction"], header["capacity"])
    for j, m in enumerate(header["entries"]):
        get = lambda k: torch.from_numpy(arrays[f"entry{j}/{k}"])  # noqa: E731
        bank.write(MemoryEntry(key=get("key"), value_h=get("value_h"),
                               value_r=get("value_r") if m["has_value_r"] else None,
                               frame_index=m["frame_index"], scale=m["scale"],
                               direction=m["direction"]))
    return bank


def save_trace(result, path) -> None:
    """Write attention traces plus the padded input pyramid of batch element 0."""
    records, arrays = [], {}
    for s, level in enumerate(result.pyramid.levels, start=1):
        arrays[f"frames/scale{s}"] = level[0].detach().cpu().numpy()
    for t_idx, tr in enumerate(result.attention_traces):
        pre = f"trace{t_idx}/"
        arrays[pre + "weights"] = tr.weights
        for j, k in enumerate(tr.keys):
            arrays[f"{pre}entry{j}/key"] = k
            arrays[f"{pre}entry{j}/value_h"] = tr.values_h[j]
            if tr.values_r[j] is not None:
                arrays[f"{pre}entry{j}/value_r"] = tr.values_r[j]
        records.append({"frame_index": tr.frame_index, "scale": tr.scale, "bank": tr.bank,
                        "mode": tr.mode, "key_channels": tr.key_channels,
                        "query_shape": list(tr.query_shape), "entries": tr.entries})
    header = {"kind": "attention_trace", "traces": records,
              "sizes": [list(sz) for sz in result.pyramid.sizes]}
    write_container(path, header, arrays)


def load_trace(path):
    """Returns ``(traces, frames)``; ``frames[s]`` is the padded ``[N, C, H, W]`` level ``s``."""
    from .pipeline import AttentionTrace

    header, arrays = read_container(path)
    if header.get("kind") != "attention_trace":
        raise SequenceIOError(f"{path} is not an attention trace")
    traces = []
    for t_idx, rec in enumerate(header["traces"]):
        pre = f"trace{t_idx}/"
        n = len(rec["entries"])
        traces.append(AttentionTrace(
            frame_index=rec["frame_index"], scale=rec["scale"], bank=rec["bank"], mode=rec["mode"],
            key_channels=rec["key_channels"], weights=arrays[pre + "weights"].astype(np.float64),
            query_shape=tuple(rec["query_shape"]), entries=rec["entries"],
            keys=[arrays[f"{pre}entry{j}/key"] for j in range(n)],
            values_h=[arrays[f"{pre}entry{j}/value_h"] for j in range(n)],
            values_r=[arrays.get(f"{pre}entry{j}/value_r") for j in range(n)],
        ))
    frames = {int(k.removeprefix("frames/scale")): v for k, v in arrays.items() if k.startswith("frames/")}
    return traces, frames


# --------------------------------------------------------------------------
# frame directories

def _read_png(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    except OSError as exc:
        raise SequenceIOError(f"cannot read frame {path}: {exc}") from exc
    return arr.transpose(2, 0, 1)


def list_frames(path) -> list[Path]:
    root = Path(path)
    if not root.is_dir():
        raise SequenceIOError(f"{root} is not a directory")
    found = {}
    for p in root.iterdir():
        m = _FRAME_RE.match(p.name)
        if m:
            found[int(m.group(1))] = p
    if not found:
        raise SequenceIOError(f"no frame_%06d.png files in {root}")
    for i in range(max(found) + 1):
        if i not in found:
            raise SequenceIOError(f"gap in frame numbering: {root / FRAME_PATTERN.format(i)} (index {i}) missing")
    return [found[i] for i in range(len(found))]


def load_sequence(path, as_uint8: bool = False) -> np.ndarray:
    """Frames of a directory as ``[N, 3, H, W]`` float32 in [0, 1]."""
    paths = list_frames(path)
    with ThreadPoolExecutor(worker_count()) as pool:
        frames = list(pool.map(_read_png, paths))
    first = frames[0].shape
    for p, f in zip(paths, frames):
        if f.shape != first:
            raise SequenceIOError(f"mixed frame dims: {p} is {f.shape[1:]}, {paths[0]} is {first[1:]}")
    seq = np.stack(frames)
    return seq if as_uint8 else seq.astype(np.float32) / 255.0


def to_uint8(frames) -> np.ndarray:
    arr = frames.detach().cpu().numpy() if hasattr(frames, "detach") else np.asarray(frames)
    if arr.dtype == np.uint8:
        return arr
    return np.clip(np.rint(arr.astype(np.float64) * 255.0), 0, 255).astype(np.uint8)


def save_sequence(frames, path) -> list[Path]:
    """Write ``[N, 3, H, W]`` frames (float in [0, 1] or uint8) as PNGs."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    arr = to_uint8(frames)
    out = []
    for i, f in enumerate(arr):
        p = root / FRAME_PATTERN.format(i)
        Image.fromarray(f.transpose(1, 2, 0)).save(p)
        out.append(p)
    return out


# --------------------------------------------------------------------------
# synthetic data

def synthesize_blur(sharp, window: int):
    """Blur as the mean of ``window`` consecutive sharp frames.

    Returns ``(blurry, targets)`` with ``targets`` the centre frames; both
    have ``len(sharp) - window + 1`` frames.
    """
    sharp = np.asarray(sharp)
    if window < 1 or window % 2 == 0:
        raise UsageError(f"window must be a positive odd integer, got {window}")
    if len(sharp) < window:
        raise UsageError(f"window {window} needs at least {window} frames, got {len(sharp)}")
    half = window // 2
    n = len(sharp) - window + 1
    src = sharp.astype(np.float64)
    csum = np.concatenate([np.zeros_like(src[:1]), np.cumsum(src, axis=0)])
    blurry = (csum[window:window + n] - csum[:n]) / window
    return blurry, sharp[half:half + n].copy()


def synthesize_dataset(sharp_dir, out_dir, window: int) -> tuple[Path, Path]:
    """Paired ``blurry/`` and ``sharp/`` directories from a sharp sequence."""
    out = Path(out_dir)
    if window == 1:
        # byte-identical copies
        paths = list_frames(sharp_dir)
        for sub in ("blurry", "sharp"):
            (out / sub).mkdir(parents=True, exist_ok=True)
            for p in paths:
                shutil.copyfile(p, out / sub / p.name)
        return out / "blurry", out / "sharp"
    sharp = load_sequence(sharp_dir, as_uint8=True)
    blurry, targets = synthesize_blur(sharp, window)
    save_sequence(np.clip(np.rint(blurry), 0, 255).astype(np.uint8), out / "blurry")
    save_sequence(targets, out / "sharp")
    return out / "blurry", out / "sharp"


def _scene(rng, H, W, big) -> np.ndarray:
    """Wrap-around canvas: smooth colour field, hard-edged shapes and a few stripe patches."""
    yy, xx = np.mgrid[0:H, 0:W].astype(np.float64)
    canvas = np.zeros((3, H, W))
    for c in range(3):
        ky, kx = rng.integers(1, 3, 2)
        canvas[c] = 0.45 + 0.2 * np.sin(2 * np.pi * (ky * yy / H + kx * xx / W) + rng.uniform(0, 6))
    for i in range(40):
        cy, cx = rng.uniform([0, 0], [H, W])
        r = rng.uniform(2.5, 9.0) * big
        dy = np.minimum(np.abs(yy - cy), H - np.abs(yy - cy))
        dx = np.minimum(np.abs(xx - cx), W - np.abs(xx - cx))
        mask = np.maximum(dy, dx) < r if i % 2 else dy ** 2 + dx ** 2 < r * r
        canvas[:, mask] = rng.uniform(0.05, 0.95, 3)[:, None]
        if i % 5 == 0:
            period = rng.integers(6, 10) * big
            canvas[:, mask & (((yy + xx) // (period // 2)) % 2 == 0)] *= 0.6
    return canvas


def make_sharp_sequence(n_frames: int, height: int = 64, width: int = 64, seed: int = 0,
                        max_speed: float = 3.0) -> np.ndarray:
    """Procedural sharp video: a camera panning over a textured scene plus two moving objects.

    The camera speed oscillates between about a tenth of ``max_speed`` and
    ``max_speed`` pixels per frame while its heading drifts slowly, so
    temporal averaging gives mostly global, smoothly varying motion blur.
    Rendering is 4x supersampled and box-filtered.
    """
    if n_frames < 1:
        raise UsageError("n_frames must be >= 1")
    rng = np.random.default_rng(seed)
    big = 4
    h4, w4 = height * big, width * big
    H, W = 2 * h4, 2 * w4
    canvas = _scene(rng, H, W, big)
    heading, phase = rng.uniform(0, 2 * np.pi, 2)
    objects = [{"pos": rng.uniform([0, 0], [h4, w4]), "vel": rng.normal(0, max_speed * big / 2, 2),
                "r": rng.uniform(4, 8) * big, "color": rng.uniform(0.05, 0.95, 3)} for _ in range(2)]
    yy, xx = np.mgrid[0:h4, 0:w4].astype(np.float64)

    cam = np.zeros(2)
    frames = np.empty((n_frames, 3, height, width), dtype=np.float32)
    for t in range(n_frames):
        oy, ox = int(round(cam[0])) % H, int(round(cam[1])) % W
        img = np.roll(canvas, (-oy, -ox), axis=(1, 2))[:, :h4, :w4].copy()
        for ob in objects:
            cy, cx = ob["pos"] + t * ob["vel"]
            mask = (yy - cy % h4) ** 2 + (xx - cx % w4) ** 2 < ob["r"] ** 2
            img[:, mask] = ob["color"][:, None]
        frames[t] = np.clip(img.reshape(3, height, big, width, big).mean(axis=(2, 4)), 0, 1)
        speed = max_speed * (0.55 + 0.45 * np.sin(0.5 * t + phase))
        theta = heading + 0.4 * np.sin(0.23 * t)
        cam += speed * big * np.array([np.sin(theta), np.cos(theta)])
    return frames


def synthetic_pair(n_frames: int = 20, height: int = 64, width: int = 64, window: int = 7,
                   seed: int = 0, max_speed: float = 3.0):
    """Blurry/sharp float32 ``[n_frames, 3, H, W]`` pair, quantized to 8 bits like files on disk."""
    sharp = make_sharp_sequence(n_frames + window - 1, height, width, seed, max_speed)
    sharp8 = to_uint8(sharp)
    blurry, target = synthesize_blur(sharp8, window)
    blurry8 = np.clip(np.rint(blurry), 0, 255).astype(np.uint8)
    return blurry8.astype(np.float32) / 255.0, target.astype(np.float32) / 255.0


def read_paired_dir(path) -> tuple[np.ndarray, np.ndarray]:
    root = Path(path)
    if not (root / "blurry").is_dir() or not (root / "sharp").is_dir():
        raise SequenceIOError(f"{root} must contain blurry/ and sharp/ subdirectories")
    blurry, sharp = load_sequence(root / "blurry"), load_sequence(root / "sharp")
    if blurry.shape != sharp.shape:
        raise ValidationError(f"{root}: blurry {blurry.shape} and sharp {sharp.shape} differ")
    return blurry, sharp


def load_dataset(path) -> list[tuple[np.ndarray, np.ndarray]]:
    """A paired directory, or a directory of paired sequence directories."""
    root = Path(path)
    if (root / "blurry").is_dir():
        return [read_paired_dir(root)]
    seqs = sorted(p for p in root.iterdir() if p.is_dir() and (p / "blurry").is_dir())
    if not seqs:
        raise SequenceIOError(f"no blurry/ + sharp/ sequences under {root}")
    return [read_paired_dir(p) for p in seqs]
