"""Charbonnier multi-scale loss and the ADAM training loop."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .config import ModelConfig, TrainConfig
from .errors import NonFiniteLossError, UsageError, ValidationError
from .pipeline import MemDeblurNet, build_pyramid, restore_sequence

log = logging.getLogger(__name__)


def charbonnier(pred: torch.Tensor, target: torch.Tensor, eps: float = 1e-3) -> torch.Tensor:
    """Mean of sqrt((pred - target)^2 + eps^2)."""
    if pred.shape != target.shape:
        raise ValidationError(f"pred {tuple(pred.shape)} and target {tuple(target.shape)} differ")
    if eps <= 0:
        raise ValidationError("eps must be positive")
    return torch.sqrt((pred - target) ** 2 + eps * eps).mean()


@dataclass
class LossReport:
    total: torch.Tensor
    per_scale: list[float]
    per_frame: list[float]


def multiscale_loss(preds, targets, cfg: TrainConfig) -> LossReport:
    """Weighted sum over scales of the frame-averaged Charbonnier loss.

    ``preds[s]`` and ``targets[s]`` are ``[..., N, C, H, W]`` sequences for
    scale ``s + 1``. ``per_frame[i]`` is the scale-weighted loss of frame
    ``i``, so its mean equals ``total``.
    """
    if len(preds) != len(targets):
        raise ValidationError(f"{len(preds)} predicted scales vs {len(targets)} target scales")
    weights = cfg.weights_for(len(preds))
    total = 0.0
    per_scale = []
    per_frame = None
    for w, p, t in zip(weights, preds, targets):
        if p.shape != t.shape:
            raise ValidationError(f"scale shapes differ: {tuple(p.shape)} vs {tuple(t.shape)}")
        n = p.shape[-4]
        frame_losses = torch.stack([
            charbonnier(p[..., i, :, :, :], t[..., i, :, :, :], cfg.charbonnier_eps) for i in range(n)
        ])
        scale_loss = frame_losses.mean()
        total = total + w * scale_loss
        per_scale.append(float(scale_loss.detach()))
        fl = w * frame_losses.detach()
        per_frame = fl if per_frame is None else per_frame + fl
    return LossReport(total, per_scale, per_frame.tolist())


def learning_rate(epoch: int, cfg: TrainConfig) -> float:
    """Step schedule: multiplied by ``decay_factor`` at each milestone reached."""
    passed = sum(1 for e in cfg.decay_epochs if epoch >= e)
    return cfg.lr * cfg.decay_factor ** passed


def apply_transform(x, rot: int, hflip: bool, vflip: bool):
    """Rotate by ``rot`` quarter turns then flip, over the last two axes."""
    x = torch.rot90(x, rot, dims=(-2, -1))
    if hflip:
        x = torch.flip(x, dims=(-1,))
    if vflip:
        x = torch.flip(x, dims=(-2,))
    return x


def draw_transform(rng: np.random.Generator) -> tuple[int, bool, bool]:
    return int(rng.integers(4)), bool(rng.integers(2)), bool(rng.integers(2))


def augment(blurry, sharp, rng: np.random.Generator):
    """Same random rotation/flip on both sequences, constant along time."""
    if blurry.shape != sharp.shape:
        raise ValidationError("blurry and sharp sequences must share a shape")
    rot, hflip, vflip = draw_transform(rng)
    return apply_transform(blurry, rot, hflip, vflip), apply_transform(sharp, rot, hflip, vflip)


def sample_subsequence(blurry, sharp, subseq_len: int, patch: int, rng: np.random.Generator):
    """Contiguous ``subseq_len`` frames and one ``patch``-sized crop shared by all of them.

    Returns ``(blurry_crop, sharp_crop, (t0, y0, x0))``.
    """
    if blurry.shape != sharp.shape:
        raise ValidationError("blurry and sharp sequences must share a shape")
    n, _, h, w = blurry.shape
    if n < subseq_len:
        raise UsageError(f"sequence has {n} frames, need at least {subseq_len}")
    if h < patch or w < patch:
        raise UsageError(f"frames are {h}x{w}, smaller than patch {patch}")
    t0 = int(rng.integers(n - subseq_len + 1))
    y0 = int(rng.integers(h - patch + 1))
    x0 = int(rng.integers(w - patch + 1))
    sl = (slice(t0, t0 + subseq_len), slice(None), slice(y0, y0 + patch), slice(x0, x0 + patch))
    return blurry[sl], sharp[sl], (t0, y0, x0)


@dataclass
class TrainState:
    """Everything needed to resume: model, optimizer, data RNG, progress."""

    model: MemDeblurNet
    optimizer: torch.optim.Optimizer
    rng: np.random.Generator
    train_config: TrainConfig
    epoch: int = 0
    step: int = 0
    losses: list[float] = field(default_factory=list)
    metrics: list[dict] = field(default_factory=list)


def make_optimizer(model, cfg: TrainConfig):
    return torch.optim.Adam(model.parameters(), lr=cfg.lr, betas=(cfg.beta1, cfg.beta2), eps=cfg.adam_eps)


def init_train_state(model_config: ModelConfig, cfg: TrainConfig, seed: int) -> TrainState:
    torch.manual_seed(seed)
    model = MemDeblurNet(model_config)
    return TrainState(model, make_optimizer(model, cfg), np.random.default_rng(seed), cfg)


def _as_tensor(a):
    return a if torch.is_tensor(a) else torch.as_tensor(np.asarray(a, dtype=np.float32))


def _make_batch(dataset, cfg, rng):
    blurs, sharps = [], []
    for _ in range(cfg.batch_size):
        b, s = dataset[int(rng.integers(len(dataset)))]
        b, s, _ = sample_subsequence(_as_tensor(b), _as_tensor(s), cfg.subseq_len, cfg.patch, rng)
        b, s = augment(b, s, rng)
        blurs.append(b)
        sharps.append(s)
    return torch.stack(blurs), torch.stack(sharps)


def train_step(state: TrainState, blurry: torch.Tensor, sharp: torch.Tensor, dump_dir=None) -> float:
    model, cfg = state.model, state.train_config
    model.train()
    result = model(blurry)
    targets = build_pyramid(sharp, model.config.scales, model.config.pad_multiple)
    target_seqs = [targets.unpadded(s + 1) for s in range(model.config.scales)]
    report = multiscale_loss(result.restored, target_seqs, cfg)
    loss = report.total
    if not torch.isfinite(loss):
        msg = f"non-finite loss {float(loss.detach())} at epoch {state.epoch} step {state.step}"
        if dump_dir is not None:
            path = Path(dump_dir) / f"nonfinite_step{state.step}.npz"
            path.parent.mkdir(parents=True, exist_ok=True)
            np.savez(path, blurry=blurry.detach().numpy(), sharp=sharp.detach().numpy(),
                     per_scale=np.asarray(report.per_scale))
            msg += f"; batch dumped to {path}"
        raise NonFiniteLossError(msg)
    state.optimizer.zero_grad()
    loss.backward()
    state.optimizer.step()
    return float(loss.detach())


def validation_psnr(model: MemDeblurNet, blurry, sharp) -> float:
    from .evaluation.metrics import psnr

    model.eval()
    out = restore_sequence(model, _as_tensor(blurry)).restored[0]
    sharp = _as_tensor(sharp)
    vals = [psnr(out[i].numpy(), sharp[i].numpy()) for i in range(out.shape[0])]
    return float(np.mean(np.minimum(vals, 100.0)))


def train_loop(dataset, state: TrainState, out_dir=None, val=None, epochs: int | None = None,
               checkpoint_every: int = 0, on_epoch=None) -> TrainState:
    """Run epochs until ``train_config.total_epochs`` (or ``epochs`` more) are done.

    ``dataset`` is a non-empty list of ``(blurry, sharp)`` sequences shaped
    ``[N, C, H, W]``. ``val`` is an optional held-out ``(blurry, sharp)``
    pair scored once every ``eval_every`` epochs. With ``out_dir`` set, a
    ``metrics.jsonl`` log is appended and checkpoints are written every
    ``checkpoint_every`` epochs plus once at the end.
    """
    from .io import save_checkpoint

    if not dataset:
        raise UsageError("dataset is empty")
    cfg = state.train_config
    end = cfg.total_epochs if epochs is None else min(cfg.total_epochs, state.epoch + epochs)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    while state.epoch < end:
        lr = learning_rate(state.epoch, cfg)
        for group in state.optimizer.param_groups:
            group["lr"] = lr
        epoch_losses = []
        for _ in range(cfg.steps_per_epoch):
            blurry, sharp = _make_batch(dataset, cfg, state.rng)
            loss = train_step(state, blurry, sharp, dump_dir=out)
            state.step += 1
            state.losses.append(loss)
            epoch_losses.append(loss)
        state.epoch += 1
        record = {"epoch": state.epoch, "step": state.step, "loss": float(np.mean(epoch_losses)),
                  "lr": lr, "psnr_val": None}
        if val is not None and (state.epoch % cfg.eval_every == 0 or state.epoch == end):
            record["psnr_val"] = validation_psnr(state.model, *val)
        state.metrics.append(record)
        log.info("epoch %d step %d loss %.6f lr %.3g psnr_val %s", record["epoch"], record["step"],
                 record["loss"], lr, record["psnr_val"])
        if out is not None:
            with open(out / "metrics.jsonl", "a") as fh:
                fh.write(json.dumps(record) + "\n")
            if checkpoint_every and state.epoch % checkpoint_every == 0:
                save_checkpoint(state, out / f"checkpoint_epoch{state.epoch:04d}.mdck")
        if on_epoch is not None:
            on_epoch(state, record)
    if out is not None:
        save_checkpoint(state, out / "checkpoint_last.mdck")
    return state

