import numpy as np
import pytest
import torch
from PIL import Image

from memdeblur.config import ModelConfig, TrainConfig
from memdeblur.errors import SequenceIOError, UsageError
from memdeblur.io import (load_bank, load_checkpoint, load_dataset, load_model, load_sequence, load_trace,
                          read_container, save_bank, save_checkpoint, save_sequence, save_trace,
                          synthesize_blur, synthesize_dataset, synthetic_pair, write_container)
from memdeblur.pipeline import MemDeblurNet, restore_sequence
from memdeblur.training import init_train_state, train_loop

from oracles import random_bank


def rand_frames(n=3, h=10, w=12, seed=0):
    return np.random.default_rng(seed).random((n, 3, h, w)).astype(np.float32)


# --- frame directories -------------------------------------------------------

def test_sequence_order(tmp_path):
    frames = rand_frames(3)
    save_sequence(frames, tmp_path)
    loaded = load_sequence(tmp_path)
    assert loaded.shape == (3, 3, 10, 12)
    for i in range(3):
        assert np.abs(loaded[i] - frames[i]).max() <= 0.5 / 255 + 1e-7


def test_png_round_trip_within_quantization(tmp_path):
    frames = rand_frames(2, 17, 9, seed=1)
    save_sequence(frames, tmp_path)
    assert np.abs(load_sequence(tmp_path) - frames).max() <= 1 / 255


def test_gap_error_names_index(tmp_path):
    save_sequence(rand_frames(3), tmp_path)
    (tmp_path / "frame_000001.png").unlink()
    with pytest.raises(SequenceIOError, match="index 1"):
        load_sequence(tmp_path)


def test_mixed_dims_names_file(tmp_path):
    save_sequence(rand_frames(2), tmp_path)
    Image.fromarray(np.zeros((5, 5, 3), np.uint8)).save(tmp_path / "frame_000002.png")
    with pytest.raises(SequenceIOError, match="frame_000002.png"):
        load_sequence(tmp_path)


def test_unreadable_frame_names_file(tmp_path):
    save_sequence(rand_frames(2), tmp_path)
    (tmp_path / "frame_000001.png").write_bytes(b"not a png")
    with pytest.raises(SequenceIOError, match="frame_000001.png"):
        load_sequence(tmp_path)


def test_missing_directory(tmp_path):
    with pytest.raises(SequenceIOError):
        load_sequence(tmp_path / "nope")


# --- blur synthesis ----------------------------------------------------------

def test_synthesize_blur_identity_window_one():
    frames = rand_frames(4)
    blurry, sharp = synthesize_blur(frames, 1)
    np.testing.assert_allclose(blurry, frames, atol=1e-12)
    assert np.array_equal(sharp, frames)


def test_synthesize_blur_constant():
    frames = np.full((7, 3, 4, 4), 0.3)
    blurry, _ = synthesize_blur(frames, 5)
    np.testing.assert_allclose(blurry, 0.3, atol=1e-12)


def test_synthesize_blur_ramp_loop_oracle():
    n, w = 12, 5
    t = np.arange(n, dtype=np.float64)
    xx = np.arange(16, dtype=np.float64)
    frames = np.stack([np.broadcast_to(((xx - 1.5 * ti) % 16) / 16, (3, 4, 16)) for ti in t])
    blurry, sharp = synthesize_blur(frames, w)
    assert len(blurry) == n - w + 1
    for i in range(len(blurry)):
        acc = np.zeros_like(frames[0])
        for j in range(i, i + w):
            acc += frames[j]
        np.testing.assert_allclose(blurry[i], acc / w, atol=1e-9)
        assert np.array_equal(sharp[i], frames[i + w // 2])


@pytest.mark.parametrize("window", [0, 2, 9])
def test_synthesize_blur_errors(window):
    with pytest.raises(UsageError):
        synthesize_blur(rand_frames(5), window)


def test_synthesize_dataset_window_one_byte_identical(tmp_path):
    paths = save_sequence(rand_frames(3), tmp_path / "sharp_in")
    blurry_dir, sharp_dir = synthesize_dataset(tmp_path / "sharp_in", tmp_path / "out", 1)
    for p in paths:
        assert (blurry_dir / p.name).read_bytes() == p.read_bytes()
        assert (sharp_dir / p.name).read_bytes() == p.read_bytes()


def test_synthesize_dataset_and_load(tmp_path):
    save_sequence(rand_frames(9, 8, 8), tmp_path / "sharp_in")
    synthesize_dataset(tmp_path / "sharp_in", tmp_path / "pair", 3)
    [(blurry, sharp)] = load_dataset(tmp_path / "pair")
    assert blurry.shape == sharp.shape == (7, 3, 8, 8)


def test_synthetic_pair_is_blurrier():
    from memdeblur.evaluation.metrics import psnr

    b, s = synthetic_pair(6, 32, 32, window=5, seed=3)
    assert b.shape == s.shape == (6, 3, 32, 32)
    assert np.array_equal(b, synthetic_pair(6, 32, 32, window=5, seed=3)[0])
    assert 15 < np.mean([psnr(b[i], s[i]) for i in range(6)]) < 40


# --- container and checkpoints -----------------------------------------------

def test_container_round_trip(tmp_path):
    arrays = {"a": np.arange(6, dtype=np.float32).reshape(2, 3), "b": np.ones((1,), np.float32)}
    write_container(tmp_path / "c.bin", {"x": 1}, arrays)
    header, back = read_container(tmp_path / "c.bin")
    assert header == {"x": 1} and list(back) == ["a", "b"]
    assert all(np.array_equal(arrays[k], back[k]) for k in arrays)
    raw = (tmp_path / "c.bin").read_bytes()
    assert raw[:8] == b"MEMDEBLR"


def test_container_rejects_foreign_file(tmp_path):
    (tmp_path / "x").write_bytes(b"garbage!" * 4)
    with pytest.raises(SequenceIOError):
        read_container(tmp_path / "x")


def small_state(seed=0):
    mc = ModelConfig.toy(base_channels=8, key_channels=8, value_channels=8, decode_channels=4, scales=2)
    tc = TrainConfig.toy(batch_size=1, patch=32, subseq_len=3, steps_per_epoch=2, total_epochs=4)
    return init_train_state(mc, tc, seed)


def small_dataset():
    return [tuple(torch.as_tensor(a) for a in synthetic_pair(5, 40, 40, window=3, seed=1))]


def test_checkpoint_save_load_save_bit_identical(tmp_path):
    state = train_loop(small_dataset(), small_state(), epochs=1)
    save_checkpoint(state, tmp_path / "a.mdck")
    save_checkpoint(load_checkpoint(tmp_path / "a.mdck"), tmp_path / "b.mdck")
    assert (tmp_path / "a.mdck").read_bytes() == (tmp_path / "b.mdck").read_bytes()


def test_loaded_model_matches(tmp_path):
    state = train_loop(small_dataset(), small_state(), epochs=1)
    save_checkpoint(state, tmp_path / "a.mdck")
    model = load_model(tmp_path / "a.mdck")
    x = torch.rand(3, 3, 32, 32)
    state.model.eval()
    assert torch.equal(restore_sequence(model, x).restored[0], restore_sequence(state.model, x).restored[0])


def test_resume_reproduces_loss_curve(tmp_path):
    full = train_loop(small_dataset(), small_state(3))
    half = train_loop(small_dataset(), small_state(3), epochs=2)
    save_checkpoint(half, tmp_path / "half.mdck")
    torch.manual_seed(12345)  # perturb global RNG; the checkpoint must restore it
    resumed = train_loop(small_dataset(), load_checkpoint(tmp_path / "half.mdck"))
    assert resumed.losses == full.losses
    assert resumed.step == full.step == 8


# --- banks and traces --------------------------------------------------------

@pytest.mark.parametrize("direction", ["forward", "backward"])
def test_bank_round_trip(tmp_path, direction):
    bank = random_bank(np.random.default_rng(0), 4, 3, [(2, 2), (3, 1)], direction, capacity=5)
    save_bank(bank, tmp_path / "bank.bin")
    back = load_bank(tmp_path / "bank.bin")
    assert back.direction == direction and back.capacity == 5 and len(back) == 2
    for a, b in zip(bank.entries, back.entries):
        assert torch.allclose(a.key.float(), b.key)
        assert (a.value_r is None) == (b.value_r is None)
        assert (a.frame_index, a.scale) == (b.frame_index, b.scale)


def test_trace_round_trip(tmp_path):
    torch.manual_seed(0)
    model = MemDeblurNet(ModelConfig.toy(scales=2)).eval()
    res = restore_sequence(model, torch.rand(3, 3, 32, 32), trace=True)
    save_trace(res, tmp_path / "t.bin")
    traces, frames = load_trace(tmp_path / "t.bin")
    assert len(traces) == len(res.attention_traces)
    assert frames[1].shape == (3, 3, 32, 32) and frames[2].shape == (3, 3, 16, 16)
    for a, b in zip(res.attention_traces, traces):
        assert (a.frame_index, a.scale, a.bank) == (b.frame_index, b.scale, b.bank)
        np.testing.assert_allclose(a.weights, b.weights, rtol=1e-6, atol=1e-7)
