import math

import numpy as np
import pytest

from fngram import tensor as tn
from fngram.corpus import batch
from fngram.model import ModelConfig
from fngram.tensor import Tensor
from fngram.training import (CheckpointError, NonFiniteError, TrainConfig, TrainState, future_ngram_loss,
                             load_checkpoint, parse_config, save_checkpoint, state_from_checkpoint, train,
                             train_step)
from conftest import tiny_model
from oracles import nll_oracle


def random_logits(rng, n, T, V):
    return Tensor(rng.normal(size=(n, T, V)) * 2, requires_grad=True)


def per_stream_oracle(logits, y, alpha, pad):
    n, T, _ = logits.shape
    return sum(alpha[j] * nll_oracle(logits[j, :T - j], y[j:], pad) for j in range(n) if T - j > 0)


def test_lm_only_when_future_weight_zero(rng):
    logits = random_logits(rng, 2, 6, 9)
    y = rng.integers(1, 9, size=6)
    loss = future_ngram_loss(logits, y, [1.0, 0.0], pad_id=0).item()
    assert loss == pytest.approx(nll_oracle(logits.data[0], y, 0), abs=1e-10)


def test_single_stream_is_shifted_cross_entropy(rng):
    logits = random_logits(rng, 1, 5, 7)
    y = rng.integers(1, 7, size=5)
    loss = future_ngram_loss(logits, y, [1.0], pad_id=0).item()
    assert loss == pytest.approx(tn.cross_entropy(logits[0], y, 0).item(), abs=1e-10)


def test_uniform_logits_value():
    logits = Tensor(np.zeros((2, 3, 4)))
    loss = future_ngram_loss(logits, [1, 2, 3], [1.0, 0.5], pad_id=0).item()
    assert loss == pytest.approx(1.5 * math.log(4), abs=1e-10)
    assert loss == pytest.approx(2.0794415, abs=1e-7)


def test_decomposition_against_oracle(rng):
    for n in (1, 2, 3, 4):
        logits = random_logits(rng, n, 6, 8)
        y = rng.integers(0, 8, size=6)
        alpha = rng.uniform(0.1, 1.0, size=n)
        got = future_ngram_loss(logits, y, alpha, pad_id=0).item()
        assert got == pytest.approx(per_stream_oracle(logits.data, y, alpha, 0), abs=1e-10)


def test_positions_past_end_ignored():
    # T=2 with n=3: stream 2 has no target and contributes nothing
    logits = Tensor(np.zeros((3, 2, 4)))
    assert future_ngram_loss(logits, [1, 2], [1.0, 1.0, 1.0], 0).item() == pytest.approx(2 * math.log(4))


def test_alpha_length_mismatch():
    with pytest.raises(ValueError):
        future_ngram_loss(Tensor(np.zeros((2, 3, 4))), [1, 2, 3], [1.0], 0)


def test_alpha_scaling_is_linear(rng):
    model = tiny_model(3)
    x = rng.integers(7, 17, size=(2, 5))
    y = rng.integers(7, 17, size=(2, 6))
    alpha = np.array([1.0, 0.4, 0.2])

    def run(a):
        model.zero_grad()
        loss = future_ngram_loss(model.forward(x, y), y, a, 0)
        tn.backward(loss)
        return loss.item(), {k: p.grad.copy() for k, p in model.params.items()}

    base_loss, base_grads = run(alpha)
    scaled_loss, scaled_grads = run(alpha * 3.0)
    assert scaled_loss == pytest.approx(3.0 * base_loss, abs=1e-10)
    for k in base_grads:
        np.testing.assert_allclose(scaled_grads[k], 3.0 * base_grads[k], atol=1e-10)


def test_extra_pad_columns_leave_gradients(rng):
    model = tiny_model(2)
    pairs = [(list(rng.integers(7, 17, size=4)), list(rng.integers(7, 17, size=5))) for _ in range(2)]

    def grads(extra):
        b = batch([(e + [0] * extra, d + [0] * extra) for e, d in pairs])
        b.encoder_mask[:, 4:] = False
        model.zero_grad()
        tn.backward(future_ngram_loss(model.forward(b.encoder_ids, b.decoder_ids, b.encoder_mask),
                                      b.decoder_ids, model.config.alpha, 0))
        return {k: p.grad.copy() for k, p in model.params.items()}

    plain, padded = grads(0), grads(3)
    for k in plain:
        np.testing.assert_allclose(padded[k], plain[k], atol=1e-10, err_msg=k)


def toy_examples(rng, count=6, vocab=20):
    return [(list(rng.integers(7, vocab, size=int(rng.integers(2, 7)))),
             list(rng.integers(7, vocab, size=int(rng.integers(2, 7))))) for _ in range(count)]


def small_state(dropout=0.0, lr=1e-2, batch_size=4, dtype="float32"):
    cfg = ModelConfig.toy(20, hidden=16, ffn=32, heads=2, max_len=16, dropout=dropout, dtype=dtype)
    return TrainState.create(cfg, TrainConfig(lr=lr, warmup=3, batch_size=batch_size, seed=4))


def params_of(state):
    return {k: p.data.copy() for k, p in state.model.params.items()}


def test_train_step_deterministic(rng):
    b = batch(toy_examples(rng))
    s1, s2 = small_state(dropout=0.1), small_state(dropout=0.1)
    train_step(b, s1)
    train_step(b, s2)
    p1, p2 = params_of(s1), params_of(s2)
    for k in p1:
        assert np.array_equal(p1[k], p2[k]), k


def test_zero_learning_rate_is_noop(rng):
    state = small_state(lr=0.0)
    before = params_of(state)
    stats = train_step(batch(toy_examples(rng)), state)
    assert stats.step == 1 and stats.loss > 0
    after = params_of(state)
    for k in before:
        assert np.array_equal(before[k], after[k])


def test_loss_decreases(rng):
    state = small_state()
    history = train(state, toy_examples(rng), 30)
    assert history[-1].loss < history[0].loss


def test_non_finite_names_tensor(rng):
    state = small_state()
    state.model.params["dec.0.ffn.w1"].data[0, 0] = np.nan
    with pytest.raises(NonFiniteError, match="dec.0.ffn.w1"):
        train_step(batch(toy_examples(rng)), state)


def test_warmup_schedule():
    cfg = TrainConfig(lr=1.0, warmup=4)
    assert [cfg.learning_rate(s) for s in (1, 2, 4, 10)] == [0.25, 0.5, 1.0, 1.0]
    assert TrainConfig(lr=0.5, warmup=0).learning_rate(1) == 0.5


def test_checkpoint_round_trip_bytes(tmp_path, rng):
    state = small_state(dropout=0.1)
    train(state, toy_examples(rng), 3)
    a, b = tmp_path / "a.ck", tmp_path / "b.ck"
    save_checkpoint(a, state)
    ckpt = load_checkpoint(a)
    save_checkpoint(b, ckpt)
    assert a.read_bytes() == b.read_bytes()
    assert a.read_bytes()[:8] == b"FNCK0001"
    restored = state_from_checkpoint(ckpt)
    for k, p in state.model.params.items():
        assert np.array_equal(restored.model.params[k].data, p.data)
    assert restored.step == 3


def test_checkpoint_corruption(tmp_path, rng):
    state = small_state()
    path = tmp_path / "c.ck"
    save_checkpoint(path, state)
    raw = path.read_bytes()
    path.write_bytes(raw[: len(raw) - 10])
    with pytest.raises(CheckpointError, match="blob adam_v/"):
        load_checkpoint(path)
    path.write_bytes(raw[:30])
    with pytest.raises(CheckpointError, match="manifest: truncated"):
        load_checkpoint(path)
    path.write_bytes(b"XXXXXXXX" + raw[8:])
    with pytest.raises(CheckpointError, match="bad magic"):
        load_checkpoint(path)
    flipped = bytearray(raw)
    flipped[-1] ^= 0xFF
    path.write_bytes(bytes(flipped))
    with pytest.raises(CheckpointError, match="checksum"):
        load_checkpoint(path)
    versioned = bytearray(raw)
    versioned[8] = 9
    path.write_bytes(bytes(versioned))
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(path)


def test_split_run_equals_straight_run(tmp_path, rng):
    examples = toy_examples(rng, count=8)
    straight = small_state(dropout=0.1, batch_size=3)
    train(straight, examples, 10)
    split = small_state(dropout=0.1, batch_size=3)
    train(split, examples, 5)
    save_checkpoint(tmp_path / "mid.ck", split)
    resumed = state_from_checkpoint(load_checkpoint(tmp_path / "mid.ck"))
    train(resumed, examples, 5)
    a, b = params_of(straight), params_of(resumed)
    for k in a:
        assert np.array_equal(a[k], b[k]), k


def test_parse_config():
    model_kw, train_kw = parse_config(["# c", "n_future=3", "alpha=1, 0.5, 0.25", "hidden=64", "lr=0.01",
                                       "steps=7", "dtype=float64", ""])
    assert model_kw == {"n_future": 3, "alpha": (1.0, 0.5, 0.25), "hidden": 64, "dtype": "float64"}
    assert train_kw == {"lr": 0.01, "steps": 7}
    with pytest.raises(ValueError, match="unknown"):
        parse_config(["bogus=1"])
    with pytest.raises(ValueError):
        parse_config(["novalue"])
