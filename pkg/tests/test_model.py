import numpy as np
import pytest

from fngram import tensor as tn
from fngram.model import LengthError, ModelConfig, ProphetModel
from conftest import tiny_config, tiny_model
from gradcheck import model_trial
from oracles import reference_logits


@pytest.mark.parametrize("n_future", [1, 2, 3])
def test_matches_loop_reference(n_future, rng):
    model = tiny_model(n_future)
    x = rng.integers(7, 17, size=7)
    y = rng.integers(7, 17, size=6)
    np.testing.assert_allclose(model.forward(x, y).data, reference_logits(model, x, y), atol=1e-12)


def test_shapes(rng):
    model = tiny_model(3)
    h = model.encode(rng.integers(7, 17, size=5))
    assert h.shape == (5, 16)
    for T in (1, 4, 24):
        assert model.decode_streams(rng.integers(7, 17, size=T), h).shape == (3, T, 17)


def test_length_limits():
    model = tiny_model(2)
    with pytest.raises(LengthError):
        model.encode(np.full(25, 8))
    h = model.encode(np.full(3, 8))
    with pytest.raises(LengthError):
        model.decode_streams(np.full(25, 8), h)


def test_appended_pad_leaves_encoder_unchanged(rng):
    model = tiny_model(2)
    x = rng.integers(7, 17, size=6)
    base = model.encode(x).data
    padded = np.concatenate([x, np.zeros(4, dtype=int)])
    mask = np.arange(10) < 6
    out = model.encode(padded, mask).data
    np.testing.assert_allclose(out[:6], base, atol=1e-6)


def test_pad_ids_do_not_leak(rng):
    model = tiny_model(2)
    x = np.concatenate([rng.integers(7, 17, size=5), [9, 12]])
    mask = np.arange(7) < 5
    a = model.encode(x, mask).data
    x2 = x.copy()
    x2[5], x2[6] = x[6], x[5]
    b = model.encode(x2, mask).data
    np.testing.assert_array_equal(a[:5], b[:5])


def test_causality_spot(rng):
    model = tiny_model(2)
    x = rng.integers(7, 17, size=5)
    y = rng.integers(7, 17, size=8)
    base = model.forward(x, y).data
    for t in range(8):
        y2 = y.copy()
        y2[t:] = rng.integers(7, 17, size=8 - t)
        out = model.forward(x, y2).data
        assert np.abs(out[:, :t + 1] - base[:, :t + 1]).max() <= 1e-12


def test_single_stream_is_plain_decoder(rng):
    # with n_future=1 the only stream is the main stream; stream embeddings of a
    # 2-stream model with identical weights give the same stream-0 logits
    one = tiny_model(1)
    two = ProphetModel(tiny_config(2), {k: tn.Tensor(v.data.copy()) for k, v in one.params.items()})
    two.params["pos_emb"] = tn.Tensor(np.vstack([one.params["pos_emb"].data, np.zeros((1, 16))]))
    two.params["stream_emb"] = tn.Tensor(np.vstack([one.params["stream_emb"].data, np.ones((1, 16))]))
    x = rng.integers(7, 17, size=5)
    y = rng.integers(7, 17, size=6)
    np.testing.assert_allclose(two.forward(x, y).data[0], one.forward(x, y).data[0], atol=1e-12)


def test_incremental_matches_teacher_forcing_float32(rng):
    model = ProphetModel(ModelConfig.toy(30, n_future=3), seed=3)
    x = rng.integers(7, 30, size=9)
    y = rng.integers(7, 30, size=10)
    full = model.forward(x, y).data
    cache = model.start_cache(model.encode(x))
    inputs = [5] + list(y[:-1])
    steps = np.stack([model.decode_step([tok], cache)[0] for tok in inputs], axis=1)
    assert steps.dtype == np.float32
    np.testing.assert_allclose(steps, full, atol=1e-5)


def test_batched_equals_single(rng):
    model = tiny_model(2)
    xs = [rng.integers(7, 17, size=n) for n in (4, 6)]
    ys = [rng.integers(7, 17, size=n) for n in (5, 3)]
    X = np.zeros((2, 6), dtype=int)
    Y = np.zeros((2, 5), dtype=int)
    for i in range(2):
        X[i, :len(xs[i])] = xs[i]
        Y[i, :len(ys[i])] = ys[i]
    out = model.forward(X, Y, X != 0).data
    for i in range(2):
        single = model.forward(xs[i], ys[i]).data
        np.testing.assert_allclose(out[i, :, :len(ys[i])], single, atol=1e-12)


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(hidden=10, heads=3)
    with pytest.raises(ValueError):
        ModelConfig(n_future=2, alpha=(1.0,))
    with pytest.raises(ValueError):
        ModelConfig(n_future=2, alpha=(0.0, 1.0))
    assert ModelConfig(n_future=3, gamma=0.5).alpha == (1.0, 0.5, 0.25)
    assert ModelConfig().alpha == (1.0, 0.5)


def test_parameter_names_unique_and_shaped():
    cfg = tiny_config(3)
    model = ProphetModel(cfg)
    assert model.params["pos_emb"].shape == (cfg.max_len + 2, cfg.hidden)
    assert model.params["stream_emb"].shape == (3, cfg.hidden)
    assert model.params["tok_emb"].shape == (cfg.vocab_size, cfg.hidden)


def test_model_gradients_spot():
    errors = model_trial(tiny_model(2), seed=5)
    assert max(errors.values()) < 1e-3, max(errors, key=errors.get)
