import os

# single-threaded BLAS so bitwise-determinism checks are meaningful
for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(var, "1")

import numpy as np  # noqa: E402
import pytest  # noqa: E402

from fngram import data_path  # noqa: E402
from fngram.model import ModelConfig, ProphetModel  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def toy_lines():
    return data_path("toy_corpus.txt").read_text(encoding="utf-8").splitlines()


def tiny_config(n_future=2, vocab_size=17, **kw):
    base = dict(vocab_size=vocab_size, n_future=n_future, layers_enc=2, layers_dec=2, hidden=16,
                ffn=32, heads=2, max_len=24, dropout=0.0, dtype="float64")
    base.update(kw)
    return ModelConfig(**base)


def tiny_model(n_future=2, seed=0, **kw):
    model = ProphetModel(tiny_config(n_future, **kw), seed=seed)
    # larger weights than the 0.02 init make perturbation tests sensitive
    rng = np.random.default_rng(seed + 100)
    for name, p in model.params.items():
        p.data += rng.normal(0, 0.3, size=p.shape)
    return model
