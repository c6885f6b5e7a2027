import numpy as np
import pytest

from catdisc.data import EmbeddingDataset, ScenarioConfig, build_scenario, generate_synthetic
from catdisc.heads import PaHyperparams, train_initial


@pytest.fixture(scope="session")
def small_source():
    """13-class labeled synthetic source used across scenario tests."""
    return generate_synthetic(13, 20, 16, 10.0, seed=7)


@pytest.fixture(scope="session")
def trained_head_bank():
    """A head/bank trained to convergence on a small well-separated set."""
    src = generate_synthetic(5, 30, 16, 10.0, seed=3)
    steps = build_scenario(src, ScenarioConfig(old_class_fraction=0.8, old_sample_carryover=0.0,
                                               validation_fraction=0.2, seed=3))
    hp = PaHyperparams(d_emb=32, epochs=40, lr_model=1e-2, delta=0.8, lr_decay_every=10)
    head, bank, log = train_initial(steps[0], hp, seed=3)
    return head, bank, steps, hp


def make_dataset(n=10, d=4, labeled=True, seed=0):
    rng = np.random.default_rng(seed)
    feats = rng.standard_normal((n, d)).astype(np.float32)
    labels = rng.integers(0, 3, n) if labeled else None
    return EmbeddingDataset(feats, labels, np.arange(n))
