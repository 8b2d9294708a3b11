import numpy as np
import pytest

from kinverify.comparator import ComparatorConfig
from kinverify.synth import SynthConfig, generate_world
from kinverify.training import TrainConfig, train, train_attention

# Small world for unit tests: quick to generate, still covers all relations.
TINY_SYNTH = SynthConfig(
    dim=8,
    identity_dims=4,
    n_train_families=12,
    n_val_families=4,
    n_test_families=4,
    seed=4,
)

# Reduced world for the ablation-grid budget test.
REDUCED_SYNTH = SynthConfig(
    dim=16,
    identity_dims=8,
    n_train_families=120,
    n_val_families=40,
    n_test_families=40,
    seed=4,
)


@pytest.fixture(scope="session")
def tiny_world():
    return generate_world(TINY_SYNTH)


@pytest.fixture(scope="session")
def default_world():
    return generate_world(SynthConfig())


@pytest.fixture(scope="session")
def reduced_world():
    return generate_world(REDUCED_SYNTH)


@pytest.fixture(scope="session")
def trained_default(default_world):
    """Paper-default training on the default fixture world, run once."""
    world = default_world
    config = ComparatorConfig(input_dim=2 * world.store.dim)
    params, history = train(
        world.store,
        world.kin_pairs["train"],
        world.eval_pairs["val"],
        config,
        TrainConfig(seed=4),
    )
    return params, history


@pytest.fixture(scope="session")
def trained_with_attention(trained_default, default_world):
    params, _ = trained_default
    return train_attention(
        params, default_world.store, default_world.kin_pairs["train"], TrainConfig(seed=4)
    )
