import numpy as np
import pytest
import torch

from connectogen.data import CohortSplit, generate_synthetic_cohort
from connectogen.pipeline import build_pipeline, tiny_pipeline_config
from connectogen.training import TrainConfig, train_loop


@pytest.fixture(scope="session", autouse=True)
def _torch_threads():
    torch.set_num_threads(2)


@pytest.fixture(scope="session")
def tiny_config():
    return tiny_pipeline_config()


@pytest.fixture(scope="session")
def tiny_model(tiny_config):
    return build_pipeline(tiny_config, seed=0)


@pytest.fixture(scope="session")
def small_cohort():
    return generate_synthetic_cohort(3, 3, 2, seed=11)


@pytest.fixture(scope="session")
def overfit_run(tiny_config):
    """Short end-to-end training run on 8 subjects, shared across tests.

    Deliberately long enough that the model is clearly fitting (losses down,
    train accuracy up) but far below the full sanity-run budget; the dedicated
    acceptance test trains to the documented thresholds.
    """
    cohort = generate_synthetic_cohort(3, 3, 2, seed=5)
    split = CohortSplit(train=cohort, test=[], seed=0)
    config = TrainConfig(
        learning_rate=3e-3, batch_size=8, epochs=60, seed=2, schedule_T=16,
        beta_start=6.25e-3, beta_end=0.5,
    )
    state = train_loop(split, tiny_pipeline_config(), config)
    return state, split
