import warnings

import numpy as np
import pytest

from emocrowd.dataset import mediated_config, synthesize_dataset

# behavior i -> emotion BIJECTION[i] (panic: scared, fight: angry, congestion: sad,
# obstacle: excited, neutral: neutral)
BIJECTION = (3, 0, 4, 2, 5)


def bijective_table():
    t = np.zeros((5, 6))
    t[np.arange(5), BIJECTION] = 1.0
    return t


def small_config(seed=0, table=None, noise=1.0, n_sequences=4, clips=20, dpc=10, spread=3.0):
    kw = dict(seed=seed, n_sequences=n_sequences, clips_per_sequence=clips, descriptor_dim=8,
              descriptors_per_clip=dpc, noise_scale=noise, mean_spread=spread)
    if table is not None:
        kw["table"] = table
    return mediated_config(**kw)


@pytest.fixture(scope="session")
def bijective_ds():
    return synthesize_dataset(small_config(table=bijective_table()))


@pytest.fixture(scope="session")
def small_ds():
    return synthesize_dataset(small_config(noise=2.0))


@pytest.fixture(autouse=True)
def _quiet_solver_warnings():
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message=".*without meeting tol.*")
        yield
