import numpy as np
import pytest
import torch

from fourdfold.geom import RotationSchedule


@pytest.fixture(scope="session")
def default_schedule():
    return RotationSchedule()


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _torch_default_dtype():
    # geometry tests run at 64-bit
    old = torch.get_default_dtype()
    torch.set_default_dtype(torch.float64)
    yield
    torch.set_default_dtype(old)
