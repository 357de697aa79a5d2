import numpy as np
import pytest

from semtraj.config import EngineConfig
from semtraj.roe import LtvModel


@pytest.fixture(scope="session")
def cfg():
    return EngineConfig.default()


@pytest.fixture(scope="session")
def model(cfg):
    return LtvModel.from_config(cfg["orbit"])


@pytest.fixture(scope="session")
def model_kep(cfg):
    m = LtvModel.from_config(cfg["orbit"])
    return LtvModel(m.elements0, j2_enabled=False)


def random_roe_state(rng: np.random.Generator) -> np.ndarray:
    """Scaled qnsROE draw straddling the 25 m keep-out sphere."""
    d_a = rng.uniform(-5, 5)
    d_lam = rng.uniform(-60, 60)
    e_mag = rng.uniform(0, 40)
    e_ang = rng.uniform(0, 2 * np.pi)
    i_mag = rng.uniform(0, 40)
    i_ang = rng.uniform(0, 2 * np.pi)
    return np.array(
        [
            d_a,
            d_lam,
            e_mag * np.cos(e_ang),
            e_mag * np.sin(e_ang),
            i_mag * np.cos(i_ang),
            i_mag * np.sin(i_ang),
        ]
    )
