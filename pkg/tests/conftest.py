import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

import tomoplan as tp
from helpers import evaluated_scene


@pytest.fixture(scope="session")
def table_params():
    return tp.TravParams()


@pytest.fixture(scope="session")
def spiral_artifacts(tmp_path_factory):
    """The ~23 m spiral built at d_s=0.5, r_g=0.1, evaluated and simplified."""
    spec, cloud, tom = evaluated_scene("spiral_stair", density=300.0, seed=3,
                                       turns=5.0, rise_per_turn=4.6)
    simplified = tp.simplify_tomogram(tom, c_barrier=50.0)
    return spec, cloud, tom, simplified


@pytest.fixture(scope="session")
def flat_small():
    """Noise-free 10x10 m flat plane, evaluated."""
    return evaluated_scene("flat_plane", dims=(10, 10), density=100.0, seed=7)
