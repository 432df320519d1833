import pytest

from grid_domain import Box, ball_of_measure, box_of_measure, l_shape, rasterize
from riesz_kernel import RieszParams


@pytest.fixture
def planar():
    return RieszParams(alpha=1.0, dim=2)


@pytest.fixture
def interval_params():
    return RieszParams(alpha=0.5, dim=1)


@pytest.fixture
def unit_square():
    return box_of_measure(1.0, 2)


@pytest.fixture
def unit_disk():
    return ball_of_measure(1.0, 2)


@pytest.fixture
def unit_interval():
    return Box([0.0], [1.0])


@pytest.fixture
def l_domain():
    return rasterize(l_shape(1.0), 1 / 16)


@pytest.fixture
def write_config(tmp_path):
    def write(name, text):
        path = tmp_path / name
        path.write_text(text)
        return str(path)

    return write
