import numpy as np
import pytest


@pytest.fixture(autouse=True)
def _fixed_print_options():
    with np.printoptions(precision=6, suppress=True):
        yield
