import numpy as np
import pytest

from wmipoly.formula import parse_file

SQUARE_MINUS_TRIANGLE = """(box -1 1 -1 1)
(and (<= y1 1) (>= y1 -1) (<= y2 1) (>= y2 -1)
     (or (< y2 -0.5) (> y2 (+ (* 2 y1) 0.5)) (> y2 (+ (* -2 y1) 0.5))))
"""


@pytest.fixture
def smt():
    """The square with the triangle (-0.5,-0.5), (0,0.5), (0.5,-0.5) removed."""
    return parse_file(SQUARE_MINUS_TRIANGLE)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
