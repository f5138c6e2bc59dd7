from __future__ import annotations

import pytest

from helpers import make_scene


@pytest.fixture
def fig_scene():
    """Five objects laid out along x, with a few shared attributes.

        0 small red rubber cylinder   (0, 0)   centre of the layout
        1 large blue metal cube       (2, 0)
        2 small green rubber sphere   (-2, 0)
        3 large red metal sphere      (0, 2)   behind 0
        4 small yellow metal cube     (0, -2)  in front of 0
    """
    return make_scene(
        [
            ("small", "red", "rubber", "cylinder", 0, 0),
            ("large", "blue", "metal", "cube", 2, 0),
            ("small", "green", "rubber", "sphere", -2, 0),
            ("large", "red", "metal", "sphere", 0, 2),
            ("small", "yellow", "metal", "cube", 0, -2),
        ]
    )
