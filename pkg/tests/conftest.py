from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from phskew.primitives import (Bump, Constant, FiberMap, Fourier, Shear, Translation,
                               identity_map, linear_map)
from phskew.skew import SkewProduct
from phskew.spectral import CAT

REPO = Path(__file__).resolve().parents[1]
CONFIGS = REPO / "configs"


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def cat():
    return CAT


@pytest.fixture
def decoupled():
    # fiber map independent of the base point: all holonomies are the identity
    return SkewProduct(CAT, linear_map([[2, 1], [1, 1]]))


@pytest.fixture
def translation_skew():
    fib = FiberMap((Translation((1.0, 0.0), Fourier((1, 0), 0.3, 0.2)),), "torus", 2)
    return SkewProduct(CAT, fib)


@pytest.fixture
def shear_skew():
    fib = FiberMap((Shear(0, 1, 0.3, Bump((0.5, 0.5), 0.45)),), "torus", 2)
    return SkewProduct(CAT.power(5), fib)


@pytest.fixture
def trivial_skew():
    return SkewProduct(CAT, identity_map(2))


def unit_const():
    return Constant(1.0)
