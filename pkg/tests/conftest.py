"""
Shared fixtures: the default operating point (five sensors, 150 ms period,
L = 160 bits over N = 80 channel uses, 5 dB average SNR).
"""

import sys
from pathlib import Path

import pytest

# Make the src package importable, as reconstruct.py does
PROJECT_ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(PROJECT_ROOT))

from src.reconstruction.analytic import Scheme, SchemeConfig  # noqa: E402
from src.reconstruction.field import SourceParams, place_sensors  # noqa: E402
from src.reconstruction.spt import LinkParams  # noqa: E402


@pytest.fixture
def source():
    return SourceParams()


@pytest.fixture
def link():
    return LinkParams()


@pytest.fixture
def field():
    return place_sensors(5, 10.0, seed=42)


@pytest.fixture
def no_scheme():
    return SchemeConfig(scheme=Scheme.NO_INFER)


@pytest.fixture
def syn_scheme():
    return SchemeConfig(scheme=Scheme.SYN_INFER)


@pytest.fixture
def asyn_scheme():
    return SchemeConfig(scheme=Scheme.ASYN_INFER, shift_s=0.03)
