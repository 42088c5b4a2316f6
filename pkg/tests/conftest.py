from __future__ import annotations

import pytest

from awf.clock import ManualClock
from awf.crypto import generate_keypair


@pytest.fixture
def clock():
    return ManualClock("2026-01-01T00:00:00Z")


@pytest.fixture
def keypair():
    return generate_keypair(seed=b"fixture-key")
