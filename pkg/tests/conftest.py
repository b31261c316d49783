from pathlib import Path
import random

import pytest

from portknock.beacon import FileBeaconSource, derive_beacon
from portknock.crucible import KnockKey, blake2b_keyed
from portknock.profile import KdfParams
from portknock.schnorr import GroupParams, generate_params

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def fixtures_dir():
    return FIXTURES


@pytest.fixture
def block():
    return FileBeaconSource(FIXTURES / "block_630000.json").fetch_latest()


@pytest.fixture
def next_block():
    return FileBeaconSource(FIXTURES / "block_630001.json").fetch_latest()


@pytest.fixture
def fast_kdf():
    # keeps unit tests quick; the full-cost default KDF is exercised in test_acceptance
    return KdfParams(rounds=1, memory_kib=64, parallelism=1)


@pytest.fixture
def knock_key():
    return KnockKey(bytes(range(32)))


@pytest.fixture
def beacon_value(block, knock_key):
    return derive_beacon(block, knock_key, blake2b_keyed)


@pytest.fixture
def tiny_group():
    return GroupParams(23, 11, 2)


@pytest.fixture(scope="session")
def group512():
    return generate_params(512, 256, random.Random(512))
