"""Shared fixtures: a small toy link that exercises every code path quickly."""

import pytest

from thzlink.chain import HardwareProfile, make_link
from thzlink.channel import ChannelModel
from thzlink.core import RandomSource, SystemConfig


TOY_SEED = 77


def toy_system(**overrides) -> SystemConfig:
    defaults = dict(
        n_tx_antennas=8,
        n_rx_antennas=8,
        n_tx_chains=2,
        n_rx_chains=2,
        n_streams=2,
        pilot_len=400,
        transmit_power_dbm=15.0,
        rng_seed=TOY_SEED,
    )
    defaults.update(overrides)
    return SystemConfig(**defaults)


def toy_channel_model(**overrides) -> ChannelModel:
    defaults = dict(n_paths=3, normalization="unit", gain_profile="equal")
    defaults.update(overrides)
    return ChannelModel(**defaults)


def toy_link(power_dbm=15.0, seed=TOY_SEED, **profile_overrides):
    cfg = toy_system(transmit_power_dbm=power_dbm)
    profile = HardwareProfile(**profile_overrides)
    return make_link(cfg, toy_channel_model(), profile, RandomSource(seed, "toy"))


@pytest.fixture
def small_link():
    return toy_link()


@pytest.fixture
def rng():
    return RandomSource(1234, "test")
