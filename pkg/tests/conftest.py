"""Shared scenario fixtures. Heavy setups (gain synthesis) are session-scoped."""

import numpy as np
import pytest

import switchstab as ss


@pytest.fixture(scope="session")
def small_setup():
    """n=2, m=1, p=2 with rich records: one-step detection, fast everywhere."""
    master = 77
    modes = ss.plant.gen_modes(master, n=2, m=1, p=2, spectral_range=(0.7, 1.05))
    init = [ss.plant.gen_init_data(mode, T=4, seed=[master, i])
            for i, mode in enumerate(modes)]
    lib = ss.build_library(init, lam=0.8)
    plant = ss.SwitchedPlant(modes=tuple(modes), signal=ss.Adaptive(mean_dwell=20, seed=0))
    return plant, lib


@pytest.fixture(scope="session")
def slow_setup():
    """n=3, m=2, p=3 with T=4 < n+m records and slow switching.

    Short records keep the consistent sets fat, so detection needs two steps
    and the mid-detection certificate case is exercised. Mean dwell 70 keeps
    the dwell/activation trade-off condition satisfiable at tau >= 50.
    """
    master = 77
    modes = ss.plant.gen_modes(master, n=3, m=2, p=3, spectral_range=(0.7, 1.05))
    init = [ss.plant.gen_init_data(mode, T=4, seed=[master, i])
            for i, mode in enumerate(modes)]
    lib = ss.build_library(init, lam=0.8)
    plant = ss.SwitchedPlant(modes=tuple(modes), signal=ss.Adaptive(mean_dwell=70, seed=0))
    growth = ss.lmi.growth_params(list(modes), list(lib.certs))
    mu = ss.lmi.compute_mu(list(lib.certs))
    return plant, lib, growth, mu


@pytest.fixture(scope="session")
def sec5_setup():
    """The headline scenario: n=5, m=3, p=5, T=7, decay 0.8, dwell 8."""
    master = 2024
    modes = ss.plant.gen_modes(master, n=5, m=3, p=5, spectral_range=(0.8, 1.2))
    init = [ss.plant.gen_init_data(mode, T=7, seed=[master, i])
            for i, mode in enumerate(modes)]
    lib = ss.build_library(init, lam=0.8)
    plant = ss.SwitchedPlant(modes=tuple(modes), signal=ss.Adaptive(mean_dwell=8, seed=0))
    return plant, lib


def random_x0(seed, n, scale=1.0):
    rng = np.random.default_rng([seed, 777])
    return scale * rng.standard_normal(n)
