import numpy as np
import pytest

from nvdissip import protocol, pulse
from nvdissip.spin_model import reference_register

KINDS = ("conditional_x_half", "z_half", "unconditional_x_half")


def build_library(reg, spins, order_span=4):
    return {pulse.library_key(s, k): pulse.compile_gate(pulse.GateTarget(k, s), reg, order_span=order_span)
            for s in spins for k in KINDS}


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def realistic_register():
    """Targets No.2, No.4 with spectator No.1."""
    return reference_register(["1", "2", "4"])


@pytest.fixture(scope="session")
def realistic_library(realistic_register):
    return build_library(realistic_register, ("2", "4"))


@pytest.fixture(scope="session")
def realistic_setup(realistic_register, realistic_library):
    return protocol.compiled_setup(realistic_register, realistic_library, ("2", "4"))


@pytest.fixture(scope="session")
def single_no2_library():
    reg = reference_register(["2"])
    return reg, build_library(reg, ("2",))


@pytest.fixture(scope="session")
def full_register_no2_reference_library():
    """No.2 gates compiled on all four spins at the published resonance orders."""
    reg = reference_register()
    return reg, build_library(reg, ("2",), order_span=0)
