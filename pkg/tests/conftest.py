import math
from dataclasses import replace

import pytest

from bloodcomm.config import ReceiverSpec, VesselGeometry, load_profile
from bloodcomm.geometry import CylindricalPosition


def short_vessel(length=300.0, tx_r=27.125, **sim):
    """Desk densities in a shorter vessel: about a fifth of the particles."""
    cfg = load_profile("desk")
    cfg = cfg.with_(
        geometry=VesselGeometry(radius=30.0, length=length),
        transmitter=CylindricalPosition(math.pi / 4, tx_r, 90.0),
        receivers=ReceiverSpec(delta_l_min=-90.0, delta_l_max=length - 90.0),
        duration=50_000.0,
    )
    return cfg.with_(**sim) if sim else cfg


def with_species(cfg, name, **changes):
    species = tuple(replace(s, **changes) if s.name == name else s for s in cfg.species)
    return cfg.with_(species=species)


@pytest.fixture
def small_cfg():
    return short_vessel()


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
