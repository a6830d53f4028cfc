import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bloodcomm import units
from bloodcomm.config import (
    ConfigError,
    SimulationConfig,
    dump_config,
    load_config,
    load_profile,
    profile_text,
)
from bloodcomm.geometry import CylindricalPosition, from_cartesian, signed_angle, to_cartesian, wrap_angle
from bloodcomm.physics import (
    expected_population,
    population_count,
    receptor_coverage,
    species_diffusivity,
    stokes_einstein_diffusivity,
)

# frozen from the standalone Stokes-Einstein oracle in tests/oracles.py
D_CARRIER = 9.980733338859119e-05
D_PLATELET = 1.7466283343003461e-07


def test_unit_conversions():
    assert units.mm_per_s(0.5) == pytest.approx(5e-4)
    assert units.nm(4.0) == pytest.approx(0.004)
    assert units.mm(1.35) == pytest.approx(1350.0)
    assert units.seconds(8) == 8e6


def test_stokes_einstein_carrier_and_platelet():
    assert stokes_einstein_diffusivity(0.00175, 310.0, 1.3e-3) == pytest.approx(D_CARRIER, rel=1e-12)
    assert stokes_einstein_diffusivity(1.0, 310.0, 1.3e-3) == pytest.approx(D_PLATELET, rel=1e-12)


def test_stokes_einstein_matches_oracle_function():
    from oracles import stokes_einstein_um2_per_us

    for a in (0.001, 0.5, 3.5):
        assert stokes_einstein_diffusivity(a, 300.0, 1e-3) == pytest.approx(
            stokes_einstein_um2_per_us(a * 1e-6, 300.0, 1e-3), rel=1e-12)


@given(st.floats(1e-4, 10.0))
def test_doubling_radius_halves_diffusivity(a):
    d1 = stokes_einstein_diffusivity(a, 310.0, 1.3e-3)
    d2 = stokes_einstein_diffusivity(2 * a, 310.0, 1.3e-3)
    assert d2 == pytest.approx(d1 / 2, rel=1e-12)


def test_stokes_einstein_rejects_nonpositive():
    with pytest.raises(ValueError):
        stokes_einstein_diffusivity(0.0, 310.0, 1e-3)


def test_species_diffusivity_override():
    cfg = SimulationConfig()
    carrier = cfg.species_by_name("carrier")
    assert species_diffusivity(carrier, cfg.fluid) == pytest.approx(D_CARRIER, rel=1e-12)
    from dataclasses import replace

    assert species_diffusivity(replace(carrier, diffusivity=0.0), cfg.fluid) == 0.0


def test_populations_desk_and_table():
    g = SimulationConfig().geometry
    # pi * 30^2 * 1350 um^3 = 3.817e-3 mm^3
    assert expected_population(4.0e6, g) == pytest.approx(15268.140296446394, rel=1e-12)
    assert population_count(4.0e5, g) == 1527
    assert population_count(4.0e3, g) == 15
    assert population_count(2.0e5, g) == 763
    rng = np.random.default_rng(0)
    draws = [population_count(4.0e5, g, "poisson", rng) for _ in range(200)]
    assert abs(np.mean(draws) - 1526.8) < 4 * math.sqrt(1526.8 / 200)
    with pytest.raises(ValueError):
        population_count(1.0, g, "poisson")
    with pytest.raises(ValueError):
        population_count(1.0, g, "uniform")


def test_receptor_coverage():
    assert receptor_coverage(1000, 0.004, 225.0) == pytest.approx(2.2340214425527416e-4, rel=1e-12)
    assert receptor_coverage(0, 0.004, 225.0) == 0.0
    assert receptor_coverage(10**9, 1.0, 225.0) == 1.0


def test_cylindrical_examples():
    assert np.allclose(to_cartesian(CylindricalPosition(0.0, 30.0, 5.0)), [30, 0, 5])
    assert np.allclose(to_cartesian(CylindricalPosition(math.pi / 2, 2.0, 0.0)), [0, 2, 0], atol=1e-15)
    with pytest.raises(ValueError):
        CylindricalPosition(0.0, -1.0, 0.0)


def test_round_trip_fuzz():
    rng = np.random.default_rng(1)
    pts = np.column_stack([rng.uniform(0, 2 * math.pi, 10_000), rng.uniform(0, 30, 10_000),
                           rng.uniform(0, 1350, 10_000)])
    for phi, r, z in pts:
        back = from_cartesian(to_cartesian(CylindricalPosition(phi, r, z)))
        assert back.r == pytest.approx(r, abs=1e-12)
        assert back.z == z
        assert abs(signed_angle(back.phi - phi)) < 1e-9


def test_axis_point_has_zero_angle():
    assert from_cartesian([0.0, 0.0, 3.0]).phi == 0.0


@given(st.floats(-1e3, 1e3, allow_nan=False))
def test_wrap_angle_range(phi):
    w = wrap_angle(phi)
    assert 0.0 <= w < 2 * math.pi
    s = signed_angle(phi)
    assert -math.pi < s <= math.pi


# --- configuration -----------------------------------------------------------

def test_empty_document_gives_table_defaults():
    cfg = load_config("")
    assert cfg == SimulationConfig()
    assert cfg.geometry.radius == 30.0 and cfg.geometry.length == 1350.0
    assert cfg.fluid.mean_velocity == pytest.approx(5e-4)
    assert cfg.time_step == 5.0 and cfg.duration == 8e6
    rbc = cfg.species_by_name("rbc")
    assert (rbc.radius, rbc.concentration) == (3.5, 4.0e6)
    assert cfg.receivers.side == 15.0 and cfg.receivers.receptors == 1000
    assert cfg.transmitter.r == pytest.approx(27.125)


def test_empty_sections_also_default():
    assert load_config("vessel: {}\nfluid:\nspecies: {}\n") == SimulationConfig()


def test_transmitter_outside_vessel_rejected():
    with pytest.raises(ConfigError, match="transmitter outside vessel"):
        load_config("transmitter:\n  d_um: 31.0\n")


def test_zero_time_step_rejected():
    with pytest.raises(ConfigError, match="time step"):
        load_config("simulation:\n  time_step_us: 0\n")


def test_error_reports_line_number():
    with pytest.raises(ConfigError) as info:
        load_config("vessel:\n  radius_um: 30\n  colour: red\n")
    assert info.value.line == 3
    with pytest.raises(ConfigError) as info:
        load_config("simulation:\n  seed: [1\n")
    assert info.value.line is not None


def test_type_errors_reported():
    with pytest.raises(ConfigError, match="expected a number"):
        load_config("fluid:\n  viscosity_pa_s: thick\n")
    with pytest.raises(ConfigError, match="unknown section"):
        load_config("plumbing: {}\n")


def test_dump_round_trip():
    cfg = load_profile("desk")
    assert load_config(dump_config(cfg)) == cfg


@settings(max_examples=40, deadline=None)
@given(st.floats(0.0, 29.0), st.floats(0.0, 2 * math.pi, exclude_max=True), st.integers(0, 2**32 - 1),
       st.floats(0.5, 20.0))
def test_round_trip_property(d, phi, seed, dt):
    base = SimulationConfig()
    cfg = base.with_(transmitter=CylindricalPosition(phi, d, 405.0), seed=seed, time_step=dt)
    assert load_config(dump_config(cfg)) == cfg


def test_profiles_load():
    desk = load_profile("desk")
    paper = load_profile("paper")
    assert desk.species_by_name("rbc").concentration == paper.species_by_name("rbc").concentration / 10
    assert desk.duration == 2e6 and paper.duration == 8e6
    assert "encoder" in profile_text("paper")
    with pytest.raises(ConfigError):
        profile_text("nope")


@pytest.mark.parametrize("text", [
    "vessel:\n  radius_um: -1\n",
    "vessel:\n  outlet: drain\n",
    "species:\n  carrier: {concentration_per_mm3: 5}\n",
    "receivers:\n  cell_side_um: 500\n",
    "receivers:\n  delta_l_max_um: 2000\n",
    "simulation:\n  threads: 0\n",
    "simulation:\n  duration_us: 1\n",
])
def test_invalid_values_rejected(text):
    with pytest.raises(ConfigError):
        load_config(text)
