"""Simulation configuration: types, Table I defaults, YAML loading and dumping.

All values are stored in internal units (um, us).  The YAML document uses the
same units; every key carries its unit as a suffix.  See ``docs/config.md``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from importlib import resources
from pathlib import Path
from typing import Any

import yaml

from bloodcomm import units
from bloodcomm.geometry import CylindricalPosition

OUTLET_POLICIES = ("absorbing", "recirculate_cells")
SAMPLING_MODES = ("round", "poisson")

# Sections consumed by other modules; load_config accepts but ignores them.
FOREIGN_SECTIONS = ("encoder", "receiver_chain", "experiment")


class ConfigError(ValueError):
    """Raised for malformed or invalid configuration documents."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass(frozen=True)
class VesselGeometry:
    radius: float = 30.0
    length: float = units.mm(1.35)
    outlet: str = "absorbing"

    @property
    def circumference(self) -> float:
        return 2.0 * math.pi * self.radius


@dataclass(frozen=True)
class FluidCharacteristics:
    mean_velocity: float = units.mm_per_s(0.5)
    viscosity: float = 1.3e-3
    temperature: float = 310.0


@dataclass(frozen=True)
class SpeciesSpec:
    name: str
    radius: float
    concentration: float = 0.0
    receptors: int = 0
    receptor_radius: float = 0.0
    diffusivity: float | None = None


@dataclass(frozen=True)
class ReceiverSpec:
    """Wall receiver tiling and receptor parameters.

    The tiled band spans ``[delta_l_min, delta_l_max]`` relative to the
    transmitter release point along the axis; the rest of the wall only reflects.
    """

    side: float = 15.0
    receptors: int = 1000
    receptor_radius: float = units.nm(4.0)
    delta_l_min: float = -405.0
    delta_l_max: float = 945.0
    finite_receptors: bool = False
    recycle_time: float = 0.0


def table1_species() -> tuple[SpeciesSpec, ...]:
    return (
        SpeciesSpec("rbc", radius=3.5, concentration=4.0e6),
        SpeciesSpec("wbc", radius=5.0, concentration=4.0e3, receptors=2000,
                    receptor_radius=units.nm(4.0)),
        SpeciesSpec("platelet", radius=1.0, concentration=2.0e5, receptors=1000,
                    receptor_radius=units.nm(4.0)),
        SpeciesSpec("carrier", radius=units.nm(1.75), concentration=0.0),
    )


@dataclass(frozen=True)
class SimulationConfig:
    geometry: VesselGeometry = field(default_factory=VesselGeometry)
    fluid: FluidCharacteristics = field(default_factory=FluidCharacteristics)
    species: tuple[SpeciesSpec, ...] = field(default_factory=table1_species)
    time_step: float = 5.0
    duration: float = units.seconds(8.0)
    transmitter: CylindricalPosition = field(
        default_factory=lambda: CylindricalPosition(phi=math.pi / 4, r=5 * 5.425, z=405.0))
    transmitter_species: str = "platelet"
    carrier_species: str = "carrier"
    receivers: ReceiverSpec = field(default_factory=ReceiverSpec)
    seed: int = 0
    threads: int = 1
    deterministic: bool = True
    population_sampling: str = "round"
    carrier_collisions: bool = False
    mobile_capture: bool = False
    max_sweeps: int = 8

    def __post_init__(self):
        validate(self)

    def species_by_name(self, name: str) -> SpeciesSpec:
        for s in self.species:
            if s.name == name:
                return s
        raise KeyError(name)

    @property
    def n_steps(self) -> int:
        return int(round(self.duration / self.time_step))

    def with_(self, **changes) -> "SimulationConfig":
        return replace(self, **changes)


def validate(cfg: SimulationConfig) -> None:
    g, f = cfg.geometry, cfg.fluid
    if not (g.radius > 0 and g.length > 0):
        raise ConfigError("vessel radius and length must be > 0")
    if g.outlet not in OUTLET_POLICIES:
        raise ConfigError(f"outlet policy must be one of {OUTLET_POLICIES}")
    if not (f.mean_velocity > 0 and f.viscosity > 0 and f.temperature > 0):
        raise ConfigError("fluid mean velocity, viscosity and temperature must be > 0")
    names = [s.name for s in cfg.species]
    if len(set(names)) != len(names):
        raise ConfigError("duplicate species names")
    for s in cfg.species:
        if s.radius <= 0:
            raise ConfigError(f"species {s.name}: radius must be > 0")
        if s.concentration < 0:
            raise ConfigError(f"species {s.name}: concentration must be >= 0")
        if s.receptors < 0 or s.receptor_radius < 0:
            raise ConfigError(f"species {s.name}: receptor values must be >= 0")
        if s.diffusivity is not None and s.diffusivity < 0:
            raise ConfigError(f"species {s.name}: diffusivity must be >= 0")
        if 2 * s.radius > 2 * g.radius:
            raise ConfigError(f"species {s.name}: larger than the vessel")
    for role, name in (("transmitter", cfg.transmitter_species), ("carrier", cfg.carrier_species)):
        if name not in names:
            raise ConfigError(f"{role} species {name!r} is not defined")
    if cfg.species_by_name(cfg.carrier_species).concentration != 0:
        raise ConfigError("carrier species must have concentration 0 (carriers are released by bursts)")
    if not cfg.time_step > 0:
        raise ConfigError("time step must be > 0")
    if not cfg.duration >= cfg.time_step:
        raise ConfigError("duration must be >= time step")
    tx = cfg.transmitter
    a_tx = cfg.species_by_name(cfg.transmitter_species).radius
    if not 0 <= tx.r <= g.radius - a_tx:
        raise ConfigError("transmitter outside vessel: need 0 <= d <= R - transmitter radius")
    if not 0 <= tx.z <= g.length:
        raise ConfigError("transmitter outside vessel: need 0 <= L <= vessel length")
    rx = cfg.receivers
    if not rx.side > 0:
        raise ConfigError("receiver cell side must be > 0")
    if rx.side > g.circumference:
        raise ConfigError("receiver cell side exceeds the vessel circumference")
    if rx.receptors < 0 or rx.receptor_radius < 0 or rx.recycle_time < 0:
        raise ConfigError("receiver receptor values must be >= 0")
    if not rx.delta_l_min < rx.delta_l_max:
        raise ConfigError("receiver band needs delta_l_min < delta_l_max")
    if tx.z + rx.delta_l_min < -1e-9 or tx.z + rx.delta_l_max > g.length + 1e-9:
        raise ConfigError("receiver band extends outside the vessel")
    if not 0 <= cfg.seed <= 0xFFFFFFFF:
        raise ConfigError("seed must fit in 32 bits")
    if cfg.threads < 1:
        raise ConfigError("thread count must be >= 1")
    if cfg.population_sampling not in SAMPLING_MODES:
        raise ConfigError(f"population sampling must be one of {SAMPLING_MODES}")
    if cfg.max_sweeps < 1:
        raise ConfigError("max_sweeps must be >= 1")


# --------------------------------------------------------------------------
# YAML schema: section -> {yaml key: (field name, converter)}

def _num(v):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise TypeError(f"expected a number, got {v!r}")
    return float(v)


def _int(v):
    if isinstance(v, bool) or not isinstance(v, int):
        if isinstance(v, float) and v.is_integer():
            return int(v)
        raise TypeError(f"expected an integer, got {v!r}")
    return v


def _bool(v):
    if not isinstance(v, bool):
        raise TypeError(f"expected true/false, got {v!r}")
    return v


def _str(v):
    if not isinstance(v, str):
        raise TypeError(f"expected a string, got {v!r}")
    return v


def _opt_num(v):
    return None if v is None else _num(v)


_VESSEL = {"radius_um": ("radius", _num), "length_um": ("length", _num), "outlet": ("outlet", _str)}
_FLUID = {
    "mean_velocity_um_per_us": ("mean_velocity", _num),
    "viscosity_pa_s": ("viscosity", _num),
    "temperature_k": ("temperature", _num),
}
_SPECIES = {
    "radius_um": ("radius", _num),
    "concentration_per_mm3": ("concentration", _num),
    "receptors": ("receptors", _int),
    "receptor_radius_um": ("receptor_radius", _num),
    "diffusivity_um2_per_us": ("diffusivity", _opt_num),
}
_TRANSMITTER = {"phi_rad": ("phi", _num), "d_um": ("r", _num), "z_um": ("z", _num)}
_RECEIVERS = {
    "cell_side_um": ("side", _num),
    "receptors": ("receptors", _int),
    "receptor_radius_um": ("receptor_radius", _num),
    "delta_l_min_um": ("delta_l_min", _num),
    "delta_l_max_um": ("delta_l_max", _num),
    "finite_receptors": ("finite_receptors", _bool),
    "recycle_time_us": ("recycle_time", _num),
}
_SIMULATION = {
    "time_step_us": ("time_step", _num),
    "duration_us": ("duration", _num),
    "seed": ("seed", _int),
    "threads": ("threads", _int),
    "deterministic": ("deterministic", _bool),
    "population_sampling": ("population_sampling", _str),
    "carrier_collisions": ("carrier_collisions", _bool),
    "mobile_capture": ("mobile_capture", _bool),
    "max_sweeps": ("max_sweeps", _int),
}
_TOP = ("vessel", "fluid", "species", "transmitter", "receivers", "simulation") + FOREIGN_SECTIONS


class _LineLoader(yaml.SafeLoader):
    """SafeLoader that remembers the line of every mapping key."""


def _construct_mapping(loader, node, deep=False):
    mapping = yaml.SafeLoader.construct_mapping(loader, node, deep=deep)
    lines = {}
    for key_node, _ in node.value:
        lines[loader.construct_object(key_node)] = key_node.start_mark.line + 1
    return _Mapping(mapping, lines, node.start_mark.line + 1)


class _Mapping(dict):
    def __init__(self, data, lines, line):
        super().__init__(data)
        self.lines = lines
        self.line = line


_LineLoader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _construct_mapping)


def parse_document(text: str) -> dict:
    """Parse YAML text, mapping syntax errors to ConfigError with a line number."""
    try:
        doc = yaml.load(text, Loader=_LineLoader)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark or exc.context_mark
        line = mark.line + 1 if mark is not None else None
        raise ConfigError(f"parse error: {exc.problem or exc}", line) from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"parse error: {exc}") from None
    if doc is None:
        return _Mapping({}, {}, 1)
    if not isinstance(doc, dict):
        raise ConfigError("top level must be a mapping", 1)
    return doc


def _section(doc, name) -> dict:
    sec = doc.get(name)
    if sec is None:
        return _Mapping({}, {}, _line(doc, name))
    if not isinstance(sec, dict):
        raise ConfigError(f"section {name!r} must be a mapping", _line(doc, name))
    return sec


def _line(mapping, key=None):
    if key is not None and isinstance(mapping, _Mapping) and key in mapping.lines:
        return mapping.lines[key]
    return getattr(mapping, "line", None)


def apply_section(obj, mapping, schema: dict, where: str):
    """Override dataclass ``obj`` fields from a YAML mapping using ``schema``."""
    changes = {}
    for key, value in mapping.items():
        if key not in schema:
            raise ConfigError(f"unknown key {key!r} in {where}", _line(mapping, key))
        attr, conv = schema[key]
        try:
            changes[attr] = conv(value)
        except TypeError as exc:
            raise ConfigError(f"{where}.{key}: {exc}", _line(mapping, key)) from None
    return replace(obj, **changes) if changes else obj


def config_from_document(doc: dict) -> SimulationConfig:
    for key in doc:
        if key not in _TOP:
            raise ConfigError(f"unknown section {key!r}", _line(doc, key))
    base = SimulationConfig()
    geometry = apply_section(base.geometry, _section(doc, "vessel"), _VESSEL, "vessel")
    fluid = apply_section(base.fluid, _section(doc, "fluid"), _FLUID, "fluid")

    species = {s.name: s for s in base.species}
    sp_doc = _section(doc, "species")
    for name, entry in sp_doc.items():
        if entry is None:
            entry = _Mapping({}, {}, _line(sp_doc, name))
        if not isinstance(entry, dict):
            raise ConfigError(f"species {name!r} must be a mapping", _line(sp_doc, name))
        current = species.get(name)
        if current is None:
            if "radius_um" not in entry:
                raise ConfigError(f"new species {name!r} needs radius_um", _line(sp_doc, name))
            current = SpeciesSpec(str(name), radius=1.0)
        species[name] = apply_section(current, entry, _SPECIES, f"species.{name}")

    tx_doc = dict(_section(doc, "transmitter"))
    tx_species = tx_doc.pop("species", base.transmitter_species)
    tx_map = _Mapping(tx_doc, getattr(_section(doc, "transmitter"), "lines", {}), None)
    tx = base.transmitter
    tx_vals = apply_section(_TxProxy(tx.phi, tx.r, tx.z), tx_map, _TRANSMITTER, "transmitter")
    if tx_vals.r < 0:
        raise ConfigError("transmitter outside vessel: d must be >= 0", _line(doc, "transmitter"))

    receivers = apply_section(base.receivers, _section(doc, "receivers"), _RECEIVERS, "receivers")
    sim_doc = dict(_section(doc, "simulation"))
    carrier_species = sim_doc.pop("carrier_species", base.carrier_species)
    sim_map = _Mapping(sim_doc, getattr(_section(doc, "simulation"), "lines", {}), None)
    sim = apply_section(_SimProxy(), sim_map, _SIMULATION, "simulation")

    return SimulationConfig(
        geometry=geometry,
        fluid=fluid,
        species=tuple(species.values()),
        transmitter=CylindricalPosition(phi=tx_vals.phi, r=tx_vals.r, z=tx_vals.z),
        transmitter_species=_str(tx_species),
        carrier_species=_str(carrier_species),
        receivers=receivers,
        **{f.name: getattr(sim, f.name) for f in fields(_SimProxy)},
    )


@dataclass(frozen=True)
class _TxProxy:
    phi: float
    r: float
    z: float


@dataclass(frozen=True)
class _SimProxy:
    time_step: float = SimulationConfig.time_step
    duration: float = SimulationConfig.duration
    seed: int = SimulationConfig.seed
    threads: int = SimulationConfig.threads
    deterministic: bool = SimulationConfig.deterministic
    population_sampling: str = SimulationConfig.population_sampling
    carrier_collisions: bool = SimulationConfig.carrier_collisions
    mobile_capture: bool = SimulationConfig.mobile_capture
    max_sweeps: int = SimulationConfig.max_sweeps


def load_config(text: str) -> SimulationConfig:
    """Build a validated SimulationConfig from YAML text; omitted keys take Table I defaults."""
    return config_from_document(parse_document(text))


def load_config_file(path) -> SimulationConfig:
    return load_config(Path(path).read_text())


def profile_text(name: str) -> str:
    """Text of a bundled profile (``desk`` or ``paper``)."""
    try:
        return resources.files("bloodcomm.profiles").joinpath(f"{name}.yaml").read_text()
    except FileNotFoundError:
        raise ConfigError(f"no bundled profile named {name!r}") from None


def load_profile(name: str) -> SimulationConfig:
    return load_config(profile_text(name))


def _dump_section(obj, schema) -> dict[str, Any]:
    return {key: getattr(obj, attr) for key, (attr, _) in schema.items()}


def config_to_document(cfg: SimulationConfig) -> dict[str, Any]:
    tx = cfg.transmitter
    return {
        "vessel": _dump_section(cfg.geometry, _VESSEL),
        "fluid": _dump_section(cfg.fluid, _FLUID),
        "species": {s.name: _dump_section(s, _SPECIES) for s in cfg.species},
        "transmitter": {"species": cfg.transmitter_species, "phi_rad": tx.phi, "d_um": tx.r, "z_um": tx.z},
        "receivers": _dump_section(cfg.receivers, _RECEIVERS),
        "simulation": {"carrier_species": cfg.carrier_species, **_dump_section(cfg, _SIMULATION)},
    }


def dump_config(cfg: SimulationConfig) -> str:
    return yaml.safe_dump(config_to_document(cfg), sort_keys=False)
