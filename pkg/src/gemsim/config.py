"""JSON run configuration with unit-suffixed keys.

Example::

    {
      "seed": 1,
      "ensemble": {"od_resonant": 300, "length_m": 0.005},
      "schedule": {"eta_write_hz_per_m": 4e7, "eta_read_hz_per_m": -4e7,
                   "switch_time_s": 3e-5},
      "pulse": {"fwhm_s": 1e-5}
    }

Every section and key is optional; omitted values take the defaults of the
corresponding domain type.  Unknown keys are rejected with their location.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from gemsim.errors import ConfigError, DomainError
from gemsim.model import EnsembleProfile, GradientSchedule, RamanCoupling, TransitionLine
from gemsim.solver import DecoherenceModel, ProbePulse, SimulationGrid

# section -> (type, {json key: field name})
SECTIONS = {
    "ensemble": (
        EnsembleProfile,
        {
            "od_resonant": "od_resonant",
            "length_m": "length",
            "sigma_x_m": "sigma_x",
            "sigma_y_m": "sigma_y",
            "sigma_z_m": "sigma_z",
            "temperature_k": "temperature",
            "atom_number": "atom_number",
            "atomic_mass_kg": "atomic_mass",
            "mf_usable_fraction": "mf_usable_fraction",
        },
    ),
    "line": (TransitionLine, {"gamma_hz": "gamma", "center_offset_hz": "center_offset"}),
    "coupling": (
        RamanCoupling,
        {
            "rabi_frequency_hz": "rabi_frequency",
            "one_photon_detuning_hz": "one_photon_detuning",
            "two_photon_detuning_hz": "two_photon_detuning",
        },
    ),
    "schedule": (
        GradientSchedule,
        {
            "eta_write_hz_per_m": "eta_write",
            "eta_read_hz_per_m": "eta_read",
            "switch_time_s": "switch_time",
            "settle_duration_s": "settle_duration",
            "settle_tolerance": "settle_tolerance",
            "settle_model": "settle_model",
            "coupling_off_during_hold": "coupling_off_during_hold",
            "hold_guard_s": "hold_guard",
        },
    ),
    "pulse": (
        ProbePulse,
        {
            "shape": "shape",
            "fwhm_s": "fwhm",
            "peak_amplitude": "peak_amplitude",
            "center_time_s": "center_time",
            "two_photon_offset_hz": "two_photon_offset",
            "sample_times_s": "sample_times",
            "samples": "samples",
        },
    ),
    "decoherence": (
        DecoherenceModel,
        {
            "storage_rate_hz": "storage_rate",
            "write_read_rate_hz": "write_read_rate",
            "form": "form",
        },
    ),
}

GRID_KEYS = {"n_z": "n_z", "dt_s": "dt", "t_end_s": "t_end"}
OUTPUT_KEYS = {"traces_csv", "report_json", "spacetime_csv"}
TOP_KEYS = set(SECTIONS) | {"grid", "output", "seed", "label"}


@dataclass(frozen=True)
class RunConfig:
    ensemble: EnsembleProfile = EnsembleProfile()
    line: TransitionLine = TransitionLine()
    coupling: RamanCoupling = RamanCoupling()
    schedule: GradientSchedule = GradientSchedule()
    pulse: ProbePulse = ProbePulse()
    decoherence: DecoherenceModel = DecoherenceModel()
    grid: dict = field(default_factory=dict)
    output: dict = field(default_factory=dict)
    seed: int = 0
    label: str = ""

    def simulation_grid(self) -> SimulationGrid:
        """Grid from the config; missing entries take the solver defaults."""
        default = SimulationGrid.default(
            self.pulse, self.schedule, self.ensemble, n_z=self.grid.get("n_z", 256)
        )
        return SimulationGrid(
            n_z=int(self.grid.get("n_z", default.n_z)),
            dt=float(self.grid.get("dt", default.dt)),
            t_end=float(self.grid.get("t_end", default.t_end)),
        )

    def to_dict(self) -> dict:
        out = {}
        for section, (_, keys) in SECTIONS.items():
            obj = getattr(self, section)
            d = {}
            for key, name in keys.items():
                value = getattr(obj, name)
                if value is None:
                    continue
                if name == "samples":
                    value = [[c.real, c.imag] for c in value]
                elif isinstance(value, tuple):
                    value = list(value)
                d[key] = value
            out[section] = d
        inv = {v: k for k, v in GRID_KEYS.items()}
        out["grid"] = {inv[k]: v for k, v in self.grid.items()}
        out["output"] = dict(self.output)
        out["seed"] = self.seed
        if self.label:
            out["label"] = self.label
        return out


def _complex_list(values, where):
    out = []
    for i, v in enumerate(values):
        if isinstance(v, (list, tuple)) and len(v) == 2:
            out.append(complex(float(v[0]), float(v[1])))
        elif isinstance(v, (int, float)):
            out.append(complex(v))
        else:
            raise ConfigError(f"{where}[{i}]: expected a number or [re, im] pair")
    return tuple(out)


def parse_config(data: dict, source: str = "<config>") -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a JSON object")
    unknown = set(data) - TOP_KEYS
    if unknown:
        raise ConfigError(f"{source}: unknown top-level key(s) {sorted(unknown)}")
    built = {}
    for section, (cls, keys) in SECTIONS.items():
        raw = data.get(section, {})
        if not isinstance(raw, dict):
            raise ConfigError(f"{source}: {section} must be an object")
        bad = set(raw) - set(keys)
        if bad:
            raise ConfigError(f"{source}: unknown key(s) {sorted(bad)} in section '{section}'")
        kwargs = {}
        for key, value in raw.items():
            name = keys[key]
            if name == "samples":
                value = _complex_list(value, f"{source}: {section}.{key}")
            elif name == "sample_times":
                value = tuple(float(v) for v in value)
            kwargs[name] = value
        try:
            built[section] = cls(**kwargs)
        except (DomainError, TypeError, ValueError) as exc:
            raise ConfigError(f"{source}: section '{section}': {exc}") from None
    grid_raw = data.get("grid", {})
    bad = set(grid_raw) - set(GRID_KEYS)
    if bad:
        raise ConfigError(f"{source}: unknown key(s) {sorted(bad)} in section 'grid'")
    grid = {GRID_KEYS[k]: v for k, v in grid_raw.items() if v is not None}
    output = data.get("output", {})
    bad = set(output) - OUTPUT_KEYS
    if bad:
        raise ConfigError(f"{source}: unknown key(s) {sorted(bad)} in section 'output'")
    seed = data.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigError(f"{source}: seed must be an integer")
    cfg = RunConfig(grid=grid, output=dict(output), seed=seed, label=str(data.get("label", "")), **built)
    try:
        grid_obj = cfg.simulation_grid()
        grid_obj.validate(cfg.schedule, cfg.ensemble.length)
    except DomainError as exc:
        raise ConfigError(f"{source}: section 'grid': {exc}") from None
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    return parse_config(data, str(path))


def require_recall(cfg: RunConfig, source: str = "<config>"):
    """Storage/recall runs need a reversing read gradient."""
    if not cfg.schedule.recalls:
        raise ConfigError(
            f"{source}: schedule.eta_read_hz_per_m must have the opposite sign to "
            "schedule.eta_write_hz_per_m (no gradient reversal, nothing to recall)"
        )
