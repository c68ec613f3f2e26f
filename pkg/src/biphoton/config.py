"""Run configuration: strict JSON parsing into the component dataclasses.

Unknown keys anywhere in the document are rejected so a typo cannot
silently fall back to a default. Values are validated by the component
dataclasses themselves; validation problems surface as ConfigError.
"""

import hashlib
import json
import os
from dataclasses import dataclass, field, fields

from .calibration import DldCalibration, FibreCalibration
from .engine import EventBuildConfig
from .histograms import BinSpec
from .simgen import AcquisitionConfig
from .spdc import CrystalSpec, FrequencyGrid, PumpSpec
from .tagstream import ChannelMap

SEED_ENV_VAR = "BIPHOTON_SEED"


class ConfigError(ValueError):
    pass


@dataclass
class EventBuildOverrides:
    """User-facing subset of the event-build knobs; the remaining fields are
    derived from the acquisition block (anode propagation, gate center,
    sync folding period)."""

    dld_window_ticks: int | None = None
    dt_guard_ticks: int = 40
    gate_half_width_ticks: int = 400
    fold_sync: bool = True
    jsi_signal_width_ticks: int = 3
    jsi_signal_count: int = 128
    jsi_idler_width_ticks: int = 6
    jsi_idler_count: int = 128


@dataclass
class RunConfig:
    seed: int = 12345
    pump: PumpSpec = field(default_factory=PumpSpec)
    crystal: CrystalSpec = field(default_factory=CrystalSpec)
    grid: FrequencyGrid = field(default_factory=FrequencyGrid)
    acquisition: AcquisitionConfig = field(default_factory=AcquisitionConfig)
    event_build: EventBuildOverrides = field(default_factory=EventBuildOverrides)

    def event_config(self):
        acq = self.acquisition
        ov = self.event_build
        gate_center = int(round(acq.fibre_cal.reference_delay_ps / acq.tick_ps))
        dt_center = int(round(2.0 * acq.dld_cal.x_center_mm / acq.dld_cal.v_mm_per_tick
                              - acq.dld_cal.t_a_ticks))
        jsi_x = _centered_spec(dt_center, ov.jsi_signal_width_ticks, ov.jsi_signal_count)
        jsi_y = _centered_spec(gate_center, ov.jsi_idler_width_ticks, ov.jsi_idler_count)
        return EventBuildConfig.for_instrument(
            t_a_ticks=acq.dld_cal.t_a_ticks,
            gate_center_ticks=gate_center,
            rep_rate_hz=acq.rep_rate_hz,
            sync_divider=acq.sync_divider,
            tick_ps=acq.tick_ps,
            fold_sync=ov.fold_sync,
            dld_window_ticks=ov.dld_window_ticks,
            dt_guard_ticks=ov.dt_guard_ticks,
            gate_half_width_ticks=ov.gate_half_width_ticks,
            jsi_x_spec=jsi_x,
            jsi_y_spec=jsi_y,
        )


def _centered_spec(center, width, count):
    return BinSpec(center - width * count // 2, width, count)


def _strict(cls, data, where):
    if not isinstance(data, dict):
        raise ConfigError(f"section {where!r} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) {unknown} in {where!r}")
    return data


def _build(cls, data, where, nested=()):
    data = dict(_strict(cls, data, where))
    for key, sub_cls in nested:
        if key in data:
            if not isinstance(data[key], dict):
                raise ConfigError(f"{where}.{key} must be an object")
            data[key] = _build(sub_cls, data[key], f"{where}.{key}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid value in {where!r}: {exc}") from exc


def run_config_from_dict(doc):
    if not isinstance(doc, dict):
        raise ConfigError("top-level config must be a JSON object")
    known = {"seed", "pump", "crystal", "grid", "acquisition", "event_build"}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise ConfigError(f"unknown top-level key(s) {unknown}")

    seed = doc.get("seed", 12345)
    if not isinstance(seed, int) or seed < 0:
        raise ConfigError("seed must be a non-negative integer")

    crystal_data = dict(doc.get("crystal", {}))
    if isinstance(crystal_data.get("linearized_coeffs"), list):
        crystal_data["linearized_coeffs"] = tuple(crystal_data["linearized_coeffs"])
    if isinstance(crystal_data.get("linearized_center_nm"), list):
        crystal_data["linearized_center_nm"] = tuple(crystal_data["linearized_center_nm"])

    cfg = RunConfig(
        seed=seed,
        pump=_build(PumpSpec, doc.get("pump", {}), "pump"),
        crystal=_build(CrystalSpec, crystal_data, "crystal"),
        grid=_build(FrequencyGrid, doc.get("grid", {}), "grid"),
        acquisition=_build(AcquisitionConfig, doc.get("acquisition", {}), "acquisition",
                           nested=(("dld_cal", DldCalibration),
                                   ("fibre_cal", FibreCalibration),
                                   ("channel_map", ChannelMap))),
        event_build=_build(EventBuildOverrides, doc.get("event_build", {}), "event_build"),
    )

    env_seed = os.environ.get(SEED_ENV_VAR)
    if env_seed is not None:
        try:
            cfg.seed = int(env_seed)
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV_VAR} must be an integer") from exc
    cfg.acquisition.seed = cfg.seed
    return cfg


def load_run_config(path):
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return run_config_from_dict(doc)


def config_sha256(path):
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        digest.update(fh.read())
    return digest.hexdigest()


def default_config_dict():
    """Template document mirroring the built-in defaults."""
    return {
        "seed": 12345,
        "pump": {"center_wavelength_nm": 386.6, "fwhm_bandwidth_nm": 0.167},
        "crystal": {
            "length_mm": 5.0,
            "phase_matching_angle_deg": 25.0,
            "material": "LBO",
            "pm_model": "sellmeier",
        },
        "grid": {
            "signal_center_nm": 515.0, "idler_center_nm": 1550.0,
            "signal_span_nm": 8.0, "idler_span_nm": 70.0,
            "n_signal": 512, "n_idler": 512,
        },
        "acquisition": {
            "rep_rate_hz": 76e6,
            "sync_divider": 63,
            "pair_prob_per_pulse": 2.23e-3,
            "eta_signal": 0.36,
            "eta_idler": 0.36,
            "mcp_jitter_fwhm_ps": 263.0,
            "dtx_jitter_fwhm_ps": 263.0,
            "snspd_mcp_conv_jitter_fwhm_ps": 310.0,
            "dld_dark_rate_hz": 2000.0,
            "snspd_dark_rate_hz": 200.0,
            "duration_s": 1.0,
            "tick_ps": 25,
            "mcp_delay_ps": 5000.0,
            "dld_cal": {
                "t_a_ticks": 800,
                "v_mm_per_tick": 0.05,
                "grating_dispersion_nm_per_mm": 1.60 / 1.86,
                "x_center_mm": 20.0,
            },
            "fibre_cal": {
                "dispersion_ps_per_nm": -255.0,
                "reference_delay_ps": 7.7e6,
            },
        },
        "event_build": {
            "dt_guard_ticks": 40,
            "gate_half_width_ticks": 400,
            "fold_sync": True,
        },
    }
