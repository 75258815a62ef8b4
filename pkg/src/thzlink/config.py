"""Experiment configuration: one JSON file drives every experiment.

Key names carry explicit units (dbm, hz, db2, deg, rad2). The file round-trips
losslessly through load/save, and every stochastic quantity in an experiment
derives from the single top-level seed.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .channel import ChannelModel
from .chain import SCENARIOS, HardwareProfile
from .core import SystemConfig
from .impairments import RappPaParams


class SchemaError(ValueError):
    """Configuration file does not match the schema."""


@dataclass
class SystemSection:
    n_tx_antennas: int = 256
    n_rx_antennas: int = 256
    n_tx_chains: int = 4
    n_rx_chains: int = 4
    n_streams: int = 4
    bandwidth_hz: float = 1e9
    phase_shifter_bits: int = 6


@dataclass
class ChannelSection:
    n_paths: int = 6
    normalization: str = "unit"
    gain_profile: str = "equal"
    min_sin_separation: float | None = None


@dataclass
class RappSection:
    alpha_a: float = 4.708
    x_sat: float = 0.663
    sigma_a: float = 1.603
    alpha_phi: float = -740.2
    q1: float = 1.945
    beta_phi: float = 0.298
    q2: float = 1.797
    am_pm_degrees: bool = True


@dataclass
class HardwareSection:
    dac_bits: int | None = 6
    adc_bits: int | None = 6
    aqnm_literal_beta: bool = False
    iq_gain_range: list = field(default_factory=lambda: [0.9, 1.1])
    iq_phase_range_deg: list = field(default_factory=lambda: [-20.0, 20.0])
    phase_noise_var_rad2: float = 1e-4
    shifter_amp_err_var_db2: float = 1.2
    shifter_phase_err_std_deg: float = 10.2
    shifter_amp_db_divisor: float = 10.0
    pa_linear_gain_db: float = 13.458
    pa_drive_scale: float = 1.0
    rapp: RappSection = field(default_factory=RappSection)


@dataclass
class TrainingSection:
    n_train_samples: int = 8000
    n_hidden: int = 10
    batch_size: int = 64
    stage1_epochs: int = 300
    stage1_learning_rate: float = 3e-3
    stage1_lr_final: float = 5e-5
    stage2_epochs: int = 150
    stage2_learning_rate: float = 1e-3
    stage2_lr_final: float = 2e-5
    ddnn_epochs: int = 150
    optimizer: str = "adam"
    train_powers_dbm: list = field(default_factory=lambda: [15.0])


@dataclass
class SweepSection:
    powers_dbm: list = field(default_factory=lambda: [-10.0, -5.0, 0.0, 5.0, 10.0, 15.0])
    n_symbol_vectors: int = 25000      # x N_s QAM symbols per point
    scenarios: list = field(default_factory=lambda: list(SCENARIOS))


@dataclass
class EvalSection:
    n_symbol_vectors: int = 25000
    coded_n_symbol_vectors: int = 8000


@dataclass
class CalibrationSection:
    anchor_power_dbm: float = 5.0
    anchor_snr_db: float = 7.95
    anchor_includes_combining_gain: bool = True


@dataclass
class OutputSection:
    figures: bool = True


@dataclass
class ExperimentConfig:
    seed: int = 2024
    system: SystemSection = field(default_factory=SystemSection)
    channel: ChannelSection = field(default_factory=ChannelSection)
    hardware: HardwareSection = field(default_factory=HardwareSection)
    training: TrainingSection = field(default_factory=TrainingSection)
    sweep: SweepSection = field(default_factory=SweepSection)
    evaluation: EvalSection = field(default_factory=EvalSection)
    calibration: CalibrationSection = field(default_factory=CalibrationSection)
    outputs: OutputSection = field(default_factory=OutputSection)

    # --- object builders --------------------------------------------------
    def system_config(self, power_dbm: float | None = None) -> SystemConfig:
        s = self.system
        return SystemConfig(
            n_tx_antennas=s.n_tx_antennas, n_rx_antennas=s.n_rx_antennas,
            n_tx_chains=s.n_tx_chains, n_rx_chains=s.n_rx_chains,
            n_streams=s.n_streams, pilot_len=self.training.n_train_samples,
            bandwidth_hz=s.bandwidth_hz,
            transmit_power_dbm=(power_dbm if power_dbm is not None
                                else (self.training.train_powers_dbm or [15.0])[0]),
            rng_seed=self.seed, phase_shifter_bits=s.phase_shifter_bits)

    def channel_model(self) -> ChannelModel:
        c = self.channel
        return ChannelModel(n_paths=c.n_paths, normalization=c.normalization,
                            gain_profile=c.gain_profile,
                            min_sin_separation=c.min_sin_separation)

    def hardware_profile(self) -> HardwareProfile:
        h = self.hardware
        r = h.rapp
        rapp = RappPaParams(alpha_a=r.alpha_a, x_sat=r.x_sat, sigma_a=r.sigma_a,
                            alpha_phi=r.alpha_phi, q1=r.q1, beta_phi=r.beta_phi,
                            q2=r.q2, am_pm_degrees=r.am_pm_degrees)
        return HardwareProfile(
            dac_bits=h.dac_bits, adc_bits=h.adc_bits,
            aqnm_literal_beta=h.aqnm_literal_beta,
            iq_gain_range=tuple(h.iq_gain_range),
            iq_phase_range_deg=tuple(h.iq_phase_range_deg),
            phase_noise_var_rad2=h.phase_noise_var_rad2,
            shifter_amp_var_db2=h.shifter_amp_err_var_db2,
            shifter_phase_std_deg=h.shifter_phase_err_std_deg,
            shifter_db_divisor=h.shifter_amp_db_divisor,
            pa_linear_gain_db=h.pa_linear_gain_db,
            pa_drive_scale=h.pa_drive_scale,
            rapp=rapp)


_SECTIONS = {f.name: f.type for f in dataclasses.fields(ExperimentConfig)
             if f.name != "seed"}


def _fill(cls, data: dict, path: str):
    if not isinstance(data, dict):
        raise SchemaError(f"section {path} must be a JSON object")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise SchemaError(f"unknown keys at {path}: {unknown}")
    kwargs = {}
    for name, value in data.items():
        f = known[name]
        default = (f.default_factory() if f.default_factory is not dataclasses.MISSING
                   else f.default)
        if dataclasses.is_dataclass(default):
            kwargs[name] = _fill(type(default), value, f"{path}.{name}")
        else:
            kwargs[name] = value
    return cls(**kwargs)


def config_from_dict(data: dict) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise SchemaError("config root must be a JSON object")
    unknown = sorted(set(data) - set(_SECTIONS) - {"seed"})
    if unknown:
        raise SchemaError(f"unknown top-level keys: {unknown}")
    cfg = ExperimentConfig(seed=data.get("seed", ExperimentConfig.seed))
    for name in _SECTIONS:
        if name in data:
            section_cls = type(getattr(cfg, name))
            setattr(cfg, name, _fill(section_cls, data[name], name))
    return cfg


def config_to_dict(cfg: ExperimentConfig) -> dict:
    return dataclasses.asdict(cfg)


def load_config(path: str) -> ExperimentConfig:
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as err:
            raise SchemaError(f"config is not valid JSON: {err}") from err
    return config_from_dict(data)


def save_config(cfg: ExperimentConfig, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(config_to_dict(cfg), fh, indent=2, sort_keys=True)
        fh.write("\n")
