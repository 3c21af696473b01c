"""Experiment configuration: YAML schema, defaults, validation and model building.

Every field has a default, so an empty file gives the symmetric two-user
desk configuration.  Errors name the offending field by its dotted path.
"""
from __future__ import annotations

import hashlib
import json
import math
from fractions import Fraction
from pathlib import Path
from typing import Literal, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from ..baselines import BASELINE_KINDS
from ..engine import Controller, LearnerSettings
from ..learning import delay_scale
from ..model import ActionGrid, ChannelModel, EnergyModel, Network, TrafficModel, battery_joules
from ..policy import ACTION_TERMS, STATE_TERMS, BasisSet, LocalStateIndexer

__all__ = ["SCHEMA_VERSION", "SCHEMES", "SWEEP_AXES", "ConfigError", "ExperimentConfig", "load_config",
           "parse_config", "emit_config", "config_hash", "build_network", "build_controller",
           "learner_settings"]

SCHEMA_VERSION = 1
LEARNER_SCHEMES = ("pomdp", "posg")
SCHEMES = LEARNER_SCHEMES + BASELINE_KINDS
SWEEP_AXES = ("p0", "power_levels", "battery_ah")


class ConfigError(ValueError):
    """Invalid configuration; ``path`` is the dotted field path."""

    def __init__(self, path: str, message: str):
        self.path = path
        self.message = message
        super().__init__(f"{path}: {message}" if path else message)


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


def _positive(v, name="value"):
    if v <= 0:
        raise ValueError(f"{name} must be positive")
    return v


class SystemSection(_Section):
    users: int = Field(2, ge=1, le=8)
    bandwidth_hz: float = 1.0e6
    frame_s: float = 0.05
    noise_psd: float = 1.0e-6  # W/Hz
    xi: float = Field(1.0, gt=0.0, le=1.0)
    direct_loss_db: float = 15.0
    cross_ratio: float = Field(0.1, ge=0.0)
    fading_levels: list[float] = [0.5, 1.5]
    fading_probs: list[float] = [0.5, 0.5]
    circuit_w: float = Field(40.0, ge=0.0)

    @field_validator("bandwidth_hz", "frame_s", "noise_psd")
    @classmethod
    def _pos(cls, v):
        return _positive(v)


class TrafficSection(_Section):
    arrival_rate: float = Field(1.1, ge=0.0)  # packets/s
    mean_packet_bits: float = 2.0e6
    buffer_packets: int = Field(5, ge=1)
    bits_per_unit: float = 1.0e4

    @field_validator("mean_packet_bits", "bits_per_unit")
    @classmethod
    def _pos(cls, v):
        return _positive(v)


class EnergySection(_Section):
    mean_harvest_w: float = Field(800.0, ge=0.0)
    battery_volts: float = 1.2
    battery_ah: float = 20.0
    joules_per_unit: Union[float, Literal["auto"]] = "auto"

    @field_validator("battery_volts", "battery_ah")
    @classmethod
    def _pos(cls, v):
        return _positive(v)

    @field_validator("joules_per_unit")
    @classmethod
    def _jpu(cls, v):
        if v != "auto" and v <= 0:
            raise ValueError("must be positive or 'auto'")
        return v


class GridSection(_Section):
    ac_levels: list[float] = [0.0, 300.0, 600.0, 900.0, 1200.0, 1500.0]
    renew_levels: list[float] = [0.0, 300.0, 600.0, 900.0, 1200.0, 1500.0]

    @field_validator("ac_levels", "renew_levels")
    @classmethod
    def _levels(cls, v):
        if not v or v[0] != 0.0 or any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError("levels must start at 0 and increase strictly")
        return v


class PolicySection(_Section):
    kind: Literal["basis", "tabular"] = "basis"
    features: list[str] = ["busy:total", "one:ac", "queue:ac", "fading:total"]
    queue_edges: Union[list[int], None] = None  # tabular buckets, in queue units
    energy_edges: Union[list[int], None] = None  # tabular buckets, in energy units

    @field_validator("features")
    @classmethod
    def _features(cls, v):
        for f in v:
            parts = f.split(":")
            if len(parts) != 2 or parts[0] not in STATE_TERMS or parts[1] not in ACTION_TERMS:
                raise ValueError(f"feature {f!r} must be 'state:action' with state in {STATE_TERMS} "
                                 f"and action in {ACTION_TERMS}")
        if not v:
            raise ValueError("at least one feature is needed")
        return v


class LearnerSection(_Section):
    a0: float = 2.0
    b0: float = 1.0e-3
    step_offset: int = Field(5000, ge=0)
    z_max: float = Field(2.0, ge=0.0)
    clamp: float = 50.0
    beta: Union[float, None] = None  # None: 1/K cooperative, 1 non-cooperative
    utility: Literal["delay", "outage"] = "delay"
    outage_threshold_units: int = Field(1, ge=1)
    reference_queue: Union[int, Literal["full"]] = 0
    reference_energy: Union[int, Literal["full"]] = "full"

    @field_validator("a0", "b0", "clamp")
    @classmethod
    def _pos(cls, v):
        return _positive(v)

    @field_validator("beta")
    @classmethod
    def _beta(cls, v):
        if v is not None and v <= 0:
            raise ValueError("must be positive")
        return v


class RunSection(_Section):
    scheme: Literal["pomdp", "posg", "orthogonal-tdma", "csi-eqsi-only", "greedy"] = "pomdp"
    p0: Union[float, list[float]] = 800.0  # W per user
    frames: int = Field(500_000, ge=1)
    seed: int = Field(0, ge=0)
    decimate: int = Field(1000, ge=0)
    summary_fraction: float = Field(0.2, gt=0.0, le=1.0)
    pilot_frames: int = Field(20_000, ge=100)


class SweepSection(_Section):
    axis: Union[Literal["p0", "power_levels", "battery_ah"], None] = None
    values: list[float] = []
    schemes: list[Literal["pomdp", "posg", "orthogonal-tdma", "csi-eqsi-only", "greedy"]] = list(SCHEMES)
    seeds: list[int] = [0]

    @field_validator("seeds")
    @classmethod
    def _seeds(cls, v):
        if not v or any(s < 0 for s in v):
            raise ValueError("at least one non-negative seed is needed")
        return v


class OutputSection(_Section):
    directory: str = "out"


class ExperimentConfig(_Section):
    schema_version: int = SCHEMA_VERSION
    system: SystemSection = SystemSection()
    traffic: TrafficSection = TrafficSection()
    energy: EnergySection = EnergySection()
    grid: GridSection = GridSection()
    policy: PolicySection = PolicySection()
    learner: LearnerSection = LearnerSection()
    run: RunSection = RunSection()
    sweep: SweepSection = SweepSection()
    output: OutputSection = OutputSection()

    def updated(self, changes: dict) -> "ExperimentConfig":
        """Validated copy with each dotted field path in ``changes`` set to its value."""
        data = self.model_dump()
        for path, value in changes.items():
            node = data
            keys = path.split(".")
            for key in keys[:-1]:
                node = node[key]
            node[keys[-1]] = value
        return parse_config(data)

    def at_sweep_point(self, value: float) -> "ExperimentConfig":
        """The single-run configuration at one value of the sweep axis."""
        axis = self.sweep.axis
        if axis is None:
            raise ConfigError("sweep.axis", "no sweep axis configured")
        if axis == "p0":
            return self.updated({"run.p0": float(value)})
        if axis == "battery_ah":
            return self.updated({"energy.battery_ah": float(value)})
        n = int(value)
        if n != value or n < 2:
            raise ConfigError("sweep.values", f"power-level count must be an integer >= 2, got {value}")
        # uniform spacing from 0 to the configured top level, on both sources
        return self.updated({"grid.ac_levels": np.linspace(0.0, self.grid.ac_levels[-1], n).tolist(),
                             "grid.renew_levels": np.linspace(0.0, self.grid.renew_levels[-1], n).tolist()})


def _pydantic_error(err: ValidationError) -> ConfigError:
    first = err.errors()[0]
    path = ".".join(str(p) for p in first["loc"])
    msg = first["msg"]
    if len(err.errors()) > 1:
        msg += f" (and {len(err.errors()) - 1} more)"
    return ConfigError(path, msg)


def parse_config(data: dict | None) -> ExperimentConfig:
    """Validate a mapping (``None`` or empty gives every default)."""
    data = {} if data is None else data
    if not isinstance(data, dict):
        raise ConfigError("", "top level must be a mapping")
    version = data.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError("schema_version", f"unsupported version {version!r}, expected {SCHEMA_VERSION}")
    try:
        cfg = ExperimentConfig.model_validate(data)
    except ValidationError as err:
        raise _pydantic_error(err) from None
    _cross_check(cfg)
    return cfg


def load_config(path: str | Path) -> ExperimentConfig:
    """Read and validate a YAML configuration file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as err:
        raise ConfigError("", f"cannot read {path}: {err.strerror}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as err:
        raise ConfigError("", f"{path} is not valid YAML: {err}") from None
    return parse_config(data)


def emit_config(cfg: ExperimentConfig) -> str:
    """YAML text that loads back to an equal configuration."""
    return yaml.safe_dump(cfg.model_dump(), sort_keys=False)


def config_hash(cfg: ExperimentConfig) -> str:
    """SHA-256 of the canonical JSON form of the configuration."""
    text = json.dumps(cfg.model_dump(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def _joules_per_unit(cfg: ExperimentConfig) -> float:
    if cfg.energy.joules_per_unit != "auto":
        return float(cfg.energy.joules_per_unit)
    # largest quantum that makes every renewable level a whole number of units per frame
    levels = [Fraction(x).limit_denominator(10**6) for x in cfg.grid.renew_levels if x > 0]
    if not levels:
        return float(cfg.system.frame_s)
    num = math.gcd(*(f.numerator for f in levels))
    den = math.lcm(*(f.denominator for f in levels))
    return float(Fraction(num, den)) * cfg.system.frame_s


def _p0_vector(cfg: ExperimentConfig) -> np.ndarray:
    K = cfg.system.users
    p0 = np.asarray(cfg.run.p0, dtype=float)
    if p0.ndim == 0:
        return np.full(K, float(p0))
    if p0.size != K:
        raise ConfigError("run.p0", f"needs one value or {K} values, got {p0.size}")
    return p0


def _cross_check(cfg: ExperimentConfig) -> None:
    s = cfg.system
    if len(s.fading_levels) != len(s.fading_probs):
        raise ConfigError("system.fading_probs", "must have one probability per fading level")
    if any(p < 0 for p in s.fading_probs) or abs(sum(s.fading_probs) - 1.0) > 1e-9:
        raise ConfigError("system.fading_probs", "must be non-negative and sum to 1")
    if any(h <= 0 for h in s.fading_levels):
        raise ConfigError("system.fading_levels", "must be positive")
    if abs(float(np.dot(s.fading_levels, s.fading_probs)) - 1.0) > 1e-9:
        raise ConfigError("system.fading_levels", "mean fading gain must be 1")
    hull = (cfg.grid.ac_levels[0], cfg.grid.ac_levels[-1])
    p0 = _p0_vector(cfg)
    if np.any(p0 < hull[0]) or np.any(p0 > hull[1]):
        raise ConfigError("run.p0", f"AC budget must lie in the AC grid hull [{hull[0]:g}, {hull[1]:g}] W")
    sw = cfg.sweep
    if sw.axis == "p0":
        for i, v in enumerate(sw.values):
            if not hull[0] <= v <= hull[1]:
                raise ConfigError(f"sweep.values.{i}", f"AC budget {v:g} W outside the AC grid hull "
                                                       f"[{hull[0]:g}, {hull[1]:g}] W")
    if sw.axis == "battery_ah":
        for i, v in enumerate(sw.values):
            if v <= 0:
                raise ConfigError(f"sweep.values.{i}", "battery charge must be positive")
    if sw.axis == "power_levels":
        for i, v in enumerate(sw.values):
            if v != int(v) or v < 2:
                raise ConfigError(f"sweep.values.{i}", "power-level count must be an integer >= 2")
    if cfg.policy.kind == "basis" and not cfg.policy.features:
        raise ConfigError("policy.features", "at least one feature is needed")
    # cross-references that need the quantized model
    try:
        net = build_network(cfg)
    except ConfigError:
        raise
    except ValueError as err:
        raise ConfigError("energy.joules_per_unit", str(err)) from None
    q_ref, e_ref = _reference(cfg, net)
    if np.any(q_ref < 0) or np.any(q_ref > net.queue_cap):
        raise ConfigError("learner.reference_queue", f"must lie in [0, {int(net.queue_cap.max())}] queue units")
    if np.any(e_ref < 0) or np.any(e_ref > net.energy.capacity_units):
        raise ConfigError("learner.reference_energy",
                          f"must lie in [0, {int(net.energy.capacity_units.max())}] energy units")
    if cfg.learner.outage_threshold_units > int(net.queue_cap.max()):
        raise ConfigError("learner.outage_threshold_units", "exceeds the data buffer size")


def build_network(cfg: ExperimentConfig) -> Network:
    """Quantized network model described by ``cfg``."""
    s, tr, en = cfg.system, cfg.traffic, cfg.energy
    K = s.users
    direct = 10.0 ** (-s.direct_loss_db / 10.0)
    L = np.full((K, K), s.cross_ratio * direct)
    np.fill_diagonal(L, direct)
    ch = ChannelModel(K, s.bandwidth_hz, s.noise_psd, s.xi, L, s.fading_levels, s.fading_probs, s.frame_s)
    q_cap = int(round(tr.buffer_packets * tr.mean_packet_bits / tr.bits_per_unit))
    if q_cap < 1:
        raise ConfigError("traffic.bits_per_unit", "coarser than the whole data buffer")
    traffic = TrafficModel.compound_poisson(tr.arrival_rate, tr.mean_packet_bits, tr.bits_per_unit, s.frame_s,
                                            [q_cap] * K)
    jpu = _joules_per_unit(cfg)
    cap_j = battery_joules(en.battery_volts, en.battery_ah)
    if cap_j < jpu:
        raise ConfigError("energy.battery_ah", "battery smaller than one energy unit")
    energy = EnergyModel.poisson(en.mean_harvest_w, s.frame_s, jpu, [cap_j] * K)
    grid = ActionGrid(cfg.grid.ac_levels, cfg.grid.renew_levels)
    return Network(ch, traffic, energy, grid, s.circuit_w, [q_cap] * K)


def _reference(cfg: ExperimentConfig, net: Network) -> tuple[np.ndarray, np.ndarray]:
    lr = cfg.learner
    q = net.queue_cap.copy() if lr.reference_queue == "full" else np.full(net.K, int(lr.reference_queue))
    e = (net.energy.capacity_units.copy() if lr.reference_energy == "full"
         else np.full(net.K, int(lr.reference_energy)))
    return q, e


def build_controller(cfg: ExperimentConfig, net: Network) -> Controller:
    """Initial (uniform) policy of the configured parameterization."""
    pol = cfg.policy
    qmax = int(net.queue_cap.max())
    emax = int(net.energy.capacity_units.max())
    if pol.kind == "tabular":
        idx = LocalStateIndexer.bucketed(net.channel.n_bins, qmax, emax, pol.queue_edges, pol.energy_edges)
        return Controller.zeros_tabular(net, idx)
    feats = tuple(tuple(f.split(":")) for f in pol.features)
    basis = BasisSet(feats, net.grid, net.channel.fading_levels, float(qmax), float(emax),
                     p_scale=float(max(net.grid.ac_levels[-1], net.grid.renew_levels[-1])))
    return Controller.zeros_basis(net, basis)


def learner_settings(cfg: ExperimentConfig, net: Network, kind: str) -> LearnerSettings:
    """Learning-step constants for ``kind`` in {pomdp, posg}."""
    if kind not in LEARNER_SCHEMES:
        raise ConfigError("run.scheme", f"{kind!r} is not a learner")
    lr = cfg.learner
    q_ref, e_ref = _reference(cfg, net)
    return LearnerSettings(
        kind=kind, a0=lr.a0, b0=lr.b0, step_offset=lr.step_offset, beta=lr.beta, p0=_p0_vector(cfg),
        utility=lr.utility, f_scale=delay_scale(net), f_thr=lr.outage_threshold_units,
        q_ref=q_ref, e_ref=e_ref, z_max=lr.z_max, clamp=lr.clamp)


def p0_vector(cfg: ExperimentConfig) -> np.ndarray:
    """Per-user AC budget (W)."""
    return _p0_vector(cfg)
