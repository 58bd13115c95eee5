"""JSON run configuration with unit-suffixed keys and strict key checking."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

from .spin_model import (
    B_FIELD_GAUSS,
    GAMMA_C13_KHZ_PER_GAUSS,
    HYPERFINE_TABLE,
    HyperfineParams,
    NuclearSpin,
    SpinRegister,
)


class ConfigError(ValueError):
    pass


@dataclass
class SpinConfig:
    id: str
    a_zz_khz: float
    a_zx_khz: float
    a_zz_unc_khz: float = 0.0
    a_zx_unc_khz: float = 0.0


@dataclass
class RegisterConfig:
    b_z_gauss: float = B_FIELD_GAUSS
    gamma_n_khz_per_gauss: float = GAMMA_C13_KHZ_PER_GAUSS
    spins: list[SpinConfig] = field(default_factory=lambda: [
        SpinConfig(s.id, s.params.a_zz, s.params.a_zx, s.params.a_zz_unc, s.params.a_zx_unc) for s in HYPERFINE_TABLE
    ])

    def build(self, ids=None) -> SpinRegister:
        spins = tuple(NuclearSpin(s.id, HyperfineParams(s.a_zz_khz, s.a_zx_khz, s.a_zz_unc_khz, s.a_zx_unc_khz))
                      for s in self.spins)
        reg = SpinRegister(self.b_z_gauss, self.gamma_n_khz_per_gauss, spins)
        return reg if ids is None else reg.subregister(ids)


@dataclass
class ReadoutConfig:
    avg_readout_fidelity: float = 0.765
    shots: int = 5000
    rabi_pmax: float | None = None
    rabi_pmin: float | None = None
    fidelity_0: float | None = None
    fidelity_1: float | None = None


@dataclass
class CpmgScanConfig:
    tau_min_ns: float = 100.0
    tau_max_ns: float = 8000.0
    tau_step_ns: float = 2.0
    n_pulses: int = 16
    spins: list[str] | None = None  # None scans the whole register


@dataclass
class CompileConfig:
    fidelity_floor: float = 0.0
    spectator_weight: float = 1.0
    order_span: int = 4
    z_mode: str = "virtual"


@dataclass
class TomographyConfig:
    state: str = "protocol"  # protocol | ghz | measured
    exact: bool = False
    rounds: int = 1


@dataclass
class EstimateConfig:
    spins: list[str] = field(default_factory=lambda: ["2", "4"])
    iterations: int = 10
    init_half_width_khz: float = 50.0
    noise_sigma: float = 0.0
    ramsey_t_max_ns: float = 6000.0
    ramsey_t_step_ns: float = 20.0
    polarization_order_span: int = 0


@dataclass
class RunConfig:
    register: RegisterConfig = field(default_factory=RegisterConfig)
    targets: list[str] = field(default_factory=lambda: ["2", "4"])
    spectators: list[str] = field(default_factory=lambda: ["1"])
    mode: str = "realistic"
    pump_fidelity: float = 0.99
    readout: ReadoutConfig = field(default_factory=ReadoutConfig)
    confusion: list[list[float]] | None = None
    gate_library_path: str | None = None
    seed: int = 0
    rounds: int = 8
    output_dir: str = "out"
    cpmg_scan: CpmgScanConfig = field(default_factory=CpmgScanConfig)
    compile: CompileConfig = field(default_factory=CompileConfig)
    tomography: TomographyConfig = field(default_factory=TomographyConfig)
    estimate: EstimateConfig = field(default_factory=EstimateConfig)

    def validate(self) -> "RunConfig":
        if self.mode not in ("ideal", "realistic"):
            raise ConfigError(f"mode must be 'ideal' or 'realistic', got {self.mode!r}")
        if len(self.targets) != 2 or len(set(self.targets)) != 2:
            raise ConfigError("targets must name two distinct spins")
        ids = {s.id for s in self.register.spins}
        scanned = self.cpmg_scan.spins or []
        for sid in list(self.targets) + list(self.spectators) + list(self.estimate.spins) + list(scanned):
            if sid not in ids:
                raise ConfigError(f"spin {sid!r} not in register {sorted(ids)}")
        if set(self.targets) & set(self.spectators):
            raise ConfigError("a spin cannot be both target and spectator")
        if not 0 <= self.pump_fidelity <= 1:
            raise ConfigError("pump_fidelity must lie in [0, 1]")
        if self.rounds < 1 or self.tomography.rounds < 1:
            raise ConfigError("rounds must be >= 1")
        if self.tomography.state not in ("protocol", "ghz", "measured"):
            raise ConfigError(f"unknown tomography state {self.tomography.state!r}")
        if self.compile.z_mode not in ("virtual", "pulsed"):
            raise ConfigError("compile.z_mode must be 'virtual' or 'pulsed'")
        if self.compile.order_span < 0 or self.estimate.polarization_order_span < 0:
            raise ConfigError("order spans must be >= 0")
        scan = self.cpmg_scan
        if not 0 < scan.tau_min_ns <= scan.tau_max_ns or scan.tau_step_ns <= 0 or scan.n_pulses < 1:
            raise ConfigError("invalid cpmg_scan range")
        if self.confusion is not None and len(self.confusion) not in (2, 4):
            raise ConfigError("confusion must be a 2x2 or 4x4 matrix")
        try:
            self.register.build()
            self.readout_model()
        except (ValueError, KeyError) as exc:
            raise ConfigError(str(exc)) from exc
        return self

    def readout_model(self):
        from .measurement import ReadoutModel

        r = self.readout
        return ReadoutModel(r.avg_readout_fidelity, r.shots, r.rabi_pmax, r.rabi_pmin, r.fidelity_0, r.fidelity_1)

    def to_dict(self) -> dict:
        from dataclasses import asdict

        return asdict(self)


_NESTED = {
    "register": RegisterConfig,
    "readout": ReadoutConfig,
    "cpmg_scan": CpmgScanConfig,
    "compile": CompileConfig,
    "tomography": TomographyConfig,
    "estimate": EstimateConfig,
}


def _build(cls, data: Any, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'} must be a JSON object")
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown key(s) in {where or 'config'}: {sorted(unknown)}")
    kwargs = {}
    for key, value in data.items():
        path = f"{where}.{key}" if where else key
        if cls is RunConfig and key in _NESTED:
            kwargs[key] = _build(_NESTED[key], value, path)
        elif cls is RegisterConfig and key == "spins":
            if not isinstance(value, list):
                raise ConfigError(f"{path} must be a list")
            kwargs[key] = [_build(SpinConfig, v, f"{path}[{i}]") for i, v in enumerate(value)]
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{where or 'config'}: {exc}") from exc


def config_from_dict(data: dict) -> RunConfig:
    return _build(RunConfig, data, "").validate()


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig().validate()
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return config_from_dict(data)
