"""Run configuration: a nested, schema-validated description of geometry,
arrays, target/cluster properties, waveform and experiment grids, with a
canonical YAML serialization and a stable content hash.

``default_config()`` reproduces the reference simulation setup: 7 GHz
carrier, 2x2 URAs at (0,0,5) / (0,5,5), one five-SP target at (3,2,5),
five deterministic clusters per target link, 12 clusters for UMa/UMi and
10 for InF, everything static.
"""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field

import numpy as np
import yaml


class ConfigError(ValueError):
    """Configuration violates the schema."""


@dataclass
class ArrayConfig:
    rows: int = 2
    cols: int = 2
    spacing_wavelengths: float = 0.5
    plane: str = "xz"          # URA element plane: "xz" (broadside y) or "yz"

    def offsets(self, wavelength: float) -> np.ndarray:
        """Element offsets [rows*cols, 3] in meters, centered on the node."""
        d = self.spacing_wavelengths * wavelength
        r = (np.arange(self.rows) - (self.rows - 1) / 2.0) * d
        c = (np.arange(self.cols) - (self.cols - 1) / 2.0) * d
        rr, cc = np.meshgrid(r, c, indexing="ij")
        flat = np.zeros((self.rows * self.cols, 3))
        if self.plane == "xz":
            flat[:, 0] = rr.ravel()
            flat[:, 2] = cc.ravel()
        elif self.plane == "yz":
            flat[:, 1] = rr.ravel()
            flat[:, 2] = cc.ravel()
        else:
            raise ConfigError(f"unknown array plane {self.plane!r}")
        return flat

    @property
    def size(self) -> int:
        return self.rows * self.cols


@dataclass
class VelocityConfig:
    speed: float = 0.0
    zenith_deg: float = 90.0
    azimuth_deg: float = 0.0

    def vector(self) -> np.ndarray:
        z = np.radians(self.zenith_deg)
        a = np.radians(self.azimuth_deg)
        return self.speed * np.array(
            [np.sin(z) * np.cos(a), np.sin(z) * np.sin(a), np.cos(z)])


@dataclass
class RcsConfig:
    kind: str = "constant"     # "constant" | "lognormal"
    value_m2: float = 0.1
    a_dbsm: float = -13.57
    b1_db: float = 0.0
    b2_db: float = 3.065


@dataclass
class TargetConfig:
    position: list = field(default_factory=lambda: [3.0, 2.0, 5.0])
    sp_count: int = 5
    sp_offsets: list | None = None     # [K][3] m; None = co-located
    rcs: RcsConfig = field(default_factory=RcsConfig)
    rcs_per_draw: str = "per_sp"       # "per_sp" | "per_target"
    velocity: VelocityConfig = field(default_factory=VelocityConfig)


@dataclass
class DetClusterConfig:
    count_tx_target: int = 5
    count_target_rx: int = 5
    sp_count: int = 5
    sp_offsets: list | None = None
    rcs_m2: float = 0.1
    xpr_db: float = 10.0
    velocity: VelocityConfig = field(default_factory=VelocityConfig)
    selection: str = "strongest"       # "strongest" | "first" | "explicit"
    explicit_indices: list | None = None


@dataclass
class OfdmConfig:
    n_subcarriers: int = 256
    cp_length: int = 32
    modulation: str = "4qam"
    sample_rate_hz: float = 30.72e6

    def __post_init__(self):
        if self.cp_length >= self.n_subcarriers:
            raise ConfigError("cp_length must be below n_subcarriers")
        if self.modulation != "4qam":
            raise ConfigError("only 4qam modulation is implemented")


@dataclass
class SensingConfig:
    snr_db: float = 0.0                # detector noise calibration, see evaluate
    sample_rate_hz: float = 1.0e9      # delay-domain grid for ranging/detection
    gate_lead_bins: int = 1
    gate_trail_bins: int = 3
    gate_max_bins: int = 24            # cap on the energy-detector gate width
    peak_factor: float = 4.0           # outage threshold over mean noise energy


@dataclass
class GridsConfig:
    snr_db: list = field(default_factory=lambda: list(range(0, 52, 4)))
    rcs_m2: list = field(default_factory=lambda: [0.1, 0.5, 1.0])
    range_snr_db: list = field(default_factory=lambda: [-10.0, 0.0, 10.0, 20.0, 30.0])
    roc_thresholds: int = 200


@dataclass
class RunConfig:
    scenario: str = "inf"
    carrier_hz: float = 7.0e9
    tx_position: list = field(default_factory=lambda: [0.0, 0.0, 5.0])
    rx_position: list = field(default_factory=lambda: [0.0, 5.0, 5.0])
    tx_array: ArrayConfig = field(default_factory=ArrayConfig)
    rx_array: ArrayConfig = field(default_factory=ArrayConfig)
    tx_velocity: VelocityConfig = field(default_factory=VelocityConfig)
    rx_velocity: VelocityConfig = field(default_factory=VelocityConfig)
    target: TargetConfig = field(default_factory=TargetConfig)
    det_clusters: DetClusterConfig = field(default_factory=DetClusterConfig)
    clutter_density: float = 0.1
    clutter_height_m: float = 2.0
    clutter_size_m: float = 2.0
    n_clusters: dict = field(default_factory=lambda: {"uma": 12, "umi": 12, "inf": 10})
    forced_conditions: dict = field(default_factory=lambda: {
        "background": None, "tx_target": None, "target_rx": None})
    forced_k_db: float | None = None   # calibration override for LoS links
    gain_mode: str = "physical"        # "physical" | "unit"
    field_pattern: str = "isotropic"   # "isotropic" | "tr38901_element"
    discretization: str = "nearest_bin"
    ofdm: OfdmConfig = field(default_factory=OfdmConfig)
    sensing: SensingConfig = field(default_factory=SensingConfig)
    grids: GridsConfig = field(default_factory=GridsConfig)
    drops: int = 500
    seed: int = 12345

    def scenario_kind(self):
        from .scenario import ScenarioKind
        try:
            return ScenarioKind(self.scenario)
        except ValueError as exc:
            raise ConfigError(f"unknown scenario {self.scenario!r}") from exc

    @property
    def wavelength(self) -> float:
        from .geometry import SPEED_OF_LIGHT
        return SPEED_OF_LIGHT / self.carrier_hz


_NESTED = {
    "tx_array": ArrayConfig, "rx_array": ArrayConfig,
    "tx_velocity": VelocityConfig, "rx_velocity": VelocityConfig,
    "target": TargetConfig, "det_clusters": DetClusterConfig,
    "ofdm": OfdmConfig, "sensing": SensingConfig, "grids": GridsConfig,
}
_INNER = {"rcs": RcsConfig, "velocity": VelocityConfig}


def _build(cls, data, path=""):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or cls.__name__}: expected a mapping")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"{path or 'config'}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for key, value in data.items():
        sub = _NESTED.get(key) if cls is RunConfig else _INNER.get(key)
        if sub is not None and value is not None:
            kwargs[key] = _build(sub, value, f"{path}{key}.")
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{path or 'config'}: {exc}") from exc


def from_dict(data: dict) -> RunConfig:
    cfg = _build(RunConfig, data)
    validate(cfg)
    return cfg


def to_dict(cfg) -> dict:
    return dataclasses.asdict(cfg)


def validate(cfg: RunConfig) -> None:
    cfg.scenario_kind()
    if cfg.gain_mode not in ("physical", "unit"):
        raise ConfigError(f"unknown gain_mode {cfg.gain_mode!r}")
    if cfg.discretization not in ("nearest_bin", "sinc_windowed"):
        raise ConfigError(f"unknown discretization {cfg.discretization!r}")
    if cfg.field_pattern not in ("isotropic", "tr38901_element"):
        raise ConfigError(f"unknown field_pattern {cfg.field_pattern!r}")
    if not 0.0 <= cfg.clutter_density < 1.0:
        raise ConfigError("clutter_density must be in [0, 1)")
    if cfg.clutter_height_m <= 0 or cfg.clutter_size_m <= 0:
        raise ConfigError("clutter height/size must be positive")
    if cfg.drops < 1:
        raise ConfigError("drops must be >= 1")
    if cfg.target.sp_count < 1 or cfg.det_clusters.sp_count < 1:
        raise ConfigError("scattering-point counts must be >= 1")
    for key, val in cfg.forced_conditions.items():
        if key not in ("background", "tx_target", "target_rx"):
            raise ConfigError(f"unknown forced-condition link {key!r}")
        if val not in (None, "los", "nlos"):
            raise ConfigError(f"forced condition must be los/nlos/null, got {val!r}")
    if cfg.target.rcs.kind not in ("constant", "lognormal"):
        raise ConfigError(f"unknown RCS kind {cfg.target.rcs.kind!r}")
    if len(cfg.tx_position) != 3 or len(cfg.rx_position) != 3:
        raise ConfigError("positions must be 3-vectors")
    if len(cfg.target.position) != 3:
        raise ConfigError("target position must be a 3-vector")
    if cfg.det_clusters.selection not in ("strongest", "first", "explicit"):
        raise ConfigError(f"unknown cluster selection {cfg.det_clusters.selection!r}")


def default_config() -> RunConfig:
    return RunConfig()


def canonical_yaml(cfg: RunConfig) -> str:
    return yaml.safe_dump(to_dict(cfg), sort_keys=True, default_flow_style=False)


def config_hash(cfg: RunConfig) -> str:
    return hashlib.sha256(canonical_yaml(cfg).encode()).hexdigest()[:16]


def load_config(path: str) -> RunConfig:
    with open(path, "r") as fh:
        data = yaml.safe_load(fh)
    if data is None:
        data = {}
    return from_dict(data)


def save_config(cfg: RunConfig, path: str) -> None:
    with open(path, "w") as fh:
        fh.write(canonical_yaml(cfg))


def apply_override(cfg: RunConfig, key: str, value: str) -> RunConfig:
    """Apply one dotted-path 'key=value' override (YAML-parsed value)."""
    data = to_dict(cfg)
    node = data
    parts = key.split(".")
    for part in parts[:-1]:
        if part not in node or not isinstance(node[part], dict):
            raise ConfigError(f"unknown override path {key!r}")
        node = node[part]
    if parts[-1] not in node:
        raise ConfigError(f"unknown override path {key!r}")
    node[parts[-1]] = yaml.safe_load(value)
    return from_dict(data)
