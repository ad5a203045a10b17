"""
Scenario and detector configuration.

Scenario files are YAML mappings; see koopman_isc/data/resting.yaml for the
full set of keys. Everything is validated into attrs classes, so a config
that loads is a config that runs.
"""
import hashlib
import logging
from collections.abc import Mapping
from importlib import resources
from pathlib import Path
from typing import Any, Literal, Optional, Union

import numpy as np
import yaml
from attrs import converters, frozen, field, validators

from koopman_isc.exceptions import ConfigError
from koopman_isc.helpers.helpers import deep_update
from koopman_isc.koopman_model import TRENDS, HankelConfig, KoopmanPredictor, Trend
from koopman_isc.mode_generator import KMGenerator
from koopman_isc.ocv import OcvCurve
from koopman_isc.pack import CellParams, FaultSpec, PackConfig, SECONDS_PER_HOUR
from koopman_isc.simulation import CurrentProfile, Simulation

logger = logging.getLogger(__name__)

SCENARIOS = ("resting", "charging")

Threshold = Union[float, Literal["auto"]]


def _convert_threshold(value: Any) -> Threshold:
    if isinstance(value, str) and value.strip().lower() == "auto":
        return "auto"
    try:
        threshold = float(value)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"threshold must be a number or 'auto', got {value!r}") from err
    if not threshold > 0:
        raise ConfigError(f"threshold must be positive, got {threshold}")
    return threshold


@frozen
class PipelineConfig:
    """
    Detector settings.

    pool_windows is how many of the most recent windows' mode statistics are
    pooled into each module's distribution; None pools every window so far
    and 1 compares the current window alone.
    """

    hankel: HankelConfig = field(factory=HankelConfig)
    embed_dim_d: int = field(default=10, converter=int, validator=validators.ge(1))
    num_snapshots_k: int = field(default=1, converter=int, validator=validators.ge(1))
    grid_n_z: int = field(default=256, converter=int, validator=validators.ge(2))
    threshold_J: Threshold = field(default="auto", converter=_convert_threshold)
    calibration_windows: int = field(default=2, converter=int, validator=validators.ge(0))
    safety_factor: float = field(default=5.0, converter=float, validator=validators.gt(0))
    rng_seed: int = field(default=0, converter=int)
    detrend: Trend = field(default="linear", validator=validators.in_(TRENDS))
    pool_windows: Optional[int] = field(
        default=None,
        converter=converters.optional(int),
        validator=validators.optional(validators.ge(1)),
    )
    tile: bool = True
    workers: int = field(default=1, converter=int, validator=validators.ge(1))
    stop_on_first_flag: bool = False
    dump_modes: bool = False

    def __attrs_post_init__(self):
        if self.threshold_J == "auto" and self.calibration_windows < 1:
            raise ConfigError("an automatic threshold needs at least one calibration window")
        if self.embed_dim_d + self.num_snapshots_k > self.hankel.predict_len_P:
            raise ConfigError(
                f"d + k = {self.embed_dim_d + self.num_snapshots_k} exceeds the "
                f"prediction window of {self.hankel.predict_len_P} samples"
            )

    @property
    def predictor(self) -> KoopmanPredictor:
        return KoopmanPredictor(self.hankel, detrend=self.detrend)

    @property
    def km_generator(self) -> KMGenerator:
        return KMGenerator(self.embed_dim_d, self.num_snapshots_k, tile=self.tile)

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, Any], seed: int = 0) -> "PipelineConfig":
        m = dict(mapping)
        try:
            hankel = HankelConfig(
                delay_tau=m.pop("delay_tau", 20),
                learn_len_L=m.pop("learn", 1500),
                predict_len_P=m.pop("predict", 700),
            )
            config = cls(
                hankel=hankel,
                embed_dim_d=m.pop("embed_dim", 10),
                num_snapshots_k=m.pop("snapshots", 1),
                grid_n_z=m.pop("grid_size", 256),
                threshold_J=m.pop("threshold", "auto"),
                calibration_windows=m.pop("calibration_windows", 2),
                safety_factor=m.pop("safety_factor", 5.0),
                rng_seed=seed,
                detrend=m.pop("detrend", "linear"),
                pool_windows=m.pop("pool_windows", None),
                tile=bool(m.pop("tile", True)),
                workers=m.pop("workers", 1),
                stop_on_first_flag=bool(m.pop("stop_on_flag", False)),
                dump_modes=bool(m.pop("dump_modes", False)),
            )
        except (TypeError, ValueError) as err:
            raise ConfigError(f"invalid detector settings: {err}") from err
        if m:
            raise ConfigError(f"unknown detector keys: {sorted(m)}")
        return config

    def to_mapping(self) -> dict[str, Any]:
        return {
            "delay_tau": self.hankel.delay_tau,
            "learn": self.hankel.learn_len_L,
            "predict": self.hankel.predict_len_P,
            "embed_dim": self.embed_dim_d,
            "snapshots": self.num_snapshots_k,
            "grid_size": self.grid_n_z,
            "threshold": self.threshold_J,
            "calibration_windows": self.calibration_windows,
            "safety_factor": self.safety_factor,
            "detrend": self.detrend,
            "pool_windows": self.pool_windows,
            "tile": self.tile,
            "workers": self.workers,
            "stop_on_flag": self.stop_on_first_flag,
            "dump_modes": self.dump_modes,
        }

    def dump(self) -> str:
        return yaml.safe_dump(
            {"seed": self.rng_seed, "detector": self.to_mapping()}, sort_keys=True
        )


def _load_ocv(value: Any, base_dir: Optional[Path]) -> OcvCurve:
    if value is None or value == "default":
        return OcvCurve.default()
    if isinstance(value, str):
        path = Path(value)
        if not path.is_absolute() and base_dir is not None:
            path = base_dir / path
        return OcvCurve.from_csv(path)
    return OcvCurve(value)


def _pack_from_mapping(
    mapping: Mapping[str, Any], seed: int, base_dir: Optional[Path]
) -> PackConfig:
    m = dict(mapping)
    cell = dict(m.pop("cell", {}))
    try:
        nominal = CellParams.from_datasheet(
            cell.pop("capacity_ah", 5.0),
            cell.pop("capacitance", 4.3e3),
            cell.pop("ohmic_r", 3.8e-3),
            cell.pop("polar_r", 4.0e-3),
        )
        if cell:
            raise ConfigError(f"unknown cell keys: {sorted(cell)}")
        config = PackConfig(
            modules_m=m.pop("modules", 5),
            series_n=m.pop("series", 3),
            nominal_params=nominal,
            param_uncertainty=m.pop("param_uncertainty", 0.05),
            ocv=_load_ocv(m.pop("ocv", "default"), base_dir),
            noise_amplitude=m.pop("noise_amplitude", 2e-3),
            rng_seed=seed,
            dt=1.0 / float(m.pop("sample_rate", 100.0)),
        )
    except (TypeError, ValueError, ZeroDivisionError) as err:
        raise ConfigError(f"invalid pack settings: {err}") from err
    if m:
        raise ConfigError(f"unknown pack keys: {sorted(m)}")
    return config


@frozen
class ScenarioConfig:
    """A complete, validated run description: pack, load, faults and detector."""

    name: str
    pack: PackConfig
    pipeline: PipelineConfig
    profile: CurrentProfile = field(factory=CurrentProfile)
    faults: tuple[FaultSpec, ...] = field(default=(), converter=tuple)
    duration: float = field(default=120.0, converter=float, validator=validators.gt(0))
    initial_soc: float = field(default=0.5, converter=float)
    settle_polarization: bool = False
    seed: int = field(default=0, converter=int)

    def __attrs_post_init__(self):
        for fault in self.faults:
            fault.check_fits(self.pack)

    def simulation(self) -> Simulation:
        return Simulation(
            config=self.pack,
            profile=self.profile,
            faults=list(self.faults),
            initial_soc=self.initial_soc,
            settle_polarization=self.settle_polarization,
        )

    @classmethod
    def from_mapping(
        cls, mapping: Mapping[str, Any], base_dir: Optional[Path] = None
    ) -> "ScenarioConfig":
        m = dict(mapping)
        try:
            seed = int(m.pop("seed", 0))
            pack = _pack_from_mapping(m.pop("pack", {}), seed, base_dir)
            pipeline = PipelineConfig.from_mapping(m.pop("detector", {}), seed)
            profile_map = dict(m.pop("profile", {}))
            profile = CurrentProfile(
                kind=profile_map.pop("kind", "rest"),
                magnitude=profile_map.pop("current", 0.0),
                direction=profile_map.pop("direction", "charge"),
            )
            if profile_map:
                raise ConfigError(f"unknown profile keys: {sorted(profile_map)}")
            faults = [
                FaultSpec(
                    module_index=f["module"],
                    cell_index=f.get("cell", 1),
                    r_short=f["r_short"],
                    onset_time=f.get("onset", 0.0),
                )
                for f in (m.pop("faults", None) or [])
            ]
            config = cls(
                name=str(m.pop("name", "custom")),
                pack=pack,
                pipeline=pipeline,
                profile=profile,
                faults=faults,
                duration=m.pop("duration", 120.0),
                initial_soc=m.pop("initial_soc", 0.5),
                settle_polarization=bool(m.pop("settle_polarization", False)),
                seed=seed,
            )
        except (KeyError, TypeError, ValueError) as err:
            if isinstance(err, ConfigError):
                raise
            raise ConfigError(f"invalid scenario: {err!r}") from err
        if m:
            raise ConfigError(f"unknown scenario keys: {sorted(m)}")
        return config

    def to_mapping(self) -> dict[str, Any]:
        nominal = self.pack.nominal_params
        return {
            "name": self.name,
            "seed": self.seed,
            "duration": self.duration,
            "initial_soc": self.initial_soc,
            "settle_polarization": self.settle_polarization,
            "pack": {
                "modules": self.pack.modules_m,
                "series": self.pack.series_n,
                "cell": {
                    "capacity_ah": float(nominal.capacity_Q) / SECONDS_PER_HOUR,
                    "capacitance": float(nominal.polar_capacitance_C),
                    "ohmic_r": float(nominal.ohmic_R),
                    "polar_r": float(nominal.polar_R_c),
                },
                "param_uncertainty": self.pack.param_uncertainty,
                "noise_amplitude": self.pack.noise_amplitude,
                "sample_rate": self.pack.sample_rate,
                "ocv": np.asarray(self.pack.ocv.breakpoints).tolist(),
            },
            "profile": {
                "kind": self.profile.kind,
                "current": self.profile.magnitude,
                "direction": self.profile.direction,
            },
            "faults": [
                {
                    "module": f.module_index,
                    "cell": f.cell_index,
                    "r_short": f.r_short,
                    "onset": f.onset_time,
                }
                for f in self.faults
            ],
            "detector": self.pipeline.to_mapping(),
        }

    def dump(self) -> str:
        return yaml.safe_dump(self.to_mapping(), sort_keys=True)

    def config_hash(self) -> str:
        return hashlib.sha256(self.dump().encode("utf-8")).hexdigest()


def read_mapping(path: Union[str, Path]) -> dict[str, Any]:
    try:
        with open(path, encoding="utf-8") as handle:
            mapping = yaml.safe_load(handle)
    except (OSError, yaml.YAMLError) as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err
    if mapping is None:
        return {}
    if not isinstance(mapping, Mapping):
        raise ConfigError(f"config {path} must hold a mapping at top level")
    return dict(mapping)


def scenario_mapping(name: str) -> dict[str, Any]:
    """The shipped scenario file for name, as a plain mapping."""
    if name not in SCENARIOS:
        raise ConfigError(f"unknown scenario {name!r}; choose from {', '.join(SCENARIOS)}")
    with resources.as_file(resources.files("koopman_isc.data") / f"{name}.yaml") as path:
        return read_mapping(path)


def load_config(
    path: Union[str, Path, None] = None,
    overrides: Optional[Mapping[str, Any]] = None,
    base: Optional[Mapping[str, Any]] = None,
) -> ScenarioConfig:
    """
    Load a scenario from path (or start from base), merge overrides and validate.

    Override keys may be dotted, e.g. {"detector.threshold": 0.5}.
    """
    mapping = dict(base or {})
    base_dir = None
    if path is not None:
        mapping = deep_update(mapping, read_mapping(path))
        base_dir = Path(path).parent
    if overrides:
        mapping = deep_update(mapping, overrides)
    return ScenarioConfig.from_mapping(mapping, base_dir)
