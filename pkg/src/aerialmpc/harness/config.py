"""Experiment configuration: sectioned INI text layered over the packaged defaults."""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .. import kinematics as kin
from ..allocation import AllocationParams
from ..model import JOINT, JOINT_RATE, NU, NX, VEL, VEL_DES
from ..mpc import MpcConfig
from ..plant import PlantConfig

SCENARIOS = ("clover", "moving_target", "collect", "custom")
VARIANTS = ("modified+residual", "modified-only", "integral-baseline")


class ConfigError(ValueError):
    pass


def default_text() -> str:
    return resources.files("aerialmpc.harness").joinpath("default.ini").read_text(encoding="utf-8")


def _parser() -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    cp.optionxform = str
    return cp


def load_parser(path=None, overrides: dict | None = None) -> configparser.ConfigParser:
    """Defaults, then the user file, then ``{(section, key): value}`` overrides."""
    cp = _parser()
    cp.read_string(default_text())
    layers = []
    if path is not None:
        user = _parser()
        try:
            user.read_string(Path(path).read_text(encoding="utf-8"), source=str(path))
        except (OSError, configparser.Error) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        layers.append(((s, k, v) for s in user.sections() for k, v in user.items(s)))
    if overrides:
        layers.append(((s, k, str(v)) for (s, k), v in overrides.items()))
    for layer in layers:
        for section, key, value in layer:
            if not cp.has_section(section):
                raise ConfigError(f"unknown config section [{section}]")
            if not cp.has_option(section, key):
                raise ConfigError(f"unknown config key {key!r} in [{section}]")
            cp.set(section, key, value)
    return cp


def canonical_text(cp: configparser.ConfigParser) -> str:
    lines = []
    for s in sorted(cp.sections()):
        lines.append(f"[{s}]")
        lines.extend(f"{k} = {cp.get(s, k)}" for k in sorted(cp.options(s)))
    return "\n".join(lines) + "\n"


def config_hash(cp: configparser.ConfigParser) -> str:
    return hashlib.sha256(canonical_text(cp).encode()).hexdigest()[:16]


def _vec(cp, section, key, n=None) -> np.ndarray:
    raw = cp.get(section, key)
    try:
        v = np.array([float(x) for x in raw.split(",")])
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key}: expected numbers, got {raw!r}") from exc
    if n is not None and v.size != n:
        raise ConfigError(f"[{section}] {key}: expected {n} values, got {v.size}")
    return v


def _float(cp, section, key) -> float:
    try:
        return cp.getfloat(section, key)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key}: {exc}") from exc


def _int(cp, section, key) -> int:
    try:
        return cp.getint(section, key)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key}: {exc}") from exc


def _bool(cp, section, key) -> bool:
    try:
        return cp.getboolean(section, key)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key}: {exc}") from exc


@dataclass
class ResidualSettings:
    lr_offline: float
    lr_online: float
    online_batch: int
    epochs: int
    batch_size: int
    seed: int


@dataclass
class CollectSettings:
    stage_duration: float
    ee_periods: np.ndarray
    quad_speeds: np.ndarray
    ee_half_extent: np.ndarray
    circle_radius: float
    circle_incline: float
    center: np.ndarray


@dataclass
class ExperimentConfig:
    scenario: str
    variant: str
    duration: float
    seed: int
    output: Path
    model_path: Path
    stable_threshold: float
    stable_hold: float
    geometry: kin.ArmGeometry
    q_home: np.ndarray
    k_b: np.ndarray
    dt: float
    mpc: MpcConfig
    allocation: AllocationParams
    plant: PlantConfig
    residual: ResidualSettings
    collect: CollectSettings
    scenarios: dict
    text: str
    digest: str

    def with_variant(self, variant: str) -> "ExperimentConfig":
        if variant not in VARIANTS:
            raise ConfigError(f"unknown variant {variant!r}")
        return replace(self, variant=variant)


def build_config(cp: configparser.ConfigParser) -> ExperimentConfig:
    try:
        return _build(cp)
    except ConfigError:
        raise
    except (ValueError, configparser.Error) as exc:
        raise ConfigError(str(exc)) from exc


def _build(cp) -> ExperimentConfig:
    rows = [r for r in cp.get("kinematics", "dh").split(";") if r.strip()]
    try:
        dh = np.array([[float(x) for x in r.split(",")] for r in rows])
    except ValueError as exc:
        raise ConfigError(f"[kinematics] dh: {exc}") from exc
    geometry = kin.ArmGeometry(dh=dh, mount=_vec(cp, "kinematics", "mount", 3),
                               q_min=_vec(cp, "kinematics", "q_min", 6),
                               q_max=_vec(cp, "kinematics", "q_max", 6))
    q_home = _vec(cp, "kinematics", "q_home", 6)
    k_b = _vec(cp, "model", "k_b", 3)
    dt = _float(cp, "model", "dt")
    if dt <= 0 or np.any(k_b <= 0):
        raise ConfigError("[model] dt and k_b must be positive")

    v_max = _vec(cp, "mpc", "v_max", 3)
    qd_max = _vec(cp, "mpc", "qd_max", 6)
    x_lo, x_hi = np.full(NX, -np.inf), np.full(NX, np.inf)
    for idx in (VEL, VEL_DES):
        x_lo[idx], x_hi[idx] = -v_max, v_max
    x_lo[JOINT], x_hi[JOINT] = geometry.q_min, geometry.q_max
    x_lo[JOINT_RATE], x_hi[JOINT_RATE] = -qd_max, qd_max
    u_max = _vec(cp, "mpc", "u_max", NU)
    mpc = MpcConfig(horizon=_int(cp, "mpc", "horizon"), dt=dt, w1=_vec(cp, "mpc", "w1", 3),
                    w3=_vec(cp, "mpc", "w3", NU), k_e=_vec(cp, "mpc", "k_e", 3), x_lo=x_lo, x_hi=x_hi,
                    u_lo=-u_max, u_hi=u_max, p_o_body=kin.fk_manipulator(q_home, geometry),
                    state_penalty=_float(cp, "mpc", "state_penalty"), tol=_float(cp, "mpc", "tol"),
                    max_iter=_int(cp, "mpc", "max_iter"),
                    reference_mode=cp.get("mpc", "reference_mode"))

    a = "allocation"
    allocation = AllocationParams(
        d_f=_float(cp, a, "d_f"), d_h=_float(cp, a, "d_h"), d_edge=_float(cp, a, "d_edge"),
        k_mp=_float(cp, a, "k_mp"), k_mn=_float(cp, a, "k_mn"), k_q=_float(cp, a, "k_q"),
        k_m=_float(cp, a, "k_m"), k_d=_float(cp, a, "k_d"), w2_0=_vec(cp, a, "w2_0", 9),
        w4_0=_vec(cp, a, "w4_0", 3))

    seed = _int(cp, "experiment", "seed")
    p = "plant"
    plant = PlantConfig(
        omega_n=_vec(cp, p, "omega_n", 3), zeta=_vec(cp, p, "zeta", 3),
        vel_feedforward=_vec(cp, p, "vel_feedforward", 3), mass_ratio=_float(cp, p, "mass_ratio"),
        coupling=_bool(cp, p, "coupling"), disturbances=_bool(cp, p, "disturbances"),
        dist_bias=_vec(cp, p, "dist_bias", 3), dist_amp1=_vec(cp, p, "dist_amp1", 3),
        dist_freq1=_vec(cp, p, "dist_freq1", 3), dist_amp2=_vec(cp, p, "dist_amp2", 3),
        dist_freq2=_vec(cp, p, "dist_freq2", 3), dist_noise=_vec(cp, p, "dist_noise", 3),
        dist_noise_tau=_float(cp, p, "dist_noise_tau"), tau_att=_float(cp, p, "tau_att"),
        kp_joint=_float(cp, p, "kp_joint"), kd_joint=_float(cp, p, "kd_joint"),
        substep=_float(cp, p, "substep"), envelope=_float(cp, p, "envelope"), seed=seed)
    if plant.substep > dt:
        raise ConfigError("[plant] substep must not exceed the control period")

    r = "residual"
    residual = ResidualSettings(
        lr_offline=_float(cp, r, "lr_offline"), lr_online=_float(cp, r, "lr_online"),
        online_batch=_int(cp, r, "online_batch"), epochs=_int(cp, r, "epochs"),
        batch_size=_int(cp, r, "batch_size"), seed=_int(cp, r, "seed"))

    c = "collect"
    ee_periods = _vec(cp, c, "ee_periods")
    quad_speeds = _vec(cp, c, "quad_speeds")
    if ee_periods.size != quad_speeds.size:
        raise ConfigError("[collect] ee_periods and quad_speeds must pair up stage by stage")
    collect = CollectSettings(
        stage_duration=_float(cp, c, "stage_duration"), ee_periods=ee_periods,
        quad_speeds=quad_speeds, ee_half_extent=_vec(cp, c, "ee_half_extent", 3),
        circle_radius=_float(cp, c, "circle_radius"), circle_incline=_float(cp, c, "circle_incline"),
        center=_vec(cp, c, "center", 3))

    scenarios = {
        "clover": dict(scale=_float(cp, "clover", "scale"), period=_float(cp, "clover", "period"),
                       center=_vec(cp, "clover", "center", 3)),
        "moving_target": dict(start=_vec(cp, "moving_target", "start", 3),
                              velocity=_vec(cp, "moving_target", "velocity", 3),
                              height=_float(cp, "moving_target", "height"),
                              ee_start=_vec(cp, "moving_target", "ee_start", 3)),
        "custom": dict(start=_vec(cp, "custom", "start", 3), velocity=_vec(cp, "custom", "velocity", 3),
                       d_g=_float(cp, "custom", "d_g"), ee_start=_vec(cp, "custom", "ee_start", 3)),
    }

    scenario = cp.get("experiment", "scenario")
    variant = cp.get("experiment", "variant")
    if scenario not in SCENARIOS:
        raise ConfigError(f"unknown scenario {scenario!r}; expected one of {SCENARIOS}")
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    duration = _float(cp, "experiment", "duration")
    if duration < 0:
        raise ConfigError("[experiment] duration must be non-negative")
    return ExperimentConfig(
        scenario=scenario, variant=variant, duration=duration, seed=seed,
        output=Path(cp.get("experiment", "output")), model_path=Path(cp.get("experiment", "model")),
        stable_threshold=_float(cp, "experiment", "stable_threshold"),
        stable_hold=_float(cp, "experiment", "stable_hold"), geometry=geometry, q_home=q_home,
        k_b=k_b, dt=dt, mpc=mpc, allocation=allocation, plant=plant, residual=residual,
        collect=collect, scenarios=scenarios, text=canonical_text(cp), digest=config_hash(cp))


def load_config(path=None, **overrides) -> ExperimentConfig:
    """Convenience loader; keyword overrides are ``section__key=value``."""
    ov = {}
    for name, value in overrides.items():
        section, _, key = name.partition("__")
        ov[(section, key)] = value
    return build_config(load_parser(path, ov))
