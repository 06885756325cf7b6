"""System configuration, validation, and seeded random streams.

All tunable constants live in two frozen dataclasses: SystemConfig (array,
waveform, power and detection settings) and ScenarioConfig (road geometry,
target body and motion limits).  Configs round-trip through a flat
``key = value`` text format, see load_config / save_config.

Every random draw in the package flows from one master seed through
rng_stream, so trials, calibration runs and warm-up perturbations are
reproducible independently of execution order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

C_LIGHT = 299792458.0  # m/s


class ConfigError(ValueError):
    """Bad config file or an inconsistent parameter combination."""


@dataclass(frozen=True)
class ScenarioConfig:
    """Road layout and target motion limits used by the trajectory generator.

    Distances in metres, speeds in m/s, accelerations in m/s^2.  The base
    station sits at the origin and looks along +y; roads are kept inside a
    wedge of +-sector_half_angle_deg at ranges [d_min, d_max].
    """

    waypoints: tuple[tuple[float, float], ...] | None = None  # None: random per trial
    d_min: float = 20.0
    d_max: float = 88.0           # kept below the unambiguous delay range
    sector_half_angle_deg: float = 55.0
    segment_len_min: float = 25.0
    segment_len_max: float = 70.0
    turn_radius: float = 7.0      # corner fillet radius
    v_init: float = 8.0
    v_min: float = 3.0
    v_max: float = 12.0
    a_max: float = 2.5            # along-track acceleration bound
    a_lat_max: float = 3.0        # lateral acceleration allowed in turns
    a_brake: float = 3.0          # deceleration assumed when approaching turns
    a_cap: float = 12.0           # hard feasibility bound on total acceleration
    target_length: float = 4.5
    target_width: float = 1.8
    scatterers_per_side: int = 3
    warmup_sigma: float = 0.5     # std of the stand-in position estimates during warm-up
    margin_deg: float = 6.0       # beamwidth margin added to the target's angular extent

    def validate(self) -> None:
        if not (0.0 < self.d_min < self.d_max):
            raise ConfigError(f"need 0 < d_min < d_max, got {self.d_min}, {self.d_max}")
        if not (0.0 < self.sector_half_angle_deg < 90.0):
            raise ConfigError(f"sector_half_angle_deg out of (0, 90): {self.sector_half_angle_deg}")
        if not (0.0 < self.v_min <= self.v_init <= self.v_max):
            raise ConfigError(
                f"need 0 < v_min <= v_init <= v_max, got {self.v_min}, {self.v_init}, {self.v_max}")
        if self.a_max < 0 or self.a_lat_max <= 0 or self.a_brake <= 0 or self.a_cap <= 0:
            raise ConfigError("acceleration bounds must be positive (a_max may be 0)")
        if self.turn_radius <= 0:
            raise ConfigError(f"turn_radius must be positive: {self.turn_radius}")
        if self.segment_len_min <= 0 or self.segment_len_max < self.segment_len_min:
            raise ConfigError("bad segment length range")
        if self.target_length <= 0 or self.target_width <= 0:
            raise ConfigError("target dimensions must be positive")
        if self.scatterers_per_side < 1:
            raise ConfigError(f"scatterers_per_side must be >= 1: {self.scatterers_per_side}")
        if self.warmup_sigma < 0 or self.margin_deg < 0:
            raise ConfigError("warmup_sigma and margin_deg must be nonnegative")
        if self.waypoints is not None and len(self.waypoints) < 2:
            raise ConfigError("an explicit waypoint list needs at least 2 points")


@dataclass(frozen=True)
class SystemConfig:
    """Array, waveform, power and detection constants.

    Defaults describe a 90 GHz hybrid array with 64 elements and 4 RF
    chains transmitting 160 MHz OFDM; see the README for the meaning and
    units of each field.
    """

    f_c: float = 90.0e9           # carrier frequency, Hz
    W: float = 160.0e6            # occupied bandwidth, Hz
    delta_f: float = 1.6e6        # subcarrier spacing, Hz
    M: int = 100                  # subcarriers per symbol
    N: int = 4                    # OFDM symbols per block
    B: int = 4                    # blocks combined per detection epoch
    T_cp: float = 1.0 / (6 * 1.6e6)   # cyclic prefix length, s
    N_a: int = 64                 # antenna elements (half-wavelength ULA)
    N_rf: int = 4                 # RF chains available per block
    D: int = 8                    # default receive codebook size (beams)
    P_tx: float = 10.0 ** ((16.0 - 30.0) / 10.0)  # transmit power, W (16 dBm)
    N_0: float = 2.0e-21          # noise PSD, W/Hz
    sigma_rcs: float = 100.0      # total target RCS, m^2 (20 dBsm)
    delta_T: float = 0.1          # tracking epoch interval, s
    P_fa: float = 1.0e-4          # per-cell false alarm target
    fov_set: tuple[float, ...] = (7.0, 10.0, 15.0, 20.0)  # selectable Tx beamwidths, deg
    epochs: int = 80              # epochs simulated per trial
    seed: int = 0                 # master seed, see rng_stream
    c: float = C_LIGHT            # propagation speed, m/s
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)

    def __post_init__(self) -> None:
        self.validate()

    # -- derived quantities ------------------------------------------------

    @property
    def T_0(self) -> float:
        """Total OFDM symbol duration 1/delta_f + T_cp, s."""
        return 1.0 / self.delta_f + self.T_cp

    @property
    def wavelength(self) -> float:
        return self.c / self.f_c

    def validate(self) -> None:
        if self.f_c <= 0 or self.W <= 0 or self.delta_f <= 0 or self.c <= 0:
            raise ConfigError("f_c, W, delta_f and c must be positive")
        if abs(self.W - self.M * self.delta_f) > 1e-6 * self.W:
            raise ConfigError(
                f"bandwidth mismatch: W={self.W!r} but M*delta_f={self.M * self.delta_f!r}")
        if self.T_cp < 0:
            raise ConfigError(f"T_cp must be nonnegative: {self.T_cp}")
        if self.T_0 <= 0:
            raise ConfigError("symbol duration must be positive")
        if min(self.M, self.N, self.B) < 1:
            raise ConfigError(f"M, N, B must be >= 1: {self.M}, {self.N}, {self.B}")
        if not (1 <= self.N_rf < self.D <= self.N_a):
            raise ConfigError(
                f"need 1 <= N_rf < D <= N_a, got N_rf={self.N_rf}, D={self.D}, N_a={self.N_a}")
        if self.P_tx <= 0 or self.sigma_rcs <= 0:
            raise ConfigError("P_tx and sigma_rcs must be positive")
        if self.N_0 < 0:
            raise ConfigError(f"N_0 must be nonnegative: {self.N_0}")
        if not (0.0 < self.P_fa < 1.0):
            raise ConfigError(f"P_fa must lie in (0, 1): {self.P_fa}")
        if self.delta_T <= 0:
            raise ConfigError(f"delta_T must be positive: {self.delta_T}")
        if len(self.fov_set) < 1 or any(not (0.0 < w < 90.0) for w in self.fov_set):
            raise ConfigError(f"fov_set entries must lie in (0, 90) deg: {self.fov_set}")
        if any(b <= a for a, b in zip(self.fov_set, self.fov_set[1:])):
            raise ConfigError(f"fov_set must be strictly increasing: {self.fov_set}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1: {self.epochs}")
        self.scenario.validate()


def noise_variance(cfg: SystemConfig) -> float:
    """Receiver noise power N_0 * W over the full band, W."""
    return cfg.N_0 * cfg.W


# -- seeded random streams -------------------------------------------------

# Stable stream identifiers.  Do not renumber: results would silently change.
_STREAMS = {
    "trajectory": 1,    # per-trial road and motion draws
    "simulation": 2,    # per-trial frames, noise, phases, plan draws, warm-up jitter
    "calibration": 3,   # CFAR alpha calibration maps
    "general": 4,       # anything else (tests, ad-hoc tools)
}


def rng_stream(seed: int, purpose: str, *indices: int) -> np.random.Generator:
    """Independent generator derived from the master seed.

    purpose selects one of the documented streams, indices further split it
    (trial number, grid shape, ...).  Identical arguments always give the
    same stream, so parallel trial execution is deterministic.
    """
    try:
        code = _STREAMS[purpose]
    except KeyError:
        raise ValueError(f"unknown stream purpose {purpose!r}, known: {sorted(_STREAMS)}")
    key = (code,) + tuple(int(i) for i in indices)
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


# -- flat key=value config files -------------------------------------------
#
# Syntax: one "key = value" pair per line, '#' starts a comment, blank lines
# ignored.  Scalars are plain numbers, fov_set is a comma separated list and
# scenario.waypoints a semicolon separated list of "x,y" pairs (or the word
# "random").  Keys of scenario fields are prefixed with "scenario.".

_SYSTEM_INT = {"M", "N", "B", "N_a", "N_rf", "D", "epochs", "seed"}
_SCENARIO_INT = {"scatterers_per_side"}


def _parse_scalar(key: str, raw: str, as_int: bool):
    try:
        return int(raw) if as_int else float(raw)
    except ValueError:
        raise ConfigError(f"cannot parse value for {key!r}: {raw!r}")


def _parse_waypoints(raw: str):
    if raw.strip().lower() in ("random", "none", ""):
        return None
    pts = []
    for chunk in raw.split(";"):
        xy = chunk.split(",")
        if len(xy) != 2:
            raise ConfigError(f"waypoint {chunk!r} is not an x,y pair")
        pts.append((float(xy[0]), float(xy[1])))
    return tuple(pts)


def load_config(path: str | Path) -> SystemConfig:
    """Read a key=value config file; unknown keys are an error.

    An empty file yields all defaults.
    """
    sys_kw: dict = {}
    scen_kw: dict = {}
    sys_fields = {f for f in SystemConfig.__dataclass_fields__ if f != "scenario"}
    scen_fields = set(ScenarioConfig.__dataclass_fields__)
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key.startswith("scenario."):
            name = key[len("scenario."):]
            if name not in scen_fields:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            if name == "waypoints":
                scen_kw[name] = _parse_waypoints(raw)
            else:
                scen_kw[name] = _parse_scalar(key, raw, name in _SCENARIO_INT)
        elif key in sys_fields:
            if key == "fov_set":
                sys_kw[key] = tuple(float(v) for v in raw.split(","))
            else:
                sys_kw[key] = _parse_scalar(key, raw, key in _SYSTEM_INT)
        else:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
    try:
        return SystemConfig(scenario=ScenarioConfig(**scen_kw), **sys_kw)
    except TypeError as exc:  # duplicate handling is done above, this is a guard
        raise ConfigError(str(exc))


def save_config(cfg: SystemConfig, path: str | Path) -> None:
    """Write cfg in the same format load_config reads (lossless round trip)."""
    lines = ["# isactrack configuration"]
    for name in SystemConfig.__dataclass_fields__:
        if name == "scenario":
            continue
        val = getattr(cfg, name)
        if name == "fov_set":
            lines.append(f"{name} = {', '.join(repr(v) for v in val)}")
        else:
            lines.append(f"{name} = {val!r}")
    for name in ScenarioConfig.__dataclass_fields__:
        val = getattr(cfg.scenario, name)
        if name == "waypoints":
            if val is None:
                lines.append("scenario.waypoints = random")
            else:
                lines.append("scenario.waypoints = "
                             + "; ".join(f"{x!r},{y!r}" for x, y in val))
        else:
            lines.append(f"scenario.{name} = {val!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def with_updates(cfg: SystemConfig, **kw) -> SystemConfig:
    """Copy cfg with some fields replaced (validation reruns)."""
    scen_kw = {k[len("scenario_"):]: kw.pop(k) for k in list(kw) if k.startswith("scenario_")}
    if scen_kw:
        kw["scenario"] = replace(cfg.scenario, **scen_kw)
    return replace(cfg, **kw)
