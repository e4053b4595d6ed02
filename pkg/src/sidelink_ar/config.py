"""Simulation configuration: data model, INI-style file grammar and validation.

File grammar (``configparser`` INI, all sections and keys optional)::

    [radio]        carrier_freq_ghz, tx_power_dbm, tx_gain_db, rx_gain_db,
                   tx_rf_loss_db, rx_rf_loss_db, noise_figure_db, scs_khz,
                   overhead_factor, bler_target, bler_curve_file
                   (a path, or a bundled curve name: default | nr_ldpc)
    [spectrum]     bw_mhz, subchannel_size, prb_count
    [traffic]      interval_ms, g2c_mbps, c2g_mbps, pdb_ms, drop_policy,
                   random_phase, load (e.g. 15+15; explicit g2c/c2g win)
    [mode2]        sensing_window_ms, rsrp_threshold_dbm, rrc_min, rrc_max,
                   p_change, rri_ms, selection_window_start_offset,
                   min_candidate_fraction, threshold_step_db, hd_exclusion
    [mode]         mode (mode2 | mode1), mar, fd
    [deployment]   users, grid_side_m, pair_distance_min_m, pair_distance_max_m
    [run]          duration_s, n_runs, base_seed
    [interference] x_percent
    [metrics]      thermal_limit, class_a_ms, class_b_ms, class_c_ms

Unknown sections or keys are rejected.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .mac import Mode, Mode2Params, ModeFlags
from .metrics import MetricThresholds
from .radio import DEFAULT_BLER_CURVE, Bandwidth, BlerCurve, ConfigurationError, RadioParams, load_bler_curve, resolve_bler_file
from .traffic import DropPolicy, TrafficConfig


class ConfigError(ValueError):
    """Validation failure; ``problems`` maps key paths to messages."""

    def __init__(self, problems: dict[str, str]):
        self.problems = dict(problems)
        lines = [f"{k}: {v}" for k, v in sorted(self.problems.items())]
        super().__init__("invalid configuration:\n  " + "\n  ".join(lines))


@dataclass(frozen=True)
class DeploymentConfig:
    users: int = 10
    grid_side: float = 20.0
    pair_distance: tuple[float, float] = (1.0, 2.0)

    def __post_init__(self):
        if not 1 <= self.users <= 20:
            raise ValueError("users must be in 1..20")
        if not self.grid_side > 0:
            raise ValueError("grid_side must be positive")
        lo, hi = self.pair_distance
        if not 0 < lo <= hi or hi > self.grid_side:
            raise ValueError("pair distance bounds must satisfy 0 < min <= max <= grid_side")


@dataclass(frozen=True)
class RunConfig:
    duration_s: float = 10.0
    n_runs: int = 20
    base_seed: int = 0

    def __post_init__(self):
        if not self.duration_s > 0:
            raise ValueError("duration_s must be positive")
        if self.n_runs < 1:
            raise ValueError("n_runs must be >= 1")
        if self.base_seed < 0:
            raise ValueError("base_seed must be >= 0")


@dataclass(frozen=True)
class SimConfig:
    radio: RadioParams = field(default_factory=RadioParams)
    bandwidth: Bandwidth = field(default_factory=Bandwidth)
    traffic: TrafficConfig = field(default_factory=TrafficConfig)
    mode2: Mode2Params = field(default_factory=Mode2Params)
    flags: ModeFlags = field(default_factory=ModeFlags)
    deployment: DeploymentConfig = field(default_factory=DeploymentConfig)
    run: RunConfig = field(default_factory=RunConfig)
    x_percent: float = 0.0
    thresholds: MetricThresholds = field(default_factory=MetricThresholds)
    bler_target: float = 0.01
    bler_curve: BlerCurve = DEFAULT_BLER_CURVE
    bler_curve_file: str = ""

    def __post_init__(self):
        if not 0.0 <= self.x_percent <= 100.0:
            raise ValueError("x_percent must be in [0, 100]")
        if not 0.0 < self.bler_target < 1.0:
            raise ValueError("bler_target must be in (0, 1)")
        if self.bandwidth.scs != self.radio.scs:
            raise ValueError("spectrum and radio SCS disagree")
        slot = self.radio.slot_duration
        for name, ms in (("mode2.rri_ms", self.mode2.rri_ms), ("traffic.interval_ms", self.traffic.interval_ms)):
            if abs(ms / slot - round(ms / slot)) > 1e-9:
                raise ValueError(f"{name}={ms} is not a whole number of {slot} ms slots")

    def replace(self, **sections) -> "SimConfig":
        return dataclasses.replace(self, **sections)

    def with_point(
        self,
        users: int | None = None,
        bw_mhz: int | None = None,
        traffic: tuple[float, float] | None = None,
        x_percent: float | None = None,
        flags: ModeFlags | None = None,
    ) -> "SimConfig":
        """Copy with the sweep axes overridden."""
        cfg = self
        if users is not None:
            cfg = dataclasses.replace(cfg, deployment=dataclasses.replace(cfg.deployment, users=users))
        if bw_mhz is not None:
            bw = Bandwidth(bw_mhz, cfg.bandwidth.subchannel_size, scs=cfg.bandwidth.scs)
            cfg = dataclasses.replace(cfg, bandwidth=bw)
        if traffic is not None:
            tr = dataclasses.replace(cfg.traffic, g2c_mbps=traffic[0], c2g_mbps=traffic[1])
            cfg = dataclasses.replace(cfg, traffic=tr)
        if x_percent is not None:
            cfg = dataclasses.replace(cfg, x_percent=x_percent)
        if flags is not None:
            cfg = dataclasses.replace(cfg, flags=flags)
        return cfg


def parse_traffic(text: str) -> tuple[float, float]:
    """``"15+15"`` -> (15.0, 15.0); a single number means a symmetric split."""
    parts = text.replace(" ", "").split("+")
    try:
        if len(parts) == 1:
            v = float(parts[0]) / 2.0
            return v, v
        if len(parts) == 2:
            return float(parts[0]), float(parts[1])
    except ValueError:
        pass
    raise ValueError(f"bad traffic spec {text!r}, expected e.g. '5+5'")


def format_traffic(g2c: float, c2g: float) -> str:
    return f"{g2c:g}+{c2g:g}"


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# key path -> parser; the order here fixes the emitted file layout
_KEYS: dict[str, dict[str, type | object]] = {
    "radio": {
        "carrier_freq_ghz": float,
        "tx_power_dbm": float,
        "tx_gain_db": float,
        "rx_gain_db": float,
        "tx_rf_loss_db": float,
        "rx_rf_loss_db": float,
        "noise_figure_db": float,
        "scs_khz": float,
        "overhead_factor": float,
        "bler_target": float,
        "bler_curve_file": str,
    },
    "spectrum": {"bw_mhz": int, "subchannel_size": int, "prb_count": int},
    "traffic": {
        "interval_ms": float,
        "g2c_mbps": float,
        "c2g_mbps": float,
        "pdb_ms": float,
        "drop_policy": str,
        "random_phase": _bool,
        "load": parse_traffic,
    },
    "mode2": {
        "sensing_window_ms": float,
        "rsrp_threshold_dbm": float,
        "rrc_min": int,
        "rrc_max": int,
        "p_change": float,
        "rri_ms": float,
        "selection_window_start_offset": int,
        "min_candidate_fraction": float,
        "threshold_step_db": float,
        "hd_exclusion": _bool,
    },
    "mode": {"mode": str, "mar": _bool, "fd": _bool},
    "deployment": {
        "users": int,
        "grid_side_m": float,
        "pair_distance_min_m": float,
        "pair_distance_max_m": float,
    },
    "run": {"duration_s": float, "n_runs": int, "base_seed": int},
    "interference": {"x_percent": float},
    "metrics": {"thermal_limit": float, "class_a_ms": float, "class_b_ms": float, "class_c_ms": float},
}


def config_from_mapping(values: dict[str, dict[str, str]], base: SimConfig | None = None, source: str = "<mapping>") -> SimConfig:
    """Build a validated SimConfig from raw ``{section: {key: text}}`` values."""
    base = base or SimConfig()
    problems: dict[str, str] = {}
    parsed: dict[str, dict] = {}
    for section, keys in values.items():
        spec = _KEYS.get(section)
        if spec is None:
            problems[section] = "unknown section"
            continue
        for key, raw in keys.items():
            path = f"{section}.{key}"
            conv = spec.get(key)
            if conv is None:
                problems[path] = "unknown key"
                continue
            try:
                parsed.setdefault(section, {})[key] = conv(raw if isinstance(raw, str) else str(raw))
            except (TypeError, ValueError) as exc:
                problems[path] = f"cannot parse {raw!r}: {exc}"
    if problems:
        raise ConfigError(problems)

    def get(section, key, default):
        return parsed.get(section, {}).get(key, default)

    def build(path, fn):
        try:
            return fn()
        except (ValueError, OSError, ConfigurationError) as exc:
            problems[path] = str(exc)
            return None

    r = base.radio
    radio = build("radio", lambda: RadioParams(
        carrier_freq=get("radio", "carrier_freq_ghz", r.carrier_freq),
        tx_power=get("radio", "tx_power_dbm", r.tx_power),
        tx_gain=get("radio", "tx_gain_db", r.tx_gain),
        rx_gain=get("radio", "rx_gain_db", r.rx_gain),
        tx_rf_loss=get("radio", "tx_rf_loss_db", r.tx_rf_loss),
        rx_rf_loss=get("radio", "rx_rf_loss_db", r.rx_rf_loss),
        noise_figure=get("radio", "noise_figure_db", r.noise_figure),
        scs=get("radio", "scs_khz", r.scs),
        overhead_factor=get("radio", "overhead_factor", r.overhead_factor),
    ))
    b = base.bandwidth
    bw_mhz = get("spectrum", "bw_mhz", b.nominal_mhz)
    # the base PRB count only carries over when the bandwidth is unchanged
    prb = get("spectrum", "prb_count", b.prb_count if bw_mhz == b.nominal_mhz else None)
    bandwidth = build("spectrum", lambda: Bandwidth(
        bw_mhz, get("spectrum", "subchannel_size", b.subchannel_size), prb,
        scs=radio.scs if radio else b.scs,
    ))
    t = base.traffic
    load = get("traffic", "load", (t.g2c_mbps, t.c2g_mbps))
    traffic = build("traffic", lambda: TrafficConfig(
        interval_ms=get("traffic", "interval_ms", t.interval_ms),
        g2c_mbps=get("traffic", "g2c_mbps", load[0]),
        c2g_mbps=get("traffic", "c2g_mbps", load[1]),
        pdb_ms=get("traffic", "pdb_ms", t.pdb_ms if t.pdb_ms != t.interval_ms else None),
        drop_policy=DropPolicy(get("traffic", "drop_policy", t.drop_policy.value)),
        random_phase=get("traffic", "random_phase", t.random_phase),
    ))
    m = base.mode2
    mode2 = build("mode2", lambda: Mode2Params(
        sensing_window_ms=get("mode2", "sensing_window_ms", m.sensing_window_ms),
        rsrp_threshold_dbm=get("mode2", "rsrp_threshold_dbm", m.rsrp_threshold_dbm),
        rrc_range=(get("mode2", "rrc_min", m.rrc_range[0]), get("mode2", "rrc_max", m.rrc_range[1])),
        p_change=get("mode2", "p_change", m.p_change),
        rri_ms=get("mode2", "rri_ms", m.rri_ms),
        selection_window_start_offset=get("mode2", "selection_window_start_offset", m.selection_window_start_offset),
        min_candidate_fraction=get("mode2", "min_candidate_fraction", m.min_candidate_fraction),
        threshold_step_db=get("mode2", "threshold_step_db", m.threshold_step_db),
        hd_exclusion=get("mode2", "hd_exclusion", m.hd_exclusion),
    ))
    f = base.flags
    flags = build("mode", lambda: ModeFlags(
        Mode(get("mode", "mode", f.mode.value)),
        get("mode", "mar", f.mar_enabled),
        get("mode", "fd", f.fd_sensing),
    ))
    d = base.deployment
    deployment = build("deployment", lambda: DeploymentConfig(
        get("deployment", "users", d.users),
        get("deployment", "grid_side_m", d.grid_side),
        (get("deployment", "pair_distance_min_m", d.pair_distance[0]),
         get("deployment", "pair_distance_max_m", d.pair_distance[1])),
    ))
    ru = base.run
    run = build("run", lambda: RunConfig(
        get("run", "duration_s", ru.duration_s),
        get("run", "n_runs", ru.n_runs),
        get("run", "base_seed", ru.base_seed),
    ))
    th = base.thresholds
    thresholds = build("metrics", lambda: MetricThresholds(
        get("metrics", "thermal_limit", th.thermal_limit),
        get("metrics", "class_a_ms", th.class_a_ms),
        get("metrics", "class_b_ms", th.class_b_ms),
        get("metrics", "class_c_ms", th.class_c_ms),
    ))
    curve_file = get("radio", "bler_curve_file", base.bler_curve_file)
    curve = base.bler_curve
    if curve_file and curve_file != base.bler_curve_file:
        rel = None if source in ("<mapping>", "<string>") else Path(source).parent
        p = resolve_bler_file(curve_file, rel)
        curve = build("radio.bler_curve_file", lambda: load_bler_curve(p))
    if problems:
        raise ConfigError(problems)
    try:
        cfg = SimConfig(
            radio=radio,
            bandwidth=bandwidth,
            traffic=traffic,
            mode2=mode2,
            flags=flags,
            deployment=deployment,
            run=run,
            x_percent=get("interference", "x_percent", base.x_percent),
            thresholds=thresholds,
            bler_target=get("radio", "bler_target", base.bler_target),
            bler_curve=curve,
            bler_curve_file=curve_file,
        )
    except (ValueError, ConfigurationError) as exc:
        raise ConfigError({"config": str(exc)}) from None
    if curve.indices and not {4, 11, 19} <= curve.indices:
        raise ConfigError({"radio.bler_curve_file": f"curve lacks MCS {sorted({4, 11, 19} - curve.indices)}"})
    return cfg


def parse_config(text: str, source: str = "<string>", base: SimConfig | None = None) -> SimConfig:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # keep key case
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError({"file": f"parse error: {exc}"}) from None
    values = {s: dict(parser.items(s)) for s in parser.sections()}
    return config_from_mapping(values, base=base, source=source)


def load_config(path: str | Path) -> SimConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError({"file": f"no such config file: {p}"})
    return parse_config(p.read_text(), source=str(p))


def config_to_mapping(cfg: SimConfig) -> dict[str, dict[str, str]]:
    r, b, t, m, f = cfg.radio, cfg.bandwidth, cfg.traffic, cfg.mode2, cfg.flags
    d, ru, th = cfg.deployment, cfg.run, cfg.thresholds
    return {
        "radio": {
            "carrier_freq_ghz": repr(r.carrier_freq),
            "tx_power_dbm": repr(r.tx_power),
            "tx_gain_db": repr(r.tx_gain),
            "rx_gain_db": repr(r.rx_gain),
            "tx_rf_loss_db": repr(r.tx_rf_loss),
            "rx_rf_loss_db": repr(r.rx_rf_loss),
            "noise_figure_db": repr(r.noise_figure),
            "scs_khz": repr(r.scs),
            "overhead_factor": repr(r.overhead_factor),
            "bler_target": repr(cfg.bler_target),
            "bler_curve_file": cfg.bler_curve_file,
        },
        "spectrum": {"bw_mhz": str(b.nominal_mhz), "subchannel_size": str(b.subchannel_size), "prb_count": str(b.prb_count)},
        "traffic": {
            "interval_ms": repr(t.interval_ms),
            "g2c_mbps": repr(t.g2c_mbps),
            "c2g_mbps": repr(t.c2g_mbps),
            "pdb_ms": repr(t.pdb_ms),
            "drop_policy": t.drop_policy.value,
            "random_phase": str(t.random_phase).lower(),
        },
        "mode2": {
            "sensing_window_ms": repr(m.sensing_window_ms),
            "rsrp_threshold_dbm": repr(m.rsrp_threshold_dbm),
            "rrc_min": str(m.rrc_range[0]),
            "rrc_max": str(m.rrc_range[1]),
            "p_change": repr(m.p_change),
            "rri_ms": repr(m.rri_ms),
            "selection_window_start_offset": str(m.selection_window_start_offset),
            "min_candidate_fraction": repr(m.min_candidate_fraction),
            "threshold_step_db": repr(m.threshold_step_db),
            "hd_exclusion": str(m.hd_exclusion).lower(),
        },
        "mode": {"mode": f.mode.value, "mar": str(f.mar_enabled).lower(), "fd": str(f.fd_sensing).lower()},
        "deployment": {
            "users": str(d.users),
            "grid_side_m": repr(d.grid_side),
            "pair_distance_min_m": repr(d.pair_distance[0]),
            "pair_distance_max_m": repr(d.pair_distance[1]),
        },
        "run": {"duration_s": repr(ru.duration_s), "n_runs": str(ru.n_runs), "base_seed": str(ru.base_seed)},
        "interference": {"x_percent": repr(cfg.x_percent)},
        "metrics": {
            "thermal_limit": repr(th.thermal_limit),
            "class_a_ms": repr(th.class_a_ms),
            "class_b_ms": repr(th.class_b_ms),
            "class_c_ms": repr(th.class_c_ms),
        },
    }


def dump_config(cfg: SimConfig) -> str:
    lines = []
    for section, keys in config_to_mapping(cfg).items():
        lines.append(f"[{section}]")
        lines.extend(f"{k} = {v}" for k, v in keys.items())
        lines.append("")
    return "\n".join(lines)

