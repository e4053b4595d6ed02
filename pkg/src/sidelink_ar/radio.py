"""Physical-layer math for the sidelink simulator.

Indoor-office pathloss, dB-domain link budget, thermal noise, SINR,
the three-entry MCS table, per-slot transport block capacity, SINR to BLER
mapping and BLER-target link adaptation.

All functions are pure and operate on immutable value types.
"""

from __future__ import annotations

import functools
import math
from bisect import bisect_left
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

THERMAL_NOISE_DBM_HZ = -174.0

# PRBs per nominal channel bandwidth at 30 kHz SCS (38.101-1, FR1).
PRB_TABLE_30KHZ = {20: 51, 40: 106, 60: 162, 80: 217, 100: 273}


class ConfigurationError(ValueError):
    """Raised for inconsistent radio, BLER or MCS configuration."""


@dataclass(frozen=True)
class Position:
    x: float
    y: float

    def distance(self, other: "Position") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)


@dataclass(frozen=True)
class RadioParams:
    carrier_freq: float = 6.0  # GHz
    tx_power: float = 14.0  # dBm
    tx_gain: float = 0.0
    rx_gain: float = 0.0
    tx_rf_loss: float = 0.0
    rx_rf_loss: float = 0.0
    noise_figure: float = 9.0
    scs: float = 30.0  # kHz
    overhead_factor: float = 1.0

    def __post_init__(self):
        if not self.carrier_freq > 0:
            raise ConfigurationError("carrier_freq must be positive")
        if not math.isfinite(self.tx_power):
            raise ConfigurationError("tx_power must be finite")
        if self.scs not in (15.0, 30.0, 60.0):
            raise ConfigurationError("scs must be one of 15, 30, 60 kHz for FR1 sidelink")
        if not 0.0 < self.overhead_factor <= 1.0:
            raise ConfigurationError("overhead_factor must be in (0, 1]")

    @property
    def slot_duration(self) -> float:
        """Slot length in ms under scalable numerology (1 ms at 15 kHz)."""
        return 15.0 / self.scs


@dataclass(frozen=True)
class McsEntry:
    index: int
    modulation_order: int
    code_rate: int  # R x 1024
    spectral_efficiency: float

    def __post_init__(self):
        nominal = self.modulation_order * self.code_rate / 1024
        if abs(nominal - self.spectral_efficiency) > 1e-3:
            raise ConfigurationError(
                f"MCS {self.index}: spectral efficiency {self.spectral_efficiency} "
                f"inconsistent with Qm*R/1024 = {nominal:.4f}"
            )


# 38.214 Table 5.1.3.1-1 rows used by the simulator, sorted by efficiency.
MCS_TABLE: tuple[McsEntry, ...] = (
    McsEntry(4, 2, 308, 0.6016),
    McsEntry(11, 4, 378, 1.4766),
    McsEntry(19, 6, 517, 3.0293),
)


def mcs_by_index(index: int, table: Sequence[McsEntry] = MCS_TABLE) -> McsEntry:
    for entry in table:
        if entry.index == index:
            return entry
    raise ConfigurationError(f"unknown MCS index {index}")


@dataclass(frozen=True)
class Bandwidth:
    nominal_mhz: int = 100
    subchannel_size: int = 15
    prb_count: int | None = None
    scs: float = 30.0

    def __post_init__(self):
        if self.prb_count is None:
            if self.scs != 30.0 or self.nominal_mhz not in PRB_TABLE_30KHZ:
                raise ConfigurationError(
                    f"no PRB table entry for {self.nominal_mhz} MHz at {self.scs} kHz; "
                    "give prb_count explicitly"
                )
            object.__setattr__(self, "prb_count", PRB_TABLE_30KHZ[self.nominal_mhz])
        if self.subchannel_size < 10 or self.subchannel_size > 100:
            raise ConfigurationError("subchannel_size must be 10..100 PRBs")
        if self.n_subchannels < 1:
            raise ConfigurationError("bandwidth holds no complete subchannel")
        if self.occupied_hz > self.nominal_mhz * 1e6:
            raise ConfigurationError("occupied bandwidth exceeds nominal bandwidth")

    @property
    def n_subchannels(self) -> int:
        return self.prb_count // self.subchannel_size

    @property
    def occupied_hz(self) -> float:
        return self.n_subchannels * self.subchannel_size * 12 * self.scs * 1e3


def pathloss_db(d: float, fc: float) -> float:
    """3GPP InH pathloss with ``d`` in metres and ``fc`` in GHz."""
    if not d > 0:
        raise ValueError(f"distance must be positive, got {d}")
    if not fc > 0:
        raise ValueError(f"carrier frequency must be positive, got {fc}")
    return 32.4 + 17.3 * math.log10(d) + 20.0 * math.log10(fc)


def received_power_dbm(tx: RadioParams, pl: float) -> float:
    # losses are entered as positive dB
    return tx.tx_power + tx.tx_gain + tx.rx_gain - tx.tx_rf_loss - tx.rx_rf_loss - pl


def noise_power_dbm(bw: Bandwidth | float, nf: float) -> float:
    """Thermal noise over the occupied bandwidth (a Bandwidth or a value in Hz)."""
    hz = bw.occupied_hz if isinstance(bw, Bandwidth) else float(bw)
    if not hz > 0:
        raise ValueError("occupied bandwidth must be positive")
    return THERMAL_NOISE_DBM_HZ + 10.0 * math.log10(hz) + nf


def db_to_lin(x: float) -> float:
    return 10.0 ** (x / 10.0)


def lin_to_db(x: float) -> float:
    return 10.0 * math.log10(x)


def sinr_db(wanted: float, interferers: Iterable[float], noise: float) -> float:
    total = db_to_lin(noise)
    for p in interferers:
        total += db_to_lin(p)
    return wanted - lin_to_db(total)


def tb_capacity_bits(mcs: McsEntry, bw: Bandwidth, params: RadioParams) -> int:
    """Payload of one full-bandwidth slot at the given MCS."""
    slot_s = params.slot_duration * 1e-3
    return math.floor(mcs.spectral_efficiency * bw.occupied_hz * slot_s * params.overhead_factor)


def nominal_rate_mbps(mcs: McsEntry, nominal_bw: float) -> float:
    if not nominal_bw > 0:
        raise ValueError("nominal bandwidth must be positive")
    return mcs.spectral_efficiency * nominal_bw


@dataclass(frozen=True)
class BlerCurve:
    """Per-MCS SINR to BLER map.

    Each MCS is either a logistic ``(midpoint_db, slope_db)`` pair, where
    BLER = 1 / (1 + exp((sinr - midpoint) / slope)), or a table of
    ``(sinr_db, bler)`` samples interpolated linearly in log10(BLER) and
    clamped to the end values outside the sampled range.
    """

    logistic: dict[int, tuple[float, float]] = field(default_factory=dict)
    tables: dict[int, tuple[tuple[float, ...], tuple[float, ...]]] = field(default_factory=dict)

    def __post_init__(self):
        for idx, (_, slope) in self.logistic.items():
            if not slope > 0:
                raise ConfigurationError(f"MCS {idx}: logistic slope must be positive")
        for idx, (xs, ys) in self.tables.items():
            if len(xs) < 2 or len(xs) != len(ys):
                raise ConfigurationError(f"MCS {idx}: BLER table needs >= 2 samples")
            if any(b <= a for a, b in zip(xs, xs[1:])):
                raise ConfigurationError(f"MCS {idx}: SINR samples must be strictly increasing")
            if any(not 0.0 <= y <= 1.0 for y in ys):
                raise ConfigurationError(f"MCS {idx}: BLER samples must lie in [0, 1]")
            if any(b > a for a, b in zip(ys, ys[1:])):
                raise ConfigurationError(f"MCS {idx}: BLER must not increase with SINR")
        both = set(self.logistic) & set(self.tables)
        if both:
            raise ConfigurationError(f"MCS {sorted(both)} defined both as logistic and table")

    @property
    def indices(self) -> set[int]:
        return set(self.logistic) | set(self.tables)


DEFAULT_BLER_CURVE = BlerCurve(logistic={4: (2.0, 0.8), 11: (9.0, 0.8), 19: (16.0, 0.8)})

_LOG_FLOOR = 1e-12


def bler(curve: BlerCurve, mcs_index: int, sinr: float) -> float:
    params = curve.logistic.get(mcs_index)
    if params is not None:
        mid, slope = params
        z = (sinr - mid) / slope
        if z > 700.0:
            return 0.0
        return 1.0 / (1.0 + math.exp(z))
    table = curve.tables.get(mcs_index)
    if table is None:
        raise ConfigurationError(f"no BLER curve for MCS {mcs_index}")
    xs, ys = table
    if sinr <= xs[0]:
        return ys[0]
    if sinr >= xs[-1]:
        return ys[-1]
    k = bisect_left(xs, sinr)
    x0, x1 = xs[k - 1], xs[k]
    l0 = math.log10(max(ys[k - 1], _LOG_FLOOR))
    l1 = math.log10(max(ys[k], _LOG_FLOOR))
    val = 10.0 ** (l0 + (l1 - l0) * (sinr - x0) / (x1 - x0))
    return min(1.0, max(0.0, val))


def adapt_mcs(
    predicted_sinr: float,
    curve: BlerCurve,
    target: float,
    table: Sequence[McsEntry] = MCS_TABLE,
) -> McsEntry:
    """Highest-efficiency MCS meeting the BLER target, else the most robust one."""
    if not table:
        raise ConfigurationError("empty MCS table")
    for entry in reversed(table):
        if bler(curve, entry.index, predicted_sinr) <= target:
            return entry
    return table[0]


def load_bler_curve(path: str | Path) -> BlerCurve:
    """Read a BLER curve file.

    One record per line, ``#`` starts a comment::

        logistic <mcs_index> <midpoint_db> <slope_db>
        table    <mcs_index> <sinr_db> <bler>

    ``table`` rows for one MCS may appear in any order; they are sorted by SINR.
    """
    text = Path(path).read_text()
    return parse_bler_curve(text, source=str(path))


def parse_bler_curve(text: str, source: str = "<string>") -> BlerCurve:
    logistic: dict[int, tuple[float, float]] = {}
    samples: dict[int, list[tuple[float, float]]] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        kind = parts[0].lower()
        try:
            if kind == "logistic" and len(parts) == 4:
                idx = int(parts[1])
                if idx in logistic:
                    raise ConfigurationError(f"{source}:{lineno}: duplicate logistic MCS {idx}")
                logistic[idx] = (float(parts[2]), float(parts[3]))
            elif kind == "table" and len(parts) == 4:
                samples.setdefault(int(parts[1]), []).append((float(parts[2]), float(parts[3])))
            else:
                raise ConfigurationError(f"{source}:{lineno}: cannot parse {raw!r}")
        except ValueError as exc:
            if isinstance(exc, ConfigurationError):
                raise
            raise ConfigurationError(f"{source}:{lineno}: {exc}") from None
    tables = {}
    for idx, rows in samples.items():
        rows.sort()
        tables[idx] = (tuple(r[0] for r in rows), tuple(r[1] for r in rows))
    return BlerCurve(logistic=logistic, tables=tables)


def format_bler_curve(curve: BlerCurve) -> str:
    lines = ["# kind mcs_index value value"]
    for idx in sorted(curve.logistic):
        mid, slope = curve.logistic[idx]
        lines.append(f"logistic {idx} {mid!r} {slope!r}")
    for idx in sorted(curve.tables):
        for x, y in zip(*curve.tables[idx]):
            lines.append(f"table {idx} {x!r} {y!r}")
    return "\n".join(lines) + "\n"


def default_bler_file() -> Path:
    return bundled_bler_file("default")


BUNDLED_CURVES = {"default": "default_bler.txt", "nr_ldpc": "nr_ldpc_bler.txt"}


def bundled_bler_file(name: str) -> Path:
    """Path of a curve file shipped with the package (``default`` or ``nr_ldpc``)."""
    try:
        fname = BUNDLED_CURVES[name]
    except KeyError:
        raise ConfigurationError(f"unknown bundled BLER curve {name!r}; choose from {sorted(BUNDLED_CURVES)}") from None
    return Path(str(resources.files("sidelink_ar") / "data" / fname))


def resolve_bler_file(spec: str, relative_to: Path | None = None) -> Path:
    """A bundled curve name, or a file path (relative to ``relative_to``)."""
    if spec in BUNDLED_CURVES:
        return bundled_bler_file(spec)
    p = Path(spec)
    if not p.is_absolute() and relative_to is not None:
        p = relative_to / p
    return p


@functools.lru_cache(maxsize=None)
def nr_ldpc_curve() -> BlerCurve:
    """The calibrated curve set used for the trend-level experiments."""
    return load_bler_curve(bundled_bler_file("nr_ldpc"))
