"""Parameter sweeps, the summary CSV and per-figure plot data.

Sweep spec grammar (INI, one ``[sweep]`` section)::

    [sweep]
    name     = fig3                    # output sub-directory
    users    = 1-20                    # comma list and/or a-b ranges
    bw_mhz   = 100
    traffic  = 5+5, 15+15, 30+30       # G2C+C2G Mbps
    x_percent = 0
    variants = mode2, mode1            # mode[+mar][+fd]
    figures  = fig3                    # plot data to emit (optional)

Grid points are enumerated variant-major, then traffic, bandwidth,
interference and users (innermost), and results are always written in that
order whatever the parallelism.
"""

from __future__ import annotations

import concurrent.futures as cf
import configparser
import csv
import io
import itertools
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

from .config import SimConfig, format_traffic, parse_traffic
from .engine import run
from .mac import Mode, ModeFlags
from .metrics import MetricsReport

DEFAULT_OUT_ENV = "SIDELINK_AR_OUT"

SUMMARY_COLUMNS = [
    "users", "bw_mhz", "traffic_mbps", "interference_pct", "mode", "mar", "fd",
    "prr_mean", "prr_se", "latency_mean_ms", "latency_se_ms", "latency_p95_ms",
    "incomplete_rate", "thermal_ok", "classes",
]


class SweepError(ValueError):
    pass


class FigureDataError(ValueError):
    """A figure's axes are not covered by the sweep results."""

    def __init__(self, figure: str, missing: list):
        self.figure = figure
        self.missing = missing
        shown = ", ".join(str(m) for m in missing[:10])
        more = f" (+{len(missing) - 10} more)" if len(missing) > 10 else ""
        super().__init__(f"{figure}: {len(missing)} grid point(s) missing: {shown}{more}")


def default_out_dir() -> Path:
    return Path(os.environ.get(DEFAULT_OUT_ENV, "out"))


def parse_variant(text: str) -> ModeFlags:
    """``mode2``, ``mode1``, optionally suffixed with ``+mar`` and/or ``+fd``."""
    parts = [p.strip().lower() for p in text.split("+")]
    mode = {"mode2": Mode.MODE2, "mode1": Mode.MODE1_GENIE}.get(parts[0])
    extras = set(parts[1:])
    if mode is None or not extras <= {"mar", "fd"} or len(extras) != len(parts) - 1:
        raise SweepError(f"bad variant {text!r}; expected mode2|mode1 with optional +mar, +fd")
    return ModeFlags(mode, "mar" in extras, "fd" in extras)


def format_variant(flags: ModeFlags) -> str:
    s = flags.mode.value
    if flags.mar_enabled:
        s += "+mar"
    if flags.fd_sensing:
        s += "+fd"
    return s


def _int_list(text: str) -> list[int]:
    out = []
    for tok in text.replace(" ", "").split(","):
        if not tok:
            continue
        if "-" in tok:
            a, b = tok.split("-", 1)
            out.extend(range(int(a), int(b) + 1))
        else:
            out.append(int(tok))
    return out


def _float_list(text: str) -> list[float]:
    return [float(t) for t in text.replace(" ", "").split(",") if t]


@dataclass(frozen=True)
class GridPoint:
    flags: ModeFlags
    traffic: tuple[float, float]
    bw_mhz: int
    x_percent: float
    users: int

    def __str__(self) -> str:
        return (f"{format_variant(self.flags)} {format_traffic(*self.traffic)} "
                f"{self.bw_mhz}MHz X={self.x_percent:g}% users={self.users}")


@dataclass(frozen=True)
class SweepSpec:
    name: str = "sweep"
    users: tuple[int, ...] = tuple(range(1, 21))
    bw_mhz: tuple[int, ...] = (100,)
    traffic: tuple[tuple[float, float], ...] = ((5.0, 5.0),)
    x_percent: tuple[float, ...] = (0.0,)
    variants: tuple[ModeFlags, ...] = (ModeFlags(),)
    figures: tuple[str, ...] = ()

    def __post_init__(self):
        for axis in ("users", "bw_mhz", "traffic", "x_percent", "variants"):
            if not getattr(self, axis):
                raise SweepError(f"sweep axis {axis!r} is empty")
        bad = [f for f in self.figures if f not in FIGURES]
        if bad:
            raise SweepError(f"unknown figure(s) {bad}; choose from {sorted(FIGURES)}")

    def points(self) -> list[GridPoint]:
        return [
            GridPoint(f, tr, bw, x, u)
            for f, tr, bw, x, u in itertools.product(self.variants, self.traffic, self.bw_mhz, self.x_percent, self.users)
        ]


def parse_sweep(text: str, source: str = "<string>") -> SweepSpec:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise SweepError(f"{source}: {exc}") from exc
    if cp.sections() != ["sweep"]:
        raise SweepError(f"{source}: expected exactly one [sweep] section")
    sec = cp["sweep"]
    known = {"name", "users", "bw_mhz", "traffic", "x_percent", "variants", "figures"}
    unknown = set(sec) - known
    if unknown:
        raise SweepError(f"{source}: unknown key(s) {sorted(unknown)}")
    kw: dict = {}
    try:
        if "name" in sec:
            kw["name"] = sec["name"].strip()
        if "users" in sec:
            kw["users"] = tuple(_int_list(sec["users"]))
        if "bw_mhz" in sec:
            kw["bw_mhz"] = tuple(_int_list(sec["bw_mhz"]))
        if "traffic" in sec:
            kw["traffic"] = tuple(parse_traffic(t) for t in sec["traffic"].split(",") if t.strip())
        if "x_percent" in sec:
            kw["x_percent"] = tuple(_float_list(sec["x_percent"]))
        if "variants" in sec:
            kw["variants"] = tuple(parse_variant(v) for v in sec["variants"].split(",") if v.strip())
        if "figures" in sec:
            kw["figures"] = tuple(f.strip() for f in sec["figures"].split(",") if f.strip())
    except ValueError as exc:
        raise SweepError(f"{source}: {exc}") from exc
    return SweepSpec(**kw)


def load_sweep(path_or_name: str) -> SweepSpec:
    """A sweep spec file, or the name of a built-in figure sweep."""
    if path_or_name in BUILTIN_SWEEPS:
        return BUILTIN_SWEEPS[path_or_name]
    p = Path(path_or_name)
    try:
        text = p.read_text()
    except OSError as exc:
        raise SweepError(f"cannot read sweep spec {p}: {exc}") from exc
    return parse_sweep(text, str(p))


@dataclass
class PointResult:
    point: GridPoint
    report: MetricsReport | None
    error: str = ""


@dataclass
class SweepResult:
    spec: SweepSpec
    results: list[PointResult] = field(default_factory=list)

    def lookup(self) -> dict[GridPoint, MetricsReport]:
        return {r.point: r.report for r in self.results if r.report is not None}

    @property
    def failures(self) -> list[PointResult]:
        return [r for r in self.results if r.report is None]


def point_config(base: SimConfig, p: GridPoint) -> SimConfig:
    return base.with_point(users=p.users, bw_mhz=p.bw_mhz, traffic=p.traffic, x_percent=p.x_percent, flags=p.flags)


def _run_point(args: tuple[SimConfig, GridPoint]) -> PointResult:
    base, p = args
    try:
        return PointResult(p, run(point_config(base, p)))
    except Exception as exc:  # recorded, the sweep goes on
        return PointResult(p, None, f"{type(exc).__name__}: {exc}")


def run_sweep(spec: SweepSpec, base: SimConfig, parallelism: int = 1) -> SweepResult:
    points = spec.points()
    jobs = [(base, p) for p in points]
    if parallelism <= 1:
        results = [_run_point(j) for j in jobs]
    else:
        with cf.ProcessPoolExecutor(max_workers=parallelism) as pool:
            results = list(pool.map(_run_point, jobs))
    return SweepResult(spec, results)


def _fmt(v: float) -> str:
    return "nan" if v is None or (isinstance(v, float) and math.isnan(v)) else f"{v:.6f}"


def summary_rows(result: SweepResult) -> list[list[str]]:
    rows = []
    for r in result.results:
        if r.report is None:
            continue
        p, rep = r.point, r.report
        rows.append([
            str(p.users), str(p.bw_mhz), format_traffic(*p.traffic), f"{p.x_percent:g}",
            p.flags.mode.value, str(int(p.flags.mar_enabled)), str(int(p.flags.fd_sensing)),
            _fmt(rep.prr_mean), _fmt(rep.prr_se), _fmt(rep.latency_mean_ms), _fmt(rep.latency_se_ms),
            _fmt(rep.latency_p95_ms), _fmt(rep.incomplete_rate), str(int(rep.thermal_ok)), str(rep.verdict),
        ])
    return rows


def summary_csv(result: SweepResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    w.writerows(summary_rows(result))
    return buf.getvalue()


def write_outputs(result: SweepResult, out_root: Path | str | None = None) -> Path:
    """Summary CSV, failures (if any), plot data for the sweep's figures and a manifest."""
    out = Path(out_root if out_root is not None else default_out_dir()) / result.spec.name
    out.mkdir(parents=True, exist_ok=True)
    (out / "summary.csv").write_text(summary_csv(result))
    if result.failures:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["point", "error"])
        for r in result.failures:
            w.writerow([str(r.point), r.error])
        (out / "failures.csv").write_text(buf.getvalue())
    manifest = [f"sweep {result.spec.name}", "summary summary.csv"]
    for fig in result.spec.figures:
        for line in emit_plot_data(result, fig, out):
            manifest.append(line)
    (out / "manifest").write_text("\n".join(manifest) + "\n")
    return out


# --------------------------------------------------------------------- figures
@dataclass(frozen=True)
class Series:
    panel: str  # "prr" or "latency"
    legend: str
    filename: str
    points: tuple[GridPoint, ...]


def _traffic_label(tr) -> str:
    return f"{format_traffic(*tr)} Mbps"


def _fig3_series(users) -> list[Series]:
    out = []
    for panel in ("prr", "latency"):
        for tr in ((5.0, 5.0), (15.0, 15.0), (30.0, 30.0)):
            for flags in (ModeFlags(), ModeFlags(Mode.MODE1_GENIE)):
                pts = tuple(GridPoint(flags, tr, 100, 0.0, u) for u in users)
                name = f"{panel}_{format_variant(flags)}_{format_traffic(*tr)}.dat"
                out.append(Series(panel, f"{flags.label}, {_traffic_label(tr)}", name, pts))
    return out


def _fig4_series(users) -> list[Series]:
    out = []
    for panel in ("prr", "latency"):
        for tr in ((5.0, 5.0), (15.0, 15.0)):
            for bw in (20, 40, 60, 80, 100):
                pts = tuple(GridPoint(ModeFlags(), tr, bw, 0.0, u) for u in users)
                name = f"{panel}_{format_traffic(*tr)}_bw{bw}.dat"
                out.append(Series(panel, f"BW = {bw} MHz, {_traffic_label(tr)}", name, pts))
    return out


def _fig5_series(users) -> list[Series]:
    out = []
    for panel in ("prr", "latency"):
        for tr in ((5.0, 5.0), (15.0, 15.0)):
            for x in (0.0, 10.0, 20.0, 40.0):
                pts = tuple(GridPoint(ModeFlags(), tr, 100, x, u) for u in users)
                name = f"{panel}_{format_traffic(*tr)}_x{x:g}.dat"
                out.append(Series(panel, f"X = {x:g}%, {_traffic_label(tr)}", name, pts))
    return out


FIG7_VARIANTS = (
    ModeFlags(Mode.MODE1_GENIE),
    ModeFlags(),
    ModeFlags(Mode.MODE2, True),
    ModeFlags(Mode.MODE1_GENIE, True),
    ModeFlags(Mode.MODE2, True, True),
)


def _fig7_series(users) -> list[Series]:
    out = []
    for panel in ("prr", "latency"):
        for flags in FIG7_VARIANTS:
            pts = tuple(GridPoint(flags, (15.0, 15.0), 100, 0.0, u) for u in users)
            name = f"{panel}_{format_variant(flags)}.dat"
            legend = flags.label if (flags.mar_enabled or flags.fd_sensing) else f"{flags.label} (baseline)"
            out.append(Series(panel, legend, name, pts))
    return out


FIGURES = {"fig3": _fig3_series, "fig4": _fig4_series, "fig5": _fig5_series, "fig7": _fig7_series}

_ALL_USERS = tuple(range(1, 21))
BUILTIN_SWEEPS = {
    "fig3": SweepSpec("fig3", _ALL_USERS, (100,), ((5.0, 5.0), (15.0, 15.0), (30.0, 30.0)), (0.0,),
                      (ModeFlags(), ModeFlags(Mode.MODE1_GENIE)), ("fig3",)),
    "fig4": SweepSpec("fig4", _ALL_USERS, (20, 40, 60, 80, 100), ((5.0, 5.0), (15.0, 15.0)), (0.0,),
                      (ModeFlags(),), ("fig4",)),
    "fig5": SweepSpec("fig5", _ALL_USERS, (100,), ((5.0, 5.0), (15.0, 15.0)), (0.0, 10.0, 20.0, 40.0),
                      (ModeFlags(),), ("fig5",)),
    "fig7": SweepSpec("fig7", _ALL_USERS, (100,), ((15.0, 15.0),), (0.0,), FIG7_VARIANTS, ("fig7",)),
}


def figure_series(figure: str, users=None) -> list[Series]:
    if figure not in FIGURES:
        raise SweepError(f"unknown figure {figure!r}; choose from {sorted(FIGURES)}")
    return FIGURES[figure](tuple(users) if users is not None else _ALL_USERS)


def emit_plot_data(result: SweepResult, figure: str, out_dir: Path | str) -> list[str]:
    """Write one series file per curve under ``out_dir/figure``.

    Each file has columns ``users value se``. Returns manifest lines
    ``<figure> <panel> <relative path> <legend>``. Users covered by the sweep
    define the x axis; every other axis value must be present.
    """
    covered = result.lookup()
    if not covered:
        raise FigureDataError(figure, ["<empty report>"])
    users = sorted({p.users for p in covered})
    series = figure_series(figure, users)
    missing = [p for s in series for p in s.points if p not in covered]
    if missing:
        raise FigureDataError(figure, sorted(set(missing), key=str))
    fig_dir = Path(out_dir) / figure
    fig_dir.mkdir(parents=True, exist_ok=True)
    lines = []
    for s in series:
        rows = [f"# {s.legend}", "# users value se"]
        for p in s.points:
            rep = covered[p]
            if s.panel == "prr":
                rows.append(f"{p.users} {_fmt(rep.prr_mean)} {_fmt(rep.prr_se)}")
            else:
                rows.append(f"{p.users} {_fmt(rep.latency_mean_ms)} {_fmt(rep.latency_se_ms)}")
        (fig_dir / s.filename).write_text("\n".join(rows) + "\n")
        lines.append(f"{figure} {s.panel} {figure}/{s.filename} {s.legend}")
    return lines
