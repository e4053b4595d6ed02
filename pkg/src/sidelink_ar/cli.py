"""Command line entry point: one grid point, or a sweep.

Each simulation flag overrides exactly one config key (see ``FLAG_KEYS``);
``--out-dir``, ``--trace`` and ``--sweep`` only steer output.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from .config import ConfigError, SimConfig, config_from_mapping, dump_config, load_config
from .engine import run
from .sweep import (
    PointResult,
    SweepError,
    SweepResult,
    SweepSpec,
    default_out_dir,
    load_sweep,
    run_sweep,
    write_outputs,
)

# argparse dest -> (section, key)
FLAG_KEYS = {
    "users": ("deployment", "users"),
    "bw_mhz": ("spectrum", "bw_mhz"),
    "traffic": ("traffic", "load"),
    "interference_pct": ("interference", "x_percent"),
    "mode": ("mode", "mode"),
    "mar": ("mode", "mar"),
    "fd": ("mode", "fd"),
    "seed": ("run", "base_seed"),
    "runs": ("run", "n_runs"),
    "duration_s": ("run", "duration_s"),
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sidelink-ar", description="Sidelink Mode 2 simulator for AR glasses.")
    ap.add_argument("--config", help="INI config file (omitted keys take defaults)")
    ap.add_argument("--users", type=int, help="number of glasses/companion pairs (1..20)")
    ap.add_argument("--bw-mhz", type=int, help="channel bandwidth: 20, 40, 60, 80 or 100")
    ap.add_argument("--traffic", help="G2C+C2G load in Mbps, e.g. 15+15")
    ap.add_argument("--interference-pct", type=float, help="external occupancy X in percent")
    ap.add_argument("--mode", choices=["mode2", "mode1"], help="mode2 sensing or genie mode1")
    ap.add_argument("--mar", action="store_const", const=True, help="multiple active reservations")
    ap.add_argument("--fd", action="store_const", const=True, help="full-duplex sensing (mode2 only)")
    ap.add_argument("--seed", type=int, help="base seed")
    ap.add_argument("--runs", type=int, help="independent runs per point")
    ap.add_argument("--duration-s", type=float, help="simulated seconds per run")
    ap.add_argument("--out-dir", help="output root (default $SIDELINK_AR_OUT or ./out)")
    ap.add_argument("--trace", help="per-slot CSV trace of run 0 (single point only)")
    ap.add_argument("--sweep", help="sweep spec file, or a built-in name: fig3 fig4 fig5 fig7")
    ap.add_argument("--parallelism", type=int, default=os.cpu_count() or 1, help="worker processes for sweeps")
    return ap


def overrides(args: argparse.Namespace) -> dict[str, dict[str, str]]:
    out: dict[str, dict[str, str]] = {}
    for dest, (section, key) in FLAG_KEYS.items():
        v = getattr(args, dest)
        if v is None:
            continue
        out.setdefault(section, {})[key] = str(v).lower() if isinstance(v, bool) else str(v)
    return out


def resolve_config(args: argparse.Namespace) -> SimConfig:
    base = load_config(args.config) if args.config else SimConfig()
    return config_from_mapping(overrides(args), base=base)


def _report_line(cfg: SimConfig, rep) -> str:
    return (
        f"{cfg.flags.label}  users={cfg.deployment.users}  bw={cfg.bandwidth.nominal_mhz} MHz  "
        f"load={cfg.traffic.g2c_mbps:g}+{cfg.traffic.c2g_mbps:g} Mbps  X={cfg.x_percent:g}%\n"
        f"  PRR      {rep.prr_mean:.4f} +- {rep.prr_se:.4f}\n"
        f"  latency  {rep.latency_mean_ms:.3f} +- {rep.latency_se_ms:.3f} ms (p95 {rep.latency_p95_ms:.3f} ms)\n"
        f"  incomplete intervals {rep.incomplete_rate:.4f}  thermal_ok={rep.thermal_ok}  classes={rep.verdict}"
    )


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return 2
    out_root = Path(args.out_dir) if args.out_dir else default_out_dir()

    if args.sweep:
        if args.trace:
            print("--trace applies to single-point runs only", file=sys.stderr)
            return 2
        try:
            spec = load_sweep(args.sweep)
        except SweepError as exc:
            print(exc, file=sys.stderr)
            return 2
        result = run_sweep(spec, cfg, args.parallelism)
        out = write_outputs(result, out_root)
        for r in result.failures:
            print(f"point failed: {r.point}: {r.error}", file=sys.stderr)
        print(f"{len(result.results) - len(result.failures)}/{len(result.results)} points written to {out}")
        return 1 if result.failures else 0

    trace = open(args.trace, "w", newline="") if args.trace else None
    try:
        rep = run(cfg, trace=trace)
    finally:
        if trace:
            trace.close()
    print(_report_line(cfg, rep))
    spec = SweepSpec(
        name="point",
        users=(cfg.deployment.users,),
        bw_mhz=(cfg.bandwidth.nominal_mhz,),
        traffic=((cfg.traffic.g2c_mbps, cfg.traffic.c2g_mbps),),
        x_percent=(cfg.x_percent,),
        variants=(cfg.flags,),
    )
    point = spec.points()[0]
    out = write_outputs(SweepResult(spec, [PointResult(point, rep)]), out_root)
    (out / "config.ini").write_text(dump_config(cfg))
    print(f"summary written to {out / 'summary.csv'}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
