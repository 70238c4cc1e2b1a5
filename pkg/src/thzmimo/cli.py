"""Command-line entry point.

    simulate sweep-snr     --config scenario.json --out results/ [--seed S] [--jobs J]
    simulate sweep-T       --config scenario.json --out results/
    simulate convergence   --config scenario.json --out results/
    simulate delay-profile --config scenario.json --out results/
    simulate beamspace     --config scenario.json --out results/

The config file holds either a bare system config or a scenario object
with ``base``, ``sweep``, ``methods``, ``R`` and ``out_dir`` keys.  Each
command writes CSV files, a meta.json with the resolved configuration,
and rendered PNG figures (disable with --no-figures).
"""

from __future__ import annotations

import argparse
import dataclasses
import sys

from .harness import (
    Scenario,
    beamspace_report,
    convergence_trace,
    delay_profile_report,
    load_scenario,
    run_sweep,
)

DEFAULT_SNRS = (0.0, 10.0, 20.0, 30.0)


def _common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", required=True, help="scenario or config JSON")
    sub.add_argument("--out", default=None, help="output directory")
    sub.add_argument("--seed", type=int, default=None, help="override seed")
    sub.add_argument("--jobs", type=int, default=1, help="worker processes")
    sub.add_argument(
        "--no-figures", dest="figures", action="store_false",
        help="skip PNG rendering",
    )


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="simulate",
        description="Monte-Carlo experiments for dual-wideband channel estimation",
    )
    subs = p.add_subparsers(dest="command", required=True)
    for name, help_ in [
        ("sweep-snr", "NMSE versus SNR"),
        ("sweep-T", "NMSE versus training length"),
        ("convergence", "per-iteration estimator traces"),
        ("delay-profile", "combined delay profile and squint-delay table"),
        ("beamspace", "beamspace magnitude heatmap"),
    ]:
        _common(subs.add_parser(name, help=help_))
    return p


def _force_kind(scn: Scenario, kind: str) -> Scenario:
    if scn.kind == kind:
        return scn
    if kind == "snr_db":
        return dataclasses.replace(scn, kind=kind, values=DEFAULT_SNRS)
    values = tuple(int(scn.base.N * f) for f in (0.5, 1, 2, 3))
    return dataclasses.replace(scn, kind=kind, values=values)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    scn = load_scenario(args.config)
    if args.seed is not None:
        scn = dataclasses.replace(
            scn, base=dataclasses.replace(scn.base, seed=args.seed)
        )

    if args.command == "sweep-snr":
        rows = run_sweep(
            _force_kind(scn, "snr_db"), out_dir=args.out, seed=args.seed,
            jobs=args.jobs, figures=args.figures,
        )
        _summarize(rows)
    elif args.command == "sweep-T":
        rows = run_sweep(
            _force_kind(scn, "T"), out_dir=args.out, seed=args.seed,
            jobs=args.jobs, figures=args.figures,
        )
        _summarize(rows)
    elif args.command == "convergence":
        convergence_trace(
            _force_kind(scn, "snr_db"), out_dir=args.out, seed=args.seed,
            figures=args.figures,
        )
        print("wrote convergence.csv")
    elif args.command == "delay-profile":
        delay_profile_report(scn.base, args.out or scn.out_dir or "out",
                             figures=args.figures)
        print("wrote delay_profile.csv and squint_delay_vs_fc.csv")
    elif args.command == "beamspace":
        beamspace_report(scn.base, args.out or scn.out_dir or "out",
                         figures=args.figures)
        print("wrote zheatmap.csv")
    return 0


def _summarize(rows) -> None:
    for r in rows:
        print(
            f"{r['value']:>8}  {r['method']:<10} "
            f"NMSE {r['nmse_mean_db']:+7.2f} dB  "
            f"(R_ok={r['R_ok']}, failed={r['n_failed']})"
        )


if __name__ == "__main__":
    sys.exit(main())
