"""Batch experiment driver: Monte-Carlo sweeps, convergence traces and
delay-profile reports, with CSV output (plus rendered figures).

Determinism contract: every (sweep point, realization) pair owns an RNG
stream spawned from (seed, point index, realization index), results are
written in a fixed order, and wall-clock timings are kept out of the CSV
files, so re-running a scenario reproduces them byte for byte.
"""

from __future__ import annotations

import dataclasses
import json
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__ as _version
from .beamspace import beamspace_dictionary, export_beamspace_csv
from .channel import aperture_delay, realize_channel
from .config import ConfigError, SystemConfig, config_from_mapping
from .estimators import (
    EstimationResult,
    admm_estimate,
    build_zero_delay_response,
    idealized_decomposed,
    init_from_position,
    ls_baseline,
    nmse,
    omp_baseline,
    positions_from_channel,
)
from .training import add_awgn, build_phi, gen_training, synthesize_rx_matrix

__all__ = [
    "Scenario",
    "load_scenario",
    "run_sweep",
    "convergence_trace",
    "delay_profile_report",
    "beamspace_report",
]

METHODS = ("proposed", "idealized", "ls", "omp")
SWEEP_KINDS = ("snr_db", "T", "MN")


@dataclass
class Scenario:
    """One batch experiment: a base config, a sweep axis and method list."""

    base: SystemConfig
    kind: str = "snr_db"
    values: tuple = (0.0, 10.0, 20.0, 30.0)
    methods: tuple = METHODS
    R: int = 20
    out_dir: str | None = None

    def __post_init__(self):
        if self.R < 1:
            raise ConfigError("R must be >= 1")
        if not self.values:
            raise ConfigError("sweep values must be non-empty")
        if not self.methods:
            raise ConfigError("method list must be non-empty")
        if self.kind not in SWEEP_KINDS:
            raise ConfigError(f"unknown sweep kind {self.kind!r}")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ConfigError(f"unknown methods {sorted(unknown)}")
        object.__setattr__(self, "values", tuple(self.values))
        object.__setattr__(self, "methods", tuple(self.methods))

    def point_config(self, value) -> SystemConfig:
        if self.kind == "snr_db":
            return dataclasses.replace(self.base, snr_db=float(value))
        if self.kind == "T":
            return dataclasses.replace(self.base, T=int(value))
        m, n = value
        return dataclasses.replace(self.base, M=int(m), N=int(n))


def load_scenario(path: str | Path) -> Scenario:
    """Load a scenario JSON; a bare config object is wrapped with defaults."""
    path = Path(path)
    raw = json.loads(path.read_text())
    if "base" not in raw:
        return Scenario(base=config_from_mapping(raw, path.parent))
    base = config_from_mapping(raw["base"], path.parent)
    sweep = raw.get("sweep", {})
    kind = sweep.get("kind", "snr_db")
    values = sweep.get("values")
    kw: dict = {"base": base, "kind": kind}
    if values is not None:
        if kind == "MN":
            values = tuple((int(v[0]), int(v[1])) for v in values)
        kw["values"] = tuple(values)
    elif kind == "T":
        kw["values"] = tuple(int(base.N * f) for f in (0.5, 1, 2, 3))
    elif kind == "MN":
        raise ConfigError("an MN sweep needs explicit values")
    if "methods" in raw:
        kw["methods"] = tuple(raw["methods"])
    if "R" in raw:
        kw["R"] = int(raw["R"])
    if "out_dir" in raw:
        kw["out_dir"] = raw["out_dir"]
    return Scenario(**kw)


# ======================================================================
# Single realization
# ======================================================================

def _run_methods(cfg: SystemConfig, methods, seed_key) -> list[dict]:
    """Run every requested estimator on one fresh realization."""
    rng = np.random.default_rng(np.random.SeedSequence(seed_key))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        ch = realize_channel(cfg, rng)
        ts = gen_training(cfg, rng)
        phi = build_phi(ts, cfg, materialize=False)
        Y0 = synthesize_rx_matrix(ch.H, phi, ch.selector)
        rx = add_awgn(Y0, cfg.snr_db, None, rng)

    records = []
    for method in methods:
        t0 = time.perf_counter()
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                result = _dispatch(method, cfg, ch, phi, rx.Y, rng)
            rec = {
                "method": method,
                "nmse": result.nmse,
                "nmse_paper": result.nmse_paper,
                "iters": result.iters,
                "converged": result.converged,
                "reason": "",
            }
        except Exception as exc:  # failures must never abort the sweep
            rec = {
                "method": method,
                "nmse": float("nan"),
                "nmse_paper": float("nan"),
                "iters": 0,
                "converged": False,
                "reason": f"{type(exc).__name__}: {exc}",
            }
        rec["wall_s"] = time.perf_counter() - t0
        records.append(rec)
    return records


def _dispatch(method, cfg, ch, phi, Y, rng) -> EstimationResult:
    if method == "idealized":
        return idealized_decomposed(Y, phi, ch, cfg)
    if method == "proposed":
        pos_bs, pos_ue = positions_from_channel(ch)
        H0 = init_from_position(cfg, pos_bs, pos_ue, cfg.sigma_p2, rng)
        return admm_estimate(Y, phi, H0, cfg, truth=ch)
    if method == "ls":
        A0 = build_zero_delay_response(phi)
        h = ls_baseline(A0, Y.flatten(order="F"))
        from .channel import embed_block_rows

        H_hat = embed_block_rows(h.reshape(cfg.M, cfg.N * cfg.L_p))
        return EstimationResult(
            method="ls",
            H_hat=H_hat,
            e_hat=None,
            nmse=nmse(ch.H, H_hat, "mean"),
            nmse_paper=nmse(ch.H, H_hat, "paper"),
        )
    if method == "omp":
        F = beamspace_dictionary(cfg.M, cfg.N)
        H_hat = omp_baseline(phi, F, Y.flatten(order="F"), cfg.L_p)
        return EstimationResult(
            method="omp",
            H_hat=H_hat,
            e_hat=None,
            nmse=nmse(ch.H, H_hat, "mean"),
            nmse_paper=nmse(ch.H, H_hat, "paper"),
        )
    raise ValueError(f"unknown method {method!r}")


def _point_task(args):
    cfg_dict, methods, seed_key, point_idx, r = args
    cfg = SystemConfig(**cfg_dict)
    recs = _run_methods(cfg, methods, seed_key)
    return point_idx, r, recs


def _cfg_kwargs(cfg: SystemConfig) -> dict:
    d = dataclasses.asdict(cfg)
    d["xi"] = tuple(d["xi"])
    return d


# ======================================================================
# Sweeps
# ======================================================================

def run_sweep(
    scn: Scenario,
    out_dir: str | Path | None = None,
    seed: int | None = None,
    jobs: int = 1,
    figures: bool = True,
) -> list[dict]:
    """Run the Monte-Carlo sweep and write runs.csv / results.csv / meta.

    Returns the aggregated rows.  Per-run failures are recorded with NaN
    metrics and a reason; the aggregate row count is always
    len(values) * len(methods).
    """
    out = Path(out_dir or scn.out_dir or "out")
    out.mkdir(parents=True, exist_ok=True)
    seed = scn.base.seed if seed is None else seed

    tasks = []
    for p_idx, value in enumerate(scn.values):
        cfg = scn.point_config(value)
        for r in range(scn.R):
            tasks.append(
                (_cfg_kwargs(cfg), scn.methods, (seed, p_idx, r), p_idx, r)
            )

    results: dict[tuple[int, int], list[dict]] = {}
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for p_idx, r, recs in pool.map(_point_task, tasks):
                results[(p_idx, r)] = recs
    else:
        for task in tasks:
            p_idx, r, recs = _point_task(task)
            results[(p_idx, r)] = recs

    run_rows = []
    for p_idx, value in enumerate(scn.values):
        for r in range(scn.R):
            for rec in results[(p_idx, r)]:
                run_rows.append({"value": _fmt_value(value), "r": r, **rec})

    agg_rows = []
    timing: dict[str, float] = {}
    for p_idx, value in enumerate(scn.values):
        for method in scn.methods:
            vals, papers, iters, walls, failed = [], [], [], [], 0
            for r in range(scn.R):
                rec = next(
                    x for x in results[(p_idx, r)] if x["method"] == method
                )
                walls.append(rec["wall_s"])
                if np.isnan(rec["nmse"]):
                    failed += 1
                else:
                    vals.append(rec["nmse"])
                    papers.append(rec["nmse_paper"])
                    iters.append(rec["iters"])
            vals = np.asarray(vals)
            mean_lin = float(np.mean(vals)) if vals.size else float("nan")
            se = (
                float(np.std(vals, ddof=1) / np.sqrt(vals.size))
                if vals.size > 1
                else float("nan")
            )
            agg_rows.append(
                {
                    "value": _fmt_value(value),
                    "method": method,
                    "R_ok": int(vals.size),
                    "n_failed": failed,
                    "nmse_mean": mean_lin,
                    "nmse_mean_db": (
                        10.0 * np.log10(mean_lin) if mean_lin > 0 else float("nan")
                    ),
                    "nmse_se": se,
                    "nmse_paper_sum": (
                        float(np.sum(papers)) if papers else float("nan")
                    ),
                    "iters_mean": float(np.mean(iters)) if iters else float("nan"),
                }
            )
            timing[f"{_fmt_value(value)}/{method}"] = float(np.mean(walls))

    _write_csv(
        out / "runs.csv",
        ["value", "r", "method", "nmse", "nmse_paper", "iters", "converged", "reason"],
        run_rows,
    )
    _write_csv(
        out / "results.csv",
        [
            "value", "method", "R_ok", "n_failed", "nmse_mean",
            "nmse_mean_db", "nmse_se", "nmse_paper_sum", "iters_mean",
        ],
        agg_rows,
    )
    _write_meta(out, scn, seed, command=f"sweep-{scn.kind}")
    (out / "timings.json").write_text(
        json.dumps(timing, indent=2, sort_keys=True) + "\n"
    )
    if figures:
        from .plots import render_sweep_figure

        render_sweep_figure(agg_rows, scn, out / f"nmse_vs_{scn.kind}.png")
    return agg_rows


def convergence_trace(
    scn: Scenario,
    out_dir: str | Path | None = None,
    seed: int | None = None,
    figures: bool = True,
) -> list[dict]:
    """Per-iteration traces of the proposed estimator at each SNR value,
    alongside the (iteration-constant) idealized benchmark level."""
    if scn.kind != "snr_db":
        raise ConfigError("convergence traces sweep the SNR axis")
    if "proposed" not in scn.methods:
        raise ConfigError("convergence traces need the proposed method")
    out = Path(out_dir or scn.out_dir or "out")
    out.mkdir(parents=True, exist_ok=True)
    seed = scn.base.seed if seed is None else seed

    rows = []
    for p_idx, snr in enumerate(scn.values):
        cfg = scn.point_config(snr)
        rng = np.random.default_rng(np.random.SeedSequence((seed, p_idx, 0)))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            ch = realize_channel(cfg, rng)
            ts = gen_training(cfg, rng)
            phi = build_phi(ts, cfg, materialize=False)
            Y0 = synthesize_rx_matrix(ch.H, phi, ch.selector)
            rx = add_awgn(Y0, cfg.snr_db, None, rng)
            ideal = idealized_decomposed(rx.Y, phi, ch, cfg)
            pos_bs, pos_ue = positions_from_channel(ch)
            H0 = init_from_position(cfg, pos_bs, pos_ue, cfg.sigma_p2, rng)
            prop = admm_estimate(rx.Y, phi, H0, cfg, truth=ch)
        for i, err in enumerate(prop.traces["nmse"], start=1):
            rows.append(
                {
                    "snr_db": _fmt_value(snr),
                    "iteration": i,
                    "nmse": err,
                    "primal_residual": prop.traces["primal_residual"][i - 1],
                    "nmse_idealized": ideal.nmse,
                }
            )

    _write_csv(
        out / "convergence.csv",
        ["snr_db", "iteration", "nmse", "primal_residual", "nmse_idealized"],
        rows,
    )
    _write_meta(out, scn, seed, command="convergence")
    if figures:
        from .plots import render_convergence_figure

        render_convergence_figure(rows, out / "convergence.png")
    return rows


def delay_profile_report(
    cfg: SystemConfig,
    out_dir: str | Path,
    m: int | None = None,
    n: int | None = None,
    figures: bool = True,
) -> dict:
    """Combined delay profile of one realization plus the aperture-delay
    versus carrier-frequency table."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    m = cfg.M if m is None else m
    n = 1 if n is None else n
    rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 0, 0)))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        ch = realize_channel(cfg, rng)

    blocks = ch.e.reshape(cfg.n_blocks, cfg.K)
    b0 = ((m - 1) * cfg.N + (n - 1)) * cfg.L_p
    profile = blocks[b0 : b0 + cfg.L_p].max(axis=0)
    profile_rows = [
        {"k": k + 1, "e": int(profile[k])} for k in range(cfg.K)
    ]
    _write_csv(out / "delay_profile.csv", ["k", "e"], profile_rows)

    los = ch.paths[0]
    f_grid = np.linspace(0.5 * cfg.f_c, 2.0 * cfg.f_c, 31)
    delay_rows = [
        {
            "f_c_hz": f,
            "delay_s": aperture_delay(cfg.M, 1, los, f),
        }
        for f in f_grid
    ]
    _write_csv(out / "squint_delay_vs_fc.csv", ["f_c_hz", "delay_s"], delay_rows)
    _write_meta_cfg(out, cfg, command="delay-profile")
    if figures:
        from .plots import render_delay_profile_figure

        render_delay_profile_figure(
            profile_rows, delay_rows, out / "delay_profile.png"
        )
    return {"profile": profile_rows, "squint": delay_rows}


def beamspace_report(
    cfg: SystemConfig, out_dir: str | Path, figures: bool = True
) -> None:
    """Beamspace magnitude heatmap of one realization."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 0, 0)))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        ch = realize_channel(cfg, rng)
    export_beamspace_csv(ch.Z, out / "zheatmap.csv")
    _write_meta_cfg(out, cfg, command="beamspace")
    if figures:
        from .plots import render_beamspace_figure

        render_beamspace_figure(ch.Z, out / "zheatmap.png")


# ======================================================================
# Writers
# ======================================================================

def _fmt_value(v) -> str:
    if isinstance(v, tuple):
        return f"{v[0]}x{v[1]}"
    return _fmt_float(v)


def _fmt_float(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.12g}"
    return str(v)


def _write_csv(path: Path, header: list[str], rows: list[dict]) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt_float(row[h]) for h in header])


def _write_meta(out: Path, scn: Scenario, seed: int, command: str) -> None:
    meta = {
        "command": command,
        "version": _version,
        "seed": seed,
        "base": scn.base.to_dict(),
        "sweep": {"kind": scn.kind, "values": [_fmt_value(v) for v in scn.values]},
        "methods": list(scn.methods),
        "R": scn.R,
        "snr_reference": "empirical mean power of the noiseless received block",
    }
    (out / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def _write_meta_cfg(out: Path, cfg: SystemConfig, command: str) -> None:
    meta = {
        "command": command,
        "version": _version,
        "config": cfg.to_dict(),
    }
    (out / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
