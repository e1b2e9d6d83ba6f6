"""Command line entry points.

Exit codes: 0 on success, 1 for validation/configuration problems,
2 for compute failures.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .ising import IsingConfig, free_energy_curve, phase_scan, simulate
from .panels import PanelError, compute_returns, load_panel
from .pipeline import (
    ConfigError,
    PipelineError,
    load_config,
    load_merge_map,
    parse_field_schedule,
    run_pipeline,
    validate_config,
    write_returns_csv,
    load_panel_dir,
    load_spectra_dir,
    _dump_json,
    _fmt,
    _stage_spectra,
    _stage_risk,
)
from .spectral import ConvergenceError, NoPositiveWindowError, minimal_positive_window
from .svm import GammaSpec, SvmConfig, beta_error_bands, calibrate_gamma0
from .tailfit import fit_alpha, pf_density


def _panel_from_args(args) -> tuple:
    panel = load_panel(args.price, args.volume, args.sector)
    return panel, compute_returns(panel)


def cmd_ingest(args) -> int:
    panel, rp = _panel_from_args(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_returns_csv(rp, out / "returns.csv")
    if rp.volumes is not None:
        from .panels import ReturnPanel
        write_returns_csv(ReturnPanel(rp.tickers, rp.dates, rp.volumes, None, False), out / "volumes.csv")
    _dump_json(
        {
            "tickers": rp.tickers,
            "sectors": rp.sectors,
            "normalization_factor": rp.normalization_factor,
            "degenerate": rp.degenerate,
            "dropped": panel.dropped,
            "n": rp.n,
            "t0": rp.t0,
        },
        out / "panel_meta.json",
    )
    print(f"ingested {rp.n} tickers x {rp.t0} return days into {out}")
    if panel.dropped:
        print(f"dropped (incomplete price history): {', '.join(panel.dropped)}")
    return 0


class _SpectrumArgs:
    def __init__(self, args):
        self.window_t = args.t
        self.window_step = args.step
        self.merge_csv = getattr(args, "merge", None)


def cmd_spectrum(args) -> int:
    rp = load_panel_dir(Path(args.panel_dir))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _stage_spectra(_SpectrumArgs(args), rp, out)
    print(f"wrote spectra.json, betas.csv, market_returns.csv to {out}")
    return 0


def cmd_betas(args) -> int:
    # spectrum already writes betas.csv; this recomputes just that file
    rp = load_panel_dir(Path(args.panel_dir))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _stage_spectra(_SpectrumArgs(args), rp, out)
    print(f"wrote betas.csv (long format date,ticker,beta) to {out}")
    return 0


def cmd_min_window(args) -> int:
    rp = load_panel_dir(Path(args.panel_dir))
    candidates = sorted(int(x) for x in args.candidates.split(","))
    try:
        t_min = minimal_positive_window(rp, candidates, step=args.step)
    except NoPositiveWindowError as exc:
        print(json.dumps({"t_min": None, "violations": exc.violations}))
        return 2
    print(json.dumps({"t_min": t_min}))
    return 0


def cmd_risk(args) -> int:
    outdir = Path(args.spectra_dir)
    rp = load_panel_dir(Path(args.panel_dir))
    spectra = load_spectra_dir(outdir)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    class _A:
        merge_csv = args.merge
    _stage_risk(_A(), rp, spectra, out)
    print(f"wrote risk.csv to {out}")
    return 0


def cmd_tailfit(args) -> int:
    import pandas as pd

    market = pd.read_csv(args.window_file)
    records = []
    for center, grp in market.groupby("center", sort=True):
        rm = grp["market_return"].to_numpy()
        std = np.sqrt(np.mean(rm * rm))
        fit = fit_alpha(rm / std)
        records.append({
            "center": int(center),
            "center_date": str(grp["center_date"].iloc[0]),
            "alpha": fit.alpha,
            "ci": list(fit.ci),
            "p": fit.gof_pvalue,
            "censored": fit.censored,
        })
        if args.hist_out:
            _write_hist(rm / std, fit.alpha, center, Path(args.hist_out),
                        tail_scale=args.tail_scale, tail_cut=args.tail_cut)
    print(json.dumps(records, indent=1))
    return 0


def _write_hist(samples, alpha, center, outdir: Path, bins=60, tail_scale=1.0, tail_cut=1.5):
    """Histogram plus fitted density columns; the tail display factor
    multiplies both beyond |r| = tail_cut (a plotting convention, off by
    default with tail_scale=1)."""
    outdir.mkdir(parents=True, exist_ok=True)
    abs_r = np.abs(samples)
    edges = np.linspace(0.0, float(abs_r.max()), bins + 1)
    counts, _ = np.histogram(abs_r, bins=edges, density=True)
    mids = 0.5 * (edges[:-1] + edges[1:])
    dens = 2.0 * pf_density(mids, alpha, 1.0)       # folded density of |r|
    scale = np.where(mids > tail_cut, tail_scale, 1.0)
    with open(outdir / f"hist_{center}.csv", "w") as fh:
        fh.write("abs_r,empirical,fitted\n")
        for x, e, f in zip(mids, counts * scale, dens * scale):
            fh.write(f"{_fmt(x)},{_fmt(e)},{_fmt(f)}\n")


def cmd_mc_errors(args) -> int:
    cfg = SvmConfig.from_spec(
        n=args.n,
        theta=args.theta,
        gamma1_spec=GammaSpec(args.gamma1_dist, args.gamma1_mean) if args.gamma1_dist != "constant"
        else GammaSpec("constant"),
        seed=args.seed,
    )
    report = beta_error_bands(cfg, args.t, replicas=args.replicas, seed=args.seed,
                              match_by="rank" if args.match_by_rank else "index")
    print(json.dumps(report.to_dict(), indent=1))
    return 0


def cmd_mc_calibrate(args) -> int:
    bulk = np.loadtxt(args.bulk_file, ndmin=1)
    template = SvmConfig.from_spec(
        n=args.n,
        theta=args.theta,
        gamma1_spec=GammaSpec(args.family, 0.8) if args.family != "constant" else GammaSpec("constant"),
        seed=args.seed,
    )
    gamma0, p = calibrate_gamma0(bulk, template, t=args.t, seed=args.seed, replicas=args.replicas)
    print(json.dumps({"gamma0": gamma0, "p": p}))
    return 0


def cmd_ising_sim(args) -> int:
    cfg = IsingConfig(
        a=args.a, s=args.s, g=args.g, steps=args.steps, seed=args.seed,
        field_schedule=parse_field_schedule(args.field) if args.field else (),
        init=args.init,
    )
    traj = simulate(cfg)
    sys.stdout.write("step,m,R_plus,R_minus\n")
    for t in range(len(traj.m)):
        sys.stdout.write(f"{t},{_fmt(traj.m[t])},{_fmt(traj.r_plus[t])},{_fmt(traj.r_minus[t])}\n")
    return 0


def cmd_ising_phase(args) -> int:
    scan = phase_scan(args.s, g_bounds=(args.g_min, args.g_max) if args.g_min else None)
    print(json.dumps({
        "S": scan.s, "g1": scan.g1, "gc": scan.gc, "g2": scan.g2,
        "R_gc": scan.r_at_gc, "order": scan.order,
    }))
    return 0


def cmd_ising_free(args) -> int:
    curve = free_energy_curve(args.s, args.g)
    sys.stdout.write("omega,neg_lnz_per_g\n")
    for omega, val in curve:
        sys.stdout.write(f"{_fmt(omega)},{_fmt(val)}\n")
    return 0


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    manifest = run_pipeline(cfg)
    print(json.dumps({"config_hash": manifest["config_hash"], "output_dir": cfg.output_dir}))
    return 0


def cmd_validate(args) -> int:
    cfg = load_config(args.config)
    problems = validate_config(cfg)
    for p in problems:
        print(p)
    return 1 if problems else 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="marketphase",
        description="Rolling-window market betas, sector risk, tail fits, and the agent model.",
    )
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="load CSV panels, compute normalized returns")
    p.add_argument("--price", required=True, help="price CSV (date,ticker,close)")
    p.add_argument("--volume", help="volume CSV (date,ticker,volume)")
    p.add_argument("--sector", help="sector CSV (ticker,sector)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("spectrum", help="per-window eigen-summary and market returns")
    p.add_argument("--panel-dir", required=True, help="directory written by ingest")
    p.add_argument("--t", type=int, required=True, help="window length (trading days)")
    p.add_argument("--step", type=int, default=250, help="spacing of window centers")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("betas", help="long-format beta table (date,ticker,beta)")
    p.add_argument("--panel-dir", required=True)
    p.add_argument("--t", type=int, required=True)
    p.add_argument("--step", type=int, default=250)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_betas)

    p = sub.add_parser("min-window", help="smallest window with all-positive betas")
    p.add_argument("--panel-dir", required=True)
    p.add_argument("--candidates", required=True, help="comma-separated window lengths")
    p.add_argument("--step", type=int, default=250)
    p.set_defaults(func=cmd_min_window)

    p = sub.add_parser("risk", help="sector risk measure from spectra and volumes")
    p.add_argument("--panel-dir", required=True)
    p.add_argument("--spectra-dir", required=True)
    p.add_argument("--merge", help="sector merge CSV (from_sector,to_sector)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_risk)

    p = sub.add_parser("tailfit", help="tail-index fit per window of market returns")
    p.add_argument("--window-file", required=True, help="market_returns.csv from spectrum")
    p.add_argument("--hist-out", help="directory for histogram+fit CSVs")
    p.add_argument("--tail-scale", type=float, default=1.0,
                   help="display factor applied beyond --tail-cut (plotting convention)")
    p.add_argument("--tail-cut", type=float, default=1.5)
    p.set_defaults(func=cmd_tailfit)

    p = sub.add_parser("mc-errors", help="Monte Carlo beta error bands")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--t", type=int, required=True)
    p.add_argument("--theta", type=float, default=0.26)
    p.add_argument("--gamma1-dist", default="lognormal",
                   choices=["lognormal", "normal", "laplace", "constant"])
    p.add_argument("--gamma1-mean", type=float, default=0.865)
    p.add_argument("--replicas", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--match-by-rank", action="store_true",
                   help="band sorted betas per replica instead of stock identities")
    p.set_defaults(func=cmd_mc_errors)

    p = sub.add_parser("mc-calibrate", help="fit gamma1 location by spectrum matching")
    p.add_argument("--bulk-file", required=True, help="text file of bulk eigenvalues")
    p.add_argument("--family", required=True, choices=["lognormal", "normal", "laplace", "constant"])
    p.add_argument("--n", type=int, default=356)
    p.add_argument("--t", type=int, default=750)
    p.add_argument("--theta", type=float, default=0.26)
    p.add_argument("--replicas", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_mc_calibrate)

    p = sub.add_parser("ising-sim", help="simulate the diluted Ising agent model")
    p.add_argument("--a", type=int, required=True)
    p.add_argument("--s", type=int, required=True)
    p.add_argument("--g", type=float, required=True)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--field", default="", help="pulses t0:t1:h, comma separated")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--init", default="all_plus", choices=["all_plus", "all_minus", "uniform"])
    p.set_defaults(func=cmd_ising_sim)

    p = sub.add_parser("ising-phase", help="critical couplings g1, gc, g2 and R(gc)")
    p.add_argument("--s", type=int, required=True)
    p.add_argument("--g-min", type=float)
    p.add_argument("--g-max", type=float)
    p.set_defaults(func=cmd_ising_phase)

    p = sub.add_parser("ising-free", help="free energy curve -lnZ/(gA) vs omega")
    p.add_argument("--s", type=int, required=True)
    p.add_argument("--g", type=float, required=True)
    p.set_defaults(func=cmd_ising_free)

    p = sub.add_parser("run", help="full pipeline from an INI config")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("validate", help="check a config without running")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_validate)

    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, PanelError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (PipelineError, ConvergenceError, RuntimeError) as exc:
        print(f"compute error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
