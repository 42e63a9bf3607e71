"""Command-line interface: simulate, preprocess, fit, detect, report, oracle-check.

Settings resolve as flags > ``--config`` JSON file > built-in defaults.  A
config file may hold flat keys (applied to every subcommand that has the
option) and per-subcommand sections such as ``{"detect": {"tau": 50}}``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click
import numpy as np

from . import detector, ingest
from . import io as cio
from . import mixture, oracle_checks, report, synthetic
from .errors import DataError, EmptyDataset, NumericalError
from .sampler import FpoPriors

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3

logger = logging.getLogger("circadian_cpd")


def _load_config(ctx: click.Context, _param, value):
    if not value:
        return value
    try:
        raw = json.loads(Path(value).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise click.BadParameter(f"cannot read config {value}: {exc}") from exc
    if not isinstance(raw, dict):
        raise click.BadParameter("config file must hold a JSON object")
    names = {p.name for p in ctx.command.params}
    flat = {k.replace("-", "_"): v for k, v in raw.items() if not isinstance(v, dict)}
    section = {k.replace("-", "_"): v for k, v in raw.get(ctx.info_name, {}).items()}
    merged = {k: v for k, v in {**flat, **section}.items() if k in names}
    ctx.default_map = {**(ctx.default_map or {}), **merged}
    ctx.meta["config_raw"] = raw
    return value


config_option = click.option(
    "--config", type=click.Path(exists=True, dir_okay=False), is_eager=True, expose_value=False,
    callback=_load_config, help="JSON file with option defaults.",
)
seed_option = click.option("--seed", type=int, default=0, show_default=True, help="Random seed.")


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def cli(verbose):
    """Hierarchical change-point detection on daily latent-class sequences."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(message)s")


@cli.command()
@config_option
@seed_option
@click.option("--K", "n_classes", type=click.IntRange(min=1), default=5, show_default=True, help="Latent classes.")
@click.option("--C", "order", type=click.IntRange(min=0), default=2, show_default=True,
              help="Fourier order of the generating kernels.")
@click.option("--n-steps", type=click.IntRange(min=2), default=500, show_default=True, help="Sequence length T.")
@click.option("--dim", type=click.IntRange(min=1), default=24, show_default=True, help="Samples per period D.")
@click.option("--cps", default="100,200,300,400", show_default=True, help="Comma-separated change points.")
@click.option("--alpha", type=click.FloatRange(min=0, min_open=True), default=25.0, show_default=True,
              help="Dirichlet concentration for segment class probabilities.")
@click.option("--missing-rate", type=click.FloatRange(0.0, 1.0, max_open=True), default=0.0, show_default=True,
              help="Fraction of days masked completely at random.")
@click.option("--scenario", type=click.Choice(["mixture", "probabilities"]), default="mixture", show_default=True,
              help="'probabilities' writes class-probability vectors (K=3, T=100 style) instead of days.")
@click.option("--output", type=click.Path(file_okay=False), required=True, help="Output directory.")
def simulate(seed, n_classes, order, n_steps, dim, cps, alpha, missing_rate, scenario, output):
    """Generate a synthetic sequence with planted change points."""
    try:
        cps = tuple(int(c) for c in cps.split(",") if c.strip())
    except ValueError as exc:
        raise click.BadParameter(f"--cps: {exc}") from exc
    out = Path(output)
    if scenario == "probabilities":
        if cps == (100, 200, 300, 400) and n_steps == 500:
            cps, n_steps = synthetic.SMALL_CPS, 100
        z_tilde, truth = synthetic.simulate_probability_vectors(seed, n_steps, cps)
        mask = synthetic.mask_mcar(np.random.default_rng([seed, 1]), n_steps, missing_rate)
        cio.write_probabilities(out / "probabilities.csv", z_tilde, mask)
        cio.write_labels(out / "labels.txt", synthetic.mask_labels(truth.labels, mask))
        cio.write_truth(out / "truth.json", truth.labels, truth.cps, mask, {"seed": seed, "scenario": scenario})
    else:
        sim = synthetic.simulate(seed, n_steps, n_classes, dim, order, cps, alpha, missing_rate)
        cio.write_dataset(out / "dataset.csv", sim.data)
        cio.write_labels(out / "labels.txt", synthetic.mask_labels(sim.truth.labels, sim.mask))
        cio.write_checkpoint(out / "generator.json", sim.params, {"seed": seed})
        cio.write_truth(out / "truth.json", sim.truth.labels, sim.truth.cps, sim.mask,
                        {"seed": seed, "scenario": scenario, "alpha": alpha})
    click.echo(f"wrote simulation to {out}")


@cli.command()
@config_option
@click.option("--input", "input_path", type=click.Path(exists=True, dir_okay=False), required=True,
              help="Trace file with timestamp,lat,lon lines.")
@click.option("--output", type=click.Path(dir_okay=False), required=True, help="Dataset CSV to write.")
@click.option("--timezone", default="UTC", show_default=True, help="IANA zone for local days.")
@click.option("--gap-limit-minutes", type=float, default=30.0, show_default=True, help="Longest gap in an hour.")
@click.option("--home-radius-m", type=float, default=50.0, show_default=True, help="At-home radius in metres.")
@click.option("--night-start-hour", type=int, default=0, show_default=True, help="Night window start (local).")
@click.option("--night-end-hour", type=int, default=6, show_default=True, help="Night window end (local).")
def preprocess(input_path, output, timezone, gap_limit_minutes, home_radius_m, night_start_hour, night_end_hour):
    """Aggregate raw location traces into daily observations."""
    try:
        cfg = ingest.IngestConfig(timezone, gap_limit_minutes, home_radius_m, night_start_hour, night_end_hour)
    except Exception as exc:
        raise click.BadParameter(str(exc)) from exc
    traces, summary = ingest.load_traces(input_path, cfg.tz)
    if summary.n_skipped:
        click.echo(f"skipped {summary.n_skipped} malformed lines", err=True)
    dataset = ingest.build_dataset(traces, cfg)
    cio.write_dataset(output, dataset.batch, dataset.dates)
    home = dataset.home
    click.echo(f"{len(dataset.dates)} days; home at ({home.latitude:.6f}, {home.longitude:.6f}) "
               f"from {home.support_count} fixes")


@cli.command()
@config_option
@seed_option
@click.option("--input", "input_path", type=click.Path(exists=True, dir_okay=False), required=True,
              help="Dataset CSV.")
@click.option("--output", type=click.Path(file_okay=False), required=True, help="Output directory.")
@click.option("--K", "n_classes", type=click.IntRange(min=1), default=5, show_default=True, help="Latent classes.")
@click.option("--C", "order", type=click.IntRange(min=0), default=3, show_default=True, help="Fourier order.")
@click.option("--n-init", type=click.IntRange(min=1), default=5, show_default=True, help="EM restarts.")
@click.option("--epsilon-q", type=click.FloatRange(min=0), default=250.0, show_default=True,
              help="Stop when the objective changes by less than this.")
@click.option("--max-iter", type=click.IntRange(min=1), default=200, show_default=True, help="EM iteration cap.")
@click.option("--n-jobs", type=click.IntRange(min=1), default=1, show_default=True, help="Parallel restarts.")
def fit(seed, input_path, output, n_classes, order, n_init, epsilon_q, max_iter, n_jobs):
    """Fit the circadian mixture; write checkpoint, posterior and MAP labels."""
    batch, _ = cio.read_dataset(input_path)
    cfg = mixture.FitConfig(n_init=n_init, max_em_iters=max_iter, eps_q=epsilon_q, seed=seed, order=order,
                            n_jobs=n_jobs)
    try:
        result = mixture.fit(batch, n_classes, cfg)
    except ValueError as exc:
        raise EmptyDataset(str(exc)) from exc
    out = Path(output)
    meta = {"seed": seed, "final_q": result.final_q, "n_iter": result.n_iter, "converged": result.converged,
            "best_init": result.best_init, "q_trace": result.q_trace.tolist()}
    cio.write_checkpoint(out / "checkpoint.json", result.params, meta)
    cio.write_probabilities(out / "posterior.csv", result.posterior.probs, result.posterior.fully_missing)
    cio.write_labels(out / "labels.txt", result.posterior.map_labels())
    click.echo(f"final objective {result.q_trace[-1]:.6f} after {result.n_iter} iterations")


@cli.command()
@config_option
@seed_option
@click.option("--mode", type=click.Choice(["peo", "fpo"]), default="peo", show_default=True,
              help="peo reads a label file, fpo a probability file.")
@click.option("--input", "input_path", type=click.Path(exists=True, dir_okay=False), required=True,
              help="Label file (peo) or probability matrix (fpo).")
@click.option("--output", type=click.Path(dir_okay=False), required=True, help="Report JSON to write.")
@click.option("--posterior-output", type=click.Path(dir_okay=False), default=None,
              help="Optional dense run-length posterior CSV.")
@click.option("--tau", type=click.FloatRange(min=1, min_open=True), default=100.0, show_default=True,
              help="Hazard timescale.")
@click.option("--K", "n_classes", type=click.IntRange(min=1), default=None, help="Classes (default: inferred).")
@click.option("--samples", type=click.IntRange(min=1), default=500, show_default=True, help="FPO samples S.")
@click.option("--burn-in", type=click.IntRange(min=0), default=200, show_default=True, help="FPO burn-in.")
@click.option("--kappa", type=click.FloatRange(min=0, min_open=True), default=1.0, show_default=True,
              help="Gamma prior shape for eta (fpo).")
@click.option("--nu", type=click.FloatRange(min=0, min_open=True), default=1.0, show_default=True,
              help="Gamma prior rate for eta (fpo).")
@click.option("--n-jobs", type=click.IntRange(min=1), default=1, show_default=True, help="FPO worker threads.")
def detect(seed, mode, input_path, output, posterior_output, tau, n_classes, samples, burn_in, kappa, nu, n_jobs):
    """Run the change-point detector and write a report."""
    cfg = detector.HazardConfig(tau)
    if mode == "peo":
        labels = cio.read_labels(input_path)
        if n_classes is None and np.all(labels < 0):
            raise EmptyDataset("every label is missing")
        rep = detector.peo_detect([None if z < 0 else int(z) for z in labels], cfg=cfg, n_classes=n_classes)
    else:
        probs = cio.read_probabilities(input_path)
        if n_classes is not None and probs.shape[1] != n_classes:
            raise click.BadParameter(f"--K={n_classes} but the file has {probs.shape[1]} columns")
        rep = detector.fpo_detect(probs, FpoPriors(kappa, nu), cfg, samples, seed, burn_in, n_jobs=n_jobs)
    cio.write_report(output, rep, posterior_output, {"mode": mode, "tau": tau, "seed": seed, "samples": samples})
    for t, cp in rep.detected_cps:
        click.echo(f"change detected at t={t}, estimated change after t={cp}")
    if not rep.detected_cps:
        click.echo("no change points detected")


@cli.command("oracle-check")
@config_option
@click.option("--quick", is_flag=True, help="Smaller Monte Carlo and instance budgets.")
def oracle_check(quick):
    """Run the small-instance oracle suite; exit 0 iff every check passes."""
    results = oracle_checks.run_checks(quick=quick)
    click.echo(oracle_checks.format_table(results))
    if not all(r.passed for r in results):
        raise NumericalError("oracle checks failed")


@cli.command("report")
@config_option
@click.option("--input", "input_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Report JSON from detect.")
@click.option("--truth", type=click.Path(exists=True, dir_okay=False), default=None, help="Truth JSON.")
@click.option("--checkpoint", type=click.Path(exists=True, dir_okay=False), default=None, help="Fitted model.")
@click.option("--labels", type=click.Path(exists=True, dir_okay=False), default=None, help="MAP label file.")
@click.option("--output", type=click.Path(file_okay=False), required=True, help="Output directory.")
def report_cmd(input_path, truth, checkpoint, labels, output):
    """Write plot-ready CSV series."""
    if not any([input_path, checkpoint, labels]):
        raise click.UsageError("give at least one of --input, --checkpoint, --labels")
    rep = cio.read_report(input_path) if input_path else None
    params = cio.read_checkpoint(checkpoint)[0] if checkpoint else None
    map_labels = cio.read_labels(labels) if labels else None
    truth_doc = cio.read_truth(truth) if truth else None
    for path in report.write_all(output, rep, params, map_labels, truth_doc):
        click.echo(str(path))


def defaults_reference() -> str:
    """Markdown table of every subcommand option and its default."""
    lines = ["# Command-line defaults", "", "Generated from the command definitions; regenerate with",
             "`python -m circadian_cpd.cli --write-defaults docs/cli_defaults.md`.", ""]
    for name in sorted(cli.commands):
        cmd = cli.commands[name]
        lines += [f"## {name}", "", "| option | default | help |", "|---|---|---|"]
        for p in cmd.params:
            if not isinstance(p, click.Option) or p.name == "config" or not p.expose_value:
                continue
            if p.required:
                default = "(required)"
            elif p.is_flag:
                default = "off"
            elif p.default is None or "UNSET" in repr(p.default):
                default = ""
            else:
                default = p.default
            lines.append(f"| `{p.opts[-1] if p.opts[-1].startswith('--') else p.opts[0]}` | {default} | "
                         f"{p.help or ''} |")
        lines.append("")
    return "\n".join(lines)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    if argv[:1] == ["--write-defaults"] and len(argv) == 2:
        cio.atomic_write_text(argv[1], defaults_reference())
        return EXIT_OK
    try:
        rv = cli.main(args=argv, prog_name="circadian-cpd", standalone_mode=False)
        return rv if isinstance(rv, int) else EXIT_OK
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return EXIT_USAGE
    except click.ClickException as exc:
        exc.show()
        return EXIT_USAGE
    except (DataError, FileNotFoundError, ValueError) as exc:
        click.echo(f"data error: {exc}", err=True)
        return EXIT_DATA
    except NumericalError as exc:
        click.echo(f"numerical failure: {exc}", err=True)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
