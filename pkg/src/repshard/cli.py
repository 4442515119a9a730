"""Operator entry points: run simulations, sweep parameters, analyze security.

Every run directory gets a manifest recording the config hash and package
version; all randomness flows from ``--seed``, so repeating a command
reproduces its outputs byte for byte.
"""

from __future__ import annotations

import json
import sys
from fractions import Fraction
from pathlib import Path

import click

import repshard
from repshard import security
from repshard.assignment import assign_epoch
from repshard.chain import SCORE_SCALE
from repshard.sim.config import ScenarioConfig, apply_overrides, config_from_dict, load_config
from repshard.sim.runner import run_scenario

EXIT_BAD_ARGS = 2
EXIT_CHECKER_FAILED = 3


@click.group()
def main():
    """Reputation-sharded ledger simulator and security analyzer."""


def _parse_overrides(pairs) -> dict[str, str]:
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise click.ClickException(f"override {pair!r} must look like field=value")
        key, value = pair.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _write_run(result, outdir: Path, config, trace: bool) -> None:
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "report.json").write_text(result.report.to_json())
    (outdir / "epochs.csv").write_text(result.report.epochs_csv())
    (outdir / "reputation.csv").write_text(result.report.reputation_csv())
    (outdir / "messages.csv").write_text(result.report.messages_csv())
    manifest = {
        "config_hash": config.config_hash(),
        "version": repshard.__version__,
        "qualifying": result.qualifying,
    }
    (outdir / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=1))
    sbdir = outdir / "sb"
    sbdir.mkdir(exist_ok=True)
    for (epoch, shard), sb in sorted(result.state_blocks.items()):
        (sbdir / f"epoch_{epoch:03d}_shard_{shard:02d}.bin").write_bytes(sb.to_bytes())
    if trace and result.trace is not None:
        with (outdir / "trace.ndjson").open("w") as fh:
            for rec in result.trace:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help="Scenario file (.json or .toml); defaults apply without it.")
@click.option("--seed", type=int, default=None, help="Master seed override.")
@click.option("--override", "overrides", multiple=True, metavar="FIELD=VALUE")
@click.option("--out", "outdir", type=click.Path(), default="run-out")
@click.option("--trace/--no-trace", default=False, help="Write trace.ndjson.")
@click.option("--sweep", default=None, metavar="FIELD=V1,V2,...",
              help="Run once per value; reports land in subdirectories.")
def simulate(config_path, seed, overrides, outdir, trace, sweep):
    """Run one scenario (or a sweep) and write reports under --out."""
    try:
        config = load_config(config_path) if config_path else ScenarioConfig()
        config = apply_overrides(config, _parse_overrides(overrides))
        if seed is not None:
            config = config.replace(seed=seed)
    except (ValueError, KeyError) as exc:
        click.echo(f"bad config: {exc}", err=True)
        sys.exit(EXIT_BAD_ARGS)

    outdir = Path(outdir)
    runs = []
    if sweep:
        field, _, values = sweep.partition("=")
        if not values:
            click.echo("bad sweep: expected FIELD=V1,V2,...", err=True)
            sys.exit(EXIT_BAD_ARGS)
        for value in values.split(","):
            try:
                cfg = apply_overrides(config, {field.strip(): value.strip()})
            except ValueError as exc:
                click.echo(f"bad sweep value: {exc}", err=True)
                sys.exit(EXIT_BAD_ARGS)
            runs.append((outdir / f"{field.strip()}={value.strip()}", cfg))
    else:
        runs.append((outdir, config))

    failed = False
    scaling_rows = []
    for rundir, cfg in runs:
        result = run_scenario(cfg, collect_trace=trace)
        _write_run(result, rundir, cfg, trace)
        report = result.report
        ok = result.ok
        failed = failed or not ok
        scaling_rows.append(
            (rundir.name, report.committed, report.total_ticks, report.throughput_tps)
        )
        click.echo(
            f"{rundir}: committed={report.committed} ticks={report.total_ticks} "
            f"tps={report.throughput_tps} rolls={report.rolling_events} "
            f"checks={'ok' if ok else 'FAILED'}"
        )
    if sweep:
        lines = ["run,committed,ticks,throughput_tps"]
        lines += [f"{r},{c},{t},{tp}" for r, c, t, tp in scaling_rows]
        outdir.mkdir(parents=True, exist_ok=True)
        (outdir / "scaling.csv").write_text("\n".join(lines) + "\n")
    sys.exit(EXIT_CHECKER_FAILED if failed else 0)


@main.command("analyze")
@click.option("--n", required=True, type=int, help="Total validators.")
@click.option("--k", required=True, type=int, help="Shard count (must divide n).")
@click.option("--g", required=True, type=int, help="Malicious validators.")
@click.option("--exposed", "-a", default=None, type=int,
              help="Exposed attackers, spread evenly before random placement.")
@click.option("--sweep", "sweep_spec", default=None, metavar="exposed=LO..HI",
              help="CSV sweep over the exposed count.")
@click.option("--brute-force", is_flag=True, help="Also enumerate and compare.")
@click.option("--paper-literal", is_flag=True,
              help="Use the published summation bound instead of the capacity-corrected one.")
def analyze(n, k, g, exposed, sweep_spec, brute_force, paper_literal):
    """Exact epoch-failure probability (random or exposed-attacker model)."""
    try:
        if sweep_spec:
            field, _, rng = sweep_spec.partition("=")
            if field.strip() != "exposed":
                raise ValueError("only exposed=LO..HI sweeps are supported")
            lo, _, hi = rng.partition("..")
            click.echo("exposed,failure_probability")
            for a in range(int(lo), int(hi) + 1):
                p = security.camouflage_failure_probability(
                    n, k, g, a, literal_bound=paper_literal
                )
                click.echo(f"{a},{security.render_decimal(p)}")
            return
        if exposed is None:
            p = security.failure_probability(n, k, g)
        else:
            p = security.camouflage_failure_probability(
                n, k, g, exposed, literal_bound=paper_literal
            )
        click.echo(f"P(failure) = {security.render_decimal(p)}")
        click.echo(f"exact      = {p.numerator}/{p.denominator}")
        if brute_force:
            bf = security.brute_force_failure(n, k, g, exposed or 0)
            marker = "MATCH" if bf == p else "MISMATCH"
            click.echo(f"brute      = {security.render_decimal(bf)}  [{marker}]")
            if bf != p:
                sys.exit(1)
    except security.InstanceTooLarge as exc:
        click.echo(f"instance too large: {exc}", err=True)
        sys.exit(EXIT_BAD_ARGS)
    except ValueError as exc:
        click.echo(f"infeasible parameters: {exc}", err=True)
        sys.exit(EXIT_BAD_ARGS)


main.add_command(analyze, name="analyze-security")


@main.command()
@click.argument("rundir", type=click.Path())
def report(rundir):
    """Render summary tables for a completed run directory."""
    rundir = Path(rundir)
    missing = [
        name
        for name in ("report.json", "epochs.csv", "reputation.csv", "manifest.json")
        if not (rundir / name).exists()
    ]
    if missing:
        click.echo(f"missing artifacts in {rundir}: {', '.join(missing)}", err=True)
        sys.exit(EXIT_BAD_ARGS)
    data = json.loads((rundir / "report.json").read_text())
    click.echo(f"run {rundir}  (config hash "
               f"{json.loads((rundir / 'manifest.json').read_text())['config_hash'][:12]})")
    click.echo(
        f"committed {data['committed']} txs in {data['total_ticks']} ticks "
        f"-> {data['throughput_tps']} tx/s; mean latency {data['mean_latency_ticks']} ticks"
    )
    click.echo(f"{'epoch':>5} {'ticks':>6} {'committed':>9} {'tps':>10} {'rolls':>5} {'transition':>10}")
    for row in data["per_epoch"]:
        click.echo(
            f"{row['epoch']:>5} {row['ticks']:>6} {row['committed']:>9} "
            f"{row['throughput_tps']:>10} {row['rolls']:>5} {str(row['transition_ticks']):>10}"
        )
    caps = data["capabilities"]
    reps = data["reputation"]
    if any(c != caps[0] for c in caps):
        click.echo("\ncapability vs final cumulative reputation:")
        click.echo(f"{'validator':>9} {'capability':>10} {'reputation':>12}")
        for vid in sorted(reps, key=int):
            final = reps[vid][-1] if reps[vid] else 0
            click.echo(f"{vid:>9} {caps[int(vid)]:>10.3f} {final / SCORE_SCALE:>12.3f}")
    if data["rolling_events"]:
        click.echo(f"\nrolling events: {data['rolling_events']}")
        for row in data["per_epoch"]:
            click.echo(f"  epoch {row['epoch']}: {row['rolls']}")
    sys.exit(0)


@main.command()
@click.option("--seed", default="00" * 32, help="Epoch seed, hex (32 bytes).")
@click.option("--scores", required=True,
              help="Comma-separated cumulative scores, validator id = position.")
@click.option("--k", required=True, type=int)
def assign(seed, scores, k):
    """Debug: print the sharding and leader selection for a seed and scores."""
    try:
        seed_bytes = bytes.fromhex(seed)
        score_map = {
            i: int(float(s) * SCORE_SCALE) for i, s in enumerate(scores.split(","))
        }
        result = assign_epoch(seed_bytes, score_map, k)
    except ValueError as exc:
        click.echo(f"bad arguments: {exc}", err=True)
        sys.exit(EXIT_BAD_ARGS)
    click.echo(
        json.dumps(
            {
                "seed": result.seed.hex(),
                "shards": [list(s) for s in result.shards],
                "leaders": list(result.leaders),
            },
            indent=1,
        )
    )


if __name__ == "__main__":
    main()
