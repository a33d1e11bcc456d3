# -*- coding: utf-8 -*-

"""Console script for momentpic."""
import csv
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import List, Optional

import click

from momentpic.admin import RunAdmin
from momentpic.analysis import analyze_series, group_records, metric_names, metrics_rows
from momentpic.checkpoint import load_checkpoint, read_checkpoint_data, save_checkpoint
from momentpic.compress import compress_particles, read_archive, write_archive
from momentpic.config import describe, load_config_file
from momentpic.core import CompressParams, RangeMode
from momentpic.exceptions import MomentPICException
from momentpic.persistence import RunRecords, get_db_sessionmaker, write_diagnostics_csv
from momentpic.pipeline import SimulationPipeline
from momentpic.scenarios import initialize

logger = logging.getLogger(__name__)

EXIT_SUCCESS = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2


def checkpoint_name(cycle: int) -> str:
    return f"checkpoint_{cycle:06d}.ipkc"


def archive_name(cycle: int) -> str:
    return f"archive_{cycle:06d}.gmma"


@click.group()
@click.option("--verbose", "-v", is_flag=True, help="Log debug messages")
def cli(verbose):
    """Moment-implicit particle-in-cell runs and their velocity distributions"""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


@cli.command()
@click.argument("config", type=click.Path(exists=True, dir_okay=False))
@click.option("--cycles", type=click.IntRange(min=0), default=None,
              help="Cycles to run. Defaults to [time] cycles of the config")
@click.option("--checkpoint-every", type=click.IntRange(min=0), default=0,
              help="Write a checkpoint every N cycles. 0 writes only the last")
@click.option("--compress-every", type=click.IntRange(min=0), default=None,
              help="Override [compress] every of the config")
@click.option("--out", type=click.Path(file_okay=False), default="out",
              help="Output folder")
@click.option("--resume", type=click.Path(exists=True, dir_okay=False),
              default=None, help="Continue from this checkpoint")
def run(config, cycles, checkpoint_every, compress_every, out, resume):
    """Run a simulation described by CONFIG"""
    sim_config = load_config_file(config)
    if compress_every is not None:
        sim_config = replace(
            sim_config,
            compress_params=replace(sim_config.compress_params, every=compress_every),
        ).validate()
    if cycles is None:
        cycles = sim_config.n_cycles
    logger.info(f"Config {config}: {describe(sim_config)}")

    initial = initialize(sim_config)
    state = load_checkpoint(resume, sim_config) if resume else initial
    pipeline = SimulationPipeline.from_state(initial)

    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    records = RunRecords(get_db_sessionmaker(f"sqlite:///{out / 'records.sqlite'}"))
    run_name = Path(config).stem
    with records.get_session() as session:
        removed = session.delete_after(run_name, state.cycle)
    if removed:
        logger.info(f"Removed {removed} stale diagnostics rows of '{run_name}'")

    def on_cycle(state, context):
        row = state.diagnostics[-1]
        with records.get_session() as session:
            session.add_diagnostics(run_name, row)
            session.add_control_reports(run_name, row.cycle, context.control_reports)
        if context.archive_records:
            with open(out / archive_name(state.cycle), "wb") as f:
                write_archive(context.archive_records, f)
        if checkpoint_every and state.cycle % checkpoint_every == 0:
            save_checkpoint(state, out / checkpoint_name(state.cycle))

    pipeline.run(state, cycles, callback=on_cycle)

    final = out / checkpoint_name(state.cycle)
    if not final.exists():
        save_checkpoint(state, final)
    rows = records.diagnostics_rows(run_name)
    if rows:
        write_diagnostics_csv(rows, out / "diagnostics.csv")
    click.echo(RunAdmin(pipeline, records).status(state))


@cli.command()
@click.argument("checkpoint", type=click.Path(exists=True, dir_okay=False))
@click.option("--bins", type=click.IntRange(min=2), default=32, show_default=True)
@click.option("--components", type=click.IntRange(min=1), default=8,
              show_default=True)
@click.option("--out", "archive", type=click.Path(dir_okay=False), required=True,
              help="Archive file to write")
@click.option("--v-max", type=float, default=None,
              help="Fixed histogram range [-v_max, v_max]. Defaults to the data range")
@click.option("--seed", type=int, default=0, show_default=True)
def compress(checkpoint, bins, components, archive, v_max, seed):
    """Fit a mixture to the velocities of every species in CHECKPOINT.
    Each species is one region
    """
    params = CompressParams(
        every=0,
        bins=bins,
        components=components,
        range_mode=RangeMode.DATA if v_max is None else RangeMode.FIXED,
        v_max=1.0 if v_max is None else v_max,
        seed=seed,
    )
    params.validate()
    with open(checkpoint, "rb") as f:
        data = read_checkpoint_data(f)
    records = []
    for s, particles in enumerate(data.species):
        record = compress_particles(particles, params, s, 0, data.header.cycle)
        if record is not None:
            records.append(record)
            click.echo(
                f"species {s}: {len(particles)} particles, "
                f"{record.mixture.n_components} components"
            )
    with open(archive, "wb") as f:
        write_archive(records, f)
    click.echo(f"Wrote {len(records)} records to {archive}")


@cli.command()
@click.argument("archives", nargs=-1, required=True,
                type=click.Path(exists=True, dir_okay=False))
@click.option("--penalty", type=float, default=None,
              help="Cost per change point. Defaults to 3 sigma^2 ln n per series")
@click.option("--bins", type=click.IntRange(min=2), default=32, show_default=True)
@click.option("--out", type=click.Path(file_okay=False), default="analysis",
              show_default=True)
def analyze(archives, penalty, bins, out):
    """Distribution metrics and change points of the records in ARCHIVES"""
    records = []
    for path in archives:
        with open(path, "rb") as f:
            records.extend(read_archive(f))
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)

    metric_rows = []
    change_rows = []
    for (species, region), group in group_records(records).items():
        series = analyze_series(group, bins=bins, penalty=penalty)
        metric_rows.extend(metrics_rows(series))
        for name, result in series.change_points.items():
            change_rows.append(
                {
                    "species": species,
                    "region": region,
                    "metric": name,
                    "indices": " ".join(str(i) for i in result.indices),
                    "cycles": " ".join(str(series.cycles[i]) for i in result.indices),
                    "penalty": repr(result.penalty),
                }
            )

    _write_csv(out / "metrics.csv", ["cycle", "species", "region"] + metric_names(),
               metric_rows)
    _write_csv(out / "changepoints.csv",
               ["species", "region", "metric", "indices", "cycles", "penalty"],
               change_rows)
    click.echo(
        f"Wrote {len(metric_rows)} metric rows and {len(change_rows)} change point "
        f"rows to {out}"
    )


@cli.command("checkpoint-dump")
@click.argument("file", type=click.Path(exists=True, dir_okay=False))
def checkpoint_dump(file):
    """Print the header of checkpoint FILE"""
    click.echo(RunAdmin.checkpoint_header(file))


def _write_csv(path: Path, columns: List[str], rows: List[dict]):
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=columns)
        writer.writeheader()
        writer.writerows(rows)


def cli_dispatch(argv: Optional[List[str]] = None) -> int:
    """Run the command line and map the outcome to an exit status

    Returns
    -------
    int
        0 on success, 1 for usage errors, 2 when the command itself failed
    """
    try:
        cli.main(args=argv, prog_name="momentpic", standalone_mode=False)
    except click.UsageError as e:
        e.show()
        return EXIT_USAGE
    except click.Abort:
        click.echo("Aborted", err=True)
        return EXIT_USAGE
    except click.ClickException as e:
        e.show()
        return EXIT_RUNTIME
    except (MomentPICException, OSError) as e:
        click.echo(f"Error: {e}", err=True)
        return EXIT_RUNTIME
    return EXIT_SUCCESS


def main():
    """Console script for momentpic."""
    sys.exit(cli_dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()  # pragma: no cover
