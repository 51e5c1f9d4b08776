#!/usr/bin/env python3
"""
Wide-area PMU monitoring simulator CLI
Experiments on virtualized PMUs, concentrators and cloud applications
"""

from pathlib import Path

import click
from rich.console import Console
from rich.table import Table

from config.settings import GRID_SETTINGS, NETSIM_SETTINGS, SE_SETTINGS
from src.models.grid import dump_grid_csv, load_cdf
from src.models.pmu import load_scenario
from src.services.broker import TopicFilter, TopicName, topic_matches
from src.services.estimator import estimate_report
from src.services.experiments import bandwidth_table, run_latency_campaign, run_se_campaign
from src.services.netsim import load_link_config
from src.utils.errors import ConfigError, TopicError, UnobservableError
from src.utils.log import configure_logging
from src.utils.reports import (write_bandwidth_csv, write_cdf_csv, write_estimate_csv,
                               write_latency_csv, write_timing_csv)

console = Console()

ROOT = Path(__file__).resolve().parents[2]
DATA = ROOT / 'src' / 'data'
DEFAULT_GRID = DATA / 'ieee14cdf.txt'
DEFAULT_SCENARIO = DATA / 'ieee14_scenario.csv'
DEFAULT_LINKS = ROOT / 'config' / 'links.json'

existing = click.Path(exists=True, dir_okay=False, path_type=Path)


def parse_placement(text: str):
    try:
        nodes = [int(n) for n in text.split(',') if n.strip()]
    except ValueError:
        raise click.BadParameter(f"placement must be comma-separated bus ids, got {text!r}")
    if not nodes:
        raise click.BadParameter("placement cannot be empty")
    return nodes


def _load_inputs(grid_path, scenario_path, links_path):
    try:
        return load_cdf(grid_path), load_scenario(scenario_path), load_link_config(links_path)
    except ValueError as e:
        raise click.UsageError(str(e))


@click.group()
@click.option('-v', '--verbose', is_flag=True, help="Debug logging")
@click.pass_context
def cli(ctx, verbose):
    """Virtualized PMU wide-area monitoring simulator"""
    ctx.ensure_object(dict)
    configure_logging(verbose)
    ctx.obj['verbose'] = verbose


@cli.command()
@click.option('--config', 'configs', type=click.Choice(['A', 'B', 'all']), default='all')
@click.option('--format', 'formats', type=click.Choice(['fixed', 'float', 'all']), default='all')
@click.option('--overhead', type=click.IntRange(min=0), default=NETSIM_SETTINGS['http_overhead_bytes'],
              help="Per-message overhead in bytes")
@click.option('--rate', type=click.IntRange(min=1), default=NETSIM_SETTINGS['rate'])
@click.option('--out', type=click.Path(file_okay=False, path_type=Path))
def bandwidth(configs, formats, overhead, rate, out):
    """Node uplink bandwidth, local vs remote CVO"""
    rows = bandwidth_table(
        overhead=overhead, rate=rate,
        configs=('A', 'B') if configs == 'all' else (configs,),
        formats=('fixed', 'float') if formats == 'all' else (formats,))

    table = Table(title=f"Node bandwidth ({rate} fps, {overhead} B overhead)")
    table.add_column("Config", style="cyan")
    table.add_column("Format", style="magenta")
    table.add_column("Placement")
    table.add_column("Frame B", justify="right")
    table.add_column("bps", justify="right", style="green")
    table.add_column("Saving %", justify="right", style="yellow")
    for row in rows:
        table.add_row(row['config'], row['format'], row['placement'], str(row['frame_bytes']),
                      str(row['bps']), f"{row['saving_pct']:.1f}")
    console.print(table)

    if out:
        path = write_bandwidth_csv(rows, out / 'bandwidth.csv')
        console.print(f"Wrote {path}")


@cli.command()
@click.option('--grid', 'grid_path', type=existing, default=DEFAULT_GRID)
@click.option('--scenario', 'scenario_path', type=existing, default=DEFAULT_SCENARIO)
@click.option('--links', 'links_path', type=existing, default=DEFAULT_LINKS)
@click.option('--mode', type=click.Choice(['local', 'remote']), default='local')
@click.option('--config', type=click.Choice(['A', 'B']), default='A')
@click.option('--format', 'fmt', type=click.Choice(['fixed', 'float']), default='float')
@click.option('--node', type=int, default=2, help="Node whose PMUs are concentrated")
@click.option('--trials', type=click.IntRange(min=1), default=2500)
@click.option('--seed', type=int, default=0)
@click.option('--rate', type=click.Choice(['10', '25', '50']), default=None)
@click.option('--out', type=click.Path(file_okay=False, path_type=Path))
def latency(grid_path, scenario_path, links_path, mode, config, fmt, node, trials, seed, rate, out):
    """End-to-end latency campaign through the pipeline"""
    grid, scenario, links = _load_inputs(grid_path, scenario_path, links_path)
    try:
        report = run_latency_campaign(grid, scenario, links, mode=mode, node=node, config=config,
                                      fmt=fmt, trials=trials, seed=seed,
                                      rate=int(rate) if rate else None)
    except ConfigError as e:
        raise click.UsageError(str(e))
    except ValueError as e:
        raise click.ClickException(str(e))

    cdf = report.cdf
    console.print(f"\n[bold]Latency, {mode} CVO, node {node}[/bold] ({len(cdf)} records, "
                  f"{report.partial} partial sets)")
    table = Table()
    table.add_column("Min ms", justify="right")
    table.add_column("Mean ms", justify="right")
    table.add_column("Max ms", justify="right")
    for ms in report.dependability:
        table.add_column(f"<= {ms} ms", justify="right", style="green")
    table.add_row(f"{cdf.min * 1000:.1f}", f"{cdf.mean * 1000:.1f}", f"{cdf.max * 1000:.1f}",
                  *(f"{pct:.1f}%" for pct in report.dependability.values()))
    console.print(table)

    if out:
        console.print(f"Wrote {write_latency_csv(report.records, out / 'latency.csv')}")
        console.print(f"Wrote {write_cdf_csv(cdf, out / 'latency_cdf.csv')}")


@cli.command()
@click.option('--grid', 'grid_path', type=existing, default=DEFAULT_GRID)
@click.option('--scenario', 'scenario_path', type=existing, default=DEFAULT_SCENARIO)
@click.option('--links', 'links_path', type=existing, default=DEFAULT_LINKS)
@click.option('--placement', default=','.join(str(n) for n in GRID_SETTINGS['monitored_nodes']))
@click.option('--noise', type=click.FloatRange(min=0), default=0.0, help="Relative phasor noise deviation")
@click.option('--trials', type=click.IntRange(min=1), default=SE_SETTINGS['timing_trials'])
@click.option('--seed', type=int, default=0)
@click.option('--no-shunts', is_flag=True, help="Leave branch shunts out of H")
@click.option('--out', type=click.Path(file_okay=False, path_type=Path))
def se(grid_path, scenario_path, links_path, placement, noise, trials, seed, no_shunts, out):
    """State estimation over measurements delivered to the cloud"""
    grid, scenario, links = _load_inputs(grid_path, scenario_path, links_path)
    nodes = parse_placement(placement)
    try:
        report = run_se_campaign(grid, scenario, links, nodes=nodes, noise=noise, trials=trials,
                                 seed=seed, include_shunts=not no_shunts)
    except UnobservableError as e:
        raise click.ClickException(f"{e} (rank deficiency {2 * len(grid.bus_ids) - (e.rank or 0)})")
    except ValueError as e:
        raise click.UsageError(str(e))

    rows = estimate_report(report.estimate)
    table = Table(title=f"State estimate, placement {nodes}")
    table.add_column("Bus", justify="right", style="cyan")
    table.add_column("e", justify="right")
    table.add_column("f", justify="right")
    table.add_column("|V|", justify="right", style="green")
    table.add_column("Angle", justify="right", style="yellow")
    for row in rows:
        table.add_row(str(row['bus']), f"{row['e']:.6f}", f"{row['f']:.6f}",
                      f"{row['magnitude']:.6f}", f"{row['angle']:.3f}")
    console.print(table)
    console.print(f"Rank {report.rank}, {report.rows} rows; mean weighted residual "
                  f"{report.mean_residual_norm:.4g}")
    console.print(f"Solve time {report.mean_ms:.3f} ± {report.std_ms:.3f} ms over {len(report.timings)} trials")

    if out:
        console.print(f"Wrote {write_estimate_csv(rows, out / 'estimate.csv')}")
        console.print(f"Wrote {write_timing_csv(report.mean_ms, report.std_ms, len(report.timings), out / 'timing.csv')}")


@cli.command()
@click.argument('topic_filter')
@click.argument('name')
@click.pass_context
def topics(ctx, topic_filter, name):
    """Check whether a topic filter matches a topic name"""
    try:
        parsed_filter = TopicFilter.parse(topic_filter)
        parsed_name = TopicName.parse(name)
    except TopicError as e:
        raise click.UsageError(str(e))

    matched = topic_matches(parsed_filter, parsed_name)
    console.print('true' if matched else 'false')
    ctx.exit(0 if matched else 1)


@cli.command()
@click.option('--grid', 'grid_path', type=existing, default=DEFAULT_GRID)
@click.option('--out', type=click.Path(file_okay=False, path_type=Path), required=True)
def dump_grid(grid_path, out):
    """Write the parsed grid as buses.csv and branches.csv"""
    try:
        grid = load_cdf(grid_path)
    except ValueError as e:
        raise click.UsageError(str(e))
    bus_path, branch_path = dump_grid_csv(grid, out)
    console.print(f"{len(grid.buses)} buses, {len(grid.branches)} branches")
    console.print(f"Wrote {bus_path} and {branch_path}")


if __name__ == '__main__':
    cli()
