"""Command line: ``generate``, ``simulate`` and ``experiment``.

Exit status is 0 on success, 1 for invalid configuration or arguments and
2 for file I/O problems. Diagnostics go to stderr.
"""

from __future__ import annotations

import csv
import io
import json
import sys
from dataclasses import replace
from pathlib import Path

import click

from .domain import CampaignConfig, ConfigError, KpiKind, validate_config
from .harness import (
    REPORT_KPIS,
    ExperimentSpec,
    default_synthesis,
    reports_to_csv,
    reports_to_json,
    run_experiment,
)
from .iolayer import InvalidDistributionParams, InventoryFileError, SynthesisParams, generate_inventory, load_csv, write_csv
from .selector import Method, SelectorConfig
from .simulator import InventoryTooSmall, run_campaign

EXIT_VALIDATION = 1
EXIT_IO = 2

METHOD_CHOICES = [m.value for m in Method]


class InputFileError(Exception):
    pass


def _read_json(path: str) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise InputFileError(f"cannot read {path}: {exc.strerror or exc}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise click.BadParameter(f"{path} is not valid JSON: {exc}") from None


def _load_inventory(path: str):
    try:
        return load_csv(path)
    except OSError as exc:
        raise InputFileError(f"cannot read {path}: {exc.strerror or exc}") from None


def _priority(text: str | None) -> tuple[KpiKind, ...]:
    if not text:
        return ()
    try:
        return tuple(KpiKind(p.strip()) for p in text.split(",") if p.strip())
    except ValueError:
        raise click.BadParameter(
            f"unknown KPI in {text!r}; choose from {', '.join(k.value for k in KpiKind)}"
        ) from None


def _ensure_dir(path: str) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise InputFileError(f"cannot create {path}: {exc.strerror or exc}") from None
    return out


@click.group()
def cli() -> None:
    """Multivariate PID control of RTB campaign KPIs over a second-price replay."""


@cli.command()
@click.option("--config", "config_path", type=click.Path(dir_okay=False), help="Synthesis parameters (JSON).")
@click.option("--seed", type=click.IntRange(0, 2**64 - 1), help="Overrides the seed in --config.")
@click.option("--count", type=click.IntRange(min=1), help="Number of records; overrides --config.")
@click.option("--out", required=True, type=click.Path(), help="Output directory (or a .csv file path).")
def generate(config_path: str | None, seed: int | None, count: int | None, out: str) -> None:
    """Write a synthetic impression log as CSV."""
    params = SynthesisParams.from_dict(_read_json(config_path)) if config_path else default_synthesis()
    if seed is not None:
        params = replace(params, seed=seed)
    if count is not None:
        params = replace(params, count=count)
    inventory = generate_inventory(params)
    target = Path(out)
    if target.suffix != ".csv":
        target = _ensure_dir(out) / "inventory.csv"
    try:
        write_csv(inventory, target)
    except OSError as exc:
        raise InputFileError(f"cannot write {target}: {exc.strerror or exc}") from None
    click.echo(f"wrote {len(inventory)} records to {target}")


@cli.command()
@click.option("--config", "config_path", required=True, type=click.Path(dir_okay=False), help="Campaign config (JSON).")
@click.option("--inventory", type=click.Path(dir_okay=False), help="Impression log CSV; synthesized if omitted.")
@click.option("--seed", type=click.IntRange(0, 2**64 - 1), default=0, show_default=True, help="Seed for synthesized inventory.")
@click.option("--method", type=click.Choice(METHOD_CHOICES), default="simple", show_default=True)
@click.option("--priority", help="Comma-separated KPI order; defaults to the goal order in --config.")
@click.option("--threshold", type=float, default=0.05, show_default=True, help="Acceptability threshold on |phi|.")
@click.option("--base", type=float, default=2.0, show_default=True, help="Smart Sequential exponential base.")
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--format", "fmt", type=click.Choice(["json", "csv"]), default="json", show_default=True)
def simulate(config_path, inventory, seed, method, priority, threshold, base, out, fmt) -> None:
    """Run one campaign and write its per-interval reports."""
    config = validate_config(CampaignConfig.from_dict(_read_json(config_path)))
    if inventory:
        inv = _load_inventory(inventory)
    else:
        params = replace(default_synthesis(), seed=seed, count=config.num_intervals * config.auctions_per_interval)
        inv = generate_inventory(params)
    selector = SelectorConfig(
        method=Method(method),
        acceptability_threshold=threshold,
        exponential_base=base,
        priorities=_priority(priority),
    )
    reports = run_campaign(inv, config, selector)
    out_dir = _ensure_dir(out)
    name = f"{method}_{'-'.join(k.value for k in (selector.priorities or config.priorities))}"
    if fmt == "json":
        target = out_dir / f"{name}.json"
        target.write_text(reports_to_json(reports), encoding="utf-8")
    else:
        target = out_dir / f"{name}.csv"
        target.write_text(reports_to_csv(reports), encoding="utf-8")
    final = reports[-1].measurement
    click.echo(
        f"{name}: spend={final.spend:.4f} pacing={final.pacing:.4f} "
        f"cpc={final.cpc} cpa={final.cpa} viewability={final.viewability} -> {target}"
    )


def _comparison_csv(result) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["seed", "method", "priority", *(f"{k}_pct" for k in REPORT_KPIS), *REPORT_KPIS])
    for campaign in result.to_dict()["campaigns"]:
        for cell in campaign["cells"]:
            pct = cell["pct_change"]
            final = cell["final"]
            writer.writerow(
                [
                    campaign["seed"],
                    cell["method"],
                    "-".join(cell["priority"] or []),
                    *("" if pct[k] is None else repr(pct[k]) for k in REPORT_KPIS),
                    *("" if final[k] is None else repr(final[k]) for k in REPORT_KPIS),
                ]
            )
    return buf.getvalue()


@cli.command()
@click.option("--config", "config_path", type=click.Path(dir_okay=False), help="Experiment spec (JSON); defaults built in.")
@click.option("--inventory", type=click.Path(dir_okay=False), help="Historical pool to sample each campaign from.")
@click.option("--seed", type=click.IntRange(0, 2**64 - 1), help="Run a single seed instead of the configured seeds.")
@click.option("--method", "methods", multiple=True, type=click.Choice([m.value for m in Method if m is not Method.BASELINE]), help="Restrict methods (repeatable).")
@click.option("--priority", "priorities", multiple=True, help="Comma-separated KPI order (repeatable).")
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--format", "fmt", type=click.Choice(["json", "csv"]), default="json", show_default=True)
@click.option("--jobs", type=click.IntRange(min=1), default=1, show_default=True, help="Worker processes for grid cells.")
def experiment(config_path, inventory, seed, methods, priorities, out, fmt, jobs) -> None:
    """Run the baseline plus every (method, priority order) cell and compare."""
    spec = ExperimentSpec.from_dict(_read_json(config_path)) if config_path else ExperimentSpec()
    if seed is not None:
        spec = replace(spec, seeds=(seed,))
    if methods:
        spec = replace(spec, methods=tuple(Method(m) for m in methods))
    if priorities:
        spec = replace(spec, priority_orders=tuple(_priority(p) for p in priorities))
    pool = _load_inventory(inventory) if inventory else None
    result = run_experiment(spec, pool=pool, jobs=jobs)
    out_dir = _ensure_dir(out)
    result.write(out_dir)
    if fmt == "csv":
        (out_dir / "comparison.csv").write_text(_comparison_csv(result), encoding="utf-8")
    click.echo(result.comparison_table(), nl=False)


def main(argv: list[str] | None = None) -> int:
    try:
        cli.main(args=argv, prog_name="rtbcontrol", standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.Abort:
        click.echo("aborted", err=True)
        return EXIT_VALIDATION
    except click.ClickException as exc:
        exc.show(file=sys.stderr)
        return EXIT_VALIDATION
    except (InputFileError, InventoryFileError, OSError) as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_IO
    except ConfigError as exc:
        for v in exc.violations:
            click.echo(f"invalid config: {v}", err=True)
        return EXIT_VALIDATION
    except (InventoryTooSmall, InvalidDistributionParams, ValueError, KeyError, TypeError) as exc:
        click.echo(f"invalid input: {exc}", err=True)
        return EXIT_VALIDATION
    return 0


if __name__ == "__main__":
    sys.exit(main())
