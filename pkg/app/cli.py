"""
Command-line harness: single runs, experiment suites and the manager service.
"""

import json
import logging
import socket
import sys
from functools import wraps
from pathlib import Path

import anyio
import click

from app.manager.client import RemoteManagerClient
from app.manager.server import build_manager, serve
from app.shuffle import experiments
from app.shuffle.core import registered_combiners
from app.shuffle.errors import TeShuError
from app.shuffle.sampling import SamplingConfig
from app.shuffle.simulator import Simulator
from app.shuffle.templates import Template
from app.shuffle.topology import CostModel, Topology
from app.shuffle.workload import WorkloadSpec
from app.utils import default_seed, load_env, manager_address, setup_logging

logger = logging.getLogger('teshu_cli')

DEFAULT_TOPOLOGY = Topology(racks=2, servers_per_rack=5, workers_per_server=2, spine_links_per_rack=8)
DEFAULT_WORKLOAD = "duplicate:n=2000,copies=20,local=2"
SWEEP_WORKLOAD = "duplicate:n=20000,copies=5"
DEFAULT_RATES = (1e-2, 1e-3, 1e-4)
DEFAULT_OVERSUBS = (1.0, 4.0, 10.0)
# Startup latency scaled to desk-size workloads; CostModel keeps the LAN default.
DESK_ALPHA = 1e-6


# --- Option helpers ---

def _topology(path, oversub) -> Topology:
    topo = Topology.load(path) if path else DEFAULT_TOPOLOGY
    if oversub is not None:
        topo = topo.with_oversubscription(oversub)
    return topo


def _workload(text: str) -> WorkloadSpec:
    try:
        return WorkloadSpec.parse(text)
    except (TeShuError, ValueError) as e:
        raise click.BadParameter(str(e), param_hint="--workload")


def topology_options(func):
    func = click.option("--oversub", type=float, default=None,
                        help="Oversubscription ratio N (for N:1); overrides the topology file")(func)
    func = click.option("--topology", "topology_path", type=click.Path(exists=True, dir_okay=False),
                        default=None, help="Topology file (JSON or key = value); default 2 racks x 5 servers x 2 workers, 8 spine links per rack")(func)
    return func


def cost_options(func):
    func = click.option("--combine-cost", type=float, default=CostModel.combine_cost, show_default=True,
                        help="Seconds per byte combined")(func)
    func = click.option("--alpha", type=float, default=DESK_ALPHA, show_default=True,
                        help="Seconds of startup latency per SEND")(func)
    return func


def _cost_model(alpha, combine_cost) -> CostModel:
    try:
        return CostModel(alpha=alpha, combine_cost=combine_cost)
    except TeShuError as e:
        raise click.BadParameter(str(e), param_hint="--alpha/--combine-cost")


def reports_errors(func):
    """Turns shuffle-layer errors into CLI errors."""
    @wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except TeShuError as e:
            logger.error(str(e))
            raise click.ClickException(str(e))
    return wrapper


def _emit(text: str, out) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
        logger.info(f"wrote {out}")
    else:
        click.echo(text, nl=False)


# --- Commands ---

@click.group()
@click.option("--log-level", default=None, help="Logging level (default TESHU_LOG_LEVEL or INFO)")
def cli(log_level):
    """TeShu templated shuffle simulator."""
    load_env()
    setup_logging("teshu_cli", log_level)


@cli.command("run")
@topology_options
@cost_options
@click.option("--template", "template_id", default="network_aware", show_default=True, help="Template id")
@click.option("--workload", default=DEFAULT_WORKLOAD, show_default=True, help="Workload spec kind:key=value,...")
@click.option("--rate", type=float, default=0.01, show_default=True, help="Sampling rate")
@click.option("--seed", type=int, default=None, help="Sampling seed (default TESHU_SEED)")
@click.option("--comb", type=click.Choice(registered_combiners() + ["none"]), default="sum", show_default=True,
              help="Combiner function")
@click.option("--scheduler", type=click.Choice(["cooperative", "parallel"]), default="cooperative", show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="Write the JSON outcome here")
@reports_errors
def run_cmd(topology_path, oversub, alpha, combine_cost, template_id, workload, rate, seed, comb, scheduler, out):
    """Run one shuffle and print its outcome as JSON."""
    topo = _topology(topology_path, oversub)
    cfg = SamplingConfig(rate=rate, seed=default_seed() if seed is None else seed)
    sim = Simulator(topo, _cost_model(alpha, combine_cost), scheduler=scheduler)
    outcome = sim.run_workload(template_id, _workload(workload), cfg=cfg,
                               comb_func=None if comb == "none" else comb)
    summary = {"template": template_id, "workload": workload, **outcome.summary()}
    _emit(json.dumps(summary, indent=2, sort_keys=True) + "\n", out)


@cli.command("sampling-sweep")
@topology_options
@cost_options
@click.option("--workload", "workloads", multiple=True, default=[SWEEP_WORKLOAD], show_default=True,
              help="Workload spec; repeatable")
@click.option("--rate", "rates", type=float, multiple=True, default=list(DEFAULT_RATES), show_default=True,
              help="Sampling rate; repeatable")
@click.option("--method", "methods", type=click.Choice(experiments.METHODS), multiple=True,
              default=list(experiments.METHODS), show_default=True)
@click.option("--seeds", type=int, default=30, show_default=True, help="Seeds per (workload, method, rate)")
@click.option("--seed", type=int, default=None, help="First seed (default TESHU_SEED)")
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="CSV output path")
@reports_errors
def sampling_sweep_cmd(topology_path, oversub, alpha, combine_cost, workloads, rates, methods, seeds, seed, out):
    """
    Reduction-ratio estimation accuracy.

    \b
    CSV columns:
      workload                   workload spec
      method                     partition_aware | random
      rate                       sampling rate
      r_hat_median               median estimated reduction ratio over seeds
      true_ratio                 full-population reduction ratio
      relative_error             |r_hat_median - true_ratio| / true_ratio
      sampling_bytes_fraction    median sampled bytes / population bytes
      sampling_time              modeled SAMP-phase time of a network_aware run
      modeled_overhead_fraction  sampling_time / vanilla shuffle time
    """
    rows = experiments.sampling_sweep([_workload(w) for w in workloads], rates, _topology(topology_path, oversub),
                                      cm=_cost_model(alpha, combine_cost), methods=methods, seeds=seeds,
                                      seed=default_seed() if seed is None else seed)
    _emit(experiments.write_csv(rows, experiments.SWEEP_COLUMNS), out)


@cli.command("decision-matrix")
@topology_options
@cost_options
@click.option("--oversubs", "oversubs", type=float, multiple=True, default=list(DEFAULT_OVERSUBS),
              show_default=True, help="Oversubscription ratio; repeatable")
@click.option("--workload", "workloads", multiple=True,
              default=[DEFAULT_WORKLOAD, "uniform:n=2000,keys=10000000"], show_default=True,
              help="Workload spec; repeatable")
@click.option("--rate", type=float, default=0.01, show_default=True, help="Sampling rate")
@click.option("--seed", type=int, default=None, help="Base seed (default TESHU_SEED)")
@click.option("--seeds", type=int, default=1, show_default=True, help="Seeds per (oversub, workload)")
@click.option("--format", "fmt", type=click.Choice(["csv", "json"]), default="csv", show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="Output path")
@reports_errors
def decision_matrix_cmd(topology_path, oversub, alpha, combine_cost, oversubs, workloads, rate, seed, seeds, fmt, out):
    """
    Adaptive hierarchy decisions against the exhaustive best variant.

    \b
    Columns:
      oversub               oversubscription ratio N (N:1)
      workload              workload spec
      seed                  seed offset
      trace                 levels network_aware executed (S, R, G)
      best_trace            fastest forced variant
      regret                network_aware time / best time - 1
      bytes_saved_fraction  1 - cross-rack bytes / vanilla cross-rack bytes
      modeled_speedup       vanilla modeled time / network_aware modeled time
    """
    cfg = SamplingConfig(rate=rate, seed=default_seed() if seed is None else seed)
    ratios = [oversub] if oversub is not None else oversubs
    rows = experiments.decision_matrix([_workload(w) for w in workloads], ratios,
                                       _topology(topology_path, None), cm=_cost_model(alpha, combine_cost),
                                       cfg=cfg, seeds=range(seeds))
    if fmt == "json":
        report = {"rows": rows, "summary": experiments.agreement_summary(rows)}
        _emit(json.dumps(report, indent=2, sort_keys=True) + "\n", out)
    else:
        _emit(experiments.write_csv(rows, experiments.DECISION_COLUMNS), out)


@cli.command("failures")
@topology_options
@cost_options
@click.option("--k", "k", type=int, default=3, show_default=True, help="Spine links to fail per scenario")
@click.option("--scenarios", type=int, default=100, show_default=True, help="Number of seeded scenarios")
@click.option("--workload", default=DEFAULT_WORKLOAD, show_default=True, help="Workload spec")
@click.option("--rate", type=float, default=0.01, show_default=True, help="Sampling rate")
@click.option("--seed", type=int, default=None, help="Sampling seed (default TESHU_SEED)")
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="CSV output path")
@reports_errors
def failures_cmd(topology_path, oversub, alpha, combine_cost, k, scenarios, workload, rate, seed, out):
    """
    Spine-link failure scenarios.

    \b
    CSV columns:
      seed                scenario seed
      failed_links        failed rack:link pairs
      vanilla_time        vanilla modeled time
      network_aware_time  network_aware modeled time
      no_failure_time     network_aware modeled time without failures
      trace               levels network_aware executed
      time_ratio          network_aware_time / vanilla_time
    """
    cfg = SamplingConfig(rate=rate, seed=default_seed() if seed is None else seed)
    rows = experiments.failure_scenarios(_topology(topology_path, oversub), _workload(workload), k, scenarios,
                                         cm=_cost_model(alpha, combine_cost), cfg=cfg)
    _emit(experiments.write_csv(rows, experiments.FAILURE_COLUMNS), out)
    summary = experiments.failure_summary(rows)
    logger.info(f"never worse than vanilla: {summary['never_worse']:.0%}; "
                f"within 25% of healthy: {summary['close_to_healthy']:.0%}; "
                f"median time ratio: {summary['median_ratio']:.3f}")


@cli.command("serve-manager")
@click.option("--host", default=None, help="Address to bind (default TESHU_MANAGER_HOST)")
@click.option("--port", type=int, default=None, help="Port (default TESHU_MANAGER_PORT)")
@click.option("--template-dir", type=click.Path(file_okay=False), default=None, help="Template directory")
@click.option("--spill", type=click.Path(dir_okay=False), default=None, help="JSON-lines record spill file")
def serve_manager_cmd(host, port, template_dir, spill):
    """Run the standalone shuffle manager until interrupted."""
    default_host, default_port = manager_address()
    manager = build_manager(template_dir, spill)
    try:
        anyio.run(serve, manager, host or default_host, default_port if port is None else port)
    except OSError as e:
        raise click.ClickException(f"cannot bind manager: {e}")
    except KeyboardInterrupt:
        logger.info("shuffle manager stopped")


@cli.command("install-template")
@click.argument("path", type=click.Path(exists=True, dir_okay=False))
@click.option("--host", default=None, help="Manager host (default TESHU_MANAGER_HOST)")
@click.option("--port", type=int, default=None, help="Manager port (default TESHU_MANAGER_PORT)")
@reports_errors
def install_template_cmd(path, host, port):
    """Install a template file into a running manager."""
    template = Template.load(path)
    client = RemoteManagerClient(host, port)
    try:
        client.install_template(template.id, template.serialize())
        click.echo(f"installed {template.id}; manager templates: {', '.join(client.list_templates())}")
    except (OSError, socket.timeout) as e:
        raise click.ClickException(f"cannot reach manager at {client.host}:{client.port}: {e}")
    finally:
        client.close()


def main() -> int:
    try:
        cli(standalone_mode=False)
    except click.ClickException as e:
        e.show()
        return e.exit_code
    except click.Abort:
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
