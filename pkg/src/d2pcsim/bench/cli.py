"""Command line entry point: run, calc, check, sweep."""
from __future__ import annotations

import argparse
import copy
import itertools
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import yaml

from ..simnet import TABLE1_NAMES, ConfigurationError, read_trace
from .calculator import analytic_ccp_d2pc, analytic_commit_latency, path_model
from .config import ExperimentConfig, TopologyConfig, load_config, set_path
from .oracles import check_history
from .runner import run_experiment

log = logging.getLogger("d2pcsim")


def _write_outputs(result, out: Path, trace_path=None) -> None:
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "metrics.jsonl", "w") as fh:
        for r in result.records:
            fh.write(r.to_json() + "\n")
    (out / "summary.tsv").write_text(result.summary.table())
    if trace_path is not None and result.trace.enabled:
        result.trace.write(trace_path)


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.trace_level:
        cfg.trace = args.trace_level
    if args.trace and cfg.trace == "none":
        cfg.trace = "history"
    result = run_experiment(cfg)
    out = Path(args.out)
    _write_outputs(result, out, args.trace)
    sys.stdout.write(result.summary.table())
    if args.check and result.trace.enabled:
        rep = check_history(result.trace.dicts())
        sys.stdout.write(json.dumps(rep.as_dict(), indent=2) + "\n")
        return 0 if rep.ok else 1
    return 0


def _names(topology: TopologyConfig):
    return list(topology.matrix().names)


def _dc(names, text: str) -> int:
    if text in names:
        return names.index(text)
    try:
        return int(text)
    except ValueError:
        raise ConfigurationError(f"unknown datacenter {text!r}; known: {', '.join(names)}") from None


def cmd_calc(args) -> int:
    if args.topology in ("three_dc", "table1"):
        topo_cfg = TopologyConfig() if args.topology == "three_dc" else TopologyConfig(
            datacenters=list(TABLE1_NAMES))
    else:
        data = yaml.safe_load(Path(args.topology).read_text())
        topo_cfg = ExperimentConfig.from_dict({"topology": data.get("topology", data)}).topology
    topo = topo_cfg.build()
    names = list(topo.matrix.names)
    a = _dc(names, args.from_dc)
    parts = [_dc(names, p) for p in args.participants.split(",")]
    shards = [topo.shard_led_at(p) for p in parts]
    reps = {p.leader: list(p.replicas) for p in topo.shards}
    exact = path_model(topo, args.protocol, a, shards, processing_delay_ms=args.processing_delay,
                       local_notify_ms=args.local_notify)
    out = {
        "protocol": args.protocol,
        "from": names[a],
        "participants": [names[p] for p in parts],
        "closed_form_latency_ms": analytic_commit_latency(args.protocol, a, parts, topo.matrix,
                                                          colocated_replica=False, replicas=reps),
        "latency_ms": exact.latency_ms,
        "ccp_ms": {names[topo.shards[s].leader]: v for s, v in exact.ccp_ms.items()},
    }
    if args.protocol == "d2pc":
        out["closed_form_ccp_ms"] = {names[b]: analytic_ccp_d2pc(a, b, parts, topo.matrix)
                                     for b in parts}
    sys.stdout.write(json.dumps(out, indent=2) + "\n")
    return 0


def cmd_check(args) -> int:
    rep = check_history(read_trace(args.trace), exhaustive=args.exhaustive)
    sys.stdout.write(json.dumps(rep.as_dict(), indent=2) + "\n")
    return 0 if rep.ok else 1


def _parse_value(text: str):
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError:
        return text


def _sweep_one(item):
    label, data = item
    result = run_experiment(ExperimentConfig.from_dict(data))
    return label, result.summary


def cmd_sweep(args) -> int:
    base = yaml.safe_load(Path(args.template).read_text()) or {}
    axes = []
    for p in args.param:
        key, _, values = p.partition("=")
        if not values:
            raise ConfigurationError(f"--param needs key=v1,v2,... got {p!r}")
        axes.append((key, [_parse_value(v) for v in values.split(",")]))
    jobs = []
    for combo in itertools.product(*[vals for _, vals in axes]):
        data = copy.deepcopy(base)
        for (key, _), v in zip(axes, combo):
            set_path(data, key, v)
        ExperimentConfig.from_dict(copy.deepcopy(data))   # fail fast on bad values
        jobs.append((tuple(zip([k for k, _ in axes], combo)), data))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    keys = [k for k, _ in axes]
    cols = ["throughput", "latency_p50_ms", "latency_p95_ms", "latency_mean_ms", "mean_ccp_ms",
            "abort_rate", "starved_fraction", "committed", "issued"]
    lines = ["\t".join(keys + cols)]
    if args.workers == 1:
        results = map(_sweep_one, jobs)
    else:
        pool = ProcessPoolExecutor(max_workers=args.workers)
        results = pool.map(_sweep_one, jobs)
    for label, s in results:
        row = [str(v) for _, v in label] + [str(round(getattr(s, c), 4)) for c in cols]
        lines.append("\t".join(row))
    text = "\n".join(lines) + "\n"
    (out / "sweep.tsv").write_text(text)
    sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="d2pcsim", description="Geo-distributed commit protocol simulator")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)

    r = sub.add_parser("run", help="run one experiment config")
    r.add_argument("config")
    r.add_argument("--out", default="results")
    r.add_argument("--trace", help="write the trace to this path")
    r.add_argument("--trace-level", choices=["none", "history", "full"])
    r.add_argument("--check", action="store_true", help="run the history oracles afterwards")
    r.set_defaults(fn=cmd_run)

    c = sub.add_parser("calc", help="analytic latency and CCP")
    c.add_argument("topology", help="three_dc, table1, or a config file with a topology section")
    c.add_argument("--protocol", choices=["d2pc", "layered"], default="d2pc")
    c.add_argument("--from", dest="from_dc", required=True)
    c.add_argument("--participants", required=True, help="comma-separated leader datacenters")
    c.add_argument("--processing-delay", type=float, default=0.0)
    c.add_argument("--local-notify", type=float, default=0.0)
    c.set_defaults(fn=cmd_calc)

    k = sub.add_parser("check", help="run history oracles over a trace file")
    k.add_argument("trace")
    k.add_argument("--exhaustive", action="store_true")
    k.set_defaults(fn=cmd_check)

    s = sub.add_parser("sweep", help="parameter sweep over a config template")
    s.add_argument("template")
    s.add_argument("--param", action="append", default=[], help="dotted.key=v1,v2,...")
    s.add_argument("--out", default="results")
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(fn=cmd_sweep)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.fn(args)
    except ConfigurationError as e:
        log.error("configuration error: %s", e)
        return 2


if __name__ == "__main__":
    sys.exit(main())
