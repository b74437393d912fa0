"""Command-line front end.

Subcommands::

    clustersmc run      [--config F] [--strategy S] [--seed N] [--rounds T] [--out DIR]
    clustersmc compare  [--config F] [--strategies fedavg,dp,smc] [--out DIR]
    clustersmc audit    LOG [--payloads NPZ] [--tol X] [--out DIR]
    clustersmc gen-data [--config F] [--out DIR]

Exit status: 0 on success, 2 for invalid configuration or input, 3 for a
protocol failure during a run.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

from . import audit, metrics
from .data import export_csv, generate_clients
from .errors import ConfigError, LogParseError, ProtocolError, UsageError
from .protocol import METHOD_NAMES, STRATEGIES, RunConfig, read_log, run_training

logger = logging.getLogger("clustersmc")

EXIT_OK, EXIT_CONFIG, EXIT_PROTOCOL = 0, 2, 3


def write_atomic(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    with os.fdopen(fd, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def load_config(args: argparse.Namespace) -> RunConfig:
    if args.config:
        try:
            raw = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError("config", f"cannot read {args.config}: {exc}") from None
        cfg = RunConfig.from_dict(raw)
    else:
        cfg = RunConfig()

    overrides = {
        "master_seed": args.seed,
        "T": args.rounds,
        "K": args.clients,
        "M": args.clusters,
        "repeats": args.repeats,
        "dp_sigma": args.dp_sigma,
    }
    if getattr(args, "strategy", None) is not None:
        overrides["strategy"] = args.strategy
    cfg = replace(cfg, **{k: v for k, v in overrides.items() if v is not None})
    if args.allow_degenerate:
        cfg = replace(cfg, allow_degenerate=True)
    if args.lr is not None:
        try:
            cfg = replace(cfg, optimizer=replace(cfg.optimizer, eta=args.lr))
        except UsageError as exc:
            raise ConfigError("optimizer.eta", str(exc)) from None
    return cfg.validate()


def _prepare_out(args: argparse.Namespace) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_config(out: Path, cfg: RunConfig) -> None:
    write_atomic(out / "config.resolved.json", json.dumps(cfg.to_dict(), indent=2) + "\n")


def cmd_run(args: argparse.Namespace) -> int:
    cfg = load_config(args)
    out = _prepare_out(args)
    _write_config(out, cfg)
    result = run_training(cfg, keep_payloads=True)
    report = result.report

    write_atomic(out / "table.csv", metrics.table_csv([report]))
    write_atomic(out / "curves.csv", metrics.curves_csv(report))
    write_atomic(out / "report.json", report.to_json() + "\n")
    write_atomic(out / "messages.log", result.log.to_jsonl())
    rep = audit.check_disclosure(result.log, result.true_weights, tol=args.tol, strategy=cfg.strategy)
    write_atomic(out / "audit.json", rep.to_json() + "\n")
    if args.export_payloads:
        result.log.write_payloads(out / "payloads.npz", result.true_weights)

    print(
        f"{report.method}: avg ACC {report.avg_accuracy:.2f}  avg F1 {report.avg_f1:.2f}  "
        f"messages {len(result.log)}  server disclosures {len(rep.server_disclosures)}"
    )
    return EXIT_OK


def _one_run(cfg: RunConfig, clients):
    res = run_training(cfg, clients)
    return res.report, audit.count_messages(res.log)


def cmd_compare(args: argparse.Namespace) -> int:
    base = load_config(args)
    strategies = [s.strip() for s in args.strategies.split(",") if s.strip()]
    for s in strategies:
        if s not in STRATEGIES:
            raise ConfigError("strategies", f"unknown strategy {s!r}")
    configs = {s: replace(base, strategy=s).validate() for s in strategies}
    out = _prepare_out(args)
    _write_config(out, base)
    clients = generate_clients(base.resolved_data())

    jobs = [
        (s, r, replace(configs[s], master_seed=base.master_seed + r))
        for s in strategies
        for r in range(base.repeats)
    ]
    if args.workers > 1:
        with ProcessPoolExecutor(args.workers) as pool:
            results = list(pool.map(_one_run, [j[2] for j in jobs], [clients] * len(jobs)))
    else:
        results = [_one_run(j[2], clients) for j in jobs]

    reports, overhead = [], {}
    for s in strategies:
        runs = [res for (js, _, _), res in zip(jobs, results) if js == s]
        reports.append(metrics.aggregate_runs([rep for rep, _ in runs]))
        overhead[s] = runs[0][1]

    write_atomic(out / "table.csv", metrics.table_csv(reports))
    write_atomic(
        out / "report.json", json.dumps({r.method: r.to_dict() for r in reports}, indent=2) + "\n"
    )
    for s, r in zip(strategies, reports):
        write_atomic(out / f"curves_{s}.csv", metrics.curves_csv(r))

    summary = {
        s: {"messages_per_run": st.total_messages, "bytes_per_run": st.total_bytes}
        for s, st in overhead.items()
    }
    if "fedavg" in overhead:
        for s, st in overhead.items():
            summary[s]["ratio_vs_fedavg"] = audit.overhead_ratio(st, overhead["fedavg"])
    write_atomic(out / "overhead.json", json.dumps(summary, indent=2) + "\n")

    for r in reports:
        print(f"{r.method:7s} avg ACC {r.avg_accuracy:6.2f}  avg F1 {r.avg_f1:6.2f}  (repeats={r.repeats})")
    if "fedavg" in summary:
        for s in strategies:
            print(f"{METHOD_NAMES[s]:7s} overhead vs FedAvg: {summary[s]['ratio_vs_fedavg']:.2f}x")
    return EXIT_OK


def cmd_audit(args: argparse.Namespace) -> int:
    try:
        log, true_weights = read_log(args.log, args.payloads)
    except LogParseError as exc:
        print(f"error: {args.log}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if true_weights is not None:
        doc = audit.check_disclosure(log, true_weights, tol=args.tol).to_json()
    else:
        doc = audit.count_messages(log).to_json()
    if args.out:
        out = _prepare_out(args)
        write_atomic(out / "audit.json", doc + "\n")
    else:
        print(doc)
    return EXIT_OK


def cmd_gen_data(args: argparse.Namespace) -> int:
    cfg = load_config(args)
    out = _prepare_out(args)
    clients = generate_clients(cfg.resolved_data())
    export_csv(clients, out / "data.csv")
    for c in clients:
        print(f"C{c.client_id}: train {c.n_train}  test {c.n_test}  class-1 {int(c.y_train.sum() + c.y_test.sum())}")
    return EXIT_OK


def _add_run_options(p: argparse.ArgumentParser, strategy: bool = True) -> None:
    p.add_argument("--config", help="JSON file mirroring RunConfig")
    p.add_argument("--out", default="out", help="output directory (default: out)")
    p.add_argument("--seed", type=int, help="master seed")
    if strategy:
        p.add_argument("--strategy", choices=STRATEGIES)
    p.add_argument("--rounds", type=int, help="number of rounds T")
    p.add_argument("--clients", type=int, help="number of hospitals K")
    p.add_argument("--clusters", type=int, help="number of clusters M")
    p.add_argument("--repeats", type=int)
    p.add_argument("--dp-sigma", type=float)
    p.add_argument("--lr", type=float, help="local learning rate")
    p.add_argument(
        "--allow-degenerate",
        action="store_true",
        help="permit smc with one-hospital clusters (leaks raw weights)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="clustersmc", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="train one strategy and write reports")
    _add_run_options(p)
    p.add_argument("--tol", type=float, default=1e-6, help="disclosure tolerance")
    p.add_argument("--export-payloads", action="store_true", help="also write payloads.npz")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="run several strategies with aligned seeds")
    _add_run_options(p, strategy=False)
    p.add_argument("--strategies", default=",".join(STRATEGIES))
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("audit", help="summarize a messages.log")
    p.add_argument("log")
    p.add_argument("--payloads", help="payloads.npz written by run --export-payloads")
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--out")
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("gen-data", help="write the synthetic client datasets as CSV")
    _add_run_options(p)
    p.set_defaults(func=cmd_gen_data)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"error: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ProtocolError as exc:
        print(f"error: protocol failure: {exc}", file=sys.stderr)
        return EXIT_PROTOCOL


if __name__ == "__main__":
    sys.exit(main())
