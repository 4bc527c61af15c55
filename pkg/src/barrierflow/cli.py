"""Command-line interface: run, verify, bench.

run    executes one topology/workload/protocol combination and prints the
       run report (optionally appending a CSV row).
verify runs the correctness property battery and prints one PASS/FAIL line
       per check.
bench  sweeps snapshot intervals on the evaluation topology and emits the
       overhead-comparison CSV, or the scaling curve with --scale.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .bench import BENCH_CSV_HEADER, BenchmarkSpec, run_benchmark, weak_scaling
from .engine_mt import MultiWorkerEngine
from .graph import load_topology
from .harness import run_once, run_with_recovery, verify_battery
from .report import reports_to_csv
from .runtime import KillPlan
from .store import DirectoryStore
from .workloads import builtin_topology, default_workload, loop_workload, word_workload

BUILTIN_NAMES = ("chain3", "diamond", "loop", "wc2", "layered")


def _parse_interval(text: str | None) -> tuple[int | None, float | None]:
    """"<N>" or "<N> records" -> record count; "<T>ms" -> wall-clock ms."""
    if text is None:
        return None, None
    text = text.strip().lower()
    if text.endswith("ms"):
        return None, float(text[:-2].strip())
    if text.endswith("records"):
        text = text[: -len("records")].strip()
    return int(text), None


def _parse_kill(text: str | None) -> KillPlan | None:
    if text is None:
        return None
    task, _, step = text.partition("@")
    if not task or not step:
        raise SystemExit(f"--kill expects <task>@<step>, got {text!r}")
    return KillPlan(victim=task, at_step=int(step))


def _load_graph(args):
    if args.topology in BUILTIN_NAMES:
        params = {}
        if args.topology in ("wc2", "layered"):
            params["parallelism"] = args.workers
        if args.topology == "loop":
            params["turns"] = args.turns
        return builtin_topology(args.topology, **params)
    with open(args.topology) as fh:
        return load_topology(json.load(fh))


def _load_workload(args, graph):
    if args.workload is None:
        if args.topology == "loop":
            return loop_workload(args.records)
        return default_workload(
            args.topology if args.topology in BUILTIN_NAMES else "file",
            graph, args.records, args.seed,
        )
    with open(args.workload) as fh:
        doc = json.load(fh)
    workload = {}
    for src, spec in doc.get("sources", {}).items():
        if "list" in spec:
            workload[src] = [
                tuple(p) if isinstance(p, list) else p for p in spec["list"]
            ]
        else:
            gen = spec["words"]
            workload[src] = word_workload(
                graph, gen.get("count", 1000), gen.get("seed", args.seed),
                vocab=gen.get("vocab", 24),
            ).get(src, [])
    return workload


def _cmd_run(args) -> int:
    graph = _load_graph(args)
    workload = _load_workload(args, graph)
    interval, interval_ms = _parse_interval(args.interval)
    store = DirectoryStore(args.store) if args.store else None
    kill = _parse_kill(args.kill)

    if args.mode == "mt":
        if kill is not None:
            raise SystemExit("--kill requires the deterministic engine (--mode det)")
        report = MultiWorkerEngine(
            graph, workload, protocol=args.protocol, interval=interval,
            interval_ms=interval_ms, seed=args.seed, store=store, name=args.topology,
        ).run()
    else:
        if interval_ms is not None:
            raise SystemExit("millisecond intervals require --mode mt")
        if kill is not None and args.recover == "auto":
            report = run_with_recovery(
                graph, workload, protocol=args.protocol, interval=interval,
                seed=args.seed, store=store, name=args.topology, kill=kill,
            )
        else:
            report = run_once(
                graph, workload, protocol=args.protocol, interval=interval,
                seed=args.seed, store=store, name=args.topology, kill=kill,
                spill_threshold=args.spill_threshold,
            )
    for line in report.metric_lines():
        print(line)
    if args.out:
        exists = os.path.exists(args.out)
        with open(args.out, "a") as fh:
            csv_text = reports_to_csv([report])
            fh.write(csv_text if not exists else csv_text.split("\n", 1)[1])
    return 0


def _cmd_verify(args) -> int:
    results = verify_battery(quick=args.quick)
    failed = 0
    for result in results:
        print(result.line())
        failed += 0 if result.ok else 1
    return 1 if failed else 0


def _cmd_bench(args) -> int:
    progress = (lambda msg: print(f"# {msg}", file=sys.stderr)) if args.verbose else None
    if args.scale:
        rows = weak_scaling(
            workers_list=tuple(int(w) for w in args.workers_list.split(",")),
            per_worker_records=args.records,
            seed=args.seed,
            repetitions=args.reps,
            progress=progress,
        )
        lines = ["workers,baseline_ms,abs_ms"]
        lines += [f"{w},{b:.1f},{a:.1f}" for w, b, a in rows]
    else:
        spec = BenchmarkSpec(
            record_count=args.records,
            intervals=tuple(int(i) for i in args.intervals.split(",")),
            workers=args.workers,
            seed=args.seed,
            repetitions=args.reps,
        )
        rows = run_benchmark(spec, progress=progress)
        lines = [BENCH_CSV_HEADER] + [r.csv() for r in rows]
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    print(text, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="barrierflow",
        description="Stateful streaming engine with asynchronous barrier snapshots",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute one topology/workload")
    p_run.add_argument("--topology", default="chain3",
                       help=f"builtin ({', '.join(BUILTIN_NAMES)}) or JSON file")
    p_run.add_argument("--workload", default=None, help="workload JSON file")
    p_run.add_argument("--records", type=int, default=1000,
                       help="records for generated workloads")
    p_run.add_argument("--protocol", choices=("none", "abs", "sync"), default="abs")
    p_run.add_argument("--interval", default=None,
                       help="snapshot interval: '<N> records' or '<T>ms'")
    p_run.add_argument("--mode", choices=("det", "mt"), default="det")
    p_run.add_argument("--workers", type=int, default=2,
                       help="parallelism for parameterized builtin topologies")
    p_run.add_argument("--turns", type=int, default=2, help="loop circulations")
    p_run.add_argument("--seed", type=int, default=0)
    p_run.add_argument("--store", default=None, help="snapshot store directory")
    p_run.add_argument("--spill-threshold", type=int, default=None,
                       help="blocked-channel records kept in memory before disk spill")
    p_run.add_argument("--kill", default=None, help="<task>@<step> fault injection")
    p_run.add_argument("--recover", choices=("auto", "off"), default="auto")
    p_run.add_argument("--out", default=None, help="append a CSV row here")
    p_run.set_defaults(fn=_cmd_run)

    p_verify = sub.add_parser("verify", help="run the correctness battery")
    p_verify.add_argument("--quick", action="store_true",
                          help="reduced run counts for a fast smoke pass")
    p_verify.set_defaults(fn=_cmd_verify)

    p_bench = sub.add_parser("bench", help="overhead sweep / scaling curve")
    p_bench.add_argument("--records", type=int, default=1_000_000)
    p_bench.add_argument("--workers", type=int, default=4)
    p_bench.add_argument("--intervals", default="25000,50000,250000")
    p_bench.add_argument("--reps", type=int, default=5)
    p_bench.add_argument("--seed", type=int, default=1)
    p_bench.add_argument("--scale", action="store_true",
                         help="weak-scaling curve instead of the interval sweep")
    p_bench.add_argument("--workers-list", default="1,2,4")
    p_bench.add_argument("--out", default=None)
    p_bench.add_argument("--verbose", action="store_true")
    p_bench.set_defaults(fn=_cmd_bench)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
