"""Command-line entry point.

Subcommands: ``run`` single sessions, ``replay`` (validate) trace files,
``bench`` paired baseline/speculative suites, ``datagen`` skeleton
synthesis, ``gen-samples`` synthetic corpora, ``serve`` the live gateway.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from .config import ConfigError, derive_seed, load_config
from .datagen import Rejected
from .environment import ToolRegistry, default_registry, load_registry
from .metrics import aggregate
from .runner import SampleRejectedError, align_sample, run_sample
from .samples import generate_suite, load_samples, save_samples
from .trace import CorruptTraceError, Trajectory, validate


class DatasetError(Exception):
    pass


def _registry_for(config) -> ToolRegistry:
    if config.registry == "builtin":
        reg = default_registry()
    else:
        reg = load_registry(config.registry)
    return reg.with_latency(config.latency_model())


def _load_dataset(args, config) -> list:
    if args.dataset:
        path = Path(args.dataset)
        if not path.exists():
            raise DatasetError(f"dataset not found: {path}")
        samples = load_samples(path)
    else:
        samples = generate_suite(args.n, seed=derive_seed(config.seed, "suite"))
    if not samples:
        raise DatasetError("dataset is empty")
    if args.sample:
        wanted = set(args.sample)
        samples = [s for s in samples if s.id in wanted]
        if not samples:
            raise DatasetError(f"no samples matched {sorted(wanted)}")
    return samples[: args.n] if args.n else samples


def cmd_run(args) -> int:
    config = load_config(args.config, mode=args.mode, seed=args.seed)
    registry = _registry_for(config)
    samples = _load_dataset(args, config)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    status = 0
    for sample in samples:
        try:
            output = run_sample(sample, config, registry, config.mode)
        except SampleRejectedError as e:
            print(f"rejected: {e}", file=sys.stderr)
            status = 1
            continue
        path = out_dir / f"{sample.id}.{config.mode}.trace.jsonl"
        output.trajectory.write(path)
        r = output.result
        print(
            f"{sample.id} [{config.mode}] answered={r.answered} correct={r.correct} "
            f"total={r.total_seconds if r.total_seconds is None else round(r.total_seconds, 3)}s "
            f"-> {path}"
        )
        if not r.answered:
            status = 1
    return status


def cmd_replay(args) -> int:
    try:
        trajectory = Trajectory.read(args.trace)
    except CorruptTraceError as e:
        print(f"corrupt trace: {e}", file=sys.stderr)
        return 2
    violations = validate(trajectory)
    if not violations:
        print(f"{args.trace}: ok ({len(trajectory.entries)} entries)")
        return 0
    for v in violations:
        print(f"{args.trace}: {v}")
    return 1


def cmd_bench(args) -> int:
    config = load_config(args.config, seed=args.seed)
    registry = _registry_for(config)
    samples = _load_dataset(args, config)
    out_dir = Path(args.out)
    traces_dir = out_dir / "traces"
    traces_dir.mkdir(parents=True, exist_ok=True)

    def run_pair(sample):
        outputs = []
        for mode in ("baseline", "speculative"):
            output = run_sample(sample, config, registry, mode)
            output.trajectory.write(traces_dir / f"{sample.id}.{mode}.trace.jsonl")
            outputs.append(output.result)
        return outputs

    results = []
    rejected = 0
    if args.workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=args.workers) as pool:
            futures = {pool.submit(run_pair, s): s for s in samples}
            for future, sample in futures.items():
                try:
                    results.extend(future.result())
                except SampleRejectedError as e:
                    rejected += 1
                    print(f"rejected: {e}", file=sys.stderr)
    else:
        for sample in samples:
            try:
                results.extend(run_pair(sample))
            except SampleRejectedError as e:
                rejected += 1
                print(f"rejected: {e}", file=sys.stderr)
    report = aggregate(results)
    (out_dir / "report.json").write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    with (out_dir / "per_sample.csv").open("w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["sample_id", "mode", "ttft_seconds", "total_seconds", "correct", "answered"])
        for r in report.per_sample:
            writer.writerow(
                [r.sample_id, r.mode, r.ttft_seconds, r.total_seconds, r.correct, r.answered]
            )
    table = report.summary_table()
    (out_dir / "report.txt").write_text(table + "\n")
    if not args.no_figures:
        from .figures import render_report_figures

        for path in render_report_figures(report, out_dir / "figures"):
            print(f"wrote {path}")
    print(table)
    if rejected:
        print(f"({rejected} samples rejected during alignment)")
    return 0


def cmd_datagen(args) -> int:
    config = load_config(args.config, seed=args.seed)
    registry = _registry_for(config)
    samples = _load_dataset(args, config)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    kept = rejected = 0
    for sample in samples:
        aligned = align_sample(sample, config)
        if isinstance(aligned, Rejected):
            rejected += 1
            continue
        try:
            output = run_sample(sample, config, registry, "speculative")
        except SampleRejectedError:
            rejected += 1
            continue
        if not output.result.correct:
            rejected += 1
            continue
        output.trajectory.write(out_dir / f"{sample.id}.trace.jsonl")
        kept += 1
    print(f"datagen: kept {kept}, rejected {rejected}")
    return 0 if kept else 1


def cmd_gen_samples(args) -> int:
    samples = generate_suite(args.n, seed=args.seed)
    save_samples(samples, args.out)
    print(f"wrote {len(samples)} samples to {args.out}")
    return 0


def cmd_serve(args) -> int:
    from .gateway import serve

    config = load_config(args.config)
    serve(
        host=args.host,
        port=args.port,
        registry=_registry_for(config),
        pacing_seconds_per_token=args.pacing,
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="specagent")
    sub = p.add_subparsers(dest="cmd", required=True)

    def common(sp, with_mode=False):
        sp.add_argument("--config", default=None, help="YAML config file")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--dataset", default=None, help="samples JSONL (default: synthetic)")
        sp.add_argument("--n", type=int, default=10, help="sample count")
        sp.add_argument("--sample", action="append", help="restrict to sample id(s)")
        sp.add_argument("--out", default="out", help="output directory")
        if with_mode:
            sp.add_argument(
                "--mode", choices=("baseline", "speculative"), default="speculative"
            )

    run_p = sub.add_parser("run", help="run sessions and write traces")
    common(run_p, with_mode=True)
    run_p.set_defaults(func=cmd_run)

    rep = sub.add_parser("replay", help="validate a trace file")
    rep.add_argument("trace")
    rep.set_defaults(func=cmd_replay)

    bench = sub.add_parser("bench", help="paired baseline/speculative benchmark")
    common(bench)
    bench.add_argument("--no-figures", action="store_true")
    bench.add_argument("--workers", type=int, default=1, help="parallel sample workers")
    bench.set_defaults(func=cmd_bench)

    dg = sub.add_parser("datagen", help="synthesize trajectory skeletons")
    common(dg)
    dg.set_defaults(func=cmd_datagen)

    gs = sub.add_parser("gen-samples", help="write a synthetic sample corpus")
    gs.add_argument("--n", type=int, default=100)
    gs.add_argument("--seed", type=int, default=0)
    gs.add_argument("--out", default="samples.jsonl")
    gs.set_defaults(func=cmd_gen_samples)

    srv = sub.add_parser("serve", help="run the live wall-clock gateway")
    srv.add_argument("--config", default=None)
    srv.add_argument("--host", default="127.0.0.1")
    srv.add_argument("--port", type=int, default=8700)
    srv.add_argument("--pacing", type=float, default=0.02,
                     help="seconds per generated token in the live stream")
    srv.set_defaults(func=cmd_serve)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DatasetError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
