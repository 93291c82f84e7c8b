"""Command-line interface: gen, oracle, hash-verify, estimate, bench.

Every run is reproducible from its flags and --seed; reports echo the full
configuration and keep wall-clock data in a separate "timing" field so the
rest of the JSON is byte-identical across repeats.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import stat
import sys
import time

import numpy as np

from . import estimators, harness, oracle
from .core import StreamFormatError, read_stream, write_stream
from .hashing import make_hash, verify_hash


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> _Parser:
    p = _Parser(prog="uflstream", description=__doc__)
    p.add_argument("--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a stream file")
    g.add_argument("--kind", required=True,
                   choices=["uniform", "clustered", "example_hard", "bhm"])
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--d", type=int, default=2)
    g.add_argument("--delta", type=int, default=1024)
    g.add_argument("--f", type=float, default=1.0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--order", choices=["given", "shuffled"], default="given")
    g.add_argument("--deletion-rate", type=float, default=0.0)
    g.add_argument("--clusters", type=int, default=5)
    g.add_argument("--radius", type=float, default=None)
    g.add_argument("--answer", choices=["YES", "NO"], default="NO")
    g.add_argument("-o", "--output", required=True)
    g.add_argument("--annotations", default=None)

    o = sub.add_parser("oracle", help="offline ground truth for a stream file")
    o.add_argument("--stream", required=True)
    o.add_argument("-o", "--output", default=None, help="JSON-lines output (default stdout)")

    h = sub.add_parser("hash-verify", help="statistical hash-property check")
    h.add_argument("--construction", required=True, choices=["grid", "face", "carve"])
    h.add_argument("--d", type=int, required=True)
    h.add_argument("--ell", type=float, default=1.0)
    h.add_argument("--gamma", type=float, default=None)
    h.add_argument("--trials", type=int, default=1000)
    h.add_argument("--seed", type=int, default=0)

    e = sub.add_parser("estimate", help="run a streaming estimator on a stream file")
    e.add_argument("--algo", required=True,
                   choices=["two-pass", "random-order", "one-pass", "offline"])
    e.add_argument("--stream", required=True)
    e.add_argument("--gamma", type=float, default=None)
    e.add_argument("--m", type=int, default=None)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--backend", choices=["exact", "linear"], default="exact")
    e.add_argument("--t-counters", type=int, default=None)
    e.add_argument("--tester-c", type=float, default=estimators.TESTER_THRESHOLD)
    e.add_argument("--capacity-k", type=int, default=estimators.FALLBACK_CAPACITY)
    e.add_argument("--sidecar", default=None,
                   help="two-pass: where to persist pass-1 state (default <stream>.pass1.json)")
    e.add_argument("--no-trace", action="store_true")
    e.add_argument("--json", action="store_true", help="emit the full report as JSON")

    b = sub.add_parser("bench", help="run an experiment grid and emit a metrics table")
    b.add_argument("--kind", required=True,
                   choices=["uniform", "clustered", "example_hard", "bhm"])
    b.add_argument("--n", type=int, required=True)
    b.add_argument("--d", type=int, default=2)
    b.add_argument("--delta", type=int, default=1024)
    b.add_argument("--f", type=float, default=1.0)
    b.add_argument("--deletion-rate", type=float, default=0.0)
    b.add_argument("--order", choices=["given", "shuffled"], default="given")
    b.add_argument("--algos", default="two-pass,one-pass,offline")
    b.add_argument("--seeds", type=int, default=5)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--m", type=int, default=None)
    b.add_argument("--gamma", type=float, default=None)
    b.add_argument("--capacity-k", type=int, default=estimators.FALLBACK_CAPACITY)
    b.add_argument("--out", default=None, help="CSV row output")
    b.add_argument("--json-out", default=None, help="JSON summary output")
    return p


def _emit(obj: dict, path: str | None) -> None:
    text = json.dumps(obj, sort_keys=True)
    if path:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def _cmd_gen(args) -> int:
    spec = harness.GeneratorSpec(
        kind=args.kind, n=args.n, d=args.d, delta=args.delta, f=args.f,
        seed=args.seed, order=args.order, deletion_rate=args.deletion_rate,
        params={"clusters": args.clusters,
                "radius": args.radius if args.radius is not None else args.delta / 100.0,
                "answer": args.answer},
    )
    stream, ann = harness.make_stream(spec)
    write_stream(stream, args.output)
    if args.annotations:
        _emit({"spec": vars(args) | {"command": "gen"}, "annotations": ann},
              args.annotations)
    if args.verbose:
        print(f"wrote {len(stream)} updates to {args.output}", file=sys.stderr)
    return 0


def _cmd_oracle(args) -> int:
    stream = read_stream(args.stream)
    live = stream.live_points()
    inst = stream.instance
    lines = [json.dumps({"type": "instance", "d": inst.d, "delta": inst.delta,
                         "f": inst.f, "points": int(live.shape[0])}, sort_keys=True)]
    if live.shape[0]:
        rp = oracle.compute_rp(live.astype(np.float64), inst.f)
        mp = oracle.mp_facilities(live.astype(np.float64), inst.f, rp)
        for row, r in zip(live, rp):
            lines.append(json.dumps(
                {"type": "point", "point": [int(c) for c in row], "r_p": float(r)},
                sort_keys=True))
        lines.append(json.dumps({
            "type": "mp",
            "facilities": [[int(c) for c in live[i]] for i in mp.facility_indices],
            "cost": mp.cost,
            "connection_cost": mp.connection_cost,
            "opening_cost": mp.opening_cost,
        }, sort_keys=True))
        lines.append(json.dumps({
            "type": "summary", "sum_rp": float(rp.sum()), "mp_cost": mp.cost,
        }, sort_keys=True))
    else:
        lines.append(json.dumps({"type": "summary", "sum_rp": 0.0, "mp_cost": 0.0},
                                sort_keys=True))
    text = "\n".join(lines) + "\n"
    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def _cmd_hash_verify(args) -> int:
    h = make_hash(args.construction, args.d, args.ell, args.gamma, args.seed)
    report = verify_hash(h, trials=args.trials, rng_seed=args.seed)
    report["seed"] = args.seed
    print(json.dumps(report, sort_keys=True))
    ok = report["max_same_bucket_distance"] <= args.ell * (1 + 1e-9) and (
        report["max_cluster_buckets"] <= report["lambda_bound"]
    )
    return 0 if ok else 2


def _require_regular_file(path: str, why: str) -> None:
    if path == "-":
        raise UsageError(why)
    try:
        mode = os.stat(path).st_mode
    except OSError as exc:
        raise UsageError(f"cannot stat stream file: {exc}") from exc
    if not stat.S_ISREG(mode):
        raise UsageError(why)


def _cmd_estimate(args) -> int:
    if args.algo == "two-pass":
        _require_regular_file(
            args.stream,
            "two-pass needs a replayable stream: supply a regular file, not a pipe",
        )
    stream = read_stream(args.stream)
    t0 = time.perf_counter()
    if args.algo == "two-pass":
        state, space = estimators.two_pass_pass1(
            stream, m=args.m, seed=args.seed, backend=args.backend)
        sidecar = args.sidecar or args.stream + ".pass1.json"
        with open(sidecar, "w", encoding="utf-8") as fh:
            json.dump(state.to_dict(), fh, sort_keys=True)
        with open(sidecar, "r", encoding="utf-8") as fh:
            state = estimators.PassOneState.from_dict(json.load(fh))
        report = estimators.two_pass_pass2(stream, state)
        report.space_bytes = space
        report.config = {"m": state.m, "backend": args.backend,
                         "level_count": state.level_count, "sidecar": sidecar}
        if args.no_trace:
            report.sample_trace = []
    elif args.algo == "random-order":
        report = estimators.random_order_estimate(
            stream, m=args.m, seed=args.seed, backend=args.backend,
            trace=not args.no_trace)
    elif args.algo == "one-pass":
        report = estimators.one_pass_estimate(
            stream, gamma=args.gamma, seed=args.seed, m=args.m,
            t_counters=args.t_counters, tester_c=args.tester_c,
            fallback_capacity=args.capacity_k, backend=args.backend)
    else:  # offline
        live = stream.live_points()
        est = oracle.sum_rp(live.astype(np.float64), stream.instance.f) if live.shape[0] else 0.0
        report = estimators.EstimateReport(algo="offline", estimate=est, seed=args.seed)
    report.timing = {"wall_time_s": time.perf_counter() - t0,
                     "timestamp": time.time()}
    payload = report.to_dict()
    payload["cli_config"] = {
        "algo": args.algo, "stream": args.stream, "gamma": args.gamma,
        "m": args.m, "seed": args.seed, "backend": args.backend,
    }
    if args.json:
        timing = payload.pop("timing")
        body = json.dumps(payload, sort_keys=True)
        merged = json.loads(body)
        merged["timing"] = timing
        print(json.dumps(merged, sort_keys=True))
    else:
        print(f"{args.algo} estimate: {report.estimate}")
    return 0 if report.reliable else 2


def _cmd_bench(args) -> int:
    spec = harness.GeneratorSpec(
        kind=args.kind, n=args.n, d=args.d, delta=args.delta, f=args.f,
        seed=args.seed, order=args.order, deletion_rate=args.deletion_rate,
    )
    algos = [a.strip() for a in args.algos.split(",") if a.strip()]
    seeds = [args.seed + i for i in range(args.seeds)]
    rows = harness.run_experiment(
        [spec], algos, seeds,
        est_kwargs={"m": args.m, "gamma": args.gamma,
                    "fallback_capacity": args.capacity_k},
    )
    summary = harness.aggregate(rows)
    if args.out:
        with open(args.out, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
            writer.writeheader()
            writer.writerows(rows)
    if args.json_out:
        _emit({"config": vars(args) | {"command": "bench"}, "summary": summary},
              args.json_out)
    for s in summary:
        print(json.dumps(s, sort_keys=True))
    unreliable = any(not r["reliable"] for r in rows)
    return 2 if unreliable else 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    try:
        if args.command == "gen":
            return _cmd_gen(args)
        if args.command == "oracle":
            return _cmd_oracle(args)
        if args.command == "hash-verify":
            return _cmd_hash_verify(args)
        if args.command == "estimate":
            return _cmd_estimate(args)
        if args.command == "bench":
            return _cmd_bench(args)
        raise UsageError(f"unknown command {args.command!r}")
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (StreamFormatError, harness.GenerationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
