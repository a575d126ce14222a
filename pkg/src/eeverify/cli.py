"""Command-line front end and benchmark harness.

Subcommands: ``verify`` one query, ``batch`` a whole input/eps grid into
records + summary + exit heatmaps, ``compare-algs`` the algorithm variants
side by side, ``sweep-threshold`` the accuracy/latency/robustness trade-off
across gate thresholds.  All reports are CSV/JSONL; nothing is plotted.

Exit codes for ``verify``: 0 SAFE, 1 UNSAFE, 2 UNKNOWN, 3 usage or IO error.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .network import (
    EENetwork,
    ExitHead,
    NetworkFormatError,
    infer,
    infer_batch,
    load_network,
)
from .queries import make_query
from .solver import SolverConfig
from .verify import ALGORITHMS, RunRecord, verify_vanilla

EXIT_SAFE, EXIT_UNSAFE, EXIT_UNKNOWN, EXIT_ERROR = 0, 1, 2, 3

_VERDICT_CODES = {"SAFE": EXIT_SAFE, "UNSAFE": EXIT_UNSAFE, "UNKNOWN": EXIT_UNKNOWN}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def fmt_num(x: float) -> str:
    """Report floats with 6 significant digits."""
    return format(float(x), ".6g")


def fmt_time(t: float) -> str:
    """Report times in seconds with 3 decimals."""
    return format(float(t), ".3f")


def exit_label(exit_id) -> str:
    return str(exit_id)


def _pool_width(args) -> int:
    if getattr(args, "threads", None):
        return max(1, args.threads)
    return max(1, int(os.environ.get("EEVERIFY_THREADS", "1")))


def _parse_clip(text: Optional[str]):
    if text is None:
        return None
    parts = text.split(",")
    if len(parts) != 2:
        raise UsageError("--clip expects LO,HI")
    lo, hi = float(parts[0]), float(parts[1])
    if lo > hi:
        raise UsageError("--clip range is empty")
    return (lo, hi)


def _parse_vector(text: str) -> np.ndarray:
    return np.asarray([float(v) for v in text.replace(",", " ").split()], dtype=np.float64)


def _read_input_arg(value: str) -> np.ndarray:
    if os.path.exists(value):
        with open(value, "r", encoding="utf-8") as fh:
            first = fh.readline().strip()
            try:
                return _parse_vector(first)
            except ValueError:
                second = fh.readline().strip()  # skip a header row
                return _parse_vector(second)
    return _parse_vector(value)


def read_inputs_csv(path: str, input_dim: int):
    """Input vectors, one per row; header row optional, trailing label optional."""
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(csv.reader(fh), start=1):
            if not raw or all(not c.strip() for c in raw):
                continue
            try:
                rows.append([float(c) for c in raw])
            except ValueError:
                if line_no == 1:
                    continue  # header
                raise UsageError(f"{path}:{line_no}: malformed input row")
    if not rows:
        raise UsageError(f"{path}: no input rows")
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise UsageError(f"{path}: rows have inconsistent lengths")
    width = widths.pop()
    if width == input_dim:
        return np.asarray(rows), None
    if width == input_dim + 1:
        arr = np.asarray(rows)
        labels = arr[:, -1].astype(int)
        return arr[:, :-1], labels
    raise UsageError(f"{path}: rows have {width} columns, expected {input_dim} (+ optional label)")


def _config_from_args(args, deadline=None) -> SolverConfig:
    return SolverConfig(
        delta=args.delta,
        max_subproblems=args.budget,
        deterministic=args.deterministic,
        method=args.method,
        deadline=deadline,
    )


def _run_one(net, x, eps, alg, args, clip, timeout=None) -> RunRecord:
    deadline = None if timeout is None else time.monotonic() + timeout
    cfg = _config_from_args(args, deadline)
    q = make_query(net, x, eps, clip)
    return ALGORITHMS[alg](q, cfg)


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------

def cmd_verify(args) -> int:
    net = load_network(args.net)
    x = _read_input_arg(args.input)
    clip = _parse_clip(args.clip)
    record = _run_one(net, x, args.eps, args.alg, args, clip, args.timeout_per_query)
    json.dump(record.to_json_dict(), sys.stdout)
    sys.stdout.write("\n")
    return _VERDICT_CODES[record.verdict.status.value]


# ---------------------------------------------------------------------------
# batch
# ---------------------------------------------------------------------------

@dataclass
class BatchEntry:
    index: int
    eps: float
    x: np.ndarray
    label: Optional[int]
    inference_exit: object
    record: RunRecord


class BatchReport:
    """Aggregation of a batch run: verdict counts and timing per eps, the
    overall robustness ratio, and inference-vs-verification exit heatmaps."""

    def __init__(self, net: EENetwork, entries):
        self.net = net
        self.entries = list(entries)

    @property
    def counts(self):
        out = {"SAFE": 0, "UNSAFE": 0, "UNKNOWN": 0}
        for e in self.entries:
            out[e.record.verdict.status.value] += 1
        return out

    def robustness(self) -> Optional[float]:
        c = self.counts
        denom = c["SAFE"] + c["UNSAFE"]
        return None if denom == 0 else c["SAFE"] / denom

    def _eps_rows(self):
        by_eps = {}
        for e in self.entries:
            by_eps.setdefault(e.eps, []).append(e)
        for eps in sorted(by_eps):
            group = by_eps[eps]
            row = {"eps": fmt_num(eps)}
            for verdict in ("SAFE", "UNSAFE", "UNKNOWN"):
                row[verdict.lower()] = sum(
                    1 for g in group if g.record.verdict.status.value == verdict
                )
            for verdict in ("SAFE", "UNSAFE"):
                times = [g.record.wall_time_s for g in group
                         if g.record.verdict.status.value == verdict]
                key = verdict.lower()
                row[f"mean_s_{key}"] = fmt_time(np.mean(times)) if times else ""
                row[f"std_s_{key}"] = fmt_time(np.std(times)) if times else ""
                row[f"median_s_{key}"] = fmt_time(np.median(times)) if times else ""
            denom = row["safe"] + row["unsafe"]
            row["robustness"] = fmt_num(row["safe"] / denom) if denom else ""
            yield row

    def write_summary(self, path) -> None:
        fields = ["eps", "safe", "unsafe", "unknown",
                  "mean_s_safe", "std_s_safe", "median_s_safe",
                  "mean_s_unsafe", "std_s_unsafe", "median_s_unsafe", "robustness"]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=fields)
            writer.writeheader()
            for row in self._eps_rows():
                writer.writerow(row)

    def heatmap(self, verdict: str):
        labels = [exit_label(k) for k in self.net.exit_ids()]
        index = {lab: i for i, lab in enumerate(labels)}
        mat = np.zeros((len(labels), len(labels)), dtype=int)
        for e in self.entries:
            if e.record.verdict.status.value != verdict:
                continue
            r = index[exit_label(e.inference_exit)]
            c = index[exit_label(e.record.verification_exit)]
            mat[r, c] += 1
        return labels, mat

    def write_heatmap(self, path, verdict: str) -> None:
        labels, mat = self.heatmap(verdict)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["inference_exit"] + labels)
            for lab, row in zip(labels, mat):
                writer.writerow([lab] + [int(v) for v in row])

    def write_records(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for e in self.entries:
                doc = {
                    "index": e.index,
                    "eps": e.eps,
                    "input": [float(v) for v in e.x],
                    "label": None if e.label is None else int(e.label),
                    "inference_exit": e.inference_exit,
                }
                doc.update(e.record.to_json_dict())
                fh.write(json.dumps(doc))
                fh.write("\n")


def run_batch(net, inputs, labels, eps_list, alg, args, clip, timeout) -> BatchReport:
    tasks = [(idx, eps) for eps in eps_list for idx in range(len(inputs))]

    def work(task):
        idx, eps = task
        x = inputs[idx]
        record = _run_one(net, x, eps, alg, args, clip, timeout)
        return BatchEntry(
            index=idx,
            eps=eps,
            x=x,
            label=None if labels is None else labels[idx],
            inference_exit=infer(net, x).exit_index,
            record=record,
        )

    width = _pool_width(args)
    if width == 1:
        entries = [work(t) for t in tasks]
    else:
        with ThreadPoolExecutor(max_workers=width) as pool:
            entries = list(pool.map(work, tasks))
    return BatchReport(net, entries)


def cmd_batch(args) -> int:
    net = load_network(args.net)
    inputs, labels = read_inputs_csv(args.inputs, net.input_dim)
    eps_list = [float(v) for v in args.eps_list.split(",")]
    clip = _parse_clip(args.clip)
    os.makedirs(args.out, exist_ok=True)
    report = run_batch(net, inputs, labels, eps_list, args.alg, args, clip,
                       args.timeout_per_query)
    report.write_records(os.path.join(args.out, "records.jsonl"))
    report.write_summary(os.path.join(args.out, "summary.csv"))
    report.write_heatmap(os.path.join(args.out, "heatmap_safe.csv"), "SAFE")
    report.write_heatmap(os.path.join(args.out, "heatmap_unsafe.csv"), "UNSAFE")
    return 0


# ---------------------------------------------------------------------------
# compare-algs
# ---------------------------------------------------------------------------

def cmd_compare_algs(args) -> int:
    net = load_network(args.net)
    inputs, _ = read_inputs_csv(args.inputs, net.input_dim)
    eps_list = [float(v) for v in args.eps_list.split(",")]
    algs = args.algs.split(",")
    for alg in algs:
        if alg not in ALGORITHMS:
            raise UsageError(f"unknown algorithm: {alg}")
    clip = _parse_clip(args.clip)

    rows = []
    for eps in eps_list:
        for idx, x in enumerate(inputs):
            group = {}
            for alg in algs:
                group[alg] = _run_one(net, x, eps, alg, args, clip,
                                      args.timeout_per_query)
            decided = {a: r.verdict.status.value for a, r in group.items()
                       if r.verdict.status.value != "UNKNOWN"}
            mismatch = ""
            if len(set(decided.values())) > 1:
                mismatch = ";".join(f"{a}={v}" for a, v in sorted(decided.items()))
            for alg in algs:
                rec = group[alg]
                rows.append({
                    "index": idx,
                    "eps": fmt_num(eps),
                    "algorithm": alg,
                    "verdict": rec.verdict.status.value,
                    "time_s": fmt_time(rec.wall_time_s),
                    "solver_calls": rec.solver_calls,
                    "subproblems": rec.subproblems_total,
                    "verdict_mismatch": mismatch,
                })
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
    return 0


# ---------------------------------------------------------------------------
# sweep-threshold
# ---------------------------------------------------------------------------

def _with_threshold(net: EENetwork, threshold: float) -> EENetwork:
    exits = tuple(
        ExitHead(h.after_layer, h.weights, h.bias, threshold) for h in net.exits
    )
    return EENetwork(net.input_dim, net.num_classes, net.layers, exits)


def _inference_layer_counts(net: EENetwork, X: np.ndarray) -> np.ndarray:
    exits, _ = infer_batch(net, X)
    counts = np.full(len(X), net.num_layers, dtype=float)
    for e, head in enumerate(net.exits):
        counts[exits == e] = head.after_layer + 1
    return counts


def cmd_sweep_threshold(args) -> int:
    net = load_network(args.net)
    inputs, labels = read_inputs_csv(args.inputs, net.input_dim)
    clip = _parse_clip(args.clip)
    thresholds = sorted({float(v) for v in args.thresholds.split(",")})
    for t in thresholds:
        if t <= 0.5:
            raise UsageError(f"threshold {t} rejected: must exceed 0.5")
        if t > 1.0:
            raise UsageError(f"threshold {t} rejected: must not exceed 1.0")
    if 1.0 not in thresholds:
        thresholds.append(1.0)  # the no-gates-fire reference point

    rows = []
    for t in thresholds:
        vanilla = t == 1.0
        net_t = _with_threshold(net, t)
        _, classes = infer_batch(net_t, inputs)
        layer_counts = _inference_layer_counts(net_t, inputs)
        counts = {"SAFE": 0, "UNSAFE": 0, "UNKNOWN": 0}
        times = []
        for x in inputs:
            deadline = (None if args.timeout_per_query is None
                        else time.monotonic() + args.timeout_per_query)
            cfg = _config_from_args(args, deadline)
            q = make_query(net_t, x, args.eps, clip)
            rec = (verify_vanilla if vanilla else ALGORITHMS[args.alg])(q, cfg)
            counts[rec.verdict.status.value] += 1
            times.append(rec.wall_time_s)
        denom = counts["SAFE"] + counts["UNSAFE"]
        rows.append({
            "threshold": fmt_num(t),
            "accuracy": "" if labels is None else fmt_num(np.mean(classes == labels)),
            "mean_inference_layers": fmt_num(np.mean(layer_counts)),
            "safe": counts["SAFE"],
            "unsafe": counts["UNSAFE"],
            "unknown": counts["UNKNOWN"],
            "robustness": fmt_num(counts["SAFE"] / denom) if denom else "",
            "mean_verification_time_s": fmt_time(np.mean(times)),
        })
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _add_solver_flags(p):
    p.add_argument("--delta", type=float, default=1e-4,
                   help="resolution floor: boxes thinner than this are abandoned")
    p.add_argument("--budget", type=int, default=1_000_000,
                   help="max subproblems per solver call")
    p.add_argument("--deterministic", action="store_true", default=True)
    p.add_argument("--method", choices=["ibp", "affine"], default="ibp",
                   help="bound propagation used for pruning")
    p.add_argument("--clip", default=None, help="data-domain clip range LO,HI")
    p.add_argument("--timeout-per-query", type=float, default=None,
                   help="per-query wall clock limit in seconds (maps to UNKNOWN)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="eeverify",
                     description="Local robustness verification for networks with early exits")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("verify", help="verify one input")
    p.add_argument("--net", required=True)
    p.add_argument("--input", required=True, help="path to a vector file, or inline comma floats")
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--alg", choices=sorted(ALGORITHMS), default="combined")
    _add_solver_flags(p)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("batch", help="verify an input file across eps values")
    p.add_argument("--net", required=True)
    p.add_argument("--inputs", required=True)
    p.add_argument("--eps-list", required=True)
    p.add_argument("--alg", choices=sorted(ALGORITHMS), default="combined")
    p.add_argument("--out", required=True)
    p.add_argument("--threads", type=int, default=None,
                   help="worker pool width (default: EEVERIFY_THREADS or 1)")
    _add_solver_flags(p)
    p.set_defaults(func=cmd_batch)

    p = sub.add_parser("compare-algs", help="run several algorithms on the same queries")
    p.add_argument("--net", required=True)
    p.add_argument("--inputs", required=True)
    p.add_argument("--eps-list", required=True)
    p.add_argument("--algs", required=True, help="comma list of algorithms")
    p.add_argument("--out", required=True)
    _add_solver_flags(p)
    p.set_defaults(func=cmd_compare_algs)

    p = sub.add_parser("sweep-threshold", help="metrics across uniform gate thresholds")
    p.add_argument("--net", required=True)
    p.add_argument("--inputs", required=True)
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--thresholds", required=True, help="comma floats, all > 0.5")
    p.add_argument("--alg", choices=sorted(ALGORITHMS), default="combined")
    p.add_argument("--out", required=True)
    _add_solver_flags(p)
    p.set_defaults(func=cmd_sweep_threshold)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_ERROR
    except (NetworkFormatError, OSError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
