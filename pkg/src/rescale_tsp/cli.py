"""Command-line surface: generate, heatmap, solve, eval, quality.

Every command validates its numeric arguments before touching any
file.  Randomness flows from one --seed per command; per-instance
seeds are derived by hashing the seed with the instance id, so results
do not depend on input ordering or thread scheduling.

Exit codes: 0 success, 2 argument error, 3 input-format error,
4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

from .errors import FormatError, NumericError, PairingError
from .gcn import (
    export_heatmap_csv,
    forward,
    heatmap_from_csv,
    inverse_distance_heatmap,
    load_weights,
)
from .instances import (
    Instance,
    LabeledInstance,
    generate_uniform,
    load_instance,
    load_labeled,
    load_tsplib,
    save_instance,
    save_labeled,
)
from .metrics import (
    evaluate_run,
    heatmap_quality,
    report_to_csv,
    report_to_json,
)
from .rbs import Budget, SolveConfig, solve_many
from .rng import derive_seed
from .subgraph import build_knn, rescale

THREADS_ENV = "RESCALE_TSP_THREADS"


class BudgetSpec:
    """A budget string, resolvable per instance size.

    wall:X is X seconds; wall:Xn scales X by the node count; iters:N
    is a fixed iteration count.  Validation happens at parse time.
    """

    def __init__(self, text: str):
        kind, sep, raw = text.partition(":")
        if not sep or kind not in ("wall", "iters"):
            raise ValueError(
                f"budget must look like wall:SECONDS, wall:Xn or iters:N, "
                f"got {text!r}"
            )
        self.kind = kind
        self.text = text
        self.per_node = False
        if kind == "iters":
            try:
                value = int(raw)
            except ValueError:
                raise ValueError(f"bad iteration count {raw!r}") from None
            Budget("iters", value)
            self.value = value
        else:
            if raw.endswith("n"):
                self.per_node = True
                raw = raw[:-1]
            try:
                value = float(raw)
            except ValueError:
                raise ValueError(f"bad wall budget {raw!r}") from None
            if value <= 0:
                raise ValueError("wall budget must be positive")
            self.value = value

    def resolve(self, n: int) -> Budget:
        if self.kind == "iters":
            return Budget("iters", self.value)
        return Budget("wall", self.value * n if self.per_node else self.value)


def thread_count(flag: int | None) -> int:
    """--threads flag, then the environment, then the logical cores."""
    if flag is not None:
        if flag < 1:
            raise ValueError("--threads must be at least 1")
        return flag
    env = os.environ.get(THREADS_ENV)
    if env is not None:
        try:
            value = int(env)
        except ValueError:
            raise ValueError(
                f"{THREADS_ENV} must be an integer, got {env!r}"
            ) from None
        if value < 1:
            raise ValueError(f"{THREADS_ENV} must be at least 1")
        return value
    return os.cpu_count() or 1


def _collect_instance_paths(specs: list[str]) -> list[str]:
    paths: list[str] = []
    for spec in specs:
        if os.path.isdir(spec):
            names = sorted(os.listdir(spec))
            found = [
                os.path.join(spec, nm)
                for nm in names
                if nm.endswith((".txt", ".tsp"))
            ]
            if not found:
                raise ValueError(f"no instance files under {spec!r}")
            paths.extend(found)
        elif os.path.isfile(spec):
            paths.append(spec)
        else:
            raise ValueError(f"no such instance path {spec!r}")
    return paths


def _load_instances(specs: list[str]) -> list[Instance]:
    out = []
    for path in _collect_instance_paths(specs):
        if path.endswith(".tsp"):
            out.append(load_tsplib(path))
        else:
            out.append(load_instance(path))
    return out


def _ensure_out_dir(path: str) -> None:
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise ValueError(f"cannot create output directory {path!r}: {exc}")


def _write_text(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def cmd_gen(args) -> int:
    if args.n < 3:
        raise ValueError("--n must be at least 3")
    if args.count < 1:
        raise ValueError("--count must be at least 1")
    _ensure_out_dir(args.out)
    for idx in range(args.count):
        ident = f"uniform-n{args.n}-s{args.seed}-{idx:04d}"
        inst = generate_uniform(
            args.n, seed=derive_seed(args.seed, ident), id=ident
        )
        save_instance(inst, os.path.join(args.out, f"{ident}.txt"))
    print(f"wrote {args.count} instances of {args.n} nodes to {args.out}")
    return 0


def cmd_heatmap(args) -> int:
    if args.k1 is not None and args.k1 < 2:
        raise ValueError("--k1 must be at least 2")
    instances = _load_instances(args.instances)
    weights = None
    if args.weights is not None:
        weights = load_weights(args.weights)
    else:
        print(
            "warning: no weights given, falling back to inverse-distance "
            "heats",
            file=sys.stderr,
        )
    _ensure_out_dir(args.out)
    for inst in instances:
        t0 = time.perf_counter()
        sub = build_knn(inst, k1=args.k1)
        if weights is None:
            hm = inverse_distance_heatmap(sub)
        else:
            sub = rescale(sub, inst)
            hm = forward(weights, sub, inst)
        out_path = os.path.join(args.out, f"{inst.id}.heatmap.csv")
        export_heatmap_csv(hm, out_path)
        ms = (time.perf_counter() - t0) * 1000
        print(
            f"{inst.id}: n={inst.n} k1={hm.k1} "
            f"rows={inst.n * (hm.k1 - 1)} {ms:.1f}ms"
        )
    return 0


def _paired_heatmap(inst: Instance, heatmap_dir: str):
    path = os.path.join(heatmap_dir, f"{inst.id}.heatmap.csv")
    if not os.path.isfile(path):
        raise PairingError(f"no heatmap file for instance {inst.id!r}")
    try:
        return heatmap_from_csv(path, inst.n)
    except FormatError as exc:
        raise PairingError(
            f"heatmap for {inst.id!r} does not match: {exc}"
        ) from exc


def cmd_solve(args) -> int:
    spec = BudgetSpec(args.budget)
    threads = thread_count(args.threads)
    if args.k2 is not None and args.k2 < 1:
        raise ValueError("--k2 must be at least 1")
    candidates = args.candidates
    if candidates is None:
        candidates = "heatmap" if args.heatmaps is not None else "knn"
    if candidates == "heatmap" and args.heatmaps is None:
        raise ValueError("--candidates heatmap needs --heatmaps")
    instances = _load_instances(args.instances)

    heatmaps = None
    if candidates == "heatmap":
        heatmaps = [_paired_heatmap(inst, args.heatmaps) for inst in instances]

    cfg = SolveConfig(
        k2=args.k2,
        seed=args.seed,
        accept=args.accept,
        trace=args.trace,
    )
    outcomes = solve_many(
        instances,
        heatmaps,
        cfg,
        threads=threads,
        budgets=[spec.resolve(inst.n) for inst in instances],
    )
    results = []
    labeled = []
    for inst, res in zip(instances, outcomes):
        row = dict(res.stats)
        if args.trace:
            row["trace"] = [[t, v] for t, v in res.trace]
        results.append(row)
        labeled.append(LabeledInstance(inst, res.tour))

    payload = {
        "command": "solve",
        "budget": args.budget,
        "seed": args.seed,
        "k2": args.k2,
        "candidates": candidates,
        "accept": args.accept,
        "results": results,
    }
    text = json.dumps(payload, indent=2) + "\n"
    if args.out is None:
        print(text, end="")
    else:
        _write_text(args.out, text)
    if args.emit_labeled is not None:
        save_labeled(labeled, args.emit_labeled)
    return 0


def _load_results(specs: list[str]) -> list[dict]:
    paths: list[str] = []
    for spec in specs:
        if os.path.isdir(spec):
            paths.extend(
                os.path.join(spec, nm)
                for nm in sorted(os.listdir(spec))
                if nm.endswith(".json")
            )
        elif os.path.isfile(spec):
            paths.append(spec)
        else:
            raise ValueError(f"no such results path {spec!r}")
    rows: list[dict] = []
    for path in paths:
        with open(path, "r", encoding="utf-8") as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise PairingError(f"{path}: not valid JSON ({exc})") from exc
        if isinstance(data, dict):
            data = data.get("results")
        if not isinstance(data, list):
            raise PairingError(f"{path}: no results array")
        rows.extend(data)
    return rows


def _load_optima(path: str) -> dict:
    """Reference lengths as a JSON object mapping instance id to length."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise PairingError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise PairingError(f"{path}: optima must map id to length")
    return {str(k): float(v) for k, v in data.items()}


def _emit_report(report: dict, out: str | None) -> None:
    if out is None:
        print(report_to_csv(report), end="")
    elif out.endswith(".json"):
        _write_text(out, report_to_json(report))
    else:
        _write_text(out, report_to_csv(report))


def cmd_eval(args) -> int:
    results = _load_results(args.results)
    optima = _load_optima(args.optima) if args.optima else {}
    report = evaluate_run(results, optima, mode=args.mode)
    _emit_report(report, args.out)
    return 0


QUALITY_COLUMNS = (
    "id", "n", "avg_rank", "avg_rank_directed", "missing_rate_topk",
    "k", "coverage",
)


def _quality_pairs(heatmap_dir: str, labeled: list[LabeledInstance]):
    """Pair heatmap files to labeled records by sorted file order.

    The labeled-dataset format stores no instance ids, so pairing is
    positional: the lexicographically sorted *.heatmap.csv files must
    line up one-to-one with the records.
    """
    if not os.path.isdir(heatmap_dir):
        raise ValueError(f"no such heatmap directory {heatmap_dir!r}")
    paths = sorted(
        os.path.join(heatmap_dir, nm)
        for nm in os.listdir(heatmap_dir)
        if nm.endswith(".heatmap.csv")
    )
    if len(paths) != len(labeled):
        raise PairingError(
            f"{len(paths)} heatmap files for {len(labeled)} labeled records"
        )
    for path, lab in zip(paths, labeled):
        try:
            hm = heatmap_from_csv(path, lab.instance.n)
        except FormatError as exc:
            raise PairingError(f"{path}: {exc}") from exc
        yield hm, lab


def cmd_quality(args) -> int:
    if args.k < 1:
        raise ValueError("--k must be at least 1")
    labeled = load_labeled(args.labeled)
    if not labeled:
        raise ValueError("labeled file holds no records")
    rows = []
    for hm, lab in _quality_pairs(args.heatmaps, labeled):
        q = heatmap_quality(hm, lab, k=min(args.k, hm.k1))
        rows.append(
            {
                "id": lab.instance.id,
                "n": lab.instance.n,
                "avg_rank": q.avg_rank,
                "avg_rank_directed": q.avg_rank_directed,
                "missing_rate_topk": q.missing_rate_topk,
                "k": q.k,
                "coverage": q.coverage,
            }
        )
    mean_row = {
        "id": "mean",
        "n": "",
        "k": rows[0]["k"],
    }
    for col in ("avg_rank", "avg_rank_directed", "missing_rate_topk",
                "coverage"):
        mean_row[col] = sum(r[col] for r in rows) / len(rows)

    if args.out is not None and args.out.endswith(".json"):
        _write_text(
            args.out,
            json.dumps({"rows": rows, "mean": mean_row}, indent=2) + "\n",
        )
        return 0
    lines = [",".join(QUALITY_COLUMNS)]
    for row in rows + [mean_row]:
        cells = []
        for col in QUALITY_COLUMNS:
            v = row[col]
            cells.append(f"{v:.12g}" if isinstance(v, float) else str(v))
        lines.append(",".join(cells))
    text = "\n".join(lines) + "\n"
    if args.out is None:
        print(text, end="")
    else:
        _write_text(args.out, text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rescale-tsp",
        description=__doc__.split("\n", 1)[0],
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate uniform instances")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("heatmap", help="write sparse heatmaps")
    p.add_argument("--instances", nargs="+", required=True)
    p.add_argument("--weights", default=None)
    p.add_argument("--k1", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_heatmap)

    p = sub.add_parser("solve", help="run the reconstruction search")
    p.add_argument("--instances", nargs="+", required=True)
    p.add_argument("--heatmaps", default=None)
    p.add_argument("--k2", type=int, default=None)
    p.add_argument("--budget", default="wall:0.05n")
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument(
        "--candidates", choices=("heatmap", "knn"), default=None
    )
    p.add_argument(
        "--accept", choices=("improving", "always"), default="improving"
    )
    p.add_argument("--trace", action="store_true")
    p.add_argument("--out", default=None)
    p.add_argument("--emit-labeled", default=None)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("eval", help="aggregate solve results into a report")
    p.add_argument("--results", nargs="+", required=True)
    p.add_argument("--optima", default=None)
    p.add_argument("--mode", choices=("uniform", "tsplib"), default="uniform")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("quality", help="score heatmaps against labels")
    p.add_argument("--heatmaps", required=True)
    p.add_argument("--labeled", required=True)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_quality)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except FormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
