"""Command-line front end: ingest, normalize, search, evaluate, grid."""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from . import normalization, search
from .datasets import DatasetLayout, load_ground_truth
from .errors import ValidationError, VitrieverError
from .metrics import Metric
from .normalization import NormalizationSpec, Scheme
from .runner import (
    DEFAULT_GRID_METRICS,
    DEFAULT_GRID_SCHEMES,
    DescriptorSet,
    GridSpec,
    evaluate_retrieval,
    run_grid,
)
from .store import STORE_MAGIC, read_store, read_text_listing, write_store


def _default_threads() -> int:
    raw = os.environ.get("VITRIEVER_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _parse_k(raw: str) -> int | None:
    if raw.strip().lower() == "full":
        return search.FULL
    try:
        value = int(raw)
    except ValueError:
        raise ValidationError(f"--k must be a positive integer or 'full', got {raw!r}")
    if value < 1:
        raise ValidationError(f"--k must be a positive integer or 'full', got {raw!r}")
    return value


def _parse_quantiles(raw: str) -> tuple[float, float]:
    parts = raw.split(",")
    if len(parts) != 2:
        raise ValidationError("--robust-quantiles expects '<low>,<high>'")
    try:
        return float(parts[0]), float(parts[1])
    except ValueError:
        raise ValidationError(f"unparseable --robust-quantiles value {raw!r}")


def _norm_spec(args: argparse.Namespace) -> NormalizationSpec:
    q_low, q_high = _parse_quantiles(args.robust_quantiles)
    return NormalizationSpec(
        scheme=Scheme.parse(args.norm),
        robust_q_low=q_low,
        robust_q_high=q_high,
        l1_signed_sum=getattr(args, "l1_signed_sum", False),
        l2_squared=getattr(args, "l2_squared", False),
    )


def _load_set(path: str) -> DescriptorSet:
    matrix, ids = read_store(path)
    return DescriptorSet(matrix, tuple(ids))


def _load_queries(arg: str | None) -> DescriptorSet | None:
    if arg is None or arg.upper() == "SAME":
        return None
    return _load_set(arg)


def _add_store_args(parser: argparse.ArgumentParser, with_queries: bool = True) -> None:
    parser.add_argument("--index", required=True, help="index descriptor store")
    if with_queries:
        parser.add_argument(
            "--queries",
            default=None,
            help="query descriptor store, or SAME to query the index with itself (default)",
        )


def _add_norm_args(parser: argparse.ArgumentParser, compat: bool = True) -> None:
    parser.add_argument(
        "--norm",
        default="none",
        help="normalization scheme: l1-axis1, l1-axis0, l2-axis1, l2-axis0, robust, none",
    )
    parser.add_argument(
        "--robust-quantiles",
        default="0.25,0.75",
        metavar="LOW,HIGH",
        help="quantile pair for robust scaling (default 0.25,0.75)",
    )
    if compat:
        parser.add_argument(
            "--l1-signed-sum",
            action="store_true",
            help="compatibility variant: L1 divides by the signed sum instead of sum of |x|",
        )
        parser.add_argument(
            "--l2-squared",
            action="store_true",
            help="compatibility variant: L2 omits the square root in the denominator",
        )


def _add_gt_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--layout",
        required=True,
        help="ground-truth layout: oxford, paris, holidays, ukbench, json",
    )
    parser.add_argument(
        "--gt",
        default=None,
        help="ground-truth directory (oxford/paris) or JSON file (json layout)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vitriever",
        description="Store, normalize, search and score global image descriptors.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_ingest = sub.add_parser("ingest", help="convert a text listing or store into a binary store")
    p_ingest.add_argument("input", help="text listing (<id> <v1> ... <vD> per line) or binary store")
    p_ingest.add_argument("--out", required=True, help="output store path")

    p_norm = sub.add_parser("normalize", help="fit a normalizer on a store and write the result")
    p_norm.add_argument("input", help="descriptor store to normalize")
    p_norm.add_argument("--out", required=True, help="output store path (float32)")
    p_norm.add_argument(
        "--sidecar",
        default=None,
        help="fitted-normalizer sidecar path (default: <out>.vitn)",
    )
    _add_norm_args(p_norm)

    p_search = sub.add_parser("search", help="rank index descriptors for each query")
    _add_store_args(p_search)
    p_search.add_argument("--metric", required=True, help="distance metric name")
    p_search.add_argument("--k", default="full", help="ranking depth, an integer or 'full'")
    p_search.add_argument(
        "--exclude-self", action="store_true", help="drop each query's own id from its ranking"
    )
    p_search.add_argument("--out", default=None, help="write '<query> <rank> <id> <distance>' lines here")
    p_search.add_argument("--threads", type=int, default=_default_threads())
    _add_norm_args(p_search)

    p_eval = sub.add_parser("evaluate", help="run one normalization+metric cell and score it")
    _add_store_args(p_eval)
    _add_gt_args(p_eval)
    p_eval.add_argument("--metric", required=True, help="distance metric name")
    p_eval.add_argument("--k", default="full", help="ranking depth, an integer or 'full'")
    p_eval.add_argument("--out", default=None, help="write the machine-readable report here")
    p_eval.add_argument("--threads", type=int, default=_default_threads())
    _add_norm_args(p_eval)

    p_grid = sub.add_parser("grid", help="sweep normalization schemes x metrics and tabulate")
    _add_store_args(p_grid)
    _add_gt_args(p_grid)
    p_grid.add_argument("--model-label", default="model", help="label for the report block")
    p_grid.add_argument(
        "--norms",
        default=None,
        help="comma-separated scheme subset (default: the five grid schemes)",
    )
    p_grid.add_argument(
        "--metrics",
        default=None,
        help="comma-separated metric subset (default: all seven)",
    )
    p_grid.add_argument(
        "--robust-quantiles", default="0.25,0.75", metavar="LOW,HIGH",
        help="quantile pair for robust scaling (default 0.25,0.75)",
    )
    p_grid.add_argument("--k", default="full", help="ranking depth, an integer or 'full'")
    p_grid.add_argument("--out", default=None, help="write the text table here")
    p_grid.add_argument("--csv", default=None, help="write per-cell CSV here")
    p_grid.add_argument("--threads", type=int, default=_default_threads())
    p_grid.add_argument(
        "--parallel-cells", type=int, default=1, help="evaluate this many grid cells concurrently"
    )
    return parser


def _cmd_ingest(args: argparse.Namespace) -> int:
    with open(args.input, "rb") as fh:
        is_binary = fh.read(4) == STORE_MAGIC
    if is_binary:
        matrix, ids = read_store(args.input)
    else:
        matrix, ids = read_text_listing(args.input)
    write_store(matrix, ids, args.out)
    print(f"ingested {matrix.count} descriptors of dimension {matrix.dim} -> {args.out}")
    return 0


def _cmd_normalize(args: argparse.Namespace) -> int:
    matrix, ids = read_store(args.input)
    spec = _norm_spec(args)
    normalizer = normalization.fit(spec, matrix)
    normalized, degenerate = normalization.apply(normalizer, matrix)
    write_store(normalized, ids, args.out)
    sidecar = args.sidecar or f"{args.out}.vitn"
    normalization.save_normalizer(normalizer, sidecar)
    if degenerate:
        print(f"warning: {degenerate} degenerate rows/columns passed through unscaled", file=sys.stderr)
    print(f"normalized {matrix.count} descriptors ({spec.scheme.value}) -> {args.out}")
    print(f"fitted normalizer -> {sidecar}")
    return 0


def _cmd_search(args: argparse.Namespace) -> int:
    index = _load_set(args.index)
    queries = _load_queries(args.queries)
    metric = Metric.parse(args.metric)
    k = _parse_k(args.k)
    spec = _norm_spec(args)

    normalizer = normalization.fit(spec, index.matrix)
    index_norm, degenerate = normalization.apply(normalizer, index.matrix)
    if queries is None:
        query_set = DescriptorSet(index_norm, index.ids)
    else:
        queries_norm, q_deg = normalization.apply(normalizer, queries.matrix)
        degenerate += q_deg
        query_set = DescriptorSet(queries_norm, queries.ids)
    if degenerate:
        print(f"warning: {degenerate} degenerate rows/columns passed through unscaled", file=sys.stderr)

    exclusions = None
    if args.exclude_self:
        exclusions = {qid: frozenset((qid,)) for qid in query_set.ids}
    rankings = search.batch_search(
        query_set.matrix,
        query_set.ids,
        index_norm,
        index.ids,
        metric,
        k=k,
        exclusions=exclusions,
        threads=args.threads,
    )
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            search.write_ranked_lists(rankings, fh)
        print(f"wrote {sum(len(r.entries) for r in rankings)} ranked entries -> {args.out}")
    else:
        search.write_ranked_lists(rankings, sys.stdout)
    return 0


def _cmd_evaluate(args: argparse.Namespace) -> int:
    index = _load_set(args.index)
    queries = _load_queries(args.queries)
    layout = DatasetLayout.parse(args.layout)
    gt = load_ground_truth(layout, args.gt, index.ids)
    metric = Metric.parse(args.metric)
    spec = _norm_spec(args)
    k = _parse_k(args.k)

    outcome = evaluate_retrieval(
        index, gt, metric, spec, queries=queries, k=k, threads=args.threads
    )
    if outcome.degenerate_normalizations:
        print(
            f"warning: {outcome.degenerate_normalizations} degenerate rows/columns "
            "passed through unscaled",
            file=sys.stderr,
        )
    print(outcome.report.to_table())
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            outcome.report.write(fh)
        print(f"wrote report -> {args.out}")
    return 0


def _cmd_grid(args: argparse.Namespace) -> int:
    index = _load_set(args.index)
    queries = _load_queries(args.queries)
    layout = DatasetLayout.parse(args.layout)
    gt = load_ground_truth(layout, args.gt, index.ids)
    q_low, q_high = _parse_quantiles(args.robust_quantiles)
    schemes = DEFAULT_GRID_SCHEMES
    if args.norms:
        schemes = tuple(Scheme.parse(tok) for tok in args.norms.split(","))
    metrics = DEFAULT_GRID_METRICS
    if args.metrics:
        metrics = tuple(Metric.parse(tok) for tok in args.metrics.split(","))
    grid = GridSpec(
        schemes=schemes,
        metrics=metrics,
        model_label=args.model_label,
        robust_q_low=q_low,
        robust_q_high=q_high,
    )

    result = run_grid(
        index,
        gt,
        grid,
        queries=queries,
        k=_parse_k(args.k),
        threads=args.threads,
        parallel_cells=args.parallel_cells,
    )
    text = result.to_text()
    print(text)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    if args.csv:
        Path(args.csv).write_text(result.to_csv(), encoding="utf-8")
    if result.failed:
        print("error: one or more grid cells failed", file=sys.stderr)
        return 1
    return 0


_COMMANDS = {
    "ingest": _cmd_ingest,
    "normalize": _cmd_normalize,
    "search": _cmd_search,
    "evaluate": _cmd_evaluate,
    "grid": _cmd_grid,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except VitrieverError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
