"""Command-line front end: analyze, simulate, and benchmark subcommands.

Exit codes: 0 success, 2 invalid input or configuration, 1 internal error.
All output files are written atomically (temp file + rename).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import data as dio
from .errors import ValidationError
from .pipeline import PipelineConfig, results_table_text, run_mediation, run_naive, run_summary_dict
from .simulate import METHODS, SimConfig, benchmark_table_text, gen_dataset, run_benchmark

log = logging.getLogger("scmediate")


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=0, help="random seed")
    parser.add_argument(
        "--threads", type=int, default=os.cpu_count() or 1, help="worker threads for per-gene fits"
    )
    parser.add_argument("--out", required=True, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scmediate",
        description="Mediation analysis for zero-inflated single-cell expression data",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    fmt = argparse.ArgumentDefaultsHelpFormatter

    pa = sub.add_parser("analyze", help="run the screened mediation pipeline", formatter_class=fmt)
    pa.add_argument("--expr", help="expression file: coordinate matrix (with --features/--cells-map) or long format")
    pa.add_argument("--features", help="gene-id list, one per line (coordinate input)")
    pa.add_argument("--cells-map", help="cell-id / subject-id two-column table (coordinate input)")
    pa.add_argument("--summaries", help="precomputed subject-level summaries table")
    pa.add_argument("--pheno", required=True, help="tab-separated phenotype table; first column is the subject id")
    pa.add_argument("--outcome-col", required=True, help="phenotype column for the outcome")
    pa.add_argument("--exposure-col", required=True, help="phenotype column for the exposure")
    pa.add_argument("--covar-cols", default="", help="comma-separated covariate columns")
    pa.add_argument("--min-cells", type=int, default=30, help="drop subjects with fewer cells")
    pa.add_argument("--min-subject-frac", type=float, default=0.05, help="keep genes expressed in at least this fraction of subjects")
    pa.add_argument("--max-zero-frac", type=float, default=0.90, help="drop genes with more than this zero fraction")
    pa.add_argument("--clamp-lo", type=float, default=0.001, help="lower clamp for the expressed fraction")
    pa.add_argument("--clamp-hi", type=float, default=0.999, help="upper clamp for the expressed fraction")
    pa.add_argument("--fdr", type=float, default=0.05, help="FDR level for significance calls")
    pa.add_argument("--k-top", type=int, default=None, help="marginal family size; default ceil(n / ln n)")
    pa.add_argument("--cv-folds", type=int, default=10, help="cross-validation folds for the penalty")
    pa.add_argument("--grid-size", type=int, default=100, help="penalty grid size")
    pa.add_argument("--joint-bh", action="store_true", help="adjust both pathway families jointly")
    pa.add_argument("--naive", action="store_true", help="run the per-gene comparator instead of the screened pipeline")
    _add_common(pa)

    ps = sub.add_parser("simulate", help="generate synthetic datasets", formatter_class=fmt)
    ps.add_argument("--n", type=int, default=200, help="subjects")
    ps.add_argument("--genes", type=int, default=10000, help="genes")
    ps.add_argument("--cells", type=int, default=40, help="cells per subject")
    ps.add_argument("--replicates", type=int, default=1, help="datasets to generate")
    ps.add_argument("--null", action="store_true", help="zero out every effect")
    _add_common(ps)

    pb = sub.add_parser("benchmark", help="compare methods on simulated data", formatter_class=fmt)
    pb.add_argument("--n", type=int, default=200, help="subjects")
    pb.add_argument("--genes", type=int, default=10000, help="genes")
    pb.add_argument("--cells", type=int, default=40, help="cells per subject")
    pb.add_argument("--replicates", type=int, default=20, help="replicates per configuration")
    pb.add_argument("--methods", default=",".join(METHODS), help="comma-separated methods to run")
    pb.add_argument("--fdr", type=float, default=0.05, help="FDR level for significance calls")
    pb.add_argument("--null", action="store_true", help="zero out every effect")
    _add_common(pb)
    return parser


def _pipeline_config(args: argparse.Namespace) -> PipelineConfig:
    return PipelineConfig(
        fdr_level=args.fdr,
        k_top=getattr(args, "k_top", None),
        seed=args.seed,
        threads=args.threads,
        joint_bh=getattr(args, "joint_bh", False),
        lasso_grid_size=getattr(args, "grid_size", 100),
        cv_folds=getattr(args, "cv_folds", 10),
    )


def cmd_analyze(args: argparse.Namespace) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    covars = [c for c in args.covar_cols.split(",") if c]
    pheno = dio.load_phenotypes(args.pheno, args.outcome_col, args.exposure_col, covars)

    counts: dict[str, int] = {}
    t0 = time.perf_counter()
    if args.summaries:
        summaries = dio.load_summaries(args.summaries, args.clamp_lo, args.clamp_hi)
        known = set(pheno.subject_ids)
        missing = set(summaries.subject_ids) - known
        if missing:
            raise ValidationError(f"summaries contain subjects without phenotypes: {sorted(missing)[:5]}")
        have = set(summaries.subject_ids)
        pheno = pheno.subset(np.array([s in have for s in pheno.subject_ids]))
        summaries = summaries.align(pheno.subject_ids)
    else:
        if not args.expr:
            raise ValidationError("provide --expr (with --features/--cells-map for coordinate input) or --summaries")
        if args.features or args.cells_map:
            if not (args.features and args.cells_map):
                raise ValidationError("coordinate input needs both --features and --cells-map")
            expr = dio.load_expression(args.expr, args.features, args.cells_map)
        else:
            expr = dio.load_expression_long(args.expr)
        n_subj0, n_gene0 = pheno.n_subjects, expr.n_genes
        expr, pheno = dio.filter_subjects(expr, pheno, args.min_cells)
        expr = dio.filter_genes(expr, pheno, args.min_subject_frac, args.max_zero_frac)
        counts["subjects_removed"] = n_subj0 - pheno.n_subjects
        counts["genes_removed"] = n_gene0 - expr.n_genes
        summaries = dio.aggregate(expr, pheno, args.clamp_lo, args.clamp_hi)
    load_seconds = time.perf_counter() - t0

    config = _pipeline_config(args)
    runner = run_naive if args.naive else run_mediation
    report = runner(summaries, pheno, config)

    summary = run_summary_dict(report)
    summary["counts"].update(counts)
    summary["timings_seconds"]["load"] = round(load_seconds, 6)
    summary["inputs"] = {
        "pheno": args.pheno,
        "expr": args.expr,
        "summaries": args.summaries,
        "outcome_col": args.outcome_col,
        "exposure_col": args.exposure_col,
        "covar_cols": covars,
        "min_cells": args.min_cells,
        "min_subject_frac": args.min_subject_frac,
        "max_zero_frac": args.max_zero_frac,
        "clamp": [args.clamp_lo, args.clamp_hi],
    }
    _atomic_write(out_dir / "results.tsv", results_table_text(report))
    _atomic_write(out_dir / "run_summary.json", json.dumps(summary, indent=2) + "\n")
    print(f"significant records: {summary['n_significant']}")
    return 0


def _sim_config(args: argparse.Namespace) -> SimConfig:
    kwargs = dict(
        n_subjects=args.n,
        n_genes=args.genes,
        cells_per_subject=args.cells,
        replicates=args.replicates,
        seed=args.seed,
    )
    return SimConfig.null(**kwargs) if args.null else SimConfig(**kwargs)


def cmd_simulate(args: argparse.Namespace) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    config = _sim_config(args)
    for rep in range(config.replicates):
        summaries, pheno, truth = gen_dataset(config, rep)
        tag = f"rep{rep:03d}"
        tmp = out_dir / f"summaries_{tag}.tsv.tmp"
        dio.write_summaries(summaries, tmp)
        os.replace(tmp, out_dir / f"summaries_{tag}.tsv")
        pheno_lines = ["subject_id\toutcome\texposure"]
        for i, s in enumerate(pheno.subject_ids):
            pheno_lines.append(f"{s}\t{pheno.outcome[i]:.10g}\t{pheno.exposure[i]:.10g}")
        _atomic_write(out_dir / f"phenotypes_{tag}.tsv", "\n".join(pheno_lines) + "\n")
        truth_lines = ["gene\tpathway"]
        for gene in sorted(truth.mean_genes):
            truth_lines.append(f"{gene}\tM")
        for gene in sorted(truth.frac_genes):
            truth_lines.append(f"{gene}\tF")
        _atomic_write(out_dir / f"truth_{tag}.tsv", "\n".join(truth_lines) + "\n")
    print(f"wrote {config.replicates} replicate(s) to {out_dir}")
    return 0


def cmd_benchmark(args: argparse.Namespace) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    methods = tuple(m for m in args.methods.split(",") if m)
    config = _sim_config(args)
    pipe = PipelineConfig(fdr_level=args.fdr, seed=args.seed, threads=args.threads)
    reports = run_benchmark(config, methods=methods, pipeline_config=pipe)
    table = benchmark_table_text(config, reports)
    _atomic_write(out_dir / "benchmark.tsv", table)
    per_rep = {
        m: [
            {k: v for k, v in row.items()}
            for row in reports[m].per_replicate
        ]
        for m in reports
    }
    _atomic_write(out_dir / "benchmark_replicates.json", json.dumps(per_rep, indent=2) + "\n")
    print(table, end="")
    return 0


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {"analyze": cmd_analyze, "simulate": cmd_simulate, "benchmark": cmd_benchmark}
    try:
        return handlers[args.command](args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # internal failure
        print(f"internal error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
