"""Mediation analysis for zero-inflated single-cell expression data."""

from .data import (
    ExpressionMatrix,
    GeneSummaries,
    PhenotypeTable,
    aggregate,
    build_summaries,
    filter_genes,
    filter_subjects,
    load_expression,
    load_expression_long,
    load_phenotypes,
    load_summaries,
    write_summaries,
)
from .pipeline import (
    AnalysisReport,
    MediationRecord,
    PipelineConfig,
    ScreeningSets,
    bh_adjust,
    estimate_iie,
    fit_final_models,
    js_test,
    run_mediation,
    run_naive,
    screen,
)
from .regress import (
    CoefficientEstimate,
    DesignMatrix,
    LassoConfig,
    LassoFit,
    OlsFit,
    fit_lasso,
    fit_ols,
    wald_p,
)
from .simulate import MetricsReport, SimConfig, TruthSet, gen_dataset, run_benchmark, score

__version__ = "0.1.0"

__all__ = [
    "AnalysisReport",
    "CoefficientEstimate",
    "DesignMatrix",
    "ExpressionMatrix",
    "GeneSummaries",
    "LassoConfig",
    "LassoFit",
    "MediationRecord",
    "MetricsReport",
    "OlsFit",
    "PhenotypeTable",
    "PipelineConfig",
    "ScreeningSets",
    "SimConfig",
    "TruthSet",
    "aggregate",
    "bh_adjust",
    "build_summaries",
    "estimate_iie",
    "filter_genes",
    "filter_subjects",
    "fit_final_models",
    "fit_lasso",
    "fit_ols",
    "gen_dataset",
    "js_test",
    "load_expression",
    "load_expression_long",
    "load_phenotypes",
    "load_summaries",
    "run_benchmark",
    "run_mediation",
    "run_naive",
    "score",
    "screen",
    "wald_p",
    "write_summaries",
]
