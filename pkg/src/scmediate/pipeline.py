"""Three-step mediation analysis plus the per-gene naive comparator.

Step I screens candidate genes by combining a penalized outcome fit over all
gene terms with per-gene marginal exposure models, keeping the top
ceil(n / ln n) exposure |t| statistics per family. Step II refits the reduced
outcome model and per-gene mediator models and multiplies the two pathway
coefficients into an indirect effect per unit exposure change. Step III takes
the maximum of the two coefficient p-values and applies Benjamini-Hochberg
control within each pathway family.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from .data import GeneSummaries, PhenotypeTable
from .errors import (
    DegenerateExposure,
    KeyMismatch,
    OutOfRange,
    RankDeficient,
    ValidationError,
)
from .regress import (
    CoefficientEstimate,
    DesignMatrix,
    LassoConfig,
    OlsFit,
    fit_lasso,
    fit_ols,
)

INTERCEPT = "intercept"
EXPOSURE = "exposure"
PATHWAY_MEAN = "M"
PATHWAY_FRAC = "F"

RESULT_COLUMNS = (
    "gene",
    "pathway",
    "beta_outcome",
    "se_outcome",
    "p_outcome",
    "coef_exposure",
    "se_exposure",
    "p_exposure",
    "iie",
    "p_max",
    "q_bh",
    "significant",
    "imputed_frac",
)


@dataclass(frozen=True)
class PipelineConfig:
    """Settings for a screened or naive mediation run."""

    fdr_level: float = 0.05
    k_top: int | None = None
    seed: int = 0
    threads: int = 1
    joint_bh: bool = False
    robust_se: bool = False
    lasso_grid_size: int = 100
    lasso_min_ratio: float = 1e-3
    cv_folds: int = 10

    def __post_init__(self):
        if not 0 < self.fdr_level < 1:
            raise ValidationError("fdr_level must lie in (0, 1)")
        if self.k_top is not None and self.k_top < 1:
            raise ValidationError("k_top must be positive")
        if self.threads < 1:
            raise ValidationError("threads must be >= 1")

    def lasso(self) -> LassoConfig:
        return LassoConfig(
            grid_size=self.lasso_grid_size,
            lambda_min_ratio=self.lasso_min_ratio,
            cv_folds=self.cv_folds,
            seed=self.seed,
        )


@dataclass(frozen=True)
class ScreeningSets:
    """Gene sets produced by Step I and the term-inclusion flags they imply."""

    genes_outcome: frozenset[str]  # penalized outcome fit kept a term of the gene
    genes_mean: frozenset[str]  # top-k marginal exposure effect on log mean expression
    genes_frac: frozenset[str]  # top-k marginal exposure effect on logit expressed fraction
    selected: tuple[str, ...]  # final candidates, in gene order
    mean_terms: frozenset[str]
    frac_terms: frozenset[str]
    k_top: int

    def __post_init__(self):
        expected = (self.genes_outcome & self.genes_mean) | (
            self.genes_outcome & self.genes_frac
        )
        if set(self.selected) != expected:
            raise ValidationError("selected genes violate the screening set identity")
        if self.mean_terms != set(self.selected) & self.genes_mean:
            raise ValidationError("mean-term flags violate the screening set identity")
        if self.frac_terms != set(self.selected) & self.genes_frac:
            raise ValidationError("frac-term flags violate the screening set identity")
        if len(self.genes_mean) > self.k_top or len(self.genes_frac) > self.k_top:
            raise ValidationError("marginal families exceed k_top")


@dataclass(frozen=True)
class MediationRecord:
    """One tested gene-pathway indirect effect."""

    gene: str
    pathway: str  # "M" (mean expression) or "F" (expressed fraction)
    beta_outcome: CoefficientEstimate
    coef_exposure: CoefficientEstimate
    iie: float
    p_max: float
    q_bh: float
    significant: bool
    imputed_frac: float


@dataclass(frozen=True)
class AnalysisReport:
    """Full result of one analysis run."""

    method: str
    records: tuple[MediationRecord, ...]
    direct_effect: CoefficientEstimate
    screening: ScreeningSets | None
    config: dict
    timings: dict[str, float]
    counts: dict[str, int]
    n_subjects: int
    n_genes: int


def default_k_top(n: int) -> int:
    """Screening family size ceil(n / ln n)."""
    return math.ceil(n / math.log(n))


def js_test(p_outcome: float, p_exposure: float) -> float:
    """Joint-significance p-value: the larger of the two component p-values."""
    for p in (p_outcome, p_exposure):
        if not 0 <= p <= 1:
            raise OutOfRange(f"p-value {p} outside [0, 1]")
    return max(p_outcome, p_exposure)


def bh_adjust(p_values) -> np.ndarray:
    """Benjamini-Hochberg step-up adjusted p-values, in input order.

    Ties are broken by a stable sort; adjusted values are capped at 1 and
    monotonized from the largest p downward.
    """
    p = np.asarray(p_values, dtype=np.float64)
    if p.size == 0:
        return p.copy()
    if p.min() < 0 or p.max() > 1:
        raise OutOfRange("p-values must lie in [0, 1]")
    m = p.size
    order = np.argsort(p, kind="stable")
    ranked = p[order] * m / np.arange(1, m + 1)
    q_sorted = np.minimum(np.minimum.accumulate(ranked[::-1])[::-1], 1.0)
    out = np.empty(m)
    out[order] = q_sorted
    return out


def _map_indexed(fn: Callable[[int], object], n: int, threads: int) -> list:
    """Apply ``fn`` to 0..n-1, optionally across threads; order-stable output."""
    if threads <= 1 or n < 64:
        return [fn(i) for i in range(n)]
    results: list = [None] * n
    chunks = [c for c in np.array_split(np.arange(n), threads * 4) if len(c)]

    def run(chunk: np.ndarray) -> list[tuple[int, object]]:
        return [(int(i), fn(int(i))) for i in chunk]

    with ThreadPoolExecutor(max_workers=threads) as pool:
        for fut in [pool.submit(run, c) for c in chunks]:
            for i, res in fut.result():
                results[i] = res
    return results


def _base_design(pheno: PhenotypeTable) -> DesignMatrix:
    names = [INTERCEPT, EXPOSURE, *pheno.covariate_names]
    if len(set(names)) != len(names) or any(
        c.startswith(("M:", "F:")) for c in pheno.covariate_names
    ):
        raise ValidationError("covariate names collide with reserved design terms")
    cols = [np.ones(pheno.n_subjects), pheno.exposure]
    for j in range(len(pheno.covariate_names)):
        cols.append(pheno.covariates[:, j])
    return DesignMatrix(terms=tuple(names), values=np.column_stack(cols))


def _exposure_abs_t(design: DesignMatrix, y: np.ndarray) -> float:
    fit = fit_ols(design, y)
    est = fit.estimates[1]
    se = fit.std_errors[1]
    if se == 0.0:
        return math.inf if est != 0.0 else 0.0
    return abs(est) / se


def _top_k_genes(stats: np.ndarray, eligible: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest statistics; ties resolved by lower gene index."""
    masked = np.where(eligible, stats, -np.inf)
    order = np.lexsort((np.arange(masked.size), -masked))
    order = order[masked[order] > -np.inf]
    return np.sort(order[:k])


def screen(
    summaries: GeneSummaries, pheno: PhenotypeTable, config: PipelineConfig
) -> ScreeningSets:
    """Step I: penalized outcome selection intersected with marginal top-k sets."""
    n = pheno.n_subjects
    if n < 20:
        raise DegenerateExposure(f"need at least 20 subjects, have {n}")
    if np.unique(pheno.exposure).size < 2:
        raise DegenerateExposure("exposure takes a single value")
    k_top = config.k_top if config.k_top is not None else default_k_top(n)

    base = _base_design(pheno)
    xbase = base.values
    genes = summaries.gene_ids
    g_count = len(genes)
    log_mean = summaries.log_mean
    logit_frac = summaries.logit_frac
    degenerate = summaries.degenerate_frac

    def marginal(g: int) -> tuple[float, float]:
        t_mean = _exposure_abs_t(base, log_mean[:, g])
        t_frac = 0.0 if degenerate[g] else _exposure_abs_t(base, logit_frac[:, g])
        return t_mean, t_frac

    stats = _map_indexed(marginal, g_count, config.threads)
    t_mean = np.array([s[0] for s in stats])
    t_frac = np.array([s[1] for s in stats])
    mean_idx = _top_k_genes(t_mean, np.ones(g_count, dtype=bool), k_top)
    frac_idx = _top_k_genes(t_frac, ~degenerate, k_top)
    genes_mean = frozenset(genes[i] for i in mean_idx)
    genes_frac = frozenset(genes[i] for i in frac_idx)

    terms: list[str] = []
    cols: list[np.ndarray] = []
    for g, gene in enumerate(genes):
        terms.append(f"M:{gene}")
        cols.append(log_mean[:, g])
        if not degenerate[g]:
            terms.append(f"F:{gene}")
            cols.append(logit_frac[:, g])
    design = DesignMatrix(
        terms=base.terms + tuple(terms),
        values=np.column_stack([xbase] + cols),
    )
    # Exposure and covariates carry the standard unit penalty alongside the
    # gene terms; shielding them from the penalty starves exposure-linked
    # gene columns of their selection signal and collapses recall.
    penalized = set(terms) | {EXPOSURE, *pheno.covariate_names}
    lasso = fit_lasso(design, pheno.outcome, penalized, config.lasso())
    genes_outcome = frozenset(
        t.split(":", 1)[1] for t in lasso.selected_terms if t.startswith(("M:", "F:"))
    )

    chosen = (genes_outcome & genes_mean) | (genes_outcome & genes_frac)
    selected = tuple(g for g in genes if g in chosen)
    return ScreeningSets(
        genes_outcome=genes_outcome,
        genes_mean=genes_mean,
        genes_frac=genes_frac,
        selected=selected,
        mean_terms=frozenset(chosen & genes_mean),
        frac_terms=frozenset(chosen & genes_frac),
        k_top=k_top,
    )


def _greedy_full_rank(
    base: np.ndarray, base_terms: list[str], extra: list[tuple[str, np.ndarray]]
) -> tuple[DesignMatrix, list[str]]:
    """Append columns in order, dropping any that break full rank."""
    rank_tol = 1e-10
    d = np.abs(np.diag(np.linalg.qr(base, mode="r")))
    if d.size and (d.max() == 0.0 or d.min() <= d.max() * rank_tol):
        raise RankDeficient("base design (intercept, exposure, covariates) is collinear")
    kept = base
    terms = list(base_terms)
    dropped: list[str] = []
    for name, col in extra:
        trial = np.column_stack([kept, col])
        d = np.abs(np.diag(np.linalg.qr(trial, mode="r")))
        if d.max() == 0.0 or d.min() <= d.max() * rank_tol:
            dropped.append(name)
            continue
        kept = trial
        terms.append(name)
    return DesignMatrix(terms=tuple(terms), values=kept), dropped


def fit_final_models(
    summaries: GeneSummaries,
    pheno: PhenotypeTable,
    screening: ScreeningSets,
    config: PipelineConfig = PipelineConfig(),
) -> tuple[OlsFit, dict[tuple[str, str], OlsFit], list[str]]:
    """Step II fits: reduced outcome model plus one mediator model per term.

    Collinear mediator columns are dropped deterministically (later index
    loses) and reported in the third return value.
    """
    base = _base_design(pheno)
    gene_pos = {g: i for i, g in enumerate(summaries.gene_ids)}
    extra: list[tuple[str, np.ndarray]] = []
    for gene in screening.selected:
        gi = gene_pos[gene]
        if gene in screening.mean_terms:
            extra.append((f"M:{gene}", summaries.log_mean[:, gi]))
        if gene in screening.frac_terms:
            extra.append((f"F:{gene}", summaries.logit_frac[:, gi]))
    design, dropped = _greedy_full_rank(base.values, list(base.terms), extra)
    outcome_fit = fit_ols(design, pheno.outcome, robust=config.robust_se)

    mediator_fits: dict[tuple[str, str], OlsFit] = {}
    for term in design.terms[base.n_terms :]:
        pathway, gene = term.split(":", 1)
        gi = gene_pos[gene]
        y = summaries.log_mean[:, gi] if pathway == PATHWAY_MEAN else summaries.logit_frac[:, gi]
        mediator_fits[(gene, pathway)] = fit_ols(base, y, robust=config.robust_se)
    return outcome_fit, mediator_fits, dropped


def estimate_iie(
    outcome_fit: OlsFit, mediator_fits: dict[tuple[str, str], OlsFit]
) -> list[tuple[str, str, float]]:
    """Indirect effect per unit exposure change: outcome-model mediator
    coefficient times mediator-model exposure coefficient."""
    outcome_terms = {t for t in outcome_fit.terms if t.startswith(("M:", "F:"))}
    fit_terms = {f"{path}:{gene}" for gene, path in mediator_fits}
    if outcome_terms != fit_terms:
        raise KeyMismatch(
            f"outcome terms {sorted(outcome_terms)} != mediator fits {sorted(fit_terms)}"
        )
    out = []
    for (gene, pathway), med in sorted(
        mediator_fits.items(), key=lambda kv: (kv[0][0], kv[0][1])
    ):
        b_out = outcome_fit.get(f"{pathway}:{gene}").estimate
        b_exp = med.get(EXPOSURE).estimate
        out.append((gene, pathway, b_out * b_exp))
    return out


def _finalize_records(
    raw: list[dict], fdr_level: float, joint_bh: bool
) -> tuple[MediationRecord, ...]:
    """Attach BH-adjusted p-values (per family unless joint) and significance."""
    if not raw:
        return ()
    if joint_bh:
        groups = {"all": list(range(len(raw)))}
    else:
        groups = {}
        for i, rec in enumerate(raw):
            groups.setdefault(rec["pathway"], []).append(i)
    q = np.empty(len(raw))
    for idx in groups.values():
        q[idx] = bh_adjust([raw[i]["p_max"] for i in idx])
    records = []
    for i, rec in enumerate(raw):
        records.append(
            MediationRecord(
                gene=rec["gene"],
                pathway=rec["pathway"],
                beta_outcome=rec["beta_outcome"],
                coef_exposure=rec["coef_exposure"],
                iie=rec["iie"],
                p_max=rec["p_max"],
                q_bh=float(q[i]),
                significant=bool(q[i] <= fdr_level),
                imputed_frac=rec["imputed_frac"],
            )
        )
    return tuple(records)


def _record_stub(
    gene: str,
    pathway: str,
    beta_outcome: CoefficientEstimate,
    coef_exposure: CoefficientEstimate,
    iie: float,
    imputed_frac: float,
) -> dict:
    return {
        "gene": gene,
        "pathway": pathway,
        "beta_outcome": beta_outcome,
        "coef_exposure": coef_exposure,
        "iie": iie,
        "p_max": js_test(beta_outcome.p_value, coef_exposure.p_value),
        "imputed_frac": imputed_frac,
    }


def _common_counts(summaries: GeneSummaries) -> dict[str, int]:
    return {
        "degenerate_frac_genes": int(summaries.degenerate_frac.sum()),
        "imputed_mean_entries": int(summaries.mean_imputed.sum()),
        "clamped_frac_entries": int(
            ((summaries.frac_raw < summaries.clamp_lo) | (summaries.frac_raw > summaries.clamp_hi)).sum()
        ),
    }


def run_mediation(
    summaries: GeneSummaries, pheno: PhenotypeTable, config: PipelineConfig = PipelineConfig()
) -> AnalysisReport:
    """Run the full screened pipeline (Steps I-III) and assemble the report."""
    summaries = summaries.align(pheno.subject_ids)
    timings: dict[str, float] = {}

    t0 = time.perf_counter()
    screening = screen(summaries, pheno, config)
    timings["screen"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    outcome_fit, mediator_fits, dropped = fit_final_models(summaries, pheno, screening, config)
    iies = estimate_iie(outcome_fit, mediator_fits)
    timings["fit"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    gene_pos = {g: i for i, g in enumerate(summaries.gene_ids)}
    imputed_by_gene = summaries.imputed_frac
    clamped_by_gene = summaries.clamped_frac
    raw = []
    for gene, pathway, iie in iies:
        term = f"{pathway}:{gene}"
        frac_source = imputed_by_gene if pathway == PATHWAY_MEAN else clamped_by_gene
        raw.append(
            _record_stub(
                gene,
                pathway,
                outcome_fit.get(term),
                mediator_fits[(gene, pathway)].get(EXPOSURE),
                iie,
                float(frac_source[gene_pos[gene]]),
            )
        )
    records = _finalize_records(raw, config.fdr_level, config.joint_bh)
    timings["test"] = time.perf_counter() - t0

    counts = _common_counts(summaries)
    counts["selected_genes"] = len(screening.selected)
    counts["outcome_set"] = len(screening.genes_outcome)
    counts["mean_set"] = len(screening.genes_mean)
    counts["frac_set"] = len(screening.genes_frac)
    counts["collinear_terms_dropped"] = len(dropped)
    return AnalysisReport(
        method="screened",
        records=records,
        direct_effect=outcome_fit.get(EXPOSURE),
        screening=screening,
        config=asdict(config),
        timings=timings,
        counts=counts,
        n_subjects=pheno.n_subjects,
        n_genes=summaries.n_genes,
    )


def run_naive(
    summaries: GeneSummaries, pheno: PhenotypeTable, config: PipelineConfig = PipelineConfig()
) -> AnalysisReport:
    """Per-gene comparator: marginal outcome and mediator fits, no screening.

    Each gene and pathway is tested separately with the same joint-significance
    and BH machinery; covariates are not used. Gene terms without variation
    are skipped, mirroring the degenerate-fraction omission rule.
    """
    summaries = summaries.align(pheno.subject_ids)
    n = pheno.n_subjects
    timings: dict[str, float] = {}
    t0 = time.perf_counter()

    ones = np.ones(n)
    med_design = DesignMatrix(
        terms=(INTERCEPT, EXPOSURE), values=np.column_stack([ones, pheno.exposure])
    )
    genes = summaries.gene_ids
    log_mean = summaries.log_mean
    logit_frac = summaries.logit_frac
    degenerate = summaries.degenerate_frac
    robust = config.robust_se
    skipped = 0

    def one_gene(g: int) -> list[tuple[str, str, CoefficientEstimate, CoefficientEstimate, float] | None]:
        rows = []
        for pathway, col in ((PATHWAY_MEAN, log_mean[:, g]), (PATHWAY_FRAC, logit_frac[:, g])):
            if pathway == PATHWAY_FRAC and degenerate[g]:
                continue
            if np.ptp(col) == 0.0:
                rows.append(None)
                continue
            term = f"{pathway}:{genes[g]}"
            med = fit_ols(med_design, col, robust=robust)
            out_design = DesignMatrix(
                terms=(INTERCEPT, term, EXPOSURE),
                values=np.column_stack([ones, col, pheno.exposure]),
            )
            out = fit_ols(out_design, pheno.outcome, robust=robust)
            beta_outcome = out.get(term)
            coef_exposure = med.get(EXPOSURE)
            rows.append(
                (genes[g], pathway, beta_outcome, coef_exposure, beta_outcome.estimate * coef_exposure.estimate)
            )
        return rows

    per_gene = _map_indexed(one_gene, len(genes), config.threads)
    imputed_by_gene = summaries.imputed_frac
    clamped_by_gene = summaries.clamped_frac
    raw = []
    for g, rows in enumerate(per_gene):
        for row in rows:
            if row is None:
                skipped += 1
                continue
            gene, pathway, beta_outcome, coef_exposure, iie = row
            frac_source = imputed_by_gene if pathway == PATHWAY_MEAN else clamped_by_gene
            raw.append(
                _record_stub(
                    gene, pathway, beta_outcome, coef_exposure, float(iie), float(frac_source[g])
                )
            )
    timings["fit"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    records = _finalize_records(raw, config.fdr_level, config.joint_bh)
    timings["test"] = time.perf_counter() - t0

    direct = fit_ols(med_design, pheno.outcome).get(EXPOSURE)
    counts = _common_counts(summaries)
    counts["zero_variance_terms_skipped"] = skipped
    return AnalysisReport(
        method="naive",
        records=records,
        direct_effect=direct,
        screening=None,
        config=asdict(config),
        timings=timings,
        counts=counts,
        n_subjects=n,
        n_genes=summaries.n_genes,
    )


# ---------------------------------------------------------------------------
# Report serialization
# ---------------------------------------------------------------------------


def _fmt(x: float) -> str:
    return format(float(x), ".10g")


def results_table_text(report: AnalysisReport) -> str:
    """Deterministic tab-separated results table for the report's records."""
    lines = ["\t".join(RESULT_COLUMNS)]
    for r in report.records:
        lines.append(
            "\t".join(
                [
                    r.gene,
                    r.pathway,
                    _fmt(r.beta_outcome.estimate),
                    _fmt(r.beta_outcome.std_error),
                    _fmt(r.beta_outcome.p_value),
                    _fmt(r.coef_exposure.estimate),
                    _fmt(r.coef_exposure.std_error),
                    _fmt(r.coef_exposure.p_value),
                    _fmt(r.iie),
                    _fmt(r.p_max),
                    _fmt(r.q_bh),
                    "true" if r.significant else "false",
                    _fmt(r.imputed_frac),
                ]
            )
        )
    return "\n".join(lines) + "\n"


def run_summary_dict(report: AnalysisReport) -> dict:
    """Key/value run summary: config echo, set sizes, direct effect, timing."""
    summary = {
        "method": report.method,
        "n_subjects": report.n_subjects,
        "n_genes": report.n_genes,
        "config": report.config,
        "direct_effect": {
            "estimate": report.direct_effect.estimate,
            "std_error": report.direct_effect.std_error,
            "p_value": report.direct_effect.p_value,
        },
        "n_records": len(report.records),
        "n_significant": sum(r.significant for r in report.records),
        "counts": report.counts,
        "timings_seconds": {k: round(v, 6) for k, v in report.timings.items()},
    }
    if report.screening is not None:
        summary["screening"] = {
            "k_top": report.screening.k_top,
            "outcome_set_size": len(report.screening.genes_outcome),
            "mean_set_size": len(report.screening.genes_mean),
            "frac_set_size": len(report.screening.genes_frac),
            "selected_size": len(report.screening.selected),
            "selected": list(report.screening.selected),
        }
    return summary
