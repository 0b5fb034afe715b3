"""Expression/phenotype ingestion and subject-level co-mediator summaries.

Each gene yields two subject-level mediators: the mean expression over that
subject's expressing cells and the fraction of cells expressing it. The
expressed fraction is clamped away from 0 and 1 before the logit transform;
genes expressed in every cell of every subject carry no fraction signal and
are flagged degenerate.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    DimensionMismatch,
    NoGenesRemain,
    NonFiniteInput,
    NoSubjectsRemain,
    ParseError,
    ValidationError,
)

log = logging.getLogger("scmediate")

CLAMP_LO_DEFAULT = 0.001
CLAMP_HI_DEFAULT = 0.999
MISSING = "NA"


@dataclass(frozen=True)
class ExpressionMatrix:
    """Sparse gene-by-cell nonnegative expression with a cell-to-subject map.

    Only strictly positive entries are stored; ``values[k]`` sits at
    ``(gene_idx[k], cell_idx[k])``.
    """

    gene_ids: tuple[str, ...]
    cell_ids: tuple[str, ...]
    cell_subjects: tuple[str, ...]
    gene_idx: np.ndarray
    cell_idx: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if len(set(self.gene_ids)) != len(self.gene_ids):
            raise ValidationError("gene ids must be unique")
        if len(set(self.cell_ids)) != len(self.cell_ids):
            raise ValidationError("cell ids must be unique")
        if len(self.cell_subjects) != len(self.cell_ids):
            raise DimensionMismatch("one subject per cell required")
        if not (len(self.gene_idx) == len(self.cell_idx) == len(self.values)):
            raise DimensionMismatch("entry arrays must share their length")
        if len(self.values) and float(self.values.min()) <= 0:
            raise ValidationError("stored entries must be strictly positive")

    @property
    def n_genes(self) -> int:
        return len(self.gene_ids)

    @property
    def n_cells(self) -> int:
        return len(self.cell_ids)

    @property
    def nnz(self) -> int:
        return len(self.values)

    @property
    def density(self) -> float:
        total = self.n_genes * self.n_cells
        return self.nnz / total if total else 0.0

    def drop_cells(self, keep_cell_mask: np.ndarray) -> "ExpressionMatrix":
        old_to_new = np.full(self.n_cells, -1, dtype=np.int64)
        kept = np.flatnonzero(keep_cell_mask)
        old_to_new[kept] = np.arange(len(kept))
        entry_keep = keep_cell_mask[self.cell_idx]
        return ExpressionMatrix(
            gene_ids=self.gene_ids,
            cell_ids=tuple(self.cell_ids[i] for i in kept),
            cell_subjects=tuple(self.cell_subjects[i] for i in kept),
            gene_idx=self.gene_idx[entry_keep],
            cell_idx=old_to_new[self.cell_idx[entry_keep]],
            values=self.values[entry_keep],
        )

    def drop_genes(self, keep_gene_mask: np.ndarray) -> "ExpressionMatrix":
        old_to_new = np.full(self.n_genes, -1, dtype=np.int64)
        kept = np.flatnonzero(keep_gene_mask)
        old_to_new[kept] = np.arange(len(kept))
        entry_keep = keep_gene_mask[self.gene_idx]
        return ExpressionMatrix(
            gene_ids=tuple(self.gene_ids[i] for i in kept),
            cell_ids=self.cell_ids,
            cell_subjects=self.cell_subjects,
            gene_idx=old_to_new[self.gene_idx[entry_keep]],
            cell_idx=self.cell_idx[entry_keep],
            values=self.values[entry_keep],
        )


@dataclass(frozen=True)
class PhenotypeTable:
    """Per-subject outcome, exposure, and optional covariates."""

    subject_ids: tuple[str, ...]
    outcome: np.ndarray
    exposure: np.ndarray
    covariate_names: tuple[str, ...]
    covariates: np.ndarray  # (n, k); k may be 0

    def __post_init__(self):
        n = len(self.subject_ids)
        if len(set(self.subject_ids)) != n:
            raise ValidationError("subject ids must be unique")
        if self.outcome.shape != (n,) or self.exposure.shape != (n,):
            raise DimensionMismatch("outcome/exposure must have one row per subject")
        if self.covariates.shape != (n, len(self.covariate_names)):
            raise DimensionMismatch("covariate matrix shape mismatch")
        for name, arr in (("outcome", self.outcome), ("exposure", self.exposure)):
            if not np.isfinite(arr).all():
                raise NonFiniteInput(f"{name} contains missing or non-finite values")
        if self.covariates.size and not np.isfinite(self.covariates).all():
            raise NonFiniteInput("covariates contain missing or non-finite values")

    @property
    def n_subjects(self) -> int:
        return len(self.subject_ids)

    def subset(self, keep_mask: np.ndarray) -> "PhenotypeTable":
        kept = np.flatnonzero(keep_mask)
        return PhenotypeTable(
            subject_ids=tuple(self.subject_ids[i] for i in kept),
            outcome=self.outcome[kept],
            exposure=self.exposure[kept],
            covariate_names=self.covariate_names,
            covariates=self.covariates[kept],
        )


@dataclass(frozen=True)
class GeneSummaries:
    """Subject-by-gene mediator summaries with boundary handling applied.

    ``mean_expr`` is NaN where a subject has no expressing cells for the gene;
    the model-ready ``log_mean`` imputes 0 there and ``mean_imputed`` records
    which entries were imputed.
    """

    subject_ids: tuple[str, ...]
    gene_ids: tuple[str, ...]
    mean_expr: np.ndarray  # (n, G)
    frac_raw: np.ndarray  # (n, G) in [0, 1]
    frac: np.ndarray  # clamped to [clamp_lo, clamp_hi]
    log_mean: np.ndarray
    logit_frac: np.ndarray
    mean_imputed: np.ndarray  # bool (n, G)
    degenerate_frac: np.ndarray  # bool (G,)
    n_cells: np.ndarray  # (n,)
    clamp_lo: float
    clamp_hi: float

    @property
    def n_subjects(self) -> int:
        return len(self.subject_ids)

    @property
    def n_genes(self) -> int:
        return len(self.gene_ids)

    @property
    def imputed_frac(self) -> np.ndarray:
        """Per-gene fraction of subjects with imputed log mean expression."""
        return self.mean_imputed.mean(axis=0)

    @property
    def clamped_frac(self) -> np.ndarray:
        """Per-gene fraction of subjects whose expressed fraction was clamped."""
        return ((self.frac_raw < self.clamp_lo) | (self.frac_raw > self.clamp_hi)).mean(axis=0)

    def align(self, subject_ids: tuple[str, ...]) -> "GeneSummaries":
        if subject_ids == self.subject_ids:
            return self
        pos = {s: i for i, s in enumerate(self.subject_ids)}
        missing = [s for s in subject_ids if s not in pos]
        if missing:
            raise ValidationError(f"summaries lack subjects: {missing[:5]}")
        order = np.array([pos[s] for s in subject_ids])
        return GeneSummaries(
            subject_ids=tuple(subject_ids),
            gene_ids=self.gene_ids,
            mean_expr=self.mean_expr[order],
            frac_raw=self.frac_raw[order],
            frac=self.frac[order],
            log_mean=self.log_mean[order],
            logit_frac=self.logit_frac[order],
            mean_imputed=self.mean_imputed[order],
            degenerate_frac=self.degenerate_frac,
            n_cells=self.n_cells[order],
            clamp_lo=self.clamp_lo,
            clamp_hi=self.clamp_hi,
        )


def build_summaries(
    subject_ids: tuple[str, ...],
    gene_ids: tuple[str, ...],
    mean_expr: np.ndarray,
    frac_raw: np.ndarray,
    n_cells: np.ndarray,
    clamp_lo: float = CLAMP_LO_DEFAULT,
    clamp_hi: float = CLAMP_HI_DEFAULT,
) -> GeneSummaries:
    """Apply clamping, log/logit transforms, and degeneracy flags."""
    if not 0 < clamp_lo < clamp_hi < 1:
        raise ValidationError("clamp bounds must satisfy 0 < lo < hi < 1")
    if frac_raw.min() < 0 or frac_raw.max() > 1:
        raise ValidationError("raw expressed fractions must lie in [0, 1]")
    frac = np.clip(frac_raw, clamp_lo, clamp_hi)
    imputed = ~np.isfinite(mean_expr) | (mean_expr <= 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        log_mean = np.where(imputed, 0.0, np.log(np.where(imputed, 1.0, mean_expr)))
    logit_frac = np.log(frac / (1.0 - frac))
    degenerate = (frac_raw >= 1.0).all(axis=0)
    return GeneSummaries(
        subject_ids=tuple(subject_ids),
        gene_ids=tuple(gene_ids),
        mean_expr=mean_expr,
        frac_raw=frac_raw,
        frac=frac,
        log_mean=log_mean,
        logit_frac=logit_frac,
        mean_imputed=imputed,
        degenerate_frac=degenerate,
        n_cells=np.asarray(n_cells),
        clamp_lo=clamp_lo,
        clamp_hi=clamp_hi,
    )


# ---------------------------------------------------------------------------
# File readers
# ---------------------------------------------------------------------------


def _read_lines(path: str | Path) -> list[str]:
    try:
        return Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ParseError(f"cannot read file: {exc}", path=str(path)) from exc


def _dedupe_entries(
    gene_idx: np.ndarray, cell_idx: np.ndarray, values: np.ndarray, n_cells: int, source: str
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Sum duplicate (gene, cell) entries, warning when any are found."""
    if len(values) == 0:
        return gene_idx, cell_idx, values
    key = gene_idx.astype(np.int64) * n_cells + cell_idx
    order = np.argsort(key, kind="stable")
    key, values = key[order], values[order]
    uniq, start = np.unique(key, return_index=True)
    if len(uniq) != len(key):
        warnings.warn(
            f"{len(key) - len(uniq)} duplicate (gene, cell) entries summed in {source}",
            stacklevel=3,
        )
        values = np.add.reduceat(values, start)
    else:
        values = values[start]
    return (uniq // n_cells).astype(np.int64), (uniq % n_cells).astype(np.int64), values


def load_gene_list(path: str | Path) -> tuple[str, ...]:
    genes = tuple(line.strip() for line in _read_lines(path) if line.strip())
    if len(set(genes)) != len(genes):
        raise ParseError("duplicate gene ids in gene list", path=str(path))
    return genes


def load_cell_map(path: str | Path) -> tuple[tuple[str, ...], tuple[str, ...]]:
    """Two-column tab-separated cell-id / subject-id table (no header)."""
    cells: list[str] = []
    subjects: list[str] = []
    for ln, line in enumerate(_read_lines(path), start=1):
        if not line.strip():
            continue
        parts = line.rstrip("\n").split("\t")
        if len(parts) != 2:
            raise ParseError("expected two tab-separated columns", path=str(path), line=ln)
        cells.append(parts[0])
        subjects.append(parts[1])
    if len(set(cells)) != len(cells):
        raise ParseError("duplicate cell ids in cell map", path=str(path))
    return tuple(cells), tuple(subjects)


def load_expression(
    matrix_path: str | Path,
    gene_list_path: str | Path,
    cell_map_path: str | Path,
) -> ExpressionMatrix:
    """Read a coordinate-format sparse matrix plus its gene and cell metadata.

    The matrix file holds an optional run of ``%`` comment lines, then a
    header ``n_genes n_cells nnz``, then 1-based ``gene cell value`` triples.
    Zeros are dropped, duplicates summed with a warning.
    """
    genes = load_gene_list(gene_list_path)
    cells, subjects = load_cell_map(cell_map_path)

    lines = _read_lines(matrix_path)
    path = str(matrix_path)
    pos = 0
    while pos < len(lines) and (lines[pos].startswith("%") or not lines[pos].strip()):
        pos += 1
    if pos >= len(lines):
        raise ParseError("missing header line", path=path)
    header = lines[pos].split()
    if len(header) != 3:
        raise ParseError("header must be 'n_genes n_cells nnz'", path=path, line=pos + 1)
    try:
        n_genes, n_cells, nnz = (int(t) for t in header)
    except ValueError as exc:
        raise ParseError(f"bad header: {exc}", path=path, line=pos + 1) from exc
    if n_genes != len(genes):
        raise DimensionMismatch(
            f"matrix declares {n_genes} genes but gene list has {len(genes)}"
        )
    if n_cells != len(cells):
        raise DimensionMismatch(
            f"matrix declares {n_cells} cells but cell map has {len(cells)}"
        )

    gi = np.empty(nnz, dtype=np.int64)
    ci = np.empty(nnz, dtype=np.int64)
    vals = np.empty(nnz, dtype=np.float64)
    k = 0
    for ln in range(pos + 1, len(lines)):
        line = lines[ln].strip()
        if not line or line.startswith("%"):
            continue
        parts = line.split()
        if len(parts) != 3:
            raise ParseError("expected 'gene cell value' triple", path=path, line=ln + 1)
        try:
            g = int(parts[0])
            c = int(parts[1])
            v = float(parts[2])
        except ValueError as exc:
            raise ParseError(f"bad triple: {exc}", path=path, line=ln + 1) from exc
        if not (1 <= g <= n_genes and 1 <= c <= n_cells):
            raise ParseError("coordinate out of range", path=path, line=ln + 1)
        if not math.isfinite(v) or v < 0:
            raise ParseError("values must be finite and nonnegative", path=path, line=ln + 1)
        if k >= nnz:
            raise ParseError(f"more than the declared {nnz} entries", path=path, line=ln + 1)
        if v == 0.0:
            nnz -= 1  # zeros never stored
            continue
        gi[k], ci[k], vals[k] = g - 1, c - 1, v
        k += 1
    if k != nnz:
        raise ParseError(f"declared nnz does not match {k} parsed entries", path=path)
    gi, ci, vals = _dedupe_entries(gi[:k], ci[:k], vals[:k], len(cells), path)
    return ExpressionMatrix(
        gene_ids=genes,
        cell_ids=cells,
        cell_subjects=subjects,
        gene_idx=gi,
        cell_idx=ci,
        values=vals,
    )


def load_expression_long(path: str | Path) -> ExpressionMatrix:
    """Read a long-format table with header subject_id/cell_id/gene_id/value."""
    lines = _read_lines(path)
    spath = str(path)
    if not lines:
        raise ParseError("empty file", path=spath)
    header = lines[0].rstrip("\n").split("\t")
    try:
        c_subj = header.index("subject_id")
        c_cell = header.index("cell_id")
        c_gene = header.index("gene_id")
        c_val = header.index("value")
    except ValueError as exc:
        raise ParseError(
            "header must contain subject_id, cell_id, gene_id, value", path=spath, line=1
        ) from exc

    genes: dict[str, int] = {}
    cells: dict[str, int] = {}
    cell_subjects: list[str] = []
    gi: list[int] = []
    ci: list[int] = []
    vals: list[float] = []
    for ln in range(1, len(lines)):
        line = lines[ln].rstrip("\n")
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != len(header):
            raise ParseError("wrong number of columns", path=spath, line=ln + 1)
        subj, cell, gene, raw = parts[c_subj], parts[c_cell], parts[c_gene], parts[c_val]
        try:
            v = float(raw)
        except ValueError as exc:
            raise ParseError(f"bad value {raw!r}", path=spath, line=ln + 1) from exc
        if not math.isfinite(v) or v < 0:
            raise ParseError("values must be finite and nonnegative", path=spath, line=ln + 1)
        if cell in cells:
            if cell_subjects[cells[cell]] != subj:
                raise ParseError(f"cell {cell!r} maps to two subjects", path=spath, line=ln + 1)
        else:
            cells[cell] = len(cells)
            cell_subjects.append(subj)
        if gene not in genes:
            genes[gene] = len(genes)
        if v == 0.0:
            continue
        gi.append(genes[gene])
        ci.append(cells[cell])
        vals.append(v)
    gia, cia, va = _dedupe_entries(
        np.array(gi, dtype=np.int64),
        np.array(ci, dtype=np.int64),
        np.array(vals, dtype=np.float64),
        max(len(cells), 1),
        spath,
    )
    return ExpressionMatrix(
        gene_ids=tuple(genes),
        cell_ids=tuple(cells),
        cell_subjects=tuple(cell_subjects),
        gene_idx=gia,
        cell_idx=cia,
        values=va,
    )


def load_phenotypes(
    path: str | Path,
    outcome_col: str,
    exposure_col: str,
    covar_cols: list[str] | None = None,
) -> PhenotypeTable:
    """Read the tab-separated phenotype table; its first column is the subject id.

    Rows with missing (``NA``) outcome or exposure are dropped with a warning;
    a missing value in a selected covariate is an error naming the column.
    """
    covar_cols = list(covar_cols or [])
    lines = _read_lines(path)
    spath = str(path)
    if not lines:
        raise ParseError("empty phenotype file", path=spath)
    header = lines[0].rstrip("\n").split("\t")
    for col in [outcome_col, exposure_col, *covar_cols]:
        if col not in header:
            raise ParseError(f"phenotype file lacks column {col!r}", path=spath, line=1)
    c_out = header.index(outcome_col)
    c_exp = header.index(exposure_col)
    c_cov = [header.index(c) for c in covar_cols]

    ids: list[str] = []
    outcome: list[float] = []
    exposure: list[float] = []
    covars: list[list[float]] = []
    dropped = 0
    for ln in range(1, len(lines)):
        line = lines[ln].rstrip("\n")
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != len(header):
            raise ParseError("wrong number of columns", path=spath, line=ln + 1)
        if parts[c_out] == MISSING or parts[c_exp] == MISSING:
            dropped += 1
            continue
        row_cov = []
        for name, idx in zip(covar_cols, c_cov):
            if parts[idx] == MISSING:
                raise ParseError(
                    f"missing value in covariate {name!r}", path=spath, line=ln + 1
                )
            row_cov.append(_parse_float(parts[idx], spath, ln + 1))
        ids.append(parts[0])
        outcome.append(_parse_float(parts[c_out], spath, ln + 1))
        exposure.append(_parse_float(parts[c_exp], spath, ln + 1))
        covars.append(row_cov)
    if dropped:
        warnings.warn(f"dropped {dropped} phenotype rows with missing outcome/exposure")
    if not ids:
        raise NoSubjectsRemain("no usable phenotype rows")
    return PhenotypeTable(
        subject_ids=tuple(ids),
        outcome=np.array(outcome),
        exposure=np.array(exposure),
        covariate_names=tuple(covar_cols),
        covariates=np.array(covars).reshape(len(ids), len(covar_cols)),
    )


def _parse_float(token: str, path: str, line: int) -> float:
    try:
        v = float(token)
    except ValueError as exc:
        raise ParseError(f"bad numeric value {token!r}", path=path, line=line) from exc
    if not math.isfinite(v):
        raise ParseError(f"non-finite value {token!r}", path=path, line=line)
    return v


# ---------------------------------------------------------------------------
# Filters and aggregation
# ---------------------------------------------------------------------------


def filter_subjects(
    expr: ExpressionMatrix, pheno: PhenotypeTable, min_cells: int = 30
) -> tuple[ExpressionMatrix, PhenotypeTable]:
    """Drop subjects with fewer than ``min_cells`` cells from both structures.

    Cells whose subject has no phenotype row are dropped first with a warning.
    """
    if min_cells < 1:
        raise ValidationError("min_cells must be >= 1")
    known = set(pheno.subject_ids)
    cell_known = np.array([s in known for s in expr.cell_subjects])
    n_unknown = int((~cell_known).sum())
    if n_unknown:
        warnings.warn(f"dropping {n_unknown} cells mapped to subjects without phenotypes")
        expr = expr.drop_cells(cell_known)

    counts = {s: 0 for s in pheno.subject_ids}
    for s in expr.cell_subjects:
        counts[s] += 1
    subj_keep = np.array([counts[s] >= min_cells for s in pheno.subject_ids])
    n_removed = int((~subj_keep).sum())
    if not subj_keep.any():
        raise NoSubjectsRemain(f"all subjects have fewer than {min_cells} cells")
    if n_removed:
        log.info("filter_subjects: removed %d of %d subjects", n_removed, pheno.n_subjects)
        kept_ids = {s for s, k in zip(pheno.subject_ids, subj_keep) if k}
        expr = expr.drop_cells(np.array([s in kept_ids for s in expr.cell_subjects]))
        pheno = pheno.subset(subj_keep)
    return expr, pheno


def filter_genes(
    expr: ExpressionMatrix,
    pheno: PhenotypeTable,
    min_subject_frac: float = 0.05,
    max_zero_frac: float = 0.90,
) -> ExpressionMatrix:
    """Keep genes expressed in enough subjects and without excessive zeros.

    A gene survives when it has at least one positive cell in at least
    ``min_subject_frac`` of subjects and its overall cell-level zero fraction
    is at most ``max_zero_frac``; genes never expressed anywhere always go.
    """
    if not (0 < min_subject_frac <= 1 and 0 < max_zero_frac <= 1):
        raise ValidationError("filter fractions must lie in (0, 1]")
    subj_of_cell = _subject_indices(expr, pheno)
    n_subj = pheno.n_subjects
    key = expr.gene_idx * n_subj + subj_of_cell[expr.cell_idx]
    pos_per_subj = np.bincount(key, minlength=expr.n_genes * n_subj).reshape(
        expr.n_genes, n_subj
    )
    expressed_subjects = (pos_per_subj > 0).sum(axis=1)
    nnz_per_gene = np.bincount(expr.gene_idx, minlength=expr.n_genes)
    zero_frac = 1.0 - nnz_per_gene / expr.n_cells
    keep = (
        (expressed_subjects > 0)
        & (expressed_subjects >= min_subject_frac * n_subj)
        & (zero_frac <= max_zero_frac)
    )
    if not keep.any():
        raise NoGenesRemain("no genes pass the expression filters")
    n_removed = int((~keep).sum())
    if n_removed:
        log.info("filter_genes: removed %d of %d genes", n_removed, expr.n_genes)
    return expr.drop_genes(keep)


def _subject_indices(expr: ExpressionMatrix, pheno: PhenotypeTable) -> np.ndarray:
    pos = {s: i for i, s in enumerate(pheno.subject_ids)}
    try:
        return np.array([pos[s] for s in expr.cell_subjects], dtype=np.int64)
    except KeyError as exc:
        raise ValidationError(
            f"cell subject {exc.args[0]!r} missing from phenotypes; run filter_subjects first"
        ) from exc


def aggregate(
    expr: ExpressionMatrix,
    pheno: PhenotypeTable,
    clamp_lo: float = CLAMP_LO_DEFAULT,
    clamp_hi: float = CLAMP_HI_DEFAULT,
) -> GeneSummaries:
    """Collapse cells to subject-level mean expression and expressed fraction.

    Accumulation order is canonicalized by (gene, subject, cell id), so any
    permutation of the input cells yields bit-identical summaries.
    """
    subj_of_cell = _subject_indices(expr, pheno)
    n_subj = pheno.n_subjects
    n_cells_per_subj = np.bincount(subj_of_cell, minlength=n_subj)
    if (n_cells_per_subj == 0).any():
        raise ValidationError("every subject needs at least one cell; filter first")

    cell_rank = np.argsort(np.argsort(np.array(expr.cell_ids)))
    entry_subj = subj_of_cell[expr.cell_idx]
    order = np.lexsort((cell_rank[expr.cell_idx], entry_subj, expr.gene_idx))
    key = (expr.gene_idx[order] * n_subj + entry_subj[order]).astype(np.int64)
    vals = expr.values[order]

    size = expr.n_genes * n_subj
    pos = np.bincount(key, minlength=size).reshape(expr.n_genes, n_subj)
    sums = np.bincount(key, weights=vals, minlength=size).reshape(expr.n_genes, n_subj)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean_expr = np.where(pos > 0, sums / np.where(pos > 0, pos, 1), np.nan)
    frac_raw = pos / n_cells_per_subj[None, :]

    return build_summaries(
        subject_ids=pheno.subject_ids,
        gene_ids=expr.gene_ids,
        mean_expr=mean_expr.T.copy(),
        frac_raw=frac_raw.T.copy(),
        n_cells=n_cells_per_subj,
        clamp_lo=clamp_lo,
        clamp_hi=clamp_hi,
    )


# ---------------------------------------------------------------------------
# Subject-level summaries round trip (simulate -> analyze)
# ---------------------------------------------------------------------------


def write_summaries(summaries: GeneSummaries, path: str | Path) -> None:
    """Write the long-format subject-level summaries table."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("subject_id\tgene_id\tmean_expr\texpr_frac\n")
        for si, subj in enumerate(summaries.subject_ids):
            for gi, gene in enumerate(summaries.gene_ids):
                m = summaries.mean_expr[si, gi]
                mtxt = MISSING if not np.isfinite(m) else format(m, ".10g")
                fh.write(f"{subj}\t{gene}\t{mtxt}\t{format(summaries.frac_raw[si, gi], '.10g')}\n")


def load_summaries(
    path: str | Path,
    clamp_lo: float = CLAMP_LO_DEFAULT,
    clamp_hi: float = CLAMP_HI_DEFAULT,
) -> GeneSummaries:
    """Read a subject-level summaries table written by :func:`write_summaries`."""
    lines = _read_lines(path)
    spath = str(path)
    if not lines or lines[0].rstrip("\n").split("\t") != [
        "subject_id",
        "gene_id",
        "mean_expr",
        "expr_frac",
    ]:
        raise ParseError(
            "expected header subject_id/gene_id/mean_expr/expr_frac", path=spath, line=1
        )
    subjects: dict[str, int] = {}
    genes: dict[str, int] = {}
    rows: list[tuple[int, int, float, float]] = []
    for ln in range(1, len(lines)):
        line = lines[ln].rstrip("\n")
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise ParseError("expected four columns", path=spath, line=ln + 1)
        subj, gene, mtxt, ftxt = parts
        if subj not in subjects:
            subjects[subj] = len(subjects)
        if gene not in genes:
            genes[gene] = len(genes)
        m = math.nan if mtxt == MISSING else _parse_float(mtxt, spath, ln + 1)
        f = _parse_float(ftxt, spath, ln + 1)
        if not 0 <= f <= 1:
            raise ParseError("expr_frac must lie in [0, 1]", path=spath, line=ln + 1)
        rows.append((subjects[subj], genes[gene], m, f))
    n, g = len(subjects), len(genes)
    if len(rows) != n * g:
        raise ParseError(
            f"expected a complete {n} x {g} grid, found {len(rows)} rows", path=spath
        )
    mean_expr = np.full((n, g), np.nan)
    frac_raw = np.zeros((n, g))
    seen = np.zeros((n, g), dtype=bool)
    for si, gi, m, f in rows:
        if seen[si, gi]:
            raise ParseError(f"duplicate (subject, gene) row", path=spath)
        seen[si, gi] = True
        mean_expr[si, gi] = m
        frac_raw[si, gi] = f
    return build_summaries(
        subject_ids=tuple(subjects),
        gene_ids=tuple(genes),
        mean_expr=mean_expr,
        frac_raw=frac_raw,
        n_cells=np.zeros(n, dtype=np.int64),
        clamp_lo=clamp_lo,
        clamp_hi=clamp_hi,
    )
