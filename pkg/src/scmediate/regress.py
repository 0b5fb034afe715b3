"""Least-squares machinery: OLS with Wald p-values and penalized screening fits.

The Lasso solves ``(1/2n)·RSS + lambda * sum_j |beta_j|`` over a descending
log-spaced penalty grid by cyclic coordinate descent on a centered,
unit-variance design. Intercept, exposure, and covariates are never
penalized, so screening cannot drop them. Penalty selection is k-fold
cross-validation at the minimum mean squared error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.special import erfc

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

from .errors import (
    DimensionMismatch,
    EmptyPenaltySet,
    FoldTooSmall,
    NonFiniteInput,
    OutOfRange,
    RankDeficient,
    ValidationError,
)
from .streams import TAG_CV_FOLDS, stream

_SQRT2 = math.sqrt(2.0)
_RANK_RTOL = 1e-10


@dataclass(frozen=True)
class DesignMatrix:
    """Named n-by-p regression design.

    Entries must be finite and column names unique; the n >= p requirement is
    checked at fit time, not at construction.
    """

    terms: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise DimensionMismatch("design values must be a 2-d array")
        if values.shape[1] != len(self.terms):
            raise DimensionMismatch(
                f"{len(self.terms)} term names for {values.shape[1]} columns"
            )
        if len(set(self.terms)) != len(self.terms):
            raise ValidationError("design term names must be unique")
        if not np.isfinite(values).all():
            raise NonFiniteInput("design matrix contains non-finite entries")
        object.__setattr__(self, "terms", tuple(self.terms))
        object.__setattr__(self, "values", values)

    @property
    def n_obs(self) -> int:
        return self.values.shape[0]

    @property
    def n_terms(self) -> int:
        return self.values.shape[1]

    def column(self, term: str) -> np.ndarray:
        return self.values[:, self.terms.index(term)]


@dataclass(frozen=True)
class CoefficientEstimate:
    """One fitted coefficient with its Wald two-sided p-value."""

    term: str
    estimate: float
    std_error: float
    p_value: float


@dataclass(frozen=True)
class OlsFit:
    """Least-squares fit with classical (or sandwich) standard errors."""

    terms: tuple[str, ...]
    estimates: np.ndarray
    std_errors: np.ndarray
    p_values: np.ndarray
    residual_variance: float
    n_obs: int
    n_params: int
    fitted: np.ndarray
    residuals: np.ndarray

    @property
    def coefficients(self) -> list[CoefficientEstimate]:
        return [
            CoefficientEstimate(t, float(b), float(s), float(p))
            for t, b, s, p in zip(self.terms, self.estimates, self.std_errors, self.p_values)
        ]

    def get(self, term: str) -> CoefficientEstimate:
        i = self.terms.index(term)
        return CoefficientEstimate(
            term,
            float(self.estimates[i]),
            float(self.std_errors[i]),
            float(self.p_values[i]),
        )


def wald_p(estimate: float, std_error: float) -> float:
    """Two-sided normal-reference p-value 2*(1 - Phi(|estimate| / std_error)).

    A zero standard error degenerates to p = 0 for a nonzero estimate and
    p = 1 when the estimate is zero as well.
    """
    if not (math.isfinite(estimate) and math.isfinite(std_error)):
        raise NonFiniteInput("wald_p requires finite inputs")
    if std_error < 0:
        raise OutOfRange("std_error must be nonnegative")
    if std_error == 0.0:
        return 0.0 if estimate != 0.0 else 1.0
    return erfc(abs(estimate) / std_error / _SQRT2)


def _wald_p_vector(estimates: np.ndarray, std_errors: np.ndarray) -> np.ndarray:
    p = np.ones_like(estimates)
    ok = std_errors > 0
    p[ok] = erfc(np.abs(estimates[ok]) / std_errors[ok] / _SQRT2)
    degenerate = ~ok & (estimates != 0)
    p[degenerate] = 0.0
    return p


def _ols_arrays(x: np.ndarray, y: np.ndarray, robust: bool = False):
    """QR least squares on raw arrays; shared by every per-gene fit.

    Returns (estimates, std_errors, p_values, sigma2, fitted, residuals).
    """
    n, p = x.shape
    if y.shape[0] != n:
        raise DimensionMismatch(f"response length {y.shape[0]} != {n} rows")
    if n <= p:
        raise RankDeficient(f"need more observations ({n}) than parameters ({p})")
    q, r = sla.qr(x, mode="economic", check_finite=False)
    diag = np.abs(np.diag(r))
    if diag.max() == 0.0 or diag.min() <= diag.max() * _RANK_RTOL:
        raise RankDeficient("design is collinear beyond tolerance")
    beta = sla.solve_triangular(r, q.T @ y, check_finite=False)
    fitted = x @ beta
    resid = y - fitted
    rss = float(resid @ resid)
    sigma2 = rss / (n - p)
    rinv = sla.solve_triangular(r, np.eye(p), check_finite=False)
    if robust:
        # HC1 sandwich: (X'X)^-1 X' diag(e^2) X (X'X)^-1 with n/(n-p) inflation.
        xtx_inv = rinv @ rinv.T
        meat = (x * (resid**2)[:, None]).T @ x
        cov = xtx_inv @ meat @ xtx_inv * (n / (n - p))
        var = np.diag(cov).copy()
    else:
        var = sigma2 * np.einsum("ij,ij->i", rinv, rinv)
    var[var < 0] = 0.0
    se = np.sqrt(var)
    pvals = _wald_p_vector(beta, se)
    return beta, se, pvals, sigma2, fitted, resid


def fit_ols(design: DesignMatrix, response: np.ndarray, robust: bool = False) -> OlsFit:
    """Fit ordinary least squares with Wald p-values per coefficient.

    ``robust=True`` swaps the classical covariance for an HC1 sandwich; the
    default matches the normal-reference test statistics used downstream.
    """
    y = np.asarray(response, dtype=np.float64).reshape(-1)
    if not np.isfinite(y).all():
        raise NonFiniteInput("response contains non-finite values")
    beta, se, pvals, sigma2, fitted, resid = _ols_arrays(design.values, y, robust=robust)
    return OlsFit(
        terms=design.terms,
        estimates=beta,
        std_errors=se,
        p_values=pvals,
        residual_variance=sigma2,
        n_obs=design.n_obs,
        n_params=design.n_terms,
        fitted=fitted,
        residuals=resid,
    )


@dataclass(frozen=True)
class LassoConfig:
    """Penalty-path and cross-validation settings."""

    grid_size: int = 100
    lambda_min_ratio: float = 1e-3
    cv_folds: int = 10
    seed: int = 0
    tol: float = 1e-7
    max_sweeps: int = 10_000
    fixed_lambda: float | None = None

    def __post_init__(self):
        if self.grid_size < 1 or self.cv_folds < 2:
            raise ValidationError("grid_size >= 1 and cv_folds >= 2 required")
        if not 0 < self.lambda_min_ratio < 1:
            raise ValidationError("lambda_min_ratio must lie in (0, 1)")
        if self.fixed_lambda is not None and self.fixed_lambda < 0:
            raise ValidationError("fixed_lambda must be nonnegative")


@dataclass(frozen=True)
class LassoFit:
    """Solution of the penalized screening fit at the chosen penalty."""

    lambda_grid: np.ndarray
    chosen_lambda: float
    coefficients_at_chosen: dict[str, float]
    selected_terms: frozenset[str]
    cv_mse: np.ndarray | None = field(default=None, compare=False)


def _cd_sweeps_loops(xs, resid, beta, active, norm2, pen, lam, tol, max_sweeps):
    """Cyclic coordinate descent over the active set; mutates beta and resid.

    Returns the largest coefficient change of the final sweep.
    """
    n = resid.shape[0]
    delta_max = 0.0
    for _ in range(max_sweeps):
        delta_max = 0.0
        for idx in range(active.shape[0]):
            j = active[idx]
            nj = norm2[j]
            if nj == 0.0:
                continue
            dot = 0.0
            for i in range(n):
                dot += xs[i, j] * resid[i]
            rho = beta[j] * nj + dot / n
            if pen[j]:
                mag = abs(rho) - lam
                if mag <= 0.0:
                    new = 0.0
                elif rho > 0.0:
                    new = mag / nj
                else:
                    new = -mag / nj
            else:
                new = rho / nj
            d = new - beta[j]
            if d != 0.0:
                beta[j] = new
                for i in range(n):
                    resid[i] -= xs[i, j] * d
                ad = abs(d)
                if ad > delta_max:
                    delta_max = ad
        if delta_max < tol:
            return delta_max
    return delta_max


if numba is not None:
    _cd_sweeps = numba.njit(cache=True)(_cd_sweeps_loops)
else:  # pragma: no cover - interpreted fallback, same math via numpy dots
    def _cd_sweeps(xs, resid, beta, active, norm2, pen, lam, tol, max_sweeps):
        n = resid.shape[0]
        delta_max = 0.0
        for _ in range(max_sweeps):
            delta_max = 0.0
            for j in active:
                nj = norm2[j]
                if nj == 0.0:
                    continue
                xj = xs[:, j]
                rho = beta[j] * nj + (xj @ resid) / n
                if pen[j]:
                    mag = abs(rho) - lam
                    new = 0.0 if mag <= 0.0 else math.copysign(mag, rho) / nj
                else:
                    new = rho / nj
                d = new - beta[j]
                if d != 0.0:
                    beta[j] = new
                    resid -= xj * d
                    delta_max = max(delta_max, abs(d))
            if delta_max < tol:
                return delta_max
        return delta_max


class _CdProblem:
    """Lasso subproblem on a row subset of a shared raw design.

    Columns are centered/scaled and cached lazily on first activation; the
    Gram over cached columns accumulates incrementally. Convergence at each
    penalty alternates short coordinate-descent bursts with an exact solve of
    the sign-restricted subproblem on the current support (a primal
    active-set acceleration; the stopping rule stays the coordinate-change
    tolerance). Full-design KKT checks run against the shared raw matrix,
    adjusting for centering and scale.
    """

    def __init__(
        self,
        x_raw: np.ndarray,
        xsq_raw: np.ndarray,
        y: np.ndarray,
        rows: np.ndarray,
        mu: np.ndarray | None = None,
        msq: np.ndarray | None = None,
    ):
        self.x_raw = x_raw
        self.rows = rows
        self.n = len(rows)
        n_all, p = x_raw.shape
        self.n_all = n_all
        if mu is None or msq is None:
            ind = np.zeros(n_all)
            ind[rows] = 1.0
            mu = (x_raw.T @ ind) / self.n
            msq = (xsq_raw.T @ ind) / self.n
        self.mu = mu
        sd = np.sqrt(np.maximum(msq - self.mu**2, 0.0))
        self.sd_zero = sd == 0.0
        self.sd = np.where(self.sd_zero, 1.0, sd)
        yt = y[rows]
        self.ybar = float(yt.mean())
        self.yc = (yt - self.ybar).astype(np.float64)
        self.resid = self.yc.copy()
        cap = 64
        self._pos: dict[int, int] = {}
        self._cols: list[int] = []
        self._xc = np.empty((self.n, cap), order="F")
        self._gram = np.empty((cap, cap))
        self._xty = np.empty(cap)
        self._beta = np.zeros(cap)
        self._norm2 = np.zeros(cap)
        self._pen = np.zeros(cap, dtype=bool)
        self._order: list[int] = []  # cache positions, ascending original index
        self.in_active = np.zeros(p, dtype=bool)
        # Error envelope of a single-precision correlation screen, per unit
        # residual norm; exact checks confirm anything inside the band.
        self.slack_base = 1e-4 * np.sqrt(1.0 + (self.mu / self.sd) ** 2)
        self._factor_key: bytes | None = None
        self._factor = None
        self._used = 0
        self._prev_obj = math.inf
        self._settled = False

    def activate(self, j: int, penalized: bool) -> None:
        if self.in_active[j]:
            return
        pos = self._cache(j, penalized)
        lo, hi = 0, len(self._order)
        while lo < hi:
            mid = (lo + hi) // 2
            if self._cols[self._order[mid]] < j:
                lo = mid + 1
            else:
                hi = mid
        self._order.insert(lo, pos)
        self.in_active[j] = True

    def _cache(self, j: int, penalized: bool) -> int:
        pos = self._pos.get(j)
        if pos is not None:
            return pos
        pos = len(self._cols)
        if pos == self._xc.shape[1]:
            cap = 2 * pos
            xc = np.empty((self.n, cap), order="F")
            xc[:, :pos] = self._xc
            gram = np.empty((cap, cap))
            gram[:pos, :pos] = self._gram[:pos, :pos]
            self._xc, self._gram = xc, gram
            for name in ("_xty", "_beta", "_norm2", "_pen"):
                old = getattr(self, name)
                new = np.zeros(cap, dtype=old.dtype)
                new[:pos] = old[:pos]
                setattr(self, name, new)
        col = (self.x_raw[self.rows, j] - self.mu[j]) / self.sd[j]
        if self.sd_zero[j]:
            col[:] = 0.0
        self._xc[:, pos] = col
        if pos:
            cross = self._xc[:, :pos].T @ col / self.n
            self._gram[:pos, pos] = cross
            self._gram[pos, :pos] = cross
        self._gram[pos, pos] = float(col @ col) / self.n
        self._norm2[pos] = self._gram[pos, pos]
        self._xty[pos] = float(col @ self.yc) / self.n
        self._beta[pos] = 0.0
        self._pen[pos] = penalized
        self._pos[j] = pos
        self._cols.append(j)
        return pos

    def _sweeps(self, lam: float, tol: float, max_sweeps: int, positions=None) -> float:
        if positions is None:
            positions = self._order
        return _cd_sweeps(
            self._xc,
            self.resid,
            self._beta,
            np.array(positions, dtype=np.int64),
            self._norm2,
            self._pen,
            float(lam),
            float(tol),
            int(max_sweeps),
        )

    def _support_positions(self) -> list[int]:
        return [pos for pos in self._order if not self._pen[pos] or self._beta[pos] != 0.0]

    def _subspace_solve(self, lam: float) -> bool:
        """Exact minimizer on the current support with signs held fixed.

        Sign-flipped coordinates are zeroed and dropped, then the reduced
        system is re-solved. The Cholesky factor is reused while the
        support/sign pattern repeats across penalty steps. Returns False on
        a singular restricted Gram, leaving plain descent to make progress.
        """
        support = [
            pos
            for pos in self._order
            if self._norm2[pos] > 0.0 and (not self._pen[pos] or self._beta[pos] != 0.0)
        ]
        signs = np.array(
            [math.copysign(1.0, self._beta[pos]) if self._pen[pos] else 0.0 for pos in support]
        )
        dropped: list[int] = []
        for _ in range(64):
            if not support:
                return False
            idx = np.array(support)
            key = idx.tobytes() + signs.astype(np.int8).tobytes()
            rhs = self._xty[idx] - lam * signs
            if key == self._factor_key:
                sol = sla.cho_solve(self._factor, rhs, check_finite=False)
            else:
                gram = self._gram[np.ix_(idx, idx)]
                try:
                    factor = sla.cho_factor(gram, check_finite=False)
                except (np.linalg.LinAlgError, ValueError):
                    return False
                sol = sla.cho_solve(factor, rhs, check_finite=False)
                self._factor_key = key
                self._factor = factor
            if not np.isfinite(sol).all():
                return False
            flipped = (signs != 0.0) & (sol * signs <= 0.0)
            if not flipped.any():
                self._beta[dropped] = 0.0
                self._beta[idx] = sol
                self.resid = self.yc - self._xc[:, idx] @ sol
                return True
            dropped.extend(pos for pos, f in zip(support, flipped) if f)
            keep = ~flipped
            support = [pos for pos, k in zip(support, keep) if k]
            signs = signs[keep]
        return False

    def corr_from(self, s: np.ndarray) -> np.ndarray:
        """Standardized-scale residual correlations from raw cross products."""
        corr = (s - self.mu * self.resid.sum()) / (self.sd * self.n)
        corr[self.sd_zero] = 0.0
        return corr

    def corr_all(self) -> np.ndarray:
        """Residual correlations on the standardized scale for every column."""
        r_emb = np.zeros(self.n_all)
        r_emb[self.rows] = self.resid
        return self.corr_from(self.x_raw.T @ r_emb)

    def _objective(self, lam: float) -> float:
        c = len(self._cols)
        l1 = float(np.abs(self._beta[:c])[self._pen[:c]].sum())
        return 0.5 * float(self.resid @ self.resid) / self.n + lam * l1

    def begin_step(self, lam: float) -> None:
        self._used = 0
        self._prev_obj = math.inf
        self._settled = False

    def advance(self, lam: float, tol: float, max_sweeps: int, exact: bool = True) -> None:
        """One inner round: converge the nonzero support by descent, then wake
        sleeping active coordinates with one full sweep. With ``exact`` the
        sign-restricted subspace solve finishes what descent leaves.

        Where the optimum is degenerate (saturated support) coefficients can
        chatter at constant objective, so an objective plateau also counts
        as settled.
        """
        solved = False
        for _ in range(1 if exact else 12):
            if self._used >= max_sweeps:
                break
            support = self._support_positions()
            if support:
                burst = min(10, max_sweeps - self._used)
                self._sweeps(lam, tol, burst, positions=support)
                self._used += burst
            if self._used >= max_sweeps:
                break
            delta = self._sweeps(lam, tol, 1)
            self._used += 1
            if delta < tol:
                solved = True
                break
        if exact and not solved:
            solved = self._subspace_solve(lam)
        obj = self._objective(lam)
        plateaued = self._prev_obj - obj < 1e-12 * max(1.0, abs(obj))
        self._prev_obj = obj
        self._settled = solved or plateaued or self._used >= max_sweeps

    def _admit(self, cand: np.ndarray, cand_abs: np.ndarray) -> bool:
        """Admit confirmed violators; True means another round is needed."""
        n_cached = len(self._cols)
        headroom = (self.n - 1) - int(np.count_nonzero(self._beta[:n_cached]))
        if headroom > 0 and cand.size:
            take = min(24, headroom)
            if cand.size > take:
                order = np.lexsort((cand, -cand_abs))[:take]
                cand = cand[order]
            for j in cand:
                self.activate(int(j), True)
            return True
        return not (headroom <= 0 or self._settled)

    def apply_check(self, lam: float, corr: np.ndarray, pen: np.ndarray) -> bool:
        """Admit KKT violators from a full-design check; True means another
        round is needed at this penalty."""
        # Entry threshold sits 100x inside the 1e-6 KKT tolerance; tighter
        # values chase solver noise in near-degenerate regimes.
        corr_abs = np.abs(corr)
        cand = np.flatnonzero(pen & ~self.in_active & (corr_abs > lam + 1e-8))
        return self._admit(cand, corr_abs[cand])

    def solve_at(self, lam: float, pen: np.ndarray, tol: float, max_sweeps: int) -> None:
        """Converge at one penalty, growing the active set until KKT holds."""
        self.begin_step(lam)
        while True:
            self.advance(lam, tol, max_sweeps)
            if not self.apply_check(lam, self.corr_all(), pen):
                return

    def saturated(self) -> bool:
        """True once the support has reached its degenerate size bound."""
        c = len(self._cols)
        return int(np.count_nonzero(self._beta[:c])) >= self.n - 1

    def snapshot(self) -> tuple[int, np.ndarray]:
        return len(self._cols), self._beta[: len(self._cols)].copy()

    def coefficients_at(self, snap: tuple[int, np.ndarray]) -> tuple[np.ndarray, float]:
        """Original-scale coefficients for a recorded path state."""
        count, beta = snap
        p = self.x_raw.shape[1]
        out = np.zeros(p)
        intercept = self.ybar
        for pos in range(count):
            b = beta[pos]
            if b != 0.0:
                j = self._cols[pos]
                out[j] = b / self.sd[j]
                intercept -= out[j] * self.mu[j]
        return out, intercept

    def coefficients(self) -> tuple[np.ndarray, float]:
        """Coefficients on the original scale plus the implied intercept."""
        p = self.x_raw.shape[1]
        beta = np.zeros(p)
        intercept = self.ybar
        for pos, j in enumerate(self._cols):
            b = self._beta[pos]
            if b != 0.0:
                beta[j] = b / self.sd[j]
                intercept -= beta[j] * self.mu[j]
        return beta, intercept

    def predict_rows(self, test_rows: np.ndarray) -> np.ndarray:
        nz = [pos for pos in range(len(self._cols)) if self._beta[pos] != 0.0]
        if not nz:
            return np.full(len(test_rows), self.ybar)
        js = np.array([self._cols[pos] for pos in nz])
        coef = self._beta[nz] / self.sd[js]
        return self.ybar + (self.x_raw[np.ix_(test_rows, js)] - self.mu[js]) @ coef


def _cv_fold_indices(n: int, k: int, seed: int) -> list[np.ndarray]:
    perm = stream(seed, TAG_CV_FOLDS).permutation(n)
    return [np.sort(f) for f in np.array_split(perm, k)]


def fit_lasso(
    design: DesignMatrix,
    response: np.ndarray,
    penalized_terms: set[str],
    config: LassoConfig = LassoConfig(),
) -> LassoFit:
    """Lasso with unpenalized intercept/exposure/covariates and CV penalty choice.

    The grid runs from the smallest penalty that zeroes every penalized term
    down by ``lambda_min_ratio``; ``config.fixed_lambda`` bypasses
    cross-validation and solves at the given penalty instead.
    """
    y = np.asarray(response, dtype=np.float64).reshape(-1)
    if not np.isfinite(y).all():
        raise NonFiniteInput("response contains non-finite values")
    if y.shape[0] != design.n_obs:
        raise DimensionMismatch("response length does not match design rows")
    if not penalized_terms:
        raise EmptyPenaltySet("no penalized terms supplied")
    unknown = set(penalized_terms) - set(design.terms)
    if unknown:
        raise ValidationError(f"penalized terms not in design: {sorted(unknown)}")

    terms = list(design.terms)
    x_full = design.values
    const_cols = [j for j in range(len(terms)) if np.ptp(x_full[:, j]) == 0.0]
    intercept_cols = [j for j in const_cols if terms[j] not in penalized_terms]
    if not intercept_cols:
        raise ValidationError("fit_lasso requires an unpenalized intercept column")
    if any(terms[j] in penalized_terms for j in const_cols):
        raise ValidationError("constant columns cannot be penalized")
    icol = intercept_cols[0]

    keep = [j for j in range(len(terms)) if j != icol]
    names = [terms[j] for j in keep]
    x = np.ascontiguousarray(x_full[:, keep])
    xsq = x * x
    pen = np.array([name in penalized_terms for name in names])
    unpen_idx = np.flatnonzero(~pen)
    n = x.shape[0]

    def make_problem(rows: np.ndarray) -> _CdProblem:
        prob = _CdProblem(x, xsq, y, rows)
        for j in unpen_idx:
            prob.activate(int(j), False)
        return prob

    full = make_problem(np.arange(n))
    # Residual after the unpenalized block alone fixes the top of the grid.
    full.solve_at(0.0, np.zeros(len(names), dtype=bool), config.tol, config.max_sweeps)
    corr0 = np.abs(full.corr_all())
    lam_max = float(corr0[pen].max()) if pen.any() else 0.0

    if config.fixed_lambda is not None:
        lam = float(config.fixed_lambda)
        if lam >= lam_max or lam_max <= 0.0:
            grid = np.array([lam])
        else:
            warm = np.geomspace(lam_max, max(lam, lam_max * config.lambda_min_ratio), num=20)
            grid = np.append(warm[warm > lam], lam)
        cv_mse = None
        chosen_idx = len(grid) - 1
        for lam in grid:
            if full.saturated():
                break
            full.solve_at(lam, pen, config.tol, config.max_sweeps)
        orig, intercept = full.coefficients()
    else:
        if lam_max <= 0.0:
            grid = np.array([0.0])
        else:
            grid = np.geomspace(lam_max, lam_max * config.lambda_min_ratio, num=config.grid_size)
        folds = _cv_fold_indices(n, config.cv_folds, config.seed)
        n_unpen = len(unpen_idx) + 1
        if min(len(f) for f in folds) < n_unpen:
            raise FoldTooSmall(
                f"smallest CV fold has fewer rows than {n_unpen} unpenalized terms"
            )
        # One pass computes the column moments of every training subset.
        ind = np.zeros((n, config.cv_folds))
        train_rows = []
        for fi, test_idx in enumerate(folds):
            train_mask = np.ones(n, dtype=bool)
            train_mask[test_idx] = False
            rows = np.flatnonzero(train_mask)
            train_rows.append(rows)
            ind[rows, fi] = 1.0
        counts = ind.sum(axis=0)
        mu_all = (x.T @ ind) / counts
        msq_all = (xsq.T @ ind) / counts
        fold_probs = []
        for fi, rows in enumerate(train_rows):
            prob = _CdProblem(x, xsq, y, rows, mu=mu_all[:, fi], msq=msq_all[:, fi])
            for j in unpen_idx:
                prob.activate(int(j), False)
            fold_probs.append(prob)

        # Problems walk the grid together. Each KKT check screens every column
        # with one shared single-precision matrix pass and confirms the
        # near-threshold band in double precision (the error envelope is
        # accounted for, so no violator can slip through). Past saturation a
        # problem is frozen and deeper grid points score its last solution.
        x32 = np.ascontiguousarray(x, dtype=np.float32)
        sqrt_n = math.sqrt(n)

        def walk(probs: list[_CdProblem], grid_vals: np.ndarray, exact: bool, after=None) -> None:
            for gi, lam in enumerate(grid_vals):
                pending = []
                for prob in probs:
                    if not prob.saturated():
                        prob.begin_step(lam)
                        pending.append(prob)
                while pending:
                    for prob in pending:
                        prob.advance(lam, config.tol, config.max_sweeps, exact=exact)
                    r32 = np.zeros((n, len(pending)), dtype=np.float32)
                    for k, prob in enumerate(pending):
                        r32[prob.rows, k] = prob.resid
                    s32 = x32.T @ r32
                    still = []
                    for k, prob in enumerate(pending):
                        sumr = float(prob.resid.sum())
                        rnorm = math.sqrt(float(prob.resid @ prob.resid))
                        corr_apx = (s32[:, k] - prob.mu * sumr) / (prob.sd * prob.n)
                        slack = prob.slack_base * (rnorm / sqrt_n)
                        maybe = pen & ~prob.in_active & (np.abs(corr_apx) + slack > lam + 1e-8)
                        cand0 = np.flatnonzero(maybe)
                        if cand0.size:
                            r_full = np.zeros(n)
                            r_full[prob.rows] = prob.resid
                            s_exact = x[:, cand0].T @ r_full
                            corr_ex = (s_exact - prob.mu[cand0] * sumr) / (prob.sd[cand0] * prob.n)
                            corr_abs = np.abs(corr_ex)
                            keep = corr_abs > lam + 1e-8
                            admitted = prob._admit(cand0[keep], corr_abs[keep])
                        else:
                            admitted = prob._admit(cand0, np.empty(0))
                        if admitted:
                            still.append(prob)
                    pending = still
                if after is not None:
                    after(gi)

        mse = np.zeros((config.cv_folds, len(grid)))

        def record(gi: int) -> None:
            for fi, prob in enumerate(fold_probs):
                err = y[folds[fi]] - prob.predict_rows(folds[fi])
                mse[fi, gi] = float(err @ err) / len(folds[fi])

        walk(fold_probs, grid, exact=True, after=record)
        cv_mse = mse.mean(axis=0)
        chosen_idx = int(np.argmin(cv_mse))
        walk([full], grid[: chosen_idx + 1], exact=True)
        orig, intercept = full.coefficients()

    coef: dict[str, float] = {terms[icol]: intercept}
    selected = set()
    for j in range(len(names)):
        if orig[j] != 0.0 or not pen[j]:
            coef[names[j]] = float(orig[j])
        if pen[j] and orig[j] != 0.0:
            selected.add(names[j])
    return LassoFit(
        lambda_grid=grid,
        chosen_lambda=float(grid[chosen_idx]),
        coefficients_at_chosen=coef,
        selected_terms=frozenset(selected),
        cv_mse=cv_mse,
    )
