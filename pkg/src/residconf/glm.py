"""Linear (OLS) and Poisson log-link (IRLS) fits of the final and extended models."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy import linalg, stats

from .data import TimeSeriesDataset, make_indicator
from .errors import NotConvergedError, RankDeficientError, SchemaError, ValidationError, ZeroVarianceError

__all__ = [
    "ModelSpec",
    "Design",
    "FitResult",
    "WaldResult",
    "build_design",
    "fit_ols",
    "fit_poisson_irls",
    "fit_model",
    "hac_covariance",
    "wald_test",
    "poisson_deviance",
]

FAMILIES = ("linear", "poisson-log")
_ALIASES = {
    "linear": "linear",
    "gaussian": "linear",
    "ols": "linear",
    "poisson": "poisson-log",
    "poisson-log": "poisson-log",
    "loglinear": "poisson-log",
}
RANK_TOL = 1e-8


def normalize_family(family: str) -> str:
    try:
        return _ALIASES[str(family).lower()]
    except KeyError:
        raise ValidationError(f"unknown family {family!r}; expected one of {FAMILIES}") from None


def indicator_name(exposure_col: str, lead: int) -> str:
    return f"{exposure_col}_lead{lead}"


@dataclass(frozen=True)
class ModelSpec:
    """One regression: family, outcome, exposure, covariates and the optional future indicator."""

    family: str = "poisson-log"
    outcome_col: str = "y"
    exposure_col: str = "x"
    covariate_cols: tuple[str, ...] = ()
    include_indicator: bool = False
    indicator_lead: int = 1
    include_intercept: bool = True

    def __post_init__(self):
        object.__setattr__(self, "family", normalize_family(self.family))
        object.__setattr__(self, "covariate_cols", tuple(self.covariate_cols))
        if self.exposure_col in self.covariate_cols:
            raise ValidationError(f"exposure {self.exposure_col!r} is also listed as a covariate")
        if len(set(self.covariate_cols)) != len(self.covariate_cols):
            raise ValidationError(f"covariate listed twice: {list(self.covariate_cols)}")
        if self.outcome_col == self.exposure_col or self.outcome_col in self.covariate_cols:
            raise ValidationError(f"outcome {self.outcome_col!r} cannot also be a regressor")
        if self.include_indicator and int(self.indicator_lead) < 1:
            raise ValidationError(f"indicator lead must be >= 1, got {self.indicator_lead}")

    def with_indicator(self, on: bool = True) -> "ModelSpec":
        return replace(self, include_indicator=on)

    @property
    def indicator_col(self) -> str:
        return indicator_name(self.exposure_col, self.indicator_lead)


@dataclass(frozen=True)
class Design:
    X: np.ndarray
    y: np.ndarray
    names: list[str]
    rows: np.ndarray  # dataset row positions that entered

    @property
    def n(self) -> int:
        return int(self.X.shape[0])

    def drop(self, name: str) -> "Design":
        j = self.names.index(name)
        keep = [k for k in range(len(self.names)) if k != j]
        return Design(self.X[:, keep], self.y, [self.names[k] for k in keep], self.rows)


def build_design(d: TimeSeriesDataset, spec: ModelSpec) -> Design:
    """Columns in order: intercept, exposure, covariates, indicator.

    With the indicator on, rows are restricted to those whose lead day exists.
    """
    for col in (spec.outcome_col, spec.exposure_col, *spec.covariate_cols):
        d.column(col)  # raises SchemaError on unknown names
    if spec.outcome_col != d.outcome_name:
        raise SchemaError(f"outcome column {spec.outcome_col!r} is not the dataset outcome {d.outcome_name!r}")
    if spec.exposure_col != d.exposure_name:
        raise SchemaError(f"exposure column {spec.exposure_col!r} is not the dataset exposure {d.exposure_name!r}")

    rows = np.arange(d.n)
    cols, names = [], []
    if spec.include_intercept:
        cols.append(np.ones(d.n))
        names.append("intercept")
    cols.append(d.exposure)
    names.append(spec.exposure_col)
    for c in spec.covariate_cols:
        cols.append(d.column(c))
        names.append(c)
    if spec.include_indicator:
        ind = make_indicator(d, spec.indicator_lead)
        cols.append(ind.values)
        names.append(spec.indicator_col)
        rows = ind.valid_range
    if rows.size == 0:
        raise ValidationError("no rows available for the design")
    X = np.column_stack(cols)[rows]
    return Design(X=X, y=d.outcome[rows].copy(), names=names, rows=rows)


@dataclass
class FitResult:
    """Coefficients with aligned covariance and convergence metadata.

    ``deviance`` is the Poisson deviance for the log-linear family and the
    residual sum of squares for the linear family.
    """

    names: list[str]
    coefficients: np.ndarray
    covariance: np.ndarray
    n_used: int
    converged: bool
    iterations: int
    family: str
    deviance: float
    covariance_type: str = "model"
    fitted: np.ndarray | None = field(default=None, repr=False)
    rows: np.ndarray | None = field(default=None, repr=False)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise SchemaError(f"no coefficient named {name!r}; have {self.names}") from None

    def coef(self, name: str) -> float:
        return float(self.coefficients[self.index(name)])

    def var(self, name: str) -> float:
        j = self.index(name)
        return float(self.covariance[j, j])

    def se(self, name: str) -> float:
        return math.sqrt(max(self.var(name), 0.0))

    @property
    def std_errors(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))

    def require_converged(self) -> "FitResult":
        if not self.converged:
            raise NotConvergedError(f"{self.family} fit did not converge after {self.iterations} iterations")
        return self

    def to_dict(self) -> dict:
        k = len(self.names)
        return {
            "family": self.family,
            "names": list(self.names),
            "estimates": self.coefficients.tolist(),
            "std_errors": self.std_errors.tolist(),
            "covariance_type": self.covariance_type,
            "covariance_shape": [k, k],
            "covariance": self.covariance.reshape(-1).tolist(),
            "n_used": int(self.n_used),
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "deviance" if self.family == "poisson-log" else "rss": float(self.deviance),
        }


def _check_rank(X: np.ndarray, names: Sequence[str] | None) -> None:
    n, p = X.shape
    if n < p:
        raise RankDeficientError(f"design has {n} rows but {p} columns")
    _, s, vt = np.linalg.svd(X, full_matrices=False)
    if s[0] == 0 or s[-1] < RANK_TOL * s[0]:
        names = list(names) if names is not None else [f"x{j}" for j in range(p)]
        v = np.abs(vt[-1])
        involved = [names[j] for j in np.flatnonzero(v > 1e-3 * v.max())] if s[0] > 0 else list(names)
        raise RankDeficientError(f"design is rank deficient; collinear columns: {involved}", involved)


def _names(names, p):
    return list(names) if names is not None else [f"x{j}" for j in range(p)]


def _inv_rtr(r: np.ndarray) -> np.ndarray:
    rinv = linalg.solve_triangular(r, np.eye(r.shape[0]))
    cov = rinv @ rinv.T
    return 0.5 * (cov + cov.T)


def fit_ols(X, y, names: Sequence[str] | None = None) -> FitResult:
    """Least squares with model-based covariance sigma^2 (X'X)^-1, sigma^2 = RSS/(n-p)."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, p = X.shape
    _check_rank(X, names)
    q, r = np.linalg.qr(X)
    beta = linalg.solve_triangular(r, q.T @ y)
    fitted = X @ beta
    resid = y - fitted
    rss = float(resid @ resid)
    sigma2 = rss / (n - p) if n > p else float("nan")
    return FitResult(
        names=_names(names, p),
        coefficients=beta,
        covariance=sigma2 * _inv_rtr(r),
        n_used=n,
        converged=True,
        iterations=1,
        family="linear",
        deviance=rss,
        fitted=fitted,
    )


def poisson_deviance(y: np.ndarray, mu: np.ndarray) -> float:
    with np.errstate(divide="ignore", invalid="ignore"):
        term = np.where(y > 0, y * np.log(y / mu), 0.0)
    return float(2.0 * np.sum(term - (y - mu)))


def _check_counts(y: np.ndarray) -> None:
    if np.any(y < 0) or np.any(np.floor(y) != y):
        bad = int(np.flatnonzero((y < 0) | (np.floor(y) != y))[0])
        raise ValidationError(f"Poisson outcome must be nonnegative integers; design row {bad} has {float(y[bad])!r} (use --family linear for real-valued outcomes)")


def _mu(X, beta):
    eta = np.clip(X @ beta, -700.0, 700.0)
    return eta, np.exp(eta)


def fit_poisson_irls(
    X,
    y,
    names: Sequence[str] | None = None,
    max_iter: int = 100,
    tol: float = 1e-10,
    check_counts: bool = True,
    start: np.ndarray | None = None,
) -> FitResult:
    """Poisson log-link maximum likelihood by iteratively reweighted least squares.

    Starts from the intercept-only solution, halves a step up to 10 times when
    the deviance rises and stops once the largest coefficient change falls
    below ``tol``. Five consecutive steps that still raise the deviance after
    damping end the fit with ``converged=False``. The covariance is the
    inverse Fisher information at the final estimate.

    ``check_counts=False`` admits a real-valued response, which is how the
    population limit of the estimator is computed from expected counts.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, p = X.shape
    if check_counts:
        _check_counts(y)
    elif np.any(y < 0):
        raise ValidationError("Poisson response must be nonnegative")
    _check_rank(X, names)

    if start is not None:
        beta = np.array(start, dtype=np.float64)
    else:
        beta = np.zeros(p)
        ones = np.flatnonzero(np.all(X == 1.0, axis=0))
        if ones.size:
            beta[ones[0]] = math.log(max(float(np.mean(y)), 1e-10))
    eta, mu = _mu(X, beta)
    dev = poisson_deviance(y, mu)

    converged = False
    bad_steps = 0
    it = 0
    for it in range(1, max_iter + 1):
        z = eta + (y - mu) / mu
        sw = np.sqrt(mu)
        new, *_ = np.linalg.lstsq(X * sw[:, None], z * sw, rcond=None)
        step = new - beta
        cand = beta + step
        eta_c, mu_c = _mu(X, cand)
        dev_c = poisson_deviance(y, mu_c)
        slack = 1e-10 * (1.0 + abs(dev))
        halvings = 0
        while not dev_c <= dev + slack and halvings < 10:
            step = 0.5 * step
            cand = beta + step
            eta_c, mu_c = _mu(X, cand)
            dev_c = poisson_deviance(y, mu_c)
            halvings += 1
        bad_steps = bad_steps + 1 if not dev_c <= dev + slack else 0
        beta, eta, mu, dev = cand, eta_c, mu_c, dev_c
        if bad_steps >= 5:
            break
        if np.max(np.abs(step)) < tol:
            converged = True
            break

    _, r = np.linalg.qr(X * np.sqrt(mu)[:, None])
    return FitResult(
        names=_names(names, p),
        coefficients=beta,
        covariance=_inv_rtr(r),
        n_used=n,
        converged=converged,
        iterations=it,
        family="poisson-log",
        deviance=dev,
        fitted=mu,
    )


def hac_covariance(X, resid, bandwidth: int, weights=None) -> np.ndarray:
    """Newey-West sandwich with Bartlett weights ``1 - l/(L+1)``.

    ``resid`` is y minus fitted mean. ``weights`` enter the bread
    ``X' diag(weights) X``: ones for least squares, the fitted means for the
    Poisson family. Lag ``l`` is taken in rows, so rows should be consecutive
    days. ``bandwidth=0`` gives the heteroskedasticity-only (White) sandwich.
    """
    X = np.asarray(X, dtype=np.float64)
    resid = np.asarray(resid, dtype=np.float64)
    n, p = X.shape
    L = int(bandwidth)
    if L < 0:
        raise ValidationError(f"HAC bandwidth must be >= 0, got {L}")
    if L >= n:
        raise ValidationError(f"HAC bandwidth {L} must be smaller than the number of rows {n}")
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)
    scores = X * resid[:, None]
    meat = scores.T @ scores
    for lag in range(1, L + 1):
        g = scores[lag:].T @ scores[:-lag]
        meat += (1.0 - lag / (L + 1.0)) * (g + g.T)
    bread = linalg.inv(X.T @ (X * w[:, None]))
    cov = bread @ meat @ bread
    return 0.5 * (cov + cov.T)


def parse_covariance(choice: str | None) -> tuple[str, int]:
    """``"model"`` or ``"hac:L"`` -> (kind, bandwidth)."""
    if choice is None or str(choice).lower() == "model":
        return "model", 0
    kind, _, lag = str(choice).partition(":")
    if kind.lower() != "hac" or not lag.strip().isdigit():
        raise ValidationError(f"covariance must be 'model' or 'hac:L', got {choice!r}")
    return "hac", int(lag)


def fit_design(design: Design, family: str, covariance: str = "model", max_iter: int = 100, tol: float = 1e-10) -> FitResult:
    family = normalize_family(family)
    kind, lag = parse_covariance(covariance)
    if family == "linear":
        fit = fit_ols(design.X, design.y, design.names)
        weights = None
    else:
        fit = fit_poisson_irls(design.X, design.y, design.names, max_iter=max_iter, tol=tol)
        weights = fit.fitted
    fit.rows = design.rows
    if kind == "hac":
        fit.covariance = hac_covariance(design.X, design.y - fit.fitted, lag, weights)
        fit.covariance_type = f"hac:{lag}"
    return fit


def fit_model(d: TimeSeriesDataset, spec: ModelSpec, covariance: str = "model", **controls) -> FitResult:
    return fit_design(build_design(d, spec), spec.family, covariance, **controls)


@dataclass(frozen=True)
class WaldResult:
    name: str
    estimate: float
    se: float
    z: float
    p: float

    def to_dict(self) -> dict:
        return {"name": self.name, "estimate": self.estimate, "se": self.se, "z": self.z, "p": self.p}


def wald_test(fit: FitResult, name: str) -> WaldResult:
    """Two-sided normal-theory test of one coefficient against zero."""
    est = fit.coef(name)
    var = fit.var(name)
    if not var > 0:
        raise ZeroVarianceError(f"coefficient {name!r} has non-positive variance {var!r}")
    se = math.sqrt(var)
    z = est / se
    return WaldResult(name, est, se, z, float(2.0 * stats.norm.sf(abs(z))))
