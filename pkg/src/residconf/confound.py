"""Paired final/extended fits, the corrected estimator and its lambda sensitivity sweep.

The extended model adds the future exposure X_{t+J} to the analyst's final
model. With ``b1`` the extended-model and ``d1`` the final-model exposure
coefficients, the corrected estimate for a sensitivity value ``lam`` is
``b1*(1 + lam) - lam*d1``; at the true ``lam`` it removes the residual
confounding that the two fits disagree about.
"""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from .data import TimeSeriesDataset
from .errors import NumericalError, ValidationError, ZeroVarianceError
from .glm import (
    Design,
    FitResult,
    ModelSpec,
    WaldResult,
    build_design,
    fit_design,
    fit_poisson_irls,
    wald_test,
)
from .rng import substream

__all__ = [
    "PairedFit",
    "BootstrapSummary",
    "SensitivityParams",
    "CorrectionResult",
    "DetectionReport",
    "fit_pair",
    "correct",
    "corrected_estimate",
    "corrected_variance",
    "lambda_sweep",
    "interpret_lambda",
    "detect",
    "default_block_length",
    "block_indices",
]

# bootstrap substreams live under this key so they never collide with simulation streams
_BOOT_STREAM = 0xB007


@dataclass(frozen=True)
class BootstrapSummary:
    replicates: int
    block_length: int
    n_failed: int
    corr: float  # correlation of (b1*, d1*) across resamples
    var_b1: float
    var_d1: float
    cov: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class PairedFit:
    """Final and extended fits on the identical row set, plus rho and Cov(b1, d1).

    ``cov_b1_d1`` is NaN when no bootstrap was run; only the lambda = 0 row of a
    sweep is available in that case.
    """

    final: FitResult
    extended: FitResult
    exposure: str
    indicator: str
    rho: float
    rho_partial: float
    n_common: int
    cov_b1_d1: float = float("nan")
    bootstrap: BootstrapSummary | None = None

    @property
    def b1(self) -> float:
        return self.extended.coef(self.exposure)

    @property
    def d1(self) -> float:
        return self.final.coef(self.exposure)

    @property
    def b3(self) -> float:
        return self.extended.coef(self.indicator)

    @property
    def var_b1(self) -> float:
        return self.extended.var(self.exposure)

    @property
    def var_d1(self) -> float:
        return self.final.var(self.exposure)

    def to_dict(self) -> dict:
        return {
            "exposure": self.exposure,
            "indicator": self.indicator,
            "b1": self.b1,
            "d1": self.d1,
            "b3": self.b3,
            "var_b1": self.var_b1,
            "var_d1": self.var_d1,
            "cov_b1_d1": self.cov_b1_d1,
            "rho": self.rho,
            "rho_partial": self.rho_partial,
            "n_common": self.n_common,
            "bootstrap": self.bootstrap.to_dict() if self.bootstrap else None,
            "final": self.final.to_dict(),
            "extended": self.extended.to_dict(),
        }


def default_block_length(n: int) -> int:
    """Smallest integer ``b`` with ``b**3 >= n``."""
    b = max(1, math.ceil(n ** (1.0 / 3.0)))
    while b > 1 and (b - 1) ** 3 >= n:
        b -= 1
    while b**3 < n:
        b += 1
    return b


def block_indices(n: int, block_length: int, rng: np.random.Generator) -> np.ndarray:
    """Moving-blocks resample of row positions 0..n-1, truncated to length n."""
    if not 1 <= block_length <= n:
        raise ValidationError(f"block length must be in [1, {n}], got {block_length}")
    k = -(-n // block_length)
    starts = rng.integers(0, n - block_length + 1, size=k)
    return (starts[:, None] + np.arange(block_length)).ravel()[:n]


def _corr(a: np.ndarray, b: np.ndarray) -> float:
    a = a - a.mean()
    b = b - b.mean()
    den = math.sqrt(float(a @ a) * float(b @ b))
    if den == 0:
        raise ZeroVarianceError("correlation undefined: a series has zero variance")
    return float(a @ b) / den


def _partial_corr(a, b, Z) -> float:
    if Z.shape[1] == 0:
        return _corr(a, b)
    ra = a - Z @ np.linalg.lstsq(Z, a, rcond=None)[0]
    rb = b - Z @ np.linalg.lstsq(Z, b, rcond=None)[0]
    return _corr(ra, rb)


def _boot_ols(design: Design, jx: int, jind: int, block_length: int, reps: int, seed: int, key) -> tuple[np.ndarray, np.ndarray]:
    """Pairs bootstrap of both OLS slopes via block sums of X'X and X'y."""
    X, y = design.X, design.y
    n, p = X.shape
    outer = np.einsum("ti,tj->tij", X, X)
    cxx = np.concatenate([np.zeros((1, p, p)), np.cumsum(outer, axis=0)])
    cxy = np.concatenate([np.zeros((1, p)), np.cumsum(X * y[:, None], axis=0)])
    k = -(-n // block_length)
    last = n - (k - 1) * block_length
    starts = np.stack([substream(seed, _BOOT_STREAM, *key, b).integers(0, n - block_length + 1, size=k) for b in range(reps)])
    full, tail = starts[:, :-1], starts[:, -1]
    xtx = (cxx[full + block_length] - cxx[full]).sum(axis=1) + cxx[tail + last] - cxx[tail]
    xty = (cxy[full + block_length] - cxy[full]).sum(axis=1) + cxy[tail + last] - cxy[tail]
    keep = [j for j in range(p) if j != jind]
    try:
        ext = np.linalg.solve(xtx, xty[..., None])[..., 0]
        fin = np.linalg.solve(xtx[:, keep][:, :, keep], xty[:, keep][..., None])[..., 0]
    except np.linalg.LinAlgError:
        # a singular resample somewhere in the batch: refit one by one
        return _boot_generic(design, "linear", jx, jind, block_length, reps, seed, key)
    return ext[:, jx], fin[:, keep.index(jx)]


def _boot_generic(design: Design, family: str, jx: int, jind: int, block_length: int, reps: int, seed: int, key, starts=None):
    n, p = design.X.shape
    keep = [j for j in range(p) if j != jind]
    b1 = np.full(reps, np.nan)
    d1 = np.full(reps, np.nan)
    for b in range(reps):
        idx = block_indices(n, block_length, substream(seed, _BOOT_STREAM, *key, b))
        X, y = design.X[idx], design.y[idx]
        try:
            if family == "linear":
                if np.linalg.matrix_rank(X) < p:
                    continue
                e = np.linalg.lstsq(X, y, rcond=None)[0]
                f = np.linalg.lstsq(X[:, keep], y, rcond=None)[0]
            else:
                fe = fit_poisson_irls(X, y, start=None if starts is None else starts[0])
                ff = fit_poisson_irls(X[:, keep], y, start=None if starts is None else starts[1])
                if not (fe.converged and ff.converged):
                    continue
                e, f = fe.coefficients, ff.coefficients
        except NumericalError:
            continue
        b1[b] = e[jx]
        d1[b] = f[keep.index(jx)]
    return b1, d1


def bootstrap_slopes(
    design: Design,
    family: str,
    exposure: str,
    indicator: str,
    reps: int = 500,
    block_length: int | None = None,
    seed: int = 0,
    key: Sequence[int] = (),
    start=None,
    fast: bool = True,
) -> tuple[np.ndarray, np.ndarray]:
    """Moving-blocks pairs bootstrap of (b1, d1); resample ``b`` draws from its own substream."""
    jx, jind = design.names.index(exposure), design.names.index(indicator)
    bl = block_length or default_block_length(design.n)
    key = tuple(key)
    if family == "linear" and fast:
        return _boot_ols(design, jx, jind, bl, reps, seed, key)
    return _boot_generic(design, family, jx, jind, bl, reps, seed, key, start)


def fit_pair(
    d: TimeSeriesDataset,
    spec: ModelSpec,
    covariance: str = "model",
    bootstrap_b: int = 500,
    block_length: int | None = None,
    seed: int = 0,
    stream_key: Sequence[int] = (),
    max_iter: int = 100,
    tol: float = 1e-10,
) -> PairedFit:
    """Fit the final and extended models on the rows where the lead exposure exists.

    Cov(b1, d1) is the moving-blocks bootstrap correlation of the two slopes
    scaled by the fits' own standard errors, which keeps the joint 2x2
    covariance positive semidefinite. ``bootstrap_b=0`` skips it.
    """
    ext_design = build_design(d, spec.with_indicator(True))
    ind = spec.with_indicator(True).indicator_col
    fin_design = ext_design.drop(ind)
    extended = fit_design(ext_design, spec.family, covariance, max_iter=max_iter, tol=tol).require_converged()
    final = fit_design(fin_design, spec.family, covariance, max_iter=max_iter, tol=tol).require_converged()

    names = ext_design.names
    x = ext_design.X[:, names.index(spec.exposure_col)]
    lead = ext_design.X[:, names.index(ind)]
    rho = _corr(x, lead)
    others = [j for j, nm in enumerate(names) if nm not in (spec.exposure_col, ind)]
    Z = ext_design.X[:, others]
    if "intercept" not in names:
        Z = np.column_stack([np.ones(ext_design.n), Z])
    try:
        rho_partial = _partial_corr(x, lead, Z)
    except ZeroVarianceError:
        rho_partial = float("nan")

    pair = PairedFit(
        final=final,
        extended=extended,
        exposure=spec.exposure_col,
        indicator=ind,
        rho=rho,
        rho_partial=rho_partial,
        n_common=ext_design.n,
    )
    if bootstrap_b and bootstrap_b > 0:
        bl = block_length or default_block_length(ext_design.n)
        bs_b1, bs_d1 = bootstrap_slopes(
            ext_design,
            spec.family,
            spec.exposure_col,
            ind,
            reps=int(bootstrap_b),
            block_length=bl,
            seed=seed,
            key=stream_key,
            start=(extended.coefficients, final.coefficients),
        )
        ok = np.isfinite(bs_b1) & np.isfinite(bs_d1)
        n_failed = int((~ok).sum())
        if n_failed > 0.1 * bootstrap_b:
            raise NumericalError(f"{n_failed} of {bootstrap_b} bootstrap refits failed")
        r = _corr(bs_b1[ok], bs_d1[ok])
        pair.cov_b1_d1 = r * math.sqrt(pair.var_b1 * pair.var_d1)
        c = np.cov(bs_b1[ok], bs_d1[ok])
        pair.bootstrap = BootstrapSummary(int(bootstrap_b), int(bl), n_failed, r, float(c[0, 0]), float(c[1, 1]), float(c[0, 1]))
    return pair


def correct(b1: float, d1: float, lam: float) -> float:
    return b1 * (1.0 + lam) - lam * d1


def corrected_estimate(pair: PairedFit, lam: float) -> float:
    """``b1*(1 + lam) - lam*d1``; equals ``b1`` exactly at ``lam = 0``."""
    return correct(pair.b1, pair.d1, float(lam))


def corrected_variance(pair: PairedFit, lam: float) -> float:
    """Variance of the corrected estimate treating ``lam`` as a known constant."""
    lam = float(lam)
    vb, vd, c = pair.var_b1, pair.var_d1, pair.cov_b1_d1
    if lam == 0.0:
        return vb
    if not math.isfinite(c):
        raise ValidationError("Cov(b1, d1) is unavailable; refit the pair with bootstrap replicates > 0")
    v = (1.0 + lam) ** 2 * vb + lam**2 * vd - 2.0 * lam * (1.0 + lam) * c
    if v < 0:
        if v < -1e-6 * max(vb, vd):
            raise NumericalError(f"corrected variance {v:.3g} is negative at lambda={lam}; inconsistent covariance estimate")
        warnings.warn(f"corrected variance {v:.3g} clamped to 0 at lambda={lam}", RuntimeWarning, stacklevel=2)
        v = 0.0
    return v


@dataclass(frozen=True)
class SensitivityParams:
    """Explicit lambda values, or a grid ``center + span*linspace(-1, 1, count)``.

    ``center`` defaults to 1/rho and ``span`` to 2/rho, giving 21 points from
    -1/rho to 3/rho. Recipe grids always contain 0.
    """

    lambda_values: tuple[float, ...] | None = None
    center: float | None = None
    span: float | None = None
    count: int = 21

    def grid(self, rho: float) -> np.ndarray:
        if self.lambda_values is not None:
            vals = np.array(sorted(set(float(v) for v in self.lambda_values)))
            if vals.size == 0 or not np.all(np.isfinite(vals)):
                raise ValidationError("lambda grid must be non-empty and finite")
            return vals
        if self.count < 1:
            raise ValidationError("lambda grid count must be >= 1")
        if rho == 0 and (self.center is None or self.span is None):
            raise ValidationError("rho is 0; the default lambda grid centred on 1/rho is undefined")
        inv = 1.0 / rho if rho != 0 else 0.0
        center = inv if self.center is None else float(self.center)
        span = 2.0 * abs(inv) if self.span is None else float(self.span)
        vals = center + span * np.linspace(-1.0, 1.0, self.count)
        # snap round-off so 0 and 1/rho appear exactly
        scale = max(1.0, np.abs(vals).max())
        for target in (0.0, inv):
            vals[np.abs(vals - target) < 1e-12 * scale] = target
        if not np.any(vals == 0.0):
            vals = np.append(vals, 0.0)
        return np.unique(vals)


def interpret_lambda(lam: float, rho: float, rtol: float = 1e-9) -> str:
    if lam < 0:
        return "opposite-direction"
    if lam == 0:
        return "no-confounding"
    inv = 1.0 / rho if rho != 0 else math.inf
    if math.isclose(lam, inv, rel_tol=rtol):
        return "equal"
    return "stronger-with-X_t" if lam > inv else "weaker-with-X_t"


@dataclass
class CorrectionResult:
    lambda_grid: np.ndarray
    estimates: np.ndarray
    variances: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    interpretation: list[str]
    rho: float
    rho_partial: float
    level: float
    pair: PairedFit = field(repr=False)

    def rows(self) -> list[dict]:
        return [
            {
                "lambda": float(self.lambda_grid[i]),
                "estimate": float(self.estimates[i]),
                "variance": float(self.variances[i]),
                "ci_lo": float(self.ci_lo[i]),
                "ci_hi": float(self.ci_hi[i]),
                "interpretation": self.interpretation[i],
            }
            for i in range(self.lambda_grid.size)
        ]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["lambda", "estimate", "variance", "ci_lo", "ci_hi", "interpretation"])
        for r in self.rows():
            w.writerow([repr(r["lambda"]), repr(r["estimate"]), repr(r["variance"]), repr(r["ci_lo"]), repr(r["ci_hi"]), r["interpretation"]])
        return buf.getvalue()

    def to_dict(self) -> dict:
        p = self.pair
        return {
            "exposure": p.exposure,
            "b1_extended": p.b1,
            "d1_final": p.d1,
            "var_b1": p.var_b1,
            "var_d1": p.var_d1,
            "cov_b1_d1": p.cov_b1_d1,
            "rho": self.rho,
            "inverse_rho": 1.0 / self.rho if self.rho else None,
            "rho_partial": self.rho_partial,
            "n_common": p.n_common,
            "level": self.level,
            "bootstrap": p.bootstrap.to_dict() if p.bootstrap else None,
            "rows": self.rows(),
        }


def lambda_sweep(pair: PairedFit, params: SensitivityParams | None = None, level: float = 0.95) -> CorrectionResult:
    params = params or SensitivityParams()
    grid = params.grid(pair.rho)
    est = np.array([corrected_estimate(pair, lam) for lam in grid])
    var = np.array([corrected_variance(pair, lam) for lam in grid])
    zq = float(stats.norm.ppf(0.5 + level / 2.0))
    half = zq * np.sqrt(var)
    return CorrectionResult(
        lambda_grid=grid,
        estimates=est,
        variances=var,
        ci_lo=est - half,
        ci_hi=est + half,
        interpretation=[interpret_lambda(l, pair.rho) for l in grid],
        rho=pair.rho,
        rho_partial=pair.rho_partial,
        level=level,
        pair=pair,
    )


CAUTION = (
    "A non-significant indicator does not establish the absence of confounding; "
    "the test only has power against confounders that also track the future exposure."
)


@dataclass(frozen=True)
class DetectionReport:
    wald: WaldResult
    alpha: float

    @property
    def reject(self) -> bool:
        return self.wald.p < self.alpha

    @property
    def verdict(self) -> str:
        w = self.wald
        if self.reject:
            return f"residual confounding suggested: indicator {w.name} coefficient {w.estimate:.4g} (p={w.p:.3g} < {self.alpha})"
        return f"no evidence of residual confounding at alpha={self.alpha}: indicator {w.name} p={w.p:.3g}"

    def to_dict(self) -> dict:
        w = self.wald
        return {
            "indicator": w.name,
            "b3": w.estimate,
            "se": w.se,
            "z": w.z,
            "p": w.p,
            "alpha": self.alpha,
            "reject": self.reject,
            "verdict": self.verdict,
            "caution": CAUTION,
        }


def detect(pair: PairedFit, alpha: float = 0.05) -> DetectionReport:
    """Wald test of the future-indicator coefficient in the extended model."""
    return DetectionReport(wald_test(pair.extended, pair.indicator), alpha)
