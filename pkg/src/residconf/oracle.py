"""Closed-form limits for jointly Gaussian data-generating processes.

For a stationary Gaussian law of ``(X_t, C_t, X_{t+1}, U_t)`` the conditional
means of U_t and X_{t+1} are exact linear projections, so the large-sample
limits of the misspecified final and extended fits follow in closed form:

* extended model exposure slope  ->  beta1 + beta3*alpha1
* final model exposure slope     ->  beta1 + beta3*alpha1 + beta3*alpha3*gamma1

For the Poisson family the same slopes hold and the intercepts pick up the
Gaussian moment-generating-function constants.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import NamedTuple, Sequence

import numpy as np
from scipy import linalg

from .errors import NumericalError, ValidationError
from .glm import indicator_name, normalize_family

__all__ = [
    "GaussianDGP",
    "Alphas",
    "Gammas",
    "TheoreticalBias",
    "OracleError",
    "project_alphas",
    "project_gammas",
    "theoretical_bias",
    "expected_coeffs",
    "expected_loglinear_coeffs",
    "reference_dgp",
]


class OracleError(NumericalError):
    pass


@dataclass(frozen=True)
class GaussianDGP:
    """Joint Gaussian law of ``(X_t, C_t..., X_{t+1}, U_t)`` plus outcome coefficients.

    ``mean``/``cov`` are ordered exposure, covariates (``covariate_names``),
    lead exposure, confounder. The outcome is
    ``beta0 + beta1*x + beta_c.c + beta3*u`` (plus N(0, noise_sd^2)) for the
    linear family, or Poisson with that log-mean.
    """

    mean: np.ndarray
    cov: np.ndarray
    beta0: float = 0.0
    beta1: float = 0.0
    beta_c: tuple[float, ...] = ()
    beta3: float = 0.0
    noise_sd: float = 1.0
    family: str = "linear"
    covariate_names: tuple[str, ...] = ()

    def __post_init__(self):
        k = len(self.covariate_names)
        mean = np.array(self.mean, dtype=np.float64)
        cov = np.array(self.cov, dtype=np.float64)
        object.__setattr__(self, "family", normalize_family(self.family))
        object.__setattr__(self, "covariate_names", tuple(self.covariate_names))
        if not self.beta_c:
            object.__setattr__(self, "beta_c", (0.0,) * k)
        object.__setattr__(self, "beta_c", tuple(float(b) for b in self.beta_c))
        if mean.shape != (k + 3,) or cov.shape != (k + 3, k + 3):
            raise ValidationError(f"mean/cov must have dimension {k + 3} for {k} covariate(s)")
        if len(self.beta_c) != k:
            raise ValidationError("beta_c must have one entry per covariate")
        if not np.allclose(cov, cov.T, rtol=1e-12, atol=1e-14):
            raise ValidationError("covariance matrix must be symmetric")
        cov = 0.5 * (cov + cov.T)
        # symmetric PSD is enough for degenerate checks (e.g. U = X exactly);
        # the regressor blocks are verified invertible where projections need them.
        if np.linalg.eigvalsh(cov)[0] < -1e-10 * max(1.0, np.abs(cov).max()):
            raise ValidationError("covariance matrix must be positive semidefinite")
        ix, il = 0, k + 1
        vx, vl = cov[ix, ix], cov[il, il]
        if not math.isclose(vx, vl, rel_tol=1e-10, abs_tol=1e-14) or not math.isclose(mean[ix], mean[il], rel_tol=1e-10, abs_tol=1e-14):
            raise ValidationError("stationarity requires equal mean and variance for X_t and X_{t+1}")
        if not vx > 0 or abs(cov[ix, il]) >= vx:
            raise ValidationError("(X_t, X_{t+1}) must form a valid lag-1 autocovariance with |rho| < 1")
        if self.family == "linear" and self.noise_sd < 0:
            raise ValidationError("noise_sd must be nonnegative")
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def k(self) -> int:
        return len(self.covariate_names)

    @property
    def idx_x(self) -> int:
        return 0

    @property
    def idx_c(self) -> list[int]:
        return list(range(1, self.k + 1))

    @property
    def idx_lead(self) -> int:
        return self.k + 1

    @property
    def idx_u(self) -> int:
        return self.k + 2

    @property
    def rho(self) -> float:
        c = self.cov
        return float(c[0, self.idx_lead] / c[0, 0])

    def with_beta(self, **kw) -> "GaussianDGP":
        return replace(self, **kw)

    def scale_confounder(self, factor: float) -> "GaussianDGP":
        """Rescale U by ``factor`` and divide beta3 by it; the outcome law is unchanged."""
        s = np.ones(self.k + 3)
        s[self.idx_u] = factor
        return replace(self, mean=self.mean * s, cov=self.cov * np.outer(s, s), beta3=self.beta3 / factor)

    @classmethod
    def from_loadings(
        cls,
        *,
        x_mean: float = 0.0,
        x_sd: float = 1.0,
        rho: float = 0.6,
        covariate_names: Sequence[str] = (),
        c_means: Sequence[float] = (),
        c_on_x: Sequence[float] = (),
        c_on_lead: Sequence[float] = (),
        c_resid_sd: Sequence[float] = (),
        alpha0: float = 0.0,
        alpha1: float = 0.5,
        alpha_c: Sequence[float] = (),
        alpha3: float = 0.5,
        u_resid_sd: float = 0.5,
        **outcome,
    ) -> "GaussianDGP":
        """Build the joint law from a generative recipe.

        Exposure is stationary with lag-1 correlation ``rho``; each covariate is
        ``c_mean + c_on_x*(X_t - m) + c_on_lead*(X_{t+1} - m) + noise``; the
        confounder is ``alpha0 + alpha1*X_t + alpha_c.C_t + alpha3*X_{t+1} + noise``.
        """
        names = tuple(covariate_names)
        k = len(names)

        def vec(v, default=0.0):
            v = tuple(v) if v else (default,) * k
            if len(v) != k:
                raise ValidationError("covariate recipe vectors must match covariate_names")
            return np.array(v, dtype=np.float64)

        cm, l1, l2, csd, ac = vec(c_means), vec(c_on_x), vec(c_on_lead), vec(c_resid_sd, 1.0), vec(alpha_c)
        # base vector w = (X - m, X' - m, eta_1..eta_k, e)
        dim = k + 3
        sw = np.zeros((dim, dim))
        sw[:2, :2] = x_sd**2 * np.array([[1.0, rho], [rho, 1.0]])
        sw[2 : 2 + k, 2 : 2 + k] = np.diag(csd**2)
        sw[-1, -1] = u_resid_sd**2
        A = np.zeros((dim, dim))
        A[0, 0] = 1.0
        for j in range(k):
            A[1 + j, 0] = l1[j]
            A[1 + j, 1] = l2[j]
            A[1 + j, 2 + j] = 1.0
        A[k + 1, 1] = 1.0
        A[k + 2] = alpha1 * A[0] + alpha3 * A[k + 1] + ac @ A[1 : 1 + k]
        A[k + 2, -1] = 1.0
        cov = A @ sw @ A.T
        mean = np.concatenate([[x_mean], cm, [x_mean], [alpha0 + alpha1 * x_mean + ac @ cm + alpha3 * x_mean]])
        return cls(mean=mean, cov=cov, covariate_names=names, **outcome)

    def to_dict(self) -> dict:
        return {
            "type": "gaussian",
            "family": self.family,
            "order": ["x", *self.covariate_names, "x_lead", "u"],
            "mean": self.mean.tolist(),
            "cov": self.cov.tolist(),
            "beta0": self.beta0,
            "beta1": self.beta1,
            "beta_c": list(self.beta_c),
            "beta3": self.beta3,
            "noise_sd": self.noise_sd,
        }


class Alphas(NamedTuple):
    a0: float
    a1: float
    a2: np.ndarray
    a3: float
    resid_var: float  # Var(U | X_t, C_t, X_{t+1})


class Gammas(NamedTuple):
    g0: float
    g1: float
    g2: np.ndarray
    resid_var: float  # Var(X_{t+1} | X_t, C_t)


def _project(mean, cov, target: int, regs: list[int]):
    s_rr = cov[np.ix_(regs, regs)]
    s_rt = cov[regs, target]
    try:
        factor = linalg.cho_factor(s_rr)
    except linalg.LinAlgError:
        raise OracleError("regressor covariance is singular; projection undefined") from None
    if np.linalg.cond(s_rr) > 1e12:
        raise OracleError("regressor covariance is singular; projection undefined")
    coef = linalg.cho_solve(factor, s_rt)
    intercept = float(mean[target] - coef @ mean[regs])
    resid = float(cov[target, target] - s_rt @ coef)
    return intercept, coef, max(resid, 0.0)


def project_alphas(dgp: GaussianDGP) -> Alphas:
    """Linear projection of U_t on (1, X_t, C_t, X_{t+1})."""
    regs = [dgp.idx_x, *dgp.idx_c, dgp.idx_lead]
    a0, coef, resid = _project(dgp.mean, dgp.cov, dgp.idx_u, regs)
    return Alphas(a0, float(coef[0]), coef[1 : 1 + dgp.k].copy(), float(coef[-1]), resid)


def project_gammas(dgp: GaussianDGP) -> Gammas:
    """Linear projection of X_{t+1} on (1, X_t, C_t)."""
    regs = [dgp.idx_x, *dgp.idx_c]
    g0, coef, resid = _project(dgp.mean, dgp.cov, dgp.idx_lead, regs)
    return Gammas(g0, float(coef[0]), coef[1:].copy(), resid)


@dataclass(frozen=True)
class TheoreticalBias:
    alpha: Alphas
    gamma: Gammas
    beta1: float
    beta3: float
    B1: float
    B2: float
    lambda_star: float  # NaN when alpha3*gamma1 == 0
    rho: float
    expected_b1: float
    expected_d1: float
    expected_b3: float

    @property
    def lambda_defined(self) -> bool:
        return not math.isnan(self.lambda_star)

    def to_dict(self) -> dict:
        a, g = self.alpha, self.gamma
        return {
            "alpha": {"a0": a.a0, "a1": a.a1, "a2": list(a.a2), "a3": a.a3, "resid_var": a.resid_var},
            "gamma": {"g0": g.g0, "g1": g.g1, "g2": list(g.g2), "resid_var": g.resid_var},
            "beta1": self.beta1,
            "beta3": self.beta3,
            "B1": self.B1,
            "B2": self.B2,
            "lambda_star": self.lambda_star,
            "lambda_star_defined": self.lambda_defined,
            "rho": self.rho,
            "expected_b1": self.expected_b1,
            "expected_d1": self.expected_d1,
            "expected_b3": self.expected_b3,
        }


def theoretical_bias(dgp: GaussianDGP) -> TheoreticalBias:
    a = project_alphas(dgp)
    g = project_gammas(dgp)
    b1, b3 = float(dgp.beta1), float(dgp.beta3)
    B1 = b3 * a.a1
    B2 = b3 * a.a1 + b3 * a.a3 * g.g1
    denom = a.a3 * g.g1
    lam = a.a1 / denom if denom != 0 else float("nan")
    return TheoreticalBias(
        alpha=a,
        gamma=g,
        beta1=b1,
        beta3=b3,
        B1=B1,
        B2=B2,
        lambda_star=lam,
        rho=dgp.rho,
        expected_b1=b1 + B1,
        expected_d1=b1 + B2,
        expected_b3=b3 * a.a3,
    )


@dataclass(frozen=True)
class ExpectedCoefficients:
    extended: dict[str, float]
    final: dict[str, float]

    def to_dict(self) -> dict:
        return {"extended": dict(self.extended), "final": dict(self.final)}


def _expected(dgp: GaussianDGP, loglinear: bool, exposure: str, lead: int) -> ExpectedCoefficients:
    a = project_alphas(dgp)
    g = project_gammas(dgp)
    b3 = dgp.beta3
    bc = np.array(dgp.beta_c, dtype=np.float64)
    lead_coef = b3 * a.a3

    ext_int = dgp.beta0 + b3 * a.a0
    fin_int = ext_int + lead_coef * g.g0
    if loglinear:
        # Gaussian MGF constants: U | (X, C, X') then X' | (X, C)
        ext_int += 0.5 * a.resid_var * b3**2
        fin_int = ext_int + lead_coef * g.g0 + 0.5 * g.resid_var * lead_coef**2

    ext = {"intercept": ext_int, exposure: dgp.beta1 + b3 * a.a1}
    fin = {"intercept": fin_int, exposure: dgp.beta1 + b3 * a.a1 + lead_coef * g.g1}
    for j, name in enumerate(dgp.covariate_names):
        ext[name] = float(bc[j] + b3 * a.a2[j])
        fin[name] = float(bc[j] + b3 * a.a2[j] + lead_coef * g.g2[j])
    ext[indicator_name(exposure, lead)] = lead_coef
    return ExpectedCoefficients(extended=ext, final=fin)


def expected_coeffs(dgp: GaussianDGP, exposure: str = "x", lead: int = 1) -> ExpectedCoefficients:
    """Limits of the extended and final fits for ``dgp.family``, keyed by design column name."""
    return _expected(dgp, dgp.family == "poisson-log", exposure, lead)


def expected_loglinear_coeffs(dgp, exposure: str = "x", lead: int = 1) -> ExpectedCoefficients:
    """Poisson log-link limits including the adjusted intercepts.

    Only available for Gaussian confounders; any other DGP raises
    :class:`OracleError`.
    """
    if not isinstance(dgp, GaussianDGP):
        raise OracleError(f"no closed form for {type(dgp).__name__}: the confounder must be conditionally Gaussian")
    if dgp.family != "poisson-log":
        raise ValidationError("expected_loglinear_coeffs needs a poisson-log DGP")
    return _expected(dgp, True, exposure, lead)


def reference_dgp(
    beta3: float = 0.4,
    beta1: float = 0.0,
    *,
    alpha1: float = 0.5,
    alpha3: float = 0.5,
    rho: float = 0.6,
    u_resid_var: float = 0.25,
    family: str = "linear",
    beta0: float = 0.0,
    noise_sd: float = 1.0,
    x_mean: float = 0.0,
    x_sd: float = 1.0,
) -> GaussianDGP:
    """Unit-variance exposure with lag-1 correlation 0.6, no covariates, U = 0.5 X_t + 0.5 X_{t+1} + e."""
    return GaussianDGP.from_loadings(
        x_mean=x_mean,
        x_sd=x_sd,
        rho=rho,
        alpha1=alpha1,
        alpha3=alpha3,
        u_resid_sd=math.sqrt(u_resid_var),
        beta0=beta0,
        beta1=beta1,
        beta3=beta3,
        noise_sd=noise_sd,
        family=family,
    )
