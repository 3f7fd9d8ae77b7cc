"""Monte-Carlo scenario engine.

Each scenario simulates daily series with a known generating model, deliberately
omits some covariates at fit time, and records the exposure slope of the final
model (``d1``, "uncorrected") and of the model extended with the future
exposure (``b1``). Summaries follow the usual simulation-table layout: median
bias, empirical SE and MSE per estimator, plus the closed-form biases whenever
the Gaussian oracle applies.

Randomness: replicate ``r`` of the scenario at suite position ``i`` draws from
``substream(seed, i, r)`` so results do not depend on scheduling or worker count.
"""

from __future__ import annotations

import functools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence, Union

import numpy as np

from .confound import detect, fit_pair
from .data import TimeSeriesDataset
from .errors import NumericalError, SimulationError, ValidationError
from .glm import ModelSpec, build_design, fit_ols, fit_poisson_irls, normalize_family
from .oracle import GaussianDGP, OracleError, theoretical_bias
from .rng import substream

__all__ = [
    "StructuredCovariateDGP",
    "ScenarioConfig",
    "ScenarioResult",
    "SuiteReport",
    "Replicate",
    "generate_replicate",
    "simulate_gaussian_series",
    "run_scenario",
    "run_suite",
    "NON_NULL_BETA1",
    "canonical_suite",
    "limit_estimates",
    "COVARIATE_GROUPS",
]

NON_NULL_BETA1 = 0.0257
SEASON_LENGTH = 185
_MONTH_LENGTHS = (31, 30, 31, 31, 30, 32)  # May..Oct, stretched to 185 days
_DOW = ("sun", "mon", "tue", "wed", "thu", "fri", "sat")
_MONTHS = ("may", "jun", "jul", "aug", "sep", "oct")

COVARIATE_GROUPS: dict[str, tuple[str, ...]] = {
    "time": ("t1", "t2", "t3"),
    "dow": tuple(f"dow_{d}" for d in _DOW[1:]),
    "month": tuple(f"month_{m}" for m in _MONTHS[1:]),
    "tmax": ("tmax1", "tmax2", "tmax3"),
    "tmin": ("tmin1", "tmin2", "tmin3"),
    "year": ("year",),
}

_LIMIT_STREAM = 0x11A1
_CALIBRATION_SEED = 20150101


@dataclass(frozen=True)
class StructuredCovariateDGP:
    """Seasonal daily series built from the covariate types of a warm-season study.

    Seasons are ``season_length`` days long and separated by a winter gap in
    day numbering. Covariates: cubic time-within-season, day-of-week and month
    indicators, cubic terms of two AR(1) temperature-like series, and a year
    trend. Exposure and log-mean outcome each load linearly on all of them;
    exposure also carries AR(1) noise with coefficient ``exposure_phi``.

    The intercept and the exposure noise scale are calibrated once, on a fixed
    long series, so the mean count is ``target_mean`` and the exposure SD is
    close to ``exposure_sd``.
    """

    n_seasons: int = 10
    season_length: int = SEASON_LENGTH
    family: str = "poisson-log"
    beta1: float = 0.0
    target_mean: float = 50.0
    noise_sd: float = 1.0
    exposure_mean: float = 2.28
    exposure_sd: float = 0.93
    exposure_phi: float = 0.5
    temp_phi: float = 0.85
    x_time: tuple[float, ...] = (0.15, -0.6, 0.1)
    x_month: tuple[float, ...] = (0.0, 0.2, 0.3, 0.2, 0.0, -0.3)
    x_dow: tuple[float, ...] = (-0.45, 0.25, 0.05, 0.05, 0.05, 0.05, 0.0)
    x_tmax: tuple[float, ...] = (0.35, 0.05, -0.02)
    x_tmin: tuple[float, ...] = (0.1, 0.0, 0.0)
    x_year: float = -0.1
    y_time: tuple[float, ...] = (0.3, 0.2, 0.15)
    y_month: tuple[float, ...] = (0.0, -0.1, -0.15, 0.0, 0.2, 0.25)
    y_dow: tuple[float, ...] = (0.12, 0.06, -0.03, -0.03, -0.03, -0.03, -0.06)
    y_tmax: tuple[float, ...] = (0.08, 0.02, -0.008)
    y_tmin: tuple[float, ...] = (0.06, 0.01, 0.0)
    y_year: float = 0.05

    def __post_init__(self):
        object.__setattr__(self, "family", normalize_family(self.family))
        for name in ("x_time", "x_month", "x_dow", "x_tmax", "x_tmin", "y_time", "y_month", "y_dow", "y_tmax", "y_tmin"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        if not abs(self.exposure_phi) < 1 or not abs(self.temp_phi) < 1:
            raise ValidationError("AR coefficients must satisfy |phi| < 1")
        sizes = {"x_time": 3, "y_time": 3, "x_month": 6, "y_month": 6, "x_dow": 7, "y_dow": 7, "x_tmax": 3, "y_tmax": 3, "x_tmin": 3, "y_tmin": 3}
        for name, size in sizes.items():
            if len(getattr(self, name)) != size:
                raise ValidationError(f"{name} needs {size} loadings")
        vals = [v for name in sizes for v in getattr(self, name)] + [self.x_year, self.y_year, self.beta1]
        if not all(math.isfinite(v) for v in vals):
            raise ValidationError("all loadings must be finite")
        if self.n_seasons < 1 or self.season_length < 2:
            raise ValidationError("need at least one season of two days")

    @property
    def n_days(self) -> int:
        return self.n_seasons * self.season_length

    @property
    def covariate_names(self) -> tuple[str, ...]:
        return tuple(c for g in COVARIATE_GROUPS.values() for c in g)

    def to_dict(self) -> dict:
        out = {"type": "structured"}
        out.update({k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()})
        out.update(calibration(self))
        return out

    # -- generation -------------------------------------------------------

    def _covariates(self, rng: np.random.Generator, n_seasons: int | None = None) -> dict[str, np.ndarray]:
        ns = self.n_seasons if n_seasons is None else n_seasons
        L = self.season_length
        s = np.tile(np.arange(1, L + 1), ns)
        season = np.repeat(np.arange(ns), L)
        day = season * 365 + s
        t1 = (s - (L + 1) / 2.0) / ((L - 1) / 2.0)
        dow = day % 7
        bounds = np.cumsum(np.array(_MONTH_LENGTHS) * L / sum(_MONTH_LENGTHS))
        month = np.searchsorted(bounds, s - 0.5)
        half = max((ns - 1) / 2.0, 1.0)
        year = (season - (ns - 1) / 2.0) / half

        curve = 1.2 * np.sin(np.pi * s / (L + 1)) - 0.764
        a = _ar1(rng, ns, L, self.temp_phi, 0.7)
        b = _ar1(rng, ns, L, 0.5, 0.5)
        zmax = curve + a
        zmin = 0.8 * curve + 0.6 * a + b

        cov = {"t1": t1, "t2": t1**2, "t3": t1**3}
        for j, dname in enumerate(_DOW[1:], start=1):
            cov[f"dow_{dname}"] = (dow == j).astype(float)
        for j, mname in enumerate(_MONTHS[1:], start=1):
            cov[f"month_{mname}"] = (month == j).astype(float)
        for p in (1, 2, 3):
            cov[f"tmax{p}"] = zmax**p
        for p in (1, 2, 3):
            cov[f"tmin{p}"] = zmin**p
        cov["year"] = year
        cov["_day"] = day.astype(float)
        cov["_dow"] = dow
        cov["_month"] = month
        return cov

    def _systematic(self, cov, which: str) -> np.ndarray:
        g = lambda name: np.array(getattr(self, f"{which}_{name}"))
        out = np.column_stack([cov["t1"], cov["t2"], cov["t3"]]) @ g("time")
        out = out + g("month")[cov["_month"]] + g("dow")[cov["_dow"]]
        out = out + np.column_stack([cov["tmax1"], cov["tmax2"], cov["tmax3"]]) @ g("tmax")
        out = out + np.column_stack([cov["tmin1"], cov["tmin2"], cov["tmin3"]]) @ g("tmin")
        return out + getattr(self, f"{which}_year") * cov["year"]

    def simulate(self, rng: np.random.Generator, n_seasons: int | None = None, beta1: float | None = None):
        """Return ``(dataset, expected_outcome)`` for one realisation."""
        cal = calibration(self)
        beta1 = self.beta1 if beta1 is None else beta1
        ns = self.n_seasons if n_seasons is None else n_seasons
        cov = self._covariates(rng, ns)
        x_sys = self._systematic(cov, "x") - cal["x_sys_mean"]
        x = self.exposure_mean + x_sys + _ar1(rng, ns, self.season_length, self.exposure_phi, cal["x_resid_sd"])
        eta = cal["beta0"] + beta1 * x + self._systematic(cov, "y")
        if self.family == "poisson-log":
            mu = np.exp(eta)
            y = rng.poisson(mu).astype(float)
        else:
            mu = eta
            y = mu + self.noise_sd * rng.standard_normal(mu.size)
        covs = {k: v for k, v in cov.items() if not k.startswith("_")}
        d = TimeSeriesDataset(time_index=cov["_day"].astype(np.int64), outcome=y, exposure=x, covariates=covs)
        return d, mu


def _ar1(rng, n_seasons, L, phi, sd):
    """Stationary AR(1) with marginal SD ``sd``, restarted each season."""
    e = rng.standard_normal((n_seasons, L))
    out = np.empty_like(e)
    out[:, 0] = sd * e[:, 0]
    innov = sd * math.sqrt(1.0 - phi * phi)
    for t in range(1, L):
        out[:, t] = phi * out[:, t - 1] + innov * e[:, t]
    return out.ravel()


@functools.lru_cache(maxsize=64)
def calibration(dgp: StructuredCovariateDGP) -> dict:
    """Intercept and exposure-noise scale, from a fixed 200-season calibration series."""
    rng = substream(_CALIBRATION_SEED, 0)
    cov = dgp._covariates(rng, 200)
    x_sys = dgp._systematic(cov, "x")
    sys_mean = float(x_sys.mean())
    sys_var = float(x_sys.var())
    resid_sd = math.sqrt(max(dgp.exposure_sd**2 - sys_var, (0.3 * dgp.exposure_sd) ** 2))
    x = dgp.exposure_mean + (x_sys - sys_mean) + _ar1(substream(_CALIBRATION_SEED, 1), 200, dgp.season_length, dgp.exposure_phi, resid_sd)
    rest = dgp.beta1 * x + dgp._systematic(cov, "y")
    if dgp.family == "poisson-log":
        beta0 = math.log(dgp.target_mean) - math.log(float(np.mean(np.exp(rest))))
    else:
        beta0 = dgp.target_mean - float(np.mean(rest))
    return {"beta0": beta0, "x_sys_mean": sys_mean, "x_resid_sd": resid_sd}


def simulate_gaussian_series(dgp: GaussianDGP, n: int, rng: np.random.Generator):
    """Draw ``n`` days from a Gaussian DGP; returns ``(dataset, expected_outcome)``.

    Exposure is AR(1) with the DGP's lag-1 correlation; each day's covariates
    and confounder are drawn from their conditional law given (X_t, X_{t+1}).
    The confounder is stored as covariate ``u``.
    """
    k = dgp.k
    m, s2, rho = dgp.mean[0], dgp.cov[0, 0], dgp.rho
    sd = math.sqrt(s2)
    e = rng.standard_normal(n + 1)
    x = np.empty(n + 1)
    x[0] = sd * e[0]
    innov = sd * math.sqrt(1.0 - rho * rho)
    for t in range(1, n + 1):
        x[t] = rho * x[t - 1] + innov * e[t]
    x += m
    v = np.column_stack([x[:-1], x[1:]])

    iv = [0, dgp.idx_lead]
    io = [*dgp.idx_c, dgp.idx_u]
    s_vv = dgp.cov[np.ix_(iv, iv)]
    s_ov = dgp.cov[np.ix_(io, iv)]
    B = np.linalg.solve(s_vv, s_ov.T).T
    S = dgp.cov[np.ix_(io, io)] - B @ s_ov.T
    w, q = np.linalg.eigh(0.5 * (S + S.T))
    root = q * np.sqrt(np.clip(w, 0.0, None))
    o = dgp.mean[io] + (v - dgp.mean[iv]) @ B.T + rng.standard_normal((n, len(io))) @ root.T
    c, u = o[:, :k], o[:, k]

    eta = dgp.beta0 + dgp.beta1 * v[:, 0] + c @ np.array(dgp.beta_c) + dgp.beta3 * u
    if dgp.family == "poisson-log":
        mu = np.exp(eta)
        y = rng.poisson(mu).astype(float)
    else:
        mu = eta
        y = eta + dgp.noise_sd * rng.standard_normal(n)
    covs = {name: c[:, j] for j, name in enumerate(dgp.covariate_names)}
    covs["u"] = u
    d = TimeSeriesDataset(time_index=np.arange(1, n + 1), outcome=y, exposure=v[:, 0], covariates=covs)
    return d, mu


DGP = Union[GaussianDGP, StructuredCovariateDGP]


@dataclass(frozen=True)
class ScenarioConfig:
    """One Monte-Carlo scenario.

    ``null_effect`` overrides the DGP's exposure effect: True sets beta1 = 0,
    False sets beta1 = 0.0257; None keeps the DGP value. ``omitted_covariates``
    takes column names or group names (``time``, ``dow``, ``month``, ``tmax``,
    ``tmin``, ``year``); Gaussian DGPs omit the confounder ``u`` by default.
    """

    name: str
    dgp: DGP
    omitted_covariates: tuple[str, ...] | None = None
    n_days: int | None = None
    replicates: int = 1000
    seed: int = 0
    lead: int = 1
    null_effect: bool | None = None
    description: str = ""
    stream: int = 0
    bootstrap_b: int = 0
    covariance: str = "model"
    alpha: float = 0.05

    def __post_init__(self):
        if self.replicates < 1:
            raise ValidationError("replicates must be >= 1")
        if self.lead < 1:
            raise ValidationError("lead must be >= 1")
        if isinstance(self.dgp, GaussianDGP) and not self.n_days:
            raise ValidationError(f"scenario {self.name!r}: Gaussian DGPs need n_days")
        if isinstance(self.dgp, StructuredCovariateDGP) and self.n_days and self.n_days % self.dgp.season_length:
            raise ValidationError(f"scenario {self.name!r}: n_days must be a whole number of seasons")
        omitted = self.omitted_covariates
        if omitted is None:
            omitted = ("u",) if isinstance(self.dgp, GaussianDGP) else ()
        expanded: list[str] = []
        for name in omitted:
            expanded.extend(COVARIATE_GROUPS.get(name, (name,)) if isinstance(self.dgp, StructuredCovariateDGP) else (name,))
        available = self.all_covariates
        unknown = [c for c in expanded if c not in available]
        if unknown:
            raise ValidationError(f"scenario {self.name!r}: omitted covariate(s) {unknown} not in the DGP {list(available)}")
        object.__setattr__(self, "omitted_covariates", tuple(dict.fromkeys(expanded)))

    @property
    def family(self) -> str:
        return self.dgp.family

    @property
    def all_covariates(self) -> tuple[str, ...]:
        if isinstance(self.dgp, GaussianDGP):
            return (*self.dgp.covariate_names, "u")
        return self.dgp.covariate_names

    @property
    def analysis_covariates(self) -> tuple[str, ...]:
        return tuple(c for c in self.all_covariates if c not in self.omitted_covariates)

    @property
    def true_beta1(self) -> float:
        if self.null_effect is None:
            return float(self.dgp.beta1)
        return 0.0 if self.null_effect else NON_NULL_BETA1

    @property
    def effective_dgp(self) -> DGP:
        dgp = replace(self.dgp, beta1=self.true_beta1)
        if isinstance(dgp, StructuredCovariateDGP) and self.n_days:
            dgp = replace(dgp, n_seasons=self.n_days // dgp.season_length)
        return dgp

    @property
    def spec(self) -> ModelSpec:
        return ModelSpec(
            family=self.family,
            outcome_col="y",
            exposure_col="x",
            covariate_cols=self.analysis_covariates,
            include_indicator=False,
            indicator_lead=self.lead,
        )

    def oracle(self):
        """Closed-form biases when they apply: Gaussian DGP with exactly ``u`` omitted."""
        if not isinstance(self.dgp, GaussianDGP) or self.lead != 1:
            return None
        if self.omitted_covariates == ("u",):
            return theoretical_bias(self.effective_dgp)
        return None

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "description": self.description,
            "family": self.family,
            "omitted": list(self.omitted_covariates),
            "analysis_covariates": list(self.analysis_covariates),
            "n_days": self.n_days or getattr(self.effective_dgp, "n_days", None),
            "replicates": self.replicates,
            "seed": self.seed,
            "stream": self.stream,
            "lead": self.lead,
            "true_beta1": self.true_beta1,
            "bootstrap_b": self.bootstrap_b,
            "covariance": self.covariance,
            "alpha": self.alpha,
        }


@dataclass
class Replicate:
    dataset: TimeSeriesDataset
    expected_outcome: np.ndarray
    truth: dict


def generate_replicate(config: ScenarioConfig, index: int) -> Replicate:
    """Deterministic function of ``(config.seed, config.stream, index)``.

    All DGP covariates are present in the dataset; omission happens at fit time.
    """
    rng = substream(config.seed, config.stream, index)
    dgp = config.effective_dgp
    if isinstance(dgp, GaussianDGP):
        d, mu = simulate_gaussian_series(dgp, int(config.n_days), rng)
    else:
        d, mu = dgp.simulate(rng)
    truth = {"replicate": int(index), "seed": config.seed, "stream": config.stream, "true_beta1": config.true_beta1, "dgp": dgp.to_dict()}
    return Replicate(d, mu, truth)


_FIELDS = ("b1", "d1", "b3", "var_b1", "var_d1", "var_b3", "p_b3", "rho", "cov_b1_d1")


def _fit_replicate(config: ScenarioConfig, index: int) -> dict:
    rep = generate_replicate(config, index)
    pair = fit_pair(
        rep.dataset,
        config.spec,
        covariance=config.covariance,
        bootstrap_b=config.bootstrap_b,
        seed=config.seed,
        stream_key=(config.stream, index),
    )
    w = pair.extended
    det = detect(pair, config.alpha)
    return {
        "b1": pair.b1,
        "d1": pair.d1,
        "b3": pair.b3,
        "var_b1": pair.var_b1,
        "var_d1": pair.var_d1,
        "var_b3": w.var(pair.indicator),
        "p_b3": det.wald.p,
        "rho": pair.rho,
        "cov_b1_d1": pair.cov_b1_d1,
    }


def _run_chunk(config: ScenarioConfig, start: int, stop: int) -> tuple[dict, list[str]]:
    out = {f: np.full(stop - start, np.nan) for f in _FIELDS}
    errors: list[str] = []
    for i, r in enumerate(range(start, stop)):
        try:
            rec = _fit_replicate(config, r)
        except (NumericalError, ValidationError, np.linalg.LinAlgError) as exc:
            errors.append(f"replicate {r}: {exc}")
            continue
        for f in _FIELDS:
            out[f][i] = rec[f]
    return out, errors


_MEDIAN_SE = math.sqrt(math.pi / 2.0)


def _summary(est: np.ndarray, truth: float) -> dict:
    R = est.size
    sd = float(np.std(est, ddof=1)) if R > 1 else float("nan")
    return {
        "median_bias": float(np.median(est)) - truth,
        "mean_bias": float(np.mean(est)) - truth,
        "se": sd,
        "mse": float(np.mean((est - truth) ** 2)),
        "mc_se_median": _MEDIAN_SE * sd / math.sqrt(R),
        "mc_se_mean": sd / math.sqrt(R),
    }


def limit_estimates(config: ScenarioConfig, n_seasons: int = 300) -> tuple[float, float] | None:
    """Large-sample limits of (b1, d1) for a structured DGP, from a noise-free fit.

    Fits both models to the expected outcome on one long series, which solves
    the population estimating equations up to the long series' sampling error.
    """
    dgp = config.effective_dgp
    if not isinstance(dgp, StructuredCovariateDGP):
        return None
    d, mu = dgp.simulate(substream(config.seed, _LIMIT_STREAM, config.stream), n_seasons=n_seasons)
    d = replace(d, outcome=mu)
    ext = build_design(d, config.spec.with_indicator(True))
    fin = ext.drop(config.spec.with_indicator(True).indicator_col)
    jx = ext.names.index("x")
    if dgp.family == "poisson-log":
        fe = fit_poisson_irls(ext.X, ext.y, ext.names, check_counts=False)
        ff = fit_poisson_irls(fin.X, fin.y, fin.names, check_counts=False)
    else:
        fe = fit_ols(ext.X, ext.y, ext.names)
        ff = fit_ols(fin.X, fin.y, fin.names)
    return float(fe.coefficients[jx]), float(ff.coefficients[fin.names.index("x")])


@dataclass
class ScenarioResult:
    config: ScenarioConfig
    estimates: dict[str, np.ndarray]
    n_failed: int
    failures: list[str]
    oracle: object | None = None
    limits: tuple[float, float] | None = None
    error: str | None = None

    @property
    def ok(self) -> np.ndarray:
        return np.isfinite(self.estimates["b1"]) & np.isfinite(self.estimates["d1"])

    def valid(self, name: str) -> np.ndarray:
        return self.estimates[name][self.ok]

    @property
    def row(self) -> dict:
        c = self.config
        row = {
            "scenario": c.name,
            "description": c.description,
            "family": c.family,
            "omitted": omitted_label(c.omitted_covariates),
            "true_beta1": c.true_beta1,
            "replicates": c.replicates,
            "n_failed": self.n_failed,
        }
        keys = ("median_bias", "se", "mse", "mean_bias", "mc_se_median")
        if self.error is None:
            t = c.true_beta1
            fin = _summary(self.valid("d1"), t)
            ext = _summary(self.valid("b1"), t)
            z = 1.959963984540054
            b1, d1 = self.valid("b1"), self.valid("d1")
            seb, sed = np.sqrt(self.valid("var_b1")), np.sqrt(self.valid("var_d1"))
            cov_ext = float(np.mean(np.abs(b1 - t) <= z * seb))
            cov_fin = float(np.mean(np.abs(d1 - t) <= z * sed))
            rate = float(np.mean(self.valid("p_b3") < c.alpha))
        else:
            fin = ext = {k: float("nan") for k in keys}
            cov_ext = cov_fin = rate = float("nan")
        for k in keys:
            row[f"{k}_uncorrected"] = fin[k]
        for k in keys:
            row[f"{k}_extended"] = ext[k]
        tb = self.oracle
        row["theoretical_B1"] = tb.B1 if tb is not None else (0.0 if self._unconfounded else float("nan"))
        row["theoretical_B2"] = tb.B2 if tb is not None else (0.0 if self._unconfounded else float("nan"))
        if self.limits is not None:
            row["limit_B1"] = self.limits[0] - c.true_beta1
            row["limit_B2"] = self.limits[1] - c.true_beta1
        else:
            row["limit_B1"] = row["limit_B2"] = float("nan")
        row["detection_rejection_rate"] = rate
        row["coverage_extended"] = cov_ext
        row["coverage_uncorrected"] = cov_fin
        row["error"] = self.error or ""
        return row

    @property
    def _unconfounded(self) -> bool:
        return isinstance(self.config.dgp, GaussianDGP) and not self.config.omitted_covariates

    def truth(self) -> dict:
        tb = self.oracle
        return {
            "scenario": self.config.to_dict(),
            "dgp": self.config.effective_dgp.to_dict(),
            "theoretical_bias": tb.to_dict() if tb is not None else None,
            "limits": {"b1": self.limits[0], "d1": self.limits[1]} if self.limits else None,
            "failures": list(self.failures),
        }


def omitted_label(names: Sequence[str]) -> str:
    """Compact label: whole covariate groups are shown by group name."""
    rest = list(names)
    parts = []
    for group, cols in COVARIATE_GROUPS.items():
        if all(c in rest for c in cols):
            parts.append(group)
            rest = [c for c in rest if c not in cols]
    return ";".join(parts + rest) or "none"


def _chunks(R: int, size: int) -> list[tuple[int, int]]:
    return [(a, min(a + size, R)) for a in range(0, R, size)]


def _assemble(config: ScenarioConfig, parts: Sequence[tuple[dict, list[str]]]) -> ScenarioResult:
    est = {f: np.concatenate([p[0][f] for p in parts]) for f in _FIELDS}
    failures = [e for p in parts for e in p[1]]
    n_failed = len(failures)
    error = None
    if n_failed > 0.1 * config.replicates:
        error = f"{n_failed} of {config.replicates} replicate fits failed"
    oracle = None
    try:
        oracle = config.oracle()
    except OracleError as exc:
        failures.append(f"oracle: {exc}")
    limits = None
    if error is None and isinstance(config.dgp, StructuredCovariateDGP):
        try:
            limits = limit_estimates(config)
        except NumericalError as exc:
            failures.append(f"limit fit: {exc}")
    return ScenarioResult(config, est, n_failed, failures, oracle, limits, error)


def run_scenario(config: ScenarioConfig, workers: int = 1, chunk_size: int = 50) -> ScenarioResult:
    """Simulate and fit every replicate; more than 10% failed fits raises :class:`SimulationError`."""
    res = run_suite([config], workers=workers, chunk_size=chunk_size, assign_streams=False).results[0]
    if res.error:
        raise SimulationError(f"scenario {config.name!r}: {res.error}")
    return res


@dataclass
class SuiteReport:
    results: list[ScenarioResult] = field(default_factory=list)

    @property
    def rows(self) -> list[dict]:
        return [r.row for r in self.results]

    def to_csv(self) -> str:
        from .report import rows_to_csv

        return rows_to_csv(self.rows)

    def to_text(self) -> str:
        from .report import rows_to_text

        return rows_to_text(self.rows)

    def write(self, out_dir) -> list:
        from .report import write_suite

        return write_suite(self, out_dir)


def run_suite(
    configs: Sequence[ScenarioConfig],
    workers: int = 1,
    chunk_size: int = 50,
    assign_streams: bool = True,
) -> SuiteReport:
    """Run scenarios; output is identical for any ``workers`` value.

    Scenario ``i`` gets random stream ``i`` unless ``assign_streams`` is False.
    Per-scenario failures are reported in the row's ``error`` field.
    """
    if not configs:
        raise ValidationError("a suite needs at least one scenario")
    configs = [replace(c, stream=i) if assign_streams else c for i, c in enumerate(configs)]
    tasks = [(si, a, b) for si, c in enumerate(configs) for a, b in _chunks(c.replicates, chunk_size)]
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=int(workers)) as pool:
            futs = [pool.submit(_run_chunk, configs[si], a, b) for si, a, b in tasks]
            parts = [f.result() for f in futs]
    else:
        parts = [_run_chunk(configs[si], a, b) for si, a, b in tasks]
    by_scenario: dict[int, list] = {i: [] for i in range(len(configs))}
    for (si, _, _), part in zip(tasks, parts):
        by_scenario[si].append(part)
    return SuiteReport([_assemble(configs[i], by_scenario[i]) for i in range(len(configs))])


# -- canonical suite ---------------------------------------------------------

CANONICAL_SCENARIOS: tuple[tuple[str, str, tuple[str, ...]], ...] = (
    ("1", "None", ()),
    ("2", "Omit day-of-week indicators", ("dow",)),
    ("3", "Omit continuous time terms (t, t^2, t^3)", ("time",)),
    ("4", "Omit continuous time terms and month indicators", ("time", "month")),
    ("5", "Omit maximum-temperature terms", ("tmax",)),
    ("6", "Omit minimum and maximum temperature terms", ("tmin", "tmax")),
)


def canonical_suite(replicates: int = 1000, seed: int = 0, dgp: StructuredCovariateDGP | None = None) -> list[ScenarioConfig]:
    """Six omission scenarios under the null (A) and non-null beta1 = 0.0257 (B): 12 configs."""
    dgp = dgp or StructuredCovariateDGP()
    out = []
    for suffix, null in (("A", True), ("B", False)):
        for num, desc, omit in CANONICAL_SCENARIOS:
            out.append(
                ScenarioConfig(
                    name=f"{num}{suffix}",
                    dgp=dgp,
                    omitted_covariates=omit,
                    replicates=replicates,
                    seed=seed,
                    null_effect=null,
                    description=desc,
                )
            )
    return out


def sign_consistent(config: ScenarioConfig) -> bool | None:
    """Whether the omitted confounding tracks X_t and X_{t+1} in the same direction.

    Decided from the closed form (alpha1*alpha3 > 0 and gamma1 > 0) when it
    applies, otherwise from the large-sample limits: the extended model should
    sit between truth and the final model.
    """
    tb = config.oracle()
    if tb is not None:
        return bool(tb.alpha.a1 * tb.alpha.a3 > 0 and tb.gamma.g1 > 0)
    return None
