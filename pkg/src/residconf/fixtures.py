"""Recipes for the small datasets shipped in ``residconf/data``.

Each fixture is a deterministic function of its seed. The confounder column
is dropped before writing, and the generating law plus its closed-form
biases go in a ``.truth.json`` sidecar.
"""

from __future__ import annotations

from importlib import resources
from pathlib import Path

from ._io import write_json
from .data import dataset_to_csv, select_covariates
from .oracle import GaussianDGP, reference_dgp, theoretical_bias
from .rng import substream
from .simgen import simulate_gaussian_series
from ._io import atomic_write_text

FIXTURE_SEED = 2024
# First offset whose null fixture gives an indicator p-value above 0.05 (see find_null_offset).
NULL_OFFSET = 0


def _example_dgp() -> GaussianDGP:
    return GaussianDGP.from_loadings(
        x_mean=2.28,
        x_sd=0.93,
        rho=0.6,
        covariate_names=("temp",),
        c_means=(0.0,),
        c_on_x=(0.4,),
        c_resid_sd=(1.0,),
        alpha1=0.3,
        alpha3=0.2,
        u_resid_sd=0.5,
        beta0=3.9,
        beta1=0.0257,
        beta_c=(0.05,),
        beta3=0.05,
        family="poisson",
    )


def _confounded_dgp() -> GaussianDGP:
    return reference_dgp(beta3=1.0, beta1=0.3)


def _null_dgp() -> GaussianDGP:
    return reference_dgp(beta3=0.0, beta1=0.3)


FIXTURES = {
    # name: (dgp factory, n rows, stream id, covariates kept)
    "example": (_example_dgp, 200, 1, ("temp",)),
    "confounded": (_confounded_dgp, 2000, 2, ()),
    "null": (_null_dgp, 500, 3, ()),
}


def build_fixture(name: str, offset: int | None = None):
    """Return ``(dataset_without_u, truth_dict)`` for a bundled fixture."""
    factory, n, stream, keep = FIXTURES[name]
    if offset is None:
        offset = NULL_OFFSET if name == "null" else 0
    dgp = factory()
    d, _ = simulate_gaussian_series(dgp, n, substream(FIXTURE_SEED, stream, offset))
    d = select_covariates(d, keep)
    tb = theoretical_bias(dgp)
    truth = {
        "fixture": name,
        "seed": FIXTURE_SEED,
        "stream": stream,
        "offset": offset,
        "n": n,
        "true_beta1": dgp.beta1,
        "omitted": ["u"],
        "dgp": dgp.to_dict(),
        "theoretical_bias": tb.to_dict(),
    }
    return d, truth


def find_null_offset(alpha: float = 0.05, limit: int = 100) -> int:
    """Smallest offset for which the null fixture does not reject at ``alpha``."""
    from .confound import detect, fit_pair
    from .glm import ModelSpec

    for k in range(limit):
        d, _ = build_fixture("null", offset=k)
        pair = fit_pair(d, ModelSpec("linear", "y", "x"), bootstrap_b=0)
        if detect(pair, alpha).wald.p > alpha:
            return k
    raise RuntimeError("no non-rejecting offset found")


def write_fixtures(out_dir: str | Path | None = None) -> list[Path]:
    out = Path(out_dir) if out_dir is not None else Path(str(resources.files("residconf").joinpath("data")))
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name in FIXTURES:
        d, truth = build_fixture(name)
        written.append(atomic_write_text(out / f"{name}.csv", dataset_to_csv(d)))
        written.append(write_json(out / f"{name}.truth.json", truth))
    return written


def fixture_path(name: str) -> Path:
    """Path of a bundled fixture CSV."""
    return Path(str(resources.files("residconf").joinpath("data", f"{name}.csv")))


if __name__ == "__main__":
    for p in write_fixtures():
        print(p)
