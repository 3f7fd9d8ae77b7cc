"""YAML scenario-suite files.

Layout::

    seed: 17              # optional; the CLI --seed flag wins
    replicates: 1000      # optional default for every scenario
    defaults:             # merged into each scenario (dgp merged key by key)
      dgp: {type: structured, n_seasons: 10}
    scenarios:
      - name: 2A
        description: Omit day-of-week indicators
        omit: [dow]
        null_effect: true

DGP types: ``structured`` (keyword arguments of :class:`StructuredCovariateDGP`),
``gaussian`` with explicit ``mean``/``cov``/outcome coefficients, or with the
keyword arguments of :meth:`GaussianDGP.from_loadings`, and ``reference`` for
:func:`reference_dgp`.
"""

from __future__ import annotations

import copy
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

import numpy as np
import yaml

from .errors import SchemaError, ValidationError
from .oracle import GaussianDGP, reference_dgp
from .simgen import ScenarioConfig, StructuredCovariateDGP

BUNDLED = ("canonical", "oracle")

_SCENARIO_KEYS = {
    "name", "description", "dgp", "omit", "omitted_covariates", "n_days", "replicates",
    "lead", "null_effect", "bootstrap_b", "covariance", "alpha",
}


def build_dgp(spec: Mapping[str, Any]):
    spec = dict(spec)
    kind = spec.pop("type", "structured")
    try:
        if kind == "structured":
            for k, v in list(spec.items()):
                if isinstance(v, list):
                    spec[k] = tuple(v)
            return StructuredCovariateDGP(**spec)
        if kind == "reference":
            return reference_dgp(**spec)
        if kind == "gaussian":
            if "cov" in spec:
                spec["mean"] = np.asarray(spec["mean"], dtype=float)
                spec["cov"] = np.asarray(spec["cov"], dtype=float)
                for k in ("beta_c", "covariate_names"):
                    if k in spec:
                        spec[k] = tuple(spec[k])
                return GaussianDGP(**spec)
            return GaussianDGP.from_loadings(**spec)
    except TypeError as exc:
        raise ValidationError(f"dgp of type {kind!r}: {exc}") from None
    raise ValidationError(f"unknown dgp type {kind!r}; expected structured, gaussian or reference")


def _merge(base: Mapping, over: Mapping) -> dict:
    out = copy.deepcopy(dict(base))
    for k, v in over.items():
        if k == "dgp" and isinstance(v, Mapping) and isinstance(out.get("dgp"), Mapping):
            out["dgp"] = {**out["dgp"], **v}
        else:
            out[k] = v
    return out


def parse_suite(doc: Mapping[str, Any], seed: int | None = None, replicates: int | None = None) -> list[ScenarioConfig]:
    """Turn a parsed suite document into configs. ``seed``/``replicates`` override the file."""
    if not isinstance(doc, Mapping) or "scenarios" not in doc:
        raise SchemaError("suite file needs a top-level 'scenarios' list")
    seed = doc.get("seed") if seed is None else seed
    if seed is None:
        raise ValidationError("a seed is required: set 'seed' in the suite file or pass --seed")
    defaults = dict(doc.get("defaults") or {})
    if "replicates" in doc:
        defaults.setdefault("replicates", doc["replicates"])
    if replicates is not None:
        defaults["replicates"] = replicates
    configs = []
    for i, raw in enumerate(doc["scenarios"]):
        entry = _merge(defaults, raw or {})
        if replicates is not None:
            entry["replicates"] = replicates
        unknown = set(entry) - _SCENARIO_KEYS
        if unknown:
            raise SchemaError(f"scenario #{i + 1}: unknown key(s) {sorted(unknown)}")
        if "name" not in entry or "dgp" not in entry:
            raise SchemaError(f"scenario #{i + 1}: 'name' and 'dgp' are required")
        omit = entry.pop("omit", entry.pop("omitted_covariates", None))
        dgp = build_dgp(entry.pop("dgp"))
        configs.append(
            ScenarioConfig(
                dgp=dgp,
                omitted_covariates=None if omit is None else tuple(omit),
                seed=int(seed),
                **entry,
            )
        )
    names = [c.name for c in configs]
    if len(set(names)) != len(names):
        raise ValidationError("scenario names must be unique")
    return configs


def read_suite_document(source: str | Path) -> dict:
    """Read a suite YAML; a bare bundled name (``canonical``, ``oracle``) is also accepted."""
    if str(source) in BUNDLED:
        text = resources.files("residconf").joinpath("suites", f"{source}.yaml").read_text()
    else:
        path = Path(source)
        if not path.is_file():
            raise ValidationError(f"suite file not found: {path}")
        text = path.read_text()
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise SchemaError(f"cannot parse suite file {source}: {exc}") from None
    return doc


def load_suite(source: str | Path, seed: int | None = None, replicates: int | None = None) -> list[ScenarioConfig]:
    return parse_suite(read_suite_document(source), seed=seed, replicates=replicates)
