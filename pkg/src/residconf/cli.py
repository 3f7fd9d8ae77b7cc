"""Command-line interface: ``residconf {fit,test,correct,simulate}``.

Exit codes: 0 success, 2 bad input, 3 numerical failure, 4 suite-level
simulation failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Any, Sequence

import yaml

from ._io import atomic_write_text, write_json
from .confound import SensitivityParams, detect, fit_pair, lambda_sweep
from .data import Schema, center_and_scale, load_dataset
from .errors import InputError, NumericalError, ResidconfError, SchemaError, SimulationError, ValidationError
from .glm import ModelSpec, fit_model, normalize_family, parse_covariance

log = logging.getLogger("residconf")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC, EXIT_SUITE = 0, 2, 3, 4

# Built-in values for options that a config file may also set.
_DEFAULTS: dict[str, Any] = {
    "family": "poisson",
    "time": "day",
    "outcome": "y",
    "exposure": "x",
    "covariates": "",
    "lead": 1,
    "covariance": "model",
    "bootstrap_b": None,  # correct: 500; simulate: keep the suite value
    "block_len": None,
    "seed": None,
    "workers": 1,
    "alpha": 0.05,
    "level": 0.95,
    "lambda_grid": None,
    "out": ".",
    "max_iter": 100,
    "suite": "canonical",
    "replicates": None,
    "standardize": True,
    "extended": False,
    "input": None,
    "schema": None,
}


def _add_common(p: argparse.ArgumentParser, data: bool = True) -> None:
    # Every default is None so that "flag given" can be told apart from "not given".
    p.add_argument("--config", help="YAML file of option values; command-line flags take precedence")
    p.add_argument("--out", help="output directory (default: current directory)")
    p.add_argument("--seed", type=int, help="root random seed")
    if not data:
        return
    p.add_argument("--input", help="CSV file with a header row")
    p.add_argument("--schema", help="YAML/JSON file or inline 'time=day,outcome=y,exposure=x,covariates=a;b'")
    p.add_argument("--time", help="time column (default: day)")
    p.add_argument("--outcome", help="outcome column (default: y)")
    p.add_argument("--exposure", help="exposure column (default: x)")
    p.add_argument("--covariates", help="comma-separated covariate columns")
    p.add_argument("--family", help="poisson (default) or linear")
    p.add_argument("--lead", type=int, help="lead J of the future indicator (default: 1)")
    p.add_argument("--covariance", help="'model' (default) or 'hac:L' for Newey-West with L lags")
    p.add_argument("--no-standardize", dest="standardize", action="store_const", const=False, help="fit covariates on their original scale (default: centered and scaled)")
    p.add_argument("--max-iter", dest="max_iter", type=int, help="IRLS iteration cap (default: 100)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="residconf", description="Detect and correct residual confounding with a future exposure indicator.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit the final model (and optionally the extended model)")
    _add_common(p)
    p.add_argument("--extended", action="store_const", const=True, help="also fit the model with the future indicator")

    p = sub.add_parser("test", help="Wald test of the future-indicator coefficient")
    _add_common(p)
    p.add_argument("--alpha", type=float, help="test level (default: 0.05)")

    p = sub.add_parser("correct", help="corrected estimates over a grid of lambda values")
    _add_common(p)
    p.add_argument("--lambda-grid", dest="lambda_grid", help="comma-separated lambda values (default: grid around 1/rho)")
    p.add_argument("--bootstrap-b", dest="bootstrap_b", type=int, help="block-bootstrap replicates for Cov(b1, d1) (default: 500)")
    p.add_argument("--block-len", dest="block_len", type=int, help="bootstrap block length (default: ceil(n^(1/3)))")
    p.add_argument("--level", type=float, help="confidence level (default: 0.95)")

    p = sub.add_parser("simulate", help="run a Monte-Carlo scenario suite")
    _add_common(p, data=False)
    p.add_argument("--suite", help="suite YAML file or bundled name: canonical (default), oracle")
    p.add_argument("--replicates", type=int, help="override the replicate count of every scenario")
    p.add_argument("--workers", type=int, help="worker processes (default: 1); output does not depend on it")
    p.add_argument("--bootstrap-b", dest="bootstrap_b", type=int, help="per-replicate bootstrap size (default: off)")
    return parser


def _read_mapping(path: str) -> dict:
    p = Path(path)
    if not p.is_file():
        raise ValidationError(f"file not found: {p}")
    try:
        doc = yaml.safe_load(p.read_text())
    except yaml.YAMLError as exc:
        raise SchemaError(f"cannot parse {p}: {exc}") from None
    if doc is None:
        return {}
    if not isinstance(doc, dict):
        raise SchemaError(f"{p} must contain a key-value mapping")
    return doc


def resolve_options(args: argparse.Namespace) -> dict:
    """Merge built-in defaults < config file < command-line flags."""
    opts = dict(_DEFAULTS)
    if getattr(args, "config", None):
        cfg = _read_mapping(args.config)
        cfg = {k.replace("-", "_"): v for k, v in cfg.items()}
        unknown = set(cfg) - set(_DEFAULTS) - {"alpha"}
        if unknown:
            raise SchemaError(f"unknown config key(s): {sorted(unknown)}")
        opts.update(cfg)
    for k, v in vars(args).items():
        if v is not None and k not in ("command", "config", "verbose"):
            opts[k] = v
    return opts


def _schema(opts: dict) -> Schema:
    m = {"time": opts["time"], "outcome": opts["outcome"], "exposure": opts["exposure"], "covariates": opts["covariates"]}
    raw = opts.get("schema")
    if isinstance(raw, dict):
        m.update(raw)
    elif isinstance(raw, str) and raw:
        if "=" in raw and not Path(raw).is_file():
            for part in raw.split(","):
                if "=" not in part:
                    raise SchemaError(f"bad schema entry {part!r}; expected key=value")
                k, v = part.split("=", 1)
                m[k.strip()] = v.strip().replace(";", ",") if k.strip() == "covariates" else v.strip()
        else:
            m.update(_read_mapping(raw))
    covs = m.get("covariates") or ()
    if isinstance(covs, (list, tuple)):
        m["covariates"] = [str(c) for c in covs]
    return Schema.from_mapping(m)


def _load(opts: dict):
    if not opts.get("input"):
        raise ValidationError("--input is required")
    schema = _schema(opts)
    d = load_dataset(opts["input"], schema)
    if opts.get("standardize") and d.covariate_names:
        d = center_and_scale(d, d.covariate_names)
    lead = int(opts["lead"])
    family = normalize_family(opts["family"])
    parse_covariance(str(opts["covariance"]))
    spec = ModelSpec(
        family=family,
        outcome_col=schema.outcome,
        exposure_col=schema.exposure,
        covariate_cols=tuple(schema.covariates),
        indicator_lead=lead,
    )
    return d, spec


def _out_dir(opts: dict) -> Path:
    out = Path(opts["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _coef_table(fit) -> str:
    width = max(len(n) for n in fit.names)
    lines = [f"{'term'.ljust(width)}  {'estimate':>13}  {'std.err':>11}"]
    for name, b, se in zip(fit.names, fit.coefficients, fit.std_errors):
        lines.append(f"{name.ljust(width)}  {b:13.6g}  {se:11.4g}")
    return "\n".join(lines)


def _fit_doc(fit, d) -> dict:
    doc = fit.to_dict()
    # covariate coefficients are per SD of the column; these undo the scaling
    doc["transforms"] = {k: {"mean": m, "sd": s} for k, (m, s) in d.transforms.items()}
    return doc


def cmd_fit(opts: dict) -> int:
    d, spec = _load(opts)
    out = _out_dir(opts)
    controls = {"max_iter": int(opts["max_iter"])}
    final = fit_model(d, spec, covariance=str(opts["covariance"]), **controls).require_converged()
    write_json(out / "final_fit.json", _fit_doc(final, d))
    print(f"final model ({spec.family}, n={final.n_used})")
    print(_coef_table(final))
    if opts.get("extended"):
        ext = fit_model(d, spec.with_indicator(True), covariance=str(opts["covariance"]), **controls).require_converged()
        write_json(out / "extended_fit.json", _fit_doc(ext, d))
        print(f"\nextended model (n={ext.n_used})")
        print(_coef_table(ext))
    return EXIT_OK


def _pair(opts: dict, bootstrap_b: int):
    d, spec = _load(opts)
    seed = opts.get("seed")
    return fit_pair(
        d,
        spec,
        covariance=str(opts["covariance"]),
        bootstrap_b=bootstrap_b,
        block_length=opts.get("block_len"),
        seed=0 if seed is None else int(seed),
        max_iter=int(opts["max_iter"]),
    )


def cmd_test(opts: dict) -> int:
    pair = _pair(opts, bootstrap_b=0)
    report = detect(pair, alpha=float(opts["alpha"]))
    out = _out_dir(opts)
    write_json(out / "detection.json", report.to_dict())
    print(report.verdict)
    return EXIT_OK


def parse_lambda_grid(text) -> list[float] | None:
    if text is None or text == "":
        return None
    if isinstance(text, (list, tuple)):
        vals = list(text)
    else:
        vals = [v for v in str(text).split(",") if v.strip()]
    try:
        return [float(v) for v in vals]
    except ValueError:
        raise ValidationError(f"--lambda-grid must be comma-separated numbers, got {text!r}") from None


def cmd_correct(opts: dict) -> int:
    grid = parse_lambda_grid(opts.get("lambda_grid"))
    b = 500 if opts["bootstrap_b"] is None else int(opts["bootstrap_b"])
    if b < 0:
        raise ValidationError("--bootstrap-b must be >= 0")
    if grid is not None and all(v == 0 for v in grid):
        b = 0  # the lambda = 0 variance needs no covariance term
    pair = _pair(opts, bootstrap_b=b)
    result = lambda_sweep(pair, SensitivityParams(lambda_values=grid), level=float(opts["level"]))
    out = _out_dir(opts)
    atomic_write_text(out / "correction.csv", result.to_csv())
    write_json(out / "correction.json", result.to_dict())
    print(f"rho = {result.rho:.4f}  (1/rho = {1 / result.rho:.4f})")
    for row in result.rows():
        print(f"lambda {row['lambda']:9.4f}  estimate {row['estimate']:11.6g}  [{row['ci_lo']:.6g}, {row['ci_hi']:.6g}]  {row['interpretation']}")
    return EXIT_OK


def cmd_simulate(opts: dict) -> int:
    from .simgen import run_suite
    from .suite import parse_suite, read_suite_document

    doc = read_suite_document(opts["suite"])
    seed = opts.get("seed")
    if seed is None and doc.get("seed") is None:
        raise ValidationError("simulate needs a seed: pass --seed or set 'seed' in the suite file")
    configs = parse_suite(doc, seed=seed, replicates=opts.get("replicates"))
    if opts.get("bootstrap_b") is not None:
        configs = [replace(c, bootstrap_b=int(opts["bootstrap_b"])) for c in configs]
    report = run_suite(configs, workers=int(opts["workers"]))
    out = _out_dir(opts)
    report.write(out)
    sys.stdout.write(report.to_text())
    if all(r.error for r in report.results):
        raise SimulationError("every scenario in the suite failed")
    return EXIT_OK


COMMANDS = {"fit": cmd_fit, "test": cmd_test, "correct": cmd_correct, "simulate": cmd_simulate}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s: %(message)s")
    try:
        opts = resolve_options(args)
        return COMMANDS[args.command](opts)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except SimulationError as exc:
        print(f"simulation failure: {exc}", file=sys.stderr)
        return EXIT_SUITE
    except ResidconfError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
