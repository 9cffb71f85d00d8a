"""Command-line entry point ``gptr``.

Verbs: ``run``, ``compare``, ``certify``, ``dataset import``, ``dataset
export`` and ``config-reference``. Failures exit nonzero and print a JSON
error record on stderr (also written to ``--error-file`` when given).
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from ..certification import FullLinearityConstants, certify_first_order, certify_zeroth_order
from ..gp import Dataset, train
from ..problems import get_analytic
from ..trust_region import RunError
from .config import ConfigError, MODES, defaults_reference, load_config
from .experiment import compare_modes, load_model, run_experiment, save_model, write_comparison_csv

EXIT_RUNTIME = 1
EXIT_USAGE = 2


class CliError(Exception):
    def __init__(self, kind: str, message: str, details=None, code: int = EXIT_RUNTIME):
        super().__init__(message)
        self.kind = kind
        self.details = details or []
        self.code = code


def _floats(text: str) -> np.ndarray:
    try:
        return np.array([float(v) for v in text.split(",")])
    except ValueError:
        raise CliError("usage", f"expected comma-separated numbers, got {text!r}", code=EXIT_USAGE) from None


def _load(path):
    try:
        return load_config(path)
    except FileNotFoundError:
        raise CliError("config", f"{path}: no such file", code=EXIT_USAGE) from None
    except ConfigError as exc:
        raise CliError("config", str(exc), exc.errors, code=EXIT_USAGE) from None


def cmd_run(args) -> dict:
    config = _load(args.config)
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    out = args.output_dir or config.output_dir
    try:
        res = run_experiment(config, out)
    except RunError as exc:
        raise CliError(
            "run", str(exc), [f"{len(exc.trace)} iterations completed; partial trace in {Path(out) / 'trace.csv'}"]
        ) from None
    return {"output_dir": str(out), "files": {k: str(v) for k, v in res.files.items()}, "summary": res.summary}


def cmd_compare(args) -> dict:
    base = _load(args.config)
    modes = args.modes or list(MODES)
    seeds = args.seeds if args.seeds else [base.seed]
    out = Path(args.output_dir or base.output_dir)
    rows = []
    for seed in seeds:
        configs = [replace(base, mode=m, seed=seed) for m in modes]
        try:
            rows += compare_modes(configs, args.tol, out)
        except RunError as exc:
            raise CliError("run", str(exc)) from None
        except ValueError as exc:
            raise CliError("compare", str(exc), code=EXIT_USAGE) from None
    out.mkdir(parents=True, exist_ok=True)
    path = out / "comparison.csv"
    write_comparison_csv(rows, path)
    return {"table": str(path), "rows": rows}


def cmd_certify(args) -> dict:
    model, doc = _model(args.model)
    name = args.problem or doc.get("problem")
    if name is None:
        raise CliError("usage", "no problem given and the model file names none", code=EXIT_USAGE)
    try:
        problem = get_analytic(name, **json.loads(args.params))
    except (KeyError, ValueError, TypeError) as exc:
        raise CliError("usage", f"cannot build problem {name!r}: {exc}", code=EXIT_USAGE) from None
    if not problem.has_oracle:
        raise CliError("usage", f"problem {name!r} has no gradient oracle", code=EXIT_USAGE)
    center = _floats(args.center) if args.center else model.dataset.inputs[np.argmin(model.dataset.outputs)]
    if center.size != model.dim:
        raise CliError("usage", f"center has {center.size} entries, model dimension is {model.dim}", code=EXIT_USAGE)
    if not args.radius > 0:
        raise CliError("usage", "radius must be positive", code=EXIT_USAGE)
    defaults = FullLinearityConstants()
    k_ef = defaults.kappa_ef if args.kappa_ef is None else args.kappa_ef
    k_eg = defaults.kappa_eg if args.kappa_eg is None else args.kappa_eg
    reports = []
    if args.order in ("zeroth", "both"):
        reports.append(certify_zeroth_order(model, problem.exact, center, args.radius, k_ef, args.grid))
    if args.order in ("first", "both"):
        reports.append(certify_first_order(model, problem.grad, center, args.radius, k_eg, args.grid))
    if args.report:
        Path(args.report).write_text("\n".join(r.to_text() for r in reports))
    return {
        "reports": [
            {"order": r.order, "kappa": r.kappa, "radius": r.radius, "max_error": r.max_error, "ratio": r.ratio,
             "passed": r.passed}
            for r in reports
        ],
        "passed": all(r.passed for r in reports),
    }


def _model(path):
    try:
        return load_model(path)
    except FileNotFoundError:
        raise CliError("usage", f"{path}: no such file", code=EXIT_USAGE) from None
    except (ValueError, json.JSONDecodeError) as exc:
        raise CliError("model", str(exc), code=EXIT_USAGE) from None


def cmd_dataset_import(args) -> dict:
    try:
        data = Dataset.from_csv(args.csv)
    except FileNotFoundError:
        raise CliError("usage", f"{args.csv}: no such file", code=EXIT_USAGE) from None
    except ValueError as exc:
        raise CliError("dataset", str(exc), code=EXIT_USAGE) from None
    if len(data) < 2:
        raise CliError("dataset", f"{args.csv}: need at least two samples to train a model", code=EXIT_USAGE)
    theta = train(data, args.restarts, args.seed, noise_std=args.noise_std)
    save_model(args.output, data, theta, problem=args.problem)
    return {"model": str(args.output), "samples": len(data), "hyperparams": theta.to_dict()}


def cmd_dataset_export(args) -> dict:
    model, _ = _model(args.model)
    model.dataset.to_csv(args.output)
    return {"csv": str(args.output), "samples": len(model.dataset)}


def cmd_reference(args) -> dict:
    text = defaults_reference()
    if args.output:
        Path(args.output).write_text(text)
        return {"reference": str(args.output)}
    sys.stdout.write(text)
    return {}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gptr", description="GP trust-region experiments")
    p.add_argument("--error-file", help="also write the JSON error record here on failure")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="execute one config")
    r.add_argument("config")
    r.add_argument("--output-dir")
    r.add_argument("--seed", type=int, help="override the config seed")
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("compare", help="run one config in several modes, paired by seed")
    c.add_argument("config")
    c.add_argument("--modes", nargs="+", choices=MODES)
    c.add_argument("--seeds", nargs="+", type=int)
    c.add_argument("--tol", type=float, default=1e-2, help="oracle gradient-norm tolerance (default 1e-2)")
    c.add_argument("--output-dir")
    c.set_defaults(func=cmd_compare)

    f = sub.add_parser("certify", help="check full linearity of a saved model against an analytic oracle")
    f.add_argument("model", help="model.json from a run bundle or dataset import")
    f.add_argument("--problem", help="analytic problem (default: the one recorded in the model file)")
    f.add_argument("--params", default="{}", help="problem parameters as a JSON object")
    f.add_argument("--center", help="comma-separated center (default: best sample)")
    f.add_argument("--radius", type=float, required=True)
    f.add_argument("--order", choices=("zeroth", "first", "both"), default="both")
    f.add_argument("--kappa-ef", type=float)
    f.add_argument("--kappa-eg", type=float)
    f.add_argument("--grid", type=int, default=256)
    f.add_argument("--report", help="write the plain-text report here")
    f.set_defaults(func=cmd_certify)

    d = sub.add_parser("dataset", help="convert between sample CSVs and saved models")
    dsub = d.add_subparsers(dest="dataset_command", required=True)
    di = dsub.add_parser("import", help="train a GP on a CSV of samples and save it")
    di.add_argument("csv")
    di.add_argument("--output", required=True)
    di.add_argument("--restarts", type=int, default=3)
    di.add_argument("--seed", type=int, default=0)
    di.add_argument("--noise-std", type=float, help="fix the noise level (learned when omitted)")
    di.add_argument("--problem", help="analytic problem name to record in the model file")
    di.set_defaults(func=cmd_dataset_import)
    de = dsub.add_parser("export", help="write the samples of a saved model as CSV")
    de.add_argument("model")
    de.add_argument("--output", required=True)
    de.set_defaults(func=cmd_dataset_export)

    ref = sub.add_parser("config-reference", help="print the config defaults as markdown")
    ref.add_argument("--output")
    ref.set_defaults(func=cmd_reference)
    return p


def _fail(args, kind: str, message: str, details, code: int) -> int:
    record = {"status": "error", "error": kind, "message": message, "details": list(details)}
    text = json.dumps(record, sort_keys=True)
    print(text, file=sys.stderr)
    if getattr(args, "error_file", None):
        Path(args.error_file).write_text(text + "\n")
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        if exc.code in (0, None):
            return 0
        return _fail(argparse.Namespace(), "usage", "invalid command line", [], EXIT_USAGE)
    try:
        result = args.func(args)
    except CliError as exc:
        return _fail(args, exc.kind, str(exc), exc.details, exc.code)
    except Exception as exc:  # anything unexpected still gets a machine-readable record
        return _fail(args, type(exc).__name__, str(exc), [], EXIT_RUNTIME)
    if result:
        print(json.dumps({"status": "ok", **result}, sort_keys=True, default=_plain))
    return 0


def _plain(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(type(o).__name__)


if __name__ == "__main__":
    sys.exit(main())
