"""Command-line entry point: ``smoge <subcommand> [--config FILE] [flags]``.

Every subcommand resolves a flat configuration record from defaults, an
optional TOML file and command-line flags (flags win; SMOGE_SEED overrides
the file's seed but not ``--seed``). Exit codes: 0 success, 1 usage error,
2 numerical failure. Subcommands writing to ``--out`` leave a
``manifest.toml`` there on exit codes 0 and 2; its ``[config]`` table is a
valid config file for the same subcommand.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .contraction import EstimatorConfig, RateSchedule, rate_experiment
from .data import B4_CONFIGS, ConfigurationError, Dataset, DgpSpec, sample_dgp
from .files import RunManifest, format_number, read_measure, read_toml, write_measure, write_rows
from .identifiability import strong_identifiability_test
from .selection import SelectionConfig, paper_iterations, run_selection, emit_table
from .vi import FitAborted, FitConfig, PriorConfig, fit
from .voronoi import loss_l1, loss_l2

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL = 0, 1, 2


class UsageError(Exception):
    pass


class NumericalFailure(Exception):
    pass


@dataclass(frozen=True)
class Key:
    kind: str  # int, float, str, ints, floats, bool
    default: object = None
    help: str = ""
    choices: tuple = ()
    required: bool = False


_PRIOR_KEYS = {
    "gating_var": Key("float", 10.0, "prior variance of gating coefficients"),
    "slope_var": Key("float", 10.0, "prior variance of expert slopes"),
    "intercept_var": Key("float", 10.0, "prior variance of expert intercepts"),
    "ig_shape": Key("float", 2.0, "inverse-gamma shape for expert variances"),
    "ig_rate": Key("float", 2.0, "inverse-gamma rate for expert variances"),
}

_DGP_KEYS = {
    "dgp": Key("str", None, "data-generating process", ("b2", "b3", "b4", "smoge"), required=True),
    "dgp_file": Key("str", None, "mixing-measure TOML for --dgp smoge"),
    "sep": Key("float", None, "b4 gating separation"),
    "d": Key("int", None, "b4 covariate dimension"),
    "kstar": Key("int", None, "b4 true number of experts"),
}

_OUTPUT_KEYS = {
    "out": Key("str", "smoge-out", "output directory"),
    "round": Key("int", None, "significant digits in CSV output (default: full precision)"),
}

SCHEMAS = {
    "simulate": {
        **_DGP_KEYS,
        "n": Key("int", 500, "sample size"),
        "seed": Key("int", 0, "master seed"),
        **_OUTPUT_KEYS,
    },
    "fit": {
        "data": Key("str", None, "dataset CSV", required=True),
        "K": Key("int", None, "number of experts", required=True),
        "family": Key("str", "linear", "expert family", ("linear", "sigmoid", "constant")),
        "iterations": Key("int", 4000, "Adam iterations"),
        "learning_rate": Key("float", 0.01, "Adam step size"),
        "lr_final": Key("float", None, "final step size of a geometric schedule"),
        "final_elbo_samples": Key("int", 200, "draws for the final ELBO estimate"),
        "seed": Key("int", 0, "master seed"),
        **_PRIOR_KEYS,
        **_OUTPUT_KEYS,
    },
    "select": {
        **_DGP_KEYS,
        "n": Key("ints", None, "sample size(s); several give a sweep"),
        "candidates": Key("ints", None, "candidate numbers of experts"),
        "reps": Key("int", 20, "replications per sample size"),
        "seed": Key("int", 0, "master seed"),
        "scale": Key("str", "desk", "desk or paper budgets", ("desk", "paper")),
        "iterations": Key("int", None, "iteration budget per fit before the scale divisor"),
        "iteration_divisor": Key("int", None, "budget divisor (desk 5, paper 1)"),
        "learning_rate": Key("float", None, "fixed step size (default: process-specific formula)"),
        "max_failures": Key("float", 0.1, "largest tolerated fraction of aborted replications"),
        "jobs": Key("int", None, "parallel workers (default: all cores)"),
        **_PRIOR_KEYS,
        **_OUTPUT_KEYS,
    },
    "rates": {
        "dgp_file": Key("str", None, "true mixing-measure TOML", required=True),
        "fit_k": Key("int", None, "fitted K (default: true K)"),
        "n_grid": Key("ints", [200, 800, 3200], "sample sizes"),
        "reps": Key("int", 10, "replications per sample size"),
        "estimator": Key("str", "vi_mean", "point estimator", ("vi_mean", "mh_posterior_mean")),
        "seed": Key("int", 0, "master seed"),
        "iterations": Key("int", 4000, "Adam iterations"),
        "learning_rate": Key("float", 0.05, "initial Adam step size"),
        "lr_final": Key("float", 0.002, "final Adam step size"),
        "mh_steps": Key("int", 20000, "Metropolis steps for mh_posterior_mean"),
        "n_mc": Key("int", 100000, "Monte Carlo draws per Hellinger estimate"),
        "jobs": Key("int", None, "parallel workers (default: all cores)"),
        **_PRIOR_KEYS,
        **_OUTPUT_KEYS,
    },
    "losses": {
        "g": Key("str", None, "fitted mixing-measure TOML", required=True),
        "gstar": Key("str", None, "reference mixing-measure TOML", required=True),
        "loss": Key("str", "l1", "loss variant", ("l1", "l2")),
        "csv": Key("str", None, "also write the report to this CSV"),
        "round": Key("int", None, "significant digits in output"),
    },
    "identifiability": {
        "family": Key("str", "linear", "expert family", ("linear", "sigmoid", "constant")),
        "order": Key("int", 1, "identifiability order (1 or 2)"),
        "d": Key("int", 2, "covariate dimension"),
        "beta": Key("floats", None, "expert parameters (default: random)"),
        "n_x": Key("int", 400, "covariate draws"),
        "seed": Key("int", 0, "seed"),
        "index": Key("str", "covariates", "derivative coordinates", ("covariates", "all")),
        "threshold": Key("float", 1e-8, "relative singular-value threshold"),
    },
}


# ---------------------------------------------------------------- config


def _coerce(name: str, key: Key, value, source: str):
    where = f"{source}: key {name!r}"
    try:
        if value is None:
            return None
        if key.kind == "int":
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise TypeError
            out = int(value)
        elif key.kind == "float":
            if isinstance(value, bool):
                raise TypeError
            out = float(value)
        elif key.kind == "str":
            if not isinstance(value, str):
                raise TypeError
            out = value
        elif key.kind == "bool":
            if not isinstance(value, bool):
                raise TypeError
            out = value
        elif key.kind in ("ints", "floats"):
            if isinstance(value, str):
                value = [v for v in value.replace(",", " ").split() if v]
            elif not isinstance(value, (list, tuple)):
                value = [value]
            conv = Key("int" if key.kind == "ints" else "float")
            out = [_coerce(name, conv, v if not isinstance(v, str) else _parse_scalar(v, conv.kind), source)
                   for v in value]
        else:
            raise AssertionError(key.kind)
    except (TypeError, ValueError):
        raise UsageError(f"{where}: expected {key.kind}, got {value!r}") from None
    if key.choices and out not in key.choices:
        raise UsageError(f"{where}: must be one of {list(key.choices)}, got {out!r}")
    return out


def _parse_scalar(text: str, kind: str):
    return int(text) if kind == "int" else float(text)


def parse_config(subcommand: str, file_values: dict | None = None, flag_values: dict | None = None,
                 env: dict | None = None) -> dict:
    """Resolved configuration record: defaults < file < SMOGE_SEED < flags."""
    if subcommand not in SCHEMAS:
        raise UsageError(f"unknown subcommand {subcommand!r}")
    schema = SCHEMAS[subcommand]
    env = os.environ if env is None else env
    rec = {name: key.default for name, key in schema.items()}
    for name, value in (file_values or {}).items():
        if name not in schema:
            raise UsageError(f"config: unknown key {name!r} for {subcommand}")
        rec[name] = _coerce(name, schema[name], value, "config")
    if "seed" in schema and env.get("SMOGE_SEED"):
        rec["seed"] = _coerce("seed", schema["seed"], _env_int(env["SMOGE_SEED"]), "SMOGE_SEED")
    for name, value in (flag_values or {}).items():
        if value is None:
            continue
        if name not in schema:
            raise UsageError(f"flag: unknown key {name!r}")
        rec[name] = _coerce(name, schema[name], value, "flag")
    for name, key in schema.items():
        if key.required and rec[name] is None:
            raise UsageError(f"missing required key {name!r}")
    return _resolve(subcommand, rec)


def _env_int(text):
    try:
        return int(text)
    except ValueError:
        raise UsageError(f"SMOGE_SEED must be an integer, got {text!r}") from None


def _positive(rec, *names, allow_zero=False):
    for name in names:
        v = rec.get(name)
        if v is None:
            continue
        vals = v if isinstance(v, list) else [v]
        if any((x < 0) if allow_zero else (x <= 0) for x in vals):
            raise UsageError(f"key {name!r} must be {'non-negative' if allow_zero else 'positive'}, got {v!r}")


def _resolve(subcommand: str, rec: dict) -> dict:
    """Fill data-dependent defaults and check ranges."""
    _positive(rec, "reps", "iterations", "iteration_divisor", "learning_rate", "lr_final", "n_x", "n_mc",
              "mh_steps", "K", "fit_k", "candidates", "n_grid", "jobs", "round", "final_elbo_samples",
              "gating_var", "slope_var", "intercept_var", "ig_shape", "ig_rate")
    _positive(rec, "n", "seed", allow_zero=True)
    if "dgp" in rec:
        _resolve_dgp(rec)
    if subcommand == "select":
        spec = dgp_spec(rec)
        if rec["n"] is None:
            rec["n"] = {"b2": [10, 25, 50, 100], "b3": [100, 500, 1000, 2000]}.get(rec["dgp"], [500])
        if rec["candidates"] is None:
            rec["candidates"] = {"b2": [1, 2, 3, 4], "b3": list(range(1, 7))}.get(rec["dgp"], list(range(1, 8)))
        if rec["iterations"] is None:
            rec["iterations"] = paper_iterations(spec)
        if rec["iteration_divisor"] is None:
            rec["iteration_divisor"] = 5 if rec["scale"] == "desk" else 1
        if rec["jobs"] is None:
            rec["jobs"] = os.cpu_count() or 1
        if not 0 <= rec["max_failures"] <= 1:
            raise UsageError("key 'max_failures' must lie in [0, 1]")
        if any(b <= a for a, b in zip(rec["candidates"], rec["candidates"][1:])):
            raise UsageError("key 'candidates' must be strictly increasing")
    if subcommand == "rates":
        if rec["jobs"] is None:
            rec["jobs"] = os.cpu_count() or 1
        if len(rec["n_grid"]) < 3:
            raise UsageError("key 'n_grid' needs at least three sample sizes")
    if subcommand == "identifiability" and rec["order"] not in (1, 2):
        raise UsageError("key 'order' must be 1 or 2")
    return rec


def _resolve_dgp(rec: dict) -> None:
    kind = rec["dgp"]
    if kind == "b4":
        for name in ("sep", "d", "kstar"):
            if rec[name] is None:
                raise UsageError(f"--dgp b4 needs key {name!r}")
        if (rec["d"], rec["kstar"]) not in B4_CONFIGS:
            raise UsageError(f"b4 (d, kstar) must be one of {sorted(B4_CONFIGS)}")
        if rec["sep"] <= 0:
            raise UsageError("key 'sep' must be positive")
    elif kind == "smoge":
        if rec["dgp_file"] is None:
            raise UsageError("--dgp smoge needs key 'dgp_file'")
    else:
        fixed = {"b2": (2, 2), "b3": (6, 4)}[kind]
        if rec["d"] not in (None, fixed[0]) or rec["kstar"] not in (None, fixed[1]):
            raise UsageError(f"{kind} has fixed d={fixed[0]}, kstar={fixed[1]}")
        rec["d"], rec["kstar"] = fixed


def dgp_spec(rec: dict) -> DgpSpec:
    kind = rec["dgp"]
    if kind == "b2":
        return DgpSpec.b2()
    if kind == "b3":
        return DgpSpec.b3()
    if kind == "b4":
        return DgpSpec.b4(rec["sep"], rec["d"], rec["kstar"])
    try:
        return DgpSpec.smoge(read_measure(rec["dgp_file"]))
    except ConfigurationError as exc:
        raise UsageError(str(exc)) from exc


def _prior(rec: dict) -> PriorConfig:
    return PriorConfig(rec["gating_var"], rec["slope_var"], rec["intercept_var"], rec["ig_shape"], rec["ig_rate"])


# ---------------------------------------------------------------- commands


class _Run:
    """Output directory plus manifest bookkeeping for one invocation."""

    def __init__(self, subcommand, rec):
        self.rec = rec
        self.out = Path(rec["out"])
        self.out.mkdir(parents=True, exist_ok=True)
        self.digits = rec.get("round")
        self.manifest = RunManifest(__version__, subcommand, rec, rec.get("seed"), _now())

    def rows(self, name, rows, header=None):
        path = self.out / name
        write_rows(rows, path, self.digits, header)
        self.manifest.add_output(path)
        return path

    def text(self, name, text):
        path = self.out / name
        path.write_text(text)
        self.manifest.add_output(path)
        return path

    def finish(self, code):
        self.manifest.finished = _now()
        self.manifest.exit_code = code
        self.manifest.write(self.out / "manifest.toml")


def _now():
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def cmd_simulate(rec, run: _Run):
    spec = dgp_spec(rec)
    data = sample_dgp(spec, rec["n"], rec["seed"])
    path = run.out / "data.csv"
    data.to_csv(path)
    run.manifest.add_output(path)
    run.manifest.add_output(str(path) + ".provenance.json")
    print(f"wrote {data.n} rows to {path}")
    return EXIT_OK


def cmd_fit(rec, run: _Run):
    try:
        data = Dataset.from_csv(rec["data"])
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read data {rec['data']!r}: {exc}") from exc
    cfg = FitConfig(iterations=rec["iterations"], learning_rate=rec["learning_rate"], lr_final=rec["lr_final"],
                    final_elbo_samples=rec["final_elbo_samples"], seed=rec["seed"])
    try:
        res = fit(data, rec["K"], _prior(rec), cfg, family=rec["family"])
    except FitAborted as exc:
        run.manifest.notes.append(str(exc))
        print(f"fit aborted: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    path = run.out / "fit.json"
    res.to_json(path)
    run.manifest.add_output(path)
    pe = run.out / "point_estimate.toml"
    write_measure(res.point_estimate, pe)
    run.manifest.add_output(pe)
    step = 100
    run.rows("elbo_trace.csv", [{"iteration": i + 1, "elbo": v} for i, v in enumerate(res.elbo_trace)
                                if i % step == 0 or i == len(res.elbo_trace) - 1])
    print(f"final_elbo = {format_number(res.final_elbo, run.digits)}")
    print(f"final_elbo_std_error = {format_number(res.final_elbo_std_error, run.digits)}")
    return EXIT_OK


def cmd_select(rec, run: _Run):
    spec = dgp_spec(rec)
    results = []
    n_failed = n_total = 0
    rep_rows = []
    for n in rec["n"]:
        overrides = {"iterations": max(1, rec["iterations"] // rec["iteration_divisor"])}
        if rec["learning_rate"] is not None:
            overrides["learning_rate"] = rec["learning_rate"]
        cfg = SelectionConfig(spec, n, tuple(rec["candidates"]), rec["reps"], rec["seed"], rec["scale"],
                              {"all": overrides}, _prior(rec), rec["jobs"])
        res = run_selection(cfg)
        results.append(res)
        n_failed += len(res.failed)
        n_total += rec["reps"]
        for row in res.replication_rows():
            rep_rows.append({"n": n, **row})
        for rep, msg in res.failed:
            run.manifest.notes.append(f"n={n} replication {rep}: {msg}")
    csv_text, table = emit_table(results)
    run.text("selection_table.csv", csv_text)
    run.rows("replications.csv", rep_rows)
    print(table, end="")
    if n_failed / n_total > rec["max_failures"]:
        print(f"{n_failed} of {n_total} replications aborted", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def cmd_rates(rec, run: _Run):
    try:
        G_star = read_measure(rec["dgp_file"])
    except ConfigurationError as exc:
        raise UsageError(str(exc)) from exc
    fit_k = rec["fit_k"] if rec["fit_k"] is not None else G_star.K
    target = "exact_specified" if fit_k == G_star.K else "over_specified"
    try:
        schedule = RateSchedule(tuple(rec["n_grid"]), rec["reps"], target, rec["estimator"])
    except ConfigurationError as exc:
        raise UsageError(str(exc)) from exc
    cfg = EstimatorConfig(fit=FitConfig(iterations=rec["iterations"], learning_rate=rec["learning_rate"],
                                        lr_final=rec["lr_final"]),
                          mh_steps=rec["mh_steps"], prior=_prior(rec))
    try:
        res = rate_experiment(schedule, G_star, rec["seed"], fit_k, cfg, rec["n_mc"], rec["jobs"])
    except FitAborted as exc:
        run.manifest.notes.append(str(exc))
        print(f"fit aborted: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ConfigurationError as exc:
        raise UsageError(str(exc)) from exc
    run.rows("points.csv", res.rows)
    slope_rows = [{"loss": k, "slope": s, "std_error": se,
                   **{f"median_n{n}": m for n, m in zip(res.n_grid, res.medians[k])}}
                  for k, (s, se) in res.slopes.items()]
    run.rows("slopes.csv", slope_rows)
    for row in slope_rows:
        print(f"{row['loss']}: slope {format_number(row['slope'], run.digits or 4)} "
              f"(se {format_number(row['std_error'], run.digits or 2)})")
    return EXIT_OK


def cmd_losses(rec):
    try:
        G, G_star = read_measure(rec["g"]), read_measure(rec["gstar"])
    except ConfigurationError as exc:
        raise UsageError(str(exc)) from exc
    fn = loss_l1 if rec["loss"] == "l1" else loss_l2
    try:
        rep = fn(G, G_star)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    digits = rec["round"]
    fields = {
        "loss": rec["loss"],
        "total": format_number(rep.total, digits),
        "weight_term": format_number(rep.weight_term, digits),
        "per_cell_terms": " ".join(format_number(v, digits) for v in rep.per_cell_terms),
        "empty_cells": " ".join(str(j + 1) for j in rep.empty_cells),
        "singleton_cells": " ".join(str(j + 1) for j in rep.singleton_cells),
    }
    for k, v in fields.items():
        print(f"{k} = {v}")
    if rec["csv"]:
        row = {"loss": rec["loss"], "total": rep.total, "weight_term": rep.weight_term}
        row.update({f"cell{j + 1}": v for j, v in enumerate(rep.per_cell_terms)})
        write_rows([row], rec["csv"], digits)
    return EXIT_OK


def cmd_identifiability(rec):
    try:
        report = strong_identifiability_test(rec["family"], rec["beta"], rec["order"], rec["n_x"], rec["seed"],
                                             d=rec["d"], index=rec["index"], threshold=rec["threshold"])
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    for k in ("order", "feature_count", "min_singular_value", "max_singular_value", "threshold", "verdict"):
        print(f"{k} = {format_number(getattr(report, k))}")
    return EXIT_OK


# ---------------------------------------------------------------- parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="smoge", description="Softmax-gated mixtures of Gaussian experts.")
    parser.add_argument("--version", action="version", version=f"smoge {__version__}")
    sub = parser.add_subparsers(dest="subcommand", parser_class=_Parser)
    for name, schema in SCHEMAS.items():
        p = sub.add_parser(name)
        p.add_argument("--config", help="TOML file with configuration keys")
        for key_name, key in schema.items():
            flag = "--" + key_name.replace("_", "-")
            kwargs = {"dest": key_name, "default": None, "help": key.help}
            if key.choices:
                kwargs["choices"] = key.choices
            if key.kind in ("int", "float"):
                kwargs["type"] = int if key.kind == "int" else float
            p.add_argument(flag, **kwargs)
    return parser


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    run = None
    try:
        args = build_parser().parse_args(argv)
        if args.subcommand is None:
            raise UsageError("a subcommand is required: " + ", ".join(SCHEMAS))
        flags = {k: v for k, v in vars(args).items() if k not in ("subcommand", "config")}
        file_values = read_toml(args.config) if args.config else {}
        rec = parse_config(args.subcommand, file_values, flags)
        if args.subcommand == "losses":
            return cmd_losses(rec)
        if args.subcommand == "identifiability":
            return cmd_identifiability(rec)
        run = _Run(args.subcommand, rec)
        code = {"simulate": cmd_simulate, "fit": cmd_fit, "select": cmd_select, "rates": cmd_rates}[
            args.subcommand](rec, run)
    except (UsageError, ConfigurationError) as exc:
        print(f"smoge: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    run.finish(code)
    return code


def _entry():
    sys.exit(main())


if __name__ == "__main__":
    _entry()
