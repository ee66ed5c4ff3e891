"""Command-line front end.

Verbs::

    hvt check-compat FILE --props A,B [--time T]
    hvt prob FILE (--expr EXPR | --props A,B) [--format json|csv] [--permissive]
    hvt sample FILE --trials N --seed S [--format csv|json]
    hvt scenario list
    hvt scenario run NAME [--format json|csv]
    hvt report FILE [--factor F]

Every verb accepts ``--out PATH``; files are written atomically.  Exit
status is 0 on success, 1 when a check fails or a strict-mode conjunction is
refused, and 2 on usage or validation errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
from dataclasses import dataclass
from typing import Any, Mapping, Sequence

import jsonschema
import numpy as np

from .compatibility import compat_check, history_probabilities
from .probability import Ensemble, joint, probability_table, table_to_csv
from .propositions import (
    And,
    ElementaryProposition,
    IncompatibleConjunction,
    atoms_of,
    characteristic,
    parse_expr,
    pretty,
)
from .qcore import DensityOperator, Ket, SystemModel, as_matrix, load_system
from .quantities import Grid, Quantity, build_quantity, classical_ok, robertson_bound, variance
from .scenarios import SCENARIOS, dumps_json
from .trials import HistorySpec, history_chi_square, sample_trials, trials_to_csv

__all__ = ["SCENARIO_SCHEMA", "ScenarioError", "Scenario", "parse_scenario", "load_scenario",
           "build_parser", "main"]

log = logging.getLogger(__name__)

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

_NUMBER = {"type": "number"}
_ENTRY = {"oneOf": [_NUMBER, {"type": "array", "items": _NUMBER, "minItems": 2, "maxItems": 2}]}
_VECTOR = {"type": "array", "items": _ENTRY, "minItems": 1}
_MATRIX = {"type": "array", "items": _VECTOR, "minItems": 1}
_INDICES = {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1}
_LABEL = "^[A-Za-z_][A-Za-z0-9_]*$"

SCENARIO_SCHEMA: dict = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["h0", "initial"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string"},
        "subsystem_dims": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
        "h0": _MATRIX,
        "h": _MATRIX,
        "initial": {
            "type": "object",
            "minProperties": 1,
            "maxProperties": 1,
            "additionalProperties": False,
            "properties": {"ket": _VECTOR, "density": _MATRIX},
        },
        "propositions": {
            "type": "object",
            "propertyNames": {"pattern": _LABEL},
            "additionalProperties": {
                "type": "object",
                "additionalProperties": False,
                "properties": {"indices": _INDICES, "operator": _MATRIX, "time": _NUMBER},
                "minProperties": 1,
            },
        },
        "partitions": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["time", "cells"],
                "additionalProperties": False,
                "properties": {
                    "time": _NUMBER,
                    "cells": {"type": "array", "items": _INDICES, "minItems": 1},
                    "labels": {"type": "array", "items": {"type": "string"}},
                },
            },
        },
        "grids": {
            "type": "object",
            "additionalProperties": {
                "type": "object",
                "additionalProperties": False,
                "properties": {
                    "anchors": {"type": "array", "items": _NUMBER, "minItems": 1},
                    "uniform": {
                        "type": "object",
                        "required": ["delta", "i_min", "i_max"],
                        "additionalProperties": False,
                        "properties": {"delta": _NUMBER, "i_min": {"type": "integer"},
                                       "i_max": {"type": "integer"}},
                    },
                    "operator": _MATRIX,
                },
            },
        },
        "tolerances": {"type": "object", "additionalProperties": _NUMBER},
        "mode": {"enum": ["strict", "permissive"]},
    },
}

_VALIDATOR = jsonschema.Draft202012Validator(SCENARIO_SCHEMA)


class ScenarioError(ValueError):
    """Invalid scenario document; ``path`` is a JSON pointer to the first failure."""

    def __init__(self, message: str, path: str = ""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


def _pointer(parts: Sequence[Any]) -> str:
    return "".join("/" + str(p).replace("~", "~0").replace("/", "~1") for p in parts)


def _schema_error(err: jsonschema.ValidationError) -> ScenarioError:
    parts = list(err.absolute_path)
    if err.validator == "required":
        missing = [k for k in err.validator_value if k not in err.instance]
        if missing:
            return ScenarioError("required property is missing", _pointer(parts + [missing[0]]))
    return ScenarioError(err.message, _pointer(parts) or "/")


def parse_scenario(text: str) -> dict:
    """Parse and validate a scenario document.

    Raises :class:`ScenarioError` naming the character position of a
    syntax error or the JSON pointer of the first schema violation.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ScenarioError(f"JSON syntax error at line {e.lineno} column {e.colno} (char {e.pos}): {e.msg}")
    errors = sorted(_VALIDATOR.iter_errors(doc), key=lambda e: (list(map(str, e.absolute_path)), e.validator))
    if errors:
        raise _schema_error(jsonschema.exceptions.best_match(errors))
    return doc


@dataclass
class Scenario:
    """A validated document turned into model objects."""

    doc: dict
    model: SystemModel
    ensemble: Ensemble
    propositions: dict[str, ElementaryProposition]
    history: HistorySpec | None
    quantities: dict[str, Quantity]

    @property
    def strict(self) -> bool:
        return self.doc.get("mode", "strict") == "strict"


def load_scenario(doc: Mapping[str, Any]) -> Scenario:
    """Build the model, initial ensemble, proposition table, history and quantities."""
    model = load_system(doc)
    init = doc["initial"]
    if "ket" in init:
        rho = Ket(as_matrix([init["ket"]], "/initial/ket")[0]).density()
        rho = DensityOperator(rho.matrix, model.tol)
    else:
        rho = DensityOperator(as_matrix(init["density"], "/initial/density"), model.tol)
    if rho.dim != model.dim:
        raise ScenarioError(f"dimension {rho.dim} does not match h0 dimension {model.dim}", "/initial")
    props = {}
    for label, p in doc.get("propositions", {}).items():
        has_idx, has_op = "indices" in p, "operator" in p
        if has_idx == has_op:
            raise ScenarioError("give exactly one of indices or operator", f"/propositions/{label}")
        t = float(p.get("time", 0.0))
        if has_idx:
            bad = [k for k in p["indices"] if k >= model.dim]
            if bad:
                raise ScenarioError(f"index {bad[0]} out of range for dimension {model.dim}",
                                    f"/propositions/{label}/indices")
            props[label] = ElementaryProposition(label, tuple(p["indices"]), t)
        else:
            props[label] = ElementaryProposition(label, None, t, as_matrix(p["operator"], label))
    history = None
    parts = doc.get("partitions")
    if parts:
        parts = sorted(parts, key=lambda p: p["time"])
        labels = None
        if all("labels" in p for p in parts):
            labels = tuple(tuple(p["labels"]) for p in parts)
        history = HistorySpec(tuple(p["time"] for p in parts),
                              tuple(tuple(tuple(c) for c in p["cells"]) for p in parts), labels)
        history.resolve(model)
    quantities = {}
    for name, g in doc.get("grids", {}).items():
        if "operator" in g:
            quantities[name] = build_quantity(model, g["operator"], Grid.from_spec(g), name)
        else:
            Grid.from_spec(g)
    return Scenario(dict(doc), model, Ensemble(rho, doc.get("name", "")), props, history, quantities)


# -- output -----------------------------------------------------------------------

def _emit(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
        return
    _atomic_write(out, text)


def _atomic_write(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".hvt-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read_scenario(path: str) -> Scenario:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as e:
        raise ScenarioError(f"cannot read {path}: {e.strerror}")
    return load_scenario(parse_scenario(text))


def _lookup(sc: Scenario, names: str, time: float | None) -> list[ElementaryProposition]:
    out = []
    for name in (n.strip() for n in names.split(",")):
        if name not in sc.propositions:
            raise ScenarioError(f"unknown proposition {name!r}", "/propositions")
        p = sc.propositions[name]
        out.append(p if time is None else p.at(time))
    return out


# -- verbs ------------------------------------------------------------------------

def cmd_check_compat(args: argparse.Namespace) -> int:
    sc = _read_scenario(args.file)
    atoms = _lookup(sc, args.props, args.time)
    t = args.time if args.time is not None else atoms[0].time
    if any(a.time != t for a in atoms):
        raise ScenarioError("compatibility is defined for coincident propositions; pass --time")
    rep = compat_check(sc.model, sc.ensemble.rho0, atoms, t)
    body = rep.to_dict()
    body["labels"] = list(rep.labels)
    body["time"] = t
    _emit(dumps_json(body), args.out)
    return EXIT_OK


def _is_conjunction(expr) -> bool:
    if isinstance(expr, ElementaryProposition):
        return True
    return isinstance(expr, And) and _is_conjunction(expr.left) and _is_conjunction(expr.right)


def cmd_prob(args: argparse.Namespace) -> int:
    sc = _read_scenario(args.file)
    strict = sc.strict and not args.permissive
    if (args.expr is None) == (args.props is None):
        raise ScenarioError("give exactly one of --expr or --props")
    if args.props is not None:
        atoms = _lookup(sc, args.props, args.time)
        if args.format == "csv":
            if len(atoms) != 2:
                raise ScenarioError("--format csv needs exactly two propositions")
            rows = probability_table(sc.ensemble, sc.model, atoms[0], atoms[1], strict)
            _emit(table_to_csv(rows), args.out)
            return EXIT_OK
        p = joint(sc.ensemble, sc.model, atoms, strict)
        text = " AND ".join(f"{a.label}@{a.time!r}" for a in atoms)
    else:
        if args.format == "csv":
            raise ScenarioError("--format csv needs --props with two propositions")
        expr = parse_expr(args.expr, sc.propositions)
        text = pretty(expr)
        if _is_conjunction(expr):
            p = joint(sc.ensemble, sc.model, atoms_of(expr), strict)
        else:
            x = characteristic(expr, sc.model, sc.ensemble.rho0, strict)
            p = min(1.0, max(0.0, x.expectation(sc.ensemble.rho0)))
    _emit(dumps_json({"expr": text, "mode": "strict" if strict else "permissive",
                      "probability": p}), args.out)
    return EXIT_OK


def cmd_sample(args: argparse.Namespace) -> int:
    sc = _read_scenario(args.file)
    if sc.history is None:
        raise ScenarioError("sampling needs at least one partition", "/partitions")
    if args.trials < 2:
        raise ScenarioError("--trials must be at least 2")
    trials = sample_trials(sc.ensemble, sc.model, sc.history, args.trials, args.seed,
                           workers=os.cpu_count())
    if args.format == "csv":
        _emit(trials_to_csv(trials), args.out)
        return EXIT_OK
    table = history_probabilities(sc.model, sc.ensemble.rho0, sc.history.family())
    counts: dict[tuple[int, ...], int] = {}
    for tr in trials:
        counts[tr.outcomes] = counts.get(tr.outcomes, 0) + 1
    stat, p_value, dof = history_chi_square(trials, sc.ensemble, sc.model, sc.history)
    rows = [{"history": list(k), "count": counts.get(k, 0), "frequency": counts.get(k, 0) / len(trials),
             "probability": min(1.0, max(0.0, v))} for k, v in sorted(table.items())]
    _emit(dumps_json({"n_trials": len(trials), "seed": args.seed, "times": list(sc.history.times),
                      "histories": rows, "chi_square": stat, "p_value": p_value, "dof": dof}), args.out)
    return EXIT_OK


def cmd_scenario(args: argparse.Namespace) -> int:
    if args.action == "list":
        _emit("".join(f"{name}\n" for name in SCENARIOS), args.out)
        return EXIT_OK
    if args.name not in SCENARIOS:
        raise ScenarioError(f"unknown scenario {args.name!r}; try 'hvt scenario list'")
    rep = SCENARIOS[args.name]()
    if args.format == "csv":
        if args.out is None:
            for name in rep.tables:
                sys.stdout.write(f"# {name}\n{rep.table_csv(name)}")
        else:
            os.makedirs(args.out, exist_ok=True)
            for name in rep.tables:
                _atomic_write(os.path.join(args.out, f"{rep.name}_{name}.csv"), rep.table_csv(name))
    else:
        _emit(rep.to_json(), args.out)
    for c in rep.checks:
        if not c.passed:
            log.error("check failed: %s (expected %r, got %r)", c.description, c.expected, c.actual)
    return EXIT_OK if rep.passed else EXIT_FAIL


def cmd_report(args: argparse.Namespace) -> int:
    sc = _read_scenario(args.file)
    strict = sc.strict and not args.permissive
    ens, model = sc.ensemble, sc.model
    props = {label: {"time": p.time, "probability": joint(ens, model, p, strict)}
             for label, p in sc.propositions.items()}
    parts = []
    if sc.history is not None:
        for t, cells in zip(sc.history.times, sc.history.resolve(model)):
            rho_t = model.evolve(ens.rho0.matrix, t)
            parts.append({"time": t, "cells": [min(1.0, max(0.0, float(np.real(np.trace(c @ rho_t)))))
                                               for c in cells]})
    quants = {name: {"variance": max(0.0, variance(ens, model, q)),
                     "min_interval": q.grid.min_interval} for name, q in sc.quantities.items()}
    pairs = []
    names = list(sc.quantities)
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            fa, fb = sc.quantities[a], sc.quantities[b]
            pairs.append({"f": a, "g": b, "robertson_bound": robertson_bound(ens, model, fa, fb),
                          "classical_ok": classical_ok(fa, fb, ens, 0.0, args.factor)})
    body = {"name": sc.doc.get("name", ""), "dim": model.dim,
            "eigenvalues": [float(v) for v in model.basis.eigenvalues], "mode": "strict" if strict else "permissive",
            "propositions": props, "partitions": parts, "quantities": quants, "pairs": pairs,
            "factor": args.factor}
    _emit(dumps_json(body), args.out)
    return EXIT_OK


# -- entry point ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hvt", description="Stationary-state proposition calculus tools.")
    sub = parser.add_subparsers(dest="verb", required=True, metavar="VERB")

    def common(p: argparse.ArgumentParser, file: bool = True) -> None:
        if file:
            p.add_argument("file", help="scenario JSON document")
        p.add_argument("--out", help="write output here instead of stdout")

    p = sub.add_parser("check-compat", help="compatibility report for coincident propositions")
    common(p)
    p.add_argument("--props", required=True, help="comma-separated proposition labels")
    p.add_argument("--time", type=float, help="evaluate every proposition at this time")
    p.set_defaults(func=cmd_check_compat)

    p = sub.add_parser("prob", help="joint probability of propositions or an expression")
    common(p)
    p.add_argument("--expr", help='proposition expression, e.g. "A@0 AND NOT B@1"')
    p.add_argument("--props", help="comma-separated labels (two for --format csv)")
    p.add_argument("--time", type=float, help="override the time of every --props proposition")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--permissive", action="store_true", help="average over orderings instead of refusing")
    p.set_defaults(func=cmd_prob)

    p = sub.add_parser("sample", help="sample histories over the document's partitions")
    common(p)
    p.add_argument("--trials", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("scenario", help="built-in worked examples")
    p.add_argument("action", choices=("list", "run"))
    p.add_argument("name", nargs="?")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--out", help="output file (json) or directory (csv)")
    p.set_defaults(func=cmd_scenario)

    p = sub.add_parser("report", help="summary of a scenario document")
    common(p)
    p.add_argument("--factor", type=float, default=10.0, help="margin for the classical-limit gate")
    p.add_argument("--permissive", action="store_true")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.verb == "scenario" and args.action == "run" and not args.name:
        parser.error("scenario run needs a NAME")
    if getattr(args, "factor", 1.0) <= 0:
        parser.error("--factor must be positive")
    logging.basicConfig(level=logging.WARNING, format="hvt: %(levelname)s: %(message)s")
    try:
        return args.func(args)
    except IncompatibleConjunction as e:
        print(f"hvt: refused: {e}", file=sys.stderr)
        return EXIT_FAIL
    except (ValueError, KeyError) as e:
        print(f"hvt: error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
