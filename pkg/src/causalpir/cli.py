"""Command-line front-end: load a scenario file, run one task, print a report.

Exit codes: 0 ok, 2 infeasible, 3 validation error, 4 size-cap error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import re
import sys
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources
from pathlib import Path
from typing import Any, Callable, Sequence

import jsonschema
import numpy as np

from . import causal_maxent as cm
from . import counting, igci, maxent as me, pir
from .core import (ConditionalTable, DomainError, FiniteDomain, LinearConstraint, ProbTable, Relation,
                   SizeCapError, entropy, is_independent, marginalize, mutual_information,
                   relation_to_constraint, table_from_dict, table_to_dict)

EXIT_OK = 0
EXIT_INFEASIBLE = 2
EXIT_VALIDATION = 3
EXIT_SIZE_CAP = 4

FIXTURES = ("device", "pearl-puzzle", "chain-N", "parity", "sun-lauderdale-grid",
            "appendix-timeseries", "igci-square")
DISPLAY_DIGITS = 12

log = logging.getLogger(__name__)


class ScenarioError(DomainError):
    """The scenario file is unreadable, schema-invalid, or refers to unknown names."""


# --- loading -------------------------------------------------------------------

def _package_file(name: str):
    return resources.files("causalpir").joinpath(name)


def schema() -> dict:
    return json.loads(_package_file("scenario.schema.json").read_text())


def fixture_path(name: str):
    return _package_file("fixtures").joinpath(f"{name}.json")


def list_examples() -> list[dict]:
    out = []
    for name in FIXTURES:
        data = json.loads(fixture_path(name).read_text())
        out.append({"name": name, "task": data["task"]["name"], "description": data.get("description", "")})
    return out


def validate(data: Any) -> None:
    validator = jsonschema.Draft202012Validator(schema())
    err = jsonschema.exceptions.best_match(validator.iter_errors(data))
    if err is not None:
        where = "/".join(str(p) for p in err.absolute_path) or "<root>"
        raise ScenarioError(f"schema violation at {where}: {err.message}")


def load_scenario(source: str) -> dict:
    """Parse and schema-check a scenario given as a file path or a bundled fixture name."""
    path = Path(source)
    try:
        if path.is_file():
            text = path.read_text()
        elif source in FIXTURES:
            text = fixture_path(source).read_text()
        else:
            raise ScenarioError(f"no scenario file or fixture named {source!r}")
        data = json.loads(text)
    except (OSError, UnicodeDecodeError) as exc:
        raise ScenarioError(f"cannot read {source}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{source} is not valid JSON: {exc}") from exc
    validate(data)
    return data


_FACTOR = re.compile(r"^\s*(?:(?P<num>[-+]?\d+(?:\.\d*)?)|(?P<name>[A-Za-z_][A-Za-z0-9_]*)(?:\^(?P<pow>\d+))?)\s*$")


def moment_table(domain: FiniteDomain, spec: str) -> np.ndarray:
    """Expand ``E[...]`` with a product of ``Name``, ``Name^k`` and numeric factors into an f-table."""
    m = re.fullmatch(r"\s*E\[(.+)\]\s*", spec)
    if m is None:
        raise ScenarioError(f"moment {spec!r} must look like E[X], E[X^2] or E[X*Y]")
    f = np.ones(domain.shape)
    for factor in m.group(1).split("*"):
        fm = _FACTOR.match(factor)
        if fm is None:
            raise ScenarioError(f"cannot parse factor {factor!r} in {spec!r}")
        if fm.group("num") is not None:
            f = f * float(fm.group("num"))
            continue
        name = fm.group("name")
        if name not in domain.names:
            raise ScenarioError(f"moment {spec!r} refers to unknown variable {name!r}")
        vals = domain.values(name)
        if not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in vals):
            raise ScenarioError(f"variable {name!r} is not numeric; give an explicit f-table instead")
        f = f * domain.grid(name) ** int(fm.group("pow") or 1)
    return f


def _domain(data: dict) -> FiniteDomain:
    variables = []
    for v in data["variables"]:
        if "grid" in v:
            g = v["grid"]
            vals = tuple(float(x) for x in np.linspace(g["lo"], g["hi"], g["points"]))
        else:
            vals = tuple(v["values"])
        variables.append((v["name"], vals))
    return FiniteDomain(variables)


def _point_map(domain: FiniteDomain, mapping: dict) -> dict:
    for k, val in mapping.items():
        domain.value_index(k, val)
    return dict(mapping)


def _constraint(domain: FiniteDomain, c: dict) -> LinearConstraint:
    cid = c["id"]
    if "support" in c:
        members = [tuple(m) for m in c["support"]]
        if not members:
            raise ScenarioError(f"constraint {cid!r}: empty support")
        return relation_to_constraint(Relation(domain, frozenset(members)), cid)
    if "implies" in c:
        rel = cm.implication_relation(domain, _point_map(domain, c["implies"]["if"]),
                                      _point_map(domain, c["implies"]["then"]))
        return relation_to_constraint(rel, cid)
    f = moment_table(domain, c["moment"]) if "moment" in c else np.array(c["f"], dtype=float)
    return LinearConstraint(domain, f, c["target"], c.get("epsilon", 0.0), cid)


@dataclass
class Scenario:
    data: dict
    task: dict
    domain: FiniteDomain | None = None
    relation: Relation | None = None
    constraints: list[LinearConstraint] = field(default_factory=list)
    dag: cm.Dag | None = None

    @property
    def name(self) -> str:
        return self.task["name"]

    def need(self, attr: str):
        value = getattr(self, attr)
        if value is None:
            raise ScenarioError(f"task {self.name!r} needs a {attr}")
        return value

    def option(self, key: str, default=None):
        return self.task.get(key, default)

    def fit_constraints(self) -> list[LinearConstraint]:
        """Declared constraints plus the relation as a support restriction."""
        out = list(self.constraints)
        if self.relation is not None:
            out.insert(0, relation_to_constraint(self.relation, "relation"))
        if not out:
            raise ScenarioError(f"task {self.name!r} needs constraints or a relation")
        return out


def build_scenario(data: dict, overrides: dict | None = None) -> Scenario:
    task = dict(data["task"])
    task.update({k: v for k, v in (overrides or {}).items() if v is not None})
    sc = Scenario(data, task)
    if "domain" in data:
        sc.domain = _domain(data["domain"])
    needs_domain = ("relation", "constraints", "dag", "observations")
    if sc.domain is None and any(k in data for k in needs_domain):
        raise ScenarioError("a domain is required alongside relation, constraints, dag or observations")
    if "relation" in data:
        members = [tuple(m) for m in data["relation"]["members"]]
        if not members:
            raise ScenarioError("the relation is empty")
        sc.relation = Relation(sc.domain, frozenset(members))
    sc.constraints = [_constraint(sc.domain, c) for c in data.get("constraints", [])]
    eps = task.get("epsilon")
    if eps is not None:
        sc.constraints = [c if c.is_support else c.with_epsilon(eps) for c in sc.constraints]
    if "dag" in data:
        sc.dag = cm.Dag.from_dict(data["dag"])
    return sc


# --- reports -------------------------------------------------------------------

@dataclass
class Report:
    task: str
    status: str = "ok"
    message: str = ""
    values: dict = field(default_factory=dict)
    tables: dict[str, ProbTable] = field(default_factory=dict)

    @property
    def exit_code(self) -> int:
        return EXIT_INFEASIBLE if self.status == "infeasible" else EXIT_OK

    def primary(self) -> ProbTable | None:
        return next(iter(self.tables.values()), None)


def _key(point: Sequence) -> str:
    return ",".join(_display(v) for v in point)


def conditional_to_dict(ct: ConditionalTable) -> dict:
    def row(g):
        return {_key(t): (w if ct.exact else float(w)) for t, w in zip(ct.target.points(), np.ravel(ct.row(g)))}
    if ct.given is None:
        return row(())
    return {_key(g): row(g) for g in ct.given.points()}


def _steps(fit: cm.CausalFitResult) -> list[dict]:
    return [{"node": s.node, "parents": list(s.parents), "conditional_entropy": float(s.conditional_entropy),
             "conditional": conditional_to_dict(s.conditional) if s.conditional is not None else None}
            for s in fit.steps]


def _fit_report(task: str, fit: cm.CausalFitResult, dag: cm.Dag) -> Report:
    rep = Report(task, fit.status, fit.describe())
    rep.values.update(order=list(fit.order), scope=fit.scope, steps=_steps(fit))
    if fit.failed_step is not None:
        rep.values["failed_step"] = fit.failed_step
    if fit.joint is not None:
        rep.tables["joint"] = fit.joint
        rep.values["entropy"] = entropy(fit.joint)
    for k, alt in enumerate(fit.alternatives, 1):
        rep.tables[f"alternative_{k}"] = alt
    if fit.status != cm.INFEASIBLE:
        rep.values["markov_residual"] = fit.markov_residual(dag)
    return rep


def _cause(sc: Scenario) -> str | list[str]:
    cause = sc.option("cause")
    if cause is None:
        raise ScenarioError(f"task {sc.name!r} needs a cause")
    if isinstance(cause, str) and "," in cause:
        cause = [c.strip() for c in cause.split(",")]
    return cause


def task_pir(sc: Scenario) -> Report:
    cause = _cause(sc)
    rep = Report("pir", values={"cause": cause})
    rep.tables["joint"] = pir.causal_pir_joint(sc.need("relation"), cause)
    return rep


def task_symmetric_pir(sc: Scenario) -> Report:
    rep = Report("symmetric-pir")
    rep.tables["joint"] = pir.symmetric_pir_joint(sc.need("relation"))
    return rep


def task_pir_compare(sc: Scenario) -> Report:
    rel = sc.need("relation")
    cause = _cause(sc)
    cause_l = [cause] if isinstance(cause, str) else list(cause)
    causal, symmetric = pir.causal_pir_joint(rel, cause_l), pir.symmetric_pir_joint(rel)
    rep = Report("pir-compare", values={"cause": cause_l})
    rep.tables.update(causal=causal, symmetric=symmetric,
                      causal_cause_marginal=marginalize(causal, cause_l),
                      symmetric_cause_marginal=marginalize(symmetric, cause_l))
    rep.values["causal_conditional"] = {_key(g): {_key(t): w for t, w in row.items()}
                                        for g, row in pir.conditional_rows(causal, cause_l).items()}
    if len(cause_l) >= 2:
        a, b = cause_l[:1], cause_l[1:]
        for name, joint in (("causal", causal), ("symmetric", symmetric)):
            rep.values[f"{name}_cause_independent"] = is_independent(joint, a, b)
            rep.values[f"{name}_cause_mutual_information"] = mutual_information(joint, a, b)
    return rep


def task_infer_direction(sc: Scenario) -> Report:
    rel = sc.need("relation")
    obs = sc.data.get("observations")
    if not obs:
        raise ScenarioError("task 'infer-direction' needs observations")
    if len(rel.domain.names) != 2:
        raise ScenarioError("direction inference needs a two-variable relation")
    x, y = rel.domain.names
    res = pir.infer_direction(rel, [tuple(o) for o in obs])
    label = "tie" if res.tie else (f"{x}->{y}" if res.direction is pir.Direction.CAUSE_TO_EFFECT else f"{y}->{x}")
    return Report("infer-direction", values={
        f"likelihood_{x}->{y}": res.likelihood_forward, f"likelihood_{y}->{x}": res.likelihood_backward,
        "direction": label, "observations": len(obs)})


def task_maxent(sc: Scenario) -> Report:
    sol = me.maxent(sc.need("domain"), sc.fit_constraints())
    rep = Report("maxent", sol.status, values={"iterations": sol.iterations})
    if sol.distribution is None:
        rep.message = "constraints are infeasible"
        rep.values["min_squared_residual"] = sol.feasibility.min_squared_residual
        rep.status = "infeasible"
        return rep
    rep.tables["joint"] = sol.distribution
    rep.values.update(entropy=sol.entropy, multipliers=sol.multipliers, log_partition=float(sol.log_partition),
                      max_residual=max(sol.residuals.values(), default=0.0), dropped=list(sol.dropped))
    rep.status = "ok" if sol.converged else sol.status
    return rep


def task_causal_maxent(sc: Scenario) -> Report:
    domain = sc.need("domain")
    cause = _cause(sc)
    fit = cm.causal_maxent_bivariate(domain, sc.fit_constraints(), cause)
    effect = next(n for n in domain.names if n != cause)
    rep = _fit_report("causal-maxent", fit, cm.Dag(domain.names, ((cause, effect),)))
    if fit.joint is not None:
        rep.tables["cause_marginal"] = marginalize(fit.joint, [cause])
    return rep


def _scope(sc: Scenario) -> str:
    return cm.normalize_scope(sc.option("feasibility_scope", "general"))


def task_causal_maxent_dag(sc: Scenario) -> Report:
    dag = sc.need("dag")
    fit = cm.causal_maxent_dag(sc.need("domain"), sc.fit_constraints(), dag, sc.option("order"),
                               _scope(sc), seed=sc.option("seed", 0))
    return _fit_report("causal-maxent-dag", fit, dag)


def task_order_sensitivity(sc: Scenario) -> Report:
    rep_ = cm.order_sensitivity(sc.need("domain"), sc.fit_constraints(), sc.need("dag"), _scope(sc))
    return Report("order-sensitivity", values={
        "orders": rep_.orders, "statuses": rep_.statuses, "max_total_variation": rep_.max_tv})


def task_sequential_vs_uniform(sc: Scenario) -> Report:
    rel, dag = sc.need("relation"), sc.need("dag")
    var = sc.option("marginal") or sc.option("order", dag.default_order())[0]
    fit = cm.causal_maxent_dag(rel.domain, sc.fit_constraints(), dag, sc.option("order"), _scope(sc),
                               seed=sc.option("seed", 0))
    rep = _fit_report("sequential-vs-uniform", fit, dag)
    rep.values["admissible"] = len(rel)
    joint = rep.tables.pop("joint", None)
    rep.tables["uniform_marginal"] = marginalize(ProbTable.uniform_over(rel), [var])
    if joint is not None:
        rep.tables["sequential_marginal"] = marginalize(joint, [var])
        rep.tables["sequential_joint"] = joint
    return rep


def task_census(sc: Scenario) -> Report:
    rel = sc.need("relation")
    cause = _cause(sc)
    deltas = [Fraction(str(d)) for d in sc.option("deltas", counting.DEFAULT_DELTAS)]
    census = counting.concentration_census(rel, cause, sc.option("n", 8), deltas)
    rep = Report("census", values={"n": census.n, "records": [r.to_dict() for r in census.records]})
    for name, t in census.expected.items():
        rep.tables[f"expected_{name}"] = t
    for name, t in census.targets.items():
        rep.tables[f"target_{name}"] = t
    return rep


def _samples(spec) -> list[float]:
    if isinstance(spec, list):
        return [float(x) for x in spec]
    lo, hi, n = spec.get("lo", 0.0), spec.get("hi", 1.0), spec["midpoints"]
    if not lo < hi:
        raise ScenarioError("sample range needs lo < hi")
    return [lo + (hi - lo) * (k + 0.5) / n for k in range(n)]


def _function(data: dict) -> igci.MonotoneFunction:
    spec = data.get("function")
    if spec is None:
        raise ScenarioError("task 'igci' needs a function")
    if "builtin" in spec:
        return igci.BUILTINS[spec["builtin"]]()
    return igci.piecewise_linear(spec["knots"])


def task_igci(sc: Scenario) -> Report:
    f = _function(sc.data)
    if "samples" not in sc.data:
        raise ScenarioError("task 'igci' needs samples")
    xs = _samples(sc.data["samples"])
    grid, width = int(sc.option("grid", 200)), float(sc.option("pen_width", igci.DEFAULT_PEN_WIDTH))
    score = igci.igci_score(f, xs)
    rel = igci.fat_pen(f, grid, width)
    discrete = igci.discrete_pir_score(rel, [(igci.snap(x, grid), igci.snap(f(x), grid)) for x in xs])
    rep = Report("igci", values={
        "function": f.name, "samples": len(xs), "igci_score": score.score, "igci_direction": score.direction,
        "reverse_score": igci.reverse_igci_score(f, xs), "grid": grid, "pen_width": width,
        "relation_size": rel.size(), "sum_log_nx": discrete.sum_log_nx, "sum_log_ny": discrete.sum_log_ny,
        "discrete_direction": discrete.direction})
    limit_xs = _samples(sc.option("limit_samples")) if sc.option("limit_samples") else xs
    lim = igci.limit_consistency(f, limit_xs, sc.option("limit_grids", igci.LIMIT_GRIDS))
    rep.values["limit"] = {"grids": lim.grids, "pen_widths": lim.pen_widths, "deviations": lim.deviations,
                           "decreasing": lim.decreasing, "samples": len(limit_xs)}
    return rep


def task_show(sc: Scenario) -> Report:
    if "table" not in sc.data:
        raise ScenarioError("task 'show' needs a table")
    try:
        t = table_from_dict(sc.data["table"])
    except (KeyError, ValueError, ZeroDivisionError) as exc:
        raise ScenarioError(f"malformed table: {exc}") from exc
    return Report("show", values={"entropy": entropy(t)}, tables={"joint": t})


TASKS: dict[str, Callable[[Scenario], Report]] = {
    "pir": task_pir,
    "symmetric-pir": task_symmetric_pir,
    "pir-compare": task_pir_compare,
    "infer-direction": task_infer_direction,
    "maxent": task_maxent,
    "causal-maxent": task_causal_maxent,
    "causal-maxent-dag": task_causal_maxent_dag,
    "order-sensitivity": task_order_sensitivity,
    "sequential-vs-uniform": task_sequential_vs_uniform,
    "census": task_census,
    "igci": task_igci,
    "show": task_show,
}


def run_scenario(data: dict, overrides: dict | None = None) -> Report:
    sc = build_scenario(data, overrides)
    if sc.name not in TASKS:
        raise ScenarioError(f"unknown task {sc.name!r}")
    return TASKS[sc.name](sc)


# --- rendering -----------------------------------------------------------------

def _display(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return format(float(v), f".{DISPLAY_DIGITS}g")
    return str(v)


def _jsonable(v):
    if isinstance(v, Fraction):
        return str(v)
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else str(v)
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


def report_to_dict(rep: Report) -> dict:
    return {"task": rep.task, "status": rep.status, "message": rep.message, "exit_code": rep.exit_code,
            "values": _jsonable(rep.values),
            "tables": {k: table_to_dict(t) for k, t in rep.tables.items()}}


def render_json(rep: Report) -> str:
    # floats keep their shortest round-trip repr so tables re-ingest exactly
    return json.dumps(report_to_dict(rep), sort_keys=True, indent=2) + "\n"


def _flat_values(values: dict, prefix: str = "") -> list[tuple[str, str]]:
    out = []
    for k, v in values.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict) and v:
            out.extend(_flat_values(v, key + "."))
        elif isinstance(v, (list, tuple)) and v and isinstance(v[0], dict):
            for i, item in enumerate(v, 1):
                out.extend(_flat_values(item, f"{key}[{i}]."))
        elif isinstance(v, (list, tuple)):
            out.append((key, "[" + ", ".join(_display(x) for x in v) + "]"))
        else:
            out.append((key, _display(v)))
    return out


def _table_rows(t: ProbTable) -> list[list[str]]:
    return [[_display(v) for v in p] + [_display(w)] for p, w in t.items()]


def render_table(rep: Report) -> str:
    lines = [f"task: {rep.task}", f"status: {rep.status}"]
    if rep.message and rep.message != rep.status:
        lines.append(f"message: {rep.message}")
    for k, v in _flat_values(rep.values):
        lines.append(f"{k}: {v}")
    for name, t in rep.tables.items():
        header = list(t.domain.names) + ["P"]
        rows = _table_rows(t)
        widths = [max(len(r[i]) for r in rows + [header]) for i in range(len(header))]
        lines.append("")
        lines.append(f"[{name}]{' (exact)' if t.exact else ''}")
        lines.append("  ".join(h.ljust(w) for h, w in zip(header, widths)).rstrip())
        for r in rows:
            lines.append("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip())
    return "\n".join(lines) + "\n"


def render_csv(rep: Report) -> str:
    """One row per domain point of the primary table; key/value rows when there is no table."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    t = rep.primary()
    if t is None:
        w.writerow(["key", "value"])
        w.writerows([("status", rep.status)] + _flat_values(rep.values))
    else:
        w.writerow(list(t.domain.names) + ["probability"])
        w.writerows(_table_rows(t))
    return buf.getvalue()


RENDERERS = {"json": render_json, "table": render_table, "csv": render_csv}


# --- entry point ------------------------------------------------------------------

def _error(code: str, message: str, fmt: str) -> None:
    if fmt == "json":
        sys.stderr.write(json.dumps({"error": {"code": code, "message": message}}, sort_keys=True) + "\n")
    else:
        sys.stderr.write(f"error [{code}]: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="causalpir", description="Causal and symmetric insufficient-reason priors, "
                                "sequential maximum entropy, counting checks and slope-based direction scores.")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a scenario file or bundled fixture")
    r.add_argument("scenario", help="path to a scenario JSON file, or a fixture name from list-examples")
    r.add_argument("--task", choices=sorted(TASKS))
    r.add_argument("--cause", help="cause variable (comma-separated for several)")
    r.add_argument("--order", help="comma-separated node order for DAG fits")
    r.add_argument("--feasibility-scope", choices=["general", "markov"])
    r.add_argument("--epsilon", type=float, help="tolerance applied to every moment constraint")
    r.add_argument("--grid", type=int, help="grid size for igci")
    r.add_argument("--pen-width", type=float, help="pen half-width in grid units for igci")
    r.add_argument("--format", choices=sorted(RENDERERS), default="table")
    r.add_argument("--seed", type=int, help="seed for multi-start searches")
    lst = sub.add_parser("list-examples", help="list bundled fixtures")
    lst.add_argument("--format", choices=["table", "json"], default="table")
    return p


def _overrides(args) -> dict:
    return {"name": args.task, "cause": args.cause,
            "order": [s.strip() for s in args.order.split(",")] if args.order else None,
            "feasibility_scope": args.feasibility_scope, "epsilon": args.epsilon, "grid": args.grid,
            "pen_width": args.pen_width, "seed": args.seed}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if args.command == "list-examples":
        cat = list_examples()
        if args.format == "json":
            sys.stdout.write(json.dumps(cat, sort_keys=True, indent=2) + "\n")
        else:
            width = max(len(c["name"]) for c in cat)
            for c in cat:
                sys.stdout.write(f"{c['name'].ljust(width)}  {c['task']:<22}  {c['description']}\n")
        return EXIT_OK
    try:
        data = load_scenario(args.scenario)
        rep = run_scenario(data, _overrides(args))
    except SizeCapError as exc:
        _error("size-cap", str(exc), args.format)
        return EXIT_SIZE_CAP
    except (DomainError, KeyError, TypeError, ValueError) as exc:
        _error("validation", str(exc), args.format)
        return EXIT_VALIDATION
    sys.stdout.write(RENDERERS[args.format](rep))
    return rep.exit_code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
