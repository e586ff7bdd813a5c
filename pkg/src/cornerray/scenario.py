"""Scenario files: chart, initial conditions, trace config, and the
declared constants the verification suites hold rays to.

Scenarios are YAML documents; the chart is validated at load time, before
any trace runs.  Malformed YAML surfaces with the parser's line/column
mark; semantic problems name the offending key.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
import yaml

from .errors import ScenarioError
from .geometry import CompressedPoint, CotangentPoint, make_chart
from .hamiltonian import IntegratorConfig
from .symbols import CommutantParams
from .tracer import TraceConfig

__all__ = ["Scenario", "load_scenario", "loads_scenario"]


@dataclass
class Scenario:
    name: str
    chart: object
    points: list
    family_spec: dict = None
    trace_cfg: TraceConfig = None
    commutant_hyp: CommutantParams = None
    commutant_gla: CommutantParams = None
    verify_cfg: dict = field(default_factory=dict)
    source_path: str = ""

    def family_points(self):
        """Expand the family generator: center plus a perturbation grid,
        each member rescaled in the fiber onto the characteristic set."""
        spec = self.family_spec
        if not spec:
            return []
        center = _parse_point(spec["center"], self.chart, "family.center")
        axes = []
        for p in spec.get("perturb", []):
            offs = p.get("offsets")
            if offs is None:
                offs = np.linspace(float(p["min"]), float(p["max"]),
                                   int(p["count"]))
            axes.append((p["coord"], [float(v) for v in offs]))
        out = []
        for combo in itertools.product(*[offs for _, offs in axes]):
            q = _perturb(center, [(name, off) for (name, _), off
                                  in zip(axes, combo)])
            out.append(_project_to_char(self.chart, q))
        return out


def _perturb(q, pairs):
    x = np.array(q.x)
    y = np.array(q.y)
    xi = np.array(q.xi)
    zeta = np.array(q.zeta)
    t, tau = q.t, q.tau
    for name, off in pairs:
        if name == "t":
            t += off
        elif name == "tau":
            tau += off
        elif name.startswith("xi"):
            xi[int(name[2:]) - 1] += off
        elif name.startswith("zeta"):
            zeta[int(name[4:]) - 1] += off
        elif name.startswith("x"):
            x[int(name[1:]) - 1] += off
        elif name.startswith("y"):
            y[int(name[1:]) - 1] += off
        else:
            raise ScenarioError(f"unknown perturbation coordinate {name!r}")
    return CotangentPoint(x, y, t, xi, zeta, tau)


def _project_to_char(chart, q):
    A, B, C = chart.coeffs.evaluate(q.x, q.y)
    g = float(q.xi @ A @ q.xi + 2.0 * (q.xi @ C @ q.zeta)
              + q.zeta @ B @ q.zeta)
    if g <= 0:
        raise ScenarioError("family member has vanishing spatial fiber; "
                            "cannot project onto the characteristic set")
    rho = abs(q.tau) / np.sqrt(g)
    return CotangentPoint(q.x, q.y, q.t, rho * q.xi, rho * q.zeta, q.tau)


def _req(d, key, where):
    if key not in d:
        raise ScenarioError(f"missing key {key!r} in {where}")
    return d[key]


def _parse_point(doc, chart, where):
    try:
        return CotangentPoint(
            np.asarray(_req(doc, "x", where), dtype=float).reshape(chart.k),
            np.asarray(_req(doc, "y", where), dtype=float).reshape(chart.l),
            float(_req(doc, "t", where)),
            np.asarray(_req(doc, "xi", where), dtype=float).reshape(chart.k),
            np.asarray(_req(doc, "zeta", where), dtype=float).reshape(chart.l),
            float(_req(doc, "tau", where)),
        )
    except (ValueError, TypeError) as e:
        raise ScenarioError(f"bad point in {where}: {e}") from e


def _parse_commutant(doc, chart, glancing, where):
    y0 = np.asarray(doc.get("y0", [0.0] * chart.l), dtype=float).reshape(chart.l)
    t0 = float(doc.get("t0", 0.0))
    tau0 = float(doc.get("tau0", 1.0))
    zhat0 = np.asarray(doc.get("zeta_hat0", [0.0] * chart.l),
                       dtype=float).reshape(chart.l)
    q0 = CompressedPoint(frozenset(range(chart.k)), np.zeros(chart.k), y0,
                         t0, np.zeros(chart.k), zhat0 * tau0, tau0,
                         chart_key=chart.key)
    try:
        return CommutantParams(
            q0=q0,
            delta=float(_req(doc, "delta", where)),
            epsilon=float(_req(doc, "epsilon", where)),
            A0=float(doc.get("A0", 2.0)),
            c1=float(doc.get("c1", 0.05)),
            glancing=glancing,
        )
    except ValueError as e:
        raise ScenarioError(f"bad commutant parameters in {where}: {e}") from e


def loads_scenario(text, name="<string>", path=""):
    doc = yaml.safe_load(text)
    if not isinstance(doc, dict):
        raise ScenarioError("scenario document must be a mapping")
    cdoc = _req(doc, "chart", "scenario")
    k = int(_req(cdoc, "k", "chart"))
    l = int(_req(cdoc, "l", "chart"))
    chart = make_chart(
        k, l,
        np.asarray(cdoc.get("x_max", []), dtype=float).reshape(k),
        np.asarray(cdoc.get("y_min", []), dtype=float).reshape(l),
        np.asarray(cdoc.get("y_max", []), dtype=float).reshape(l),
        float(_req(cdoc, "t_min", "chart")),
        float(_req(cdoc, "t_max", "chart")),
        A=cdoc.get("A", []),
        B=cdoc.get("B", []),
        C=cdoc.get("C", [[] for _ in range(k)]),
    )

    idoc = doc.get("initial", {})
    points = [_parse_point(p, chart, f"initial.points[{i}]")
              for i, p in enumerate(idoc.get("points", []))]
    family_spec = idoc.get("family")

    tdoc = doc.get("trace", {})
    icfg = IntegratorConfig(
        rel_tol=float(tdoc.get("rel_tol", 1e-10)),
        abs_tol=float(tdoc.get("abs_tol", 1e-12)),
        max_step=float(tdoc.get("max_step", 0.1)),
        event_tol=float(tdoc.get("event_tol", 1e-10)),
        max_time=float(tdoc.get("max_time", 10.0)),
        p_drift_warn=float(tdoc.get("p_drift_warn", 1e-8)),
    )
    rule = TraceConfig.parse_rule(str(tdoc.get("branch_rule", "specular")))
    tcfg = TraceConfig(
        integrator=icfg,
        max_depth=int(tdoc.get("max_depth", 32)),
        max_leaves=int(tdoc.get("max_leaves", 4096)),
        seed=int(tdoc.get("seed", 0)),
        project_to_char=bool(tdoc.get("project_to_char", False)),
        **rule,
    )

    comm = doc.get("commutant", {}) or {}
    hyp = (_parse_commutant(comm["hyperbolic"], chart, False,
                            "commutant.hyperbolic")
           if "hyperbolic" in comm else None)
    gla = (_parse_commutant(comm["glancing"], chart, True,
                            "commutant.glancing")
           if "glancing" in comm else None)

    return Scenario(
        name=str(doc.get("name", name)),
        chart=chart,
        points=points,
        family_spec=family_spec,
        trace_cfg=tcfg,
        commutant_hyp=hyp,
        commutant_gla=gla,
        verify_cfg=doc.get("verify", {}) or {},
        source_path=path,
    )


def load_scenario(path):
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    try:
        return loads_scenario(text, name=str(path), path=str(path))
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        if mark is not None:
            raise ScenarioError(
                f"{path}:{mark.line + 1}:{mark.column + 1}: {e.problem}"
            ) from e
        raise ScenarioError(f"{path}: {e}") from e
