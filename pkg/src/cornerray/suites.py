"""Named verification suites over scenarios.

The CLI subcommands ``verify``, ``symbol-check``, and ``oracle`` drive
these; the acceptance tests call them directly so that what ships and
what is tested are the same code paths.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import boundary, symbols, verify
from .errors import CornerRayError
from .geometry import CompressedPoint, CotangentPoint, compress, make_chart
from .hamiltonian import IntegratorConfig
from .scenario import Scenario
from .symbols import GridSpec
from .tracer import EventKind, TraceConfig, trace
from .verify import PropertyReport, billiard_oracle_flat, path_ray

__all__ = [
    "trace_scenario",
    "suite_core",
    "suite_symbols",
    "grazing_family",
    "run_flat_oracle_suite",
    "FlatComparison",
]


def trace_scenario(scn, points=None):
    """Trace every initial point; returns (point, tree) pairs."""
    if points is None:
        points = list(scn.points)
    return [(q, trace(scn.chart, q, scn.trace_cfg)) for q in points]


def _tree_rays(tree):
    return [path_ray(p) for p in tree.paths()]


def grazing_family(scn):
    """Chord rays with impact parameter marching to grazing, plus the
    gliding candidate they should converge to (disc-type scenarios)."""
    g = scn.verify_cfg.get("grazing")
    if not g:
        return None
    chart = scn.chart
    y0 = np.asarray(g.get("y0", [0.0] * chart.l), dtype=float).reshape(chart.l)
    t0 = float(g.get("t0", 0.0))
    sign = float(g.get("sign", 1.0))
    tau0 = 1.0
    span = float(g.get("span", 1.5))
    count = int(g.get("count", 6))
    gap0 = float(g.get("gap0", 6e-3))
    factor = float(g.get("factor", 0.25))

    _, B0, _ = chart.coeffs.evaluate(np.zeros(chart.k), y0)
    zeta_gl = sign * tau0 / np.sqrt(float(B0[0, 0])) if chart.l == 1 else None
    if chart.l != 1 or chart.k != 1:
        raise CornerRayError("grazing family needs a k=1, l=1 chart")
    A0, _, _ = chart.coeffs.evaluate(np.zeros(1), y0)

    icfg = IntegratorConfig(
        rel_tol=scn.trace_cfg.integrator.rel_tol,
        abs_tol=scn.trace_cfg.integrator.abs_tol,
        max_step=min(scn.trace_cfg.integrator.max_step, 0.02),
        event_tol=scn.trace_cfg.integrator.event_tol,
        max_time=span,
        p_drift_warn=scn.trace_cfg.integrator.p_drift_warn,
    )
    tcfg = TraceConfig(integrator=icfg, seed=scn.trace_cfg.seed)

    members = []
    for n in range(count):
        gap = gap0 * factor ** n
        zeta = (1.0 - gap) * zeta_gl
        r2 = tau0 ** 2 - float(zeta ** 2 * B0[0, 0])
        xi = -np.sqrt(r2 / float(A0[0, 0]))
        q = CotangentPoint([0.0], y0, t0, [xi], [zeta], tau0)
        tree = trace(chart, q, tcfg)
        members.append(path_ray(tree.paths()[0]))

    q_gl = CompressedPoint(frozenset({0}), np.zeros(1), y0, t0, np.zeros(1),
                           [zeta_gl], tau0, chart_key=chart.key)
    seg = boundary.glide(chart, q_gl, icfg)
    from .tracer import Ray
    candidate = Ray(segments=[seg], events=[], direction=1)
    return members, candidate


def suite_core(scn):
    """Conservation, leaves-face, one-sided slopes, Lipschitz family, and
    uniform-limit checks as configured by the scenario."""
    chart = scn.chart
    vc = scn.verify_cfg
    reports = []
    tol_int = float(vc.get("conservation_tol", 1e-8))
    tol_gli = float(vc.get("conservation_tol_gliding", 1e-6))

    traced = trace_scenario(scn)
    all_rays = []
    for p_idx, (q, tree) in enumerate(traced):
        for r_idx, ray in enumerate(_tree_rays(tree)):
            rid = f"p{p_idx}/r{r_idx}"
            all_rays.append((rid, ray))
            rep = verify.check_conservation(chart, ray, tol=tol_int,
                                            tol_gliding=tol_gli, ray_id=rid)
            rep.name = f"conservation[{rid}]"
            reports.append(rep)
            rep = verify.check_leaves_face(
                chart, ray, event_tol=scn.trace_cfg.integrator.event_tol,
                ray_id=rid)
            rep.name = f"leaves-face[{rid}]"
            reports.append(rep)

    for f_name in vc.get("one_sided_coords", []):
        tol = float(vc.get("one_sided_tol", 1e-4))
        for rid, ray in all_rays:
            for e_idx, ev in enumerate(ray.events):
                if ev.kind is not EventKind.REFLECTION or ev.lift_out is None:
                    continue
                rep = verify.check_one_sided(chart, ray, e_idx, f_name,
                                             tol=tol, ray_id=rid)
                rep.name = f"one-sided[{f_name}][{rid}#e{e_idx}]"
                reports.append(rep)

    if scn.family_spec:
        fam_points = scn.family_points()
        fam_rays = []
        for q in fam_points:
            tree = trace(chart, q, scn.trace_cfg)
            fam_rays.append(path_ray(tree.paths()[0]))
        rep = verify.check_lipschitz(
            fam_rays,
            coordinates=tuple(vc.get("lipschitz_coords",
                                     ("x", "y", "t", "zeta", "tau"))),
            box=vc.get("box"),
            bound=float(vc["lipschitz_M"]) if "lipschitz_M" in vc else None,
            n_grid=int(vc.get("lipschitz_grid", 256)))
        reports.append(rep)
        rep2 = verify.check_lipschitz(
            fam_rays,
            coordinates=tuple(vc.get("lipschitz_coords",
                                     ("x", "y", "t", "zeta", "tau"))),
            box=vc.get("box"),
            bound=float(vc["lipschitz_M"]) if "lipschitz_M" in vc else None,
            n_grid=4 * int(vc.get("lipschitz_grid", 256)))
        drift = abs(rep2.statistic - rep.statistic) / max(rep.statistic, 1e-300)
        stable = drift <= float(vc.get("lipschitz_stability", 0.05))
        reports.append(PropertyReport(
            "lipschitz-refinement", stable and rep2.passed, drift,
            float(vc.get("lipschitz_stability", 0.05)),
            details={"coarse": rep.statistic, "fine": rep2.statistic}))

    fam = grazing_family(scn)
    if fam is not None:
        members, candidate = fam
        rep = verify.check_uniform_limit(
            chart, members, candidate,
            delta_conv=float(vc.get("delta_conv", 1e-3)),
            conservation_tol=tol_int, gliding_tol=tol_gli)
        reports.append(rep)
    return reports


# ----------------------------------------------------------------------
# symbol suites


def _bracket_basket(k, l, seed=0):
    """Fixed basket of polynomial and trigonometric b-symbols."""
    from . import exprs
    names = exprs.b_var_names(k, l)
    sources = ["sig1", "x1 * sig1", "sig1*sig1 - tau*x1", "x1*x1*sig1 + tau"]
    if l:
        sources += ["zeta1*sig1 + y1*tau", "sin(y1)*sig1 + cos(x1)*zeta1",
                    "exp(x1)*zeta1*zeta1/(1 + sig1*sig1/(tau*tau))"]
    if k >= 2:
        sources += ["sig2*x1 - sig1*x2", "sin(x2)*sig1*sig2"]
    sources += ["t*sig1 + tau*tau/(1+x1*x1)", "sqrt(1 + sig1*sig1)*cos(t)"]
    return [exprs.parse(s, names) for s in sources]


def _bracket_grid(k, l, n, seed=0):
    from .geometry import BCotangentPoint
    rng = np.random.default_rng(seed)
    pts = []
    for _ in range(n):
        pts.append(BCotangentPoint(
            rng.uniform(0.1, 1.0, size=k), rng.uniform(-1.0, 1.0, size=l),
            rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0, size=k),
            rng.uniform(-1.0, 1.0, size=l),
            rng.choice([-1.0, 1.0]) * rng.uniform(0.5, 2.0)))
    return pts


def suite_symbols(scn, n_samples=10_000, n_bracket_points=None, seed=0):
    """Hyperbolic positivity, glancing support facts and estimate, and the
    b-bracket identities for the scenario's commutant parameters."""
    chart = scn.chart
    reports = []
    extra = {}

    if scn.commutant_hyp is not None:
        grid = GridSpec(n_samples=n_samples, seed=seed)
        rep = symbols.hp_phi_lower_bound(chart, scn.commutant_hyp, grid)
        extra["hyperbolic"] = rep
        reports.append(PropertyReport(
            "hyp-commutant-positivity", rep.passed,
            rep.min_hp_phi, rep.required,
            details={"c0": rep.c0, "C1''": rep.C1,
                     "eps_threshold": rep.eps_threshold,
                     "epsilon": rep.epsilon, "n_support": rep.n_support}))

        rep10 = symbols.hp_phi_lower_bound(
            chart,
            type(scn.commutant_hyp)(
                q0=scn.commutant_hyp.q0, delta=scn.commutant_hyp.delta / 10.0,
                epsilon=scn.commutant_hyp.epsilon, A0=scn.commutant_hyp.A0,
                c1=scn.commutant_hyp.c1),
            grid)
        drift = abs(rep10.min_hp_phi - rep.min_hp_phi) / max(abs(rep.min_hp_phi),
                                                             1e-300)
        reports.append(PropertyReport(
            "hyp-commutant-delta-stability",
            rep10.min_hp_phi >= rep.required and drift <= 0.10, drift, 0.10,
            details={"min_at_delta": rep.min_hp_phi,
                     "min_at_delta/10": rep10.min_hp_phi}))

    if scn.commutant_gla is not None:
        params = scn.commutant_gla
        sup = check_glancing_support(chart, params, n_samples=n_samples,
                                     seed=seed)
        reports.append(sup)
        grid = GridSpec(n_samples=n_samples, seed=seed,
                        base_radius=float(
                            scn.verify_cfg.get("glancing_grid_radius", 0.05)))
        grep = symbols.hp_omega_glancing_estimate(chart, params.q0, grid)
        extra["glancing"] = grep
        reports.append(PropertyReport(
            "gla-omega-estimate-stability", grep.passed, grep.stability, 0.15,
            details={"C": grep.C_with, "C_refined": grep.C_refined,
                     "C_without_p_term": grep.C_without,
                     "ablation_violations": grep.ablation_violations}))
        reports.append(PropertyReport(
            "gla-omega-estimate-ablation",
            grep.ablation_violations > 0 and grep.C_without > 2.0 * grep.C_with,
            float(grep.ablation_violations), 1.0,
            details={"C": grep.C_with, "C_without_p_term": grep.C_without}))

    n_pts = n_bracket_points if n_bracket_points is not None else 1000
    basket = _bracket_basket(chart.k, chart.l, seed)
    pts = _bracket_grid(chart.k, chart.l, max(1, n_pts // len(basket)), seed)
    worst = 0.0
    for expr in basket:
        rep = symbols.bracket_identity_report(expr, pts, chart.k, chart.l)
        worst = max(worst, rep.max_discrepancy)
    reports.append(PropertyReport(
        "b-bracket-identities", worst <= 1e-10, worst, 1e-10,
        details={"n_symbols": len(basket),
                 "n_points_per_symbol": len(pts)}))
    return reports, extra


def check_glancing_support(chart, params, n_samples=10_000, seed=0):
    """Support facts of the glancing symbol on random samples:
    a > 0 implies |t - t0| <= 2 delta and omega <= 4 delta^2 eps^2; the
    chi1-derivative band lies in t - t0 in [-delta - eps delta, -delta]."""
    q0 = params.q0
    delta, eps = params.delta, params.epsilon
    ref = symbols.GlidingReference(chart, q0, t_span=max(0.5, 6 * delta))
    rng = np.random.default_rng(seed)
    n = n_samples
    l = chart.l
    r_t = 3.0 * delta
    r_c = 3.0 * delta * eps
    t = q0.t + rng.uniform(-r_t, r_t, size=n)
    ys, zs = ref.at_time(t)
    y = np.stack([ys[i] + rng.uniform(-r_c, r_c, size=n) for i in range(l)],
                 axis=1)
    zeta = np.stack([zs[i] + rng.uniform(-r_c, r_c, size=n) for i in range(l)],
                    axis=1)
    x = rng.uniform(0.0, r_c, size=(n, chart.k))
    xi = rng.uniform(-1.0, 1.0, size=(n, chart.k))
    tau = np.full(n, q0.tau)

    a, om, dt0, chi1_arg = symbols._a_gla_arrays(ref, x, y, t, xi, zeta, tau,
                                                 params)
    in_supp = a > 0.0
    viol_t = np.count_nonzero(in_supp & (np.abs(dt0) > 2.0 * delta + 1e-12))
    viol_om = np.count_nonzero(
        in_supp & (om > 4.0 * delta ** 2 * eps ** 2 * (1.0 + 1e-9) + 1e-15))
    d_chi1 = symbols.chi1_prime(chi1_arg) > 0.0
    viol_band = np.count_nonzero(
        d_chi1 & ((dt0 < -delta - eps * delta - 1e-12) | (dt0 > -delta + 1e-12)))
    violations = int(viol_t + viol_om + viol_band)
    return PropertyReport(
        "gla-support-facts", violations == 0, float(violations), 0.0,
        details={"n_samples": n, "n_in_support": int(np.count_nonzero(in_supp)),
                 "n_in_chi1_band": int(np.count_nonzero(d_chi1)),
                 "viol_t": int(viol_t), "viol_omega": int(viol_om),
                 "viol_band": int(viol_band)})


# ----------------------------------------------------------------------
# flat oracle comparisons


@dataclass
class FlatComparison:
    n_scenarios: int
    total_bounces: int
    max_dev_s: float
    max_dev_cov: float
    mismatches: int
    runtime_s: float = 0.0
    details: list = field(default_factory=list)


def _random_flat_scenario(rng):
    k = int(rng.integers(1, 3))
    l = int(rng.integers(0, 2))
    x_max = rng.uniform(1.5, 3.0, size=k)
    chart = make_chart(
        k, l, x_max, [-50.0] * l, [50.0] * l, -100.0, 100.0,
        A=[["1" if i == j else "0" for j in range(k)] for i in range(k)],
        B=[["1" if i == j else "0" for j in range(l)] for i in range(l)],
        C=[["0" for _ in range(l)] for _ in range(k)],
        n_validation_samples=200)
    x0 = rng.uniform(0.4, x_max - 0.2)
    y0 = rng.uniform(-2.0, 2.0, size=l)
    xi = rng.uniform(0.3, 1.0, size=k)          # toward the walls
    zeta = rng.uniform(-0.7, 0.7, size=l)
    norm = np.sqrt(np.sum(xi ** 2) + np.sum(zeta ** 2))
    q0 = CotangentPoint(x0, y0, 0.0, xi / norm, zeta / norm, 1.0)
    return chart, q0


def run_flat_oracle_suite(n_scenarios=50, seed=0, tol=1e-9, max_time=40.0):
    """Randomized flat scenarios: closed-form billiard oracle vs trace.

    Compares every reflection (parameter, face, post-event covector) and
    the terminal state; also counts the bounce events covered.
    """
    import time
    t_start = time.perf_counter()
    rng = np.random.default_rng(seed)
    total_bounces = 0
    max_dev_s = 0.0
    max_dev_cov = 0.0
    mismatches = 0
    details = []
    icfg = IntegratorConfig(max_time=max_time, max_step=0.5)
    tcfg = TraceConfig(integrator=icfg)
    for idx in range(n_scenarios):
        chart, q0 = _random_flat_scenario(rng)
        oracle = billiard_oracle_flat(chart, q0, max_time=max_time)
        tree = trace(chart, q0, tcfg)
        ray = path_ray(tree.paths()[0])
        refl = [ev for ev in ray.events
                if ev.kind in (EventKind.REFLECTION, EventKind.CORNER_BRANCH)]
        ok = len(refl) == len(oracle.events)
        dev_s = dev_cov = 0.0
        if ok:
            for ev, (s_o, axes_o, _qb, qa) in zip(refl, oracle.events):
                dev_s = max(dev_s, abs(ev.s - s_o))
                ok &= tuple(sorted(ev.face)) == axes_o
                if ev.lift_out is not None:
                    dev_cov = max(
                        dev_cov,
                        float(np.max(np.abs(ev.lift_out.xi - qa.xi))),
                        float(np.max(np.abs(ev.lift_out.x - qa.x))),
                        abs(ev.lift_out.t - qa.t))
                    if chart.l:
                        dev_cov = max(dev_cov, float(
                            np.max(np.abs(ev.lift_out.zeta - qa.zeta))))
            term = ray.events[-1]
            dev_s = max(dev_s, abs(ray.s_max - oracle.terminal_s))
            kind_map = {"DomainExit": EventKind.DOMAIN_EXIT,
                        "TimeHorizon": EventKind.TIME_HORIZON}
            ok &= term.kind is kind_map[oracle.terminal_kind]
        if not ok or dev_s > tol or dev_cov > tol:
            mismatches += 1
            details.append({"scenario": idx, "ok": ok, "dev_s": dev_s,
                            "dev_cov": dev_cov})
        total_bounces += oracle.n_bounces
        max_dev_s = max(max_dev_s, dev_s)
        max_dev_cov = max(max_dev_cov, dev_cov)
    return FlatComparison(
        n_scenarios=n_scenarios, total_bounces=total_bounces,
        max_dev_s=max_dev_s, max_dev_cov=max_dev_cov, mismatches=mismatches,
        runtime_s=time.perf_counter() - t_start, details=details)
