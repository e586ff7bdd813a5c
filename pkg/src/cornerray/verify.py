"""Property oracles over traced rays and ray families.

Each check is deterministic and side-effect-free and returns a
PropertyReport: the worst-case statistic, where it occurred, and the
tolerance it was held to.  The flat billiard oracle is an independent
closed-form ground truth (axis-aligned unfolding), kept free of any call
into the tracer so that agreement between the two is meaningful.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import hamiltonian
from .errors import (
    EmptyFamily,
    MismatchedIntervals,
    NotAnEvent,
    NotFlat,
)
from .geometry import CotangentPoint, compress, compressed_distance
from .tracer import EventKind

__all__ = [
    "PropertyReport",
    "check_conservation",
    "check_lipschitz",
    "check_one_sided",
    "check_leaves_face",
    "check_uniform_limit",
    "billiard_oracle_flat",
    "FlatWall",
    "FlatRay",
    "path_ray",
]


@dataclass
class PropertyReport:
    name: str
    passed: bool
    statistic: float
    tolerance: float
    ray_id: object = None
    s: float = None
    details: dict = field(default_factory=dict)

    def line(self):
        from .serialize import fmt
        loc_ray = "-" if self.ray_id is None else str(self.ray_id)
        loc_s = "-" if self.s is None else fmt(self.s)
        return (f"{self.name} pass={int(self.passed)} "
                f"stat={fmt(self.statistic)} tol={fmt(self.tolerance)} "
                f"ray={loc_ray} s={loc_s}")


def path_ray(path):
    """Concatenate a root-to-leaf list of rays into one ray view."""
    from .tracer import Ray
    if len(path) == 1:
        return path[0]
    segs, events, warns = [], [], []
    for r in path:
        segs.extend(r.segments)
        events.extend(r.events)
        warns.extend(r.warnings)
    return Ray(segments=segs, events=events, direction=path[0].direction,
               warnings=warns)


def _segment_sample_grid(seg, per_segment=64):
    return np.linspace(seg.s_start, seg.s_end, per_segment)


def check_conservation(chart, ray, tol=1e-8, tol_gliding=None, ray_id=None,
                       per_segment=64):
    """Confinement to the compressed characteristic set along the ray.

    Statistic: max over samples of |p|/tau^2 on interior segments and of
    |tau^2 - zeta.B(0,y) zeta|/tau^2 on gliding segments.  The two kinds
    are also reported separately in details.
    """
    if tol_gliding is None:
        tol_gliding = tol
    worst_int, worst_gli = 0.0, 0.0
    worst_loc = (None, None)
    for seg in ray.segments:
        for s in _segment_sample_grid(seg, per_segment):
            q = seg.point_at(float(s))
            if seg.kind == "interior":
                v = abs(hamiltonian.eval_p_unchecked(
                    chart, q.x, q.y, q.xi, q.zeta, q.tau)) / q.tau ** 2
                if v > worst_int:
                    worst_int, worst_loc = v, (ray_id, float(s))
            else:
                _, B, _ = chart.coeffs.evaluate(np.zeros(chart.k), q.y)
                v = abs(q.tau ** 2 - float(q.zeta @ B @ q.zeta)) / q.tau ** 2
                if v > worst_gli:
                    worst_gli, worst_loc = v, (ray_id, float(s))
    stat = max(worst_int, worst_gli)
    passed = worst_int <= tol and worst_gli <= tol_gliding
    return PropertyReport(
        "conservation", passed, stat, tol, worst_loc[0], worst_loc[1],
        details={"interior": worst_int, "gliding": worst_gli,
                 "tol_gliding": tol_gliding})


_COORD_GROUPS = ("x", "y", "t", "zeta", "tau")


def _coord_value(q, name):
    if name == "x":
        return np.asarray(q.x)
    if name == "y":
        return np.asarray(q.y)
    if name == "t":
        return np.array([q.t])
    if name == "zeta":
        return np.asarray(q.zeta)
    if name == "tau":
        return np.array([q.tau])
    raise KeyError(name)


def _in_box(q, box):
    if not box:
        return True
    if "x_max" in box and q.x.size and float(np.max(q.x)) > box["x_max"]:
        return False
    if "y_abs_max" in box and q.y.size and float(np.max(np.abs(q.y))) > box["y_abs_max"]:
        return False
    if "t_abs_max" in box and abs(q.t) > box["t_abs_max"]:
        return False
    if "zeta_abs_max" in box and q.zeta.size and float(np.max(np.abs(q.zeta))) > box["zeta_abs_max"]:
        return False
    return True


def check_lipschitz(rays, coordinates=("x", "y", "t", "zeta", "tau"),
                    box=None, bound=None, n_grid=256):
    """Empirical uniform Lipschitz quotients of pi-invariant coordinates.

    Quotients are taken over adjacent pairs of a uniform parameter grid on
    each ray (plus the event-straddling pairs the grid contains); the
    all-pairs maximum is bounded by the adjacent maximum along the chain,
    and under grid refinement the statistic converges to sup |df/ds|.
    Rays that leave the declared compact box are dropped; EmptyFamily if
    none remain.
    """
    kept = []
    for ray in rays:
        ss = np.linspace(ray.s_min, ray.s_max, n_grid)
        pts = [ray.sample(float(s)) for s in ss]
        if all(_in_box(q, box) for q in pts):
            kept.append((ray, ss, pts))
    if not kept:
        raise EmptyFamily("no ray stays inside the declared compact box")

    per_coord = {}
    worst = 0.0
    worst_loc = (None, None)
    for name in coordinates:
        q_best = 0.0
        for ridx, (ray, ss, pts) in enumerate(kept):
            vals = np.array([_coord_value(q, name) for q in pts])
            ds = np.diff(ss)
            dv = np.linalg.norm(np.diff(vals, axis=0), axis=1)
            quot = dv / ds
            m = float(np.max(quot)) if len(quot) else 0.0
            if m > q_best:
                q_best = m
            if m > worst:
                worst = m
                worst_loc = (ridx, float(ss[int(np.argmax(quot))]))
        per_coord[name] = q_best
    tol = math.inf if bound is None else bound
    passed = all(np.isfinite(v) for v in per_coord.values()) and worst <= tol
    return PropertyReport("lipschitz", passed, worst, tol,
                          worst_loc[0], worst_loc[1], details=per_coord)


def _f_value_and_hp(chart, name, q):
    """(f(q), H_p f(q)) for the pi-invariant coordinates used by the
    one-sided derivative law."""
    v = hamiltonian.eval_Hp(chart, q)
    if name == "t":
        return q.t, v.dt
    if name == "eta":
        val = hamiltonian.eval_eta(q)
        hp = (-float(np.dot(q.xi, v.dx)) - float(np.dot(q.x, v.dxi))) / abs(q.tau)
        return val, hp
    if name.startswith("y"):
        i = int(name[1:]) - 1
        return float(q.y[i]), float(v.dy[i])
    if name.startswith("zeta"):
        i = int(name[4:]) - 1
        return float(q.zeta[i]), float(v.dzeta[i])
    if name.startswith("x"):
        j = int(name[1:]) - 1
        return float(q.x[j]), float(v.dx[j])
    raise KeyError(f"unknown pi-invariant coordinate {name!r}")


def check_one_sided(chart, ray, event_index, f_name, tol=1e-4,
                    steps=(1e-3, 1e-4), ray_id=None):
    """One-sided derivative law at a reflection: the left/right slopes of
    f along the ray equal H_p f at the stored incoming/outgoing lifts.

    Slopes are one-sided finite differences at the swept steps, Richardson
    extrapolated to kill the O(h) term.
    """
    if event_index >= len(ray.events):
        raise NotAnEvent(f"no event with index {event_index}")
    ev = ray.events[event_index]
    if ev.kind not in (EventKind.REFLECTION, EventKind.CORNER_BRANCH) \
            or ev.lift_in is None:
        raise NotAnEvent(f"event {event_index} is {ev.kind.value}, not a "
                         "reflection with stored lifts")
    s0 = ev.s
    h1, h2 = steps

    def slope(side):
        sign = -1.0 if side == "left" else 1.0
        q0 = ray.sample(s0, side=side)
        f0, _ = _f_value_and_hp(chart, f_name, q0)
        avail = (s0 - ray.s_min) if side == "left" else (ray.s_max - s0)
        hh1, hh2 = h1, h2
        if avail < h1:
            hh1 = avail * 0.5
            hh2 = hh1 / 10.0
        d = []
        for h in (hh1, hh2):
            q = ray.sample(s0 + sign * h, side=side)
            fh, _ = _f_value_and_hp(chart, f_name, q)
            d.append(sign * (fh - f0) / h)
        # Richardson: slope = (h1 d(h2) - h2 d(h1)) / (h1 - h2)
        return (hh1 * d[1] - hh2 * d[0]) / (hh1 - hh2)

    stat = 0.0
    sides = {}
    for side, lift in (("left", ev.lift_in), ("right", ev.lift_out)):
        if lift is None:
            continue
        _, expected = _f_value_and_hp(chart, f_name, lift)
        got = slope(side)
        err = abs(got - expected)
        sides[side] = {"slope": got, "hp": expected, "err": err}
        stat = max(stat, err)
    return PropertyReport(f"one-sided[{f_name}]", stat <= tol, stat, tol,
                          ray_id, s0, details=sides)


def check_leaves_face(chart, ray, window_factor=10.0, event_tol=1e-10,
                      probes=None, ray_id=None):
    """Instant departure from the face after hyperbolic events.

    The window statistic is the largest probed offset (geometric ladder
    1e-6 .. 1e-3, the operational resolution) at which the compressed image
    still lies over the event face, 0.0 when the first probe has already
    left; gliding segments are exempt.  Pass: every window below
    window_factor * event_tol, i.e. zero at probe resolution.
    """
    if probes is None:
        probes = np.geomspace(1e-6, 1e-3, 16)
    worst = 0.0
    worst_s = None
    n_checked = 0
    for ev in ray.events:
        if ev.kind not in (EventKind.REFLECTION, EventKind.CORNER_BRANCH):
            continue
        n_checked += 1
        window = 0.0
        for w in probes:
            s = ev.s + w
            if s > ray.s_max:
                break
            try:
                q = ray.sample(s, side="right")
            except Exception:
                break
            cp = compress(chart, q)
            if set(ev.face) <= set(cp.face):
                window = float(w)
            else:
                break
        if window > worst:
            worst, worst_s = window, ev.s
    tol = window_factor * event_tol
    return PropertyReport("leaves-face", worst <= tol, worst, tol,
                          ray_id, worst_s,
                          details={"events_checked": n_checked})


def check_uniform_limit(chart, family, candidate, delta_conv=1e-3,
                        n_grid=200, conservation_tol=1e-8,
                        gliding_tol=1e-6):
    """Uniform convergence of a ray family to a candidate limit ray.

    statistic1(n): sup over the common interval of the compressed distance
    between member n and the candidate; must be non-increasing in n with
    the final member below delta_conv.  The candidate must itself pass the
    single-ray checks (conservation, leaves-face).
    """
    if not family:
        raise EmptyFamily("empty ray family")
    a = max([candidate.s_min] + [r.s_min for r in family])
    b = min([candidate.s_max] + [r.s_max for r in family])
    if not b > a:
        raise MismatchedIntervals(
            f"family and candidate share no parameter interval "
            f"(intersection [{a}, {b}])")
    ss = np.linspace(a, b, n_grid)
    cand_pts = [compress(chart, candidate.sample(float(s))) for s in ss]
    sups = []
    for ray in family:
        worst = 0.0
        for s, cq in zip(ss, cand_pts):
            q = compress(chart, ray.sample(float(s)))
            worst = max(worst, compressed_distance(q, cq))
        sups.append(worst)
    decreasing = all(sups[i + 1] <= sups[i] * 1.05 + 1e-15
                     for i in range(len(sups) - 1))
    final = sups[-1]
    cons = check_conservation(chart, candidate, tol=conservation_tol,
                              tol_gliding=gliding_tol)
    leaves = check_leaves_face(chart, candidate)
    passed = decreasing and final <= delta_conv and cons.passed and leaves.passed
    return PropertyReport(
        "uniform-limit", passed, final, delta_conv,
        details={"sups": sups, "decreasing": decreasing,
                 "candidate_conservation": cons.statistic,
                 "candidate_leaves_face": leaves.statistic})


# ----------------------------------------------------------------------
# closed-form flat billiard oracle


@dataclass(frozen=True)
class FlatWall:
    """Reflecting hyperplane {x_axis = position}; ``side`` +1 keeps the
    domain above the wall, -1 below."""

    axis: int
    position: float
    side: int = 1


@dataclass
class FlatRay:
    """Closed-form piecewise-affine billiard trajectory."""

    q0: CotangentPoint
    events: list                      # (s, face_axes, q_before, q_after)
    terminal_kind: str                # "DomainExit" | "TimeHorizon"
    terminal_s: float
    terminal_point: CotangentPoint

    def sample(self, s):
        if s < -1e-15 or s > self.terminal_s + 1e-15:
            raise ValueError(f"s={s} outside [0, {self.terminal_s}]")
        q = self.q0
        s_prev = 0.0
        for (se, _axes, _qb, qa) in self.events:
            if s <= se:
                return _advance(q, s - s_prev)
            q, s_prev = qa, se
        return _advance(q, s - s_prev)

    @property
    def n_bounces(self):
        return len(self.events)


def _advance(q, ds):
    return CotangentPoint(q.x - 2.0 * q.xi * ds, q.y - 2.0 * q.zeta * ds,
                          q.t + 2.0 * q.tau * ds, q.xi, q.zeta, q.tau)


def billiard_oracle_flat(chart, q0, walls=None, max_time=None,
                         max_bounces=100_000):
    """Exact billiard trajectory on a flat chart (A = I, B = I, C = 0).

    Default walls are the chart faces x_j = 0; extra axis-aligned walls
    (e.g. the two sides of a strip) are supported for oracle-only tests.
    Reflection times and covectors are computed by per-axis unfolding
    arithmetic; positions move at -2 xi per unit flow parameter and time at
    2 tau.
    """
    A, B, C = chart.coeffs.evaluate(np.zeros(chart.k), np.zeros(chart.l))
    if not (chart.coeffs.is_constant
            and np.allclose(A, np.eye(chart.k), atol=1e-14)
            and np.allclose(B, np.eye(chart.l), atol=1e-14)
            and np.allclose(C, 0.0, atol=1e-14)):
        raise NotFlat("oracle requires A = I, B = I, C = 0 constants")
    if walls is None:
        walls = [FlatWall(j, 0.0, +1) for j in range(chart.k)]
    if max_time is None:
        max_time = math.inf

    q = q0
    s_now = 0.0
    events = []
    tiny = 1e-15

    for _bounce in range(max_bounces):
        # next wall hit
        best = math.inf
        hit_walls = []
        for w in walls:
            v = -2.0 * q.xi[w.axis]
            gap = w.position - q.x[w.axis]
            if v * w.side < 0 and abs(gap) > 0:
                s_hit = gap / v
                if s_hit <= tiny:
                    continue
                if s_hit < best - 1e-12 * max(1.0, best):
                    best, hit_walls = s_hit, [w]
                elif abs(s_hit - best) <= 1e-12 * max(1.0, best):
                    hit_walls.append(w)
        # domain exits
        exit_s = math.inf
        for j in range(chart.k):
            v = -2.0 * q.xi[j]
            if v > 0:
                exit_s = min(exit_s, (chart.x_max[j] - q.x[j]) / v)
        for i in range(chart.l):
            v = -2.0 * q.zeta[i]
            if v > 0:
                exit_s = min(exit_s, (chart.y_max[i] - q.y[i]) / v)
            elif v < 0:
                exit_s = min(exit_s, (chart.y_min[i] - q.y[i]) / v)
        vt = 2.0 * q.tau
        if vt > 0:
            exit_s = min(exit_s, (chart.t_max - q.t) / vt)
        elif vt < 0:
            exit_s = min(exit_s, (chart.t_min - q.t) / vt)

        horizon_s = max_time - s_now
        stop_s = min(exit_s, horizon_s)
        if best >= stop_s:
            kind = "TimeHorizon" if horizon_s <= exit_s else "DomainExit"
            q_end = _advance(q, stop_s)
            return FlatRay(q0, events, kind, s_now + stop_s, q_end)
        q_hit = _advance(q, best)
        xi_new = np.array(q_hit.xi)
        x_snap = np.array(q_hit.x)
        for w in hit_walls:
            xi_new[w.axis] = -xi_new[w.axis]
            x_snap[w.axis] = w.position
        q_hit = CotangentPoint(x_snap, q_hit.y, q_hit.t, q_hit.xi,
                               q_hit.zeta, q_hit.tau)
        q_next = CotangentPoint(x_snap, q_hit.y, q_hit.t, xi_new,
                                q_hit.zeta, q_hit.tau)
        s_now += best
        events.append((s_now, tuple(sorted(w.axis for w in hit_walls)),
                       q_hit, q_next))
        q = q_next
    raise RuntimeError("max_bounces exceeded in the flat oracle")
