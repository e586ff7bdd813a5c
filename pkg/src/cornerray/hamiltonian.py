"""Principal symbol, Hamilton vector field, and the interior flow.

The principal symbol of the wave operator in chart coordinates is

    p = tau^2 - (xi.A(x,y) xi + 2 xi.C(x,y) zeta + zeta.B(x,y) zeta),

homogeneous of degree 2 in the fiber.  Its Hamilton vector field is
2 tau d_t minus the Hamilton field of the spatial quadratic form, which in
components reads

    dx/ds      = -2 (A xi + C zeta)
    dy/ds      = -2 (B zeta + C^T xi)
    dt/ds      = 2 tau
    dxi_k/ds   = xi.(d_{x_k}A) xi + 2 xi.(d_{x_k}C) zeta + zeta.(d_{x_k}B) zeta
    dzeta_k/ds = xi.(d_{y_k}A) xi + 2 xi.(d_{y_k}C) zeta + zeta.(d_{y_k}B) zeta
    dtau/ds    = 0.

Coefficient derivatives come from a dual-number sweep, exact to roundoff.
Interior bicharacteristics are integrated with an adaptive embedded
Runge-Kutta 5(4) pair with dense output; boundary hits x_j = 0 are located
by root-finding on the dense output and merged into corner hits when
several components vanish together.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from .errors import DegenerateVelocity, OutOfRange, StepFailure
from .geometry import CotangentPoint

__all__ = [
    "PhaseVelocity",
    "IntegratorConfig",
    "Terminal",
    "InteriorSegment",
    "eval_p",
    "eval_Hp",
    "eval_eta",
    "eval_Hp_eta_boundary",
    "flow_interior",
    "hp_components_batch",
    "p_batch",
]


@dataclass(frozen=True)
class PhaseVelocity:
    """Value of H_p at a point; dtau is identically zero."""

    dx: np.ndarray
    dy: np.ndarray
    dt: float
    dxi: np.ndarray
    dzeta: np.ndarray
    dtau: float = 0.0

    def pair_with(self, grad):
        """Pair with a phase-space gradient (gx, gy, gt, gxi, gzeta, gtau)."""
        gx, gy, gt, gxi, gzeta, gtau = grad
        return float(
            np.dot(gx, self.dx) + np.dot(gy, self.dy) + gt * self.dt
            + np.dot(gxi, self.dxi) + np.dot(gzeta, self.dzeta)
            + gtau * self.dtau
        )

    @property
    def norm(self):
        return float(np.sqrt(
            np.sum(self.dx ** 2) + np.sum(self.dy ** 2) + self.dt ** 2
            + np.sum(self.dxi ** 2) + np.sum(self.dzeta ** 2)
        ))


@dataclass(frozen=True)
class IntegratorConfig:
    rel_tol: float = 1e-10
    abs_tol: float = 1e-12
    max_step: float = 0.1
    event_tol: float = 1e-10
    max_time: float = 10.0
    p_drift_warn: float = 1e-8

    def __post_init__(self):
        for name in ("rel_tol", "abs_tol", "max_step", "event_tol", "max_time",
                     "p_drift_warn"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


class Terminal(enum.Enum):
    BOUNDARY_HIT = "BoundaryHit"
    TIME_HORIZON = "TimeHorizon"
    DOMAIN_EXIT = "DomainExit"


def _quad(A, B, C, xi, zeta):
    return float(xi @ A @ xi + 2.0 * (xi @ C @ zeta) + zeta @ B @ zeta)


def eval_p(chart, q):
    """Principal symbol at q (base point must lie in the chart box)."""
    chart.require_inside(q.x, q.y, q.t)
    A, B, C = chart.coeffs.evaluate(q.x, q.y)
    return q.tau ** 2 - _quad(A, B, C, q.xi, q.zeta)


def eval_p_unchecked(chart, x, y, xi, zeta, tau):
    A, B, C = chart.coeffs.evaluate(np.asarray(x, float), np.asarray(y, float))
    return tau ** 2 - _quad(A, B, C, np.asarray(xi, float), np.asarray(zeta, float))


def _hp_unchecked(chart, x, y, xi, zeta, tau):
    k, l = chart.k, chart.l
    A, B, C, dA, dB, dC = chart.coeffs.evaluate_with_grads(x, y)
    dx = -2.0 * (A @ xi + C @ zeta)
    dy = -2.0 * (B @ zeta + C.T @ xi)
    dfib = np.empty(k + l)
    for m in range(k + l):
        dfib[m] = (xi @ dA[m] @ xi + 2.0 * (xi @ dC[m] @ zeta)
                   + zeta @ dB[m] @ zeta)
    return dx, dy, 2.0 * tau, dfib[:k], dfib[k:]


def eval_Hp(chart, q):
    """Hamilton vector field of p at q as a PhaseVelocity."""
    chart.require_inside(q.x, q.y, q.t)
    dx, dy, dt, dxi, dzeta = _hp_unchecked(chart, q.x, q.y, q.xi, q.zeta, q.tau)
    return PhaseVelocity(dx, dy, dt, dxi, dzeta, 0.0)


def eval_eta(q):
    """The escape variable eta = -(x.xi)/|tau| = -(sum sigma_j)/|tau|.

    Accepts cotangent, b-cotangent, or compressed points; over a face the
    discarded xi components carry sigma_j = 0, so eta is pi-invariant.
    """
    if hasattr(q, "sigma"):
        s = float(np.sum(q.sigma))
    else:
        s = float(np.dot(q.x, q.xi))
    return -s / abs(q.tau)


def eval_Hp_eta_boundary(chart, q):
    """Common value of H_p eta over all characteristic lifts at x = 0.

    At the corner (where C vanishes) |tau| H_p eta = 2 xi.A xi, and on the
    characteristic set that equals 2 tau^2 - 2 zeta.B(0,y) zeta.
    """
    if len(q.face) != chart.k:
        raise ValueError("point must lie over the full corner x = 0")
    _, B, _ = chart.coeffs.evaluate(np.zeros(chart.k), q.y)
    return (2.0 * q.tau ** 2 - 2.0 * float(q.zeta @ B @ q.zeta)) / abs(q.tau)


def hp_components_batch(chart, x, y, xi, zeta, tau):
    """Vectorized H_p components at n points.

    Inputs have shape (n, k), (n, l), (n, k), (n, l), (n,); outputs match.
    """
    A, B, C, dA, dB, dC = chart.coeffs.evaluate_with_grads(x, y)
    dx = -2.0 * (np.einsum("nij,nj->ni", A, xi) + np.einsum("nij,nj->ni", C, zeta))
    dy = -2.0 * (np.einsum("nij,nj->ni", B, zeta) + np.einsum("nji,nj->ni", C, xi))
    dt = 2.0 * tau
    k = chart.k
    dfib = (np.einsum("mnij,ni,nj->mn", dA, xi, xi)
            + 2.0 * np.einsum("mnij,ni,nj->mn", dC, xi, zeta)
            + np.einsum("mnij,ni,nj->mn", dB, zeta, zeta))
    return dx, dy, dt, dfib[:k].T, dfib[k:].T


def p_batch(chart, x, y, xi, zeta, tau):
    A, B, C = chart.coeffs.evaluate(x, y)
    g = (np.einsum("ni,nij,nj->n", xi, A, xi)
         + 2.0 * np.einsum("ni,nij,nj->n", xi, C, zeta)
         + np.einsum("ni,nij,nj->n", zeta, B, zeta))
    return tau ** 2 - g


class _ChainedSol:
    """Dense output glued from consecutive solve_ivp solutions."""

    def __init__(self, pieces):
        # pieces: list of (local_start, local_end, OdeSolution with own origin)
        self.pieces = pieces

    def __call__(self, s_local):
        for lo, hi, sol in self.pieces:
            if s_local <= hi + 1e-15:
                return sol(np.clip(s_local, lo, hi) - lo)
        lo, hi, sol = self.pieces[-1]
        return sol(hi - lo)


@dataclass
class InteriorSegment:
    """One interior bicharacteristic arc with dense output.

    ``point_at`` evaluates the dense interpolant anywhere on
    [s_start, s_end] in the global ray parameter; ``terminal`` records why
    the arc stopped and, for boundary hits, the face of vanishing indices.
    """

    s_start: float
    s_end: float
    tau: float
    direction: int
    terminal: Terminal
    k: int
    l: int
    face: frozenset = frozenset()
    samples_s: np.ndarray = None
    sol: object = None
    p_drift: float = 0.0
    warnings: list = field(default_factory=list)
    kind: str = "interior"

    def point_at(self, s):
        lo, hi = self.s_start, self.s_end
        if not (lo - 1e-12 <= s <= hi + 1e-12):
            raise OutOfRange(f"s={s} outside segment [{lo}, {hi}]")
        s_local = np.clip(s - lo, 0.0, hi - lo)
        state = self.sol(s_local)
        clamp = self.terminal is Terminal.BOUNDARY_HIT and s >= hi - 1e-15
        return self._state_to_point(state, clamp_face=clamp)

    def _state_to_point(self, state, clamp_face=False):
        k, l = self.k, self.l
        x = np.array(state[:k])
        y = np.array(state[k:k + l])
        t = float(state[k + l])
        xi = np.array(state[k + l + 1:2 * k + l + 1])
        zeta = np.array(state[2 * k + l + 1:])
        x[x < 0] = 0.0
        if clamp_face:
            for j in self.face:
                x[j] = 0.0
        return CotangentPoint(x, y, t, xi, zeta, self.tau)

    @property
    def start_point(self):
        return self.point_at(self.s_start)

    @property
    def end_point(self):
        return self.point_at(self.s_end)


def _pack(q):
    return np.concatenate([q.x, q.y, [q.t], q.xi, q.zeta])


def _make_events(chart, include_walls=True):
    k, l = chart.k, chart.l
    events, kinds = [], []

    def wall(j):
        def g(_s, state):
            return state[j]
        g.terminal = True
        g.direction = -1.0
        return g

    def crossing(idx, bound, direction_):
        def g(_s, state):
            return state[idx] - bound
        g.terminal = True
        g.direction = direction_
        return g

    if include_walls:
        for j in range(k):
            events.append(wall(j))
            kinds.append("wall")
    for j in range(k):
        events.append(crossing(j, chart.x_max[j], +1.0))
        kinds.append("exit")
    for i in range(l):
        events.append(crossing(k + i, chart.y_min[i], -1.0))
        kinds.append("exit")
        events.append(crossing(k + i, chart.y_max[i], +1.0))
        kinds.append("exit")
    events.append(crossing(k + l, chart.t_min, -1.0))
    kinds.append("exit")
    events.append(crossing(k + l, chart.t_max, +1.0))
    kinds.append("exit")
    return events, kinds


def flow_interior(chart, q0, cfg, direction=1, s_offset=0.0, s_budget=None,
                  tangent_launch=0.0):
    """Integrate the bicharacteristic through q0 until a boundary hit,
    the flow-parameter horizon, or a domain exit.

    ``direction`` +1 follows H_p, -1 follows -H_p; the returned segment is
    parameterized by a global ray parameter starting at ``s_offset`` and
    increasing either way.  A positive ``tangent_launch`` integrates that
    much parameter without watching the walls first, which lets tangent
    (diffractive) starts with x_j = 0, dx_j = 0, d2x_j > 0 leave the face
    without tripping the event detector on roundoff.
    """
    k, l = chart.k, chart.l
    sgn = 1.0 if direction >= 0 else -1.0
    v0 = eval_Hp(chart, q0)
    if v0.norm < 1e-14:
        raise DegenerateVelocity("H_p is numerically zero at the start point")

    def rhs(_s, state):
        x = state[:k]
        y = state[k:k + l]
        xi = state[k + l + 1:2 * k + l + 1]
        zeta = state[2 * k + l + 1:]
        dx, dy, dt, dxi, dzeta = _hp_unchecked(chart, x, y, xi, zeta, q0.tau)
        return sgn * np.concatenate([dx, dy, [dt], dxi, dzeta])

    horizon = cfg.max_time if s_budget is None else min(cfg.max_time, s_budget)
    pieces = []
    state0 = _pack(q0)
    launched = 0.0

    if tangent_launch > 0.0 and horizon > tangent_launch:
        ev, kinds = _make_events(chart, include_walls=False)
        solA = solve_ivp(rhs, (0.0, tangent_launch), state0, method="RK45",
                         rtol=cfg.rel_tol, atol=cfg.abs_tol,
                         max_step=cfg.max_step, dense_output=True, events=ev)
        if solA.status == -1:
            raise StepFailure(f"integrator failed: {solA.message}")
        if solA.status == 1:  # exited the domain during the launch
            s_exit = min(float(se[0]) for se in solA.t_events if len(se))
            seg = InteriorSegment(
                s_start=s_offset, s_end=s_offset + s_exit, tau=q0.tau,
                direction=direction, terminal=Terminal.DOMAIN_EXIT, k=k, l=l,
                samples_s=s_offset + solA.t[solA.t <= s_exit + 1e-15],
                sol=_ChainedSol([(0.0, s_exit, solA.sol)]),
            )
            _attach_drift(chart, seg, q0, cfg, s_exit)
            return seg
        pieces.append((0.0, tangent_launch, solA.sol))
        state0 = solA.sol(tangent_launch)
        state0 = np.asarray(state0, float).copy()
        state0[:k] = np.clip(state0[:k], 0.0, None)
        launched = tangent_launch

    events, kinds = _make_events(chart, include_walls=True)
    sol = solve_ivp(rhs, (0.0, horizon - launched), state0, method="RK45",
                    rtol=cfg.rel_tol, atol=cfg.abs_tol, max_step=cfg.max_step,
                    dense_output=True, events=events)
    if sol.status == -1:
        raise StepFailure(f"integrator failed: {sol.message}")

    hit_s = None
    hit_kind = None
    for idx, se in enumerate(sol.t_events):
        if len(se) == 0:
            continue
        s_first = float(se[0])
        if s_first <= 1e-14 and sol.status != 1:
            continue  # grazed the locus at the start point without stopping
        if hit_s is None or s_first < hit_s:
            hit_s, hit_kind = s_first, kinds[idx]

    if hit_s is None:
        terminal, face, s_end_local = Terminal.TIME_HORIZON, frozenset(), horizon
        hit_local = horizon - launched
    elif hit_kind == "wall":
        state = sol.sol(hit_s)
        face = frozenset(j for j in range(k) if state[j] <= cfg.event_tol)
        terminal, hit_local = Terminal.BOUNDARY_HIT, hit_s
        s_end_local = launched + hit_s
    else:
        terminal, face, hit_local = Terminal.DOMAIN_EXIT, frozenset(), hit_s
        s_end_local = launched + hit_s

    pieces.append((launched, s_end_local, sol.sol))
    steps = sol.t[sol.t <= hit_local + 1e-15] + launched
    if launched > 0.0:
        steps = np.unique(np.concatenate([[0.0], steps]))

    seg = InteriorSegment(
        s_start=s_offset, s_end=s_offset + s_end_local, tau=q0.tau,
        direction=direction, terminal=terminal, face=face, k=k, l=l,
        samples_s=s_offset + np.asarray(steps, float),
        sol=_ChainedSol(pieces),
    )
    _attach_drift(chart, seg, q0, cfg, s_end_local)
    return seg


def _attach_drift(chart, seg, q0, cfg, s_len):
    k, l = chart.k, chart.l
    p0 = eval_p_unchecked(chart, q0.x, q0.y, q0.xi, q0.zeta, q0.tau)
    drift = 0.0
    for s in np.linspace(0.0, s_len, 33):
        st = seg.sol(s)
        drift = max(drift, abs(
            eval_p_unchecked(chart, np.clip(st[:k], 0.0, None), st[k:k + l],
                             st[k + l + 1:2 * k + l + 1],
                             st[2 * k + l + 1:], q0.tau) - p0))
    seg.p_drift = drift
    if drift > cfg.p_drift_warn * max(1.0, q0.tau ** 2):
        seg.warnings.append(
            f"p drifted by {drift:.3e} over the segment "
            f"(warn level {cfg.p_drift_warn:.3e})"
        )
