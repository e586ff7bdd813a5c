"""Boundary-point classification, reflection lifts, and the gliding flow.

A compressed point over a face is elliptic, glancing, or hyperbolic
according to whether the characteristic quadric in the face-normal fiber
variables has no, one, or a sphere's worth of real solutions.  Over the
face S with retained (x_free, xi_free) and zeta frozen, the quadric in the
unknown xi_S completes the square to

    (xi_S - c) . A_SS (xi_S - c) = r2,
    c  = -A_SS^{-1} (A_{S,S^c} xi_free + C_S zeta),
    r2 = tau^2 - g(xi_S = c),

and r2 plays the role of the classification margin; over a full corner
(C(0,y) = 0, no retained xi) it reduces to tau^2 - zeta.B(0,y) zeta.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from .errors import (
    CornerGlancing,
    EllipticFace,
    InteriorPoint,
    NoOutgoingLift,
    NotGlancing,
    NotHyperbolic,
    StepFailure,
)
from .geometry import CompressedPoint, CotangentPoint
from .hamiltonian import IntegratorConfig, Terminal, eval_Hp

__all__ = [
    "Kind",
    "Classification",
    "GlancingKindEnum",
    "GlancingKind",
    "LiftSet",
    "GlidingSegment",
    "classify",
    "lift_set",
    "reflect",
    "glancing_type",
    "glide",
    "CLASSIFY_THETA",
    "GLANCING_THETA",
]

CLASSIFY_THETA = 1e-6   # glancing band half-width, relative to tau^2
GLANCING_THETA = 1e-8   # gliding/diffractive sign threshold on d2x/ds2


class Kind(enum.Enum):
    ELLIPTIC = "Elliptic"
    GLANCING = "Glancing"
    HYPERBOLIC = "Hyperbolic"


@dataclass(frozen=True)
class Classification:
    kind: Kind
    margin: float
    tolerance: float


class GlancingKindEnum(enum.Enum):
    GLIDING = "Gliding"
    DIFFRACTIVE = "Diffractive"
    UNDETERMINED = "Undetermined"


@dataclass(frozen=True)
class GlancingKind:
    kind: GlancingKindEnum
    second_derivative: float


@dataclass(frozen=True)
class LiftSet:
    face: frozenset
    radius2: float
    quadric: np.ndarray        # A restricted to the face-normal block
    center: np.ndarray         # quadric center in the face-normal block
    lifts: tuple               # full-length xi vectors on the quadric


def _quadric_data(chart, q):
    """(S, F, A, B, C, A_SS, center, r2) of the lift quadric over q's face."""
    if q.is_interior:
        raise InteriorPoint("point has an empty face")
    S = sorted(q.face)
    F = [j for j in range(chart.k) if j not in q.face]
    A, B, C = chart.coeffs.evaluate(q.x, q.y)
    A_SS = A[np.ix_(S, S)]
    xi_f = q.xi[F]
    zeta = q.zeta
    u = A[np.ix_(S, F)] @ xi_f
    if chart.l:
        u = u + C[S, :] @ zeta
    const = float(xi_f @ A[np.ix_(F, F)] @ xi_f)
    if chart.l:
        const += 2.0 * float(xi_f @ C[F, :] @ zeta) + float(zeta @ B @ zeta)
    sol = np.linalg.solve(A_SS, u)
    center = -sol
    r2 = q.tau ** 2 - const + float(u @ sol)
    return S, F, A, B, C, A_SS, center, r2


def classify(chart, q, theta=CLASSIFY_THETA):
    """Elliptic / glancing / hyperbolic with a signed margin.

    The margin is the effective normal radius squared; the glancing band is
    |margin| <= theta * tau^2 because event-located hits carry numeric
    error, so exact equality is not a computable notion.
    """
    *_, r2 = _quadric_data(chart, q)
    tol = theta * q.tau ** 2
    if r2 < -tol:
        kind = Kind.ELLIPTIC
    elif r2 > tol:
        kind = Kind.HYPERBOLIC
    else:
        kind = Kind.GLANCING
    return Classification(kind, r2, tol)


def _sphere_points(dim, n, seed):
    """Deterministic near-uniform points on the unit sphere in R^dim."""
    if dim == 1:
        return np.array([[1.0], [-1.0]])
    if dim == 2:
        golden = (math.sqrt(5.0) - 1.0) / 2.0
        offset = (seed % 997) / 997.0
        ang = 2.0 * math.pi * ((np.arange(n) * golden + offset) % 1.0)
        return np.stack([np.cos(ang), np.sin(ang)], axis=1)
    if dim == 3:
        golden = (1.0 + math.sqrt(5.0)) / 2.0
        i = np.arange(n) + 0.5 + (seed % 997) / 997.0
        phi = np.arccos(1.0 - 2.0 * i / n)
        theta = 2.0 * math.pi * i / golden
        return np.stack([np.cos(theta) * np.sin(phi),
                         np.sin(theta) * np.sin(phi),
                         np.cos(phi)], axis=1)
    rng = np.random.default_rng(seed)
    v = rng.standard_normal((n, dim))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def lift_set(chart, q, n_samples=64, seed=0, include_xi=None,
             theta=CLASSIFY_THETA):
    """Representative characteristic lifts over a boundary point.

    Codimension 1 gives the exact pair of roots (a single root at glancing
    points); higher codimension samples the lift ellipsoid through a
    Cholesky map of deterministic sphere points.  ``include_xi`` (a full
    xi vector, e.g. of an arriving ray) is appended when given.
    """
    S, F, A, B, C, A_SS, center, r2 = _quadric_data(chart, q)
    tol = theta * q.tau ** 2
    if r2 < -tol:
        raise EllipticFace(f"no real lifts: margin {r2:g} < 0")
    r2c = max(r2, 0.0)
    k_S = len(S)

    def full(xi_S):
        xi = np.array(q.xi, dtype=float)
        for idx, j in enumerate(S):
            xi[j] = xi_S[idx]
        return xi

    reps = []
    if k_S == 1:
        root = math.sqrt(r2c / A_SS[0, 0])
        reps.append(full(center + root))
        if root > 0.0:
            reps.append(full(center - root))
    else:
        L = np.linalg.cholesky(A_SS)
        dirs = _sphere_points(k_S, n_samples, seed)
        radius = math.sqrt(r2c)
        for d in dirs[:n_samples]:
            xi_S = center + np.linalg.solve(L.T, radius * d)
            reps.append(full(xi_S))
        if radius == 0.0:
            reps = [full(center)]
    if include_xi is not None:
        reps.append(np.asarray(include_xi, dtype=float))
    return LiftSet(q.face, r2, A_SS, center, tuple(reps))


def _leaving_velocities(chart, q, xi, S):
    A, _, C = chart.coeffs.evaluate(q.x, q.y)
    dx = -2.0 * (A @ xi + (C @ q.zeta if chart.l else np.zeros(chart.k)))
    return dx[S]


def reflect(chart, q_in, rule="specular", n_samples=256, seed=0,
            theta=CLASSIFY_THETA):
    """Outgoing continuations of a ray arriving at a hyperbolic face point.

    Every output keeps (x, y, t, zeta, tau) and carries an outgoing xi on
    the lift quadric whose face-normal velocity components are strictly
    positive (the ray leaves the face at once).  Specular reflects xi_S
    through the quadric center, the unique rule that stays on the quadric
    and is an involution; it is the plain sign flip whenever the face is a
    full corner.  BranchAll returns every sampled lift passing the leaving
    filter, deduplicated, and surfaces the corner non-uniqueness.
    """
    from .geometry import compress

    cp = compress(chart, q_in)
    cls = classify(chart, cp, theta)
    if cls.kind is not Kind.HYPERBOLIC:
        raise NotHyperbolic(f"classification is {cls.kind.value} "
                            f"(margin {cls.margin:g})")
    S, F, A, B, C, A_SS, center, r2 = _quadric_data(chart, cp)

    x_out = np.array(q_in.x, dtype=float)
    for j in S:
        x_out[j] = 0.0

    def make_point(xi):
        return CotangentPoint(x_out, q_in.y, q_in.t, xi, q_in.zeta, q_in.tau)

    xi_in_S = q_in.xi[S]
    specular = np.array(q_in.xi, dtype=float)
    spec_S = 2.0 * center - xi_in_S
    for idx, j in enumerate(S):
        specular[j] = spec_S[idx]

    if rule == "specular":
        if np.any(_leaving_velocities(chart, cp, specular, S) <= 0.0):
            raise NoOutgoingLift("specular lift does not leave the face")
        return [make_point(specular)]

    if rule != "all":
        raise ValueError(f"unknown reflection rule {rule!r}")

    lifts = lift_set(chart, cp, n_samples=n_samples, seed=seed,
                     include_xi=q_in.xi, theta=theta)
    candidates = list(lifts.lifts) + [specular]
    out, seen = [], set()
    scale = max(1.0, float(np.max(np.abs(q_in.xi))), float(np.max(np.abs(center))) if len(center) else 1.0)
    for xi in candidates:
        if np.any(_leaving_velocities(chart, cp, xi, S) <= 0.0):
            continue
        key = tuple(np.round(xi / scale, 12))
        if key in seen:
            continue
        seen.add(key)
        out.append(make_point(xi))
    if not out:
        raise NoOutgoingLift("no sampled lift satisfies the leaving condition")
    return out


def _second_derivative_of_face_coord(chart, x, y, xi, zeta, tau, j):
    """d2 x_j / ds2 along the flow: H_p applied to the dx_j component.

    One dual-number sweep supplies the coefficient derivatives in both the
    gradient of v_j = -2(A xi + C zeta)_j and the velocity it is paired with.
    """
    k, l = chart.k, chart.l
    A, B, C, dA, dB, dC = chart.coeffs.evaluate_with_grads(x, y)
    dx = -2.0 * (A @ xi + (C @ zeta if l else np.zeros(k)))
    dy = -2.0 * ((B @ zeta if l else np.zeros(l)) + (C.T @ xi if l else np.zeros(l)))
    dfib = np.empty(k + l)
    for m in range(k + l):
        dfib[m] = (xi @ dA[m] @ xi + 2.0 * (xi @ dC[m] @ zeta if l else 0.0)
                   + (zeta @ dB[m] @ zeta if l else 0.0))
    dxi, dzeta = dfib[:k], dfib[k:]
    # gradient of v_j over (x, y, xi, zeta)
    gx = np.array([-2.0 * (dA[m][j] @ xi + (dC[m][j] @ zeta if l else 0.0))
                   for m in range(k)])
    gy = np.array([-2.0 * (dA[k + m][j] @ xi + (dC[k + m][j] @ zeta if l else 0.0))
                   for m in range(l)])
    gxi = -2.0 * A[j]
    gzeta = -2.0 * C[j] if l else np.zeros(0)
    return float(gx @ dx + (gy @ dy if l else 0.0) + gxi @ dxi
                 + (gzeta @ dzeta if l else 0.0))


def glancing_type(chart, q, theta_g=GLANCING_THETA, theta=CLASSIFY_THETA):
    """Gliding / diffractive dichotomy at a codimension-1 glancing point.

    The sign of d2x/ds2 of the face coordinate along the unique lift
    decides: positive means the tangent ray accelerates into the interior
    (diffractive), negative that the interior flow immediately exits
    (gliding); |.| <= theta_g is Undetermined (flat-wall tangency).
    """
    cls = classify(chart, q, theta)
    if cls.kind is not Kind.GLANCING:
        raise NotGlancing(f"classification is {cls.kind.value}")
    if len(q.face) >= 2:
        raise CornerGlancing("glancing over a face of codimension >= 2")
    S, F, A, B, C, A_SS, center, r2 = _quadric_data(chart, q)
    xi = np.array(q.xi, dtype=float)
    xi[S[0]] = center[0]
    sd = _second_derivative_of_face_coord(chart, q.x, q.y, xi, q.zeta,
                                          q.tau, S[0])
    if sd > theta_g:
        kind = GlancingKindEnum.DIFFRACTIVE
    elif sd < -theta_g:
        kind = GlancingKindEnum.GLIDING
    else:
        kind = GlancingKindEnum.UNDETERMINED
    return GlancingKind(kind, sd)


@dataclass
class GlidingSegment:
    """A gliding arc on a boundary face, integrated with the tangential
    Hamiltonian h(y, zeta) = zeta.B(0,y) zeta under 2 tau d_t - H_h."""

    s_start: float
    s_end: float
    tau: float
    direction: int
    terminal: Terminal
    face: frozenset
    k: int
    l: int
    samples_s: np.ndarray = None
    sol: object = None
    exit_kind: GlancingKind = None
    h_drift: float = 0.0
    warnings: list = field(default_factory=list)
    kind: str = "gliding"

    def point_at(self, s):
        from .errors import OutOfRange
        lo, hi = self.s_start, self.s_end
        if not (lo - 1e-12 <= s <= hi + 1e-12):
            raise OutOfRange(f"s={s} outside segment [{lo}, {hi}]")
        state = self.sol(float(np.clip(s - lo, 0.0, hi - lo)))
        y = np.array(state[:self.l])
        t = float(state[self.l])
        zeta = np.array(state[self.l + 1:])
        return CotangentPoint(np.zeros(self.k), y, t, np.zeros(self.k),
                              zeta, self.tau)

    @property
    def start_point(self):
        return self.point_at(self.s_start)

    @property
    def end_point(self):
        return self.point_at(self.s_end)


def glide(chart, q0, cfg=None, direction=1, s_offset=0.0, s_budget=None,
          theta=CLASSIFY_THETA, theta_g=GLANCING_THETA):
    """Integrate the gliding field on the face through a glancing point.

    The flow moves (y, t, zeta) with x and xi pinned to zero and tau
    constant; it conserves h = zeta.B(0,y) zeta, hence the glancing margin.
    Terminates on a diffractive sign change (handing the ray back to the
    interior flow), on leaving the glancing band (drift guard), at the
    domain edge, or at the flow horizon.
    """
    if cfg is None:
        cfg = IntegratorConfig()
    cls = classify(chart, q0, theta)
    if cls.kind is not Kind.GLANCING:
        raise NotGlancing(f"classification is {cls.kind.value}")
    if len(q0.face) != chart.k or np.any(q0.x > 0.0):
        raise CornerGlancing(
            "gliding requires the full corner face; partial faces with "
            "retained x components are not supported"
        )
    k, l = chart.k, chart.l
    warnings = []
    if k >= 2:
        warnings.append(
            "corner glancing (codimension >= 2): continuing with the "
            "face-restricted gliding field; higher-codimension diffractive "
            "behavior is not classified"
        )
    sgn = 1.0 if direction >= 0 else -1.0
    tau = q0.tau
    x0 = np.zeros(k)

    def rhs(_s, state):
        y = state[:l]
        zeta = state[l + 1:]
        _, B, _, _, dB, _ = chart.coeffs.evaluate_with_grads(x0, y)
        dy = -2.0 * (B @ zeta)
        dzeta = np.array([zeta @ dB[k + m] @ zeta for m in range(l)])
        return sgn * np.concatenate([dy, [2.0 * tau], dzeta])

    events = []

    def diffractive_event(j):
        def g(_s, state):
            y = state[:l]
            zeta = state[l + 1:]
            xi = np.zeros(k)
            sd = _second_derivative_of_face_coord(chart, x0, y, xi, zeta,
                                                  tau, j)
            return sd - theta_g
        g.terminal = True
        g.direction = 1.0
        return g

    for j in range(k):
        events.append(diffractive_event(j))
    n_diff = k

    def band_event(_s, state):
        y = state[:l]
        zeta = state[l + 1:]
        _, B, _ = chart.coeffs.evaluate(x0, y)
        margin = tau ** 2 - float(zeta @ B @ zeta)
        return theta * tau ** 2 - abs(margin)
    band_event.terminal = True
    band_event.direction = -1.0
    events.append(band_event)

    def bound_event(idx, bound, direction_):
        def g(_s, state):
            return state[idx] - bound
        g.terminal = True
        g.direction = direction_
        return g

    for i in range(l):
        events.append(bound_event(i, chart.y_min[i], -1.0))
        events.append(bound_event(i, chart.y_max[i], +1.0))
    events.append(bound_event(l, chart.t_min, -1.0))
    events.append(bound_event(l, chart.t_max, +1.0))

    horizon = cfg.max_time if s_budget is None else min(cfg.max_time, s_budget)
    state0 = np.concatenate([q0.y, [q0.t], q0.zeta])
    sol = solve_ivp(rhs, (0.0, horizon), state0, method="RK45",
                    rtol=cfg.rel_tol, atol=cfg.abs_tol, max_step=cfg.max_step,
                    dense_output=True, events=events)
    if sol.status == -1:
        raise StepFailure(f"gliding integrator failed: {sol.message}")

    hit_s, hit_idx = None, None
    for idx, se in enumerate(sol.t_events):
        if len(se) == 0:
            continue
        s_first = float(se[0])
        if s_first <= 1e-14 and sol.status != 1:
            continue
        if hit_s is None or s_first < hit_s:
            hit_s, hit_idx = s_first, idx

    exit_kind = None
    if hit_s is None:
        terminal, s_end_local = Terminal.TIME_HORIZON, horizon
    elif hit_idx < n_diff:
        terminal, s_end_local = Terminal.BOUNDARY_HIT, hit_s  # back to interior
        state = sol.sol(hit_s)
        sd = _second_derivative_of_face_coord(
            chart, x0, state[:l], np.zeros(k), state[l + 1:], tau, hit_idx)
        exit_kind = GlancingKind(GlancingKindEnum.DIFFRACTIVE, sd)
    elif hit_idx == n_diff:
        terminal, s_end_local = Terminal.DOMAIN_EXIT, hit_s
        warnings.append("glancing band exited during glide (margin drift)")
    else:
        terminal, s_end_local = Terminal.DOMAIN_EXIT, hit_s

    seg = GlidingSegment(
        s_start=s_offset, s_end=s_offset + s_end_local, tau=tau,
        direction=direction, terminal=terminal, face=q0.face, k=k, l=l,
        samples_s=s_offset + sol.t[sol.t <= s_end_local + 1e-15],
        sol=sol.sol, exit_kind=exit_kind, warnings=warnings,
    )

    _, B0, _ = chart.coeffs.evaluate(x0, q0.y)
    h0 = float(q0.zeta @ B0 @ q0.zeta)
    drift = 0.0
    for s in np.linspace(0.0, s_end_local, 33):
        st = sol.sol(s)
        _, B, _ = chart.coeffs.evaluate(x0, st[:l])
        drift = max(drift, abs(float(st[l + 1:] @ B @ st[l + 1:]) - h0))
    seg.h_drift = drift
    return seg
