"""Event loop driving interior flow, reflection, branching, and gliding.

A trace alternates interior bicharacteristic arcs with boundary events
until every continuation reaches the flow horizon, leaves the chart box,
or is flagged.  Hyperbolic hits reflect (one specular continuation, or a
branch per sampled leaving lift under the ``all`` rule); glancing hits
either hand the ray to the gliding flow or continue into the interior at
diffractive points.  The result is a finite tree of rays; with the
specular rule it is a single path.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

from . import boundary, hamiltonian
from .boundary import GlancingKindEnum, Kind
from .errors import CornerRayError, OutOfRange
from .geometry import CompressedPoint, CotangentPoint, compress
from .hamiltonian import IntegratorConfig, Terminal

__all__ = [
    "EventKind",
    "Event",
    "Ray",
    "BranchNode",
    "BranchTree",
    "TraceConfig",
    "trace",
    "sample_ray",
    "reverse",
]

TANGENT_LAUNCH = 1e-6   # wall-blind launch span for tangent (diffractive) starts
MIN_PROGRESS = 1e-12    # an event loop stalls if segments shrink below this


class EventKind(enum.Enum):
    REFLECTION = "Reflection"
    CORNER_BRANCH = "CornerBranch"
    GLANCING_ENTER = "GlancingEnter"
    GLANCING_EXIT = "GlancingExit"
    TIME_HORIZON = "TimeHorizon"
    DOMAIN_EXIT = "DomainExit"
    FLAGGED = "Flagged"


@dataclass(frozen=True)
class Event:
    kind: EventKind
    s: float
    point: CompressedPoint
    face: frozenset = frozenset()
    lift_in: CotangentPoint = None
    lift_out: CotangentPoint = None
    n_branches: int = 0
    glancing_kind: object = None
    reason: str = ""


@dataclass
class Ray:
    """A single continuation path: ordered segments plus its events."""

    segments: list = field(default_factory=list)
    events: list = field(default_factory=list)
    direction: int = 1
    warnings: list = field(default_factory=list)

    @property
    def s_min(self):
        return self.segments[0].s_start if self.segments else 0.0

    @property
    def s_max(self):
        return self.segments[-1].s_end if self.segments else 0.0

    @property
    def terminal_event(self):
        return self.events[-1] if self.events else None

    def segment_at(self, s):
        for seg in self.segments:
            if seg.s_start - 1e-12 <= s <= seg.s_end + 1e-12:
                return seg
        raise OutOfRange(f"s={s} outside ray interval "
                         f"[{self.s_min}, {self.s_max}]")

    def sample(self, s, side="right"):
        """Point at parameter s; at an event parameter the right limit is
        returned unless side='left'."""
        candidates = [seg for seg in self.segments
                      if seg.s_start - 1e-12 <= s <= seg.s_end + 1e-12]
        if not candidates:
            raise OutOfRange(f"s={s} outside ray interval "
                             f"[{self.s_min}, {self.s_max}]")
        seg = candidates[0] if side == "left" else candidates[-1]
        return seg.point_at(s)


@dataclass
class BranchNode:
    ray: Ray
    branch_index: tuple = ()
    children: list = field(default_factory=list)

    def leaves(self):
        if not self.children:
            yield self
        else:
            for c in self.children:
                yield from c.leaves()

    def walk(self):
        yield self
        for c in self.children:
            yield from c.walk()


@dataclass
class BranchTree:
    root: BranchNode
    chart: object
    config: object
    initial: CotangentPoint

    def leaves(self):
        return list(self.root.leaves())

    def nodes(self):
        return list(self.root.walk())

    def paths(self):
        """Root-to-leaf ray lists (each list concatenates to one full ray)."""
        out = []

        def rec(node, prefix):
            prefix = prefix + [node.ray]
            if not node.children:
                out.append(prefix)
            for c in node.children:
                rec(c, prefix)
        rec(self.root, [])
        return out

    @property
    def is_single_path(self):
        return all(len(n.children) <= 1 for n in self.nodes())


@dataclass(frozen=True)
class TraceConfig:
    integrator: IntegratorConfig = IntegratorConfig()
    branch_rule: str = "specular"      # "specular" or "all"
    branch_samples: int = 256
    max_depth: int = 32
    max_leaves: int = 4096
    seed: int = 0
    project_to_char: bool = False
    normalize_tau: bool = True
    theta: float = boundary.CLASSIFY_THETA
    theta_g: float = boundary.GLANCING_THETA

    @staticmethod
    def parse_rule(text):
        if text == "specular":
            return {"branch_rule": "specular"}
        if text.startswith("all:"):
            return {"branch_rule": "all", "branch_samples": int(text[4:])}
        raise ValueError(f"unknown branch rule {text!r}")


class _Budget:
    def __init__(self, max_leaves):
        self.remaining = max_leaves

    def take(self):
        self.remaining -= 1
        return self.remaining >= 0


def _prepare_initial(chart, q0, cfg):
    q = q0
    if cfg.normalize_tau:
        q = q.scaled(1.0 / abs(q.tau))
    p = hamiltonian.eval_p(chart, q)
    warnings = []
    if abs(p) > 1e-8 * q.tau ** 2:
        if not cfg.project_to_char:
            raise CornerRayError(
                f"initial point off the characteristic set: |p| = {abs(p):g}; "
                "enable project_to_char to rescale the fiber onto it"
            )
        A, B, C = chart.coeffs.evaluate(q.x, q.y)
        g = float(q.xi @ A @ q.xi + 2.0 * (q.xi @ C @ q.zeta)
                  + q.zeta @ B @ q.zeta)
        rho = abs(q.tau) / np.sqrt(g)
        q = CotangentPoint(q.x, q.y, q.t, rho * q.xi, rho * q.zeta, q.tau)
        warnings.append(f"initial fiber rescaled by {rho:.6g} onto the "
                        "characteristic set")
    return q, warnings


def trace(chart, q0, cfg=None, direction=1):
    """Trace the branch tree of generalized broken bicharacteristics
    through q0.  Deterministic for fixed (chart, q0, cfg, seed)."""
    if cfg is None:
        cfg = TraceConfig()
    q_start, warnings = _prepare_initial(chart, q0, cfg)
    budget = _Budget(cfg.max_leaves)
    root = BranchNode(Ray(direction=direction), branch_index=())
    root.ray.warnings.extend(warnings)
    _run_branch(chart, cfg, root, ("interior", q_start, 0.0), direction,
                depth=0, budget=budget)
    return BranchTree(root, chart, cfg, q_start)


def _flag(ray, s, point_c, reason):
    ray.events.append(Event(EventKind.FLAGGED, s, point_c, reason=reason))


def _handle_boundary(chart, cfg, node, q_arr, s_now, direction, depth,
                     budget):
    """Dispatch an on-face state: reflect, branch, or enter glancing.

    Returns (mode, current, tangent_next) for the caller to continue, or
    None when this branch is done (terminal flag or children spawned).
    """
    ray = node.ray
    cp = compress(chart, q_arr)
    cls = boundary.classify(chart, cp, cfg.theta)

    if cls.kind is Kind.ELLIPTIC:
        _flag(ray, s_now, cp,
              f"arrived at an elliptic boundary point (margin "
              f"{cls.margin:g}); unreachable for rays on the "
              "characteristic set")
        return None

    if cls.kind is Kind.HYPERBOLIC:
        try:
            outs = boundary.reflect(
                chart, q_arr, rule=cfg.branch_rule,
                n_samples=cfg.branch_samples,
                seed=cfg.seed + 7919 * len(ray.events), theta=cfg.theta)
        except CornerRayError as e:
            _flag(ray, s_now, cp, str(e))
            return None
        if len(outs) == 1:
            ray.events.append(Event(
                EventKind.REFLECTION, s_now, cp, face=cp.face,
                lift_in=q_arr, lift_out=outs[0]))
            return "interior", outs[0], False
        ray.events.append(Event(
            EventKind.CORNER_BRANCH, s_now, cp, face=cp.face,
            lift_in=q_arr, n_branches=len(outs)))
        if depth + 1 > cfg.max_depth:
            _flag(ray, s_now, cp, f"branch depth cap {cfg.max_depth} reached")
            return None
        for b_idx, q_out in enumerate(outs):
            if not budget.take():
                _flag(ray, s_now, cp, f"leaf cap {cfg.max_leaves} reached")
                return None
            child = BranchNode(Ray(direction=direction),
                               branch_index=node.branch_index + (b_idx,))
            child.ray.events.append(Event(
                EventKind.REFLECTION, s_now, cp, face=cp.face,
                lift_in=q_arr, lift_out=q_out))
            node.children.append(child)
            _run_branch(chart, cfg, child, ("interior", q_out, s_now),
                        direction, depth + 1, budget)
        return None

    # glancing
    if len(cp.face) == 1:
        try:
            gk = boundary.glancing_type(chart, cp, cfg.theta_g, cfg.theta)
        except CornerRayError as e:
            _flag(ray, s_now, cp, str(e))
            return None
    else:
        gk = None  # corner glancing; glide warns or flags
    ray.events.append(Event(EventKind.GLANCING_ENTER, s_now, cp,
                            face=cp.face, glancing_kind=gk))
    if gk is not None and gk.kind is GlancingKindEnum.DIFFRACTIVE:
        lifts = boundary.lift_set(chart, cp, n_samples=2, seed=cfg.seed,
                                  theta=cfg.theta)
        q_tan = CotangentPoint(cp.x, cp.y, cp.t, lifts.lifts[0], cp.zeta,
                               cp.tau)
        return "interior", q_tan, True
    if gk is not None and gk.kind is GlancingKindEnum.UNDETERMINED:
        ray.warnings.append(
            f"undetermined tangency at s={s_now:.6g} (flat-wall contact): "
            "continuing as gliding")
    return "glide", cp, False


def _leaving_strictly(chart, q, face):
    A, _, C = chart.coeffs.evaluate(q.x, q.y)
    dx = -2.0 * (A @ q.xi + (C @ q.zeta if chart.l else np.zeros(chart.k)))
    return all(dx[j] > 0.0 for j in face)


def _run_branch(chart, cfg, node, start, direction, depth, budget):
    """Advance one ray until a terminal event; recurse at corner branches.

    ``mode`` tracks the continuation kind; any interior state that sits on
    a face without strictly leaving it routes through the boundary
    dispatch, so initial conditions placed on the boundary behave exactly
    like arrivals.
    """
    ray = node.ray
    icfg = cfg.integrator
    mode, current, s_now = start
    tangent_next = mode == "tangent"
    if mode == "tangent":
        mode = "interior"

    while True:
        budget_s = icfg.max_time - s_now
        if budget_s <= MIN_PROGRESS:
            cp = (current if isinstance(current, CompressedPoint)
                  else compress(chart, current))
            ray.events.append(Event(EventKind.TIME_HORIZON, s_now, cp))
            return

        if mode == "interior":
            face_now = frozenset(j for j in range(chart.k)
                                 if current.x[j] <= chart.tol_face)
            if face_now and not tangent_next \
                    and not _leaving_strictly(chart, current, face_now):
                outcome = _handle_boundary(chart, cfg, node, current, s_now,
                                           direction, depth, budget)
                if outcome is None:
                    return
                mode, current, tangent_next = outcome
                continue
            try:
                seg = hamiltonian.flow_interior(
                    chart, current, icfg, direction=direction, s_offset=s_now,
                    s_budget=budget_s,
                    tangent_launch=TANGENT_LAUNCH if tangent_next else 0.0)
            except CornerRayError as e:
                _flag(ray, s_now, compress(chart, current), str(e))
                return
            tangent_next = False
            ray.segments.append(seg)
            ray.warnings.extend(seg.warnings)
            if seg.s_end - seg.s_start < MIN_PROGRESS:
                _flag(ray, seg.s_end, compress(chart, seg.end_point),
                      "no progress in interior flow (stalled event loop)")
                return
            s_now = seg.s_end
            q_end = seg.end_point

            if seg.terminal is Terminal.TIME_HORIZON:
                ray.events.append(Event(EventKind.TIME_HORIZON, s_now,
                                        compress(chart, q_end)))
                return
            if seg.terminal is Terminal.DOMAIN_EXIT:
                ray.events.append(Event(EventKind.DOMAIN_EXIT, s_now,
                                        compress(chart, q_end)))
                return
            outcome = _handle_boundary(chart, cfg, node, q_end, s_now,
                                       direction, depth, budget)
            if outcome is None:
                return
            mode, current, tangent_next = outcome
            continue

        # gliding mode
        try:
            seg = boundary.glide(chart, current, icfg, direction=direction,
                                 s_offset=s_now, s_budget=budget_s,
                                 theta=cfg.theta, theta_g=cfg.theta_g)
        except CornerRayError as e:
            _flag(ray, s_now, current, str(e))
            return
        ray.segments.append(seg)
        ray.warnings.extend(seg.warnings)
        if seg.s_end - seg.s_start < MIN_PROGRESS:
            _flag(ray, seg.s_end, compress(chart, seg.end_point),
                  "no progress in gliding flow (stalled event loop)")
            return
        s_now = seg.s_end
        q_end = seg.end_point
        cp_end = compress(chart, q_end)

        if seg.terminal is Terminal.TIME_HORIZON:
            ray.events.append(Event(EventKind.TIME_HORIZON, s_now, cp_end))
            return
        if seg.terminal is Terminal.DOMAIN_EXIT:
            if any("band exited" in w for w in seg.warnings):
                _flag(ray, s_now, cp_end,
                      "glancing band exited during glide")
            else:
                ray.events.append(Event(EventKind.DOMAIN_EXIT, s_now, cp_end))
            return
        # diffractive exit back into the interior
        ray.events.append(Event(EventKind.GLANCING_EXIT, s_now, cp_end,
                                face=seg.face, glancing_kind=seg.exit_kind))
        lifts = boundary.lift_set(chart, cp_end, n_samples=2, seed=cfg.seed,
                                  theta=cfg.theta)
        mode = "interior"
        current = CotangentPoint(cp_end.x, cp_end.y, cp_end.t,
                                 lifts.lifts[0], cp_end.zeta, cp_end.tau)
        tangent_next = True


def sample_ray(ray, s_values, side="right"):
    """Dense-output interpolation of a ray at the given parameters.

    At an event parameter the right limit is returned; ``side='left'``
    selects the left limit (the two differ only in face-normal xi).
    """
    return [ray.sample(float(s), side=side) for s in s_values]


class _ReversedSegment:
    """View of a segment with the parameter reversed and fibers negated."""

    def __init__(self, seg, s_total):
        self._seg = seg
        self._s_total = s_total
        self.s_start = s_total - seg.s_end
        self.s_end = s_total - seg.s_start
        self.kind = seg.kind
        self.tau = -seg.tau
        self.face = getattr(seg, "face", frozenset())
        self.terminal = seg.terminal
        self.direction = -seg.direction
        self.warnings = list(seg.warnings)
        self.samples_s = np.sort(s_total - np.asarray(seg.samples_s))
        self.k, self.l = seg.k, seg.l

    def point_at(self, s):
        q = self._seg.point_at(self._s_total - s)
        return q.with_fibers_negated()

    @property
    def start_point(self):
        return self.point_at(self.s_start)

    @property
    def end_point(self):
        return self.point_at(self.s_end)


def _reverse_point(q):
    return q.with_fibers_negated() if q is not None else None


def reverse(ray):
    """Time reversal: negate (xi, zeta, tau) and run the parameter backward.

    p is even in the fiber, so the reversed path is again a ray of the same
    chart; reverse(reverse(ray)) samples identically to the original.
    """
    s_total = ray.s_max + ray.s_min
    segs = [_ReversedSegment(seg, s_total) for seg in reversed(ray.segments)]
    events = []
    for ev in reversed(ray.events):
        events.append(Event(
            ev.kind, s_total - ev.s,
            CompressedPoint(ev.point.face, ev.point.x, ev.point.y,
                            ev.point.t, -ev.point.xi, -ev.point.zeta,
                            -ev.point.tau, chart_key=ev.point.chart_key),
            face=ev.face,
            lift_in=_reverse_point(ev.lift_out),
            lift_out=_reverse_point(ev.lift_in),
            n_branches=ev.n_branches,
            glancing_kind=ev.glancing_kind,
            reason=ev.reason,
        ))
    return Ray(segments=segs, events=events, direction=-ray.direction,
               warnings=list(ray.warnings))
