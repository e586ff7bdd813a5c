"""Coordinate chart, metric coefficient fields, and the compression map.

The chart models a neighborhood of a corner of codimension ``k`` with ``l``
tangential directions and one time direction: the base is the box
``[0, x_max]^k x [y_min, y_max]^l x [t_min, t_max]`` and boundary faces are
the loci ``x_j = 0``.  Fiber coordinates are (xi, zeta, tau); b-fiber
coordinates replace xi by sigma_j = x_j * xi_j.  Compression forgets the
face-normal xi components over each face.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import dual as _dual
from . import exprs
from .errors import (
    ChartMismatch,
    ChartValidationError,
    NotPositiveDefinite,
    OutOfDomain,
)

__all__ = [
    "MetricCoeffs",
    "Chart",
    "make_chart",
    "CotangentPoint",
    "BCotangentPoint",
    "CompressedPoint",
    "to_b_coords",
    "compress",
    "compressed_ball_contains",
    "compressed_distance",
]


def _ro(a, dtype=float):
    out = np.array(a, dtype=dtype)
    out.flags.writeable = False
    return out


class MetricCoeffs:
    """Expression-valued coefficient matrices A (k x k), B (l x l), C (k x l)."""

    def __init__(self, k, l, A, B, C):
        names = exprs.metric_var_names(k, l)
        self.k, self.l = k, l
        self.A = tuple(tuple(self._as_expr(e, names) for e in row) for row in A)
        self.B = tuple(tuple(self._as_expr(e, names) for e in row) for row in B)
        self.C = tuple(tuple(self._as_expr(e, names) for e in row) for row in C)
        if len(self.A) != k or any(len(r) != k for r in self.A):
            raise ChartValidationError(f"A must be {k}x{k}")
        if len(self.B) != l or any(len(r) != l for r in self.B):
            raise ChartValidationError(f"B must be {l}x{l}")
        if len(self.C) != k or any(len(r) != l for r in self.C):
            raise ChartValidationError(f"C must be {k}x{l}")
        self._names = names
        entries = [e for m in (self.A, self.B, self.C) for row in m for e in row]
        self.is_constant = all(e.is_constant for e in entries)
        if self.is_constant:
            self._A0 = np.array(
                [[e.constant_value for e in r] for r in self.A]).reshape(k, k)
            self._B0 = np.array(
                [[e.constant_value for e in r] for r in self.B]).reshape(l, l)
            self._C0 = np.array(
                [[e.constant_value for e in r] for r in self.C]).reshape(k, l)

    @staticmethod
    def _as_expr(e, names):
        return e if isinstance(e, exprs.Expr) else exprs.parse(e, names)

    def _env(self, x, y):
        env = {f"x{j + 1}": x[..., j] if np.ndim(x) > 1 else x[j]
               for j in range(self.k)}
        env.update({f"y{i + 1}": y[..., i] if np.ndim(y) > 1 else y[i]
                    for i in range(self.l)})
        return env

    def _mat(self, rows, env, shape, extra=()):
        out = np.empty(extra + shape)
        for i, row in enumerate(rows):
            for j, e in enumerate(row):
                out[..., i, j] = e(env) if not e.is_constant else e.constant_value
        return out

    def evaluate(self, x, y):
        """Numeric (A, B, C) at one base point or a batch of base points.

        Batch inputs have shape (n, k) and (n, l); outputs gain a leading n.
        """
        k, l = self.k, self.l
        if self.is_constant:
            if np.ndim(x) > 1 or np.ndim(y) > 1:
                n = len(x) if np.ndim(x) > 1 else len(y)
                rep = lambda m: np.broadcast_to(m, (n,) + m.shape)
                return rep(self._A0), rep(self._B0), rep(self._C0)
            return self._A0.copy(), self._B0.copy(), self._C0.copy()
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        env = self._env(x, y)
        extra = x.shape[:-1] if x.ndim > 1 else (y.shape[:-1] if y.ndim > 1 else ())
        A = self._mat(self.A, env, (k, k), extra)
        B = self._mat(self.B, env, (l, l), extra)
        C = self._mat(self.C, env, (k, l), extra)
        return A, B, C

    def evaluate_with_grads(self, x, y):
        """(A, B, C, dA, dB, dC) with d* indexed (direction, ..., i, j).

        Directions run over (x_1..x_k, y_1..y_l); derivatives are exact
        (dual-number sweep through the expression trees).
        """
        k, l = self.k, self.l
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        extra = x.shape[:-1] if x.ndim > 1 else (y.shape[:-1] if y.ndim > 1 else ())
        m = k + l
        if self.is_constant:
            A, B, C = self.evaluate(x, y)
            z = lambda s: np.zeros((m,) + extra + s)
            return A, B, C, z((k, k)), z((l, l)), z((k, l))
        coords = [x[..., j] if x.ndim > 1 else x[j] for j in range(k)]
        coords += [y[..., i] if y.ndim > 1 else y[i] for i in range(l)]
        env = dict(zip(self._names, _dual.seed(coords)))

        def mat(rows, shape):
            val = np.empty(extra + shape)
            grad = np.zeros((m,) + extra + shape)
            for i, row in enumerate(rows):
                for j, e in enumerate(row):
                    if e.is_constant:
                        val[..., i, j] = e.constant_value
                    else:
                        out = e.root.eval(env)
                        val[..., i, j] = _dual.value_of(out)
                        grad[:, ..., i, j] = _dual.grad_of(out, m)
            return val, grad

        A, dA = mat(self.A, (k, k))
        B, dB = mat(self.B, (l, l))
        C, dC = mat(self.C, (k, l))
        return A, B, C, dA, dB, dC

    def source_strings(self):
        return (
            [[e.source for e in r] for r in self.A],
            [[e.source for e in r] for r in self.B],
            [[e.source for e in r] for r in self.C],
        )


@dataclass(frozen=True)
class Chart:
    """Validated chart; immutable, safe to share across workers."""

    k: int
    l: int
    x_max: np.ndarray
    y_min: np.ndarray
    y_max: np.ndarray
    t_min: float
    t_max: float
    coeffs: MetricCoeffs
    tol_face: float
    lambda_min: float
    key: str = field(default="", compare=False)

    @property
    def x_extent(self):
        return float(self.x_max.max()) if self.k else 1.0

    def contains(self, x, y, t, slack=0.0):
        if self.k and (np.any(x < -slack) or np.any(x > self.x_max + slack)):
            return False
        if self.l and (np.any(y < self.y_min - slack) or np.any(y > self.y_max + slack)):
            return False
        return self.t_min - slack <= t <= self.t_max + slack

    def require_inside(self, x, y, t, slack=None):
        if slack is None:
            slack = 1e-9 * max(self.x_extent, 1.0)
        if not self.contains(np.asarray(x), np.asarray(y), t, slack):
            raise OutOfDomain(
                f"point x={np.asarray(x)}, y={np.asarray(y)}, t={t} outside chart box"
            )


def _content_key(k, l, x_max, y_min, y_max, t_min, t_max, coeffs):
    h = hashlib.sha256()
    payload = repr((k, l, list(x_max), list(y_min), list(y_max), t_min, t_max,
                    coeffs.source_strings()))
    h.update(payload.encode())
    return h.hexdigest()[:16]


def make_chart(k, l, x_max, y_min, y_max, t_min, t_max, A, B, C,
               n_validation_samples=10_000, seed=20_000):
    """Build and validate a chart.

    Validation samples the domain box: A and B must pass a Cholesky check at
    every sample (their joint minimum eigenvalue is recorded as lambda_min),
    A and B must be symmetric, and C must vanish on the full corner x = 0 to
    1e-12.  Charts that fail anywhere in the sampled box are rejected rather
    than patched.
    """
    k, l = int(k), int(l)
    if k + l < 1:
        raise ChartValidationError("need k + l >= 1")
    x_max = np.asarray(x_max, dtype=float).reshape(k)
    y_min = np.asarray(y_min, dtype=float).reshape(l)
    y_max = np.asarray(y_max, dtype=float).reshape(l)
    t_min, t_max = float(t_min), float(t_max)
    if k and np.any(x_max <= 0):
        raise ChartValidationError("x_max must be positive")
    if l and np.any(y_max <= y_min):
        raise ChartValidationError("y bounds must have positive extent")
    if not t_max > t_min:
        raise ChartValidationError("t bounds must have positive extent")
    if not np.all(np.isfinite(np.concatenate([x_max, y_min, y_max, [t_min, t_max]]))):
        raise ChartValidationError("domain bounds must be finite")

    coeffs = MetricCoeffs(k, l, A, B, C)
    rng = np.random.default_rng(seed)
    n = int(n_validation_samples)
    xs = rng.uniform(0.0, x_max, size=(n, k)) if k else np.zeros((n, 0))
    ys = rng.uniform(y_min, y_max, size=(n, l)) if l else np.zeros((n, 0))
    Av, Bv, Cv = coeffs.evaluate(xs, ys)

    lam = np.inf
    for name, M in (("A", Av), ("B", Bv)):
        if M.shape[-1] == 0:
            continue
        if not np.allclose(M, np.swapaxes(M, -1, -2), rtol=0.0, atol=1e-12):
            raise ChartValidationError(f"{name} is not symmetric on the domain")
        try:
            np.linalg.cholesky(M)
        except np.linalg.LinAlgError as e:
            raise NotPositiveDefinite(
                f"{name} failed a Cholesky check on the sampled domain"
            ) from e
        lam = min(lam, float(np.linalg.eigvalsh(M)[..., 0].min()))
    if not np.isfinite(lam):
        lam = 1.0

    if k and l:
        y_edge = rng.uniform(y_min, y_max, size=(max(n // 10, 100), l))
        _, _, C0 = coeffs.evaluate(np.zeros((len(y_edge), k)), y_edge)
        worst = float(np.abs(C0).max())
        if worst > 1e-12:
            raise ChartValidationError(
                f"C(0, y) = 0 violated: max |C| = {worst:g} on the corner"
            )

    tol_face = 1e-9 * (float(x_max.max()) if k else 1.0)
    key = _content_key(k, l, x_max, y_min, y_max, t_min, t_max, coeffs)
    return Chart(k, l, _ro(x_max), _ro(y_min), _ro(y_max), t_min, t_max,
                 coeffs, tol_face, 0.9 * lam, key)


def eval_metric(chart, x, y):
    """Numeric (A, B, C) at an in-domain base point, PD-checked."""
    x = np.asarray(x, dtype=float).reshape(chart.k)
    y = np.asarray(y, dtype=float).reshape(chart.l)
    chart.require_inside(x, y, 0.5 * (chart.t_min + chart.t_max))
    A, B, C = chart.coeffs.evaluate(x, y)
    for name, M in (("A", A), ("B", B)):
        if M.shape[0]:
            try:
                np.linalg.cholesky(M)
            except np.linalg.LinAlgError as e:
                raise NotPositiveDefinite(f"{name} not positive definite at the point") from e
    return A, B, C


@dataclass(frozen=True)
class CotangentPoint:
    """Point of T*X in chart coordinates (x, y, t, xi, zeta, tau)."""

    x: np.ndarray
    y: np.ndarray
    t: float
    xi: np.ndarray
    zeta: np.ndarray
    tau: float

    def __post_init__(self):
        object.__setattr__(self, "x", _ro(np.atleast_1d(self.x)))
        object.__setattr__(self, "y", _ro(np.atleast_1d(self.y)))
        object.__setattr__(self, "xi", _ro(np.atleast_1d(self.xi)))
        object.__setattr__(self, "zeta", _ro(np.atleast_1d(self.zeta)))
        object.__setattr__(self, "t", float(self.t))
        object.__setattr__(self, "tau", float(self.tau))
        if np.any(self.x < 0):
            worst = float(self.x.min())
            if worst < -1e-12 * max(1.0, float(np.abs(self.x).max())):
                raise ValueError(f"x must be componentwise >= 0, got min {worst}")
            clamped = self.x.copy()
            clamped[clamped < 0] = 0.0
            object.__setattr__(self, "x", _ro(clamped))
        if self.tau == 0.0:
            raise ValueError("tau must be nonzero")

    def scaled(self, lam):
        """Fiber scaling by lam > 0 (base fixed)."""
        return CotangentPoint(self.x, self.y, self.t,
                              lam * self.xi, lam * self.zeta, lam * self.tau)

    def with_fibers_negated(self):
        return CotangentPoint(self.x, self.y, self.t,
                              -self.xi, -self.zeta, -self.tau)


@dataclass(frozen=True)
class BCotangentPoint:
    """Point of Tb*X: fiber coordinates (sigma, zeta, tau), sigma_j = x_j xi_j."""

    x: np.ndarray
    y: np.ndarray
    t: float
    sigma: np.ndarray
    zeta: np.ndarray
    tau: float

    def __post_init__(self):
        object.__setattr__(self, "x", _ro(np.atleast_1d(self.x)))
        object.__setattr__(self, "y", _ro(np.atleast_1d(self.y)))
        object.__setattr__(self, "sigma", _ro(np.atleast_1d(self.sigma)))
        object.__setattr__(self, "zeta", _ro(np.atleast_1d(self.zeta)))
        object.__setattr__(self, "t", float(self.t))
        object.__setattr__(self, "tau", float(self.tau))


def to_b_coords(q):
    """The bundle map iota: (x, y, t, xi, zeta, tau) -> (x, y, t, x*xi, zeta, tau)."""
    return BCotangentPoint(q.x, q.y, q.t, q.x * q.xi, q.zeta, q.tau)


@dataclass(frozen=True)
class CompressedPoint:
    """Image of a cotangent point under the compression pi.

    ``face`` is the set of indices (0-based) with x_j = 0; xi components over
    the face are discarded (stored canonically as 0), the rest are kept.
    """

    face: frozenset
    x: np.ndarray
    y: np.ndarray
    t: float
    xi: np.ndarray
    zeta: np.ndarray
    tau: float
    chart_key: str = ""

    def __post_init__(self):
        object.__setattr__(self, "face", frozenset(int(j) for j in self.face))
        x = np.atleast_1d(np.asarray(self.x, dtype=float)).copy()
        xi = np.atleast_1d(np.asarray(self.xi, dtype=float)).copy()
        for j in self.face:
            x[j] = 0.0
            xi[j] = 0.0
        object.__setattr__(self, "x", _ro(x))
        object.__setattr__(self, "xi", _ro(xi))
        object.__setattr__(self, "y", _ro(np.atleast_1d(self.y)))
        object.__setattr__(self, "zeta", _ro(np.atleast_1d(self.zeta)))
        object.__setattr__(self, "t", float(self.t))
        object.__setattr__(self, "tau", float(self.tau))

    @property
    def codim(self):
        return len(self.face)

    @property
    def is_interior(self):
        return not self.face

    @property
    def x_free(self):
        return np.array([v for j, v in enumerate(self.x) if j not in self.face])

    @property
    def xi_free(self):
        return np.array([v for j, v in enumerate(self.xi) if j not in self.face])

    @property
    def zeta_hat(self):
        return self.zeta / self.tau

    def __eq__(self, other):
        if not isinstance(other, CompressedPoint):
            return NotImplemented
        return (
            self.face == other.face
            and self.chart_key == other.chart_key
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.y, other.y)
            and self.t == other.t
            and np.array_equal(self.xi, other.xi)
            and np.array_equal(self.zeta, other.zeta)
            and self.tau == other.tau
        )

    __hash__ = None


def compress(chart, q):
    """Projection pi: discard face-normal xi over {j : x_j <= tol_face}."""
    face = frozenset(int(j) for j in range(chart.k) if q.x[j] <= chart.tol_face)
    return CompressedPoint(face, q.x, q.y, q.t, q.xi, q.zeta, q.tau,
                           chart_key=chart.key)


def compressed_ball_contains(center, delta, q):
    """Membership in the basis ball B_delta(center) of the compressed topology.

    Conditions: |x(q)| < delta, |y - y0| < delta, |t - t0| < delta,
    |tau - tau0| < delta, and |zeta/tau - zeta0/tau0| < delta (the fiber
    comparison is made on the tau-normalized slice).  xi never enters; over
    the characteristic set |sigma| is controlled by |x| |tau|.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    if center.chart_key and q.chart_key and center.chart_key != q.chart_key:
        raise ChartMismatch("ball center and query point live on different charts")
    return bool(
        np.linalg.norm(q.x) < delta
        and np.linalg.norm(q.y - center.y) < delta
        and abs(q.t - center.t) < delta
        and abs(q.tau - center.tau) < delta
        and np.linalg.norm(q.zeta_hat - center.zeta_hat) < delta
    )


def compressed_distance(a, b):
    """Euclidean distance on the compressed coordinates (x, y, t, tau, zeta/tau)."""
    if a.chart_key and b.chart_key and a.chart_key != b.chart_key:
        raise ChartMismatch("points live on different charts")
    d2 = (
        float(np.sum((a.x - b.x) ** 2))
        + float(np.sum((a.y - b.y) ** 2))
        + (a.t - b.t) ** 2
        + (a.tau - b.tau) ** 2
        + float(np.sum((a.zeta_hat - b.zeta_hat) ** 2))
    )
    return float(np.sqrt(d2))
