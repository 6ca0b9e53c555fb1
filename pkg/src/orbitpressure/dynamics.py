"""Model dynamical systems, orbit iteration and finite-horizon hyperbolicity.

All built-in systems are planar and invertible.  Point arguments may be
single points of shape ``(2,)`` or batches of shape ``(N, 2)``; every map
evaluation broadcasts over the leading axis.  Distances use the max metric
over the two coordinates (with per-coordinate wraparound on the torus), so
dynamical balls are coordinate boxes.

Reals are 64-bit floats throughout.  Default tolerances: ``ALGEBRAIC_TOL``
(1e-9) for algebraic identities, ``SPECTRAL_TOL`` (1e-6) for spectral
quantities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateCocycle, EmptySample, IndexOutOfRange, OrbitEscaped

ALGEBRAIC_TOL = 1e-9
SPECTRAL_TOL = 1e-6

_SQRT5 = math.sqrt(5.0)

# Cat-map expansion rate: the larger root of t^2 - 3t + 1 = 0.
CAT_EXPANSION = (3.0 + _SQRT5) / 2.0


def _pts(p):
    return np.asarray(p, dtype=float)


class Potential:
    """Real-valued observable on phase space.

    Parameters
    ----------
    name : str
        Stable identifier; used as the Birkhoff-cache key.
    fn : callable
        Vectorized evaluation, mapping ``(..., 2)`` points to ``(...)`` values.
    lipschitz : float or None
        Lipschitz constant w.r.t. the max metric, when known.
    sup, inf : float
        Bounds over the relevant domain, used by pressure sandwich bounds.
    """

    def __init__(self, name, fn, lipschitz=None, sup=math.inf, inf=-math.inf):
        self.name = name
        self._fn = fn
        self.lipschitz = lipschitz
        self.sup = sup
        self.inf = inf

    def __call__(self, points):
        return np.asarray(self._fn(_pts(points)), dtype=float)

    def __repr__(self):
        return f"Potential({self.name!r})"


def zero_potential():
    return Potential("zero", lambda p: np.zeros(p.shape[:-1]), lipschitz=0.0, sup=0.0, inf=0.0)


def constant_potential(c):
    c = float(c)
    return Potential(f"const({c!r})", lambda p: np.full(p.shape[:-1], c), lipschitz=0.0, sup=c, inf=c)


def coordinate_potential(axis=0):
    """First or second coordinate as an observable (sup/inf set for [0,1] boxes)."""
    axis = int(axis)
    return Potential(f"coord{axis}", lambda p: p[..., axis], lipschitz=1.0, sup=1.0, inf=0.0)


BUILTIN_POTENTIALS = {
    "zero": lambda **kw: zero_potential(),
    "constant": lambda c=0.0, **kw: constant_potential(c),
    "coordinate": lambda axis=0, **kw: coordinate_potential(axis),
}


@dataclass(frozen=True)
class ConeField:
    """Planar cone of half-opening ``width`` around a center direction.

    ``center`` is either a unit vector or a callable mapping points to unit
    vectors.  Cones are symmetric (v and -v are both members), so all angle
    comparisons are taken mod pi.  ``width`` must lie strictly inside
    (0, pi/4).
    """

    center: object
    width: float
    flavor: str = "unstable"

    def __post_init__(self):
        if not (0.0 < self.width < math.pi / 4):
            raise ValueError("cone width must lie strictly in (0, pi/4)")

    def direction(self, point):
        c = self.center(point) if callable(self.center) else np.asarray(self.center, float)
        return c / np.linalg.norm(c)


@dataclass
class OrbitSegment:
    """A finite forward orbit with points[k] = f^k(base_point), 0 <= k < length."""

    base_point: np.ndarray
    length: int
    points: np.ndarray
    birkhoff_cache: dict = field(default_factory=dict, repr=False)

    def prefix_sums(self, phi):
        """Cached prefix sums: entry k holds S_k(phi) = sum_{j<k} phi(points[j])."""
        key = phi.name
        if key not in self.birkhoff_cache:
            vals = phi(self.points)
            sums = np.concatenate([[0.0], np.cumsum(vals)])
            self.birkhoff_cache[key] = sums
        return self.birkhoff_cache[key]


@dataclass(frozen=True)
class LyapunovReport:
    """Finite-horizon exponents (nats/iterate), sorted ascending.

    ``direction_angles`` holds the angles (degrees, mod 180) of the computed
    splitting directions in the same order as ``exponents``: the first entry
    is the most-contracted direction, the last the most-expanded.
    """

    horizon: int
    exponents: np.ndarray
    min_abs: float
    direction_angles: np.ndarray


class MapSystem:
    """Invertible planar map with derivative evaluation and a metric.

    Subclasses provide vectorized ``forward``, ``backward``, ``jacobian``
    and ``domain_test``.  Evaluation is pure and stateless; instances are
    safe to share across threads.
    """

    name = "abstract"
    dimension = 2

    def forward(self, p):
        raise NotImplementedError

    def backward(self, p):
        raise NotImplementedError

    def jacobian(self, p):
        raise NotImplementedError

    def domain_test(self, p):
        raise NotImplementedError

    def metric(self, p, q):
        """Max metric over coordinates; overridden with wraparound on tori."""
        d = np.abs(_pts(p) - _pts(q))
        return d.max(axis=-1)

    def diameter(self):
        """Diameter of the ambient domain in this metric."""
        return 1.0

    # Optional hooks consumed by the horseshoe pipeline. ------------------

    def stable_cone(self):
        return None

    def unstable_cone(self):
        return None

    def lambda_floor(self):
        """Documented expansion floor for the default cones, or None."""
        return None

    def strip_symbol(self, p):
        """Symbolic coding of a point when the system has one, else None."""
        return None

    def recommended_delta(self, rho, max_lipschitz):
        """Largest rectangle diameter compatible with the bank modulus and geometry."""
        return rho / (2.0 * max_lipschitz)


def _torus_metric(p, q):
    d = np.abs(_pts(p) - _pts(q)) % 1.0
    d = np.minimum(d, 1.0 - d)
    return d.max(axis=-1)


class AffineHorseshoe(MapSystem):
    """Two-branch affine horseshoe on the unit square.

    The left branch maps the vertical strip x in [0, 1/3] by
    (x, y) -> (3x, y/3); the right branch maps x in [2/3, 1] by
    (x, y) -> (3 - 3x, 1 - y/3) and reverses orientation.  Horizontal
    distances expand by 3, vertical ones contract by 1/3, so the invariant
    set carries exponents exactly +-log 3.  The x/y coordinates of invariant
    points are coded by binary digit strings through the two inverse
    branches, which makes exact cylinder geometry available to tests.
    """

    name = "affine_horseshoe"
    expansion = 3.0
    gap = 1.0 / 3.0
    _tol = 1e-12

    def _left(self, p):
        return p[..., 0] <= 1.0 / 3.0 + self._tol

    def forward(self, p):
        p = _pts(p)
        left = self._left(p)
        x, y = p[..., 0], p[..., 1]
        fx = np.where(left, 3.0 * x, 3.0 - 3.0 * x)
        fy = np.where(left, y / 3.0, 1.0 - y / 3.0)
        return np.stack([fx, fy], axis=-1)

    def backward(self, p):
        p = _pts(p)
        bottom = p[..., 1] <= 1.0 / 3.0 + self._tol
        x, y = p[..., 0], p[..., 1]
        bx = np.where(bottom, x / 3.0, 1.0 - x / 3.0)
        by = np.where(bottom, 3.0 * y, 3.0 - 3.0 * y)
        return np.stack([bx, by], axis=-1)

    def jacobian(self, p):
        p = _pts(p)
        left = self._left(p)
        sign = np.where(left, 1.0, -1.0)
        j = np.zeros(p.shape[:-1] + (2, 2))
        j[..., 0, 0] = 3.0 * sign
        j[..., 1, 1] = sign / 3.0
        return j

    def domain_test(self, p):
        p = _pts(p)
        x, y = p[..., 0], p[..., 1]
        in_strip = (x >= -self._tol) & (
            (x <= 1.0 / 3.0 + self._tol) | (x >= 2.0 / 3.0 - self._tol)
        ) & (x <= 1.0 + self._tol)
        return in_strip & (y >= -self._tol) & (y <= 1.0 + self._tol)

    def strip_symbol(self, p):
        p = _pts(p)
        return np.where(self._left(p), 0, 1)

    def stable_cone(self):
        return ConeField(np.array([0.0, 1.0]), 0.3, "stable")

    def unstable_cone(self):
        return ConeField(np.array([1.0, 0.0]), 0.3, "unstable")

    def lambda_floor(self):
        # Width-0.3 cone vectors expand by at least 3*cos(0.3) ~ 2.866 per step.
        return 2.8

    def recommended_delta(self, rho, max_lipschitz):
        return min(rho / (2.0 * max_lipschitz), self.gap / 2.0)

    # Exact symbolic coding helpers. --------------------------------------

    @staticmethod
    def x_from_forward_digits(digits):
        """x-coordinate of the point whose forward strip itinerary is `digits`.

        digits: array (..., K) of 0/1; precision 3^-K.
        """
        digits = np.asarray(digits)
        x = np.full(digits.shape[:-1], 0.5)
        for k in range(digits.shape[-1] - 1, -1, -1):
            d = digits[..., k]
            x = np.where(d == 0, x / 3.0, 1.0 - x / 3.0)
        return x

    @staticmethod
    def y_from_backward_digits(digits):
        """y-coordinate from the backward itinerary (a_-1, a_-2, ...)."""
        digits = np.asarray(digits)
        y = np.full(digits.shape[:-1], 0.5)
        for k in range(digits.shape[-1] - 1, -1, -1):
            d = digits[..., k]
            y = np.where(d == 0, y / 3.0, 1.0 - y / 3.0)
        return y

    @classmethod
    def point_from_digits(cls, forward_digits, backward_digits):
        x = cls.x_from_forward_digits(forward_digits)
        y = cls.y_from_backward_digits(backward_digits)
        return np.stack([x, y], axis=-1)

    @staticmethod
    def periodic_point(word):
        """Exact periodic point whose strip itinerary repeats `word`.

        Solves the fixed-point equations of the composed affine inverse
        branches, so the result is exact up to float rounding.
        """
        word = [int(w) for w in word]
        # x solves x = g_{w0}^-1(g_{w1}^-1(... g_{w_{N-1}}^-1(x))); build the
        # composition outermost-last, tracking the affine map t -> a + b t.
        a, b = 0.0, 1.0
        for w in reversed(word):
            if w == 0:
                a, b = a / 3.0, b / 3.0
            else:
                a, b = 1.0 - a / 3.0, -b / 3.0
        x = a / (1.0 - b)
        # y solves y = h_{w_{N-1}}(... h_{w_0}(y)) with h_0: t/3, h_1: 1 - t/3.
        a, b = 0.0, 1.0
        for w in word:
            if w == 0:
                a, b = a / 3.0, b / 3.0
            else:
                a, b = 1.0 - a / 3.0, -b / 3.0
        y = a / (1.0 - b)
        return np.array([x, y])


class CatMap(MapSystem):
    """Hyperbolic toral automorphism [[2, 1], [1, 1]] mod 1 with the flat metric."""

    name = "cat_map"
    matrix = np.array([[2.0, 1.0], [1.0, 1.0]])
    inverse_matrix = np.array([[1.0, -1.0], [-1.0, 2.0]])

    def forward(self, p):
        p = _pts(p)
        return (p @ self.matrix.T) % 1.0

    def backward(self, p):
        p = _pts(p)
        return (p @ self.inverse_matrix.T) % 1.0

    def jacobian(self, p):
        p = _pts(p)
        return np.broadcast_to(self.matrix, p.shape[:-1] + (2, 2)).copy()

    def domain_test(self, p):
        p = _pts(p)
        return np.ones(p.shape[:-1], dtype=bool)

    def metric(self, p, q):
        return _torus_metric(p, q)

    def diameter(self):
        return 0.5

    def _eigvec(self, eigval):
        v = np.array([1.0, eigval - 2.0])
        return v / np.linalg.norm(v)

    def stable_cone(self):
        return ConeField(self._eigvec((3.0 - _SQRT5) / 2.0), 0.3, "stable")

    def unstable_cone(self):
        return ConeField(self._eigvec(CAT_EXPANSION), 0.3, "unstable")

    def lambda_floor(self):
        # Width-0.3 unstable cone vectors expand by >= lambda_u * cos(0.3).
        return 2.45

    def recommended_delta(self, rho, max_lipschitz):
        return min(rho / (2.0 * max_lipschitz), 0.25)


class HenonMap(MapSystem):
    """Henon map restricted to a documented box around the attractor.

    Box [-1.8, 1.8] x [-0.6, 0.6] contains the classical attractor for
    (a, b) = (1.4, 0.3); orbits leaving it raise OrbitEscaped.  Cone data
    is heuristic: hyperbolicity is nonuniform, so horseshoe construction on
    this system is best-effort and flagged experimental by the pipeline.
    """

    name = "henon"
    experimental = True

    def __init__(self, a=1.4, b=0.3, box=(-1.8, 1.8, -0.6, 0.6)):
        self.a = float(a)
        self.b = float(b)
        self.box = tuple(float(v) for v in box)

    def forward(self, p):
        p = _pts(p)
        x, y = p[..., 0], p[..., 1]
        return np.stack([1.0 - self.a * x * x + y, self.b * x], axis=-1)

    def backward(self, p):
        p = _pts(p)
        x, y = p[..., 0], p[..., 1]
        xp = y / self.b
        return np.stack([xp, x - 1.0 + self.a * xp * xp], axis=-1)

    def jacobian(self, p):
        p = _pts(p)
        j = np.zeros(p.shape[:-1] + (2, 2))
        j[..., 0, 0] = -2.0 * self.a * p[..., 0]
        j[..., 0, 1] = 1.0
        j[..., 1, 0] = self.b
        return j

    def domain_test(self, p):
        p = _pts(p)
        x0, x1, y0, y1 = self.box
        x, y = p[..., 0], p[..., 1]
        return (x >= x0) & (x <= x1) & (y >= y0) & (y <= y1)

    def diameter(self):
        x0, x1, y0, y1 = self.box
        return max(x1 - x0, y1 - y0)

    def stable_cone(self):
        return ConeField(np.array([0.0, 1.0]), 0.5, "stable")

    def unstable_cone(self):
        return ConeField(np.array([1.0, 0.0]), 0.5, "unstable")

    def lambda_floor(self):
        return 1.2


class RigidRotation(MapSystem):
    """Torus translation by a badly-approximable vector; the negative control.

    An isometry with identity derivative: every exponent vanishes, so all
    hyperbolicity certificates must reject it.
    """

    name = "rotation"

    def __init__(self, alpha=(_SQRT5 - 1.0) / 2.0, beta=math.sqrt(2.0) - 1.0):
        self.shift = np.array([float(alpha), float(beta)])

    def forward(self, p):
        return (_pts(p) + self.shift) % 1.0

    def backward(self, p):
        return (_pts(p) - self.shift) % 1.0

    def jacobian(self, p):
        p = _pts(p)
        return np.broadcast_to(np.eye(2), p.shape[:-1] + (2, 2)).copy()

    def domain_test(self, p):
        p = _pts(p)
        return np.ones(p.shape[:-1], dtype=bool)

    def metric(self, p, q):
        return _torus_metric(p, q)

    def diameter(self):
        return 0.5

    def stable_cone(self):
        return ConeField(np.array([0.0, 1.0]), 0.3, "stable")

    def unstable_cone(self):
        return ConeField(np.array([1.0, 0.0]), 0.3, "unstable")

    def lambda_floor(self):
        return 1.5


BUILTIN_SYSTEMS = {
    "affine_horseshoe": AffineHorseshoe,
    "cat_map": CatMap,
    "henon": HenonMap,
    "rotation": RigidRotation,
}


def make_system(name, **kwargs):
    try:
        return BUILTIN_SYSTEMS[name](**kwargs)
    except KeyError:
        raise KeyError(f"unknown system {name!r}; known: {sorted(BUILTIN_SYSTEMS)}") from None


# ---------------------------------------------------------------------------
# Orbits and Birkhoff sums
# ---------------------------------------------------------------------------


def iterate(system, x, n):
    """Forward orbit segment of length n; raises OrbitEscaped(k) on exit.

    points[k] = f^k(x) for 0 <= k < n; every point must pass domain_test.
    """
    x = _pts(x)
    if n < 1:
        raise ValueError("orbit length must be >= 1")
    pts = np.empty((n, 2))
    p = x
    for k in range(n):
        if not bool(system.domain_test(p)):
            raise OrbitEscaped(k, p)
        pts[k] = p
        if k + 1 < n:
            p = system.forward(p)
    return OrbitSegment(base_point=x.copy(), length=int(n), points=pts)


def orbit_array(system, points, steps):
    """Batched orbits: returns (orbits, escape) for points of shape (N, 2).

    orbits has shape (N, steps, 2); escape[i] is the first step at which
    orbit i left the domain (steps if it never did).  Escaped entries hold
    their last in-domain value frozen, so downstream masking is explicit.
    """
    points = np.atleast_2d(_pts(points))
    n = points.shape[0]
    orbits = np.empty((n, steps, 2))
    escape = np.full(n, steps, dtype=int)
    p = points.copy()
    alive = np.ones(n, dtype=bool)
    for k in range(steps):
        ok = system.domain_test(p)
        newly_dead = alive & ~ok
        escape[newly_dead] = k
        alive &= ok
        orbits[:, k, :] = p
        if k + 1 < steps:
            nxt = system.forward(p)
            p = np.where(alive[:, None], nxt, p)
    return orbits, escape


def birkhoff_sum(orbit, phi, k):
    """S_k(phi)(x) = sum_{j<k} phi(f^j x) along a stored orbit segment."""
    if not (1 <= k <= orbit.length):
        raise IndexOutOfRange(f"horizon {k} outside orbit of length {orbit.length}")
    return float(orbit.prefix_sums(phi)[k])


# ---------------------------------------------------------------------------
# Derivative cocycle, Lyapunov exponents, cones
# ---------------------------------------------------------------------------


def _scaled_product(jacobians):
    """Product of 2x2 matrices in scaled form.

    Returns (mhat, logscale, logdet) with product = exp(logscale) * mhat and
    log|det(product)| = logdet.  Frobenius rescaling at every step keeps mhat
    O(1), so direction data and the top singular value stay accurate at any
    horizon; the bottom singular value is recovered from logdet.
    """
    m = np.eye(2)
    logscale = 0.0
    logdet = 0.0
    for j in jacobians:
        det = j[0, 0] * j[1, 1] - j[0, 1] * j[1, 0]
        if det == 0.0 or not np.isfinite(det):
            raise DegenerateCocycle("jacobian with zero or non-finite determinant")
        logdet += math.log(abs(det))
        m = j @ m
        f = math.sqrt(float(np.sum(m * m)))
        if f == 0.0 or not math.isfinite(f):
            raise DegenerateCocycle("cocycle product underflow")
        m /= f
        logscale += math.log(f)
    return m, logscale, logdet


def finite_time_lyapunov(system, x, n):
    """Exponents of Df^n(x) from exact singular values of the scaled product.

    log sigma_max comes from the rescaled product directly; log sigma_min is
    recovered as log|det Df^n| - log sigma_max, which stays accurate long
    after the raw ratio sigma_min/sigma_max underflows.  Splitting directions
    are the right singular vectors of the product.
    """
    orbit = iterate(system, x, n)
    jacs = system.jacobian(orbit.points)
    mhat, logscale, logdet = _scaled_product(jacs)
    u, s, vt = np.linalg.svd(mhat)
    if s[0] <= 0.0:
        raise DegenerateCocycle("vanishing singular value")
    log_smax = logscale + math.log(s[0])
    log_smin = logdet - log_smax
    exps = np.array([log_smin / n, log_smax / n])
    # right singular vectors: row 0 of vt pairs with sigma_max
    ang_max = math.degrees(math.atan2(vt[0, 1], vt[0, 0])) % 180.0
    ang_min = math.degrees(math.atan2(vt[1, 1], vt[1, 0])) % 180.0
    return LyapunovReport(
        horizon=int(n),
        exponents=exps,
        min_abs=float(np.min(np.abs(exps))),
        direction_angles=np.array([ang_min, ang_max]),
    )


def rate_of_hyperbolicity_point(system, x, n):
    """chi(x) at horizon n: the smallest absolute finite-time exponent."""
    return finite_time_lyapunov(system, x, n).min_abs


def rate_of_hyperbolicity_measure(system, sample):
    """Sample-mean rate of hyperbolicity over (point, horizon) pairs."""
    sample = list(sample)
    if not sample:
        raise EmptySample("rate_of_hyperbolicity_measure needs a nonempty sample")
    return float(np.mean([rate_of_hyperbolicity_point(system, x, n) for x, n in sample]))


def _fan_directions(cone, point, rays=17):
    """Unit directions spanning the cone at `point`: `rays` across the fan plus center."""
    c = cone.direction(point)
    base = math.atan2(c[1], c[0])
    angles = np.concatenate([np.linspace(-cone.width, cone.width, rays), [0.0]])
    th = base + angles
    return np.stack([np.cos(th), np.sin(th)], axis=-1)


def _angle_to(v, center):
    """Unsigned angle (mod pi) between direction v and a center direction."""
    nv = np.linalg.norm(v)
    if nv == 0.0:
        return math.pi / 2.0
    c = abs(float(np.dot(v, center))) / nv
    return math.acos(min(1.0, c))


def cone_preservation_check(system, x, R, cones, lambda_min, rays=17):
    """Certify R-step cone invariance with expansion floor lambda_min.

    cones is the pair (stable_cone, unstable_cone).  For every k in 1..R the
    derivative product must map the unstable fan at x strictly inside the
    unstable cone at f^k(x) while stretching each fan vector by at least
    lambda_min**k; symmetrically, the inverse product must contract the
    stable fan at f^k(x) strictly into the stable cone at x with the same
    floor.  Membership is tested on `rays` equally spaced boundary-fan
    directions plus the center, which decides invariance for planar cones
    under a linear map.
    """
    stable, unstable = cones
    orbit = iterate(system, x, R + 1)
    jacs = system.jacobian(orbit.points[:R])
    log_floor = math.log(lambda_min)

    u_fan = _fan_directions(unstable, orbit.points[0], rays)
    m = np.eye(2)
    logscale = 0.0
    logdet = 0.0
    for k in range(1, R + 1):
        j = jacs[k - 1]
        det = j[0, 0] * j[1, 1] - j[0, 1] * j[1, 0]
        if det == 0.0:
            return False
        logdet += math.log(abs(det))
        m = j @ m
        f = math.sqrt(float(np.sum(m * m)))
        m /= f
        logscale += math.log(f)

        target_u = unstable.direction(orbit.points[k])
        img = u_fan @ m.T
        norms = np.linalg.norm(img, axis=-1)
        if np.any(norms == 0.0):
            return False
        # strict cone membership at f^k(x)
        cosang = np.abs(img @ target_u) / norms
        if np.any(np.arccos(np.clip(cosang, 0.0, 1.0)) >= unstable.width):
            return False
        # expansion floor: ||Df^k v|| >= lambda_min^k for unit fan vectors
        if np.any(logscale + np.log(norms) < k * log_floor):
            return False

        # stable side under the inverse: adj(mhat) v has direction of m^{-1} v,
        # and log ||Df^{-k} v|| = log ||adj(mhat) v|| - logdet + logscale.
        s_fan = _fan_directions(stable, orbit.points[k], rays)
        adj = np.array([[m[1, 1], -m[0, 1]], [-m[1, 0], m[0, 0]]])
        back = s_fan @ adj.T
        bnorms = np.linalg.norm(back, axis=-1)
        if np.any(bnorms == 0.0):
            return False
        target_s = stable.direction(orbit.points[0])
        cosang = np.abs(back @ target_s) / bnorms
        if np.any(np.arccos(np.clip(cosang, 0.0, 1.0)) >= stable.width):
            return False
        if np.any(np.log(bnorms) - logdet + logscale < k * log_floor):
            return False
    return True
