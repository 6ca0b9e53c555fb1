"""Test-function banks, empirical measures and weak-* neighborhood tests.

A bank is an ordered list of sup-norm-1 observables with documented
Lipschitz constants; ordering is part of the contract because neighborhood
membership only inspects the first ``s`` entries.  Reference measures cache
their bank moments at construction, so membership tests are deterministic.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import finite_time_lyapunov, iterate, orbit_array
from .errors import (
    BankMismatch,
    DegenerateSplitting,
    EmptySample,
    OrbitEscaped,
)

log = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class BankFunction:
    """One observable: name, vectorized evaluation, Lipschitz constant.

    ``form`` is a small tag describing the functional form, consumed by the
    exact moment formulas for the analytic reference measures:
    ("cos", axis, m) / ("sin", axis, m) for cos/sin(2 pi m x_axis),
    ("coscos", m) / ("sinsin", m) for the separable products.
    """

    name: str
    fn: object
    lipschitz: float
    form: tuple

    def __call__(self, points):
        return np.asarray(self.fn(np.asarray(points, float)), dtype=float)


def _cos(axis, m):
    return BankFunction(
        f"cos(2pi*{m}{'xy'[axis]})",
        lambda p, a=axis, mm=m: np.cos(TWO_PI * mm * p[..., a]),
        TWO_PI * m,
        ("cos", axis, m),
    )


def _sin(axis, m):
    return BankFunction(
        f"sin(2pi*{m}{'xy'[axis]})",
        lambda p, a=axis, mm=m: np.sin(TWO_PI * mm * p[..., a]),
        TWO_PI * m,
        ("sin", axis, m),
    )


def _coscos(m):
    return BankFunction(
        f"cos(2pi*{m}x)cos(2pi*{m}y)",
        lambda p, mm=m: np.cos(TWO_PI * mm * p[..., 0]) * np.cos(TWO_PI * mm * p[..., 1]),
        2.0 * TWO_PI * m,  # w.r.t. the max metric
        ("coscos", m),
    )


def _sinsin(m):
    return BankFunction(
        f"sin(2pi*{m}x)sin(2pi*{m}y)",
        lambda p, mm=m: np.sin(TWO_PI * mm * p[..., 0]) * np.sin(TWO_PI * mm * p[..., 1]),
        2.0 * TWO_PI * m,
        ("sinsin", m),
    )


@dataclass(frozen=True)
class TestFunctionBank:
    """Ordered bank psi_1..psi_S; index order is part of the contract."""

    __test__ = False  # keep pytest from collecting the class by name

    bank_id: str
    functions: tuple

    @property
    def size(self):
        return len(self.functions)

    def evaluate(self, points):
        """Stacked evaluation: (..., S) array of psi_i values."""
        points = np.asarray(points, float)
        return np.stack([f(points) for f in self.functions], axis=-1)

    def max_lipschitz(self, s=None):
        s = self.size if s is None else int(s)
        return max(f.lipschitz for f in self.functions[:s])


def default_bank():
    """The 8-function low-frequency trig bank on box/torus coordinates."""
    return TestFunctionBank(
        "trig8",
        (
            _cos(0, 1),
            _sin(0, 1),
            _cos(1, 1),
            _sin(1, 1),
            _coscos(1),
            _sinsin(1),
            _cos(0, 2),
            _cos(1, 2),
        ),
    )


# ---------------------------------------------------------------------------
# Exact marginal moments for the self-similar Bernoulli measure
# ---------------------------------------------------------------------------


def _ifs_mean(p):
    """E[X] for the invariant law of {t/3 w.p. p, 1 - t/3 w.p. 1-p}."""
    return 3.0 * (1.0 - p) / (4.0 - 2.0 * p)


def _ifs_second_moment(p):
    m1 = _ifs_mean(p)
    return (9.0 / 8.0) * (1.0 - p) * (1.0 - 2.0 * m1 / 3.0)


def ifs_trig_moments(t, p, depth=48):
    """(E cos(tX), E sin(tX)) for the self-similar law above, to ~1e-15.

    The law satisfies X = X'/3 with probability p and X = 1 - X'/3 with
    probability 1-p, which closes the pair of expectations under t -> t/3:
        C(t) = p C(t/3) + (1-p)[cos t C(t/3) + sin t S(t/3)]
        S(t) = p S(t/3) + (1-p)[sin t C(t/3) - cos t S(t/3)]
    Unwinding `depth` levels leaves a base argument ~ t/3^depth where the
    two-term Taylor expansion is exact to well below double rounding.
    """
    t = float(t)
    if t == 0.0:
        return 1.0, 0.0
    m1, m2 = _ifs_mean(p), _ifs_second_moment(p)
    tb = t / 3.0**depth
    c = 1.0 - 0.5 * tb * tb * m2
    s = tb * m1
    for k in range(depth - 1, -1, -1):
        tk = t / 3.0**k
        ck, sk = math.cos(tk), math.sin(tk)
        c, s = p * c + (1.0 - p) * (ck * c + sk * s), p * s + (1.0 - p) * (sk * c - ck * s)
    return c, s


def _analytic_moment(form, kind, p=None):
    """Exact bank moment for 'lebesgue_torus' or 'bernoulli_ifs' measures."""
    if kind == "lebesgue_torus":
        return 0.0  # every bank form is a mean-zero character or product
    if kind != "bernoulli_ifs":
        raise ValueError(f"no analytic moments for measure kind {kind!r}")
    tag = form[0]
    if tag in ("cos", "sin"):
        _, _, m = form
        c, s = ifs_trig_moments(TWO_PI * m, p)
        return c if tag == "cos" else s
    if tag == "coscos":
        c, _ = ifs_trig_moments(TWO_PI * form[1], p)
        return c * c
    if tag == "sinsin":
        _, s = ifs_trig_moments(TWO_PI * form[1], p)
        return s * s
    raise ValueError(f"unknown bank form {form!r}")


# ---------------------------------------------------------------------------
# Measures
# ---------------------------------------------------------------------------


class EmpiricalMeasure:
    """Time-average measure of a finite orbit segment, queried via the bank."""

    def __init__(self, orbit, bank):
        self.orbit = orbit
        self.length = orbit.length
        self.bank = bank
        self.bank_id = bank.bank_id
        self._moments = None

    def integrate(self, psi):
        """Mean of psi over the orbit points; psi is a callable or bank index."""
        if isinstance(psi, (int, np.integer)):
            return float(self.moment_vector()[int(psi)])
        return float(np.mean(np.asarray(psi(self.orbit.points), dtype=float)))

    def moment_vector(self):
        if self._moments is None:
            self._moments = self.bank.evaluate(self.orbit.points).mean(axis=0)
        return self._moments


class ReferenceMeasure:
    """A target invariant measure with frozen bank moments.

    kind is one of 'lebesgue_torus', 'bernoulli_ifs' (exact moments) or
    'long_orbit' (moments frozen from a documented orbit at construction).
    """

    def __init__(self, mu_id, kind, bank, moments, params=None):
        self.mu_id = mu_id
        self.kind = kind
        self.bank = bank
        self.bank_id = bank.bank_id
        self.params = dict(params or {})
        self.moments = np.asarray(moments, dtype=float)
        if self.moments.shape != (bank.size,):
            raise ValueError("moment vector length must equal the bank size")

    @classmethod
    def lebesgue_torus(cls, bank):
        m = [_analytic_moment(f.form, "lebesgue_torus") for f in bank.functions]
        return cls("lebesgue", "lebesgue_torus", bank, m)

    @classmethod
    def bernoulli_horseshoe(cls, p, bank):
        p = float(p)
        if not (0.0 < p < 1.0):
            raise ValueError("bernoulli weight must lie in (0, 1)")
        m = [_analytic_moment(f.form, "bernoulli_ifs", p) for f in bank.functions]
        return cls(f"bernoulli({p:g})", "bernoulli_ifs", bank, m, {"p": p})

    @classmethod
    def long_orbit(cls, system, x0, length, bank):
        orbit = iterate(system, x0, length)
        emp = EmpiricalMeasure(orbit, bank)
        mu_id = f"long_orbit({system.name},n={length})"
        return cls(mu_id, "long_orbit", bank, emp.moment_vector(), {"length": length})

    def integrate(self, index):
        return float(self.moments[int(index)])

    def moment_vector(self):
        return self.moments

    def entropy(self):
        """Exact Kolmogorov-Sinai entropy when known for the built-ins."""
        if self.kind == "bernoulli_ifs":
            p = self.params["p"]
            return -p * math.log(p) - (1.0 - p) * math.log(1.0 - p)
        if self.kind == "lebesgue_torus":
            from .dynamics import CAT_EXPANSION

            return math.log(CAT_EXPANSION)
        return None


@dataclass(frozen=True)
class NeighborhoodSpec:
    """Weak-* neighborhood parameters: radius rho over the first s functions."""

    rho: float
    s: int

    def __post_init__(self):
        if self.rho <= 0.0:
            raise ValueError("rho must be positive")
        if self.s < 1:
            raise ValueError("s must be at least 1")

    def halved(self):
        return NeighborhoodSpec(self.rho / 2.0, self.s)


def _check_bank(bank, *measures):
    for m in measures:
        if m.bank_id != bank.bank_id:
            raise BankMismatch(f"measure built on bank {m.bank_id!r}, expected {bank.bank_id!r}")


def in_weak_star_neighborhood(nu, mu, spec, bank):
    """Strict test: |int psi_i d nu - int psi_i d mu| < rho for all i <= s."""
    if spec.s > bank.size:
        raise ValueError("spec.s exceeds the bank size")
    _check_bank(bank, nu, mu)
    dn = nu.moment_vector()[: spec.s]
    dm = mu.moment_vector()[: spec.s]
    return bool(np.all(np.abs(dn - dm) < spec.rho))


def is_quasi_generic(x, n, spec, mu, system, bank):
    """Non-strict test on length-n Birkhoff averages: discrepancy <= rho.

    The boundary convention differs deliberately from neighborhood
    membership (strict there, closed here).
    """
    if spec.s > bank.size:
        raise ValueError("spec.s exceeds the bank size")
    _check_bank(bank, mu)
    orbit = iterate(system, x, n)
    avg = bank.evaluate(orbit.points)[:, : spec.s].mean(axis=0)
    return bool(np.all(np.abs(avg - mu.moment_vector()[: spec.s]) <= spec.rho))


def quasi_generic_window_mask(system, points, n0, nmax, spec, mu, bank):
    """Vectorized window test used by the filter and the pipeline.

    Returns (mask, escape_steps): mask[i] is True iff point i stays in the
    domain for nmax steps and its length-n averages of psi_1..psi_s are
    within rho of the mu moments for every n in [n0, nmax].
    """
    if n0 > nmax:
        raise ValueError("window requires n0 <= nmax")
    points = np.atleast_2d(np.asarray(points, float))
    orbits, escape = orbit_array(system, points, nmax)
    alive = escape >= nmax
    vals = bank.evaluate(orbits)[:, :, : spec.s]  # (N, nmax, s)
    csums = np.cumsum(vals, axis=1)
    lengths = np.arange(n0, nmax + 1, dtype=float)
    window = csums[:, n0 - 1 : nmax, :] / lengths[None, :, None]
    target = mu.moment_vector()[: spec.s]
    ok = np.all(np.abs(window - target[None, None, :]) <= spec.rho, axis=(1, 2))
    return ok & alive, escape


def filter_quasi_generic_set(candidates, n0, nmax, spec, mu, system, bank):
    """Keep candidates quasi-generic at every horizon in [n0, nmax].

    Order-preserving subset of the input; escaped orbits are dropped and
    counted in a log record rather than raising.
    """
    candidates = list(candidates)
    if not candidates:
        return []
    mask, escape = quasi_generic_window_mask(system, np.array(candidates), n0, nmax, spec, mu, bank)
    dropped = int(np.sum(escape < nmax))
    if dropped:
        log.info("filter_quasi_generic_set dropped %d escaped candidates", dropped)
    return [np.asarray(c, float) for c, ok in zip(candidates, mask) if ok]


# ---------------------------------------------------------------------------
# Finite-horizon Pesin-type window check
# ---------------------------------------------------------------------------


def _running_min_singular_logs(jacobians):
    """log sigma_min of the partial products, one value per step.

    Uses the scaled-product representation: sigma_min at step n equals
    |det| / sigma_max, both of which stay accurate in log form long after
    the raw singular-value ratio underflows.  Direct forward multiplication
    of a stable vector cannot verify contraction past ~17 steps in doubles
    (rounding noise is re-expanded at the top rate), so the restricted norm
    on the computed splitting is evaluated through the singular values.
    """
    m = np.eye(2)
    logscale = 0.0
    logdet = 0.0
    out = []
    for j in jacobians:
        det = j[0, 0] * j[1, 1] - j[0, 1] * j[1, 0]
        if det == 0.0:
            raise DegenerateSplitting("singular jacobian in the window")
        logdet += math.log(abs(det))
        m = j @ m
        f = math.sqrt(float(np.sum(m * m)))
        m /= f
        logscale += math.log(f)
        smax = float(np.linalg.svd(m, compute_uv=False)[0])
        out.append(logdet - (logscale + math.log(smax)))
    return out


def pesin_window_check(system, x, ell, chi, horizon):
    """Uniform-hyperbolicity window test with the computed splitting.

    The splitting at each window horizon n is the most-contracted /
    most-expanded direction pair of the derivative product at that horizon,
    so the restricted norms are its extreme singular values.  Checks, for
    every n <= horizon, forward contraction of the stable line and backward
    contraction of the unstable line at rate chi with prefactor ell, plus a
    splitting angle of at least 1/ell radians at the full horizon.
    """
    if ell < 1.0 or chi <= 0.0 or horizon < 1:
        raise ValueError("need ell >= 1, chi > 0, horizon >= 1")
    report = finite_time_lyapunov(system, x, horizon)
    if report.min_abs < 1e-3:
        raise DegenerateSplitting(f"minimal exponent {report.min_abs:.2e} below 1e-3")
    ang_s, ang_u = np.radians(report.direction_angles)
    v_s = np.array([math.cos(ang_s), math.sin(ang_s)])
    v_u = np.array([math.cos(ang_u), math.sin(ang_u)])
    angle = math.acos(min(1.0, abs(float(np.dot(v_s, v_u)))))
    if angle < 1.0 / ell:
        return False

    log_ell = math.log(ell)
    orbit = iterate(system, x, horizon)
    fwd = _running_min_singular_logs(system.jacobian(orbit.points))
    for n, log_min in enumerate(fwd, start=1):
        if log_min > log_ell - n * chi:
            return False
    # backward cocycle: inverse jacobians along f^-1(x), f^-2(x), ...
    back_jacs = []
    y = np.asarray(x, float)
    for n in range(1, horizon + 1):
        y = system.backward(y)
        if not bool(system.domain_test(y)):
            raise OrbitEscaped(n, y)
        j = system.jacobian(y)
        det = j[0, 0] * j[1, 1] - j[0, 1] * j[1, 0]
        back_jacs.append(np.array([[j[1, 1], -j[0, 1]], [-j[1, 0], j[0, 0]]]) / det)
    for n, log_min in enumerate(_running_min_singular_logs(back_jacs), start=1):
        if log_min > log_ell - n * chi:
            return False
    return True


# ---------------------------------------------------------------------------
# Samplers for the built-in reference measures
# ---------------------------------------------------------------------------


def sample_reference(system, mu, count, rng, word_depth=60, transient=300):
    """Draw `count` mu-distributed points of the system's invariant set.

    Horseshoe Bernoulli points are built exactly from random two-sided digit
    strings (truncation 3^-word_depth, far below rounding); torus measures
    sample coordinates directly; long-orbit references walk their orbit with
    seeded random thinning.
    """
    count = int(count)
    if count < 1:
        raise EmptySample("sample count must be positive")
    if mu.kind == "bernoulli_ifs":
        p = mu.params["p"]
        fwd = (rng.random((count, word_depth)) < (1.0 - p)).astype(np.int8)
        bwd = (rng.random((count, word_depth)) < (1.0 - p)).astype(np.int8)
        return system.point_from_digits(fwd, bwd)
    if mu.kind == "lebesgue_torus":
        return rng.random((count, 2))
    if mu.kind == "long_orbit":
        # burn in toward the attractor, then thin a long orbit
        x = np.array([0.1, 0.1])
        for _ in range(transient):
            x = system.forward(x)
        pts = np.empty((count, 2))
        stride = int(rng.integers(3, 11))
        for i in range(count):
            for _ in range(stride):
                x = system.forward(x)
            pts[i] = x
        return pts
    raise ValueError(f"no sampler for measure kind {mu.kind!r}")
