"""Bowen balls, separated/spanning sets and pressure sums over them.

Distances come from the system metric (max over coordinates), so Bowen
balls are coordinate boxes and align with cylinder structure on the
built-in horseshoe.  All sums are accumulated with log-sum-exp in a fixed
order, keeping reports bit-stable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import orbit_array
from .errors import CoverageUnreachable, EmptySet, OrbitEscaped

__all__ = [
    "BowenBallSpec",
    "SeparatedSet",
    "PressureEstimate",
    "bowen_ball_contains",
    "is_separated",
    "maximal_separated_set",
    "separated_pressure_sum",
    "spanning_free_energy",
    "logsumexp",
]


def logsumexp(values):
    """Stable log(sum(exp(values))) over a 1-d array; -inf on empty input."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return -math.inf
    m = float(np.max(values))
    if not math.isfinite(m):
        return m
    return m + math.log(float(np.sum(np.exp(values - m))))


@dataclass(frozen=True)
class BowenBallSpec:
    """Radius epsilon and horizon n of a dynamical ball B(x, epsilon, n)."""

    epsilon: float
    n: int

    def __post_init__(self):
        if self.epsilon <= 0.0:
            raise ValueError("epsilon must be positive")
        if self.n < 1:
            raise ValueError("n must be at least 1")


@dataclass(frozen=True)
class SeparatedSet:
    """A pairwise (epsilon, n)-separated point family."""

    points: tuple
    spec: BowenBallSpec
    maximal: bool = False
    skipped: int = 0  # escaped inputs dropped during construction

    def __len__(self):
        return len(self.points)

    def as_array(self):
        return np.array(self.points, dtype=float)


@dataclass(frozen=True)
class PressureEstimate:
    """A pressure value (nats/iterate) with its method tag and bracket."""

    value: float
    n: int
    method: str
    lower: float
    upper: float
    meta: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not (self.lower <= self.value + 1e-12 and self.value <= self.upper + 1e-12):
            raise ValueError("estimate bracket must satisfy lower <= value <= upper")


def _orbits_or_raise(system, points, n):
    orbits, escape = orbit_array(system, points, n)
    bad = np.nonzero(escape < n)[0]
    if bad.size:
        raise OrbitEscaped(int(escape[bad[0]]), points[bad[0]])
    return orbits


def bowen_ball_contains(system, x, y, spec):
    """True iff dist(f^j x, f^j y) < epsilon for all 0 <= j <= n-1."""
    pts = np.array([x, y], dtype=float)
    orbits = _orbits_or_raise(system, pts, spec.n)
    d = system.metric(orbits[0], orbits[1])
    return bool(np.all(d < spec.epsilon))


def _pairwise_separated_matrix(system, orbits, epsilon):
    """Boolean matrix: entry (i, j) True iff orbits i, j are separated."""
    n = orbits.shape[0]
    sep = np.zeros((n, n), dtype=bool)
    for i in range(n):
        d = system.metric(orbits[i][None, :, :], orbits)  # (n, steps)
        sep[i] = np.any(d > epsilon, axis=-1)
    return sep


def is_separated(system, points, spec):
    """True iff every distinct pair has some step with distance > epsilon."""
    pts = np.atleast_2d(np.asarray(points, float))
    if pts.shape[0] <= 1:
        return True
    orbits = _orbits_or_raise(system, pts, spec.n)
    sep = _pairwise_separated_matrix(system, orbits, spec.epsilon)
    np.fill_diagonal(sep, True)
    return bool(np.all(sep))


def maximal_separated_set(system, sample, spec):
    """Greedy one-pass maximal separated subset, deterministic in input order.

    A point is accepted iff it is (epsilon, n)-separated from every point
    accepted before it; escaped orbits are skipped and counted.  The result
    is maximal relative to the sample: re-adding any rejected point breaks
    separation.
    """
    sample = [np.asarray(p, float) for p in sample]
    if not sample:
        return SeparatedSet(points=(), spec=spec, maximal=True, skipped=0)
    orbits, escape = orbit_array(system, np.array(sample), spec.n)
    alive = escape >= spec.n
    accepted = []
    accepted_orbits = None
    skipped = int(np.sum(~alive))
    for i in range(len(sample)):
        if not alive[i]:
            continue
        if accepted_orbits is None:
            accepted.append(i)
            accepted_orbits = orbits[i][None, :, :]
            continue
        d = system.metric(orbits[i][None, :, :], accepted_orbits)
        if np.all(np.any(d > spec.epsilon, axis=-1)):
            accepted.append(i)
            accepted_orbits = np.concatenate([accepted_orbits, orbits[i][None, :, :]])
    return SeparatedSet(
        points=tuple(sample[i] for i in accepted),
        spec=spec,
        maximal=True,
        skipped=skipped,
    )


def separated_pressure_sum(system, separated, phi):
    """(1/n) log sum_{x in E} exp S_n(phi)(x) over a separated set."""
    if len(separated.points) == 0:
        raise EmptySet("separated pressure sum needs a nonempty set")
    n = separated.spec.n
    orbits = _orbits_or_raise(system, separated.as_array(), n)
    weights = phi(orbits).sum(axis=-1)
    value = logsumexp(weights) / n
    return PressureEstimate(
        value=value,
        n=n,
        method="separated_sum",
        lower=value,
        upper=value,
        meta={"count": len(separated.points)},
    )


def spanning_free_energy(system, mu_sample, alpha, spec, phi):
    """Greedy upper estimate of the alpha-mass spanning infimum.

    Candidate centers are the sample points ordered by ascending weight
    exp S_n(phi); Bowen balls are added until at least an alpha fraction of
    the sample is covered.  Light-centers-first approaches the infimum over
    spanning families from above, so the returned value is an upper bound
    for it.  The `lower` field holds the dual reading: the sum over a
    maximal (2 epsilon, n)-separated subset of the chosen centers, which a
    spanning family at radius epsilon cannot undercut; being a subset sum
    it never exceeds the value.
    """
    if not (0.0 < alpha < 1.0):
        raise ValueError("alpha must lie in (0, 1)")
    pts = np.atleast_2d(np.asarray(mu_sample, float))
    total = pts.shape[0]
    if total == 0:
        raise EmptySet("spanning estimate needs a nonempty sample")
    orbits, escape = orbit_array(system, pts, spec.n)
    alive = escape >= spec.n
    n_alive = int(np.sum(alive))
    if n_alive < alpha * total:
        raise CoverageUnreachable(
            f"only {n_alive}/{total} orbits stay in the domain; cannot reach mass {alpha}"
        )
    weights = phi(orbits).sum(axis=-1)
    order = np.argsort(weights[alive], kind="stable")
    alive_idx = np.nonzero(alive)[0][order]

    covered = ~alive  # escaped points never count as covered
    chosen = []
    target = alpha * total
    n_covered = 0
    for i in alive_idx:
        if n_covered >= target:
            break
        if covered[i]:
            continue
        d = system.metric(orbits[i][None, :, :], orbits)  # (total, steps)
        in_ball = np.all(d < spec.epsilon, axis=-1) & alive
        newly = in_ball & ~covered
        if not np.any(newly):
            continue
        covered |= in_ball
        chosen.append(i)
        n_covered = int(np.sum(covered & alive))
    if n_covered < target:
        raise CoverageUnreachable(
            f"greedy cover reached {n_covered}/{total} < alpha {alpha} of the sample"
        )

    chosen_weights = weights[chosen]
    value = logsumexp(chosen_weights) / spec.n

    dual_spec = BowenBallSpec(2.0 * spec.epsilon, spec.n)
    dual = maximal_separated_set(system, [pts[i] for i in chosen], dual_spec)
    if len(dual.points):
        lower = separated_pressure_sum(system, dual, phi).value
    else:
        lower = -math.inf
    lower = min(lower, value)
    return PressureEstimate(
        value=value,
        n=spec.n,
        method="spanning_inf",
        lower=lower,
        upper=value,
        meta={
            "balls": len(chosen),
            "alpha": alpha,
            "epsilon": spec.epsilon,
            "covered_fraction": n_covered / total,
        },
    )
