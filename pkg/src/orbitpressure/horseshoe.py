"""Return detection, branch certification and symbolic model assembly.

Orbit data flows in as a finite set of invariant-set points; points that
come back to the inner ball of their own covering rectangle inside the
return window [n, (1+rho) n] become branch candidates, certified by a cone
check along the loop, a quasi-genericity test on the base point, and a
contracting probe standing in for the orbit-diameter bound.  The branches
surviving a Bowen-separation pass inside the best rectangle form the final
model: a finite alphabet with return times and Birkhoff weights.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .dynamics import cone_preservation_check, orbit_array
from .errors import EmptySample, NoViableRectangle
from .measures import quasi_generic_window_mask
from .pressure_metric import logsumexp
from .symbolic import SymbolicModel

_CHUNK = 100_000  # fixed chunk size keeps results independent of memory limits


@dataclass(frozen=True)
class Rectangle:
    """Axis-aligned covering box: center, half-widths, inner ball radius."""

    center: np.ndarray
    half_widths: np.ndarray
    kappa: float


@dataclass(frozen=True)
class RectangleCover:
    """Finite covering by equal-size boxes with strictly inner kappa-balls."""

    rectangles: tuple
    delta: float
    lam: float

    def __len__(self):
        return len(self.rectangles)

    def centers_array(self):
        return np.array([r.center for r in self.rectangles])


def build_rectangle_cover(system, sample, delta, kappa, lam=None):
    """Greedy covering of the sample by kappa-balls inside delta-boxes.

    Walks the sample in input order and opens a new axis-aligned rectangle
    of diameter delta (max metric) centered at the first point not yet
    within kappa of an existing center.  Every sample point ends up
    kappa-covered; the construction is deterministic in the input order.
    """
    if kappa >= delta / 2.0:
        raise ValueError("need kappa < delta / 2 so inner balls stay strictly inside")
    if len(sample) == 0:
        raise EmptySample("cannot cover an empty sample")
    pts = np.atleast_2d(np.asarray(sample, float))
    if lam is None:
        lam = system.lambda_floor()
    if lam is None or lam <= 1.0:
        raise ValueError("cover needs an expansion floor lam > 1")
    covered = np.zeros(pts.shape[0], dtype=bool)
    centers = []
    half = np.array([delta / 2.0, delta / 2.0])
    while not covered.all():
        i = int(np.argmax(~covered))
        c = pts[i]
        centers.append(Rectangle(center=c.copy(), half_widths=half.copy(), kappa=float(kappa)))
        covered |= system.metric(pts, c[None, :]) < kappa
    return RectangleCover(rectangles=tuple(centers), delta=float(delta), lam=float(lam))


@dataclass
class HyperbolicBranch:
    """One certified return event: a branch of the variable-time horseshoe.

    birkhoff_weight is the potential summed over the full return loop
    (length return_time); base_weight is the sum over the first n steps,
    which drives the separated-subset selection.  orbit / bank_means /
    itinerary carry the run context consumed by downstream verification and
    are not serialized.
    """

    base_point: np.ndarray
    rect_in: int
    rect_out: int
    return_time: int
    birkhoff_weight: float
    base_weight: float
    quasi_generic: bool
    qg_rho: float
    qg_s: int
    cone_certified: bool
    orbit: np.ndarray = field(default=None, repr=False)
    bank_means: np.ndarray = field(default=None, repr=False)
    itinerary: tuple = field(default=None, repr=False)


@dataclass
class DetectionResult:
    """Branches found by a return scan plus the rejection tally."""

    branches: list
    rejections: Counter
    system: object
    cover: RectangleCover
    n: int
    rho: float
    bank_id: str
    mu_id: str

    def __len__(self):
        return len(self.branches)


class _GridIndex:
    """Bucketed exact proximity queries in the max metric.

    Buckets have side `tol`, so any point within tol of a query sits in one
    of the 3x3 neighbor buckets; on the torus the query is repeated at the
    nine integer translates, which turns wrapped distances into raw ones.
    """

    _SHIFTS_PLANE = ((0.0, 0.0),)
    _SHIFTS_TORUS = tuple(
        (float(a), float(b)) for a in (-1.0, 0.0, 1.0) for b in (-1.0, 0.0, 1.0)
    )

    def __init__(self, points, tol, wrap=False):
        self.tol = float(tol)
        self.shifts = self._SHIFTS_TORUS if wrap else self._SHIFTS_PLANE
        buckets = {}
        pts = np.asarray(points, float)
        idx = np.floor(pts / self.tol).astype(np.int64)
        for (a, b), p in zip(idx, pts):
            buckets.setdefault((int(a), int(b)), []).append(p)
        self.buckets = {k: np.array(v) for k, v in buckets.items()}

    def near(self, p):
        """True iff some indexed point lies within tol of p (metric-exact)."""
        p = np.asarray(p, float)
        for sa, sb in self.shifts:
            q = p + np.array([sa, sb])
            a0, b0 = (int(v) for v in np.floor(q / self.tol))
            for da in (-1, 0, 1):
                for db in (-1, 0, 1):
                    pts = self.buckets.get((a0 + da, b0 + db))
                    if pts is not None:
                        d = np.max(np.abs(pts - q[None, :]), axis=1)
                        if np.any(d <= self.tol):
                            return True
        return False


def _interior_probe(system, points, offset_dir, offset):
    """Displace points along +-offset_dir, flipping sign where that exits
    the domain; used as the delta/4 tube probe."""
    probe = points + offset * offset_dir[None, :]
    ok = system.domain_test(probe)
    flipped = points - offset * offset_dir[None, :]
    return np.where(ok[:, None], probe, flipped)


def detect_returns(
    system,
    lambda0,
    cover,
    n,
    rho,
    phi,
    mu,
    bank,
    spec,
    cones=None,
    rays=17,
):
    """Scan quasi-generic points for certified returns into their own ball.

    For each x within kappa of some cover center, every m in
    [n, floor((1+rho) n)] with f^m(x) back in that ball and within kappa/4
    of another sample point yields a branch candidate (returns need not be
    first returns).  Candidates survive when (a) the cone pair is preserved
    with floor cover.lam along the loop, (b) the base point is
    quasi-generic at precision spec.rho / 2 for every horizon in the
    window, (c) a probe offset by delta/8 along the stable center direction
    stays within the delta/4 tube of the orbit.  Rejections are tallied by
    reason; nothing raises.
    """
    if n < 1 or rho < 0:
        raise ValueError("need n >= 1 and rho >= 0")
    pts = np.atleast_2d(np.asarray(lambda0, float))
    m_max = int(math.floor((1.0 + rho) * n + 1e-9))
    centers = cover.centers_array()
    kappa = cover.rectangles[0].kappa
    delta = cover.delta
    if cones is None:
        cones = (system.stable_cone(), system.unstable_cone())
    stable_dir = cones[0].direction(pts[0])
    wrap = getattr(system, "name", "") in ("cat_map", "rotation")
    index = _GridIndex(pts, max(kappa / 4.0, 1e-9), wrap=wrap)
    has_symbols = system.strip_symbol(pts[:1]) is not None

    branches = []
    rejections = Counter()
    steps = m_max + 1
    for lo in range(0, pts.shape[0], _CHUNK):
        chunk = pts[lo : lo + _CHUNK]
        orbits, escape = orbit_array(system, chunk, steps)
        alive = escape >= steps
        rejections["escaped"] += int(np.sum(~alive))

        # home rectangle: first center whose kappa-ball contains the point
        dists = np.stack([system.metric(chunk, c[None, :]) for c in centers], axis=1)
        in_ball = dists < kappa
        has_home = in_ball.any(axis=1)
        home = np.argmax(in_ball, axis=1)
        rejections["no_home_rectangle"] += int(np.sum(alive & ~has_home))

        qg_ok, _ = quasi_generic_window_mask(
            system, chunk, n, m_max, spec.halved(), mu, bank
        )
        rejections["not_quasi_generic"] += int(np.sum(alive & has_home & ~qg_ok))

        candidate = alive & has_home & qg_ok
        if not np.any(candidate):
            continue

        # return hits per window offset
        home_centers = centers[home]
        hit = np.zeros((chunk.shape[0], m_max + 1), dtype=bool)
        for m in range(n, m_max + 1):
            d = system.metric(orbits[:, m, :], home_centers)
            hit[:, m] = candidate & (d < kappa)
        any_hit = hit.any(axis=1)
        rejections["no_return"] += int(np.sum(candidate & ~any_hit))

        idxs = np.nonzero(any_hit)[0]
        if idxs.size == 0:
            continue

        # sample-neighborhood membership at tolerance kappa/4
        for i in idxs:
            for m in range(n, m_max + 1):
                if hit[i, m] and not index.near(orbits[i, m]):
                    hit[i, m] = False
            if not hit[i, n : m_max + 1].any():
                rejections["no_return"] += 1
        idxs = np.nonzero(hit.any(axis=1))[0]

        # delta/4 tube probe along the stable center direction
        probes = _interior_probe(system, chunk[idxs], stable_dir, delta / 8.0)
        probe_orbits, probe_escape = orbit_array(system, probes, steps)
        tube_d = np.stack(
            [system.metric(probe_orbits[:, k, :], orbits[idxs, k, :]) for k in range(steps)],
            axis=1,
        )
        tube_ok_upto = np.cumprod(tube_d <= delta / 4.0, axis=1).astype(bool)
        tube_ok_upto &= (np.arange(steps)[None, :] < probe_escape[:, None])

        for row, i in enumerate(idxs):
            ms = [m for m in range(n, m_max + 1) if hit[i, m]]
            mtop = ms[-1]
            if not cone_preservation_check(
                system, chunk[i], mtop, cones, cover.lam, rays=rays
            ):
                # retry certification at the smallest hit if the longest fails
                ms = [m for m in ms if cone_preservation_check(
                    system, chunk[i], m, cones, cover.lam, rays=rays
                )]
                if not ms:
                    rejections["cone"] += 1
                    continue
            ms_ok = [m for m in ms if tube_ok_upto[row, m]]
            if not ms_ok:
                rejections["tube"] += 1
                continue
            orbit_full = orbits[i]
            phi_vals = phi(orbit_full)
            phi_prefix = np.concatenate([[0.0], np.cumsum(phi_vals)])
            bank_vals = bank.evaluate(orbit_full)
            symbols = system.strip_symbol(orbit_full) if has_symbols else None
            for m in ms_ok:
                branches.append(
                    HyperbolicBranch(
                        base_point=chunk[i].copy(),
                        rect_in=int(home[i]),
                        rect_out=int(home[i]),
                        return_time=int(m),
                        birkhoff_weight=float(phi_prefix[m]),
                        base_weight=float(phi_prefix[n]),
                        quasi_generic=True,
                        qg_rho=spec.rho,
                        qg_s=spec.s,
                        cone_certified=True,
                        orbit=orbit_full[: m + 1].copy(),
                        bank_means=bank_vals[:m].mean(axis=0),
                        itinerary=tuple(int(s) for s in symbols[:m]) if symbols is not None else None,
                    )
                )
    return DetectionResult(
        branches=branches,
        rejections=rejections,
        system=system,
        cover=cover,
        n=int(n),
        rho=float(rho),
        bank_id=bank.bank_id,
        mu_id=mu.mu_id,
    )


@dataclass
class AlekseevModel:
    """Finite alphabet of certified branches inside one rectangle.

    All branches enter and return to rectangle `rectangle`; base points are
    pairwise (delta, n)-separated; return times lie in [n, (1+rho) n].
    """

    branches: tuple
    n: int
    rho: float
    lam: float
    delta: float
    rectangle: int
    bank_id: str
    mu_id: str
    system: object = field(default=None, repr=False)

    @property
    def return_times(self):
        return tuple(b.return_time for b in self.branches)

    @property
    def weights(self):
        return tuple(b.birkhoff_weight for b in self.branches)

    def __len__(self):
        return len(self.branches)

    def to_symbolic(self):
        return SymbolicModel(
            self.return_times,
            self.weights,
            window=(self.n, self.rho),
            model_id=f"run(rect={self.rectangle},mu={self.mu_id})",
        )

    def to_json_dict(self):
        return {
            "branches": [
                {
                    "base": [float(b.base_point[0]), float(b.base_point[1])],
                    "R": int(b.return_time),
                    "weight": float(b.birkhoff_weight),
                    "rect": int(b.rect_in),
                }
                for b in self.branches
            ],
            "n": int(self.n),
            "rho": float(self.rho),
            "lambda": float(self.lam),
            "delta": float(self.delta),
            "bank_id": self.bank_id,
            "mu_id": self.mu_id,
        }

    def to_json(self):
        return json.dumps(self.to_json_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text):
        doc = json.loads(text)
        branches = tuple(
            HyperbolicBranch(
                base_point=np.array(b["base"], dtype=float),
                rect_in=int(b["rect"]),
                rect_out=int(b["rect"]),
                return_time=int(b["R"]),
                birkhoff_weight=float(b["weight"]),
                base_weight=float(b["weight"]),
                quasi_generic=True,
                qg_rho=float(doc["rho"]),
                qg_s=0,
                cone_certified=True,
            )
            for b in doc["branches"]
        )
        rect = branches[0].rect_in if branches else 0
        return cls(
            branches=branches,
            n=int(doc["n"]),
            rho=float(doc["rho"]),
            lam=float(doc["lambda"]),
            delta=float(doc["delta"]),
            rectangle=rect,
            bank_id=doc["bank_id"],
            mu_id=doc["mu_id"],
        )


def _separated_prefix_greedy(system, branches, delta, n):
    """Greedy maximal (delta, n)-separated pass over branch base orbits."""
    accepted = []
    accepted_orbits = None
    for b in branches:
        ob = b.orbit[:n]
        if accepted_orbits is None:
            accepted.append(b)
            accepted_orbits = ob[None, :, :]
            continue
        d = system.metric(ob[None, :, :], accepted_orbits)
        if np.all(np.any(d > delta, axis=-1)):
            accepted.append(b)
            accepted_orbits = np.concatenate([accepted_orbits, ob[None, :, :]])
    return accepted


def select_branch_family(candidates, cover, n, delta, phi=None, *, system=None):
    """Extract the best-rectangle separated family from branch candidates.

    Accepts a DetectionResult or a plain branch list plus `system`.  The
    pooled candidates are thinned to a maximal (delta, n)-separated subset,
    processing in descending selection weight (ties keep input order); the
    rectangle maximizing the log-sum of exp(base weights) wins, lowest
    index on ties.
    """
    meta = None
    if isinstance(candidates, DetectionResult):
        meta = candidates
        branch_list = list(candidates.branches)
        system = candidates.system
    else:
        branch_list = list(candidates)
    if not branch_list:
        raise NoViableRectangle("no branch candidates to select from")
    if system is None:
        raise ValueError("plain branch lists need the system for the metric")
    if any(b.orbit is None for b in branch_list):
        raise ValueError("branch candidates must carry their orbits")

    order = np.argsort(-np.array([b.base_weight for b in branch_list]), kind="stable")
    ordered = [branch_list[i] for i in order]
    separated = _separated_prefix_greedy(system, ordered, delta, n)

    rect_ids = sorted({b.rect_in for b in separated})
    sums = {
        r: logsumexp(np.array([b.base_weight for b in separated if b.rect_in == r]))
        for r in rect_ids
    }
    best = max(rect_ids, key=lambda r: (sums[r], -r))
    chosen = tuple(b for b in separated if b.rect_in == best)
    if not chosen:
        raise NoViableRectangle("separation emptied every rectangle")
    return AlekseevModel(
        branches=chosen,
        n=int(n),
        rho=float(meta.rho if meta else 0.0),
        lam=float(cover.lam),
        delta=float(delta),
        rectangle=int(best),
        bank_id=meta.bank_id if meta else "unknown",
        mu_id=meta.mu_id if meta else "unknown",
        system=system,
    )


def saturate_size(model):
    """Number of (branch, phase) slots of the suspended invariant set."""
    if len(model.branches) == 0:
        raise NoViableRectangle("saturate of an empty model")
    return int(sum(model.return_times))


# ---------------------------------------------------------------------------
# Model-level verification helpers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StrongApproximationReport:
    """Worst weak-* discrepancy of periodic-word empirical measures.

    A word's empirical measure averages the branch segment measures with
    weights R_k / N, i.e. a convex combination; its discrepancy against the
    target moments is therefore at most the worst single-branch value, and
    pure words attain the maximum.  `max_discrepancy` is that exact value;
    `enumerated_words` counts the word-multiset combinations additionally
    evaluated explicitly as a cross-check.
    """

    max_discrepancy: float
    bound: float
    s: int
    word_length: int
    enumerated_words: int

    @property
    def passed(self):
        return self.max_discrepancy < self.bound


def strong_approximation_check(model, mu, bank, rho, s, word_length=6, enumerate_budget=200_000):
    """Check that all word measures up to `word_length` sit in O(mu, 3 rho, s)."""
    import itertools

    if any(b.bank_means is None for b in model.branches):
        raise ValueError("branches carry no bank means; rerun detection")
    target = mu.moment_vector()[:s]
    means = np.array([b.bank_means[:s] for b in model.branches])
    times = np.array([float(b.return_time) for b in model.branches])
    per_branch = np.max(np.abs(means - target[None, :]), axis=1)
    max_disc = float(np.max(per_branch))

    count = 0
    n_branches = len(model.branches)
    total_combos = math.comb(n_branches + word_length - 1, word_length)
    if total_combos <= enumerate_budget:
        for combo in itertools.combinations_with_replacement(range(n_branches), word_length):
            idx = np.array(combo)
            w = times[idx]
            avg = (means[idx] * w[:, None]).sum(axis=0) / w.sum()
            disc = float(np.max(np.abs(avg - target)))
            assert disc <= max_disc + 1e-12  # convexity: words never exceed branches
            count += 1
    return StrongApproximationReport(
        max_discrepancy=max_disc,
        bound=3.0 * rho,
        s=int(s),
        word_length=int(word_length),
        enumerated_words=count,
    )


@dataclass(frozen=True)
class RateFloorReport:
    """Minimal finite-time exponent over sampled periodic words."""

    min_exponent: float
    floor: float
    tolerance: float
    words_checked: int

    @property
    def passed(self):
        return self.min_exponent >= self.floor - self.tolerance


def rate_floor_check(model, max_word_len=4, samples=200, tol=0.05, seed=0):
    """Lower-bound the hyperbolicity rate of sampled cycles of the model.

    Each word's cocycle is the product of its branches' orbit cocycles; the
    minimal absolute exponent per unit time must stay above log(lam) - tol.
    """
    system = model.system
    if system is None or any(b.orbit is None for b in model.branches):
        raise ValueError("rate floor check needs run context (system + orbits)")
    rng = np.random.default_rng(seed)
    n_branches = len(model.branches)
    words = []
    for L in range(1, max_word_len + 1):
        if n_branches**L <= samples // max_word_len:
            words.extend(
                tuple(w)
                for w in np.stack(
                    np.meshgrid(*([np.arange(n_branches)] * L)), axis=-1
                ).reshape(-1, L)
            )
        else:
            words.extend(
                tuple(rng.integers(0, n_branches, size=L)) for _ in range(samples // max_word_len)
            )
    min_exp = math.inf
    for word in words:
        m = np.eye(2)
        logscale = 0.0
        logdet = 0.0
        total = 0
        for bi in word:
            b = model.branches[bi]
            jacs = system.jacobian(b.orbit[: b.return_time])
            for j in jacs:
                det = j[0, 0] * j[1, 1] - j[0, 1] * j[1, 0]
                logdet += math.log(abs(det))
                m = j @ m
                f = math.sqrt(float(np.sum(m * m)))
                m /= f
                logscale += math.log(f)
            total += b.return_time
        smax = float(np.linalg.svd(m, compute_uv=False)[0])
        log_smax = logscale + math.log(smax)
        log_smin = logdet - log_smax
        min_exp = min(min_exp, min(abs(log_smax), abs(log_smin)) / total)
    return RateFloorReport(
        min_exponent=float(min_exp),
        floor=math.log(model.lam),
        tolerance=float(tol),
        words_checked=len(words),
    )
