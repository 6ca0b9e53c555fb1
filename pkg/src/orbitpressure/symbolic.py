"""Full-shift coding with variable return times: periodic sums and pressure.

A SymbolicModel is a finite alphabet of branches, each carrying a positive
integer return time and a real weight.  Words over the alphabet stand for
periodic pseudo-orbits; the table C[N] aggregates exp(total weight) over
all words of total return time N through a convolution recurrence kept in
log domain, and the scalar Bowen root solving sum_i exp(w_i - s n_i) = 1 is
the exact pressure oracle the finite-N estimates are checked against.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InfeasiblePeriod, MissingOrbitContext
from .pressure_metric import PressureEstimate, logsumexp

__all__ = [
    "SymbolicModel",
    "AdmissiblePeriodSet",
    "PeriodicSumTable",
    "admissible_periods",
    "word_count_bounds",
    "periodic_sum_table",
    "pressure_periodic",
    "bowen_root",
    "brute_force_log_word_sum",
    "verify_balance",
    "sandwich_check",
    "hyperbolic_potential_certificate",
    "export_oracle_csv",
]


@dataclass(frozen=True)
class SymbolicModel:
    """Alphabet of branches with return times n_i >= 1 and weights w_i.

    ``window`` optionally records the (n, rho) return window the model was
    built under, enabling the structural period checks.
    """

    return_times: tuple
    weights: tuple
    window: tuple = None
    model_id: str = "synthetic"

    def __post_init__(self):
        if len(self.return_times) != len(self.weights):
            raise ValueError("return_times and weights must have equal length")
        if len(self.return_times) == 0:
            raise ValueError("alphabet must be nonempty")
        if any(int(t) < 1 or int(t) != t for t in self.return_times):
            raise ValueError("return times must be positive integers")

    @property
    def alphabet_size(self):
        return len(self.return_times)

    def times_array(self):
        return np.asarray(self.return_times, dtype=int)

    def weights_array(self):
        return np.asarray(self.weights, dtype=float)

    def grouped_log_weights(self):
        """(distinct_times, log sum of exp(weights) per time): the recurrence
        only needs weights aggregated by return time."""
        times = self.times_array()
        weights = self.weights_array()
        distinct = np.unique(times)
        logs = np.array([logsumexp(weights[times == t]) for t in distinct])
        return distinct, logs

    def shifted(self, c):
        """Weights shifted by c per unit time: w_i -> w_i + c * n_i."""
        times = self.times_array()
        return SymbolicModel(
            tuple(self.return_times),
            tuple(float(w + c * t) for w, t in zip(self.weights, times)),
            self.window,
            self.model_id,
        )

    def saturate_size(self):
        """Number of (branch, phase) slots of the suspended invariant set."""
        return int(self.times_array().sum())


def full_shift(k, weights=None):
    """Unit-time full shift on k symbols, all weights zero by default."""
    weights = tuple(weights) if weights is not None else tuple(0.0 for _ in range(k))
    return SymbolicModel(tuple(1 for _ in range(k)), weights, model_id=f"full_shift({k})")


@dataclass(frozen=True)
class AdmissiblePeriodSet:
    """Total return times achievable by words of a fixed length p."""

    p: int
    periods: tuple

    def __contains__(self, n):
        return n in set(self.periods)

    def check_window(self, n, rho):
        """Structural consequences of return times in [n, (1+rho)n].

        Every achievable period N satisfies n p <= N <= n (1+rho) p, and the
        number of achievable periods cannot exceed the count of integers in
        that window, floor(n p rho) + 1.  (The open interval length n p rho
        undercounts by one whenever the full integer window is realized.)
        """
        lo, hi = n * self.p, n * (1.0 + rho) * self.p
        in_window = all(lo - 1e-9 <= q <= hi + 1e-9 for q in self.periods)
        count_ok = len(self.periods) <= math.floor(n * self.p * rho + 1e-9) + 1
        return in_window and count_ok


def admissible_periods(model, p):
    """Exact set of total lengths of words of length p, by iterated sumset."""
    if p < 1:
        raise ValueError("word length p must be >= 1")
    base = set(int(t) for t in model.return_times)
    acc = {0}
    for _ in range(p):
        acc = {a + t for a in acc for t in base}
    return AdmissiblePeriodSet(p=int(p), periods=tuple(sorted(acc)))


def word_count_bounds(N, n, rho):
    """Word-length bracket for a total period N under the window [n, (1+rho)n].

    Returns (ceil(N / (n (1+rho))), floor(N / n)); raises InfeasiblePeriod
    when the bracket is empty.
    """
    if not (N >= n >= 1):
        raise ValueError("need N >= n >= 1")
    if rho < 0:
        raise ValueError("rho must be nonnegative")
    p_min = math.ceil(N / (n * (1.0 + rho)) - 1e-12)
    p_max = math.floor(N / n + 1e-12)
    if p_min > p_max:
        raise InfeasiblePeriod(f"no word length fits N={N} with n={n}, rho={rho}")
    return int(p_min), int(p_max)


@dataclass(frozen=True)
class PeriodicSumTable:
    """log C[N] for N = 0..N_max, where C[N] sums exp(total weight) over all
    words with total return time N (C[0] = 1, empty word)."""

    log_c: np.ndarray
    n_max: int

    def log_value(self, N):
        return float(self.log_c[N])

    def admissible(self):
        """Periods N >= 1 realized by at least one word."""
        return np.nonzero(np.isfinite(self.log_c[1:]))[0] + 1


def periodic_sum_table(model, n_max):
    """Convolution recurrence C[N] = sum_i e^{w_i} C[N - n_i] in log domain.

    Grouping branches by return time first keeps the recurrence O(n_max *
    #distinct_times) even for models with thousands of branches.
    """
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    times, logw = model.grouped_log_weights()
    log_c = np.full(n_max + 1, -math.inf)
    log_c[0] = 0.0
    for N in range(1, n_max + 1):
        terms = [logw[i] + log_c[N - t] for i, t in enumerate(times) if t <= N]
        if terms:
            log_c[N] = logsumexp(np.array(terms))
    return PeriodicSumTable(log_c=log_c, n_max=int(n_max))


def brute_force_log_word_sum(model, N):
    """Independent oracle for log C[N]: exact combinatorial enumeration.

    Sums over nonnegative symbol-count vectors (p_1..p_k) with
    sum p_i n_i = N; each vector contributes multinomial(p; p_1..p_k) *
    exp(sum p_i w_i), with the multinomial taken in exact integer
    arithmetic.  This path shares nothing with the convolution recurrence.
    """
    times = model.times_array()
    weights = model.weights_array()
    k = len(times)
    total = 0.0

    def rec(idx, remaining, counts):
        nonlocal total
        if idx == k - 1:
            if remaining % times[idx] == 0:
                counts[idx] = remaining // times[idx]
                p = int(sum(counts))
                mult = math.factorial(p)
                for c in counts:
                    mult //= math.factorial(int(c))
                total += mult * math.exp(float(np.dot(counts, weights)))
            return
        for c in range(remaining // times[idx] + 1):
            counts[idx] = c
            rec(idx + 1, remaining - c * times[idx], counts)
        counts[idx] = 0

    rec(0, int(N), np.zeros(k, dtype=int))
    return math.log(total) if total > 0.0 else -math.inf


def brute_force_primitive_log_sum(model, N):
    """log of the word sum restricted to primitive (non-repeating) words.

    Direct enumeration; only usable at small N, which is all the
    negligibility assertion needs.
    """
    vals = _primitive_word_exponentials(model, N)
    return math.log(sum(vals)) if vals else -math.inf


def _primitive_word_exponentials(model, N):
    """exp(total weight) of every primitive word of total time N (small N)."""
    times = model.times_array()
    weights = model.weights_array()
    k = len(times)
    words = []

    def rec(remaining, word):
        if remaining == 0:
            words.append(tuple(word))
            return
        for i in range(k):
            if times[i] <= remaining:
                word.append(i)
                rec(remaining - times[i], word)
                word.pop()

    rec(int(N), [])

    def primitive(w):
        L = len(w)
        for d in range(1, L):
            if L % d == 0 and w == w[:d] * (L // d):
                return False
        return True

    return [
        math.exp(float(sum(weights[i] for i in w))) for w in words if primitive(w)
    ]


def pressure_periodic(model, n_max):
    """Windowed finite-N surrogate of the periodic-orbit pressure limsup.

    value = max over admissible N in the top half-window [n_max/2, n_max] of
    (1/N) log C[N]; the max over a window damps the residue-class
    oscillation of (1/N) log C[N] when the return times share a gcd.  The
    bracket fields carry the evaluations at the two largest admissible N.
    """
    max_time = int(max(model.return_times))
    if n_max < 4 * max_time:
        raise ValueError("n_max must be at least 4 * max return time")
    table = periodic_sum_table(model, n_max)
    admissible = table.admissible()
    window = admissible[admissible >= n_max / 2.0]
    if window.size == 0:
        raise InfeasiblePeriod("no admissible period in the top half-window")
    rates = np.array([table.log_value(N) / N for N in window])
    value = float(np.max(rates))
    tail = rates[-2:] if rates.size >= 2 else rates
    return PressureEstimate(
        value=value,
        n=int(window[np.argmax(rates)]),
        method="periodic_sum",
        lower=float(np.min(tail)),
        upper=value,
        meta={"n_max": int(n_max), "window_lo": float(n_max / 2.0)},
    )


def bowen_root(model, tol=1e-12):
    """Unique s with sum_i exp(w_i - s n_i) = 1, by bisection to `tol`.

    The left side is strictly decreasing in s, so the root is unique; the
    documented brackets always enclose it.
    """
    times = model.times_array().astype(float)
    weights = model.weights_array()
    ratios = weights / times
    s_lo = float(np.min(ratios)) - 1.0
    s_hi = float(np.max(ratios)) + math.log(model.alphabet_size) + 1.0

    def g(s):
        return logsumexp(weights - s * times)

    assert g(s_lo) > 0.0 and g(s_hi) < 0.0
    while s_hi - s_lo > tol:
        mid = 0.5 * (s_lo + s_hi)
        if g(mid) > 0.0:
            s_lo = mid
        else:
            s_hi = mid
    return 0.5 * (s_lo + s_hi)


# ---------------------------------------------------------------------------
# Word sampling and shadowing balance
# ---------------------------------------------------------------------------


def _sample_words_with_total(model, N, count, rng):
    """Uniform random words with total return time exactly N, via the exact
    suffix-count table; returns [] if N is not admissible."""
    times = model.times_array()
    k = len(times)
    counts = np.zeros(N + 1, dtype=float)  # log-domain word counts
    counts[:] = -math.inf
    counts[0] = 0.0
    for m in range(1, N + 1):
        terms = [counts[m - t] for t in times if t <= m]
        if terms:
            counts[m] = logsumexp(np.array(terms))
    if not math.isfinite(counts[N]):
        return []
    words = []
    for _ in range(count):
        word = []
        m = N
        while m > 0:
            opts = [(i, counts[m - times[i]]) for i in range(k) if times[i] <= m]
            logs = np.array([L for _, L in opts])
            probs = np.exp(logs - logsumexp(logs))
            pick = rng.choice(len(opts), p=probs / probs.sum())
            word.append(opts[pick][0])
            m -= times[opts[pick][0]]
        words.append(tuple(word))
    return words


@dataclass(frozen=True)
class BalanceReport:
    """Shadowing-balance margins over sampled words of total time N.

    lower_margin = min over words of S_N(phi + rho) - sum of branch weights,
    upper_margin = min over words of sum of branch weights - S_N(phi - rho);
    both must be nonnegative when the branch weights track true orbits to
    per-step precision rho.
    """

    N: int
    rho: float
    words_checked: int
    lower_margin: float
    upper_margin: float

    @property
    def passed(self):
        return self.lower_margin >= -1e-12 and self.upper_margin >= -1e-12


def verify_balance(
    model, N, rho, phi_shift=0.0, *, system=None, phi=None, branches=None, words=100, seed=0
):
    """Check the two-sided comparison of word weights with shadowing orbits.

    Synthetic models (no run context) reduce to the algebraic identity: the
    periodic orbit is taken to carry exactly the word weight, so both
    margins equal N * rho up to float rounding, for any per-unit shift
    ``phi_shift`` applied to weights and orbit sums alike.

    Run-derived models need `system`, `phi` and `branches` whose entries
    carry strip itineraries; the true periodic point of each sampled word is
    then reconstructed through the system's symbolic coding and its Birkhoff
    sum compared against the sum of branch weights.
    """
    rng = np.random.default_rng(seed)
    run_mode = branches is not None or system is not None or phi is not None
    if run_mode and (system is None or phi is None or branches is None):
        raise MissingOrbitContext("run mode needs system, phi and branches together")

    sampled = _sample_words_with_total(model, int(N), int(words), rng)
    if not sampled:
        raise InfeasiblePeriod(f"N={N} is not an admissible total time")

    weights = model.weights_array()
    times = model.times_array().astype(float)

    if not run_mode:
        lower = math.inf
        upper = math.inf
        for word in sampled:
            w_sum = float(sum(weights[i] + phi_shift * times[i] for i in word))
            s_n = w_sum  # the shadow carries exactly the word weight
            lower = min(lower, (s_n + N * rho) - w_sum)
            upper = min(upper, w_sum - (s_n - N * rho))
        return BalanceReport(int(N), float(rho), len(sampled), lower, upper)

    if any(getattr(b, "itinerary", None) is None for b in branches):
        raise MissingOrbitContext("branches carry no strip itineraries")
    from .dynamics import birkhoff_sum, iterate

    lower = math.inf
    upper = math.inf
    for word in sampled:
        itinerary = []
        for i in word:
            itinerary.extend(branches[i].itinerary)
        z = system.periodic_point(itinerary)
        orbit = iterate(system, z, int(N))
        s_n = birkhoff_sum(orbit, phi, int(N)) + phi_shift * N
        w_sum = float(sum(weights[i] + phi_shift * times[i] for i in word))
        lower = min(lower, (s_n + N * rho) - w_sum)
        upper = min(upper, w_sum - (s_n - N * rho))
    return BalanceReport(int(N), float(rho), len(sampled), lower, upper)


# ---------------------------------------------------------------------------
# Sandwich bound and potential certificate
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SandwichReport:
    """Two-sided pressure bound evaluation with finite-size slack."""

    pressure: float
    lower_bound: float
    upper_bound: float
    p_mu_hat: float
    slack: float
    passed: bool


def sandwich_check(model, phi_sup, phi_inf, p_mu_hat, rho, n_max):
    """Assert the two-sided bound on the model's periodic pressure.

    lower = rho*inf(phi)/(1+rho) + (P_mu - 3 rho)/(1+rho), upper =
    P_mu + 2 rho + rho*sup(phi); a symmetric finite-size slack
    3 log(saturate size)/n_max absorbs the windowed-limsup truncation.
    """
    est = pressure_periodic(model, n_max)
    slack = 3.0 * math.log(max(2, model.saturate_size())) / n_max
    lower = rho * phi_inf / (1.0 + rho) + (p_mu_hat - 3.0 * rho) / (1.0 + rho)
    upper = p_mu_hat + 2.0 * rho + rho * phi_sup
    passed = (lower - slack) <= est.value <= (upper + slack)
    return SandwichReport(
        pressure=est.value,
        lower_bound=lower,
        upper_bound=upper,
        p_mu_hat=float(p_mu_hat),
        slack=slack,
        passed=bool(passed),
    )


@dataclass(frozen=True)
class CertificateReport:
    """Hyperbolicity certificate for a potential over a model family."""

    free_energies: tuple
    phi_integrals: tuple
    p_hat: float
    sup_integral: float
    gap: float
    positive: bool
    maximizing_sequence: tuple  # model indices ordered by free energy, best first


def hyperbolic_potential_certificate(model_family, phi_integrals, tol=0.0):
    """Gap between the family's best free energy and the best plain integral.

    model_family is a list of SymbolicModel; phi_integrals the matching
    integrals of the potential under each model's measure.  The certificate
    is positive when max free energy exceeds max integral by more than tol;
    the maximizing sequence lists the indices whose free energy comes within
    tol of the supremum, best first.
    """
    models = list(model_family)
    integrals = [float(v) for v in phi_integrals]
    if not models or len(models) != len(integrals):
        raise ValueError("need a nonempty family with matching integrals")
    free = [bowen_root(m) for m in models]
    p_hat = max(free)
    sup_int = max(integrals)
    gap = p_hat - sup_int
    order = sorted(range(len(models)), key=lambda i: -free[i])
    achieving = tuple(i for i in order if free[i] >= p_hat - max(tol, 1e-12))
    return CertificateReport(
        free_energies=tuple(free),
        phi_integrals=tuple(integrals),
        p_hat=p_hat,
        sup_integral=sup_int,
        gap=gap,
        positive=bool(gap > tol),
        maximizing_sequence=achieving if achieving else tuple(order[:1]),
    )


def export_oracle_csv(model, n_max, path):
    """Write N, log_C_exact, log_C_table, diff for N = 1..n_max."""
    table = periodic_sum_table(model, n_max)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["N", "log_C_exact", "log_C_table", "diff"])
        for N in range(1, n_max + 1):
            exact = brute_force_log_word_sum(model, N)
            approx = table.log_value(N)
            diff = approx - exact if math.isfinite(exact) or math.isfinite(approx) else 0.0
            writer.writerow([N, repr(exact), repr(approx), repr(diff)])
    return path
