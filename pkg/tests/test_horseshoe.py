import json
import math

import numpy as np
import pytest

from orbitpressure.dynamics import (
    AffineHorseshoe,
    CatMap,
    RigidRotation,
    coordinate_potential,
    zero_potential,
)
from orbitpressure.errors import EmptySample, NoViableRectangle
from orbitpressure.horseshoe import (
    AlekseevModel,
    build_rectangle_cover,
    detect_returns,
    rate_floor_check,
    saturate_size,
    select_branch_family,
    strong_approximation_check,
)
from orbitpressure.measures import (
    NeighborhoodSpec,
    ReferenceMeasure,
    default_bank,
    sample_reference,
)
from orbitpressure.pressure_metric import BowenBallSpec, is_separated
from orbitpressure.symbolic import verify_balance


def test_cover_single_point():
    cover = build_rectangle_cover(AffineHorseshoe(), [np.array([0.1, 0.2])], 0.2, 0.05)
    assert len(cover) == 1
    assert np.allclose(cover.rectangles[0].center, [0.1, 0.2])


def test_cover_two_far_points():
    pts = [np.array([0.05, 0.1]), np.array([0.9, 0.9])]
    cover = build_rectangle_cover(AffineHorseshoe(), pts, 0.2, 0.05)
    assert len(cover) == 2


def test_cover_empty_and_bad_kappa():
    with pytest.raises(EmptySample):
        build_rectangle_cover(AffineHorseshoe(), [], 0.2, 0.05)
    with pytest.raises(ValueError):
        build_rectangle_cover(AffineHorseshoe(), [np.zeros(2)], 0.2, 0.1)


def test_cover_determinism_and_coverage():
    system = CatMap()
    rng = np.random.default_rng(42)
    pts = rng.random((1000, 2))
    cover1 = build_rectangle_cover(system, pts, 0.1, 0.02)
    cover2 = build_rectangle_cover(system, pts, 0.1, 0.02)
    assert len(cover1) == len(cover2)
    # count is at least 1/delta^2-order and frozen as a regression
    assert len(cover1) >= 100
    assert len(cover1) == 326
    # kappa-coverage postcondition
    centers = cover1.centers_array()
    d = np.stack([system.metric(pts, c[None, :]) for c in centers], axis=1)
    assert np.all(d.min(axis=1) < 0.02)


def _loose_spec(s=1):
    return NeighborhoodSpec(4.0, s)


def _horseshoe_setup(points, delta=1.0 / 6.0, kappa=0.07):
    system = AffineHorseshoe()
    bank = default_bank()
    mu = ReferenceMeasure.bernoulli_horseshoe(0.5, bank)
    cover = build_rectangle_cover(system, points, delta, kappa)
    return system, bank, mu, cover


def test_detect_fixed_point_branch():
    # the branch fixed point returns at every time; n=1, rho=0 yields R=1
    pts = [np.array([0.0, 0.0])]
    system, bank, mu, cover = _horseshoe_setup(pts)
    result = detect_returns(system, pts, cover, 1, 0.0, zero_potential(), mu, bank, _loose_spec())
    assert len(result.branches) == 1
    b = result.branches[0]
    assert b.return_time == 1
    assert b.cone_certified and b.quasi_generic
    assert b.itinerary == (0,)


def test_detect_period_2_and_3_returns():
    # periodic cylinder points of periods 2 and 3 return exactly, so the
    # window n=2, rho=0.6 must produce branches with R in {2, 3}
    system = AffineHorseshoe()
    words = [(0, 1), (1, 0), (0, 0, 1), (1, 1, 0), (0, 1, 1), (1, 0, 0)]
    pts = [system.periodic_point(w) for w in words]
    pts += [system.periodic_point((0,)), system.periodic_point((1,))]
    _, bank, mu, cover = _horseshoe_setup(pts, delta=0.3, kappa=0.14)
    result = detect_returns(system, pts, cover, 2, 0.6, zero_potential(), mu, bank, _loose_spec())
    times = {b.return_time for b in result.branches}
    assert 2 in times and 3 in times


def test_detect_rotation_rejected_by_cone():
    system = RigidRotation()
    bank = default_bank()
    mu = ReferenceMeasure.lebesgue_torus(bank)
    rng = np.random.default_rng(3)
    pts = rng.random((60, 2))
    cover = build_rectangle_cover(system, pts, 0.4, 0.19)
    result = detect_returns(system, pts, cover, 2, 1.0, zero_potential(), mu, bank, _loose_spec())
    assert len(result.branches) == 0
    assert result.rejections["cone"] > 0


def test_detect_branch_weights_match_orbit_sums():
    system = AffineHorseshoe()
    phi = coordinate_potential(0)
    pts = [system.periodic_point((0, 1)), system.periodic_point((1, 0, 0))]
    _, bank, mu, cover = _horseshoe_setup(pts, delta=0.3, kappa=0.14)
    result = detect_returns(system, pts, cover, 2, 0.6, phi, mu, bank, _loose_spec())
    assert result.branches
    for b in result.branches:
        expected = float(np.sum(phi(b.orbit[: b.return_time])))
        assert b.birkhoff_weight == pytest.approx(expected, abs=1e-12)
        assert b.base_weight == pytest.approx(float(np.sum(phi(b.orbit[:2]))), abs=1e-12)


def _small_run_model(n=4, rho=0.6, count=4000, seed=11, phi=None, p=0.5):
    system = AffineHorseshoe()
    bank = default_bank()
    mu = ReferenceMeasure.bernoulli_horseshoe(p, bank)
    rng = np.random.default_rng(seed)
    pts = sample_reference(system, mu, count, rng)
    cover = build_rectangle_cover(system, pts, 1.0 / 6.0, 0.07)
    phi = phi or zero_potential()
    spec = NeighborhoodSpec(1.0, 2)
    result = detect_returns(system, pts, cover, n, rho, phi, mu, bank, spec)
    model = select_branch_family(result, cover, n, cover.delta)
    return system, bank, mu, model, result


def test_select_branch_family_invariants():
    system, bank, mu, model, result = _small_run_model()
    assert len(model) >= 2
    # all in one rectangle, certified, window-consistent
    assert all(b.rect_in == model.rectangle == b.rect_out for b in model.branches)
    assert all(b.cone_certified and b.quasi_generic for b in model.branches)
    assert all(model.n <= b.return_time <= (1 + model.rho) * model.n for b in model.branches)
    # base points pairwise (delta, n)-separated, re-verified independently
    spec = BowenBallSpec(model.delta, model.n)
    assert is_separated(system, np.array([b.base_point for b in model.branches]), spec)


def test_select_branch_family_argmax_and_tiebreak():
    system, _, _, model, result = _small_run_model()
    # recompute the per-rectangle sums on the separated pool and check argmax
    from orbitpressure.horseshoe import _separated_prefix_greedy
    from orbitpressure.pressure_metric import logsumexp

    order = np.argsort(-np.array([b.base_weight for b in result.branches]), kind="stable")
    separated = _separated_prefix_greedy(
        system, [result.branches[i] for i in order], model.delta, model.n
    )
    sums = {}
    for b in separated:
        sums.setdefault(b.rect_in, []).append(b.base_weight)
    best = max(sorted(sums), key=lambda r: (logsumexp(np.array(sums[r])), -r))
    assert best == model.rectangle


def test_select_empty_raises():
    with pytest.raises(NoViableRectangle):
        select_branch_family([], None, 2, 0.1, system=AffineHorseshoe())


def test_saturate_size_examples():
    def fake_model(times):
        branches = tuple(
            type("B", (), {"return_time": t, "rect_in": 0})() for t in times
        )
        return type("M", (), {"branches": branches, "return_times": tuple(times)})()

    assert saturate_size(fake_model([1])) == 1
    assert saturate_size(fake_model([2, 3])) == 5
    assert saturate_size(fake_model([4, 4, 5])) == 13


def test_model_json_round_trip_bit_exact():
    _, _, _, model, _ = _small_run_model()
    text = model.to_json()
    clone = AlekseevModel.from_json(text)
    assert clone.to_json() == text
    doc = json.loads(text)
    assert set(doc) == {"branches", "n", "rho", "lambda", "delta", "bank_id", "mu_id"}
    assert set(doc["branches"][0]) == {"base", "R", "weight", "rect"}


def test_model_to_symbolic():
    _, _, _, model, _ = _small_run_model()
    sym = model.to_symbolic()
    assert sym.return_times == model.return_times
    assert sym.window == (model.n, model.rho)


def test_strong_approximation_on_run_model():
    system, bank, mu, model, _ = _small_run_model()
    rho_run = 1.0
    rep = strong_approximation_check(model, mu, bank, rho_run, s=2, word_length=4)
    assert rep.passed
    assert rep.enumerated_words > 0
    # branch means themselves sit within rho/2 of the target by construction
    assert rep.max_discrepancy <= rho_run / 2.0 + 1e-9


def test_rate_floor_on_run_model():
    system, bank, mu, model, _ = _small_run_model()
    rep = rate_floor_check(model, max_word_len=3, samples=60)
    assert rep.passed
    # exponents of the affine model are exactly log 3 on every cycle
    assert rep.min_exponent == pytest.approx(math.log(3.0), abs=1e-9)


def test_verify_balance_run_mode():
    phi = coordinate_potential(0)
    system, bank, mu, model, _ = _small_run_model(phi=phi)
    sym = model.to_symbolic()
    N = int(2 * model.n)
    rep = verify_balance(
        sym,
        N,
        0.05,
        system=system,
        phi=phi,
        branches=model.branches,
        words=60,
    )
    assert rep.words_checked > 0
    assert rep.passed
    # with a nonzero rho the margins are strictly inside the window
    assert rep.lower_margin > 0.0
    assert rep.upper_margin > 0.0
