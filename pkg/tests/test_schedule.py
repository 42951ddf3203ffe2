import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from crossimpact import schedule as S
from crossimpact._io import ParseError
from crossimpact.errors import DimensionError, ModelError
from crossimpact.impact import IntradayLiquidity, LiquidityModel, build_impact_matrix, total_cost
from crossimpact.schedule import (
    MixtureProfile,
    Schedule,
    kkt_multipliers,
    optimal_schedule,
    qp_oracle,
    separable_vwap_schedule,
    tilting_schedule,
)

from .conftest import random_intraday, random_model, random_profile


def test_schedule_invariant():
    Schedule(np.array([[0.5, 1.0], [0.5, -1.0]]), np.array([1.0, 0.0]))
    with pytest.raises(ModelError):
        Schedule(np.array([[0.5, 1.0], [0.4, -1.0]]), np.array([1.0, 0.0]))
    with pytest.raises(DimensionError):
        Schedule(np.zeros((2, 3)), np.zeros(2))


def test_profile_invariants():
    with pytest.raises(ModelError):
        MixtureProfile(0.5, [0.5, 0.6], [0.5, 0.5])
    with pytest.raises(ModelError):
        MixtureProfile(1.5, [0.5, 0.5], [0.5, 0.5])
    with pytest.raises(ModelError):
        MixtureProfile(0.5, [1.5, -0.5], [0.5, 0.5])
    p = MixtureProfile(0.25, [0.5, 0.5], [0.2, 0.8])
    np.testing.assert_allclose(p.vol_alloc(), [0.425, 0.575])


def test_no_funds_gives_liquidity_vwap(rng):
    liq = IntradayLiquidity(rng.uniform(0.1, 2, (4, 3)), np.zeros((4, 0)), np.zeros((3, 0)))
    x0 = np.array([3.0, -2.0, 0.5])
    opt = optimal_schedule(liq, x0)
    vwap = separable_vwap_schedule(S.liquidity_vol_alloc(liq), x0)
    np.testing.assert_allclose(opt.v, vwap.v, rtol=0, atol=1e-12)


def test_hand_fixture_tilting_and_optimal(two_asset_model):
    profile = MixtureProfile(0.5, [1.0, 0.0], [0.0, 1.0])
    x0 = np.array([1.0, 0.0])
    tilt = tilting_schedule(two_asset_model, profile, x0)
    np.testing.assert_allclose(tilt.v, [[2 / 3, -1 / 3], [1 / 3, 1 / 3]], atol=1e-15)
    liq = IntradayLiquidity.from_profile(two_asset_model, profile.alpha, profile.beta)
    opt = optimal_schedule(liq, x0)
    np.testing.assert_allclose(opt.v, tilt.v, atol=1e-15)
    assert total_cost(liq, opt) == pytest.approx(1 / 3, rel=1e-12)


def test_interior_fixture_against_oracle(two_asset_model):
    liq = IntradayLiquidity.from_profile(two_asset_model, [0.9, 0.1], [0.0, 1.0])
    x0 = np.array([1.0, 0.0])
    opt = optimal_schedule(liq, x0)
    np.testing.assert_allclose(opt.v, [[0.6, -0.3], [0.4, 0.3]], atol=1e-14)
    qp = qp_oracle(liq, x0)
    np.testing.assert_allclose(qp.schedule.v, opt.v, atol=1e-9)
    assert qp.residual <= 1e-8


def test_sign_constrained_fixture(two_asset_model):
    # unconstrained sells asset 2 in period 1 although x0_2 = 0
    liq = IntradayLiquidity.from_profile(two_asset_model, [0.9, 0.1], [0.0, 1.0])
    x0 = np.array([1.0, 0.0])
    free = qp_oracle(liq, x0)
    boxed = qp_oracle(liq, x0, sign_constrained=True)
    assert np.all(boxed.schedule.v[:, 1] == 0.0)
    # with asset 2 frozen the problem is 1-D: split in proportion to 1/G_t[0, 0]
    g1 = build_impact_matrix(liq.period(0)).G[0, 0]
    g2 = np.linalg.inv(liq.period_liquidity(1))[0, 0]
    np.testing.assert_allclose([g1, g2], [1 / 0.9, 110 / 21], rtol=1e-12)
    share = (1 / g1) / (1 / g1 + 1 / g2)
    np.testing.assert_allclose(boxed.schedule.v[:, 0], [share, 1 - share], atol=1e-9)
    assert share == pytest.approx(0.825, rel=1e-12)
    assert boxed.cost >= free.cost


def test_sign_constraints_inactive_without_funds(rng):
    liq = IntradayLiquidity(rng.uniform(0.1, 2, (3, 3)), np.zeros((3, 0)), np.zeros((3, 0)))
    x0 = np.array([1.0, -2.0, 0.0])
    a = qp_oracle(liq, x0).schedule.v
    b = qp_oracle(liq, x0, sign_constrained=True).schedule.v
    np.testing.assert_allclose(a, b, atol=1e-9)


@given(st.integers(0, 2**31))
def test_constrained_cost_never_below_unconstrained(seed):
    rng = np.random.default_rng(seed)
    liq = random_intraday(rng, 3, 3, 1)
    x0 = rng.normal(size=3)
    free = qp_oracle(liq, x0)
    boxed = qp_oracle(liq, x0, sign_constrained=True)
    assert boxed.cost >= free.cost - 1e-12 * abs(free.cost)
    v = boxed.schedule.v
    assert np.all(v * np.sign(x0) >= -1e-12)


def test_random_instance_matches_oracle(rng):
    liq = random_intraday(rng, 4, 5, 2)
    x0 = rng.normal(size=5)
    opt = optimal_schedule(liq, x0)
    qp = qp_oracle(liq, x0)
    assert np.max(np.abs(qp.schedule.v - opt.v)) <= 1e-6
    lam = kkt_multipliers(liq, opt)
    assert np.max(np.abs(lam - lam[0])) <= 1e-8 * np.max(np.abs(lam))


def test_optimal_beats_random_feasible(rng):
    liq = random_intraday(rng, 4, 3, 1)
    x0 = rng.normal(size=3)
    best = total_cost(liq, optimal_schedule(liq, x0))
    for _ in range(100):
        v = rng.normal(size=(4, 3))
        v += (x0 - v.sum(axis=0)) / 4
        assert best <= total_cost(liq, v) + 1e-12


@given(st.floats(-50, 50).filter(lambda c: abs(c) > 1e-3), st.integers(0, 2**31))
def test_scale_equivariance(c, seed):
    rng = np.random.default_rng(seed)
    liq = random_intraday(rng, 3, 4, 2)
    x0 = rng.normal(size=4)
    np.testing.assert_allclose(optimal_schedule(liq, c * x0).v, c * optimal_schedule(liq, x0).v, rtol=1e-12, atol=1e-13)


def test_zero_target():
    liq = IntradayLiquidity.from_profile(LiquidityModel([1.0, 1.0], [1.0], [[1.0], [1.0]]), [0.5, 0.5], [0.5, 0.5])
    assert np.all(optimal_schedule(liq, np.zeros(2)).v == 0)
    assert np.all(qp_oracle(liq, np.zeros(2)).schedule.v == 0)


@given(st.integers(0, 2**31))
def test_tilting_form_equals_optimal(seed):
    rng = np.random.default_rng(seed)
    daily = random_model(rng, 4, 2)
    profile = random_profile(rng, 5)
    x0 = rng.normal(size=4)
    liq = IntradayLiquidity.from_profile(daily, profile.alpha, profile.beta)
    np.testing.assert_allclose(tilting_schedule(daily, profile, x0).v, optimal_schedule(liq, x0).v, atol=1e-9)


def test_identical_profiles_give_vwap(rng):
    daily = random_model(rng, 3, 1)
    a = np.array([0.2, 0.5, 0.3])
    x0 = rng.normal(size=3)
    v = tilting_schedule(daily, MixtureProfile(0.4, a, a), x0).v
    np.testing.assert_allclose(v, a[:, None] * x0, atol=1e-12)


def test_target_orthogonal_to_funds_has_no_tilt(two_asset_model):
    p = MixtureProfile(0.3, [0.7, 0.3], [0.2, 0.8])
    x0 = np.array([1.0, -1.0])
    v = tilting_schedule(two_asset_model, p, x0).v
    np.testing.assert_allclose(v, p.alpha[:, None] * x0, atol=1e-15)


def test_separable_examples():
    x0 = np.array([4.0, -2.0])
    np.testing.assert_allclose(separable_vwap_schedule(np.full(4, 0.25), x0).v, np.tile(x0 / 4, (4, 1)))
    alloc = np.zeros((4, 2))
    alloc[2] = 1.0
    v = separable_vwap_schedule(alloc, x0).v
    np.testing.assert_array_equal(v[2], x0)
    assert np.all(v[[0, 1, 3]] == 0)
    p = MixtureProfile(0.5, [0.5, 0.5], [0.25, 0.75])
    np.testing.assert_allclose(separable_vwap_schedule(p.vol_alloc(), x0).v, np.outer([0.375, 0.625], x0))
    with pytest.raises(ModelError):
        separable_vwap_schedule([0.5, 0.6], x0)


def test_qp_rejects_singular_periods(two_asset_model):
    liq = IntradayLiquidity.from_profile(two_asset_model, [1.0, 0.0], [0.0, 1.0])
    with pytest.raises(ModelError):
        qp_oracle(liq, np.array([1.0, 0.0]))


def test_schedule_csv_round_trip(tmp_path, rng):
    liq = random_intraday(rng, 3, 2, 1)
    sched = optimal_schedule(liq, rng.normal(size=2))
    S.write_schedule(tmp_path / "s.csv", sched)
    back = S.read_schedule(tmp_path / "s.csv")
    np.testing.assert_array_equal(back.v, sched.v)
    np.testing.assert_array_equal(back.x0, sched.x0)
    text = (tmp_path / "s.csv").read_text().splitlines()
    assert text[0] == "period,a0,a1"
    assert text[-1].startswith("sum,")


def test_schedule_csv_checksum_mismatch(tmp_path):
    (tmp_path / "s.csv").write_text("period,a,b\n1,0.5,0.5\n2,0.5,0.5\nsum,1,2\n")
    with pytest.raises(ParseError, match="checksum"):
        S.read_schedule(tmp_path / "s.csv")


def test_profile_and_target_round_trip(tmp_path):
    p = MixtureProfile(0.21, [0.3, 0.3, 0.4], [0.1, 0.2, 0.7])
    S.write_profile(tmp_path / "p.csv", p)
    back = S.read_profile(tmp_path / "p.csv")
    assert back.theta == p.theta
    np.testing.assert_array_equal(back.alpha, p.alpha)
    S.write_target(tmp_path / "x.csv", [1.5, -2.0], ["A", "B"])
    np.testing.assert_array_equal(S.read_target(tmp_path / "x.csv", ("B", "A")), [-2.0, 1.5])
    with pytest.raises(ParseError):
        S.read_target(tmp_path / "x.csv", ("A", "C"))
