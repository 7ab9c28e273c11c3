import itertools
import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from aoijoint import disciplines as disc
from aoijoint.disciplines import Discipline, MultiSourceParams
from aoijoint.errors import ConfigError, OutOfRegionError

from conftest import DISCIPLINES, random_params


@st.composite
def params_st(draw, n_min=1, n_max=5):
    n = draw(st.integers(n_min, n_max))
    lambdas = tuple(draw(st.floats(0.1, 3.0)) for _ in range(n))
    return MultiSourceParams(lambdas, draw(st.floats(0.1, 3.0)))


def columns(t):
    return list(t.reset.columns())


# ---------------------------------------------------------------------------
# parameters and builders


def test_params_derived(sym2):
    assert sym2.lam == 1.0 and sym2.rho == 1.0
    assert sym2.rho_of(1) == 0.5 and sym2.rho_minus([1]) == 0.5 and sym2.rho_minus([1, 2]) == 0.0


@pytest.mark.parametrize(
    "lambdas, mu", [((), 1.0), ((0.5, -1.0), 1.0), ((0.5,), 0.0), ((0.5,), math.inf), ((0.1,) * 7, 1.0)]
)
def test_params_rejected(lambdas, mu):
    with pytest.raises(ConfigError):
        MultiSourceParams(lambdas, mu)


def test_discipline_parse():
    assert Discipline.parse("LCFS-PS") is Discipline.LCFS_PS
    assert Discipline.parse("sa") is Discipline.LCFS_SA
    with pytest.raises(ConfigError):
        Discipline.parse("fcfs")


def test_np_table():
    params = MultiSourceParams((0.3, 0.7), 2.0)
    model = disc.build_model(params, "np")
    rows = [(t.id, t.source, t.target, t.rate) for t in model.transitions]
    assert rows == [(1, 0, 1, 0.3), (2, 1, 0, 2.0), (3, 0, 2, 0.7), (4, 2, 0, 2.0)]
    by_id = {t.id: t for t in model.transitions}
    assert columns(by_id[1]) == [None, 1, 2]
    assert columns(by_id[2]) == [None, 0, 2]  # delivery moves x0 into x1
    assert columns(by_id[4]) == [None, 1, 0]


def test_ps_table():
    params = MultiSourceParams((0.3, 0.7), 2.0)
    model = disc.build_model(params, "ps")
    rows = {t.id: (t.source, t.target, t.rate) for t in model.transitions}
    # ids (2+N)i - (N+1), (2+N)i - N, (2+N)i - N + j
    assert rows == {
        1: (0, 1, 0.3), 2: (1, 0, 2.0), 3: (1, 1, 0.3), 4: (1, 2, 0.7),
        5: (0, 2, 0.7), 6: (2, 0, 2.0), 7: (2, 1, 0.3), 8: (2, 2, 0.7),
    }


def test_sa_table():
    params = MultiSourceParams((0.3, 0.7), 2.0)
    model = disc.build_model(params, "sa")
    rows = {t.id: (t.source, t.target, t.rate) for t in model.transitions}
    assert rows == {1: (0, 1, 0.3), 2: (1, 0, 2.0), 3: (1, 1, 0.3), 4: (0, 2, 0.7), 5: (2, 0, 2.0), 6: (2, 2, 0.7)}
    by_id = {t.id: t for t in model.transitions}
    assert columns(by_id[3])[0] is None and columns(by_id[6])[0] is None


@given(params_st(), st.sampled_from(DISCIPLINES))
def test_built_models_valid(params, d):
    model = disc.build_model(params, d)
    assert model.validate() == []
    assert model.num_states == model.age_dim == params.n_sources + 1


# ---------------------------------------------------------------------------
# c_Z, C(P), C'(P)


def test_c_z_examples(sym2):
    assert disc.c_z(sym2, [1, 2], [0.0, 0.0]) == pytest.approx(sym2.lam * sym2.mu)
    assert disc.c_z(sym2, [1], [0.0]) == pytest.approx(sym2.mu * sym2.lam_of(1))
    assert disc.c_z(sym2, [1], [0.1]) == pytest.approx(0.31, abs=1e-15)


def test_c_of_p(sym2):
    s = {1: 0.1, 2: 0.2}
    assert disc.c_of_p(sym2, [2], s) == disc.c_z(sym2, [2], [0.2])
    expected = disc.c_z(sym2, [1, 2], [0.1, 0.2]) * disc.c_z(sym2, [2], [0.2])
    assert disc.c_of_p(sym2, [1, 2], s) == pytest.approx(expected, rel=1e-15)


@given(params_st(n_min=2))
def test_cprime_at_zero(params):
    k = list(range(1, params.n_sources + 1))
    for p in itertools.permutations(k[:3]):
        assert disc.cprime_of_p(params, p, {i: 0.0 for i in k}) == pytest.approx(1 / params.mu, rel=1e-14)


# ---------------------------------------------------------------------------
# MGF closed forms


@given(params_st(), st.sampled_from(DISCIPLINES), st.data())
def test_normalization(params, d, data):
    r = data.draw(st.integers(1, params.n_sources))
    assert abs(disc.joint_mgf(params, d, list(range(1, r + 1)), [0.0] * r) - 1.0) <= 1e-12


def test_ps_marginal_example(sym2):
    assert disc.joint_mgf(sym2, "ps", [1], [0.1]) == pytest.approx(0.5 / 0.31, rel=1e-14)
    assert disc.marginal_mgf(sym2, "ps", 1, 0.1) == pytest.approx(1.6129032258, rel=1e-10)


def small_s(params, r, data):
    scale = 0.3 * min(min(params.lambdas), params.mu)
    return [data.draw(st.floats(-1.0, 1.0)) * scale for _ in range(r)]


@given(params_st(n_min=2), st.sampled_from(DISCIPLINES), st.data())
def test_two_source_explicit_form(params, d, data):
    k1, k2 = data.draw(st.permutations(range(1, params.n_sources + 1)))[:2]
    s = small_s(params, 2, data)
    assume(disc.in_region(params, d, [k1, k2], s))
    general = disc.joint_mgf(params, d, [k1, k2], s)
    explicit = disc.joint_mgf_two_normalized(params, d, k1, k2, s[0] / params.mu, s[1] / params.mu)
    assert explicit == pytest.approx(general, rel=1e-10)


@given(params_st(), st.sampled_from(DISCIPLINES), st.data())
def test_marginal_equals_joint_singleton(params, d, data):
    k = data.draw(st.integers(1, params.n_sources))
    s = small_s(params, 1, data)[0]
    assume(disc.in_region(params, d, [k], [s]))
    assert disc.marginal_mgf(params, d, k, s / params.mu) == pytest.approx(disc.joint_mgf(params, d, [k], [s]), rel=1e-12)


@given(params_st(n_min=2), st.sampled_from(DISCIPLINES), st.data())
def test_marginal_reduction(params, d, data):
    k1, k2 = data.draw(st.permutations(range(1, params.n_sources + 1)))[:2]
    s1 = small_s(params, 1, data)[0]
    assume(disc.in_region(params, d, [k1, k2], [s1, 0.0]))
    joint = disc.joint_mgf(params, d, [k1, k2], [s1, 0.0])
    assert abs(joint - disc.marginal_mgf(params, d, k1, s1 / params.mu)) <= 1e-12 * abs(joint)


@given(params_st(n_min=3), st.sampled_from(DISCIPLINES), st.data())
def test_permutation_symmetry(params, d, data):
    k = data.draw(st.permutations(range(1, params.n_sources + 1)))[:3]
    s = small_s(params, 3, data)
    assume(disc.in_region(params, d, k, s))
    base = disc.joint_mgf(params, d, k, s)
    order = data.draw(st.permutations(range(3)))
    permuted = disc.joint_mgf(params, d, [k[i] for i in order], [s[i] for i in order])
    assert abs(permuted - base) <= 1e-12 * abs(base)


def test_np_singleton_collapse(rng):
    # the general NP form at |K| = 1 against its marginal written in s_bar
    for _ in range(20):
        params = random_params(rng, int(rng.integers(1, 5)))
        k = int(rng.integers(1, params.n_sources + 1))
        s_bar = float(rng.uniform(-0.3, 0.3)) * min(params.lambdas) / params.mu
        rho, rk, rmk = params.rho, params.rho_of(k), params.rho_minus([k])
        expected = rk * (1 + rho - s_bar) / ((1 + rho) * (1 - s_bar) * ((1 - s_bar) * (rho - s_bar) - rmk))
        assert disc.joint_mgf(params, "np", [k], [s_bar * params.mu]) == pytest.approx(expected, rel=1e-12)


def test_out_of_region(sym2):
    with pytest.raises(OutOfRegionError, match="c_"):
        disc.joint_mgf(sym2, "ps", [1], [0.9])
    with pytest.raises(OutOfRegionError, match="mu - sum"):
        disc.joint_mgf(MultiSourceParams((0.1, 0.1), 0.5), "np", [1], [2.0])
    assert not disc.in_region(sym2, "ps", [1], [0.9])


def test_index_set_errors(sym2):
    with pytest.raises(ConfigError, match="repeated"):
        disc.joint_mgf(sym2, "ps", [1, 1], [0.0, 0.0])
    with pytest.raises(ConfigError):
        disc.joint_mgf(sym2, "ps", [3], [0.0])
    with pytest.raises(ConfigError):
        disc.joint_mgf(sym2, "ps", [1, 2], [0.0])


# ---------------------------------------------------------------------------
# moments and correlation


def test_reference_moments(sym2):
    assert disc.mean_aoi(sym2, "ps", 1) == pytest.approx(4.0, rel=1e-15)
    assert disc.second_moment_aoi(sym2, "ps", 1) == pytest.approx(28.0, rel=1e-15)
    assert disc.mean_aoi(sym2, "np", 1) == pytest.approx(4.5, rel=1e-15)
    assert disc.mean_aoi(sym2, "sa", 1) == pytest.approx(6.25 / 1.5, rel=1e-15)


def test_moments_bundle(sym2):
    m = disc.moments(sym2, "ps", 1, 2)
    assert (m.mean, m.second_moment, m.cross_moment) == pytest.approx((4.0, 28.0, 14.0))
    assert disc.moments(sym2, "np", 1).cross_moment is None


@given(params_st(n_min=2), st.sampled_from(DISCIPLINES))
def test_finite_differences(params, d):
    mean, second, cross = disc.mgf_derivatives_fd(params, d, 1, 2)
    assert mean == pytest.approx(disc.mean_aoi(params, d, 1), rel=1e-4)
    assert second == pytest.approx(disc.second_moment_aoi(params, d, 1), rel=1e-4)
    assert cross == pytest.approx(disc.cross_moment_aoi(params, d, 1, 2), rel=1e-4)


def test_reference_correlations(sym2):
    assert disc.correlation(sym2, "ps", 1, 2) == pytest.approx(-1 / 6, rel=1e-14)
    assert disc.correlation(sym2, "np", 1, 2) == pytest.approx(0.25 * (1 - 6) / 12.75, rel=1e-14)


@given(params_st(n_min=2, n_max=6), st.sampled_from(DISCIPLINES), st.data())
def test_correlation_matches_pearson(params, d, data):
    k1, k2 = data.draw(st.permutations(range(1, params.n_sources + 1)))[:2]
    closed = disc.correlation(params, d, k1, k2)
    assert abs(closed - disc.correlation_from_moments(params, d, k1, k2)) <= 1e-10 * abs(closed)
    assert -1 <= closed <= 1


@given(st.floats(0.05, 5.0), st.floats(0.05, 5.0), st.sampled_from(DISCIPLINES))
def test_two_source_correlation_forms(rho1, rho2, d):
    params = MultiSourceParams((rho1, rho2), 1.0)
    assert disc.correlation_two_source(rho1, rho2, d) == pytest.approx(disc.correlation(params, d, 1, 2), rel=1e-10)


@given(params_st(n_min=2, n_max=5))
def test_preemptive_disciplines_negative(params):
    assert disc.correlation(params, "ps", 1, 2) < 0
    assert disc.correlation(params, "sa", 1, 2) < 0


def test_correlation_errors(sym2):
    with pytest.raises(ConfigError):
        disc.correlation(sym2, "np", 1, 1)
    with pytest.raises(ConfigError):
        disc.cross_moment_aoi(sym2, "np", 2, 2)


def test_rho_threshold():
    rho = disc.rho_threshold_np()
    assert 2.2142 <= rho <= 2.2144
    assert abs(rho**3 - 4 * rho - 2) <= 1e-9
    assert abs(disc.correlation(disc.symmetric_params(2, rho), "np", 1, 2)) <= 1e-9
    assert disc.correlation(disc.symmetric_params(2, rho - 1e-3), "np", 1, 2) < 0
    assert disc.correlation(disc.symmetric_params(2, rho + 1e-3), "np", 1, 2) > 0


def test_symmetric_params():
    p = disc.symmetric_params(4, 2.0, mu=3.0)
    assert p.rho == pytest.approx(2.0) and len(set(p.lambdas)) == 1
