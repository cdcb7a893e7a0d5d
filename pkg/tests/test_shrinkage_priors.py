import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from cuspfactor import shrinkage_priors as sp
from cuspfactor.distributions import GammaParams, ParameterError, make_rng

from conftest import var_se, within_se

N = 100_000


def test_legnaro_sticks_are_beta_one_alpha():
    a, b = sp.StickBreakingSpec.legnaro(5.0, 6).beta_params()
    assert np.all(a[:-1] == 1.0) and np.all(b[:-1] == 5.0)
    assert np.isnan(a[-1]) and np.isnan(b[-1])


def test_py_negative_finite_parameters():
    a, b = sp.StickBreakingSpec.py_negative_finite(-0.5, 4).beta_params()
    assert np.allclose(a[:3], 1.5)
    assert np.allclose(b[:3], [1.5, 1.0, 0.5])


def test_ohn_kim_zero_reduces_to_legnaro():
    ok = sp.StickBreakingSpec.ohn_kim(2.0, 0.0, 5)
    lg = sp.StickBreakingSpec.legnaro(2.0, 5)
    assert np.array_equal(ok._raw_params()[0], lg._raw_params()[0])
    assert np.array_equal(ok._raw_params()[1], lg._raw_params()[1])


def test_two_param_ibp_and_py_parameters():
    a, b = sp.StickBreakingSpec.two_param_ibp(3.0, 2.0, 4)._raw_params()
    assert np.allclose(a, 2.0) and np.allclose(b, 6.0)
    a, b = sp.StickBreakingSpec.py_positive(2.0, 0.25, 3)._raw_params()
    assert np.allclose(a, 0.75) and np.allclose(b, [2.25, 2.5, 2.75])


@pytest.mark.parametrize("build", [
    lambda: sp.StickBreakingSpec.py_positive(0.2, 0.5, 4),
    lambda: sp.StickBreakingSpec.py_negative_finite(0.1, 4),
    lambda: sp.StickBreakingSpec.legnaro(-1.0, 4),
    lambda: sp.StickBreakingSpec.custom([1.0, 0.0], [1.0, 1.0]),
    lambda: sp.StickBreakingSpec("nope", 3),
])
def test_invalid_stick_specs(build):
    with pytest.raises(ParameterError):
        build()


def test_sample_sticks_terminal_one(rng):
    nu = sp.sample_sticks(rng, sp.StickBreakingSpec.legnaro(5.0, 7), size=100)
    assert nu.shape == (100, 7) and np.all(nu[:, -1] == 1.0)


def test_sample_sticks_legnaro_mean(rng):
    nu = sp.sample_sticks(rng, sp.StickBreakingSpec.legnaro(5.0, 3), size=N)
    assert within_se(nu[:, 0], 1 / 6)[0]


def test_sticks_to_cusp_hand_example():
    c = sp.sticks_to_cusp([0.5, 0.5, 1.0])
    assert np.allclose(c.weights, [0.5, 0.25, 0.25])
    assert np.allclose(c.spike_probs, [0.5, 0.75, 1.0])
    assert np.allclose(c.slab_probs, [0.5, 0.25, 0.0])


def test_sticks_to_cusp_degenerate_first_stick():
    c = sp.sticks_to_cusp([1.0, 0.3, 0.6])
    assert c.spike_probs[0] == 1.0 and np.all(c.weights[1:] == 0.0)


@pytest.mark.parametrize("bad", [[0.0, 0.5], [1.2], []])
def test_sticks_to_cusp_rejects_out_of_range(bad):
    with pytest.raises(ParameterError):
        sp.sticks_to_cusp(bad)


@given(hnp.arrays(float, st.integers(1, 50), elements=st.floats(1e-6, 1.0)))
def test_spike_plus_slab_is_one(nu):
    c = sp.sticks_to_cusp(nu)
    assert np.all(np.abs(c.spike_probs + c.slab_probs - 1.0) <= 1e-12)
    assert np.all(np.diff(c.spike_probs) >= -1e-15)


def test_esp_draw_means(rng):
    assert within_se(sp.sample_esp(rng, sp.EspSpec("1pb", 10), 5.0, size=N // 10).ravel(), 1 / 3)[0]
    assert within_se(sp.sample_esp(rng, sp.EspSpec("2pb", 10, beta=2.0), 5.0, size=N // 10).ravel(), 1 / 3)[0]
    assert sp.EspSpec("2pb", 10, beta=2.0).beta_params(5.0) == pytest.approx((1.0, 2.0))
    assert sp.EspSpec("uniform", 10).beta_params() == (1.0, 1.0)


def test_esp_learns_alpha_flag():
    assert sp.EspSpec("1pb", 5, alpha_prior=GammaParams(6, 2)).learns_alpha
    assert not sp.EspSpec("uniform", 5, alpha_prior=GammaParams(6, 2)).learns_alpha


def test_uniform_equals_onepb_with_alpha_h():
    assert sp.EspSpec("1pb", 7).beta_params(7.0) == sp.EspSpec("uniform", 7).beta_params()


def test_esp_to_cusp_hand_example():
    cusp, order = sp.esp_to_cusp([0.2, 0.9, 0.5])
    assert list(order) == [1, 2, 0]  # 0-based form of (2, 3, 1)
    assert np.allclose(cusp.spike_probs, [0.1, 0.5, 0.8])
    assert np.allclose(1 - cusp.sticks, [0.9, 5 / 9, 0.4])


def test_esp_to_cusp_sorted_input_identity_order():
    _, order = sp.esp_to_cusp([0.9, 0.5, 0.1])
    assert list(order) == [0, 1, 2]


def test_esp_to_cusp_ties_keep_index_order():
    _, order = sp.esp_to_cusp([0.4, 0.4, 0.7])
    assert list(order) == [2, 0, 1]


def test_esp_to_cusp_empty():
    with pytest.raises(ParameterError):
        sp.esp_to_cusp([])


@given(hnp.arrays(float, st.integers(1, 30), elements=st.floats(1e-6, 1 - 1e-6)))
def test_esp_to_cusp_round_trip(tau):
    cusp, _ = sp.esp_to_cusp(tau)
    again = sp.sticks_to_cusp(np.clip(cusp.sticks, 1e-300, 1.0))
    assert np.allclose(again.spike_probs, cusp.spike_probs, atol=1e-12)
    assert np.allclose(again.slab_probs, cusp.slab_probs, atol=1e-12)


def test_largest_order_statistic_is_beta_alpha_one(rng):
    tau = sp.sample_esp(rng, sp.EspSpec("1pb", 10), 5.0, size=N)
    top = tau.max(axis=1)
    assert within_se(top, 5 / 6)[0]
    assert within_se(top.var(), 5 / (36 * 7), se=var_se(top))[0]


def test_onepb_stick_law_values():
    a, b = sp.onepb_stick_law(5.0, 10)
    assert np.all(a == 1.0)
    assert b[0] == pytest.approx(5.0) and b[-1] == pytest.approx(0.5)


def test_onepb_uniform_last_three_sticks():
    # alpha = H: ratio laws Beta(b_h, 1) with b_h = H - h + 1 -> 3, 2, 1
    _, b = sp.onepb_stick_law(12.0, 12)
    assert np.allclose(b[-3:], [3.0, 2.0, 1.0])


def test_onepb_stick_law_converges_to_legnaro():
    _, b = sp.onepb_stick_law(5.0, 10**6)
    assert np.allclose(b[:5], 5.0, rtol=1e-5)


def test_onepb_ratios_uncorrelated_and_recursion(rng):
    alpha, H = 5.0, 10
    tau = sp.sample_esp(rng, sp.EspSpec("1pb", H), alpha, size=N)
    r = sp.order_statistic_ratios(tau)
    C = np.corrcoef(r.T)
    assert np.max(np.abs(C[np.triu_indices(H, 1)])) < 0.02
    ts = np.sort(tau, axis=1)[:, ::-1]
    h = np.arange(1, H + 1)
    Ch = alpha * (1 - (h - 1) / H) / (alpha * (1 - (h - 1) / H) + 1)
    expected = np.cumprod(Ch)
    for j in range(H):
        assert within_se(ts[:, j], expected[j])[0]


def test_hstar_moments_closed_form():
    m, v = sp.hstar_prior_moments(sp.EspSpec("1pb", 8), 4.0)
    assert m == pytest.approx(8 / 3) and v == pytest.approx(16 / 9)


def test_hstar_moments_large_h_limit():
    m, v = sp.hstar_prior_moments(sp.EspSpec("1pb", 10**7), 5.0)
    assert m == pytest.approx(5.0, rel=1e-5) and v == pytest.approx(5.0, rel=1e-5)
    assert sp.hstar_prior_moments(sp.EspSpec("1pb", 10), 1e-9)[0] == pytest.approx(0.0, abs=1e-8)


def test_hstar_moments_monte_carlo_onepb(rng):
    spec = sp.EspSpec("1pb", 8)
    tau = sp.sample_esp(rng, spec, 4.0, size=N)
    hs = (rng.random(tau.shape) < tau).sum(axis=1)
    m, v = sp.hstar_prior_moments(spec, 4.0)
    assert within_se(hs, m)[0]
    assert within_se(hs.var(), v, se=var_se(hs))[0]


@pytest.mark.parametrize("spec", [
    sp.StickBreakingSpec.legnaro(5.0, 30),
    sp.StickBreakingSpec.two_param_ibp(3.0, 2.0, 12),
    sp.StickBreakingSpec.py_positive(2.0, 0.3, 15),
])
def test_hstar_moments_stick_families_monte_carlo(spec):
    S = sp.sample_ordered_slab_indicators(make_rng(77), spec, N)
    hs = S.sum(axis=1)
    m, v = sp.hstar_prior_moments(spec)
    assert within_se(hs, m)[0]
    assert within_se(hs.var(), v, se=var_se(hs))[0]


def test_legnaro_hstar_mean_near_alpha():
    m, _ = sp.hstar_prior_moments(sp.StickBreakingSpec.legnaro(5.0, 30))
    assert m == pytest.approx(5.0, rel=0.01)


def test_hstar_moments_unsupported():
    with pytest.raises(NotImplementedError):
        sp.hstar_prior_moments(object())


@pytest.mark.parametrize("spec", [
    sp.StickBreakingSpec.legnaro(5.0, 8),
    sp.StickBreakingSpec.two_param_ibp(3.0, 2.0, 8),
    sp.StickBreakingSpec.ohn_kim(3.0, 1.0, 8),
    sp.StickBreakingSpec.py_positive(2.0, 0.3, 8),
    sp.StickBreakingSpec.py_negative_finite(-0.5, 8),
])
def test_expected_spike_probs_increase(spec, rng):
    pi = sp.sticks_to_cusp(sp.sample_sticks(rng, spec, size=20000)).spike_probs
    diff = np.diff(pi, axis=1)
    se = diff.std(axis=0, ddof=1) / np.sqrt(diff.shape[0])
    assert np.all(diff.mean(axis=0) > -3 * se)
    assert np.all(diff.mean(axis=0) > 0)


def test_increasing_shrinkage_dirac_spike(rng):
    ss = sp.SpikeSlabSpec(sp.DiracComponent(0.01), sp.ScaledFComponent(2.5, 2.5))
    rep = sp.verify_increasing_shrinkage(rng, sp.StickBreakingSpec.legnaro(5.0, 15), ss, [0.05, 0.5], 20000)
    assert rep.monotone
    assert rep.estimate[0, -1] > rep.estimate[0, 0] + 0.3


def test_increasing_shrinkage_equal_components_flat(rng):
    ss = sp.SpikeSlabSpec.triple_gamma(2.5, 2.5, 1.0)
    rep = sp.verify_increasing_shrinkage(rng, sp.StickBreakingSpec.legnaro(5.0, 10), ss, [0.1, 0.5], 20000)
    assert not rep.dominance
    # first versus last column differ only by Monte Carlo noise
    gap = np.abs(rep.estimate[:, -1] - rep.estimate[:, 0])
    assert np.all(gap < 4 * np.sqrt(2) * rep.std_error.max(axis=1))


def test_increasing_shrinkage_onepb_reordered(rng):
    ss = sp.SpikeSlabSpec.triple_gamma(2.5, 2.5, 0.01)
    rep = sp.verify_increasing_shrinkage(rng, sp.EspSpec("1pb", 10), ss, [0.05, 0.1, 0.5], 50000, alpha=5.0)
    assert rep.dominance and rep.monotone
    assert np.all(np.diff(rep.estimate, axis=1).sum(axis=1) > 0.2)


def test_shrinkage_report_csv(tmp_path, rng):
    ss = sp.SpikeSlabSpec.triple_gamma(2.5, 2.5, 0.01)
    rep = sp.verify_increasing_shrinkage(rng, sp.StickBreakingSpec.legnaro(5.0, 4), ss, [0.1], 500)
    rep.to_csv(tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "eps,h,estimate,std_error" and len(lines) == 5


def test_report_flags_injected_violation():
    rep = sp.ShrinkageReport(
        eps=np.array([0.1]), estimate=np.array([[0.2, 0.6, 0.3]]),
        std_error=np.full((1, 3), 0.01), diff_std_error=np.full((1, 2), 0.01), dominance=True,
    )
    assert rep.violations == [(0.1, 2)] and not rep.monotone
