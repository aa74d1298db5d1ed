import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import lambertw

from misobc.channel import jakes_uca_correlation
from misobc.det_equiv import gamma_rzf_general, gamma_rzf_iid, gamma_zf_iid, sum_rate_de
from misobc.errors import DomainError, InvalidInput
from misobc.optimize import (
    RateGapSpec,
    TddConfig,
    alpha_star_closed_form,
    alpha_star_line_search,
    beta_star_iid,
    beta_stationarity_residual,
    feedback_bits,
    golden_section_max,
    k_star_general,
    phi_high_snr_limit,
    rate_gap,
    rate_gap_rzf,
    tau2_for_offset,
    tdd_joint_opt,
    tdd_rate,
    tdd_train_opt,
)


# ---------------------------------------------------------------- golden section

def test_golden_section_quadratic():
    r = golden_section_max(lambda x: -(x - 1.234) ** 2, 0.0, 5.0, tol=1e-10)
    assert r.x == pytest.approx(1.234, abs=1e-8)


def test_golden_section_boundary_maximum():
    r = golden_section_max(lambda x: -x, 2.0, 7.0, tol=1e-9)
    assert r.x == pytest.approx(2.0, abs=1e-8)


# ---------------------------------------------------------------- alpha

def test_alpha_closed_form_examples():
    assert alpha_star_closed_form(10.0, 0.0, 2.0) == pytest.approx(0.05)
    assert alpha_star_closed_form(10.0, 0.1, 1.0) == pytest.approx(2 / 9)
    # (1 + 0.1e6) / (0.9e6) exactly; the tau2/(1 - tau2) = 1/9 limit is 1e-5 away
    assert alpha_star_closed_form(1e6, 0.1, 1.0) == pytest.approx((1 + 1e5) / 9e5, rel=1e-12)
    assert alpha_star_closed_form(1e6, 0.1, 1.0) == pytest.approx(1 / 9, rel=2e-5)
    with pytest.raises(DomainError):
        alpha_star_closed_form(10.0, 1.0, 1.0)


@pytest.mark.parametrize("rho,tau2,beta", list(itertools.product([0.1, 1.0, 10.0, 100.0],
                                                                  [0.0, 0.1, 0.3], [1, 2, 4])))
def test_alpha_line_search_matches_closed_form(rho, tau2, beta):
    r = alpha_star_line_search(np.ones(4), np.ones(4), math.sqrt(tau2), rho, beta)
    assert r.x == pytest.approx(alpha_star_closed_form(rho, tau2, beta), rel=1e-6)
    assert not r.flags.get("non_unimodal", False)


def test_alpha_line_search_perfect_csit_is_cdu():
    r = alpha_star_line_search(np.eye(8), np.ones(4), 0.0, 31.6, 2.0)
    assert r.x == pytest.approx(1 / (2.0 * 31.6), rel=1e-6)


def test_alpha_line_search_beats_uniform_grid_correlated():
    Th = jakes_uca_correlation(16, 0.5)
    L = np.sort(np.random.default_rng(0).uniform(0.2, 2.0, 8))
    L = L / L.mean()
    rho, beta = 10.0, 2.0
    r = alpha_star_line_search(Th, L, 0.3, rho, beta)
    lo, hi = r.flags["bracket"]
    lam = np.linalg.eigvalsh(Th)
    best_grid = max(sum_rate_de(gamma_rzf_general(lam, L, 0.3, a, rho, beta).gamma)
                    for a in np.linspace(lo, hi, 1000))
    assert r.objective >= best_grid - 1e-12


# ---------------------------------------------------------------- rate gap

def test_rate_gap_zero_without_distortion():
    assert rate_gap_rzf(10.0, 0.0, 2.0) == 0.0


def test_rate_gap_square_system_closed_form():
    rho, tau2 = 100.0, 0.05
    om = 0.95 / (1 + 5)
    expect = math.log2((1 + math.sqrt(401)) / (1 + math.sqrt(1 + 400 * om)))
    assert rate_gap_rzf(rho, tau2, 1.0) == pytest.approx(expect, rel=1e-12)


def test_rate_gap_matches_closed_form_sinr():
    for rho, tau2, beta in itertools.product([0.5, 5, 50], [0.01, 0.2], [1, 1.5, 3]):
        d = math.log2((1 + gamma_rzf_iid(rho, 0, beta)) / (1 + gamma_rzf_iid(rho, tau2, beta)))
        assert rate_gap_rzf(rho, tau2, beta) == pytest.approx(d, rel=1e-12)


def test_rate_gap_increasing_in_distortion():
    g = [rate_gap_rzf(20.0, t, 1.5) for t in np.linspace(0, 0.9, 30)]
    assert np.all(np.diff(g) > 0)


# ---------------------------------------------------------------- offsets / bits

@settings(max_examples=60, deadline=None)
@given(st.floats(1.05, 4.0), st.floats(0.0, 4.0), st.sampled_from([1.0, 1.25, 2.0, 4.0]))
def test_orzf_offset_inverts_exactly(b, log_rho, beta):
    rho = 10 ** log_rho
    try:
        t2 = tau2_for_offset(RateGapSpec(b, rho, beta, "orzf"))
    except DomainError:
        return
    assert abs(rate_gap(rho, t2, beta, "orzf") - math.log2(b)) <= 1e-9


@settings(max_examples=60, deadline=None)
@given(st.floats(1.05, 4.0), st.floats(0.0, 4.0), st.sampled_from([1.25, 2.0, 4.0]))
def test_zf_offset_inverts_exactly(b, log_rho, beta):
    rho = 10 ** log_rho
    try:
        t2 = tau2_for_offset(RateGapSpec(b, rho, beta, "zf"))
    except DomainError:
        return
    assert abs(rate_gap(rho, t2, beta, "zf") - math.log2(b)) <= 1e-9


@pytest.mark.parametrize("b,rho,beta", list(itertools.product([1.5, 2.0, 3.0], [10.0, 100.0, 1e4], [1.0, 2.0])))
def test_rzf_cdu_offset_inverts(b, rho, beta):
    t2 = tau2_for_offset(RateGapSpec(b, rho, beta, "rzf_cdu"))
    assert abs(rate_gap(rho, t2, beta, "rzf_cdu") - math.log2(b)) <= 1e-6


def test_offset_domain_errors():
    with pytest.raises(InvalidInput):
        RateGapSpec(1.0, 10.0, 2.0, "orzf")
    with pytest.raises(InvalidInput):
        tau2_for_offset(RateGapSpec(2.0, 10.0, 1.0, "zf"))
    with pytest.raises(InvalidInput):
        feedback_bits(RateGapSpec(2.0, 10.0, 1.0, "zf"), 8)
    with pytest.raises(DomainError):
        # huge offset at very low SNR needs tau^2 > 1
        tau2_for_offset(RateGapSpec(8.0, 0.01, 1.0, "orzf"))


@pytest.mark.parametrize("scheme,beta,b,limit", [
    ("zf", 2.0, 2.0, 1.0), ("zf", 4.0, 3.0, 2.0),
    ("orzf", 1.0, 2.0, 3.0), ("orzf", 1.0, 3.0, 8.0), ("orzf", 2.0, 2.0, 1.0),
    ("rzf_cdu", 1.0, 2.0, 2.0), ("rzf_cdu", 1.0, 3.0, 4.0), ("rzf_cdu", 2.0, 2.0, 1.0),
])
def test_phi_high_snr_limits(scheme, beta, b, limit):
    assert phi_high_snr_limit(scheme, b, beta) == limit
    rho = 1e8
    phi = tau2_for_offset(RateGapSpec(b, rho, beta, scheme)) * rho
    assert phi == pytest.approx(limit, rel=1e-2)


def test_feedback_bits_zf_high_snr():
    M, rho = 10, 1e6
    fb = feedback_bits(RateGapSpec(2.0, rho, 2.0, "zf"), M)
    assert fb.real == pytest.approx((M - 1) * math.log2(rho), abs=0.01)
    assert fb.integer == math.ceil(fb.real)


def test_feedback_bits_minimum_one():
    fb = feedback_bits(RateGapSpec(1.5, 1.0, 1.0, "orzf"), 4)
    assert fb.integer >= 1


def test_feedback_bits_domain():
    with pytest.raises(DomainError):
        feedback_bits(RateGapSpec(2.0, 100.0, 1.0, "orzf"), 1)


@pytest.mark.parametrize("M,b", [(10, 2.0), (16, 1.5), (32, 3.0)])
def test_bit_gap_bullets(M, b):
    rho = 1e6
    orzf = feedback_bits(RateGapSpec(b, rho, 1.0, "orzf"), M).real
    cdu = feedback_bits(RateGapSpec(b, rho, 1.0, "rzf_cdu"), M).real
    zf = feedback_bits(RateGapSpec(b, rho, 1.0, "zf"), M, high_snr=True).real
    assert zf - orzf == pytest.approx((M - 1) * math.log2(b + 1), abs=0.1)
    assert cdu - orzf == pytest.approx((M - 1) * math.log2((b + 1) / 2), abs=0.1)


# ---------------------------------------------------------------- beta*

def test_beta_star_limit_e():
    assert beta_star_iid(a=1 + 1e-9) == pytest.approx(math.e, abs=1e-6)
    assert beta_star_iid(a=1.0) == pytest.approx(math.e, abs=1e-12)


def test_beta_star_example():
    rho, tau2 = 10.0, 0.1
    b = beta_star_iid(rho, tau2)
    assert b == pytest.approx(1.95, abs=5e-3)
    a = 4.5
    grid = np.linspace(1.001, 6, 200001)
    f = np.log2(1 + a * (grid - 1)) / grid
    assert b == pytest.approx(grid[np.argmax(f)], abs=1e-4)


@pytest.mark.parametrize("rho,tau2", list(itertools.product([0.5, 1.0, 10.0, 1e3, 1e6], [0.0, 0.01, 0.1, 0.4])))
def test_beta_star_stationarity(rho, tau2):
    b = beta_star_iid(rho, tau2)
    a = (1 - tau2) / (tau2 + 1 / rho)
    assert b > 1
    assert abs(beta_stationarity_residual(b, a)) <= 1e-8


def test_beta_star_lambert_consistency():
    a = 4.5
    x = (a - 1) / math.e
    w = lambertw(x).real
    assert beta_star_iid(a=a) == pytest.approx((1 - 1 / a) * (1 + 1 / w), rel=1e-12)


# ---------------------------------------------------------------- K*

@pytest.mark.parametrize("M,snr,tau2", list(itertools.product([16, 32], [0, 10, 20, 30], [0.0, 0.1])))
def test_k_star_matches_lambert(M, snr, tau2):
    rho = 10 ** (snr / 10)
    k = k_star_general(M, rho, tau2)
    pred = M / beta_star_iid(rho, tau2)
    assert abs(k.x - pred) <= 1.0


def test_k_star_saturates_with_distortion():
    ks = [k_star_general(32, 10 ** (s / 10), 0.1).x for s in (40, 50, 60, 80)]
    assert len(set(ks)) == 1


def test_k_star_nondecreasing_perfect_csit():
    ks = [k_star_general(32, 10 ** (s / 10), 0.0).x for s in range(-10, 45, 5)]
    assert all(a <= b for a, b in zip(ks, ks[1:]))


def test_k_star_with_pathloss_samples():
    rng = np.random.default_rng(1)
    from misobc.channel import PathLossSpec, draw_pathloss_gains
    samples = draw_pathloss_gains(10_000, PathLossSpec("cost231_disk"), rng)
    k = k_star_general(16, 100.0, 0.1, Theta=jakes_uca_correlation(16, 0.5), L_samples=samples)
    assert 1 <= k.x <= 15


# ---------------------------------------------------------------- TDD

@pytest.mark.parametrize("scheme", ["zf", "orzf"])
@pytest.mark.parametrize("T", [100, 1000])
def test_tdd_low_snr_half(scheme, T):
    cfg = TddConfig(T=T, K=16, M=32, scheme=scheme)
    r = tdd_train_opt(cfg, 1e-4)
    assert r.x == pytest.approx(T / 2, rel=0.01)


@pytest.mark.parametrize("scheme", ["zf", "orzf"])
@pytest.mark.parametrize("T", [100, 1000])
def test_tdd_high_snr_minimal(scheme, T):
    cfg = TddConfig(T=T, K=16, M=32, scheme=scheme)
    assert tdd_train_opt(cfg, 1e6).x == 16


@pytest.mark.parametrize("scheme", ["zf", "orzf"])
@pytest.mark.parametrize("snr", [-40, -10, 0, 10, 30, 60])
def test_tdd_concave(scheme, snr):
    cfg = TddConfig(T=1000, K=16, M=32, scheme=scheme)
    rho = 10 ** (snr / 10)
    grid = np.linspace(16, 1000, 400)
    f = np.array([tdd_rate(cfg, t, rho) for t in grid])
    d2 = f[2:] - 2 * f[1:-1] + f[:-2]
    assert np.all(d2 < 0)


def test_tdd_orzf_trains_less():
    for T in (100, 1000):
        for snr in range(-30, 51, 5):
            rho = 10 ** (snr / 10)
            zf = tdd_train_opt(TddConfig(T=T, K=16, M=32, scheme="zf"), rho).x
            rz = tdd_train_opt(TddConfig(T=T, K=16, M=32, scheme="orzf"), rho).x
            assert rz <= zf + 1e-6 * T


def test_tdd_invalid():
    with pytest.raises(InvalidInput):
        TddConfig(T=10, K=16, M=32)
    with pytest.raises(InvalidInput):
        TddConfig(T=100, K=16, M=16, scheme="zf")


def test_tdd_interior_matches_stationary_point():
    cfg = TddConfig(T=1000, K=16, M=32, scheme="zf")
    rho = 1.0
    r = tdd_train_opt(cfg, rho)
    h = 1e-3
    d = (tdd_rate(cfg, r.x + h, rho) - tdd_rate(cfg, r.x - h, rho)) / (2 * h)
    assert abs(d) < 1e-6


def test_tdd_degenerate_interval():
    r = tdd_train_opt(TddConfig(T=16, K=16, M=32), 10.0)
    assert r.x == 16


def test_tdd_joint():
    cfg = TddConfig(T=1000, K=16, M=32, scheme="zf")
    rho = 1e3
    fixed = tdd_train_opt(cfg, rho)
    joint = tdd_joint_opt(cfg, rho)
    assert joint.converged
    assert joint.objective >= fixed.objective - 1e-12
    hist = [h[2] for h in joint.history]
    assert all(b >= a - 1e-12 for a, b in zip(hist, hist[1:]))
    assert joint.K <= min(cfg.M - 1, math.floor(joint.x))


def test_tdd_joint_degenerate():
    cfg = TddConfig(T=16, K=16, M=32)
    j = tdd_joint_opt(cfg, 10.0)
    assert j.x == 16 and j.K == 16
