"""Superposition coding (standard and refined), the two-subchannel switching
formula, and expurgated parallel coding."""

import math

import numpy as np
import pytest

from mismatchkit import multiuser, optim, rates
from mismatchkit.core import (
    Dmc,
    Metric,
    ProblemError,
    SizeGuardError,
    conditional_mutual_information,
    kl_divergence,
    log_with_support,
    product_extension,
)
from mismatchkit.multiuser import ExpParSpec, ScInput

LOG2 = math.log(2.0)


def h2(d):
    return -d * math.log(d) - (1.0 - d) * math.log(1.0 - d)


def clean_noisy_mix():
    """Two near-clean inputs plus two noisy ones; the metric rewards staying
    within the clean pair and discounts cross confusions unevenly."""
    w = np.array([[0.99, 0.01, 0.0, 0.0],
                  [0.01, 0.99, 0.0, 0.0],
                  [0.1, 0.1, 0.7, 0.1],
                  [0.1, 0.1, 0.1, 0.7]])
    q = np.array([[1.0, 0.5, 0.0, 0.0],
                  [0.5, 1.0, 0.0, 0.0],
                  [0.05, 0.15, 1.0, 0.05],
                  [0.15, 0.05, 0.5, 1.0]])
    return Dmc(w), Metric(q)


def two_cloud_laws():
    """Locally optimized cloud laws for the clean/noisy mix: one separates
    the clean pair from the noisy pair, the other mixes three inputs in the
    main cloud and isolates the last input as a point mass."""
    split = np.array([[0.5, 0.5, 0.0, 0.0],
                      [0.0, 0.0, 0.528, 0.472]]) * np.array([[0.698], [0.302]])
    point = np.array([[0.435, 0.450, 0.115, 0.0],
                      [0.0, 0.0, 0.0, 1.0]]) * np.array([[0.830], [0.170]])
    return split, point


def sum_of_bscs(d1, d2, dm):
    """Block-diagonal channel that uses one of two BSCs per transmission,
    decoded with a common-parameter metric."""
    def bsc(d):
        return np.array([[1.0 - d, d], [d, 1.0 - d]])

    w = np.zeros((4, 4))
    q = np.zeros((4, 4))
    w[:2, :2], w[2:, 2:] = bsc(d1), bsc(d2)
    q[:2, :2] = q[2:, 2:] = bsc(dm)
    return Dmc(w), Metric(q)


def block_cloud_law(share):
    """Cloud law for the two-BSC switch: each cloud owns one block,
    uniformly within it."""
    qux = np.zeros((2, 4))
    qux[0, :2] = share * 0.5
    qux[1, 2:] = (1.0 - share) * 0.5
    return ScInput(2, qux)


def product_of_bscs(da, db, metric_weight=None):
    """Pair-of-bits channel from two independent BSCs; the metric is either
    matched or an exponential agreement score with the given weight."""
    def bsc(d):
        return np.array([[1.0 - d, d], [d, 1.0 - d]])

    w = np.kron(bsc(da), bsc(db))
    if metric_weight is None:
        q = w.copy()
    else:
        agree = np.exp(metric_weight * np.array([[1.0, 0.0], [0.0, 1.0]]))
        q = np.kron(agree, agree)
    return Dmc(w), Metric(q)


def random_cloud_instance(rng, nu=2, nx=3, ny=3):
    wmat = rng.dirichlet(np.ones(ny), size=nx)
    # perturbing the channel keeps the positivity test passing most of the
    # time, so the sampled rates stay away from zero
    m = Metric(wmat * np.exp(rng.normal(0.0, 0.25, size=(nx, ny))))
    q_ux = rng.dirichlet(np.ones(nu * nx)).reshape(nu, nx)
    return Dmc(wmat), m, ScInput(nu, q_ux)


@pytest.fixture(scope="module")
def mix_rates():
    """Standard and refined totals at both cloud laws of the clean/noisy
    mix, computed once."""
    w, m = clean_noisy_mix()
    split, point = two_cloud_laws()
    out = {}
    for name, qux in (("split", split), ("point", point)):
        sc = ScInput(2, qux)
        out[name] = {"sc": multiuser.sc_rate(w, m, sc),
                     "rsc": multiuser.rsc_rate(w, m, sc)}
    return out


class TestScInput:
    def test_normalizes_and_exposes_marginals(self):
        sc = ScInput(2, np.array([[0.2, 0.2], [0.3, 0.3]]))
        assert sc.nx == 2
        np.testing.assert_allclose(sc.q_u, [0.4, 0.6])
        assert sc.q_ux.sum() == pytest.approx(1.0, abs=1e-12)

    def test_rejects_negative_mass(self):
        with pytest.raises(ProblemError):
            ScInput(2, np.array([[0.6, -0.1], [0.3, 0.2]]))

    def test_rejects_bad_total(self):
        with pytest.raises(ProblemError):
            ScInput(2, np.array([[0.4, 0.4], [0.4, 0.4]]))

    def test_rejects_wrong_rank(self):
        with pytest.raises(ProblemError):
            ScInput(2, np.array([0.5, 0.5]))

    def test_rejects_negative_rates(self):
        with pytest.raises(ProblemError):
            ScInput(2, np.full((2, 2), 0.25), rates=(0.1, (-0.2, 0.3)))


class TestExpParSpec:
    def test_rejects_bad_map_shape(self):
        with pytest.raises(ProblemError):
            ExpParSpec(2, 2, np.array([[0, 1, 2]]),
                       np.array([0.5, 0.5]), np.array([0.5, 0.5]))

    def test_rejects_non_integer_map(self):
        with pytest.raises(ProblemError):
            ExpParSpec(2, 2, np.array([[0.0, 1.0], [1.0, 0.0]]),
                       np.array([0.5, 0.5]), np.array([0.5, 0.5]))

    def test_rejects_mismatched_sender_laws(self):
        with pytest.raises(ProblemError):
            ExpParSpec(2, 2, np.array([[0, 1], [2, 3]]),
                       np.array([0.3, 0.3, 0.4]), np.array([0.5, 0.5]))


class TestSatelliteBound:
    def test_degenerate_cloud_equals_single_user(self, binary_mismatched):
        w, q, q_in = binary_mismatched
        res = multiuser.sc_r1_bound(Dmc(w), Metric(q), ScInput(1, q_in[None, :]))
        assert res.value == pytest.approx(rates.lm_primal(q_in, w, q).value, abs=1e-6)
        assert abs(res.gap) <= 1e-4

    def test_matched_equals_conditional_mi(self):
        rng = np.random.default_rng(3)
        for _ in range(4):
            w = rng.dirichlet(np.ones(4), size=3)
            q_ux = rng.dirichlet(np.ones(6)).reshape(2, 3)
            res = multiuser.sc_r1_bound(Dmc(w), Metric(w.copy()), ScInput(2, q_ux))
            truth = conditional_mutual_information(q_ux[:, :, None] * w[None])
            assert res.value == pytest.approx(truth, abs=1e-5)

    def test_exact_projection_oracle(self):
        # the bound is a KL projection onto couplings with the pair marginal
        # and the per-cloud output law pinned; solve that directly
        rng = np.random.default_rng(29)
        checked = 0
        for _ in range(6):
            w, m, sc = random_cloud_instance(rng)
            res = multiuser.sc_r1_bound(w, m, sc)
            if res.value < 1e-2:
                continue
            pj = sc.q_ux[:, :, None] * w.w[None]
            p_uy = pj.sum(axis=1)
            base = sc.q_ux[:, :, None] * (p_uy / sc.q_u[:, None])[:, None, :]
            logq, mask = log_with_support(m.q)
            sup = (base > 0) & mask[None]
            loglin = np.broadcast_to(np.where(mask, logq, 0.0), pj.shape).copy()
            mbar = float(np.sum(pj * np.where(mask, logq, 0.0)[None]))
            p_star, _, _, _ = optim.i_projection(
                base, loglin=loglin, target_mean=mbar,
                marginals=[((0, 1), sc.q_ux), ((0, 2), p_uy)], support=sup)
            assert res.value == pytest.approx(kl_divergence(p_star, base), abs=1e-6)
            checked += 1
        assert checked >= 3

    def test_certificate_is_valid_coupling(self, zuec_instance):
        w, q = zuec_instance
        qux = np.array([[0.3, 0.7, 0.0], [0.0, 0.0, 1.0]]) * np.array([[0.645], [0.355]])
        sc = ScInput(2, qux)
        res = multiuser.sc_r1_bound(Dmc(w), Metric(q), sc)
        pt = res.certificate["p_tilde"]
        assert pt.shape == (2, 3, 3)
        pj = qux[:, :, None] * w[None]
        np.testing.assert_allclose(pt.sum(axis=2), qux, atol=1e-7)
        np.testing.assert_allclose(pt.sum(axis=1), pj.sum(axis=1), atol=1e-7)
        assert res.certificate["s"] >= 0.0


class TestScRate:
    def test_degenerate_cloud_equals_single_user(self, binary_mismatched):
        w, q, q_in = binary_mismatched
        total, (r0, r1) = multiuser.sc_rate(Dmc(w), Metric(q), ScInput(1, q_in[None, :]))
        lm = rates.lm_primal(q_in, w, q).value
        assert total >= lm - 1e-6
        assert total == pytest.approx(lm, abs=1e-5)
        assert r0 + r1 == pytest.approx(total, abs=1e-12)

    def test_ternary_support_metric_two_clouds(self, zuec_instance):
        w, q = zuec_instance
        qux = np.array([[0.3, 0.7, 0.0], [0.0, 0.0, 1.0]]) * np.array([[0.645], [0.355]])
        sc = ScInput(2, qux)
        total, (r0, r1) = multiuser.sc_rate(Dmc(w), Metric(q), sc)
        assert total / LOG2 == pytest.approx(0.695, abs=3e-3)
        assert r0 >= -1e-12 and r1 >= -1e-12
        assert r1 <= multiuser.sc_r1_bound(Dmc(w), Metric(q), sc).value + 1e-6
        # strictly above the best single-letter rate at the induced input
        assert total > rates.lm_primal(qux.sum(axis=0), w, q).value + 0.01

    def test_mix_split_law(self, mix_rates):
        total, _ = mix_rates["split"]["sc"]
        assert total / LOG2 == pytest.approx(1.060, abs=3e-3)

    def test_mix_point_mass_law(self, mix_rates):
        total, _ = mix_rates["point"]["sc"]
        assert total / LOG2 == pytest.approx(1.236, abs=3e-3)


class TestRscRate:
    def test_mix_split_law(self, mix_rates):
        total, (cloud, r1u) = mix_rates["split"]["rsc"]
        assert total / LOG2 == pytest.approx(1.313, abs=3e-3)
        assert cloud + float(np.array([0.698, 0.302]) @ r1u) == pytest.approx(total, abs=1e-9)

    def test_mix_point_mass_law_ties_standard(self, mix_rates):
        total, _ = mix_rates["point"]["rsc"]
        sc_total, _ = mix_rates["point"]["sc"]
        assert total / LOG2 == pytest.approx(1.236, abs=3e-3)
        assert total >= sc_total - 1e-6
        assert abs(total - sc_total) <= 2e-3

    def test_never_below_standard(self, mix_rates):
        for law in ("split", "point"):
            assert mix_rates[law]["rsc"][0] >= mix_rates[law]["sc"][0] - 1e-6

    def test_never_below_standard_random(self):
        rng = np.random.default_rng(41)
        for _ in range(2):
            w, m, sc = random_cloud_instance(rng)
            tot_rsc, _ = multiuser.rsc_rate(w, m, sc)
            tot_sc, _ = multiuser.sc_rate(w, m, sc)
            assert tot_rsc >= tot_sc - 1e-6

    def test_switching_construction_matches_formula(self):
        w, m = sum_of_bscs(0.11, 0.2, 0.05)
        i1 = rates.lm_primal(np.array([0.5, 0.5, 0.0, 0.0]), w, m).value
        i2 = rates.lm_primal(np.array([0.0, 0.0, 0.5, 0.5]), w, m).value
        assert i1 == pytest.approx(LOG2 - h2(0.11), abs=1e-9)
        assert i2 == pytest.approx(LOG2 - h2(0.2), abs=1e-9)
        rate, share = multiuser.sum_channel_rate(i1, i2)
        total, (cloud, _) = multiuser.rsc_rate(w, m, block_cloud_law(share))
        assert total == pytest.approx(rate, abs=1e-7)
        # refined coding strictly beats standard when the two blocks differ
        sc_total, _ = multiuser.sc_rate(w, m, block_cloud_law(share))
        assert total - sc_total >= 5e-3

    def test_equal_subchannels_collapse(self):
        w, m = sum_of_bscs(0.11, 0.11, 0.11)
        total, _ = multiuser.rsc_rate(w, m, block_cloud_law(0.5))
        assert total == pytest.approx(LOG2 + (LOG2 - h2(0.11)), abs=1e-6)

    def test_refine_never_hurts(self):
        rng = np.random.default_rng(7)
        w, m, sc = random_cloud_instance(rng, nx=2, ny=2)
        base, _ = multiuser.rsc_rate(w, m, sc)
        refined, _ = multiuser.rsc_rate(w, m, sc, refine=True)
        assert refined >= base - 1e-9

    def test_zero_mass_cloud_dropped(self):
        w, m = sum_of_bscs(0.11, 0.2, 0.05)
        qux3 = np.zeros((3, 4))
        qux3[0, :2] = 0.6 * 0.5
        qux3[2, 2:] = 0.4 * 0.5
        total3, (_, r1u) = multiuser.rsc_rate(w, m, ScInput(3, qux3))
        assert r1u.shape == (3,) and r1u[1] == 0.0
        qux2 = np.zeros((2, 4))
        qux2[0, :2] = 0.6 * 0.5
        qux2[1, 2:] = 0.4 * 0.5
        total2, _ = multiuser.rsc_rate(w, m, ScInput(2, qux2))
        assert total3 == pytest.approx(total2, abs=1e-9)

    def test_size_guard(self):
        qux = np.full((5, 2), 0.1)
        with pytest.raises(SizeGuardError):
            multiuser.rsc_rate(Dmc(np.eye(2)), Metric(np.eye(2)), ScInput(5, qux))


class TestSumChannelRate:
    def test_equal_rates(self):
        rate, share = multiuser.sum_channel_rate(0.0, 0.0)
        assert rate == pytest.approx(LOG2, abs=1e-15)
        assert share == pytest.approx(0.5, abs=1e-15)
        rate, share = multiuser.sum_channel_rate(0.3, 0.3)
        assert rate == pytest.approx(LOG2 + 0.3, abs=1e-12)
        assert share == pytest.approx(0.5, abs=1e-12)

    def test_symmetry(self):
        ra, sa = multiuser.sum_channel_rate(0.2, 0.7)
        rb, sb = multiuser.sum_channel_rate(0.7, 0.2)
        assert ra == pytest.approx(rb, abs=1e-15)
        assert sa == pytest.approx(1.0 - sb, abs=1e-12)

    def test_dead_subchannel_reduces_to_other(self):
        rate, share = multiuser.sum_channel_rate(0.3, -np.inf)
        assert rate == pytest.approx(0.3, abs=1e-15)
        assert share == 1.0

    def test_rejects_negative(self):
        with pytest.raises(ProblemError):
            multiuser.sum_channel_rate(-0.1, 0.2)

    def test_rejects_both_dead(self):
        with pytest.raises(ProblemError):
            multiuser.sum_channel_rate(-np.inf, -np.inf)


class TestExpurgatedParallel:
    def test_matched_product_recovers_sum_capacity(self):
        w, m = product_of_bscs(0.05, 0.15)
        spec = ExpParSpec(2, 2, np.array([[0, 1], [2, 3]]),
                          np.array([0.5, 0.5]), np.array([0.5, 0.5]))
        total = multiuser.expurgated_parallel_rate(w, m, spec)
        expect = (LOG2 - h2(0.05)) + (LOG2 - h2(0.15))
        assert total == pytest.approx(expect, abs=1e-5)

    def test_single_active_sender_recovers_single_user(self, min_distance_instance):
        w, q, q_in = min_distance_instance
        spec = ExpParSpec(3, 1, np.array([[0], [1], [2]]), q_in, np.array([1.0]))
        total = multiuser.expurgated_parallel_rate(Dmc(w), Metric(q), spec)
        assert total == pytest.approx(rates.lm_primal(q_in, w, q).value, abs=1e-5)

    def test_dominated_by_superposition_reductions(self):
        w, m = product_of_bscs(0.05, 0.15, metric_weight=0.5)
        spec = ExpParSpec(2, 2, np.array([[0, 1], [2, 3]]),
                          np.array([0.5, 0.5]), np.array([0.5, 0.5]))
        total = multiuser.expurgated_parallel_rate(w, m, spec)
        best = -np.inf
        for cloud in (1, 2):
            q_ux = multiuser._identified_cloud_law(spec, w.nx, cloud)
            sc_total, _ = multiuser.sc_rate(w, m, ScInput(q_ux.shape[0], q_ux))
            best = max(best, sc_total)
        assert total <= best + 1e-5

    def test_weakened_collapses_to_single_user(self, min_distance_instance):
        # non-injective combining map: the adder x1 + x2 into a ternary channel
        w, q, _ = min_distance_instance
        spec = ExpParSpec(2, 2, np.array([[0, 1], [1, 2]]),
                          np.array([0.5, 0.5]), np.array([0.5, 0.5]))
        weak = multiuser._weakened_sum_bound(Dmc(w), Metric(q), spec)
        qx = np.array([0.25, 0.5, 0.25])
        assert weak == pytest.approx(rates.lm_primal(qx, w, q).value, abs=1e-5)

    def test_map_range_validated(self):
        w, m = product_of_bscs(0.05, 0.15)
        spec = ExpParSpec(2, 2, np.array([[0, 1], [2, 7]]),
                          np.array([0.5, 0.5]), np.array([0.5, 0.5]))
        with pytest.raises(ProblemError):
            multiuser.expurgated_parallel_rate(w, m, spec)


class TestTwoLetterCloud:
    def test_two_letter_cloud_beats_single_letter_cap(self):
        # narrow/wide binary-input channel whose optimized single-letter rate
        # is capped below 0.19751 bits; a two-letter cloud law pushes past it
        w = Dmc(np.array([[0.97, 0.03, 0.0], [0.1, 0.1, 0.8]]))
        m = Metric(np.array([[1.0, 1.0, 1.0], [1.0, 0.5, 1.36]]))
        w2, m2 = product_extension(w, m, 2)
        q0, q1 = 0.749, 0.251
        qux = np.zeros((2, 4))
        qux[0, :3] = np.array([q0 * q0, q0 * q1, q1 * q0])
        qux[1, 3] = q1 * q1
        total, _ = multiuser.sc_rate(w2, m2, ScInput(2, qux))
        per_use = 0.5 * total / LOG2
        assert per_use >= 0.19908 - 2e-3
        assert per_use > 0.19751
