"""Two-user multiple-access region: per-sender bounds, sum-rate condition,
weakened variant, and boundary tracing."""

import math

import numpy as np
import pytest

from mismatchkit import mac
from mismatchkit.core import InputDist, MacProblem, ProblemError, mutual_information

LOG2 = math.log(2.0)


def h2(d):
    return -d * math.log(d) - (1.0 - d) * math.log(1.0 - d)


def make_mac(w3, q3, q1=None, q2=None):
    n1, n2, _ = np.asarray(w3).shape
    q1 = np.full(n1, 1.0 / n1) if q1 is None else np.asarray(q1, dtype=float)
    q2 = np.full(n2, 1.0 / n2) if q2 is None else np.asarray(q2, dtype=float)
    return MacProblem(w3, q3, InputDist(q1), InputDist(q2))


def random_mac(rng, matched=False, ny=3):
    w3 = rng.dirichlet(np.ones(ny), size=(2, 2))
    # mismatched metrics perturb the channel so the positivity test
    # usually passes and the rates stay away from zero
    q3 = w3.copy() if matched else w3 * np.exp(rng.normal(0.0, 0.25, size=(2, 2, ny)))
    q1 = rng.dirichlet(np.ones(2) * 5)
    q2 = rng.dirichlet(np.ones(2) * 5)
    return make_mac(w3, q3, q1, q2)


def true_joint(p):
    return p.q1.p[:, None, None] * p.q2.p[None, :, None] * p.w3


def conditional_mi(p, user):
    """I(X_user; Y | X_other) under the true law."""
    if user == 1:
        qc, qo, w3 = p.q1.p, p.q2.p, p.w3.transpose(1, 0, 2)
    else:
        qc, qo, w3 = p.q2.p, p.q1.p, p.w3
    return sum(qo[x] * mutual_information(qc[:, None] * w3[x]) for x in range(len(qo)))


class TestSingleBound:
    def test_parallel_bsc_values(self, parallel_bsc_mac):
        w3, q3, d1, d2 = parallel_bsc_mac
        p = make_mac(w3, q3)
        for user, d in ((1, d1), (2, d2)):
            res = mac.mac_single_bound(p, user)
            assert res.value == pytest.approx(LOG2 - h2(d), abs=1e-6)
            assert abs(res.gap) <= 1e-5

    def test_certificate_is_valid_coupling(self, parallel_bsc_mac):
        w3, q3, _, _ = parallel_bsc_mac
        p = make_mac(w3, q3)
        res = mac.mac_single_bound(p, 1)
        pt = res.certificate["p_tilde"]
        assert pt.shape == (2, 2, 4)
        pj = true_joint(p)
        np.testing.assert_allclose(pt.sum(axis=(1, 2)), p.q1.p, atol=1e-8)
        np.testing.assert_allclose(pt.sum(axis=0), pj.sum(axis=0), atol=1e-8)

    def test_matched_equals_conditional_mi(self):
        rng = np.random.default_rng(5)
        for _ in range(5):
            p = random_mac(rng, matched=True)
            for user in (1, 2):
                res = mac.mac_single_bound(p, user)
                assert res.value == pytest.approx(conditional_mi(p, user), abs=1e-5)

    def test_primal_dual_agreement_random(self):
        rng = np.random.default_rng(17)
        zero = 0
        for i in range(100):
            p = random_mac(rng)
            res = mac.mac_single_bound(p, 1 + i % 2)
            if res.zero_rate:
                zero += 1
                continue
            assert abs(res.gap) <= 1e-5
        assert zero <= 10

    def test_bad_user_rejected(self, parallel_bsc_mac):
        w3, q3, _, _ = parallel_bsc_mac
        with pytest.raises(ProblemError):
            mac.mac_single_bound(make_mac(w3, q3), 3)


class TestSumCondition:
    def test_parallel_bsc_corner(self, parallel_bsc_mac):
        w3, q3, d1, d2 = parallel_bsc_mac
        p = make_mac(w3, q3)
        t1, t2 = LOG2 - h2(d1), LOG2 - h2(d2)
        holds, margin = mac.mac_sum_condition(p, t1, t2)
        assert margin >= -1e-4
        holds_inside, _ = mac.mac_sum_condition(p, 0.999 * t1, 0.999 * t2)
        assert holds_inside

    def test_weakened_parallel_bsc(self, parallel_bsc_mac):
        w3, q3, d1, d2 = parallel_bsc_mac
        res = mac.mac_weakened_sum_bound(make_mac(w3, q3))
        assert res.value == pytest.approx(2 * (LOG2 - h2((d1 + d2) / 2)), abs=1e-6)
        assert abs(res.gap) <= 1e-6

    def test_matched_threshold_is_joint_mi(self):
        rng = np.random.default_rng(23)
        for _ in range(3):
            p = random_mac(rng, matched=True)
            pj = true_joint(p)
            isum = mutual_information(pj.reshape(4, -1))
            i1 = mutual_information(pj.sum(axis=1))
            # rate pair on the interior of the sum facet
            r1 = 0.5 * (i1 + conditional_mi(p, 1))
            r2 = isum - r1
            _, margin = mac.mac_sum_condition(p, r1, r2)
            assert r1 + r2 + margin == pytest.approx(isum, abs=2e-3)
            wk = mac.mac_weakened_sum_bound(p)
            assert wk.value == pytest.approx(isum, abs=1e-5)

    def test_weakened_never_exceeds_split_bounds(self):
        rng = np.random.default_rng(31)
        for _ in range(4):
            p = random_mac(rng)
            wk = mac.mac_weakened_sum_bound(p).value
            for r_other in (0.0, 0.3 * wk, wk):
                assert r_other + mac._sum_rate_bound(p, 1, r_other) >= wk - 1e-6
                assert r_other + mac._sum_rate_bound(p, 2, r_other) >= wk - 1e-6

    def test_negative_rate_rejected(self, parallel_bsc_mac):
        w3, q3, _, _ = parallel_bsc_mac
        with pytest.raises(ProblemError):
            mac.mac_sum_condition(make_mac(w3, q3), -0.1, 0.2)

    def test_membership_monotone(self, adder_mac):
        w3, q3 = adder_mac
        p = make_mac(w3, q3)
        r1, r2 = 0.12 * LOG2, 0.35 * LOG2
        holds, _ = mac.mac_sum_condition(p, r1, r2)
        assert holds
        rng = np.random.default_rng(2)
        for _ in range(5):
            f1, f2 = rng.uniform(0.0, 1.0, size=2)
            inner, _ = mac.mac_sum_condition(p, f1 * r1, f2 * r2)
            assert inner


def _fw_penalized(ref, targets, logq, mbar, r1_cap, lam, iters, p0):
    """Frank-Wolfe over the flat simplex with quadratic penalties on the
    linear constraints and a squared hinge on the mutual-information cap."""
    p = p0.copy()
    for k in range(iters):
        g = np.log(np.clip(p, 1e-300, None) / ref) + 1.0
        v = p.sum(axis=(1, 2)) - targets[0]
        g = g + 2 * lam * v[:, None, None]
        v = p.sum(axis=(0, 2)) - targets[1]
        g = g + 2 * lam * v[None, :, None]
        v = p.sum(axis=(0, 1)) - targets[2]
        g = g + 2 * lam * v[None, None, :]
        viol = mbar - float(np.sum(p * logq))
        if viol > 0:
            g = g - 2 * lam * viol * logq
        pxy = p.sum(axis=1)
        px, py = pxy.sum(axis=1), pxy.sum(axis=0)
        lr = np.log(np.clip(pxy, 1e-300, None) /
                    np.clip(px[:, None] * py[None, :], 1e-300, None))
        i1 = float(np.sum(pxy * lr))
        if i1 > r1_cap:
            g = g + 2 * lam * (i1 - r1_cap) * (lr[:, None, :] - 1.0)
        vertex = np.zeros(p.size)
        vertex[int(np.argmin(g.reshape(-1)))] = 1.0
        t = 2.0 / (k + 2.0)
        p = (1 - t) * p + t * vertex.reshape(p.shape)
    return p


class TestPrimalCrossCheck:
    @pytest.mark.parametrize("seed", [1, 15])
    def test_fw_penalty_meets_dual_threshold(self, seed):
        """On a 2x2x2 instance, the penalized primal for the one-constraint
        sum program lands on the dual boundary value R1* + R2."""
        rng = np.random.default_rng(seed)
        w3 = rng.dirichlet(np.ones(2) * 0.4, size=(2, 2))
        q3 = rng.uniform(0.1, 1.0, size=(2, 2, 2))
        q1 = rng.dirichlet(np.ones(2) * 6)
        q2 = rng.dirichlet(np.ones(2) * 6)
        p = make_mac(w3, q3, q1, q2)
        pj = true_joint(p)
        py = pj.sum(axis=(0, 1))
        logq = np.log(q3)
        mbar = float(np.sum(pj * logq))
        r2 = 0.35 * mac.mac_weakened_sum_bound(p).value
        r1_star = mac._sum_rate_bound(p, 1, r2)
        assert r1_star > 0.02
        ref = q1[:, None, None] * q2[None, :, None] * py[None, None, :]
        pfw = ref.copy()
        for lam in (1e2, 1e3, 1e4):
            pfw = _fw_penalized(ref, (q1, q2, py), logq, mbar, r1_star,
                                lam, 12000, pfw)
        div = float(np.sum(pfw * np.log(np.clip(pfw, 1e-300, None) / ref)))
        assert div == pytest.approx(r1_star + r2, abs=6e-3)


class TestRegionBoundary:
    def test_containment_and_corner_overshoot(self, adder_mac):
        w3, q3 = adder_mac
        p = make_mac(w3, q3)
        cons = mac.mac_region_boundary(p, 24)
        weak = mac.mac_region_boundary(p, 24, which="weakened")
        wk = mac.mac_weakened_sum_bound(p).value
        for (c1, c2), (w1, w2) in zip(cons, weak):
            assert c1 >= w1 - 1e-9 and c2 >= w2 - 1e-9
        # the constrained boundary leaves the weakened pentagon near the
        # upper corner
        excess = max(c1 + c2 - wk for c1, c2 in cons)
        assert excess >= 1e-3 * LOG2

    def test_region_is_not_convex(self, adder_mac):
        w3, q3 = adder_mac
        p = make_mac(w3, q3)
        pts = mac.mac_region_boundary(p, 32)
        b1 = mac.mac_single_bound(p, 1).value
        b2 = mac.mac_single_bound(p, 2).value
        broken = False
        for ja, jb in ((12, 30), (8, 30), (16, 30), (12, 29)):
            m1 = 0.5 * (pts[ja][0] + pts[jb][0])
            m2 = 0.5 * (pts[ja][1] + pts[jb][1])
            holds, _ = mac.mac_sum_condition(p, m1, m2)
            if m1 <= b1 and m2 <= b2 and not holds:
                broken = True
        assert broken

    def test_matched_pentagon(self):
        rng = np.random.default_rng(11)
        w3 = rng.dirichlet(np.ones(3), size=(2, 2))
        p = make_mac(w3, w3.copy())
        pts = mac.mac_region_boundary(p, 16)
        pj = true_joint(p)
        isum = mutual_information(pj.reshape(4, 3))
        i1c, i2c = conditional_mi(p, 1), conditional_mi(p, 2)
        for r1, r2 in pts:
            slack = min(i1c - r1, i2c - r2, isum - r1 - r2)
            assert abs(slack) <= 2e-3

    def test_scaled_points_stay_inside(self, adder_mac):
        w3, q3 = adder_mac
        p = make_mac(w3, q3)
        b1 = mac.mac_single_bound(p, 1).value
        b2 = mac.mac_single_bound(p, 2).value
        for r1, r2 in mac.mac_region_boundary(p, 8):
            for t in (0.3, 0.8, 0.999):
                holds, _ = mac.mac_sum_condition(p, t * r1, t * r2)
                assert holds and t * r1 <= b1 and t * r2 <= b2

    def test_argument_validation(self, adder_mac):
        w3, q3 = adder_mac
        p = make_mac(w3, q3)
        with pytest.raises(ProblemError):
            mac.mac_region_boundary(p, 7)
        with pytest.raises(ProblemError):
            mac.mac_region_boundary(p, 16, which="hulled")
