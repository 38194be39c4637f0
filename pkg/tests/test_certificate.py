"""Certificate validation, eigenvalue routines and stability constants."""

import math

import numpy as np
import pytest

from etmhe import (Box, CertificateError, ConfigurationError, IossCertificate,
                   check_dissipation, max_generalized_eigenvalue, min_horizon,
                   rges_bound, rges_constants)
from etmhe.certificate import symmetric_eigenvalues

from conftest import ETA_BENCH, P_BENCH, Q_BENCH, R_BENCH


def char_poly_eigs_2x2(a):
    """Eigenvalues of a symmetric 2x2 via the characteristic polynomial."""
    tr, det = a[0, 0] + a[1, 1], a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0]
    disc = math.sqrt(tr * tr - 4.0 * det)
    return np.array([(tr - disc) / 2.0, (tr + disc) / 2.0])


class TestSymmetricEigenvalues:
    def test_against_characteristic_polynomial(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            a = rng.normal(size=(2, 2))
            a = a + a.T
            np.testing.assert_allclose(symmetric_eigenvalues(a),
                                       char_poly_eigs_2x2(a),
                                       rtol=1e-10, atol=1e-10)

    def test_against_numpy(self):
        rng = np.random.default_rng(2)
        for n in (1, 3, 5):
            a = rng.normal(size=(n, n))
            a = a + a.T
            np.testing.assert_allclose(symmetric_eigenvalues(a),
                                       np.linalg.eigvalsh(a),
                                       rtol=1e-9, atol=1e-9)

    def test_diagonal_and_zero(self):
        np.testing.assert_allclose(symmetric_eigenvalues(np.diag([3.0, -1.0])),
                                   [-1.0, 3.0])
        np.testing.assert_allclose(symmetric_eigenvalues(np.zeros((4, 4))),
                                   np.zeros(4))

    def test_rejects_nonsquare(self):
        with pytest.raises(CertificateError):
            symmetric_eigenvalues(np.zeros((2, 3)))


class TestGeneralizedEigenvalue:
    def test_hand_example(self):
        # det(A - lam B) = 0 with A=[[2,1],[1,2]], B=diag(1,2):
        # 2 lam^2 - 6 lam + 3 = 0, max root (3 + sqrt(3)) / 2.
        a = np.array([[2.0, 1.0], [1.0, 2.0]])
        b = np.diag([1.0, 2.0])
        lam = max_generalized_eigenvalue(a, b)
        assert lam == pytest.approx((3.0 + math.sqrt(3.0)) / 2.0, rel=1e-12)

    def test_identity_weight_reduces_to_standard(self):
        rng = np.random.default_rng(4)
        m = rng.normal(size=(3, 3))
        a = m @ m.T + 0.1 * np.eye(3)
        lam = max_generalized_eigenvalue(a, np.eye(3))
        assert lam == pytest.approx(np.linalg.eigvalsh(a)[-1], rel=1e-10)

    def test_equal_matrices_give_one(self, bench_cert):
        lam = max_generalized_eigenvalue(bench_cert.P2, bench_cert.P1)
        assert lam == pytest.approx(1.0, rel=1e-10)


class TestIossCertificate:
    def test_benchmark_certificate_valid(self, bench_cert):
        assert bench_cert.eta == ETA_BENCH
        np.testing.assert_allclose(bench_cert.P1, P_BENCH)

    def test_rejects_asymmetric(self):
        bad = P_BENCH.copy()
        bad[0, 1] += 1.0
        with pytest.raises(CertificateError):
            IossCertificate(P1=bad, P2=P_BENCH, Q=Q_BENCH, R=R_BENCH, eta=0.9)

    def test_rejects_indefinite_p(self):
        with pytest.raises(CertificateError):
            IossCertificate(P1=np.diag([1.0, -1.0]), P2=np.diag([1.0, 1.0]),
                            Q=Q_BENCH, R=R_BENCH, eta=0.9)

    def test_rejects_bad_eta(self):
        for eta in (1.0, 1.5, -0.1):
            with pytest.raises(CertificateError):
                IossCertificate(P1=P_BENCH, P2=P_BENCH, Q=Q_BENCH, R=R_BENCH,
                                eta=eta)

    def test_accepts_psd_weights(self):
        cert = IossCertificate(P1=np.eye(2), P2=np.eye(2),
                               Q=np.diag([1.0, 0.0, 1.0]),
                               R=np.zeros((1, 1)), eta=0.5)
        assert cert.eta == 0.5


class TestMinHorizon:
    def test_benchmark_value(self, bench_cert):
        assert min_horizon(bench_cert) == 15

    def test_hand_cases(self):
        # lam_max(P2, P1) = 2, eta = 0.5: smallest M with 8 * 0.5^M < 1 is 4.
        cert = IossCertificate(P1=np.eye(2), P2=2.0 * np.eye(2),
                               Q=np.eye(1), R=np.eye(1), eta=0.5)
        assert min_horizon(cert) == 4
        # lam_max = 0.2: 4 * 0.2 < 1 already, so M = 0.
        cert = IossCertificate(P1=np.eye(2), P2=0.2 * np.eye(2),
                               Q=np.eye(1), R=np.eye(1), eta=0.5)
        assert min_horizon(cert) == 0


class TestRgesConstants:
    def test_contraction_rate_high_precision(self, bench_cert):
        mp = pytest.importorskip("mpmath")
        mp.mp.dps = 50
        rho_ref = float((4 * mp.mpf("0.91") ** 30) ** (mp.mpf(1) / 30))
        constants = rges_constants(bench_cert, alpha=5.0, M=30)
        assert constants.rho == pytest.approx(rho_ref, rel=1e-10)
        assert constants.rho == pytest.approx(0.953038, abs=1e-6)
        assert constants.lam_x == pytest.approx(math.sqrt(constants.rho))
        assert constants.lam_w == constants.lam_x
        assert constants.rho < 1.0

    def test_gain_formulas(self, bench_cert):
        c0 = rges_constants(bench_cert, alpha=0.0, M=30)
        c5 = rges_constants(bench_cert, alpha=5.0, M=30)
        # Disturbance gain scales as sqrt(2 alpha + 4); initial-error gain does not.
        assert c0.C_w / c5.C_w == pytest.approx(math.sqrt(2.0 / 7.0), rel=1e-12)
        assert c0.C_x == c5.C_x
        p_eigs = np.linalg.eigvalsh(P_BENCH)
        assert c5.C_x == pytest.approx(2.0 * math.sqrt(p_eigs[-1] / p_eigs[0]),
                                       rel=1e-9)
        assert c5.C_w == pytest.approx(math.sqrt(14.0 * 1e4 / p_eigs[0]),
                                       rel=1e-9)

    def test_rejects_short_horizon(self, bench_cert):
        with pytest.raises(CertificateError):
            rges_constants(bench_cert, alpha=5.0, M=14)
        with pytest.raises(CertificateError):
            rges_constants(bench_cert, alpha=-1.0, M=30)


class TestRgesBound:
    def test_hand_value(self, bench_cert):
        constants = rges_constants(bench_cert, alpha=5.0, M=30)
        constants = type(constants)(C_x=2.0, C_w=1.0, lam_x=0.5, lam_w=0.5,
                                    rho=0.25)
        # 2 * 1 * 0.5 + 1 * 1 * 0.5^0 = 2.
        assert rges_bound(constants, 1.0, [1.0], 1) == pytest.approx(2.0)

    def test_monotone_in_error_and_decaying(self, bench_cert):
        constants = rges_constants(bench_cert, alpha=5.0, M=30)
        w = np.zeros(50)
        values = [rges_bound(constants, 3.0, w, t) for t in range(50)]
        assert all(b > a for a, b in zip(values[1:], values[:-1]))
        assert values[0] == pytest.approx(constants.C_x * 3.0)

    def test_input_validation(self, bench_cert):
        constants = rges_constants(bench_cert, alpha=5.0, M=30)
        with pytest.raises(CertificateError):
            rges_bound(constants, 1.0, [], 1)
        with pytest.raises(CertificateError):
            rges_bound(constants, 1.0, [], -1)


class TestDissipationCheck:
    REGION = Box(np.zeros(2), np.full(2, 5.0))

    def test_corrupted_certificate_flagged(self, bench_cert, bench_model):
        corrupted = IossCertificate(P1=bench_cert.P1, P2=bench_cert.P2,
                                    Q=bench_cert.Q, R=bench_cert.R, eta=0.01)
        report = check_dissipation(corrupted, bench_model, self.REGION,
                                   2000, np.random.default_rng(0))
        assert report.n_violations >= 1
        assert report.worst_margin > 0

    def test_benchmark_certificate_mostly_satisfied(self, bench_cert,
                                                    bench_model):
        report = check_dissipation(bench_cert, bench_model, self.REGION,
                                   2000, np.random.default_rng(0))
        assert report.violation_fraction < 0.01
        assert report.n_samples == 2000

    def test_requires_matching_p(self, bench_model, bench_cert):
        cert = IossCertificate(P1=np.eye(2), P2=2.0 * np.eye(2),
                               Q=bench_cert.Q, R=bench_cert.R, eta=0.9)
        with pytest.raises(CertificateError):
            check_dissipation(cert, bench_model, self.REGION, 100,
                              np.random.default_rng(0))

    def test_requires_bounded_region(self, bench_cert, bench_model):
        with pytest.raises(ConfigurationError):
            check_dissipation(bench_cert, bench_model,
                              Box(np.zeros(2), np.full(2, np.inf)), 100,
                              np.random.default_rng(0))
        with pytest.raises(ConfigurationError):
            check_dissipation(bench_cert, bench_model, self.REGION, 4,
                              np.random.default_rng(0))

    def test_deterministic_given_seed(self, bench_cert, bench_model):
        a = check_dissipation(bench_cert, bench_model, self.REGION, 400,
                              np.random.default_rng(7))
        b = check_dissipation(bench_cert, bench_model, self.REGION, 400,
                              np.random.default_rng(7))
        assert a == b
