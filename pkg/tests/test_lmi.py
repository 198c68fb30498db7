import numpy as np
import pytest

from switchstab.data import DataMatrices, consistent_set
from switchstab.errors import NotInformative
from switchstab.lmi import (
    AffineLmi,
    FeasStatus,
    GainCertificate,
    GrowthParams,
    compute_mu,
    growth_envelope_holds,
    growth_params,
    solve_feasibility,
    synth_gain,
    verify_uniform_decay,
)
from switchstab.plant import gen_init_data, gen_modes

from test_data import record_from_mode


def scalar_deadbeat_record():
    """x+ = 0.5 x + u with two transitions making the regressor rank 2."""
    X = np.array([[1.0, 1.5, 0.75]])  # u = [1, 0]
    U = np.array([[1.0, 0.0]])
    return DataMatrices(X=X, U_minus=U)


class TestAffineLmi:
    def test_rejects_nonsymmetric(self):
        with pytest.raises(ValueError):
            AffineLmi(constant=np.array([[0.0, 1.0], [0.0, 0.0]]), coeffs=())

    def test_rejects_size_mismatch(self):
        with pytest.raises(Exception):
            AffineLmi(constant=np.zeros((2, 2)), coeffs=(np.zeros((3, 3)),))

    def test_evaluate(self):
        lmi = AffineLmi(constant=np.eye(2), coeffs=(2.0 * np.eye(2),))
        np.testing.assert_allclose(lmi.evaluate(np.array([3.0])), 7.0 * np.eye(2))


class TestSolveFeasibility:
    def test_scalar_strict_margin(self):
        # z - 1 >= 0 with margin 0.1: any accepted z must satisfy z >= 1.1
        lmi = AffineLmi(constant=np.array([[-1.0]]), coeffs=(np.array([[1.0]]),))
        res = solve_feasibility([lmi], strict={0}, margin=0.1)
        assert res.status is FeasStatus.FEASIBLE
        assert res.z[0] >= 1.1 - 1e-8

    def test_contradictory_pair(self):
        a = AffineLmi(constant=np.array([[0.0]]), coeffs=(np.array([[1.0]]),))
        b = AffineLmi(constant=np.array([[-1.0]]), coeffs=(np.array([[-1.0]]),))
        res = solve_feasibility([a, b])
        assert res.status is FeasStatus.INFEASIBLE

    def test_scalar_stability_certificate(self):
        # find p > 0 with 0.25 p <= 0.8 p, i.e. 0.55 p >= 0
        main = AffineLmi(constant=np.array([[0.0]]), coeffs=(np.array([[0.55]]),))
        pos = AffineLmi(constant=np.array([[0.0]]), coeffs=(np.array([[1.0]]),))
        res = solve_feasibility([main, pos], strict={1})
        assert res.status is FeasStatus.FEASIBLE
        assert res.z[0] > 0

    def test_returned_point_rechecked(self):
        lmi = AffineLmi(constant=np.array([[-1.0]]), coeffs=(np.array([[1.0]]),))
        res = solve_feasibility([lmi])
        assert min(res.min_eigs) >= -1e-8


class TestSynthGain:
    def test_scalar_deadbeat(self):
        cert = synth_gain(scalar_deadbeat_record(), lam=0.25)
        closed = 0.5 + cert.K[0, 0]
        assert abs(closed) <= 0.5 + 1e-6

    def test_not_informative_unexcited_unstable(self):
        # x+ = 2x with u = 0: the record leaves B free, so the consistent set
        # is {(2, b) : b real} and no single gain can contract it uniformly
        d = DataMatrices(X=np.array([[1.0, 2.0, 4.0]]), U_minus=np.array([[0.0, 0.0]]))
        cs = consistent_set(d)
        for K in np.linspace(-10, 10, 81):
            if K == 0.0:
                assert 2.0**2 > 0.8
            else:
                b = (10.0 - 2.0) / K  # consistent pair with closed loop at 10
                assert (2.0 + b * K) ** 2 > 0.8
        assert cs.kernel_dirs.shape[1] == 1
        with pytest.raises(NotInformative):
            synth_gain(d, lam=0.8)

    def test_certificate_normalized_and_valid(self):
        modes = gen_modes(31, n=3, m=2, p=1)
        d = gen_init_data(modes[0], T=5, seed=[31, 0])
        cert = synth_gain(d, lam=0.8)
        from switchstab.linalg import spectral_norm, sym_eig_extremes

        assert spectral_norm(cert.P) == pytest.approx(1.0, rel=1e-9)
        lo, _ = sym_eig_extremes(cert.P)
        assert lo > 0

    def test_underdetermined_record_still_informative(self):
        # T < n + m leaves the consistent set fat; synthesis must still certify
        modes = gen_modes(32, n=3, m=2, p=1)
        d = gen_init_data(modes[0], T=4, seed=[32, 0])
        cert = synth_gain(d, lam=0.8)
        assert verify_uniform_decay(d, cert, sample_count=200, tol=1e-6)

    @pytest.mark.parametrize("scale", [1e-4, 1.0, 1e4])
    def test_scale_invariance(self, scale):
        # uniformly scaling every sample leaves the consistent set unchanged,
        # so synthesis must succeed at any data magnitude
        modes = gen_modes(203, n=3, m=2, p=1, spectral_range=(0.6, 1.0))
        d = gen_init_data(modes[0], T=5, seed=[203, 0],
                          x0_scale=scale, u_scale=scale)
        cert = synth_gain(d, lam=0.8)
        assert verify_uniform_decay(d, cert, sample_count=100)


class TestVerifyUniformDecay:
    def test_singleton_deadbeat_true(self):
        d = scalar_deadbeat_record()
        cert = GainCertificate(K=np.array([[-0.5]]), P=np.array([[1.0]]), lam=0.05)
        assert verify_uniform_decay(d, cert)  # closed loop is exactly 0

    def test_unstable_zero_gain_false(self):
        d = record_from_mode(np.array([[2.0]]), np.array([[1.0]]), T=3, seed=1)
        cert = GainCertificate(K=np.array([[0.0]]), P=np.array([[1.0]]), lam=0.8)
        assert not verify_uniform_decay(d, cert)

    def test_synthesized_random(self):
        rng = np.random.default_rng(33)
        for trial in range(5):
            n, m = int(rng.integers(1, 4)), int(rng.integers(1, 3))
            modes = gen_modes(int(rng.integers(10_000)), n=n, m=m, p=1)
            d = gen_init_data(modes[0], T=n + m, seed=trial)
            cert = synth_gain(d, lam=0.8)
            assert verify_uniform_decay(d, cert, sample_count=100)


class TestGrowthParams:
    def test_zero_dynamics(self):
        A, B, P = np.array([[0.0]]), np.array([[0.0]]), np.array([[1.0]])
        # tiny rates already satisfy the block inequality for zero dynamics
        assert growth_envelope_holds(A, B, P, lambda_u=1e-3, k=1.0)
        cert = GainCertificate(K=np.array([[0.0]]), P=P, lam=0.5)
        gp = growth_params([(A, B)], [cert])
        assert gp.lambda_u == 1.0  # clamped to the representable floor

    def test_marginal_scalar_needs_one(self):
        A, B, P = np.array([[1.0]]), np.array([[0.0]]), np.array([[1.0]])
        cert = GainCertificate(K=np.array([[0.0]]), P=P, lam=0.5)
        gp = growth_params([(A, B)], [cert])
        assert gp.lambda_u == pytest.approx(1.0, abs=2e-3)
        assert not growth_envelope_holds(A, B, P, lambda_u=0.9, k=1e9)

    def test_one_step_bound_oracle(self):
        rng = np.random.default_rng(34)
        modes = gen_modes(34, n=3, m=2, p=3)
        init = [gen_init_data(mode, T=5, seed=[34, i]) for i, mode in enumerate(modes)]
        certs = [synth_gain(d, lam=0.8) for d in init]
        gp = growth_params(modes, certs)
        for (A, B), cert in zip(modes, certs):
            for _ in range(1000):
                x = rng.standard_normal(3)
                u = rng.standard_normal(2)
                v_now = x @ cert.P @ x
                xn = A @ x + B @ u
                v_next = xn @ cert.P @ xn
                budget = gp.lambda_u * v_now + gp.k * (u @ u)
                assert v_next <= budget * (1 + 1e-8)

    def test_lambda_u_floor_validated(self):
        with pytest.raises(ValueError):
            GrowthParams(lambda_u=0.5, k=1.0)
        with pytest.raises(ValueError):
            GrowthParams(lambda_u=2.0, k=0.0)


class TestComputeMu:
    def test_identity_certificates(self):
        certs = [
            GainCertificate(K=np.zeros((1, 2)), P=np.eye(2), lam=0.5) for _ in range(3)
        ]
        assert compute_mu(certs) == pytest.approx(1.0)

    def test_scalar_scaling(self):
        c1 = GainCertificate(K=np.zeros((1, 2)), P=np.eye(2), lam=0.5)
        c2 = GainCertificate(K=np.zeros((1, 2)), P=2.0 * np.eye(2), lam=0.5)
        assert compute_mu([c1, c2]) == pytest.approx(2.0)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(35)
        M1 = rng.standard_normal((3, 3))
        M2 = rng.standard_normal((3, 3))
        P1 = M1 @ M1.T + 0.5 * np.eye(3)
        P2 = M2 @ M2.T + 0.5 * np.eye(3)
        c1 = GainCertificate(K=np.zeros((1, 3)), P=P1, lam=0.5)
        c2 = GainCertificate(K=np.zeros((1, 3)), P=P2, lam=0.5)
        brute = max(
            np.linalg.svd(P1 @ np.linalg.inv(P2), compute_uv=False)[0],
            np.linalg.svd(P2 @ np.linalg.inv(P1), compute_uv=False)[0],
            1.0,
        )
        assert compute_mu([c1, c2]) == pytest.approx(brute)

    def test_mu_at_least_one(self):
        rng = np.random.default_rng(36)
        for _ in range(10):
            M = rng.standard_normal((2, 2))
            P = M @ M.T + 0.1 * np.eye(2)
            c = GainCertificate(K=np.zeros((1, 2)), P=P, lam=0.5)
            assert compute_mu([c]) >= 1.0 - 1e-12
