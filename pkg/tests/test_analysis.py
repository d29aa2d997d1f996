import numpy as np
import pytest

from dissynth import (AdmmConfig, StateSpace, check_dissipation, hinf_norm,
                      hinf_norm_bisection, simulate, simulate_network,
                      spectral_abscissa, synthesize_stabilizing, zero_supply)
from dissynth.lmi import LocalCertificate


class TestSpectralAbscissa:
    def test_triangular_block(self):
        assert spectral_abscissa(np.array([[4.0, 0.0], [2.0, -2.0]])) == 4.0

    def test_identity(self):
        assert spectral_abscissa(np.eye(3)) == 1.0

    def test_imaginary_pair(self):
        assert spectral_abscissa(np.array([[0.0, 1.0], [-1.0, 0.0]])) == pytest.approx(0.0, abs=1e-12)

    def test_rejects_nonsquare(self):
        with pytest.raises(ValueError):
            spectral_abscissa(np.zeros((2, 3)))


def _first_order(d_gain=0.0):
    return StateSpace(A=[[-1.0]], B=[[1.0]], C=[[1.0]], D=[[d_gain]])


class TestHinfNorm:
    def test_first_order_peak_at_dc(self):
        assert hinf_norm(_first_order()) == pytest.approx(1.0, abs=1e-6)

    def test_first_order_with_feedthrough(self):
        assert hinf_norm(_first_order(0.5)) == pytest.approx(1.5, abs=1e-6)

    def test_second_order_resonance(self):
        # realization of 1/(s^2 + 0.1 s + 1); expected value from a dense
        # sweep of the analytic magnitude response
        ss = StateSpace(A=[[0.0, 1.0], [-1.0, -0.1]], B=[[0.0], [1.0]],
                        C=[[1.0, 0.0]], D=[[0.0]])
        w = np.linspace(0.5, 1.5, 1_000_000)
        mag = 1.0 / np.sqrt((1.0 - w * w) ** 2 + (0.1 * w) ** 2)
        oracle = float(mag.max())
        assert oracle == pytest.approx(10.0125, abs=1e-3)
        assert hinf_norm(ss) == pytest.approx(oracle, abs=1e-3)

    def test_unstable_rejected(self):
        with pytest.raises(ValueError):
            hinf_norm(StateSpace(A=[[1.0]], B=[[1.0]], C=[[1.0]], D=[[0.0]]))

    def test_matches_bounded_real_bisection(self):
        rng = np.random.default_rng(31)
        for _ in range(20):
            n = int(rng.integers(1, 5))
            A = rng.standard_normal((n, n))
            A = A - (spectral_abscissa(A) + rng.uniform(0.5, 1.5)) * np.eye(n)
            ss = StateSpace(A=A, B=rng.standard_normal((n, 1)),
                            C=rng.standard_normal((1, n)),
                            D=rng.standard_normal((1, 1)))
            sweep = hinf_norm(ss)
            lmi = hinf_norm_bisection(ss, tol=1e-5)
            assert abs(sweep - lmi) <= 1e-4 * max(1.0, sweep)


class TestSimulate:
    def test_exponential_decay(self):
        ss = StateSpace(A=[[-1.0]], B=np.zeros((1, 0)), C=np.zeros((0, 1)),
                        D=np.zeros((0, 0)))
        traj = simulate(ss, None, [1.0], T=1.0, h=0.01)
        assert traj.x[-1, 0] == pytest.approx(np.exp(-1.0), abs=1e-8)

    def test_constant_trajectory(self):
        ss = StateSpace(A=np.zeros((2, 2)), B=np.zeros((2, 0)),
                        C=np.zeros((0, 2)), D=np.zeros((0, 0)))
        traj = simulate(ss, None, [3.0, -1.0], T=0.5, h=0.05)
        assert np.array_equal(traj.x, np.tile([3.0, -1.0], (11, 1)))

    def test_superposition(self):
        rng = np.random.default_rng(33)
        n = 3
        A = rng.standard_normal((n, n))
        A = A - (spectral_abscissa(A) + 0.5) * np.eye(n)
        ss = StateSpace(A=A, B=np.zeros((n, 0)), C=np.eye(n), D=np.zeros((n, 0)))
        xa = rng.standard_normal(n)
        xb = rng.standard_normal(n)
        ta = simulate(ss, None, xa, T=2.0, h=0.01)
        tb = simulate(ss, None, xb, T=2.0, h=0.01)
        tab = simulate(ss, None, xa + xb, T=2.0, h=0.01)
        assert np.max(np.abs(tab.x - (ta.x + tb.x))) < 1e-9

    def test_overflow_aborts_with_diagnostic(self):
        ss = StateSpace(A=[[5.0]], B=np.zeros((1, 0)), C=np.zeros((0, 1)),
                        D=np.zeros((0, 0)))
        with pytest.raises(RuntimeError, match="1e12"):
            simulate(ss, None, [1.0], T=10.0, h=0.01)

    def test_verified_benchmark_loop_decays(self, example1):
        from dissynth import AdmmConfig, assemble_closed_loop, synthesize_hinf
        res = synthesize_hinf(example1, AdmmConfig(mode="hinf", accelerated=True,
                                                   max_iter=100))
        assert res.verified
        cl = assemble_closed_loop(example1, res.gains)
        # horizon from the measured abscissa: |x(T)| <= ~exp(a*T) |x0|
        a = res.report.closed_loop_abscissa
        T = max(1.0, 1.2 * np.log(1e3) / -a)
        rng = np.random.default_rng(34)
        x0 = rng.standard_normal(6)
        traj = simulate(cl, None, x0, T=T, h=1e-4)
        assert np.linalg.norm(traj.x[-1]) < 1e-3 * np.linalg.norm(x0)

    def test_sampled_input_matches_callable(self):
        ss = StateSpace(A=[[-1.0]], B=[[1.0]], C=[[1.0]], D=[[0.0]])
        T, h = 1.0, 0.001
        t = np.arange(int(round(T / h)) + 1) * h
        samples = np.sin(3 * t)[:, None]
        t1 = simulate(ss, lambda tt: np.array([np.sin(3 * tt)]), [0.0], T, h)
        t2 = simulate(ss, samples, [0.0], T, h)
        # linear interpolation of the half-step only differs at O(h^2)
        assert np.max(np.abs(t1.x - t2.x)) < 1e-6


class TestCheckDissipation:
    def _verified(self, coupled_scalars):
        cfg = AdmmConfig(mode="stabilize", accelerated=True, max_iter=150)
        return synthesize_stabilizing(coupled_scalars, cfg)

    def test_verified_run_dissipates(self, coupled_scalars):
        res = self._verified(coupled_scalars)
        assert res.verified
        rng = np.random.default_rng(35)
        traj = simulate_network(coupled_scalars, res.gains,
                                None, rng.standard_normal(2), T=5.0, h=1e-3)
        check = check_dissipation(traj, res.certificates, coupled_scalars,
                                  zero_supply())
        assert check.passed
        assert check.worst_excess <= 0

    def test_sign_flip_detected(self, coupled_scalars):
        res = self._verified(coupled_scalars)
        flipped = [LocalCertificate(S=c.S, P=-c.P, Y=c.Y, n_w=c.n_w)
                   for c in res.certificates]
        rng = np.random.default_rng(36)
        traj = simulate_network(coupled_scalars, res.gains,
                                None, rng.standard_normal(2), T=1.0, h=1e-3)
        check = check_dissipation(traj, flipped, coupled_scalars, zero_supply())
        assert check.max_violation > 0
        assert not check.passed

    def test_zero_trajectory_zero_violation(self, coupled_scalars):
        res = self._verified(coupled_scalars)
        traj = simulate_network(coupled_scalars, res.gains, None,
                                np.zeros(2), T=0.5, h=1e-2)
        check = check_dissipation(traj, res.certificates, coupled_scalars,
                                  zero_supply())
        assert check.max_violation == 0.0
