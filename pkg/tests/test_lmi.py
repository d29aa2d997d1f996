import numpy as np
import pytest

from dissynth import (InterconnectionProblem, Subsystem, build_permutation,
                      global_lmi, hinf_supply, local_lmi, smat, svec,
                      svec_dim, zero_supply)
from dissynth.lmi import SQRT2

from conftest import random_problem


class TestSvec:
    def test_two_by_two(self):
        v = svec(np.array([[1.0, 2.0], [2.0, 3.0]]))
        assert np.allclose(v, [1.0, 2.0 * SQRT2, 3.0])
        assert v[1] == 2.0 * SQRT2

    def test_identity_three(self):
        v = svec(np.eye(3))
        assert np.array_equal(v, [1, 0, 1, 0, 0, 1])
        assert np.isclose(np.linalg.norm(v), np.sqrt(3.0))

    def test_norm_preservation(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            k = int(rng.integers(1, 8))
            X = rng.standard_normal((k, k))
            X = X + X.T
            assert abs(np.linalg.norm(svec(X)) - np.linalg.norm(X, "fro")) < 1e-12

    def test_inner_product_is_trace(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            k = int(rng.integers(1, 6))
            X = rng.standard_normal((k, k)); X = X + X.T
            Y = rng.standard_normal((k, k)); Y = Y + Y.T
            assert abs(svec(X) @ svec(Y) - np.trace(X @ Y)) < 1e-10 * (
                1 + abs(np.trace(X @ Y)))

    def test_round_trip_listed_matrices_exact(self):
        for X in (np.array([[1.0, 2.0], [2.0, 3.0]]), np.eye(3)):
            assert np.array_equal(smat(svec(X)), X)

    def test_round_trip_random_within_one_ulp(self):
        # The sqrt(2) scaling cannot round-trip every double bit-exactly:
        # in binades where x*sqrt(2) crosses a power of two the ulp doubles,
        # so two adjacent inputs can collapse onto one scaled value.  The
        # attainable contract is: diagonals exact, off-diagonals within one
        # ulp, and the recovery is optimal (it fails only on collapsed pairs).
        rng = np.random.default_rng(2)
        for _ in range(100):
            k = int(rng.integers(1, 7))
            X = rng.standard_normal((k, k)) * np.exp(rng.uniform(-8, 8))
            X = X + X.T
            R = smat(svec(X))
            assert np.array_equal(np.diag(R), np.diag(X))
            gap = np.abs(R - X)
            assert np.all(gap <= np.spacing(np.abs(X)))

    def test_rejects_asymmetric(self):
        X = np.array([[1.0, 2.0], [2.0 + 1e-6, 3.0]])
        with pytest.raises(ValueError, match="not symmetric"):
            svec(X)

    def test_smat_rejects_bad_length(self):
        with pytest.raises(ValueError):
            smat(np.zeros(4))

    def test_svec_dim(self):
        assert [svec_dim(k) for k in (0, 1, 2, 3, 4)] == [0, 1, 3, 6, 10]


class TestLocalLmi:
    def test_scalar_feasible_point(self):
        sub = Subsystem(A=[[-1.0]], B=[[1.0]], G=[[1.0]], C=[[1.0]])
        _pos, block = local_lmi(sub)
        S = np.array([[1.0, 1.0], [1.0, 0.0]])  # s11=1, s12=1, s22=0
        X = block.evaluate({"P": np.array([[1.0]]), "Y": np.array([[0.0]]), "S": S})
        assert np.allclose(X, [[-2.0, 0.0], [0.0, -1.0]])
        assert block.satisfied({"P": np.array([[1.0]]), "Y": np.array([[0.0]]), "S": S})

    def test_scalar_violated_point(self):
        sub = Subsystem(A=[[1.0]], B=[[1.0]], G=[[1.0]], C=[[1.0]])
        _pos, block = local_lmi(sub)
        assignment = {"P": np.array([[1.0]]), "Y": np.array([[0.0]]),
                      "S": np.zeros((2, 2))}
        X = block.evaluate(assignment)
        assert X[0, 0] == 2.0
        assert not block.satisfied(assignment)

    def test_identity_assignment_blocks(self):
        # At S = P = Y = I the (1,1) block is A' + A + 2I - C'C, the coupling
        # block is G (S12 of the identity is zero), and the (2,2) block is -I.
        rng = np.random.default_rng(4)
        for _ in range(10):
            n, nw, ny = (int(rng.integers(1, 4)) for _ in range(3))
            sub = Subsystem(A=rng.standard_normal((n, n)),
                            B=rng.standard_normal((n, 1)),
                            G=rng.standard_normal((n, nw)),
                            C=rng.standard_normal((ny, n)))
            _pos, block = local_lmi(sub)
            X = block.evaluate({"P": np.eye(n), "Y": np.eye(n),
                                "S": np.eye(nw + ny)})
            A, G, C = sub.A, sub.G, sub.C
            assert np.allclose(X[:n, :n], A.T + A + 2 * np.eye(n) - C.T @ C)
            assert np.allclose(X[:n, n:], G)
            assert np.allclose(X[n:, n:], -np.eye(nw))

    def test_exactly_symmetric_by_construction(self):
        rng = np.random.default_rng(9)
        for _ in range(20):
            n, nw, ny = (int(rng.integers(1, 5)) for _ in range(3))
            sub = Subsystem(A=rng.standard_normal((n, n)),
                            B=rng.standard_normal((n, 2)),
                            G=rng.standard_normal((n, nw)),
                            C=rng.standard_normal((ny, n)))
            _pos, block = local_lmi(sub)
            k = nw + ny
            S = rng.standard_normal((k, k)); S = (S + S.T) / 2
            P = rng.standard_normal((n, n)); P = (P + P.T) / 2
            X = block.evaluate({"P": P, "Y": rng.standard_normal((n, n)), "S": S})
            assert np.linalg.norm(X - X.T, "fro") == 0.0

    def test_storage_constraint_margin(self):
        sub = Subsystem(A=[[-1.0]], B=[[1.0]], G=[[1.0]], C=[[1.0]])
        pos, _block = local_lmi(sub, p_floor=1e-4)
        assert pos.slack({"P": np.array([[1e-4]])}) == pytest.approx(0.0, abs=1e-18)
        assert not pos.satisfied({"P": np.array([[5e-5]])})


def _n1_instance():
    sub = Subsystem(A=[[-1.0]], B=[[1.0]], G=[[1.0]], C=[[1.0]])
    return InterconnectionProblem(
        subsystems=[sub], M_wy=np.array([[0.0]]), M_wd=np.array([[1.0]]),
        M_zy=np.array([[1.0]]), M_zd=np.array([[0.0]]), n_d=1, n_z=1)


class TestGlobalLmi:
    def test_single_subsystem_closed_form(self):
        # w = d, z = y: the expression over [y; d] must equal
        # [[s22 + 1, s12], [s12, s11 - eta]].
        p = _n1_instance()
        perm = build_permutation([1], [1], 1, 1)
        con = global_lmi(p, perm, hinf_supply(1.0, 1, 1), margin=1e-6)
        rng = np.random.default_rng(12)
        for _ in range(20):
            s11, s12, s22 = rng.standard_normal(3)
            eta = float(rng.uniform(0, 2))
            S = np.array([[s11, s12], [s12, s22]])
            X = con.evaluate({"S0": S, "eta": eta})
            assert np.allclose(X, [[s22 + 1.0, s12], [s12, s11 - eta]], atol=1e-12)

    def test_single_subsystem_feasible_point(self):
        p = _n1_instance()
        perm = build_permutation([1], [1], 1, 1)
        con = global_lmi(p, perm, hinf_supply(1.0, 1, 1), margin=1e-6)
        S = np.array([[0.0, 0.0], [0.0, -2.0]])
        X = con.evaluate({"S0": S, "eta": 1.0})
        assert np.allclose(X, np.diag([-1.0, -1.0]))
        assert con.satisfied({"S0": S, "eta": 1.0})

    def test_decoupled_reduces_to_s22_blocks(self):
        rng = np.random.default_rng(13)
        subs = [Subsystem(A=rng.standard_normal((2, 2)), B=np.eye(2),
                          G=rng.standard_normal((2, 2)),
                          C=rng.standard_normal((1, 2))) for _ in range(3)]
        p = InterconnectionProblem(
            subsystems=subs, M_wy=np.zeros((6, 3)), M_wd=np.zeros((6, 0)),
            M_zy=np.zeros((0, 3)), M_zd=np.zeros((0, 0)))
        perm = build_permutation(p.w_dims, p.y_dims, 0, 0)
        con = global_lmi(p, perm, zero_supply(), margin=1e-6)
        Ss = {f"S{i}": rng.standard_normal((3, 3)) for i in range(3)}
        Ss = {k: (v + v.T) / 2 for k, v in Ss.items()}
        X = con.evaluate(Ss)
        from scipy.linalg import block_diag
        expected = block_diag(*[Ss[f"S{i}"][2:, 2:] for i in range(3)])
        assert np.allclose(X, expected, atol=1e-12)

    def test_quadratic_form_identity(self):
        # [y; d]' expr [y; d] = sum_i [w_i; y_i]' S_i [w_i; y_i] - [d; z]' S [d; z]
        # with [w; z] = M [y; d], to 1e-10 relative.
        rng = np.random.default_rng(14)
        for _ in range(60):
            p = random_problem(rng)
            perm = build_permutation(p.w_dims, p.y_dims, p.n_d, p.n_z)
            eta = float(rng.uniform(0, 3))
            supply = hinf_supply(eta, p.n_d, p.n_z)
            con = global_lmi(p, perm, supply, margin=1e-6)
            kdims = [nw + ny for nw, ny in zip(p.w_dims, p.y_dims)]
            assignment = {}
            for i, k in enumerate(kdims):
                S = rng.standard_normal((k, k))
                assignment[f"S{i}"] = (S + S.T) / 2
            assignment["eta"] = eta
            X = con.evaluate(assignment)

            y = rng.standard_normal(p.n_y)
            d = rng.standard_normal(p.n_d)
            yd = np.concatenate([y, d])
            wz = p.M @ yd
            w, z = wz[:p.n_w], wz[p.n_w:]
            lhs = yd @ X @ yd
            rhs = 0.0
            w_off = y_off = 0
            for i, (nw, ny) in enumerate(zip(p.w_dims, p.y_dims)):
                stack = np.concatenate([w[w_off:w_off + nw], y[y_off:y_off + ny]])
                rhs += stack @ assignment[f"S{i}"] @ stack
                w_off += nw
                y_off += ny
            dz = np.concatenate([d, z])
            rhs -= dz @ supply.S @ dz
            assert abs(lhs - rhs) <= 1e-10 * (1.0 + abs(rhs))


class TestSupply:
    def test_unit(self):
        s = hinf_supply(1.0, 1, 1)
        assert np.array_equal(s.S, [[1.0, 0.0], [0.0, -1.0]])

    def test_zero_eta(self):
        s = hinf_supply(0.0, 2, 1)
        assert np.array_equal(s.S, np.diag([0.0, 0.0, -1.0]))

    def test_benchmark_optimum_value(self):
        s = hinf_supply(4.9e-4, 1, 1)
        assert np.array_equal(s.S, np.diag([4.9e-4, -1.0]))
        assert s.eta == 4.9e-4

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            hinf_supply(-1e-12, 1, 1)
