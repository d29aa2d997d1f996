import numpy as np

from dissynth import (LinTerm, LmiConstraint, QuadTerm, SdpProblem, VarSpec,
                      solve_sdp, svec)
from dissynth.subsolver import CompiledSdp


def scalar_geq(name, var, offset=0.0, margin=0.0, sign=1.0):
    """Constraint [sign*x + offset] >= margin as a 1x1 LMI."""
    return LmiConstraint(
        name=name, variables=(VarSpec(var, 1, 1),), dim=1,
        build=lambda v, s=sign, o=offset: np.atleast_2d(np.asarray(v[var])) * s + o,
        sense="psd", margin=margin)


class TestBasics:
    def test_min_x_on_the_cone_boundary(self):
        prob = SdpProblem(
            variables=[VarSpec("x", 1, 1)],
            constraints=[scalar_geq("pos", "x")],
            lin_terms=[LinTerm("x", 1.0)])
        sol = solve_sdp(prob)
        assert sol.ok
        assert abs(float(np.ravel(sol.values["x"])[0])) < 1e-7
        assert abs(sol.objective) < 1e-7

    def test_min_trace_above_identity(self):
        con = LmiConstraint(
            name="geq_I", variables=(VarSpec("X", 2, 2, symmetric=True),),
            dim=2, build=lambda v: v["X"] - np.eye(2), sense="psd", margin=0.0)
        prob = SdpProblem(
            variables=[VarSpec("X", 2, 2, symmetric=True)],
            constraints=[con],
            lin_terms=[LinTerm("X", svec(np.eye(2)))])
        sol = solve_sdp(prob)
        assert sol.ok
        assert np.allclose(sol.values["X"], np.eye(2), atol=1e-6)
        assert abs(sol.objective - 2.0) < 1e-6

    def test_infeasible_pair_with_certificate(self):
        prob = SdpProblem(
            variables=[VarSpec("x", 1, 1)],
            constraints=[scalar_geq("pos", "x"),
                         scalar_geq("neg", "x", offset=-1.0, sign=-1.0)],
            lin_terms=[LinTerm("x", 1.0)])
        sol = solve_sdp(prob)
        assert sol.status == "infeasible"
        assert sol.certificate is not None
        assert sol.certificate.support < 0
        assert sol.certificate.residual <= 1e-8

    def test_off_diagonal_cone_scaling(self):
        # min x12 over [[1, x12], [x12, 1]] >= 0 pins x12 = -1; a wrong
        # triangle-scaling convention would move the optimum.
        def build(v):
            x = float(np.ravel(v["x"])[0])
            return np.array([[1.0, x], [x, 1.0]])

        con = LmiConstraint("corr", (VarSpec("x", 1, 1),), 2, build, "psd", 0.0)
        prob = SdpProblem(variables=[VarSpec("x", 1, 1)], constraints=[con],
                          lin_terms=[LinTerm("x", 1.0)])
        sol = solve_sdp(prob)
        assert sol.ok
        assert abs(float(np.ravel(sol.values["x"])[0]) + 1.0) < 1e-6

    def test_psd_projection_matches_eigenvalue_clipping(self):
        rng = np.random.default_rng(8)
        for _ in range(5):
            A = rng.standard_normal((4, 4))
            A = (A + A.T) / 2
            con = LmiConstraint(
                "psd", (VarSpec("X", 4, 4, symmetric=True),), 4,
                lambda v: v["X"], "psd", 0.0)
            prob = SdpProblem(
                variables=[VarSpec("X", 4, 4, symmetric=True)],
                constraints=[con],
                quad_terms=[QuadTerm("X", 1.0, anchor=svec(A))])
            sol = solve_sdp(prob, tol_gap=1e-11)
            w, V = np.linalg.eigh(A)
            expected = V @ np.diag(np.maximum(w, 0.0)) @ V.T
            assert np.max(np.abs(sol.values["X"] - expected)) < 1e-7


class TestProperties:
    def test_unconstrained_prox_returns_anchor(self):
        rng = np.random.default_rng(17)
        for _ in range(10):
            a = rng.standard_normal(6)
            prob = SdpProblem(
                variables=[VarSpec("X", 3, 3, symmetric=True)],
                constraints=[],
                quad_terms=[QuadTerm("X", 2.0, anchor=a)])
            sol = solve_sdp(prob)
            assert sol.ok
            assert np.max(np.abs(svec(sol.values["X"]) - a)) < 1e-8

    def test_random_feasible_problems_solve_within_tolerance(self):
        rng = np.random.default_rng(18)
        for _ in range(10):
            k = int(rng.integers(2, 5))
            # interior point X0 > margin*I by construction
            L = rng.standard_normal((k, k))
            X0 = L @ L.T + (0.5 + rng.random()) * np.eye(k)
            con = LmiConstraint(
                "floor", (VarSpec("X", k, k, symmetric=True),), k,
                lambda v: v["X"], "psd", margin=1e-3)
            anchor = svec(X0)
            prob = SdpProblem(
                variables=[VarSpec("X", k, k, symmetric=True)],
                constraints=[con],
                quad_terms=[QuadTerm("X", 1.0, anchor=anchor)])
            sol = solve_sdp(prob)
            assert sol.ok
            assert con.slack({"X": sol.values["X"]}) >= -1e-8
            assert sol.feas_violation <= 1e-8

    def test_deterministic_bit_for_bit(self):
        rng = np.random.default_rng(19)
        A = rng.standard_normal((3, 3))
        A = A + A.T
        def make():
            con = LmiConstraint(
                "psd", (VarSpec("X", 3, 3, symmetric=True),), 3,
                lambda v: v["X"], "psd", 0.0)
            return SdpProblem(
                variables=[VarSpec("X", 3, 3, symmetric=True)],
                constraints=[con],
                quad_terms=[QuadTerm("X", 1.0, anchor=svec(A))])
        s1 = solve_sdp(make())
        s2 = solve_sdp(make())
        assert np.array_equal(s1.values["X"], s2.values["X"])
        assert s1.objective == s2.objective

    def test_anchor_swap_reuses_compiled_problem(self):
        con = LmiConstraint(
            "psd", (VarSpec("X", 2, 2, symmetric=True),), 2,
            lambda v: v["X"], "psd", 0.0)
        prob = SdpProblem(
            variables=[VarSpec("X", 2, 2, symmetric=True)],
            constraints=[con],
            quad_terms=[QuadTerm("X", 1.0, anchor=None, label="prox")])
        compiled = CompiledSdp(prob)
        rng = np.random.default_rng(20)
        for _ in range(4):
            A = rng.standard_normal((2, 2))
            A = (A + A.T) / 2
            compiled.set_anchor("prox", svec(A))
            sol = compiled.solve(tol_gap=1e-11)
            w, V = np.linalg.eigh(A)
            expected = V @ np.diag(np.maximum(w, 0.0)) @ V.T
            assert np.max(np.abs(sol.values["X"] - expected)) < 1e-7
