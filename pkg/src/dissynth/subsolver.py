"""Conic subproblem solver.

Solves the small structured problems produced by the splitting layers:

    minimize    sum_j w_j ||packed(X_vj) - a_j||^2  +  sum_j <c_j, packed(X_vj)>
    subject to  each LmiConstraint (PSD, with margin), scalar bounds x >= 0

over named matrix variables packed into one real vector (svec for symmetric
blocks, column-major vec otherwise).  The cone program is handed to Clarabel,
a primal-dual interior-point solver whose PSD triangle cone uses the same
scaled upper-triangle convention as :func:`dissynth.lmi.svec`.

Affine constraint data is extracted by probing the constraint builders on
unit basis matrices, so the `lmi` expression objects stay the single source
of truth.  A compiled problem caches the cone data; prox anchors can be
swapped between solves, which is what the ADMM loop does every iteration.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
import scipy.sparse as sp
import clarabel

from .lmi import LmiConstraint, VarSpec, svec

STATUS_OPTIMAL = "optimal"
STATUS_INFEASIBLE = "infeasible"
STATUS_MAX_ITER = "max-iterations"
STATUS_NUMERICAL = "numerical-failure"


@dataclass
class QuadTerm:
    """weight * || packed(var) - anchor ||^2 ; anchor None means 0."""

    var: str
    weight: float
    anchor: np.ndarray | None = None
    label: str | None = None


@dataclass
class LinTerm:
    """<coeff, packed(var)>; coeff may be a scalar for scalar variables."""

    var: str
    coeff: np.ndarray | float


@dataclass
class SdpProblem:
    variables: list[VarSpec]
    constraints: list[LmiConstraint]
    quad_terms: list[QuadTerm] = field(default_factory=list)
    lin_terms: list[LinTerm] = field(default_factory=list)


@dataclass
class InfeasibilityCertificate:
    """Dual improving ray: y'A ~ 0 with y'b < 0, y in the dual cone."""

    ray: np.ndarray
    support: float      # b' y, negative for a valid certificate
    residual: float     # ||A' y||_inf / max(1, |b' y|)


@dataclass
class SdpSolution:
    values: dict
    objective: float
    status: str
    feas_violation: float
    gap: float | None = None
    iterations: int = 0
    solve_time: float = 0.0
    certificate: InfeasibilityCertificate | None = None
    solver_status: str = ""

    @property
    def ok(self) -> bool:
        return self.status == STATUS_OPTIMAL


class CompiledSdp:
    """Cone-program form of an SdpProblem with swappable prox anchors."""

    def __init__(self, problem: SdpProblem):
        self.problem = problem
        self.offsets: dict[str, int] = {}
        off = 0
        for v in problem.variables:
            if v.name in self.offsets:
                raise ValueError(f"duplicate variable {v.name!r}")
            self.offsets[v.name] = off
            off += v.dim
        self.n = off
        self.vmap = {v.name: v for v in problem.variables}
        self._anchors = [t.anchor for t in problem.quad_terms]
        self._labels = {t.label: j for j, t in enumerate(problem.quad_terms)
                        if t.label is not None}
        self._build_objective()
        self._build_cones()

    def _build_objective(self):
        diag = np.zeros(self.n)
        for t in self.problem.quad_terms:
            v = self.vmap[t.var]
            o = self.offsets[t.var]
            diag[o:o + v.dim] += 2.0 * t.weight
        self.P = sp.diags(diag, format="csc")
        base = np.zeros(self.n)
        for t in self.problem.lin_terms:
            v = self.vmap[t.var]
            o = self.offsets[t.var]
            base[o:o + v.dim] += np.broadcast_to(
                np.asarray(t.coeff, dtype=float).ravel(), (v.dim,))
        self._q_base = base

    def _zero_assignment(self, varnames):
        return {nm: self.vmap[nm].unpack(np.zeros(self.vmap[nm].dim))
                for nm in varnames}

    def _build_cones(self):
        rows, rhs, cones = [], [], []
        for c in self.problem.constraints:
            names = [v.name for v in c.variables]
            for nm in names:
                if nm not in self.vmap:
                    raise ValueError(f"constraint {c.name!r} uses undeclared variable {nm!r}")
            if c.dim == 0:
                continue
            zero = self._zero_assignment(names)
            g = svec(np.asarray(c.build(zero), dtype=float), tol=1e-9)
            m = g.size
            F = np.zeros((m, self.n))
            for nm in names:
                v = self.vmap[nm]
                o = self.offsets[nm]
                assign = dict(zero)
                for j in range(v.dim):
                    assign[nm] = v.basis(j)
                    F[:, o + j] = svec(np.asarray(c.build(assign), dtype=float),
                                       tol=1e-9) - g
                assign[nm] = zero[nm]
            mI = c.margin * svec(np.eye(c.dim))
            if c.sense == "psd":
                rows.append(-F)
                rhs.append(g - mI)
            else:
                rows.append(F)
                rhs.append(-g - mI)
            cones.append(clarabel.PSDTriangleConeT(c.dim))
        for v in self.problem.variables:
            if v.nonneg:
                if v.dim != 1:
                    raise ValueError(f"nonneg bound only supported on scalars ({v.name})")
                r = np.zeros((1, self.n))
                r[0, self.offsets[v.name]] = -1.0
                rows.append(r)
                rhs.append(np.zeros(1))
                cones.append(clarabel.NonnegativeConeT(1))
        if rows:
            self.A = sp.csc_matrix(np.vstack(rows))
            self.b = np.concatenate(rhs)
        else:
            self.A = sp.csc_matrix((0, self.n))
            self.b = np.zeros(0)
        self.cones = cones

    def set_anchor(self, label: str, anchor: np.ndarray):
        self._anchors[self._labels[label]] = np.asarray(anchor, dtype=float)

    def _q(self) -> np.ndarray:
        q = self._q_base.copy()
        for t, anchor in zip(self.problem.quad_terms, self._anchors):
            if anchor is None:
                continue
            v = self.vmap[t.var]
            o = self.offsets[t.var]
            q[o:o + v.dim] -= 2.0 * t.weight * anchor
        return q

    def _objective_at(self, x: np.ndarray) -> float:
        total = 0.0
        for t, anchor in zip(self.problem.quad_terms, self._anchors):
            v = self.vmap[t.var]
            o = self.offsets[t.var]
            block = x[o:o + v.dim]
            if anchor is not None:
                block = block - anchor
            total += t.weight * float(block @ block)
        total += float(self._q_base @ x)
        return total

    def _violation_at(self, values: Mapping) -> float:
        worst = 0.0
        for c in self.problem.constraints:
            if c.dim == 0:
                continue
            worst = max(worst, -min(c.slack(values), 0.0))
        for v in self.problem.variables:
            if v.nonneg:
                worst = max(worst, -min(float(values[v.name]), 0.0))
        return worst

    def unpack(self, x: np.ndarray) -> dict:
        return {v.name: v.unpack(x[self.offsets[v.name]: self.offsets[v.name] + v.dim])
                for v in self.problem.variables}

    def solve(self, tol_feas: float = 1e-8, tol_gap: float = 1e-8,
              max_iter: int = 200) -> SdpSolution:
        settings = clarabel.DefaultSettings()
        settings.verbose = False
        settings.max_iter = max_iter
        settings.tol_gap_abs = tol_gap
        settings.tol_gap_rel = tol_gap
        settings.tol_feas = min(tol_feas, 1e-8)
        settings.reduced_tol_gap_abs = 1e-8
        settings.reduced_tol_gap_rel = 1e-8
        settings.reduced_tol_feas = 1e-8
        t0 = time.perf_counter()
        solver = clarabel.DefaultSolver(self.P, self._q(), self.A, self.b,
                                        self.cones, settings)
        sol = solver.solve()
        wall = time.perf_counter() - t0
        raw = str(sol.status).split(".")[-1]
        x = np.asarray(sol.x, dtype=float)
        values = self.unpack(x)
        gap = None
        try:
            gap = abs(float(sol.obj_val) - float(sol.obj_val_dual))
        except Exception:
            pass

        if raw in ("PrimalInfeasible", "AlmostPrimalInfeasible"):
            z = np.asarray(sol.z, dtype=float)
            support = float(self.b @ z) if z.size else 0.0
            lin = float(np.max(np.abs(self.A.T @ z), initial=0.0))
            cert = InfeasibilityCertificate(
                ray=z, support=support,
                residual=lin / max(1.0, abs(support)))
            return SdpSolution(values=values, objective=np.nan,
                               status=STATUS_INFEASIBLE, feas_violation=np.inf,
                               gap=gap, iterations=sol.iterations,
                               solve_time=wall, certificate=cert,
                               solver_status=raw)

        viol = self._violation_at(values)
        obj = self._objective_at(x)
        # classify stalled runs by the measured iterate quality: an interior
        # point method that hits its numerical floor below the requested
        # tolerance still returns an excellent point
        good = viol <= 10 * tol_feas and (
            gap is None or gap <= 1e-8 * max(1.0, abs(obj)))
        if raw == "Solved" or (
                raw in ("AlmostSolved", "InsufficientProgress", "NumericalError")
                and good):
            status = STATUS_OPTIMAL
        elif raw in ("MaxIterations", "AlmostSolved"):
            status = STATUS_MAX_ITER
        else:
            status = STATUS_NUMERICAL
        return SdpSolution(values=values, objective=obj, status=status,
                           feas_violation=viol, gap=gap,
                           iterations=sol.iterations, solve_time=wall,
                           solver_status=raw)


def solve_sdp(problem: SdpProblem, tol_feas: float = 1e-8,
              tol_gap: float = 1e-8, max_iter: int = 200) -> SdpSolution:
    """One-shot compile-and-solve; see :class:`CompiledSdp` for reuse."""
    return CompiledSdp(problem).solve(tol_feas=tol_feas, tol_gap=tol_gap,
                                      max_iter=max_iter)
