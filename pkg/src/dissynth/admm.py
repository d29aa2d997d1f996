"""Consensus splitting between the per-subsystem LMIs and the global LMI.

One iteration runs N independent local solves (each over its own
(S_i, P_i, Y_i) with a prox pull toward the consensus copy of S_i), one
global solve (over the consensus copies and, in gain-bound mode, eta),
and the scaled dual update.  The accelerated variant adds Nesterov
momentum on (v, u); the optional restart resets the momentum whenever
the combined residual grows.

Consensus is carried over the supply blocks S_i only: P_i and Y_i appear
in no global constraint, so agreeing on them adds nothing.  In gain-bound
mode eta lives in the global block (it has no local copy); it is reported
as part of the consensus vector but carries no dual.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .lmi import (DEFAULT_MARGIN, DEFAULT_P_FLOOR, LocalCertificate,
                  VarSpec, global_lmi, hinf_supply, local_lmi, smat, svec,
                  svec_dim, zero_supply)
from .model import InterconnectionProblem, Subsystem, build_permutation, validate_problem
from .subsolver import CompiledSdp, LinTerm, QuadTerm, SdpProblem, SdpSolution

MODE_STABILIZE = "stabilize"
MODE_HINF = "hinf"


@dataclass
class AdmmConfig:
    mode: str = MODE_HINF
    rho: float = 1.0
    mu: float = 1.0
    accelerated: bool = False
    restart: bool = False
    max_iter: int = 200
    tol_primal: float = 1e-6
    tol_dual: float = 1e-6
    eps_margin: float = DEFAULT_MARGIN
    p_floor: float = DEFAULT_P_FLOOR
    solver_tol: float = 1e-12

    @property
    def margin_slack(self) -> float:
        """Extra strictness budgeted into the global-step margin.

        Covers two gaps between the iteration and the verification layer:
        the consensus point sits up to ~tol_primal outside either feasible
        set, and the final per-subsystem polish may move each supply block
        a little to admit a better-scaled storage matrix.  Both must stay
        inside the slack for the verified margin to survive.
        """
        return max(10.0 * self.tol_primal, 2e-4)

    def __post_init__(self):
        if self.mode not in (MODE_STABILIZE, MODE_HINF):
            raise ValueError(f"mode must be '{MODE_STABILIZE}' or '{MODE_HINF}'")
        if self.rho <= 0 or self.mu <= 0:
            raise ValueError("rho and mu must be positive")
        if self.accelerated and self.rho > self.mu * (1 + 1e-12):
            raise ValueError("accelerated mode requires rho <= mu")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")


@dataclass
class TraceRecord:
    k: int
    primal: float
    dual: float
    eta: float | None
    elapsed_ms: float


class ResidualTrace:
    """Per-iteration residual history."""

    def __init__(self):
        self.records: list[TraceRecord] = []

    def append(self, k, primal, dual, eta, elapsed_ms):
        self.records.append(TraceRecord(k, float(primal), float(dual),
                                        None if eta is None else float(eta),
                                        float(elapsed_ms)))

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def final(self) -> TraceRecord:
        return self.records[-1]

    def iterations_to(self, tol_primal: float, tol_dual: float) -> int | None:
        """First iteration index with both residuals at tolerance, else None."""
        for rec in self.records:
            if rec.primal <= tol_primal and rec.dual <= tol_dual:
                return rec.k
        return None


class LocalStepSolver:
    """Reusable template for one subsystem's prox-regularized LMI solve."""

    def __init__(self, sub: Subsystem, cfg: AdmmConfig):
        self.sub = sub
        self.cfg = cfg
        k = sub.n_w + sub.n_y
        self.svec_dim = svec_dim(k)
        pos, block = local_lmi(sub, p_floor=cfg.p_floor)
        problem = SdpProblem(
            variables=[VarSpec("S", k, k, symmetric=True),
                       VarSpec("P", sub.n, sub.n, symmetric=True),
                       VarSpec("Y", sub.n, sub.n)],
            constraints=[pos, block],
            quad_terms=[QuadTerm("S", cfg.mu),
                        QuadTerm("P", cfg.mu),
                        QuadTerm("Y", cfg.mu),
                        QuadTerm("S", cfg.rho / 2.0, label="prox")],
        )
        self.compiled = CompiledSdp(problem)

    def solve(self, anchor: np.ndarray) -> tuple[SdpSolution, LocalCertificate | None]:
        self.compiled.set_anchor("prox", anchor)
        sol = self.compiled.solve(tol_feas=1e-8, tol_gap=self.cfg.solver_tol,
                                  max_iter=200)
        if not sol.ok:
            return sol, None
        cert = LocalCertificate(S=sol.values["S"], P=sol.values["P"],
                                Y=sol.values["Y"], n_w=self.sub.n_w)
        return sol, cert


def _polish_certificate(sub: Subsystem, S_consensus: np.ndarray,
                        P_loop: np.ndarray, Y_loop: np.ndarray,
                        cfg: AdmmConfig):
    """Project the consensus certificate into the local certificate set.

    The consensus point may sit a consensus-tolerance outside the local
    set; projecting the whole triple (anchored at the consensus S) restores
    exact local feasibility while moving S far less than the global margin
    slack the iteration budgeted, so both LMI families verify afterwards.

    Solved on a ladder of storage floors: during the iteration a loose
    floor speeds consensus, but the recovered gains scale like 1/P, so the
    caller prefers the best-scaled P whose projection still leaves the
    global LMI enough verified margin.  Returns the feasible candidates as
    (floor, S, P, Y), best floor first.
    """
    k = sub.n_w + sub.n_y
    anchor_S = svec(np.asarray(S_consensus))
    out = []
    for floor in sorted({1e-3, 1e-4, 1e-5, 1e-6, cfg.p_floor}, reverse=True):
        if floor < cfg.p_floor:
            continue
        pos, block = local_lmi(sub, p_floor=floor)
        problem = SdpProblem(
            variables=[VarSpec("S", k, k, symmetric=True),
                       VarSpec("P", sub.n, sub.n, symmetric=True),
                       VarSpec("Y", sub.n, sub.n)],
            constraints=[pos, block],
            quad_terms=[QuadTerm("S", 1.0, anchor=anchor_S),
                        QuadTerm("P", cfg.mu, anchor=svec(np.asarray(P_loop))),
                        QuadTerm("Y", cfg.mu,
                                 anchor=np.asarray(Y_loop).reshape(-1, order="F"))])
        sol = CompiledSdp(problem).solve(tol_feas=1e-9, tol_gap=cfg.solver_tol)
        if sol.ok:
            out.append((floor, sol.values["S"], sol.values["P"], sol.values["Y"]))
    return out


class GlobalStepSolver:
    """Reusable template for the consensus projection onto the global LMI."""

    def __init__(self, p: InterconnectionProblem, permutation: np.ndarray,
                 cfg: AdmmConfig):
        self.cfg = cfg
        self.N = p.N
        self.kdims = [nw + ny for nw, ny in zip(p.w_dims, p.y_dims)]
        self.sdims = [svec_dim(k) for k in self.kdims]
        self.offsets = np.concatenate([[0], np.cumsum(self.sdims)])
        hinf = cfg.mode == MODE_HINF
        supply = hinf_supply(1.0, p.n_d, p.n_z) if hinf else zero_supply(p.n_d, p.n_z)
        constraint = global_lmi(p, permutation, supply,
                                margin=cfg.eps_margin + cfg.margin_slack)
        variables = [VarSpec(f"S{i}", self.kdims[i], self.kdims[i], symmetric=True)
                     for i in range(p.N)]
        quads = [QuadTerm(f"S{i}", cfg.mu) for i in range(p.N)]
        quads += [QuadTerm(f"S{i}", cfg.rho / 2.0, label=f"prox{i}")
                  for i in range(p.N)]
        lins = []
        if hinf:
            variables.append(VarSpec("eta", 1, 1, nonneg=True))
            quads.append(QuadTerm("eta", cfg.mu))
            lins.append(LinTerm("eta", 1.0))
        problem = SdpProblem(variables=variables, constraints=[constraint],
                             quad_terms=quads, lin_terms=lins)
        self.compiled = CompiledSdp(problem)

    def solve(self, anchor: np.ndarray) -> tuple[SdpSolution, np.ndarray | None, float | None]:
        for i in range(self.N):
            self.compiled.set_anchor(f"prox{i}",
                                     anchor[self.offsets[i]:self.offsets[i + 1]])
        sol = self.compiled.solve(tol_feas=1e-8, tol_gap=self.cfg.solver_tol,
                                  max_iter=200)
        if not sol.ok:
            return sol, None, None
        v = np.concatenate([svec(sol.values[f"S{i}"]) for i in range(self.N)]) \
            if self.N else np.zeros(0)
        eta = float(sol.values["eta"]) if self.cfg.mode == MODE_HINF else None
        return sol, v, eta


def local_step(sub: Subsystem, v_bar_i: np.ndarray, u_bar_i: np.ndarray,
               cfg: AdmmConfig) -> LocalCertificate:
    """One-shot local update: prox toward (v_bar_i - u_bar_i) inside the local LMI set."""
    sol, cert = LocalStepSolver(sub, cfg).solve(np.asarray(v_bar_i) - np.asarray(u_bar_i))
    if cert is None:
        raise RuntimeError(f"local step failed: {sol.status}")
    return cert


def global_step(y_blocks: list[np.ndarray], u_bar: np.ndarray, cfg: AdmmConfig,
                p: InterconnectionProblem, permutation: np.ndarray):
    """One-shot global update; returns (v, eta) with eta None in stabilize mode."""
    y = np.concatenate([np.asarray(b, dtype=float) for b in y_blocks]) \
        if y_blocks else np.zeros(0)
    sol, v, eta = GlobalStepSolver(p, permutation, cfg).solve(y + u_bar)
    if v is None:
        raise RuntimeError(f"global step failed: {sol.status}")
    return v, eta


def dual_step(u_bar: np.ndarray, y: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Scaled dual update u = u_bar + y - v on the consensus coordinates."""
    u_bar, y, v = (np.asarray(a, dtype=float) for a in (u_bar, y, v))
    if not (u_bar.shape == y.shape == v.shape):
        raise ValueError("dual_step operands must share one shape")
    return u_bar + y - v


def residuals(y: np.ndarray, v: np.ndarray, v_prev: np.ndarray,
              rho: float) -> tuple[float, float]:
    """Primal ||y - v|| and dual rho*||v - v_prev|| over consensus coordinates."""
    r = float(np.linalg.norm(np.asarray(y) - np.asarray(v)))
    s = float(rho * np.linalg.norm(np.asarray(v) - np.asarray(v_prev)))
    return r, s


def alpha_next(alpha: float) -> float:
    return (1.0 + np.sqrt(1.0 + 4.0 * alpha * alpha)) / 2.0


def accelerate(alpha: float, v: np.ndarray, v_prev: np.ndarray,
               u: np.ndarray, u_prev: np.ndarray):
    """Momentum extrapolation; returns (alpha_{k+1}, v_bar, u_bar)."""
    a_next = alpha_next(alpha)
    beta = (alpha - 1.0) / a_next
    v_bar = v + beta * (v - v_prev)
    u_bar = u + beta * (u - u_prev)
    return a_next, v_bar, u_bar


@dataclass
class AdmmState:
    """Iteration state; consensus coordinates are the stacked svec(S_i) blocks."""

    k: int
    y_blocks: list[np.ndarray]
    v: np.ndarray
    u: np.ndarray
    v_bar: np.ndarray
    u_bar: np.ndarray
    v_prev: np.ndarray
    u_prev: np.ndarray
    alpha: float
    eta: float | None
    P_list: list[np.ndarray] = field(default_factory=list)
    Y_list: list[np.ndarray] = field(default_factory=list)

    @property
    def consensus_vector(self) -> np.ndarray:
        """Consensus copy including eta in gain-bound mode (reporting view)."""
        if self.eta is None:
            return self.v
        return np.concatenate([self.v, [self.eta]])


@dataclass
class AdmmResult:
    certificates: list[LocalCertificate]
    eta: float | None
    trace: ResidualTrace
    status: str                 # converged | max_iterations | infeasible | numerical_failure
    stage: str | None = None    # local | global, for failures
    subsystem: int | None = None
    state: AdmmState | None = None

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    @property
    def iterations(self) -> int:
        return len(self.trace)


def _failure(sol_status: str) -> str:
    return "infeasible" if sol_status == "infeasible" else "numerical_failure"


def run(p: InterconnectionProblem, cfg: AdmmConfig) -> AdmmResult:
    """Full consensus loop (standard or accelerated, per cfg).

    Starts from the all-identity point S0 = P0 = Y0 = U0 = I (the consensus
    copy initialized from the local blocks, eta0 = 1) and iterates until
    both residuals pass their tolerances or max_iter is reached.
    """
    issues = validate_problem(p)
    if issues:
        raise ValueError("invalid problem: " + "; ".join(issues))
    if cfg.mode == MODE_STABILIZE and (p.n_d != 0 or p.n_z != 0):
        raise ValueError("stabilize mode requires n_d = n_z = 0 (d, z identically zero)")

    permutation = build_permutation(p.w_dims, p.y_dims, p.n_d, p.n_z)
    locals_ = [LocalStepSolver(s, cfg) for s in p.subsystems]
    global_ = GlobalStepSolver(p, permutation, cfg)
    kdims = global_.kdims
    offsets = global_.offsets

    y_blocks = [svec(np.eye(k)) for k in kdims]
    v = np.concatenate(y_blocks) if y_blocks else np.zeros(0)
    u = v.copy()
    v_bar, u_bar = v.copy(), u.copy()
    v_prev, u_prev = v.copy(), u.copy()
    alpha = 1.0
    eta = 1.0 if cfg.mode == MODE_HINF else None
    comb_prev = np.inf
    trace = ResidualTrace()
    state = AdmmState(k=0, y_blocks=y_blocks, v=v, u=u, v_bar=v_bar,
                      u_bar=u_bar, v_prev=v_prev, u_prev=u_prev,
                      alpha=alpha, eta=eta)
    t0 = time.perf_counter()
    certificates: list[LocalCertificate] = []
    converged = False

    for k in range(1, cfg.max_iter + 1):
        certificates = []
        for i, solver in enumerate(locals_):
            anchor = v_bar[offsets[i]:offsets[i + 1]] - u_bar[offsets[i]:offsets[i + 1]]
            sol, cert = solver.solve(anchor)
            if cert is None:
                return AdmmResult(certificates=[], eta=eta, trace=trace,
                                  status=_failure(sol.status), stage="local",
                                  subsystem=i, state=state)
            certificates.append(cert)
            y_blocks[i] = svec(cert.S)
        y = np.concatenate(y_blocks) if y_blocks else np.zeros(0)

        gsol, v_new, eta_new = global_.solve(y + u_bar)
        if v_new is None:
            return AdmmResult(certificates=certificates, eta=eta, trace=trace,
                              status=_failure(gsol.status), stage="global",
                              state=state)
        if cfg.mode == MODE_HINF:
            eta = eta_new

        u = dual_step(u_bar, y, v_new)
        r, s = residuals(y, v_new, v_prev, cfg.rho)
        trace.append(k, r, s, eta, (time.perf_counter() - t0) * 1e3)

        if r <= cfg.tol_primal and s <= cfg.tol_dual:
            v_prev, u_prev = v_new.copy(), u.copy()
            v = v_new
            converged = True
            state = AdmmState(k=k, y_blocks=y_blocks, v=v, u=u, v_bar=v_bar,
                              u_bar=u_bar, v_prev=v_prev, u_prev=u_prev,
                              alpha=alpha, eta=eta)
            break

        if cfg.accelerated:
            comb = r * r + s * s
            if cfg.restart and comb > comb_prev:
                alpha = 1.0
                v_bar, u_bar = v_new.copy(), u.copy()
            else:
                alpha, v_bar, u_bar = accelerate(alpha, v_new, v_prev, u, u_prev)
            comb_prev = comb
        else:
            v_bar, u_bar = v_new.copy(), u.copy()
        u_prev, v_prev = u.copy(), v_new.copy()
        v = v_new
        state = AdmmState(k=k, y_blocks=y_blocks, v=v, u=u, v_bar=v_bar,
                          u_bar=u_bar, v_prev=v_prev, u_prev=u_prev,
                          alpha=alpha, eta=eta)

    # Converged certificates carry the consensus supply blocks, projected
    # back into each local set with the best-scaled storage floor the
    # global margin can absorb: candidates are accepted greedily, checking
    # the globally evaluated LMI so the verified margin survives exactly.
    consensus = [smat(v[offsets[i]:offsets[i + 1]]) for i in range(p.N)]
    chosen = {i: (consensus[i], certificates[i].P, certificates[i].Y)
              for i in range(p.N)}
    if converged and p.N:
        supply = hinf_supply(eta, p.n_d, p.n_z) if cfg.mode == MODE_HINF \
            else zero_supply(p.n_d, p.n_z)
        gcon = global_lmi(p, permutation, supply, margin=cfg.eps_margin)
        assignment = {f"S{i}": consensus[i] for i in range(p.N)}
        if supply.eta is not None:
            assignment["eta"] = eta
        headroom = 2e-7  # beyond the verification threshold eps - 1e-7
        for i, cert in enumerate(certificates):
            candidates = _polish_certificate(p.subsystems[i], consensus[i],
                                             cert.P, cert.Y, cfg)
            for _floor, S_c, P_c, Y_c in candidates:
                assignment[f"S{i}"] = S_c
                if gcon.slack(assignment) >= headroom:
                    chosen[i] = (S_c, P_c, Y_c)
                    break
                assignment[f"S{i}"] = chosen[i][0]
            else:
                assignment[f"S{i}"] = chosen[i][0]
    final = [LocalCertificate(S=S_i, P=P_i, Y=Y_i, n_w=p.subsystems[i].n_w)
             for i, (S_i, P_i, Y_i) in sorted(chosen.items())]
    return AdmmResult(certificates=final, eta=eta, trace=trace,
                      status="converged" if converged else "max_iterations",
                      state=state)
