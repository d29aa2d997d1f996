"""Controller synthesis flows and post-hoc verification.

The pseudo-inverse gain recovery K_i = pinv(B_i) P_i^{-1} Y_i reproduces
the certificate's Y_i only when P_i^{-1} Y_i lies in range(B_i); nothing
in the LMIs enforces that.  Every flow therefore re-verifies the recovered
gains (LMIs re-evaluated with Y_i replaced by P_i B_i K_i, closed-loop
spectrum, gain bound) and reports honestly instead of trusting recovery.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import admm as admm_mod
from .admm import AdmmConfig, AdmmResult, MODE_HINF, MODE_STABILIZE
from .analysis import hinf_norm, spectral_abscissa
from .lmi import (DEFAULT_MARGIN, DEFAULT_P_FLOOR, LocalCertificate, SupplyRate,
                  VarSpec, global_lmi, hinf_supply, local_lmi, svec_dim, zero_supply)
from .model import (InterconnectionProblem, assemble_closed_loop, block_matrices,
                    build_permutation, validate_problem)
from .subsolver import (LinTerm, QuadTerm, SdpProblem, SdpSolution,
                        solve_sdp)

RECOVERY_TOL = 1e-7
VERIFY_TOL = 1e-7


class RefitInfeasible(RuntimeError):
    """No gain-consistent certificate exists at the frozen (P, S) pair.

    Raised by :func:`refit_gains`; carries the subsolver's infeasibility
    certificate for the failing subsystem.
    """

    def __init__(self, subsystem: int, solution: SdpSolution):
        super().__init__(
            f"subsystem {subsystem}: no gain-consistent certificate at the frozen (P, S)")
        self.subsystem = subsystem
        self.solution = solution


@dataclass
class VerificationReport:
    recovery_residuals: list[float]
    local_max_eigs: list[float]
    global_max_eig: float
    closed_loop_abscissa: float
    detectability_rank: int
    detectability_ok: bool
    hinf_norm: float | None
    hinf_bound: float | None
    eps_margin: float
    tol_verify: float = VERIFY_TOL
    recovery_tol: float = RECOVERY_TOL

    @property
    def recovery_ok(self) -> bool:
        return all(r <= self.recovery_tol for r in self.recovery_residuals)

    @property
    def local_ok(self) -> bool:
        return all(e <= self.tol_verify for e in self.local_max_eigs)

    @property
    def global_ok(self) -> bool:
        return self.global_max_eig <= -self.eps_margin + self.tol_verify

    @property
    def stable(self) -> bool:
        return self.closed_loop_abscissa < 0

    @property
    def hinf_ok(self) -> bool:
        if self.hinf_bound is None:
            return True
        return self.hinf_norm is not None and self.hinf_norm <= self.hinf_bound

    @property
    def passed(self) -> bool:
        return (self.recovery_ok and self.local_ok and self.global_ok
                and self.stable and self.hinf_ok)

    def summary(self) -> dict:
        return {
            "recovery_residuals": self.recovery_residuals,
            "local_max_eigs": self.local_max_eigs,
            "global_max_eig": self.global_max_eig,
            "closed_loop_abscissa": self.closed_loop_abscissa,
            "detectability_rank": self.detectability_rank,
            "detectability_ok": self.detectability_ok,
            "hinf_norm": self.hinf_norm,
            "hinf_bound": self.hinf_bound,
            "passed": self.passed,
            "checks": {
                "recovery": self.recovery_ok,
                "local_lmi": self.local_ok,
                "global_lmi": self.global_ok,
                "stability": self.stable,
                "hinf": self.hinf_ok,
            },
        }


@dataclass
class SynthesisResult:
    gains: list[np.ndarray]
    eta: float | None
    bound: float | None
    certificates: list[LocalCertificate]
    trace: object | None
    report: VerificationReport | None
    status: str                  # verified | converged_unverified | not_converged | infeasible | failed
    admm: AdmmResult | None = None
    solver: SdpSolution | None = None

    @property
    def verified(self) -> bool:
        return self.status == "verified"


def recover_gains(P_list: Sequence[np.ndarray], Y_list: Sequence[np.ndarray],
                  B_list: Sequence[np.ndarray]) -> list[np.ndarray]:
    """Gain recovery K_i = pinv(B_i) P_i^{-1} Y_i (SVD pseudo-inverse)."""
    gains = []
    for i, (P, Y, B) in enumerate(zip(P_list, Y_list, B_list)):
        P = np.asarray(P, dtype=float)
        eigs = np.linalg.eigvalsh((P + P.T) / 2)
        if eigs[0] <= 1e-12 * max(eigs[-1], 1.0):
            raise ValueError(f"P for subsystem {i} is numerically singular")
        PinvY = np.linalg.solve(P, np.asarray(Y, dtype=float))
        gains.append(np.linalg.pinv(np.atleast_2d(B), rcond=1e-12) @ PinvY)
    return gains


def detectability_rank(p: InterconnectionProblem) -> tuple[int, bool]:
    """Rank of M_zy @ blockdiag(C_i) against the zero-state rank condition."""
    _A, _B, _G, C_blk = block_matrices(p)
    M = p.M_zy @ C_blk
    rank = int(np.linalg.matrix_rank(M)) if M.size else 0
    return rank, rank == p.n_y


def verify_certificates(p: InterconnectionProblem, gains: Sequence[np.ndarray],
                        certificates: Sequence[LocalCertificate],
                        supply: SupplyRate,
                        eps_margin: float = DEFAULT_MARGIN,
                        tol_verify: float = VERIFY_TOL,
                        check_hinf: bool = False) -> VerificationReport:
    """Re-evaluate every certificate with the recovered gains substituted.

    (1) recovery consistency |B B+ P^-1 Y - P^-1 Y|_F per subsystem,
    (2) local LMI with Y := P B K, (3) global LMI at the certified supply
    blocks, (4) closed-loop spectral abscissa, (5) rank condition flag,
    and in gain-bound mode the measured closed-loop peak gain.
    """
    gains = [np.atleast_2d(np.asarray(K, dtype=float)) for K in gains]
    recovery = []
    local_eigs = []
    for sub, K, cert in zip(p.subsystems, gains, certificates):
        PinvY = np.linalg.solve(cert.P, cert.Y)
        B = np.atleast_2d(sub.B)
        proj = B @ np.linalg.pinv(B, rcond=1e-12) @ PinvY
        recovery.append(float(np.linalg.norm(proj - PinvY)))
        _pos, block = local_lmi(sub)
        Y_eff = cert.P @ B @ K
        X = block.evaluate({"P": cert.P, "Y": Y_eff, "S": cert.S})
        local_eigs.append(float(np.max(np.linalg.eigvalsh((X + X.T) / 2)))
                          if X.size else -np.inf)

    permutation = build_permutation(p.w_dims, p.y_dims, p.n_d, p.n_z)
    gcon = global_lmi(p, permutation, supply, margin=eps_margin)
    assignment = {f"S{i}": c.S for i, c in enumerate(certificates)}
    if supply.eta is not None:
        assignment["eta"] = supply.eta
    G = gcon.evaluate(assignment)
    global_eig = float(np.max(np.linalg.eigvalsh((G + G.T) / 2))) if G.size else -np.inf

    cl = assemble_closed_loop(p, gains)
    abscissa = spectral_abscissa(cl.A)
    rank, det_ok = detectability_rank(p)

    norm = None
    bound = None
    if check_hinf and supply.eta is not None:
        bound = float(np.sqrt(supply.eta) + 1e-6 * (1.0 + np.sqrt(supply.eta)))
        if abscissa < 0 and p.n_d and p.n_z:
            norm = hinf_norm(cl)

    return VerificationReport(
        recovery_residuals=recovery,
        local_max_eigs=local_eigs,
        global_max_eig=global_eig,
        closed_loop_abscissa=abscissa,
        detectability_rank=rank,
        detectability_ok=det_ok,
        hinf_norm=norm,
        hinf_bound=bound,
        eps_margin=eps_margin,
        tol_verify=tol_verify,
    )


def refit_gains(p: InterconnectionProblem, certificates: Sequence[LocalCertificate],
                solver_tol: float = 1e-12):
    """Re-solve each local LMI over L with Y := P B L, P and S frozen.

    Closes the recovery gap when feasible: the refit certificate's Y lies
    in P range(B) by construction, so K = L reproduces it exactly.  Returns
    (gains, refitted certificates); raises if a subsystem cannot support a
    gain-consistent certificate at its frozen (P, S).
    """
    gains = []
    refitted = []
    for i, (sub, cert) in enumerate(zip(p.subsystems, certificates)):
        P, S = cert.P, cert.S
        _pos, block = local_lmi(sub)
        PB = P @ np.atleast_2d(sub.B)

        def build(v, PB=PB, P=P, S=S, block=block):
            return block.build({"P": P, "Y": PB @ v["L"], "S": S})

        con = type(block)(
            name=f"refit_{i}", variables=(VarSpec("L", sub.m, sub.n),),
            dim=block.dim, build=build, sense="nsd", margin=0.0)
        prob = SdpProblem(variables=[VarSpec("L", sub.m, sub.n)],
                          constraints=[con],
                          quad_terms=[QuadTerm("L", 1.0)])
        sol = solve_sdp(prob, tol_feas=1e-8, tol_gap=solver_tol)
        if sol.status == "infeasible":
            raise RefitInfeasible(i, sol)
        if not sol.ok:
            raise RuntimeError(f"subsystem {i}: refit solve failed ({sol.status})")
        L = np.atleast_2d(sol.values["L"]) if sub.m else np.zeros((0, sub.n))
        gains.append(L)
        refitted.append(LocalCertificate(S=S, P=P, Y=PB @ L, n_w=sub.n_w))
    return gains, refitted


def _finish(p, result: AdmmResult, cfg: AdmmConfig, supply: SupplyRate,
            check_hinf: bool, refit: bool) -> SynthesisResult:
    eta = result.eta
    bound = float(np.sqrt(eta)) if eta is not None else None
    if result.status != "converged":
        status = "infeasible" if result.status == "infeasible" else (
            "not_converged" if result.status == "max_iterations" else "failed")
        return SynthesisResult(gains=[], eta=eta, bound=bound,
                               certificates=result.certificates,
                               trace=result.trace, report=None,
                               status=status, admm=result)
    certificates = result.certificates
    if refit:
        try:
            gains, certificates = refit_gains(p, certificates, cfg.solver_tol)
        except RefitInfeasible:
            # fall back to pseudo-inverse recovery; verification will expose
            # the recovery gap honestly
            gains = recover_gains([c.P for c in certificates],
                                  [c.Y for c in certificates],
                                  [s.B for s in p.subsystems])
    else:
        gains = recover_gains([c.P for c in certificates],
                              [c.Y for c in certificates],
                              [s.B for s in p.subsystems])
    report = verify_certificates(p, gains, certificates, supply,
                                 eps_margin=cfg.eps_margin,
                                 check_hinf=check_hinf)
    status = "verified" if report.passed else "converged_unverified"
    return SynthesisResult(gains=gains, eta=eta, bound=bound,
                           certificates=certificates, trace=result.trace,
                           report=report, status=status, admm=result)


def synthesize_stabilizing(p: InterconnectionProblem, cfg: AdmmConfig | None = None,
                           refit: bool = False) -> SynthesisResult:
    """Stabilizing synthesis (S = 0); requires d and z channels to be absent."""
    if p.n_d != 0 or p.n_z != 0:
        raise ValueError(
            "stabilizing synthesis requires n_d = n_z = 0; "
            "the stability result assumes d, z identically zero")
    if any(not np.any(s.B) for s in p.subsystems):
        raise ValueError("stabilizing synthesis requires a nonzero B in every subsystem")
    cfg = cfg or AdmmConfig(mode=MODE_STABILIZE)
    if cfg.mode != MODE_STABILIZE:
        raise ValueError("config mode must be 'stabilize'")
    result = admm_mod.run(p, cfg)
    return _finish(p, result, cfg, zero_supply(), check_hinf=False, refit=refit)


def synthesize_hinf(p: InterconnectionProblem, cfg: AdmmConfig | None = None,
                    refit: bool = False) -> SynthesisResult:
    """Disturbance-attenuation synthesis: minimize eta with gain bound sqrt(eta)."""
    if p.n_d < 1 or p.n_z < 1:
        raise ValueError("gain-bound synthesis requires n_d >= 1 and n_z >= 1")
    cfg = cfg or AdmmConfig(mode=MODE_HINF)
    if cfg.mode != MODE_HINF:
        raise ValueError("config mode must be 'hinf'")
    result = admm_mod.run(p, cfg)
    supply = hinf_supply(result.eta if result.eta is not None else 0.0,
                         p.n_d, p.n_z)
    return _finish(p, result, cfg, supply, check_hinf=True, refit=refit)


def centralized_synthesis(p: InterconnectionProblem, mode: str,
                          eps_margin: float = DEFAULT_MARGIN,
                          p_floor: float = DEFAULT_P_FLOOR,
                          refit: bool = False,
                          solver_tol: float = 1e-10,
                          max_packed_dim: int = 20000) -> SynthesisResult:
    """Single joint SDP over all certificates; oracle for the splitting.

    Minimizes eta (gain-bound mode) or solves feasibility (stabilize mode)
    subject to every local LMI and the global LMI, with no smoothing, then
    runs the same recovery and verification pipeline.
    """
    issues = validate_problem(p)
    if issues:
        raise ValueError("invalid problem: " + "; ".join(issues))
    if mode not in (MODE_STABILIZE, MODE_HINF):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == MODE_STABILIZE and (p.n_d != 0 or p.n_z != 0):
        raise ValueError("stabilize mode requires n_d = n_z = 0")

    total = sum(svec_dim(s.n_w + s.n_y) + svec_dim(s.n) + s.n * s.n
                for s in p.subsystems) + (1 if mode == MODE_HINF else 0)
    if total > max_packed_dim:
        raise ValueError(
            f"problem too large for one joint solve ({total} > {max_packed_dim} packed variables)")

    variables = []
    constraints = []
    for i, sub in enumerate(p.subsystems):
        k = sub.n_w + sub.n_y
        variables += [VarSpec(f"S{i}", k, k, symmetric=True),
                      VarSpec(f"P{i}", sub.n, sub.n, symmetric=True),
                      VarSpec(f"Y{i}", sub.n, sub.n)]
        pos, block = local_lmi(sub, p_floor=p_floor)
        rename = {"P": f"P{i}", "Y": f"Y{i}", "S": f"S{i}"}
        constraints += [pos.rename(rename), block.rename(rename)]
    permutation = build_permutation(p.w_dims, p.y_dims, p.n_d, p.n_z)
    hinf = mode == MODE_HINF
    supply0 = hinf_supply(1.0, p.n_d, p.n_z) if hinf else zero_supply(p.n_d, p.n_z)
    constraints.append(global_lmi(p, permutation, supply0, margin=eps_margin))
    lins = []
    if hinf:
        variables.append(VarSpec("eta", 1, 1, nonneg=True))
        lins.append(LinTerm("eta", 1.0))
    prob = SdpProblem(variables=variables, constraints=constraints, lin_terms=lins)
    sol = solve_sdp(prob, tol_feas=1e-8, tol_gap=solver_tol, max_iter=200)

    if sol.status == "infeasible":
        return SynthesisResult(gains=[], eta=None, bound=None, certificates=[],
                               trace=None, report=None, status="infeasible",
                               solver=sol)
    if not sol.ok:
        return SynthesisResult(gains=[], eta=None, bound=None, certificates=[],
                               trace=None, report=None, status="failed",
                               solver=sol)

    certificates = [LocalCertificate(S=sol.values[f"S{i}"], P=sol.values[f"P{i}"],
                                     Y=sol.values[f"Y{i}"], n_w=sub.n_w)
                    for i, sub in enumerate(p.subsystems)]
    eta = float(sol.values["eta"]) if hinf else None
    if refit:
        try:
            gains, certificates = refit_gains(p, certificates)
        except RefitInfeasible as exc:
            # the certificate the free-Y relaxation found admits no
            # gain-consistent repair: surface the subsolver's certificate
            return SynthesisResult(gains=[], eta=eta,
                                   bound=float(np.sqrt(eta)) if eta is not None else None,
                                   certificates=certificates, trace=None,
                                   report=None, status="infeasible",
                                   solver=exc.solution)
    else:
        gains = recover_gains([c.P for c in certificates],
                              [c.Y for c in certificates],
                              [s.B for s in p.subsystems])
    supply = hinf_supply(eta, p.n_d, p.n_z) if hinf else zero_supply()
    report = verify_certificates(p, gains, certificates, supply,
                                 eps_margin=eps_margin, check_hinf=hinf)
    return SynthesisResult(gains=gains, eta=eta,
                           bound=float(np.sqrt(eta)) if eta is not None else None,
                           certificates=certificates, trace=None, report=report,
                           status="verified" if report.passed else "converged_unverified",
                           solver=sol)
