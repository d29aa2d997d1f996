"""Closed-loop validation: spectra, gain estimation, simulation, dissipation.

Everything here is oracle-style: it never reuses the synthesis machinery,
so it can cross-check certificates produced elsewhere.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .lmi import LmiConstraint, LocalCertificate, SupplyRate, VarSpec
from .model import InterconnectionProblem, StateSpace, assemble_closed_loop, block_matrices
from .subsolver import SdpProblem, solve_sdp

GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


def spectral_abscissa(A: np.ndarray) -> float:
    """Largest real part over the eigenvalues of A."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    if A.shape[0] == 0:
        return -np.inf
    return float(np.max(np.linalg.eigvals(A).real))


def _gain_at(ss: StateSpace, w: float) -> float:
    n = ss.n
    M = 1j * w * np.eye(n) - ss.A
    T = ss.C @ np.linalg.solve(M, ss.B) + ss.D
    if T.size == 0:
        return 0.0
    return float(np.linalg.svd(T, compute_uv=False)[0])


def hinf_norm(ss: StateSpace, tol: float = 1e-6, w_min: float = 1e-4,
              w_max: float = 1e4, n_grid: int = 512) -> float:
    """Peak gain sup_w sigma_max(C (jwI - A)^-1 B + D) for stable A.

    Logarithmic sweep plus golden-section refinement around the sweep
    maximum; the exact values at w = 0 and w -> inf are always included,
    so DC- or feedthrough-dominated peaks are returned exactly.
    """
    if ss.n_in == 0 or ss.n_out == 0:
        return 0.0
    if ss.n and spectral_abscissa(ss.A) >= 0:
        raise ValueError("hinf_norm requires a stable A matrix")
    if ss.n == 0:
        return float(np.linalg.svd(ss.D, compute_uv=False)[0]) if ss.D.size else 0.0

    grid = np.logspace(np.log10(w_min), np.log10(w_max), n_grid)
    gains = np.array([_gain_at(ss, w) for w in grid])
    best = float(np.max(gains))
    i = int(np.argmax(gains))

    # refine around the interior sweep peak in log frequency
    lo = np.log(grid[max(i - 1, 0)])
    hi = np.log(grid[min(i + 1, n_grid - 1)])
    if hi > lo:
        f = lambda t: _gain_at(ss, np.exp(t))
        a, b = lo, hi
        c = b - GOLDEN * (b - a)
        d = a + GOLDEN * (b - a)
        fc, fd = f(c), f(d)
        while (b - a) > tol:
            if fc >= fd:
                b, d, fd = d, c, fc
                c = b - GOLDEN * (b - a)
                fc = f(c)
            else:
                a, c, fc = c, d, fd
                d = a + GOLDEN * (b - a)
                fd = f(d)
        best = max(best, fc, fd)

    dc = float(np.linalg.svd(ss.C @ np.linalg.solve(-ss.A, ss.B) + ss.D,
                             compute_uv=False)[0])
    ff = float(np.linalg.svd(ss.D, compute_uv=False)[0]) if ss.D.size else 0.0
    return max(best, dc, ff)


def hinf_norm_bisection(ss: StateSpace, tol: float = 1e-4) -> float:
    """Gain bound via bounded-real LMI feasibility bisection (solver route).

    Independent cross-check for :func:`hinf_norm`: gamma upper-bounds the
    gain iff there is P > 0 with

        [ A'P + PA + C'C ,  PB + C'D     ]
        [    (sym.)      ,  D'D - g^2 I  ]  < 0.
    """
    if ss.n and spectral_abscissa(ss.A) >= 0:
        raise ValueError("hinf_norm_bisection requires a stable A matrix")
    A, B, C, D = ss.A, ss.B, ss.C, ss.D
    n, m = ss.n, ss.n_in
    if m == 0 or ss.n_out == 0:
        return 0.0
    CtC = C.T @ C
    DtD = D.T @ D

    def feasible(gamma: float) -> bool:
        delta = 1e-9 * (1.0 + gamma * gamma)

        def build(v):
            P = v["P"]
            W = A.T @ P
            X11 = W + W.T + CtC
            X12 = P @ B + C.T @ D
            X22 = DtD - gamma * gamma * np.eye(m)
            return np.block([[X11, X12], [X12.T, X22]])

        con = LmiConstraint("bounded_real", (VarSpec("P", n, n, symmetric=True),),
                            n + m, build, "nsd", margin=delta)
        pos = LmiConstraint("P_pd", (VarSpec("P", n, n, symmetric=True),),
                            n, lambda v: v["P"], "psd", margin=delta)
        prob = SdpProblem(variables=[VarSpec("P", n, n, symmetric=True)],
                          constraints=[pos, con])
        return solve_sdp(prob, tol_feas=1e-9, tol_gap=1e-9).ok

    lo = float(np.linalg.svd(D, compute_uv=False)[0]) if D.size else 0.0
    hi = max(2.0 * lo, 1.0)
    for _ in range(60):
        if feasible(hi):
            break
        hi *= 4.0
    else:
        raise RuntimeError("bounded-real bisection failed to bracket the gain")
    while hi - lo > tol * max(hi, 1.0):
        mid = 0.5 * (lo + hi)
        if feasible(mid):
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


@dataclass
class Trajectory:
    """Fixed-step trajectory with the realization it was produced from."""

    t: np.ndarray
    x: np.ndarray        # (K+1, n)
    d: np.ndarray        # (K+1, n_d)
    z: np.ndarray        # (K+1, n_z)
    ss: StateSpace

    @property
    def h(self) -> float:
        return float(self.t[1] - self.t[0]) if self.t.size > 1 else 0.0


def _input_samples(d, t: np.ndarray, n_in: int) -> np.ndarray:
    if d is None:
        return np.zeros((t.size, n_in))
    if callable(d):
        return np.array([np.atleast_1d(np.asarray(d(tk), dtype=float)).reshape(n_in)
                         for tk in t])
    arr = np.asarray(d, dtype=float)
    if arr.ndim == 1 and n_in == 1:
        arr = arr[:, None]
    if arr.ndim == 1 and arr.size == n_in:
        return np.tile(arr, (t.size, 1))
    if arr.shape != (t.size, n_in):
        raise ValueError(f"input samples must have shape {(t.size, n_in)}, got {arr.shape}")
    return arr


def _rk4(field: Callable[[int, bool, np.ndarray], np.ndarray], x0: np.ndarray,
         K: int, h: float) -> np.ndarray:
    """Classical RK4 on a uniform grid; `field(k, mid, x)` evaluates the
    vector field at t_k (mid=False) or t_k + h/2 (mid=True)."""
    x = np.empty((K + 1, x0.size))
    x[0] = x0
    for k in range(K):
        xk = x[k]
        k1 = field(k, False, xk)
        k2 = field(k, True, xk + 0.5 * h * k1)
        k3 = field(k, True, xk + 0.5 * h * k2)
        k4 = field(k + 1, False, xk + h * k3)
        x[k + 1] = xk + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if np.max(np.abs(x[k + 1])) > 1e12:
            raise RuntimeError(
                f"state magnitude exceeded 1e12 at t = {(k + 1) * h:.6g}; "
                "the system appears unstable on this horizon")
    return x


def simulate(ss: StateSpace, d, x0, T: float, h: float) -> Trajectory:
    """Integrate dx/dt = A x + B d with classical fixed-step RK4.

    `d` may be a callable t -> vector, an array of grid samples
    (K+1, n_in), a constant vector, or None for zero input.  Sampled
    inputs are interpolated linearly at the half steps.
    """
    if h <= 0 or h > T:
        raise ValueError("need 0 < h <= T")
    K = int(round(T / h))
    t = np.arange(K + 1) * h
    dsamp = _input_samples(d, t, ss.n_in)
    dmid = 0.5 * (dsamp[:-1] + dsamp[1:]) if K else dsamp[:0]
    if callable(d):
        dmid = np.array([np.atleast_1d(np.asarray(d(tk + 0.5 * h), dtype=float)).reshape(ss.n_in)
                         for tk in t[:-1]])
    x0 = np.asarray(x0, dtype=float).reshape(ss.n)
    A, B = ss.A, ss.B

    def field(k, mid, x):
        dk = dmid[min(k, K - 1)] if mid else dsamp[k]
        return A @ x + B @ dk

    x = _rk4(field, x0, K, h)
    z = x @ ss.C.T + dsamp @ ss.D.T
    return Trajectory(t=t, x=x, d=dsamp, z=z, ss=ss)


def simulate_network(p: InterconnectionProblem, gains, d, x0, T: float,
                     h: float) -> Trajectory:
    """Simulate the subsystem network with the coupling resolved explicitly.

    Per step: y = C x (blockwise), w = M_wy y + M_wd d, then each subsystem
    integrates dx_i/dt = (A_i + B_i K_i) x_i + G_i w_i.  Cross-validates
    the assembled realization without using it for the dynamics.
    """
    if h <= 0 or h > T:
        raise ValueError("need 0 < h <= T")
    if gains is None:
        gains = [np.zeros((s.m, s.n)) for s in p.subsystems]
    K_steps = int(round(T / h))
    t = np.arange(K_steps + 1) * h
    dsamp = _input_samples(d, t, p.n_d)
    dmid = 0.5 * (dsamp[:-1] + dsamp[1:]) if K_steps else dsamp[:0]
    if callable(d):
        dmid = np.array([np.atleast_1d(np.asarray(d(tk + 0.5 * h), dtype=float)).reshape(p.n_d)
                         for tk in t[:-1]])
    x0 = np.asarray(x0, dtype=float).reshape(p.n)

    _A, _B, _G, C_blk = block_matrices(p)
    Acl_blocks = [s.A + s.B @ np.atleast_2d(K) for s, K in zip(p.subsystems, gains)]
    x_dims = [s.n for s in p.subsystems]
    x_offs = np.concatenate([[0], np.cumsum(x_dims)])
    w_dims = p.w_dims
    w_offs = np.concatenate([[0], np.cumsum(w_dims)])

    def field(k, mid, x):
        dk = dmid[min(k, K_steps - 1)] if mid else dsamp[k]
        y = C_blk @ x
        w = p.M_wy @ y + p.M_wd @ dk
        dx = np.empty_like(x)
        for i, s in enumerate(p.subsystems):
            xi = x[x_offs[i]:x_offs[i + 1]]
            wi = w[w_offs[i]:w_offs[i + 1]]
            dx[x_offs[i]:x_offs[i + 1]] = Acl_blocks[i] @ xi + s.G @ wi
        return dx

    x = _rk4(field, x0, K_steps, h)
    y = x @ C_blk.T
    z = y @ p.M_zy.T + dsamp @ p.M_zd.T
    ss = assemble_closed_loop(p, gains)
    return Trajectory(t=t, x=x, d=dsamp, z=z, ss=ss)


@dataclass
class DissipationCheck:
    """Worst-case violation of the storage inequalities along a trajectory."""

    max_violation: float
    worst_excess: float   # max over samples of violation - 1e-8*(1 + |x|^2)
    passed: bool


def check_dissipation(traj: Trajectory, certificates: Sequence[LocalCertificate],
                      p: InterconnectionProblem, supply: SupplyRate) -> DissipationCheck:
    """Evaluate dV/dt against the local supply sum and the global bound.

    V = sum_i x_i' P_i x_i; its derivative is computed analytically from
    the closed-loop vector field of the trajectory's realization, not by
    differencing, so integrator noise does not enter.  At every sample both

        dV/dt <= sum_i [w_i; y_i]' S_i [w_i; y_i]      (local chain)
        dV/dt <= [d; z]' S [d; z]                      (global bound)

    are checked; the returned violation is the worst signed gap, passing
    when it stays below 1e-8 * (1 + |x|^2) pointwise.
    """
    from scipy.linalg import block_diag

    n = p.n
    Pbar = block_diag(*[c.P for c in certificates]) if certificates else np.zeros((n, n))
    A_cl, B_cl = traj.ss.A, traj.ss.B
    _Ab, _Bb, _Gb, C_blk = block_matrices(p)

    X = traj.x
    D = traj.d
    Z = traj.z
    Q = A_cl.T @ Pbar + Pbar @ A_cl
    dV = np.einsum("ki,ij,kj->k", X, Q, X)
    if p.n_d:
        dV = dV + 2.0 * np.einsum("ki,ij,kj->k", X, Pbar @ B_cl, D)

    Y = X @ C_blk.T
    W = Y @ p.M_wy.T + (D @ p.M_wd.T if p.n_d else 0.0)
    local = np.zeros(X.shape[0])
    w_offs = np.concatenate([[0], np.cumsum(p.w_dims)])
    y_offs = np.concatenate([[0], np.cumsum(p.y_dims)])
    for i, cert in enumerate(certificates):
        wi = W[:, w_offs[i]:w_offs[i + 1]] if p.n_w else np.zeros((X.shape[0], 0))
        yi = Y[:, y_offs[i]:y_offs[i + 1]]
        stack = np.hstack([wi, yi])
        local += np.einsum("ki,ij,kj->k", stack, cert.S, stack)

    viol = dV - local
    if supply.size:
        dz = np.hstack([D, Z])
        bound = np.einsum("ki,ij,kj->k", dz, supply.S, dz)
        viol = np.maximum(viol, dV - bound)
    else:
        viol = np.maximum(viol, dV)

    thresh = 1e-8 * (1.0 + np.einsum("ki,ki->k", X, X))
    excess = viol - thresh
    return DissipationCheck(max_violation=float(np.max(viol)),
                            worst_excess=float(np.max(excess)),
                            passed=bool(np.all(excess <= 0)))
