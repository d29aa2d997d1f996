"""LMI constraint construction and symmetric-matrix vectorization.

Three constraint families are built here: the per-subsystem dissipation
LMI pair in (P_i, Y_i, S_i), the global interconnection LMI in
({S_i}, eta), and the supply-rate matrices they reference.  Constraints
are carried as affine matrix expressions with an explicit variable list,
so the same builder evaluates numerically (for tests and verification)
and drives the conic solver (through probing in `subsolver`).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Mapping

import numpy as np

from .model import InterconnectionProblem, Subsystem

SQRT2 = np.sqrt(2.0)

#: strictness margin of the global interconnection LMI (calibrated default)
DEFAULT_MARGIN = 5e-5
#: definiteness floor for the storage matrices P_i
DEFAULT_P_FLOOR = 1e-7


def svec_dim(k: int) -> int:
    return k * (k + 1) // 2


@lru_cache(maxsize=256)
def _triu_indices(k: int):
    # column-major upper triangle: (0,0), (0,1), (1,1), (0,2), ...
    rows, cols, scale = [], [], []
    for j in range(k):
        for i in range(j + 1):
            rows.append(i)
            cols.append(j)
            scale.append(1.0 if i == j else SQRT2)
    return np.array(rows), np.array(cols), np.array(scale)


def svec(X: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Scaled half-vectorization: off-diagonals multiplied by sqrt(2).

    With this scaling dot(svec(X), svec(Y)) = trace(X Y), so Euclidean
    geometry on the packed vectors matches Frobenius geometry on the
    matrices.  Inputs asymmetric beyond `tol` are rejected.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] != X.shape[1]:
        raise ValueError(f"svec expects a square matrix, got shape {X.shape}")
    k = X.shape[0]
    if k == 0:
        return np.zeros(0)
    if np.max(np.abs(X - X.T), initial=0.0) > tol:
        raise ValueError("svec input is not symmetric")
    rows, cols, scale = _triu_indices(k)
    return X[rows, cols] * scale


def smat(v: np.ndarray) -> np.ndarray:
    """Inverse of :func:`svec` (off-diagonal 1-ulp rounding aside, see tests)."""
    v = np.asarray(v, dtype=float).ravel()
    m = v.size
    k = int((np.sqrt(8 * m + 1) - 1) / 2 + 0.5)
    if svec_dim(k) != m:
        raise ValueError(f"vector of length {m} is not a packed symmetric matrix")
    rows, cols, scale = _triu_indices(k)
    X = np.zeros((k, k))
    vals = v / scale
    X[rows, cols] = vals
    X[cols, rows] = vals
    return X


@dataclass
class SupplyRate:
    """Quadratic supply matrix S on the stacked (d, z) channels.

    In gain-bound mode S = diag(eta * I_{n_d}, -I_{n_z}) and `eta` records
    the scalar; eta is None for a fixed general supply (e.g. S = 0).
    """

    S: np.ndarray
    n_d: int
    n_z: int
    eta: float | None = None

    def __post_init__(self):
        self.S = np.asarray(self.S, dtype=float).reshape(self.n_d + self.n_z,
                                                         self.n_d + self.n_z)

    @property
    def size(self) -> int:
        return self.n_d + self.n_z


def hinf_supply(eta: float, n_d: int, n_z: int) -> SupplyRate:
    """Supply rate eta*|d|^2 - |z|^2 certifying the gain bound sqrt(eta)."""
    if eta < 0:
        raise ValueError(f"eta must be non-negative, got {eta}")
    S = np.zeros((n_d + n_z, n_d + n_z))
    S[:n_d, :n_d] = eta * np.eye(n_d)
    S[n_d:, n_d:] = -np.eye(n_z)
    return SupplyRate(S=S, n_d=n_d, n_z=n_z, eta=float(eta))


def zero_supply(n_d: int = 0, n_z: int = 0) -> SupplyRate:
    """S = 0, the stabilization setting (normally with n_d = n_z = 0)."""
    return SupplyRate(S=np.zeros((n_d + n_z, n_d + n_z)), n_d=n_d, n_z=n_z)


@dataclass(frozen=True)
class VarSpec:
    """Declaration of one matrix decision variable.

    Symmetric variables are packed as svec coordinates, general matrices
    as column-major vec; a 1x1 general variable is treated as a scalar.
    `nonneg` adds the bound x >= 0 (scalars only).
    """

    name: str
    rows: int
    cols: int
    symmetric: bool = False
    nonneg: bool = False

    @property
    def dim(self) -> int:
        return svec_dim(self.rows) if self.symmetric else self.rows * self.cols

    def unpack(self, x: np.ndarray):
        if self.symmetric:
            return smat(x)
        if self.nonneg and self.rows == 1 and self.cols == 1:
            return float(x[0])
        return np.asarray(x).reshape((self.rows, self.cols), order="F")

    def pack(self, value) -> np.ndarray:
        if self.symmetric:
            return svec(value)
        if self.nonneg and self.rows == 1 and self.cols == 1:
            return np.array([float(value)])
        return np.asarray(value, dtype=float).reshape(-1, order="F")

    def basis(self, j: int):
        e = np.zeros(self.dim)
        e[j] = 1.0
        return self.unpack(e)


@dataclass
class LmiConstraint:
    """Affine matrix inequality: expr(vars) >= margin*I or <= -margin*I.

    `build` maps a name->value assignment to the (exactly symmetric) matrix
    expression; it must be affine in every declared variable and accept
    numpy arrays for evaluation.
    """

    name: str
    variables: tuple[VarSpec, ...]
    dim: int
    build: Callable[[Mapping[str, np.ndarray]], np.ndarray]
    sense: str  # "psd" (>= margin*I) or "nsd" (<= -margin*I)
    margin: float = 0.0

    def __post_init__(self):
        if self.sense not in ("psd", "nsd"):
            raise ValueError(f"sense must be 'psd' or 'nsd', got {self.sense!r}")

    def evaluate(self, assignment: Mapping[str, np.ndarray]) -> np.ndarray:
        return np.asarray(self.build(assignment), dtype=float)

    def slack(self, assignment: Mapping[str, np.ndarray]) -> float:
        """Signed feasibility slack; >= 0 means the constraint holds."""
        X = self.evaluate(assignment)
        if X.size == 0:
            return np.inf
        eigs = np.linalg.eigvalsh((X + X.T) / 2)
        if self.sense == "psd":
            return float(eigs[0] - self.margin)
        return float(-eigs[-1] - self.margin)

    def satisfied(self, assignment: Mapping[str, np.ndarray], tol: float = 0.0) -> bool:
        return self.slack(assignment) >= -tol

    def rename(self, mapping: Mapping[str, str]) -> "LmiConstraint":
        """Same constraint with variables renamed (for joint problems)."""
        inverse = {new: old for old, new in mapping.items()}
        build = self.build

        def renamed_build(assignment):
            return build({inverse.get(k, k): v for k, v in assignment.items()
                          if k in inverse or k not in mapping})

        variables = tuple(
            VarSpec(mapping.get(v.name, v.name), v.rows, v.cols, v.symmetric, v.nonneg)
            for v in self.variables)
        return LmiConstraint(self.name, variables, self.dim, renamed_build,
                             self.sense, self.margin)


def local_lmi(sub: Subsystem, p_floor: float = DEFAULT_P_FLOOR) -> tuple[LmiConstraint, LmiConstraint]:
    """Dissipation LMI pair for one subsystem in variables (P, Y, S).

    Returns (P >= p_floor*I, block <= 0) where the block couples the state
    and disturbance channels:

        [ A'P + PA + Y' + Y - C'S22 C ,  PG - C'S12' ]
        [        (sym.)               ,     -S11     ]

    S is the full (n_w+n_y) symmetric supply matrix; its blocks are views.
    """
    A, G, C = sub.A, sub.G, sub.C
    n, nw, ny = sub.n, sub.n_w, sub.n_y
    k = nw + ny

    pos = LmiConstraint(
        name="storage_pd",
        variables=(VarSpec("P", n, n, symmetric=True),),
        dim=n,
        build=lambda v: v["P"],
        sense="psd",
        margin=p_floor,
    )

    def build(v):
        P, Y, S = v["P"], v["Y"], v["S"]
        S11 = S[:nw, :nw]
        S12 = S[:nw, nw:]
        S22 = S[nw:, nw:]
        W = A.T @ P + Y.T
        Z = C.T @ S22 @ C
        X11 = W + W.T - (Z + Z.T) / 2
        X12 = P @ G - C.T @ S12.T
        if nw == 0:
            return X11
        return np.block([[X11, X12], [X12.T, -S11]])

    block = LmiConstraint(
        name="dissipation",
        variables=(VarSpec("P", n, n, symmetric=True),
                   VarSpec("Y", n, n),
                   VarSpec("S", k, k, symmetric=True)),
        dim=n + nw,
        build=build,
        sense="nsd",
        margin=0.0,
    )
    return pos, block


def coupling_maps(p: InterconnectionProblem, permutation: np.ndarray):
    """Row blocks of P_pi @ [M; I] over the coordinates [y; d].

    Returns (T_blocks, T_d, T_z): per-subsystem maps onto (w_i, y_i), plus
    the maps onto d and z.
    """
    n_y, n_d = p.n_y, p.n_d
    T = permutation @ np.vstack([p.M, np.eye(n_y + n_d)])
    blocks = []
    r = 0
    for nw, ny in zip(p.w_dims, p.y_dims):
        blocks.append(T[r:r + nw + ny, :])
        r += nw + ny
    T_d = T[r:r + n_d, :]
    T_z = T[r + n_d:, :]
    return blocks, T_d, T_z


def global_lmi(p: InterconnectionProblem, permutation: np.ndarray,
               supply: SupplyRate, margin: float = DEFAULT_MARGIN) -> LmiConstraint:
    """Interconnection LMI over the coordinates [y; d].

    The expression is sum_i T_i' S_i T_i - T_dz' S T_dz where T stacks the
    channel maps; it must be <= -margin*I.  When the supply carries eta the
    constraint is affine in the scalar variable "eta" (the stored eta value
    is ignored); otherwise the supply matrix is fixed data.
    """
    blocks, T_d, T_z = coupling_maps(p, permutation)
    dim = p.n_y + p.n_d
    kdims = [nw + ny for nw, ny in zip(p.w_dims, p.y_dims)]
    names = [f"S{i}" for i in range(p.N)]
    varspecs = [VarSpec(names[i], kdims[i], kdims[i], symmetric=True)
                for i in range(p.N)]
    with_eta = supply.eta is not None
    if with_eta:
        varspecs.append(VarSpec("eta", 1, 1, nonneg=True))
    S_fixed = supply.S
    TdTd = T_d.T @ T_d
    TzTz = T_z.T @ T_z

    def build(v):
        expr = np.zeros((dim, dim))
        for i, Ti in enumerate(blocks):
            term = Ti.T @ v[names[i]] @ Ti
            expr = expr + (term + term.T) / 2
        if with_eta:
            eta = float(np.ravel(np.asarray(v["eta"]))[0]) if not np.isscalar(v["eta"]) else float(v["eta"])
            expr = expr - eta * TdTd + TzTz
        elif S_fixed.size:
            Tdz = np.vstack([T_d, T_z])
            term = Tdz.T @ S_fixed @ Tdz
            expr = expr - (term + term.T) / 2
        return expr

    return LmiConstraint(
        name="interconnection",
        variables=tuple(varspecs),
        dim=dim,
        build=build,
        sense="nsd",
        margin=margin,
    )


@dataclass
class LocalCertificate:
    """Per-subsystem certificate (S_i, P_i, Y_i); S blocks split at n_w."""

    S: np.ndarray
    P: np.ndarray
    Y: np.ndarray
    n_w: int

    def __post_init__(self):
        self.S = np.asarray(self.S, dtype=float)
        self.P = np.asarray(self.P, dtype=float)
        self.Y = np.asarray(self.Y, dtype=float)
        self.S = (self.S + self.S.T) / 2
        self.P = (self.P + self.P.T) / 2

    @property
    def S11(self) -> np.ndarray:
        return self.S[:self.n_w, :self.n_w]

    @property
    def S12(self) -> np.ndarray:
        return self.S[:self.n_w, self.n_w:]

    @property
    def S21(self) -> np.ndarray:
        return self.S12.T

    @property
    def S22(self) -> np.ndarray:
        return self.S[self.n_w:, self.n_w:]
