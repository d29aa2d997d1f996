"""Subsystem and interconnection models.

A network is a list of LTI subsystems

    dx_i/dt = A_i x_i + B_i u_i + G_i w_i,    y_i = C_i x_i,

coupled through a static interconnection [w; z] = M [y; d], where d is the
exogenous input and z the performance output.  Because subsystems have no
feedthrough, the loop is automatically well posed: w is an explicit function
of x and d.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.linalg import block_diag


def _mat(value, rows=None, cols=None) -> np.ndarray:
    """Coerce to a 2-d float array; empty inputs become (rows, cols) zeros."""
    arr = np.asarray(value, dtype=float)
    if arr.size == 0:
        r = rows if rows is not None else arr.shape[0] if arr.ndim == 2 else 0
        c = cols if cols is not None else 0
        return np.zeros((r, c))
    return np.atleast_2d(arr)


@dataclass
class Subsystem:
    """One block of the network: matrices (A, B, G, C).

    A : n x n state dynamics
    B : n x m control input map (m may be 0)
    G : n x n_w interconnection input map (n_w may be 0)
    C : n_y x n output map (n_y may be 0)
    """

    A: np.ndarray
    B: np.ndarray
    G: np.ndarray
    C: np.ndarray

    def __post_init__(self):
        self.A = _mat(self.A)
        n = self.A.shape[0]
        self.B = _mat(self.B, rows=n)
        self.G = _mat(self.G, rows=n)
        self.C = _mat(self.C, cols=n)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def n_w(self) -> int:
        return self.G.shape[1]

    @property
    def n_y(self) -> int:
        return self.C.shape[0]

    def issues(self, label: str = "subsystem") -> list[str]:
        """Dimension and finiteness problems, empty when clean."""
        out = []
        n = self.A.shape[0]
        if n < 1:
            out.append(f"{label}: A must be at least 1x1")
        if self.A.shape[0] != self.A.shape[1]:
            out.append(f"{label}: A is {self.A.shape[0]}x{self.A.shape[1]}, not square")
        if self.B.shape[0] != n:
            out.append(f"{label}: B has {self.B.shape[0]} rows, expected {n}")
        if self.G.shape[0] != n:
            out.append(f"{label}: G has {self.G.shape[0]} rows, expected {n}")
        if self.C.shape[1] != n:
            out.append(f"{label}: C has {self.C.shape[1]} columns, expected {n}")
        for name in ("A", "B", "G", "C"):
            if not np.all(np.isfinite(getattr(self, name))):
                out.append(f"{label}: {name} contains non-finite entries")
        return out


@dataclass
class InterconnectionProblem:
    """Subsystems plus the four blocks of the static interconnection M."""

    subsystems: list[Subsystem]
    M_wy: np.ndarray
    M_wd: np.ndarray
    M_zy: np.ndarray
    M_zd: np.ndarray
    n_d: int = 0
    n_z: int = 0

    def __post_init__(self):
        self.subsystems = list(self.subsystems)
        n_w, n_y = self.n_w, self.n_y
        self.M_wy = _mat(self.M_wy, rows=n_w, cols=n_y)
        self.M_wd = _mat(self.M_wd, rows=n_w, cols=self.n_d)
        self.M_zy = _mat(self.M_zy, rows=self.n_z, cols=n_y)
        self.M_zd = _mat(self.M_zd, rows=self.n_z, cols=self.n_d)

    @property
    def N(self) -> int:
        return len(self.subsystems)

    @property
    def n(self) -> int:
        return sum(s.n for s in self.subsystems)

    @property
    def n_w(self) -> int:
        return sum(s.n_w for s in self.subsystems)

    @property
    def n_y(self) -> int:
        return sum(s.n_y for s in self.subsystems)

    @property
    def w_dims(self) -> list[int]:
        return [s.n_w for s in self.subsystems]

    @property
    def y_dims(self) -> list[int]:
        return [s.n_y for s in self.subsystems]

    @property
    def M(self) -> np.ndarray:
        """Full (n_w+n_z) x (n_y+n_d) interconnection matrix."""
        return np.block([
            [self.M_wy, self.M_wd],
            [self.M_zy, self.M_zd],
        ])


@dataclass
class StateSpace:
    """Plain LTI realization dx/dt = A x + B d, z = C x + D d."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray

    def __post_init__(self):
        self.A = _mat(self.A)
        n = self.A.shape[0]
        self.B = _mat(self.B, rows=n)
        self.C = _mat(self.C, cols=n)
        self.D = _mat(self.D, rows=self.C.shape[0], cols=self.B.shape[1])

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def n_in(self) -> int:
        return self.B.shape[1]

    @property
    def n_out(self) -> int:
        return self.C.shape[0]


def validate_problem(p: InterconnectionProblem) -> list[str]:
    """Report-style validation: list of problems, empty when the data is usable."""
    out = []
    if p.N == 0:
        out.append("problem has no subsystems")
        return out
    for i, sub in enumerate(p.subsystems):
        out.extend(sub.issues(label=f"subsystem {i}"))
    if p.n_d < 0 or p.n_z < 0:
        out.append("n_d and n_z must be non-negative")
    expect = {
        "M_wy": (p.n_w, p.n_y),
        "M_wd": (p.n_w, p.n_d),
        "M_zy": (p.n_z, p.n_y),
        "M_zd": (p.n_z, p.n_d),
    }
    for name, shape in expect.items():
        M = getattr(p, name)
        if M.shape != shape:
            out.append(f"{name} has shape {M.shape}, expected {shape}")
        elif not np.all(np.isfinite(M)):
            out.append(f"{name} contains non-finite entries")
    return out


def build_permutation(n_w: Sequence[int], n_y: Sequence[int], n_d: int, n_z: int) -> np.ndarray:
    """Permutation mapping the stack [w; z; y; d] to [w_1; y_1; ...; w_N; y_N; d; z].

    Square 0/1 matrix of size n_w + n_z + n_y + n_d with one 1 per row and
    column; applying it regroups the channel stack subsystem by subsystem.
    """
    n_w = list(n_w)
    n_y = list(n_y)
    tot_w, tot_y = sum(n_w), sum(n_y)
    size = tot_w + n_z + tot_y + n_d
    w_base, z_base, y_base, d_base = 0, tot_w, tot_w + n_z, tot_w + n_z + tot_y
    cols = []
    w_off = y_off = 0
    for nw, ny in zip(n_w, n_y):
        cols.extend(range(w_base + w_off, w_base + w_off + nw))
        cols.extend(range(y_base + y_off, y_base + y_off + ny))
        w_off += nw
        y_off += ny
    cols.extend(range(d_base, d_base + n_d))
    cols.extend(range(z_base, z_base + n_z))
    P = np.zeros((size, size))
    P[np.arange(size), cols] = 1.0
    return P


def _blockdiag(mats: list[np.ndarray], rows: int, cols: int) -> np.ndarray:
    if not mats:
        return np.zeros((rows, cols))
    return block_diag(*mats)


def block_matrices(p: InterconnectionProblem):
    """Block-diagonal (A, B, G, C) of the stacked subsystem collection."""
    A = _blockdiag([s.A for s in p.subsystems], p.n, p.n)
    B = _blockdiag([s.B for s in p.subsystems], p.n, sum(s.m for s in p.subsystems))
    G = _blockdiag([s.G for s in p.subsystems], p.n, p.n_w)
    C = _blockdiag([s.C for s in p.subsystems], p.n_y, p.n)
    return A, B, G, C


def assemble_open_loop(p: InterconnectionProblem) -> StateSpace:
    """Close the interconnection (u = 0) into one realization from d to z.

    The d-input enters through G @ M_wd: the interconnection distributes d
    onto the subsystem disturbance channels, which enter the state through G.
    """
    A, _B, G, C = block_matrices(p)
    return StateSpace(
        A=A + G @ p.M_wy @ C,
        B=G @ p.M_wd,
        C=p.M_zy @ C,
        D=p.M_zd,
    )


def assemble_closed_loop(p: InterconnectionProblem, gains: Sequence[np.ndarray]) -> StateSpace:
    """Open loop with u_i = K_i x_i applied blockwise."""
    gains = [np.atleast_2d(np.asarray(K, dtype=float)) for K in gains]
    if len(gains) != p.N:
        raise ValueError(f"expected {p.N} gains, got {len(gains)}")
    for i, (K, s) in enumerate(zip(gains, p.subsystems)):
        if K.shape != (s.m, s.n):
            raise ValueError(
                f"gain {i} has shape {K.shape}, expected ({s.m}, {s.n})")
    ol = assemble_open_loop(p)
    _A, B, _G, _C = block_matrices(p)
    K = _blockdiag(gains, sum(s.m for s in p.subsystems), p.n)
    return StateSpace(A=ol.A + B @ K, B=ol.B, C=ol.C, D=ol.D)
