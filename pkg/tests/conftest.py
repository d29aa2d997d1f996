import numpy as np
import pytest

from dissynth import InterconnectionProblem, Subsystem
from dissynth.cli import example1_problem


@pytest.fixture
def example1():
    return example1_problem()


@pytest.fixture
def coupled_scalars():
    """Two unstable scalar blocks in feedback: dx_i = x_i + u_i + w_i,
    y_i = x_i, w_1 = y_2, w_2 = y_1.  Stabilize-mode benchmark."""
    s = lambda: Subsystem(A=[[1.0]], B=[[1.0]], G=[[1.0]], C=[[1.0]])
    return InterconnectionProblem(
        subsystems=[s(), s()],
        M_wy=np.array([[0.0, 1.0], [1.0, 0.0]]),
        M_wd=np.zeros((2, 0)), M_zy=np.zeros((0, 2)), M_zd=np.zeros((0, 0)),
        n_d=0, n_z=0)


@pytest.fixture
def scalar_hinf():
    """dx = -x + u + w, y = x, w = d, z = y: closed-loop transfer 1/(s+1-k)."""
    return InterconnectionProblem(
        subsystems=[Subsystem(A=[[-1.0]], B=[[1.0]], G=[[1.0]], C=[[1.0]])],
        M_wy=np.array([[0.0]]), M_wd=np.array([[1.0]]),
        M_zy=np.array([[1.0]]), M_zd=np.array([[0.0]]),
        n_d=1, n_z=1)


@pytest.fixture
def b_zero_trap():
    """Uncontrollable unstable block: LMI-feasible but gains cannot realize
    the certificate (the recovery gap)."""
    return InterconnectionProblem(
        subsystems=[Subsystem(A=[[1.0]], B=[[0.0]], G=[[0.0]], C=[[1.0]])],
        M_wy=np.array([[0.0]]), M_wd=np.array([[0.0]]),
        M_zy=np.array([[1.0]]), M_zd=np.array([[0.0]]),
        n_d=1, n_z=1)


def random_problem(rng, n_sub=None, with_dz=True, scale=0.5):
    """Small random interconnection with moderate coupling norms."""
    n_sub = n_sub if n_sub is not None else int(rng.integers(1, 4))
    subs = []
    for _ in range(n_sub):
        n = int(rng.integers(1, 4))
        m = int(rng.integers(1, 3))
        nw = int(rng.integers(1, 3))
        ny = int(rng.integers(1, 3))
        subs.append(Subsystem(
            A=rng.standard_normal((n, n)),
            B=rng.standard_normal((n, m)),
            G=rng.standard_normal((n, nw)),
            C=rng.standard_normal((ny, n))))
    n_w = sum(s.n_w for s in subs)
    n_y = sum(s.n_y for s in subs)
    n_d = int(rng.integers(1, 3)) if with_dz else 0
    n_z = int(rng.integers(1, 3)) if with_dz else 0
    return InterconnectionProblem(
        subsystems=subs,
        M_wy=scale * rng.standard_normal((n_w, n_y)),
        M_wd=scale * rng.standard_normal((n_w, n_d)),
        M_zy=scale * rng.standard_normal((n_z, n_y)),
        M_zd=scale * rng.standard_normal((n_z, n_d)),
        n_d=n_d, n_z=n_z)
