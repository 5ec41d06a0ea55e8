import numpy as np
import pytest

from lpmfg.model import InitialLaw, MfgModel, StateDomain


def _const(value):
    if callable(value):
        return value
    return lambda t, x, z, a: value + 0.0 * np.asarray(x, dtype=float) + 0.0 * np.asarray(a, dtype=float)


def make_model(lo=0.0, hi=1.0, horizon=1.0, drift=0.0, sigma=0.0, jump=0.0, intensity=0.0, running=0.0,
               boundary=0.0, terminal=0.0, law=None, drift_stat=None, name="test"):
    """Model with constant (or callable) coefficients; ``terminal`` may be a callable of ``x``."""
    if callable(terminal):
        g = lambda x, z: np.asarray(terminal(np.asarray(x, dtype=float)), dtype=float)  # noqa: E731
    else:
        g = lambda x, z: terminal + 0.0 * np.asarray(x, dtype=float)  # noqa: E731
    h =boundary if callable(boundary) else (lambda t, x: boundary + 0.0 * np.asarray(x, dtype=float))
    kwargs = {}
    if drift_stat is not None:
        kwargs["drift_stat"] = drift_stat
    return MfgModel(
        domain=StateDomain.interval(lo, hi), horizon=horizon, drift=_const(drift), diffusion=_const(sigma),
        jump=_const(jump), intensity=(intensity if callable(intensity) else (lambda t: intensity)),
        running_cost=_const(running), boundary_cost=h, terminal_cost=g,
        initial_law=law or InitialLaw("uniform"), name=name, **kwargs)


def forward_oracle(tensors, grid, m0, v):
    """Plain-loop forward chain: ``rho[n+1] = rho[n] + sum_k G^T m + B^T lambda_b``.

    Written independently of the package's vectorised recursion: dense
    matrices, explicit wall/neighbour flux accounting and a hand-built ``B``.
    """
    N, M, K = grid.shape
    dx, dt = grid.dx, grid.dt
    rho = np.zeros((N + 1, M + 1))
    rho[0] = m0
    m = np.zeros((N, M + 1, K + 1))
    lam = np.zeros((N, 2))
    walls = [(0, 1), (M, M - 1)]
    for n in range(N):
        for i in range(M + 1):
            for k in range(K + 1):
                m[n, i, k] = dt * rho[n, i] * v[n, i, k]
        for j, (w, nb) in enumerate(walls):
            for k in range(K + 1):
                lam[n, j] += tensors.kappa[n, j, 0, k] * m[n, w, k] + tensors.kappa[n, j, 1, k] * m[n, nb, k]
        nxt = rho[n].copy()
        for k in range(K + 1):
            Gd = tensors.G[n][k].toarray()
            for i in range(M + 1):
                for ip in range(M + 1):
                    nxt[i] += Gd[ip, i] * m[n, ip, k]
        # B^T lambda: inward one-sided difference at each face
        nxt[0] -= lam[n, 0] / dx
        nxt[1] += lam[n, 0] / dx
        nxt[M] -= lam[n, 1] / dx
        nxt[M - 1] += lam[n, 1] / dx
        rho[n + 1] = nxt
    return rho, m, lam


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
