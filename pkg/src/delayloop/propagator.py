"""Integration of the piecewise-constant propagator equation.

The propagator starts from the identity map and is advanced first under the
full generator up to the switch time s*, then under the reduced generator up
to s = tau.  Each piece is the flow of a constant Liouvillian, computed either
by scaling-and-squaring (default) or by fixed-step classical Runge-Kutta; the
two must agree and are cross-checked in the test suite.

Large windows never materialize the full propagator matrix: callers evolve a
tall block of columns instead (see gtrace.chain_input_block).
"""

import os
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.linalg import expm
from scipy.sparse.linalg import expm_multiply

DEFAULT_BUDGET_MB = 4096.0
DEFAULT_FULL_DIM = 4096      # largest Liouville dimension for a dense propagator
_BUDGET_ENV = "DELAYLOOP_MEM_BUDGET_MB"


class MemoryBudgetError(MemoryError):
    """Raised instead of attempting an allocation beyond the configured budget."""

    def __init__(self, message, max_reachable_t=None):
        super().__init__(message)
        self.max_reachable_t = max_reachable_t


class FlowError(RuntimeError):
    pass


def memory_budget_bytes():
    raw = os.environ.get(_BUDGET_ENV)
    mb = DEFAULT_BUDGET_MB if raw is None else float(raw)
    return int(mb * 2 ** 20)


def max_full_dim():
    """Largest Liouville dimension allowed for a dense propagator matrix."""
    if os.environ.get(_BUDGET_ENV) is None:
        return DEFAULT_FULL_DIM
    return int(np.sqrt(memory_budget_bytes() / 16))


def check_budget(nbytes, what):
    budget = memory_budget_bytes()
    if nbytes > budget:
        raise MemoryBudgetError(
            f"{what} needs {nbytes / 2**20:.0f} MiB, budget is "
            f"{budget / 2**20:.0f} MiB (set {_BUDGET_ENV} to raise)")


@dataclass
class PropagatorMatrix:
    """Dense matrix of the k-copy propagator at s = tau."""
    k: int
    d: int
    entries: np.ndarray

    @property
    def liouville_dim(self):
        return self.entries.shape[0]


def _rk4_step_count(L, duration, base_steps=200, eta=0.01):
    row_sums = np.abs(L).sum(axis=1)
    norm = float(row_sums.max()) if row_sums.size else 0.0
    h = duration / base_steps
    if norm > 0:
        h = min(h, eta / norm)
    steps = int(np.ceil(duration / h))
    if steps > 10 ** 7:
        raise FlowError("step-size underflow: generator norm too large for RK4")
    return steps


def flow(L, duration, method="expm"):
    """Dense matrix of exp(duration * L) for a constant generator L.

    method 'expm' uses scaling-and-squaring; 'rk4' integrates the matrix ODE
    dE/ds = L E with the classical fixed-step scheme,
    h = min(duration/200, 0.01/max-row-sum).
    """
    if duration < 0:
        raise ValueError("duration must be >= 0")
    if sparse.issparse(L):
        dim = L.shape[0]
    else:
        L = np.asarray(L, dtype=complex)
        dim = L.shape[0]
    if duration == 0:
        return np.eye(dim, dtype=complex)

    if method == "expm":
        Ld = L.toarray() if sparse.issparse(L) else L
        E = expm(Ld * duration)
    elif method == "rk4":
        Lc = sparse.csr_matrix(L) if not sparse.issparse(L) else L.tocsr()
        steps = _rk4_step_count(Lc, duration)
        h = duration / steps
        E = np.eye(dim, dtype=complex)
        for _ in range(steps):
            k1 = Lc @ E
            k2 = Lc @ (E + 0.5 * h * k1)
            k3 = Lc @ (E + 0.5 * h * k2)
            k4 = Lc @ (E + h * k3)
            E = E + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    else:
        raise ValueError(f"unknown method {method!r}")

    if not np.all(np.isfinite(E)):
        raise FlowError("non-finite entries in integrated flow")
    return E


def apply_flow(L, duration, block, method="expm_multiply"):
    """Action of exp(duration * L) on a dense block of column vectors."""
    if duration < 0:
        raise ValueError("duration must be >= 0")
    if duration == 0:
        return np.array(block, dtype=complex, copy=True)
    if method == "expm_multiply":
        A = (L * duration).tocsr() if sparse.issparse(L) else np.asarray(L) * duration
        out = expm_multiply(A, np.asarray(block, dtype=complex))
    else:
        out = flow(L, duration, method=method) @ block
    if not np.all(np.isfinite(out)):
        raise FlowError("non-finite entries in integrated flow")
    return out


def evolve_propagator(gen, method="expm"):
    """Full propagator matrix at s = tau for one window.

    E_tau(t) = Phi_reduced(tau - s*) @ Phi_full(s*).  Refuses Liouville
    dimensions beyond the configured ceiling; use the block pathway in
    delayloop.sim for larger windows.
    """
    dim = gen.liouville_dim
    ceiling = max_full_dim()
    if dim > ceiling:
        raise MemoryBudgetError(
            f"dense propagator at Liouville dimension {dim} exceeds the ceiling "
            f"{ceiling} (set {_BUDGET_ENV} to raise)")
    check_budget(16 * dim * dim * 3, "dense propagator")
    E_full = flow(gen.L_full, gen.s_star, method=method)
    E_red = flow(gen.L_reduced, gen.tau - gen.s_star, method=method)
    return PropagatorMatrix(k=gen.k, d=gen.d, entries=E_red @ E_full)
