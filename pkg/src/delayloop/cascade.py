"""Pair operators and the piecewise-constant master-equation generator.

A system coupled to its own delayed output behaves, over the time window
(k-1)*tau <= t < k*tau, like a chain of k identical copies in which copy l
drives copy l+1 through the loop field.  This module builds the pairwise
Hamiltonian and jump operators of that chain and assembles the two constant
Liouvillians between which the generator switches at the auxiliary time
s* = t - (k-1)*tau: before s* the newest copy participates, after s* every
operator on it is replaced by zero.
"""

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .operators import (dag, dissipator_super, embed, ham_super,
                        require_hermitian)

# relative snap width for deciding that t sits exactly on a window boundary
_BOUNDARY_RTOL = 1e-12


@dataclass
class FeedbackSystem:
    """Physical model of one system coupled to the loop at two taps.

    d          local Hilbert dimension
    h_s        system Hamiltonian (units of gamma)
    a1, a2     coupling operators at the loop entry (x=0) and exit (x=l)
    kappa1/2   coupling rates at the two taps
    phi        phase accumulated along the loop
    tau        round-trip delay (units of 1/gamma)
    """
    d: int
    h_s: np.ndarray
    a1: np.ndarray
    a2: np.ndarray
    kappa1: float
    kappa2: float
    phi: float
    tau: float

    def __post_init__(self):
        self.h_s = np.asarray(self.h_s, dtype=complex)
        self.a1 = np.asarray(self.a1, dtype=complex)
        self.a2 = np.asarray(self.a2, dtype=complex)
        for name, op in (("h_s", self.h_s), ("a1", self.a1), ("a2", self.a2)):
            if op.shape != (self.d, self.d):
                raise ValueError(f"{name} has shape {op.shape}, expected ({self.d}, {self.d})")
        require_hermitian(self.h_s, "h_s")
        if self.kappa1 < 0 or self.kappa2 < 0:
            raise ValueError("rates must be nonnegative")
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        for op in (self.h_s, self.a1, self.a2):
            op.setflags(write=False)


@dataclass
class PiecewiseGenerator:
    """Constant Liouvillians on either side of the switch time s*.

    L_full has every copy active; L_reduced has all operators on copy k
    replaced by zero.  Both act on the d**(2k)-dimensional Liouville space.
    """
    k: int
    d: int
    L_full: sparse.csr_matrix
    L_reduced: sparse.csr_matrix
    s_star: float
    tau: float

    @property
    def hilbert_dim(self):
        return self.d ** self.k

    @property
    def liouville_dim(self):
        return self.d ** (2 * self.k)


def _embedder(sys, k, inactive):
    """Embedding that replaces factors on listed copies by zero.

    Zeroing happens before any product or superoperator is formed, so cross
    terms touching an inactive copy vanish entirely.
    """
    zero = np.zeros((sys.d, sys.d), dtype=complex)

    def emb(op, copy):
        if copy in inactive:
            op = zero
        return embed(op, copy, k, sys.d)

    return emb


def _inactive_set(k, copy_k_active):
    return frozenset() if copy_k_active else frozenset({k})


def _pair_hamiltonian(sys, l, k, inactive):
    if not 0 <= l <= k:
        raise ValueError(f"pair index {l} outside 0..{k}")
    emb = _embedder(sys, k, inactive)
    if l == 0:
        return emb(sys.h_s, 1)
    if l == k:
        return emb(sys.h_s, k)
    g = 1j * np.sqrt(sys.kappa1 * sys.kappa2) * np.exp(1j * sys.phi)
    cross = g * (emb(dag(sys.a1), l) @ emb(sys.a2, l + 1))
    return emb(sys.h_s, l) + emb(sys.h_s, l + 1) + cross + dag(cross)


def _pair_lindblad(sys, l, k, inactive):
    if not 0 <= l <= k:
        raise ValueError(f"pair index {l} outside 0..{k}")
    emb = _embedder(sys, k, inactive)
    phase = np.exp(1j * sys.phi)
    if l == 0:
        return np.sqrt(sys.kappa2) * phase * emb(sys.a2, 1)
    if l == k:
        return np.sqrt(sys.kappa1) * emb(sys.a1, k)
    return (np.sqrt(sys.kappa1) * emb(sys.a1, l)
            + np.sqrt(sys.kappa2) * phase * emb(sys.a2, l + 1))


def pair_hamiltonian(sys, l, k, copy_k_active=True):
    """Pair Hamiltonian H_{l,l+1} on the k-copy space, 0 <= l <= k.

    Interior pairs carry both local Hamiltonians plus the coherent
    source-target exchange  i*sqrt(k1 k2) (e^{i phi} a1+_{l} a2_{l+1} - h.c.);
    the end pairs l=0 and l=k reduce to a single local Hamiltonian.
    """
    return _pair_hamiltonian(sys, l, k, _inactive_set(k, copy_k_active))


def pair_lindblad(sys, l, k, copy_k_active=True):
    """Pair jump operator L_{l,l+1} on the k-copy space, 0 <= l <= k.

    Interior: sqrt(k1) a1_{l} + sqrt(k2) e^{i phi} a2_{l+1}.  The l=0 jump is
    the tap-2 emission of copy 1 (the loop is initially in vacuum); l=k is the
    tap-1 emission of copy k (not yet returned).
    """
    return _pair_lindblad(sys, l, k, _inactive_set(k, copy_k_active))


def _chain_liouvillian_inactive(sys, k, inactive):
    dim2 = sys.d ** (2 * k)
    L = sparse.csr_matrix((dim2, dim2), dtype=complex)
    for l in range(k + 1):
        h = _pair_hamiltonian(sys, l, k, inactive)
        c = _pair_lindblad(sys, l, k, inactive)
        L = L - 0.5j * ham_super(h) + dissipator_super(c)
    L.eliminate_zeros()
    return L.tocsr()


def chain_liouvillian(sys, k, copy_k_active=True):
    """Sum of all pair terms: the constant k-copy cascade Liouvillian."""
    return _chain_liouvillian_inactive(sys, k, _inactive_set(k, copy_k_active))


def window_index(t, tau):
    """Copy count k and switch time s* for target time t.

    k = floor(t/tau) + 1 on the half-open window; a t that sits exactly on a
    boundary (k-1)*tau is assigned to the window it opens, with s* = 0.
    """
    if t < 0:
        raise ValueError("t must be >= 0")
    ratio = t / tau
    nearest = round(ratio)
    if abs(ratio - nearest) <= _BOUNDARY_RTOL * max(1.0, abs(ratio)):
        return int(nearest) + 1, 0.0
    k = int(np.floor(ratio)) + 1
    return k, t - (k - 1) * tau


def build_generator(sys, t, k=None):
    """Piecewise generator for the window that contains time t.

    k is derived from t; passing it explicitly only asserts consistency.
    """
    k_derived, s_star = window_index(t, sys.tau)
    if k is not None and k != k_derived:
        raise ValueError(f"k={k} inconsistent with t={t}: window requires k={k_derived}")
    k = k_derived
    return PiecewiseGenerator(
        k=k, d=sys.d,
        L_full=chain_liouvillian(sys, k, copy_k_active=True),
        L_reduced=chain_liouvillian(sys, k, copy_k_active=False),
        s_star=s_star, tau=sys.tau)
