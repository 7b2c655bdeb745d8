"""Generalized trace and the chain contraction that recovers the reduced state.

A k-copy propagator has, per copy, an input and an output density-matrix slot
(two legs each).  The generalized trace Gtr(src -> dst) sums the output legs
of copy `src` against the input legs of copy `dst`; with src == dst it is the
ordinary partial trace of the superoperator matrix over that copy's Liouville
factor.  Feeding the initial state into copy 1 and wiring each copy's output
into the next copy's input leaves the output of copy k: the reduced state at
the target time.

The chain contraction is performed as a single index sweep on reshaped
arrays; nested Gtr calls are only used as a cross-check in the tests.
"""

from dataclasses import dataclass

import numpy as np

from .operators import vec
from .propagator import check_budget

TRACE_ATOL = 1e-8
HERM_ATOL = 1e-10
EIG_ATOL = 1e-10


@dataclass
class LeggedPropagator:
    """Superoperator matrix with per-copy leg bookkeeping.

    entries has shape (d**(2*len(out_copies)), d**(2*len(in_copies))); rows
    enumerate (col-multi, row-multi) over the output copies in ascending
    label order, columns likewise for the input copies.  Reshaping back to
    the original matrix is exact; no data is copied on construction.
    """
    d: int
    entries: np.ndarray
    out_copies: tuple
    in_copies: tuple

    @classmethod
    def from_matrix(cls, entries, k, d):
        entries = np.asarray(entries)
        labels = tuple(range(1, k + 1))
        if entries.shape != (d ** (2 * k), d ** (2 * k)):
            raise ValueError("matrix shape inconsistent with k copies")
        return cls(d=d, entries=entries, out_copies=labels, in_copies=labels)


def gen_trace(lp, src, dst):
    """Sum output legs of copy `src` against input legs of copy `dst`.

    Returns a LeggedPropagator with src removed from the outputs and dst from
    the inputs.  src == dst is legal and gives the superoperator partial
    trace over that copy.
    """
    if src not in lp.out_copies:
        raise ValueError(f"copy {src} not among output copies {lp.out_copies}")
    if dst not in lp.in_copies:
        raise ValueError(f"copy {dst} not among input copies {lp.in_copies}")
    d = lp.d
    n_out, n_in = len(lp.out_copies), len(lp.in_copies)
    i = lp.out_copies.index(src)
    j = lp.in_copies.index(dst)

    T = lp.entries.reshape((d,) * (2 * n_out + 2 * n_in))
    # axis groups: out cols, out rows, in cols, in rows
    oc = list(range(0, n_out))
    orw = list(range(n_out, 2 * n_out))
    ic = list(range(2 * n_out, 2 * n_out + n_in))
    irw = list(range(2 * n_out + n_in, 2 * n_out + 2 * n_in))
    labels = list(range(2 * n_out + 2 * n_in))
    labels[ic[j]] = labels[oc[i]]
    labels[irw[j]] = labels[orw[i]]
    out_labels = [labels[a] for grp in (oc, orw, ic, irw) for a in grp
                  if a not in (oc[i], orw[i], ic[j], irw[j])]
    res = np.einsum(T, labels, out_labels)
    res = res.reshape(d ** (2 * (n_out - 1)), d ** (2 * (n_in - 1)))
    return LeggedPropagator(
        d=d, entries=res,
        out_copies=tuple(c for c in lp.out_copies if c != src),
        in_copies=tuple(c for c in lp.in_copies if c != dst))


def validate_state(rho, d=None, what="state"):
    rho = np.asarray(rho, dtype=complex)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise ValueError(f"{what} must be a square matrix")
    if d is not None and rho.shape[0] != d:
        raise ValueError(f"{what} has dimension {rho.shape[0]}, expected {d}")
    if abs(np.trace(rho) - 1.0) > TRACE_ATOL:
        raise ValueError(f"{what} is not unit trace (defect {abs(np.trace(rho)-1.0):.2e})")
    if np.max(np.abs(rho - rho.conj().T)) > HERM_ATOL:
        raise ValueError(f"{what} is not Hermitian")
    lo = np.linalg.eigvalsh(0.5 * (rho + rho.conj().T)).min()
    if lo < -EIG_ATOL:
        raise ValueError(f"{what} is not positive semidefinite (min eig {lo:.2e})")
    return rho


def chain_input_block(rho0, k, d):
    """Columns of the wiring pattern fed by rho0 on copy 1.

    Column p enumerates the joint input basis elements of copies 2..k; the
    contraction of the evolved block against the matching output pattern of
    copies 1..k-1 (chain_extract_state) equals the full chain of generalized
    traces without ever materializing the propagator matrix.
    """
    q = d ** (k - 1)
    D = d ** (2 * k)
    P = q * q
    check_budget(16 * D * P, "chain contraction block")
    if k == 1:
        return vec(rho0).astype(complex).reshape(D, 1)
    eye = np.eye(q)
    V = np.einsum("rc,ip,jq->cirjpq", np.asarray(rho0, dtype=complex), eye, eye)
    return np.ascontiguousarray(V.reshape(D, P))


def chain_extract_state(M, k, d):
    """Close the wiring on an evolved block; returns the copy-k output state."""
    q = d ** (k - 1)
    M6 = M.reshape(q, d, q, d, q, q)
    return np.einsum("acbdab->dc", M6)


def reduced_contract(phi_first, M, k, d):
    """Contraction with the post-switch flow applied on copies 1..k-1 only.

    After the switch time the newest copy no longer evolves, so the remaining
    flow acts on the leading k-1 copies; phi_first is its dense matrix on
    d**(2(k-1)) dimensions.  Equivalent to, but far cheaper than, extending
    phi_first to all k copies before extraction.
    """
    q = d ** (k - 1)
    P = q * q
    if k == 1:
        return chain_extract_state(M, k, d)
    M6 = M.reshape(q, d, q, d, q, q)
    K = M6.transpose(0, 2, 1, 3, 4, 5).reshape(P, d * d * P)
    T = (phi_first @ K).reshape(q, q, d, d, q, q)
    return np.einsum("abcdab->dc", T)


def contract_chain(e, rho0):
    """Reduced state from a full propagator matrix and the initial state.

    e is a PropagatorMatrix (or any object with .entries, .k, .d).  rho0 must
    be unit trace, Hermitian, and positive semidefinite within integrator
    tolerance; anything worse is a hard error, never silently renormalized.
    """
    rho0 = validate_state(rho0, e.d, "rho0")
    V = chain_input_block(rho0, e.k, e.d)
    M = np.asarray(e.entries) @ V
    return chain_extract_state(M, e.k, e.d)
