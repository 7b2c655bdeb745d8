"""Complex matrix kernels, Kronecker embedding, and Liouville-space superoperators.

Operators are plain complex numpy arrays of shape (dim, dim).  Superoperators
are scipy CSR matrices of shape (dim**2, dim**2) acting on column-stacked
vectorizations:

    vec(rho)[c*dim + r] = rho[r, c]        (column-major / Fortran order)

so that vec(X rho Y) = (Y.T kron X) vec(rho).  Copy 1 of a multi-copy system
is always the most significant Kronecker factor.
"""

import numpy as np
from scipy import sparse

HERMITICITY_ATOL = 1e-12


def dag(a):
    """Hermitian adjoint."""
    return np.asarray(a).conj().T


def is_hermitian(a, atol=HERMITICITY_ATOL):
    a = np.asarray(a)
    return np.max(np.abs(a - a.conj().T)) < atol


def require_hermitian(a, name="operator", atol=HERMITICITY_ATOL):
    if not is_hermitian(a, atol):
        raise ValueError(f"{name} is not Hermitian to {atol:g} (max-norm)")


def kron(a, b):
    """Kronecker product, left factor most significant."""
    return np.kron(np.asarray(a), np.asarray(b))


def embed(a, copy_index, copies, local_dim):
    """Embed a single-copy operator into the `copies`-fold tensor space.

    Returns I^(l-1) (x) a (x) I^(k-l) for l = copy_index (1-based); copy 1 is
    the most significant factor.
    """
    a = np.asarray(a)
    if a.shape != (local_dim, local_dim):
        raise ValueError(
            f"operator has shape {a.shape}, expected ({local_dim}, {local_dim})")
    if not 1 <= copy_index <= copies:
        raise ValueError(f"copy_index {copy_index} outside 1..{copies}")
    left = local_dim ** (copy_index - 1)
    right = local_dim ** (copies - copy_index)
    out = a
    if left > 1:
        out = np.kron(np.eye(left), out)
    if right > 1:
        out = np.kron(out, np.eye(right))
    return out.astype(complex)


def vec(rho):
    """Column-stacking vectorization."""
    return np.asarray(rho).reshape(-1, order="F")


def unvec(v, dim=None):
    v = np.asarray(v).ravel()
    if dim is None:
        dim = int(round(np.sqrt(v.size)))
    if dim * dim != v.size:
        raise ValueError(f"vector of length {v.size} is not a vectorized square matrix")
    return v.reshape((dim, dim), order="F")


def _csr(a):
    m = sparse.csr_matrix(np.asarray(a, dtype=complex))
    m.eliminate_zeros()
    return m


def lmult(x):
    """Superoperator for left multiplication: lmult(x) vec(rho) = vec(x rho)."""
    x = np.asarray(x)
    return sparse.kron(sparse.identity(x.shape[0], format="csr"), _csr(x), format="csr")


def rmult(y):
    """Superoperator for right multiplication: rmult(y) vec(rho) = vec(rho y)."""
    y = np.asarray(y)
    return sparse.kron(_csr(y.T), sparse.identity(y.shape[0], format="csr"), format="csr")


def ham_super(x):
    """Commutator superoperator: ham_super(x) vec(rho) = vec(x rho - rho x)."""
    return (lmult(x) - rmult(x)).tocsr()


def dissipator_super(x):
    """Lindblad dissipator superoperator.

    dissipator_super(x) vec(rho) = vec(x rho x+ - (x+ x rho + rho x+ x)/2).
    Trace-annihilating by construction.
    """
    x = np.asarray(x)
    xdx = dag(x) @ x
    jump = sparse.kron(_csr(x.conj()), _csr(x), format="csr")
    return (jump - 0.5 * (lmult(xdx) + rmult(xdx))).tocsr()


def apply_super(sop, rho):
    """Apply a superoperator matrix to a density matrix, returning a matrix."""
    rho = np.asarray(rho)
    return unvec(sop @ vec(rho), rho.shape[0])


def trace_defect(sop, rho):
    """Trace of the image of rho; zero for trace-annihilating generators."""
    return complex(np.trace(apply_super(sop, rho)))
