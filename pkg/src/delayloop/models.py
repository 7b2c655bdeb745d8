"""Prebuilt feedback-loop systems: driven two-level atom and a truncated cavity.

Rates are in units of gamma (gamma = 1 fixes the unit system); times and delays
in units of 1/gamma.  Basis index equals excitation number, so index 0 is the
ground state and sigma_minus is the 2-level truncation of the annihilation
operator.
"""

from dataclasses import dataclass

import numpy as np

from .cascade import FeedbackSystem


def sigma_minus():
    return np.array([[0, 1], [0, 0]], dtype=complex)


def sigma_plus():
    return sigma_minus().conj().T


def annihilation(cutoff):
    """Truncated annihilation operator on cutoff+1 Fock levels."""
    n = cutoff + 1
    a = np.zeros((n, n), dtype=complex)
    for m in range(1, n):
        a[m - 1, m] = np.sqrt(m)
    return a


def excited_state():
    return np.array([[0, 0], [0, 1]], dtype=complex)


def ground_state():
    return np.array([[1, 0], [0, 0]], dtype=complex)


def coherent_state(alpha, cutoff):
    """Truncated coherent state |alpha><alpha|, renormalized after truncation."""
    n = np.arange(cutoff + 1)
    from scipy.special import gammaln
    amps = np.exp(n * np.log(complex(alpha)) - 0.5 * gammaln(n + 1.0)) if alpha != 0 \
        else np.eye(cutoff + 1, 1).ravel().astype(complex)
    amps = np.asarray(amps, dtype=complex)
    amps /= np.linalg.norm(amps)
    return np.outer(amps, amps.conj())


@dataclass
class TwoLevelParams:
    """Resonantly driven two-level atom with identical taps and rates."""
    drive: float = 0.0       # drive amplitude in units of gamma
    gamma: float = 1.0
    phi: float = np.pi
    tau: float = 1.0

    def __post_init__(self):
        if self.drive < 0:
            raise ValueError("drive must be >= 0")


@dataclass
class CavityParams:
    """Linear cavity with both taps on the same annihilation operator."""
    detuning: float = 0.0
    fock_cutoff: int = 4
    kappa1: float = 1.0
    kappa2: float = 1.0
    phi: float = np.pi
    tau: float = 1.0

    def __post_init__(self):
        if self.fock_cutoff < 2:
            raise ValueError("fock_cutoff must be >= 2")


def two_level(p: TwoLevelParams) -> FeedbackSystem:
    sm = sigma_minus()
    h_s = p.drive * (sigma_plus() + sm)
    return FeedbackSystem(d=2, h_s=h_s, a1=sm, a2=sm.copy(),
                          kappa1=p.gamma, kappa2=p.gamma, phi=p.phi, tau=p.tau)


def cavity(p: CavityParams) -> FeedbackSystem:
    a = annihilation(p.fock_cutoff)
    h_s = p.detuning * (a.conj().T @ a)
    return FeedbackSystem(d=p.fock_cutoff + 1, h_s=h_s, a1=a, a2=a.copy(),
                          kappa1=p.kappa1, kappa2=p.kappa2, phi=p.phi, tau=p.tau)
