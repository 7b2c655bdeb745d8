"""User-facing simulation driver: build, evolve, contract, record.

For every requested time t the driver derives the window (copy count k and
switch time s*), advances the contraction block incrementally under the full
generator, applies the post-switch flow, and closes the wiring to obtain the
reduced state.  Two structural facts keep this cheap:

* the post-switch generator equals the full generator of a chain that is one
  copy shorter, acting trivially on the newest copy, so the second piece of
  the evolution runs in dimension d**(2k-2) rather than d**(2k);
* a time sitting exactly on a window boundary m*tau is computed in the
  m-copy window integrated over the whole auxiliary interval, which is the
  same limit the (m+1)-copy window with s* = 0 defines.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .cascade import FeedbackSystem, chain_liouvillian, window_index
from .gtrace import (chain_extract_state, chain_input_block, reduced_contract,
                     validate_state)
from .propagator import MemoryBudgetError, apply_flow, check_budget, flow

# dense cached step matrices below this Liouville dimension, action above
_DENSE_STEP_DIM = 512
# hard desk-scale copy ceilings
_QUBIT_K_MAX = 6
_CAVITY_K_MAX = 3
_CAVITY_D_MAX = 5
_TOP_LEVEL_TOL = 1e-6


@dataclass
class Trajectory:
    """Time-ordered reduced states with derived observables and diagnostics."""
    times: np.ndarray
    states: np.ndarray                      # (n, d, d)
    observables: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")
        if len(self.states) != len(self.times):
            raise ValueError("one state required per time")


def expectation(op, rho):
    """Tr(op rho)."""
    op = np.asarray(op)
    rho = np.asarray(rho)
    if op.shape != rho.shape:
        raise ValueError(f"dimension mismatch: {op.shape} vs {rho.shape}")
    return complex(np.trace(op @ rho))


def _observable_ops(d):
    from .models import annihilation, sigma_minus
    if d == 2:
        sm = sigma_minus()
        return {"P_e": np.diag([0.0, 1.0]).astype(complex), "coh": sm}
    a = annihilation(d - 1)
    return {"a": a, "n_phot": a.conj().T @ a}


def _record_observables(obs, d, rho):
    ops = _observable_ops(d)
    if d == 2:
        obs.setdefault("P_e", []).append(float(rho[1, 1].real))
        c = expectation(ops["coh"], rho)
        obs.setdefault("re_coh", []).append(c.real)
        obs.setdefault("im_coh", []).append(c.imag)
    else:
        av = expectation(ops["a"], rho)
        obs.setdefault("re_a", []).append(av.real)
        obs.setdefault("im_a", []).append(av.imag)
        obs.setdefault("n_phot", []).append(expectation(ops["n_phot"], rho).real)
        obs.setdefault("top_level_pop", []).append(float(rho[d - 1, d - 1].real))


def _k_ceiling(d):
    if d == 2:
        return _QUBIT_K_MAX
    if d <= _CAVITY_D_MAX:
        return _CAVITY_K_MAX
    return 0


def _window_of(t, tau):
    """Window assignment with boundary times folded into the closing window."""
    k, s_star = window_index(t, tau)
    if s_star == 0.0 and k > 1:
        return k - 1, tau
    return k, s_star


def _plan(sys, times):
    """Group sample times into windows; refuse times beyond the copy ceiling."""
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size == 0:
        raise ValueError("times must be a nonempty 1-D grid")
    if np.any(times < 0):
        raise ValueError("all times must be >= 0")
    if np.any(np.diff(times) <= 0):
        raise ValueError("times must be strictly increasing")
    kcap = _k_ceiling(sys.d)
    if kcap == 0:
        raise MemoryBudgetError(
            f"local dimension {sys.d} exceeds the desk-scale ceiling d <= {_CAVITY_D_MAX}")
    windows = {}
    for idx, t in enumerate(times):
        k, s_star = _window_of(t, sys.tau)
        if k > kcap:
            reachable = times[[_window_of(x, sys.tau)[0] <= kcap for x in times]]
            max_t = float(reachable.max()) if reachable.size else None
            raise MemoryBudgetError(
                f"t={t:g} needs k={k} copies, above the ceiling k <= {kcap} "
                f"for d={sys.d}; maximal reachable t is "
                f"{'none' if max_t is None else f'{max_t:g}'}",
                max_reachable_t=max_t)
        windows.setdefault(k, []).append((s_star, idx))
    for k in windows:
        windows[k].sort()
    return times, windows


def _first_flow(L_first, delta, P):
    if L_first is None:                     # k == 1: nothing left after the switch
        return np.ones((1, 1), dtype=complex)
    if delta == 0:
        return np.eye(P, dtype=complex)
    return expm(L_first.toarray() * delta)


def simulate(sys: FeedbackSystem, rho0, times, method="expm") -> Trajectory:
    """Reduced dynamics of `sys` from rho0, sampled on `times`.

    Vacuum input is assumed and the system starts uncorrelated with the loop
    field.  Samples inside one window share the incremental evolution of the
    contraction block; the post-switch flow runs one copy short and is
    recomputed per sample.
    """
    rho0 = validate_state(rho0, sys.d, "rho0")
    times, windows = _plan(sys, times)
    d = sys.d
    n = len(times)
    states = [None] * n
    k_used = np.zeros(n, dtype=int)

    chain_cache = {}

    def chain(k):
        if k not in chain_cache:
            chain_cache[k] = chain_liouvillian(sys, k)
        return chain_cache[k]

    for k in sorted(windows):
        L_full = chain(k)
        L_first = chain(k - 1) if k > 1 else None
        D = d ** (2 * k)
        P = d ** (2 * (k - 1))
        check_budget(16 * D * P * 3, f"window k={k} contraction block")
        M = chain_input_block(rho0, k, d)
        dense_steps = {} if D <= _DENSE_STEP_DIM else None
        first_cache = {}
        s_prev = 0.0
        for s_star, idx in windows[k]:
            delta = s_star - s_prev
            if delta > 0:
                if dense_steps is not None:
                    key = round(delta / sys.tau, 12)
                    if key not in dense_steps:
                        dense_steps[key] = flow(L_full, delta, method=method)
                    M = dense_steps[key] @ M
                else:
                    M = apply_flow(L_full, delta, M)
                s_prev = s_star
            rem = sys.tau - s_star
            key = round(rem / sys.tau, 12)
            if key not in first_cache:
                first_cache[key] = _first_flow(L_first, rem, P)
            states[idx] = reduced_contract(first_cache[key], M, k, d)
            k_used[idx] = k

    states = np.asarray(states)
    obs = {}
    tr_err = np.empty(n)
    min_eig = np.empty(n)
    for i in range(n):
        rho = states[i]
        tr_err[i] = abs(np.trace(rho).real - 1.0) + abs(np.trace(rho).imag)
        min_eig[i] = np.linalg.eigvalsh(0.5 * (rho + rho.conj().T)).min()
        _record_observables(obs, d, rho)
    obs = {name: np.asarray(v) for name, v in obs.items()}
    diags = {"trace_err": tr_err, "min_eig": min_eig,
             "k_used": k_used, "max_k": int(k_used.max())}
    if d > 2 and np.any(obs["top_level_pop"] > _TOP_LEVEL_TOL):
        diags["truncation_flag"] = True
        warnings.warn(
            f"top Fock level population exceeds {_TOP_LEVEL_TOL:g}; "
            "raise the cutoff", RuntimeWarning)
    return Trajectory(times=times, states=states, observables=obs, diagnostics=diags)


def no_feedback_reference(sys: FeedbackSystem, rho0, times) -> Trajectory:
    """Single-copy Lindblad evolution with both taps decaying independently.

    With a1 == a2 this is plain decay at the summed rate kappa1 + kappa2: the
    standard comparison curve for a loop that has been cut open.
    """
    from .operators import dissipator_super, ham_super
    rho0 = validate_state(rho0, sys.d, "rho0")
    times = np.asarray(times, dtype=float)
    L = (-1j * ham_super(sys.h_s)
         + sys.kappa1 * dissipator_super(sys.a1)
         + sys.kappa2 * dissipator_super(sys.a2))
    d = sys.d
    states = []
    v = rho0.reshape(-1, order="F").astype(complex)
    t_prev = 0.0
    step_cache = {}
    for t in times:
        dt = t - t_prev
        if dt < 0:
            raise ValueError("times must be ascending")
        if dt > 0:
            key = round(dt, 15)
            if key not in step_cache:
                step_cache[key] = flow(L, dt)
            v = step_cache[key] @ v
            t_prev = t
        states.append(v.reshape(d, d, order="F"))
    states = np.asarray(states)
    obs = {}
    tr_err = np.empty(len(times))
    min_eig = np.empty(len(times))
    for i, rho in enumerate(states):
        tr_err[i] = abs(np.trace(rho) - 1.0)
        min_eig[i] = np.linalg.eigvalsh(0.5 * (rho + rho.conj().T)).min()
        _record_observables(obs, d, rho)
    obs = {name: np.asarray(v) for name, v in obs.items()}
    return Trajectory(times=times, states=states, observables=obs,
                      diagnostics={"trace_err": tr_err, "min_eig": min_eig,
                                   "k_used": np.ones(len(times), dtype=int), "max_k": 1})


def _state_at(sys, rho0, t, k_override=None, method="expm"):
    """Single-sample evaluation, optionally with extra inert copies.

    Test hook: with k_override > the natural copy count the additional copies
    carry zeroed operators throughout the window and must not change the
    result.
    """
    from .cascade import _chain_liouvillian_inactive
    rho0 = validate_state(rho0, sys.d, "rho0")
    k_nat, s_star = _window_of(t, sys.tau)
    k = k_nat if k_override is None else k_override
    if k < k_nat:
        raise ValueError("k_override may only add copies")
    extra = frozenset(range(k_nat + 1, k + 1))
    LA = _chain_liouvillian_inactive(sys, k, extra)
    LB = _chain_liouvillian_inactive(sys, k, extra | {k_nat})
    M = chain_input_block(rho0, k, sys.d)
    M = apply_flow(LA, s_star, M)
    M = apply_flow(LB, sys.tau - s_star, M)
    return chain_extract_state(M, k, sys.d)
