"""Independent reference solvers used to validate the cascade engine.

Three routes that share no code with the engine:

* a scalar delay ODE for the undriven single-excitation amplitude,
* the same delay ODE for the mean field of a linear cavity,
* a brute-force time-bin collision model of the loop field, truncated to a
  small total photon number in the live window.
"""

import warnings

import numpy as np
from scipy.linalg import expm

from .cascade import FeedbackSystem
from .propagator import MemoryBudgetError, memory_budget_bytes
from .sim import Trajectory, _record_observables

_DDE_NODES = 2048          # method-of-steps nodes per delay interval
_SINGLE_PREC_DIM = 8192    # joint dimension above which the window state drops
                           # to complex64 to stay inside the memory budget


def _hermite(y0, f0, y1, f1, h, theta):
    """Cubic Hermite value at fraction theta of an interval of width h."""
    t2 = theta * theta
    t3 = t2 * theta
    return (y0 * (2 * t3 - 3 * t2 + 1) + h * f0 * (t3 - 2 * t2 + theta)
            + y1 * (3 * t2 - 2 * t3) + h * f1 * (t3 - t2))


class _DelaySolution:
    """Stored segments (values and derivatives) of a scalar linear delay ODE."""

    def __init__(self, tau, nodes):
        self.tau = tau
        self.n = nodes
        self.h = tau / nodes
        self.y = []     # per segment: nodes+1 values
        self.f = []     # per segment: nodes+1 derivatives

    def eval(self, t):
        if t <= 0:
            return self.y[0][0]
        m = min(int(t / self.tau), len(self.y) - 1)
        x = t - m * self.tau
        if x > self.tau and m + 1 < len(self.y):
            m += 1
            x -= self.tau
        x = min(max(x, 0.0), self.tau)
        j = min(int(x / self.h), self.n - 1)
        theta = x / self.h - j
        return _hermite(self.y[m][j], self.f[m][j],
                        self.y[m][j + 1], self.f[m][j + 1], self.h, theta)


def _linear_delay_ode(lam, mu, tau, y0, t_max, nodes=_DDE_NODES):
    """Integrate y' = lam y + mu theta(t - tau) y(t - tau) by method of steps.

    Classical RK4 inside each delay interval; the delayed value is cubic
    Hermite interpolation on the stored previous interval, which matches the
    integrator's order.
    """
    sol = _DelaySolution(tau, nodes)
    n_seg = max(1, int(np.ceil(t_max / tau - 1e-12)))
    h = sol.h
    for m in range(n_seg):
        y = np.empty(nodes + 1, dtype=complex)
        f = np.empty(nodes + 1, dtype=complex)
        y[0] = y0 if m == 0 else sol.y[m - 1][-1]

        if m == 0:
            def delayed(x):
                return 0.0
        else:
            yp, fp = sol.y[m - 1], sol.f[m - 1]

            def delayed(x):
                j = min(int(x / h), nodes - 1)
                theta = x / h - j
                return _hermite(yp[j], fp[j], yp[j + 1], fp[j + 1], h, theta)

        def rhs(x, yv):
            return lam * yv + mu * delayed(x)

        f[0] = rhs(0.0, y[0])
        for j in range(nodes):
            x = j * h
            k1 = f[j]
            k2 = rhs(x + 0.5 * h, y[j] + 0.5 * h * k1)
            k3 = rhs(x + 0.5 * h, y[j] + 0.5 * h * k2)
            k4 = rhs(x + h, y[j] + h * k3)
            y[j + 1] = y[j] + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            f[j + 1] = rhs((j + 1) * h, y[j + 1])
        sol.y.append(y)
        sol.f.append(f)
    return sol


def dde_single_excitation(kappa1, kappa2, phi, tau, times, c0=1.0,
                          nodes_per_delay=_DDE_NODES):
    """Excited population of the undriven atom from the amplitude delay ODE.

    With no drive the excitation number is conserved, so the state stays in
    the span of |e, vacuum> and one-photon states and the amplitude obeys
    c' = -(k1+k2)/2 c - sqrt(k1 k2) e^{i phi} theta(t-tau) c(t-tau).
    Returns |c(t)|^2 on the requested grid.
    """
    times = np.asarray(times, dtype=float)
    lam = -0.5 * (kappa1 + kappa2)
    mu = -np.sqrt(kappa1 * kappa2) * np.exp(1j * phi)
    sol = _linear_delay_ode(lam, mu, tau, complex(c0), float(times.max()),
                            nodes_per_delay)
    c = np.array([sol.eval(t) for t in times])
    return np.abs(c) ** 2


def mean_field_cavity_dde(delta, kappa1, kappa2, phi, tau, alpha0, times,
                          nodes_per_delay=_DDE_NODES):
    """Mean field <a>(t) of a linear cavity in the loop, vacuum input.

    The Heisenberg equation closes on <a> for a quadratic Hamiltonian:
    <a>' = (-i delta - (k1+k2)/2) <a> - sqrt(k1 k2) e^{i phi} <a>(t-tau).
    """
    times = np.asarray(times, dtype=float)
    lam = -1j * delta - 0.5 * (kappa1 + kappa2)
    mu = -np.sqrt(kappa1 * kappa2) * np.exp(1j * phi)
    sol = _linear_delay_ode(lam, mu, tau, complex(alpha0), float(times.max()),
                            nodes_per_delay)
    return np.array([sol.eval(t) for t in times])


# ---------------------------------------------------------------------------
# time-bin collision model


def _pair_table(w):
    """Index table for unordered slot pairs (i <= j), offset by 1 + w."""
    base = 1 + w
    table = np.zeros((w, w), dtype=np.int64)
    c = base
    for i in range(w):
        for j in range(i, w):
            table[i, j] = table[j, i] = c
            c += 1
    return table, c


def _local_configs(cap):
    order = [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]
    return [cfg for cfg in order if sum(cfg) <= cap]


def _local_unitaries(sys, dt, n_max):
    """Step unitaries on (system, entering bin, leaving bin), per spectator count.

    The joint generator is projected onto the subspace with at most
    n_max - m photons on the two active bins when m photons sit elsewhere in
    the window, then exponentiated; this is the global truncation restricted
    to one spectator sector.  Each unitary is returned with the bare system
    rotation factored out.
    """
    d = sys.d
    lv = n_max + 1
    b = np.zeros((lv, lv), dtype=complex)
    for m in range(1, lv):
        b[m - 1, m] = np.sqrt(m)
    bd = b.conj().T
    eye_l = np.eye(lv)
    eye_s = np.eye(d)

    def k3(x, y, z):
        return np.kron(np.kron(x, y), z)

    g = (-1j * dt * k3(sys.h_s, eye_l, eye_l)
         + np.sqrt(sys.kappa1 * dt) * (k3(sys.a1, bd, eye_l) - k3(sys.a1.conj().T, b, eye_l))
         + np.sqrt(sys.kappa2 * dt) * (np.exp(1j * sys.phi) * k3(sys.a2, eye_l, bd)
                                       - np.exp(-1j * sys.phi) * k3(sys.a2.conj().T, eye_l, b)))
    u_sys = expm(-1j * dt * sys.h_s)

    fixups = {}
    for m in range(n_max):          # spectator counts with nontrivial local action
        cap = n_max - m
        cfgs = _local_configs(cap)
        sel = np.array([s * lv * lv + na * lv + nb
                        for s in range(d) for (na, nb) in cfgs])
        u_loc = expm(g[np.ix_(sel, sel)])
        fixups[m] = u_loc @ np.kron(u_sys.conj().T, np.eye(len(cfgs)))
    return u_sys, fixups


def collision_model(sys: FeedbackSystem, rho0, dt_bin, n_max, times,
                    convergence_tol=None) -> Trajectory:
    """Brute-force loop-field discretization into interacting time bins.

    The field is sliced into bins of width dt = tau / round(tau/dt_bin); per
    step one fresh vacuum bin couples at the loop entry while the bin that
    entered a full delay earlier couples at the exit (with the loop phase),
    both inside a single step unitary.  A bin that has passed the exit never
    interacts again and is traced out immediately; its slot is recycled.
    States are truncated to at most n_max photons in the live window, the
    brute-force analogue of a small-total-photon-number mode truncation.
    First-order accurate in dt.
    """
    if n_max not in (1, 2):
        raise ValueError("n_max must be 1 or 2 at desk scale")
    times = np.asarray(times, dtype=float)
    n_tau = int(round(sys.tau / dt_bin))
    if n_tau < 2:
        raise ValueError("dt_bin must resolve the delay into at least 2 bins")
    dt = sys.tau / n_tau
    w = n_tau + 1                      # live slots: in flight plus both taps
    d = sys.d

    idx1 = 1 + np.arange(w, dtype=np.int64)
    if n_max == 2:
        idx2, t_field = _pair_table(w)
    else:
        idx2, t_field = None, 1 + w
    photons = np.zeros(t_field, dtype=np.int64)
    photons[1:1 + w] = 1
    if n_max == 2:
        photons[1 + w:] = 2

    m_dim = d * t_field
    dtype = np.complex128 if m_dim <= _SINGLE_PREC_DIM else np.complex64
    need = m_dim * m_dim * np.dtype(dtype).itemsize
    if 1.3 * need > memory_budget_bytes():
        raise MemoryBudgetError(
            f"collision window state needs {need / 2**20:.0f} MiB "
            f"(joint dimension {m_dim}); over budget")

    u_sys, fixups = _local_unitaries(sys, dt, n_max)

    sigma = np.zeros((m_dim, m_dim), dtype=dtype)
    rho0 = np.asarray(rho0, dtype=complex)
    for s in range(d):
        for sp in range(d):
            sigma[s * t_field, sp * t_field] = rho0[s, sp]

    sys_rows = np.arange(d, dtype=np.int64)[:, None] * t_field

    def group_apply(rows, fmat):
        """sigma <- F sigma F+ restricted to the given global rows.

        Uses Hermiticity of sigma: the column block is the adjoint of the row
        block, so one gather serves both sides.
        """
        f = fmat.astype(dtype)
        g = f @ sigma[rows, :]
        g[:, rows] = g[:, rows] @ f.conj().T
        sigma[rows, :] = g
        sigma[:, rows] = g.conj().T

    steps_wanted = np.rint(times / dt).astype(int)
    if times.size > 1 and np.any(np.diff(steps_wanted) <= 0):
        raise ValueError("time grid is finer than the bin width")
    offset = float(np.max(np.abs(steps_wanted * dt - times)))
    if offset > 1e-9 * max(1.0, float(times.max())):
        warnings.warn(
            f"sample times snapped to the bin grid (worst offset {offset:.3g})",
            RuntimeWarning)
    times = steps_wanted * dt
    n_steps = int(steps_wanted.max())

    u_pow = np.eye(d, dtype=complex)       # u_sys ** n after n steps
    acc = 0.0                              # photons carried off by departed bins
    samples = {}

    def record(nstep):
        rho_frame = np.einsum("sftf->st", sigma.reshape(d, t_field, d, t_field))
        rho_sys = (u_pow @ rho_frame @ u_pow.conj().T).astype(complex)
        diag = np.real(np.diag(sigma))
        field_n = float(np.sum(photons * diag.reshape(d, t_field).sum(axis=0)))
        sys_n = float(np.sum(np.arange(d) * np.real(np.diag(rho_sys))))
        samples[nstep] = (rho_sys, sys_n + field_n + acc)

    if 0 in steps_wanted:
        record(0)

    for n in range(n_steps):
        a = (n - 1) % w                    # slot of the entering bin
        bslot = n % w                      # slot of the leaving bin
        u_next = u_pow @ u_sys

        if n_max == 2:
            cfg_a = np.array([0, idx1[a], idx1[bslot],
                              idx2[a, a], idx2[a, bslot], idx2[bslot, bslot]])
        else:
            cfg_a = np.array([0, idx1[a], idx1[bslot]])
        rows_a = (sys_rows + cfg_a[None, :]).ravel()
        nc = len(cfg_a)
        fa = np.kron(u_next.conj().T, np.eye(nc)) @ fixups[0] @ np.kron(u_next, np.eye(nc))
        group_apply(rows_a, fa)

        if n_max == 2 and w > 2:
            # one spectator photon at p: local action on (system, bin a, bin b)
            # capped at one photon, batched over p with sigma Hermitian
            p_list = np.array([p for p in range(w) if p != a and p != bslot])
            cfg_b = np.stack([idx1[p_list], idx2[p_list, a], idx2[p_list, bslot]])
            rows_b = (sys_rows[:, :, None] + cfg_b[None, :, :])     # (d, 3, P)
            fb = np.kron(u_next.conj().T, np.eye(3)) @ fixups[1] @ np.kron(u_next, np.eye(3))
            fb = fb.astype(dtype)
            npec = len(p_list)
            flat = rows_b.reshape(d * 3, npec).ravel()
            g3 = sigma[flat, :].reshape(d * 3, npec * sigma.shape[1])
            g3 = (fb @ g3).reshape(d * 3 * npec, sigma.shape[1])
            cols = g3[:, flat].reshape(d * 3 * npec, d * 3, npec)
            cols = np.einsum("mxp,yx->myp", cols, fb.conj())
            g3[:, flat] = cols.reshape(d * 3 * npec, d * 3 * npec)
            sigma[flat, :] = g3
            sigma[:, flat] = g3.conj().T

        # trace out the departed bin and recycle its slot as fresh vacuum
        if n_max == 2:
            others = np.array([p for p in range(w) if p != bslot])
            x1 = np.concatenate(([idx1[bslot]], idx2[bslot, others]))
            x1s = np.concatenate(([0], idx1[others]))
            x2 = np.array([idx2[bslot, bslot]])
            x2s = np.array([0])
        else:
            x1 = np.array([idx1[bslot]])
            x1s = np.array([0])
            x2 = x2s = None
        g1 = (sys_rows + x1[None, :]).ravel()
        g1s = (sys_rows + x1s[None, :]).ravel()
        acc += float(np.sum(np.real(sigma[g1, g1])))
        sigma[np.ix_(g1s, g1s)] += sigma[np.ix_(g1, g1)]
        dead = g1
        if x2 is not None:
            g2 = (sys_rows + x2[None, :]).ravel()
            g2s = (sys_rows + x2s[None, :]).ravel()
            acc += 2.0 * float(np.sum(np.real(sigma[g2, g2])))
            sigma[np.ix_(g2s, g2s)] += sigma[np.ix_(g2, g2)]
            dead = np.concatenate([g1, g2])
        sigma[dead, :] = 0
        sigma[:, dead] = 0

        u_pow = u_next
        if (n + 1) in steps_wanted:
            record(n + 1)

    order = [samples[s] for s in steps_wanted]
    states = np.asarray([rho for rho, _ in order])
    excitation = np.asarray([e for _, e in order])
    obs = {}
    tr_err = np.empty(len(times))
    min_eig = np.empty(len(times))
    for i, rho in enumerate(states):
        tr_err[i] = abs(np.trace(rho) - 1.0)
        min_eig[i] = np.linalg.eigvalsh(0.5 * (rho + rho.conj().T)).min()
        _record_observables(obs, d, rho)
    obs = {name: np.asarray(v) for name, v in obs.items()}
    traj = Trajectory(
        times=times, states=states, observables=obs,
        diagnostics={"trace_err": tr_err, "min_eig": min_eig,
                     "total_excitation": excitation,
                     "dt": dt, "n_bins": n_tau, "max_k": None})

    if convergence_tol is not None:
        finer = collision_model(sys, rho0, dt / 2, n_max, times)
        key = "P_e" if d == 2 else "n_phot"
        drift = float(np.max(np.abs(finer.observables[key] - obs[key])))
        if drift > convergence_tol:
            warnings.warn(
                f"collision model not converged: halving dt moves {key} "
                f"by {drift:.3g} > {convergence_tol:g}", RuntimeWarning)
        traj.diagnostics["halving_drift"] = drift
    return traj
