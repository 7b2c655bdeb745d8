import numpy as np
import pytest

from delayloop import TwoLevelParams, build_generator, evolve_propagator, two_level
from delayloop.models import excited_state
from delayloop.operators import dissipator_super, ham_super, unvec, vec
from delayloop.propagator import (FlowError, MemoryBudgetError, apply_flow,
                                  flow, max_full_dim)

SZ = np.diag([1.0, -1.0]).astype(complex)


def random_lindblad(rng, d):
    h = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    h = h + h.conj().T
    L = -1j * ham_super(h)
    for _ in range(2):
        c = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
        L = L + dissipator_super(c)
    return L.tocsr()


def random_state(rng, n):
    x = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    rho = x @ x.conj().T
    return rho / np.trace(rho)


class TestFlow:
    def test_zero_duration_is_identity(self):
        rng = np.random.default_rng(1)
        L = random_lindblad(rng, 2)
        assert np.allclose(flow(L, 0.0), np.eye(4))

    def test_zero_generator(self):
        from scipy import sparse
        L = sparse.csr_matrix((4, 4), dtype=complex)
        for method in ("expm", "rk4"):
            assert np.allclose(flow(L, 2.7, method=method), np.eye(4))

    def test_unitary_rotation_by_hand(self):
        # flow of -i[sz, .] is conjugation by exp(-i sz t):
        # sx -> cos(2t) sx + sin(2t) sy, derived from e^{-i sz t} acting on 2x2
        sx = np.array([[0, 1], [1, 0]], dtype=complex)
        sy = np.array([[0, -1j], [1j, 0]], dtype=complex)
        L = -1j * ham_super(SZ)
        for t in (np.pi / 4, np.pi / 2, 0.3):
            E = flow(L, t)
            out = unvec(E @ vec(sx), 2)
            expected = np.cos(2 * t) * sx + np.sin(2 * t) * sy
            assert np.allclose(out, expected, atol=1e-10)

    def test_rk4_matches_expm_random_16(self):
        rng = np.random.default_rng(2)
        L = random_lindblad(rng, 4)  # 16x16 trace-annihilating generator
        a = flow(L, 1.0, method="expm")
        b = flow(L, 1.0, method="rk4")
        assert np.max(np.abs(a - b)) < 1e-8

    def test_rk4_matches_expm_cascade_k2(self):
        sys_ = two_level(TwoLevelParams(drive=0.5, tau=1.0))
        gen = build_generator(sys_, 1.3)
        for L in (gen.L_full, gen.L_reduced):
            a = flow(L, 0.7, method="expm")
            b = flow(L, 0.7, method="rk4")
            assert np.max(np.abs(a - b)) < 1e-8

    def test_rk4_fourth_order(self):
        # halving the step must shrink the error ~16x against the expm reference
        rng = np.random.default_rng(3)
        L = random_lindblad(rng, 3).toarray()
        ref = flow(L, 1.0, method="expm")

        def rk4_fixed(steps):
            h = 1.0 / steps
            E = np.eye(L.shape[0], dtype=complex)
            for _ in range(steps):
                k1 = L @ E
                k2 = L @ (E + 0.5 * h * k1)
                k3 = L @ (E + 0.5 * h * k2)
                k4 = L @ (E + h * k3)
                E = E + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            return E

        e1 = np.max(np.abs(rk4_fixed(40) - ref))
        e2 = np.max(np.abs(rk4_fixed(80) - ref))
        order = np.log2(e1 / e2)
        assert 3.7 < order < 4.3

    def test_semigroup_property(self):
        sys_ = two_level(TwoLevelParams(drive=0.8, tau=1.0))
        gen = build_generator(sys_, 1.2)
        a = flow(gen.L_full, 0.9)
        b = flow(gen.L_full, 0.6) @ flow(gen.L_full, 0.3)
        assert np.max(np.abs(a - b)) < 1e-8

    def test_negative_duration_rejected(self):
        with pytest.raises(ValueError):
            flow(np.zeros((4, 4)), -1.0)

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_non_finite_detected(self):
        L = np.array([[1e8]], dtype=complex)  # overflows exp at long duration
        with pytest.raises((FlowError, OverflowError)):
            flow(L, 1e4, method="expm")


class TestApplyFlow:
    def test_matches_dense_flow(self):
        rng = np.random.default_rng(4)
        L = random_lindblad(rng, 3)
        block = rng.standard_normal((9, 5)) + 1j * rng.standard_normal((9, 5))
        a = apply_flow(L, 0.8, block)
        b = flow(L, 0.8) @ block
        assert np.max(np.abs(a - b)) < 1e-10

    def test_zero_duration_copies(self):
        rng = np.random.default_rng(5)
        L = random_lindblad(rng, 2)
        block = rng.standard_normal((4, 2)).astype(complex)
        out = apply_flow(L, 0.0, block)
        assert np.array_equal(out, block)
        assert out is not block


class TestEvolvePropagator:
    def test_identity_at_t0(self):
        sys_ = two_level(TwoLevelParams(tau=1.0))
        gen = build_generator(sys_, 0.0)
        # s* = 0 and L_reduced = 0 for k=1: the map is the identity
        E = evolve_propagator(gen)
        assert np.allclose(E.entries, np.eye(4))

    def test_k1_amplitude_decay(self):
        sys_ = two_level(TwoLevelParams(drive=0.0, tau=1.0))
        for t in (0.3, 0.7):
            gen = build_generator(sys_, t)
            E = evolve_propagator(gen)
            rho = unvec(E.entries @ vec(excited_state()), 2)
            assert abs(rho[1, 1] - np.exp(-2 * t)) < 1e-10

    def test_trace_and_hermiticity_preserving(self):
        rng = np.random.default_rng(6)
        sys_ = two_level(TwoLevelParams(drive=0.9, tau=1.0))
        gen = build_generator(sys_, 1.4)
        E = evolve_propagator(gen)
        for _ in range(4):
            rho = random_state(rng, 4)
            out = unvec(E.entries @ vec(rho), 4)
            assert abs(np.trace(out) - 1.0) < 1e-8
            assert np.max(np.abs(out - out.conj().T)) < 1e-8

    def test_degenerate_switch_leaves_last_copy_marginal(self):
        # s* = 0: the whole evolution runs under the reduced generator and the
        # newest copy's marginal stays untouched
        sys_ = two_level(TwoLevelParams(drive=0.7, tau=1.0))
        gen = build_generator(sys_, 1.0)   # k=2, s*=0
        assert gen.k == 2 and gen.s_star == 0.0
        E = evolve_propagator(gen)
        rng = np.random.default_rng(7)
        rho2 = random_state(rng, 2)
        joint = np.kron(random_state(rng, 2), rho2)
        out = unvec(E.entries @ vec(joint), 4)
        marginal = np.einsum("arbr->ab", out.reshape(2, 2, 2, 2))
        marginal_in = np.einsum("arbr->ab", joint.reshape(2, 2, 2, 2))
        # trace over copy 1 of a product state: marginal of copy 2 is inert
        assert np.allclose(
            np.einsum("rarb->ab", out.reshape(2, 2, 2, 2)),
            np.einsum("rarb->ab", joint.reshape(2, 2, 2, 2)), atol=1e-10)

    def test_choi_positivity_k1(self):
        sys_ = two_level(TwoLevelParams(drive=0.6, tau=1.0))
        gen = build_generator(sys_, 0.5)
        E = evolve_propagator(gen).entries
        basis = [np.zeros((2, 2), dtype=complex) for _ in range(4)]
        choi = np.zeros((4, 4), dtype=complex)
        for i in range(2):
            for j in range(2):
                e = np.zeros((2, 2), dtype=complex)
                e[i, j] = 1.0
                choi += np.kron(e, unvec(E @ vec(e), 2))
        assert np.linalg.eigvalsh(0.5 * (choi + choi.conj().T)).min() > -1e-8

    def test_memory_ceiling(self, monkeypatch):
        monkeypatch.delenv("DELAYLOOP_MEM_BUDGET_MB", raising=False)
        assert max_full_dim() == 4096
        sys_ = two_level(TwoLevelParams(tau=1.0))
        gen = build_generator(sys_, 6.5)   # k=7 -> dimension 16384
        with pytest.raises(MemoryBudgetError):
            evolve_propagator(gen)

    def test_budget_env_override(self, monkeypatch):
        monkeypatch.setenv("DELAYLOOP_MEM_BUDGET_MB", "16")
        # 16 MiB allows dense dimensions up to sqrt(16 MiB / 16 B) = 1024
        assert max_full_dim() == 1024
        sys_ = two_level(TwoLevelParams(tau=1.0))
        gen = build_generator(sys_, 5.5)   # k=6 -> dimension 4096
        with pytest.raises(MemoryBudgetError):
            evolve_propagator(gen)

    def test_tiny_budget_blocks_collision(self, monkeypatch):
        import numpy as np
        from delayloop import collision_model
        monkeypatch.setenv("DELAYLOOP_MEM_BUDGET_MB", "0.05")
        sys_ = two_level(TwoLevelParams(tau=1.0))
        with pytest.raises(MemoryBudgetError):
            collision_model(sys_, excited_state(), 1.0 / 32, 2,
                            np.array([0.5]))
