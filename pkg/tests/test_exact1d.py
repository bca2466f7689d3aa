import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gibbslab.exact1d import (ChainError, MarkovSpec, TransferMatrix, chain_cylinder_probs,
                              ising_markov_spec, log_matrix_power, markov_dlr_discrepancy,
                              markov_kernel, markov_kernel_table, markov_uniqueness_demo,
                              ring_log_z_enumeration, ring_log_z_trace, ring_pair_correlation,
                              tm_correlation_length, tm_free_energy, tm_magnetization,
                              tm_pair_correlation)


def test_free_energy_h0_closed_form():
    for beta in (0.1, 0.5, 1.0, 3.0):
        assert tm_free_energy(beta) == pytest.approx(math.log(2 * math.cosh(beta)), rel=1e-14)
    with pytest.raises(ChainError):
        tm_free_energy(-1.0)


def test_magnetization_h0_is_exactly_zero():
    for beta in (0.1, 1.0, 10.0):
        assert tm_magnetization(beta, 1.0, 0.0) == 0.0


def test_magnetization_matches_derivative():
    beta, J, h, eps = 0.8, 1.0, 0.3, 1e-6
    num = (tm_free_energy(beta, J, h + eps) - tm_free_energy(beta, J, h - eps)) / (2 * eps * beta)
    assert tm_magnetization(beta, J, h) == pytest.approx(num, abs=1e-8)
    assert tm_magnetization(1e3, 1.0, 1.0) == 1.0


def test_eigenvalues_match_numpy():
    tm = TransferMatrix(0.7, 1.2, -0.4)
    ev = np.sort(np.linalg.eigvalsh(tm.entries))[::-1]
    assert np.allclose(tm.eigenvalues(), ev, rtol=1e-13)


@pytest.mark.parametrize("N", [2, 5, 9, 16])
@pytest.mark.parametrize("beta,J,h", [(0.3, 1.0, 0.0), (1.0, 1.0, 0.2), (2.0, -0.5, 0.1)])
def test_ring_trace_matches_enumeration(N, beta, J, h):
    assert ring_log_z_trace(beta, J, h, N) == pytest.approx(
        ring_log_z_enumeration(beta, J, h, N), abs=1e-12)


def test_log_matrix_power_large_exponent():
    a = TransferMatrix(1.0, 1.0, 0.0).entries
    mat, scale = log_matrix_power(a, 1000)
    assert scale + math.log(np.trace(mat)) == pytest.approx(1000 * math.log(2 * math.cosh(1.0)))
    with pytest.raises(ChainError):
        log_matrix_power(a, -1)


@pytest.mark.parametrize("beta", [0.2, 0.5])
def test_ring_correlation_close_to_tanh(beta):
    for n in (1, 2, 3):
        assert ring_pair_correlation(beta, 1.0, 16, n) == pytest.approx(
            tm_pair_correlation(beta, 1.0, n), abs=1e-4)


@pytest.mark.parametrize("beta", [0.2, 1.0, 2.0])
def test_ring_correlation_exact(beta):
    # both ways round the ring contribute: (t^n + t^(N-n)) / (1 + t^N)
    t, N = math.tanh(beta), 12
    for n in range(N):
        want = (t ** n + t ** (N - n)) / (1 + t ** N)
        assert ring_pair_correlation(beta, 1.0, N, n) == pytest.approx(want, abs=1e-12)


def test_correlation_length():
    beta = 0.6
    assert tm_correlation_length(beta) == pytest.approx(-1 / math.log(math.tanh(beta)))
    # with a field the connected decay uses the eigenvalue ratio
    lam_p, lam_m = TransferMatrix(0.6, 1.0, 0.3).eigenvalues()
    assert tm_pair_correlation(0.6, 1.0, 2, 0.3) == pytest.approx(
        (1 - tm_magnetization(0.6, 1.0, 0.3) ** 2) * (lam_m / lam_p) ** 2)


def test_markov_spec_validation():
    with pytest.raises(ChainError):
        MarkovSpec(1.0, 0.5)
    with pytest.raises(ChainError):
        MarkovSpec.from_matrix([[0.5, 0.6], [0.5, 0.5]])
    s = MarkovSpec(0.8, 0.6)
    assert s.stationary @ s.matrix == pytest.approx(s.stationary)
    assert s.stationary.tolist() == pytest.approx([2 / 3, 1 / 3])


def test_ising_markov_spec_is_symmetric_at_h0():
    s = ising_markov_spec(0.5)
    p = math.exp(0.5) / (2 * math.cosh(0.5))
    assert s.p == pytest.approx(p) and s.q == pytest.approx(p)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.05, 0.95), st.floats(0.05, 0.95), st.integers(0, 3),
       st.sampled_from([(-1, -1), (-1, 1), (1, -1), (1, 1)]))
def test_markov_kernel_normalized(p, q, n, boundary):
    table = markov_kernel_table(MarkovSpec(p, q), n, boundary)
    assert table.sum() == pytest.approx(1.0, abs=1e-12)
    assert (table > 0).all()


def test_markov_kernel_single_site_value():
    s = MarkovSpec(0.8, 0.6)
    m = s.matrix
    want = m[0, 1] * m[1, 1] / (m @ m)[0, 1]
    assert markov_kernel(s, 0, (1,), (-1, 1)) == pytest.approx(want, rel=1e-14)
    with pytest.raises(ChainError):
        markov_kernel(s, 1, (1,), (-1, 1))


def test_cylinder_probs_sum_and_marginal():
    s = MarkovSpec(0.7, 0.4)
    p = chain_cylinder_probs(s, 6)
    assert p.sum() == pytest.approx(1.0, abs=1e-14)
    assert p.reshape(2, -1).sum(1) == pytest.approx(s.stationary)


@pytest.mark.parametrize("pq", [(0.8, 0.6), (0.3, 0.9), (0.5, 0.5)])
def test_markov_dlr(pq):
    for n in range(0, 5):
        assert markov_dlr_discrepancy(MarkovSpec(*pq), n) <= 1e-12


def test_uniqueness_bound_with_constant_from_n1():
    s = MarkovSpec(0.8, 0.6)
    lam = abs(s.second_eigenvalue)
    for x in (-1, 1):
        c = markov_uniqueness_demo(s, x, 1) / lam
        for n in range(1, 31):
            assert markov_uniqueness_demo(s, x, n) <= lam ** n * c * (1 + 1e-9) + 1e-15


@pytest.mark.parametrize("pq", [(0.9, 0.95), (0.2, 0.3), (0.7, 0.1)])
def test_uniqueness_geometric_rate(pq):
    # the n = 1 constant is not a bound for every chain, but the rate is |p + q - 1|
    s = MarkovSpec(*pq)
    lam = abs(s.second_eigenvalue)
    devs = [markov_uniqueness_demo(s, -1, n) for n in range(1, 60)]
    tail = [b / a for a, b in zip(devs, devs[1:]) if b > 1e-13]
    assert tail[-1] == pytest.approx(lam, rel=1e-3)


def test_bridge_to_ising_kernels():
    from gibbslab.interactions import ising
    from gibbslab.kernels import build_kernel
    from gibbslab.lattice import BoundaryCondition, make_box
    for beta in (0.3, 1.0):
        spec = ising_markov_spec(beta)
        for n in range(0, 5):
            for w in ((-1, -1), (-1, 1), (1, 1)):
                bc = BoundaryCondition.explicit({(-n - 1,): w[0], (n + 1,): w[1]})
                want = build_kernel(ising(1.0, 0.0, 1), make_box(n, 1), beta, bc).probs
                assert np.abs(markov_kernel_table(spec, n, w) - want).max() <= 1e-10
