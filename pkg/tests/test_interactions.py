import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gibbslab.interactions import (InteractionError, Term, explicit, hamiltonian_bc,
                                   hamiltonian_free, ising, kac, long_range, moebius_invert,
                                   partial_sums, pattern_index, potential_from_text,
                                   potential_to_text, sullivan, uac_norm_at_site,
                                   vacuum_from_specification)
from gibbslab.kernels import build_kernel, kernel_provider
from gibbslab.lattice import (BoundaryCondition, Configuration, Volume, make_box, make_grid)


def brute_ising_energy(config, J, h, boundary=None):
    """Independent H(sigma|omega) for the nearest-neighbour model."""
    spins = dict(zip(config.volume.sites, config.spins))
    total = -h * sum(config.spins)
    seen = set()
    for s in spins:
        for axis in range(len(s)):
            for step in (-1, 1):
                t = tuple(c + (step if k == axis else 0) for k, c in enumerate(s))
                pair = tuple(sorted((s, t)))
                if pair in seen:
                    continue
                if t in spins:
                    total += -J * spins[s] * spins[t]
                elif boundary is not None and boundary.spin_at(t) is not None:
                    total += -J * spins[s] * boundary.spin_at(t)
                seen.add(pair)
    return total


def test_pattern_index():
    assert pattern_index([-1, -1]) == 0
    assert pattern_index([1, -1]) == 2
    assert pattern_index([1, 1, 1]) == 7


def test_term_validation():
    with pytest.raises(InteractionError):
        Term(((1,), (0,)), (0, 0, 0, 0))
    with pytest.raises(InteractionError):
        Term(((0,),), (1.0,))


@settings(max_examples=50)
@given(st.integers(0, 2 ** 9 - 1), st.floats(-2, 2), st.floats(-1, 1),
       st.sampled_from(["free", "plus", "minus", "alternating"]))
def test_ising_hamiltonian_matches_brute_force(index, J, h, bc_name):
    config = Configuration.from_index(make_box(1, 2), index)
    bc = BoundaryCondition.from_name(bc_name)
    got = hamiltonian_bc(ising(J, h), config, bc)
    want = brute_ising_energy(config, J, h, None if bc.is_free else bc)
    assert got == pytest.approx(want, abs=1e-12)


def test_free_hamiltonian_small_chain():
    c = Configuration(make_box(1, 1), (1, 1, -1))
    assert hamiltonian_free(ising(1.0, 0.0, 1), c) == pytest.approx(0.0)
    assert hamiltonian_free(ising(1.0, 0.5, 1), c) == pytest.approx(-0.5)


def test_periodic_hamiltonian_ring():
    vol = make_grid((4,))
    c = Configuration(vol, (1, -1, 1, -1))
    # four bonds on the ring, all broken
    assert hamiltonian_bc(ising(1.0, 0.0, 1), c, BoundaryCondition.periodic()) == pytest.approx(4.0)


def test_range_too_wide_for_shell():
    pot = long_range(2.5, 3, dim=1)
    c = Configuration.uniform(make_box(1, 1), 1)
    bc = BoundaryCondition.explicit({(2,): 1, (-2,): 1})
    with pytest.raises(InteractionError):
        hamiltonian_bc(pot, c, bc)


def test_long_range_rejects_non_summable():
    with pytest.raises(InteractionError):
        long_range(1.0, dim=1)
    with pytest.raises(InteractionError):
        long_range(2.0, dim=2)
    pot = long_range(2.0, 4, J=1.0, dim=1)
    assert uac_norm_at_site(pot, (0,)) == pytest.approx(2 * sum(1 / k ** 2 for k in range(1, 5)))


def test_sullivan_norm_grows_like_log():
    norms = [uac_norm_at_site(sullivan(c), (0,)) for c in (4, 8, 16)]
    # each run of length n contributes n translates with sup 1/n^2
    assert norms[0] == pytest.approx(sum(1 / n for n in range(1, 5)))
    assert norms[2] - norms[1] == pytest.approx(sum(1 / n for n in range(9, 17)))


def test_kac_scaling():
    pot = kac(0.5, lambda x: math.exp(-x), 3, dim=1)
    assert uac_norm_at_site(pot, (0,)) == pytest.approx(2 * 0.5 * sum(math.exp(-0.5 * k) for k in (1, 2, 3)))
    with pytest.raises(InteractionError):
        kac(0.0, lambda x: 1.0, 3)


def test_text_roundtrip():
    text = "2 0 0 0 1 -1 1 1 -1\n1 0 0 0.25 -0.25\n"
    pot = potential_from_text(text, 2)
    again = potential_from_text(potential_to_text(pot), 2)
    assert [t.table for t in again.terms] == [t.table for t in pot.terms]
    with pytest.raises(InteractionError):
        potential_from_text("2 0 0 1\n", 2)
    with pytest.raises(InteractionError):
        potential_from_text("2 1 0 0 0 1 1 1 1\n", 2)


@settings(max_examples=30)
@given(st.lists(st.floats(-5, 5), min_size=8, max_size=8))
def test_moebius_roundtrip(values):
    ground = [(0,), (1,), (2,)]
    subsets = [frozenset(c) for k in range(4) for c in itertools.combinations(ground, k)]
    H = dict(zip(subsets, values))
    phi = moebius_invert(H)
    back = partial_sums(phi)
    for k in H:
        assert back[k] == pytest.approx(H[k], abs=1e-10)


def test_moebius_example():
    a, b = frozenset({(0,)}), frozenset({(1,)})
    H = {frozenset(): 1.0, a: 3.0, b: 4.0, a | b: 10.0}
    phi = moebius_invert(H)
    assert phi[a | b] == pytest.approx(10 - 3 - 4 + 1)
    with pytest.raises(InteractionError):
        moebius_invert({a: 1.0, a | b: 2.0})


def _vacuum_holds(pot):
    # a term may be non-zero only when no spin sits at the vacuum (+) value
    return max((abs(v) for t in pot.terms for k, v in enumerate(t.table) if k != 0), default=0.0)


def test_vacuum_ising_recovers_couplings():
    beta, J, h = 0.7, 1.0, 0.3
    vol = make_box(1, 2)
    vac = vacuum_from_specification(kernel_provider(ising(J, h), beta), vol, max_term_size=3)
    assert _vacuum_holds(vac.base) < 1e-12
    pair = vac.term([(0, 0), (0, 1)])
    # the all-minus entry of a pair term is -4 beta J for the plus vacuum
    assert pair.table[0] == pytest.approx(-4 * beta * J, abs=1e-10)
    assert vac.term([(0, 0)]).table[0] == pytest.approx(beta * (8 * J + 2 * h), abs=1e-10)
    triple = vac.term([(0, 0), (0, 1), (1, 1)])
    assert max(abs(v) for v in triple.table) < 1e-10


def _three_body():
    terms = [Term(((0,), (1,), (2,)), (0.3, -0.2, 0.5, 0.1, -0.4, 0.2, 0.0, 0.7)),
             Term(((1,), (3,)), (0.5, -0.5, -0.5, 0.5)),
             Term(((2,),), (0.2, -0.1))]
    return explicit(terms, 1)


def test_vacuum_regenerates_kernels_exhaustively():
    pot = _three_body()
    vol = make_grid((4,))
    vac = vacuum_from_specification(kernel_provider(pot, 0.9), vol, max_term_size=3)
    assert _vacuum_holds(vac.base) < 1e-12
    worst = 0.0
    for sub in (Volume(((1,),)), Volume(((0,), (2,))), Volume(((1,), (2,), (3,))), vol):
        rest = [s for s in vol.sites if s not in sub]
        for eta in itertools.product((-1, 1), repeat=len(rest)):
            bc = BoundaryCondition.explicit(dict(zip(rest, eta)), base=BoundaryCondition.plus())
            a = build_kernel(pot, sub, 0.9, bc).probs
            b = build_kernel(vac.base, sub, 1.0, bc).probs
            worst = max(worst, float(np.abs(a - b).max()))
    assert worst <= 1e-10


def test_vacuum_caps():
    gamma = kernel_provider(ising(), 0.5)
    with pytest.raises(InteractionError):
        vacuum_from_specification(gamma, make_grid((4, 4)), max_term_size=None)
    with pytest.raises(InteractionError):
        vacuum_from_specification(gamma, make_grid((9, 9)), max_term_size=4)
