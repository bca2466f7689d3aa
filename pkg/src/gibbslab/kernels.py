"""Exact finite-volume Gibbs kernels by enumeration.

The a priori single-spin measure is the normalized counting measure
(1/2)(delta_- + delta_+), so partition functions carry a 2^-|Lambda| factor.
Configurations of a volume are enumerated lexicographically: index bit
n-1-k is the spin of site k (0 for -1, 1 for +1).
"""
from __future__ import annotations

import io
import itertools
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional

import numpy as np
from scipy.special import logsumexp

from .constants import (ENUM_CHUNK, EXACT_TOL, MAX_CONSISTENCY_SITES,
                        MAX_EXHAUSTIVE_DEPENDENCE, MAX_KERNEL_SITES)
from .interactions import InteractionError, Potential, Term
from .lattice import (BoundaryCondition, Configuration, LatticeError, MissingBoundarySite,
                      Volume, make_box)

LN2 = math.log(2.0)


class KernelError(ValueError):
    pass


def spin_matrix(n: int, start: int = 0, stop: Optional[int] = None) -> np.ndarray:
    """Rows ``start..stop-1`` of the lexicographic enumeration of {-1,+1}^n."""
    stop = (1 << n) if stop is None else stop
    idx = np.arange(start, stop, dtype=np.int64)
    shifts = np.arange(n - 1, -1, -1, dtype=np.int64)
    bits = (idx[:, None] >> shifts[None, :]) & 1
    return (2 * bits - 1).astype(np.int8)


def config_indices(spins: np.ndarray) -> np.ndarray:
    n = spins.shape[1]
    weights = 1 << np.arange(n - 1, -1, -1, dtype=np.int64)
    return ((spins > 0).astype(np.int64) * weights).sum(1)


class EnergyEvaluator:
    """Vectorized H_Lambda(sigma | omega) over rows of a spin matrix.

    Terms are resolved once: exterior spins are folded into a constant part
    of each table index and terms touching a free exterior are dropped.
    """

    def __init__(self, pot: Potential, volume: Volume, boundary: BoundaryCondition,
                 terms: Optional[Iterable] = None):
        self.volume = volume
        col = {s: k for k, s in enumerate(volume.sites)}
        if terms is None:
            if boundary.kind == "periodic":
                terms = pot.terms_periodic(volume)
            else:
                terms = [(t.sites, t.table) for t in pot.terms_meeting(volume.sites)]
        groups = {}
        for sites, table in terms:
            k = len(sites)
            const = 0
            var = []
            skip = False
            for j, s in enumerate(sites):
                shift = k - 1 - j
                if s in col:
                    var.append((col[s], shift))
                    continue
                try:
                    v = boundary.spin_at(s)
                except MissingBoundarySite:
                    raise KernelError(f"boundary does not cover site {s} "
                                      "within the potential range") from None
                if v is None:
                    skip = True
                    break
                const |= (v > 0) << shift
            if skip or not var:
                continue
            key = (table, tuple(sh for _, sh in var))
            g = groups.setdefault(key, ([], []))
            g[0].append([c for c, _ in var])
            g[1].append(const)
        self._groups = [(np.asarray(table), np.asarray(shifts, dtype=np.int64),
                         np.asarray(cols, dtype=np.int64), np.asarray(consts, dtype=np.int64))
                        for (table, shifts), (cols, consts) in groups.items()]

    def __call__(self, spins: np.ndarray) -> np.ndarray:
        bits = (spins > 0).astype(np.int64)
        out = np.zeros(spins.shape[0])
        for table, shifts, cols, consts in self._groups:
            idx = np.broadcast_to(consts, (spins.shape[0], len(consts))).copy()
            for p, sh in enumerate(shifts):
                idx |= bits[:, cols[:, p]] << sh
            out += table[idx].sum(1)
        return out


@dataclass
class KernelTable:
    """Exact gamma_Lambda(. | omega) on all configurations of a volume."""

    volume: Volume
    boundary: BoundaryCondition
    beta: float
    energies: np.ndarray
    log_probs: np.ndarray
    log_z: float

    @property
    def probs(self) -> np.ndarray:
        return np.exp(self.log_probs)

    def __len__(self):
        return len(self.log_probs)

    def prob(self, config: Configuration) -> float:
        if config.volume != self.volume:
            config = config.restrict(self.volume)
        return float(np.exp(self.log_probs[config.to_index()]))

    def spins(self) -> np.ndarray:
        return spin_matrix(len(self.volume))

    def marginal(self, site) -> float:
        """Expected spin at ``site``."""
        k = self.volume.index(site)
        return float(self.probs @ self.spins()[:, k])

    def expectation(self, values: np.ndarray) -> float:
        return float(self.probs @ np.asarray(values, dtype=float))

    def nonnull_ratio(self) -> float:
        """Empirical min/max probability ratio (uniform non-nullness report)."""
        return float(np.exp(self.log_probs.min() - self.log_probs.max()))

    def to_csv(self) -> str:
        n = len(self.volume)
        buf = io.StringIO()
        buf.write("config_bits,probability\n")
        for idx, lp in enumerate(self.log_probs):
            buf.write(f"{idx:0{n}b},{math.exp(lp):.17g}\n")
        return buf.getvalue()


def _enumerated_energies(pot, volume, boundary) -> np.ndarray:
    n = len(volume)
    if n > MAX_KERNEL_SITES:
        raise KernelError(f"{n} sites exceed the enumeration cap of {MAX_KERNEL_SITES}")
    if n == 0:
        raise KernelError("empty volume")
    ev = EnergyEvaluator(pot, volume, boundary)
    total = 1 << n
    out = np.empty(total)
    for start in range(0, total, ENUM_CHUNK):
        stop = min(total, start + ENUM_CHUNK)
        out[start:stop] = ev(spin_matrix(n, start, stop))
    return out


def build_kernel(pot: Potential, volume: Volume, beta: float,
                 boundary: BoundaryCondition) -> KernelTable:
    """gamma(sigma|omega) = exp(-beta H(sigma|omega)) / sum_tau exp(-beta H(tau|omega))."""
    energies = _enumerated_energies(pot, volume, boundary)
    logw = -beta * energies
    lse = logsumexp(logw)
    log_z = float(lse - len(volume) * LN2)
    return KernelTable(volume, boundary, float(beta), energies, logw - lse, log_z)


def log_partition_function(pot: Potential, volume: Volume, beta: float,
                           boundary: BoundaryCondition) -> float:
    energies = _enumerated_energies(pot, volume, boundary)
    return float(logsumexp(-beta * energies) - len(volume) * LN2)


def partition_function(pot: Potential, volume: Volume, beta: float,
                       boundary: BoundaryCondition) -> float:
    """Z = 2^-|Lambda| sum_sigma exp(-beta H(sigma|omega)), accumulated in log space."""
    return math.exp(log_partition_function(pot, volume, beta, boundary))


def kernel_provider(pot: Potential, beta: float):
    """``(volume, boundary) -> KernelTable`` closure, for vacuum reconstruction."""
    def gamma(volume, boundary):
        return build_kernel(pot, volume, beta, boundary)
    return gamma


# -- DLR checks --------------------------------------------------------------

def _split(volume: Volume, sub: Volume):
    if not sub.issubset(volume):
        raise KernelError("sub-volume is not contained in the volume")
    inner = [volume.index(s) for s in sub.sites]
    outer = [k for k in range(len(volume)) if k not in set(inner)]
    return inner, outer


def _outer_blocks(pot, beta, volume, sub, boundary):
    """Yield (rows of the big table, sub-kernel log-probs) for each outside configuration."""
    if boundary.kind == "periodic":
        raise KernelError("consistency checks use fixed or free boundary conditions")
    inner, outer = _split(volume, sub)
    n = len(volume)
    spins = spin_matrix(n)
    idx_inner = config_indices(spins[:, inner])
    idx_outer = config_indices(spins[:, outer]) if outer else np.zeros(1 << n, dtype=np.int64)
    order = np.lexsort((idx_inner, idx_outer))
    rows = order.reshape(1 << len(outer), 1 << len(inner))
    outer_sites = [volume.sites[k] for k in outer]
    for eta_idx in range(rows.shape[0]):
        r = rows[eta_idx]
        eta = spins[r[0], outer]
        bc = BoundaryCondition.explicit(dict(zip(outer_sites, eta.tolist())), base=boundary)
        sub_table = build_kernel(pot, sub, beta, bc)
        yield r, sub_table.log_probs


def check_consistency(pot: Potential, beta: float, volume: Volume, sub: Volume,
                      boundary: BoundaryCondition) -> float:
    """max over sigma of |(gamma_Lambda gamma_Lambda')(sigma|omega) - gamma_Lambda(sigma|omega)|."""
    if len(volume) > MAX_CONSISTENCY_SITES:
        raise KernelError(f"consistency check limited to {MAX_CONSISTENCY_SITES} sites")
    big = build_kernel(pot, volume, beta, boundary).probs
    worst = 0.0
    for rows, sub_logp in _outer_blocks(pot, beta, volume, sub, boundary):
        # mass of the outside configuration under gamma_Lambda, redistributed by gamma_Lambda'
        composed = big[rows].sum() * np.exp(sub_logp)
        worst = max(worst, float(np.abs(composed - big[rows]).max()))
    return worst


def key_density_check(pot: Potential, beta: float, volume: Volume, sub: Volume,
                      boundary: BoundaryCondition, pairs: Optional[Iterable] = None) -> float:
    """max |f_Lambda'(w') f_Lambda(w) - f_Lambda'(w) f_Lambda(w')| over pairs agreeing off Lambda'.

    Densities are kernel values at the concatenated configuration.  Without
    ``pairs`` every pair of configurations of ``volume`` that agree outside
    ``sub`` is tested.
    """
    if len(volume) > MAX_CONSISTENCY_SITES:
        raise KernelError(f"key-density check limited to {MAX_CONSISTENCY_SITES} sites")
    big = build_kernel(pot, volume, beta, boundary).probs
    inner, outer = _split(volume, sub)
    if pairs is not None:
        pairs = list(pairs)
        for w, w2 in pairs:
            if any(w.spins[k] != w2.spins[k] for k in outer):
                raise KernelError("configurations differ outside the sub-volume")
    worst = 0.0
    wanted = None if pairs is None else {(w.to_index(), w2.to_index()) for w, w2 in pairs}
    for rows, sub_logp in _outer_blocks(pot, beta, volume, sub, boundary):
        f_big = big[rows]
        f_sub = np.exp(sub_logp)
        cross = np.abs(f_sub[None, :] * f_big[:, None] - f_sub[:, None] * f_big[None, :])
        if wanted is None:
            worst = max(worst, float(cross.max()))
            continue
        pos = {int(r): j for j, r in enumerate(rows)}
        for a, b in wanted:
            if a in pos and b in pos:
                worst = max(worst, float(cross[pos[a], pos[b]]))
    return worst


def check_properness(pot: Potential, beta: float, volume: Volume, boundary: BoundaryCondition,
                     event: Mapping) -> bool:
    """gamma_Lambda(B|omega) == 1_B(omega) for a cylinder B on exterior sites."""
    event = {tuple(s): int(v) for s, v in dict(event).items()}
    if any(s in volume for s in event):
        raise KernelError("event is not measurable outside the volume")
    exterior = {}
    for s in event:
        v = boundary.spin_at(s)
        if v is None:
            raise KernelError(f"site {s} carries no spin under a free boundary")
        exterior[s] = v
    table = build_kernel(pot, volume, beta, boundary)
    inside = [all(exterior[s] == v for s, v in event.items())] * len(table)
    mass = table.expectation(np.asarray(inside, dtype=float))
    indicator = 1.0 if all(exterior[s] == v for s, v in event.items()) else 0.0
    return abs(mass - indicator) <= EXACT_TOL


# -- quasilocality estimators ------------------------------------------------

def local_energy_matrix(terms: list, columns: dict, spins: np.ndarray) -> np.ndarray:
    """sum of Phi_A over ``terms`` evaluated on rows of ``spins`` (site -> column map)."""
    bits = (spins > 0).astype(np.int64)
    out = np.zeros(spins.shape[0])
    for t in terms:
        k = len(t.sites)
        idx = np.zeros(spins.shape[0], dtype=np.int64)
        for j, s in enumerate(t.sites):
            idx |= bits[:, columns[s]] << (k - 1 - j)
        out += np.asarray(t.table)[idx]
    return out


def single_site_density(pot: Potential, beta: float, site, dep_sites: list,
                        spins: np.ndarray) -> np.ndarray:
    """f_{i}(omega) = gamma_{i}(omega_i | omega) for rows of (spin_i, dependence spins)."""
    site = tuple(site)
    terms = pot.terms_containing(site)
    cols = {site: 0}
    cols.update({s: k + 1 for k, s in enumerate(dep_sites)})
    e_here = local_energy_matrix(terms, cols, spins)
    flipped = spins.copy()
    flipped[:, 0] = -flipped[:, 0]
    e_flip = local_energy_matrix(terms, cols, flipped)
    return 1.0 / (1.0 + np.exp(-beta * (e_flip - e_here)))


def dependence_set(pot: Potential, site) -> list:
    site = tuple(site)
    dep = set()
    for t in pot.terms_containing(site):
        dep.update(t.sites)
    dep.discard(site)
    return sorted(dep)


def quasilocality_estimator(pot: Potential, beta: float, site, n: int,
                            plus: BoundaryCondition = BoundaryCondition.plus(),
                            n_samples: int = 20000, seed: int = 0) -> tuple:
    """(m_i, g_i(n)) for the single-site density f_{i}.

    m_i = inf f_{i}(omega); g_i(n) = sup |f_{i}(omega_{Lambda_n} plus outside) - f_{i}(omega)|
    with Lambda_n the box of radius n centred at ``site``.  Exhaustive over the
    spins the density depends on when there are at most 16 of them, otherwise
    over ``n_samples`` seeded uniform configurations.
    """
    site = tuple(site)
    dep = dependence_set(pot, site)
    width = len(dep) + 1
    if len(dep) <= MAX_EXHAUSTIVE_DEPENDENCE:
        spins = spin_matrix(width)
    else:
        rng = np.random.default_rng(seed)
        spins = rng.choice(np.array([-1, 1], dtype=np.int8), size=(n_samples, width))
    f = single_site_density(pot, beta, site, dep, spins)
    outside = [k + 1 for k, s in enumerate(dep)
               if max(abs(a - b) for a, b in zip(s, site)) > n]
    replaced = spins.copy()
    for k in outside:
        v = plus.spin_at(dep[k - 1])
        if v is None:
            raise KernelError("reference state must assign spins")
        replaced[:, k] = v
    f_rep = single_site_density(pot, beta, site, dep, replaced)
    return float(f.min()), float(np.abs(f_rep - f).max())
