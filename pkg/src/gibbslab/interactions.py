"""Interaction potentials, Hamiltonians, UAC norms and Moebius inversion.

A potential is a family of terms Phi_A.  Each term carries a value table
with 2^|A| entries, indexed by the spins on A in lexicographic order
(-1 before +1, first site most significant).  Translation-invariant
potentials are stored as templates anchored at their first site; explicit
potentials list their terms with absolute sites.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Optional

import numpy as np

from .constants import (DEFAULT_LONG_RANGE_RADIUS, DEFAULT_MAX_TERM_SIZE,
                        MAX_MOEBIUS_GROUND_SET, MAX_VACUUM_SUBSETS, MAX_VACUUM_VOLUME)
from .lattice import (BoundaryCondition, Configuration, MissingBoundarySite, Volume,
                      spin_lookup, wrap_site)


class InteractionError(ValueError):
    pass


def pattern_index(spins) -> int:
    idx = 0
    for s in spins:
        idx = (idx << 1) | (s > 0)
    return idx


def _diameter(sites) -> int:
    if len(sites) < 2:
        return 0
    arr = np.asarray(sites)
    return int((arr.max(0) - arr.min(0)).max())


@dataclass(frozen=True)
class Term:
    """One interaction term Phi_A with its value table."""

    sites: tuple
    table: tuple

    def __post_init__(self):
        sites = tuple(tuple(int(c) for c in s) for s in self.sites)
        if list(sites) != sorted(sites) or len(set(sites)) != len(sites):
            raise InteractionError("term sites must be distinct and sorted")
        table = tuple(float(v) for v in self.table)
        if len(table) != 2 ** len(sites):
            raise InteractionError(f"term on {len(sites)} sites needs {2 ** len(sites)} values")
        object.__setattr__(self, "sites", sites)
        object.__setattr__(self, "table", table)

    def __call__(self, spins) -> float:
        return self.table[pattern_index(spins)]

    @property
    def sup(self) -> float:
        return max(abs(v) for v in self.table)


@dataclass(frozen=True)
class Template:
    """Translation-invariant term shape: offsets relative to the anchor site."""

    offsets: tuple
    table: tuple

    def at(self, anchor) -> Term:
        sites = tuple(tuple(a + o for a, o in zip(anchor, off)) for off in self.offsets)
        return Term(sites, self.table)


def _template(offsets, table) -> Template:
    offsets = sorted(tuple(int(c) for c in o) for o in offsets)
    first = offsets[0]
    offsets = tuple(tuple(c - f for c, f in zip(o, first)) for o in offsets)
    return Template(offsets, tuple(float(v) for v in table))


class Potential:
    """A finite-range potential: translation-invariant templates plus explicit terms."""

    def __init__(self, dim: int, templates: Iterable[Template] = (), terms: Iterable[Term] = (),
                 name: str = "explicit"):
        self.dim = int(dim)
        self.templates = tuple(templates)
        self.terms = tuple(terms)
        self.name = name
        for t in self.templates:
            if any(len(o) != self.dim for o in t.offsets):
                raise InteractionError("template dimension mismatch")
        for t in self.terms:
            if any(len(s) != self.dim for s in t.sites):
                raise InteractionError("term dimension mismatch")
        ranges = [_diameter(t.offsets) for t in self.templates]
        ranges += [_diameter(t.sites) for t in self.terms]
        self.range = max(ranges, default=0)
        self._explicit_by_site = {}
        for t in self.terms:
            for s in t.sites:
                self._explicit_by_site.setdefault(s, []).append(t)

    def __repr__(self):
        return (f"Potential({self.name}, dim={self.dim}, range={self.range}, "
                f"templates={len(self.templates)}, terms={len(self.terms)})")

    @property
    def max_term_size(self) -> int:
        sizes = [len(t.offsets) for t in self.templates] + [len(t.sites) for t in self.terms]
        return max(sizes, default=0)

    def terms_containing(self, site) -> list:
        site = tuple(site)
        out = []
        for tpl in self.templates:
            for off in tpl.offsets:
                anchor = tuple(s - o for s, o in zip(site, off))
                out.append(tpl.at(anchor))
        out.extend(self._explicit_by_site.get(site, ()))
        return out

    def terms_meeting(self, sites: Iterable) -> list:
        """All terms Phi_A with A meeting ``sites`` (each exactly once)."""
        sites = [tuple(s) for s in sites]
        out = []
        for tpl in self.templates:
            anchors = set()
            for s in sites:
                for off in tpl.offsets:
                    anchors.add(tuple(a - o for a, o in zip(s, off)))
            out.extend(tpl.at(a) for a in sorted(anchors))
        siteset = set(sites)
        out.extend(t for t in self.terms if any(s in siteset for s in t.sites))
        return out

    def terms_within(self, sites: Iterable) -> list:
        siteset = {tuple(s) for s in sites}
        return [t for t in self.terms_meeting(siteset) if all(s in siteset for s in t.sites)]

    def terms_periodic(self, volume: Volume) -> list:
        """Terms of the periodized potential: one translate per anchor in the box, wrapped."""
        if not volume.is_rectangle():
            raise InteractionError("periodic terms need a rectangular volume")
        if self.terms:
            raise InteractionError("explicit terms cannot be periodized")
        bounds = volume.bounds
        out = []
        for tpl in self.templates:
            for anchor in volume.sites:
                t = tpl.at(anchor)
                out.append((tuple(wrap_site(s, bounds) for s in t.sites), t.table))
        return out

    def scaled(self, factor: float) -> "Potential":
        tpls = [Template(t.offsets, tuple(factor * v for v in t.table)) for t in self.templates]
        terms = [Term(t.sites, tuple(factor * v for v in t.table)) for t in self.terms]
        return Potential(self.dim, tpls, terms, name=f"{factor}*{self.name}")


# -- constructors ----------------------------------------------------------

def _pair_table(coupling: float) -> tuple:
    # -J s s' over (--, -+, +-, ++)
    return (-coupling, coupling, coupling, -coupling)


def ising(J: float = 1.0, h: float = 0.0, dim: int = 2) -> Potential:
    """Nearest-neighbour Ising potential Phi_{ij} = -J s_i s_j, Phi_{i} = -h s_i."""
    tpls = []
    origin = (0,) * dim
    if J != 0:
        for axis in range(dim):
            e = tuple(1 if k == axis else 0 for k in range(dim))
            tpls.append(_template([origin, e], _pair_table(J)))
    if h != 0:
        tpls.append(_template([origin], (h, -h)))
    return Potential(dim, tpls, name=f"ising(J={J},h={h})")


def zero_potential(dim: int = 2) -> Potential:
    return Potential(dim, name="zero")


def _half_space_offsets(dim: int, radius: int, keep: Callable) -> list:
    out = []
    for off in itertools.product(range(-radius, radius + 1), repeat=dim):
        if off > (0,) * dim and keep(off):
            out.append(off)
    return out


def long_range(r_exponent: float, truncation_radius: int = DEFAULT_LONG_RANGE_RADIUS,
               J: float = 1.0, dim: int = 1) -> Potential:
    """Pair potential -J s_i s_j / |i-j|^r, hard-truncated at Euclidean distance ``truncation_radius``.

    This is an approximation of the infinite-range model.  Exponents r <= dim
    (the Coulomb-like, non-summable case) are rejected.
    """
    if r_exponent <= dim:
        raise InteractionError(f"r_exponent must exceed the dimension ({dim}) for a summable potential")
    if truncation_radius < 1:
        raise InteractionError("truncation radius must be >= 1")
    origin = (0,) * dim
    tpls = []
    for off in _half_space_offsets(dim, truncation_radius,
                                   lambda o: math.hypot(*o) <= truncation_radius):
        dist = math.hypot(*off)
        tpls.append(_template([origin, off], _pair_table(J / dist ** r_exponent)))
    return Potential(dim, tpls, name=f"long_range(r={r_exponent},R={truncation_radius})")


def kac(gamma: float, profile: Callable[[float], float], truncation_radius: int,
        dim: int = 1) -> Potential:
    """Kac pair potential with coupling gamma^d * profile(gamma * |i-j|)."""
    if not 0 < gamma <= 1:
        raise InteractionError("gamma must lie in (0, 1]")
    origin = (0,) * dim
    tpls = []
    for off in _half_space_offsets(dim, truncation_radius,
                                   lambda o: math.hypot(*o) <= truncation_radius):
        c = gamma ** dim * profile(gamma * math.hypot(*off))
        if c != 0:
            tpls.append(_template([origin, off], _pair_table(c)))
    return Potential(dim, tpls, name=f"kac(gamma={gamma})")


def sullivan(cap: int) -> Potential:
    """1D potential (-1)^n / n^2 on runs of n consecutive + spins, runs up to length ``cap``.

    Uniformly convergent but not UAC: its UAC norm grows like log(cap).
    """
    tpls = []
    for n in range(1, cap + 1):
        table = [0.0] * (2 ** n)
        table[-1] = (-1) ** n / n ** 2
        tpls.append(_template([(k,) for k in range(n)], table))
    return Potential(1, tpls, name=f"sullivan(cap={cap})")


def explicit(terms: Iterable[Term], dim: Optional[int] = None) -> Potential:
    terms = list(terms)
    if dim is None:
        if not terms:
            raise InteractionError("cannot infer dimension of an empty potential")
        dim = len(terms[0].sites[0])
    return Potential(dim, terms=terms)


def potential_from_text(text: str, dim: int) -> Potential:
    """Parse lines "k i_1 ... i_{k*d} v_1 ... v_{2^k}"."""
    terms = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        fields = line.split()
        k = int(fields[0])
        want = 1 + k * dim + 2 ** k
        if len(fields) != want:
            raise InteractionError(f"line {lineno}: expected {want} fields, got {len(fields)}")
        coords = [int(c) for c in fields[1:1 + k * dim]]
        sites = [tuple(coords[j * dim:(j + 1) * dim]) for j in range(k)]
        values = [float(v) for v in fields[1 + k * dim:]]
        order = sorted(range(k), key=lambda j: sites[j])
        if order != list(range(k)):
            raise InteractionError(f"line {lineno}: sites must be listed in lexicographic order")
        terms.append(Term(tuple(sites), tuple(values)))
    return explicit(terms, dim)


def potential_to_text(pot: Potential) -> str:
    lines = []
    for t in pot.terms:
        coords = " ".join(str(c) for s in t.sites for c in s)
        vals = " ".join(repr(v) for v in t.table)
        lines.append(f"{len(t.sites)} {coords} {vals}")
    return "\n".join(lines) + "\n"


# -- Hamiltonians ------------------------------------------------------------

def hamiltonian_free(pot: Potential, config: Configuration) -> float:
    """Sum of Phi_A(sigma) over A inside the volume."""
    total = 0.0
    for term in pot.terms_within(config.volume.sites):
        total += term([config[s] for s in term.sites])
    return total


def hamiltonian_bc(pot: Potential, config: Configuration, boundary: BoundaryCondition) -> float:
    """Sum of Phi_A over A meeting the volume, exterior spins taken from ``boundary``."""
    if boundary.is_free:
        return hamiltonian_free(pot, config)
    look = spin_lookup(config, boundary)
    if boundary.kind == "periodic":
        total = 0.0
        for sites, table in pot.terms_periodic(config.volume):
            total += table[pattern_index([look(s) for s in sites])]
        return total
    total = 0.0
    for term in pot.terms_meeting(config.volume.sites):
        try:
            spins = [look(s) for s in term.sites]
        except MissingBoundarySite as exc:
            raise InteractionError(f"boundary shell narrower than the potential range: "
                                   f"no spin at {exc.args[0]}") from None
        if any(v is None for v in spins):
            continue
        total += term(spins)
    return total


def uac_norm_at_site(pot: Potential, site) -> float:
    """Sum over A containing ``site`` of sup |Phi_A|, sup taken over the whole table."""
    return sum(t.sup for t in pot.terms_containing(site))


# -- Moebius inversion -------------------------------------------------------

def _ground_set(table: Mapping) -> list:
    ground = set()
    for key in table:
        ground |= set(key)
    return sorted(ground)


def _to_mask_array(table: Mapping, ground: list) -> np.ndarray:
    n = len(ground)
    if n > MAX_MOEBIUS_GROUND_SET:
        raise InteractionError(f"ground set of {n} sites exceeds the cap {MAX_MOEBIUS_GROUND_SET}")
    pos = {s: k for k, s in enumerate(ground)}
    arr = np.full(1 << n, np.nan)
    for key, val in table.items():
        mask = 0
        for s in key:
            mask |= 1 << pos[s]
        arr[mask] = val
    if np.isnan(arr).any():
        missing = int(np.flatnonzero(np.isnan(arr))[0])
        subset = [ground[k] for k in range(n) if missing >> k & 1]
        raise InteractionError(f"missing subset entry for {subset}")
    return arr


def _from_mask_array(arr: np.ndarray, ground: list) -> dict:
    n = len(ground)
    return {frozenset(ground[k] for k in range(n) if mask >> k & 1): float(arr[mask])
            for mask in range(1 << n)}


def _subset_transform(arr: np.ndarray, n: int, sign: float) -> np.ndarray:
    out = arr.copy()
    for k in range(n):
        view = out.reshape(-1, 2, 1 << k)
        view[:, 1, :] += sign * view[:, 0, :]
    return out


def moebius_invert(H_table: Mapping) -> dict:
    """Phi_A = sum over B subset of A of (-1)^{|A \\ B|} H_B, for every A in the power set."""
    ground = _ground_set(H_table)
    arr = _to_mask_array(H_table, ground)
    return _from_mask_array(_subset_transform(arr, len(ground), -1.0), ground)


def partial_sums(phi_table: Mapping) -> dict:
    """H_L = sum over A subset of L of Phi_A (the inverse of :func:`moebius_invert`)."""
    ground = _ground_set(phi_table)
    arr = _to_mask_array(phi_table, ground)
    return _from_mask_array(_subset_transform(arr, len(ground), 1.0), ground)


# -- vacuum potential --------------------------------------------------------

def _submasks(mask: int):
    sub = mask
    while True:
        yield sub
        if sub == 0:
            return
        sub = (sub - 1) & mask


@dataclass(frozen=True)
class VacuumPotential:
    """Potential reconstructed from a specification, vanishing at the vacuum state.

    Energies are already multiplied by the inverse temperature of the source
    specification: kernels regenerated from ``base`` use beta = 1.
    """

    base: Potential
    vacuum_state: BoundaryCondition

    def term(self, sites) -> Optional[Term]:
        key = tuple(sorted(tuple(s) for s in sites))
        for t in self.base.terms:
            if t.sites == key:
                return t
        return None


def vacuum_from_specification(gamma: Callable, volume: Volume,
                              plus: BoundaryCondition = BoundaryCondition.plus(),
                              max_term_size: Optional[int] = DEFAULT_MAX_TERM_SIZE) -> VacuumPotential:
    """Reconstruct the vacuum potential of a specification by Moebius inversion.

    ``gamma(sub_volume, boundary)`` must return a kernel table (anything with
    ``log_probs`` in lexicographic configuration order).  For every A inside
    ``volume`` with |A| <= ``max_term_size`` (None: no cap) the table

        Phi_A(sigma) = - sum_{B subset A} (-1)^{|A \\ B|} ln gamma_B(sigma|+) / gamma_B(+|+)

    is computed with sigma equal to the reference state off A.
    """
    n = len(volume)
    if max_term_size is None:
        if n > MAX_VACUUM_VOLUME:
            raise InteractionError(f"full vacuum reconstruction limited to {MAX_VACUUM_VOLUME} sites")
        max_term_size = n
    if sum(math.comb(n, k) for k in range(1, max_term_size + 1)) > MAX_VACUUM_SUBSETS:
        raise InteractionError(f"more than {MAX_VACUUM_SUBSETS} subsets to reconstruct")
    sites = volume.sites
    ref = [plus.spin_at(s) for s in sites]
    if any(v is None for v in ref):
        raise InteractionError("vacuum state must assign a spin to every site")

    # L_B(tau_B) = -ln gamma_B(tau_B | ref) / gamma_B(ref_B | ref), computed on demand.
    cache = {0: np.zeros(1)}

    def logratio(mask):
        if mask not in cache:
            members = [k for k in range(n) if mask >> k & 1]
            sub = Volume(tuple(sites[k] for k in members))
            logp = np.asarray(gamma(sub, plus).log_probs, dtype=float)
            if not np.all(np.isfinite(logp)):
                raise InteractionError("specification is not non-null on a sub-volume")
            ref_idx = pattern_index([ref[k] for k in members])
            cache[mask] = -(logp - logp[ref_idx])
        return cache[mask]

    terms = []
    for size in range(1, max_term_size + 1):
        for members in itertools.combinations(range(n), size):
            amask = sum(1 << k for k in members)
            taus = np.arange(1 << size)
            values = np.zeros(1 << size)
            for sub in _submasks(amask):
                bpos = [j for j, k in enumerate(members) if sub >> k & 1]
                idx = np.zeros_like(taus)
                for j in bpos:
                    idx = (idx << 1) | ((taus >> (size - 1 - j)) & 1)
                sign = -1.0 if (size - len(bpos)) % 2 else 1.0
                values += sign * logratio(sub)[idx]
            terms.append(Term(tuple(sites[k] for k in members), tuple(values)))
    base = Potential(volume.dim, terms=terms, name="vacuum")
    return VacuumPotential(base, plus)
