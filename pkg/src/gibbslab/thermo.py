"""Pressure, Kolmogorov-Sinai entropy and relative entropy density, computed exactly.

Pressures P_n(w) = |V|^-1 ln Z_V(w) use the normalized a priori measure, so
P = 0 at beta = 0.  One-dimensional volumes are [-n, n]; two-dimensional
ones are strips of n columns and fixed width.  Both go through a column
transfer matrix assembled from the potential's terms, which needs every term
to touch at most two adjacent columns of the volume.

Entropies are for two-state chains on Z: a product measure is the chain
whose rows are equal.  Block quantities over [-n, n] are exhaustive cylinder
sums; closed forms use the chain rule.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np
from scipy.special import logsumexp

from .constants import ENUM_CHUNK
from .exact1d import MarkovSpec
from .interactions import Potential
from .kernels import spin_matrix
from .lattice import BoundaryCondition, MissingBoundarySite, Volume, make_box, make_grid


class ThermoError(ValueError):
    pass


MAX_STRIP_WIDTH = 4
MAX_PRESSURE_N = 12
MAX_CYLINDER_SITES = 25


# -- pressure ---------------------------------------------------------------------

def strip_log_partition(pot: Potential, volume: Volume, beta: float,
                        boundary: BoundaryCondition) -> float:
    """ln Z (normalized a priori measure) of a rectangular volume, sweeping along the first axis."""
    if boundary.kind == "periodic":
        raise ThermoError("strip transfer does not handle periodic boundaries")
    if not volume.is_rectangle():
        raise ThermoError("strip transfer needs a rectangular volume")
    cols = sorted({s[0] for s in volume.sites})
    col_sites = {x: [s for s in volume.sites if s[0] == x] for x in cols}
    width = len(col_sites[cols[0]])
    if width > MAX_STRIP_WIDTH and volume.dim > 1:
        raise ThermoError(f"strip width limited to {MAX_STRIP_WIDTH}")
    pos = {s: k for x in cols for k, s in enumerate(col_sites[x])}
    col_index = {x: k for k, x in enumerate(cols)}
    states = spin_matrix(width).astype(np.int64)
    n_states = len(states)
    col_energy = np.zeros((len(cols), n_states))
    link_energy = np.zeros((max(len(cols) - 1, 0), n_states, n_states))
    for term in pot.terms_meeting(volume.sites):
        inside = [s for s in term.sites if s in pos]
        exterior = {}
        skip = False
        for s in term.sites:
            if s not in pos:
                try:
                    v = boundary.spin_at(s)
                except MissingBoundarySite:
                    raise ThermoError(f"boundary does not cover site {s}") from None
                if v is None:
                    skip = True
                    break
                exterior[s] = v
        if skip:
            continue
        xs = sorted({col_index[s[0]] for s in inside})
        if len(xs) > 2 or (len(xs) == 2 and xs[1] != xs[0] + 1):
            raise ThermoError("a term spans more than two adjacent columns")
        base = xs[0]
        idx_a = np.zeros(n_states, dtype=np.int64)
        idx_b = np.zeros(n_states, dtype=np.int64)
        k = len(term.sites)
        for bit, s in enumerate(term.sites):
            weight = 1 << (k - 1 - bit)
            if s in pos:
                spins = states[:, pos[s]]
                target = idx_a if col_index[s[0]] == base else idx_b
                target += weight * (spins > 0)
            elif exterior[s] > 0:
                idx_a += weight
        table = np.asarray(term.table)
        if len(xs) == 1:
            col_energy[base] += table[idx_a]
        else:
            link_energy[base] += table[idx_a[:, None] + idx_b[None, :]]
    logv = -beta * col_energy[0]
    for k in range(1, len(cols)):
        logv = logsumexp(logv[:, None] - beta * link_energy[k - 1], axis=0) - beta * col_energy[k]
    return float(logsumexp(logv) - len(volume) * math.log(2))


def strip_volume(n: int, width: int) -> Volume:
    return make_grid((n, width))


def boundary_surface(volume: Volume) -> int:
    """Number of exterior sites adjacent to the volume."""
    outside = set()
    for s in volume.sites:
        for t in _all_neighbours(s):
            if t not in volume:
                outside.add(t)
    return len(outside)


def _all_neighbours(site):
    out = []
    for axis in range(len(site)):
        for d in (-1, 1):
            t = list(site)
            t[axis] += d
            out.append(tuple(t))
    return out


@dataclass
class PressureSeries:
    dim: int
    beta: float
    ns: list
    sizes: list
    surfaces: list
    values: dict            # bc label -> list of P_n
    width: int = 1
    limit: dict = field(default_factory=dict)      # bc label -> (extrapolated P, fit residual)

    def gap(self, a: str, b: str) -> np.ndarray:
        return np.abs(np.asarray(self.values[a]) - np.asarray(self.values[b]))

    def scaled_gap(self, a: str, b: str) -> np.ndarray:
        """gap * |V| / |boundary|, bounded when the difference is a surface effect."""
        return self.gap(a, b) * np.asarray(self.sizes) / np.asarray(self.surfaces)

    def rows(self) -> list:
        """(n, value, bc, gap to the first bc) rows for CSV output."""
        labels = list(self.values)
        out = []
        for k, n in enumerate(self.ns):
            for lab in labels:
                g = abs(self.values[lab][k] - self.values[labels[0]][k])
                out.append((n, self.values[lab][k], lab, g))
        return out


def _extrapolate(ns, vals, sizes):
    """Least-squares P + a / |V| over the second half of the series; returns (P, rms residual)."""
    k = max(2, len(ns) // 2)
    x = 1.0 / np.asarray(sizes[-k:], dtype=float)
    y = np.asarray(vals[-k:], dtype=float)
    if len(x) < 2:
        return float(y[-1]), 0.0
    coef = np.polyfit(x, y, 1)
    resid = y - np.polyval(coef, x)
    return float(coef[1]), float(np.sqrt(np.mean(resid ** 2)))


def pressure_series(pot: Potential, beta: float, n_max: int,
                    bcs: Sequence[Union[str, BoundaryCondition]] = ("free", "plus", "minus"),
                    width: int = 4) -> PressureSeries:
    """P_n for n = 1..n_max: [-n, n] in one dimension, n x width strips in two."""
    if beta < 0:
        raise ThermoError("beta must be >= 0")
    if not 1 <= n_max <= MAX_PRESSURE_N:
        raise ThermoError(f"n_max must lie in 1..{MAX_PRESSURE_N}")
    if pot.dim == 2 and not 1 <= width <= MAX_STRIP_WIDTH:
        raise ThermoError(f"strip width must lie in 1..{MAX_STRIP_WIDTH}")
    if pot.dim > 2:
        raise ThermoError("pressure series are implemented for d <= 2")
    bcs = [BoundaryCondition.from_name(b) if isinstance(b, str) else b for b in bcs]
    ns = list(range(1, n_max + 1))
    vols = [make_box(n, 1) if pot.dim == 1 else strip_volume(n, width) for n in ns]
    values = {}
    for bc in bcs:
        values[bc.label()] = [strip_log_partition(pot, v, beta, bc) / len(v) for v in vols]
    sizes = [len(v) for v in vols]
    series = PressureSeries(pot.dim, float(beta), ns, sizes, [boundary_surface(v) for v in vols],
                            values, width if pot.dim == 2 else 1)
    for lab, vals in values.items():
        series.limit[lab] = _extrapolate(ns, vals, sizes)
    return series


# -- entropy ------------------------------------------------------------------------

@dataclass(frozen=True)
class ProductMeasure:
    """I.i.d. spins with P(+) = p."""

    p: float

    def __post_init__(self):
        if not 0 <= self.p <= 1:
            raise ThermoError("p must lie in [0, 1]")

    def chain(self):
        row = np.array([1 - self.p, self.p])
        return row.copy(), np.vstack([row, row])


@dataclass(frozen=True)
class MarkovMeasure:
    """Stationary chain of a two-state stochastic matrix (state order -, +)."""

    spec: MarkovSpec

    def chain(self):
        return self.spec.stationary, self.spec.matrix


Measure = Union[ProductMeasure, MarkovMeasure]


def _xlogy(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(x > 0, x * np.log(np.where(y > 0, y, 1.0)), 0.0)
    return np.where((x > 0) & (y <= 0), -np.inf, out)


def _entropy(dist) -> float:
    return float(-_xlogy(dist, dist).sum())


def _kl(a, b) -> float:
    return float(_xlogy(a, a).sum() - _xlogy(a, b).sum())


def ks_closed_form(mu: Measure) -> float:
    """-sum_i pi(i) sum_j M(i, j) ln M(i, j)."""
    pi, m = mu.chain()
    return float(sum(pi[i] * _entropy(m[i]) for i in range(2)))


def relative_entropy_closed_form(mu: Measure, nu: Measure) -> float:
    """sum_i pi_mu(i) sum_j M_mu(i, j) ln M_mu(i, j) / M_nu(i, j); inf when nu misses mass of mu."""
    pi, m = mu.chain()
    _, m2 = nu.chain()
    total = 0.0
    for i in range(2):
        if pi[i] > 0:
            total += pi[i] * _kl(m[i], m2[i])
    return float(total)


def _log_paths(first: np.ndarray, logm: np.ndarray, length: int) -> np.ndarray:
    """Log-probabilities of all sequences of ``length`` states (lexicographic), first law given."""
    arr = first.copy()
    for _ in range(length - 1):
        arr = (arr[:, None] + logm[np.arange(len(arr)) & 1]).reshape(-1)
    return arr


def _log_blocks(measure: Measure, length: int):
    """Yield log-probabilities of all cylinders of ``length`` sites, in lexicographic chunks.

    A cylinder splits into a prefix and a suffix; the suffix law depends on
    the prefix only through its last spin.
    """
    pi, m = measure.chain()
    with np.errstate(divide="ignore"):
        logpi, logm = np.log(pi), np.log(m)
    a = (length + 1) // 2
    b = length - a
    prefix = _log_paths(logpi, logm, a)
    if b == 0:
        yield prefix
        return
    suffix = np.stack([_log_paths(logm[s], logm, b) for s in (0, 1)])
    rows = max(1, ENUM_CHUNK // len(suffix[0]))
    for start in range(0, len(prefix), rows):
        idx = np.arange(start, min(len(prefix), start + rows))
        yield (prefix[idx, None] + suffix[idx & 1]).reshape(-1)


def _cylinder_sums(mu: Measure, nu, length: int) -> tuple:
    """(sum mu ln mu, sum mu ln nu) over all cylinders of ``length`` sites, by enumeration."""
    if length > MAX_CYLINDER_SITES:
        raise ThermoError(f"cylinder enumeration limited to {MAX_CYLINDER_SITES} sites")
    s_mm = s_mn = 0.0
    blocks_nu = _log_blocks(nu, length) if nu is not None else None
    for lm in _log_blocks(mu, length):
        pm = np.exp(lm)
        live = pm > 0
        s_mm += float((pm[live] * lm[live]).sum())
        if blocks_nu is not None:
            ln = next(blocks_nu)
            if np.isneginf(ln[live]).any():
                s_mn = -math.inf
            elif s_mn != -math.inf:
                s_mn += float((pm[live] * ln[live]).sum())
    return s_mm, s_mn


def block_entropy(mu: Measure, n: int) -> float:
    """h_n = -|V|^-1 sum mu(s_V) ln mu(s_V) over V = [-n, n], by enumeration."""
    length = 2 * n + 1
    s_mm, _ = _cylinder_sums(mu, None, length)
    return 0.0 - s_mm / length      # no -0.0 for degenerate measures


def block_entropy_chain_rule(mu: Measure, n: int) -> float:
    """Same quantity from H(pi) + (|V| - 1) h."""
    pi, _ = mu.chain()
    length = 2 * n + 1
    return (_entropy(pi) + (length - 1) * ks_closed_form(mu)) / length


def block_relative_entropy(mu: Measure, nu: Measure, n: int) -> float:
    """h_n(mu|nu) = |V|^-1 sum mu(s_V) ln mu(s_V) / nu(s_V) over V = [-n, n]."""
    length = 2 * n + 1
    s_mm, s_mn = _cylinder_sums(mu, nu, length)
    if s_mn == -math.inf:
        return math.inf
    return max((s_mm - s_mn) / length, 0.0)


@dataclass
class EntropyReport:
    kind: str                 # "KS-entropy" or "relative-entropy"
    ns: list
    values: list              # h_n
    closed_form: float
    divergent: bool = False

    @property
    def errors(self) -> list:
        return [abs(v - self.closed_form) for v in self.values]

    def rows(self) -> list:
        return [(n, v, self.kind, abs(v - self.closed_form)) for n, v in zip(self.ns, self.values)]


def _as_list(n) -> list:
    return list(n) if isinstance(n, (list, tuple, range)) else [int(n)]


def ks_entropy_exact(mu: Measure, n: Union[int, Sequence[int]] = 12) -> EntropyReport:
    ns = _as_list(n)
    return EntropyReport("KS-entropy", ns, [block_entropy(mu, k) for k in ns], ks_closed_form(mu))


def relative_entropy_density_exact(mu: Measure, nu: Measure,
                                   n: Union[int, Sequence[int]] = 12) -> EntropyReport:
    ns = _as_list(n)
    closed = relative_entropy_closed_form(mu, nu)
    values = [block_relative_entropy(mu, nu, k) for k in ns]
    divergent = math.isinf(closed) or any(math.isinf(v) for v in values)
    return EntropyReport("relative-entropy", ns, values, closed, divergent)
