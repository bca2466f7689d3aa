"""Single-spin-flip dynamics: heat-bath (Glauber) and Metropolis samplers.

The reference dynamics is the discrete-time heat bath: sites are visited in
lexicographic order and each is redrawn from its exact conditional law.
Potentials with at most two-body terms are compiled to a sparse Ising graph
and swept by ``_backend.run_sweeps`` (Cython when built, pure Python
otherwise).  Random numbers come from numpy's Philox generator seeded
through ``SeedSequence``; every update consumes uniforms in a fixed order,
so a seed determines the whole trajectory on either backend.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping, Optional, Union

import numpy as np
from scipy.special import expit

from . import _backend
from .constants import MAX_CONSISTENCY_SITES, STATIONARY_TV_TOL
from .interactions import Potential
from .kernels import EnergyEvaluator, build_kernel, spin_matrix
from .lattice import BoundaryCondition, Configuration, MissingBoundarySite, Volume, center_site

RNG_ALGORITHM = "numpy.Philox4x64-10/SeedSequence"
METHODS = {"heat-bath": 0, "metropolis": 1}
OBSERVABLES = ("magnetization-at-0", "mean-magnetization", "energy-per-site")
MIN_BATCHES = 20
SWEEP_CHUNK = 1 << 22  # uniforms per generated block


class DynamicsError(ValueError):
    pass


def make_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.Philox(seed))
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed))))


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("GIBBSLAB_THREADS", "1")))
    except ValueError:
        return 1


# -- compiled graph -------------------------------------------------------------

def _split_table(table):
    """Coefficients (c, a_1..a_k, K) with E = c + sum a_j s_j + K s_1 s_2 (k <= 2)."""
    if len(table) == 2:
        t0, t1 = table
        return (t0 + t1) / 2, ((t1 - t0) / 2,), 0.0
    t0, t1, t2, t3 = table
    c = (t0 + t1 + t2 + t3) / 4
    a = (-t0 - t1 + t2 + t3) / 4
    b = (-t0 + t1 - t2 + t3) / 4
    k = (t0 - t1 - t2 + t3) / 4
    return c, (a, b), k


@dataclass
class IsingGraph:
    """Sparse form H = const - sum_i field_i s_i - sum_{i<j} w_ij s_i s_j of a <=2-body potential.

    Slots are the volume's sites in lexicographic order; exterior and frozen
    spins are folded into ``field``.
    """

    volume: Volume
    indptr: np.ndarray
    nbr: np.ndarray
    weight: np.ndarray
    field: np.ndarray
    update: np.ndarray
    frozen: dict

    @classmethod
    def build(cls, pot: Potential, volume: Volume, boundary: BoundaryCondition,
              frozen: Optional[Mapping] = None) -> "IsingGraph":
        if pot.max_term_size > 2:
            raise DynamicsError("compiled sweeps need at most two-body terms")
        frozen = {tuple(s): int(v) for s, v in dict(frozen or {}).items()}
        col = volume._index
        n = len(volume)
        if boundary.kind == "periodic":
            terms = pot.terms_periodic(volume)
        else:
            terms = [(t.sites, t.table) for t in pot.terms_meeting(volume.sites)]
        fieldv = np.zeros(n)
        pairs = {}
        for sites, table in terms:
            vals = []
            for s in sites:
                if s in col:
                    vals.append(None)
                else:
                    try:
                        vals.append(boundary.spin_at(s))
                    except MissingBoundarySite:
                        raise DynamicsError(f"boundary does not cover site {s}") from None
            if any(s not in col and v is None for s, v in zip(sites, vals)):
                continue
            _, lin, k = _split_table(table)
            if len(sites) == 1:
                fieldv[col[sites[0]]] -= lin[0]
                continue
            (sa, sb), (va, vb) = sites, vals
            if va is None and vb is None:
                ia, ib = col[sa], col[sb]
                fieldv[ia] -= lin[0]
                fieldv[ib] -= lin[1]
                if ia == ib:
                    continue
                key = (min(ia, ib), max(ia, ib))
                pairs[key] = pairs.get(key, 0.0) - k
            elif va is None:
                fieldv[col[sa]] -= lin[0] + k * vb
            elif vb is None:
                fieldv[col[sb]] -= lin[1] + k * va
        adj = [[] for _ in range(n)]
        for (a, b), w in pairs.items():
            if w != 0.0:
                adj[a].append((b, w))
                adj[b].append((a, w))
        # fold frozen interior spins into the fields of their neighbours
        frozen_idx = {col[s]: v for s, v in frozen.items()}
        indptr = [0]
        nbr, weight = [], []
        for i in range(n):
            for j, w in sorted(adj[i]):
                if j in frozen_idx:
                    fieldv[i] += w * frozen_idx[j]
                else:
                    nbr.append(j)
                    weight.append(w)
            indptr.append(len(nbr))
        update = np.array([i for i in range(n) if i not in frozen_idx], dtype=np.int64)
        return cls(volume, np.asarray(indptr, dtype=np.int64), np.asarray(nbr, dtype=np.int64),
                   np.asarray(weight, dtype=float), fieldv, update, frozen)

    def local_field(self, spins: np.ndarray, i: int) -> float:
        f = self.field[i]
        for k in range(self.indptr[i], self.indptr[i + 1]):
            f = f + self.weight[k] * spins[self.nbr[k]]
        return f


# -- chain state and sweeps --------------------------------------------------------

@dataclass
class ChainState:
    config: Configuration
    boundary: BoundaryCondition
    seed: int
    rng: np.random.Generator
    sweep_count: int = 0

    @classmethod
    def start(cls, config: Configuration, boundary: BoundaryCondition, seed: int) -> "ChainState":
        return cls(config, boundary, int(seed), make_rng(seed))


@dataclass(frozen=True)
class GlauberRates:
    """Rates c_i(s) = exp{beta/2 sum_{A contains i} [Phi_A(s) - Phi_A(s^i)]}."""

    potential: Potential
    beta: float

    def local_energies(self, volume: Volume, boundary: BoundaryCondition, site) -> EnergyEvaluator:
        site = tuple(site)
        if boundary.kind == "periodic":
            terms = [(s, t) for s, t in self.potential.terms_periodic(volume) if site in s]
        else:
            terms = [(t.sites, t.table) for t in self.potential.terms_containing(site)]
        return EnergyEvaluator(self.potential, volume, boundary, terms=terms)

    def rate(self, config: Configuration, boundary: BoundaryCondition, site) -> float:
        ev = self.local_energies(config.volume, boundary, site)
        here = config.as_array()[None, :]
        flipped = config.flip(site).as_array()[None, :]
        return math.exp(self.beta / 2 * (ev(here)[0] - ev(flipped)[0]))


def _draw(rng, n_sweeps, width):
    return rng.random((n_sweeps, width))


def glauber_sweep(state: ChainState, rates: GlauberRates, method: str = "heat-bath") -> ChainState:
    """One lexicographic pass, each site redrawn from its conditional (or Metropolis step)."""
    vol = state.config.volume
    spins = state.config.as_array().copy()
    if rates.potential.max_term_size <= 2:
        graph = IsingGraph.build(rates.potential, vol, state.boundary)
        u = _draw(state.rng, 1, len(graph.update))
        _run(graph, spins, rates.beta, u, METHODS[method], False, np.zeros(0, dtype=np.int64))
    else:
        u = _draw(state.rng, 1, len(vol))[0]
        evs = [rates.local_energies(vol, state.boundary, s) for s in vol.sites]
        for k in range(len(vol)):
            plus, minus = spins.copy(), spins.copy()
            plus[k], minus[k] = 1, -1
            d = evs[k](minus[None, :])[0] - evs[k](plus[None, :])[0]
            if method == "heat-bath":
                spins[k] = 1 if u[k] < 1.0 / (1.0 + math.exp(-rates.beta * d)) else -1
            else:
                de = -d if spins[k] > 0 else d
                if de <= 0 or u[k] < math.exp(-rates.beta * de):
                    spins[k] = -spins[k]
    return ChainState(Configuration(vol, tuple(spins.tolist())), state.boundary, state.seed,
                      state.rng, state.sweep_count + 1)


def _run(graph, spins, beta, uniforms, method, random_site, record_sites, mag=0.0, energy=0.0):
    n = uniforms.shape[0]
    rec = np.zeros((n, len(record_sites)), dtype=np.int8)
    mags = np.zeros(n)
    energies = np.zeros(n)
    _backend.run_sweeps(spins, graph.indptr, graph.nbr, graph.weight, graph.field,
                        graph.update, float(beta), np.ascontiguousarray(uniforms), int(method),
                        int(random_site), np.ascontiguousarray(record_sites, dtype=np.int64),
                        rec, mags, energies, float(mag), float(energy))
    return rec, mags, energies


class Sampler:
    """A single seeded chain on a compiled graph.  Strictly sequential."""

    def __init__(self, pot: Potential, volume: Volume, beta: float, boundary: BoundaryCondition,
                 seed, frozen: Optional[Mapping] = None, method: str = "heat-bath",
                 scan: str = "lexicographic", init: Union[str, Configuration] = "random",
                 graph: Optional[IsingGraph] = None):
        if method not in METHODS:
            raise DynamicsError(f"unknown method {method!r}")
        if scan not in ("lexicographic", "random"):
            raise DynamicsError(f"unknown scan {scan!r}")
        self.pot, self.volume, self.beta, self.boundary = pot, volume, float(beta), boundary
        self.graph = graph or IsingGraph.build(pot, volume, boundary, frozen)
        self.method, self.scan = method, scan
        self.seed = seed
        self.rng = make_rng(seed)
        self.spins = self._initial(init)
        self.sweeps = 0
        self._energy_eval = None

    def _initial(self, init) -> np.ndarray:
        n = len(self.volume)
        if isinstance(init, Configuration):
            spins = init.as_array().copy()
        elif init == "random":
            spins = np.where(self.rng.random(n) < 0.5, -1, 1).astype(np.int8)
        elif init in ("plus", "minus"):
            spins = np.full(n, 1 if init == "plus" else -1, dtype=np.int8)
        else:
            raise DynamicsError(f"unknown initial state {init!r}")
        for s, v in self.graph.frozen.items():
            spins[self.volume.index(s)] = v
        return spins

    def energy(self) -> float:
        if self._energy_eval is None:
            self._energy_eval = EnergyEvaluator(self.pot, self.volume, self.boundary)
        return float(self._energy_eval(self.spins[None, :])[0])

    def magnetization_sum(self) -> float:
        return float(self.spins[self.graph.update].sum())

    def run(self, n_sweeps: int, record_sites=(), track: bool = False):
        """Advance ``n_sweeps``; return (recorded spins, magnetization sums, energies) per sweep."""
        record = np.asarray([self.volume.index(s) for s in record_sites], dtype=np.int64)
        m = len(self.graph.update)
        width = 2 * m if self.scan == "random" else m
        chunk = max(1, SWEEP_CHUNK // max(width, 1))
        mag = self.magnetization_sum() if track else 0.0
        energy = self.energy() if track else 0.0
        recs, mags, ens = [], [], []
        done = 0
        while done < n_sweeps:
            k = min(chunk, n_sweeps - done)
            u = _draw(self.rng, k, width)
            rec, mg, en = _run(self.graph, self.spins, self.beta, u, METHODS[self.method],
                               self.scan == "random", record, mag, energy)
            if track:
                mag, energy = float(mg[-1]), float(en[-1])
            recs.append(rec)
            mags.append(mg)
            ens.append(en)
            done += k
        self.sweeps += n_sweeps
        if not recs:
            return np.zeros((0, len(record)), np.int8), np.zeros(0), np.zeros(0)
        return np.concatenate(recs), np.concatenate(mags), np.concatenate(ens)

    def configuration(self) -> Configuration:
        return Configuration(self.volume, tuple(self.spins.tolist()))


# -- exact verification ---------------------------------------------------------------

def _site_energies(rates: GlauberRates, volume: Volume, boundary: BoundaryCondition):
    spins = spin_matrix(len(volume))
    out = []
    for k, s in enumerate(volume.sites):
        ev = rates.local_energies(volume, boundary, s)
        flipped = spins.copy()
        flipped[:, k] = -flipped[:, k]
        out.append((ev(spins), ev(flipped)))
    return out


def detailed_balance_check(pot: Potential, beta: float, volume: Volume,
                           boundary: BoundaryCondition) -> float:
    """max over (sigma, i) of |c_i(s) mu(s) / (c_i(s^i) mu(s^i)) - 1|, mu the exact kernel.

    Both sides are formed in log space, so extreme couplings do not overflow.
    """
    n = len(volume)
    if n > MAX_CONSISTENCY_SITES:
        raise DynamicsError(f"detailed balance check limited to {MAX_CONSISTENCY_SITES} sites")
    log_mu = build_kernel(pot, volume, beta, boundary).log_probs
    rates = GlauberRates(pot, beta)
    idx = np.arange(1 << n)
    worst = 0.0
    for k, (e_here, e_flip) in enumerate(_site_energies(rates, volume, boundary)):
        lhs = beta / 2 * (e_here - e_flip) + log_mu
        partner = idx ^ (1 << (n - 1 - k))
        worst = max(worst, float(np.abs(np.expm1(lhs - lhs[partner])).max()))
    return worst


def _heat_bath_operators(pot, beta, volume, boundary):
    """P(s_i = + | rest) for every configuration, per site in scan order."""
    rates = GlauberRates(pot, beta)
    spins = spin_matrix(len(volume))
    ops = []
    for k, (e_here, e_flip) in enumerate(_site_energies(rates, volume, boundary)):
        plus = spins[:, k] > 0
        e_plus = np.where(plus, e_here, e_flip)
        e_minus = np.where(plus, e_flip, e_here)
        ops.append(expit(beta * (e_minus - e_plus)))
    return ops


def _apply_sweep(v: np.ndarray, ops, n: int) -> np.ndarray:
    for k, p_plus in enumerate(ops):
        shape = (1 << k, 2, 1 << (n - 1 - k))
        vv = v.reshape(shape)
        pp = p_plus.reshape(shape)[:, 1, :]
        total = vv.sum(1)
        v = np.stack([total * (1 - pp), total * pp], axis=1).reshape(-1)
    return v


def sweep_transition_matrix(pot: Potential, beta: float, volume: Volume,
                            boundary: BoundaryCondition) -> np.ndarray:
    """Exact one-sweep transition matrix P[a, b] of the lexicographic heat bath."""
    n = len(volume)
    if n > 10:
        raise DynamicsError("explicit transition matrix limited to 10 sites")
    ops = _heat_bath_operators(pot, beta, volume, boundary)
    eye = np.eye(1 << n)
    return np.stack([_apply_sweep(row, ops, n) for row in eye])


def stationary_check(pot: Potential, beta: float, volume: Volume, boundary: BoundaryCondition,
                     max_iter: int = 10_000, tol: float = 1e-17) -> float:
    """TV distance between the sweep chain's stationary vector (power iteration) and the kernel."""
    n = len(volume)
    if n > 12:
        raise DynamicsError("stationary check limited to 12 sites")
    ops = _heat_bath_operators(pot, beta, volume, boundary)
    mu = build_kernel(pot, volume, beta, boundary).probs
    v = np.full(1 << n, 1.0 / (1 << n))
    for _ in range(max_iter):
        new = _apply_sweep(v, ops, n)
        new /= new.sum()
        delta = np.abs(new - v).sum()
        v = new
        if delta < tol:
            break
    return float(0.5 * np.abs(v - mu).sum())


# -- estimates ----------------------------------------------------------------------

@dataclass
class RunEstimate:
    mean: float
    stderr: float
    n_sweeps: int
    burn_in: int
    batch_size: int
    seed: int
    observable: str = ""
    rng_algorithm: str = RNG_ALGORITHM
    backend: str = _backend.BACKEND
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def zscore(self, value: float) -> float:
        if self.stderr == 0:
            return 0.0 if self.mean == value else math.inf
        return abs(self.mean - value) / self.stderr


def batch_means(series: np.ndarray, batch_size: int) -> tuple:
    """(mean, stderr) from non-overlapping batches; trailing partial batch dropped."""
    series = np.asarray(series, dtype=float)
    n_batches = len(series) // batch_size
    if n_batches < 2:
        raise DynamicsError("need at least two batches")
    means = series[:n_batches * batch_size].reshape(n_batches, batch_size).mean(1)
    return float(means.mean()), float(means.std(ddof=1) / math.sqrt(n_batches))


def validate_schedule(burn_in: int, n_sweeps: int, batch_size: int) -> list:
    problems = []
    if burn_in < 0:
        problems.append("burn_in must be >= 0")
    if n_sweeps <= 0:
        problems.append("sweeps must be > 0")
    if batch_size <= 0:
        problems.append("batch_size must be > 0")
    elif batch_size > n_sweeps:
        problems.append("batch_size must not exceed sweeps")
    elif n_sweeps // batch_size < MIN_BATCHES:
        problems.append(f"sweeps / batch_size must give at least {MIN_BATCHES} batches")
    return problems


def estimate_observable(pot: Potential, beta: float, volume: Volume, boundary: BoundaryCondition,
                        observable: Union[str, Callable] = "magnetization-at-0",
                        schedule: tuple = (1000, 20000, 1000), seed: int = 0,
                        method: str = "heat-bath", scan: str = "lexicographic",
                        init: Union[str, Configuration] = "random") -> RunEstimate:
    """Batch-means estimate of an observable along one seeded chain.

    ``observable`` is one of the named observables or a function of the spin
    array (slots in lexicographic site order) evaluated after every sweep.
    """
    burn_in, n_sweeps, batch_size = schedule
    problems = validate_schedule(burn_in, n_sweeps, batch_size)
    if problems:
        raise DynamicsError("; ".join(problems))
    sampler = Sampler(pot, volume, beta, boundary, seed, method=method, scan=scan, init=init)
    sampler.run(burn_in)
    name = observable if isinstance(observable, str) else getattr(observable, "__name__", "custom")
    extra = {}
    if observable == "magnetization-at-0":
        site = center_site(volume)
        rec, _, _ = sampler.run(n_sweeps, record_sites=[site])
        series = rec[:, 0].astype(float)
        extra["site"] = list(site)
    elif observable == "mean-magnetization":
        _, mags, _ = sampler.run(n_sweeps, track=True)
        series = mags / len(sampler.graph.update)
    elif observable == "energy-per-site":
        _, _, energies = sampler.run(n_sweeps, track=True)
        series = energies / len(volume)
    elif callable(observable):
        series = np.empty(n_sweeps)
        for t in range(n_sweeps):
            sampler.run(1)
            series[t] = observable(sampler.spins)
    else:
        raise DynamicsError(f"unknown observable {observable!r}")
    mean, se = batch_means(series, batch_size)
    return RunEstimate(mean, se, n_sweeps, burn_in, batch_size, int(seed), name,
                       backend=_backend.BACKEND, extra=extra)


@dataclass
class TailHistogram:
    values: np.ndarray
    counts: np.ndarray
    edges: np.ndarray
    seed: int

    @property
    def positive_fraction(self) -> float:
        return float((self.values > 0).mean())

    def mode_centres(self) -> list:
        """Bin centres of local maxima of the histogram."""
        c = self.counts
        centres = (self.edges[:-1] + self.edges[1:]) / 2
        padded = np.concatenate([[-1], c, [-1]])
        return [float(centres[k]) for k in range(len(c))
                if c[k] > 0 and padded[k + 1] >= padded[k] and padded[k + 1] > padded[k + 2]]

    def is_bimodal(self, gap: float = 0.2) -> bool:
        """Both signs populated and few runs near zero magnetization."""
        v = self.values
        pos, neg = (v > gap).mean(), (v < -gap).mean()
        middle = (np.abs(v) <= gap).mean()
        return bool(pos > 0.1 and neg > 0.1 and middle < min(pos, neg))


def tail_weight_histogram(pot: Potential, beta: float, volume: Volume,
                          boundary: BoundaryCondition = BoundaryCondition.free(),
                          n_samples: int = 200, seed: int = 0, sweeps: int = 2000,
                          bins: int = 21) -> TailHistogram:
    """Block magnetization of ``n_samples`` independent chains from random starts."""
    children = np.random.SeedSequence(int(seed)).spawn(n_samples)
    graph = IsingGraph.build(pot, volume, boundary)

    def one(child):
        s = Sampler(pot, volume, beta, boundary, child, graph=graph)
        s.run(sweeps)
        return s.magnetization_sum() / len(graph.update)

    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        values = np.array(list(pool.map(one, children)))
    counts, edges = np.histogram(values, bins=bins, range=(-1.0, 1.0))
    return TailHistogram(values, counts, edges, int(seed))
