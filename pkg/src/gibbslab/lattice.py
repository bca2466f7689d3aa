"""Lattice geometry: finite volumes, spin configurations and boundary conditions.

Spins are the integers -1 and +1.  Every volume keeps its sites in
lexicographic order and all tables built on top of a volume inherit that
order.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Iterable, Iterator, Mapping, Optional

import numpy as np

Site = tuple

SHAPES = ("box", "annulus", "explicit")
BC_KINDS = ("plus", "minus", "free", "alternating", "periodic", "explicit")


class LatticeError(ValueError):
    pass


class MissingBoundarySite(LatticeError, KeyError):
    """An explicit boundary condition does not cover a site that is needed."""


@dataclass(frozen=True)
class Volume:
    """A finite set of sites of Z^d, stored in lexicographic order."""

    sites: tuple
    shape: str = "explicit"
    radius: Optional[int] = None

    def __post_init__(self):
        sites = tuple(sorted(tuple(int(c) for c in s) for s in self.sites))
        if len(set(sites)) != len(sites):
            raise LatticeError("volume contains duplicate sites")
        if sites and len({len(s) for s in sites}) != 1:
            raise LatticeError("sites of mixed dimension")
        if sites and len(sites[0]) < 1:
            raise LatticeError("dimension must be >= 1")
        if self.shape not in SHAPES:
            raise LatticeError(f"unknown shape {self.shape!r}")
        object.__setattr__(self, "sites", sites)

    @property
    def dim(self) -> int:
        return len(self.sites[0]) if self.sites else 0

    def __len__(self) -> int:
        return len(self.sites)

    def __iter__(self) -> Iterator[Site]:
        return iter(self.sites)

    def __contains__(self, site) -> bool:
        return tuple(site) in self._index

    @cached_property
    def _index(self) -> dict:
        return {s: k for k, s in enumerate(self.sites)}

    def index(self, site) -> int:
        return self._index[tuple(site)]

    @cached_property
    def bounds(self) -> tuple:
        """Per-axis (min, max) of the coordinates."""
        arr = np.asarray(self.sites)
        return tuple((int(lo), int(hi)) for lo, hi in zip(arr.min(0), arr.max(0)))

    def is_rectangle(self) -> bool:
        n = 1
        for lo, hi in self.bounds:
            n *= hi - lo + 1
        return n == len(self)

    def issubset(self, other: "Volume") -> bool:
        return all(s in other for s in self.sites)

    def minus(self, other: "Volume") -> "Volume":
        return Volume(tuple(s for s in self.sites if s not in other))

    def union(self, other: "Volume") -> "Volume":
        return Volume(tuple(set(self.sites) | set(other.sites)))

    def neighbours(self, site) -> list:
        """Nearest neighbours of ``site`` in Z^d (not restricted to the volume)."""
        out = []
        for axis in range(len(site)):
            for step in (-1, 1):
                nb = list(site)
                nb[axis] += step
                out.append(tuple(nb))
        return out

    def __repr__(self) -> str:
        return f"Volume(shape={self.shape!r}, dim={self.dim}, n_sites={len(self)})"


def make_box(n: int, d: int) -> Volume:
    """The cube [-n, n]^d."""
    if n < 0 or d < 1:
        raise LatticeError("need n >= 0 and d >= 1")
    sites = itertools.product(range(-n, n + 1), repeat=d)
    return Volume(tuple(sites), shape="box", radius=n)


def make_annulus(n_inner: int, n_outer: int, d: int) -> Volume:
    """Sites of [-n_outer, n_outer]^d outside [-n_inner, n_inner]^d."""
    if not 0 <= n_inner < n_outer:
        raise LatticeError("need 0 <= n_inner < n_outer")
    sites = [s for s in itertools.product(range(-n_outer, n_outer + 1), repeat=d)
             if max(abs(c) for c in s) > n_inner]
    return Volume(tuple(sites), shape="annulus", radius=n_outer)


def make_grid(shape: Iterable[int], origin: Optional[Iterable[int]] = None) -> Volume:
    """Rectangular volume with ``shape[k]`` sites along axis k, starting at ``origin``."""
    shape = tuple(int(L) for L in shape)
    origin = tuple(origin) if origin is not None else (0,) * len(shape)
    ranges = [range(o, o + L) for o, L in zip(origin, shape)]
    return Volume(tuple(itertools.product(*ranges)))


def shell(volume: Volume, radius: int) -> Volume:
    """Sites outside ``volume`` within l-infinity distance ``radius`` of it."""
    if radius == 0:
        return Volume(())
    offsets = list(itertools.product(range(-radius, radius + 1), repeat=volume.dim))
    found = set()
    for s in volume.sites:
        for off in offsets:
            t = tuple(a + b for a, b in zip(s, off))
            if t not in volume:
                found.add(t)
    return Volume(tuple(found))


def center_site(volume: Volume) -> tuple:
    """The site called "0": the origin if present, else the rounded centroid."""
    origin = (0,) * volume.dim
    if origin in volume:
        return origin
    guess = tuple(int(math.floor((lo + hi) / 2 + 0.5)) for lo, hi in volume.bounds)
    if guess in volume:
        return guess
    arr = np.asarray(volume.sites, dtype=float)
    k = int(np.argmin(((arr - arr.mean(0)) ** 2).sum(1)))
    return volume.sites[k]


def alternating_spin(site) -> int:
    return -1 if sum(site) % 2 else 1


@dataclass(frozen=True)
class Configuration:
    """Spins on a volume; ``spins[k]`` belongs to ``volume.sites[k]``."""

    volume: Volume
    spins: tuple

    def __post_init__(self):
        spins = tuple(int(s) for s in self.spins)
        if len(spins) != len(self.volume):
            raise LatticeError("spin count does not match the volume")
        if any(s not in (-1, 1) for s in spins):
            raise LatticeError("spins must be -1 or +1")
        object.__setattr__(self, "spins", spins)

    @classmethod
    def uniform(cls, volume: Volume, value: int = 1) -> "Configuration":
        return cls(volume, (value,) * len(volume))

    @classmethod
    def from_mapping(cls, volume: Volume, spins: Mapping) -> "Configuration":
        try:
            return cls(volume, tuple(spins[s] for s in volume.sites))
        except KeyError as exc:
            raise LatticeError(f"no spin given for site {exc.args[0]}") from None

    @classmethod
    def from_index(cls, volume: Volume, index: int) -> "Configuration":
        """Configuration number ``index`` in the lexicographic enumeration (-1 < +1)."""
        n = len(volume)
        bits = [(index >> (n - 1 - k)) & 1 for k in range(n)]
        return cls(volume, tuple(2 * b - 1 for b in bits))

    def to_index(self) -> int:
        idx = 0
        for s in self.spins:
            idx = (idx << 1) | (s > 0)
        return idx

    def __getitem__(self, site) -> int:
        return self.spins[self.volume.index(site)]

    def as_dict(self) -> dict:
        return dict(zip(self.volume.sites, self.spins))

    def as_array(self) -> np.ndarray:
        return np.asarray(self.spins, dtype=np.int8)

    def restrict(self, volume: Volume) -> "Configuration":
        return Configuration(volume, tuple(self[s] for s in volume.sites))

    def flip(self, site) -> "Configuration":
        k = self.volume.index(site)
        spins = list(self.spins)
        spins[k] = -spins[k]
        return Configuration(self.volume, tuple(spins))


@dataclass(frozen=True)
class BoundaryCondition:
    """Exterior configuration entering Hamiltonians and kernels.

    ``explicit`` conditions carry a site -> spin mapping and may fall back to
    a ``base`` condition for sites they do not list.
    """

    kind: str
    spins: Mapping = field(default_factory=dict)
    base: Optional["BoundaryCondition"] = None

    def __post_init__(self):
        if self.kind not in BC_KINDS:
            raise LatticeError(f"unknown boundary condition {self.kind!r}")
        if self.kind != "explicit" and (self.spins or self.base is not None):
            raise LatticeError("only explicit boundary conditions carry spins")
        if self.base is not None and self.base.kind == "periodic":
            raise LatticeError("periodic conditions cannot serve as a base")
        spins = {tuple(k): int(v) for k, v in dict(self.spins).items()}
        if any(v not in (-1, 1) for v in spins.values()):
            raise LatticeError("boundary spins must be -1 or +1")
        object.__setattr__(self, "spins", spins)

    def __hash__(self):
        return hash((self.kind, tuple(sorted(self.spins.items())), self.base))

    @classmethod
    def plus(cls):
        return cls("plus")

    @classmethod
    def minus(cls):
        return cls("minus")

    @classmethod
    def free(cls):
        return cls("free")

    @classmethod
    def alternating(cls):
        return cls("alternating")

    @classmethod
    def periodic(cls):
        return cls("periodic")

    @classmethod
    def explicit(cls, spins: Mapping, base: Optional["BoundaryCondition"] = None):
        return cls("explicit", spins, base)

    @classmethod
    def from_name(cls, name: str) -> "BoundaryCondition":
        aliases = {"plus": "plus", "+": "plus", "minus": "minus", "-": "minus",
                   "free": "free", "alt": "alternating", "alternating": "alternating",
                   "periodic": "periodic"}
        if name not in aliases:
            raise LatticeError(f"unknown boundary condition {name!r}")
        return cls(aliases[name])

    @property
    def is_free(self) -> bool:
        return self.kind == "free"

    def spin_at(self, site) -> Optional[int]:
        """Exterior spin at ``site``; None when the site carries no spin (free)."""
        site = tuple(site)
        if self.kind == "plus":
            return 1
        if self.kind == "minus":
            return -1
        if self.kind == "alternating":
            return alternating_spin(site)
        if self.kind == "free":
            return None
        if self.kind == "periodic":
            raise LatticeError("periodic boundary values depend on the interior")
        if site in self.spins:
            return self.spins[site]
        if self.base is not None:
            return self.base.spin_at(site)
        raise MissingBoundarySite(site)

    def label(self) -> str:
        return self.kind if self.kind != "explicit" else f"explicit[{len(self.spins)}]"


def wrap_site(site, bounds) -> Site:
    return tuple(lo + (c - lo) % (hi - lo + 1) for c, (lo, hi) in zip(site, bounds))


def spin_lookup(config: Configuration, boundary: BoundaryCondition) -> Callable:
    """Return ``site -> spin or None`` for the concatenation of ``config`` and ``boundary``."""
    vol = config.volume
    inside = config.as_dict()
    if boundary.kind == "periodic":
        if not vol.is_rectangle():
            raise LatticeError("periodic boundary needs a rectangular volume")
        bounds = vol.bounds
        return lambda s: inside[wrap_site(s, bounds)]

    def lookup(site):
        site = tuple(site)
        v = inside.get(site)
        return v if v is not None else boundary.spin_at(site)
    return lookup


def concatenate(interior: Configuration, boundary: BoundaryCondition,
                shell_radius: int) -> Configuration:
    """Configuration on ``interior`` plus its shell, agreeing with ``boundary`` outside.

    With a free boundary nothing is added: the exterior carries no spins.
    """
    if shell_radius < 0:
        raise LatticeError("shell radius must be >= 0")
    if boundary.is_free:
        return interior
    ring = shell(interior.volume, shell_radius)
    look = spin_lookup(interior, boundary)
    spins = interior.as_dict()
    for s in ring.sites:
        spins[s] = look(s)
    return Configuration.from_mapping(interior.volume.union(ring), spins)


def decimated_sublattice(volume: Volume, b: int) -> Volume:
    """Sites with all coordinates divisible by ``b``, re-indexed by i -> i / b."""
    if b < 1:
        raise LatticeError("spacing must be >= 1")
    if b == 1:
        return volume
    kept = [tuple(c // b for c in s) for s in volume.sites if all(c % b == 0 for c in s)]
    coarse = Volume(tuple(kept))
    if volume.shape == "box":
        r = volume.radius // b
        if len(coarse) == (2 * r + 1) ** volume.dim:
            return Volume(coarse.sites, shape="box", radius=r)
    return coarse


def embed(volume: Volume, b: int) -> Volume:
    """Inverse of the re-indexing in :func:`decimated_sublattice`."""
    return Volume(tuple(tuple(c * b for c in s) for s in volume.sites))


# -- text format -----------------------------------------------------------

def config_to_text(config: Configuration) -> str:
    vol = config.volume
    n = vol.radius if vol.radius is not None else len(vol)
    lines = [f"{vol.dim} {n} {vol.shape}"]
    for s, v in zip(vol.sites, config.spins):
        lines.append(" ".join(str(c) for c in s) + f" {v}")
    return "\n".join(lines) + "\n"


def config_from_text(text: str) -> Configuration:
    rows = [ln.split() for ln in text.strip().splitlines() if ln.strip()]
    if not rows or len(rows[0]) != 3:
        raise LatticeError("missing 'd n shape' header")
    d, n, shape = int(rows[0][0]), int(rows[0][1]), rows[0][2]
    sites, spins = [], []
    for row in rows[1:]:
        if len(row) != d + 1:
            raise LatticeError(f"expected {d + 1} fields, got {row}")
        sites.append(tuple(int(c) for c in row[:d]))
        spins.append(int(row[d]))
    radius = n if shape in ("box", "annulus") else None
    vol = Volume(tuple(sites), shape=shape, radius=radius)
    return Configuration.from_mapping(vol, dict(zip(sites, spins)))
