"""Tolerances and enumeration caps shared across the toolkit."""

# Exact enumeration paths (consistency, key lemma, detailed balance).
EXACT_TOL = 1e-12
# Paths that go through a log / Moebius round trip.
ROUNDTRIP_TOL = 1e-10
# Stationary distribution of the exact heat-bath sweep operator (total variation).
STATIONARY_TV_TOL = 1e-8

MAX_KERNEL_SITES = 24
MAX_CONSISTENCY_SITES = 14
MAX_MOEBIUS_GROUND_SET = 20
MAX_VACUUM_VOLUME = 12
MAX_VACUUM_SUBSETS = 5000  # subsets A with |A| <= max term size
DEFAULT_MAX_TERM_SIZE = 4
MAX_EXHAUSTIVE_DEPENDENCE = 16

DEFAULT_LONG_RANGE_RADIUS = 6

# Configurations are enumerated in chunks of this many states.
ENUM_CHUNK = 1 << 16
