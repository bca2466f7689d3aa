"""gibbslab: finite-volume Gibbs kernels, Glauber sampling and decimation probes for lattice spin systems."""

__version__ = "0.1.0"
