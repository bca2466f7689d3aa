"""Exact one-dimensional results: Ising transfer matrix and the Markov-chain specification.

State order for every 2x2 matrix here is (-1, +1).

Transfer matrix of the chain H = -J sum s_i s_{i+1} - h sum s_i::

    T(s, s') = exp(beta J s s' + beta h (s + s') / 2)

Its eigenvalues are

    lambda_pm = e^{bJ} cosh(bh) +- sqrt(e^{2bJ} sinh^2(bh) + e^{-2bJ})

with b = beta.  The free energy (pressure per site, raw counting measure)
is ln lambda_+, the magnetization sinh(bh) / sqrt(sinh^2(bh) + e^{-4bJ}),
and the connected correlation at distance n is (1 - m^2) (lambda_-/lambda_+)^n.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .kernels import spin_matrix


class ChainError(ValueError):
    pass


def spin_index(s: int) -> int:
    return 0 if s < 0 else 1


@dataclass(frozen=True)
class TransferMatrix:
    beta: float
    J: float
    h: float

    @property
    def entries(self) -> np.ndarray:
        s = np.array([-1.0, 1.0])
        b = self.beta
        return np.exp(b * self.J * np.outer(s, s) + b * self.h * (s[:, None] + s[None, :]) / 2)

    def eigenvalues(self) -> tuple:
        b, J, h = self.beta, self.J, self.h
        a = math.exp(b * J) * math.cosh(b * h)
        r = math.sqrt(math.exp(2 * b * J) * math.sinh(b * h) ** 2 + math.exp(-2 * b * J))
        return a + r, a - r


def tm_free_energy(beta: float, J: float = 1.0, h: float = 0.0) -> float:
    """ln lambda_max, the infinite-chain pressure per site for the counting measure."""
    if beta < 0:
        raise ChainError("beta must be >= 0")
    lam, _ = TransferMatrix(beta, J, h).eigenvalues()
    return math.log(lam)


def tm_magnetization(beta: float, J: float = 1.0, h: float = 0.0) -> float:
    x = abs(beta * h)
    if x == 0.0:
        return 0.0
    # m = sinh x / sqrt(sinh^2 x + e^{-4 beta J}), written as 1/sqrt(1 + e^t) to avoid overflow
    log_sinh = x + math.log1p(-math.exp(-2 * x)) - math.log(2.0)
    t = -4 * beta * J - 2 * log_sinh
    m = math.exp(-t / 2) if t > 700 else 1.0 / math.sqrt(1.0 + math.exp(t))
    return math.copysign(m, h)


def tm_pair_correlation(beta: float, J: float = 1.0, n: int = 1, h: float = 0.0) -> float:
    """Connected correlation <s_0 s_n> - <s_0><s_n> in the infinite chain."""
    if n < 0:
        raise ChainError("distance must be >= 0")
    if h == 0.0:
        return math.tanh(beta * J) ** n
    lam_p, lam_m = TransferMatrix(beta, J, h).eigenvalues()
    m = tm_magnetization(beta, J, h)
    return (1 - m * m) * (lam_m / lam_p) ** n


def tm_correlation_length(beta: float, J: float = 1.0, h: float = 0.0) -> float:
    lam_p, lam_m = TransferMatrix(beta, J, h).eigenvalues()
    if lam_m <= 0:
        return 0.0 if lam_m == 0 else 1.0 / math.log(lam_p / abs(lam_m))
    ratio = math.log(lam_p / lam_m)
    return math.inf if ratio == 0 else 1.0 / ratio


def log_matrix_power(a: np.ndarray, k: int) -> tuple:
    """(B, log_scale) with a^k = exp(log_scale) * B, by repeated squaring."""
    if k < 0:
        raise ChainError("negative power")
    result = np.eye(a.shape[0])
    log_scale = 0.0
    base = np.array(a, dtype=float)
    base_scale = 0.0
    while k:
        if k & 1:
            result = result @ base
            log_scale += base_scale
            m = result.max()
            result /= m
            log_scale += math.log(m)
        k >>= 1
        if k:
            base = base @ base
            base_scale *= 2
            m = base.max()
            base /= m
            base_scale += math.log(m)
    return result, log_scale


def ring_log_z_trace(beta: float, J: float, h: float, N: int) -> float:
    """ln tr T^N, the raw ring partition function."""
    mat, log_scale = log_matrix_power(TransferMatrix(beta, J, h).entries, N)
    return math.log(np.trace(mat)) + log_scale


def ring_log_z_enumeration(beta: float, J: float, h: float, N: int) -> float:
    """ln sum over all 2^N ring configurations of exp(-beta H_ring)."""
    if N > 24:
        raise ChainError("ring enumeration limited to 24 sites")
    s = spin_matrix(N).astype(float)
    energy = -J * (s * np.roll(s, -1, axis=1)).sum(1) - h * s.sum(1)
    return float(logsumexp(-beta * energy))


def ring_pair_correlation(beta: float, J: float, N: int, n: int) -> float:
    """<s_0 s_n> on a ring of N sites at h = 0, by enumeration."""
    s = spin_matrix(N).astype(float)
    energy = -J * (s * np.roll(s, -1, axis=1)).sum(1)
    logw = -beta * energy
    w = np.exp(logw - logsumexp(logw))
    return float(w @ (s[:, 0] * s[:, n % N]))


# -- Markov chain specification -------------------------------------------------

@dataclass(frozen=True)
class MarkovSpec:
    """Two-state stochastic matrix; ``p`` = M(-,-), ``q`` = M(+,+)."""

    p: float
    q: float

    def __post_init__(self):
        if not (0 < self.p < 1 and 0 < self.q < 1):
            raise ChainError("need 0 < p, q < 1 (irreducible, aperiodic, positive)")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.p, 1 - self.p], [1 - self.q, self.q]])

    @property
    def stationary(self) -> np.ndarray:
        a, b = 1 - self.p, 1 - self.q
        return np.array([b, a]) / (a + b)

    @property
    def second_eigenvalue(self) -> float:
        return self.p + self.q - 1

    @classmethod
    def from_matrix(cls, m) -> "MarkovSpec":
        m = np.asarray(m, dtype=float)
        if m.shape != (2, 2) or not np.allclose(m.sum(1), 1.0, atol=1e-12):
            raise ChainError("need a 2x2 stochastic matrix")
        return cls(float(m[0, 0]), float(m[1, 1]))


def ising_markov_spec(beta: float, J: float = 1.0, h: float = 0.0) -> MarkovSpec:
    """Chain induced by the 1D Ising Gibbs measure: M(s,s') = T(s,s') v(s') / (lambda v(s))."""
    t = TransferMatrix(beta, J, h).entries
    vals, vecs = np.linalg.eigh(t)
    v = np.abs(vecs[:, -1])
    m = t * v[None, :] / (vals[-1] * v[:, None])
    return MarkovSpec.from_matrix(m / m.sum(1, keepdims=True))


def _check_interior(interior, n):
    interior = tuple(interior)
    if len(interior) != 2 * n + 1 or any(s not in (-1, 1) for s in interior):
        raise ChainError(f"interior must hold 2n+1 = {2 * n + 1} spins")
    return interior


def markov_kernel(spec: MarkovSpec, n: int, interior, boundary) -> float:
    """gamma_{Lambda_n}(sigma | omega) = M(w_-, s_-n) ... M(s_n, w_+) / M^{2n+2}(w_-, w_+)."""
    interior = _check_interior(interior, n)
    left, right = boundary
    m = spec.matrix
    path = [left, *interior, right]
    num = 1.0
    for a, b in zip(path, path[1:]):
        num *= m[spin_index(a), spin_index(b)]
    power, log_scale = log_matrix_power(m, 2 * n + 2)
    z = power[spin_index(left), spin_index(right)] * math.exp(log_scale)
    if z <= 0:
        raise ChainError("zero normalization")
    return num / z


def markov_kernel_table(spec: MarkovSpec, n: int, boundary) -> np.ndarray:
    """Kernel values for all 2^{2n+1} interior configurations (lexicographic)."""
    rows = spin_matrix(2 * n + 1)
    return np.array([markov_kernel(spec, n, r.tolist(), boundary) for r in rows])


def chain_cylinder_probs(spec: MarkovSpec, length: int) -> np.ndarray:
    """P_nu of every configuration of ``length`` consecutive sites (lexicographic)."""
    m, nu = spec.matrix, spec.stationary
    rows = (spin_matrix(length) > 0).astype(int)
    p = nu[rows[:, 0]].copy()
    for k in range(1, length):
        p *= m[rows[:, k - 1], rows[:, k]]
    return p


def markov_dlr_discrepancy(spec: MarkovSpec, n: int) -> float:
    """max |P_nu(w_- sigma w_+) - P_nu(w_-, w_+) gamma(sigma|w)| over the window [-n-1, n+1].

    This checks P_nu gamma_{Lambda_n} = P_nu on every cylinder of the window.
    """
    length = 2 * n + 3
    probs = chain_cylinder_probs(spec, length)
    rows = spin_matrix(length)
    worst = 0.0
    for left in (-1, 1):
        for right in (-1, 1):
            sel = (rows[:, 0] == left) & (rows[:, -1] == right)
            joint = probs[sel]
            edge = joint.sum()
            kern = markov_kernel_table(spec, n, (left, right))
            worst = max(worst, float(np.abs(joint - edge * kern).max()))
    return worst


def markov_uniqueness_demo(spec: MarkovSpec, x: int, n: int) -> float:
    """max over boundary pairs (i, j) of |M^{n+1}(i,x) M^{n+1}(x,j) / M^{2n+2}(i,j) - nu(x)|."""
    if n < 1:
        raise ChainError("n must be >= 1")
    m = spec.matrix
    half = np.linalg.matrix_power(m, n + 1)
    full = np.linalg.matrix_power(m, 2 * n + 2)
    k = spin_index(x)
    nu = spec.stationary[k]
    worst = 0.0
    for i in range(2):
        for j in range(2):
            worst = max(worst, abs(half[i, k] * half[k, j] / full[i, j] - nu))
    return worst
