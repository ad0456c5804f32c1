"""Detection statistics: history weights, partition laws and chain algebra.

For an initial state that is a Poisson mixture of spin-coherent states with
a single strength ``R``, the probability of ``L`` detections factorizes into
a Poisson law for ``L`` and a time-independent law over partitions,

    p_L({n_s}) = L! / prod(n_s!) * F({n_s}),
    F({n_s})   = int f prod_s g_s ** n_s   (f normalized).

All probabilities are assembled in log space.  Chains of modes coupled by
beam splitters reduce to one-dimensional Fourier sums, see
:func:`chain_history_weight`.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Callable, Iterable, Iterator, Optional, Sequence, Union

import numpy as np
from scipy.special import gammaln

from .bloch import DetectorSetup
from .distribution import (
    BaseMeasure,
    DetectionFactor,
    DistributionAnnihilated,
    PhaseDistribution,
    log_normalization,
)

ENUMERATION_BUDGET = 10_000_000
TIE_RTOL = 1e-9


class EnumerationBudgetExceeded(RuntimeError):
    pass


@dataclass(frozen=True)
class Partition:
    """Detection counts per channel."""

    counts: tuple

    def __post_init__(self):
        counts = tuple(int(c) for c in self.counts)
        if any(c < 0 for c in counts):
            raise ValueError(f"counts must be non-negative, got {counts}")
        object.__setattr__(self, "counts", counts)

    @property
    def L(self) -> int:
        return sum(self.counts)

    def __iter__(self):
        return iter(self.counts)

    def __len__(self):
        return len(self.counts)


@dataclass(frozen=True)
class SourceParams:
    """Strength ``R`` (mean particle number ``R**2``), loss rate ``Gamma``, window ``T``."""

    R: float
    Gamma: float
    T: float

    def __post_init__(self):
        if not (self.R > 0 and self.Gamma > 0 and self.T > 0):
            raise ValueError("R, Gamma and T must all be positive")

    @property
    def mean_count(self) -> float:
        """``R**2 (1 - exp(-Gamma T))``."""
        return self.R ** 2 * -math.expm1(-self.Gamma * self.T)


@dataclass(frozen=True)
class ChainConfig:
    """``K`` modes joined by beam splitters with settings ``xi``.

    A linear chain has ``K - 1`` splitters between neighbours; a circular
    chain closes the ring with a splitter between mode ``K`` and mode 1.
    """

    K: int
    topology: str
    xi: tuple

    def __post_init__(self):
        if self.K < 2:
            raise ValueError("a chain needs at least two modes")
        if self.topology not in ("linear", "circular"):
            raise ValueError(f"unknown topology {self.topology!r}")
        xi = tuple(float(x) for x in self.xi)
        if len(xi) != self.n_bonds:
            raise ValueError(f"{self.topology} chain of {self.K} modes needs {self.n_bonds} settings, got {len(xi)}")
        object.__setattr__(self, "xi", xi)

    @property
    def n_bonds(self) -> int:
        return self.K if self.topology == "circular" else self.K - 1


# ---------------------------------------------------------------------------
# counting
# ---------------------------------------------------------------------------

def poisson_count_prob(p: SourceParams, L: int) -> float:
    """Probability of exactly ``L`` detections in ``[0, T]``."""
    if L < 0:
        return 0.0
    mu = p.mean_count
    if mu == 0.0:
        return 1.0 if L == 0 else 0.0
    return math.exp(L * math.log(mu) - mu - math.lgamma(L + 1))


def log_multinomial(counts: Sequence[int]) -> float:
    L = sum(counts)
    return math.lgamma(L + 1) - math.fsum(math.lgamma(c + 1) for c in counts)


def compositions(L: int, parts: int) -> Iterator[tuple]:
    """All tuples of ``parts`` non-negative integers summing to ``L``, lexicographic."""
    if parts == 1:
        yield (L,)
        return
    for first in range(L, -1, -1):
        for rest in compositions(L - first, parts - 1):
            yield (first,) + rest


def n_compositions(L: int, parts: int) -> int:
    return math.comb(L + parts - 1, parts - 1)


# ---------------------------------------------------------------------------
# beam-splitter statistics
# ---------------------------------------------------------------------------

def _require_static(setup: DetectorSetup):
    if not setup.is_static:
        raise ValueError("closed-form statistics need time-independent channel directions")


def log_history_weight(dist0: PhaseDistribution, setup: Sequence, counts: Sequence[int], method: str = "auto") -> float:
    """Log of ``F({n_s})``, the probability of one ordered history with these counts.

    ``dist0`` is normalized internally, and its own factors (earlier
    detections) are kept, so ``F`` is conditional on them.
    """
    channels = tuple(setup)
    if len(channels) != len(counts):
        raise ValueError(f"{len(counts)} counts for {len(channels)} channels")
    if not all(c.is_static for c in channels):
        raise ValueError("closed-form statistics need time-independent channel directions")
    factors = dist0.factors + tuple(
        DetectionFactor(c.direction_at(0.0), int(n)) for c, n in zip(channels, counts)
    )
    prod = PhaseDistribution(dist0.base, factors)
    log_pref = math.fsum(int(n) * math.log(2.0 * c.weight) for c, n in zip(channels, counts))
    log_z0 = log_normalization(PhaseDistribution(dist0.base, dist0.factors), method)
    try:
        log_z = log_normalization(prod, method)
    except DistributionAnnihilated:
        # an impossible history given a possible starting state
        return -math.inf
    return log_pref + log_z - log_z0


def history_weight(dist0: PhaseDistribution, setup: Sequence, partition, method: str = "auto") -> float:
    """``F({n_s}) = int f prod g_s ** n_s`` with ``f`` normalized."""
    return math.exp(log_history_weight(dist0, setup, tuple(partition), method))


def log_partition_prob(dist0: PhaseDistribution, setup: Sequence, partition, method: str = "auto") -> float:
    counts = tuple(partition)
    return log_multinomial(counts) + log_history_weight(dist0, setup, counts, method)


def partition_prob(dist0: PhaseDistribution, setup: Sequence, partition, method: str = "auto") -> float:
    """``L! / prod(n_s!) * F({n_s})``."""
    return math.exp(log_partition_prob(dist0, setup, partition, method))


def two_channel_uniform_closed_form(M: int, n1: int) -> float:
    """Bunching law ``C(2 n1, n1) C(2 n2, n2) / 4**M`` for a uniform relative phase."""
    if not (0 <= n1 <= M):
        raise ValueError("need 0 <= n1 <= M")
    n2 = M - n1
    return float(Fraction(math.comb(2 * n1, n1) * math.comb(2 * n2, n2), 4 ** M))


def two_channel_marginal(dist0: PhaseDistribution, setup4: DetectorSetup, n1: int, n2: int, method: str = "auto") -> float:
    """Law of ``(n1, n2)`` in channels 1, 2 when channels 3, 4 are ignored.

    ``p_M(n1, n2) = 2**M C(M, n1) int f g_1**n1 g_2**n2``; the ``2**M``
    compensates ``g_1 + g_2 = 1/2``.
    """
    M = n1 + n2
    first_two = tuple(setup4)[:2]
    log_f = log_history_weight(dist0, first_two, (n1, n2), method)
    return math.exp(M * math.log(2.0) + math.log(math.comb(M, n1)) + log_f)


def sum_rule(dist0: PhaseDistribution, setup4: DetectorSetup, L: int, n1: int, n2: int, method: str = "auto") -> tuple:
    """Both sides of the marginalization identity over channels 3, 4.

    Returns ``(lhs, rhs)`` with ``lhs = sum_{n3+n4=L-M} p_L(n1..n4)`` and
    ``rhs = C(L, M) 2**-L p_M(n1, n2)``.
    """
    M = n1 + n2
    if M > L:
        raise ValueError("n1 + n2 exceeds L")
    terms = [
        math.exp(log_partition_prob(dist0, setup4, (n1, n2, n3, L - M - n3), method))
        for n3 in range(L - M + 1)
    ]
    lhs = math.fsum(terms)
    rhs = math.comb(L, M) * 2.0 ** (-L) * two_channel_marginal(dist0, setup4, n1, n2, method)
    return lhs, rhs


Constraint = Union[None, str, Callable[[tuple], bool]]


def _candidate_partitions(L: int, n_channels: int, constraint: Constraint) -> Iterable[tuple]:
    if constraint == "balanced":
        if n_channels != 4 or L % 2:
            raise ValueError("the balanced constraint needs four channels and even L")
        half = L // 2
        if (half + 1) ** 2 > ENUMERATION_BUDGET:
            raise EnumerationBudgetExceeded(f"{(half + 1) ** 2} partitions exceed the budget")
        return (
            (n1, half - n1, n3, half - n3) for n1 in range(half, -1, -1) for n3 in range(half, -1, -1)
        )
    size = n_compositions(L, n_channels)
    if size > ENUMERATION_BUDGET:
        raise EnumerationBudgetExceeded(f"{size} partitions exceed the budget of {ENUMERATION_BUDGET}")
    parts = compositions(L, n_channels)
    if constraint is None:
        return parts
    if callable(constraint):
        return (p for p in parts if constraint(p))
    raise ValueError(f"unknown constraint {constraint!r}")


def partition_table(dist0: PhaseDistribution, setup: Sequence, L: int, constraint: Constraint = None) -> list:
    """``[(counts, log p_L)]`` for every admissible partition of ``L``."""
    channels = tuple(setup)
    return [
        (counts, log_partition_prob(dist0, channels, counts))
        for counts in _candidate_partitions(L, len(channels), constraint)
    ]


def co_maximal(table: Iterable[tuple], rtol: float = TIE_RTOL) -> list:
    """Entries within relative ``rtol`` of the maximum, sorted by counts."""
    table = list(table)
    if not table:
        return []
    best = max(lp for _, lp in table)
    cut = best + math.log1p(-rtol)
    return sorted(counts for counts, lp in table if lp >= cut)


def most_probable_partitions(
    dist0: PhaseDistribution, setup: Sequence, L: int, constraint: Constraint = None, rtol: float = TIE_RTOL
) -> list:
    """All partitions attaining the maximal ``p_L`` (ties within ``rtol``)."""
    return co_maximal(partition_table(dist0, setup, L, constraint), rtol)


# ---------------------------------------------------------------------------
# chains of modes
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def _bond_integer_coeffs(n: int, m: int) -> tuple:
    """Integer Fourier numerators of ``cos**2n(x/2) sin**2m(x/2)`` (denominator ``4**(n+m)``).

    ``cos**2(x/2) = (e^{ix} + 2 + e^{-ix}) / 4`` and ``sin**2(x/2) =
    (-e^{ix} + 2 - e^{-ix}) / 4``; the product is expanded exactly.
    """
    if n == 0 and m == 0:
        return (1,)
    if n > 0:
        prev, step = _bond_integer_coeffs(n - 1, m), (1, 2, 1)
    else:
        prev, step = _bond_integer_coeffs(n, m - 1), (-1, 2, -1)
    out = [0] * (len(prev) + 2)
    for i, a in enumerate(prev):
        for j, b in enumerate(step):
            out[i + j] += a * b
    return tuple(out)


@lru_cache(maxsize=None)
def bond_fourier_coefficients(n: int, m: int) -> np.ndarray:
    """Fourier coefficients of ``cos**2n(x/2) sin**2m(x/2)``, index ``k + n + m``.

    The function is real and even, so the coefficients are real and
    symmetric.  Values are rounded once from exact rationals.
    """
    den = 4 ** (n + m)
    arr = np.array([float(Fraction(a, den)) for a in _bond_integer_coeffs(n, m)])
    arr.setflags(write=False)
    return arr


def _coefficient(n: int, m: int, k: np.ndarray) -> np.ndarray:
    c = bond_fourier_coefficients(n, m)
    d = n + m
    out = np.zeros(k.shape)
    inside = np.abs(k) <= d
    out[inside] = c[k[inside] + d]
    return out


def _pairs(partition) -> tuple:
    pairs = tuple((int(n), int(m)) for n, m in partition)
    if any(n < 0 or m < 0 for n, m in pairs):
        raise ValueError("counts must be non-negative")
    return pairs


def chain_history_weight(cfg: ChainConfig, partition) -> float:
    """Weight ``F({n_s, m_s})`` of a chain history with uniform initial phases.

    Each bond contributes ``cos**2n_s((Phi_s - xi_s)/2) sin**2m_s(...)``.  For
    a linear chain the relative phases are independent and ``F`` is the
    product of the bond means.  On a ring the phases sum to zero mod 2 pi,
    which collapses the integral to ``sum_k prod_s h_s(k)`` over Fourier
    coefficients ``h_s(k) = exp(-i k xi_s) h0_s(k)``; only ``sum(xi)``
    survives.
    """
    pairs = _pairs(partition)
    if len(pairs) != cfg.n_bonds:
        raise ValueError(f"expected {cfg.n_bonds} bonds, got {len(pairs)}")
    if cfg.topology == "linear":
        return math.prod(bond_fourier_coefficients(n, m)[n + m] for n, m in pairs)
    d = min(n + m for n, m in pairs)
    k = np.arange(-d, d + 1)
    prod = np.cos(k * math.fsum(cfg.xi))
    for n, m in pairs:
        prod = prod * _coefficient(n, m, k)
    return max(float(math.fsum(prod)), 0.0)


def chain_log_partition_prob(cfg: ChainConfig, partition) -> float:
    """Log of ``L! / prod(n_s! m_s!) * B**-L * F`` with ``B`` beam splitters.

    The ``B**-L`` factor accounts for each splitter receiving a share
    ``1/B`` of the total detection rate, which makes the law normalized.
    """
    pairs = _pairs(partition)
    flat = [c for pair in pairs for c in pair]
    L = sum(flat)
    F = chain_history_weight(cfg, pairs)
    if F <= 0.0:
        return -math.inf
    return log_multinomial(flat) - L * math.log(cfg.n_bonds) + math.log(F)


def chain_partition_prob(cfg: ChainConfig, partition) -> float:
    return math.exp(chain_log_partition_prob(cfg, partition))


def chain_partition_table(cfg: ChainConfig, L: int) -> tuple:
    """Every chain partition of ``L`` with its log probability.

    Returns ``(counts, logp)``: an integer array of shape ``(N, 2B)`` laid out
    as ``n_1, m_1, n_2, m_2, ...`` and the matching log probabilities.
    Partitions are grouped by bond totals and each group is reduced with
    one tensor contraction over the Fourier index.
    """
    B = cfg.n_bonds
    size = n_compositions(L, 2 * B)
    if size > ENUMERATION_BUDGET:
        raise EnumerationBudgetExceeded(f"{size} partitions exceed the budget of {ENUMERATION_BUDGET}")
    k = np.arange(-L, L + 1)
    phase = np.cos(k * math.fsum(cfg.xi))
    log_L = math.lgamma(L + 1) - L * math.log(B)
    all_counts, all_logp = [], []
    letters = "abcdefghijklmnopqrstuvwxy"
    if B > len(letters):
        raise ValueError("too many bonds for the tensor reduction")
    for totals in compositions(L, B):
        mats, log_terms, n_axes = [], [], []
        for M in totals:
            n = np.arange(M, -1, -1)
            if cfg.topology == "circular":
                mats.append(np.stack([_coefficient(int(a), int(M - a), k) for a in n]))
            else:
                mats.append(np.array([bond_fourier_coefficients(int(a), int(M - a))[M] for a in n]))
            log_terms.append(-gammaln(n + 1) - gammaln(M - n + 1))
            n_axes.append(n)
        if cfg.topology == "circular":
            subs = ",".join(f"{letters[i]}z" for i in range(B)) + ",z->" + letters[:B]
            F = np.einsum(subs, *mats, phase)
        else:
            F = mats[0]
            for mat in mats[1:]:
                F = np.multiply.outer(F, mat)
        logm = log_terms[0]
        for lt in log_terms[1:]:
            logm = np.add.outer(logm, lt)
        with np.errstate(divide="ignore"):
            logF = np.log(np.clip(F, 0.0, None))
        grids = np.meshgrid(*n_axes, indexing="ij")
        cols = []
        for grid, M in zip(grids, totals):
            cols.append(grid.ravel())
            cols.append(M - grid.ravel())
        all_counts.append(np.stack(cols, axis=1))
        all_logp.append((log_L + logm + logF).ravel())
    return np.concatenate(all_counts), np.concatenate(all_logp)


def chain_most_probable(cfg: ChainConfig, L: int, rtol: float = TIE_RTOL) -> list:
    """Co-maximal chain partitions as tuples of ``(n_s, m_s)`` pairs, sorted."""
    counts, logp = chain_partition_table(cfg, L)
    best = logp.max()
    keep = counts[logp >= best + math.log1p(-rtol)]
    return sorted(tuple((int(r[2 * i]), int(r[2 * i + 1])) for i in range(cfg.n_bonds)) for r in keep)


def chain_symmetry_orbit(partition) -> set:
    """Images of a ring partition under per-bond ``(n, m)`` swaps and bond permutations."""
    pairs = _pairs(partition)
    orbit = set()
    for perm in itertools.permutations(pairs):
        for flips in itertools.product((False, True), repeat=len(pairs)):
            orbit.add(tuple((m, n) if f else (n, m) for (n, m), f in zip(perm, flips)))
    return orbit


def uniform_ring() -> PhaseDistribution:
    """Equal populations and a uniformly random relative phase."""
    return PhaseDistribution(BaseMeasure.ring(math.pi / 2))
