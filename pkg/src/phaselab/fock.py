"""Brute-force verification in a truncated two-mode Fock basis.

Everything here works with explicit amplitudes over ``|n, N - n>`` and
explicit density-matrix blocks per particle number, independently of the
sphere calculus in :mod:`phaselab.distribution`.  It is slow and only meant
for small ``R`` and short histories.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .bloch import SphericalDirection, UnitVector3, direction_to_vector
from .distribution import BaseMeasure, PhaseDistribution, _gauss_legendre
from .detstat import SourceParams, log_history_weight


class InsufficientTruncation(ValueError):
    """The Fock cutoff is too small for the requested Poisson mixture."""


@dataclass(frozen=True)
class TwoModeFockVector:
    """Amplitudes over ``|n, N - n>`` for ``n = 0..N`` (``n`` counts mode A)."""

    N: int
    amplitudes: np.ndarray

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=complex)
        if amps.shape != (self.N + 1,):
            raise ValueError(f"expected {self.N + 1} amplitudes, got shape {amps.shape}")
        object.__setattr__(self, "amplitudes", amps)

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def mean_na(self) -> float:
        p = np.abs(self.amplitudes) ** 2
        return float(p @ np.arange(self.N + 1) / p.sum())


def scs_amplitudes(N: int, theta: float, phi: float) -> TwoModeFockVector:
    """Spin-coherent state: ``sqrt(C(N,n)) cos^n(theta/2) sin^(N-n)(theta/2) e^{i(N-n)phi}``."""
    if N < 0:
        raise ValueError("N must be non-negative")
    n = np.arange(N + 1)
    binom = np.array([math.comb(N, int(k)) for k in n], dtype=float)
    c, s = math.cos(theta / 2), math.sin(theta / 2)
    amps = np.sqrt(binom) * c ** n * s ** (N - n) * np.exp(1j * (N - n) * phi)
    return TwoModeFockVector(N, amps)


def apply_annihilation(v: TwoModeFockVector, mode: str) -> TwoModeFockVector:
    """``a`` or ``b`` acting on ``v``; the result lives in the ``N - 1`` sector and is unnormalized."""
    if mode not in ("a", "b"):
        raise ValueError(f"mode must be 'a' or 'b', got {mode!r}")
    N = v.N
    if N == 0:
        return TwoModeFockVector(0, np.zeros(1, dtype=complex))
    n = np.arange(N + 1)
    if mode == "a":
        # a|n, N-n> = sqrt(n) |n-1, N-n>
        out = (np.sqrt(n) * v.amplitudes)[1:]
    else:
        # b|n, N-n> = sqrt(N-n) |n, N-n-1>
        out = (np.sqrt(N - n) * v.amplitudes)[:-1]
    return TwoModeFockVector(N - 1, out)


def apply_creation(v: TwoModeFockVector, mode: str) -> TwoModeFockVector:
    if mode not in ("a", "b"):
        raise ValueError(f"mode must be 'a' or 'b', got {mode!r}")
    N = v.N
    out = np.zeros(N + 2, dtype=complex)
    n = np.arange(N + 1)
    if mode == "a":
        out[1:] = np.sqrt(n + 1) * v.amplitudes
    else:
        out[:-1] = np.sqrt(N - n + 1) * v.amplitudes
    return TwoModeFockVector(N + 1, out)


def _mode_coefficients(u0: UnitVector3) -> tuple:
    """``c(u0) = ca * a + cb * b``, the annihilator whose number states are the SCS along ``u0``."""
    d = u0.to_direction()
    return math.cos(d.theta / 2), math.sin(d.theta / 2) * np.exp(-1j * d.phi)


def apply_mode_annihilator(v: TwoModeFockVector, u0: UnitVector3) -> TwoModeFockVector:
    ca, cb = _mode_coefficients(u0)
    a = apply_annihilation(v, "a").amplitudes
    b = apply_annihilation(v, "b").amplitudes
    return TwoModeFockVector(max(v.N - 1, 0), ca * a + cb * b)


def apply_mode_creator(v: TwoModeFockVector, u0: UnitVector3) -> TwoModeFockVector:
    ca, cb = _mode_coefficients(u0)
    a = apply_creation(v, "a").amplitudes
    b = apply_creation(v, "b").amplitudes
    return TwoModeFockVector(v.N + 1, np.conj(ca) * a + np.conj(cb) * b)


def annihilator_matrix(N: int, u0: UnitVector3) -> np.ndarray:
    """Matrix of ``c(u0)`` from the ``N`` sector to the ``N - 1`` sector."""
    ca, cb = _mode_coefficients(u0)
    mat = np.zeros((N, N + 1), dtype=complex)
    for n in range(N + 1):
        if n >= 1:
            mat[n - 1, n] += ca * math.sqrt(n)
        if n <= N - 1:
            mat[n, n] += cb * math.sqrt(N - n)
    return mat


def required_nmax(R: float) -> int:
    """Cutoff rule ``R**2 + 12 R + 20``; leaves a Poisson tail far below 1e-12."""
    return int(math.ceil(R * R + 12 * R + 20))


def poisson_tail(R: float, N_max: int) -> float:
    from scipy.stats import poisson

    return float(poisson.sf(N_max, R * R))


@dataclass(frozen=True)
class PoissonMixedState:
    """Poisson mixture of spin-coherent states, truncated at ``N_max`` particles."""

    R: float
    theta: float
    phi: float
    N_max: Optional[int] = None

    def __post_init__(self):
        if self.R <= 0:
            raise ValueError("R must be positive")
        need = required_nmax(self.R)
        if self.N_max is None:
            object.__setattr__(self, "N_max", need)
        elif self.N_max < need:
            raise InsufficientTruncation(
                f"insufficient N_max: {self.N_max} < {need} required for R={self.R}"
            )

    def weights(self) -> np.ndarray:
        N = np.arange(self.N_max + 1)
        lg = np.array([math.lgamma(k + 1) for k in N])
        return np.exp(-self.R ** 2 + 2 * N * math.log(self.R) - lg)


def detection_factor_oracle(state: PoissonMixedState, u0: UnitVector3) -> float:
    """``Tr[c(u0) rho c(u0)^dagger]`` by explicit summation over particle numbers.

    Should equal ``(R**2 / 2)(1 + u . u0)``.
    """
    total = 0.0
    for N, pN in enumerate(state.weights()):
        if N == 0:
            continue
        out = apply_mode_annihilator(scs_amplitudes(N, state.theta, state.phi), u0)
        total += pN * out.norm() ** 2
    return total


def _base_nodes(base: BaseMeasure, N_max: int) -> tuple:
    """Quadrature nodes and weights reproducing the base measure exactly up to ``N_max`` particles."""
    if base.kind == "point":
        return np.array([base.theta0]), np.array([base.phi0]), np.array([1.0])
    n_phi = 2 * N_max + 2
    phi = 2 * math.pi * np.arange(n_phi) / n_phi
    if base.kind == "ring":
        return np.full(n_phi, base.theta0), phi, np.full(n_phi, 1.0 / n_phi)
    x, w = _gauss_legendre(N_max // 2 + 2)
    theta = np.repeat(np.arccos(x), n_phi)
    phis = np.tile(phi, len(x))
    wts = np.repeat(w, n_phi) / (2.0 * n_phi)
    return theta, phis, wts


def initial_density_blocks(R: float, base: BaseMeasure, N_max: Optional[int] = None) -> list:
    """Blocks ``rho_N`` of ``int f rho(R, theta, phi)`` for ``N = 0..N_max``."""
    state = PoissonMixedState(R, base.theta0, base.phi0, N_max)
    theta, phi, w = _base_nodes(base, state.N_max)
    blocks = []
    for N, pN in enumerate(state.weights()):
        A = np.stack([scs_amplitudes(N, t, p).amplitudes for t, p in zip(theta, phi)])
        blocks.append(pN * (A.T * w) @ A.conj())
    return blocks


def history_prob_oracle(
    R: float,
    setup: Sequence,
    events: Sequence[tuple],
    Gamma: float,
    T: float,
    base: Optional[BaseMeasure] = None,
    N_max: Optional[int] = None,
) -> float:
    """Density of an ordered detection history from explicit quantum jumps.

    ``events`` is a time-ordered list of ``(t, channel_index)``.  Between
    detections each ``N`` block decays as ``exp(-Gamma N dt)``; a detection
    in channel ``s`` maps ``rho_N`` to ``Gamma * 2 w_s * c_s rho_N c_s^dagger``
    in the ``N - 1`` block.  The trace at ``T`` is the history density.
    """
    channels = tuple(setup)
    if not all(c.is_static for c in channels):
        raise ValueError("history_prob_oracle needs time-independent channel directions")
    if base is None:
        base = BaseMeasure.ring()
    blocks = initial_density_blocks(R, base, N_max)
    sizes = np.arange(len(blocks))
    t_prev = 0.0
    for t, s in events:
        if t < t_prev or t > T:
            raise ValueError("events must be time-ordered inside [0, T]")
        damp = np.exp(-Gamma * sizes * (t - t_prev))
        ch = channels[s]
        u = ch.direction_at(t)
        new = []
        for N in range(1, len(blocks)):
            C = annihilator_matrix(N, u)
            new.append(Gamma * 2.0 * ch.weight * damp[N] * (C @ blocks[N] @ C.conj().T))
        blocks = new
        sizes = np.arange(len(blocks))
        t_prev = t
    damp = np.exp(-Gamma * sizes * (T - t_prev))
    return float(math.fsum(float(np.trace(b).real) * d for b, d in zip(blocks, damp)))


def history_density(
    R: float, setup: Sequence, events: Sequence[tuple], Gamma: float, T: float, base: Optional[BaseMeasure] = None
) -> float:
    """The same density from the factorized closed form ``F * exp(-mu) * prod(Gamma R^2 e^{-Gamma t_i})``."""
    if base is None:
        base = BaseMeasure.ring()
    channels = tuple(setup)
    counts = [0] * len(channels)
    for _, s in events:
        counts[s] += 1
    src = SourceParams(R, Gamma, T)
    log_f = log_history_weight(PhaseDistribution(base), channels, counts)
    log_time = -src.mean_count + math.fsum(math.log(Gamma * R * R) - Gamma * t for t, _ in events)
    return math.exp(log_f + log_time)


def _random_unit_vectors(rng: np.random.Generator, n: int) -> list:
    v = rng.normal(size=(n, 3))
    v /= np.linalg.norm(v, axis=1)[:, None]
    return [UnitVector3.from_array(x) for x in v]


def run_oracle_suite(
    R_values: Sequence[float] = (0.5, 1.0, 2.0),
    n_pairs: int = 100,
    seed: int = 0,
    N_max: Optional[int] = None,
    history_L: int = 6,
) -> dict:
    """Run every Fock-basis check and report the worst deviation of each."""
    from .bloch import single_beam_splitter_setup, two_beam_splitter_setup

    rng = np.random.default_rng(seed)
    checks = []

    def record(name, dev, tol):
        checks.append({"name": name, "max_deviation": float(dev), "tol": tol, "passed": bool(dev <= tol)})

    # norms and populations of spin-coherent states
    dev_norm, dev_pop = 0.0, 0.0
    for _ in range(200):
        N = int(rng.integers(0, 61))
        theta, phi = rng.uniform(0, math.pi), rng.uniform(0, 2 * math.pi)
        v = scs_amplitudes(N, theta, phi)
        dev_norm = max(dev_norm, abs(v.norm() - 1.0))
        if N:
            dev_pop = max(dev_pop, abs(v.mean_na() - N * math.cos(theta / 2) ** 2))
    record("scs_norm", dev_norm, 1e-12)
    record("scs_binomial_population", dev_pop, 1e-10)

    # annihilation of a spin-coherent state
    dev = 0.0
    for _ in range(50):
        N = int(rng.integers(1, 31))
        theta, phi = rng.uniform(0, math.pi), rng.uniform(0, 2 * math.pi)
        v = scs_amplitudes(N, theta, phi)
        lower = scs_amplitudes(N - 1, theta, phi).amplitudes
        ea = math.sqrt(N) * math.cos(theta / 2) * lower
        eb = math.sqrt(N) * math.sin(theta / 2) * np.exp(1j * phi) * lower
        dev = max(dev, np.max(np.abs(apply_annihilation(v, "a").amplitudes - ea)),
                  np.max(np.abs(apply_annihilation(v, "b").amplitudes - eb)))
    record("annihilation_on_scs", dev, 1e-12)

    # N-fold creation from vacuum
    dev = 0.0
    for _ in range(20):
        N = int(rng.integers(0, 31))
        theta, phi = rng.uniform(0, math.pi), rng.uniform(0, 2 * math.pi)
        u = direction_to_vector(SphericalDirection(theta, phi))
        v = TwoModeFockVector(0, np.ones(1))
        for _ in range(N):
            v = apply_mode_creator(v, u)
        built = v.amplitudes / math.sqrt(math.factorial(N))
        # to_direction() may shift phi by 2 pi only, so the phases agree exactly
        dev = max(dev, np.max(np.abs(built - scs_amplitudes(N, theta, phi).amplitudes)))
    record("creation_builds_scs", dev, 1e-10)

    # detection factor
    dev = 0.0
    for R in R_values:
        for u, u0 in zip(_random_unit_vectors(rng, n_pairs), _random_unit_vectors(rng, n_pairs)):
            d = u.to_direction()
            state = PoissonMixedState(R, d.theta, d.phi, N_max if N_max is not None else None)
            got = detection_factor_oracle(state, u0)
            dev = max(dev, abs(got - 0.5 * R * R * (1.0 + u.dot(u0))))
    record("detection_factor", dev, 1e-8)

    # full history densities
    dev = 0.0
    Gamma, T = 1.0, 1.5
    setups = (two_beam_splitter_setup(math.pi / 2), single_beam_splitter_setup(0.0))
    for R in R_values:
        if R > 2:
            continue
        for setup in setups:
            for L in range(0, history_L + 1):
                times = np.sort(rng.uniform(0, T, size=L))
                chans = rng.integers(0, len(setup), size=L)
                events = list(zip(times.tolist(), chans.tolist()))
                got = history_prob_oracle(R, setup, events, Gamma, T, N_max=N_max)
                want = history_density(R, setup, events, Gamma, T)
                dev = max(dev, abs(got - want) / want)
    record("history_density_relative", dev, 1e-7)

    return {"passed": all(c["passed"] for c in checks), "checks": checks,
            "max_deviation": max(c["max_deviation"] for c in checks)}
