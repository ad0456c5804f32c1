"""Quantum-jump Monte Carlo over detection histories.

For Poisson-mixed initial states the total detection rate is autonomous,
``Gamma R**2 exp(-Gamma t)``, and does not depend on the phase distribution.
A trajectory therefore first draws all detection instants and then walks
through them in order: at each instant the channel is chosen from the
expectations of the detection factors under the current conditional
distribution, and the distribution is multiplied by the chosen factor.

Random streams
--------------
Trajectory ``i`` of a run with seed ``s`` draws from
``PCG64(SeedSequence(s, spawn_key=(i,)))``.  Within a trajectory the draws
are, in order: the detection count, the detection times, then one uniform
per detection for the channel choice (also consumed under the
most-probable policy, where it only breaks exact ties).
"""

from __future__ import annotations

import math
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .bloch import TWO_PI, CouplingSpec, DetectorSetup
from .detstat import ChainConfig, Partition, SourceParams, chain_history_weight
from .distribution import (
    BaseMeasure,
    PhaseDistribution,
    apply_detection,
    branching_probabilities,
    find_peaks,
)

TIE_ATOL = 1e-12


def trajectory_rng(seed: int, index: int) -> np.random.Generator:
    """Independent generator for trajectory ``index`` of a run seeded with ``seed``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=(int(index),))))


def sample_detection_times(p: SourceParams, rng: np.random.Generator) -> np.ndarray:
    """Poisson number of detections with exponentially distributed instants on ``[0, T]``."""
    L = int(rng.poisson(p.mean_count))
    frac = -math.expm1(-p.Gamma * p.T)
    u = rng.random(L)
    # inverse CDF of Gamma e^{-Gamma t} / (1 - e^{-Gamma T})
    t = -np.log1p(-u * frac) / p.Gamma
    return np.sort(np.minimum(t, p.T))


def uniform_detection_times(L: int, T: float, rng: np.random.Generator) -> np.ndarray:
    return np.sort(rng.uniform(0.0, T, size=L))


@dataclass(frozen=True)
class DetectionEvent:
    t: float
    channel: str


@dataclass(frozen=True)
class TrajectoryConfig:
    """One quantum-jump experiment.

    ``time_law`` is ``"decay"`` (Poisson count, exponential instants) or
    ``"uniform"`` (exactly ``n_detections`` instants uniform on ``[0, T]``,
    the protocol used for the coupled-mode phase plots).
    """

    source: SourceParams
    setup: DetectorSetup
    policy: str = "sample"
    seed: int = 0
    initial_base: BaseMeasure = field(default_factory=BaseMeasure.ring)
    coupling: Optional[CouplingSpec] = None
    time_law: str = "decay"
    n_detections: Optional[int] = None

    def __post_init__(self):
        if self.policy not in ("sample", "most_probable"):
            raise ValueError(f"unknown policy {self.policy!r}")
        if self.time_law not in ("decay", "uniform"):
            raise ValueError(f"unknown time law {self.time_law!r}")
        if self.time_law == "uniform" and (self.n_detections is None or self.n_detections < 0):
            raise ValueError("the uniform time law needs a fixed n_detections >= 0")


@dataclass
class TrajectoryResult:
    """Outcome of one trajectory.

    ``log_weight`` is the log probability of the ordered channel sequence
    (the product of step-wise branching probabilities); under the decay
    time law the log density of the detection instants is added, giving
    the full history density.
    """

    events: list
    final_dist: object
    partition: Partition
    log_weight: float
    channel_ids: tuple = ()

    @property
    def L(self) -> int:
        return len(self.events)


def _choose(probs: np.ndarray, policy: str, rng: np.random.Generator) -> int:
    u = rng.random()
    if policy == "sample":
        idx = int(np.searchsorted(np.cumsum(probs), u * probs.sum(), side="right"))
        idx = min(idx, len(probs) - 1)
        # never pick a zero-probability channel through rounding
        while probs[idx] <= 0.0:
            idx -= 1
        return idx
    best = np.flatnonzero(probs >= probs.max() - TIE_ATOL)
    return int(best[min(int(u * len(best)), len(best) - 1)])


def _draw_times(cfg_source: SourceParams, time_law: str, n_detections, rng) -> np.ndarray:
    if time_law == "decay":
        return sample_detection_times(cfg_source, rng)
    return uniform_detection_times(int(n_detections), cfg_source.T, rng)


def _time_log_density(src: SourceParams, times: np.ndarray) -> float:
    return -src.mean_count + math.fsum(math.log(src.Gamma * src.R ** 2) - src.Gamma * float(t) for t in times)


def run_trajectory(cfg: TrajectoryConfig, index: int = 0, times: Optional[Sequence[float]] = None) -> TrajectoryResult:
    """Simulate one detection history and its conditional phase distribution.

    ``times`` overrides the sampled detection instants (the channel choices
    still use the trajectory's random stream).
    """
    rng = trajectory_rng(cfg.seed, index)
    if times is None:
        times = _draw_times(cfg.source, cfg.time_law, cfg.n_detections, rng)
    times = np.asarray(times, dtype=float)
    channels = tuple(cfg.setup)
    dist = PhaseDistribution(cfg.initial_base)
    counts = [0] * len(channels)
    events = []
    log_w = 0.0
    for t in times:
        probs = branching_probabilities(dist, channels, float(t))
        s = _choose(probs, cfg.policy, rng)
        log_w += math.log(probs[s])
        dist = apply_detection(dist, channels[s], float(t))
        counts[s] += 1
        events.append(DetectionEvent(float(t), channels[s].id))
    if cfg.time_law == "decay":
        log_w += _time_log_density(cfg.source, times)
    return TrajectoryResult(events, dist, Partition(tuple(counts)), log_w, tuple(c.id for c in channels))


# ---------------------------------------------------------------------------
# chains
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ChainPhaseDistribution:
    """Joint relative-phase distribution of a chain after detections.

    Stored as per-bond counts ``(n_s, m_s)``; bond ``s`` contributes the
    factor ``cos**2n_s((Phi_s - xi_s)/2) sin**2m_s((Phi_s - xi_s)/2)``.  On a
    ring the phases are tied by ``sum(Phi_s) = 0 mod 2 pi`` and every
    expectation goes through the Fourier reduction.
    """

    config: ChainConfig
    counts: tuple = ()

    def __post_init__(self):
        counts = tuple(tuple(int(c) for c in pair) for pair in self.counts) or ((0, 0),) * self.config.n_bonds
        if len(counts) != self.config.n_bonds:
            raise ValueError("one (n, m) pair per bond expected")
        object.__setattr__(self, "counts", counts)

    @property
    def channel_ids(self) -> tuple:
        return tuple(f"{s + 1}{sign}" for s in range(self.config.n_bonds) for sign in "+-")

    def weight(self) -> float:
        return chain_history_weight(self.config, self.counts)

    def apply(self, bond: int, sign: str) -> "ChainPhaseDistribution":
        counts = [list(p) for p in self.counts]
        counts[bond][0 if sign == "+" else 1] += 1
        return ChainPhaseDistribution(self.config, tuple(tuple(p) for p in counts))

    def branching_probabilities(self) -> np.ndarray:
        """Next-detection probabilities in channel order ``1+, 1-, 2+, ...``."""
        base = self.weight()
        if not base > 0:
            raise ArithmeticError("chain distribution annihilated")
        B = self.config.n_bonds
        p = np.array([self.apply(s, sign).weight() / base / B for s in range(B) for sign in "+-"])
        p = np.clip(p, 0.0, None)
        return p / p.sum()

    def bond_marginal(self, bond: int, grid_size: int = 256) -> tuple:
        """Normalized density of ``Phi_bond`` on a periodic grid."""
        x = TWO_PI * np.arange(grid_size) / grid_size
        n, m = self.counts[bond]
        xi = self.config.xi[bond]
        own = np.cos((x - xi) / 2) ** (2 * n) * np.sin((x - xi) / 2) ** (2 * m)
        if self.config.topology == "circular":
            from .detstat import _coefficient

            others = [(p, self.config.xi[j]) for j, p in enumerate(self.counts) if j != bond]
            d = sum(a + b for (a, b), _ in others)
            k = np.arange(-d, d + 1)
            coef = np.ones(len(k), dtype=complex)
            for (a, b), xj in others:
                coef = coef * _coefficient(a, b, k) * np.exp(-1j * k * xj)
            # density of the sum of the other phases, evaluated at -x
            rest = np.real(np.exp(-1j * np.outer(x, k)) @ coef)
            own = own * np.clip(rest, 0.0, None)
        total = own.sum() * TWO_PI / grid_size
        return x, own / total


@dataclass(frozen=True)
class ChainTrajectoryConfig:
    chain: ChainConfig
    source: SourceParams
    policy: str = "sample"
    seed: int = 0
    time_law: str = "decay"
    n_detections: Optional[int] = None

    def __post_init__(self):
        if self.policy not in ("sample", "most_probable"):
            raise ValueError(f"unknown policy {self.policy!r}")
        if self.time_law not in ("decay", "uniform"):
            raise ValueError(f"unknown time law {self.time_law!r}")
        if self.time_law == "uniform" and self.n_detections is None:
            raise ValueError("the uniform time law needs a fixed n_detections")


def chain_trajectory(cfg: ChainTrajectoryConfig, index: int = 0, times: Optional[Sequence[float]] = None) -> TrajectoryResult:
    """Quantum-jump trajectory on a linear or circular chain of modes.

    ``source.R**2`` is the mean total particle number of all modes together.
    """
    rng = trajectory_rng(cfg.seed, index)
    if times is None:
        times = _draw_times(cfg.source, cfg.time_law, cfg.n_detections, rng)
    dist = ChainPhaseDistribution(cfg.chain)
    ids = dist.channel_ids
    events, log_w = [], 0.0
    for t in times:
        probs = dist.branching_probabilities()
        s = _choose(probs, cfg.policy, rng)
        log_w += math.log(probs[s])
        dist = dist.apply(s // 2, "+-"[s % 2])
        events.append(DetectionEvent(float(t), ids[s]))
    if cfg.time_law == "decay":
        log_w += _time_log_density(cfg.source, np.asarray(times))
    flat = tuple(c for pair in dist.counts for c in pair)
    return TrajectoryResult(events, dist, Partition(flat), log_w, ids)


# ---------------------------------------------------------------------------
# ensembles
# ---------------------------------------------------------------------------

@dataclass
class EnsembleStats:
    """Order-independent summary of many trajectories."""

    n_traj: int
    count_hist: Counter
    partition_counts: Counter
    peak_phis: list
    channel_ids: tuple
    results: Optional[list] = None

    def partition_frequencies(self, L: int) -> dict:
        """Empirical law of partitions among trajectories with exactly ``L`` detections."""
        sub = {counts: n for (ll, counts), n in self.partition_counts.items() if ll == L}
        total = sum(sub.values())
        return {k: v / total for k, v in sub.items()} if total else {}

    def peak_histogram(self, bins: int = 36) -> tuple:
        phis = [p for p in self.peak_phis if p is not None]
        return np.histogram(phis, bins=bins, range=(0.0, TWO_PI))

    def to_json(self) -> dict:
        hist, edges = self.peak_histogram()
        return {
            "n_traj": self.n_traj,
            "channel_ids": list(self.channel_ids),
            "count_hist": {str(k): v for k, v in sorted(self.count_hist.items())},
            "partition_counts": [
                {"L": L, "counts": list(c), "n": n} for (L, c), n in sorted(self.partition_counts.items())
            ],
            "peak_histogram": {"edges": edges.tolist(), "counts": hist.tolist()},
        }


def _one(args) -> tuple:
    cfg, index, with_peaks, keep = args
    if isinstance(cfg, ChainTrajectoryConfig):
        res = chain_trajectory(cfg, index)
        peak = None
    else:
        res = run_trajectory(cfg, index)
        peak = None
        if with_peaks and res.final_dist.base.kind != "point":
            peaks = find_peaks(res.final_dist)
            peak = peaks[0].phi if peaks else None
    return index, res.L, res.partition.counts, peak, (res if keep else None), res.channel_ids


def run_ensemble(
    cfg: Union[TrajectoryConfig, ChainTrajectoryConfig],
    n_traj: int,
    jobs: int = 1,
    with_peaks: bool = True,
    keep_results: bool = False,
) -> EnsembleStats:
    """Run ``n_traj`` independent trajectories and reduce their statistics."""
    if n_traj < 1:
        raise ValueError("n_traj must be at least 1")
    tasks = [(cfg, i, with_peaks, keep_results) for i in range(n_traj)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            out = list(ex.map(_one, tasks, chunksize=max(1, n_traj // (4 * jobs))))
    else:
        out = [_one(t) for t in tasks]
    out.sort(key=lambda r: r[0])
    count_hist = Counter(r[1] for r in out)
    partition_counts = Counter((r[1], r[2]) for r in out)
    return EnsembleStats(
        n_traj,
        count_hist,
        partition_counts,
        [r[3] for r in out],
        out[0][5],
        [r[4] for r in out] if keep_results else None,
    )


def coupled_mode_config(
    coupling: CouplingSpec,
    n_detections: int = 10,
    T: Optional[float] = None,
    seed: int = 0,
    policy: str = "most_probable",
    R: float = 1.0,
    Gamma: float = 1.0,
) -> TrajectoryConfig:
    """Phase-plot protocol for continuously coupled modes.

    ``n_detections`` instants are drawn uniformly over ``T`` (one tunneling
    period ``2 pi / delta`` by default) and, under the default policy, each detection goes to
    the most probable channel at its instant.  ``R`` and ``Gamma`` do not
    influence the phase distribution under this protocol.
    """
    from .bloch import continuous_coupled_setup

    if coupling.mode != "continuous":
        coupling = CouplingSpec(coupling.delta, coupling.epsilon, "continuous")
    if T is None:
        if coupling.delta <= 0:
            raise ValueError("T must be given when delta is zero")
        T = TWO_PI / coupling.delta
    return TrajectoryConfig(
        source=SourceParams(R, Gamma, T),
        setup=continuous_coupled_setup(coupling),
        policy=policy,
        seed=seed,
        initial_base=BaseMeasure.ring(),
        coupling=coupling,
        time_law="uniform",
        n_detections=n_detections,
    )
