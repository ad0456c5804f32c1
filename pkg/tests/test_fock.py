import math

import numpy as np
import pytest

from phaselab.bloch import (
    SphericalDirection,
    UnitVector3,
    direction_to_vector,
    two_beam_splitter_setup,
    single_beam_splitter_setup,
)
from phaselab.detstat import SourceParams
from phaselab.distribution import BaseMeasure
from phaselab.fock import (
    InsufficientTruncation,
    PoissonMixedState,
    TwoModeFockVector,
    apply_annihilation,
    apply_mode_creator,
    detection_factor_oracle,
    history_density,
    history_prob_oracle,
    poisson_tail,
    required_nmax,
    run_oracle_suite,
    scs_amplitudes,
)

SETUP = two_beam_splitter_setup(math.pi / 2)


def basis(N, n):
    """|n, N - n> as amplitudes over n = 0..N."""
    v = np.zeros(N + 1, dtype=complex)
    v[n] = 1.0
    return v


def test_scs_examples():
    assert np.allclose(scs_amplitudes(4, 0.0, 1.0).amplitudes, basis(4, 4))
    phi = 0.7
    one = scs_amplitudes(1, math.pi / 2, phi).amplitudes
    assert np.allclose(one, (basis(1, 1) + np.exp(1j * phi) * basis(1, 0)) / math.sqrt(2))
    south = scs_amplitudes(3, math.pi, 0.0).amplitudes
    assert abs(abs(south[0]) - 1.0) < 1e-15 and np.allclose(south[1:], 0.0)


def test_scs_norms_and_populations():
    rng = np.random.default_rng(0)
    worst_norm = worst_pop = 0.0
    for _ in range(1000):
        N = int(rng.integers(0, 61))
        theta, phi = rng.uniform(0, math.pi), rng.uniform(0, 2 * math.pi)
        v = scs_amplitudes(N, theta, phi)
        worst_norm = max(worst_norm, abs(v.norm() - 1.0))
        if N:
            worst_pop = max(worst_pop, abs(v.mean_na() - N * math.cos(theta / 2) ** 2))
    assert worst_norm < 1e-12
    assert worst_pop < 1e-10


def test_annihilation_examples():
    out = apply_annihilation(TwoModeFockVector(1, basis(1, 1)), "a")
    assert out.N == 0 and np.allclose(out.amplitudes, [1.0])
    got = apply_annihilation(scs_amplitudes(5, math.pi / 2, 0.0), "a").amplitudes
    assert np.max(np.abs(got - math.sqrt(5) / math.sqrt(2) * scs_amplitudes(4, math.pi / 2, 0.0).amplitudes)) < 1e-12
    zero = apply_annihilation(scs_amplitudes(6, 0.0, 0.0), "b")
    assert np.allclose(zero.amplitudes, 0.0)
    vac = apply_annihilation(TwoModeFockVector(0, [1.0]), "a")
    assert np.allclose(vac.amplitudes, 0.0)
    with pytest.raises(ValueError):
        apply_annihilation(vac, "c")
    with pytest.raises(ValueError):
        TwoModeFockVector(2, [1.0])


def test_creation_from_vacuum_builds_scs():
    rng = np.random.default_rng(1)
    for N in range(31):
        theta, phi = rng.uniform(0, math.pi), rng.uniform(0, 2 * math.pi)
        u = direction_to_vector(SphericalDirection(theta, phi))
        v = TwoModeFockVector(0, [1.0])
        for _ in range(N):
            v = apply_mode_creator(v, u)
        built = v.amplitudes / math.sqrt(math.factorial(N))
        assert np.max(np.abs(built - scs_amplitudes(N, theta, phi).amplitudes)) < 1e-10


def test_detection_factor_examples():
    R = 1.5
    u = direction_to_vector(SphericalDirection(1.0, 2.0))
    state = PoissonMixedState(R, 1.0, 2.0)
    perp = UnitVector3.from_array(np.cross(u.as_array(), [0, 0, 1]) / np.linalg.norm(np.cross(u.as_array(), [0, 0, 1])))
    assert detection_factor_oracle(state, u) == pytest.approx(R**2, abs=1e-10)
    assert detection_factor_oracle(state, -u) == pytest.approx(0.0, abs=1e-10)
    assert detection_factor_oracle(state, perp) == pytest.approx(R**2 / 2, abs=1e-10)


def test_truncation_rule():
    for R in (0.5, 1.0, 2.0, 3.0):
        assert poisson_tail(R, required_nmax(R)) < 1e-12
    with pytest.raises(InsufficientTruncation, match="insufficient N_max"):
        PoissonMixedState(1.0, 0.0, 0.0, N_max=5)
    with pytest.raises(ValueError):
        PoissonMixedState(0.0, 0.0, 0.0)


def test_history_oracle_examples():
    R, Gamma, T = 1.2, 1.0, 2.0
    mu = SourceParams(R, Gamma, T).mean_count
    assert history_prob_oracle(R, SETUP, [], Gamma, T) == pytest.approx(math.exp(-mu), rel=1e-10)
    t1 = 0.6
    time_factor = math.exp(-mu) * Gamma * R**2 * math.exp(-Gamma * t1)
    assert history_prob_oracle(R, SETUP, [(t1, 0)], Gamma, T) == pytest.approx(0.25 * time_factor, rel=1e-9)
    events = [(0.3, 0), (1.1, 0)]
    ref = history_density(R, SETUP, events, Gamma, T)
    assert history_prob_oracle(R, SETUP, events, Gamma, T) == pytest.approx(ref, rel=1e-7)


def test_history_oracle_other_bases():
    events = [(0.2, 0), (0.5, 1), (0.9, 0)]
    setup = single_beam_splitter_setup(0.4)
    for base in (BaseMeasure.uniform_sphere(), BaseMeasure.point(1.2, 0.3), BaseMeasure.ring(1.0)):
        ref = history_density(1.0, setup, events, 1.0, 1.5, base=base)
        got = history_prob_oracle(1.0, setup, events, 1.0, 1.5, base=base)
        assert got == pytest.approx(ref, rel=1e-7)


def test_history_oracle_rejects_bad_input():
    with pytest.raises(ValueError):
        history_prob_oracle(1.0, SETUP, [(1.0, 0), (0.5, 1)], 1.0, 2.0)
    from phaselab.bloch import CouplingSpec, continuous_coupled_setup

    with pytest.raises(ValueError):
        history_prob_oracle(1.0, continuous_coupled_setup(CouplingSpec(1.0, 0, "continuous")), [], 1.0, 1.0)


def test_oracle_suite_quick_and_refusal():
    report = run_oracle_suite(R_values=(0.5,), n_pairs=10, history_L=3)
    assert report["passed"] and report["max_deviation"] < 1e-8
    with pytest.raises(InsufficientTruncation):
        run_oracle_suite(R_values=(0.5,), n_pairs=2, history_L=1, N_max=3)
