"""Conditional phase distributions over the Bloch sphere.

A distribution is kept symbolically as a base measure times a product of
detection factors ``((1 + u . v_i) / 2) ** k_i``.  Grids are only ever
derived views of that product, so long detection histories accumulate no
discretisation error.

On a ring of fixed polar angle every factor is a degree-one trigonometric
polynomial in the azimuth, so averaging the product over more equally
spaced azimuths than its degree gives the ring integral exactly; the Fourier
coefficient product is kept as an independent representation.  Full-sphere integrals use
Gauss-Legendre nodes in ``cos(theta)`` and a periodic grid in ``phi``, which
is exact for polynomial integrands of the degrees that occur here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import logsumexp

from .bloch import (
    TWO_PI,
    DetectorChannel,
    SphericalDirection,
    UnitVector3,
    direction_to_vector,
    reduce_angle,
)


class DistributionAnnihilated(ArithmeticError):
    """The conditional distribution vanishes identically (an impossible history)."""


@dataclass(frozen=True)
class BaseMeasure:
    """Initial distribution before any detection.

    ``uniform_sphere`` is the constant density 1 w.r.t. ``dOmega`` (total
    mass ``4 pi``).  ``ring`` is uniform in ``phi`` at polar angle
    ``theta0`` with mass 1 under ``dphi / 2pi``; ``ring(pi/2)`` is the
    factorized two-mode state with equal populations and random relative
    phase.  ``point`` is a unit point mass.
    """

    kind: str
    theta0: float = math.pi / 2
    phi0: float = 0.0

    def __post_init__(self):
        if self.kind not in ("uniform_sphere", "ring", "point"):
            raise ValueError(f"unknown base measure kind {self.kind!r}")
        if not (0.0 <= self.theta0 <= math.pi):
            raise ValueError("theta0 must lie in [0, pi]")
        object.__setattr__(self, "phi0", reduce_angle(self.phi0))

    @classmethod
    def uniform_sphere(cls) -> "BaseMeasure":
        return cls("uniform_sphere")

    @classmethod
    def ring(cls, theta0: float = math.pi / 2) -> "BaseMeasure":
        return cls("ring", theta0)

    @classmethod
    def point(cls, theta0: float, phi0: float) -> "BaseMeasure":
        return cls("point", theta0, phi0)

    @property
    def mass(self) -> float:
        return 4.0 * math.pi if self.kind == "uniform_sphere" else 1.0


@dataclass(frozen=True)
class DetectionFactor:
    direction: UnitVector3
    exponent: int

    def __post_init__(self):
        if int(self.exponent) != self.exponent or self.exponent < 0:
            raise ValueError(f"exponent must be a non-negative integer, got {self.exponent!r}")


def _factor_values(direction: UnitVector3, xyz: np.ndarray) -> np.ndarray:
    """``(1 + u . v) / 2`` for an array of unit vectors ``xyz`` of shape (..., 3)."""
    val = 0.5 * (1.0 + xyz @ direction.as_array())
    return np.clip(val, 0.0, None)


def _sphere_xyz(theta, phi) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    st = np.sin(theta)
    return np.stack(np.broadcast_arrays(np.cos(phi) * st, np.sin(phi) * st, np.cos(theta)), axis=-1)


@dataclass(frozen=True)
class PhaseDistribution:
    """Unnormalized density ``base * prod_i ((1 + u . v_i) / 2) ** k_i``.

    ``log_weight_prefactor`` carries the channel-weight constants that were
    split off the detection factors, so that ``exp(prefactor) * integral``
    is the history weight.
    """

    base: BaseMeasure
    factors: tuple = ()
    log_weight_prefactor: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "factors", _merge_factors(self.factors))

    @property
    def total_exponent(self) -> int:
        return sum(f.exponent for f in self.factors)

    @cached_property
    def ring_poly(self) -> tuple:
        """Fourier coefficients (index ``k + K``) and log scale of the ring product.

        Built by convolving the per-factor coefficient arrays.  Exact in
        exact arithmetic, but in floating point the constant term can lose
        digits to cancellation; normalization does not use it.
        """
        if self.base.kind != "ring":
            raise ValueError("ring_poly is only defined for ring bases")
        return _ring_product(self.base.theta0, self.factors)

    def log_values(self, xyz: np.ndarray) -> np.ndarray:
        """Log of the factor product at unit vectors ``xyz`` (base excluded)."""
        out = np.zeros(xyz.shape[:-1])
        with np.errstate(divide="ignore"):
            for f in self.factors:
                out = out + f.exponent * np.log(_factor_values(f.direction, xyz))
        return out


def _merge_factors(factors: Sequence[DetectionFactor]) -> tuple:
    merged: dict = {}
    for f in factors:
        if f.exponent == 0:
            continue
        key = (f.direction.x, f.direction.y, f.direction.z)
        if key in merged:
            merged[key] = DetectionFactor(merged[key].direction, merged[key].exponent + f.exponent)
        else:
            merged[key] = f
    return tuple(merged.values())


# ---------------------------------------------------------------------------
# exact ring integrals
# ---------------------------------------------------------------------------

def _rescale(poly: np.ndarray, log_scale: float) -> tuple:
    s = float(np.max(np.abs(poly)))
    if s == 0.0:
        return poly, -math.inf
    return poly / s, log_scale + math.log(s)


def _linear_ring_poly(theta0: float, v: tuple) -> np.ndarray:
    """Coefficients of ``(1 + u(theta0, phi) . v) / 2`` in ``exp(i k phi)``, k = -1, 0, 1."""
    vx, vy, vz = v
    c1 = math.sin(theta0) * complex(vx, -vy) / 4.0
    c0 = (1.0 + math.cos(theta0) * vz) / 2.0
    return np.array([c1.conjugate(), c0, c1])


@lru_cache(maxsize=4096)
def _ring_power(theta0: float, v: tuple, k: int) -> tuple:
    base = _linear_ring_poly(theta0, v)
    result, log_scale = np.array([1.0 + 0j]), 0.0
    sq, sq_scale = base, 0.0
    while k:
        if k & 1:
            result, log_scale = _rescale(np.convolve(result, sq), log_scale + sq_scale)
        k >>= 1
        if k:
            sq, sq_scale = _rescale(np.convolve(sq, sq), 2.0 * sq_scale)
    result.setflags(write=False)
    return result, log_scale


def _ring_product(theta0: float, factors: Sequence[DetectionFactor]) -> tuple:
    poly, log_scale = np.array([1.0 + 0j]), 0.0
    for f in factors:
        p, s = _ring_power(theta0, (f.direction.x, f.direction.y, f.direction.z), f.exponent)
        poly, log_scale = _rescale(np.convolve(poly, p), log_scale + s)
    return poly, log_scale


# ---------------------------------------------------------------------------
# quadrature
# ---------------------------------------------------------------------------

@lru_cache(maxsize=64)
def _gauss_legendre(n: int) -> tuple:
    x, w = np.polynomial.legendre.leggauss(n)
    return x, w


def sphere_grid(total_exponent: int, n_theta: Optional[int] = None, n_phi: Optional[int] = None):
    """Nodes and weights for ``int dOmega`` exact on polynomials of degree ``total_exponent``.

    Returns ``(theta, phi, weights)`` with ``weights`` already including the
    ``2 pi / n_phi`` azimuthal step.
    """
    if n_theta is None:
        n_theta = max(64, total_exponent // 2 + 2)
    if n_phi is None:
        n_phi = max(256, 8 * total_exponent)
    x, w = _gauss_legendre(n_theta)
    theta = np.arccos(x)
    phi = TWO_PI * np.arange(n_phi) / n_phi
    weights = np.outer(w, np.full(n_phi, TWO_PI / n_phi))
    return theta, phi, weights


def ring_grid_size(total_exponent: int) -> int:
    return max(256, 8 * total_exponent)


def _ring_nodes(theta0: float, n: int) -> tuple:
    phi = TWO_PI * np.arange(n) / n
    return phi, _sphere_xyz(theta0, phi)


def _ring_log_mean(dist: PhaseDistribution, n: int) -> float:
    """Log of the mean of the factor product over ``n`` equally spaced ring azimuths."""
    _, xyz = _ring_nodes(dist.base.theta0, n)
    return float(logsumexp(dist.log_values(xyz))) - math.log(n)


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------

def density(dist: PhaseDistribution, d: SphericalDirection) -> float:
    """Unnormalized density at ``d``, excluding ``log_weight_prefactor``.

    Ring and point bases are singular measures; their density is reported
    relative to the base measure, and is zero off its support.
    """
    base = dist.base
    if base.kind == "ring" and abs(d.theta - base.theta0) > 1e-12:
        return 0.0
    if base.kind == "point":
        if abs(d.theta - base.theta0) > 1e-12:
            return 0.0
        dphi = abs(reduce_angle(d.phi - base.phi0))
        if min(dphi, TWO_PI - dphi) > 1e-12 and math.sin(base.theta0) > 0:
            return 0.0
    xyz = direction_to_vector(d).as_array()
    return float(np.exp(dist.log_values(xyz)))


def log_normalization(dist: PhaseDistribution, method: str = "auto") -> float:
    """Log of the integral of the density over the base measure.

    ``method`` is ``"exact"`` (ring bases only), ``"quadrature"`` or
    ``"auto"`` (exact where available).

    On a ring the integrand is a trigonometric polynomial of degree ``k``
    (the total exponent), and its constant Fourier coefficient equals the
    mean of its values on any ``n > k`` equally spaced azimuths.  The exact
    method uses that identity with ``n = k + 1``; all summands are positive,
    unlike the coefficient convolution in :attr:`PhaseDistribution.ring_poly`
    which loses digits to cancellation when factors pull in opposite
    directions.  The quadrature method uses ``max(256, 8 k)`` nodes.
    """
    base = dist.base
    if method not in ("auto", "exact", "quadrature"):
        raise ValueError(f"unknown method {method!r}")
    if base.kind == "point":
        xyz = direction_to_vector(SphericalDirection(base.theta0, base.phi0)).as_array()
        out = float(dist.log_values(xyz))
    elif base.kind == "ring":
        k = dist.total_exponent
        n = k + 1 if method in ("auto", "exact") else ring_grid_size(k)
        out = _ring_log_mean(dist, n)
    else:
        if method == "exact":
            raise ValueError("exact normalization is only available for ring bases")
        theta, phi, w = sphere_grid(dist.total_exponent)
        lv = dist.log_values(_sphere_xyz(theta[:, None], phi[None, :]))
        out = float(logsumexp(lv, b=w))
    if not out > -math.inf:
        raise DistributionAnnihilated("distribution annihilated: history has zero probability")
    return out


def normalization(dist: PhaseDistribution, method: str = "auto") -> float:
    """Integral of the density over the base measure.

    Uniform sphere: ``int dOmega`` (4 pi with no factors).  Ring: ``(1/2pi)
    int dphi`` (1 with no factors).  Point: the factor product at the point.
    """
    return math.exp(log_normalization(dist, method))


def mean_direction(dist: PhaseDistribution) -> np.ndarray:
    """Expectation of the Bloch vector ``u`` under the normalized distribution."""
    base = dist.base
    if base.kind == "point":
        log_normalization(dist)
        return direction_to_vector(SphericalDirection(base.theta0, base.phi0)).as_array()
    if base.kind == "ring":
        # u times the product has degree k + 1, so k + 2 nodes are exact
        phi, xyz = _ring_nodes(base.theta0, dist.total_exponent + 2)
        lv = dist.log_values(xyz)
        if not np.isfinite(lv).any():
            raise DistributionAnnihilated("distribution annihilated: history has zero probability")
        p = np.exp(lv - lv.max())
        st = math.sin(base.theta0)
        return np.array([st * (p @ np.cos(phi)), st * (p @ np.sin(phi)), math.cos(base.theta0) * p.sum()]) / p.sum()
    theta, phi, w = sphere_grid(dist.total_exponent + 1)
    xyz = _sphere_xyz(theta[:, None], phi[None, :])
    lv = dist.log_values(xyz)
    if not np.isfinite(lv).any():
        raise DistributionAnnihilated("distribution annihilated: history has zero probability")
    p = w * np.exp(lv - lv.max())
    return np.einsum("ij,ijk->k", p, xyz) / p.sum()


def branching_probabilities(
    dist: PhaseDistribution, setup: Sequence[DetectorChannel], t: float = 0.0
) -> np.ndarray:
    """Probability that the next detection lands in each channel.

    Since every gain is linear in ``u``, the expectation of
    ``weight_s (1 + u . u_s(t))`` needs only the mean Bloch vector.
    """
    mean = mean_direction(dist)
    gains = np.array([c.weight * (1.0 + float(mean @ c.direction_at(t).as_array())) for c in setup])
    gains = np.clip(gains, 0.0, None)
    total = gains.sum()
    if not total > 0:
        raise DistributionAnnihilated("no channel can fire")
    return gains / total


def apply_detection(dist: PhaseDistribution, channel: DetectorChannel, t: float = 0.0) -> PhaseDistribution:
    """Condition on one detection in ``channel`` at time ``t``."""
    v = channel.direction_at(t)
    new = PhaseDistribution(
        dist.base,
        dist.factors + (DetectionFactor(v, 1),),
        dist.log_weight_prefactor + math.log(2.0 * channel.weight),
    )
    return new


def with_factors(base: BaseMeasure, directions: Sequence[UnitVector3], counts: Sequence[int]) -> PhaseDistribution:
    return PhaseDistribution(base, tuple(DetectionFactor(v, int(k)) for v, k in zip(directions, counts)))


def log_marginal_at(dist: PhaseDistribution, phi: np.ndarray) -> np.ndarray:
    """Unnormalized log phase marginal at azimuths ``phi``."""
    phi = np.atleast_1d(np.asarray(phi, dtype=float))
    base = dist.base
    if base.kind == "ring":
        return dist.log_values(_sphere_xyz(base.theta0, phi))
    if base.kind == "uniform_sphere":
        # At fixed phi the integrand has odd powers of sin(theta), so it is not
        # a polynomial in cos(theta); in theta itself it is an entire function
        # and Gauss-Legendre on [0, pi] converges spectrally.
        x, w = _gauss_legendre(max(64, dist.total_exponent + 32))
        theta = (x + 1.0) * (math.pi / 2)
        lv = dist.log_values(_sphere_xyz(theta[:, None], phi[None, :]))
        return logsumexp(lv, b=(w * np.sin(theta) * (math.pi / 2))[:, None], axis=0)
    raise ValueError("the phase marginal of a point base is a delta function")


def phase_marginal(dist: PhaseDistribution, grid_size: int = 256) -> tuple:
    """Normalized phase density on ``grid_size`` points of ``[0, 2 pi)``.

    Returns ``(phi, density)`` with ``density.sum() * 2 pi / grid_size == 1``.
    """
    if grid_size < 8:
        raise ValueError("grid_size must be at least 8")
    phi = TWO_PI * np.arange(grid_size) / grid_size
    lv = log_marginal_at(dist, phi)
    if not np.isfinite(lv).any():
        raise DistributionAnnihilated("distribution annihilated: history has zero probability")
    vals = np.exp(lv - lv.max())
    vals /= vals.sum() * TWO_PI / grid_size
    return phi, vals


@dataclass(frozen=True)
class Peak:
    phi: float
    height: float


def find_peaks(dist: PhaseDistribution, grid_size: Optional[int] = None, flat_tol: float = 1e-9) -> list:
    """Local maxima of the phase marginal, tallest first.

    Grid maxima are refined by bounded scalar search to well below 1e-6 rad.
    A flat marginal yields an empty list.  Heights are in units of the
    normalized marginal.
    """
    if grid_size is None:
        grid_size = max(512, 16 * dist.total_exponent)
    phi, vals = phase_marginal(dist, grid_size)
    vmax, vmin = vals.max(), vals.min()
    if vmax - vmin <= flat_tol * vmax:
        return []
    step = TWO_PI / grid_size
    left, right = np.roll(vals, 1), np.roll(vals, -1)
    candidates = np.nonzero((vals > left) & (vals >= right))[0]
    lv_grid = log_marginal_at(dist, phi)
    shift = lv_grid.max()
    # vals == exp(lv - shift) / Z, hence vals.max() == 1 / Z
    inv_z = vals.max()
    peaks = []
    for i in candidates:
        res = minimize_scalar(
            lambda p: -float(log_marginal_at(dist, np.array([p]))[0]),
            bounds=(phi[i] - step, phi[i] + step),
            method="bounded",
            options={"xatol": 1e-10},
        )
        p = reduce_angle(float(res.x))
        height = math.exp(-float(res.fun) - shift) * inv_z
        peaks.append(Peak(p, height))
    peaks.sort(key=lambda pk: -pk.height)
    return peaks


def peak_locations(dist: PhaseDistribution, grid_size: Optional[int] = None) -> list:
    """Azimuths of the local maxima of the phase marginal (empty if flat)."""
    return [pk.phi for pk in find_peaks(dist, grid_size)]

