"""Bloch-sphere geometry for two-mode bosonic states.

A point on the unit sphere stands both for a spin-coherent state and for a
detection operator (the annihilation operator of the mode that the state
fully occupies).  A detection in channel ``s`` multiplies the phase
distribution by ``g_s(u) = weight_s * (1 + u . u_s)``; the constructors in
this module return the channel directions and weights for every detection
scheme the package simulates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence, Union

import numpy as np

TWO_PI = 2.0 * math.pi


def reduce_angle(phi: float) -> float:
    """Reduce an azimuth to ``[0, 2*pi)``."""
    r = math.fmod(phi, TWO_PI)
    if r < 0.0:
        r += TWO_PI
    # fmod can return exactly 2*pi after the shift for tiny negative input
    if r >= TWO_PI:
        r = 0.0
    return r


@dataclass(frozen=True)
class SphericalDirection:
    """Polar angle ``theta`` in ``[0, pi]`` and azimuth ``phi`` in ``[0, 2*pi)``."""

    theta: float
    phi: float

    def __post_init__(self):
        if not (0.0 <= self.theta <= math.pi):
            raise ValueError(f"theta must lie in [0, pi], got {self.theta!r}")
        object.__setattr__(self, "phi", reduce_angle(float(self.phi)))

    def to_vector(self) -> "UnitVector3":
        return direction_to_vector(self)


@dataclass(frozen=True)
class UnitVector3:
    x: float
    y: float
    z: float

    def __post_init__(self):
        n2 = self.x * self.x + self.y * self.y + self.z * self.z
        if abs(n2 - 1.0) > 1e-9:
            raise ValueError(f"not a unit vector: |v|^2 = {n2!r}")

    @classmethod
    def from_array(cls, v: Sequence[float]) -> "UnitVector3":
        return cls(float(v[0]), float(v[1]), float(v[2]))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    def dot(self, other: "UnitVector3") -> float:
        return self.x * other.x + self.y * other.y + self.z * other.z

    def __neg__(self) -> "UnitVector3":
        return UnitVector3(-self.x, -self.y, -self.z)

    def to_direction(self) -> SphericalDirection:
        # atan2 keeps full precision near the poles, where acos(z) does not
        theta = math.atan2(math.hypot(self.x, self.y), self.z)
        phi = math.atan2(self.y, self.x)
        return SphericalDirection(theta, phi)


X_AXIS = UnitVector3(1.0, 0.0, 0.0)
Y_AXIS = UnitVector3(0.0, 1.0, 0.0)
Z_AXIS = UnitVector3(0.0, 0.0, 1.0)


def direction_to_vector(d: SphericalDirection) -> UnitVector3:
    """Cartesian unit vector ``(cos phi sin theta, sin phi sin theta, cos theta)``."""
    st = math.sin(d.theta)
    return UnitVector3(math.cos(d.phi) * st, math.sin(d.phi) * st, math.cos(d.theta))


def equatorial(phi: float) -> UnitVector3:
    return direction_to_vector(SphericalDirection(math.pi / 2, phi))


DirectionRule = Union[UnitVector3, Callable[[float], UnitVector3]]


@dataclass(frozen=True)
class DetectorChannel:
    """One detection channel.

    ``direction`` is either a fixed :class:`UnitVector3` or a rule mapping a
    detection time to the direction of the Heisenberg-picture detection
    operator.  ``weight`` is the fraction of the total loss rate carried by
    the channel.
    """

    id: str
    direction: DirectionRule
    weight: float

    def __post_init__(self):
        if not (0.0 < self.weight <= 1.0):
            raise ValueError(f"channel weight must lie in (0, 1], got {self.weight!r}")

    @property
    def is_static(self) -> bool:
        return isinstance(self.direction, UnitVector3)

    def direction_at(self, t: float = 0.0) -> UnitVector3:
        if isinstance(self.direction, UnitVector3):
            return self.direction
        return self.direction(t)

    def gain(self, u: UnitVector3, t: float = 0.0) -> float:
        """Detection factor ``weight * (1 + u . u_s(t))``."""
        return self.weight * (1.0 + u.dot(self.direction_at(t)))


@dataclass(frozen=True)
class DetectorSetup:
    """A complete set of detection channels; weights sum to one."""

    name: str
    channels: tuple

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(self.channels))
        total = math.fsum(c.weight for c in self.channels)
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"channel weights of {self.name!r} sum to {total!r}, expected 1")
        ids = [c.id for c in self.channels]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate channel ids in {ids}")

    def __len__(self) -> int:
        return len(self.channels)

    def __iter__(self):
        return iter(self.channels)

    def __getitem__(self, i):
        return self.channels[i]

    @property
    def ids(self) -> list:
        return [c.id for c in self.channels]

    @property
    def is_static(self) -> bool:
        return all(c.is_static for c in self.channels)

    def index(self, channel_id: str) -> int:
        return self.ids.index(channel_id)

    def total_gain(self, u: UnitVector3, t: float = 0.0) -> float:
        return math.fsum(c.gain(u, t) for c in self.channels)


@dataclass(frozen=True)
class CouplingSpec:
    """Mode coupling: tunneling ``delta`` and energy splitting ``epsilon`` (rad/s).

    ``mode`` is ``"none"``, ``"pulsed"`` (a pulse of duration ``tau`` before
    the detection window) or ``"continuous"``.
    """

    delta: float = 0.0
    epsilon: float = 0.0
    mode: str = "none"
    tau: float = 0.0

    def __post_init__(self):
        if self.delta < 0:
            raise ValueError("delta must be non-negative")
        if self.mode not in ("none", "pulsed", "continuous"):
            raise ValueError(f"unknown coupling mode {self.mode!r}")
        if self.mode == "pulsed" and self.tau < 0:
            raise ValueError("pulse duration must be non-negative")

    @property
    def omega(self) -> float:
        return math.hypot(self.epsilon, self.delta)

    @property
    def period(self) -> float:
        """One full rotation ``2*pi/Omega``; infinite without coupling."""
        om = self.omega
        return TWO_PI / om if om > 0 else math.inf


def beam_splitter_directions(xi: float) -> tuple:
    """Four channels of two 50/50 beam splitters, the second with setting ``xi``.

    Channels ``1, 2`` sit on the equator at azimuths ``0, pi``; channels
    ``3, 4`` at ``xi, xi + pi``.  Each carries a quarter of the loss rate.
    """
    xi = reduce_angle(xi)
    azimuths = (0.0, math.pi, xi, xi + math.pi)
    return tuple(
        DetectorChannel(str(i + 1), equatorial(a), 0.25) for i, a in enumerate(azimuths)
    )


def two_beam_splitter_setup(xi: float) -> DetectorSetup:
    return DetectorSetup(f"two_bs(xi={reduce_angle(xi):.6g})", beam_splitter_directions(xi))


def single_beam_splitter_setup(xi: float = 0.0) -> DetectorSetup:
    """Both modes feed one 50/50 beam splitter; outputs at azimuths ``xi`` and ``xi + pi``."""
    xi = reduce_angle(xi)
    return DetectorSetup(
        f"single_bs(xi={xi:.6g})",
        (
            DetectorChannel("+", equatorial(xi), 0.5),
            DetectorChannel("-", equatorial(xi + math.pi), 0.5),
        ),
    )


def direct_detection_setup() -> DetectorSetup:
    """Detectors on each mode without coupling: ``u_a = z``, ``u_b = -z``."""
    return DetectorSetup(
        "direct",
        (DetectorChannel("a", Z_AXIS, 0.5), DetectorChannel("b", -Z_AXIS, 0.5)),
    )


def pulsed_counterrotated_directions(c: CouplingSpec) -> tuple:
    """Channels ``a, b`` after a tunneling pulse of area ``delta * tau``.

    The pulse is absorbed into the detection operators, which become
    ``u_a = -y sin(delta tau) + z cos(delta tau)`` and ``u_b = -u_a``.
    """
    if c.mode != "pulsed":
        raise ValueError("pulsed_counterrotated_directions needs a pulsed coupling")
    area = c.delta * c.tau
    ua = UnitVector3(0.0, -math.sin(area), math.cos(area))
    return (DetectorChannel("a", ua, 0.5), DetectorChannel("b", -ua, 0.5))


def pulsed_setup(c: CouplingSpec) -> DetectorSetup:
    return DetectorSetup(
        f"pulsed(delta*tau={c.delta * c.tau:.6g})", pulsed_counterrotated_directions(c)
    )


def coupled_detector_direction(c: CouplingSpec, t: float, mode_label: str) -> UnitVector3:
    """Heisenberg-picture detection direction for mode ``a`` or ``b`` at time ``t``.

    Under continuous tunneling ``delta`` and energy splitting ``epsilon`` the
    mode-``a`` direction is ``(eps*delta/W^2)(cos Wt - 1) x - (delta/W) sin Wt y
    + (delta^2/W^2 cos Wt + eps^2/W^2) z`` with ``W = sqrt(eps^2 + delta^2)``;
    mode ``b`` is antipodal.  Without coupling (``W = 0``) the directions are
    the poles.
    """
    if mode_label not in ("a", "b"):
        raise ValueError(f"mode_label must be 'a' or 'b', got {mode_label!r}")
    om = c.omega
    if om == 0.0:
        ua = Z_AXIS
    else:
        e = c.epsilon / om
        d = c.delta / om
        ct = math.cos(om * t)
        st = math.sin(om * t)
        v = np.array([e * d * (ct - 1.0), -d * st, d * d * ct + e * e])
        # keep the unit norm exact to rounding
        v /= np.linalg.norm(v)
        ua = UnitVector3.from_array(v)
    return ua if mode_label == "a" else -ua


@dataclass(frozen=True)
class CoupledDirection:
    """Picklable direction rule ``t -> coupled_detector_direction(coupling, t, label)``."""

    coupling: CouplingSpec
    label: str

    def __call__(self, t: float) -> UnitVector3:
        return coupled_detector_direction(self.coupling, t, self.label)


def continuous_coupled_setup(c: CouplingSpec) -> DetectorSetup:
    """Direct detectors on continuously coupled modes (time-dependent directions)."""
    return DetectorSetup(
        f"continuous(delta={c.delta:.6g}, epsilon={c.epsilon:.6g})",
        (
            DetectorChannel("a", CoupledDirection(c, "a"), 0.5),
            DetectorChannel("b", CoupledDirection(c, "b"), 0.5),
        ),
    )
