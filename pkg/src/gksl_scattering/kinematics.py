"""Four-vectors, boosts and Mandelstam invariants in the mostly-plus metric.

Every invariant square in the package goes through :func:`square` so the
signature lives in one place: ``v.v = -t**2 + x**2 + y**2 + z**2``.
An on-shell momentum of mass ``m`` therefore has ``square(p) == -m**2`` and a
timelike total momentum has ``s < 0``.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

METRIC = np.array([-1.0, 1.0, 1.0, 1.0])

DEFAULT_EPSILON_SCHEDULE = (1e-1, 5e-2, 2.5e-2, 1.25e-2)


@dataclass(frozen=True)
class FourVector:
    t: float
    x: float
    y: float
    z: float

    @classmethod
    def from_array(cls, a) -> "FourVector":
        a = np.asarray(a, dtype=float)
        return cls(float(a[0]), float(a[1]), float(a[2]), float(a[3]))

    @property
    def array(self) -> np.ndarray:
        return np.array([self.t, self.x, self.y, self.z])

    @property
    def spatial(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    def __add__(self, other: "FourVector") -> "FourVector":
        return FourVector.from_array(self.array + other.array)

    def __sub__(self, other: "FourVector") -> "FourVector":
        return FourVector.from_array(self.array - other.array)

    def __neg__(self) -> "FourVector":
        return FourVector.from_array(-self.array)

    def square(self) -> float:
        return float(square(self.array))

    def dot(self, other: "FourVector") -> float:
        return float(dot(self.array, other.array))


@dataclass(frozen=True)
class Mandelstam:
    s: float
    t: float
    u: float

    def swapped(self) -> "Mandelstam":
        """Return the triple with ``t`` and ``u`` exchanged."""
        return Mandelstam(self.s, self.u, self.t)


@dataclass(frozen=True)
class ModelParams:
    """Couplings, masses and numerical controls.

    ``epsilon_schedule`` is given in units of ``m_e**2``; :meth:`epsilons`
    returns the absolute values.  ``m_s = 0`` is allowed so the massless
    low-energy limit of the box function can be evaluated.
    """

    lam: float
    m_s: float
    m_e: float
    epsilon_schedule: tuple[float, ...] = DEFAULT_EPSILON_SCHEDULE
    mc_samples: int = 1_000_000
    volume_time: float = 1.0
    simplex_tol: float = 1e-8
    angular_nodes: tuple[int, int] = (128, 64)
    seed: int = 12345

    def __post_init__(self):
        if not np.isfinite(self.lam):
            raise ValueError("coupling must be a finite real number")
        if not self.m_e > 0:
            raise ValueError(f"m_e must be positive, got {self.m_e}")
        if not self.m_s >= 0:
            raise ValueError(f"m_s must be non-negative, got {self.m_s}")
        eps = tuple(float(e) for e in self.epsilon_schedule)
        if len(eps) == 0 or any(e <= 0 for e in eps):
            raise ValueError("epsilon_schedule entries must be positive")
        if any(b >= a for a, b in zip(eps, eps[1:])):
            raise ValueError("epsilon_schedule must be strictly decreasing")
        object.__setattr__(self, "epsilon_schedule", eps)
        if int(self.mc_samples) != self.mc_samples or self.mc_samples <= 0:
            raise ValueError("mc_samples must be a positive integer")
        if not self.volume_time > 0:
            raise ValueError("volume_time must be positive")
        if not self.simplex_tol > 0:
            raise ValueError("simplex_tol must be positive")

    def epsilons(self) -> np.ndarray:
        return np.asarray(self.epsilon_schedule) * self.m_e**2

    def replace(self, **changes) -> "ModelParams":
        return replace(self, **changes)

    def scaled(self, c: float) -> "ModelParams":
        """Scale every dimensionful quantity by ``c`` (mass dimension one)."""
        return self.replace(lam=self.lam * c, m_s=self.m_s * c, m_e=self.m_e * c)


def dot(a, b):
    """Minkowski product of (..., 4) arrays."""
    a = np.asarray(a)
    b = np.asarray(b)
    return -a[..., 0] * b[..., 0] + np.sum(a[..., 1:] * b[..., 1:], axis=-1)


def square(a):
    return dot(a, a)


def _as_array(v) -> np.ndarray:
    if isinstance(v, FourVector):
        return v.array
    return np.asarray(v, dtype=float)


def energy(three_momentum, mass):
    p = np.asarray(three_momentum, dtype=float)
    return np.sqrt(np.sum(p * p, axis=-1) + mass * mass)


def on_shell(three_momentum: Sequence[float], mass: float) -> FourVector:
    if mass < 0:
        raise ValueError("mass must be non-negative")
    p = np.asarray(three_momentum, dtype=float)
    if p.shape != (3,):
        raise ValueError("three_momentum must have three components")
    return FourVector(float(energy(p, mass)), *map(float, p))


def on_shell_array(three_momenta, mass) -> np.ndarray:
    p = np.asarray(three_momenta, dtype=float)
    return np.concatenate([energy(p, mass)[..., None], p], axis=-1)


def _unit(axis, name="axis") -> np.ndarray:
    n = np.asarray(axis, dtype=float)
    if n.shape != (3,) or abs(np.linalg.norm(n) - 1.0) > 1e-12:
        raise ValueError(f"{name} must be a unit 3-vector, got {axis!r}")
    return n


def boost_array(a, rapidity: float, axis) -> np.ndarray:
    """Boost (..., 4) momenta by ``rapidity`` along the unit vector ``axis``."""
    n = np.asarray(axis, dtype=float)
    a = np.asarray(a, dtype=float)
    ch, sh = np.cosh(rapidity), np.sinh(rapidity)
    t = a[..., 0]
    par = a[..., 1:] @ n
    out = np.empty_like(a)
    out[..., 0] = ch * t + sh * par
    out[..., 1:] = a[..., 1:] + np.multiply.outer((ch - 1.0) * par + sh * t, n)
    return out


def boost(v: FourVector, rapidity: float, axis) -> FourVector:
    n = _unit(axis)
    if rapidity == 0:
        return v
    return FourVector.from_array(boost_array(v.array, rapidity, n))


def rotation_matrix(axis, angle: float) -> np.ndarray:
    n = _unit(axis)
    k = np.array([[0, -n[2], n[1]], [n[2], 0, -n[0]], [-n[1], n[0], 0]])
    return np.eye(3) + np.sin(angle) * k + (1 - np.cos(angle)) * (k @ k)


def rotate_array(a, axis, angle: float) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    out = a.copy()
    out[..., 1:] = a[..., 1:] @ rotation_matrix(axis, angle).T
    return out


def rotate(v: FourVector, axis, angle: float) -> FourVector:
    return FourVector.from_array(rotate_array(v.array, axis, angle))


def rest_frame_boost(total) -> tuple[float, np.ndarray]:
    """Rapidity and axis taking the rest frame of ``total`` to its lab frame."""
    total = _as_array(total)
    pmag = float(np.linalg.norm(total[1:]))
    mass = float(np.sqrt(max(-square(total), 0.0)))
    if pmag == 0.0:
        return 0.0, np.array([0.0, 0.0, 1.0])
    return float(np.arcsinh(pmag / mass)), total[1:] / pmag


def mandelstam(p1, p2, pbar1, pbar2) -> Mandelstam:
    """``s=(p1+p2)^2``, ``t=(p1-pbar1)^2``, ``u=(p1-pbar2)^2``."""
    p1, p2, pbar1, pbar2 = map(_as_array, (p1, p2, pbar1, pbar2))
    return Mandelstam(
        float(square(p1 + p2)), float(square(p1 - pbar1)), float(square(p1 - pbar2))
    )
