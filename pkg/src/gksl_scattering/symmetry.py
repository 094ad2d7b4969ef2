"""Numerical Poincare checks on continuum coefficients and transported matrix elements.

Under ``U a_p^+ U^+ = sqrt(w_Lp / w_p) e^{-i (Lp).a} a_Lp^+`` a generator

    L[rho] = int d3p d3pb c(p, pb) delta4(...) [a_p rho a_pb^+ - ...]

is covariant iff ``c(Lp, Lpb) = c(p, pb) sqrt(w_p w_pb / (w_Lp w_Lpb))`` times
the translation phase ``e^{i (Lp - Lpb).a}``, which is 1 on the delta support.
The checks compare the left side, recomputed from scratch at transformed
momenta, with the right side transported from the original momenta.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import coefficients as co
from .kinematics import (
    FourVector,
    ModelParams,
    boost_array,
    dot,
    mandelstam,
    on_shell,
    rotate_array,
)

SIGMAS = 3.0


@dataclass(frozen=True)
class PoincareElement:
    """Rotation, then boost, then translation by ``a``."""

    rapidity: float = 0.0
    boost_axis: tuple = (0.0, 0.0, 1.0)
    angle: float = 0.0
    rotation_axis: tuple = (0.0, 0.0, 1.0)
    translation: tuple = (0.0, 0.0, 0.0, 0.0)

    def __post_init__(self):
        for name in ("boost_axis", "rotation_axis"):
            v = np.asarray(getattr(self, name), dtype=float)
            n = np.linalg.norm(v)
            if v.shape != (3,) or n == 0:
                raise ValueError(f"{name} must be a nonzero three-vector")
            object.__setattr__(self, name, tuple(v / n))
        a = np.asarray(self.translation, dtype=float)
        if a.shape != (4,):
            raise ValueError("translation must be a four-vector")
        object.__setattr__(self, "translation", tuple(a))

    @classmethod
    def identity(cls) -> "PoincareElement":
        return cls()

    @classmethod
    def random(cls, rng: np.random.Generator, max_rapidity: float = 0.4, max_shift: float = 5.0):
        def direction():
            v = rng.normal(size=3)
            return tuple(v / np.linalg.norm(v))

        return cls(
            rapidity=float(rng.uniform(0.0, max_rapidity)),
            boost_axis=direction(),
            angle=float(rng.uniform(0.0, 2.0 * math.pi)),
            rotation_axis=direction(),
            translation=tuple(rng.uniform(-max_shift, max_shift, size=4)),
        )

    def apply(self, p):
        """Lorentz part acting on ``(..., 4)`` momenta."""
        arr = np.asarray(getattr(p, "array", p), dtype=float)
        out = rotate_array(arr, self.rotation_axis, self.angle)
        return boost_array(out, self.rapidity, self.boost_axis)

    def phase(self, p) -> complex:
        """``e^{-i (Lp).a}`` picked up by ``a_p^+``."""
        lp = self.apply(p)
        return complex(np.exp(-1j * float(dot(lp, np.asarray(self.translation)))))


@dataclass
class CheckResult:
    name: str
    passed: bool
    deviation: float
    tolerance: float


@dataclass
class SymmetryReport:
    checks: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def add(self, name, deviation, tolerance):
        dev = float(deviation)
        tol = float(tolerance)
        self.checks.append(CheckResult(name, bool(dev <= tol), dev, tol))

    def extend(self, other: "SymmetryReport"):
        self.checks.extend(other.checks)
        return self


def _random_momentum(rng, mass, max_rapidity=0.4):
    v = rng.normal(size=3)
    v /= np.linalg.norm(v)
    k = mass * math.sinh(rng.uniform(0.0, max_rapidity)) if mass > 0 else rng.uniform(0.1, 1.0)
    return on_shell(k * v, mass)


def _decay_route(p: FourVector, params: ModelParams) -> str:
    # the lab-frame estimator has finite variance only while the parent is
    # slower than the decay products in its rest frame
    beta_star = math.sqrt(max(1.0 - 4.0 * params.m_e**2 / params.m_s**2, 0.0)) if params.m_s > 0 else 0.0
    speed = np.linalg.norm(p.spatial) / p.t
    return "lab" if speed < 0.9 * beta_star else "cm"


def _within(a, b, err_a, err_b, floor=1e-12):
    scale = max(abs(a), abs(b), 1e-300)
    return abs(a - b), SIGMAS * math.hypot(err_a, err_b) + floor * scale


def check_decay_invariance(g: PoincareElement, params: ModelParams, trials: int = 1, seed: int = 0,
                           n: int = 200_000) -> SymmetryReport:
    if trials < 1:
        raise ValueError("trials must be at least 1")
    rng = np.random.default_rng([seed, 1])
    rep = SymmetryReport()
    for i in range(trials):
        p = _random_momentum(rng, params.m_s)
        lp = FourVector.from_array(g.apply(p))
        route = "lab" if _decay_route(p, params) == _decay_route(lp, params) == "lab" else "cm"
        r0 = co.decay_rate_numeric(params, p, route=route, n=n, seed=seed + 2 * i)
        r1 = co.decay_rate_numeric(params, lp, route=route, n=n, seed=seed + 2 * i + 1)
        rep.add(f"decay-gamma[{i}]", *_within(r0.real, r1.real, r0.abs_error, r1.abs_error))
        # transported element: c(p, p) = gamma / w_p, carried to Lp
        c_tr = r0.real / p.t * (p.t / lp.t)
        c_new = r1.real / lp.t
        ph = g.phase(p) * np.conj(g.phase(p))
        rep.add(f"decay-element[{i}]", *_within(abs(c_tr * ph), abs(c_new), r0.abs_error / lp.t, r1.abs_error / lp.t))
    return rep


def random_pair_point(rng, params: ModelParams, x_range=(1.1, 2.0), max_rapidity=0.3) -> co.PairKernelPoint:
    """Above-threshold 2->2 configuration, boosted out of its CM frame."""
    x = rng.uniform(*x_range)
    w = params.m_e * x
    k = math.sqrt(max(w * w - params.m_s**2, 0.0))

    def unit():
        v = rng.normal(size=3)
        return v / np.linalg.norm(v)

    n1, n2 = unit(), unit()
    p1, p2 = on_shell(k * n1, params.m_s), on_shell(-k * n1, params.m_s)
    pb2 = on_shell(-k * n2, params.m_s)
    point = co.PairKernelPoint(p1, p2, pb2)
    axis = unit()
    eta = rng.uniform(0.0, max_rapidity)
    return point.transformed(lambda a: boost_array(a, eta, axis))


def check_pair_invariance(g: PoincareElement, params: ModelParams, trials: int = 1, seed: int = 0,
                          n: int = 200_000, with_loop: bool = True) -> SymmetryReport:
    if trials < 1:
        raise ValueError("trials must be at least 1")
    rng = np.random.default_rng([seed, 2])
    rep = SymmetryReport()
    for i in range(trials):
        pt = random_pair_point(rng, params)
        lpt = pt.transformed(g.apply)
        m0 = mandelstam(pt.p1, pt.p2, pt.pbar1, pt.pbar2)
        m1 = mandelstam(lpt.p1, lpt.p2, lpt.pbar1, lpt.pbar2)
        scale = max(abs(m0.s), abs(m0.t), abs(m0.u), params.m_e**2)
        dm = max(abs(m0.s - m1.s), abs(m0.t - m1.t), abs(m0.u - m1.u))
        rep.add(f"pair-mandelstam[{i}]", dm, 1e-9 * scale)

        k0 = co.pair_kernel(pt, params, n=n, seed=seed + 2 * i, eps_check=False)
        k1 = co.pair_kernel(lpt, params, n=n, seed=seed + 2 * i + 1, eps_check=False)
        rep.add(f"pair-gamma[{i}]", *_within(k0.real, k1.real, k0.abs_error, k1.abs_error))

        w0 = math.sqrt(pt.p1.t * pt.p2.t * pt.pbar1.t * pt.pbar2.t)
        w1 = math.sqrt(lpt.p1.t * lpt.p2.t * lpt.pbar1.t * lpt.pbar2.t)
        pref = 4.0 * params.lam**4 / (2.0 * math.pi) ** 4
        c_tr = pref * k0.real / w0 * (w0 / w1)
        c_new = pref * k1.real / w1
        phase = g.phase(pt.p1) * g.phase(pt.p2) * np.conj(g.phase(pt.pbar1) * g.phase(pt.pbar2))
        rep.add(
            f"pair-element[{i}]",
            *_within(abs(c_tr * phase), abs(c_new), pref * k0.abs_error / w1, pref * k1.abs_error / w1),
        )
        if with_loop:
            a0 = co.im_loop_a(m0, params)
            a1 = co.im_loop_a(m1, params)
            rep.add(f"pair-imA[{i}]", *_within(a0.real, a1.real, a0.abs_error, a1.abs_error, floor=1e-9))
    return rep


def poincare_suite(decay_params: ModelParams, pair_params: ModelParams, elements: int = 20, seed: int = 0,
                   n: int = 200_000, with_loop: bool = True) -> SymmetryReport:
    """One decay and one pair trial for each of ``elements`` random transformations."""
    rng = np.random.default_rng([seed, 0])
    rep = SymmetryReport()
    for e in range(elements):
        g = PoincareElement.random(rng)
        part = check_decay_invariance(g, decay_params, 1, seed=seed + 1000 * e + 1, n=n)
        part.extend(check_pair_invariance(g, pair_params, 1, seed=seed + 1000 * e + 2, n=n, with_loop=with_loop))
        for c in part.checks:
            c.name = f"g{e}:{c.name}"
        rep.extend(part)
    return rep
