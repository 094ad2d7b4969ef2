"""Scalar coefficients of the scattering generators for the ``lam phi chi^2`` model.

Conventions: mostly-plus metric, ``D_F(q) = 1/(q^2 + m_e^2 - i eps)``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .kinematics import FourVector, Mandelstam, ModelParams, on_shell, square
from .quadrature import (
    LoopValue,
    extrapolate_eps,
    integrate_simplex,
    integrate_square,
    phase_space_2body,
    phase_space_2body_lab,
)

# The printed closed-form decay coefficient is twice the phase-space integral
# it is derived from: lam^2/(4 pi) * 2 pi sqrt(m_s^2 - 4 m_e^2)/m_s.
# Measured by tests/test_coefficients.py against a rectangular-grid integral.
NUMERIC_TO_CLOSED_DECAY_RATIO = 0.5

LOOP_PREFACTOR = 1.0 / (4.0 * math.pi) ** 2

# 1/volume of the 3-simplex: Feynman-parameter integrals are taken as averages.
FEYNMAN_MEASURE = 6.0

# The loop rule used for the bubble omits the factor 2 from contracting the
# two chi fields of one vertex; restoring it is what makes the sum rule close.
BUBBLE_CONTRACTION_FACTOR = 2.0

# Two identical chi particles: the environment completeness relation over
# ordered momenta double counts each state.
IDENTICAL_PAIR_FACTOR = 0.5


def propagator(q, mass: float, eps: float):
    return 1.0 / (square(q) + mass * mass - 1j * eps)


def _theta(x: float) -> float:
    return 1.0 if x > 0 else 0.0


# ---------------------------------------------------------------------------
# decay


def decay_rate_closed(params: ModelParams) -> float:
    """``lam^2/m_s * sqrt(m_s^2 - 4 m_e^2)`` above threshold, else 0."""
    gap = params.m_s**2 - 4.0 * params.m_e**2
    if gap <= 0 or params.m_s == 0:
        return 0.0
    return params.lam**2 / params.m_s * math.sqrt(gap)


def _check_on_shell(p: FourVector, mass: float, what: str, rtol: float = 1e-9):
    scale = max(p.t * p.t, 1e-300)
    if abs(p.square() + mass * mass) > rtol * scale:
        raise ValueError(f"{what} is not on shell with mass {mass}: p^2 = {p.square()}")


def decay_rate_numeric(
    params: ModelParams,
    p: FourVector | None = None,
    route: str = "cm",
    n: int | None = None,
    seed: int | None = None,
) -> LoopValue:
    """``lam^2/(4 pi) * int d3k1 d3k2/(E1 E2) delta4(p - k1 - k2)``.

    ``route="cm"`` uses the boosted CM sampler (zero variance for this
    integrand); ``route="lab"`` solves the energy delta in the frame of ``p``.
    """
    if p is None:
        p = on_shell([0.0, 0.0, 0.0], params.m_s)
    _check_on_shell(p, params.m_s, "decaying momentum")
    n = params.mc_samples if n is None else n
    seed = params.seed if seed is None else seed
    engine = {"cm": phase_space_2body, "lab": phase_space_2body_lab}[route]
    ones = lambda k1, k2: np.ones(len(k1))  # noqa: E731
    return engine(p, params.m_e, ones, n, seed).scaled(params.lam**2 / (4.0 * math.pi))


# ---------------------------------------------------------------------------
# pair annihilation kernel


@dataclass(frozen=True)
class PairKernelPoint:
    """Incoming pair ``p1, p2`` and one outgoing-side momentum ``pbar2``;
    ``pbar1`` follows from conservation."""

    p1: FourVector
    p2: FourVector
    pbar2: FourVector

    @property
    def pbar1(self) -> FourVector:
        return self.p1 + self.p2 - self.pbar2

    @property
    def total(self) -> FourVector:
        return self.p1 + self.p2

    @property
    def s(self) -> float:
        return self.total.square()

    def validate(self, m_s: float, rtol: float = 1e-8) -> None:
        for name in ("p1", "p2", "pbar2", "pbar1"):
            _check_on_shell(getattr(self, name), m_s, name, rtol)

    def transformed(self, fn) -> "PairKernelPoint":
        return PairKernelPoint(*(FourVector.from_array(fn(v.array)) for v in (self.p1, self.p2, self.pbar2)))


def _summed_propagators(p, k1, k2, m_e, eps):
    return propagator(p - k2, m_e, eps) + propagator(p - k1, m_e, eps)


def _kernel_integrand(point: PairKernelPoint, m_e: float, eps: float):
    p2 = point.p2.array
    pb2 = point.pbar2.array

    def h(k1, k2):
        return _summed_propagators(p2, k1, k2, m_e, eps) * np.conj(
            _summed_propagators(pb2, k1, k2, m_e, eps)
        )

    return h


def pair_kernel(
    point: PairKernelPoint,
    params: ModelParams,
    n: int | None = None,
    seed: int | None = None,
    eps_check: bool = True,
) -> LoopValue:
    """Monte Carlo route for the pair-annihilation kernel gamma(p1, p2, pbar2).

    Evaluated at the smallest scheduled epsilon.  The on-shell propagator
    denominators are bounded below by ``m_e^2``, so the value is stable in
    epsilon; it is recomputed at the next epsilon and a warning is raised if
    the two differ by more than 1%.
    """
    point.validate(params.m_s)
    n = params.mc_samples if n is None else n
    seed = params.seed if seed is None else seed
    eps = params.epsilons()
    total = point.total
    if -total.square() <= 4.0 * params.m_e**2:
        return LoopValue(0.0, 0.0)
    val = phase_space_2body(total, params.m_e, _kernel_integrand(point, params.m_e, eps[-1]), n, seed)
    if eps_check and len(eps) > 1:
        other = phase_space_2body(
            total, params.m_e, _kernel_integrand(point, params.m_e, eps[-2]), n, seed
        )
        if abs(other.value - val.value) > 0.01 * abs(val.value):
            warnings.warn(
                f"pair kernel changes by more than 1% between eps={eps[-2]:.3g} and eps={eps[-1]:.3g}",
                RuntimeWarning,
                stacklevel=2,
            )
    return val


def _cm_angular_sum(point, params, n_theta, n_phi, E, eps):
    m_e = params.m_e
    k_mag = math.sqrt(E * E - m_e * m_e)
    x, wx = np.polynomial.legendre.leggauss(n_theta)
    phi = 2.0 * math.pi * (np.arange(n_phi) + 0.5) / n_phi
    ct = np.repeat(x, n_phi)
    st = np.sqrt(1.0 - ct * ct)
    ph = np.tile(phi, n_theta)
    k1 = np.stack([np.full_like(ct, E), k_mag * st * np.cos(ph), k_mag * st * np.sin(ph), k_mag * ct], axis=1)
    k2 = k1 * np.array([1.0, -1.0, -1.0, -1.0])
    vals = _kernel_integrand(point, m_e, eps)(k1, k2)
    return complex(np.sum(np.repeat(wx, n_phi) * vals) * (2.0 * math.pi / n_phi))


def pair_kernel_cm(point: PairKernelPoint, params: ModelParams) -> LoopValue:
    """CM-frame route: ``1/2 int dOmega sqrt((s+4 m_e^2)/s) theta(...) [...]``
    by Gauss-Legendre x midpoint-azimuth quadrature; the error is the change
    against a half-resolution rule."""
    tot = point.total
    if np.linalg.norm(tot.spatial) > 1e-10 * max(1.0, abs(tot.t)):
        raise ValueError("pair_kernel_cm needs p1 + p2 with vanishing spatial part")
    point.validate(params.m_s)
    s = tot.square()
    m_e = params.m_e
    if -s <= 4.0 * m_e * m_e:
        return LoopValue(0.0, 0.0)
    E = 0.5 * math.sqrt(-s)
    pref = 0.5 * math.sqrt((s + 4.0 * m_e * m_e) / s)
    eps = params.epsilons()[-1]
    nt, nph = params.angular_nodes
    full = _cm_angular_sum(point, params, nt, nph, E, eps)
    half = _cm_angular_sum(point, params, max(nt // 2, 2), max(nph // 2, 2), E, eps)
    return LoopValue(pref * full, pref * abs(full - half) + 1e-15 * abs(pref * full))


# ---------------------------------------------------------------------------
# box function


def _feynman_masses(z, m: Mandelstam, m_s: float, m_e: float):
    z1, z2, z3, z4 = z[:, 0], z[:, 1], z[:, 2], z[:, 3]
    base = m_e * m_e - (z1 + z4) * (z2 + z3) * m_s * m_s
    a = z2 * z3
    b = z1 * z4
    return base + a * m.t + b * m.u, base + a * m.t + b * m.s, base + a * m.s + b * m.u


def min_feynman_mass2(m: Mandelstam, params: ModelParams) -> float:
    """Exact minimum over the simplex of the three Feynman-parameter masses."""
    ms2, me2 = params.m_s**2, params.m_e**2
    best = math.inf
    for x, y in ((m.t, m.u), (m.t, m.s), (m.s, m.u)):
        # with w = z1 + z4: z2 z3 ranges over [0, (1-w)^2/4], z1 z4 over [0, w^2/4]
        a = min(x, 0.0) / 4.0
        b = min(y, 0.0) / 4.0
        g = lambda w: me2 - w * (1 - w) * ms2 + a * (1 - w) ** 2 + b * w * w  # noqa: E731
        cands = [0.0, 1.0]
        curv = 2 * ms2 + 2 * a + 2 * b
        if curv > 0:
            w0 = (ms2 + 2 * a) / curv
            if 0 < w0 < 1:
                cands.append(w0)
        best = min(best, *(g(w) for w in cands))
    return best


def _x_integral(c, beta):
    """``int_0^1 dx (c + beta x(1-x))^-2`` for complex ``c`` off the real axis."""
    c = np.asarray(c, dtype=complex)
    beta = np.broadcast_to(np.asarray(beta, dtype=float), c.shape)
    r = beta / c
    out = np.empty(c.shape, dtype=complex)
    small = np.abs(r) < 1e-3
    rs = r[small]
    # moments of x(1-x): 1/6, 1/30, 1/140, 1/630
    out[small] = (1 - rs / 3 + rs**2 / 10 - rs**3 / 35 + rs**4 / 126) / c[small] ** 2
    big = ~small
    cb, bb = c[big], beta[big]
    d2 = 1 + 4 * cb / bb
    d = np.sqrt(d2)
    a = 0.5 * (1 + d)
    b = 0.5 * (1 - d)
    # the roots a, b = 1 - a sit off the real axis, so log(x - a) is continuous
    # on [0, 1] and each endpoint difference collapses to the log of a ratio
    ends = np.log(-b / a) - np.log(-a / b)
    out[big] = 2 / (cb * d2 * bb) - 2 * ends / (bb * bb * d2 * d)
    return out


def _reduced_feynman_integral(m: Mandelstam, m_s: float, m_e: float, eps: float, rel_tol: float):
    """Same simplex integral in ``w = z1 + z4``, ``z1 = w x``, ``z2 = (1-w) y``.

    Each mass is ``base(w) + A (1-w)^2 y(1-y) + B w^2 x(1-x)``; the ``x``
    integral is done in closed form and ``(w, y)`` adaptively, one term at a
    time.  The relabelling ``(z1, z4) <-> (z2, z3)`` swaps A and B, so the
    more negative coefficient is always put on the closed-form side.
    """
    total = 0.0
    err = 0.0
    converged = True
    regions = []
    for A, B in ((m.t, m.u), (m.t, m.s), (m.s, m.u)):
        if A < B:
            A, B = B, A

        def f(pts, A=A, B=B):
            w, y = pts[:, 0], pts[:, 1]
            c = m_e * m_e - w * (1 - w) * m_s * m_s - 1j * eps + A * (1 - w) ** 2 * y * (1 - y)
            return w * (1 - w) * _x_integral(c, B * w * w)

        r = integrate_square(f, tol=1e-15 * m_e**-4, rel_tol=rel_tol)
        total = total + r.value
        err += r.abs_error
        converged = converged and r.converged
        regions.append(r.diagnostics["regions"])
    return LoopValue(total, err, converged, {"regions": regions})


def loop_a(m: Mandelstam, params: ModelParams) -> LoopValue:
    """Box coefficient ``A(s,t,u) = i/(4pi)^2 sum_j <(M_j^2 - i eps)^-2>``.

    ``<.>`` is the Feynman-parameter average over the simplex (unit total
    measure), which is the normalisation behind ``A -> 3i/(4pi)^2 m_e^-4``.

    When every Feynman mass stays positive on the simplex the epsilon limit is
    analytic: the adaptive simplex rule is used and extrapolated with the
    real/imaginary parity.  Otherwise one parameter is integrated in closed
    form, which keeps the near-singular shell tractable, and a full
    polynomial extrapolation is used.
    """
    m_s, m_e = params.m_s, params.m_e
    euclidean = min_feynman_mass2(m, params) > 0.0

    if euclidean:

        def g(eps):
            def f(z):
                M1, M2, M3 = _feynman_masses(z, m, m_s, m_e)
                return (M1 - 1j * eps) ** -2 + (M2 - 1j * eps) ** -2 + (M3 - 1j * eps) ** -2

            return integrate_simplex(f, tol=1e-15 * m_e**-4, rel_tol=params.simplex_tol)

    else:

        def g(eps):
            return _reduced_feynman_integral(m, m_s, m_e, eps, params.simplex_tol)

    ext = extrapolate_eps(g, params.epsilons(), parity=euclidean)
    diag = dict(ext.diagnostics)
    diag["euclidean"] = euclidean
    k = LOOP_PREFACTOR * FEYNMAN_MEASURE
    return LoopValue(1j * k * ext.value, k * ext.abs_error, ext.converged, diag)


def im_loop_a(m: Mandelstam, params: ModelParams) -> LoopValue:
    a = loop_a(m, params)
    return LoopValue(a.imag, a.abs_error, a.converged, a.diagnostics)


# ---------------------------------------------------------------------------
# bubble


def bubble_absorptive(s: float, params: ModelParams) -> LoopValue:
    """Absorptive part of the chi-loop bubble
    ``B = 1/(2(2pi)^3) int d4q [q^2+m^2-i eps]^-1 [(q-p)^2+m^2-i eps]^-1``
    at ``p^2 = s``: ``Re B = -(1/16) int_0^1 dx theta(-Delta(x))`` with
    ``Delta = m_e^2 + x(1-x) s``.

    The step function is reached as the ``eps -> 0`` limit of
    ``-Im log(Delta - i eps)/pi``, the mass-antiderivative of the
    ``1/(Delta - i eps)`` Feynman integrand, and extrapolated.  The sign makes
    ``Im T_0 = -lam^2 Re B`` non-negative.
    """
    m_e2 = params.m_e**2
    if -s <= 4.0 * m_e2:
        return LoopValue(0.0, 0.0)
    disc = math.sqrt(1.0 + 4.0 * m_e2 / s)
    roots = [0.5 * (1 - disc), 0.5 * (1 + disc)]

    def g(eps):
        f = lambda x: math.atan2(eps, m_e2 + x * (1 - x) * s) / math.pi  # noqa: E731
        val, err = integrate.quad(f, 0.0, 1.0, points=roots, epsabs=1e-13, epsrel=1e-12, limit=200)
        return LoopValue(val, err)

    ext = extrapolate_eps(g, params.epsilons())
    return LoopValue(-ext.real / 16.0, ext.abs_error / 16.0, ext.converged, ext.diagnostics)
