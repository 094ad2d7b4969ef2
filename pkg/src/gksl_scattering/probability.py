"""Pair annihilation of a superposed two-particle state and the sigma curve.

The incident state is ``(|q, -q> + e^{i delta} |qbar, -qbar>) / sqrt N`` with
``q . qbar = 0`` and ``|q| = |qbar|``.  Both branches share the CM energy, so
the vacuum population after one scattering map is

    P = 16 lam^4/(2pi)^4 * VT/(N w^2) * [g(q,q) + g(qb,qb) + 2 cos(delta) g(q,qb)]

with ``w^2 = -s/4`` and ``g(x, y) = gamma(x, -x, -y)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import coefficients as co
from .kinematics import ModelParams, on_shell, on_shell_array
from .quadrature import LoopValue, _ordered_map, phase_space_2body, two_body_nodes

DEFAULT_NORMALIZATION = 2.0
DEFAULT_SCAN_SAMPLES = 100_000
AGREEMENT_LEVEL = 0.10


@dataclass(frozen=True)
class SuperposedPairState:
    q: tuple
    qbar: tuple
    delta: float = 0.0

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float)
        qb = np.asarray(self.qbar, dtype=float)
        if q.shape != (3,) or qb.shape != (3,):
            raise ValueError("q and qbar must be three-vectors")
        scale = max(float(q @ q), float(qb @ qb), 1e-300)
        if abs(float(q @ qb)) > 1e-9 * scale:
            raise ValueError("q and qbar must be orthogonal")
        if abs(float(q @ q) - float(qb @ qb)) > 1e-9 * scale:
            raise ValueError("q and qbar must have equal magnitude")
        object.__setattr__(self, "q", tuple(map(float, q)))
        object.__setattr__(self, "qbar", tuple(map(float, qb)))

    @classmethod
    def at_energy(cls, x: float, delta: float, params: ModelParams, axes=((0, 0, 1), (1, 0, 0))):
        """State with ``sqrt(-s) = 2 m_e x``; needs ``m_e x >= m_s``."""
        omega = params.m_e * x
        k2 = omega * omega - params.m_s**2
        if k2 < 0:
            raise ValueError("energy below two-particle rest mass")
        k = math.sqrt(k2)
        e1 = np.asarray(axes[0], float) / np.linalg.norm(axes[0])
        e2 = np.asarray(axes[1], float) / np.linalg.norm(axes[1])
        return cls(tuple(k * e1), tuple(k * e2), delta)

    def s(self, m_s: float) -> float:
        k2 = float(np.dot(self.q, self.q))
        return -4.0 * (k2 + m_s * m_s)


def _branch_propagators(state, params, k1, k2, eps):
    p = on_shell_array(np.array([state.q, state.qbar]), params.m_s)
    # "p2" of each branch is the reflected momentum -q; gamma is symmetric in
    # the two incident momenta, so either choice gives the same kernel
    mq = p[0] * np.array([1.0, -1.0, -1.0, -1.0])
    mqb = p[1] * np.array([1.0, -1.0, -1.0, -1.0])
    return (
        co._summed_propagators(mq, k1, k2, params.m_e, eps),
        co._summed_propagators(mqb, k1, k2, params.m_e, eps),
    )


def _superposed_integrand(state, params, eps):
    c = math.cos(state.delta)

    def h(k1, k2):
        fq, fqb = _branch_propagators(state, params, k1, k2, eps)
        return (np.abs(fq) ** 2 + np.abs(fqb) ** 2 + 2.0 * c * np.real(fq * np.conj(fqb))).astype(complex)

    return h


def _cm_rule(state, params, n_theta, n_phi, total, eps):
    k1, k2, w = two_body_nodes(total, params.m_e, n_theta, n_phi)
    return complex(np.sum(w * _superposed_integrand(state, params, eps)(k1, k2)))


def annihilation_probability(
    state: SuperposedPairState,
    params: ModelParams,
    volume_time: float | None = None,
    normalization: float = DEFAULT_NORMALIZATION,
    route: str = "cm",
    n: int | None = None,
    seed: int | None = None,
) -> LoopValue:
    """Vacuum population ``<0|D[rho]|0>`` with ``delta4(0) -> VT``.

    ``route="cm"`` uses the deterministic angular rule (error from a
    half-resolution rule), ``route="mc"`` the two-body Monte Carlo.  The three
    kernels are combined inside one integrand, so the result is exactly linear
    in ``cos(delta)`` for a fixed seed or rule.
    """
    vt = params.volume_time if volume_time is None else volume_time
    s = state.s(params.m_s)
    if -s <= 4.0 * params.m_e**2:
        return LoopValue(0.0, 0.0)
    omega2 = -s / 4.0
    total = on_shell([0.0, 0.0, 0.0], math.sqrt(-s))
    eps = params.epsilons()[-1]
    if route == "cm":
        nt, nph = params.angular_nodes
        full = _cm_rule(state, params, nt, nph, total, eps)
        half = _cm_rule(state, params, max(nt // 2, 2), max(nph // 2, 2), total, eps)
        kern = LoopValue(full, abs(full - half) + 1e-15 * abs(full))
    elif route == "mc":
        n = params.mc_samples if n is None else n
        seed = params.seed if seed is None else seed
        kern = phase_space_2body(total, params.m_e, _superposed_integrand(state, params, eps), n, seed)
    else:
        raise ValueError(f"unknown route {route!r}")
    pref = 16.0 * params.lam**4 / (2.0 * math.pi) ** 4 * vt / (normalization * omega2)
    val = kern.scaled(pref)
    return LoopValue(val.value.real if np.iscomplexobj(val.value) else val.value, val.abs_error, kern.converged, kern.diagnostics)


def _flux(s: float, m_s: float) -> float:
    return 2.0 * math.sqrt(s * (s + 4.0 * m_s * m_s)) / (-s)


def closed_bracket(s: float, delta: float, params: ModelParams) -> float:
    """Curly bracket of the printed probability, evaluated without cancellation."""
    ms2, me2 = params.m_s**2, params.m_e**2
    den = (s + 2.0 * ms2) ** 2
    a = (s + 4.0 * ms2) * (s + 4.0 * me2) / den
    one_minus_a = 4.0 * (ms2 * ms2 - me2 * (s + 4.0 * ms2)) / den
    ra = math.sqrt(a)
    if a < 1e-8:
        log_over_root = 2.0 * (1.0 + a / 3.0 + a * a / 5.0)
    else:
        log_over_root = math.log((1.0 + ra) ** 2 / one_minus_a) / ra
    return 16.0 / one_minus_a + 8.0 * log_over_root + math.cos(delta) * (11.0 - a) / 2.0 * log_over_root


def probability_closed(s: float, delta: float, params: ModelParams, volume_time: float | None = None,
                       normalization: float = DEFAULT_NORMALIZATION) -> float:
    """Printed closed form of the annihilation probability."""
    me2 = params.m_e**2
    if -s <= 4.0 * me2:
        return 0.0
    vt = params.volume_time if volume_time is None else volume_time
    pref = (params.lam / math.pi) ** 4 * vt / normalization * 16.0 * math.pi / (-s)
    pref *= math.sqrt((s + 4.0 * me2) / s) / (s + 2.0 * params.m_s**2) ** 2
    return pref * closed_bracket(s, delta, params)


def _to_sigma(prob_over_vt: float, s: float, params: ModelParams, normalization: float) -> float:
    # m_e^2 sigma = m_e^2 * N * P / (VT u): dimensionless, and equal to the
    # printed N P / (m_e^6 VT u) when m_e = 1
    return params.m_e**2 * normalization * prob_over_vt / _flux(s, params.m_s)


def sigma_closed(x: float, delta: float, params: ModelParams, normalization: float = DEFAULT_NORMALIZATION) -> float:
    """``m_e^2 sigma`` from the printed closed form at ``sqrt(-s) = 2 m_e x``."""
    if x <= 0:
        raise ValueError("x must be positive")
    if x <= 1.0:
        return 0.0
    s = -4.0 * params.m_e**2 * x * x
    p = probability_closed(s, delta, params, volume_time=1.0, normalization=normalization)
    return _to_sigma(p, s, params, normalization)


def sigma_numeric(x: float, delta: float, params: ModelParams, route: str = "mc", n: int | None = None,
                  seed: int | None = None, normalization: float = DEFAULT_NORMALIZATION) -> LoopValue:
    if x <= 0:
        raise ValueError("x must be positive")
    s = -4.0 * params.m_e**2 * x * x
    if x <= 1.0 or params.m_e * x < params.m_s:
        return LoopValue(0.0, 0.0)
    state = SuperposedPairState.at_energy(x, delta, params)
    p = annihilation_probability(state, params, volume_time=1.0, normalization=normalization,
                                 route=route, n=n, seed=seed)
    k = _to_sigma(1.0, s, params, normalization)
    return LoopValue(p.real * k, p.abs_error * k, p.converged)


@dataclass(frozen=True)
class ScanRow:
    x: float
    delta: float
    sigma_closed: float
    sigma_numeric: float
    numeric_error: float

    @property
    def ratio(self) -> float:
        """closed / numeric, NaN where the numeric value vanishes."""
        if self.sigma_numeric == 0:
            return math.nan
        return self.sigma_closed / self.sigma_numeric

    @property
    def agrees(self) -> bool:
        if self.sigma_numeric == 0:
            return self.sigma_closed == 0
        return abs(self.ratio - 1.0) <= AGREEMENT_LEVEL


def sigma_scan(x_min: float, x_max: float, steps: int, deltas, params: ModelParams,
               n: int | None = None, seed: int | None = None, route: str = "mc") -> list[ScanRow]:
    """Rows ordered by (x index, delta index); numeric column from the oracle route."""
    if not 0 < x_min < x_max:
        raise ValueError("need 0 < x_min < x_max")
    if steps < 2:
        raise ValueError("steps must be at least 2")
    n = DEFAULT_SCAN_SAMPLES if n is None else n
    seed = params.seed if seed is None else seed
    xs = np.linspace(x_min, x_max, steps)
    jobs = [(float(x), float(d)) for x in xs for d in deltas]

    def row(job):
        x, d = job
        num = sigma_numeric(x, d, params, route=route, n=n, seed=seed)
        return ScanRow(x, d, sigma_closed(x, d, params), float(num.real), float(num.abs_error))

    return _ordered_map(row, jobs)


def discrepancy_factors(rows) -> dict:
    """Median closed/numeric ratio per delta over above-threshold rows."""
    out = {}
    for d in sorted({r.delta for r in rows}):
        ratios = [r.ratio for r in rows if r.delta == d and r.sigma_numeric > 0 and r.sigma_closed > 0]
        out[d] = float(np.median(ratios)) if ratios else math.nan
    return out


def agreement_fraction(rows) -> float:
    above = [r for r in rows if r.x > 1.0]
    if not above:
        return math.nan
    return sum(r.agrees for r in above) / len(above)
