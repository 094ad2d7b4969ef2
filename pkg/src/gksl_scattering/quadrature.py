"""Integration engines: adaptive cubature on the 3-simplex, iε extrapolation
and two-body phase space (Monte Carlo and deterministic angular nodes)."""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .kinematics import FourVector, boost_array, rest_frame_boost, square

BLOCK_SIZE = 16384
MAX_REGIONS = 20000


@dataclass(frozen=True)
class LoopValue:
    value: complex
    abs_error: float
    converged: bool = True
    diagnostics: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def real(self) -> float:
        return float(np.real(self.value))

    @property
    def imag(self) -> float:
        return float(np.imag(self.value))

    def scaled(self, c) -> "LoopValue":
        return LoopValue(self.value * c, self.abs_error * abs(c), self.converged, self.diagnostics)

    def __add__(self, other: "LoopValue") -> "LoopValue":
        return LoopValue(
            self.value + other.value,
            math.hypot(self.abs_error, other.abs_error),
            self.converged and other.converged,
        )


class IntegrandError(ValueError):
    """Integrand returned a non-finite value."""


def worker_count() -> int:
    raw = os.environ.get("GKSL_THREADS")
    if raw is None or raw.strip() == "":
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"GKSL_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ValueError(f"GKSL_THREADS must be a positive integer, got {raw!r}")
    return n


def _ordered_map(fn, items):
    n = worker_count()
    if n == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# simplex cubature


def _compositions(total, parts):
    if parts == 1:
        yield (total,)
        return
    for i in range(total + 1):
        for rest in _compositions(total - i, parts - 1):
            yield (i,) + rest


def grundmann_moeller(s: int, n: int = 3):
    """Barycentric points and weights of the degree ``2s+1`` Grundmann-Moeller
    rule on the unit n-simplex (weights sum to ``1/n!``)."""
    d = 2 * s + 1
    pts, wts = [], []
    for i in range(s + 1):
        coef = (-1) ** i * 2.0 ** (-2 * s) * (d + n - 2 * i) ** d
        coef /= math.factorial(i) * math.factorial(d + n - i)
        for beta in _compositions(s - i, n + 1):
            pts.append([(2 * b + 1) / (d + n - 2 * i) for b in beta])
            wts.append(coef)
    return np.array(pts), np.array(wts)


def _embedded_rule():
    hi_pts, hi_w = grundmann_moeller(4)
    lo_pts, lo_w = grundmann_moeller(3)
    lo_on_hi = np.zeros_like(hi_w)
    for p, w in zip(lo_pts, lo_w):
        idx = np.flatnonzero(np.all(np.abs(hi_pts - p) < 1e-14, axis=1))
        lo_on_hi[idx[0]] += w
    # weights rescaled so a region of volume V integrates as V * sum(w f)
    return hi_pts, hi_w * 6.0, lo_on_hi * 6.0


_RULE_PTS, _RULE_HI, _RULE_LO = _embedded_rule()

STANDARD_SIMPLEX = np.eye(4)

# index pairs of the six edge midpoints, then the 8 children of Bey's refinement
_EDGES = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]
_CHILDREN = [
    ("v0", "m01", "m02", "m03"),
    ("m01", "v1", "m12", "m13"),
    ("m02", "m12", "v2", "m23"),
    ("m03", "m13", "m23", "v3"),
    ("m01", "m02", "m03", "m13"),
    ("m01", "m02", "m12", "m13"),
    ("m02", "m03", "m13", "m23"),
    ("m02", "m12", "m13", "m23"),
]


@dataclass(frozen=True)
class SimplexRegion:
    """Sub-simplex of ``{z >= 0, sum z = 1}`` given by barycentric corners."""

    vertices: np.ndarray

    @property
    def volume(self) -> float:
        return float(_volumes(self.vertices[None])[0])

    def subdivide(self) -> list["SimplexRegion"]:
        return [SimplexRegion(v) for v in _subdivide(self.vertices[None])]


def _volumes(V):
    e = V[:, 1:, :3] - V[:, :1, :3]
    return np.abs(np.linalg.det(e)) / 6.0


def _subdivide(V):
    named = {f"v{i}": V[:, i] for i in range(4)}
    for a, b in _EDGES:
        named[f"m{a}{b}"] = 0.5 * (V[:, a] + V[:, b])
    kids = [np.stack([named[k] for k in child], axis=1) for child in _CHILDREN]
    return np.concatenate([k[:, None] for k in kids], axis=1).reshape(-1, 4, 4)


def _evaluate(f, V):
    pts = np.einsum("pk,rkj->rpj", _RULE_PTS, V)
    pts = np.where((pts < 0) & (pts >= -1e-14), 0.0, pts)
    flat = pts.reshape(-1, 4)
    vals = np.asarray(f(flat)).reshape(len(V), -1)
    bad = ~np.isfinite(vals)
    if bad.any():
        r, p = np.argwhere(bad)[0]
        raise IntegrandError(f"integrand is not finite at z = {pts[r, p].tolist()}")
    vol = _volumes(V)
    hi = vol * (vals @ _RULE_HI)
    lo = vol * (vals @ _RULE_LO)
    return hi, np.abs(hi - lo)


def integrate_simplex(
    f: Callable[[np.ndarray], np.ndarray],
    tol: float = 1e-10,
    rel_tol: float = 0.0,
    max_regions: int = MAX_REGIONS,
) -> LoopValue:
    """Integrate ``f`` over ``{z_i >= 0, z1+z2+z3+z4 = 1}``.

    ``f`` receives an ``(N, 4)`` array of barycentric points and returns ``N``
    values.  The measure is ``dz1 dz2 dz3`` with ``z4 = 1 - z1 - z2 - z3``, so
    ``f = 1`` integrates to ``1/6``.  Refinement stops once the estimated error
    is below ``max(tol, rel_tol * |value|)``; otherwise the result is returned
    with ``converged=False`` when ``max_regions`` is reached.
    """
    if tol <= 0 and rel_tol <= 0:
        raise ValueError("need a positive tolerance")
    V = STANDARD_SIMPLEX[None].copy()
    est, err = _evaluate(f, V)
    done_val, done_err = 0.0, 0.0
    converged = True
    while True:
        total = done_val + est.sum()
        total_err = done_err + err.sum()
        target = max(tol, rel_tol * abs(total))
        if total_err <= target:
            break
        room = (max_regions - len(V)) // 7
        if room <= 0:
            converged = False
            break
        order = np.argsort(err)[::-1]
        cum = np.cumsum(err[order])
        n_split = int(np.searchsorted(cum, 0.5 * (total_err - target))) + 1
        n_split = min(n_split, room, len(V))
        split = order[:n_split]
        keep = order[n_split:]
        # retire regions whose error is already negligible to bound memory
        small = err[keep] < 1e-3 * target / max(len(V), 1)
        done_val = done_val + est[keep][small].sum()
        done_err = done_err + err[keep][small].sum()
        keep = keep[~small]
        kids = _subdivide(V[split])
        k_est, k_err = _evaluate(f, kids)
        V = np.concatenate([V[keep], kids])
        est = np.concatenate([est[keep], k_est])
        err = np.concatenate([err[keep], k_err])
    return LoopValue(
        complex(total) if np.iscomplexobj(total) else total,
        float(total_err),
        converged,
        {"regions": len(V)},
    )


def _tensor_rule(n):
    x, w = np.polynomial.legendre.leggauss(n)
    x = 0.5 * (x + 1.0)
    X, Y = np.meshgrid(x, x, indexing="ij")
    return np.stack([X.ravel(), Y.ravel()], axis=1), 0.25 * np.outer(w, w).ravel()


_SQUARE_HI = _tensor_rule(12)
_SQUARE_LO = _tensor_rule(8)


def _evaluate_boxes(f, lo, hi):
    span = hi - lo
    area = span[:, 0] * span[:, 1]
    out = []
    for nodes, w in (_SQUARE_HI, _SQUARE_LO):
        pts = lo[:, None, :] + nodes[None] * span[:, None, :]
        vals = np.asarray(f(pts.reshape(-1, 2))).reshape(len(lo), len(w))
        if not np.all(np.isfinite(vals)):
            bad = np.argwhere(~np.isfinite(vals))[0]
            raise IntegrandError(f"non-finite integrand at {pts[bad[0], bad[1]].tolist()}")
        out.append(area * (vals @ w))
    return out[0], np.abs(out[0] - out[1])


def integrate_square(
    f: Callable[[np.ndarray], np.ndarray],
    tol: float = 1e-10,
    rel_tol: float = 0.0,
    max_regions: int = MAX_REGIONS,
) -> LoopValue:
    """Globally adaptive tensor Gauss rule on the unit square.

    ``f`` takes ``(N, 2)`` points.  The error of each cell is the difference
    between 12x12 and 8x8 Gauss-Legendre products; cells are quartered.
    """
    if tol <= 0 and rel_tol <= 0:
        raise ValueError("need a positive tolerance")
    lo = np.zeros((1, 2))
    hi = np.ones((1, 2))
    est, err = _evaluate_boxes(f, lo, hi)
    done_val, done_err = 0.0, 0.0
    converged = True
    while True:
        total = done_val + est.sum()
        total_err = done_err + err.sum()
        target = max(tol, rel_tol * abs(total))
        if total_err <= target:
            break
        room = (max_regions - len(lo)) // 3
        if room <= 0:
            converged = False
            break
        order = np.argsort(err)[::-1]
        cum = np.cumsum(err[order])
        n_split = min(int(np.searchsorted(cum, 0.5 * (total_err - target))) + 1, room, len(lo))
        split, keep = order[:n_split], order[n_split:]
        small = err[keep] < 1e-3 * target / max(len(lo), 1)
        done_val = done_val + est[keep][small].sum()
        done_err = done_err + err[keep][small].sum()
        keep = keep[~small]
        mid = 0.5 * (lo[split] + hi[split])
        a, b = lo[split], hi[split]
        kid_lo = np.concatenate([
            a, np.stack([mid[:, 0], a[:, 1]], 1), np.stack([a[:, 0], mid[:, 1]], 1), mid
        ])
        kid_hi = np.concatenate([
            mid, np.stack([b[:, 0], mid[:, 1]], 1), np.stack([mid[:, 0], b[:, 1]], 1), b
        ])
        k_est, k_err = _evaluate_boxes(f, kid_lo, kid_hi)
        lo = np.concatenate([lo[keep], kid_lo])
        hi = np.concatenate([hi[keep], kid_hi])
        est = np.concatenate([est[keep], k_est])
        err = np.concatenate([err[keep], k_err])
    return LoopValue(
        complex(total) if np.iscomplexobj(total) else total,
        float(total_err),
        converged,
        {"regions": len(lo)},
    )


# ---------------------------------------------------------------------------
# epsilon extrapolation


def _lagrange_at_zero(x):
    x = np.asarray(x, dtype=float)
    w = np.ones_like(x)
    for i in range(len(x)):
        for j in range(len(x)):
            if i != j:
                w[i] *= x[j] / (x[j] - x[i])
    return w


def extrapolate_eps(
    g: Callable[[float], LoopValue],
    schedule: Sequence[float],
    parity: bool = False,
) -> LoopValue:
    """Polynomial (Richardson/Neville) extrapolation of ``g(eps)`` to ``eps -> 0+``.

    With ``parity=True`` the caller asserts ``g`` is analytic at zero with
    ``g(-eps) = conj(g(eps))``: the real part is extrapolated in ``eps**2`` and
    the imaginary part, being odd, vanishes in the limit.
    """
    eps = np.asarray(schedule, dtype=float)
    if len(eps) < 3:
        raise ValueError("need at least 3 epsilon values")
    if np.any(eps <= 0) or np.any(np.diff(eps) >= 0):
        raise ValueError("schedule must be strictly decreasing and positive")
    raw = [g(float(e)) for e in eps]
    vals = np.array([r.value for r in raw], dtype=complex)
    errs = np.array([r.abs_error for r in raw])

    x = eps**2 if parity else eps
    w_full = _lagrange_at_zero(x)
    w_red = _lagrange_at_zero(x[1:])
    if parity:
        re = vals.real
        full = complex(w_full @ re)
        reduced = complex(w_red @ re[1:])
    else:
        full = complex(w_full @ vals)
        reduced = complex(w_red @ vals[1:])
    residual = abs(full - reduced)
    propagated = float(np.abs(w_full) @ errs)

    diffs = np.abs(np.diff(vals))
    slack = 2.0 * (errs[:-1] + errs[1:]) + 1e-13 * np.max(np.abs(vals))
    monotone = bool(np.all(diffs[1:] <= diffs[:-1] + slack[1:]))
    converged = monotone and all(r.converged for r in raw)
    return LoopValue(
        full,
        residual + propagated,
        converged,
        {
            "eps": eps.tolist(),
            "raw": vals.tolist(),
            "residual": residual,
            "monotone": monotone,
            "parity": parity,
        },
    )


# ---------------------------------------------------------------------------
# two-body phase space


def _threshold(total, m):
    total = total.array if isinstance(total, FourVector) else np.asarray(total, dtype=float)
    m2 = -float(square(total))
    return total, m2, m2 > 4.0 * m * m


def _cm_pairs(total, m, cos_t, phi):
    """Back-to-back on-shell CM momenta for the given angles, boosted to the
    frame of ``total``."""
    M = math.sqrt(-float(square(total)))
    e_star = 0.5 * M
    k_star = math.sqrt(max(e_star * e_star - m * m, 0.0))
    sin_t = np.sqrt(np.clip(1.0 - cos_t * cos_t, 0.0, None))
    n = np.stack([sin_t * np.cos(phi), sin_t * np.sin(phi), cos_t], axis=-1)
    k1 = np.concatenate([np.full(cos_t.shape + (1,), e_star), k_star * n], axis=-1)
    k2 = k1.copy()
    k2[..., 1:] *= -1.0
    eta, axis = rest_frame_boost(total)
    if eta != 0.0:
        k1 = boost_array(k1, eta, axis)
        k2 = boost_array(k2, eta, axis)
    return k1, k2, k_star, e_star


def _block_sizes(n, block_size):
    full, rest = divmod(n, block_size)
    return [block_size] * full + ([rest] if rest else [])


def _combine(blocks, n, scale):
    s = sum(b[0] for b in blocks)
    s2 = sum(b[1] for b in blocks)
    mean = s / n
    var = max((s2 - n * abs(mean) ** 2) / max(n - 1, 1), 0.0)
    value = scale * mean
    error = abs(scale) * math.sqrt(var / n)
    return value, error


def _block_stats(vals):
    return complex(vals.sum()) if np.iscomplexobj(vals) else float(vals.sum()), float(
        np.sum(np.abs(vals) ** 2)
    )


def phase_space_2body(
    total,
    m: float,
    h: Callable[[np.ndarray, np.ndarray], np.ndarray],
    n: int,
    seed: int,
    block_size: int = BLOCK_SIZE,
) -> LoopValue:
    """Monte Carlo estimate of
    ``int d3k1 d3k2 / (E1 E2) delta4(total - k1 - k2) h(k1, k2)``.

    CM solid angles are sampled uniformly and the back-to-back momenta boosted
    to the frame of ``total``; the deltas are consumed exactly.  Block ``b``
    draws from ``default_rng([seed, b])`` and block sums are combined in block
    order, so the result does not depend on ``GKSL_THREADS``.
    """
    total, _, above = _threshold(total, m)
    if not above:
        return LoopValue(0.0, 0.0)
    if n < 1:
        raise ValueError("n must be positive")
    M = math.sqrt(-float(square(total)))
    e_star = 0.5 * M
    k_star = math.sqrt(e_star * e_star - m * m)
    jac = 2.0 * math.pi * k_star / e_star

    def run(args):
        b, size = args
        rng = np.random.default_rng([seed, b])
        u = rng.random((2, size))
        k1, k2, _, _ = _cm_pairs(total, m, 2.0 * u[0] - 1.0, 2.0 * math.pi * u[1])
        return _block_stats(np.asarray(h(k1, k2)))

    blocks = _ordered_map(run, list(enumerate(_block_sizes(n, block_size))))
    value, error = _combine(blocks, n, jac)
    return LoopValue(value, error, True, {"samples": n})


def _lab_roots(total, m, nhat):
    """Solve ``E(k) + E(P - k) = E_P`` along lab directions ``nhat``.

    Returns up to two (k1, k2, jacobian-weight) triples per direction, with
    zero weight where no physical root exists.
    """
    e_p = total[0]
    pvec = total[1:]
    pmag = float(np.linalg.norm(pvec))
    M2 = -float(square(total))
    c = nhat @ pvec / pmag if pmag > 0 else np.zeros(len(nhat))
    pc = pmag * c
    a = e_p * e_p - pc * pc
    b = -M2 * pc
    cc = e_p * e_p * m * m - 0.25 * M2 * M2
    disc_raw = b * b - 4.0 * a * cc
    disc = np.clip(disc_raw, 0.0, None)
    out = []
    for sign in (1.0, -1.0):
        k = (-b + sign * np.sqrt(disc)) / (2.0 * a)
        e1 = np.sqrt(k * k + m * m)
        k1 = np.concatenate([e1[:, None], k[:, None] * nhat], axis=1)
        k2 = total[None, :] - k1
        e2 = k2[:, 0]
        ok = (k >= 0) & (0.5 * M2 + pc * k >= 0) & (e2 > 0) & (disc_raw >= 0)
        if sign < 0:
            ok &= disc > 0
        deriv = np.abs(k / e1 + (k - pc) / np.where(e2 > 0, e2, 1.0))
        w = np.where(ok, k * k / (e1 * np.where(e2 > 0, e2, 1.0) * np.where(deriv > 0, deriv, 1.0)), 0.0)
        out.append((k1, k2, w))
    return out


def phase_space_2body_lab(
    total,
    m: float,
    h: Callable[[np.ndarray, np.ndarray], np.ndarray],
    n: int,
    seed: int,
    block_size: int = BLOCK_SIZE,
) -> LoopValue:
    """Same integral as :func:`phase_space_2body`, evaluated directly in the
    frame of ``total``: lab directions of ``k1`` are sampled uniformly and
    the energy delta is solved for ``|k1|`` with its Jacobian.  No boost is
    involved, so it serves as an independent route."""
    total, _, above = _threshold(total, m)
    if not above:
        return LoopValue(0.0, 0.0)

    def run(args):
        b, size = args
        rng = np.random.default_rng([seed, b])
        u = rng.random((2, size))
        cos_t = 2.0 * u[0] - 1.0
        sin_t = np.sqrt(1.0 - cos_t * cos_t)
        phi = 2.0 * math.pi * u[1]
        nhat = np.stack([sin_t * np.cos(phi), sin_t * np.sin(phi), cos_t], axis=1)
        acc = 0.0
        for k1, k2, w in _lab_roots(total, m, nhat):
            hv = np.asarray(h(k1, k2))
            acc = acc + np.where(w > 0, w * hv, 0.0)
        return _block_stats(np.asarray(acc))

    blocks = _ordered_map(run, list(enumerate(_block_sizes(n, block_size))))
    value, error = _combine(blocks, n, 4.0 * math.pi)
    return LoopValue(value, error, True, {"samples": n})


def two_body_nodes(total, m: float, n_theta: int, n_phi: int):
    """Deterministic product rule for the two-body measure.

    Gauss-Legendre in the CM polar cosine, equispaced (midpoint) azimuths.
    Returns ``(k1, k2, w)`` with ``sum(w * h(k1, k2))`` approximating the
    phase-space integral; empty arrays below threshold.
    """
    total, _, above = _threshold(total, m)
    if not above:
        return np.zeros((0, 4)), np.zeros((0, 4)), np.zeros(0)
    x, wx = np.polynomial.legendre.leggauss(n_theta)
    phi = 2.0 * math.pi * (np.arange(n_phi) + 0.5) / n_phi
    cos_t = np.repeat(x, n_phi)
    ph = np.tile(phi, n_theta)
    k1, k2, k_star, e_star = _cm_pairs(total, m, cos_t, ph)
    w = np.repeat(wx, n_phi) * (2.0 * math.pi / n_phi) * k_star / (2.0 * e_star)
    return k1, k2, w
