"""GKSL generators on a box-discretised Fock space.

Discretisation dictionary (box of side ``L``, time extent ``T``)::

    d3p            -> (2 pi / L)^3 sum_n
    |p>            -> (L / 2 pi)^{3/2} |n>
    delta3(p - p') -> (L / 2 pi)^3 kron(n, n')
    delta(0)       -> T / 2 pi

Energy conservation on the grid is a bin match: two states are connected when
their total three-momenta agree and ``floor(E / dE)`` agrees, ``dE = 2 pi / T``.
"""
from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import coefficients as co
from .kinematics import FourVector, Mandelstam, ModelParams, on_shell_array, square
from .quadrature import _ordered_map, two_body_nodes

DEFAULT_BOX_LENGTH = 4.0
DEFAULT_TIME_EXTENT = 20.0
EIGEN_CUTOFF = 1e-12
GUARD = 0.1


@dataclass(frozen=True)
class MomentumGrid:
    """Momenta ``(2 pi / L) n`` with every ``|n_i| <= n_max``."""

    box_length: float = DEFAULT_BOX_LENGTH
    max_mode: int = 1
    time_extent: float = DEFAULT_TIME_EXTENT

    def __post_init__(self):
        if not self.box_length > 0:
            raise ValueError("box_length must be positive")
        if int(self.max_mode) != self.max_mode or self.max_mode < 0:
            raise ValueError("max_mode must be a nonnegative integer")
        if not self.time_extent > 0:
            raise ValueError("time_extent must be positive")

    @property
    def unit(self) -> float:
        return 2.0 * math.pi / self.box_length

    @property
    def volume(self) -> float:
        return self.box_length**3

    @property
    def energy_bin(self) -> float:
        return 2.0 * math.pi / self.time_extent

    @cached_property
    def modes(self) -> np.ndarray:
        r = range(-self.max_mode, self.max_mode + 1)
        return np.array(list(itertools.product(r, r, r)), dtype=int)

    @property
    def momenta(self) -> np.ndarray:
        return self.unit * self.modes

    def index(self, n) -> int:
        n = np.asarray(n, dtype=int)
        hit = np.flatnonzero(np.all(self.modes == n, axis=1))
        if len(hit) == 0:
            raise KeyError(f"mode {n.tolist()} not on the grid")
        return int(hit[0])


class FockBasis:
    """Vacuum, one-particle modes and unordered two-particle mode pairs.

    Basis vectors are orthonormal: ``|i j> = a_i^+ a_j^+ |0>`` for ``i < j``
    and ``|i i> = a_i^+ a_i^+ |0> / sqrt 2``.
    """

    def __init__(self, grid: MomentumGrid, one: bool = True, two: bool = True):
        self.grid = grid
        k = len(grid.modes)
        self.one_particle = np.arange(1, 1 + k) if one else np.zeros(0, dtype=int)
        self.pairs = np.array([(i, j) for i in range(k) for j in range(i, k)], dtype=int).reshape(-1, 2)
        if not two:
            self.pairs = self.pairs[:0]
        start = 1 + len(self.one_particle)
        self.two_particle = np.arange(start, start + len(self.pairs))
        self.dim = start + len(self.pairs)
        self._pair_lookup = {tuple(p): int(n) for p, n in zip(self.pairs, self.two_particle)}

    def __len__(self):
        return self.dim

    def one_index(self, mode) -> int:
        if len(self.one_particle) == 0:
            raise KeyError("no one-particle sector")
        return int(self.one_particle[self.grid.index(mode)])

    def pair_index(self, mode_a, mode_b) -> int:
        i, j = sorted((self.grid.index(mode_a), self.grid.index(mode_b)))
        return self._pair_lookup[(i, j)]

    def sector(self, index: int) -> int:
        if index == 0:
            return 0
        return 1 if index < 1 + len(self.one_particle) else 2

    def pair_state(self, mode_a, mode_b) -> tuple[int, float]:
        """Basis index and coefficient of the continuum-normalised ``a^+ a^+|0>``."""
        idx = self.pair_index(mode_a, mode_b)
        same = self.grid.index(mode_a) == self.grid.index(mode_b)
        return idx, math.sqrt(2.0) if same else 1.0


class DensityMatrix:
    """Hermitian, unit-trace, positive matrix over a FockBasis."""

    def __init__(self, basis: FockBasis, data, check: bool = True):
        data = np.array(data, dtype=complex)
        if data.shape != (basis.dim, basis.dim):
            raise ValueError(f"expected shape {(basis.dim, basis.dim)}, got {data.shape}")
        if check:
            if np.max(np.abs(data - data.conj().T)) > 1e-12:
                raise ValueError("density matrix is not Hermitian")
            if abs(np.trace(data) - 1.0) > 1e-12:
                raise ValueError("density matrix trace differs from 1")
            if np.linalg.eigvalsh(data).min() < -1e-10:
                raise ValueError("density matrix has negative eigenvalues")
        self.basis = basis
        self.data = data

    @classmethod
    def pure(cls, basis: FockBasis, amplitudes) -> "DensityMatrix":
        psi = np.asarray(amplitudes, dtype=complex)
        psi = psi / np.linalg.norm(psi)
        return cls(basis, np.outer(psi, psi.conj()))

    @classmethod
    def vacuum(cls, basis: FockBasis) -> "DensityMatrix":
        psi = np.zeros(basis.dim)
        psi[0] = 1.0
        return cls.pure(basis, psi)

    @classmethod
    def random(cls, basis: FockBasis, rng: np.random.Generator, rank: int | None = None) -> "DensityMatrix":
        rank = basis.dim if rank is None else rank
        g = rng.normal(size=(basis.dim, rank)) + 1j * rng.normal(size=(basis.dim, rank))
        rho = g @ g.conj().T
        rho = 0.5 * (rho + rho.conj().T)
        return cls(basis, rho / np.trace(rho).real)

    def trace(self) -> complex:
        return complex(np.trace(self.data))

    def purity(self) -> float:
        return float(np.real(np.vdot(self.data, self.data)))

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.data)

    def population(self, sector: int) -> float:
        b = self.basis
        idx = {0: np.array([0]), 1: b.one_particle, 2: b.two_particle}[sector]
        return float(np.real(np.trace(self.data[np.ix_(idx, idx)])))


@dataclass(frozen=True, eq=False)
class GeneratorMatrices:
    """``L[rho] = -i[M, rho] + Tr(K rho) |0><0| - {K, rho}/2``.

    ``kernel`` is Gamma restricted to ``kernel_indices`` with rows labelling
    the barred (bra-side) state, so the jump operators are ``|0><u|`` scaled
    by the square roots of its eigenvalues.
    """

    basis: FockBasis
    hamiltonian_part: np.ndarray
    kernel: np.ndarray
    kernel_indices: np.ndarray
    info: dict = field(default_factory=dict)

    @cached_property
    def spectrum(self):
        if self.kernel.size == 0:
            return np.zeros(0), np.zeros((0, 0))
        mu, U = np.linalg.eigh(self.kernel)
        return mu, U

    @cached_property
    def lindblad_kernel(self) -> np.ndarray:
        """Gamma embedded in the full basis."""
        G = np.zeros((self.basis.dim, self.basis.dim), dtype=complex)
        idx = self.kernel_indices
        G[np.ix_(idx, idx)] = self.kernel
        return G

    @cached_property
    def _truncated(self) -> np.ndarray:
        mu, U = self.spectrum
        G = np.zeros((self.basis.dim, self.basis.dim), dtype=complex)
        if len(mu) == 0 or mu.max() <= 0:
            return G
        keep = mu > EIGEN_CUTOFF * mu.max()
        V = U[:, keep]
        G[np.ix_(self.kernel_indices, self.kernel_indices)] = (V * mu[keep]) @ V.conj().T
        return G

    def lindblad_operators(self) -> list[np.ndarray]:
        mu, U = self.spectrum
        ops = []
        if len(mu) == 0 or mu.max() <= 0:
            return ops
        for m, u in zip(mu, U.T):
            if m > EIGEN_CUTOFF * mu.max():
                L = np.zeros((self.basis.dim, self.basis.dim), dtype=complex)
                L[0, self.kernel_indices] = math.sqrt(m) * u.conj()
                ops.append(L)
        return ops

    def min_eigen_ratio(self) -> float:
        mu, _ = self.spectrum
        if len(mu) == 0 or mu.max() <= 0:
            return 0.0
        return float(mu.min() / mu.max())

    def __add__(self, other: "GeneratorMatrices") -> "GeneratorMatrices":
        if other.basis is not self.basis:
            raise ValueError("generators live on different bases")
        idx = np.union1d(self.kernel_indices, other.kernel_indices)
        pos = {int(i): n for n, i in enumerate(idx)}
        K = np.zeros((len(idx), len(idx)), dtype=complex)
        for g in (self, other):
            sel = [pos[int(i)] for i in g.kernel_indices]
            K[np.ix_(sel, sel)] += g.kernel
        return GeneratorMatrices(
            self.basis, self.hamiltonian_part + other.hamiltonian_part, K, idx, {**self.info, **other.info}
        )


def apply_generator(gen: GeneratorMatrices, rho) -> np.ndarray:
    """Action of the generator on ``rho`` (DensityMatrix or square array)."""
    data = rho.data if isinstance(rho, DensityMatrix) else np.asarray(rho, dtype=complex)
    if data.shape != gen.hamiltonian_part.shape:
        raise ValueError(f"shape mismatch: generator {gen.hamiltonian_part.shape}, state {data.shape}")
    M = gen.hamiltonian_part
    G = gen._truncated
    out = -1j * (M @ data - data @ M) - 0.5 * (G @ data + data @ G)
    out[0, 0] += np.sum(G * data.T)
    return out


def evolve_step(gen: GeneratorMatrices, rho: DensityMatrix, dt_effective: float) -> DensityMatrix:
    """One scattering map ``rho + dt L[rho]``, re-Hermitised and trace-renormalised.

    Only a single application corresponds to the in-to-out map; repeating it
    is a heuristic.
    """
    if dt_effective < 0:
        raise ValueError("dt_effective must be nonnegative")
    if dt_effective == 0:
        return DensityMatrix(rho.basis, rho.data.copy(), check=False)
    Lr = apply_generator(gen, rho)
    size = np.abs(np.linalg.eigvalsh(0.5 * (Lr + Lr.conj().T))).sum()
    if size * dt_effective > GUARD:
        raise ValueError(
            f"weak-coupling guard violated: |L[rho]| dt = {size * dt_effective:.3g} > {GUARD}; "
            "reduce the coupling, the time extent or dt"
        )
    new = rho.data + dt_effective * Lr
    new = 0.5 * (new + new.conj().T)
    new /= np.trace(new).real
    low = np.linalg.eigvalsh(new).min()
    if low < -1e-8:
        warnings.warn(f"state lost positivity: smallest eigenvalue {low:.3g}", RuntimeWarning, stacklevel=2)
    return DensityMatrix(rho.basis, new, check=False)


# ---------------------------------------------------------------------------
# assembly


def assemble_decay(grid: MomentumGrid, params: ModelParams, basis: FockBasis | None = None, route: str = "closed"):
    """Decay of one-particle modes into the vacuum.

    ``Gamma_nn = gamma T / (2 pi omega_n)``; the ``L^3`` factors of the state
    normalisation and of ``delta3(0)`` cancel.  No Hamiltonian part: the
    renormalised forward amplitude vanishes in this sector.
    """
    basis = FockBasis(grid) if basis is None else basis
    if route == "closed":
        gamma = co.decay_rate_closed(params)
    elif route == "numeric":
        gamma = co.decay_rate_numeric(params).real
    else:
        raise ValueError(f"unknown route {route!r}")
    omega = np.sqrt(np.sum(grid.momenta**2, axis=1) + params.m_s**2)
    if len(basis.one_particle) and np.any(omega == 0):
        raise ValueError("massless zero mode has no finite decay weight")
    diag = gamma * grid.time_extent / (2.0 * math.pi) / omega if len(basis.one_particle) else np.zeros(0)
    K = np.diag(diag[: len(basis.one_particle)]).astype(complex)
    M = np.zeros((basis.dim, basis.dim), dtype=complex)
    return GeneratorMatrices(basis, M, K, basis.one_particle.copy(), {"gamma": gamma, "route": route})


def _pair_kinematics(grid: MomentumGrid, basis: FockBasis, m_s: float):
    p = on_shell_array(grid.momenta, m_s)
    P = p[basis.pairs[:, 0]] + p[basis.pairs[:, 1]]
    same = basis.pairs[:, 0] == basis.pairs[:, 1]
    weight = np.where(same, math.sqrt(2.0), 2.0)
    return p, P, weight


def energy_blocks(grid: MomentumGrid, basis: FockBasis, m_s: float) -> list[np.ndarray]:
    """Pair indices grouped by total three-momentum and energy bin."""
    _, P, _ = _pair_kinematics(grid, basis, m_s)
    n_tot = grid.modes[basis.pairs[:, 0]] + grid.modes[basis.pairs[:, 1]]
    groups: dict = {}
    for k in range(len(basis.pairs)):
        key = (*map(int, n_tot[k]), int(math.floor(P[k, 0] / grid.energy_bin)))
        groups.setdefault(key, []).append(k)
    return [np.array(v) for _, v in sorted(groups.items())]


def _block_gram(pp, P, block, params, n_theta, n_phi):
    """``int dmu f_a conj(f_b)`` on the shell of the block's mean four-momentum."""
    total = P[block].mean(axis=0)
    k1, k2, w = two_body_nodes(total, params.m_e, n_theta, n_phi)
    if len(w) == 0:
        return np.zeros((len(block), len(block)), dtype=complex)
    eps = params.epsilons()[-1]
    F = np.stack([co._summed_propagators(pp[a], k1, k2, params.m_e, eps) for a in block])
    return (F * w) @ F.conj().T


def _cache_key(m: Mandelstam, digits: int = 10) -> Mandelstam:
    """Rounded triple with ``t <= u``; the box function is symmetric in t, u."""
    s, t, u = (round(v, digits) + 0.0 for v in (m.s, m.t, m.u))
    return Mandelstam(s, min(t, u), max(t, u))


def assemble_pair(grid: MomentumGrid, params: ModelParams, basis: FockBasis | None = None, with_hamiltonian: bool = True):
    """Pair annihilation (dissipator) and elastic forward scattering (Hamiltonian).

    Two-particle states within one conservation block are coupled with

    ``Gamma[b, a] = 4 lam^4/(2pi)^4 (2pi/L)^3 (T/2pi) w_a w_b gamma(a, b) / sqrt(w^4)``
    ``M[b, a]     = -2 lam^4/(2pi)^6 (2pi/L)^3 (T/2pi) w_a w_b Im A(s,t,u) / sqrt(w^4)``

    where ``w = 2`` for distinct modes (two orderings) and ``sqrt 2`` for a
    doubly occupied mode.
    """
    if params.m_s >= 2.0 * params.m_e:
        raise ValueError("pair generator assumes a stable field, m_s < 2 m_e")
    basis = FockBasis(grid) if basis is None else basis
    pidx = basis.two_particle
    n = len(pidx)
    p, P, weight = _pair_kinematics(grid, basis, params.m_s)
    omega4 = p[basis.pairs[:, 0], 0] * p[basis.pairs[:, 1], 0]
    norm = (2.0 * math.pi / grid.box_length) ** 3 * grid.time_extent / (2.0 * math.pi)
    scale = weight / np.sqrt(omega4)
    blocks = energy_blocks(grid, basis, params.m_s)

    K = np.zeros((n, n), dtype=complex)
    n_theta, n_phi = params.angular_nodes
    second = p[basis.pairs[:, 1]]
    for block in blocks:
        g = _block_gram(second, P, block, params, n_theta, n_phi)
        # rows: barred state; gamma(a, b) = int f_a conj(f_b) sits at [b, a]
        K[np.ix_(block, block)] = (4.0 * params.lam**4 / (2.0 * math.pi) ** 4) * norm * (
            np.outer(scale[block], scale[block]) * g.T
        )
    K = 0.5 * (K + K.conj().T)
    mu = np.linalg.eigvalsh(K) if n else np.zeros(0)
    if n and mu.max() > 0 and mu.min() < -1e-8 * mu.max():
        raise ArithmeticError(f"pair kernel is not positive semidefinite: {mu.min():.3g} vs {mu.max():.3g}")

    M = np.zeros((basis.dim, basis.dim), dtype=complex)
    info = {"blocks": len(blocks), "loop_calls": 0, "nonconverged": 0}
    if with_hamiltonian:
        entries = []
        for block in blocks:
            for x, a in enumerate(block):
                for b in block[x:]:
                    entries.append((a, b))
        points = {}
        for a, b in entries:
            i1, i2 = basis.pairs[a]
            j1, j2 = basis.pairs[b]
            p1, p2, q1, q2 = p[i1], p[i2], p[j1], p[j2]
            Ptot = 0.5 * (P[a] + P[b])
            s = float(square(Ptot))
            t = 0.5 * float(square(p1 - q1) + square(p2 - q2))
            u = 0.5 * float(square(p1 - q2) + square(p2 - q1))
            points[(a, b)] = _cache_key(Mandelstam(s, t, u))
        unique = sorted(set(points.values()), key=lambda m: (m.s, m.t, m.u))
        values = _ordered_map(lambda m: co.im_loop_a(m, params), unique)
        table = dict(zip(unique, values))
        info["loop_calls"] = len(unique)
        info["nonconverged"] = sum(not v.converged for v in values)
        pref = -2.0 * params.lam**4 / (2.0 * math.pi) ** 6 * norm
        for (a, b), m in points.items():
            val = pref * scale[a] * scale[b] * table[m].real
            M[pidx[b], pidx[a]] = val
            M[pidx[a], pidx[b]] = val
    return GeneratorMatrices(basis, M, K, pidx.copy(), info)


# ---------------------------------------------------------------------------
# unitarity sum rule


@dataclass(frozen=True)
class SumRuleReport:
    lhs: float
    rhs: float
    rhs_error: float
    relative_deviation: float
    above_threshold: bool


def sum_rule_check(params: ModelParams, p=None, n: int | None = None, seed: int | None = None) -> SumRuleReport:
    """Decay-sector unitarity: ``Im T0 = 1/2 sum_beta T_beta^+ T_beta``.

    Both sides are the coefficient of the common ``delta4 / omega`` structure.
    The left side is the chi-loop absorptive part,
    ``2 * (-lam^2 Re B(s = -m_s^2))``, the 2 counting the contractions of the
    two chi fields at one vertex.  The right side is
    ``1/2 * 1/2! * lam^2/(4 pi) * Phi(p)`` with the two-body phase space
    ``Phi`` computed by the lab-frame root solver at momentum ``p``
    (default ``|p| = m_s`` along z) and the ``1/2!`` from identical chi
    particles in the completeness sum.
    """
    if p is None:
        p = on_shell_array(np.array([0.0, 0.0, params.m_s]), params.m_s)
    pv = p if isinstance(p, FourVector) else FourVector.from_array(p)
    bub = co.bubble_absorptive(-params.m_s**2, params)
    lhs = co.BUBBLE_CONTRACTION_FACTOR * (-(params.lam**2) * bub.real)
    rate = co.decay_rate_numeric(params, pv, route="lab", n=n, seed=seed)
    rhs = 0.5 * co.IDENTICAL_PAIR_FACTOR * rate.real
    err = 0.5 * co.IDENTICAL_PAIR_FACTOR * rate.abs_error
    above = params.m_s > 2.0 * params.m_e
    if lhs == 0 and rhs == 0:
        dev = 0.0
    else:
        dev = abs(lhs - rhs) / max(abs(lhs), abs(rhs))
    return SumRuleReport(lhs, rhs, err, dev, above)
