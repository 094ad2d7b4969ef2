"""Dissipative generators for scalar 2->2 scattering with an unobserved environment field."""
from .kinematics import FourVector, Mandelstam, ModelParams, mandelstam, on_shell
from .quadrature import LoopValue, extrapolate_eps, integrate_simplex, phase_space_2body
from .coefficients import (
    PairKernelPoint,
    bubble_absorptive,
    decay_rate_closed,
    decay_rate_numeric,
    im_loop_a,
    loop_a,
    pair_kernel,
    pair_kernel_cm,
)
from .lindblad import (
    DensityMatrix,
    FockBasis,
    GeneratorMatrices,
    MomentumGrid,
    apply_generator,
    assemble_decay,
    assemble_pair,
    evolve_step,
    sum_rule_check,
)
from .probability import SuperposedPairState, annihilation_probability, sigma_closed, sigma_numeric, sigma_scan
from .symmetry import PoincareElement, SymmetryReport, poincare_suite

__version__ = "0.1.0"
