"""Numerical laboratory for the classical limit of Bohmian mechanics in 1D.

Wave functions live on periodic spectral grids; trajectory ensembles follow
the guidance law in quantum equilibrium; the quantum force, the classicality
scales (lambda, L, epsilon, T, tau) and the deviation statistic D quantify
how Newtonian the motion is as epsilon shrinks.
"""

from . import bohm, environment, experiments, field, localplane, propagator, quantum
from .bohm import (TrajectoryEnsemble, equivariance_test, integrate_ensemble,
                   sample_equilibrium, velocity)
from .environment import collapse, detect_components, environment_schedule
from .errors import BohmlabError
from .experiments import (caustic_time, classical_integrate, epsilon_sweep,
                          get_scenario, run_scenario, scenario_library,
                          trajectory_deviation)
from .field import Grid, WaveField, kinetic_energy, make_gaussian, polar_decompose, spectral_gradient
from .localplane import (decompose_packets, local_structure, momentum_readout,
                         stationary_phase_oracle)
from .propagator import PotentialSpec, StepPlan, evolve, make_potential, scale_L, step
from .quantum import (ScaleReport, deviation_D, hj_residual, lambda_of_psi,
                      quantum_force, quantum_potential, scale_report)

__version__ = "0.1.0"
