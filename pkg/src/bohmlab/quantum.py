"""Quantum potential and force, Hamilton-Jacobi residuals, classicality
scales and the dimensionless deviation statistic evaluated along ensembles.

Conventions: lambda = h / sqrt(2 m E_kin); v = h/(m lambda); T = L/v;
tau = hbar/E_kin; epsilon = lambda/L (lambda/L_o for quadratic potentials).
The deviation is D = (T^2/(m L)) F_Q along trajectories, i.e. the quantum
contribution to the acceleration in macroscopic units, dividing by the mass
once; the convention is recorded in output metadata.
"""

from dataclasses import dataclass, field as dataclass_field

import numpy as np

from .errors import (AllNodes, MissingLo, NearNode, TooManyFlagged,
                     ZeroKineticEnergy)
from .field import (NODE_FLOOR_DEFAULT, cubic_interp, kinetic_energy,
                    polar_decompose, spectral_gradient, spectral_laplacian)
from .propagator import scale_L

DEVIATION_CONVENTION = "D = T_eff^2 * F_Q / (m * L_eff); F_Q/m is the quantum acceleration"


def _smoothed_amplitude(psi, node_floor, smoothing):
    """|psi| with a smooth floor so nodes do not inject spectral ringing.

    Returns (R_s, node_mask). The floor sqrt(R^2 + a^2) regularizes kinks at
    nodes on the amplitude scale a = smoothing * max|psi|; points below
    node_floor * max|psi| are reported masked either way.
    """
    R = np.abs(psi.psi)
    rmax = R.max()
    if rmax == 0.0 or np.all(R < node_floor * rmax):
        raise AllNodes("wave amplitude below node threshold everywhere")
    mask = R < node_floor * rmax
    a = smoothing * rmax
    return np.sqrt(R ** 2 + a ** 2), mask


def quantum_potential(psi, node_floor=NODE_FLOOR_DEFAULT, smoothing=None):
    """V_Q = -(hbar^2/2m) (laplacian R)/R on the grid.

    The Laplacian is spectral; values inside the node mask are bridged by the
    smooth amplitude floor and must be treated as missing. Returns
    (values, node_mask).
    """
    if smoothing is None:
        smoothing = node_floor
    R_s, mask = _smoothed_amplitude(psi, node_floor, smoothing)
    lap = spectral_laplacian(R_s, psi.grid).real
    vq = -(psi.hbar ** 2) / (2.0 * psi.mass) * lap / R_s
    return vq, mask


def quantum_force_grid(psi, node_floor=NODE_FLOOR_DEFAULT, smoothing=None):
    """F_Q = -grad V_Q on the grid (spectral), with the node mask."""
    vq, mask = quantum_potential(psi, node_floor, smoothing)
    fq = -spectral_gradient(vq, psi.grid).real
    return fq, mask


def quantum_force(psi, x, node_floor=NODE_FLOOR_DEFAULT, smoothing=None):
    """Quantum force interpolated to position(s) x.

    Raises NearNode if the interpolation stencil touches a masked segment.
    """
    fq, mask = quantum_force_grid(psi, node_floor, smoothing)
    touched = cubic_interp(mask.astype(float), psi.grid, x)
    if np.any(np.abs(touched) > 1e-12):
        raise NearNode("requested position lies in a masked node segment")
    return cubic_interp(fq, psi.grid, x).real


def _align_phase_branch(S, S_ref, valid, hbar):
    """Shift S by the 2*pi*hbar multiple minimizing the L2 jump from S_ref."""
    two_pi_h = 2.0 * np.pi * hbar
    k = np.round(np.mean(S[valid] - S_ref[valid]) / two_pi_h)
    return S - two_pi_h * k


def hj_residual(snapshots, t_index, pot, node_floor=NODE_FLOOR_DEFAULT):
    """Pointwise residuals of the modified Hamilton-Jacobi and continuity
    equations at snapshot t_index.

    Needs snapshots t_index-1 .. t_index+1 for the central time difference of
    S; consecutive snapshots must be close enough that the phase advances by
    less than pi anywhere, otherwise branch alignment removes real evolution.
    Returns (hj, continuity, node_mask) with both residuals meaningful on
    unmasked points only.
    """
    if t_index < 1 or t_index + 1 >= len(snapshots):
        raise ValueError("need snapshots on both sides of t_index")
    prev_w, cur, next_w = snapshots[t_index - 1], snapshots[t_index], snapshots[t_index + 1]
    dt_s = (next_w.time - prev_w.time) / 2.0
    hbar, m = cur.hbar, cur.mass
    g = cur.grid

    polar_prev = polar_decompose(prev_w, node_floor)
    polar_cur = polar_decompose(cur, node_floor)
    polar_next = polar_decompose(next_w, node_floor)
    mask = polar_prev.node_mask | polar_cur.node_mask | polar_next.node_mask
    valid = ~mask

    s_prev = _align_phase_branch(polar_prev.S, polar_cur.S, valid, hbar)
    s_next = _align_phase_branch(polar_next.S, polar_cur.S, valid, hbar)
    dS_dt = (s_next - s_prev) / (2.0 * dt_s)

    # grad S = hbar Im(grad psi / psi): pointwise from periodic spectral data,
    # avoiding differentiation of the non-periodic unwrapped S
    dpsi = spectral_gradient(cur.psi, g)
    grad_s = hbar * np.imag(dpsi / np.where(mask, 1.0, cur.psi))
    grad_s[mask] = 0.0

    vq, vq_mask = quantum_potential(cur, node_floor)
    mask = mask | vq_mask
    hj = dS_dt + grad_s ** 2 / (2.0 * m) + pot.v(g.x) + vq

    rho_t = (polar_next.R ** 2 - polar_prev.R ** 2) / (2.0 * dt_s)
    flux = polar_cur.R ** 2 * grad_s / m
    continuity = rho_t + spectral_gradient(flux, g).real
    return hj, continuity, mask


def lambda_of_psi(psi):
    """de Broglie wavelength h / sqrt(2 m E_kin)."""
    ekin = kinetic_energy(psi)
    if ekin <= 0.0:
        raise ZeroKineticEnergy("E_kin must be positive")
    return 2.0 * np.pi * psi.hbar / np.sqrt(2.0 * psi.mass * ekin)


@dataclass(frozen=True)
class ScaleReport:
    lam: float              # de Broglie wavelength of the state
    L: float                # scale of variation of the potential (may be inf)
    epsilon: float          # lam / L, or lam / L_o in the quadratic case
    v: float                # h / (m lam)
    T: float                # L / v (inf when L is)
    tau: float              # hbar / E_kin
    e_kin: float
    L_o: float | None = None
    quadratic_case: bool = False

    @property
    def L_eff(self):
        return self.L if np.isfinite(self.L) else self.L_o

    @property
    def T_eff(self):
        if np.isfinite(self.T):
            return self.T
        return self.L_o / self.v if self.L_o is not None else np.inf

    @property
    def tau_over_T(self):
        t = self.T_eff
        return self.tau / t if t and np.isfinite(t) else 0.0

    def as_dict(self):
        return {
            "lambda": self.lam, "L": self.L, "epsilon": self.epsilon,
            "v": self.v, "T": self.T, "tau": self.tau, "e_kin": self.e_kin,
            "L_o": self.L_o, "quadratic_case": self.quadratic_case,
            "L_eff": self.L_eff,
            "T_eff": self.T_eff if np.isfinite(self.T_eff) else None,
            "tau_over_T": self.tau_over_T,
        }


def scale_report(psi, pot, L_o=None, require_finite=False):
    """Assemble lambda, L, epsilon, v, T, tau for a state and potential.

    For quadratic potentials L = inf; epsilon falls back to lambda/L_o when a
    reference length is supplied, otherwise it is reported as 0 with the
    quadratic_case flag set (MissingLo if the caller requires finite scales).
    """
    lam = lambda_of_psi(psi)
    ekin = kinetic_energy(psi)
    L = scale_L(pot)
    v = 2.0 * np.pi * psi.hbar / (psi.mass * lam)
    tau = psi.hbar / ekin
    quadratic = not np.isfinite(L)
    if quadratic:
        if L_o is not None:
            eps = lam / L_o
        elif require_finite:
            raise MissingLo("L = inf and no L_o supplied")
        else:
            eps = 0.0
    else:
        eps = lam / L
    return ScaleReport(lam=lam, L=L, epsilon=eps, v=v,
                       T=L / v if not quadratic else np.inf,
                       tau=tau, e_kin=ekin, L_o=L_o, quadratic_case=quadratic)


@dataclass
class DeviationRecord:
    t_prime: np.ndarray          # macroscopic times t/T_eff
    d: np.ndarray                # [n_particles x n_times], NaN where invalid
    particle_ok: np.ndarray      # particles entering the statistics
    sup_abs: np.ndarray          # sup_t |D| per included particle
    quantiles: dict              # percentile -> value of sup|D|
    exceedance: dict             # delta -> P(sup|D| > delta)
    mean_sq: float               # L2 mean of sup|D|
    flagged_fraction: float
    metadata: dict = dataclass_field(default_factory=dict)


DELTA_DEFAULT = (0.01, 0.03, 0.1, 0.3)
QUANTILES_DEFAULT = (50, 90, 99)


def deviation_D(ensemble, snapshots, scales, delta_list=DELTA_DEFAULT,
                node_floor=NODE_FLOOR_DEFAULT, max_flagged=0.1):
    """Dimensionless quantum acceleration D(t') along ensemble trajectories.

    D = (T_eff^2/(m L_eff)) F_Q(X(t), t) sampled at snapshot times, with
    t' = t/T_eff. Near-node particles are excluded and reported; requires at
    least (1 - max_flagged) of the ensemble unflagged.
    """
    L_eff = scales.L_eff
    if L_eff is None or not np.isfinite(L_eff):
        raise MissingLo("deviation needs finite scales; supply L_o for quadratic potentials")
    T_eff = scales.T_eff
    mass = snapshots[0].mass
    pref = T_eff ** 2 / (mass * L_eff)

    ok = ensemble.flags == 0
    flagged_fraction = 1.0 - ok.mean()
    if flagged_fraction > max_flagged:
        raise TooManyFlagged(f"{flagged_fraction:.1%} of trajectories flagged")

    times = ensemble.times
    n_p, n_t = ensemble.positions.shape
    if n_t != len(snapshots):
        raise ValueError("ensemble and snapshots disagree on the time grid")
    d = np.full((n_p, n_t), np.nan)
    for k, snap in enumerate(snapshots):
        fq, mask = quantum_force_grid(snap, node_floor)
        x_k = ensemble.positions[:, k]
        vals = pref * cubic_interp(fq, snap.grid, x_k).real
        touched = np.abs(cubic_interp(mask.astype(float), snap.grid, x_k)) > 1e-12
        vals[touched] = np.nan
        d[:, k] = vals
    d[~ok, :] = np.nan

    with np.errstate(all="ignore"):
        sup_abs_all = np.nanmax(np.abs(d), axis=1)
    include = ok & np.isfinite(sup_abs_all)
    sup_abs = sup_abs_all[include]
    if sup_abs.size == 0:
        raise TooManyFlagged("no particle has a valid deviation series")
    quantiles = {q: float(np.percentile(sup_abs, q)) for q in QUANTILES_DEFAULT}
    exceedance = {float(dl): float(np.mean(sup_abs > dl)) for dl in delta_list}
    t_prime = (times - times[0]) / T_eff
    return DeviationRecord(
        t_prime=t_prime, d=d, particle_ok=include, sup_abs=sup_abs,
        quantiles=quantiles, exceedance=exceedance,
        mean_sq=float(np.sqrt(np.mean(sup_abs ** 2))),
        flagged_fraction=float(flagged_fraction),
        metadata={"deviation_convention": DEVIATION_CONVENTION,
                  "includes_mass_division": True,
                  "alternative_without_mass": "multiply reported D by m"},
    )
