"""Bohmian guidance law, quantum-equilibrium sampling and ensemble
integration synchronized with the wave evolution.

Trajectories follow dX/dt = (hbar/m) Im(grad psi / psi) integrated with RK4;
the velocity is formed from cubically interpolated psi and grad psi (not from
an interpolated velocity), with the field linear in time between wave steps.
In 1D the flow preserves particle ordering, which is tracked as a sanity
invariant.
"""

from dataclasses import dataclass, field as dataclass_field

import numpy as np

from .errors import OutOfDomain
from .field import NODE_FLOOR_DEFAULT, WaveField, cubic_interp, spectral_gradient
from .propagator import StepPlan, step_stream

FLAG_OK = 0
FLAG_NEAR_NODE = 1
FLAG_CLAMPED = 2
FLAG_NAMES = {FLAG_OK: "ok", FLAG_NEAR_NODE: "near_node", FLAG_CLAMPED: "clamped"}


def velocity(psi, x, node_floor=NODE_FLOOR_DEFAULT, v_clamp=None):
    """Guidance velocity (hbar/m) Im(grad psi(x) / psi(x)).

    psi and grad psi are interpolated to x with the 4-point cubic rule.
    Returns (v, near_node); where |psi(x)| < node_floor * max|psi| the value
    is clamped to +-v_clamp when a clamp is supplied.
    """
    scalar = np.isscalar(x)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if not np.all(psi.grid.contains(x)):
        raise OutOfDomain(f"position outside [{psi.grid.x_min}, {psi.grid.x_max})")
    dpsi = spectral_gradient(psi.psi, psi.grid)
    v, near, _ = _velocity_from_fields(psi.psi, dpsi, psi.grid, x,
                                       psi.hbar, psi.mass,
                                       node_floor * np.abs(psi.psi).max(), v_clamp)
    if scalar:
        return float(v[0]), bool(near[0])
    return v, near


def _velocity_from_fields(amp, damp, grid, x, hbar, mass, node_thresh, v_clamp):
    psi_x = cubic_interp(amp, grid, x)
    dpsi_x = cubic_interp(damp, grid, x)
    near = np.abs(psi_x) < node_thresh
    safe = np.where(near, 1.0, psi_x)
    v = hbar / mass * np.imag(dpsi_x / safe)
    clamped = np.zeros_like(near)
    if v_clamp is not None:
        sign = np.where(v >= 0.0, 1.0, -1.0)
        clamped = ~near & (np.abs(v) > v_clamp)
        v = np.where(near, v_clamp * sign, np.clip(v, -v_clamp, v_clamp))
    return v, near, clamped


def sample_equilibrium(psi, n, seed):
    """n i.i.d. draws from |psi|^2 by inverting its piecewise-linear CDF.

    Deterministic for a given seed.
    """
    if n < 1:
        raise ValueError("need n >= 1 samples")
    rng = np.random.default_rng(seed)
    nodes, cdf = _density_cdf(psi)
    return np.interp(rng.random(int(n)), cdf, nodes)


def _density_cdf(psi):
    """Nodes and values of the piecewise-linear CDF of |psi|^2 dx."""
    g = psi.grid
    mass = np.cumsum(psi.density()) * g.dx
    cdf = np.concatenate([[0.0], mass / mass[-1]])
    nodes = np.concatenate([g.x, [g.x_max]])
    return nodes, cdf


def equivariance_test(ensemble, psi_t, t_index):
    """Two-sided KS distance between particle positions at t_index and the
    CDF of |psi_t|^2."""
    x = np.sort(ensemble.positions[:, t_index])
    nodes, cdf = _density_cdf(psi_t)
    f = np.interp(x, nodes, cdf)
    n = x.size
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - f), np.max(f - (i - 1) / n)))


def ks_critical(n, significance=0.01):
    """Asymptotic critical KS distance; 1.628/sqrt(n) at the 1% level."""
    from scipy.special import kolmogi
    return float(kolmogi(significance) / np.sqrt(n))


@dataclass
class TrajectoryEnsemble:
    """Positions of n particles at the snapshot times, with status flags.

    positions[i, j] is particle i at times[j]; snapshots holds the wave at
    the same times. Initial positions are equilibrium samples of snapshot 0.
    """

    positions: np.ndarray
    times: np.ndarray
    seed: int
    flags: np.ndarray
    initial_velocities: np.ndarray
    snapshots: list = dataclass_field(default_factory=list)
    velocities: np.ndarray | None = None  # guidance velocity at the same times

    @property
    def n_particles(self):
        return self.positions.shape[0]

    def flag_fraction(self):
        return float(np.mean(self.flags != FLAG_OK))

    def order_violations(self):
        """Fraction of adjacent pairs (in the t0 ordering) ever out of order."""
        order = np.argsort(self.positions[:, 0], kind="stable")
        ordered = self.positions[order, :]
        bad = np.any(np.diff(ordered, axis=0) < 0.0, axis=1)
        return float(np.mean(bad))


def integrate_ensemble(psi0, pot, plan, n_particles, seed,
                       node_floor=NODE_FLOOR_DEFAULT, substeps=1,
                       initial_positions=None):
    """Evolve the wave on plan.dt and advance an equilibrium ensemble with
    RK4 on the interpolated guidance field.

    Trajectory substeps are dt/substeps; the field at intermediate times is
    the linear interpolation of (psi, grad psi) between wave steps. Particles
    entering the node floor get the velocity clamp dx/dt_traj and are flagged.
    Deterministic for fixed (seed, plan), independent of execution order.
    """
    g = psi0.grid
    if initial_positions is None:
        x = sample_equilibrium(psi0, n_particles, seed)
    else:
        x = np.array(initial_positions, dtype=float)
        n_particles = x.size
    hbar, mass = psi0.hbar, psi0.mass
    dt_traj = plan.dt / substeps
    v_clamp = g.dx / dt_traj
    span = g.x_max - g.x_min

    amp0 = psi0.psi
    damp0 = spectral_gradient(amp0, g)
    v0, near0, _ = _velocity_from_fields(amp0, damp0, g, x, hbar, mass,
                                         node_floor * np.abs(amp0).max(), v_clamp)
    flags = np.where(near0, FLAG_NEAR_NODE, FLAG_OK).astype(np.int8)

    positions = [x.copy()]
    times = [psi0.time]
    snapshots = [psi0]
    velocities = [v0.copy()]

    for i, (t_i, amp1) in enumerate(step_stream(psi0, pot, plan.dt, plan.n_steps), start=1):
        damp1 = spectral_gradient(amp1, g)
        node_thresh = node_floor * np.abs(amp0).max()
        for s in range(substeps):
            th0 = s / substeps
            th1 = (s + 1) / substeps
            thm = (th0 + th1) / 2.0
            fields = {}
            for th in (th0, thm, th1):
                a = amp0 if th == 0.0 else (amp1 if th == 1.0 else
                                            (1.0 - th) * amp0 + th * amp1)
                da = damp0 if th == 0.0 else (damp1 if th == 1.0 else
                                              (1.0 - th) * damp0 + th * damp1)
                fields[th] = (a, da)

            def vel(pos, th):
                a, da = fields[th]
                pos = g.x_min + np.mod(pos - g.x_min, span)
                v, near, clamped = _velocity_from_fields(a, da, g, pos, hbar,
                                                         mass, node_thresh,
                                                         v_clamp)
                event = np.where(near, FLAG_NEAR_NODE,
                                 np.where(clamped, FLAG_CLAMPED, FLAG_OK))
                np.maximum(flags, event, out=flags, casting="unsafe")
                return v

            k1 = vel(x, th0)
            k2 = vel(x + 0.5 * dt_traj * k1, thm)
            k3 = vel(x + 0.5 * dt_traj * k2, thm)
            k4 = vel(x + dt_traj * k3, th1)
            x = x + dt_traj / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        x = g.x_min + np.mod(x - g.x_min, span)
        amp0, damp0 = amp1, damp1
        if i == plan.n_steps or i % plan.snapshot_stride == 0:
            positions.append(x.copy())
            times.append(t_i)
            snapshots.append(WaveField(g, amp1, time=t_i, hbar=hbar, mass=mass,
                                       _checked=True))
            vnow, _, _ = _velocity_from_fields(amp1, damp1, g, x, hbar, mass,
                                               node_floor * np.abs(amp1).max(),
                                               v_clamp)
            velocities.append(vnow)

    return TrajectoryEnsemble(
        positions=np.array(positions).T, times=np.array(times), seed=seed,
        flags=flags, initial_velocities=v0, snapshots=snapshots,
        velocities=np.array(velocities).T)


def newton_rk4(x0, p0, pot, times, mass=1.0):
    """Classical RK4 for m xdd = -V'(x) sampled at the given times.

    Integration substeps match the spacing of `times`; x0/p0 may be arrays
    for a family of trajectories.
    """
    x = np.atleast_1d(np.asarray(x0, dtype=float)).copy()
    p = np.atleast_1d(np.asarray(p0, dtype=float)).copy()
    xs = [x.copy()]
    ps = [p.copy()]
    for j in range(1, len(times)):
        h = times[j] - times[j - 1]
        x, p = _rk4_pair(x, p, h, pot, mass)
        xs.append(x.copy())
        ps.append(p.copy())
    return np.array(xs).T, np.array(ps).T


def _rk4_pair(x, p, h, pot, mass):
    def f(xv, pv):
        return pv / mass, pot.force(xv)

    k1x, k1p = f(x, p)
    k2x, k2p = f(x + 0.5 * h * k1x, p + 0.5 * h * k1p)
    k3x, k3p = f(x + 0.5 * h * k2x, p + 0.5 * h * k2p)
    k4x, k4p = f(x + h * k3x, p + h * k3p)
    return (x + h / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x),
            p + h / 6.0 * (k1p + 2 * k2p + 2 * k3p + k4p))


@dataclass
class EhrenfestRecord:
    times: np.ndarray
    mean: np.ndarray             # <X>(t) from |psi_t|^2
    covariance: np.ndarray       # Delta(t) = <X^2> - <X>^2
    classical_x: np.ndarray      # Newton trajectory from (<X>(t0), <P>(t0))
    classical_p: np.ndarray
    condition_ratio: np.ndarray  # c(t) = Delta(t) sup|V'''| / sup|V'|


def ehrenfest_record(ensemble, pot):
    """Wave moments <X>(t), Delta(t), the classical reference started from
    the initial moments, and the Taylor-condition ratio c(t)."""
    snaps = ensemble.snapshots
    if not snaps:
        raise ValueError("ensemble carries no wave snapshots")
    times = ensemble.times
    mean = np.array([w.mean_position() for w in snaps])
    cov = np.array([w.position_variance() for w in snaps])
    p0 = snaps[0].mean_momentum()
    cx, cp = newton_rk4(mean[0], p0, pot, times, mass=snaps[0].mass)
    a, b = pot.region
    xs = np.linspace(a, b, 2049)
    sup1 = float(np.max(np.abs(pot.dv(xs))))
    sup3 = float(np.max(np.abs(pot.d3v(xs))))
    if sup3 == 0.0:
        ratio = np.zeros_like(cov)
    elif sup1 == 0.0:
        ratio = np.full_like(cov, np.inf)
    else:
        ratio = cov * sup3 / sup1
    return EhrenfestRecord(times=times, mean=mean, covariance=cov,
                           classical_x=cx[0], classical_p=cp[0],
                           condition_ratio=ratio)
