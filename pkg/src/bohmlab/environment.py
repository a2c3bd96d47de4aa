"""Effective environment: detect spatially separated wave components and
collapse each particle's guiding wave onto the component that contains it.

One simulated wave per ensemble would be wrong once particles populate
different branches, so every collapse event clones the wave per branch;
particles sharing a branch share the clone. This mirrors the conditional
wave function idea without an explicit environment Hilbert space.
"""

from dataclasses import dataclass, field as dataclass_field

import numpy as np

from .bohm import (FLAG_NEAR_NODE, FLAG_OK, TrajectoryEnsemble,
                   _velocity_from_fields, sample_equilibrium)
from .errors import ParticleInGap
from .field import NODE_FLOOR_DEFAULT, WaveField, kinetic_energy, spectral_gradient
from .propagator import step_stream

GAP_FLOOR_DEFAULT = 1e-4
ROLLOFF_POINTS = 8


def detect_components(psi, gap_floor=GAP_FLOOR_DEFAULT):
    """Maximal intervals where |psi|^2 >= gap_floor * max|psi|^2.

    Intervals separated by gaps narrower than one de Broglie wavelength of
    the state are merged. Returns a list of (a, b) in grid coordinates.
    """
    rho = psi.density()
    above = rho >= gap_floor * rho.max()
    ekin = kinetic_energy(psi)
    lam = (2.0 * np.pi * psi.hbar / np.sqrt(2.0 * psi.mass * ekin)
           if ekin > 0 else np.inf)
    gap_pts = int(np.ceil(lam / psi.grid.dx)) if np.isfinite(lam) else psi.grid.n
    merged = _fill_short_false_runs(above, gap_pts)
    return _mask_to_intervals(merged, psi.grid)


def _fill_short_false_runs(mask, gap_pts):
    out = mask.copy()
    n = mask.size
    j = 0
    while j < n:
        if not mask[j]:
            start = j
            while j < n and not mask[j]:
                j += 1
            if start > 0 and j < n and (j - start) <= gap_pts:
                out[start:j] = True
        else:
            j += 1
    return out


def _mask_to_intervals(mask, grid):
    intervals = []
    j = 0
    while j < grid.n:
        if mask[j]:
            start = j
            while j < grid.n and mask[j]:
                j += 1
            intervals.append((grid.x[start], grid.x[j - 1]))
        else:
            j += 1
    return intervals


def _interval_index(intervals, x):
    for i, (a, b) in enumerate(intervals):
        if a <= x <= b:
            return i
    return None


def collapse(psi, x_particle, intervals):
    """Window psi onto the interval containing x_particle and renormalize.

    The window is flat over the interval with raised-cosine roll-offs of
    8 grid spacings. Velocities far from the excised components are
    unaffected because grad(psi)/psi is invariant under the renormalization.
    Raises ParticleInGap when the particle sits between components (the
    caller defers the event).
    """
    if len(intervals) < 2:
        raise ValueError("collapse needs at least two components")
    i = _interval_index(intervals, x_particle)
    if i is None:
        raise ParticleInGap(f"particle at {x_particle} lies between components")
    return _collapse_onto(psi, intervals[i]), i


def _collapse_onto(psi, interval):
    g = psi.grid
    a, b = interval
    roll = ROLLOFF_POINTS * g.dx
    x = g.x
    window = np.ones(g.n)
    left = (x - (a - roll)) / roll
    right = ((b + roll) - x) / roll
    window = np.minimum(np.clip(left, 0.0, 1.0), np.clip(right, 0.0, 1.0))
    window = 0.5 * (1.0 - np.cos(np.pi * window))
    amp = psi.psi * window
    amp = amp / np.sqrt(np.sum(np.abs(amp) ** 2) * g.dx)
    return WaveField(g, amp, time=psi.time, hbar=psi.hbar, mass=psi.mass,
                     _checked=True)


def component_weight(psi, interval):
    """|psi|^2 mass inside the interval (the Born weight of the branch)."""
    g = psi.grid
    a, b = interval
    sel = (g.x >= a) & (g.x <= b)
    return float(np.sum(psi.density()[sel]) * g.dx)


@dataclass(frozen=True)
class EnvironmentPolicy:
    mode: str                  # off | at_separation | periodic
    rate: float | None = None  # events per unit time for periodic

    def interval(self):
        return 1.0 / self.rate if self.mode == "periodic" else None


def environment_schedule(mode, rate=None):
    """Build the collapse-trigger policy consumed by ensemble runs."""
    if mode not in ("off", "at_separation", "periodic"):
        raise ValueError(f"unknown environment mode {mode!r}")
    if mode == "periodic":
        if rate is None or rate < 0.0:
            raise ValueError("periodic policy needs a rate >= 0")
        if rate == 0.0:
            return EnvironmentPolicy(mode="off")
    return EnvironmentPolicy(mode=mode, rate=rate)


@dataclass
class CollapseEvent:
    time: float
    component_intervals: list
    selected_interval_index: int
    norm_of_selected: float
    particle_ids: np.ndarray
    particle_positions_at_event: np.ndarray

    def as_dict(self):
        return {
            "time": self.time,
            "component_intervals": [list(map(float, iv))
                                    for iv in self.component_intervals],
            "selected_interval_index": int(self.selected_interval_index),
            "norm_of_selected": self.norm_of_selected,
            "n_particles": int(self.particle_ids.size),
            "particle_ids": self.particle_ids.tolist(),
            "particle_positions_at_event":
                [float(v) for v in self.particle_positions_at_event],
        }


@dataclass
class _Branch:
    amp: np.ndarray
    damp: np.ndarray
    idx: np.ndarray  # particle indices guided by this branch


@dataclass
class BranchedRun:
    ensemble: TrajectoryEnsemble
    events: list
    final_waves: list  # (particle indices, WaveField) per surviving branch


def integrate_with_environment(psi0, pot, plan, n_particles, seed, policy,
                               node_floor=NODE_FLOOR_DEFAULT, substeps=1,
                               gap_floor=GAP_FLOOR_DEFAULT,
                               initial_positions=None):
    """Joint wave/ensemble evolution with branch selection per the policy.

    Component detection runs at snapshot boundaries; on a trigger, particles
    inside each component move to a branch guided by the collapsed clone,
    while particles caught in gaps stay with the parent wave until the next
    snapshot. With the policy off this reduces bitwise to the plain
    propagator plus trajectory integration.
    """
    g = psi0.grid
    hbar, mass = psi0.hbar, psi0.mass
    if initial_positions is None:
        x = sample_equilibrium(psi0, n_particles, seed)
    else:
        x = np.array(initial_positions, dtype=float)
        n_particles = x.size
    dt_traj = plan.dt / substeps
    v_clamp = g.dx / dt_traj
    span = g.x_max - g.x_min

    damp0 = spectral_gradient(psi0.psi, g)
    v0, near0, _ = _velocity_from_fields(psi0.psi, damp0, g, x, hbar, mass,
                                         node_floor * np.abs(psi0.psi).max(),
                                         v_clamp)
    flags = np.where(near0, FLAG_NEAR_NODE, FLAG_OK).astype(np.int8)
    velocities = [v0.copy()]

    branches = [_Branch(amp=psi0.psi, damp=damp0, idx=np.arange(n_particles))]
    events = []
    positions = [x.copy()]
    times = [psi0.time]
    last_trigger = psi0.time

    half_v = np.exp(-0.5j * pot.v(g.x) * plan.dt / hbar)
    kin = np.exp(-0.5j * hbar * g.k ** 2 * plan.dt / mass)

    def wave_of(branch, t):
        return WaveField(g, branch.amp, time=t, hbar=hbar, mass=mass, _checked=True)

    def maybe_collapse(t):
        nonlocal branches, last_trigger
        if policy.mode == "off":
            return
        if policy.mode == "periodic" and (t - last_trigger) < policy.interval():
            return
        new_branches = []
        triggered = False
        for br in branches:
            w = wave_of(br, t)
            intervals = detect_components(w, gap_floor)
            if len(intervals) < 2 or br.idx.size == 0:
                new_branches.append(br)
                continue
            triggered = True
            assign = np.array([
                -1 if (hit := _interval_index(intervals, xi)) is None else hit
                for xi in x[br.idx]], dtype=int)
            deferred = br.idx[assign < 0]
            for i_comp in range(len(intervals)):
                members = br.idx[assign == i_comp]
                if members.size == 0:
                    continue
                collapsed = _collapse_onto(w, intervals[i_comp])
                events.append(CollapseEvent(
                    time=t, component_intervals=intervals,
                    selected_interval_index=i_comp,
                    norm_of_selected=component_weight(w, intervals[i_comp]),
                    particle_ids=members.copy(),
                    particle_positions_at_event=x[members].copy()))
                new_branches.append(_Branch(
                    amp=collapsed.psi,
                    damp=spectral_gradient(collapsed.psi, g),
                    idx=members))
            if deferred.size:
                new_branches.append(_Branch(amp=br.amp, damp=br.damp, idx=deferred))
        if triggered:
            branches = new_branches
            last_trigger = t

    for i in range(1, plan.n_steps + 1):
        t_i = psi0.time + i * plan.dt
        for br in branches:
            amp1 = half_v * np.fft.ifft(kin * np.fft.fft(half_v * br.amp))
            damp1 = spectral_gradient(amp1, g)
            if br.idx.size:
                node_thresh = node_floor * np.abs(br.amp).max()
                xb, ev = _advance_rk4(br.amp, br.damp, amp1, damp1, g,
                                      x[br.idx], plan.dt, substeps, hbar, mass,
                                      node_thresh, v_clamp, span)
                x[br.idx] = xb
                np.maximum(flags[br.idx], ev, out=flags[br.idx], casting="unsafe")
            br.amp, br.damp = amp1, damp1
        if i == plan.n_steps or i % plan.snapshot_stride == 0:
            maybe_collapse(t_i)
            positions.append(x.copy())
            times.append(t_i)
            vnow = np.empty(n_particles)
            for br in branches:
                if br.idx.size == 0:
                    continue
                node_thresh = node_floor * np.abs(br.amp).max()
                vb, _, _ = _velocity_from_fields(br.amp, br.damp, g, x[br.idx],
                                                 hbar, mass, node_thresh, v_clamp)
                vnow[br.idx] = vb
            velocities.append(vnow)

    ens = TrajectoryEnsemble(
        positions=np.array(positions).T, times=np.array(times), seed=seed,
        flags=flags, initial_velocities=v0, snapshots=[],
        velocities=np.array(velocities).T)
    final = [(br.idx.copy(), wave_of(br, times[-1])) for br in branches
             if br.idx.size]
    return BranchedRun(ensemble=ens, events=events, final_waves=final)


def _advance_rk4(amp0, damp0, amp1, damp1, grid, x, dt, substeps, hbar, mass,
                 node_thresh, v_clamp, span):
    """RK4 over one wave step with linear-in-time fields; returns (x, flags)."""
    worst = np.zeros(x.shape, dtype=np.int8)
    dt_traj = dt / substeps

    def vel(pos, th):
        a = amp0 if th == 0.0 else (amp1 if th == 1.0 else
                                    (1.0 - th) * amp0 + th * amp1)
        da = damp0 if th == 0.0 else (damp1 if th == 1.0 else
                                      (1.0 - th) * damp0 + th * damp1)
        pos = grid.x_min + np.mod(pos - grid.x_min, span)
        v, near, clamped = _velocity_from_fields(a, da, grid, pos, hbar, mass,
                                                 node_thresh, v_clamp)
        ev = np.where(near, FLAG_NEAR_NODE, np.where(clamped, 2, FLAG_OK))
        np.maximum(worst, ev, out=worst, casting="unsafe")
        return v

    for s in range(substeps):
        th0 = s / substeps
        th1 = (s + 1) / substeps
        thm = 0.5 * (th0 + th1)
        k1 = vel(x, th0)
        k2 = vel(x + 0.5 * dt_traj * k1, thm)
        k3 = vel(x + 0.5 * dt_traj * k2, thm)
        k4 = vel(x + dt_traj * k3, th1)
        x = x + dt_traj / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    x = grid.x_min + np.mod(x - grid.x_min, span)
    return x, worst
