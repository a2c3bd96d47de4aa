"""Scenario library, classical reference integrator, caustic detection,
trajectory-deviation statistics and the epsilon-sweep campaign.

Scenarios are plain nested dicts of primitives so they serialize verbatim
into run manifests; builders turn them into live objects at run time.
Reruns with the same scenario are bitwise identical.
"""

import copy
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field as dataclass_field

import numpy as np

from . import bohm, environment, quantum
from .errors import NoCausticDetected, UnknownScenario
from .field import Grid, WaveField, make_gaussian
from .propagator import StepPlan, evolve, make_potential, max_stable_dt


# ---------------------------------------------------------------------------
# scenario construction

@dataclass
class Scenario:
    name: str
    description: str
    grid: dict
    wave: dict
    potential: dict
    plan: dict                      # t_final, dt_factor or dt, snapshots
    environment: dict = dataclass_field(default_factory=lambda: {"mode": "off"})
    n_particles: int = 1000
    seed: int = 20260809
    L_o: float | None = None
    delta_list: tuple = quantum.DELTA_DEFAULT
    analysis: dict = dataclass_field(default_factory=dict)
    sweep: dict | None = None       # present on sweep scenarios

    def as_dict(self):
        d = {
            "name": self.name, "description": self.description,
            "grid": self.grid, "wave": self.wave, "potential": self.potential,
            "plan": self.plan, "environment": self.environment,
            "n_particles": self.n_particles, "seed": self.seed,
            "L_o": self.L_o, "delta_list": list(self.delta_list),
            "analysis": self.analysis,
        }
        if self.sweep is not None:
            d["sweep"] = self.sweep
        return d

    def clone(self, **updates):
        """Copy with nested dict updates merged over the originals."""
        new = copy.deepcopy(self)
        for key, val in updates.items():
            cur = getattr(new, key)
            if isinstance(cur, dict) and isinstance(val, dict):
                cur.update(val)
            else:
                setattr(new, key, val)
        return new


def build_grid(spec):
    return Grid(spec["x_min"], spec["x_max"], spec["n"])


def build_wave(grid, spec):
    """Initial states: gaussian, two_packet (opposite momenta), coherent."""
    kind = spec["kind"]
    hbar = spec.get("hbar", 1.0)
    mass = spec.get("mass", 1.0)
    if kind == "gaussian":
        return make_gaussian(grid, spec["center"], spec["sigma"], spec["k0"],
                             hbar=hbar, mass=mass)
    if kind == "two_packet":
        plus = make_gaussian(grid, spec["center"], spec["sigma"], spec["k0"],
                             hbar=hbar, mass=mass)
        minus = make_gaussian(grid, spec["center"], spec["sigma"], -spec["k0"],
                              hbar=hbar, mass=mass)
        amp = plus.psi + minus.psi
        amp = amp / np.sqrt(np.sum(np.abs(amp) ** 2) * grid.dx)
        return WaveField(grid, amp, hbar=hbar, mass=mass, _checked=True)
    if kind == "coherent":
        omega = spec["omega"]
        sigma = np.sqrt(hbar / (2.0 * mass * omega))
        return make_gaussian(grid, spec["center"], sigma, spec.get("k0", 0.0),
                             hbar=hbar, mass=mass)
    raise ValueError(f"unknown wave kind {kind!r}")


def build_potential(spec, grid=None):
    spec = dict(spec)
    kind = spec.pop("kind")
    region = tuple(spec.pop("region"))
    if kind == "infinite_well" and spec.get("wall_width") is None:
        if grid is None:
            raise ValueError("infinite_well wall_width needs the grid")
        spec["wall_width"] = 4.0 * grid.dx
    return make_potential(kind, region, **spec)


def build_plan(scenario, psi, pot):
    """Resolve the step plan: dt from the stability cap unless given."""
    p = scenario.plan
    t_final = p["t_final"]
    if "dt" in p and p["dt"] is not None:
        dt = float(p["dt"])
    else:
        dt = p.get("dt_factor", 0.9) * max_stable_dt(psi, pot)
    if t_final == 0.0:
        return StepPlan(dt=dt, n_steps=0, snapshot_stride=1)
    n_steps = int(np.ceil(t_final / dt))
    dt = t_final / n_steps
    stride = max(1, n_steps // int(p.get("snapshots", 100)))
    return StepPlan(dt=dt, n_steps=n_steps, snapshot_stride=stride)


def build_objects(scenario):
    grid = build_grid(scenario.grid)
    psi0 = build_wave(grid, scenario.wave)
    pot = build_potential(scenario.potential, grid)
    plan = build_plan(scenario, psi0, pot)
    policy = environment.environment_schedule(
        scenario.environment.get("mode", "off"),
        scenario.environment.get("rate"))
    return grid, psi0, pot, plan, policy


# ---------------------------------------------------------------------------
# library

def _well_scenario(env_mode, p=5.0, sigma=1.4, width=20.0, name=None):
    e_kin = p ** 2 / 2.0 + 1.0 / (8.0 * sigma ** 2)
    return Scenario(
        name=name or ("two_packet_well" if env_mode == "off"
                      else "two_packet_well_env"),
        description=("two packets with opposite momenta in a box; caustic at "
                     "t_c = m W / p" + ("" if env_mode == "off"
                                        else "; collapse at separation")),
        grid={"x_min": -14.0, "x_max": 14.0, "n": 512},
        wave={"kind": "two_packet", "center": 0.0, "sigma": sigma, "k0": p},
        potential={"kind": "infinite_well", "width": width,
                   "height": 1.0e3 * e_kin, "wall_width": None,
                   "region": [-width / 2, width / 2]},
        plan={"t_final": 8.0, "snapshots": 200},
        environment={"mode": env_mode},
        n_particles=800,
        L_o=5.0 * width,
        analysis={"well_width": width, "momentum": p,
                  "t_caustic": width / p, "deviation_ref_time": 1.0,
                  "deviation_norm": 5.0 * width},
    )


def scenario_library():
    """Named runnable scenarios covering the library's standard situations."""
    lib = {}

    lib["free_gaussian"] = Scenario(
        name="free_gaussian",
        description="spreading Gaussian, V = 0; equivariance and analytic flow",
        grid={"x_min": -25.0, "x_max": 25.0, "n": 512},
        wave={"kind": "gaussian", "center": 0.0, "sigma": 1.0, "k0": 0.0},
        potential={"kind": "free", "region": [-10.0, 10.0]},
        plan={"t_final": 2.0, "snapshots": 20},
        n_particles=10000,
        L_o=4.0 * np.pi * 10.0,  # 10 de Broglie wavelengths
    )

    lib["coherent_harmonic"] = Scenario(
        name="coherent_harmonic",
        description="displaced coherent state, rigid flow X(t) = x0 cos t + d",
        grid={"x_min": -12.0, "x_max": 12.0, "n": 256},
        wave={"kind": "coherent", "center": 3.0, "omega": 1.0, "k0": 0.0},
        potential={"kind": "harmonic", "omega": 1.0, "mass": 1.0,
                   "region": [-6.0, 6.0]},
        plan={"t_final": 2.0 * np.pi, "snapshots": 60},
        n_particles=2000,
        L_o=30.0,
        analysis={"omega": 1.0, "x0": 3.0},
    )

    lib["quartic_packet"] = Scenario(
        name="quartic_packet",
        description="packet traversing a quartic region; Newton-closure workhorse",
        grid={"x_min": -10.0, "x_max": 10.0, "n": 1024},
        wave={"kind": "gaussian", "center": -4.0, "sigma": 0.4, "k0": 10.0},
        potential={"kind": "quartic", "g4": 0.005, "region": [-6.0, 6.0]},
        plan={"t_final": 0.8, "snapshots": 200},
        n_particles=1000,
    )

    lib["two_packet_well"] = _well_scenario("off")
    lib["two_packet_well_env"] = _well_scenario("at_separation")

    lib["dispersed_lpw"] = Scenario(
        name="dispersed_lpw",
        description="two overlapping opposite-momentum packets dispersing "
                    "into a local plane wave",
        grid={"x_min": -16.0, "x_max": 16.0, "n": 2048},
        wave={"kind": "two_packet", "center": 0.0, "sigma": 0.04, "k0": 10.0},
        potential={"kind": "free", "region": [-10.0, 10.0]},
        plan={"t_final": 0.12, "snapshots": 120},
        n_particles=100,
        L_o=100.0,
        analysis={"lpw_threshold": 0.1},
    )

    k_list = [10.0, 20.0, 40.0, 80.0]
    lib["sweep_quartic"] = Scenario(
        name="sweep_quartic",
        description="epsilon halving via k0 at fixed quartic potential",
        grid={"x_min": -10.0, "x_max": 10.0, "n": 2048},
        wave={"kind": "gaussian", "center": -4.0, "sigma": 0.4, "k0": k_list[0]},
        potential={"kind": "quartic", "g4": 0.005, "region": [-6.0, 6.0]},
        plan={"t_final": 8.0 / k_list[0], "snapshots": 120},
        n_particles=1000,
        sweep={"parameter": "k0", "values": k_list,
               "t_final_rule": "8/k0"},
    )

    kh_list = [5.0, 10.0, 20.0, 40.0]
    lib["sweep_harmonic_Lo"] = Scenario(
        name="sweep_harmonic_Lo",
        description="quadratic-potential variant: epsilon-tilde = lambda/L_o "
                    "halving via k0 on boosted coherent states",
        grid={"x_min": -52.0, "x_max": 52.0, "n": 4096},
        wave={"kind": "coherent", "center": 2.0, "omega": 1.0, "k0": kh_list[0]},
        potential={"kind": "harmonic", "omega": 1.0, "mass": 1.0,
                   "region": [-45.0, 45.0]},
        plan={"t_final": None, "snapshots": 100},  # resolved to T_o per point
        n_particles=1000,
        L_o=10.0,
        sweep={"parameter": "k0", "values": kh_list,
               "t_final_rule": "T_o"},
    )

    lib["ehrenfest_good"] = Scenario(
        name="ehrenfest_good",
        description="quartic quarter-period drop with the Taylor condition "
                    "c(t) <= 1e-3 throughout",
        grid={"x_min": -40.0, "x_max": 40.0, "n": 8192},
        wave={"kind": "gaussian", "center": -30.0, "sigma": 0.277, "k0": 0.0},
        potential={"kind": "quartic", "g4": 0.01, "region": [-33.0, 33.0]},
        plan={"t_final": 0.154, "snapshots": 60},
        n_particles=16,
        analysis={"x0": 30.0},
    )

    lib["ehrenfest_bad"] = Scenario(
        name="ehrenfest_bad",
        description="matched quartic drop with c ~ 1 (packet as wide as the "
                    "classical range)",
        grid={"x_min": -20.0, "x_max": 20.0, "n": 512},
        wave={"kind": "gaussian", "center": -3.0, "sigma": 1.29, "k0": 0.0},
        potential={"kind": "quartic", "g4": 0.01, "region": [-3.3, 3.3]},
        plan={"t_final": 1.54, "snapshots": 60},
        n_particles=16,
        analysis={"x0": 3.0},
    )

    return lib


def smoke_library():
    """Same scenario names at desk-check sizes (n = 128, 100 particles)."""
    lib = scenario_library()
    small = {}

    def shrink(sc, **kw):
        out = sc.clone(**kw)
        out.n_particles = min(out.n_particles, 100)
        return out

    small["free_gaussian"] = shrink(
        lib["free_gaussian"], grid={"x_min": -16.0, "x_max": 16.0, "n": 128},
        plan={"t_final": 1.0, "snapshots": 10})
    small["coherent_harmonic"] = shrink(
        lib["coherent_harmonic"], grid={"n": 128},
        plan={"t_final": 1.0, "snapshots": 10})
    small["quartic_packet"] = shrink(
        lib["quartic_packet"], grid={"n": 128},
        wave={"sigma": 0.6, "k0": 4.0}, plan={"t_final": 0.5, "snapshots": 10})
    small["two_packet_well"] = shrink(
        lib["two_packet_well"], grid={"n": 128},
        wave={"sigma": 1.5, "k0": 2.5},
        potential={"height": 3.3e3},
        plan={"t_final": 0.4, "snapshots": 8})
    small["two_packet_well_env"] = small["two_packet_well"].clone(
        environment={"mode": "at_separation"})
    small["two_packet_well_env"].name = "two_packet_well_env"
    small["dispersed_lpw"] = shrink(
        lib["dispersed_lpw"], grid={"n": 128},
        wave={"sigma": 0.5, "k0": 2.5}, plan={"t_final": 1.0, "snapshots": 20})
    small["sweep_quartic"] = shrink(
        lib["sweep_quartic"], grid={"n": 128},
        wave={"sigma": 0.6, "k0": 3.0},
        plan={"t_final": 8.0 / 3.0, "snapshots": 20},
        sweep={"parameter": "k0", "values": [3.0, 4.2, 6.0, 8.5],
               "t_final_rule": "8/k0"})
    small["sweep_harmonic_Lo"] = shrink(
        lib["sweep_harmonic_Lo"], grid={"x_min": -16.0, "x_max": 16.0, "n": 128},
        wave={"k0": 2.0},
        sweep={"parameter": "k0", "values": [2.0, 3.0, 4.0, 6.0],
               "t_final_rule": "T_o"})
    small["ehrenfest_good"] = shrink(
        lib["ehrenfest_good"], grid={"x_min": -16.0, "x_max": 16.0, "n": 128},
        wave={"center": -8.0, "sigma": 0.6},
        potential={"region": [-9.0, 9.0]},
        plan={"t_final": 0.8, "snapshots": 20}, analysis={"x0": 8.0})
    small["ehrenfest_bad"] = shrink(
        lib["ehrenfest_bad"], grid={"n": 128}, plan={"snapshots": 20})
    return small


def get_scenario(name, smoke=False):
    lib = smoke_library() if smoke else scenario_library()
    try:
        return lib[name]
    except KeyError:
        raise UnknownScenario(f"no scenario named {name!r}; "
                              f"known: {sorted(lib)}") from None


# ---------------------------------------------------------------------------
# classical references and deviation measures

@dataclass
class ClassicalPath:
    times: np.ndarray
    x: np.ndarray
    p: np.ndarray

    def energy(self, pot, mass=1.0):
        return self.p ** 2 / (2.0 * mass) + pot.v(self.x)


def classical_integrate(x0, p0, pot, plan, mass=1.0, substeps=1):
    """RK4 solution of m xdd = -V'(x) on the plan's snapshot time grid."""
    times = [0.0]
    for i in range(1, plan.n_steps + 1):
        if i == plan.n_steps or i % plan.snapshot_stride == 0:
            times.append(i * plan.dt)
    times = np.array(times)
    fine = _refine_times(times, substeps)
    xs, ps = bohm.newton_rk4(x0, p0, pot, fine, mass=mass)
    pick = np.searchsorted(fine, times)
    return ClassicalPath(times=times, x=xs[0, pick], p=ps[0, pick])


def _refine_times(times, substeps):
    if substeps <= 1:
        return times
    out = [times[0]]
    for a, b in zip(times[:-1], times[1:]):
        out.extend(np.linspace(a, b, substeps + 1)[1:])
    return np.array(out)


@dataclass
class DeviationSummary:
    per_particle: np.ndarray   # sup_t |X - x_cl| / L_norm
    quantiles: dict
    L_norm: float
    reference_time: float


def trajectory_deviation(ensemble, pot, L_norm, reference_time=None,
                         mass=1.0, rk_substeps=1):
    """Per-particle sup_t |X(t) - x_cl(t)| / L_norm against classical partners.

    Each partner starts at the particle's position with momentum
    m * v_Bohm at the reference time (default: the initial time). Flagged
    particles are excluded from the quantiles.
    """
    times = ensemble.times
    if reference_time is None:
        ref_idx = 0
    else:
        ref_idx = int(np.searchsorted(times, reference_time - 1e-12))
    vel = ensemble.velocities
    if vel is None:
        raise ValueError("ensemble carries no velocity record")
    x_ref = ensemble.positions[:, ref_idx]
    p_ref = mass * vel[:, ref_idx]
    seg = times[ref_idx:]
    fine = _refine_times(seg, rk_substeps)
    xs, _ = bohm.newton_rk4(x_ref, p_ref, pot, fine, mass=mass)
    pick = np.searchsorted(fine, seg)
    x_cl = xs[:, pick]
    dev = np.max(np.abs(ensemble.positions[:, ref_idx:] - x_cl), axis=1) / L_norm
    ok = ensemble.flags == bohm.FLAG_OK
    qs = {q: float(np.percentile(dev[ok], q)) for q in (50, 90, 99)}
    return DeviationSummary(per_particle=dev, quantiles=qs, L_norm=L_norm,
                            reference_time=float(times[ref_idx]))


# ---------------------------------------------------------------------------
# caustics

@dataclass
class CausticResult:
    predicted: float
    measured: float
    times: np.ndarray
    contrast: np.ndarray
    central_mass: np.ndarray


def caustic_time(scenario, contrast_threshold=0.5, mass_gate=0.3,
                 separation_gate=0.05):
    """Predicted vs measured first caustic time for a two-packet well run.

    Predicted: t_c = 2 t_r with t_r = (W/2)/(p/m). Measured: the packets
    first vacate the central W/4 window (mass below separation_gate of its
    initial value), then the first snapshot with fringe contrast above the
    threshold while the window holds mass again.
    """
    width = scenario.analysis["well_width"]
    p = scenario.analysis["momentum"]
    grid, psi0, pot, plan, _ = build_objects(scenario)
    mass = psi0.mass
    predicted = 2.0 * (width / 2.0) / (p / mass)
    snaps = evolve(psi0, pot, plan)
    window = np.abs(grid.x) <= width / 8.0

    times, contrast, central = [], [], []
    for w in snaps:
        rho = w.density()
        rw = rho[window]
        times.append(w.time)
        contrast.append((rw.max() - rw.min()) / (rw.max() + rw.min()))
        central.append(np.sum(rw) * grid.dx)
    times = np.array(times)
    contrast = np.array(contrast)
    central = np.array(central)

    m0 = central[0]
    sep = np.flatnonzero(central < separation_gate * m0)
    if sep.size == 0:
        raise NoCausticDetected("packets never vacated the central window")
    after = np.flatnonzero((times > times[sep[0]])
                           & (contrast > contrast_threshold)
                           & (central > mass_gate * m0))
    if after.size == 0:
        raise NoCausticDetected("no re-interference fringes in the window")
    return CausticResult(predicted=predicted, measured=float(times[after[0]]),
                         times=times, contrast=contrast, central_mass=central)


# ---------------------------------------------------------------------------
# scenario runs and the epsilon sweep

@dataclass
class RunResult:
    scenario: Scenario
    snapshots: list
    ensemble: object
    scales: object
    deviation: object            # DeviationRecord or None
    events: list
    ks_curve: np.ndarray | None = None


def run_scenario(scenario, compute_deviation=True, compute_ks=False):
    """Execute one scenario end to end (no file output; see io_run)."""
    grid, psi0, pot, plan, policy = build_objects(scenario)
    if policy.mode == "off":
        ens = bohm.integrate_ensemble(psi0, pot, plan, scenario.n_particles,
                                      scenario.seed)
        snaps = ens.snapshots
        events = []
    else:
        run = environment.integrate_with_environment(
            psi0, pot, plan, scenario.n_particles, scenario.seed, policy)
        ens = run.ensemble
        snaps = [w for _, w in run.final_waves]
        events = run.events
    scales = quantum.scale_report(psi0, pot, L_o=scenario.L_o)
    deviation = None
    if compute_deviation and policy.mode == "off" and scales.L_eff is not None \
            and np.isfinite(scales.L_eff):
        deviation = quantum.deviation_D(ens, ens.snapshots, scales,
                                        scenario.delta_list)
    ks_curve = None
    if compute_ks and policy.mode == "off":
        ks_curve = np.array([bohm.equivariance_test(ens, w, j)
                             for j, w in enumerate(ens.snapshots)])
    return RunResult(scenario=scenario, snapshots=snaps, ensemble=ens,
                     scales=scales, deviation=deviation, events=events,
                     ks_curve=ks_curve)


@dataclass
class SweepPoint:
    epsilon: float
    d_median: float
    d_p90: float
    d_p99: float
    p_exceed: dict
    flagged_frac: float
    mean_sq: float
    error: str | None = None


@dataclass
class SweepResult:
    points: list
    slope: float                 # d log(median sup|D|) / d log(epsilon)
    monotone_median: bool
    monotone_exceed: dict        # delta -> bool

    def epsilons(self):
        return np.array([p.epsilon for p in self.points])

    def medians(self):
        return np.array([p.d_median for p in self.points])


def sweep_scenarios(base):
    """Expand a sweep scenario into its per-point scenarios (decreasing eps)."""
    if base.sweep is None:
        raise ValueError("scenario has no sweep block")
    values = base.sweep["values"]
    rule = base.sweep.get("t_final_rule")
    out = []
    for j, val in enumerate(values):
        sc = base.clone(wave={base.sweep["parameter"]: val})
        sc.sweep = None
        sc.name = f"{base.name}[{base.sweep['parameter']}={val:g}]"
        sc.seed = base.seed + j
        if rule == "8/k0":
            sc.plan = dict(sc.plan, t_final=8.0 / val)
        elif rule == "T_o":
            hbar = sc.wave.get("hbar", 1.0)
            mass = sc.wave.get("mass", 1.0)
            omega = sc.wave["omega"]
            e_kin = hbar ** 2 * val ** 2 / (2 * mass) + hbar * omega / 4.0
            v = np.sqrt(2.0 * e_kin / mass)
            sc.plan = dict(sc.plan, t_final=sc.L_o / v)
        out.append(sc)
    return out


def _run_sweep_point(scenario):
    res = run_scenario(scenario, compute_deviation=True)
    dev = res.deviation
    return SweepPoint(
        epsilon=res.scales.epsilon, d_median=dev.quantiles[50],
        d_p90=dev.quantiles[90], d_p99=dev.quantiles[99],
        p_exceed=dev.exceedance, flagged_frac=dev.flagged_fraction,
        mean_sq=dev.mean_sq)


def epsilon_sweep(scenarios, delta_list=quantum.DELTA_DEFAULT, n_jobs=1):
    """Run a decreasing-epsilon family and report monotonicity of the
    deviation statistics.

    Per-point failures are recorded and the sweep continues; the epsilon list
    must hold at least 4 strictly decreasing points.
    """
    if len(scenarios) < 4:
        raise ValueError("sweep needs at least 4 epsilon points")
    for sc in scenarios:
        sc.delta_list = tuple(delta_list)
    points = []
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as ex:
            futs = [ex.submit(_run_sweep_point, sc) for sc in scenarios]
            for sc, fut in zip(scenarios, futs):
                try:
                    points.append(fut.result())
                except Exception as exc:  # per-point failures are data
                    points.append(SweepPoint(np.nan, np.nan, np.nan, np.nan,
                                             {}, np.nan, np.nan, error=str(exc)))
    else:
        for sc in scenarios:
            try:
                points.append(_run_sweep_point(sc))
            except Exception as exc:
                points.append(SweepPoint(np.nan, np.nan, np.nan, np.nan,
                                         {}, np.nan, np.nan, error=str(exc)))
    good = [p for p in points if p.error is None]
    eps = np.array([p.epsilon for p in good])
    med = np.array([p.d_median for p in good])
    if not np.all(np.diff(eps) < 0.0):
        raise ValueError("epsilon values must be strictly decreasing")
    slope = float(np.polyfit(np.log(eps), np.log(np.maximum(med, 1e-300)), 1)[0])
    monotone_median = bool(np.all(np.diff(med) <= 1e-12))
    monotone_exceed = {}
    for delta in delta_list:
        seq = np.array([p.p_exceed.get(float(delta), np.nan) for p in good])
        monotone_exceed[float(delta)] = bool(np.all(np.diff(seq) <= 1e-12))
    return SweepResult(points=points, slope=slope,
                       monotone_median=monotone_median,
                       monotone_exceed=monotone_exceed)
