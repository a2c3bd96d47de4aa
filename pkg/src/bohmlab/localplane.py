"""Local plane wave diagnostics: local wave vector, slow-variation verdict,
packet decomposition, momentum readout, and the free-evolution
stationary-phase asymptotics.

Variation fields compare gradients to the state's characteristic wavenumber
k_char = sqrt(2 m E_kin)/hbar, i.e. relative change over the reduced global
de Broglie wavelength. Probing with the raw local wavelength 2*pi/|k(x)|
diverges wherever k passes through zero (the center of any symmetric
dispersed packet), which would veto states the criterion is meant to accept.
"""

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import AllNodes, NonFreePotential, NotLocalPlaneWave
from .field import (NODE_FLOOR_DEFAULT, WaveField, cubic_interp,
                    kinetic_energy, spectral_gradient)

LPW_THRESHOLD_DEFAULT = 0.1
CORE_MASS = 0.99


def _bridge_masked(values, mask):
    """Fill masked entries by linear interpolation from unmasked neighbors."""
    if not mask.any():
        return values
    idx = np.arange(values.size)
    return np.where(mask, np.interp(idx, idx[~mask], values[~mask]), values)


def probability_core(psi, mass_fraction=CORE_MASS, merge_gap=None):
    """Boolean mask of the high-density region holding the given |psi|^2 mass.

    The region is the density level set, i.e. a union of intervals; gaps
    narrower than merge_gap (default: two global de Broglie wavelengths) are
    folded in so interference combs are treated as one region.
    """
    rho = psi.density()
    order = np.argsort(rho)[::-1]
    csum = np.cumsum(rho[order])
    cut = np.searchsorted(csum, mass_fraction * csum[-1])
    core = np.zeros(psi.grid.n, dtype=bool)
    core[order[: cut + 1]] = True
    if merge_gap is None:
        k_char = np.sqrt(2.0 * psi.mass * max(kinetic_energy(psi), 1e-300)) / psi.hbar
        merge_gap = 2.0 * (2.0 * np.pi / k_char) if k_char > 0 else np.inf
    gap_pts = int(np.ceil(merge_gap / psi.grid.dx))
    return _merge_short_gaps(core, gap_pts)


def _merge_short_gaps(core, gap_pts):
    filled = core.copy()
    n = core.size
    j = 0
    while j < n:
        if not core[j]:
            start = j
            while j < n and not core[j]:
                j += 1
            interior = start > 0 and j < n
            if interior and (j - start) <= gap_pts:
                filled[start:j] = True
        else:
            j += 1
    return filled


@dataclass
class LocalStructure:
    k_field: np.ndarray       # local wave vector grad S / hbar
    lambda_field: np.ndarray  # 2 pi / |k|
    variation_R: np.ndarray
    variation_k: np.ndarray
    node_mask: np.ndarray
    core: np.ndarray          # probability-mass core (99% by default)
    k_char: float
    threshold: float
    is_lpw: bool


def local_structure(psi, lpw_threshold=LPW_THRESHOLD_DEFAULT,
                    node_floor=NODE_FLOOR_DEFAULT):
    """Local wave vector and slow-variation verdict over the probability core.

    is_lpw is true iff max(variation_R, variation_k) stays below the
    threshold at every unmasked core point.
    """
    R = np.abs(psi.psi)
    rmax = R.max()
    mask = R < node_floor * rmax
    if mask.all():
        raise AllNodes("state is below the node floor everywhere")
    dpsi = spectral_gradient(psi.psi, psi.grid)
    ratio = dpsi / np.where(mask, 1.0, psi.psi)
    k_field = np.imag(ratio)
    dlogR = np.real(ratio)
    k_field[mask] = 0.0
    dlogR[mask] = 0.0

    k_char = np.sqrt(2.0 * psi.mass * kinetic_energy(psi)) / psi.hbar
    grad_k = spectral_gradient(_bridge_masked(k_field, mask), psi.grid).real
    variation_R = np.abs(dlogR) / k_char
    variation_k = np.abs(grad_k) / k_char ** 2
    with np.errstate(divide="ignore"):
        lambda_field = 2.0 * np.pi / np.abs(k_field)

    core = probability_core(psi)
    probe = core & ~mask
    if probe.any():
        worst = float(np.max(np.maximum(variation_R[probe], variation_k[probe])))
        verdict = worst < lpw_threshold
    else:
        verdict = False
    return LocalStructure(k_field=k_field, lambda_field=lambda_field,
                          variation_R=variation_R, variation_k=variation_k,
                          node_mask=mask, core=core, k_char=k_char,
                          threshold=lpw_threshold, is_lpw=verdict)


def formation_time(snapshots, lpw_threshold=LPW_THRESHOLD_DEFAULT,
                   node_floor=NODE_FLOOR_DEFAULT):
    """First snapshot time at which is_lpw holds, plus the verdict series."""
    verdicts = []
    t_lpw = None
    for w in snapshots:
        s = local_structure(w, lpw_threshold, node_floor)
        verdicts.append(s.is_lpw)
        if t_lpw is None and s.is_lpw:
            t_lpw = w.time
    return t_lpw, np.array(verdicts, dtype=bool)


@dataclass
class PacketDecomposition:
    cells: list          # (a, b) intervals, consecutive, covering the core
    k_rep: np.ndarray    # representative wave vector per cell
    components: list     # psi_i arrays; sum equals psi exactly
    theta: list          # the partition-of-unity windows


def decompose_packets(psi, k_var_tol=0.2, lpw_threshold=LPW_THRESHOLD_DEFAULT,
                      node_floor=NODE_FLOOR_DEFAULT, overlap_pts=16):
    """Greedy left-to-right split of a local plane wave into packets.

    Cells extend while the local wave vector stays within k_var_tol of the
    cell mean and are at least one local wavelength wide; components come
    from a raised-cosine partition of unity with overlap width 16 dx.
    """
    s = local_structure(psi, lpw_threshold, node_floor)
    if not s.is_lpw:
        raise NotLocalPlaneWave("decomposition requires a local plane wave")
    g = psi.grid
    idx = np.flatnonzero(s.core)
    lo, hi = idx[0], idx[-1]
    k = s.k_field
    k_floor = 1e-3 * s.k_char

    boundaries = [lo]
    acc_sum, acc_n = k[lo], 1
    start = lo
    for j in range(lo + 1, hi + 1):
        mean = acc_sum / acc_n
        width = (j - start) * g.dx
        lam_here = 2.0 * np.pi / max(abs(k[j]), k_floor)
        if abs(k[j] - mean) > k_var_tol * max(abs(mean), k_floor) and width >= lam_here:
            boundaries.append(j)
            start, acc_sum, acc_n = j, k[j], 1
        else:
            acc_sum += k[j]
            acc_n += 1
    boundaries.append(hi + 1)

    cells = []
    k_rep = []
    for a, b in zip(boundaries[:-1], boundaries[1:]):
        cells.append((g.x[a], g.x[min(b, g.n - 1)]))
        k_rep.append(float(np.mean(k[a:b])))

    thetas = _partition_of_unity(g.n, boundaries, overlap_pts)
    components = [th * psi.psi for th in thetas]
    return PacketDecomposition(cells=cells, k_rep=np.array(k_rep),
                               components=components, theta=thetas)


def _partition_of_unity(n, boundaries, overlap_pts):
    """Raised-cosine windows summing to one exactly; first/last windows extend
    to the domain edges."""
    n_cells = len(boundaries) - 1
    ramps = []
    for b in boundaries[1:-1]:
        lo = b - overlap_pts // 2
        u = np.clip((np.arange(n) - lo) / max(overlap_pts, 1), 0.0, 1.0)
        ramps.append(0.5 * (1.0 - np.cos(np.pi * u)))  # 0 before, 1 after
    thetas = []
    for i in range(n_cells):
        th = np.ones(n)
        if i > 0:
            th = th * ramps[i - 1]
        if i < n_cells - 1:
            th = th * (1.0 - ramps[i])
        thetas.append(th)
    return thetas


def free_spectrum_interpolant(psi):
    """Cubic interpolant of psi_hat on the monotone k grid (0 outside)."""
    kk = np.fft.fftshift(psi.grid.k)
    ph = np.fft.fftshift(psi.spectrum())
    re = CubicSpline(kk, ph.real, extrapolate=False)
    im = CubicSpline(kk, ph.imag, extrapolate=False)

    def eval_hat(q):
        out = re(q) + 1j * im(q)
        return np.where(np.isnan(out), 0.0, out)

    return eval_hat


def stationary_phase_oracle(psi0, t, pot=None):
    """Free long-time asymptotics (m/(i hbar t))^{1/2} e^{i m x^2/2 hbar t}
    psi_hat(m x / hbar t), compared against the exact free evolution.

    Returns (approx WaveField, relative L2 error over the core of the evolved
    state). The principal square root of m/(i hbar t) carries the correct
    e^{-i pi/4} phase for forward evolution.
    """
    if pot is not None and getattr(pot, "kind", "free") != "free":
        raise NonFreePotential("stationary phase asymptotics need V = 0")
    if not t > 0.0:
        raise ValueError("t must be positive")
    g = psi0.grid
    m, hbar = psi0.mass, psi0.hbar
    eval_hat = free_spectrum_interpolant(psi0)
    q = m * g.x / (hbar * t)
    pref = np.sqrt(m / (1j * hbar * t))
    amp = pref * np.exp(0.5j * m * g.x ** 2 / (hbar * t)) * eval_hat(q)
    approx = WaveField(g, amp, time=psi0.time + t, hbar=hbar, mass=m, _checked=True)

    exact = free_evolve(psi0, t)
    core = probability_core(exact)
    diff = np.sum(np.abs(approx.psi - exact.psi)[core] ** 2)
    ref = np.sum(np.abs(exact.psi)[core] ** 2)
    return approx, float(np.sqrt(diff / ref))


def free_evolve(psi, t):
    """Exact free evolution by one spectral kinetic phase (V = 0 only)."""
    g = psi.grid
    phase = np.exp(-0.5j * psi.hbar * g.k ** 2 * t / psi.mass)
    amp = np.fft.ifft(phase * np.fft.fft(psi.psi))
    return WaveField(g, amp, time=psi.time + t, hbar=psi.hbar, mass=psi.mass,
                     _checked=True)


def momentum_readout(ensemble, snapshots=None, node_floor=NODE_FLOOR_DEFAULT):
    """Local de Broglie momentum p = hbar k(X(t), t) along trajectories.

    Returns (p, valid) arrays shaped like ensemble.positions; samples whose
    interpolation stencil touches the node mask are invalid (NaN).
    """
    snaps = snapshots if snapshots is not None else ensemble.snapshots
    n_p, n_t = ensemble.positions.shape
    if n_t != len(snaps):
        raise ValueError("ensemble and snapshots disagree on the time grid")
    p = np.full((n_p, n_t), np.nan)
    valid = np.zeros((n_p, n_t), dtype=bool)
    for j, w in enumerate(snaps):
        s = local_structure(w, node_floor=node_floor)
        x_j = ensemble.positions[:, j]
        pj = w.hbar * cubic_interp(_bridge_masked(s.k_field, s.node_mask),
                                   w.grid, x_j).real
        bad = np.abs(cubic_interp(s.node_mask.astype(float), w.grid, x_j)) > 1e-12
        p[:, j] = np.where(bad, np.nan, pj)
        valid[:, j] = ~bad
    return p, valid
