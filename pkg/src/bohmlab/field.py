"""Wave function on a uniform periodic grid: spectral calculus and polar form.

Everything here is pure: WaveField amplitudes are frozen after construction,
so values can be shared freely between threads and between the propagator
and the trajectory integrator.
"""

import json

import numpy as np

from .errors import AllNodes, EdgeOverlap, OutOfDomain, SigmaUnderresolved

NODE_FLOOR_DEFAULT = 1e-6  # below double-precision meaningfulness of Im(grad psi / psi)


class Grid:
    """Uniform periodic 1D grid with n a power of two.

    Grid points are x_j = x_min + j*dx for j = 0..n-1; x_max wraps onto x_min.
    """

    def __init__(self, x_min, x_max, n):
        n = int(n)
        if n < 8 or (n & (n - 1)) != 0:
            raise ValueError(f"grid.n must be a power of two >= 8, got {n}")
        if not x_max > x_min:
            raise ValueError("grid requires x_max > x_min")
        self.x_min = float(x_min)
        self.x_max = float(x_max)
        self.n = n
        self.dx = (self.x_max - self.x_min) / n
        self.x = self.x_min + self.dx * np.arange(n)
        self.x.flags.writeable = False
        # angular wavenumbers of the FFT modes
        self.k = 2.0 * np.pi * np.fft.fftfreq(n, d=self.dx)
        self.k.flags.writeable = False
        self.k_nyquist = np.pi / self.dx

    def __eq__(self, other):
        return (isinstance(other, Grid) and self.n == other.n
                and self.x_min == other.x_min and self.x_max == other.x_max)

    def __repr__(self):
        return f"Grid(x_min={self.x_min}, x_max={self.x_max}, n={self.n})"

    def contains(self, x):
        x = np.asarray(x)
        return (x >= self.x_min) & (x < self.x_max)


class WaveField:
    """Complex wave function sampled on a Grid, with time stamp and units.

    The L2 norm on the grid is 1 within 1e-9 after construction; amplitudes
    are finite and read-only.
    """

    def __init__(self, grid, amplitudes, time=0.0, hbar=1.0, mass=1.0, _checked=False):
        amplitudes = np.asarray(amplitudes, dtype=complex)
        if amplitudes.shape != (grid.n,):
            raise ValueError("amplitudes length must equal grid.n")
        if not _checked:
            if not np.all(np.isfinite(amplitudes.view(float))):
                raise ValueError("amplitudes must be finite")
            nrm2 = np.sum(np.abs(amplitudes) ** 2) * grid.dx
            if abs(nrm2 - 1.0) > 1e-9:
                raise ValueError(f"wave not normalized: ||psi||^2 = {nrm2!r}")
        self.grid = grid
        self.psi = amplitudes
        self.psi.flags.writeable = False
        self.time = float(time)
        self.hbar = float(hbar)
        self.mass = float(mass)

    def norm_sq(self):
        return float(np.sum(np.abs(self.psi) ** 2) * self.grid.dx)

    def density(self):
        return np.abs(self.psi) ** 2

    def mean_position(self):
        return float(np.sum(self.grid.x * self.density()) * self.grid.dx)

    def position_variance(self):
        m1 = self.mean_position()
        m2 = float(np.sum(self.grid.x ** 2 * self.density()) * self.grid.dx)
        return m2 - m1 ** 2

    def spectrum(self):
        """Fourier coefficients psi_hat(k) in the unitary continuum convention."""
        return np.fft.fft(self.psi) * self.grid.dx / np.sqrt(2.0 * np.pi)

    def mean_momentum(self):
        w = np.abs(self.spectrum()) ** 2
        dk = 2.0 * np.pi / (self.grid.n * self.grid.dx)
        return float(self.hbar * np.sum(self.grid.k * w) * dk)

    def with_amplitudes(self, amplitudes, time=None):
        return WaveField(self.grid, amplitudes,
                         time=self.time if time is None else time,
                         hbar=self.hbar, mass=self.mass)


class PolarPair:
    """Polar form psi = R exp(iS/hbar) with a mask over node segments.

    S is unwrapped left-to-right through non-node points; values inside
    masked segments are bridged from the last valid point and must not be
    trusted by consumers.
    """

    def __init__(self, R, S, node_mask, hbar):
        self.R = R
        self.S = S
        self.node_mask = node_mask
        self.hbar = float(hbar)
        for a in (R, S, node_mask):
            a.flags.writeable = False


def make_gaussian(grid, center, sigma, k0, hbar=1.0, mass=1.0):
    """Normalized Gaussian packet exp(-(x-center)^2/(4 sigma^2)) exp(i k0 x).

    |psi|^2 is normal with standard deviation sigma. Raises
    SigmaUnderresolved if sigma <= 2*dx and EdgeOverlap if the 6-sigma
    support reaches the grid edges.
    """
    if sigma <= 2.0 * grid.dx:
        raise SigmaUnderresolved(f"sigma={sigma} <= 2*dx={2 * grid.dx}")
    if center - 6.0 * sigma < grid.x_min or center + 6.0 * sigma > grid.x_max:
        raise EdgeOverlap(f"support [{center - 6 * sigma}, {center + 6 * sigma}] "
                          f"clipped by grid [{grid.x_min}, {grid.x_max}]")
    u = grid.x - center
    psi = np.exp(-u ** 2 / (4.0 * sigma ** 2)) * np.exp(1j * k0 * grid.x)
    psi /= np.sqrt(np.sum(np.abs(psi) ** 2) * grid.dx)
    return WaveField(grid, psi, time=0.0, hbar=hbar, mass=mass, _checked=True)


def spectral_gradient(f, grid):
    """d/dx of a periodic grid function via the Fourier multiplier ik.

    Exact for band-limited input. The Nyquist mode is dropped so that the
    derivative of a real function stays real.
    """
    f = np.asarray(f, dtype=complex)
    if f.shape != (grid.n,):
        raise ValueError("input length must equal grid.n")
    ik = 1j * grid.k.copy()
    ik[grid.n // 2] = 0.0
    return np.fft.ifft(ik * np.fft.fft(f))


def spectral_laplacian(f, grid):
    """d2/dx2 via the Fourier multiplier -k^2."""
    f = np.asarray(f, dtype=complex)
    return np.fft.ifft(-(grid.k ** 2) * np.fft.fft(f))


def kinetic_energy(psi):
    """<psi, -(hbar^2/2m) laplacian psi> evaluated in spectral space (>= 0)."""
    g = psi.grid
    w = np.abs(np.fft.fft(psi.psi)) ** 2
    # spectral weight dx/n makes sum(|psi_hat|^2 dk) equal the grid norm
    return float(psi.hbar ** 2 / (2.0 * psi.mass) * np.sum(g.k ** 2 * w) * g.dx / g.n)


def polar_decompose(psi, node_floor=NODE_FLOOR_DEFAULT):
    """Split psi into amplitude R and unwrapped phase action S.

    The node threshold is node_floor * max|psi|; S at the leftmost non-node
    point lies in (-pi*hbar, pi*hbar], and consecutive non-node points differ
    by less than pi*hbar. Node segments carry the last valid S value.
    """
    if not 0.0 < node_floor <= 1e-2:
        raise ValueError("node_floor must lie in (0, 1e-2]")
    R = np.abs(psi.psi)
    thresh = node_floor * R.max()
    mask = R < thresh
    if mask.all():
        raise AllNodes("every grid point below the node threshold")
    hbar = psi.hbar
    n = psi.grid.n
    S = np.empty(n)
    first = int(np.argmin(mask))  # leftmost non-node index
    S[: first + 1] = hbar * np.angle(psi.psi[first])
    # increments between consecutive points, each reduced to (-pi, pi]
    inc = hbar * np.angle(psi.psi[1:] / psi.psi[:-1])
    if not mask.any():
        S[first:] = S[first] + np.concatenate([[0.0], np.cumsum(inc[first:])])
        return PolarPair(R, S, mask, hbar)
    last_S = S[first]
    last_j = first
    for j in range(first + 1, n):
        if mask[j]:
            S[j] = last_S
        else:
            if last_j == j - 1:
                last_S = last_S + inc[j - 1]
            else:
                # bridge across the masked segment from the last valid point
                last_S = last_S + hbar * np.angle(psi.psi[j] / psi.psi[last_j])
            S[j] = last_S
            last_j = j
    return PolarPair(R, S, mask, hbar)


def recompose(polar, psi_like):
    """Rebuild a WaveField from a PolarPair (inverse of polar_decompose)."""
    amp = polar.R * np.exp(1j * polar.S / polar.hbar)
    return psi_like.with_amplitudes(amp)


def cubic_interp(values, grid, x):
    """4-point Lagrange interpolation of a periodic grid function at x.

    x may be a scalar or array; every position must lie inside the domain.
    """
    x = np.asarray(x, dtype=float)
    inside = grid.contains(x)
    if not np.all(inside):
        bad = np.asarray(x)[~inside]
        raise OutOfDomain(f"positions outside [{grid.x_min}, {grid.x_max}): {bad[:3]}")
    u = (x - grid.x_min) / grid.dx
    j = np.floor(u).astype(int)
    t = u - j
    n = grid.n
    jm1 = (j - 1) % n
    jp1 = (j + 1) % n
    jp2 = (j + 2) % n
    values = np.asarray(values)
    f0, f1, f2, f3 = values[jm1], values[j], values[jp1], values[jp2]
    # Lagrange weights on stencil offsets (-1, 0, 1, 2)
    w0 = -t * (t - 1.0) * (t - 2.0) / 6.0
    w1 = (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0
    w2 = -(t + 1.0) * t * (t - 2.0) / 2.0
    w3 = (t + 1.0) * t * (t - 1.0) / 6.0
    return w0 * f0 + w1 * f1 + w2 * f2 + w3 * f3


def write_csv(psi, path):
    """Columns: x, re_psi, im_psi, abs2."""
    data = np.column_stack([psi.grid.x, psi.psi.real, psi.psi.imag, psi.density()])
    header = "x,re_psi,im_psi,abs2"
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header + "\n")
        np.savetxt(fh, data, fmt="%.17g", delimiter=",")


def write_snapshot(psi, path):
    """Binary snapshot: one JSON header line, then interleaved little-endian
    float64 re/im pairs."""
    header = {
        "grid": {"x_min": psi.grid.x_min, "x_max": psi.grid.x_max, "n": psi.grid.n},
        "time": psi.time,
        "hbar": psi.hbar,
        "mass": psi.mass,
    }
    inter = np.empty(2 * psi.grid.n)
    inter[0::2] = psi.psi.real
    inter[1::2] = psi.psi.imag
    with open(path, "wb") as fh:
        fh.write((json.dumps(header, sort_keys=True) + "\n").encode("utf-8"))
        fh.write(inter.astype("<f8").tobytes())


def read_snapshot(path):
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        raw = np.frombuffer(fh.read(), dtype="<f8")
    g = Grid(header["grid"]["x_min"], header["grid"]["x_max"], header["grid"]["n"])
    psi = raw[0::2] + 1j * raw[1::2]
    return WaveField(g, psi, time=header["time"], hbar=header["hbar"],
                     mass=header["mass"], _checked=True)
