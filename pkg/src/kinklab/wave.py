"""Traveling waves of u_t = u_xx + u - u^(2n+1) and their linearization.

The standing profile m solves the stationary equation

    m'' + m - m^(2n+1) = 0,    m(0) = 0,    m(x) -> +-1  as  x -> +-inf.

For n = 1 the profile is the classical kink tanh(x / sqrt(2)); for larger n it
is computed by a damped Newton iteration.  The profile itself does not decay
(it connects -1 to +1), so it must never be pushed through a Fourier
multiplier directly.  Everything spectral in this module acts on the
deviation m - tanh(x / sqrt(2)), which decays exponentially and is flat at
the box edges; the tanh part is handled in closed form.

The linearization A = -Lap - 1 + (2n+1) m^(2n) is materialized as a dense
symmetric matrix (spectral Laplacian, so its low-lying spectrum is accurate
to the box truncation error).  Its kernel direction is m', and the distance
of a state to the family {m(. - theta)} is measured by minimizing over the
shift, seeded at the Fermi coordinate where v - m_theta is orthogonal to
m'_theta.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.linalg import circulant, eigh, solve

from .grid import (FLAT_TOL, Field, GridSpec, derivative, neg_norm,
                   require_flat, shift)

_SQRT2 = math.sqrt(2.0)


def _ref(x: np.ndarray) -> np.ndarray:
    """Reference kink tanh(x / sqrt(2)) shared by all n as tail model."""
    return np.tanh(x / _SQRT2)


def _ref_prime(x: np.ndarray) -> np.ndarray:
    # sech^2 written in decaying exponentials so large |x| underflows cleanly
    e = np.exp(-2.0 * np.abs(x) / _SQRT2)
    return 2.0 * _SQRT2 * e / (1.0 + e) ** 2


def _ref_second(x: np.ndarray) -> np.ndarray:
    # tanh(x/sqrt(2)) solves r'' = r^3 - r exactly.
    r = np.tanh(x / _SQRT2)
    return r**3 - r


def _laplacian_matrix(grid: GridSpec) -> np.ndarray:
    """Dense circulant matrix of the spectral Laplacian on the grid.

    The first column is symmetrized so the matrix is symmetric to the last
    bit, not merely to rounding of the inverse FFT.
    """
    sym = -4.0 * np.pi**2 * grid.theta**2
    col = np.fft.irfft(sym, n=grid.N)
    col[1:] = 0.5 * (col[1:] + col[1:][::-1])
    return circulant(col)


class WaveProfile:
    """A wave profile m(. - theta) with derivative and norm data attached.

    Attributes
    ----------
    n : int
        Nonlinearity index (power is 2n+1).
    grid : GridSpec
    theta : float
        Shift of the profile; the wave vanishes at x = theta.
    m, m_prime : Field
        Profile and its derivative sampled on the grid.
    norm_sq : float
        L^2 norm squared of m'.
    """

    __slots__ = ("n", "grid", "theta", "m", "m_prime", "norm_sq", "_dev", "_dev_prime")

    def __init__(self, n: int, grid: GridSpec, theta: float,
                 dev: np.ndarray, dev_prime: np.ndarray):
        self.n = int(n)
        self.grid = grid
        self.theta = float(theta)
        self._dev = np.array(dev, dtype=float)
        self._dev_prime = np.array(dev_prime, dtype=float)
        y = grid.x - self.theta
        self.m = Field(grid, _ref(y) + self._dev)
        self.m_prime = Field(grid, _ref_prime(y) + self._dev_prime)
        self.norm_sq = float(grid.dx * np.sum(self.m_prime.values**2))

    def shifted(self, z: float) -> "WaveProfile":
        """Profile translated by a further z (total shift theta + z)."""
        if z == 0.0:
            return self
        dev = shift(Field(self.grid, self._dev), z).values
        devp = shift(Field(self.grid, self._dev_prime), z).values
        return WaveProfile(self.n, self.grid, self.theta + z, dev, devp)

    def second_derivative(self) -> Field:
        """m'' evaluated through the stationary equation (exact, no FFT)."""
        v = self.m.values
        return Field(self.grid, v ** (2 * self.n + 1) - v)


def _deviation_residual(dev: np.ndarray, n: int, grid: GridSpec,
                        ref: np.ndarray, ref_second: np.ndarray) -> np.ndarray:
    """Stationary-equation residual for m = ref + dev with spectral Lap(dev)."""
    sym = -4.0 * np.pi**2 * grid.theta**2
    lap_dev = np.fft.irfft(sym * np.fft.rfft(dev), n=grid.N)
    m = ref + dev
    return lap_dev + ref_second + m - m ** (2 * n + 1)


def solve_wave(n: int, grid: GridSpec, *, tol: float = 1e-10,
               max_iter: int = 40) -> WaveProfile:
    """Compute the standing wave for the given nonlinearity index.

    n = 1 returns the closed-form kink.  For n >= 2 a damped Newton
    iteration runs on the deviation from the reference kink, starting at
    zero deviation; failure to converge raises with the final residual.
    The default tolerance sits above the roundoff floor of the spectral
    Laplacian (about |4 pi^2 theta_max^2| * eps) with margin to spare.
    """
    if not isinstance(n, (int, np.integer)) or n < 1:
        raise ValueError(f"nonlinearity index must be a positive integer, got {n!r}")
    n = int(n)
    if n == 1:
        zero = np.zeros(grid.N)
        return WaveProfile(1, grid, 0.0, zero, zero)

    x = grid.x
    ref = _ref(x)
    ref_second = _ref_second(x)

    def odd_part(arr: np.ndarray) -> np.ndarray:
        # reflection x -> -x maps grid index p to (N - p) mod N
        mirror = np.roll(arr[::-1], 1)
        return 0.5 * (arr - mirror)

    dev = np.zeros(grid.N)
    res = _deviation_residual(dev, n, grid, ref, ref_second)
    ident = np.eye(grid.N)
    lap = _laplacian_matrix(grid)
    for _ in range(max_iter):
        sup = float(np.max(np.abs(res)))
        if sup <= tol:
            break
        m = ref + dev
        # The Jacobian of the residual is minus the linearized operator, which
        # is singular at the solution (translation mode, even).  The residual
        # of an odd iterate is odd, hence orthogonal to that kernel, so a
        # rank-one shift along the current m' direction makes the solve well
        # posed without changing the step.
        a_mat = -lap - ident + np.diag((2 * n + 1) * m ** (2 * n))
        mp = _ref_prime(x) + derivative(Field(grid, dev)).values
        mp /= np.linalg.norm(mp)
        delta = solve(a_mat + np.outer(mp, mp), res, assume_a="sym")
        step = 1.0
        while step > 1e-6:
            trial = odd_part(dev + step * delta)
            res_trial = _deviation_residual(trial, n, grid, ref, ref_second)
            if float(np.max(np.abs(res_trial))) <= (1.0 - 1e-4 * step) * sup:
                dev, res = trial, res_trial
                break
            step *= 0.5
        else:
            raise RuntimeError(
                f"wave solve for n={n}: line search stalled at residual {sup:.3e}")
    else:
        sup = float(np.max(np.abs(res)))
        raise RuntimeError(
            f"wave solve for n={n}: no convergence in {max_iter} iterations, "
            f"final residual {sup:.3e}")
    dev_prime = derivative(Field(grid, dev)).values
    return WaveProfile(n, grid, 0.0, dev, dev_prime)


def ode_residual(w: WaveProfile) -> float:
    """Sup norm of m'' + m - m^(2n+1) with the spectral deviation Laplacian."""
    y = w.grid.x - w.theta
    res = _deviation_residual(w._dev, w.n, w.grid, _ref(y), _ref_second(y))
    return float(np.max(np.abs(res)))


def wave_norm_sq(w: WaveProfile) -> float:
    """L^2 norm squared of m' (plain Riemann sum; spectrally accurate here)."""
    return float(w.grid.dx * np.sum(w.m_prime.values**2))


def project_P(w: WaveProfile, f: Field) -> Field:
    """Projection P f = <f, m'> / ||m'|| * m' (normalized by the norm once).

    Note the single power of ||m'||: P is not idempotent but satisfies
    P(P f) = ||m'|| P f.
    """
    ip = float(w.grid.dx * np.sum(f.values * w.m_prime.values))
    return (ip / math.sqrt(w.norm_sq)) * w.m_prime


class LinearizedOperator:
    """Dense symmetric matrix of A = -Lap - 1 + (2n+1) m^(2n).

    The Laplacian block is the spectral circulant, so eigenvalues of the
    low-lying discrete spectrum agree with the continuum operator up to the
    exponentially small box truncation.  The eigendecomposition is computed
    once on first use and cached, eigenvalues ascending.
    """

    def __init__(self, profile: WaveProfile):
        self.profile = profile
        grid = profile.grid
        n = profile.n
        pot = (2 * n + 1) * profile.m.values ** (2 * n) - 1.0
        self.matrix = -_laplacian_matrix(grid) + np.diag(pot)
        self._eig: tuple[np.ndarray, np.ndarray] | None = None

    def eigensystem(self) -> tuple[np.ndarray, np.ndarray]:
        """(eigenvalues ascending, eigenvectors as columns, l2-orthonormal)."""
        if self._eig is None:
            vals, vecs = eigh(self.matrix)
            self._eig = (vals, vecs)
        return self._eig

    def apply(self, f: Field) -> Field:
        return Field(self.profile.grid, self.matrix @ f.values)

    def semigroup(self, t: float, f: Field) -> Field:
        """e^{-t A} f through the cached eigendecomposition."""
        if t < 0:
            raise ValueError("semigroup time must be nonnegative")
        vals, vecs = self.eigensystem()
        coeff = vecs.T @ f.values
        return Field(self.profile.grid, vecs @ (np.exp(-t * vals) * coeff))

    def kernel_projector(self, f: Field) -> Field:
        """Rank-one projection onto the lowest eigenvector (the m' direction)."""
        _, vecs = self.eigensystem()
        v0 = vecs[:, 0]
        return Field(self.profile.grid, v0 * float(v0 @ f.values))


def spectral_gap(op: LinearizedOperator) -> tuple[float, float]:
    """The two lowest eigenvalues (lambda_0 ~ 0, lambda_1 = the gap)."""
    vals, _ = op.eigensystem()
    return float(vals[0]), float(vals[1])


def fermi_coordinate(v: Field, w: WaveProfile, *, tol: float = 1e-12,
                     max_iter: int = 60) -> float:
    """Shift l solving <v - m_l, m'_l> = 0, by Newton from the zero crossing.

    Returns the absolute shift (same convention as WaveProfile.theta).  If
    Newton does not settle, the last iterate is returned; the caller's
    bracketed search absorbs an imperfect seed.
    """
    grid = w.grid
    vals = v.values
    sign = np.sign(vals)
    crossings = np.nonzero((sign[:-1] < 0) & (sign[1:] >= 0))[0]
    if crossings.size:
        i = int(crossings[0])
        x0, x1 = grid.x[i], grid.x[i + 1]
        f0, f1 = vals[i], vals[i + 1]
        seed = float(x0 - f0 * (x1 - x0) / (f1 - f0)) if f1 != f0 else float(x0)
    else:
        seed = w.theta
    ell = seed
    for _ in range(max_iter):
        cand = w.shifted(ell - w.theta)
        diff = vals - cand.m.values
        r = float(grid.dx * np.sum(diff * cand.m_prime.values))
        mpp = cand.second_derivative().values
        slope = cand.norm_sq - float(grid.dx * np.sum(diff * mpp))
        if slope == 0.0:
            break
        step = r / slope
        ell -= step
        if abs(step) <= tol:
            break
    return ell


def _leftmost_argmin(values: np.ndarray, slack: float) -> int:
    """Index of the first entry within a relative slack of the minimum."""
    best = float(np.min(values))
    return int(np.nonzero(values <= best + slack * (1.0 + best))[0][0])


def _dist_norm(f: Field, norm: str, kappa: float, kappa_prime: float,
               p: float) -> float:
    if norm == "sup":
        return f.norm_sup()
    if norm == "neg_holder":
        return neg_norm(f, kappa, p=np.inf)
    if norm == "neg_sobolev":
        return neg_norm(f, kappa_prime, p=p)
    raise ValueError(f"unknown norm {norm!r}; use 'sup', 'neg_holder' or 'neg_sobolev'")


def dist_to_manifold(v: Field, w: WaveProfile, norm: str = "sup", *,
                     kappa: float = 0.002, kappa_prime: float = 3.1e-7,
                     p: float = 64, bracket: float = 1.0,
                     tol: float = 1e-10,
                     flat_tol: float = FLAT_TOL) -> tuple[float, float]:
    """Distance of v to the shifted-wave family and the minimizing shift.

    Minimizes ||v - m_theta|| over theta in the chosen norm.  The search is
    seeded at the Fermi coordinate, pre-scanned on a coarse lattice across
    the bracket (picking the leftmost minimum on ties), then refined by
    golden-section.  v must be flat at the box edges relative to the +-1
    tails, i.e. v - m must wrap continuously; ``flat_tol`` loosens that
    guard for states carrying a small noise floor at the edges (stationary
    samples from the clipped covariance factor sit near 1e-5).
    """
    require_flat(v - w.m, tol=flat_tol, what="distance argument minus wave")
    ell = fermi_coordinate(v, w)

    def objective(theta: float) -> float:
        cand = w.shifted(theta - w.theta)
        return _dist_norm(v - cand.m, norm, kappa, kappa_prime, p)

    # Coarse scan, leftmost minimum wins ties within a relative slack.
    thetas = np.linspace(ell - bracket, ell + bracket, 41)
    scans = np.array([objective(t) for t in thetas])
    i0 = _leftmost_argmin(scans, 1e-12)
    span = thetas[1] - thetas[0]
    a = thetas[max(i0 - 1, 0)]
    b = thetas[min(i0 + 1, len(thetas) - 1)]

    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    c = b - inv_phi * (b - a)
    d = a + inv_phi * (b - a)
    fc, fd = objective(c), objective(d)
    while b - a > tol:
        if fc <= fd:  # ties move left
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = objective(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = objective(d)
    theta_star = 0.5 * (a + b)
    return objective(theta_star), float(theta_star)
