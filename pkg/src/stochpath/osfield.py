"""Gaussian lattice field, time reflection, and positivity certification.

The field lives on a lattice with one time axis (Dirichlet ends) and an
optional periodic space axis.  Time sites run over t = 1-T .. T, so the
reflection plane sits on the link between t=0 and t=1: Theta maps site
t -> 1-t, which is a plain reversal of the time axis, and "positive
time" means t >= 1.

The measure is the Gaussian free field with covariance (-Laplacian+m^2)^{-1}
(site covariance a^{-d} K^{-1} for the operator matrix K), the one case
with a closed-form characteristic functional

    E[exp(i phi(g))] = exp(-1/2 <g, C g>),

which lets Gram matrices over time-reflected test-function pairs be
certified positive to round-off.  Periodic time would wrap reflections,
hence the Dirichlet ends.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.optimize as sopt

from .errors import (
    ContinuationAmbiguousError,
    DomainMismatchError,
    IllConditionedCovarianceError,
    PositivityDomainError,
    SemigroupViolationError,
)


# ---------------------------------------------------------------------------
# lattice and test functions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Lattice:
    """Spacetime lattice: n_time total sites (even), optional space axis."""

    n_time: int
    n_space: int = 0
    spacing: float = 1.0

    def __post_init__(self):
        if self.n_time < 4 or self.n_time % 2:
            raise ValueError("n_time must be even and >= 4")
        if self.n_space and self.n_space < 2:
            raise ValueError("n_space must be 0 (none) or >= 2")
        if self.spacing <= 0:
            raise ValueError("spacing must be positive")

    @property
    def half(self):
        return self.n_time // 2

    @property
    def times(self):
        """Integer time coordinate per time index: 1-T .. T."""
        return np.arange(self.n_time) - self.half + 1

    @property
    def dim(self):
        return 2 if self.n_space else 1

    @property
    def shape(self):
        return (self.n_time, self.n_space) if self.n_space else (self.n_time,)

    @property
    def n_sites(self):
        return self.n_time * max(self.n_space, 1)

    @property
    def cell_volume(self):
        return self.spacing ** self.dim


@dataclass
class TestFunction:
    """Real, finitely supported function on the lattice."""

    lattice: Lattice
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.lattice.shape:
            raise ValueError("values must match the lattice shape")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("test function must be finite")

    @property
    def support_min_time(self):
        """Smallest time coordinate carrying a nonzero value (None if f=0)."""
        flat = self.values if self.values.ndim == 1 else np.any(
            self.values != 0.0, axis=1)
        hit = np.nonzero(np.atleast_1d(flat))[0]
        if hit.size == 0:
            return None
        return int(self.lattice.times[hit[0]])

    def is_positive_time(self):
        t0 = self.support_min_time
        return t0 is None or t0 >= 1


def time_reflect(f):
    """Theta f(t, x) = f(1-t, x): reversal of the (link-centred) time axis."""
    return TestFunction(f.lattice, f.values[::-1].copy())


def time_shift(f, steps):
    """Shift support forward in time by `steps` sites (no wraparound)."""
    out = np.zeros_like(f.values)
    if steps >= 0:
        if steps and np.any(f.values[f.values.shape[0] - steps:] != 0.0):
            raise ValueError("time shift pushes support off the lattice")
        out[steps:] = f.values[:f.values.shape[0] - steps] if steps else f.values
    else:
        out[:steps] = f.values[-steps:]
    shifted = TestFunction(f.lattice, out)
    if not shifted.is_positive_time():
        raise SemigroupViolationError(
            "time shift moved support out of the positive-time region")
    return shifted


def space_shift(f, steps):
    """Periodic shift along the space axis."""
    if f.lattice.n_space == 0:
        raise ValueError("lattice has no space axis")
    return TestFunction(f.lattice, np.roll(f.values, steps, axis=1))


def pair(field_sample, f):
    """Distribution pairing phi(f) = sum_x f(x) phi(x) * cell volume."""
    sample = np.asarray(field_sample, dtype=float)
    if sample.shape != f.lattice.shape:
        raise DomainMismatchError("field sample and test function lattices differ")
    return float(np.sum(sample * f.values) * f.lattice.cell_volume)


# ---------------------------------------------------------------------------
# covariance operator
# ---------------------------------------------------------------------------

class CovarianceOp:
    """Inverse of (-Laplacian + m^2): Dirichlet in time, periodic in space.

    Positive definiteness is established by Cholesky factorization at
    construction; the factor is reused for solves and field sampling.
    """

    def __init__(self, lattice, mass):
        if mass <= 0:
            raise ValueError("mass must be positive")
        self.lattice = lattice
        self.mass = float(mass)
        a2 = lattice.spacing ** 2
        nt = lattice.n_time

        Dt = (np.diag(np.full(nt, 2.0)) - np.diag(np.ones(nt - 1), 1)
              - np.diag(np.ones(nt - 1), -1)) / a2
        if lattice.n_space:
            ns = lattice.n_space
            Dx = (np.diag(np.full(ns, 2.0)) - np.diag(np.ones(ns - 1), 1)
                  - np.diag(np.ones(ns - 1), -1)) / a2
            Dx[0, -1] -= 1.0 / a2
            Dx[-1, 0] -= 1.0 / a2
            K = (np.kron(Dt, np.eye(ns)) + np.kron(np.eye(nt), Dx)
                 + self.mass**2 * np.eye(nt * ns))
        else:
            K = Dt + self.mass**2 * np.eye(nt)
        try:
            self._chol = np.linalg.cholesky(K)
        except np.linalg.LinAlgError as exc:
            raise IllConditionedCovarianceError(
                f"operator not positive definite: {exc}") from exc
        self._K = K

    def _check(self, f):
        if f.lattice != self.lattice:
            raise DomainMismatchError("test function on a different lattice")

    def solve(self, values):
        """u with (-Laplacian + m^2) u = values (site arrays in/out)."""
        flat = np.asarray(values, dtype=float).reshape(self.lattice.n_sites)
        u = sla.cho_solve((self._chol, True), flat)
        return u.reshape(self.lattice.shape)

    def quadratic_form(self, f, g=None):
        """<f, C g> = a^d f^T K^{-1} g (g defaults to f)."""
        self._check(f)
        g = f if g is None else g
        self._check(g)
        u = self.solve(g.values)
        return float(np.sum(f.values * u) * self.lattice.cell_volume)

    def sample_fields(self, n_draws, seed):
        """n_draws Gaussian fields with site covariance a^{-d} K^{-1}.

        Each draw uses its own counter-based stream, so results do not
        depend on batching.
        """
        ns = self.lattice.n_sites
        z = np.empty((ns, n_draws))
        for j in range(n_draws):
            gen = np.random.Generator(np.random.Philox(
                key=np.array([seed & 0xFFFFFFFFFFFFFFFF, j], dtype=np.uint64)))
            z[:, j] = gen.standard_normal(ns)
        phi = sla.solve_triangular(self._chol.T, z, lower=False)
        phi *= self.lattice.cell_volume ** -0.5
        return phi.T.reshape((n_draws,) + self.lattice.shape)

    def time_slice_correlator(self, max_sep, source_time=1):
        """<phi(t0) phi(t0+k)> for k = 0..max_sep, from the exact inverse.

        The source sits at integer time `source_time` (center of the
        space axis if present); separations are along the time axis.
        """
        times = self.lattice.times
        i0 = int(np.nonzero(times == source_time)[0][0])
        if i0 + max_sep >= self.lattice.n_time:
            raise ValueError("separation exceeds the lattice")
        rhs = np.zeros(self.lattice.shape)
        if self.lattice.n_space:
            x0 = self.lattice.n_space // 2
            rhs[i0, x0] = 1.0
            col = self.solve(rhs) / self.lattice.cell_volume
            vals = col[i0:i0 + max_sep + 1, x0]
        else:
            rhs[i0] = 1.0
            col = self.solve(rhs) / self.lattice.cell_volume
            vals = col[i0:i0 + max_sep + 1]
        taus = self.lattice.spacing * np.arange(max_sep + 1)
        return taus, vals.copy()


def characteristic(cov, g):
    """E[exp(i phi(g))] = exp(-1/2 <g, C g>) for the Gaussian measure."""
    q = cov.quadratic_form(g)
    if q < -1e-12:
        raise IllConditionedCovarianceError("negative covariance quadratic form")
    return float(np.exp(-0.5 * max(q, 0.0)))


# ---------------------------------------------------------------------------
# states, Gram matrices, inner products
# ---------------------------------------------------------------------------

@dataclass
class FieldStateExpr:
    """State sum_i c_i exp(i phi(f_i)) given by coefficients and functions."""

    coefficients: list
    functions: list

    def __post_init__(self):
        if not self.functions:
            raise ValueError("state needs at least one term")
        if len(self.coefficients) != len(self.functions):
            raise ValueError("coefficients and functions must pair up")
        lat = self.functions[0].lattice
        if any(f.lattice != lat for f in self.functions):
            raise ValueError("all functions must live on one lattice")


@dataclass
class GramMatrix:
    """Inner-product matrix over time-reflected test-function pairs."""

    matrix: np.ndarray
    min_eigenvalue: float
    certified: bool
    tolerance: float
    hermiticity_defect: float


def _require_positive_time(functions):
    for f in functions:
        if not f.is_positive_time():
            raise PositivityDomainError(
                "test-function support must lie at strictly positive time")


def gram_matrix(cov, kets, bras=None, tolerance=1e-10):
    """M[i, i'] = E[exp(i phi(f_i - Theta f'_{i'}))]; Hermitian for bras=kets.

    Positivity of M is only guaranteed for positive-time supports, so any
    sample at t <= 0 raises PositivityDomainError.
    """
    if bras is None:
        bras = kets
    _require_positive_time(kets)
    _require_positive_time(bras)
    refl = [time_reflect(b) for b in bras]
    m = np.empty((len(kets), len(bras)))
    for i, f in enumerate(kets):
        for j, rb in enumerate(refl):
            diff = TestFunction(f.lattice, f.values - rb.values)
            m[i, j] = characteristic(cov, diff)
    herm = float(np.max(np.abs(m - m.T))) if len(kets) == len(bras) else np.nan
    eigs = np.linalg.eigvalsh(0.5 * (m + m.T)) if len(kets) == len(bras) else np.array([np.nan])
    min_eig = float(eigs[0])
    return GramMatrix(matrix=m, min_eigenvalue=min_eig,
                      certified=bool(min_eig >= -tolerance),
                      tolerance=tolerance, hermiticity_defect=herm)


def inner_product(cov, state_a, state_b):
    """<b|a> = sum_{i,i'} conj(c'_{i'}) c_i E[exp(i phi(f_i - Theta f'_{i'}))]."""
    _require_positive_time(state_a.functions)
    _require_positive_time(state_b.functions)
    total = 0.0 + 0.0j
    for ci, fi in zip(state_a.coefficients, state_a.functions):
        for cj, fj in zip(state_b.coefficients, state_b.functions):
            diff = TestFunction(fi.lattice, fi.values - time_reflect(fj).values)
            total += np.conj(cj) * ci * characteristic(cov, diff)
    return complex(total)


@dataclass
class TranslationCheck:
    shift: tuple
    max_matrix_dev: float | None   # vs the unshifted M; spatial shifts only
    min_eigenvalue: float
    certified: bool


def translation_covariance_check(cov, functions, shifts, tolerance=1e-10):
    """Joint shifts of all test functions with the reflection plane fixed.

    Spatial shifts must leave M invariant (periodic covariance); forward
    time shifts give a new Gram matrix that is re-certified.  Shifts that
    push support to t <= 0 raise SemigroupViolationError.
    """
    base = gram_matrix(cov, functions, tolerance=tolerance)
    out = []
    for st, sx in shifts:
        moved = functions
        if st:
            moved = [time_shift(f, st) for f in moved]
        if sx:
            moved = [space_shift(f, sx) for f in moved]
        g = gram_matrix(cov, moved, tolerance=tolerance)
        dev = float(np.max(np.abs(g.matrix - base.matrix))) if st == 0 else None
        out.append(TranslationCheck(shift=(st, sx), max_matrix_dev=dev,
                                    min_eigenvalue=g.min_eigenvalue,
                                    certified=g.certified))
    return out


# ---------------------------------------------------------------------------
# Wick continuation
# ---------------------------------------------------------------------------

@dataclass
class WickContinuation:
    times: np.ndarray
    values: np.ndarray       # complex A exp(-i M t)
    amplitude: float
    mass: float
    amplitude_err: float
    mass_err: float
    chi2_dof: float


def wick_continue(correlator, times, fit_window=None, chi2_threshold=4.0,
                  rtol=1e-3):
    """Continue a decaying correlator to real time through a fitted model.

    The Euclidean data must be a clean single exponential A exp(-M tau)
    over the fit window (pointwise continuation of noisy data is
    ill-posed); the returned series is A exp(-i M t).  Multi-exponential
    content, detected through the fit quality, raises
    ContinuationAmbiguousError.
    """
    if hasattr(correlator, "tau"):
        tau = np.asarray(correlator.tau, dtype=float)
        val = np.asarray(correlator.value, dtype=float)
        err = getattr(correlator, "stderr", None)
    else:
        tau, val = (np.asarray(v, dtype=float) for v in correlator[:2])
        err = correlator[2] if len(correlator) > 2 else None
    if err is not None:
        err = np.asarray(err, dtype=float)
        if not np.any(err > 0):
            err = None

    if fit_window is not None:
        lo, hi = fit_window
        sel = (tau >= lo) & (tau <= hi)
    else:
        sel = np.ones(tau.size, dtype=bool)
    sel &= val > 0
    if sel.sum() < 3:
        raise ContinuationAmbiguousError("too few positive points to fit")
    t, y = tau[sel], val[sel]
    s = err[sel] if err is not None else None

    slope, logA = np.polyfit(t, np.log(y), 1)
    p0 = (float(np.exp(logA)), float(max(-slope, 1e-8)))

    def model(x, A, M):
        return A * np.exp(-M * x)

    popt, pcov = sopt.curve_fit(model, t, y, p0=p0, sigma=s,
                                absolute_sigma=s is not None, maxfev=10000)
    A, M = popt
    perr = np.sqrt(np.diag(pcov))
    resid = y - model(t, A, M)
    dof = max(t.size - 2, 1)
    if s is not None:
        chi2_dof = float(np.sum((resid / s) ** 2) / dof)
    else:
        scale = rtol * float(np.max(np.abs(y)))
        chi2_dof = float(np.sum((resid / scale) ** 2) / dof)
    if chi2_dof > chi2_threshold:
        raise ContinuationAmbiguousError(
            f"correlator is not a single exponential (chi2/dof = {chi2_dof:.3g})",
            chi2_dof=chi2_dof)

    times = np.asarray(times, dtype=float)
    values = A * np.exp(-1j * M * times)
    return WickContinuation(times=times, values=values,
                            amplitude=float(A), mass=float(M),
                            amplitude_err=float(perr[0]), mass_err=float(perr[1]),
                            chi2_dof=chi2_dof)


# ---------------------------------------------------------------------------
# random test functions (shared by checks and the CLI)
# ---------------------------------------------------------------------------

def random_positive_time_functions(lattice, n_functions, rng, max_points=5,
                                   amplitude=1.0):
    """Sparse random test functions supported at t >= 1."""
    pos = np.nonzero(lattice.times >= 1)[0]
    out = []
    for _ in range(n_functions):
        values = np.zeros(lattice.shape)
        k = int(rng.integers(1, max_points + 1))
        t_idx = rng.choice(pos, size=k, replace=True)
        if lattice.n_space:
            x_idx = rng.integers(0, lattice.n_space, size=k)
            for ti, xi in zip(t_idx, x_idx):
                values[ti, xi] += amplitude * rng.standard_normal()
        else:
            for ti in t_idx:
                values[ti] += amplitude * rng.standard_normal()
        out.append(TestFunction(lattice, values))
    return out
