"""Langevin ensembles, Kramers-Moyal estimation, and the action process.

The update rule is Euler-Maruyama for dx/dt = -beta(x) + f(t) with
Gaussian increments of variance 2*D*dt, the convention under which
ensembles converge to densities solving dP/dt = d/dx [beta + D d/dx] P.
Every trajectory draws from its own counter-based Philox stream keyed by
(seed, trajectory index), so ensembles are reproducible and independent
of chunking or scheduling.

The action process dS/dt = -E - eps(t), with eps delta-correlated of
strength hbar*E, is the same machinery with constant drift E and
diffusion D = hbar*E.
"""

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import SimulationDivergedError

_TIME_BLOCK = 1024


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NoiseSpec:
    """Delta-correlated Gaussian forcing of strength D (variance 2*D*dt)."""

    D: float
    seed: int
    scheme: str = "gaussian"

    def __post_init__(self):
        if self.D < 0:
            raise ValueError("diffusion constant must be >= 0")
        if self.scheme != "gaussian":
            raise ValueError("only Gaussian increments are supported")


@dataclass(frozen=True)
class DriftField:
    """Slow drift beta(x); the SDE reads dx/dt = -beta(x) + f(t)."""

    beta: Callable
    name: str = "custom"


def zero_drift():
    return DriftField(lambda x: np.zeros_like(x), "zero")


def linear_drift(gamma=1.0):
    return DriftField(lambda x: gamma * x, "linear")


def cubic_drift(gamma=1.0):
    return DriftField(lambda x: gamma * x**3, "cubic")


def constant_drift(value=1.0):
    return DriftField(lambda x: np.full_like(x, value), "const")


@dataclass
class EnsembleSample:
    """Trajectories on a shared stored time grid.

    ``positions`` has shape (n_traj, n_stored); diverged trajectories stay
    in the array as NaN rows and are listed in ``excluded``.  ``dt`` is the
    stored grid spacing (simulation step times ``store_stride``).
    """

    times: np.ndarray
    positions: np.ndarray
    dt: float
    sim_dt: float
    seed: int
    n_traj: int
    excluded: list = field(default_factory=list)

    @property
    def n_excluded(self):
        return len(self.excluded)

    @property
    def valid_positions(self):
        if not self.excluded:
            return self.positions
        mask = np.ones(self.n_traj, dtype=bool)
        mask[self.excluded] = False
        return self.positions[mask]


@dataclass
class KMCoefficients:
    """Binned Kramers-Moyal estimates with standard errors and counts."""

    centers: np.ndarray
    a1: np.ndarray
    a1_se: np.ndarray
    a2: np.ndarray
    a2_se: np.ndarray
    a3: np.ndarray
    a3_se: np.ndarray
    counts: np.ndarray
    lag: int
    dt_eff: float


@dataclass(frozen=True)
class PerturbationSpec:
    """Fast perturbation of a closed system with mean energy E.

    The forcing has correlation strength hbar*E; dt must sit inside the
    scale hierarchy (far above the forcing correlation time, far below
    the system time scale).
    """

    E: float
    hbar: float
    dt: float

    def __post_init__(self):
        if self.E <= 0:
            raise ValueError("system energy must be positive")
        if self.hbar < 0:
            raise ValueError("perturbation strength must be >= 0")
        if self.dt <= 0:
            raise ValueError("dt must be positive")


@dataclass
class ActionSeries:
    """One realization S(t) of the action process, S(0) = 0."""

    times: np.ndarray
    values: np.ndarray


# ---------------------------------------------------------------------------
# stepping
# ---------------------------------------------------------------------------

def trajectory_rng(seed, index):
    """Counter-based stream for one trajectory: Philox keyed by (seed, index)."""
    key = np.array([seed & 0xFFFFFFFFFFFFFFFF, index], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def langevin_step(drift, noise, x, dt, rng):
    """One Euler-Maruyama update x - beta(x)*dt + N(0, 2*D*dt)."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    x = np.asarray(x, dtype=float)
    scale = np.sqrt(2.0 * noise.D * dt)
    eta = rng.standard_normal(x.shape) * scale if scale > 0 else np.zeros_like(x)
    with np.errstate(over="ignore", invalid="ignore"):
        out = x - drift.beta(x) * dt + eta
    if not np.all(np.isfinite(out)):
        raise SimulationDivergedError("Langevin step produced a non-finite value")
    return out


def simulate_ensemble(drift, noise, x0, t_end, dt, n_traj,
                      store_stride=1, reflect=None, chunk_size=20000):
    """Simulate n_traj independent trajectories from x0.

    Parameters
    ----------
    store_stride : int
        Keep every store_stride-th time point (plus the final one); the
        dynamics always steps at dt.
    reflect : (lo, hi) or None
        Optional reflecting walls applied after every step.
    """
    if n_traj < 1:
        raise ValueError("n_traj must be >= 1")
    if dt <= 0 or t_end <= 0:
        raise ValueError("dt and t_end must be positive")
    n_steps = max(1, int(round(t_end / dt)))
    store_idx = list(range(0, n_steps + 1, store_stride))
    if store_idx[-1] != n_steps:
        store_idx.append(n_steps)
    store_idx = np.array(store_idx)
    keep = np.zeros(n_steps + 1, dtype=bool)
    keep[store_idx] = True
    positions = np.empty((n_traj, store_idx.size))
    scale = np.sqrt(2.0 * noise.D * dt)

    with np.errstate(over="ignore", invalid="ignore"):
        for lo in range(0, n_traj, chunk_size):
            hi = min(lo + chunk_size, n_traj)
            gens = [trajectory_rng(noise.seed, i) for i in range(lo, hi)]
            x = np.full(hi - lo, float(x0))
            col = 0
            if keep[0]:
                positions[lo:hi, col] = x
                col += 1
            k = 0
            while k < n_steps:
                block = min(_TIME_BLOCK, n_steps - k)
                if scale > 0:
                    eta = np.stack([g.standard_normal(block) for g in gens]) * scale
                else:
                    eta = np.zeros((hi - lo, block))
                for b in range(block):
                    x = x - drift.beta(x) * dt + eta[:, b]
                    if reflect is not None:
                        x = _fold(x, reflect[0], reflect[1])
                    k += 1
                    if keep[k]:
                        positions[lo:hi, col] = x
                        col += 1

    excluded = [int(i) for i in np.nonzero(~np.isfinite(positions[:, -1]))[0]]
    times = store_idx * dt
    return EnsembleSample(times=times, positions=positions,
                          dt=float(dt * store_stride), sim_dt=float(dt),
                          seed=noise.seed, n_traj=n_traj, excluded=excluded)


def _fold(x, lo, hi):
    # reflect into [lo, hi]; loop handles multi-wall bounces of large steps
    for _ in range(64):
        below, above = x < lo, x > hi
        if not (np.any(below) or np.any(above)):
            break
        x = np.where(below, 2.0 * lo - x, x)
        x = np.where(above, 2.0 * hi - x, x)
    return x


# ---------------------------------------------------------------------------
# Kramers-Moyal estimation
# ---------------------------------------------------------------------------

def estimate_km_coefficients(ensemble, lag=1, bins=12, min_count=100):
    """Binned conditional-moment estimates from ensemble transitions.

    Per bin at x': a1 = <dx>/dt, a2 = <dx^2>/(2 dt), a3 = <dx^3>/dt with
    dt = lag * (stored spacing).  Bins are equal width across the central
    95% of the pooled sample range; bins under min_count are omitted.
    """
    if ensemble.times.size < 2:
        raise ValueError("ensemble needs at least two time points")
    if lag < 1 or lag >= ensemble.times.size:
        raise ValueError("lag must be in [1, n_times)")
    pos = ensemble.valid_positions
    x = pos[:, :-lag].ravel()
    dx = (pos[:, lag:] - pos[:, :-lag]).ravel()
    dt_eff = lag * ensemble.dt

    lo, hi = np.percentile(x, [2.5, 97.5])
    if hi <= lo:
        raise ValueError("degenerate sample range")
    edges = np.linspace(lo, hi, bins + 1)
    idx = np.digitize(x, edges) - 1
    ok = (idx >= 0) & (idx < bins)
    idx, dx = idx[ok], dx[ok]

    counts = np.bincount(idx, minlength=bins).astype(float)
    mom = {k: np.bincount(idx, weights=dx**k, minlength=bins) for k in (1, 2, 3, 4, 6)}
    with np.errstate(invalid="ignore", divide="ignore"):
        m = {k: mom[k] / counts for k in mom}
        var1 = np.maximum(m[2] - m[1] ** 2, 0.0)
        var2 = np.maximum(m[4] - m[2] ** 2, 0.0)
        var3 = np.maximum(m[6] - m[3] ** 2, 0.0)
        a1 = m[1] / dt_eff
        a2 = m[2] / (2.0 * dt_eff)
        a3 = m[3] / dt_eff
        a1_se = np.sqrt(var1 / counts) / dt_eff
        a2_se = np.sqrt(var2 / counts) / (2.0 * dt_eff)
        a3_se = np.sqrt(var3 / counts) / dt_eff

    keep = counts >= min_count
    centers = 0.5 * (edges[:-1] + edges[1:])
    return KMCoefficients(
        centers=centers[keep], a1=a1[keep], a1_se=a1_se[keep],
        a2=a2[keep], a2_se=a2_se[keep], a3=a3[keep], a3_se=a3_se[keep],
        counts=counts[keep].astype(int), lag=lag, dt_eff=float(dt_eff))


# ---------------------------------------------------------------------------
# the action as a random variable
# ---------------------------------------------------------------------------

def action_process(p, t_end, rng):
    """One realization of dS = -E dt + eta, Var[eta] = 2*hbar*E*dt, S(0)=0."""
    if t_end <= 0:
        raise ValueError("t_end must be positive")
    n = max(1, int(round(t_end / p.dt)))
    drift = -p.E * p.dt
    if p.hbar > 0:
        eta = rng.standard_normal(n) * np.sqrt(2.0 * p.hbar * p.E * p.dt)
    else:
        eta = np.zeros(n)
    values = np.concatenate([[0.0], np.cumsum(drift + eta)])
    if not np.all(np.isfinite(values)):
        raise SimulationDivergedError("action process produced non-finite values")
    return ActionSeries(times=p.dt * np.arange(n + 1), values=values)


def action_ensemble(p, t_end, n_traj, seed, store_stride=1, reflect=None):
    """Ensemble of action-process realizations via the Langevin machinery."""
    return simulate_ensemble(constant_drift(p.E), NoiseSpec(p.hbar * p.E, seed),
                             0.0, t_end, p.dt, n_traj,
                             store_stride=store_stride, reflect=reflect)
