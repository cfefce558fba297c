"""Hamiltonian integration, on-shell action tables, and Hamilton-Jacobi checks.

Systems are specified by a mass vector and a potential V(q, t) with an
available gradient.  Trajectories are integrated with the symplectic
leapfrog (kick-drift-kick) scheme, the on-shell action between fixed
endpoints is found by shooting on the initial momentum, and the resulting
action tables are differenced to verify dS = p dq - H dt and the
Hamilton-Jacobi equation dS/dt = -H(q, dS/dq, t).

Conventions
-----------
Coordinates are numpy arrays whose *last* axis is the coordinate index,
so potentials and gradients written elementwise (all presets are) work
both on single states of shape ``(dim,)`` and on batches ``(B, dim)``.
"""

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import (
    DegenerateTrajectoryError,
    InsufficientGridError,
    IntegrationDivergedError,
    NoClassicalPathError,
)

_trapz = getattr(np, "trapezoid", np.trapz)


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SystemModel:
    """A mechanical system H = sum_i p_i^2 / (2 m_i) + V(q, t).

    Parameters
    ----------
    dim : int
        Number of general coordinates.
    mass : ndarray, shape (dim,)
        Positive masses per coordinate.
    potential : callable
        V(q, t) -> scalar (elementwise over leading axes of q).
    grad : callable
        dV/dq(q, t) -> array of q's shape.
    time_dependent : bool
        False for closed systems (conserved Hamiltonian).
    """

    dim: int
    mass: np.ndarray
    potential: Callable
    grad: Callable
    time_dependent: bool = False
    name: str = "custom"

    def __post_init__(self):
        mass = np.atleast_1d(np.asarray(self.mass, dtype=float))
        if mass.shape != (self.dim,):
            raise ValueError(f"mass must have shape ({self.dim},)")
        if not np.all(mass > 0):
            raise ValueError("masses must be positive")
        object.__setattr__(self, "mass", mass)


@dataclass(frozen=True)
class PhaseState:
    """A point (q, p, t) in extended phase space."""

    q: np.ndarray
    p: np.ndarray
    t: float

    def __post_init__(self):
        q = np.atleast_1d(np.asarray(self.q, dtype=float))
        p = np.atleast_1d(np.asarray(self.p, dtype=float))
        if q.shape != p.shape:
            raise ValueError("q and p must have equal shapes")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(p))):
            raise ValueError("phase-space state must be finite")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "p", p)


@dataclass
class Trajectory:
    """Time-ordered phase-space samples on a uniform grid."""

    qs: np.ndarray  # (n, dim)
    ps: np.ndarray  # (n, dim)
    ts: np.ndarray  # (n,)
    dt: float

    def __len__(self):
        return self.ts.shape[0]

    @property
    def states(self):
        return [PhaseState(self.qs[i], self.ps[i], float(self.ts[i]))
                for i in range(len(self))]

    @property
    def final(self):
        return PhaseState(self.qs[-1], self.ps[-1], float(self.ts[-1]))


@dataclass
class ActionTable:
    """On-shell action S(q0, t0; q1, t1) sampled on a rectangular grid.

    ``S[i, j]`` is the action reaching ``(q1[i], t1[j])``; ``p1`` and ``H``
    hold the endpoint momentum and endpoint energy of the shooting
    solution at each node.
    """

    q0: float
    t0: float
    q1: np.ndarray
    t1: np.ndarray
    S: np.ndarray
    p1: np.ndarray
    H: np.ndarray

    def __post_init__(self):
        if np.any(np.diff(self.q1) <= 0) or np.any(np.diff(self.t1) <= 0):
            raise ValueError("grid axes must be strictly increasing")
        if not np.all(np.isfinite(self.S)):
            raise ValueError("action values must be finite")


@dataclass
class GradientResiduals:
    """Max deviations of the action-table gradients from (p1, -H)."""

    max_dq: float
    max_dt: float
    dq_field: np.ndarray
    dt_field: np.ndarray
    q_interior: np.ndarray
    t_interior: np.ndarray


@dataclass
class HJResidualReport:
    """Per-node Hamilton-Jacobi residual r = dS/dt + H(q, dS/dq, t)."""

    q_interior: np.ndarray
    t_interior: np.ndarray
    S: np.ndarray
    dSdq: np.ndarray
    dSdt: np.ndarray
    residual: np.ndarray
    max_abs: float
    energy_residual_max: float | None = None  # max |dS/dt + E|, closed systems


@dataclass
class EnergySeries:
    """Hamiltonian along a trajectory and its worst-case drift."""

    times: np.ndarray
    values: np.ndarray
    max_drift: float


# ---------------------------------------------------------------------------
# model presets
# ---------------------------------------------------------------------------

def free_particle(m=1.0):
    def V(q, t=0.0):
        return np.sum(0.0 * q, axis=-1)

    def dV(q, t=0.0):
        return np.zeros_like(q)

    return SystemModel(1, np.array([m]), V, dV, name="free")


def harmonic_oscillator(m=1.0, omega=1.0):
    def V(q, t=0.0):
        return 0.5 * m * omega**2 * np.sum(q * q, axis=-1)

    def dV(q, t=0.0):
        return m * omega**2 * q

    return SystemModel(1, np.array([m]), V, dV, name="harmonic")


def quartic_oscillator(m=1.0, lam=1.0):
    def V(q, t=0.0):
        return 0.25 * lam * np.sum(q**4, axis=-1)

    def dV(q, t=0.0):
        return lam * q**3

    return SystemModel(1, np.array([m]), V, dV, name="quartic")


def hamiltonian(model, q, p, t=0.0):
    """H(q, p, t) for a single state or a batch (last axis = coordinate)."""
    kinetic = np.sum(p * p / (2.0 * model.mass), axis=-1)
    return kinetic + model.potential(q, t)


# ---------------------------------------------------------------------------
# integration and action functional
# ---------------------------------------------------------------------------

def leapfrog_step(model, q, p, t, dt):
    """One kick-drift-kick update; symplectic, second order."""
    p_half = p - 0.5 * dt * model.grad(q, t)
    q_new = q + dt * p_half / model.mass
    p_new = p_half - 0.5 * dt * model.grad(q_new, t + dt)
    return q_new, p_new


def integrate_hamilton(model, init, t_end, dt):
    """Integrate Hamilton's equations from ``init`` to approximately t_end.

    The step count is round((t_end - init.t) / dt), so the final time lies
    within dt of t_end.  Raises IntegrationDivergedError (carrying the last
    valid state) if the trajectory leaves the finite domain.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if t_end <= init.t:
        raise ValueError("t_end must exceed the initial time")
    n_steps = max(1, int(round((t_end - init.t) / dt)))

    qs = np.empty((n_steps + 1, model.dim))
    ps = np.empty((n_steps + 1, model.dim))
    ts = init.t + dt * np.arange(n_steps + 1)
    qs[0], ps[0] = init.q, init.p

    q, p = init.q.astype(float), init.p.astype(float)
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(n_steps):
            q, p = leapfrog_step(model, q, p, float(ts[k]), dt)
            if not (np.all(np.isfinite(q)) and np.all(np.isfinite(p))):
                last = PhaseState(qs[k], ps[k], float(ts[k]))
                raise IntegrationDivergedError(
                    f"non-finite state at step {k + 1}", last_state=last)
            qs[k + 1], ps[k + 1] = q, p
    return Trajectory(qs, ps, ts, dt)


def action_of(model, traj):
    """Action integral of L = T - V along a trajectory.

    Velocities come from central differences (one-sided at the ends) and
    the time integral uses the trapezoidal rule; deterministic for
    identical input.
    """
    n = len(traj)
    if n < 2:
        raise DegenerateTrajectoryError("need at least 2 states for an action")
    qdot = np.empty_like(traj.qs)
    qdot[0] = (traj.qs[1] - traj.qs[0]) / traj.dt
    qdot[-1] = (traj.qs[-1] - traj.qs[-2]) / traj.dt
    if n > 2:
        qdot[1:-1] = (traj.qs[2:] - traj.qs[:-2]) / (2.0 * traj.dt)
    kinetic = np.sum(0.5 * model.mass * qdot * qdot, axis=-1)
    if model.time_dependent:
        pot = np.array([model.potential(traj.qs[i], float(traj.ts[i])) for i in range(n)])
    else:
        pot = model.potential(traj.qs, 0.0)
    return float(_trapz(kinetic - pot, traj.ts))


def energy_series(model, traj):
    """Hamiltonian at each stored state plus the max drift from H(t0)."""
    if model.time_dependent:
        values = np.array([hamiltonian(model, traj.qs[i], traj.ps[i], float(traj.ts[i]))
                           for i in range(len(traj))])
    else:
        values = hamiltonian(model, traj.qs, traj.ps)
    drift = float(np.max(np.abs(values - values[0])))
    return EnergySeries(traj.ts.copy(), values, drift)


# ---------------------------------------------------------------------------
# on-shell action by shooting (dim = 1)
# ---------------------------------------------------------------------------

def _batch_endpoint(model, q0, p0, t0, dt, n_steps):
    """Leapfrog a batch of dim-1 initial momenta; returns (q_end, p_end)."""
    m = model.mass[0]
    q = np.full_like(p0, q0)
    p = p0.copy()
    t = t0
    for _ in range(n_steps):
        ph = p - 0.5 * dt * model.grad(q, t)
        q = q + dt * ph / m
        p = ph - 0.5 * dt * model.grad(q, t + dt)
        t += dt
    return q, p


def _batch_trajectory(model, q0, p0, t0, dt, n_steps):
    """Like _batch_endpoint but storing the full (n_steps+1, B) position set."""
    m = model.mass[0]
    B = p0.shape[0]
    qs = np.empty((n_steps + 1, B))
    ps = np.empty((n_steps + 1, B))
    qs[0] = q0
    ps[0] = p0
    q = np.full_like(p0, q0)
    p = p0.copy()
    t = t0
    for k in range(n_steps):
        ph = p - 0.5 * dt * model.grad(q, t)
        q = q + dt * ph / m
        p = ph - 0.5 * dt * model.grad(q, t + dt)
        t += dt
        qs[k + 1] = q
        ps[k + 1] = p
    return qs, ps


def _shoot_batch(model, q0, t0, q1, t1, dt, tol, max_expand=16, max_iter=120):
    """Solve the two-point boundary problem for a batch of targets q1.

    Shooting on the initial momentum: geometric bracket expansion around
    the free-particle guess, then Illinois-damped regula falsi on the
    endpoint mismatch.  Returns (S, p1, H1) arrays.
    """
    if model.dim != 1:
        raise NotImplementedError("shooting solver supports dim=1 systems")
    q1 = np.asarray(q1, dtype=float)
    span = t1 - t0
    n_steps = max(1, int(round(span / dt)))
    h = span / n_steps
    m = model.mass[0]

    def mismatch(p0):
        qe, _ = _batch_endpoint(model, q0, p0, t0, h, n_steps)
        return qe - q1

    guess = m * (q1 - q0) / span
    width = 1.0 + np.abs(guess)
    lo, hi = guess - width, guess + width
    flo, fhi = mismatch(lo), mismatch(hi)
    for _ in range(max_expand):
        open_ = flo * fhi > 0
        if not np.any(open_):
            break
        width = np.where(open_, width * 2.0, width)
        lo = np.where(open_, guess - width, lo)
        hi = np.where(open_, guess + width, hi)
        flo_n, fhi_n = mismatch(lo), mismatch(hi)
        flo = np.where(open_, flo_n, flo)
        fhi = np.where(open_, fhi_n, fhi)
    if np.any(flo * fhi > 0):
        raise NoClassicalPathError(
            f"no momentum bracket for endpoints at t1={t1:g} "
            "(conjugate point or unreachable target)")

    a, b, fa, fb = lo, hi, flo, fhi
    x = 0.5 * (a + b)
    side = np.zeros_like(x)  # +1: last update hit b, -1: hit a
    done = np.zeros(x.shape, dtype=bool)
    for _ in range(max_iter):
        denom = fb - fa
        secant = np.where(denom != 0, b - fb * (b - a) / np.where(denom == 0, 1.0, denom),
                          0.5 * (a + b))
        inside = (secant > np.minimum(a, b)) & (secant < np.maximum(a, b))
        x_new = np.where(inside, secant, 0.5 * (a + b))
        x = np.where(done, x, x_new)
        fx = mismatch(x)
        done = done | (np.abs(fx) <= tol)
        if np.all(done):
            break
        same_a = fx * fa > 0
        upd = ~done
        # Illinois damping against endpoint stagnation
        fb = np.where(upd & same_a & (side == -1), 0.5 * fb, fb)
        fa = np.where(upd & ~same_a & (side == +1), 0.5 * fa, fa)
        a = np.where(upd & same_a, x, a)
        fa = np.where(upd & same_a, fx, fa)
        b = np.where(upd & ~same_a, x, b)
        fb = np.where(upd & ~same_a, fx, fb)
        side = np.where(upd, np.where(same_a, -1.0, 1.0), side)
    if not np.all(done):
        raise NoClassicalPathError(
            f"shooting did not converge below tol={tol:g} within budget")

    qs, ps = _batch_trajectory(model, q0, x, t0, h, n_steps)
    ts = t0 + h * np.arange(n_steps + 1)
    # same quadrature as action_of: central-difference velocities + trapezoid
    qdot = np.empty_like(qs)
    qdot[0] = (qs[1] - qs[0]) / h
    qdot[-1] = (qs[-1] - qs[-2]) / h
    if n_steps > 1:
        qdot[1:-1] = (qs[2:] - qs[:-2]) / (2.0 * h)
    if model.time_dependent:
        pot = np.array([model.potential(qs[k, :, None], float(ts[k]))
                        for k in range(n_steps + 1)])
    else:
        pot = model.potential(qs[:, :, None], 0.0)
    lagr = 0.5 * m * qdot * qdot - pot
    S = _trapz(lagr, ts, axis=0)
    p1 = ps[-1]
    H1 = ps[-1] ** 2 / (2.0 * m) + model.potential(qs[-1, :, None], float(ts[-1]))
    return S, p1, H1


def onshell_action(model, q0, t0, q1, t1, dt=1e-3, tol=1e-10):
    """Action along the classical path from (q0, t0) to (q1, t1).

    Raises NoClassicalPathError when shooting cannot bracket a solution
    within budget (e.g. the harmonic oscillator at conjugate points).
    """
    if t1 <= t0:
        raise ValueError("t1 must exceed t0")
    q0 = float(np.atleast_1d(q0)[0])
    q1v = np.atleast_1d(np.asarray(q1, dtype=float))
    S, _, _ = _shoot_batch(model, q0, t0, q1v, t1, dt, tol)
    return float(S[0])


def build_action_table(model, q0, t0, q1_values, t1_values, dt=1e-3, tol=1e-10):
    """Tabulate S, p1 and H over a rectangular (q1, t1) grid by shooting.

    Grid nodes are independent; each t1 column is solved as one batch.
    """
    q1_values = np.asarray(q1_values, dtype=float)
    t1_values = np.asarray(t1_values, dtype=float)
    nq, nt = q1_values.size, t1_values.size
    S = np.empty((nq, nt))
    P = np.empty((nq, nt))
    H = np.empty((nq, nt))
    for j, t1 in enumerate(t1_values):
        S[:, j], P[:, j], H[:, j] = _shoot_batch(
            model, float(q0), float(t0), q1_values, float(t1), dt, tol)
    return ActionTable(float(q0), float(t0), q1_values, t1_values, S, P, H)


# ---------------------------------------------------------------------------
# table differencing
# ---------------------------------------------------------------------------

def _central_diffs(table):
    if table.q1.size < 3 or table.t1.size < 3:
        raise InsufficientGridError("need >= 3 nodes per axis for central differences")
    hq = table.q1[1] - table.q1[0]
    ht = table.t1[1] - table.t1[0]
    dSdq = (table.S[2:, 1:-1] - table.S[:-2, 1:-1]) / (2.0 * hq)
    dSdt = (table.S[1:-1, 2:] - table.S[1:-1, :-2]) / (2.0 * ht)
    return dSdq, dSdt


def action_gradients_check(table, model):
    """Residuals of dS/dq1 - p1 and dS/dt1 + H over interior nodes."""
    dSdq, dSdt = _central_diffs(table)
    p_in = table.p1[1:-1, 1:-1]
    H_in = table.H[1:-1, 1:-1]
    dq_field = dSdq - p_in
    dt_field = dSdt + H_in
    return GradientResiduals(
        max_dq=float(np.max(np.abs(dq_field))),
        max_dt=float(np.max(np.abs(dt_field))),
        dq_field=dq_field,
        dt_field=dt_field,
        q_interior=table.q1[1:-1],
        t_interior=table.t1[1:-1],
    )


def hamilton_jacobi_residual(table, model):
    """Per-node r = dS/dt + H(q, dS/dq, t) from central differences.

    For closed systems the report also carries max |dS/dt + E| with E the
    conserved energy of each node's shooting solution.
    """
    dSdq, dSdt = _central_diffs(table)
    q_in = table.q1[1:-1]
    t_in = table.t1[1:-1]
    m = model.mass[0]
    if model.time_dependent:
        pot = np.array([[model.potential(np.array([qi]), float(tj)) for tj in t_in]
                        for qi in q_in])
    else:
        pot = model.potential(q_in[:, None, None], 0.0) * np.ones((1, t_in.size))
    residual = dSdt + dSdq**2 / (2.0 * m) + pot
    energy_max = None
    if not model.time_dependent:
        energy_max = float(np.max(np.abs(dSdt + table.H[1:-1, 1:-1])))
    return HJResidualReport(
        q_interior=q_in,
        t_interior=t_in,
        S=table.S[1:-1, 1:-1],
        dSdq=dSdq,
        dSdt=dSdt,
        residual=residual,
        max_abs=float(np.max(np.abs(residual))),
        energy_residual_max=energy_max,
    )
