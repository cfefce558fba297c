import numpy as np
import pytest

from stochpath import fokker_planck as fp
from stochpath import langevin as lv
from stochpath.errors import (
    DomainMismatchError,
    NoDiffusiveStationaryError,
    StabilityError,
    StochPathError,
)

import oracles


def zero(x):
    return np.zeros_like(x)


def const(v):
    return lambda x: np.full_like(x, v)


def linear(gamma):
    return lambda x: gamma * x


# ---------------------------------------------------------------------------
# grid, operator construction
# ---------------------------------------------------------------------------

def test_grid_validation():
    with pytest.raises(ValueError):
        fp.Grid1D(0.0, 0.0, 16)
    with pytest.raises(ValueError):
        fp.Grid1D(0.0, 1.0, 4)
    with pytest.raises(ValueError):
        fp.Grid1D(0.0, 1.0, 16, bc="bogus")


def test_operator_conserves_columns():
    op = fp.FPOperator(fp.Grid1D(-3, 5, 64), linear(0.8), 0.4)
    assert op.conservation_defect < 1e-14


def test_density_normalization():
    g = fp.Grid1D(-1, 1, 16)
    rho = fp.DensityField(g, np.ones(16)).normalized()
    assert rho.mass() == pytest.approx(1.0, abs=1e-12)


# ---------------------------------------------------------------------------
# evolve
# ---------------------------------------------------------------------------

def test_heat_kernel_variance():
    g = fp.Grid1D(-8, 8, 256)
    op = fp.FPOperator(g, zero, 0.5)
    rho = fp.evolve(op, fp.delta_density(g, 0.0), 0.005, 400)
    assert rho.variance() == pytest.approx(2 * 0.5 * 2.0, rel=1e-3)
    assert abs(rho.mass() - 1.0) < 1e-10


def test_null_generator_identity():
    g = fp.Grid1D(-2, 2, 32)
    op = fp.FPOperator(g, zero, 0.0)
    rho0 = fp.delta_density(g, 0.3)
    rho = fp.evolve(op, fp.DensityField(g, rho0.values.copy()), 0.01, 100)
    assert np.array_equal(rho.values, rho0.values)


def test_ou_relaxes_to_gaussian():
    g = fp.Grid1D(-6, 6, 256)
    op = fp.FPOperator(g, linear(1.0), 0.5)
    rho = fp.evolve(op, fp.delta_density(g, 2.0), 0.01, 1500)
    assert rho.variance() == pytest.approx(0.5, rel=1e-3)
    assert abs(rho.mean()) < 1e-4


def test_mass_conservation_long_run():
    g = fp.Grid1D(-8, 8, 128)
    op = fp.FPOperator(g, linear(0.5), 0.3)
    rho = fp.evolve(op, fp.delta_density(g, 0.5), 0.01, 10_000)
    assert abs(rho.mass() - 1.0) < 1e-10
    assert rho.min_before_clamp >= -1e-14


def test_evolve_composition_autonomy():
    g = fp.Grid1D(-4, 4, 64)
    op = fp.FPOperator(g, linear(1.0), 0.5)
    rho0 = fp.delta_density(g, 1.0)
    once = fp.evolve(op, rho0, 0.01, 200)
    twice = fp.evolve(op, fp.evolve(op, rho0, 0.01, 120), 0.01, 80)
    assert np.max(np.abs(once.values - twice.values)) < 1e-12


def test_stability_rejection_suggests_dt():
    g = fp.Grid1D(-4, 4, 128)
    op = fp.FPOperator(g, zero, 0.5)
    with pytest.raises(StabilityError) as err:
        fp.evolve(op, fp.delta_density(g, 0.0), 1e3, 1)
    assert err.value.suggested_dt == pytest.approx(op.accuracy_dt())


def test_absorbing_boundary_loses_mass():
    g = fp.Grid1D(-2, 2, 64, bc=fp.ABSORBING)
    op = fp.FPOperator(g, zero, 0.5)
    rho = fp.evolve(op, fp.delta_density(g, 0.0), 0.01, 500)
    assert rho.mass() < 0.9


# ---------------------------------------------------------------------------
# stationary density
# ---------------------------------------------------------------------------

def test_stationary_exponential_profile_exact():
    # constant drift E with D = hbar E: cell values match the cell-averaged
    # normalized exponential to round-off (exponential fitting is exact)
    hbar, E = 0.1, 1.0
    g = fp.Grid1D(0.0, 20 * hbar, 512)
    op = fp.FPOperator(g, const(E), hbar * E)
    st = fp.stationary_density(op)
    faces = g.faces
    masses = np.exp(-faces[:-1] / hbar) - np.exp(-faces[1:] / hbar)
    target = masses / masses.sum() / g.h
    assert np.sum(np.abs(st.values - target)) * g.h < 1e-10
    assert st.solver_agreement < 1e-8


def test_stationary_uniform_for_zero_drift():
    g = fp.Grid1D(-1, 3, 64)
    st = fp.stationary_density(fp.FPOperator(g, zero, 0.7))
    assert np.max(np.abs(st.values - 0.25)) < 1e-12


def test_stationary_ou_gaussian():
    g = fp.Grid1D(-6, 6, 256)
    st = fp.stationary_density(fp.FPOperator(g, linear(1.0), 0.5))
    assert st.variance() == pytest.approx(0.5, rel=1e-4)


def test_stationary_requires_diffusion():
    g = fp.Grid1D(-1, 1, 16)
    with pytest.raises(NoDiffusiveStationaryError):
        fp.stationary_density(fp.FPOperator(g, linear(1.0), 0.0))


def test_stationary_flux_vanishes():
    g = fp.Grid1D(-6, 6, 128)
    op = fp.FPOperator(g, linear(1.0), 0.5)
    st = fp.stationary_density(op)
    assert np.max(np.abs(op.face_flux(st.values))) < 1e-8


def test_stationary_spatial_convergence_order2():
    # vs cell-averaged Gaussian: halving the cell width cuts L1 by ~4
    def l1(n):
        g = fp.Grid1D(-6, 6, n)
        st = fp.stationary_density(fp.FPOperator(g, linear(1.0), 0.5))
        target = oracles.cell_average(g, lambda x: oracles.gaussian_density(x, 0, 0.5))
        return np.sum(np.abs(st.values - target)) * g.h

    ratio = l1(64) / l1(128)
    assert 3.0 <= ratio <= 5.0


# ---------------------------------------------------------------------------
# Green function
# ---------------------------------------------------------------------------

def test_greens_function_initial_spike():
    g = fp.Grid1D(-2, 2, 32)
    op = fp.FPOperator(g, zero, 0.5)
    rho = fp.greens_function(op, 0.3, 0.0, 0.01)
    assert rho.mass() == pytest.approx(1.0, abs=1e-12)
    assert np.count_nonzero(rho.values) == 1


def test_greens_function_variance_growth():
    g = fp.Grid1D(-8, 8, 256)
    op = fp.FPOperator(g, zero, 0.25)
    rho = fp.greens_function(op, 0.0, 3.0, 0.005)
    assert rho.variance() == pytest.approx(2 * 0.25 * 3.0, rel=2e-3)


def test_greens_function_mean_follows_drift():
    # d<x>/dt = -<beta>: for the OU drift the mean decays exponentially
    # from the discrete initial mean (the center of the delta's cell)
    g = fp.Grid1D(-8, 8, 512)
    op = fp.FPOperator(g, linear(1.0), 0.3)
    x_init = fp.delta_density(g, 2.0).mean()
    rho = fp.greens_function(op, 2.0, 1.0, 0.002)
    assert rho.mean() == pytest.approx(x_init * np.exp(-1.0), rel=5e-3)


def test_greens_function_outside_grid():
    g = fp.Grid1D(-1, 1, 16)
    with pytest.raises(DomainMismatchError):
        fp.delta_density(g, 5.0)


# ---------------------------------------------------------------------------
# Chapman-Kolmogorov
# ---------------------------------------------------------------------------

def test_ck_residual_small_grid():
    op = fp.FPOperator(fp.Grid1D(-2, 2, 8), linear(0.5), 0.3)
    r = fp.chapman_kolmogorov_residual(op, 0.3, 0.5, 1.0, 0.01)
    assert r < 1e-8


def test_ck_matches_matrix_composition_oracle():
    op = fp.FPOperator(fp.Grid1D(-2, 2, 8), linear(0.5), 0.3)
    dt, n1, n2 = 0.01, 50, 50
    M = oracles.dense_step_matrix(op, dt)
    rho0 = fp.delta_density(op.grid, 0.3).values
    direct = np.linalg.matrix_power(M, n1 + n2) @ rho0
    composed = np.linalg.matrix_power(M, n2) @ (np.linalg.matrix_power(M, n1) @ rho0)
    assert np.max(np.abs(direct - composed)) < 1e-10
    both = fp.evolve(op, fp.delta_density(op.grid, 0.3), dt, n1 + n2)
    assert np.max(np.abs(both.values - direct)) < 1e-8


def test_ck_residual_invariant_under_midpoint_swap():
    op = fp.FPOperator(fp.Grid1D(-2, 2, 8), linear(0.5), 0.3)
    r1 = fp.chapman_kolmogorov_residual(op, 0.3, 1.0 / 3, 1.0, 1.0 / 300)
    r2 = fp.chapman_kolmogorov_residual(op, 0.3, 2.0 / 3, 1.0, 1.0 / 300)
    assert abs(r1 - r2) < 1e-8


def test_ck_validates_midpoint():
    op = fp.FPOperator(fp.Grid1D(-2, 2, 8), zero, 0.3)
    with pytest.raises(ValueError):
        fp.chapman_kolmogorov_residual(op, 0.0, 1.5, 1.0, 0.01)


# ---------------------------------------------------------------------------
# Langevin crosscheck
# ---------------------------------------------------------------------------

def test_crosscheck_ou():
    ens = lv.simulate_ensemble(lv.linear_drift(1.0), lv.NoiseSpec(0.5, 21),
                               0.0, 2.0, 1e-3, 20_000, store_stride=100)
    g = fp.Grid1D(-6.0, 6.0, 480)
    op = fp.FPOperator(g, linear(1.0), 0.5)
    rep = fp.langevin_crosscheck(op, ens, 2.0, dt=2e-3, compare_cells=40)
    assert rep.outside_fraction < 1e-3
    assert rep.distance < 5 * rep.mc_floor + rep.binning_floor


def test_crosscheck_deterministic_limit():
    # D=0: every walker lands at the transported point; compare on cells
    # wide enough to swallow the scheme's numerical smearing of the delta
    ens = lv.simulate_ensemble(lv.constant_drift(1.0), lv.NoiseSpec(0.0, 3),
                               0.0, 1.0, 1e-3, 100)
    g = fp.Grid1D(-2.05, 0.95, 3000)
    op = fp.FPOperator(g, const(1.0), 0.0)
    rep = fp.langevin_crosscheck(op, ens, 1.0, dt=1e-3, compare_cells=10)
    assert rep.distance < 0.02


def test_crosscheck_mc_scaling():
    def dist(n, seed):
        ens = lv.simulate_ensemble(lv.linear_drift(1.0), lv.NoiseSpec(0.5, seed),
                                   0.0, 1.0, 1e-3, n, store_stride=50)
        g = fp.Grid1D(-6.0, 6.0, 480)
        op = fp.FPOperator(g, linear(1.0), 0.5)
        return fp.langevin_crosscheck(op, ens, 1.0, dt=2e-3,
                                      compare_cells=40).distance

    ratio = dist(5000, 8) / dist(20_000, 8)
    assert 1.3 <= ratio <= 3.2  # expected 2 for a 4x sample-size increase


def test_crosscheck_domain_mismatch():
    ens = lv.simulate_ensemble(lv.zero_drift(), lv.NoiseSpec(1.0, 4),
                               0.0, 2.0, 1e-2, 500)
    g = fp.Grid1D(-0.5, 0.5, 16)
    op = fp.FPOperator(g, zero, 1.0)
    with pytest.raises(DomainMismatchError):
        fp.langevin_crosscheck(op, ens, 2.0)


# ---------------------------------------------------------------------------
# misc
# ---------------------------------------------------------------------------

def test_relaxation_time_ou():
    # slowest OU mode decays at rate gamma: tau ~ 1/gamma
    g = fp.Grid1D(-6, 6, 128)
    op = fp.FPOperator(g, linear(1.0), 0.5)
    tau, _, _ = fp.relaxation_time(op, fp.delta_density(g, 1.5), 0.01,
                                   max_steps=2000)
    assert 0.3 < tau < 1.5


def test_stationary_dual_path_gate():
    # the two stationary routes agree (raises otherwise)
    g = fp.Grid1D(-4, 4, 96)
    st = fp.stationary_density(fp.FPOperator(g, lambda x: x**3 - x, 0.4))
    assert isinstance(st, fp.DensityField)
    assert st.solver_agreement < 1e-8
