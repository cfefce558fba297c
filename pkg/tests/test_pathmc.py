import numpy as np
import pytest

from stochpath import pathmc as pm
from stochpath.errors import NoPlateauError

import oracles

HARMONIC = pm.DiscreteActionSpec(m=1.0, kind="harmonic", omega=1.0,
                                 hbar=1.0, a=0.25)


@pytest.fixture(scope="module")
def harmonic_run():
    cfg = pm.MetropolisConfig(width=0.8, sweeps=24000, therm=2000,
                              seed=12, bin_meas=100)
    return pm.metropolis_sample(HARMONIC, cfg, n_slices=64)


# ---------------------------------------------------------------------------
# discrete action
# ---------------------------------------------------------------------------

def test_action_zero_path():
    path = pm.LatticePath(np.zeros(16), 0.25)
    assert pm.discrete_action(HARMONIC, path) == 0.0


def test_action_constant_path():
    c, n = 0.8, 16
    path = pm.LatticePath(np.full(n, c), 0.25)
    expected = n * 0.25 * 0.5 * c * c  # kinetic term vanishes
    assert pm.discrete_action(HARMONIC, path) == pytest.approx(expected, rel=1e-14)


def test_action_matches_loop_resummation():
    rng = np.random.default_rng(3)
    values = rng.normal(size=32)
    path = pm.LatticePath(values, 0.25)
    expected = oracles.loop_discrete_action(
        1.0, 0.25, None, lambda q: 0.5 * q * q, values)
    assert pm.discrete_action(HARMONIC, path) == pytest.approx(expected, abs=1e-12)


def test_action_shift_invariance_of_sampler():
    # adding a constant to the action leaves the chain bitwise unchanged
    class Shifted(pm.DiscreteActionSpec):
        pass

    base = pm.DiscreteActionSpec(m=1.0, kind="harmonic", hbar=1.0, a=0.5)
    cfg = pm.MetropolisConfig(width=0.8, sweeps=300, therm=100, seed=9)
    a = pm.metropolis_sample(base, cfg, n_slices=16)

    shifted = pm.DiscreteActionSpec(m=1.0, kind="harmonic", hbar=1.0, a=0.5)
    object.__setattr__(shifted, "potential",
                       lambda q: 0.5 * q * q + 7.0)  # V + const
    b = pm.metropolis_sample(shifted, cfg, n_slices=16)
    assert np.array_equal(a.q2_series, b.q2_series)


def test_lattice_path_validation():
    with pytest.raises(ValueError):
        pm.LatticePath(np.zeros(3), 0.25)
    with pytest.raises(ValueError):
        pm.LatticePath(np.zeros(7), 0.25)
    with pytest.raises(ValueError):
        pm.DiscreteActionSpec(hbar=-1.0)


# ---------------------------------------------------------------------------
# Metropolis sampler
# ---------------------------------------------------------------------------

def test_q2_matches_lattice_oracle(harmonic_run):
    q2, err = harmonic_run.mean_q2()
    exact = oracles.lattice_q2(1.0, 1.0, 1.0, 0.25, 64)
    assert abs(q2 - exact) < 3 * err


def test_q2_matches_transfer_matrix(harmonic_run):
    q2, err = harmonic_run.mean_q2()
    tm = oracles.transfer_matrix_q2(lambda q: 0.5 * q * q, 1.0, 1.0, 0.25, 64)
    assert abs(q2 - tm) < 3 * err


def test_seed_determinism(harmonic_run):
    cfg = pm.MetropolisConfig(width=0.8, sweeps=24000, therm=2000,
                              seed=12, bin_meas=100)
    again = pm.metropolis_sample(HARMONIC, cfg, n_slices=64)
    assert np.array_equal(again.q2_series, harmonic_run.q2_series)
    assert np.array_equal(again.corr_bin_sums, harmonic_run.corr_bin_sums)
    assert again.acceptance_rate == harmonic_run.acceptance_rate


def test_acceptance_tuned_into_window(harmonic_run):
    assert 0.35 <= harmonic_run.acceptance_rate <= 0.65


def test_acceptance_warning_with_suggestion():
    cfg = pm.MetropolisConfig(width=50.0, sweeps=300, therm=100, seed=4,
                              tune=False)
    with pytest.warns(RuntimeWarning, match="acceptance rate"):
        pm.metropolis_sample(HARMONIC, cfg, n_slices=16)


def test_detailed_balance_replay():
    # replay recorded single-site decisions against globally recomputed dS
    cfg = pm.MetropolisConfig(width=0.8, sweeps=80, therm=60, seed=3,
                              record_transitions=96)
    ens = pm.metropolis_sample(HARMONIC, cfg, n_slices=16)
    n_checked = 0
    for rec in ens.transitions:
        for j, site in enumerate(rec["sites"]):
            old = rec["lattice"]
            new = old.copy()
            new[site] = rec["proposals"][j]
            dS = (pm.discrete_action(HARMONIC, new)
                  - pm.discrete_action(HARMONIC, old))
            assert dS == pytest.approx(rec["dS"][j], abs=1e-9)
            should_accept = rec["u"][j] < np.exp(-dS / HARMONIC.hbar)
            assert bool(should_accept) == bool(rec["accepted"][j])
            n_checked += 1
    assert n_checked >= 96


def test_store_paths_flag():
    cfg = pm.MetropolisConfig(width=0.8, sweeps=120, therm=100, seed=5,
                              store_paths=True)
    ens = pm.metropolis_sample(HARMONIC, cfg, n_slices=8)
    assert len(ens.paths) == 20
    assert all(isinstance(p, pm.LatticePath) for p in ens.paths)


def test_merge_chains_weighted_and_order_independent():
    cfg1 = pm.MetropolisConfig(width=0.8, sweeps=2200, therm=200, seed=1)
    cfg2 = pm.MetropolisConfig(width=0.8, sweeps=2200, therm=200, seed=2)
    a = pm.metropolis_sample(HARMONIC, cfg1, n_slices=16)
    b = pm.metropolis_sample(HARMONIC, cfg2, n_slices=16)
    ab = pm.merge_chains([a, b])
    ba = pm.merge_chains([b, a])
    assert ab.n_meas == a.n_meas + b.n_meas
    assert ab.mean_q2()[0] == pytest.approx(ba.mean_q2()[0], abs=1e-15)


# ---------------------------------------------------------------------------
# two-point correlator
# ---------------------------------------------------------------------------

def test_correlator_zero_lag_is_q2(harmonic_run):
    spec = harmonic_run.spec
    corr = pm.two_point(harmonic_run, spec)
    q2, _ = harmonic_run.mean_q2()
    # same measurements, bin-aligned means agree closely
    assert corr.value[0] == pytest.approx(q2, rel=1e-3)


def test_correlator_matches_free_theory_shape(harmonic_run):
    corr = pm.two_point(harmonic_run, harmonic_run.spec)
    exact = oracles.lattice_correlator(1.0, 1.0, 1.0, 0.25, 64)[:corr.value.size]
    z = np.abs(corr.value - exact) / corr.stderr
    assert np.max(z) < 4.5


def test_correlator_periodic_symmetry(harmonic_run):
    # circular estimator: C(tau) = C(N a - tau) holds exactly per bin
    sums = harmonic_run.corr_bin_sums
    folded = sums[:, 1:]  # lags 1..N-1
    assert np.allclose(folded, folded[:, ::-1], atol=1e-12)


def test_correlator_max_lag_truncates_with_warning(harmonic_run):
    with pytest.warns(RuntimeWarning, match="fold-back"):
        corr = pm.two_point(harmonic_run, harmonic_run.spec, max_lag=60)
    assert corr.value.size == 33


# ---------------------------------------------------------------------------
# energy gap
# ---------------------------------------------------------------------------

def test_gap_matches_lattice_dispersion(harmonic_run):
    corr = pm.two_point(harmonic_run, harmonic_run.spec)
    gap = pm.energy_gap(corr)
    exact = oracles.lattice_gap(1.0, 0.25)
    assert abs(gap.gap - exact) < 3 * gap.stderr
    assert gap.chi2_dof < 3.0


def test_gap_stride_consistency():
    base = dict(width=0.8, sweeps=12000, therm=2000, seed=31, bin_meas=50)
    g = []
    for stride in (1, 2):
        cfg = pm.MetropolisConfig(stride=stride, **base)
        ens = pm.metropolis_sample(HARMONIC, cfg, n_slices=64)
        g.append(pm.energy_gap(pm.two_point(ens, HARMONIC)))
    combined = np.hypot(g[0].stderr, g[1].stderr)
    assert abs(g[0].gap - g[1].gap) < 3 * combined


def test_gap_flat_correlator_is_zero():
    flat = pm.Correlator(tau=0.25 * np.arange(9), value=np.ones(9),
                         stderr=np.zeros(9), spacing=0.25, n_slices=64,
                         bin_means=np.ones((4, 9)))
    gap = pm.energy_gap(flat)
    assert gap.gap == 0.0


def test_gap_no_plateau_for_curved_data():
    # strongly two-exponential data with tiny errors: no constant window
    tau = 0.25 * np.arange(12)
    vals = np.exp(-tau) + 0.8 * np.exp(-3.0 * tau)
    bins = np.tile(vals, (6, 1)) * (1 + 1e-5 * np.random.default_rng(0)
                                    .standard_normal((6, 12)))
    corr = pm.Correlator(tau=tau, value=bins.mean(axis=0),
                         stderr=np.full(12, 1e-6), spacing=0.25, n_slices=64,
                         bin_means=bins)
    with pytest.raises(NoPlateauError):
        pm.energy_gap(corr)


def test_binned_errors_stable_beyond_autocorrelation(harmonic_run):
    # once bins exceed ~5 tau_int the error estimate stops growing (x2 band)
    tau = harmonic_run.tau_int
    series = harmonic_run.q2_series
    base_len = int(np.ceil(5 * tau))
    _, e1 = pm.binned_mean(series, base_len)
    _, e2 = pm.binned_mean(series, 2 * base_len)
    _, e3 = pm.binned_mean(series, 4 * base_len)
    assert 0.5 < e2 / e1 < 2.0
    assert 0.5 < e3 / e1 < 2.0


# ---------------------------------------------------------------------------
# classical limit
# ---------------------------------------------------------------------------

def test_classical_limit_halving(harmonic_run):
    cfg = pm.MetropolisConfig(width=0.8, sweeps=12000, therm=2000, seed=7)
    rep = pm.classical_limit_scan(HARMONIC, cfg, [1.0, 0.5, 0.25], n_slices=32)
    assert rep.monotone
    for i in range(2):
        ratio = rep.variances[i + 1] / rep.variances[i]
        assert ratio == pytest.approx(0.5, abs=0.06)


def test_classical_limit_identical_entries():
    cfg = pm.MetropolisConfig(width=0.8, sweeps=1500, therm=500, seed=7)
    rep = pm.classical_limit_scan(HARMONIC, cfg, [0.5, 0.5], n_slices=16)
    assert rep.variances[0] == rep.variances[1]
    assert rep.monotone


def test_classical_limit_quartic_monotone():
    spec = pm.DiscreteActionSpec(m=1.0, kind="quartic", lam=1.0, hbar=1.0, a=0.25)
    cfg = pm.MetropolisConfig(width=0.8, sweeps=9000, therm=1500, seed=11)
    rep = pm.classical_limit_scan(spec, cfg, [1.0, 0.5, 0.25], n_slices=32)
    assert rep.monotone
    # cross-check the top-of-scan variance against the transfer matrix
    tm = oracles.transfer_matrix_q2(lambda q: q**4, 1.0, 1.0, 0.25, 32)
    cfg_long = pm.MetropolisConfig(width=0.8, sweeps=24000, therm=2000, seed=11)
    ens = pm.metropolis_sample(spec, cfg_long, n_slices=32)
    q2, err = ens.mean_q2()
    assert abs(q2 - tm) < 3.5 * err


def test_classical_limit_requires_nonincreasing():
    cfg = pm.MetropolisConfig(width=0.8, sweeps=200, therm=100, seed=1)
    with pytest.raises(ValueError):
        pm.classical_limit_scan(HARMONIC, cfg, [0.5, 1.0], n_slices=8)


def test_tiny_lattice_matches_quadrature():
    frozen = 1.0759906759906759  # mode sum; quadrature agrees to 2e-9
    quad = oracles.tiny_lattice_q2(1.0, 1.0, 1.0, 0.25, n=4)
    assert quad == pytest.approx(frozen, abs=1e-6)
    cfg = pm.MetropolisConfig(width=1.5, sweeps=40000, therm=4000, seed=21,
                              bin_meas=200)
    ens = pm.metropolis_sample(HARMONIC, cfg, n_slices=4)
    q2, err = ens.mean_q2()
    assert abs(q2 - quad) < 3 * err
