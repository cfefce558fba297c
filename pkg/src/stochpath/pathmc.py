"""Metropolis sampling of lattice trajectories weighted by exp(-S/hbar).

The discretized action is Euclidean with a forward-difference kinetic
term and periodic boundaries,

    S = sum_i [ m (q_{i+1} - q_i)^2 / (2 a) + a V(q_i) ],

so the weight exp(-S/hbar) is normalizable for confining potentials.
Updates are single-site random-walk Metropolis applied in a checkerboard
(even/odd) order: a site's action difference involves only its fixed
opposite-color neighbours, so each half sweep is an exact product of
single-site detailed-balance moves and can be vectorized.

Observables are streamed (per-measurement mean square displacement plus
binned circular correlators); full path storage sits behind a flag.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import NoPlateauError

_WARMUP_TUNE_INTERVAL = 50


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------

@dataclass
class LatticePath:
    """q at N time slices, periodic; N must be even and >= 4."""

    values: np.ndarray
    spacing: float
    boundary: str = "periodic"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        n = self.values.size
        if n < 4 or n % 2:
            raise ValueError("lattice needs an even number of slices, >= 4")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("path values must be finite")
        if self.boundary != "periodic":
            raise ValueError("only periodic paths are supported")


@dataclass(frozen=True)
class DiscreteActionSpec:
    """Lattice action parameters: mass, potential, hbar, spacing."""

    m: float = 1.0
    kind: str = "harmonic"   # or "quartic"
    omega: float = 1.0
    lam: float = 1.0
    hbar: float = 1.0
    a: float = 1.0

    def __post_init__(self):
        if self.m <= 0 or self.a <= 0 or self.hbar <= 0:
            raise ValueError("m, a and hbar must be positive")
        if self.kind not in ("harmonic", "quartic"):
            raise ValueError(f"unknown potential {self.kind!r}")

    def potential(self, q):
        if self.kind == "harmonic":
            return 0.5 * self.m * self.omega**2 * q * q
        return self.lam * q**4

    def replace_hbar(self, hbar):
        return DiscreteActionSpec(self.m, self.kind, self.omega, self.lam,
                                  hbar, self.a)


@dataclass(frozen=True)
class MetropolisConfig:
    width: float = 0.5
    sweeps: int = 20000
    therm: int = 2000
    stride: int = 1
    seed: int = 0
    tune: bool = True
    bin_meas: int = 100
    store_paths: bool = False
    record_transitions: int = 0

    def __post_init__(self):
        if self.width <= 0:
            raise ValueError("proposal width must be positive")
        if self.sweeps <= self.therm:
            raise ValueError("sweeps must exceed thermalization sweeps")
        if self.stride < 1 or self.bin_meas < 2:
            raise ValueError("stride >= 1 and bin_meas >= 2 required")


@dataclass
class PathEnsemble:
    """Streaming observables of one chain (or a merge of chains)."""

    spec: DiscreteActionSpec
    n_slices: int
    n_meas: int
    q2_series: np.ndarray          # per-measurement mean q^2
    corr_bin_sums: np.ndarray      # (n_bins, N) circular-correlator sums
    corr_bin_counts: np.ndarray
    bin_meas: int
    acceptance_rate: float
    tau_int: float
    width: float
    paths: list = field(default_factory=list)
    transitions: list = field(default_factory=list)

    def mean_q2(self):
        """(<q^2>, stderr) with binned errors honoring autocorrelation."""
        return binned_mean(self.q2_series, self.bin_meas)


@dataclass
class Correlator:
    """C(tau) with jackknife errors; carries bin means for refits."""

    tau: np.ndarray
    value: np.ndarray
    stderr: np.ndarray
    spacing: float
    n_slices: int
    bin_means: np.ndarray  # (n_bins, n_lags)


@dataclass
class GapEstimate:
    gap: float
    stderr: float
    window: np.ndarray
    chi2_dof: float
    tau: np.ndarray
    meff: np.ndarray
    meff_err: np.ndarray


@dataclass
class ClassicalLimitReport:
    hbars: np.ndarray
    variances: np.ndarray
    stderrs: np.ndarray
    monotone: bool
    violations: list


# ---------------------------------------------------------------------------
# statistics helpers
# ---------------------------------------------------------------------------

def binned_mean(series, bin_length):
    """Mean and stderr from non-overlapping bins of bin_length samples."""
    series = np.asarray(series, dtype=float)
    k = series.size // bin_length
    if k < 2:
        return float(series.mean()), float(series.std(ddof=1) / np.sqrt(max(series.size, 2)))
    bins = series[:k * bin_length].reshape(k, bin_length).mean(axis=1)
    return float(bins.mean()), float(bins.std(ddof=1) / np.sqrt(k))


def integrated_autocorr(series, c=6.0):
    """Integrated autocorrelation time with an automatic Sokal window."""
    x = np.asarray(series, dtype=float)
    n = x.size
    if n < 16:
        return 0.5
    x = x - x.mean()
    var = float(np.mean(x * x))
    if var == 0.0:
        return 0.5
    f = np.fft.rfft(x, 2 * n)
    acf = np.fft.irfft(f * np.conj(f))[:n] / (var * n)
    tau = 0.5
    for t in range(1, n // 2):
        tau += acf[t]
        if t >= c * tau:
            break
    return float(max(tau, 0.5))


# ---------------------------------------------------------------------------
# action and sampler
# ---------------------------------------------------------------------------

def discrete_action(spec, path):
    """Euclidean lattice action with periodic wraparound."""
    q = path.values if isinstance(path, LatticePath) else np.asarray(path, dtype=float)
    a = spec.a
    dq = np.roll(q, -1) - q
    return float(np.sum(spec.m * dq * dq / (2.0 * a) + a * spec.potential(q)))


def _chain_rng(seed):
    return np.random.Generator(np.random.Philox(key=np.array(
        [seed & 0xFFFFFFFFFFFFFFFF, 0x9E3779B97F4A7C15], dtype=np.uint64)))


def metropolis_sample(spec, config, n_slices=64):
    """Run single-site Metropolis sweeps targeting exp(-S/hbar).

    The proposal width is tuned toward 50% acceptance during
    thermalization and frozen afterwards.  Returns streamed observables;
    a final acceptance rate outside [0.2, 0.8] triggers a warning with a
    retuned width suggestion.
    """
    n = int(n_slices)
    if n < 4 or n % 2:
        raise ValueError("n_slices must be even and >= 4")
    rng = _chain_rng(config.seed)
    q = np.zeros(n)
    half = n // 2
    evens = np.arange(0, n, 2)
    odds = np.arange(1, n, 2)
    width = config.width
    kin = spec.m / (2.0 * spec.a)
    inv_hbar = 1.0 / spec.hbar

    n_meas_max = (config.sweeps - config.therm) // config.stride
    q2_series = np.empty(n_meas_max)
    n_bins = max(1, n_meas_max // config.bin_meas)
    corr_sums = np.zeros((n_bins, n))
    corr_counts = np.zeros(n_bins, dtype=int)
    paths = []
    transitions = []
    record_left = config.record_transitions

    accepted = 0
    proposed = 0
    tune_acc = 0
    tune_prop = 0
    meas_idx = 0

    for sweep in range(config.sweeps):
        measuring = sweep >= config.therm
        for sites in (evens, odds):
            cur = q[sites]
            left = q[(sites - 1) % n]
            right = q[(sites + 1) % n]
            prop = cur + width * (2.0 * rng.random(half) - 1.0)
            dS = (kin * ((prop - left) ** 2 + (prop - right) ** 2
                         - (cur - left) ** 2 - (cur - right) ** 2)
                  + spec.a * (spec.potential(prop) - spec.potential(cur)))
            u = rng.random(half)
            with np.errstate(over="ignore"):
                acc = u < np.exp(-dS * inv_hbar)
            if record_left > 0:
                take = min(record_left, half)
                transitions.append({
                    "lattice": q.copy(), "sites": sites[:take].copy(),
                    "proposals": prop[:take].copy(), "u": u[:take].copy(),
                    "dS": dS[:take].copy(), "accepted": acc[:take].copy()})
                record_left -= take
            q[sites] = np.where(acc, prop, cur)
            n_acc = int(acc.sum())
            if measuring:
                accepted += n_acc
                proposed += half
            else:
                tune_acc += n_acc
                tune_prop += half

        if not measuring:
            if config.tune and (sweep + 1) % _WARMUP_TUNE_INTERVAL == 0 and tune_prop:
                rate = tune_acc / tune_prop
                if rate < 0.4:
                    width *= 0.8
                elif rate > 0.6:
                    width *= 1.25
                tune_acc = tune_prop = 0
            continue

        if (sweep - config.therm) % config.stride == 0 and meas_idx < n_meas_max:
            q2_series[meas_idx] = np.mean(q * q)
            f = np.fft.rfft(q)
            corr = np.fft.irfft(f * np.conj(f), n) / n
            b = meas_idx // config.bin_meas
            if b < n_bins:
                corr_sums[b] += corr
                corr_counts[b] += 1
            if config.store_paths:
                paths.append(LatticePath(q.copy(), spec.a))
            meas_idx += 1

    rate = accepted / max(proposed, 1)
    if not 0.2 <= rate <= 0.8:
        warnings.warn(
            f"acceptance rate {rate:.2f} outside [0.2, 0.8]; "
            f"try proposal width {width * rate / 0.5:.3g}",
            RuntimeWarning, stacklevel=2)
    tau = integrated_autocorr(q2_series[:meas_idx])
    return PathEnsemble(
        spec=spec, n_slices=n, n_meas=meas_idx,
        q2_series=q2_series[:meas_idx],
        corr_bin_sums=corr_sums, corr_bin_counts=corr_counts,
        bin_meas=config.bin_meas, acceptance_rate=float(rate),
        tau_int=tau, width=float(width), paths=paths, transitions=transitions)


def merge_chains(ensembles):
    """Merge independent chains; weighted averaging over measurements."""
    if not ensembles:
        raise ValueError("need at least one chain")
    first = ensembles[0]
    n_meas = sum(e.n_meas for e in ensembles)
    weights = np.array([e.n_meas for e in ensembles], dtype=float)
    acc = float(np.sum([e.acceptance_rate * e.n_meas for e in ensembles]) / n_meas)
    tau = float(np.sum([e.tau_int * e.n_meas for e in ensembles]) / n_meas)
    return PathEnsemble(
        spec=first.spec, n_slices=first.n_slices, n_meas=n_meas,
        q2_series=np.concatenate([e.q2_series for e in ensembles]),
        corr_bin_sums=np.vstack([e.corr_bin_sums for e in ensembles]),
        corr_bin_counts=np.concatenate([e.corr_bin_counts for e in ensembles]),
        bin_meas=first.bin_meas, acceptance_rate=acc, tau_int=tau,
        width=float(np.mean([e.width for e in ensembles])),
        paths=sum((e.paths for e in ensembles), []),
        transitions=sum((e.transitions for e in ensembles), []))


# ---------------------------------------------------------------------------
# observables
# ---------------------------------------------------------------------------

def two_point(ensemble, spec, max_lag=None):
    """C(tau) = <q(0) q(tau)> averaged over translations, jackknife errors.

    The circular estimator is symmetric about N/2, so lags above N/2 fold
    back; asking for them truncates with a warning.
    """
    n = ensemble.n_slices
    if max_lag is None:
        max_lag = n // 2
    if max_lag >= n // 2 + 1:
        warnings.warn(f"max_lag truncated to N/2 = {n // 2} (periodic fold-back)",
                      RuntimeWarning, stacklevel=2)
        max_lag = n // 2
    full = ensemble.corr_bin_counts >= ensemble.bin_meas
    if full.sum() < 2:
        raise ValueError("need at least two full measurement bins")
    bins = (ensemble.corr_bin_sums[full]
            / ensemble.corr_bin_counts[full, None])[:, :max_lag + 1]
    k = bins.shape[0]
    mean = bins.mean(axis=0)
    jack = (mean * k - bins) / (k - 1)          # leave-one-out means
    err = np.sqrt((k - 1) / k * np.sum((jack - mean) ** 2, axis=0))
    return Correlator(
        tau=spec.a * np.arange(max_lag + 1), value=mean, stderr=err,
        spacing=spec.a, n_slices=n, bin_means=bins)


def _effective_mass(values, a):
    """acosh effective mass per interior lag; NaN where undefined."""
    with np.errstate(invalid="ignore", divide="ignore"):
        arg = (values[2:] + values[:-2]) / (2.0 * values[1:-1])
        out = np.where((arg >= 1.0) & (values[1:-1] > 0), np.arccosh(np.maximum(arg, 1.0)) / a, np.nan)
    return out


def energy_gap(correlator, window=None, chi2_threshold=3.0):
    """Plateau-averaged effective mass m_eff(tau) with jackknife error.

    Raises NoPlateauError when the constant fit over the window has
    chi^2 per dof above the threshold, or when no usable window exists.
    """
    a = correlator.spacing
    vals = correlator.value
    meff = _effective_mass(vals, a)
    tau_int_idx = np.arange(1, vals.size - 1)

    k = correlator.bin_means.shape[0]
    jr = np.array([_effective_mass((vals * k - correlator.bin_means[i]) / (k - 1), a)
                   for i in range(k)])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        err = np.sqrt((k - 1) / k * np.nansum((jr - meff) ** 2, axis=0))
    bad_j = np.any(~np.isfinite(jr), axis=0)

    if window is None:
        lo = min(2, vals.size - 3)
        hi = max(lo + 1, min(correlator.n_slices // 4, vals.size - 2))
        window = np.arange(lo, hi)
    window = np.asarray(window)
    usable = np.array([w for w in window
                       if 1 <= w < vals.size - 1
                       and np.isfinite(meff[w - 1]) and not bad_j[w - 1]])
    if usable.size < 2:
        raise NoPlateauError("no usable effective-mass window",
                             diagnostics={"meff": meff, "err": err})
    sel = usable - 1
    sig = np.maximum(err[sel], 1e-30)
    w = 1.0 / sig**2
    gap = float(np.sum(w * meff[sel]) / np.sum(w))
    gaps_j = np.array([np.sum(w * jr[i, sel]) / np.sum(w) for i in range(k)])
    gap_err = float(np.sqrt((k - 1) / k * np.sum((gaps_j - gap) ** 2)))
    resid = (meff[sel] - gap) / sig
    chi2_dof = float(np.sum(resid**2) / max(usable.size - 1, 1))
    if chi2_dof > chi2_threshold:
        raise NoPlateauError(
            f"effective mass not constant (chi2/dof = {chi2_dof:.2f})",
            diagnostics={"meff": meff, "err": err, "window": usable,
                         "chi2_dof": chi2_dof})
    return GapEstimate(gap=gap, stderr=gap_err, window=usable,
                       chi2_dof=chi2_dof, tau=correlator.tau[1:-1],
                       meff=meff, meff_err=err)


def classical_limit_scan(spec, config, hbars, n_slices=64):
    """Path variance around the classical minimum for decreasing hbar.

    Every entry reuses the same seed, so identical hbar values give
    bitwise-identical statistics.  Non-monotone variance beyond combined
    3-sigma error bars is reported, not raised.
    """
    hbars = list(hbars)
    if not hbars:
        raise ValueError("hbar list must be nonempty")
    if any(b > a for a, b in zip(hbars, hbars[1:])):
        raise ValueError("hbar list must be non-increasing")
    variances, errs = [], []
    for hb in hbars:
        ens = metropolis_sample(spec.replace_hbar(hb), config, n_slices)
        v, e = ens.mean_q2()
        variances.append(v)
        errs.append(e)
    variances = np.array(variances)
    errs = np.array(errs)
    violations = []
    for i in range(len(hbars) - 1):
        if hbars[i + 1] == hbars[i]:
            continue
        allowed = 3.0 * np.hypot(errs[i], errs[i + 1])
        if variances[i + 1] > variances[i] + allowed:
            violations.append(i)
    return ClassicalLimitReport(
        hbars=np.array(hbars), variances=variances, stderrs=errs,
        monotone=not violations, violations=violations)
