"""Experiment harness: configuration, runners, manifests, and the pipeline.

Configs are line-oriented ``key = value`` files with one section per
experiment (plus ``[run]`` for seed and output directory); unknown keys
are rejected by name.  Every run writes its CSV outputs and figures
atomically into the output directory together with a manifest echoing
the resolved configuration, per-check pass/fail lines, and sha256
digests of the outputs.
"""

import configparser
import hashlib
import json
import os
import tempfile
import time
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from . import classical as cl
from . import fokker_planck as fpk
from . import langevin as lv
from . import osfield as osf
from . import pathmc as pm
from .errors import NoPlateauError, StochPathError, UsageError

DEFAULT_SEED = 20250809
OUTDIR_ENV = "STOCHPATH_OUTDIR"


def _bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"not a boolean: {text!r}")


# experiment -> {key: (cast, default)}
EXPERIMENTS = {
    "classical": {
        "system": (str, "harmonic"),
        "dt": (float, 1e-3),
        "t_end": (float, 6.0),
        "hj_grid": (str, "24x24"),
        "out": (str, "hj_residuals.csv"),
    },
    "langevin": {
        "drift": (str, "linear"),
        "gamma": (float, 1.0),
        "diffusion": (float, 0.5),
        "n_traj": (int, 2000),
        "dt": (float, 1e-3),
        "t_end": (float, 1.0),
        "km_bins": (int, 12),
        "out": (str, "km_coefficients.csv"),
    },
    "fokker-planck": {
        "drift": (str, "linear"),
        "gamma": (float, 1.0),
        "diffusion": (float, 0.5),
        "grid": (str, "-6:6:256"),
        "bc": (str, "zeroflux"),
        "dt": (float, 0.0),  # 0 = accuracy default h^2/(2D)
        "steps": (int, 2000),
        "stationary": (_bool, False),
        "x0": (float, 0.0),
        "out": (str, "density.csv"),
    },
    "path-mc": {
        "potential": (str, "harmonic"),
        "m": (float, 1.0),
        "omega": (float, 1.0),
        "lam": (float, 1.0),
        "hbar": (float, 1.0),
        "n_slices": (int, 64),
        "spacing": (float, 0.25),
        "sweeps": (int, 20000),
        "therm": (int, 2000),
        "stride": (int, 1),
        "chains": (int, 1),
        "out": (str, "correlator.csv"),
    },
    "os-check": {
        "mass": (float, 1.0),
        "lattice": (str, "64"),
        "n_test_functions": (int, 16),
        "draws": (int, 2000),
        "tolerance": (float, 1e-10),
        "out": (str, "os_report.csv"),
    },
    "pipeline": {
        "hbar": (float, 0.1),
        "n_traj": (int, 20000),
        "sweeps": (int, 60000),
    },
}


@dataclass
class ExperimentConfig:
    experiment: str
    params: dict
    seed: int = DEFAULT_SEED
    outdir: str = "."

    @classmethod
    def resolve(cls, experiment, raw_params=None, seed=None, outdir=None):
        """Apply defaults, cast values, and reject unknown keys by name."""
        if experiment not in EXPERIMENTS:
            raise UsageError(f"unknown experiment {experiment!r}")
        spec = EXPERIMENTS[experiment]
        params = {k: d for k, (c, d) in spec.items()}
        for key, value in (raw_params or {}).items():
            key = key.replace("-", "_")
            if key not in spec:
                raise UsageError(f"unknown key '{key}' for experiment '{experiment}'")
            cast = spec[key][0]
            try:
                params[key] = cast(value)
            except (TypeError, ValueError) as exc:
                raise UsageError(f"bad value for '{key}': {value!r}") from exc
        if outdir is None:
            outdir = os.environ.get(OUTDIR_ENV, ".")
        return cls(experiment=experiment, params=params,
                   seed=DEFAULT_SEED if seed is None else int(seed),
                   outdir=str(outdir))


def load_config_file(path):
    """Parse the sectioned key=value config grammar; returns nested dict."""
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise UsageError(f"config file not found: {path}")
    out = {}
    for section in parser.sections():
        if section != "run" and section not in EXPERIMENTS:
            raise UsageError(f"unknown config section '{section}'")
        out[section] = dict(parser.items(section))
    if "run" in out:
        for key in out["run"]:
            if key not in ("seed", "outdir"):
                raise UsageError(f"unknown key '{key}' in [run]")
    return out


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------

def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _atomic_write(path, text):
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)
    return path


def write_csv(path, header, rows):
    """Schema-stable CSV: fixed header, repr-formatted numerics."""
    lines = [",".join(header)]
    lines.extend(",".join(_fmt(v) for v in row) for row in rows)
    return _atomic_write(path, "\n".join(lines) + "\n")


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    experiment: str
    config: dict
    version: str
    seed: int
    wall_time_s: float
    checks: dict
    outputs: dict
    notes: dict = field(default_factory=dict)

    @property
    def ok(self):
        return all(v == "pass" or v.startswith("skipped")
                   for v in self.checks.values())

    def to_text(self):
        lines = [
            f"experiment = {self.experiment}",
            f"version = {self.version}",
            f"seed = {self.seed}",
            f"ok = {_fmt(self.ok)}",
            f"wall_time_s = {_fmt(self.wall_time_s)}",
        ]
        lines += [f"config.{k} = {_fmt(v)}" for k, v in sorted(self.config.items())]
        lines += [f"check.{k} = {v}" for k, v in self.checks.items()]
        lines += [f"note.{k} = {v}" for k, v in sorted(self.notes.items())]
        lines += [f"output.{k} = {v}" for k, v in sorted(self.outputs.items())]
        return "\n".join(lines) + "\n"

    def to_json(self):
        return json.dumps({
            "experiment": self.experiment, "version": self.version,
            "seed": self.seed, "ok": self.ok,
            "wall_time_s": self.wall_time_s,
            "config": {k: _fmt(v) for k, v in self.config.items()},
            "checks": self.checks, "notes": self.notes,
            "outputs": self.outputs}, indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# experiment runners (each returns checks, output paths, notes)
# ---------------------------------------------------------------------------

_SYSTEMS = {
    "free": (cl.free_particle, (0.0, 1.0), (0.5, 1.5, 0.5, 1.5)),
    "harmonic": (cl.harmonic_oscillator, (1.0, 0.0), (0.4, 1.2, 0.5, 1.3)),
    "quartic": (cl.quartic_oscillator, (1.0, 0.0), (0.3, 1.0, 0.4, 1.2)),
}


def _parse_grid_nm(text):
    try:
        n, m = (int(p) for p in text.lower().split("x"))
        return n, m
    except ValueError as exc:
        raise UsageError(f"bad grid spec {text!r}, expected NxM") from exc


def _run_classical(cfg):
    p = cfg.params
    if p["system"] not in _SYSTEMS:
        raise UsageError(f"unknown system {p['system']!r}")
    factory, (q0i, p0i), (qlo, qhi, tlo, thi) = _SYSTEMS[p["system"]]
    model = factory()
    init = cl.PhaseState(np.array([q0i]), np.array([p0i]), 0.0)
    traj = cl.integrate_hamilton(model, init, p["t_end"], p["dt"])
    energy = cl.energy_series(model, traj)

    nq, nt = _parse_grid_nm(p["hj_grid"])
    table = cl.build_action_table(model, 0.0, 0.0, np.linspace(qlo, qhi, nq),
                                  np.linspace(tlo, thi, nt), dt=p["dt"])
    rep = cl.hamilton_jacobi_residual(table, model)

    rows = []
    for i, q in enumerate(rep.q_interior):
        for j, t in enumerate(rep.t_interior):
            rows.append((q, t, rep.S[i, j], rep.dSdq[i, j],
                         rep.dSdt[i, j], rep.residual[i, j]))
    out_csv = write_csv(os.path.join(cfg.outdir, p["out"]),
                        ["q", "t", "S", "dSdq", "dSdt", "residual"], rows)
    from . import plotting
    fig = plotting.plot_hj_residuals(
        rep, energy, os.path.join(cfg.outdir, "hj_residuals.svg"))

    h0 = abs(float(energy.values[0]))
    checks = {
        "finite_residuals": "pass" if np.all(np.isfinite(rep.residual)) else "fail",
        "energy_drift_bounded":
            "pass" if energy.max_drift <= 50.0 * p["dt"] ** 2 * (h0 + 1.0) else "fail",
    }
    notes = {"hj_max_residual": _fmt(rep.max_abs),
             "energy_max_drift": _fmt(energy.max_drift)}
    if rep.energy_residual_max is not None:
        notes["energy_hj_residual"] = _fmt(rep.energy_residual_max)
    return checks, [out_csv, fig], notes


_DRIFTS = {
    "zero": lambda gamma: lv.zero_drift(),
    "linear": lv.linear_drift,
    "cubic": lv.cubic_drift,
    "const": lv.constant_drift,
}


def _run_langevin(cfg):
    p = cfg.params
    if p["drift"] not in _DRIFTS:
        raise UsageError(f"unknown drift {p['drift']!r}")
    drift = _DRIFTS[p["drift"]](p["gamma"])
    noise = lv.NoiseSpec(p["diffusion"], cfg.seed)
    ens = lv.simulate_ensemble(drift, noise, 0.0, p["t_end"], p["dt"], p["n_traj"])
    km = lv.estimate_km_coefficients(ens, lag=1, bins=p["km_bins"])

    rows = [(km.centers[i], km.a1[i], km.a1_se[i], km.a2[i], km.a2_se[i],
             km.a3[i], km.a3_se[i], km.counts[i]) for i in range(km.centers.size)]
    out_csv = write_csv(
        os.path.join(cfg.outdir, p["out"]),
        ["bin_center", "a1", "a1_se", "a2", "a2_se", "a3", "a3_se", "count"], rows)
    from . import plotting
    fig = plotting.plot_km(km, p["gamma"], p["drift"],
                           os.path.join(cfg.outdir, "km_coefficients.svg"))

    checks = {
        "no_excluded_trajectories": "pass" if ens.n_excluded == 0 else "fail",
        "km_bins_reported": "pass" if km.centers.size >= 3 else "fail",
    }
    notes = {"n_excluded": _fmt(ens.n_excluded),
             "n_transitions": _fmt(int(np.sum(km.counts)))}
    return checks, [out_csv, fig], notes


def _parse_grid_range(text):
    try:
        lo, hi, n = text.split(":")
        return float(lo), float(hi), int(n)
    except ValueError as exc:
        raise UsageError(f"bad grid spec {text!r}, expected lo:hi:n") from exc


def _run_fokker_planck(cfg):
    p = cfg.params
    lo, hi, n = _parse_grid_range(p["grid"])
    grid = fpk.Grid1D(lo, hi, n, bc=p["bc"])
    if p["drift"] not in _DRIFTS:
        raise UsageError(f"unknown drift {p['drift']!r}")
    beta = _DRIFTS[p["drift"]](p["gamma"]).beta
    op = fpk.FPOperator(grid, beta, p["diffusion"])
    from . import plotting

    checks, notes = {}, {}
    if p["stationary"]:
        st = fpk.stationary_density(op)
        values, time_stamp = st.values, 0.0
        flux = float(np.max(np.abs(op.face_flux(st.values))))
        checks["dual_path_agreement"] = (
            "pass" if st.solver_agreement <= 1e-8 else "fail")
        checks["stationary_flux_vanishes"] = "pass" if flux < 1e-8 else "fail"
        notes["solver_agreement"] = _fmt(st.solver_agreement)
        notes["max_flux"] = _fmt(flux)
        curves = [("stationary", values)]
    else:
        dt = p["dt"] if p["dt"] > 0 else min(op.accuracy_dt(), 1e-2)
        rho = fpk.evolve(op, fpk.delta_density(grid, p["x0"]), dt, p["steps"])
        values, time_stamp = rho.values, rho.time
        checks["mass_conserved"] = (
            "pass" if grid.bc != fpk.ZEROFLUX or abs(rho.mass() - 1.0) < 1e-8
            else "fail")
        checks["positivity"] = (
            "pass" if rho.min_before_clamp >= -1e-12 else "fail")
        notes["mass"] = _fmt(rho.mass())
        notes["time"] = _fmt(time_stamp)
        curves = [(f"t = {time_stamp:g}", values)]

    rows = list(zip(grid.centers, values))
    out_csv = write_csv(os.path.join(cfg.outdir, p["out"]), ["x", "density"], rows)
    fig = plotting.plot_density(grid, curves,
                                os.path.join(cfg.outdir, "density.svg"),
                                logy=p["stationary"])
    return checks, [out_csv, fig], notes


def _run_path_mc(cfg):
    p = cfg.params
    spec = pm.DiscreteActionSpec(m=p["m"], kind=p["potential"], omega=p["omega"],
                                 lam=p["lam"], hbar=p["hbar"], a=p["spacing"])
    chains = []
    for c in range(p["chains"]):
        config = pm.MetropolisConfig(width=0.5 * np.sqrt(p["hbar"]),
                                     sweeps=p["sweeps"], therm=p["therm"],
                                     stride=p["stride"], seed=cfg.seed + c)
        chains.append(pm.metropolis_sample(spec, config, n_slices=p["n_slices"]))
    ens = chains[0] if len(chains) == 1 else pm.merge_chains(chains)
    corr = pm.two_point(ens, spec)
    q2, q2_err = ens.mean_q2()

    checks, notes = {}, {}
    gap = None
    try:
        gap = pm.energy_gap(corr)
        checks["plateau_found"] = "pass"
        gap_rows = [("energy_gap", gap.gap, gap.stderr)]
    except NoPlateauError as exc:
        checks["plateau_found"] = "fail"
        notes["plateau_error"] = str(exc)
        gap_rows = []
    checks["acceptance_in_window"] = (
        "pass" if 0.2 <= ens.acceptance_rate <= 0.8 else "fail")

    out_corr = write_csv(
        os.path.join(cfg.outdir, p["out"]), ["lag", "corr", "stderr"],
        [(int(k), corr.value[k], corr.stderr[k]) for k in range(corr.value.size)])
    out_sum = write_csv(
        os.path.join(cfg.outdir, "summary.csv"), ["observable", "value", "stderr"],
        [("q2", q2, q2_err), *gap_rows,
         ("acceptance_rate", ens.acceptance_rate, 0.0),
         ("tau_int", ens.tau_int, 0.0)])
    from . import plotting
    fig = plotting.plot_correlator(corr, gap,
                                   os.path.join(cfg.outdir, "path_mc.svg"))
    notes["q2"] = _fmt(q2)
    notes["acceptance_rate"] = _fmt(ens.acceptance_rate)
    return checks, [out_corr, out_sum, fig], notes


def _parse_lattice(text):
    parts = text.lower().split("x")
    if len(parts) == 1:
        return int(parts[0]), 0
    if len(parts) == 2:
        return int(parts[0]), int(parts[1])
    raise UsageError(f"bad lattice spec {text!r}, expected T or TxL")


def _run_os_check(cfg):
    p = cfg.params
    n_time, n_space = _parse_lattice(p["lattice"])
    lattice = osf.Lattice(n_time, n_space)
    cov = osf.CovarianceOp(lattice, p["mass"])
    rng = np.random.default_rng(cfg.seed)

    rows, all_ok, herm_max = [], True, 0.0
    for s in range(p["n_test_functions"]):
        size = 1 + s % 8
        fs = osf.random_positive_time_functions(lattice, size, rng)
        g = osf.gram_matrix(cov, fs, tolerance=p["tolerance"])
        rows.append((s, size, g.min_eigenvalue, g.certified))
        all_ok &= g.certified
        herm_max = max(herm_max, g.hermiticity_defect)

    z_max = 0.0
    n_mc = min(8, p["n_test_functions"])
    for k in range(n_mc):
        f = osf.random_positive_time_functions(lattice, 1, rng)[0]
        exact = osf.characteristic(cov, f)
        fields = cov.sample_fields(p["draws"], seed=cfg.seed + 1000 + k)
        vals = np.cos(np.array([osf.pair(ph, f) for ph in fields]))
        se = vals.std(ddof=1) / np.sqrt(vals.size)
        z_max = max(z_max, abs(vals.mean() - exact) / max(se, 1e-300))

    out_csv = write_csv(os.path.join(cfg.outdir, p["out"]),
                        ["set_id", "size", "min_eigenvalue", "certified"], rows)
    from . import plotting
    fig = plotting.plot_gram_report(rows, os.path.join(cfg.outdir, "os_check.svg"))

    checks = {
        "all_certified": "pass" if all_ok else "fail",
        "hermiticity": "pass" if herm_max < 1e-12 else "fail",
        "mc_characteristic": "pass" if z_max < 3.5 else "fail",
    }
    notes = {"worst_min_eigenvalue": _fmt(min(r[2] for r in rows)),
             "hermiticity_defect": _fmt(herm_max),
             "mc_max_z": _fmt(z_max)}
    return checks, [out_csv, fig], notes


# ---------------------------------------------------------------------------
# the emergence pipeline
# ---------------------------------------------------------------------------

def _pipeline_stages(cfg, force_fail_stage=None):
    from . import plotting
    p = cfg.params
    hbar, seed = p["hbar"], cfg.seed
    checks, outputs, notes = {}, [], {}
    ctx = {}

    def stage(name, fn, skip_reason=None):
        if skip_reason is not None:
            checks[name] = f"skipped: {skip_reason}"
            return
        try:
            if force_fail_stage == name:
                raise StochPathError("forced failure (fault injection)")
            ok = fn()
            checks[name] = "pass" if ok else "fail"
        except Exception as exc:  # noqa: BLE001 - stage isolation wanted
            checks[name] = "fail"
            notes[f"{name}.error"] = f"{type(exc).__name__}: {exc}"

    # 1. Hamilton-Jacobi residual: order-2 convergence on grid refinement
    def s1():
        model = cl.harmonic_oscillator()
        t32 = cl.build_action_table(model, 0.0, 0.0, np.linspace(0.4, 1.2, 32),
                                    np.linspace(0.5, 1.3, 32), dt=1e-3)
        t63 = cl.build_action_table(model, 0.0, 0.0, np.linspace(0.4, 1.2, 63),
                                    np.linspace(0.5, 1.3, 63), dt=1e-3)
        r32 = cl.hamilton_jacobi_residual(t32, model)
        r63 = cl.hamilton_jacobi_residual(t63, model)
        ratio, ratio_e = _hj_common_ratios(t32, r32, t63, r63)
        notes["classical_hj.ratio"] = _fmt(ratio)
        notes["classical_hj.energy_ratio"] = _fmt(ratio_e)
        rows = []
        for i, q in enumerate(r63.q_interior):
            for j, t in enumerate(r63.t_interior):
                rows.append((q, t, r63.S[i, j], r63.dSdq[i, j],
                             r63.dSdt[i, j], r63.residual[i, j]))
        outputs.append(write_csv(os.path.join(cfg.outdir, "hj_residuals.csv"),
                                 ["q", "t", "S", "dSdq", "dSdt", "residual"], rows))
        traj = cl.integrate_hamilton(
            model, cl.PhaseState(np.array([1.0]), np.array([0.0]), 0.0), 6.0, 1e-3)
        outputs.append(plotting.plot_hj_residuals(
            r63, cl.energy_series(model, traj),
            os.path.join(cfg.outdir, "hj_residuals.svg")))
        return ratio >= 3.5 and ratio_e >= 3.5

    # 2. action process ensemble: mean -Et, variance 2 hbar E t
    def s2():
        E, t_end = 1.0, 5.0
        spec = lv.PerturbationSpec(E=E, hbar=hbar, dt=0.05)
        ens = lv.action_ensemble(spec, t_end, p["n_traj"], seed)
        ctx["action_ensemble"] = ens
        mean = ens.positions.mean(axis=0)
        var = ens.positions.var(axis=0)
        rows = [(ens.times[k], mean[k], var[k]) for k in range(ens.times.size)]
        outputs.append(write_csv(os.path.join(cfg.outdir, "action_stats.csv"),
                                 ["t", "mean", "var"], rows))
        outputs.append(plotting.plot_action_ensemble(
            ens.times, mean, var, ens.positions[:6], hbar, E,
            os.path.join(cfg.outdir, "action_process.svg")))
        if hbar == 0.0:
            dev = float(np.max(np.abs(ens.positions + E * ens.times)))
            notes["action_ensemble.max_dev"] = _fmt(dev)
            return dev < 1e-9
        n = ens.positions.shape[0]
        z_mean = abs(mean[-1] + E * t_end) / np.sqrt(2 * hbar * E * t_end / n)
        z_var = abs(var[-1] - 2 * hbar * E * t_end) / (
            np.sqrt(2.0 / (n - 1)) * 2 * hbar * E * t_end)
        notes["action_ensemble.z_mean"] = _fmt(float(z_mean))
        notes["action_ensemble.z_var"] = _fmt(float(z_var))
        return z_mean < 3.5 and z_var < 3.5

    # 3. stationary action distribution: solver vs exp(-S/hbar) vs ensemble
    def s3():
        E = 1.0
        grid = fpk.Grid1D(0.0, 20.0 * hbar, 512)
        op = fpk.FPOperator(grid, lambda x: np.full_like(x, E), hbar * E)
        st = fpk.stationary_density(op)
        faces = grid.faces
        masses = np.exp(-faces[:-1] / hbar) - np.exp(-faces[1:] / hbar)
        target = masses / masses.sum() / grid.h
        l1_exact = float(np.sum(np.abs(st.values - target)) * grid.h)
        notes["action_stationary.l1_analytic"] = _fmt(l1_exact)

        spec = lv.PerturbationSpec(E=E, hbar=hbar, dt=1e-3)
        ens = lv.action_ensemble(spec, 8.0, p["n_traj"], seed + 1,
                                 store_stride=400, reflect=(0.0, 20.0 * hbar))
        final = ens.valid_positions[:, -1]
        hist_m = np.histogram(final, bins=faces)[0] / final.size
        dens_m = (st.values * grid.h).reshape(64, 8).sum(axis=1)
        hist_m = hist_m.reshape(64, 8).sum(axis=1)
        l1_ens = float(np.sum(np.abs(hist_m - dens_m)))
        q = np.clip(dens_m, 0, 1)
        floor = float(np.sum(np.sqrt(2 * q * (1 - q) / (np.pi * final.size))))
        thresh = 5.0 / np.sqrt(final.size) + floor + 0.02  # 0.02: reflection bias
        notes["action_stationary.l1_ensemble"] = _fmt(l1_ens)
        notes["action_stationary.threshold"] = _fmt(thresh)
        rows = list(zip(grid.centers, st.values, target))
        outputs.append(write_csv(os.path.join(cfg.outdir, "stationary_action.csv"),
                                 ["S", "density", "analytic"], rows))
        outputs.append(plotting.plot_density(
            grid, [("solver", st.values), ("exp(-S/hbar)/norm", target)],
            os.path.join(cfg.outdir, "stationary_action.svg"), logy=True))
        return l1_exact < 1e-6 and l1_ens < thresh

    # 4. quantum observables from the path measure
    def s4():
        spec = pm.DiscreteActionSpec(m=1.0, kind="harmonic", omega=1.0,
                                     hbar=1.0, a=0.25)
        config = pm.MetropolisConfig(width=0.8, sweeps=p["sweeps"],
                                     therm=max(2000, p["sweeps"] // 12),
                                     seed=seed, bin_meas=100)
        ens = pm.metropolis_sample(spec, config, n_slices=64)
        corr = pm.two_point(ens, spec)
        ctx["correlator"] = corr
        gap = pm.energy_gap(corr)
        ctx["gap"] = gap
        q2, q2e = ens.mean_q2()
        k = np.arange(64)
        lam = (2.0 / 0.25) * (1 - np.cos(2 * np.pi * k / 64)) + 0.25
        q2_exact = float(np.sum(1 / lam) / 64)
        gap_exact = float(np.arccosh(1 + 0.25**2 / 2) / 0.25)
        z_q2 = abs(q2 - q2_exact) / q2e
        z_gap = abs(gap.gap - gap_exact) / gap.stderr
        notes["path_observables.z_q2"] = _fmt(float(z_q2))
        notes["path_observables.z_gap"] = _fmt(float(z_gap))
        outputs.append(write_csv(
            os.path.join(cfg.outdir, "correlator.csv"), ["lag", "corr", "stderr"],
            [(int(i), corr.value[i], corr.stderr[i]) for i in range(corr.value.size)]))
        outputs.append(write_csv(
            os.path.join(cfg.outdir, "summary.csv"), ["observable", "value", "stderr"],
            [("q2", q2, q2e), ("energy_gap", gap.gap, gap.stderr),
             ("acceptance_rate", ens.acceptance_rate, 0.0),
             ("tau_int", ens.tau_int, 0.0)]))
        outputs.append(plotting.plot_correlator(
            corr, gap, os.path.join(cfg.outdir, "path_mc.svg")))
        return (z_q2 < 3.5 and z_gap < 3.5
                and 0.2 <= ens.acceptance_rate <= 0.8)

    # 5. reflection positivity and Wick continuation
    def s5():
        lattice = osf.Lattice(64)
        cov = osf.CovarianceOp(lattice, 1.0)
        rng = np.random.default_rng(seed + 5)
        rows, all_ok, herm = [], True, 0.0
        for s in range(12):
            fs = osf.random_positive_time_functions(lattice, 1 + s % 8, rng)
            g = osf.gram_matrix(cov, fs)
            rows.append((s, 1 + s % 8, g.min_eigenvalue, g.certified))
            all_ok &= g.certified
            herm = max(herm, g.hermiticity_defect)
        z_max = 0.0
        for k in range(8):
            f = osf.random_positive_time_functions(lattice, 1, rng)[0]
            exact = osf.characteristic(cov, f)
            fields = cov.sample_fields(2000, seed=seed + 100 + k)
            vals = np.cos(np.array([osf.pair(ph, f) for ph in fields]))
            se = vals.std(ddof=1) / np.sqrt(vals.size)
            z_max = max(z_max, abs(vals.mean() - exact) / max(se, 1e-300))
        outputs.append(write_csv(
            os.path.join(cfg.outdir, "os_report.csv"),
            ["set_id", "size", "min_eigenvalue", "certified"], rows))
        outputs.append(plotting.plot_gram_report(
            rows, os.path.join(cfg.outdir, "os_check.svg")))

        lat_c = osf.Lattice(160, spacing=0.1)
        cov_c = osf.CovarianceOp(lat_c, 1.0)
        taus, vals = cov_c.time_slice_correlator(60)
        wc = osf.wick_continue((taus, vals), times=np.linspace(0, 4, 33),
                               fit_window=(0.3, 2.5))
        mass_dev = abs(wc.mass - 1.0)
        notes["os_wick.fitted_mass"] = _fmt(wc.mass)
        notes["os_wick.mc_max_z"] = _fmt(z_max)
        outputs.append(write_csv(
            os.path.join(cfg.outdir, "wick.csv"), ["t", "re", "im", "abs"],
            [(t, v.real, v.imag, abs(v)) for t, v in zip(wc.times, wc.values)]))
        outputs.append(plotting.plot_wick(
            taus, vals, wc, wc.times, os.path.join(cfg.outdir, "wick.svg")))

        mc_ok = True
        if "correlator" in ctx:
            corr = ctx["correlator"]
            wc_mc = osf.wick_continue(corr, times=np.linspace(0, 4, 17),
                                      fit_window=(0.5, 3.0), chi2_threshold=4.0)
            unit = float(np.max(np.abs(np.abs(wc_mc.values) - wc_mc.amplitude)))
            mc_ok = unit < 1e-12
            notes["os_wick.mc_gap"] = _fmt(wc_mc.mass)
        return all_ok and herm < 1e-12 and z_max < 3.5 and mass_dev < 0.02 and mc_ok

    stage("classical_hj", s1)
    stage("action_ensemble", s2)
    stage("action_stationary", s3,
          skip_reason=("hbar=0 leaves a deterministic drift (no stationary "
                       "density)") if hbar == 0.0 else None)
    stage("path_observables", s4)
    stage("os_wick", s5)
    return checks, outputs, notes


def _hj_common_ratios(coarse_table, coarse_rep, fine_table, fine_rep):
    """Max-residual ratios restricted to the coarse interior region."""
    qlo, qhi = coarse_rep.q_interior[0], coarse_rep.q_interior[-1]
    tlo, thi = coarse_rep.t_interior[0], coarse_rep.t_interior[-1]
    mq = (fine_rep.q_interior >= qlo - 1e-12) & (fine_rep.q_interior <= qhi + 1e-12)
    mt = (fine_rep.t_interior >= tlo - 1e-12) & (fine_rep.t_interior <= thi + 1e-12)
    sub = np.abs(fine_rep.residual[np.ix_(mq, mt)]).max()
    ratio = coarse_rep.max_abs / sub
    e_coarse = np.abs(coarse_rep.dSdt + coarse_table.H[1:-1, 1:-1]).max()
    e_fine = np.abs((fine_rep.dSdt + fine_table.H[1:-1, 1:-1])[np.ix_(mq, mt)]).max()
    return float(ratio), float(e_coarse / e_fine)


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

_RUNNERS = {
    "classical": _run_classical,
    "langevin": _run_langevin,
    "fokker-planck": _run_fokker_planck,
    "path-mc": _run_path_mc,
    "os-check": _run_os_check,
}


def run_experiment(config, json_manifest=False, _force_fail_stage=None):
    """Dispatch an experiment, write outputs and manifest, return manifest."""
    os.makedirs(config.outdir, exist_ok=True)
    t0 = time.monotonic()
    if config.experiment == "pipeline":
        checks, outputs, notes = _pipeline_stages(
            config, force_fail_stage=_force_fail_stage)
    else:
        checks, outputs, notes = _RUNNERS[config.experiment](config)
    wall = time.monotonic() - t0
    digests = {os.path.basename(p): sha256_file(p) for p in outputs}
    manifest = RunManifest(
        experiment=config.experiment, config=dict(config.params),
        version=__version__, seed=config.seed, wall_time_s=wall,
        checks=checks, outputs=digests, notes=notes)
    name = "manifest.json" if json_manifest else "manifest.txt"
    _atomic_write(os.path.join(config.outdir, name),
                  manifest.to_json() if json_manifest else manifest.to_text())
    return manifest


def emergence_pipeline(seed=DEFAULT_SEED, outdir=None, hbar=0.1,
                       n_traj=20000, sweeps=60000, json_manifest=False,
                       force_fail_stage=None):
    """Run the canonical cross-module chain and return its manifest.

    Stages: Hamilton-Jacobi convergence, action-process ensemble,
    stationary action distribution, path-measure observables, and
    reflection positivity plus Wick continuation.  A stage failure marks
    that stage and the remaining stages still run.
    """
    config = ExperimentConfig.resolve(
        "pipeline", {"hbar": hbar, "n_traj": n_traj, "sweeps": sweeps},
        seed=seed, outdir=outdir)
    return run_experiment(config, json_manifest=json_manifest,
                          _force_fail_stage=force_fail_stage)
