"""Figure rendering for the CLI report path.

All figures are written as SVG next to the CSV outputs.  The SVG backend
is pinned deterministic (fixed hash salt, no date metadata) so reruns
produce identical bytes; the CSVs remain the authoritative output.
"""

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "stochpath"

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def save_figure(fig, path):
    fig.savefig(path, metadata={"Date": None}, bbox_inches="tight")
    plt.close(fig)
    return str(path)


def plot_hj_residuals(report, energy, path):
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.6))
    im = axes[0].pcolormesh(report.t_interior, report.q_interior,
                            np.abs(report.residual), shading="nearest")
    fig.colorbar(im, ax=axes[0], label="|dS/dt + H|")
    axes[0].set_xlabel("t")
    axes[0].set_ylabel("q")
    axes[0].set_title("Hamilton-Jacobi residual")
    axes[1].plot(energy.times, energy.values - energy.values[0], lw=0.8)
    axes[1].set_xlabel("t")
    axes[1].set_ylabel("H(t) - H(0)")
    axes[1].set_title(f"energy drift (max {energy.max_drift:.2e})")
    fig.tight_layout()
    return save_figure(fig, path)


def plot_km(km, gamma, drift_name, path):
    fig, axes = plt.subplots(1, 3, figsize=(11, 3.2), sharex=True)
    axes[0].errorbar(km.centers, km.a1, 3 * km.a1_se, fmt="o", ms=3, capsize=2)
    if drift_name == "linear":
        axes[0].plot(km.centers, -gamma * km.centers, "k--", lw=1, label="-gamma x")
        axes[0].legend()
    axes[0].set_title("drift estimate a1")
    axes[1].errorbar(km.centers, km.a2, 3 * km.a2_se, fmt="o", ms=3, capsize=2)
    axes[1].set_title("diffusion estimate a2")
    axes[2].errorbar(km.centers, km.a3, 3 * km.a3_se, fmt="o", ms=3, capsize=2)
    axes[2].axhline(0.0, color="k", ls="--", lw=1)
    axes[2].set_title("third coefficient a3")
    for ax in axes:
        ax.set_xlabel("x")
    fig.tight_layout()
    return save_figure(fig, path)


def plot_density(grid, curves, path, logy=False):
    """curves: list of (label, values)."""
    fig, ax = plt.subplots(figsize=(6, 3.6))
    for label, values in curves:
        ax.plot(grid.centers, values, lw=1.2, label=label)
    ax.set_xlabel("x")
    ax.set_ylabel("density")
    if logy:
        ax.set_yscale("log")
    ax.legend()
    fig.tight_layout()
    return save_figure(fig, path)


def plot_correlator(corr, gap, path):
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.6))
    axes[0].errorbar(corr.tau, corr.value, corr.stderr, fmt="o", ms=3, capsize=2)
    axes[0].set_yscale("log")
    axes[0].set_xlabel("tau")
    axes[0].set_ylabel("C(tau)")
    axes[0].set_title("two-point correlator")
    if gap is not None:
        axes[1].errorbar(gap.tau, gap.meff, gap.meff_err, fmt="o", ms=3, capsize=2)
        axes[1].axhline(gap.gap, color="k", lw=1)
        axes[1].axhspan(gap.gap - gap.stderr, gap.gap + gap.stderr,
                        color="k", alpha=0.15)
        axes[1].set_ylim(gap.gap - 10 * gap.stderr, gap.gap + 10 * gap.stderr)
        axes[1].set_xlabel("tau")
        axes[1].set_ylabel("effective mass")
        axes[1].set_title(f"gap = {gap.gap:.4f} +/- {gap.stderr:.4f}")
    fig.tight_layout()
    return save_figure(fig, path)


def plot_gram_report(rows, path):
    """rows: (set_id, size, min_eig, certified)."""
    fig, ax = plt.subplots(figsize=(6, 3.6))
    ids = [r[0] for r in rows]
    eigs = [r[2] for r in rows]
    ok = [r[3] for r in rows]
    colors = ["tab:blue" if c else "tab:red" for c in ok]
    ax.scatter(ids, eigs, c=colors, s=18)
    ax.axhline(0.0, color="k", lw=1)
    ax.set_xlabel("test-function set")
    ax.set_ylabel("min eigenvalue of M")
    ax.set_title("reflection-positivity certificates")
    ax.set_yscale("symlog", linthresh=1e-14)
    fig.tight_layout()
    return save_figure(fig, path)


def plot_action_ensemble(times, mean, var, sample_paths, hbar, E, path):
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.6))
    for sp in sample_paths:
        axes[0].plot(times, sp, lw=0.5, alpha=0.6)
    axes[0].plot(times, -E * times, "k--", lw=1.2, label="-E t")
    axes[0].set_xlabel("t")
    axes[0].set_ylabel("S(t)")
    axes[0].legend()
    axes[0].set_title("action-process samples")
    axes[1].plot(times, var, lw=1.2, label="ensemble Var[S]")
    axes[1].plot(times, 2 * hbar * E * times, "k--", lw=1, label="2 hbar E t")
    axes[1].set_xlabel("t")
    axes[1].legend()
    axes[1].set_title("variance growth")
    fig.tight_layout()
    return save_figure(fig, path)


def plot_wick(taus, corr_vals, fit, times, path):
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.6))
    axes[0].semilogy(taus, corr_vals, "o", ms=3, label="Euclidean data")
    axes[0].semilogy(taus, fit.amplitude * np.exp(-fit.mass * taus),
                     "k--", lw=1, label="A exp(-M tau)")
    axes[0].set_xlabel("tau")
    axes[0].legend()
    axes[0].set_title(f"fit: M = {fit.mass:.4f}")
    axes[1].plot(times, fit.values.real, lw=1.2, label="Re")
    axes[1].plot(times, fit.values.imag, lw=1.2, label="Im")
    axes[1].plot(times, np.abs(fit.values), "k--", lw=1, label="|.|")
    axes[1].set_xlabel("t")
    axes[1].legend()
    axes[1].set_title("continued amplitude A exp(-i M t)")
    fig.tight_layout()
    return save_figure(fig, path)
