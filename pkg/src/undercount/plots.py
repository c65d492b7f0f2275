"""Figure rendering for the CLI report path. All output goes to files."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")  # headless; must precede pyplot import

import matplotlib.pyplot as plt
import numpy as np


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)
    return path


def reported_histogram(data, path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    x = data.x
    ax.hist(x, bins=np.arange(-0.5, x.max() + 1.5), color="#4878a8", edgecolor="white")
    ax.set_xlabel("reported count")
    ax.set_ylabel("records")
    ax.set_title(f"Reported counts ({data.n_schools} schools, {data.n_records} records)")
    return _save(fig, path)


def yearly_bands(frame, kind: str, path) -> Path:
    """Yearly posterior bands; kind is 'incidence_per_1000' or 'reporting_rate'."""
    fig, ax = plt.subplots(figsize=(6.5, 4))
    years = frame["year"].to_numpy()
    med = frame[f"{kind}_median"].to_numpy()
    ax.fill_between(years, frame[f"{kind}_q025"], frame[f"{kind}_q975"],
                    alpha=0.25, color="#4878a8", label="95% interval")
    ax.fill_between(years, frame[f"{kind}_q25"], frame[f"{kind}_q75"],
                    alpha=0.45, color="#4878a8", label="50% interval")
    ax.plot(years, med, color="#1f3d5c", marker="o", label="median")
    ax.set_xlabel("year")
    ax.set_ylabel(kind.replace("_", " "))
    ax.set_xticks(years)
    ax.legend(frameon=False, fontsize=8)
    return _save(fig, path)


def record_median_panels(frame, path) -> Path:
    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    axes[0].hist(frame["incidence_per_1000_median"], bins=40, color="#4878a8", edgecolor="white")
    axes[0].set_xlabel("posterior median incidence per 1000")
    axes[0].set_ylabel("records")
    axes[1].hist(frame["reporting_rate_median"], bins=np.linspace(0, 1, 41),
                 color="#a85448", edgecolor="white")
    axes[1].set_xlabel("posterior median reporting rate")
    return _save(fig, path)


def ppc_panels(report, path) -> Path:
    fig, axes = plt.subplots(2, 2, figsize=(10, 7))
    for ax, (name, stat) in zip(axes.ravel(), report.stats.items()):
        ax.hist(stat.draws, bins=40, color="#4878a8", edgecolor="white")
        ax.axvline(stat.observed, color="#a82a2a", lw=2, label="observed")
        ax.axvline(stat.q025, color="#555555", ls="--", lw=1)
        ax.axvline(stat.q975, color="#555555", ls="--", lw=1)
        ax.set_title(f"{name} (tail prob {stat.tail_prob:.3f})", fontsize=10)
        ax.legend(frameon=False, fontsize=8)
    fig.suptitle("Posterior predictive checks on held-out records")
    return _save(fig, path)


def constant_z_bars(report, path) -> Path:
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.bar(report.support, report.pmf, color="#4878a8", width=0.9)
    ax.axvline(report.observed, color="#a82a2a", lw=2,
               label=f"observed {report.observed}")
    ax.set_xlabel("next-cycle reported count")
    ax.set_ylabel("probability")
    ax.set_title(
        f"{report.school_id} {report.base_year}: "
        f"P(increase) = {report.prob_increase:.2f}, "
        f"P(at least double) = {report.prob_at_least_double:.2f}",
        fontsize=10,
    )
    ax.legend(frameon=False, fontsize=8)
    return _save(fig, path)


def pooling_comparison(results: dict, path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    names = list(results)
    values = [results[n].value for n in names]
    errs = [results[n].mc_se for n in names]
    ax.errorbar(range(len(names)), values, yerr=errs, fmt="o", color="#1f3d5c", capsize=4)
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names)
    ax.set_ylabel("held-out log likelihood")
    ax.set_title("Pooling comparison")
    return _save(fig, path)


def rhat_panel(diag_frame, path) -> Path:
    fig, ax = plt.subplots(figsize=(6.5, 4))
    vals = diag_frame["rhat"].replace([np.inf, -np.inf], np.nan).dropna()
    ax.hist(vals, bins=40, color="#4878a8", edgecolor="white")
    ax.axvline(1.01, color="#a82a2a", ls="--", lw=1, label="1.01")
    ax.set_xlabel("split R-hat")
    ax.set_ylabel("parameters")
    ax.legend(frameon=False, fontsize=8)
    return _save(fig, path)
