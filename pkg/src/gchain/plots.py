"""Figure rendering for the lab reports.

Every figure is written as a PNG through the Agg backend with a fixed
metadata block, so rerunning the same experiment reproduces the file
byte for byte.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .varlab import bound_curve  # noqa: E402

_PNG_META = {"Software": "gchain"}
_PLUS_COLOR = "#1f77b4"
_MINUS_COLOR = "#d62728"


def _save(fig, path) -> None:
    fig.savefig(path, format="png", dpi=110, metadata=_PNG_META)
    plt.close(fig)


def variation_figure(table, report, path) -> None:
    """Bound curve plus the dyadic decay diagnostic of one LpReport."""
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9.6, 3.8))
    js = np.unique(np.geomspace(1, max(report.j_max, 2), 400).astype(np.int64))
    ax1.loglog(js, bound_curve(table, js), lw=1.4, color=_PLUS_COLOR)
    ax1.set_xlabel("depth j")
    ax1.set_ylabel("variation cap")
    ax1.set_title("analytic cap")
    ax1.grid(True, which="both", alpha=0.3)

    ratios = report.dyadic_ratios
    if ratios:
        ax2.plot(range(1, len(ratios) + 1), ratios, "o-", ms=3.5,
                 color=_MINUS_COLOR, lw=1.2)
    ax2.axhline(1.0, color="gray", lw=1.0, ls="--")
    ax2.set_xlabel("dyadic block index")
    ax2.set_ylabel("block-sum ratio")
    ax2.set_title(f"p = {report.p:g} decay (p* = {report.p_star:g})")
    ax2.grid(True, alpha=0.3)
    fig.tight_layout()
    _save(fig, path)


def blockstats_figure(hist, path) -> None:
    """Tail bucket masses against the target envelope, log scale."""
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    js = np.arange(len(hist.bucket_masses))
    ax.bar(js, hist.bucket_masses, width=0.62, color=_PLUS_COLOR,
           alpha=0.8, label="observed mass")
    ax.errorbar(js, hist.bucket_masses, yerr=3 * hist.bucket_se,
                fmt="none", ecolor="black", capsize=3, lw=1)
    hi = (5.0 / 2.0) ** (-js.astype(float))
    lo = 2.0 ** (-2.0 * js - 2.0)
    ax.step(np.append(js - 0.5, js[-1] + 0.5), np.append(hi, hi[-1]),
            where="post", color=_MINUS_COLOR, lw=1.2, label="upper envelope")
    ax.step(np.append(js - 0.5, js[-1] + 0.5), np.append(lo, lo[-1]),
            where="post", color="green", lw=1.2, label="lower envelope")
    ax.set_yscale("log")
    ax.set_xlabel("bucket j  (length in (j, j+1] renewal spans)")
    ax.set_ylabel("probability mass")
    ax.set_title(f"scale {hist.k} length tail, n = {hist.sample_count}")
    ax.legend(fontsize=8)
    fig.tight_layout()
    _save(fig, path)


def phase_figure(contrast, path) -> None:
    """Per-seed top-scale means by boundary and per-scale agreement."""
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9.6, 3.8))
    n = len(contrast.seeds)
    jit = np.linspace(-0.12, 0.12, n) if n > 1 else np.zeros(1)
    ax1.scatter(np.zeros(n) + jit, contrast.plus_means, s=26,
                color=_PLUS_COLOR, label="PlusWall")
    ax1.scatter(np.ones(n) + jit, contrast.minus_means, s=26,
                color=_MINUS_COLOR, marker="x", label="MinusWall")
    for mean, ci, xpos, col in (
        (contrast.plus_mean, contrast.plus_ci, 0.32, _PLUS_COLOR),
        (contrast.minus_mean, contrast.minus_ci, 1.32, _MINUS_COLOR),
    ):
        ax1.plot([xpos], [mean], "_", ms=18, color=col)
        if np.isfinite(ci[0]) and np.isfinite(ci[1]):
            ax1.vlines(xpos, ci[0], ci[1], color=col, lw=2, alpha=0.6)
    ax1.axhline(0.0, color="gray", lw=0.8, ls=":")
    ax1.set_xticks([0, 1], ["PlusWall", "MinusWall"])
    ax1.set_ylabel("top-scale mean signature")
    ax1.set_ylim(-1.05, 1.05)
    ax1.set_title(f"{n} seeds, {contrast.steps} steps")
    ax1.legend(fontsize=8)

    for boundary, col in (("PlusWall", _PLUS_COLOR), ("MinusWall", _MINUS_COLOR)):
        reps = [r for r in contrast.reports if r.boundary == boundary]
        if not reps:
            continue
        ks = sorted(reps[0].agreement_rate)
        if not ks:
            continue
        mat = np.array([[r.agreement_rate[k] for k in ks] for r in reps])
        ax2.plot(ks, mat.mean(axis=0), "o-", ms=4, lw=1.2, color=col,
                 label=boundary)
    ax2.axhline(0.5, color="gray", lw=0.8, ls=":")
    ax2.set_xlabel("scale k")
    ax2.set_ylabel("agreement rate  X(B_k) = X(B_{k+1})")
    ax2.set_ylim(0.0, 1.05)
    ax2.set_title("cross-scale signature agreement")
    ax2.legend(fontsize=8)
    fig.tight_layout()
    _save(fig, path)
