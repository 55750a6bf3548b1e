"""Static SVG figures rendered from the analysis JSON.

Output is byte-stable: the SVG date stamp is dropped and element ids are
salted with a constant, so the same JSON always yields the same file.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

import matplotlib

matplotlib.use("svg")
import matplotlib.pyplot as plt  # noqa: E402

_RC = {"svg.hashsalt": "sgfa", "svg.fonttype": "path", "font.size": 9}
_META = {"Date": None, "Creator": None}


def _save(fig, path):
    fig.savefig(path, format="svg", metadata=_META)
    plt.close(fig)
    return Path(path)


def contributions_plot(analysis: dict, path) -> Path:
    """Grouped bars: per robust factor, its contribution from each subgroup."""
    factors = analysis["robust"]["factors"]
    groups = analysis.get("groups") or []
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(max(3.0, 1.2 * len(factors) + 1.5), 3.0))
        if factors and groups:
            C = np.array([f["contributions"] for f in factors])
            width = 0.8 / len(groups)
            x = np.arange(len(factors))
            for g, name in enumerate(groups):
                ax.bar(x + (g - (len(groups) - 1) / 2) * width, C[:, g], width, label=f"subgroup {name}")
            ax.set_xticks(x, [f"factor {k + 1}" for k in range(len(factors))])
            ax.axhline(1.0 / len(groups), color="0.5", lw=0.8, ls="--")
            ax.legend(frameon=False, fontsize=7)
        else:
            ax.text(0.5, 0.5, "no robust factors" if not factors else "no subgroup labels",
                    ha="center", va="center", transform=ax.transAxes)
        ax.set_ylabel("contribution")
        ax.set_ylim(0, 1)
        fig.tight_layout()
        return _save(fig, path)


def scores_plot(analysis: dict, path) -> Path:
    """Box plots of absolute latent scores by subgroup, one panel per robust factor."""
    factors = analysis["robust"]["factors"]
    groups = analysis.get("groups") or []
    labels = analysis.get("labels")
    n = max(1, len(factors))
    with plt.rc_context(_RC):
        fig, axes = plt.subplots(1, n, figsize=(2.2 * n + 0.5, 2.8), squeeze=False)
        if not factors or labels is None:
            axes[0, 0].text(0.5, 0.5, "nothing to show", ha="center", va="center",
                            transform=axes[0, 0].transAxes)
        else:
            labels = np.asarray(labels, dtype=object)
            for k, (f, ax) in enumerate(zip(factors, axes[0])):
                z = np.abs(np.asarray(f["latent"]))
                ax.boxplot([z[labels == g] for g in groups], showfliers=False)
                ax.set_xticks(range(1, len(groups) + 1), [str(g) for g in groups])
                ax.set_title(f"factor {k + 1}")
                ax.set_xlabel("subgroup")
            axes[0, 0].set_ylabel("|latent score|")
        fig.tight_layout()
        return _save(fig, path)


def render_all(analysis: dict, directory) -> list:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    return [
        contributions_plot(analysis, directory / "contributions.svg"),
        scores_plot(analysis, directory / "abs_scores.svg"),
    ]
