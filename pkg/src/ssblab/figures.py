"""Matplotlib renderings of the report artifacts.

One PNG per diagnostic, written next to the delimited report output:
impression-ratio imbalance by group, loss-term curves, the adversary-AUC
trajectory, and variant comparison bars.  All functions take plain data
and a target path, render with the Agg backend, and return the path.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

__all__ = ["fig_ir_groups", "fig_loss_curves", "fig_adversary_auc",
           "fig_variant_bars", "fig_group_auc"]


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def fig_ir_groups(group_means: list[float], uniform_level: float | None,
                  path: str | Path) -> Path:
    """Average impression ratio per descending-IR ad group, against the
    flat line an unbiased policy would produce."""
    fig, ax = plt.subplots(figsize=(5, 3.2))
    xs = range(1, len(group_means) + 1)
    ax.plot(xs, group_means, "o-", color="crimson", label="logged policy")
    if uniform_level is not None:
        ax.axhline(uniform_level, color="steelblue", ls="--", label="uniform policy")
    ax.set_xlabel("ad group (descending IR)")
    ax.set_ylabel("mean impression ratio")
    ax.set_yscale("log")
    ax.legend()
    return _save(fig, path)


def fig_loss_curves(curves_by_variant: dict[str, list[dict]], path: str | Path) -> Path:
    fig, axes = plt.subplots(1, 3, figsize=(10, 3.2), sharex=True)
    for name, rows in sorted(curves_by_variant.items()):
        epochs = [r["epoch"] for r in rows]
        for ax, key in zip(axes, ("l_c", "l_a", "l_d")):
            ax.plot(epochs, [r.get(key, float("nan")) for r in rows], label=name)
    for ax, title in zip(axes, ("prediction loss", "alignment loss", "decorrelation loss")):
        ax.set_title(title)
        ax.set_xlabel("epoch")
    axes[0].legend(fontsize=8)
    return _save(fig, path)


def fig_adversary_auc(curves_by_variant: dict[str, list[dict]], path: str | Path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.2))
    for name, rows in sorted(curves_by_variant.items()):
        pts = [(r["epoch"], r["adversary_auc"]) for r in rows
               if r.get("adversary_auc") == r.get("adversary_auc")]   # drop NaN
        if pts:
            ax.plot(*zip(*pts), "o-", ms=3, label=name)
    ax.axhline(0.5, color="gray", ls=":")
    ax.set_xlabel("epoch")
    ax.set_ylabel("source-discriminator AUC")
    ax.set_ylim(0.35, 1.0)
    if ax.lines:
        ax.legend(fontsize=8)
    return _save(fig, path)


def fig_variant_bars(comparison, path: str | Path) -> Path:
    """Mean AUC and ECE per variant with seed-level std error bars."""
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8, 3.2))
    names = [v.variant for v in comparison.variants]
    xs = range(len(names))
    ax1.bar(xs, [v.auc_mean for v in comparison.variants],
            yerr=[v.auc_std for v in comparison.variants], color="steelblue")
    ax1.set_xticks(xs, names, rotation=30, ha="right")
    ax1.set_title("AUC (uniform test)")
    lo = min(v.auc_mean for v in comparison.variants)
    hi = max(v.auc_mean for v in comparison.variants)
    pad = max(1e-3, (hi - lo) * 0.5)
    ax1.set_ylim(lo - pad, hi + pad)
    ax2.bar(xs, [v.ece_mean for v in comparison.variants],
            yerr=[v.ece_std for v in comparison.variants], color="darkorange")
    ax2.set_xticks(xs, names, rotation=30, ha="right")
    ax2.set_title("ECE (uniform test)")
    return _save(fig, path)


def fig_group_auc(comparison, path: str | Path) -> Path:
    """Per-IR-group AUC bars per variant (G_top .. G_bottom)."""
    labels = sorted({lab for v in comparison.variants for lab in v.groups},
                    key=lambda s: (s != "G_top", s))
    fig, ax = plt.subplots(figsize=(6, 3.2))
    width = 0.8 / max(1, len(comparison.variants))
    for i, v in enumerate(comparison.variants):
        vals = [v.groups.get(lab, {}).get("auc_mean") for lab in labels]
        xs = [j + i * width for j in range(len(labels))]
        ax.bar(xs, [x if x is not None else 0.0 for x in vals], width, label=v.variant)
    ax.set_xticks([j + 0.4 - width / 2 for j in range(len(labels))], labels)
    ax.set_ylabel("AUC")
    vals = [v.groups[lab]["auc_mean"] for v in comparison.variants
            for lab in v.groups if v.groups[lab].get("auc_mean") is not None]
    if vals:
        ax.set_ylim(min(vals) - 0.01, max(vals) + 0.01)
    ax.legend(fontsize=8)
    return _save(fig, path)
