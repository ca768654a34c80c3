"""Figures rendered next to the CSV reports (Agg backend, PNG only)."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

# fixed metadata keeps reruns byte-identical
_PNG_META = {"Software": None}

_STYLE = {
    "figure.dpi": 100,
    "font.size": 10,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.frameon": False,
}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, metadata=_PNG_META)
    plt.close(fig)
    return path


def plot_selection_histograms(df: pd.DataFrame, path) -> Path:
    with plt.rc_context(_STYLE):
        fig, axes = plt.subplots(1, 2, figsize=(10, 4))
        for ax, (name, label) in zip(axes, (("dphi_dr", r"$|\Delta\phi/\Delta r|$ [rad/mm]"), ("z0", r"$z_0$ [mm]"))):
            sub = df[(df["quantity"] == name) & np.isfinite(df["bin_lo"]) & np.isfinite(df["bin_hi"])]
            centers = 0.5 * (sub["bin_lo"] + sub["bin_hi"])
            width = (sub["bin_hi"] - sub["bin_lo"]).to_numpy()
            ax.bar(centers, sub["fake"], width=width, alpha=0.6, label="fake")
            ax.bar(centers, sub["true"], width=width, alpha=0.6, label="true")
            thr = float(sub["threshold"].iloc[0]) if len(sub) else np.nan
            if np.isfinite(thr):
                ax.axvline(thr, color="k", ls="--", lw=1)
                if name == "z0":
                    ax.axvline(-thr, color="k", ls="--", lw=1)
            ax.set_yscale("log")
            ax.set_xlabel(label)
            ax.set_ylabel("segments")
            ax.legend()
        return _save(fig, path)


def plot_descriptors(df: pd.DataFrame, path) -> Path:
    with plt.rc_context(_STYLE):
        fig, axes = plt.subplots(1, 2, figsize=(10, 4))
        stats = df.groupby(["family", "n_qubits", "n_layers"]).agg(
            Eprime=("Eprime", "mean"), Eprime_std=("Eprime", "std"),
            Ent=("Ent", "mean"), Ent_std=("Ent", "std")).reset_index().fillna(0.0)
        for (family, nq), sub in stats.groupby(["family", "n_qubits"]):
            label = f"{family} ({nq} qubits)"
            axes[0].errorbar(sub["n_layers"], sub["Eprime"], yerr=sub["Eprime_std"], marker="o", label=label)
            axes[1].errorbar(sub["n_layers"], sub["Ent"], yerr=sub["Ent_std"], marker="o", label=label)
        axes[0].set_ylabel(r"$E' = -\log_{10} E$")
        axes[1].set_ylabel("entangling capability")
        for ax in axes:
            ax.set_xlabel("layers")
            ax.legend()
        return _save(fig, path)


def plot_history(df: pd.DataFrame, path) -> Path:
    """Loss and AUC per epoch; ``df`` may hold several seeds (``seed`` column)."""
    with plt.rc_context(_STYLE):
        fig, axes = plt.subplots(1, 2, figsize=(10, 4))
        group_cols = ["split", "epoch"]
        stats = df.groupby(group_cols).agg(loss=("loss", "mean"), loss_std=("loss", "std"),
                                           auc=("auc", "mean"), auc_std=("auc", "std")).reset_index().fillna(0.0)
        for split, sub in stats.groupby("split"):
            for ax, col in zip(axes, ("loss", "auc")):
                ax.plot(sub["epoch"], sub[col], marker="o", label=split)
                ax.fill_between(sub["epoch"], sub[col] - sub[col + "_std"], sub[col] + sub[col + "_std"], alpha=0.2)
        axes[0].set_ylabel("BCE loss")
        axes[1].set_ylabel("ROC AUC")
        for ax in axes:
            ax.set_xlabel("epoch")
            ax.legend()
        return _save(fig, path)


def plot_sweep(df: pd.DataFrame, column: str, path) -> Path:
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(6, 4))
        for (mode, preset), sub in df.groupby(["mode", "preset"], sort=True):
            x = sub[column].astype(str) if sub[column].dtype == object else sub[column]
            ax.errorbar(x, sub["mean_best_loss"], yerr=sub["std"], marker="o", capsize=3, label=f"{preset} ({mode})")
        ax.set_xlabel(column)
        ax.set_ylabel("best validation loss")
        ax.legend()
        return _save(fig, path)


def plot_scores(df: pd.DataFrame, threshold: float, path) -> Path:
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(6, 4))
        bins = np.linspace(0.0, 1.0, 41)
        ax.hist(df.loc[df["y"] == 0, "score"], bins=bins, alpha=0.6, label="fake")
        ax.hist(df.loc[df["y"] == 1, "score"], bins=bins, alpha=0.6, label="true")
        ax.axvline(threshold, color="k", ls="--", lw=1)
        ax.set_yscale("log")
        ax.set_xlabel("edge score")
        ax.set_ylabel("edges")
        ax.legend()
        return _save(fig, path)
