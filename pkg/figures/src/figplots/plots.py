"""Matplotlib figure regeneration from benchmark CSVs.

Point annotations carry the exact CSV values (``repr`` of the parsed float)
so figures can be checked losslessly against their source data.
"""

from __future__ import annotations

import csv
import warnings

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .results import ResultsTable


def _annotate(ax, x, y, value):
    ax.annotate(repr(value), (x, y), textcoords="offset points",
                xytext=(4, 4), fontsize=7)


def plot_rmse_vs_gamma(results_csv, out_image, tau: int = 1) -> None:
    """One normalized-RMSE line per model over the symmetric gamma grid."""
    table = ResultsTable.from_csv(results_csv)
    gammas = table.symmetric_gammas()
    if len(gammas) < 2:
        raise ValueError(f"need at least 2 symmetric gamma values, "
                         f"found {gammas}")
    fig, ax = plt.subplots(figsize=(6, 4))
    plotted = False
    for model in table.models():
        xs, ys = [], []
        for g in gammas:
            v = table.value(g, g, model, tau, "rmse")
            if v is not None:
                xs.append(g)
                ys.append(v)
        if not xs:
            continue
        ax.plot(xs, ys, marker="o", label=model)
        for x, y in zip(xs, ys):
            _annotate(ax, x, y, y)
        plotted = True
    if not plotted:
        plt.close(fig)
        raise ValueError(f"no rmse rows at tau={tau}")
    ax.set_xlabel("degree of time-dependent confounding (gamma)")
    ax.set_ylabel("normalized RMSE (%)")
    ax.set_title(f"counterfactual prediction error, tau={tau}")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_image)
    plt.close(fig)


def plot_multistep_rmse(results_csv, out_image) -> None:
    """One panel per gamma setting: RMSE against horizon, line per model."""
    table = ResultsTable.from_csv(results_csv)
    settings = table.gamma_settings()
    taus = table.taus("rmse")
    if len(taus) < 2:
        raise ValueError(f"need at least 2 horizons, found {taus}")
    fig, axes = plt.subplots(1, len(settings),
                             figsize=(4 * len(settings), 3.5), squeeze=False)
    for ax, (gc, gr) in zip(axes[0], settings):
        for model in table.models():
            pts = [(t, table.value(gc, gr, model, t, "rmse"))
                   for t in taus]
            pts = [(t, v) for t, v in pts if v is not None]
            if not pts:
                continue
            ax.plot(*zip(*pts), marker="o", label=model)
            for t, v in pts:
                _annotate(ax, t, v, v)
        ax.set_title(f"gamma_c={gc:g}, gamma_r={gr:g}")
        ax.set_xlabel("horizon tau")
        ax.set_ylabel("normalized RMSE (%)")
        ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(out_image)
    plt.close(fig)


PROJECTION_METHOD = "t-SNE"


def project_representations(repr_csv, out_image, seed: int = 0,
                            perplexity: float = 30.0,
                            max_rows: int = 2000) -> np.ndarray:
    """2-D embedding of exported representations, colored by treatment.

    Deterministic for a fixed seed.  Returns the (n, 2) embedding.
    """
    from sklearn.manifold import TSNE

    with open(repr_csv) as f:
        rows = list(csv.DictReader(f))
    if len(rows) < 50:
        raise ValueError(f"need at least 50 representation rows, "
                         f"got {len(rows)}")
    phi_cols = sorted((c for c in rows[0] if c.startswith("phi_")),
                      key=lambda c: int(c.split("_")[1]))
    X = np.array([[float(r[c]) for c in phi_cols] for r in rows])
    labels = np.array([int(r["treatment"]) for r in rows])
    if len(X) > max_rows:
        keep = np.random.default_rng(seed).choice(len(X), max_rows,
                                                  replace=False)
        X, labels = X[keep], labels[keep]
    if np.allclose(X.std(axis=0), 0.0):
        warnings.warn("representations are constant; projection is "
                      "degenerate", stacklevel=2)
        X = X + np.random.default_rng(seed).normal(scale=1e-9, size=X.shape)
    perplexity = min(perplexity, (len(X) - 1) / 3)
    emb = TSNE(n_components=2, random_state=seed, perplexity=perplexity,
               init="pca").fit_transform(X)
    fig, ax = plt.subplots(figsize=(5, 5))
    names = {0: "none", 1: "chemo", 2: "radio", 3: "chemo+radio"}
    for cls in sorted(set(labels)):
        m = labels == cls
        ax.scatter(emb[m, 0], emb[m, 1], s=6, alpha=0.6,
                   label=names.get(cls, str(cls)))
    ax.legend(title="treatment")
    ax.set_title("2-D projection of balancing representations")
    fig.text(0.01, 0.01,
             f"{PROJECTION_METHOD}, perplexity={perplexity:g}, seed={seed}",
             fontsize=6)
    fig.tight_layout()
    fig.savefig(out_image)
    plt.close(fig)
    return emb
