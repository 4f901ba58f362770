"""Panel rendering: each known CSV kind maps to one matplotlib figure.

Rendering is read-only and deterministic: fixed style, fixed color maps,
no timestamps in image metadata, and no statistic is ever recomputed from
the data (theory curves come from the CSVs themselves).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .schema import SchemaMismatch, load

_METADATA = {"Software": "render-figures"}
_DPI = 130


@dataclass(frozen=True)
class PanelSpec:
    source_csv: Path
    kind: str  # heatmap | profile | field | histogram
    output_image: Path
    title: str = ""
    companion_csv: Path | None = None  # refcurve / theory file, if any


def _save(fig, spec: PanelSpec) -> Path:
    out = Path(spec.output_image)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out, dpi=_DPI, metadata=_METADATA)
    plt.close(fig)
    return out


def _render_heatmap(spec: PanelSpec):
    table = load(spec.source_csv, "heatmap")
    fig, ax = plt.subplots(figsize=(5.2, 4.2))
    if table.nrows:
        ns = np.unique(table.col("n"))
        betas = np.unique(table.col("beta"))
        grid = np.full((betas.size, ns.size), np.nan)
        for n, b, v in zip(table.col("n"), table.col("beta"), table.col("mean_A1")):
            grid[np.searchsorted(betas, b), np.searchsorted(ns, n)] = v
        mesh = ax.pcolormesh(ns, betas, grid, cmap="viridis", vmin=0.0, vmax=1.0,
                             shading="nearest")
        fig.colorbar(mesh, ax=ax, label="mean largest weight")
        ax.set_xscale("log")
        if np.all(betas > 0):
            ax.set_yscale("log")
        if spec.companion_csv is not None and Path(spec.companion_csv).exists():
            ref = load(spec.companion_csv, "heatmap_refcurve")
            ax.plot(ref.col("n"), ref.col("beta_ref"), "w--", lw=1.6,
                    label="critical reference")
            ax.legend(loc="upper left", fontsize=8)
    ax.set_xlabel("context length n")
    ax.set_ylabel("inverse temperature beta")
    ax.set_title(spec.title or "largest attention weight")
    return _save(fig, spec)


def _render_profile(spec: PanelSpec):
    table = load(spec.source_csv, "profile")
    fig, ax = plt.subplots(figsize=(5.2, 4.2))
    if table.nrows:
        x = table.col("x")
        ax.fill_between(x, table.col("q25"), table.col("q75"),
                        alpha=0.25, color="tab:blue", label="interquartile")
        ax.plot(x, table.col("median_ratio"), "o-", ms=3.5, color="tab:blue",
                label="median ratio")
        ax.plot(x, table.col("theory_ratio"), "k--", lw=1.4, label="theory")
    ax.set_xlabel("rescaled rank x")
    ax.set_ylabel("weight ratio")
    ax.set_title(spec.title or "ordered-weight profile")
    ax.legend(fontsize=8)
    return _save(fig, spec)


def _render_field(spec: PanelSpec):
    table = load(spec.source_csv, "field")
    value_cols = table.columns[5:]
    ncols = len(value_cols)
    fig, axes = plt.subplots(2, ncols, figsize=(2.6 * ncols, 5.0),
                             squeeze=False)
    if table.nrows:
        lon = np.arctan2(table.col("qy"), table.col("qx"))
        lat = table.col("qz")
        u, v = table.col("chart_u"), table.col("chart_v")
        vmax = max(float(np.max(np.abs(table.col(c)))) for c in value_cols) or 1.0
        for j, colname in enumerate(value_cols):
            vals = table.col(colname)
            axes[0][j].scatter(lon, lat, c=vals, s=14, cmap="coolwarm",
                               vmin=-vmax, vmax=vmax)
            axes[1][j].scatter(u, v, c=vals, s=14, cmap="coolwarm",
                               vmin=-vmax, vmax=vmax)
            axes[0][j].set_title(colname, fontsize=8)
    for j in range(ncols):
        axes[0][j].set_xticks([])
        axes[0][j].set_yticks([])
        axes[1][j].set_xticks([])
        axes[1][j].set_yticks([])
    axes[0][0].set_ylabel("sphere (lon, z)", fontsize=8)
    axes[1][0].set_ylabel("geodesic chart", fontsize=8)
    fig.suptitle(spec.title or "rescaled output field")
    return _save(fig, spec)


def _render_histogram(spec: PanelSpec):
    table = load(spec.source_csv, "histogram")
    fig, ax = plt.subplots(figsize=(5.2, 4.2))
    if table.nrows:
        ax.hist(table.col("a_n_T1"), bins=40, density=True, alpha=0.6,
                color="tab:blue", label="rescaled nearest score")
        if spec.companion_csv is not None and Path(spec.companion_csv).exists():
            theory = load(spec.companion_csv, "histogram_theory")
            ax.plot(theory.col("r"), theory.col("weibull_pdf"), "k--", lw=1.4,
                    label="limit density")
    ax.set_xlabel("rescaled nearest distance-to-query")
    ax.set_ylabel("density")
    ax.set_title(spec.title or "nearest-score law")
    ax.legend(fontsize=8)
    return _save(fig, spec)


_RENDERERS = {
    "heatmap": _render_heatmap,
    "profile": _render_profile,
    "field": _render_field,
    "histogram": _render_histogram,
}


def render(spec: PanelSpec) -> Path:
    """Render one panel; raises SchemaMismatch on malformed input."""
    if spec.kind not in _RENDERERS:
        raise SchemaMismatch(f"unknown panel kind {spec.kind!r}")
    return _RENDERERS[spec.kind](spec)


def contact_sheet(images, output_image) -> Path:
    """Combine rendered panels into one overview image."""
    images = [Path(p) for p in images]
    n = len(images)
    if n == 0:
        fig = plt.figure(figsize=(4, 3))
    else:
        cols = min(n, 2)
        rows = (n + cols - 1) // cols
        fig, axes = plt.subplots(rows, cols, figsize=(6.4 * cols, 4.8 * rows),
                                 squeeze=False)
        for ax in axes.flat:
            ax.axis("off")
        for ax, img in zip(axes.flat, images):
            ax.imshow(plt.imread(img))
            ax.set_title(img.stem, fontsize=9)
    out = Path(output_image)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out, dpi=_DPI, metadata=_METADATA)
    plt.close(fig)
    return out
