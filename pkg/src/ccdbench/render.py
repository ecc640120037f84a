"""Figure-data export: ROC/PR curve points, greyscale map exports and
matplotlib report figures for a stored trial."""

import os

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .io import read_raster, write_curve_csv


def roc_points(scores, truth):
    """ROC curve (pfa, pd) with tied scores grouped; starts at (0,0) and
    ends at (1,1). The trapezoid integral equals the Mann-Whitney AUC."""
    scores = np.asarray(scores, dtype=float).ravel()
    truth = np.asarray(truth, dtype=bool).ravel()
    n_pos = truth.sum()
    n_neg = truth.size - n_pos
    order = np.argsort(-scores, kind="mergesort")
    y = truth[order].astype(float)
    s = scores[order]
    tp = np.cumsum(y)
    fp = np.cumsum(1.0 - y)
    last = np.r_[np.flatnonzero(np.diff(s)), s.size - 1]
    pd = np.r_[0.0, tp[last] / n_pos]
    pfa = np.r_[0.0, fp[last] / n_neg]
    return np.column_stack([pfa, pd])


def pr_points(scores, truth):
    """Precision-recall points with tied scores grouped, starting at (0, 1)."""
    scores = np.asarray(scores, dtype=float).ravel()
    truth = np.asarray(truth, dtype=bool).ravel()
    n_pos = truth.sum()
    order = np.argsort(-scores, kind="mergesort")
    y = truth[order].astype(float)
    s = scores[order]
    tp = np.cumsum(y)
    fp = np.cumsum(1.0 - y)
    last = np.r_[np.flatnonzero(np.diff(s)), s.size - 1]
    recall = np.r_[0.0, tp[last] / n_pos]
    precision = np.r_[1.0, tp[last] / (tp[last] + fp[last])]
    return np.column_stack([recall, precision])


def export_greyscale(plane, png_path, scale_path):
    """8-bit min-max scaled export; the scale is recorded in a sidecar file."""
    lo, hi = float(np.min(plane)), float(np.max(plane))
    if hi > lo:
        img = np.round((plane - lo) / (hi - lo) * 255.0).astype(np.uint8)
    else:
        img = np.zeros(plane.shape, dtype=np.uint8)
    matplotlib.image.imsave(png_path, img, cmap="gray", vmin=0, vmax=255)
    with open(scale_path, "w") as fh:
        fh.write(f"min {lo!r}\nmax {hi!r}\n")


def render_trial(trial_dir, out_dir=None):
    """Emit ROC/PR point CSVs, greyscale map exports and summary figures
    from the rasters stored by the simulate command."""
    out_dir = out_dir or trial_dir
    feat_path = os.path.join(trial_dir, "features.rst")
    score_path = os.path.join(trial_dir, "scores.rst")
    truth_path = os.path.join(trial_dir, "truth.rst")
    for path in (feat_path, score_path, truth_path):
        if not os.path.exists(path):
            raise FileNotFoundError(f"missing trial artifact {path}")
    features = read_raster(feat_path)
    score_maps = read_raster(score_path)
    truth = read_raster(truth_path)["change_mask"] > 0.5

    os.makedirs(out_dir, exist_ok=True)
    for name, plane in {**features, **score_maps}.items():
        export_greyscale(plane, os.path.join(out_dir, f"map_{name}.png"),
                         os.path.join(out_dir, f"map_{name}.scale.txt"))
    export_greyscale(truth.astype(float), os.path.join(out_dir, "mask_truth.png"),
                     os.path.join(out_dir, "mask_truth.scale.txt"))

    for det, scores in score_maps.items():
        write_curve_csv(os.path.join(out_dir, f"roc_{det}.csv"),
                        ["pfa", "pd"], roc_points(scores, truth))
        write_curve_csv(os.path.join(out_dir, f"pr_{det}.csv"),
                        ["recall", "precision"], pr_points(scores, truth))

    _figure_maps(features, score_maps, truth,
                 os.path.join(out_dir, "maps.png"))
    _figure_curves(score_maps, truth, os.path.join(out_dir, "curves.png"))


def _figure_maps(features, score_maps, truth, path):
    panels = [("log_I1", features.get("log_I1")),
              ("log_I2", features.get("log_I2")),
              ("coherence_mag", features.get("coherence_mag"))]
    panels += [(d, s) for d, s in score_maps.items()]
    panels = [(n, p) for n, p in panels if p is not None]
    n = len(panels)
    ncols = min(4, n)
    nrows = -(-n // ncols)
    fig, axes = plt.subplots(nrows, ncols, figsize=(3.2 * ncols, 3.2 * nrows),
                             squeeze=False)
    for ax, (name, plane) in zip(axes.ravel(), panels):
        ax.imshow(plane, cmap="gray")
        ax.contour(truth, levels=[0.5], colors="red", linewidths=0.8)
        ax.set_title(name, fontsize=9)
        ax.set_axis_off()
    for ax in axes.ravel()[n:]:
        ax.set_axis_off()
    fig.tight_layout()
    fig.savefig(path, dpi=140)
    plt.close(fig)


def _figure_curves(score_maps, truth, path):
    fig, (ax_roc, ax_pr) = plt.subplots(1, 2, figsize=(9, 4))
    for det, scores in score_maps.items():
        roc = roc_points(scores, truth)
        pr = pr_points(scores, truth)
        ax_roc.plot(roc[:, 0], roc[:, 1], label=det, lw=1.2)
        ax_pr.plot(pr[:, 0], pr[:, 1], label=det, lw=1.2)
    ax_roc.plot([0, 1], [0, 1], "k--", lw=0.6)
    ax_roc.set_xlabel("PFA")
    ax_roc.set_ylabel("PD")
    ax_roc.set_title("ROC")
    ax_pr.set_xlabel("recall")
    ax_pr.set_ylabel("precision")
    ax_pr.set_title("PR")
    ax_roc.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=140)
    plt.close(fig)


def render_sweep(levels, stats_by_level, factor, metric, detectors, path):
    """Line plot of a metric against swept factor levels per detector."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for det in detectors:
        ys = [stats_by_level[lvl][det][metric][0] for lvl in levels]
        los = [stats_by_level[lvl][det][metric][1] for lvl in levels]
        his = [stats_by_level[lvl][det][metric][2] for lvl in levels]
        ax.plot(levels, ys, marker="o", label=det)
        ax.fill_between(levels, los, his, alpha=0.2)
    ax.set_xlabel(factor)
    ax.set_ylabel(metric)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=140)
    plt.close(fig)
