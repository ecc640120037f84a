"""Score standardization, score-level fusion, PFA-anchored thresholding,
morphological cleanup, and detection metrics."""

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .detectors import InsufficientDataError, ScoreMap


class UndefinedMetricError(ValueError):
    pass


@dataclass
class FusionWeights:
    detectors: tuple
    weights: np.ndarray
    intercept: float = 0.0

    def __post_init__(self):
        if len(self.detectors) < 2:
            raise ValueError("fusion needs at least two detectors")
        if not np.all(np.isfinite(self.weights)):
            raise ValueError("weights must be finite")


@dataclass
class MetricReport:
    detector: str
    roc_auc: float
    ap: float
    f1: float
    pfa_target: float
    threshold: float


def znorm(smap: ScoreMap) -> ScoreMap:
    """Standardize over valid pixels; constant maps come back degenerate."""
    valid = smap.valid_mask
    if valid.sum() < 2:
        raise InsufficientDataError("need at least 2 valid pixels")
    vals = smap.scores[valid]
    std = vals.std()
    if std == 0.0:
        return ScoreMap(detector=smap.detector, scores=np.zeros_like(smap.scores),
                        valid_mask=valid.copy(), degenerate=True)
    out = np.zeros_like(smap.scores)
    out[valid] = (vals - vals.mean()) / std
    return ScoreMap(detector=smap.detector, scores=out, valid_mask=valid.copy())


def fuse(maps, weights: FusionWeights, name="fused") -> ScoreMap:
    """Weighted sum of z-normalized maps; validity is the intersection."""
    by_name = {m.detector: m for m in maps}
    shapes = {m.scores.shape for m in maps}
    if len(shapes) != 1:
        raise ValueError("score maps must share dimensions")
    out = np.full(maps[0].scores.shape, weights.intercept, dtype=float)
    valid = np.ones(out.shape, dtype=bool)
    for det, wgt in zip(weights.detectors, weights.weights):
        m = by_name[det]
        out += wgt * m.scores
        valid &= m.valid_mask
    return ScoreMap(detector=name, scores=out, valid_mask=valid)


def _stratified_sample(shape, fraction, rng, block=8):
    """Boolean pixel mask from a random block-stratified sample."""
    h, w = shape
    by = -(-h // block)
    bx = -(-w // block)
    n_blocks = by * bx
    n_pick = max(1, int(round(fraction * n_blocks)))
    picks = rng.choice(n_blocks, size=n_pick, replace=False)
    mask = np.zeros((by, bx), dtype=bool)
    mask[np.unravel_index(picks, (by, bx))] = True
    return mask.repeat(block, axis=0).repeat(block, axis=1)[:h, :w]


def learn_weights(maps, truth_mask, calib_fraction=0.1, seed=0,
                  l2=1e-3, max_iter=100) -> FusionWeights:
    """Logistic regression (IRLS) on a spatially stratified calibration
    subset of pixels."""
    if not 0.0 < calib_fraction <= 0.5:
        raise ValueError("calib_fraction must lie in (0, 0.5]")
    truth_mask = np.asarray(truth_mask, dtype=bool)
    rng = np.random.Generator(np.random.Philox(key=seed))
    sample = _stratified_sample(truth_mask.shape, calib_fraction, rng)
    valid = np.ones(truth_mask.shape, dtype=bool)
    for m in maps:
        valid &= m.valid_mask
    sel = sample & valid

    y = truth_mask[sel].astype(float)
    if y.min() == y.max():
        raise InsufficientDataError("calibration sample contains a single class")
    x = np.column_stack([m.scores[sel] for m in maps])
    x = np.column_stack([x, np.ones(len(y))])

    beta = np.zeros(x.shape[1])
    penalty = l2 * np.eye(x.shape[1])
    penalty[-1, -1] = 0.0  # no penalty on the intercept
    for _ in range(max_iter):
        z = x @ beta
        p = 1.0 / (1.0 + np.exp(-np.clip(z, -35, 35)))
        wgt = np.maximum(p * (1.0 - p), 1e-10)
        grad = x.T @ (p - y) + penalty @ beta
        hess = (x.T * wgt) @ x + penalty
        step = np.linalg.solve(hess, grad)
        beta = beta - step
        if np.abs(step).max() < 1e-10:
            break
    return FusionWeights(detectors=tuple(m.detector for m in maps),
                         weights=beta[:-1], intercept=float(beta[-1]))


def threshold_at_pfa(smap: ScoreMap, background_mask, pfa: float) -> float:
    """Empirical (1 - pfa) quantile of background scores, taken as the
    ceil((1-pfa)*n)-th order statistic so at most pfa*n background pixels
    exceed the threshold."""
    bg = smap.scores[np.asarray(background_mask, dtype=bool) & smap.valid_mask]
    if bg.size * pfa < 10:
        raise InsufficientDataError(
            f"{bg.size} background pixels cannot resolve pfa={pfa}")
    k = int(np.ceil((1.0 - pfa) * bg.size))
    srt = np.sort(bg)
    return float(srt[max(k, 1) - 1])


def morph_clean(mask, radius: int = 1) -> np.ndarray:
    """Binary opening then closing with a square structuring element."""
    if radius < 1:
        raise ValueError("radius must be >= 1")
    structure = np.ones((2 * radius + 1, 2 * radius + 1), dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    opened = ndimage.binary_opening(mask, structure=structure)
    return ndimage.binary_closing(opened, structure=structure)


def roc_auc(scores, truth) -> float:
    """Mann-Whitney AUC with half credit for ties."""
    scores = np.asarray(scores, dtype=float).ravel()
    truth = np.asarray(truth, dtype=bool).ravel()
    n_pos = int(truth.sum())
    n_neg = truth.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("roc_auc needs both classes")
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(truth.size)
    sorted_scores = scores[order]
    # average ranks over tied groups
    idx = np.r_[0, np.flatnonzero(np.diff(sorted_scores)) + 1, truth.size]
    for a, b in zip(idx[:-1], idx[1:]):
        ranks[order[a:b]] = 0.5 * (a + b - 1) + 1.0
    r_pos = ranks[truth].sum()
    return float((r_pos - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def ap(scores, truth) -> float:
    """Average precision as the step-sum over distinct score thresholds."""
    scores = np.asarray(scores, dtype=float).ravel()
    truth = np.asarray(truth, dtype=bool).ravel()
    n_pos = int(truth.sum())
    if n_pos == 0 or n_pos == truth.size:
        raise UndefinedMetricError("ap needs both classes")
    order = np.argsort(-scores, kind="mergesort")
    y = truth[order].astype(float)
    s = scores[order]
    tp = np.cumsum(y)
    fp = np.cumsum(1.0 - y)
    # keep only the last index of each tied group
    last = np.r_[np.flatnonzero(np.diff(s)), s.size - 1]
    tp, fp = tp[last], fp[last]
    precision = tp / (tp + fp)
    dtp = np.diff(np.r_[0.0, tp])
    return float(np.sum(precision * dtp) / n_pos)


def f1_at(mask, truth) -> float:
    """F1 of a binary detection mask against ground truth."""
    mask = np.asarray(mask, dtype=bool).ravel()
    truth = np.asarray(truth, dtype=bool).ravel()
    tp = int(np.sum(mask & truth))
    fp = int(np.sum(mask & ~truth))
    fn = int(np.sum(~mask & truth))
    if tp == 0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return 2.0 * precision * recall / (precision + recall)


def evaluate_map(smap: ScoreMap, truth_mask, pfa=1e-3, morph_radius=1) -> MetricReport:
    """ROC-AUC and AP on raw scores; F1 on the morphology-cleaned detection
    mask at the PFA-anchored threshold."""
    truth_mask = np.asarray(truth_mask, dtype=bool)
    valid = smap.valid_mask
    auc = roc_auc(smap.scores[valid], truth_mask[valid])
    avg_prec = ap(smap.scores[valid], truth_mask[valid])
    thr = threshold_at_pfa(smap, ~truth_mask, pfa)
    detections = morph_clean((smap.scores > thr) & valid, radius=morph_radius)
    return MetricReport(detector=smap.detector, roc_auc=auc, ap=avg_prec,
                        f1=f1_at(detections, truth_mask), pfa_target=pfa,
                        threshold=thr)
