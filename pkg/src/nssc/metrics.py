"""Evaluation metrics."""
from __future__ import annotations

import numpy as np
from scipy.stats import rankdata

from .model import ContractError


def psnr(estimate, reference, peak=None, mask=None) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` when the maps are equal.

    ``peak`` defaults to the dynamic range of ``reference`` over the
    evaluated pixels.
    """
    est = np.asarray(estimate, dtype=float)
    ref = np.asarray(reference, dtype=float)
    if est.shape != ref.shape:
        raise ContractError(f"shape mismatch {est.shape} vs {ref.shape}")
    keep = np.ones(ref.shape, dtype=bool) if mask is None else ~np.asarray(mask, bool)
    if not keep.any():
        raise ContractError("no pixels to evaluate")
    mse = float(np.mean((est[keep] - ref[keep]) ** 2))
    if peak is None:
        peak = float(ref[keep].max() - ref[keep].min())
    if mse == 0:
        return float("inf")
    if peak <= 0:
        raise ContractError("PSNR peak must be positive; pass peak explicitly "
                            "for a constant reference")
    return float(10.0 * np.log10(peak * peak / mse))


def roc_auc(labels, scores) -> float:
    """Area under the ROC curve via the Mann-Whitney rank statistic."""
    labels = np.asarray(labels, dtype=bool).ravel()
    scores = np.asarray(scores, dtype=float).ravel()
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ContractError("AUC needs both positive and negative samples")
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def format_psnr(value: float) -> str:
    return "inf" if np.isinf(value) else f"{value:.4f}"
