"""Two-layer disparity estimation.

The middle layer is a pairwise MRF over integer disparities with a
contrast-gated Potts smoothness term, minimized by alpha-beta swap graph
cuts.  The upper layer runs sparse-code inference over the current
disparity map; its reconstruction and per-pixel variances are fed back
into the middle layer as a Gaussian unary prior and a per-pixel data-term
variance.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np

from .denoise import DepthMap, denoise_map
from .inference import InferenceConfig
from .maxflow import max_flow
from .model import ContractError, Dictionary

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class StereoPair:
    left: np.ndarray
    right: np.ndarray

    def __post_init__(self):
        left = np.asarray(self.left, dtype=np.float64)
        right = np.asarray(self.right, dtype=np.float64)
        if left.ndim != 2 or left.shape != right.shape:
            raise ContractError(
                f"stereo images must be equal-sized 2-D grids, got "
                f"{left.shape} and {right.shape}"
            )
        object.__setattr__(self, "left", left)
        object.__setattr__(self, "right", right)

    @property
    def shape(self):
        return self.left.shape


@dataclass(frozen=True)
class DisparityField:
    labels: np.ndarray
    d_min: int
    d_max: int

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 2:
            raise ContractError("disparity labels must be a 2-D grid")
        if self.d_min > self.d_max:
            raise ContractError("empty label range")
        if labels.size and (labels.min() < self.d_min or labels.max() > self.d_max):
            raise ContractError("disparity label outside range")
        object.__setattr__(self, "labels", labels.astype(np.int64))

    @property
    def label_values(self) -> np.ndarray:
        return np.arange(self.d_min, self.d_max + 1)


@dataclass(frozen=True)
class PottsConfig:
    potts_k: float = 20.0
    contrast_threshold: float = 5.0
    data_weight: float = 100.0  # stationary data-term variance rho^2

    def __post_init__(self):
        if not (self.potts_k > 0 and self.contrast_threshold > 0
                and self.data_weight > 0):
            raise ContractError("Potts parameters must be positive")


@dataclass
class UnaryCosts:
    """Cost table of shape ``(H, W, n_labels)`` plus the terms it came from."""

    table: np.ndarray
    prior_mean: np.ndarray | None = None
    prior_var: np.ndarray | None = None
    data_var: np.ndarray | None = None


@dataclass(frozen=True)
class StereoConfig:
    d_min: int = 0
    d_max: int = 15
    potts: PottsConfig = field(default_factory=PottsConfig)
    inference: InferenceConfig = field(default_factory=InferenceConfig)
    outer: int = 3
    stride: int = 1
    rho_floor_frac: float = 1.0  # floor on rho(sigma)^2 relative to rho^2
    max_sweeps: int = 20
    workers: int = 1


@dataclass
class StereoResult:
    disparity: DisparityField
    variance: np.ndarray
    trace: list
    baseline: DisparityField


def data_cost(pair: StereoPair, i, f) -> float:
    """``(L_i - R_{i+f})^2`` for pixel ``i = (row, col)``; no clamping."""
    r, c = i
    cf = c + f
    if not 0 <= cf < pair.shape[1]:
        raise ContractError(f"match column {cf} outside the image")
    d = pair.left[r, c] - pair.right[r, cf]
    return float(d * d)


def cost_volume(pair: StereoPair, labels) -> np.ndarray:
    """Data costs for every pixel and label, shape ``(H, W, n_labels)``.

    Matches that fall outside the right image cost the largest in-bounds
    cost of the same image row.
    """
    H, W = pair.shape
    labels = np.asarray(labels)
    cols = np.arange(W)[:, None] + labels[None, :]
    valid = (cols >= 0) & (cols < W)
    src = np.clip(cols, 0, W - 1)
    diff = pair.left[:, :, None] - pair.right[:, src]
    vol = diff * diff
    valid3 = np.broadcast_to(valid, vol.shape)
    row_max = np.where(valid3, vol, -np.inf).max(axis=(1, 2))
    row_max = np.where(np.isfinite(row_max), row_max, 0.0)
    return np.where(valid3, vol, row_max[:, None, None])


def potts_weight(pair: StereoPair, i, j, cfg: PottsConfig) -> float:
    """Smoothness weight of the edge between 4-adjacent pixels ``i`` and ``j``.

    ``2K`` when the reference-image contrast across the edge is below the
    threshold, ``K`` otherwise.
    """
    (r1, c1), (r2, c2) = i, j
    if abs(r1 - r2) + abs(c1 - c2) != 1:
        raise ContractError(f"pixels {i} and {j} are not 4-adjacent")
    diff = abs(pair.left[r1, c1] - pair.left[r2, c2])
    return 2.0 * cfg.potts_k if diff < cfg.contrast_threshold else cfg.potts_k


def edge_weights(pair: StereoPair, cfg: PottsConfig):
    """Horizontal ``(H, W-1)`` and vertical ``(H-1, W)`` Potts weights."""
    L = pair.left
    dh = np.abs(L[:, 1:] - L[:, :-1])
    dv = np.abs(L[1:, :] - L[:-1, :])
    k = cfg.potts_k
    wh = np.where(dh < cfg.contrast_threshold, 2.0 * k, k)
    wv = np.where(dv < cfg.contrast_threshold, 2.0 * k, k)
    return wh, wv


def _window_rho(costs, label_values, fhat, sigma, floor):
    # costs (..., L); fhat, sigma (...)
    fhat = np.asarray(fhat, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    lv = label_values.astype(float)
    ref = np.clip(np.floor(fhat + 0.5).astype(np.int64) - label_values[0],
                  0, lv.size - 1)
    d_ref = np.take_along_axis(costs, ref[..., None], axis=-1)
    inside = (lv > (fhat - sigma)[..., None]) & (lv < (fhat + sigma)[..., None])
    sq = (costs - d_ref) ** 2
    n = inside.sum(axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.where(inside, sq, 0.0).sum(axis=-1) / n
    mean = np.where(n > 0, mean, 0.0)
    return np.maximum(mean, floor)


def estimate_rho(pair: StereoPair, i, fhat, sigma, label_range,
                 floor: float) -> float:
    """Data-term variance ``rho(sigma)^2`` at pixel ``i``.

    Mean of ``(D(f) - D(round(fhat)))^2`` over integer labels strictly
    inside ``(fhat - sigma, fhat + sigma)``, never below ``floor``.
    """
    if not sigma > 0:
        raise ContractError("sigma must be positive")
    d_min, d_max = label_range
    labels = np.arange(d_min, d_max + 1)
    r, c = i
    costs = cost_volume(StereoPair(pair.left[r:r + 1], pair.right[r:r + 1]),
                        labels)[0, c]
    return float(_window_rho(costs, labels, fhat, sigma, floor))


def rho_map(volume, label_values, fhat, sigma, floor):
    """Vectorized :func:`estimate_rho` over a whole cost volume."""
    return _window_rho(volume, np.asarray(label_values), fhat, sigma, floor)


def build_unary(pair: StereoPair, label_range, cfg: PottsConfig, prior=None,
                data_var=None, volume=None) -> UnaryCosts:
    """Unary cost table for the middle layer.

    Without a prior: ``D(f) / (2 rho^2)`` with the stationary ``rho^2``.
    With ``prior = (fhat, sigma_sq)`` grids and per-pixel ``data_var``:
    ``D(f) / (2 data_var) + (f - fhat)^2 / (2 sigma_sq)``.
    """
    d_min, d_max = label_range
    if d_min > d_max:
        raise ContractError("empty label range")
    labels = np.arange(d_min, d_max + 1)
    if volume is None:
        volume = cost_volume(pair, labels)
    if data_var is None:
        data_var = np.full(pair.shape, cfg.data_weight)
    data_var = np.asarray(data_var, dtype=float)
    table = volume / (2.0 * data_var[..., None])
    if prior is None:
        return UnaryCosts(table, data_var=data_var)
    fhat, var = (np.asarray(x, dtype=float) for x in prior)
    with np.errstate(invalid="ignore"):
        dev = (labels[None, None, :] - fhat[..., None]) ** 2 / (2.0 * var[..., None])
    # infinite prior variance means no prior at all
    dev = np.where(np.isinf(var)[..., None], 0.0, dev)
    return UnaryCosts(table + dev, fhat, var, data_var)


def mrf_energy(table, idx, wh, wv) -> float:
    """Unary plus Potts energy of a labeling given as label indices."""
    unary = np.take_along_axis(table, idx[..., None], axis=-1).sum()
    pair = np.sum(wh * (idx[:, 1:] != idx[:, :-1]))
    pair += np.sum(wv * (idx[1:, :] != idx[:-1, :]))
    return float(unary + pair)


def _swap_move(table, idx, wh, wv, a, b):
    """Optimal alpha-beta swap: relabel pixels in {a, b} with a min cut."""
    sel = (idx == a) | (idx == b)
    if not sel.any():
        return idx
    H, W = idx.shape
    node = np.full((H, W), -1, dtype=np.int64)
    n_px = int(sel.sum())
    node[sel] = np.arange(n_px)
    source, sink = n_px, n_px + 1

    ua = table[..., a][sel]
    ub = table[..., b][sel]
    base = np.minimum(ua, ub)
    # cutting source->p puts p on the sink side (label b), and vice versa
    px = np.arange(n_px)
    tails = [np.full(n_px, source), px]
    heads = [px, np.full(n_px, sink)]
    caps = [ub - base, ua - base]

    # out-of-set neighbors cost the same under a or b, so only in-set
    # edges enter the graph
    h_in = sel[:, 1:] & sel[:, :-1]
    v_in = sel[1:, :] & sel[:-1, :]
    for p, q, w in (
        (node[:, :-1][h_in], node[:, 1:][h_in], wh[h_in]),
        (node[:-1, :][v_in], node[1:, :][v_in], wv[v_in]),
    ):
        tails += [p, q]
        heads += [q, p]
        caps += [w, w]

    _, side = max_flow(n_px + 2, np.concatenate(tails), np.concatenate(heads),
                       np.concatenate(caps), source, sink)
    new = idx.copy()
    new[sel] = np.where(side[:n_px], a, b)
    return new


def solve_mrf_swap(unary: UnaryCosts, cfg: PottsConfig, pair: StereoPair,
                   init: DisparityField, max_sweeps: int = 20,
                   move_trace: list | None = None) -> DisparityField:
    """Minimize the Potts MRF energy by alpha-beta swap moves.

    Sweeps over all label pairs until a sweep brings no decrease.  A move
    is kept only if it lowers the energy, so the energy never rises.  When
    ``move_trace`` is given, the energy after every move is appended.
    """
    table = unary.table
    n_labels = table.shape[-1]
    if n_labels != init.d_max - init.d_min + 1:
        raise ContractError("unary table and initial labeling disagree on range")
    wh, wv = edge_weights(pair, cfg)
    idx = init.labels - init.d_min
    energy = mrf_energy(table, idx, wh, wv)
    if move_trace is not None:
        move_trace.append(energy)
    for sweep in range(max_sweeps):
        improved = False
        for a, b in itertools.combinations(range(n_labels), 2):
            cand = _swap_move(table, idx, wh, wv, a, b)
            e = mrf_energy(table, cand, wh, wv)
            if e < energy - 1e-12 * max(1.0, abs(energy)):
                idx, energy = cand, e
                improved = True
            if move_trace is not None:
                move_trace.append(energy)
        if not improved:
            break
    else:
        log.debug("swap solver hit the sweep cap (%d)", max_sweeps)
    return DisparityField(idx + init.d_min, init.d_min, init.d_max)


def winner_take_all(unary: UnaryCosts, d_min: int) -> np.ndarray:
    return np.argmin(unary.table, axis=-1) + d_min


def bad_pixel_rate(est: DisparityField, gt: DisparityField, threshold=1.0,
                   exclude_mask=None) -> float:
    """Fraction of non-excluded pixels with ``|est - gt| > threshold``."""
    e = np.asarray(getattr(est, "labels", est), dtype=float)
    g = np.asarray(getattr(gt, "labels", gt), dtype=float)
    if e.shape != g.shape:
        raise ContractError(f"shape mismatch {e.shape} vs {g.shape}")
    keep = np.ones(e.shape, dtype=bool)
    if exclude_mask is not None:
        keep &= ~np.asarray(exclude_mask, dtype=bool)
    if not keep.any():
        raise ContractError("every pixel is excluded; bad-pixel rate undefined")
    return float(np.mean(np.abs(e - g)[keep] > threshold))


def two_layer_infer(pair: StereoPair, dictionary: Dictionary, cfg: StereoConfig,
                    gt: DisparityField | None = None,
                    exclude_mask=None) -> StereoResult:
    """Alternate MRF disparity inference and sparse-prior feedback.

    Iteration 0 is the plain MRF (no prior).  Each outer iteration then
    denoises the current disparity map with the dictionary, converts the
    reconstruction and its per-pixel variance into a unary prior and a
    data-term variance, and re-solves the MRF starting from the previous
    labeling.  Stops after ``cfg.outer`` iterations or when the labeling
    no longer changes.

    ``trace`` has one dict per layer-1 solve with the MRF energy, the
    number of changed pixels and, when ``gt`` is given, the bad-pixel rate.
    """
    h, w = dictionary.patch_dims
    if pair.shape[0] < h or pair.shape[1] < w:
        raise ContractError("images are smaller than one dictionary patch")
    label_range = (cfg.d_min, cfg.d_max)
    labels = np.arange(cfg.d_min, cfg.d_max + 1)
    volume = cost_volume(pair, labels)
    wh, wv = edge_weights(pair, cfg.potts)
    rho_sq = cfg.potts.data_weight
    floor = cfg.rho_floor_frac * rho_sq

    unary = build_unary(pair, label_range, cfg.potts, volume=volume)
    init = DisparityField(winner_take_all(unary, cfg.d_min), *label_range)
    current = solve_mrf_swap(unary, cfg.potts, pair, init, cfg.max_sweeps)
    baseline = current

    def record(it, field_, table, changed):
        row = {
            "iteration": it,
            "energy": mrf_energy(table, field_.labels - cfg.d_min, wh, wv),
            "changed": int(changed),
        }
        if gt is not None:
            row["bad_pixel"] = bad_pixel_rate(field_, gt, 1.0, exclude_mask)
        return row

    trace = [record(0, current, unary.table, 0)]
    variance = np.zeros(pair.shape)
    s0 = cfg.inference.sigma0_sq
    for it in range(1, cfg.outer + 1):
        upper = denoise_map(DepthMap(current.labels.astype(float)), dictionary,
                            cfg.inference, stride=cfg.stride,
                            workers=cfg.workers)
        fhat = upper.denoised.values
        var = np.maximum(upper.total_variance, s0)
        variance = var
        data_var = rho_map(volume, labels, fhat, np.sqrt(var), floor)
        unary = build_unary(pair, label_range, cfg.potts, prior=(fhat, var),
                            data_var=data_var, volume=volume)
        nxt = solve_mrf_swap(unary, cfg.potts, pair, current, cfg.max_sweeps)
        changed = np.sum(nxt.labels != current.labels)
        current = nxt
        trace.append(record(it, current, unary.table, changed))
        if changed == 0:
            break
    return StereoResult(current, variance, trace, baseline)
