"""Overlapping-patch denoising, variance maps and inpainting."""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .inference import InferenceConfig, fixed_variance_batch, infer_batch
from .model import ContractError, Dictionary, Patch

STD_EPS = 1e-12
CHUNK = 2048


@dataclass(frozen=True)
class DepthMap:
    values: np.ndarray
    missing_mask: np.ndarray | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.size == 0:
            raise ContractError(f"depth map must be a non-empty 2-D grid, got {values.shape}")
        object.__setattr__(self, "values", values)
        if self.missing_mask is not None:
            mask = np.asarray(self.missing_mask, dtype=bool)
            if mask.shape != values.shape:
                raise ContractError("missing mask shape differs from map")
            object.__setattr__(self, "missing_mask", mask)

    @property
    def shape(self):
        return self.values.shape

    @property
    def mask(self) -> np.ndarray:
        if self.missing_mask is None:
            return np.zeros(self.values.shape, dtype=bool)
        return self.missing_mask


@dataclass
class DenoiseResult:
    denoised: DepthMap
    variance_map: np.ndarray
    counts: np.ndarray
    unfilled: np.ndarray
    # sigma0^2 + ext_var averaged like variance_map, in map units
    total_variance: np.ndarray | None = None


def normalize_patch(p: Patch, mask=None) -> Patch:
    """Remove the mean and scale to unit standard deviation.

    Statistics use unmasked pixels only; masked entries are set to 0.  A
    (near-)constant patch keeps ``scale = 1``.
    """
    values = p.values
    if mask is None:
        mask = np.zeros(values.shape, dtype=bool)
    v, m, s = normalize_rows(values[None, :], np.asarray(mask, dtype=bool)[None, :])
    # compose with any normalization already recorded on p
    return Patch(v[0], p.scale * s[0], p.offset + p.scale * m[0])


def normalize_rows(values, mask):
    """Row-wise version of :func:`normalize_patch`.

    Returns ``(normalized, offsets, scales)``.  Rows with every pixel masked
    get offset 0 and scale 1.
    """
    keep = ~mask
    n = keep.sum(axis=1)
    safe_n = np.maximum(n, 1)
    vals = np.where(keep, values, 0.0)
    mean = vals.sum(axis=1) / safe_n
    centered = np.where(keep, values - mean[:, None], 0.0)
    std = np.sqrt((centered * centered).sum(axis=1) / safe_n)
    scale = np.where(std < STD_EPS, 1.0, std)
    return centered / scale[:, None], mean, scale


def patch_positions(shape, patch_dims, stride):
    """Top-left corners of all windows, row-major.

    The last row/column of windows is pinned to the border when the stride
    does not divide the free range, so every pixel is covered.
    """
    if stride < 1:
        raise ContractError(f"stride must be >= 1, got {stride}")
    H, W = shape
    h, w = patch_dims
    if H < h or W < w:
        raise ContractError(f"map {H}x{W} is smaller than patch {h}x{w}")

    def axis(total, size):
        starts = list(range(0, total - size + 1, stride))
        if starts[-1] != total - size:
            starts.append(total - size)
        return np.asarray(starts)

    rows, cols = axis(H, h), axis(W, w)
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    return np.stack([rr.ravel(), cc.ravel()], axis=1)


def _gather(grid, positions, patch_dims):
    h, w = patch_dims
    dy, dx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    r = positions[:, 0, None] + dy.ravel()[None, :]
    c = positions[:, 1, None] + dx.ravel()[None, :]
    return grid[r, c], (r, c)


def extract_patches(dmap: DepthMap, patch_dims, stride: int = 1):
    """All windows at ``stride`` as normalized ``(Patch, (row, col))`` pairs."""
    positions = patch_positions(dmap.shape, patch_dims, stride)
    raw, _ = _gather(dmap.values, positions, patch_dims)
    mask, _ = _gather(dmap.mask, positions, patch_dims)
    vals, offs, scales = normalize_rows(raw, mask)
    return [
        (Patch(vals[i], scales[i], offs[i]), (int(r), int(c)))
        for i, (r, c) in enumerate(positions)
    ]


def assemble(shape, positions, patch_dims, patch_values, weights=None):
    """Average overlapping patch values into a grid.

    ``weights`` (same shape as ``patch_values``) selects which entries
    contribute; returns ``(mean, counts)`` with ``mean`` NaN where nothing
    contributed.
    """
    positions = np.asarray(positions)
    _, (r, c) = _gather(np.zeros(shape), positions, patch_dims)
    if weights is None:
        weights = np.ones(patch_values.shape)
    acc = np.zeros(shape)
    cnt = np.zeros(shape)
    np.add.at(acc, (r, c), patch_values * weights)
    np.add.at(cnt, (r, c), weights)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = acc / cnt
    return mean, cnt


def _infer_chunk(args):
    values, mask, dictionary, cfg, fixed_var = args
    if fixed_var is None:
        res = infer_batch(values, mask, dictionary, cfg)
        return res.codes, res.ext_var
    codes = fixed_variance_batch(values, mask, dictionary, fixed_var, cfg.lam,
                                 cfg.inner_max_iters, cfg.inner_tol)
    return codes, np.zeros_like(values)


def code_patches(values, mask, dictionary, cfg, fixed_var=None, workers=1):
    """Infer codes for many normalized patches in fixed-size chunks.

    Chunk boundaries do not depend on ``workers`` so the result is the same
    for any worker count.
    """
    chunks = [
        (values[s:s + CHUNK], mask[s:s + CHUNK], dictionary, cfg, fixed_var)
        for s in range(0, values.shape[0], CHUNK)
    ]
    if workers > 1 and len(chunks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_infer_chunk, chunks))
    else:
        parts = [_infer_chunk(ch) for ch in chunks]
    if not parts:
        k = dictionary.atom_count
        return np.zeros((0, k)), np.zeros((0, values.shape[1]))
    codes = np.concatenate([p[0] for p in parts])
    ext = np.concatenate([p[1] for p in parts])
    return codes, ext


def denoise_map(dmap: DepthMap, dictionary: Dictionary, cfg: InferenceConfig,
                stride: int = 1, fixed_var: float | None = None,
                workers: int = 1) -> DenoiseResult:
    """Denoise a map patch by patch and average the reconstructions.

    With ``fixed_var`` set, codes come from classical fixed-variance sparse
    coding instead of the joint code/variance inference, and the variance
    map is zero.  Pixels in ``dmap.missing_mask`` are excluded from every
    data term and filled from the reconstructions.
    """
    patch_dims = dictionary.patch_dims
    positions = patch_positions(dmap.shape, patch_dims, stride)
    full_mask = dmap.mask
    if full_mask.all():
        raise ContractError("every pixel is masked; nothing to denoise")

    raw, _ = _gather(dmap.values, positions, patch_dims)
    mask, _ = _gather(full_mask, positions, patch_dims)
    usable = ~mask.all(axis=1)
    positions, raw, mask = positions[usable], raw[usable], mask[usable]

    vals, offs, scales = normalize_rows(raw, mask)
    codes, ext = code_patches(vals, mask, dictionary, cfg, fixed_var, workers)
    recon = (codes @ dictionary.atoms.T) * scales[:, None] + offs[:, None]
    ext_units = ext * (scales ** 2)[:, None]
    floor = cfg.sigma0_sq if fixed_var is None else fixed_var
    total_units = (floor + ext) * (scales ** 2)[:, None]

    denoised, counts = assemble(dmap.shape, positions, patch_dims, recon)
    observed = (~mask).astype(float)
    var_mean, _ = assemble(dmap.shape, positions, patch_dims, ext_units,
                           weights=observed)
    total_mean, _ = assemble(dmap.shape, positions, patch_dims, total_units,
                             weights=observed)
    unfilled = counts == 0
    denoised = np.where(unfilled, dmap.values, denoised)
    variance = np.where(full_mask, np.inf, np.nan_to_num(var_mean, nan=0.0))
    return DenoiseResult(
        denoised=DepthMap(denoised, dmap.missing_mask),
        variance_map=variance,
        counts=counts.astype(int),
        unfilled=unfilled,
        total_variance=np.where(full_mask | np.isnan(total_mean), np.inf,
                                total_mean),
    )


def inpaint(dmap: DepthMap, mask, dictionary: Dictionary, cfg: InferenceConfig,
            stride: int = 1, workers: int = 1) -> DenoiseResult:
    """Denoise with ``mask`` pixels given infinite variance, then fill them.

    Windows that are entirely masked are skipped; pixels no surviving
    window covers are flagged in ``result.unfilled``.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != dmap.shape:
        raise ContractError("inpainting mask shape differs from map")
    combined = mask | dmap.mask
    res = denoise_map(DepthMap(dmap.values, combined), dictionary, cfg,
                      stride=stride, workers=workers)
    return DenoiseResult(DepthMap(res.denoised.values, dmap.missing_mask),
                         res.variance_map, res.counts, res.unfilled,
                         res.total_variance)
