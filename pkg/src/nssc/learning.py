"""Dictionary learning with the variance-weighted gradient.

Each iteration draws a batch of random patches, infers codes and noise
variances for them, and takes a gradient step on the dictionary.  Pixel
residuals enter the gradient weighted by their inferred precision, so
unreliable pixels (large variance) barely move the atoms and masked
pixels do not move them at all.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .denoise import DepthMap, normalize_rows
from .inference import InferenceConfig, batch_energy, infer_batch
from .model import (
    ContractError,
    Dictionary,
    NoiseField,
    Patch,
    SparseCode,
    ZeroAtomError,
    _check_dims,
    normalize_atoms,
)

log = logging.getLogger(__name__)

# Approach 1 masks missing pixels, Approach 2 treats them as ordinary data.
MASK_MISSING = 1
MISSING_AS_DATA = 2


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    patch_dims: tuple = (16, 16)
    atom_count: int = 256
    batch_size: int = 100
    learning_rate: float = 0.05
    num_iterations: int = 1000
    missing_pixel_mode: int = MASK_MISSING
    rng_seed: int = 0
    inference: InferenceConfig = field(default_factory=InferenceConfig)
    sentinel: float | None = 0.0
    normalize: bool = True
    lr_decay: bool = True
    dead_atom_patience: int = 500

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ContractError("learning_rate must be nonnegative")
        if self.atom_count < 1 or self.batch_size < 1:
            raise ContractError("atom_count and batch_size must be >= 1")
        if self.num_iterations < 0:
            raise ContractError("num_iterations must be >= 0")
        if self.missing_pixel_mode not in (MASK_MISSING, MISSING_AS_DATA):
            raise ContractError("missing_pixel_mode must be 1 or 2")


@dataclass
class TrainingReport:
    mean_energy: list
    dictionary: Dictionary
    iterations: int
    reinitialized: int = 0


def missing_indicator(dmap: DepthMap, sentinel) -> np.ndarray:
    ind = dmap.mask.copy()
    if sentinel is not None:
        ind |= dmap.values == sentinel
    return ind


def _sample_arrays(maps, cfg: TrainConfig, rng):
    if not maps:
        raise ContractError("need at least one map to sample from")
    h, w = cfg.patch_dims
    for m in maps:
        if m.shape[0] < h or m.shape[1] < w:
            raise ContractError(f"map {m.shape} smaller than patch {(h, w)}")
    missing = [missing_indicator(m, cfg.sentinel) for m in maps]
    vals = np.empty((cfg.batch_size, h * w))
    mask = np.zeros((cfg.batch_size, h * w), dtype=bool)
    for b in range(cfg.batch_size):
        k = int(rng.integers(len(maps)))
        H, W = maps[k].shape
        r = int(rng.integers(H - h + 1))
        c = int(rng.integers(W - w + 1))
        vals[b] = maps[k].values[r:r + h, c:c + w].ravel()
        if cfg.missing_pixel_mode == MASK_MISSING:
            mask[b] = missing[k][r:r + h, c:c + w].ravel()
    vals = np.where(mask, 0.0, vals)
    if cfg.normalize:
        vals, offs, scales = normalize_rows(vals, mask)
    else:
        offs = np.zeros(cfg.batch_size)
        scales = np.ones(cfg.batch_size)
    return vals, mask, offs, scales


def sample_patches(maps, cfg: TrainConfig, rng):
    """Draw ``cfg.batch_size`` random windows as ``(Patch, mask)`` pairs.

    A map is picked uniformly, then a window position uniformly within it.
    Under Approach 1 the mask flags missing pixels (the sentinel value or
    the map's own missing mask); under Approach 2 it is empty.
    """
    vals, mask, offs, scales = _sample_arrays(maps, cfg, rng)
    return [
        (Patch(vals[i], scales[i], offs[i]), mask[i])
        for i in range(vals.shape[0])
    ]


def learning_gradient(patch: Patch, dictionary: Dictionary, code: SparseCode,
                      noise: NoiseField) -> np.ndarray:
    """Gradient of the energy w.r.t. the atoms, shaped like ``dictionary.atoms``.

    ``-diag(1/sigma^2) (f - Phi a) a^T``; rows of masked pixels are 0.
    """
    _check_dims(patch.values.shape[0], dictionary, code, noise)
    recon = dictionary.atoms @ code.coefficients
    resid = np.where(noise.mask, 0.0, patch.values - recon)
    return -np.outer(noise.precision * resid, code.coefficients)


def batch_gradient(values, mask, atoms, codes, ext_var, sigma0_sq):
    """Average of per-patch gradients over the rows of a batch."""
    prec = np.where(mask, 0.0, 1.0 / (sigma0_sq + ext_var))
    resid = np.where(mask, 0.0, values - codes @ atoms.T)
    return -((prec * resid).T @ codes) / values.shape[0]


def _random_unit(n, rng):
    v = rng.standard_normal(n)
    return v / np.linalg.norm(v)


def train(maps, cfg: TrainConfig, callback=None) -> TrainingReport:
    """Learn a dictionary by stochastic gradient descent.

    ``callback(iteration, dictionary, mean_energy)`` is called after each
    update when given.
    """
    if not maps:
        raise ContractError("need at least one map to train on")
    rng = np.random.default_rng(cfg.rng_seed)
    h, w = cfg.patch_dims
    n = h * w
    dictionary = Dictionary.random((h, w), cfg.atom_count, rng)
    atoms = dictionary.atoms.copy()
    s0 = cfg.inference.sigma0_sq
    idle = np.zeros(cfg.atom_count, dtype=int)
    decay_t = max(cfg.num_iterations / 2.0, 1.0)
    energies = []
    reinit = 0

    for it in range(cfg.num_iterations):
        vals, mask, _, _ = _sample_arrays(maps, cfg, rng)
        res = infer_batch(vals, mask, dictionary, cfg.inference)
        recon = res.codes @ atoms.T
        e = batch_energy(vals, recon, mask, s0, res.ext_var, res.codes,
                         cfg.inference.lam)
        mean_e = float(np.mean(e))
        if not math.isfinite(mean_e):
            raise TrainingDiverged(
                f"non-finite mean energy {mean_e} at iteration {it}; "
                f"learning rate {cfg.learning_rate} is probably too large"
            )
        energies.append(mean_e)

        grad = batch_gradient(vals, mask, atoms, res.codes, res.ext_var, s0)
        lr = cfg.learning_rate
        if cfg.lr_decay:
            lr = lr / (1.0 + it / decay_t)
        with np.errstate(over="ignore", invalid="ignore"):
            atoms = atoms - lr * grad
        if not np.all(np.isfinite(atoms)):
            raise TrainingDiverged(
                f"non-finite atoms after the update at iteration {it}; "
                f"learning rate {cfg.learning_rate} is probably too large"
            )

        used = np.any(res.codes != 0, axis=0)
        idle = np.where(used, 0, idle + 1)
        stale = np.flatnonzero(idle >= cfg.dead_atom_patience)
        for j in stale:
            atoms[:, j] = _random_unit(n, rng)
            idle[j] = 0
            reinit += 1
        try:
            dictionary = normalize_atoms(Dictionary(atoms, (h, w)))
        except ZeroAtomError as err:
            for j in err.indices:
                atoms[:, j] = _random_unit(n, rng)
                reinit += 1
            dictionary = normalize_atoms(Dictionary(atoms, (h, w)))
        atoms = dictionary.atoms.copy()
        if callback is not None:
            callback(it, dictionary, mean_e)
        if it % 100 == 0:
            log.debug("iteration %d: mean energy %.6g", it, mean_e)

    if reinit:
        log.info("re-initialized %d atoms during training", reinit)
    return TrainingReport(energies, dictionary, cfg.num_iterations, reinit)
