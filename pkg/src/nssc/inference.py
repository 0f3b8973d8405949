"""Joint inference of sparse codes and per-pixel noise variances.

Inference alternates two exact-or-monotone steps on the patch energy:

1. with the variances fixed, a weighted l2-l1 problem in the code ``a``;
2. with ``a`` fixed, the closed-form minimizer of each pixel's
   ``log(s0 + v) + r^2 / (2 (s0 + v))`` over ``v >= 0``.

All heavy lifting is done on batches of patches (rows of a 2-D array);
the inner solver is a compiled coordinate-descent loop.  The single-patch
functions are thin wrappers around the batch ones.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .model import (
    ContractError,
    Dictionary,
    NoiseField,
    Patch,
    SparseCode,
    _check_dims,
    energy_terms,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class InferenceConfig:
    lam: float = 1.0
    sigma0_sq: float = 0.01
    init_var: float = 1.0
    max_outer_iters: int = 20
    outer_tol: float = 1e-6
    inner_max_iters: int = 2000
    inner_tol: float = 1e-8

    def __post_init__(self):
        if self.lam < 0:
            raise ContractError("lam must be nonnegative")
        if not self.sigma0_sq > 0:
            raise ContractError("sigma0_sq must be positive")
        if not self.init_var > 0:
            raise ContractError("init_var must be positive")
        if self.max_outer_iters < 1 or self.inner_max_iters < 1:
            raise ContractError("iteration budgets must be >= 1")
        if not (self.outer_tol > 0 and self.inner_tol > 0):
            raise ContractError("tolerances must be positive")


@dataclass
class InferenceResult:
    code: SparseCode
    noise: NoiseField
    energy_trace: list = field(default_factory=list)
    converged: bool = False


@dataclass
class BatchInference:
    """Result of inference on P patches at once.

    ``energy_traces[p]`` holds the energy after each outer iteration of
    patch ``p``.
    """

    codes: np.ndarray
    ext_var: np.ndarray
    energy_traces: list
    converged: np.ndarray


def soft_threshold(x, t):
    """Shrink toward zero by ``t``; values with ``|x| <= t`` map to 0."""
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def _l1_objective(values, recon, weights, codes, lam):
    resid = values - recon
    return 0.5 * np.sum(weights * resid * resid, axis=1) + lam * np.sum(
        np.abs(codes), axis=1
    )


@njit(cache=True)
def _cd_patch(f, w, atoms, lam, a, max_sweeps, tol):
    # cyclic coordinate descent; each coordinate step is an exact 1-D
    # minimization so the objective never increases
    n, k = atoms.shape
    r = f.copy()
    for j in range(k):
        if a[j] != 0.0:
            for i in range(n):
                r[i] -= atoms[i, j] * a[j]
    curv = np.zeros(k)
    for j in range(k):
        s = 0.0
        for i in range(n):
            s += w[i] * atoms[i, j] * atoms[i, j]
        curv[j] = s
    for _ in range(max_sweeps):
        max_step = 0.0
        max_coef = 1.0
        for j in range(k):
            c = curv[j]
            if c <= 0.0:
                if a[j] != 0.0:
                    a[j] = 0.0
                continue
            g = 0.0
            for i in range(n):
                g += atoms[i, j] * w[i] * r[i]
            z = a[j] + g / c
            t = lam / c
            if z > t:
                new = z - t
            elif z < -t:
                new = z + t
            else:
                new = 0.0
            d = new - a[j]
            if d != 0.0:
                for i in range(n):
                    r[i] -= atoms[i, j] * d
                a[j] = new
                if abs(d) > max_step:
                    max_step = abs(d)
            if abs(new) > max_coef:
                max_coef = abs(new)
        if max_step <= tol * max_coef:
            break
    return a


@njit(cache=True)
def _cd_batch(values, weights, atoms, lam, init, max_sweeps, tol):
    p = values.shape[0]
    out = init.copy()
    for q in range(p):
        out[q] = _cd_patch(values[q], weights[q], atoms, lam, out[q],
                           max_sweeps, tol)
    return out


def solve_weighted_l1_batch(values, weights, atoms, lam, init=None,
                            max_iter=2000, tol=1e-8):
    """Minimize ``0.5 * sum_i w_i (f_i - (Phi a)_i)^2 + lam |a|_1`` per row.

    Cyclic coordinate descent with exact soft-threshold coordinate steps.
    It stops when a full sweep moves no coefficient by more than
    ``tol * max(1, |a|_inf)``, or after ``max_iter`` sweeps.

    Parameters
    ----------
    values, weights : (P, N) arrays
        Patch values and per-pixel precisions (0 at masked pixels).
    atoms : (N, K) array
    init : (P, K) array, optional
        Starting codes.  The solver starts from whichever of ``init`` and
        zero has the lower objective, so the returned objective never
        exceeds either.

    Returns
    -------
    (P, K) array of codes.
    """
    values = np.ascontiguousarray(values, dtype=np.float64)
    weights = np.ascontiguousarray(weights, dtype=np.float64)
    atoms = np.ascontiguousarray(atoms, dtype=np.float64)
    if not (np.all(np.isfinite(values)) and np.all(np.isfinite(weights))):
        raise ContractError("non-finite input to weighted l1 solver")
    p = values.shape[0]
    start = np.zeros((p, atoms.shape[1]))
    if init is not None and p:
        x0 = np.asarray(init, dtype=np.float64)
        zero = np.zeros_like(values)
        f_zero = _l1_objective(values, zero, weights, start, lam)
        f_init = _l1_objective(values, x0 @ atoms.T, weights, x0, lam)
        better = f_init < f_zero
        start[better] = x0[better]
    if p == 0:
        return start
    return _cd_batch(values, weights, atoms, float(lam), start, int(max_iter),
                     float(tol))


def update_noise_variances_batch(values, recon, mask, sigma0_sq):
    """Closed-form external variances: ``max(0, r^2/2 - sigma0_sq)``.

    Masked entries are returned as 0 and must be ignored by the caller.
    """
    half_sq = 0.5 * (values - recon) ** 2
    ext = np.where(half_sq < sigma0_sq, 0.0, half_sq - sigma0_sq)
    return np.where(mask, 0.0, ext)


def batch_energy(values, recon, mask, sigma0_sq, ext_var, codes, lam):
    var = sigma0_sq + ext_var
    prec = np.where(mask, 0.0, 1.0 / var)
    terms = energy_terms(values, recon, prec, mask, sigma0_sq, ext_var)
    return np.sum(terms, axis=1) + lam * np.sum(np.abs(codes), axis=1)


def infer_batch(values, mask, dictionary: Dictionary, cfg: InferenceConfig,
                ext_init=None) -> BatchInference:
    """Alternating code/variance inference on the rows of ``values``.

    Masked entries of ``values`` are ignored (they are zeroed before use).
    Each patch stops independently once its relative energy decrease drops
    below ``cfg.outer_tol``.
    """
    values = np.asarray(values, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if values.ndim != 2 or values.shape != mask.shape:
        raise ContractError("values and mask must be matching (P, N) arrays")
    if values.shape[1] != dictionary.n_pixels:
        raise ContractError(
            f"patches have {values.shape[1]} pixels, dictionary expects "
            f"{dictionary.n_pixels}"
        )
    values = np.where(mask, 0.0, values)
    atoms = dictionary.atoms
    p = values.shape[0]
    s0 = cfg.sigma0_sq

    codes = np.zeros((p, dictionary.atom_count))
    if ext_init is None:
        ext = np.where(mask, 0.0, cfg.init_var)
    else:
        ext = np.where(mask, 0.0, np.asarray(ext_init, dtype=np.float64))
    traces = [[] for _ in range(p)]
    converged = np.zeros(p, dtype=bool)
    prev_e = batch_energy(values, np.zeros_like(values), mask, s0, ext, codes,
                          cfg.lam)

    active = np.arange(p)
    for _ in range(cfg.max_outer_iters):
        v, m = values[active], mask[active]
        w = np.where(m, 0.0, 1.0 / (s0 + ext[active]))
        a = solve_weighted_l1_batch(v, w, atoms, cfg.lam, init=codes[active],
                                    max_iter=cfg.inner_max_iters,
                                    tol=cfg.inner_tol)
        recon = a @ atoms.T
        e_new = update_noise_variances_batch(v, recon, m, s0)
        e = batch_energy(v, recon, m, s0, e_new, a, cfg.lam)
        codes[active] = a
        ext[active] = e_new
        for idx, val in zip(active, e):
            traces[idx].append(float(val))
        old = prev_e[active]
        rel = (old - e) / np.maximum(np.abs(old), 1e-300)
        done = rel < cfg.outer_tol
        converged[active[done]] = True
        prev_e[active] = e
        active = active[~done]
        if active.size == 0:
            break
    return BatchInference(codes, ext, traces, converged)


def _patch_arrays(patch, dictionary, mask):
    n = patch.values.shape[0]
    _check_dims(n, dictionary)
    if mask is None:
        mask = np.zeros(n, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (n,):
        raise ContractError("mask length does not match patch")
    return patch.values[None, :], mask[None, :]


def solve_weighted_l1(patch: Patch, dictionary: Dictionary, noise: NoiseField,
                      lam: float = 1.0, max_iter: int = 2000,
                      tol: float = 1e-8, init=None) -> SparseCode:
    """Minimize ``0.5 sum_unmasked (f_i - (Phi a)_i)^2 / sigma_i^2 + lam |a|_1``."""
    _check_dims(patch.values.shape[0], dictionary, noise=noise)
    if lam < 0:
        raise ContractError("lam must be nonnegative")
    values = np.where(noise.mask, 0.0, patch.values)[None, :]
    if init is not None:
        init = np.asarray(init, dtype=np.float64)[None, :]
    a = solve_weighted_l1_batch(values, noise.precision[None, :],
                                dictionary.atoms, lam, init=init,
                                max_iter=max_iter, tol=tol)
    return SparseCode(a[0], lam)


def update_noise_variances(patch: Patch, dictionary: Dictionary,
                           code: SparseCode, sigma0_sq: float,
                           prev: NoiseField | None = None) -> NoiseField:
    """Closed-form per-pixel variance update for a fixed code.

    Pixels masked in ``prev`` stay masked and keep their previous value.
    """
    if not sigma0_sq > 0:
        raise ContractError("sigma0_sq must be positive")
    _check_dims(patch.values.shape[0], dictionary, code, prev)
    recon = dictionary.atoms @ code.coefficients
    mask = np.zeros(recon.shape, dtype=bool) if prev is None else prev.mask
    ext = update_noise_variances_batch(np.where(mask, recon, patch.values),
                                       recon, mask, sigma0_sq)
    if prev is not None:
        ext = np.where(mask, prev.ext_var, ext)
    return NoiseField(sigma0_sq, ext, mask)


def infer(patch: Patch, dictionary: Dictionary, cfg: InferenceConfig,
          mask=None) -> InferenceResult:
    """Alternate code and variance updates until the energy settles."""
    values, m = _patch_arrays(patch, dictionary, mask)
    res = infer_batch(values, m, dictionary, cfg)
    trace = res.energy_traces[0]
    if not res.converged[0]:
        log.debug("inference stopped after %d outer iterations without "
                  "converging", len(trace))
    return InferenceResult(
        code=SparseCode(res.codes[0], cfg.lam),
        noise=NoiseField(cfg.sigma0_sq, res.ext_var[0], m[0]),
        energy_trace=trace,
        converged=bool(res.converged[0]),
    )


def infer_fixed_variance(patch: Patch, dictionary: Dictionary, sigma_sq: float,
                         lam: float = 1.0, max_iter: int = 2000,
                         tol: float = 1e-8, mask=None) -> SparseCode:
    """Classical sparse coding: one l2-l1 solve with uniform variance."""
    if not sigma_sq > 0:
        raise ContractError("sigma_sq must be positive")
    n = patch.values.shape[0]
    noise = NoiseField.uniform(sigma_sq, n, mask=mask)
    return solve_weighted_l1(patch, dictionary, noise, lam, max_iter, tol)


def fixed_variance_batch(values, mask, dictionary: Dictionary, sigma_sq,
                         lam=1.0, max_iter=2000, tol=1e-8):
    values = np.where(mask, 0.0, np.asarray(values, dtype=np.float64))
    weights = np.where(mask, 0.0, 1.0 / sigma_sq)
    return solve_weighted_l1_batch(values, weights, dictionary.atoms, lam,
                                   max_iter=max_iter, tol=tol)
