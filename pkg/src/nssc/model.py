"""Generative model types and the shared energy function.

A patch ``f`` is modelled as ``f = Phi a + eps + eta`` where ``eps`` is
i.i.d. Gaussian with variance ``sigma0_sq`` and ``eta`` is independent
Gaussian noise with a per-pixel variance ``ext_var``.  Pixels flagged in the
mask have infinite variance and drop out of every data term.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ContractError(ValueError):
    """Raised when an operation's preconditions are violated."""


class ZeroAtomError(ContractError):
    """A dictionary atom has zero norm and must be re-initialized.

    ``indices`` lists the offending columns so the caller can replace them.
    """

    def __init__(self, indices):
        self.indices = list(indices)
        super().__init__(f"zero-norm atoms at columns {self.indices}")


def _as_float_array(x, ndim, name):
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != ndim:
        raise ContractError(f"{name} must be {ndim}-D, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class Dictionary:
    """K atoms stored as the columns of an ``(N, K)`` matrix."""

    atoms: np.ndarray
    patch_dims: tuple[int, int]

    def __post_init__(self):
        atoms = _as_float_array(self.atoms, 2, "atoms")
        h, w = (int(v) for v in self.patch_dims)
        if h < 1 or w < 1:
            raise ContractError(f"patch dims must be positive, got {(h, w)}")
        if atoms.shape[0] != h * w:
            raise ContractError(
                f"atoms have {atoms.shape[0]} rows but patch is {h}x{w}"
            )
        if atoms.shape[1] < 1:
            raise ContractError("dictionary needs at least one atom")
        if not np.all(np.isfinite(atoms)):
            raise ContractError("dictionary atoms must be finite")
        atoms = atoms.copy()
        atoms.setflags(write=False)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "patch_dims", (h, w))

    @property
    def n_pixels(self) -> int:
        return self.atoms.shape[0]

    @property
    def atom_count(self) -> int:
        return self.atoms.shape[1]

    def atom_image(self, j: int) -> np.ndarray:
        return self.atoms[:, j].reshape(self.patch_dims)

    @classmethod
    def random(cls, patch_dims, atom_count, rng) -> "Dictionary":
        """Gaussian random atoms rescaled to unit norm."""
        h, w = patch_dims
        atoms = rng.standard_normal((h * w, atom_count))
        atoms /= np.linalg.norm(atoms, axis=0, keepdims=True)
        return cls(atoms, (h, w))


@dataclass(frozen=True)
class Patch:
    """Patch values plus the offset/scale needed to undo normalization.

    The original data is recovered as ``values * scale + offset``.
    """

    values: np.ndarray
    scale: float = 1.0
    offset: float = 0.0

    def __post_init__(self):
        values = _as_float_array(self.values, 1, "patch values").copy()
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        if not self.scale > 0:
            raise ContractError(f"patch scale must be positive, got {self.scale}")

    def restore(self, values=None) -> np.ndarray:
        v = self.values if values is None else np.asarray(values, dtype=np.float64)
        return v * self.scale + self.offset


@dataclass(frozen=True)
class SparseCode:
    coefficients: np.ndarray
    lam: float = 1.0

    def __post_init__(self):
        coef = _as_float_array(self.coefficients, 1, "coefficients").copy()
        coef.setflags(write=False)
        object.__setattr__(self, "coefficients", coef)
        if self.lam < 0:
            raise ContractError(f"lambda must be nonnegative, got {self.lam}")

    @property
    def l1(self) -> float:
        return float(np.sum(np.abs(self.coefficients)))


@dataclass(frozen=True)
class NoiseField:
    """Per-pixel noise: floor ``sigma0_sq`` plus external variance ``ext_var``.

    Masked pixels are treated as having infinite variance, i.e. their
    precision is exactly zero.
    """

    sigma0_sq: float
    ext_var: np.ndarray
    mask: np.ndarray = field(default=None)

    def __post_init__(self):
        if not self.sigma0_sq > 0:
            raise ContractError(f"sigma0_sq must be positive, got {self.sigma0_sq}")
        ext = _as_float_array(self.ext_var, 1, "ext_var").copy()
        if np.any(ext < 0) or not np.all(np.isfinite(ext)):
            raise ContractError("external variances must be finite and >= 0")
        if self.mask is None:
            mask = np.zeros(ext.shape, dtype=bool)
        else:
            mask = np.asarray(self.mask, dtype=bool).copy()
            if mask.shape != ext.shape:
                raise ContractError("mask and ext_var shapes differ")
        ext.setflags(write=False)
        mask.setflags(write=False)
        object.__setattr__(self, "sigma0_sq", float(self.sigma0_sq))
        object.__setattr__(self, "ext_var", ext)
        object.__setattr__(self, "mask", mask)

    @classmethod
    def uniform(cls, sigma0_sq, n, ext_var=0.0, mask=None) -> "NoiseField":
        return cls(sigma0_sq, np.full(n, float(ext_var)), mask)

    @property
    def total_var(self) -> np.ndarray:
        """sigma0^2 + ext_var, with ``inf`` at masked pixels."""
        var = self.sigma0_sq + self.ext_var
        return np.where(self.mask, np.inf, var)

    @property
    def precision(self) -> np.ndarray:
        """1 / total variance; exactly 0 at masked pixels."""
        return np.where(self.mask, 0.0, 1.0 / (self.sigma0_sq + self.ext_var))


def _check_dims(n_values, dictionary, code=None, noise=None):
    if n_values != dictionary.n_pixels:
        raise ContractError(
            f"patch has {n_values} pixels, dictionary expects {dictionary.n_pixels}"
        )
    if code is not None and code.coefficients.shape[0] != dictionary.atom_count:
        raise ContractError(
            f"code has {code.coefficients.shape[0]} coefficients, "
            f"dictionary has {dictionary.atom_count} atoms"
        )
    if noise is not None and noise.ext_var.shape[0] != n_values:
        raise ContractError("noise field length does not match patch")


def reconstruct(dictionary: Dictionary, code: SparseCode) -> np.ndarray:
    """Return ``Phi @ a``."""
    if code.coefficients.shape[0] != dictionary.atom_count:
        raise ContractError(
            f"code has {code.coefficients.shape[0]} coefficients, "
            f"dictionary has {dictionary.atom_count} atoms"
        )
    return dictionary.atoms @ code.coefficients


def energy_terms(values, recon, precision, mask, sigma0_sq, ext_var):
    """Vectorized per-pixel energy (log-variance + weighted residual).

    Works on arrays of any matching shape; masked entries contribute 0.
    """
    var = sigma0_sq + ext_var
    resid = values - recon
    term = np.log(var) + 0.5 * resid * resid * precision
    return np.where(mask, 0.0, term)


def energy(patch: Patch, dictionary: Dictionary, code: SparseCode,
           noise: NoiseField) -> float:
    """Energy of a patch under the non-stationary noise model.

    ``sum_i [log sigma_i^2 + (f_i - fhat_i)^2 / (2 sigma_i^2)] + lam * |a|_1``
    summed over unmasked pixels only.
    """
    _check_dims(patch.values.shape[0], dictionary, code, noise)
    recon = reconstruct(dictionary, code)
    # zero the residual at masked pixels so non-finite garbage cannot leak in
    values = np.where(noise.mask, recon, patch.values)
    terms = energy_terms(values, recon, noise.precision, noise.mask,
                         noise.sigma0_sq, noise.ext_var)
    return float(np.sum(terms) + code.lam * code.l1)


def normalize_atoms(dictionary: Dictionary) -> Dictionary:
    """Rescale every atom to unit Euclidean norm.

    Raises ZeroAtomError listing the columns that cannot be normalized.
    """
    norms = np.linalg.norm(dictionary.atoms, axis=0)
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        raise ZeroAtomError(zero)
    # leave atoms already at unit norm untouched so renormalization is idempotent
    norms = np.where(np.abs(norms - 1.0) <= 4 * np.finfo(float).eps, 1.0, norms)
    return Dictionary(dictionary.atoms / norms, dictionary.patch_dims)
