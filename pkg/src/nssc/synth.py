"""Synthetic data generators used by the tests and the ``synth`` command."""
from __future__ import annotations

import numpy as np

from .denoise import DepthMap
from .model import Dictionary


def planted_dictionary(patch_dims, atom_count, rng, zero_mean=False):
    h, w = patch_dims
    atoms = rng.standard_normal((h * w, atom_count))
    if zero_mean:
        atoms -= atoms.mean(axis=0, keepdims=True)
    atoms /= np.linalg.norm(atoms, axis=0, keepdims=True)
    return Dictionary(atoms, (h, w))


def planted_patches(dictionary: Dictionary, count, sparsity, rng,
                    missing_frac=0.0, noise_std=0.0, amp=(1.0, 2.0)):
    """Sparse combinations of planted atoms, one patch-sized map each.

    Missing pixels are stored in each map's ``missing_mask`` and their
    values are set to 0.
    """
    k = dictionary.atom_count
    maps = []
    for _ in range(count):
        idx = rng.choice(k, size=sparsity, replace=False)
        coef = rng.uniform(*amp, size=sparsity) * rng.choice([-1.0, 1.0], size=sparsity)
        x = dictionary.atoms[:, idx] @ coef
        if noise_std:
            x = x + noise_std * rng.standard_normal(x.shape)
        mask = rng.random(x.shape) < missing_frac
        x = np.where(mask, 0.0, x)
        maps.append(DepthMap(x.reshape(dictionary.patch_dims),
                             mask.reshape(dictionary.patch_dims)))
    return maps


def piecewise_constant_map(shape, rng, n_regions=6, depth_range=(0.0, 2.0)):
    """Overlapping random rectangles and half-planes at random depths."""
    H, W = shape
    out = np.full(shape, rng.uniform(*depth_range))
    rr, cc = np.mgrid[0:H, 0:W]
    for i in range(n_regions):
        depth = rng.uniform(*depth_range)
        if i % 2 == 0:
            r0, c0 = rng.integers(0, H - 4), rng.integers(0, W - 4)
            r1 = rng.integers(r0 + 4, H + 1)
            c1 = rng.integers(c0 + 4, W + 1)
            region = (rr >= r0) & (rr < r1) & (cc >= c0) & (cc < c1)
        else:
            theta = rng.uniform(0, np.pi)
            pr, pc = rng.uniform(0, H), rng.uniform(0, W)
            region = (np.cos(theta) * (rr - pr) + np.sin(theta) * (cc - pc)) > 0
        out[region] = depth
    return out


def corrupt_sparse(values, rng, fraction=0.01, var_range=(0.0, 1.0)):
    """Add Gaussian noise of random variance to a random subset of pixels.

    Returns ``(noisy, corrupted_mask, variances)``.
    """
    n = values.size
    count = max(1, int(round(fraction * n)))
    idx = rng.choice(n, size=count, replace=False)
    var = np.zeros(n)
    var[idx] = rng.uniform(*var_range, size=count)
    noisy = values.ravel() + np.sqrt(var) * rng.standard_normal(n)
    mask = np.zeros(n, dtype=bool)
    mask[idx] = True
    return noisy.reshape(values.shape), mask.reshape(values.shape), var.reshape(values.shape)


def piecewise_disparity(shape, n_labels, rng, n_regions=5):
    """Integer disparity made of a background plane and random rectangles."""
    H, W = shape
    d = np.full(shape, int(rng.integers(n_labels)), dtype=int)
    for _ in range(n_regions):
        h = int(rng.integers(H // 5, H // 2))
        w = int(rng.integers(W // 6, W // 3))
        r0 = int(rng.integers(0, H - h))
        c0 = int(rng.integers(0, W - w))
        d[r0:r0 + h, c0:c0 + w] = int(rng.integers(n_labels))
    return d


def random_dot_stereogram(disparity, rng, levels=256, noise_std=0.0):
    """Left/right images consistent with ``disparity`` on the left grid.

    The right image is random dots; each left pixel copies the right pixel
    ``disparity`` columns to its right, so ``L[i] == R[i + f_i]`` wherever
    that column exists.
    """
    H, W = disparity.shape
    right = rng.integers(0, levels, size=(H, W)).astype(float)
    left = rng.integers(0, levels, size=(H, W)).astype(float)
    rows, cols = np.mgrid[0:H, 0:W]
    src = cols + disparity
    ok = src < W
    left[ok] = right[rows[ok], src[ok]]
    if noise_std:
        left = left + noise_std * rng.standard_normal(left.shape)
        right = right + noise_std * rng.standard_normal(right.shape)
    return left, right


def specular_corruption(image, rng, fraction=0.02, radius=2, value=255.0):
    """Saturate small disks covering roughly ``fraction`` of the image."""
    H, W = image.shape
    out = image.copy()
    hit = np.zeros(image.shape, dtype=bool)
    rr, cc = np.mgrid[0:H, 0:W]
    target = fraction * image.size
    while hit.sum() < target:
        r, c = rng.integers(0, H), rng.integers(0, W)
        hit |= (rr - r) ** 2 + (cc - c) ** 2 <= radius * radius
    out[hit] = value
    return out, hit
