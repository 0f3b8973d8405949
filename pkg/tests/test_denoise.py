import numpy as np
import pytest

from nssc.denoise import (
    DepthMap,
    assemble,
    denoise_map,
    extract_patches,
    inpaint,
    normalize_patch,
    patch_positions,
)
from nssc.inference import InferenceConfig
from nssc.metrics import psnr, roc_auc
from nssc.model import ContractError, Dictionary, Patch
from nssc.synth import corrupt_sparse, piecewise_constant_map


def ramp_dictionary(rng, dims=(6, 6), extra=20):
    """Zero-mean row/column ramps plus random zero-mean atoms."""
    h, w = dims
    rr, cc = np.mgrid[0:h, 0:w]
    cols = [rr.ravel().astype(float), cc.ravel().astype(float)]
    cols += list(rng.standard_normal((extra, h * w)))
    atoms = np.stack(cols, axis=1)
    atoms -= atoms.mean(axis=0)
    atoms /= np.linalg.norm(atoms, axis=0)
    return Dictionary(atoms, dims)


def planar_map(shape, slope=(0.3, -0.2), base=5.0):
    rr, cc = np.mgrid[0:shape[0], 0:shape[1]]
    return base + slope[0] * rr + slope[1] * cc


class TestExtract:
    def test_single_window(self, rng):
        assert len(extract_patches(DepthMap(rng.random((16, 16))), (16, 16))) == 1

    def test_nine_windows(self, rng):
        pts = extract_patches(DepthMap(rng.random((18, 18))), (16, 16))
        assert len(pts) == 9
        assert [pos for _, pos in pts][:4] == [(0, 0), (0, 1), (0, 2), (1, 0)]

    def test_bad_stride(self, rng):
        with pytest.raises(ContractError):
            extract_patches(DepthMap(rng.random((8, 8))), (4, 4), stride=0)

    def test_too_small(self, rng):
        with pytest.raises(ContractError):
            extract_patches(DepthMap(rng.random((3, 8))), (4, 4))

    @pytest.mark.parametrize("stride", [1, 2, 3])
    def test_round_trip(self, rng, stride):
        grid = rng.standard_normal((13, 11)) * 4 + 2
        pts = extract_patches(DepthMap(grid), (4, 5), stride)
        vals = np.array([p.restore() for p, _ in pts])
        out, counts = assemble(grid.shape, [pos for _, pos in pts], (4, 5), vals)
        np.testing.assert_allclose(out, grid, atol=1e-12, rtol=0)
        assert counts.min() >= 1

    def test_overlap_counts(self):
        positions = patch_positions((7, 9), (3, 4), 1)
        _, counts = assemble((7, 9), positions, (3, 4), np.zeros((len(positions), 12)))
        for r in range(7):
            for c in range(9):
                rows = sum(1 for r0 in range(5) if r0 <= r < r0 + 3)
                cols = sum(1 for c0 in range(6) if c0 <= c < c0 + 4)
                assert counts[r, c] == rows * cols


class TestNormalizePatch:
    def test_constant(self):
        p = normalize_patch(Patch(np.full(9, 3.5)))
        assert np.array_equal(p.values, np.zeros(9))
        assert p.offset == 3.5 and p.scale == 1.0

    def test_moments(self, rng):
        x = rng.standard_normal(64)
        x = (x - x.mean()) / x.std() * 2 + 5
        p = normalize_patch(Patch(x))
        assert abs(p.values.mean()) < 1e-12
        assert abs(p.values.std() - 1) < 1e-12
        np.testing.assert_allclose(p.restore(), x, atol=1e-12, rtol=0)

    def test_already_normalized(self, rng):
        x = rng.standard_normal(25)
        x = (x - x.mean()) / x.std()
        np.testing.assert_allclose(normalize_patch(Patch(x)).values, x, atol=1e-12, rtol=0)

    def test_mask_excluded_from_moments(self):
        x = np.array([1.0, 3.0, 1000.0, 1.0, 3.0])
        p = normalize_patch(Patch(x), mask=np.array([0, 0, 1, 0, 0], bool))
        assert p.offset == 2.0 and p.scale == 1.0
        assert p.values[2] == 0.0


class TestDenoiseMap:
    def test_dictionary_generated_input(self, rng):
        d = ramp_dictionary(rng)
        truth = planar_map((20, 24))
        res = denoise_map(DepthMap(truth), d, InferenceConfig())
        assert psnr(res.denoised.values, truth) > 40
        assert np.all(res.variance_map == 0.0)

    def test_all_masked(self, rng):
        d = ramp_dictionary(rng)
        with pytest.raises(ContractError):
            denoise_map(DepthMap(np.ones((8, 8)), np.ones((8, 8), bool)), d,
                        InferenceConfig())

    def test_too_small(self, rng):
        with pytest.raises(ContractError):
            denoise_map(DepthMap(np.ones((4, 8))), ramp_dictionary(rng), InferenceConfig())

    def test_deterministic(self, rng):
        d = ramp_dictionary(rng)
        grid = planar_map((12, 12)) + rng.standard_normal((12, 12)) * 0.1
        a = denoise_map(DepthMap(grid), d, InferenceConfig())
        b = denoise_map(DepthMap(grid), d, InferenceConfig())
        assert np.array_equal(a.denoised.values, b.denoised.values)
        assert np.array_equal(a.variance_map, b.variance_map)

    def test_counts_match_windows(self, rng):
        d = ramp_dictionary(rng)
        res = denoise_map(DepthMap(planar_map((9, 10))), d, InferenceConfig())
        positions = patch_positions((9, 10), (6, 6), 1)
        _, want = assemble((9, 10), positions, (6, 6), np.zeros((len(positions), 36)))
        assert np.array_equal(res.counts, want)

    def test_translation_equivariance(self, depth_dictionary):
        rng = np.random.default_rng(2)
        tile = piecewise_constant_map((12, 12), rng)
        grid = np.tile(tile, (3, 3))
        shifted = np.roll(grid, 1, axis=1)
        cfg = InferenceConfig()
        a = denoise_map(DepthMap(grid), depth_dictionary, cfg).denoised.values
        b = denoise_map(DepthMap(shifted), depth_dictionary, cfg).denoised.values
        m = depth_dictionary.patch_dims[0]
        np.testing.assert_allclose(b[m:-m, m + 1:-m], a[m:-m, m:-m - 1], atol=1e-6)

    def test_noise_localization(self, depth_dictionary):
        rng = np.random.default_rng(8)
        clean = piecewise_constant_map((50, 50), rng)
        noisy, corrupted, _ = corrupt_sparse(clean, rng, fraction=0.02)
        res = denoise_map(DepthMap(noisy), depth_dictionary, InferenceConfig())
        assert roc_auc(corrupted, res.variance_map) >= 0.9
        assert psnr(res.denoised.values, clean) > psnr(noisy, clean)


class TestInpaint:
    def test_empty_mask_equals_denoise(self, rng):
        d = ramp_dictionary(rng)
        grid = planar_map((10, 10)) + rng.standard_normal((10, 10)) * 0.05
        a = denoise_map(DepthMap(grid), d, InferenceConfig())
        b = inpaint(DepthMap(grid), np.zeros((10, 10), bool), d, InferenceConfig())
        assert np.array_equal(a.denoised.values, b.denoised.values)

    def test_single_pixel(self, rng):
        d = ramp_dictionary(rng)
        truth = planar_map((14, 14))
        mask = np.zeros(truth.shape, bool)
        mask[7, 6] = True
        corrupted = truth.copy()
        corrupted[7, 6] = 99.0
        res = inpaint(DepthMap(corrupted), mask, d, InferenceConfig())
        local = (res.denoised.values - truth)[4:11, 3:10]
        sigma = local[~mask[4:11, 3:10]].std()
        assert abs(res.denoised.values[7, 6] - truth[7, 6]) <= 3 * sigma + 1e-9
        assert not res.unfilled.any()

    def test_uncovered_pixels_reported(self, rng):
        d = ramp_dictionary(rng)
        grid = planar_map((6, 12))
        mask = np.zeros(grid.shape, bool)
        mask[:, :6] = True
        res = inpaint(DepthMap(grid), mask, d, InferenceConfig(), stride=6)
        assert res.unfilled[:, :6].all() and not res.unfilled[:, 6:].any()

    def test_two_stage(self, depth_dictionary):
        rng = np.random.default_rng(12)
        clean = piecewise_constant_map((40, 40), rng)
        noisy, _, _ = corrupt_sparse(clean, rng, fraction=0.01)
        first = denoise_map(DepthMap(noisy), depth_dictionary, InferenceConfig())
        mask = first.variance_map > 0.05
        res = inpaint(DepthMap(noisy), mask, depth_dictionary, InferenceConfig())
        assert not res.unfilled.any()
        assert np.all(np.isfinite(res.denoised.values))
