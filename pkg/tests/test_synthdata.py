import numpy as np
import pytest

from pfrecon.classical import (
    conjugate_symmetry_oracle,
    homodyne,
    lowres_phase,
    pocs,
)
from pfrecon.core import RepetitionSet, forward, ifft2c, make_pf_mask
from pfrecon.metrics import psnr
from pfrecon.synthdata import (
    DatasetFormatError,
    PhantomSpec,
    generate_dataset,
    generate_phantom,
    inject_void,
    read_dataset,
    write_dataset,
)


class TestPhantomSpec:
    def test_defaults_are_valid(self):
        PhantomSpec()

    @pytest.mark.parametrize(
        "kw",
        [
            {"size": (16, 64)},
            {"size": (64, 16)},
            {"n_ellipses": 0},
            {"phase_mode": "wild"},
            {"patch_count": -1},
            {"patch_max_freq": 0.0},
            {"patch_max_freq": 32.0},
            {"noise_sigma": -0.1},
            {"n_repetitions": 0},
        ],
    )
    def test_invalid_fields_raise(self, kw):
        with pytest.raises(ValueError):
            PhantomSpec(**kw)


class TestGeneratePhantom:
    def test_output_contract(self):
        spec = PhantomSpec(seed=4)
        reps = generate_phantom(spec)
        assert isinstance(reps, RepetitionSet)
        assert reps.samples.shape == (6, 64, 64)
        assert reps.mask.is_full
        assert np.all(np.isfinite(reps.samples))

    def test_same_seed_bit_identical(self):
        a = generate_phantom(PhantomSpec(seed=12))
        b = generate_phantom(PhantomSpec(seed=12))
        assert np.array_equal(a.samples, b.samples)

    def test_different_seeds_differ(self):
        a = generate_phantom(PhantomSpec(seed=12))
        b = generate_phantom(PhantomSpec(seed=13))
        assert not np.array_equal(a.samples, b.samples)

    @pytest.mark.parametrize("sigma", [0.0, 0.05])
    def test_magnitude_bound(self, sigma):
        spec = PhantomSpec(seed=8, noise_sigma=sigma)
        imgs = ifft2c(generate_phantom(spec))
        assert np.abs(imgs).max() <= 1.0 + 5 * sigma + 1e-9

    def test_constant_mode_repetitions_identical_and_real(self):
        spec = PhantomSpec(phase_mode="constant", noise_sigma=0.0, seed=3)
        imgs = ifft2c(generate_phantom(spec))
        for b in range(1, imgs.shape[0]):
            assert np.allclose(imgs[b], imgs[0], atol=1e-14)
        assert np.abs(imgs.imag).max() < 1e-12

    @pytest.mark.parametrize("pff", ["5/8", "6/8", "7/8"])
    def test_constant_mode_oracle_recovers_exactly(self, pff):
        spec = PhantomSpec(phase_mode="constant", noise_sigma=0.0, seed=7)
        img = ifft2c(generate_phantom(spec))[0]
        y = forward(img, make_pf_mask(64, pff))
        rec = conjugate_symmetry_oracle(y)
        assert np.abs(rec - img).max() <= 1e-8

    def test_constant_mode_classical_calibration(self):
        # the easy regime: conjugate symmetry holds, so every
        # phase-exploiting method lands comfortably above 40 dB
        mask = make_pf_mask(64, "5/8")
        for seed in range(8):
            spec = PhantomSpec(phase_mode="constant", noise_sigma=0.0, seed=seed)
            img = ifft2c(generate_phantom(spec))[0]
            gt = np.abs(img)
            y = forward(img, mask)
            assert psnr(gt, np.abs(pocs(y, 5))) > 40
            assert psnr(gt, np.abs(homodyne(y))) > 40
            assert psnr(gt, np.abs(conjugate_symmetry_oracle(y))) > 40

    def test_patches_break_lowres_phase(self):
        # patch PE frequencies sit above the 5/8 symmetric band cutoff
        # (64 * (5/8 - 1/2) = 8 cycles/FOV), so the band-limited phase
        # estimate cannot follow them
        mask = make_pf_mask(64, "5/8")
        checked = 0
        for seed in range(30):
            spec = PhantomSpec(seed=seed, noise_sigma=0.0)
            reps, info = generate_phantom(spec, with_info=True)
            imgs = ifft2c(reps)
            for b in range(reps.count):
                support = info["patch_support"][b] & (info["magnitude"] > 0.3)
                if support.sum() < 10:
                    continue
                est = lowres_phase(forward(imgs[b], mask))
                err = np.abs(
                    np.angle(np.exp(1j * (est.phase - info["phase"][b])))
                )
                assert err[support].max() > 0.5
                checked += 1
        assert checked >= 5

    def test_patches_vary_across_repetitions(self):
        spec = PhantomSpec(seed=21, noise_sigma=0.0, patch_count=4)
        reps, info = generate_phantom(spec, with_info=True)
        sup = info["patch_support"]
        assert any(
            not np.array_equal(sup[0], sup[b]) for b in range(1, len(sup))
        )

    def test_smooth_poly_repetitions_share_phase(self):
        spec = PhantomSpec(phase_mode="smooth_poly", noise_sigma=0.0, seed=5)
        imgs = ifft2c(generate_phantom(spec))
        assert np.allclose(imgs[1:], imgs[0], atol=1e-14)

    def test_generate_dataset_deterministic_and_distinct(self):
        spec = PhantomSpec(seed=31)
        a = generate_dataset(spec, 4)
        b = generate_dataset(spec, 4)
        assert len(a) == 4
        for x, y in zip(a, b):
            assert np.array_equal(x.samples, y.samples)
        assert not np.array_equal(a[0].samples, a[1].samples)

    def test_generate_dataset_rejects_zero_slices(self):
        with pytest.raises(ValueError):
            generate_dataset(PhantomSpec(), 0)


class TestInjectVoid:
    def _img(self, seed=0):
        return ifft2c(generate_phantom(PhantomSpec(seed=seed)))[0]

    def test_noiseless_void_is_exactly_zero(self):
        img = self._img()
        out = inject_void(img, (32, 30), (5, 8))
        iy, ix = np.mgrid[0:64, 0:64]
        region = ((iy - 32) / 5) ** 2 + ((ix - 30) / 8) ** 2 <= 1
        assert np.all(out[region] == 0)

    def test_no_leakage_outside_ellipse(self):
        img = self._img(3)
        out = inject_void(img, (20, 40), (4, 6), noise_sigma=0.05,
                          rng=np.random.default_rng(0))
        iy, ix = np.mgrid[0:64, 0:64]
        region = ((iy - 20) / 4) ** 2 + ((ix - 40) / 6) ** 2 <= 1
        changed = out != img
        assert np.array_equal(changed.any(axis=None), True)
        assert not changed[~region].any()
        assert changed.sum() <= region.sum()

    def test_noise_fill_is_rician_like(self):
        img = self._img(5)
        sigma = 0.05
        out = inject_void(img, (32, 32), (10, 10), noise_sigma=sigma,
                          rng=np.random.default_rng(7))
        iy, ix = np.mgrid[0:64, 0:64]
        region = ((iy - 32) / 10) ** 2 + ((ix - 32) / 10) ** 2 <= 1
        mags = np.abs(out[region])
        # magnitude of centered complex noise: Rayleigh with mean
        # sigma*sqrt(pi)/2 for total std sigma
        expected = sigma * np.sqrt(np.pi) / 2
        assert abs(mags.mean() - expected) < 0.2 * expected

    @pytest.mark.parametrize(
        "center,axes",
        [((2, 32), (5, 5)), ((62, 32), (5, 5)), ((32, 60), (3, 8)),
         ((32, 32), (40, 5))],
    )
    def test_out_of_bounds_raises(self, center, axes):
        with pytest.raises(ValueError):
            inject_void(self._img(), center, axes)

    def test_rejects_stacks(self):
        imgs = ifft2c(generate_phantom(PhantomSpec(seed=1)))
        with pytest.raises(ValueError):
            inject_void(imgs, (32, 32), (5, 5))


class TestDatasetFile:
    def _sets(self, n=3, pff="1", seed=0):
        rng = np.random.default_rng(seed)
        mask = make_pf_mask(48, pff)
        out = []
        for _ in range(n):
            k = (rng.standard_normal((4, 32, 48))
                 + 1j * rng.standard_normal((4, 32, 48))).astype(np.complex64)
            k[..., ~mask.array()] = 0
            out.append(RepetitionSet(samples=k, mask=mask))
        return out

    def test_roundtrip_bit_exact(self, tmp_path):
        sets = self._sets()
        p = tmp_path / "d.pfrec"
        write_dataset(sets, p)
        back = read_dataset(p)
        assert len(back) == len(sets)
        for a, b in zip(sets, back):
            assert np.array_equal(a.samples, b.samples)
            assert a.mask == b.mask

    def test_presampled_mask_roundtrips(self, tmp_path):
        sets = self._sets(pff="5/8")
        p = tmp_path / "d.pfrec"
        write_dataset(sets, p)
        back = read_dataset(p)
        assert back[0].mask.pff == sets[0].mask.pff
        assert not back[0].mask.is_full

    def test_empty_write_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            write_dataset([], tmp_path / "d.pfrec")

    def test_mixed_shapes_rejected(self, tmp_path):
        a = self._sets(1, seed=1)[0]
        b = RepetitionSet(a.samples[:2], a.mask)
        with pytest.raises(ValueError):
            write_dataset([a, b], tmp_path / "d.pfrec")

    def test_truncated_payload_reports_byte_counts(self, tmp_path):
        p = tmp_path / "d.pfrec"
        write_dataset(self._sets(), p)
        raw = p.read_bytes()
        p.write_bytes(raw[:-100])
        with pytest.raises(DatasetFormatError) as err:
            read_dataset(p)
        expected = 3 * 4 * 32 * 48 * 8
        assert str(expected) in str(err.value)
        assert str(expected - 100) in str(err.value)

    def test_trailing_bytes_rejected(self, tmp_path):
        p = tmp_path / "d.pfrec"
        write_dataset(self._sets(), p)
        p.write_bytes(p.read_bytes() + b"\x00" * 8)
        with pytest.raises(DatasetFormatError):
            read_dataset(p)

    def test_bad_magic_rejected(self, tmp_path):
        p = tmp_path / "d.pfrec"
        write_dataset(self._sets(), p)
        raw = bytearray(p.read_bytes())
        raw[:6] = b"NOTPFR"
        p.write_bytes(bytes(raw))
        with pytest.raises(DatasetFormatError, match="magic"):
            read_dataset(p)

    def test_wrong_version_rejected(self, tmp_path):
        p = tmp_path / "d.pfrec"
        write_dataset(self._sets(), p)
        raw = bytearray(p.read_bytes())
        raw[6] = 9
        p.write_bytes(bytes(raw))
        with pytest.raises(DatasetFormatError, match="version"):
            read_dataset(p)

    def test_short_header_rejected(self, tmp_path):
        p = tmp_path / "d.pfrec"
        p.write_bytes(b"PFREC1")
        with pytest.raises(DatasetFormatError):
            read_dataset(p)
