import json

import numpy as np
import pytest

from auvkit.errors import ParameterError
from auvkit.spectrum import class_scale, sample_scale, singular_values, volume_scales
from auvkit.synth import (
    GROUND_TRUTH_FILE,
    SynthSpec,
    generate_volumes,
    make_dataset,
    make_feature_volume,
    plan_dataset,
)
from auvkit.volumes import CLASS_SIDECAR, class_matrix


def count_significant(volume, class_id=0):
    spec = singular_values(class_matrix(volume, class_id, center=False))
    return int(np.sum(spec.values > 1e-8 * spec.values[0]))


class TestSpecValidation:
    def test_rank_ordering(self):
        with pytest.raises(ParameterError):
            SynthSpec(clean_rank=2, noisy_rank=2)

    def test_rank_exceeds_min_dim(self):
        with pytest.raises(ParameterError):
            SynthSpec(shape=(1, 4, 8, 8), clean_rank=5, noisy_rank=1)

    def test_bad_fractions(self):
        with pytest.raises(ParameterError):
            SynthSpec(frac_noisy=1.5)
        with pytest.raises(ParameterError):
            SynthSpec(noise_sigma=-0.1)


class TestVolumeGeneration:
    def test_noiseless_rank_one_has_single_singular_value(self):
        spec = SynthSpec(shape=(1, 8, 16, 16), clean_rank=8, noisy_rank=1, noise_sigma=0.0)
        vol = make_feature_volume(spec, is_noisy=True, seed=3)
        assert count_significant(vol) == 1

    def test_rank_control_is_exact(self):
        for noisy_rank in (1, 2, 5):
            spec = SynthSpec(
                shape=(1, 8, 16, 16), clean_rank=8, noisy_rank=noisy_rank, noise_sigma=0.0
            )
            assert count_significant(make_feature_volume(spec, True, seed=1)) == noisy_rank
            assert count_significant(make_feature_volume(spec, False, seed=1)) == 8

    def test_full_rank_scales_above_rank_one(self):
        spec = SynthSpec(shape=(1, 8, 16, 16), clean_rank=8, noisy_rank=1, noise_sigma=0.0)
        low = class_scale(class_matrix(make_feature_volume(spec, True, seed=5), 0))
        high = class_scale(class_matrix(make_feature_volume(spec, False, seed=5), 0))
        assert high > low

    def test_same_seed_bit_identical(self):
        spec = SynthSpec()
        a = make_feature_volume(spec, False, seed=42)
        b = make_feature_volume(spec, False, seed=42)
        assert np.array_equal(a.data, b.data)

    def test_different_seeds_differ(self):
        spec = SynthSpec()
        a = make_feature_volume(spec, False, seed=1)
        b = make_feature_volume(spec, False, seed=2)
        assert not np.array_equal(a.data, b.data)


class TestDatasetGeneration:
    def test_noisy_count_exact(self):
        plan = plan_dataset(SynthSpec(n_samples=100, frac_noisy=0.05))
        assert sum(flag for _, flag in plan) == 5

    def test_zero_fraction_all_clean(self):
        plan = plan_dataset(SynthSpec(n_samples=20, frac_noisy=0.0))
        assert not any(flag for _, flag in plan)

    def test_fraction_too_small_raises(self):
        with pytest.raises(ParameterError):
            plan_dataset(SynthSpec(n_samples=10, frac_noisy=0.05))

    def test_written_dataset_layout(self, tmp_path):
        spec = SynthSpec(n_samples=12, shape=(1, 6, 8, 8), clean_rank=6, noisy_rank=1,
                         frac_noisy=0.25, seed=9)
        truth = make_dataset(spec, tmp_path)
        files = sorted(p.name for p in tmp_path.glob("*.npy"))
        assert len(files) == 12
        assert (tmp_path / GROUND_TRUTH_FILE).exists()
        assert json.loads((tmp_path / GROUND_TRUTH_FILE).read_text()) == {
            k: bool(v) for k, v in truth.items()
        }
        sidecar = json.loads((tmp_path / CLASS_SIDECAR).read_text())
        assert all(sidecar[stem.removesuffix(".npy")] == [0] for stem in files)

    def test_dataset_bytes_deterministic(self, tmp_path):
        spec = SynthSpec(n_samples=6, shape=(1, 4, 6, 6), clean_rank=4, noisy_rank=1,
                         frac_noisy=0.5, seed=3)
        make_dataset(spec, tmp_path / "a")
        make_dataset(spec, tmp_path / "b")
        for path_a in sorted((tmp_path / "a").iterdir()):
            path_b = tmp_path / "b" / path_a.name
            assert path_a.read_bytes() == path_b.read_bytes()

    def test_noisy_group_scales_separate(self):
        spec = SynthSpec(n_samples=60, frac_noisy=0.2, seed=11)
        noisy_scales, clean_scales = [], []
        for vol, noisy in generate_volumes(spec):
            scale = sample_scale(volume_scales(vol)) / len(vol.class_ids)
            (noisy_scales if noisy else clean_scales).append(scale)
        assert np.mean(clean_scales) - np.mean(noisy_scales) >= 0.1
