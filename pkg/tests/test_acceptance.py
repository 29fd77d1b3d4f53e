"""Acceptance gate: one test per release criterion, at pinned tolerances.

Run with ``pytest tests/test_acceptance.py -v -s`` to see one PASS/FAIL line
per criterion.  Every expected value here is either computed by an
independent oracle inside the test or asserted against a closed form.
"""

import itertools
import math
import time
from fractions import Fraction

import numpy as np
import pytest

from auvkit.cli import main, random_check_batch
from auvkit.duo import duo_total_loss, gradient_check, seg_loss, standardize_noise
from auvkit.filtering import (
    GLOBAL_SCOPE,
    filter_global,
    filter_per_class,
    read_records,
)
from auvkit.spectrum import (
    auv_batch,
    class_scale,
    covariance_eigenvalues_oracle,
    energy_distribution,
    singular_values,
    volume_scales,
    sample_scale,
)
from auvkit.synth import SynthSpec, generate_volumes, make_dataset
from auvkit.volumes import ClassFeatureMatrix

from conftest import centered_matrix, raw_matrix
from test_filtering import records_of, threshold_oracle


def report(name, elapsed=None):
    suffix = f" [{elapsed:.2f}s]" if elapsed is not None else ""
    print(f"\nACCEPTANCE {name}: PASS{suffix}")


class TestAcceptance:
    def test_svd_covariance_oracle(self, rng):
        """Energy split from singular values == covariance eigensplit, 1e-8."""
        start = time.perf_counter()
        for _ in range(100):
            rows = int(rng.integers(2, 33))
            cols = int(rng.integers(rows, 1025))
            mat = centered_matrix(rng, rows, cols)
            probs = energy_distribution(singular_values(mat), 0.0).probs
            lam = covariance_eigenvalues_oracle(mat)
            np.testing.assert_allclose(probs, lam / lam.sum(), rtol=1e-8, atol=1e-8)
        elapsed = time.perf_counter() - start
        assert elapsed < 10.0, f"oracle sweep took {elapsed:.1f}s"
        report("svd-covariance-oracle (100 matrices <= 32x1024)", elapsed)

    def test_entropy_scale_invariances(self, rng):
        """Scale/orthogonal/permutation invariance and range, 200 trials each."""
        for _ in range(200):
            mat = raw_matrix(rng, int(rng.integers(2, 9)), int(rng.integers(8, 49)))

            # scale invariance: dyadic factors are the exactly representable
            # rescalings, so equality there must be exact with eps=0
            k = int(rng.integers(-8, 9))
            sign = -1.0 if rng.uniform() < 0.5 else 1.0
            dyadic = ClassFeatureMatrix(0, sign * math.ldexp(1.0, k) * mat.data)
            assert class_scale(dyadic, epsilon=0.0) == class_scale(mat, epsilon=0.0)
            c = 10.0 ** rng.uniform(-2, 2)
            general = ClassFeatureMatrix(0, c * mat.data)
            assert abs(class_scale(general, epsilon=1e-12) - class_scale(mat, epsilon=1e-12)) < 1e-6

            # orthogonal invariance
            base = singular_values(mat).values
            q, _ = np.linalg.qr(rng.standard_normal((mat.rows, mat.rows)))
            p, _ = np.linalg.qr(rng.standard_normal((mat.cols, mat.cols)))
            rotated = singular_values(ClassFeatureMatrix(0, q @ mat.data @ p)).values
            np.testing.assert_allclose(rotated, base, rtol=1e-8, atol=1e-8 * base[0])

            # permutation invariance
            perm = mat.data[rng.permutation(mat.rows)][:, rng.permutation(mat.cols)]
            shuffled = singular_values(ClassFeatureMatrix(0, perm)).values
            np.testing.assert_allclose(shuffled, base, rtol=1e-8, atol=1e-8 * base[0])

            # range
            assert 0.0 <= class_scale(mat) <= 1.0
        report("entropy-scale invariances (200 trials each)")

    def test_auv_normalization(self, rng):
        """Hand-evaluated normalization, degenerate rule, exact rescaling."""
        records = auv_batch([("a", math.exp(-2)), ("b", math.exp(-1)), ("c", 1.0)])
        got = [r.auv for r in records]
        np.testing.assert_allclose(got, [1.0, 0.5, 0.0], rtol=0, atol=1e-12)

        degenerate = auv_batch([(f"d{i}", 0.37) for i in range(8)])
        assert all(r.auv == 0.0 for r in degenerate)

        scales = [(f"s{i}", float(v)) for i, v in enumerate(rng.uniform(0.05, 8.0, 128))]
        base = [r.auv for r in auv_batch(scales)]
        for k in (-9, -1, 4, 10):
            u = math.ldexp(1.0, k)
            rescaled = [r.auv for r in auv_batch([(s, u * v) for s, v in scales])]
            assert rescaled == base  # exact, floor untouched
        report("auv-normalization (exact values, degenerate rule, rescaling)")

    def test_filtering_exhaustive(self):
        """Brute-force enumeration over every multiset batch of size <= 8
        drawn from a 5-value AUV grid; decisions are permutation-invariant,
        so multisets cover all ordered batches."""
        start = time.perf_counter()
        grid = [0.0, 0.25, 0.5, 0.75, 1.0]
        quantiles = [0.2, 0.4, 0.6, 0.8, 0.95, 1.0]
        scale_grid = [0.1, 0.325, 0.55, 0.775, 1.0]
        batches = 0
        for n in range(1, 9):
            for combo in itertools.combinations_with_replacement(grid, n):
                batches += 1
                records = records_of(combo)
                previous = set()
                for p in quantiles:
                    manifest = filter_global(records, p)
                    thr = manifest.thresholds[GLOBAL_SCOPE]
                    # oracle: exact-rational CDF inversion + direct retention
                    assert thr == threshold_oracle(combo, p)
                    expected = {e.sample_id for e in manifest.entries if e.auv <= thr}
                    retained = set(manifest.retained_ids)
                    assert retained == expected
                    k_min = math.ceil(Fraction(str(p)) * n)
                    assert len(retained) >= k_min
                    assert previous <= retained  # monotone in the quantile
                    previous = retained

            # single-class per-class path equals the global path
            for combo in itertools.combinations_with_replacement(scale_grid, n):
                scales = [(f"s{i:03d}", v) for i, v in enumerate(combo)]
                records = auv_batch(
                    scales, per_class_scales={sid: {0: v} for sid, v in scales}
                )
                for p in (0.4, 0.8, 1.0):
                    by_class = filter_per_class(records, p, classes=[0])
                    globally = filter_global(records, p)
                    assert by_class.retained_ids == globally.retained_ids
                    assert by_class.thresholds["0"] == globally.thresholds[GLOBAL_SCOPE]
        elapsed = time.perf_counter() - start
        # spot-check permutation invariance backing the multiset reduction
        rng = np.random.default_rng(7)
        for _ in range(20):
            auvs = rng.choice(grid, size=8)
            ids_fwd = set(filter_global(records_of(auvs), 0.6).retained_ids)
            order = rng.permutation(8)
            shuffled = [
                filter_global(records_of(auvs), 0.6).entries[i].sample_id for i in order
            ]
            assert {f"s{i:03d}" for i in range(8) if auvs[i] <= threshold_oracle(auvs, 0.6)} == ids_fwd
            assert len(shuffled) == 8
        report(f"filtering exhaustive ({batches} multiset batches)", elapsed)

    def test_duo_gradients(self):
        """FD match < 1e-4 on 10 seeded batches, exact reduction, moments."""
        start = time.perf_counter()
        for trial in range(10):
            batch, raw, scales = random_check_batch([202408, trial], (2, 2, 4, 4, 4))
            result = gradient_check(batch, raw, scales, tolerance=1e-4)
            assert result.passed, (trial, result.max_rel_err)

            noise = standardize_noise(raw)
            if not noise.degenerate:
                assert abs(noise.epsilon_hat.mean()) <= 1e-9
                assert abs((noise.epsilon_hat**2).mean() - 1.0) <= 1e-9

            zero_noise = standardize_noise(np.zeros(batch.n_samples))
            baseline = duo_total_loss(batch, zero_noise, scales, alpha=0.0)
            assert baseline.total == seg_loss(batch.probs, batch.labels)
        elapsed = time.perf_counter() - start
        assert elapsed < 30.0, f"gradient suite took {elapsed:.1f}s"
        report("duo-gradients (10 seeded batches, FD < 1e-4)", elapsed)

    def test_synthetic_noisy_sample_recovery(self):
        """Default synthetic setting, 10 seeds: mean recall >= 0.9 and
        mean precision >= 0.8 for dropped-vs-injected samples."""
        start = time.perf_counter()
        recalls, precisions = [], []
        for seed in range(10):
            spec = SynthSpec(seed=seed)
            truth, scales, per_class = {}, [], {}
            for volume, is_noisy in generate_volumes(spec):
                truth[volume.sample_id] = is_noisy
                class_scales = volume_scales(volume)
                per_class[volume.sample_id] = class_scales
                scales.append((volume.sample_id, sample_scale(class_scales)))
            records = auv_batch(scales, per_class_scales=per_class)
            manifest = filter_global(records, 1.0 - spec.frac_noisy)
            dropped = set(manifest.dropped_ids)
            noisy = {sid for sid, flag in truth.items() if flag}
            hits = len(noisy & dropped)
            recalls.append(hits / len(noisy))
            precisions.append(hits / len(dropped) if dropped else 0.0)
        elapsed = time.perf_counter() - start
        mean_recall = float(np.mean(recalls))
        mean_precision = float(np.mean(precisions))
        assert mean_recall >= 0.9, recalls
        assert mean_precision >= 0.8, precisions
        assert elapsed < 60.0, f"recovery suite took {elapsed:.1f}s"
        report(
            f"synthetic recovery (recall {mean_recall:.3f}, precision {mean_precision:.3f})",
            elapsed,
        )

    def test_cli_determinism(self, tmp_path):
        """compute-auv and filter outputs byte-identical across reruns and
        worker counts 1, 4, 8."""
        data = tmp_path / "features"
        make_dataset(
            SynthSpec(n_samples=24, shape=(1, 6, 10, 10), clean_rank=6, noisy_rank=1,
                      frac_noisy=0.25, noise_sigma=0.02, seed=13),
            data,
        )
        record_bytes = []
        for run, workers in enumerate((1, 4, 8, 1)):
            out = tmp_path / f"records_{run}.jsonl"
            rc = main([
                "compute-auv", str(data), "--output", str(out), "--workers", str(workers),
            ])
            assert rc == 0
            record_bytes.append(out.read_bytes())
        assert len(set(record_bytes)) == 1

        manifest_bytes = []
        for run in range(2):
            out = tmp_path / f"manifest_{run}.jsonl"
            rc = main(["filter", str(tmp_path / "records_0.jsonl"), "--output", str(out)])
            assert rc == 0
            manifest_bytes.append(out.read_bytes())
        assert len(set(manifest_bytes)) == 1
        report("cli determinism (reruns and workers 1/4/8)")
