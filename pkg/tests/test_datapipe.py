import logging

import numpy as np
import pytest

from declip.datapipe import (Batch, DatasetConfig, PairDataset, batch_iterator,
                             make_training_pair, pair_from_crop, random_crop,
                             sample_thresholds)
from declip.imagecore import (ClipMode, ClipThresholds, apply_clip, compute_clip_mask,
                              detect_saturation, write_png)


class TestThresholds:
    def test_ranges(self):
        gen = np.random.default_rng(0)
        draws = [sample_thresholds(gen) for _ in range(10_000)]
        lo = np.array([t.lo for t in draws])
        hi = np.array([t.hi for t in draws])
        assert np.all(lo <= 80 / 255) and np.all(80 / 255 < 175 / 255)
        assert hi.min() >= 175 / 255 and hi.max() <= 1.0
        assert lo.min() >= 1 / 255
        # integer levels, full support reached
        assert set(np.rint(hi * 255).astype(int)) == set(range(175, 256))
        assert set(np.rint(lo * 255).astype(int)) == set(range(1, 81))

    def test_deterministic(self):
        a = [sample_thresholds(np.random.default_rng(5)) for _ in range(3)]
        b = [sample_thresholds(np.random.default_rng(5)) for _ in range(3)]
        assert a == b


class TestRandomCrop:
    def test_exact_size_unchanged(self, rng):
        img = rng.random((224, 224, 3))
        np.testing.assert_array_equal(random_crop(img, 224, rng), img)

    def test_shape(self, rng):
        img = rng.random((448, 448, 3))
        for _ in range(5):
            assert random_crop(img, 224, rng).shape == (224, 224, 3)

    def test_window_exhaustive(self, rng):
        # every output must be one of the contiguous windows of the source
        img = rng.random((8, 8, 3))
        windows = {img[i:i + 4, j:j + 4].tobytes() for i in range(5) for j in range(5)}
        seen = set()
        for _ in range(200):
            crop = random_crop(img, 4, rng)
            assert crop.tobytes() in windows
            seen.add(crop.tobytes())
        assert len(seen) > 10

    def test_small_image_upscaled(self, rng):
        out = random_crop(rng.random((20, 30, 3)), 32, rng)
        assert out.shape == (32, 32, 3)
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_zero_area_rejected(self, rng):
        with pytest.raises(ValueError):
            random_crop(np.zeros((0, 5, 3)), 4, rng)


class TestTrainingPair:
    def test_near_identity_clip(self, rng):
        img = rng.uniform(0.1, 0.9, size=(32, 32, 3))
        pair = pair_from_crop(img, ClipThresholds(1 / 255, 1.0))
        np.testing.assert_allclose(pair.clipped, pair.ground_truth, atol=0.01)

    def test_invariants(self, photos, rng):
        cfg = DatasetConfig(source_dir=".", crop_size=32)
        for img in photos:
            pair = make_training_pair(img, cfg, rng)
            assert pair.clipped.shape == pair.ground_truth.shape == pair.mask.shape
            np.testing.assert_array_equal(pair.clipped,
                                          apply_clip(pair.ground_truth, pair.thresholds))
            ref = compute_clip_mask(pair.ground_truth, pair.thresholds)
            np.testing.assert_array_equal(pair.mask.over, ref.over)
            np.testing.assert_array_equal(pair.mask.under, ref.under)
            assert pair.thresholds.lo < pair.thresholds.hi
            # stretch-mode consistency with detect_saturation at eps=0
            det = detect_saturation(pair.clipped, eps=0.0)
            np.testing.assert_array_equal(det.over, pair.mask.over)
            np.testing.assert_array_equal(det.under, pair.mask.under)

    def test_mask_nonempty_when_crop_exceeds_hi(self, photos):
        cfg = DatasetConfig(source_dir=".", crop_size=32)
        gen = np.random.default_rng(3)
        for img in photos:
            pair = make_training_pair(img, cfg, gen)
            exceeds = any(v >= pair.thresholds.hi for v in pair.ground_truth.ravel())
            if exceeds:
                assert pair.mask.over.any()

    def test_crop_size_validation(self):
        with pytest.raises(ValueError):
            DatasetConfig(source_dir=".", crop_size=36)
        with pytest.raises(ValueError):
            DatasetConfig(source_dir=".", crop_size=24)


def _write_dir(tmp_path, n, rng, size=40):
    d = tmp_path / "ds"
    for i in range(n):
        write_png(d / f"{i:02d}.png", rng.random((size, size + 8, 3)))
    return d


class TestBatches:
    def test_batches_per_epoch(self, tmp_path, rng):
        d = _write_dir(tmp_path, 10, rng)
        ds = PairDataset(DatasetConfig(source_dir=d, crop_size=32, batch_size=4))
        assert ds.batches_per_epoch == 2
        batches = list(batch_iterator(ds.cfg, epochs=1))
        assert len(batches) == 2 and all(len(b) == 4 for b in batches)

    def test_same_seed_same_batches(self, tmp_path, rng):
        d = _write_dir(tmp_path, 6, rng)
        cfg = DatasetConfig(source_dir=d, crop_size=32, batch_size=2, seed=11)
        a = list(batch_iterator(cfg, epochs=2))
        b = list(batch_iterator(cfg, epochs=2))
        for x, y in zip(a, b):
            for p, q in zip(x.pairs, y.pairs):
                np.testing.assert_array_equal(p.clipped, q.clipped)
                assert p.thresholds == q.thresholds

    def test_random_access_matches_stream(self, tmp_path, rng):
        d = _write_dir(tmp_path, 6, rng)
        cfg = DatasetConfig(source_dir=d, crop_size=32, batch_size=2, seed=2)
        stream = list(batch_iterator(cfg, epochs=2))
        ds = PairDataset(cfg)
        resumed = list(batch_iterator(cfg, start_step=4, epochs=2))
        for k, b in enumerate(stream):
            np.testing.assert_array_equal(b.tensors()[0], ds.batch(k).tensors()[0])
        for b, r in zip(stream[4:], resumed):
            np.testing.assert_array_equal(b.tensors()[1], r.tensors()[1])

    def test_seeds_change_composition(self, tmp_path, rng):
        d = _write_dir(tmp_path, 10, rng)
        firsts = set()
        for seed in range(100):
            ds = PairDataset(DatasetConfig(source_dir=d, crop_size=32, batch_size=4, seed=seed))
            firsts.add(tuple(sorted(ds.epoch_order(0)[:4])))
        # 210 possible subsets; 100 seeds should give many distinct ones
        assert len(firsts) > 50

    def test_unreadable_skipped(self, tmp_path, rng, caplog):
        d = _write_dir(tmp_path, 3, rng)
        (d / "broken.png").write_bytes(b"not an image")
        with caplog.at_level(logging.WARNING):
            ds = PairDataset(DatasetConfig(source_dir=d, crop_size=32, batch_size=1))
        assert len(ds.files) == 3
        assert "broken.png" in caplog.text

    def test_empty_dataset_fatal(self, tmp_path):
        (tmp_path / "empty").mkdir()
        with pytest.raises(RuntimeError):
            PairDataset(DatasetConfig(source_dir=tmp_path / "empty", crop_size=32))

    def test_tensor_layout(self, photos, rng):
        cfg = DatasetConfig(source_dir=".", crop_size=32, clip_mode=ClipMode.PLATEAU)
        batch = Batch([make_training_pair(p, cfg, rng) for p in photos[:3]])
        clipped, gt = batch.tensors()
        assert clipped.shape == gt.shape == (3, 3, 32, 32)
        np.testing.assert_allclose(gt[1].numpy().transpose(1, 2, 0),
                                   batch.pairs[1].ground_truth, atol=1e-6)
