"""Data pipeline: synthetic generation, splits, folder round-trips,
and augmentation semantics."""

import numpy as np
import pytest

from spsd_vit.data import (
    AugmentConfig,
    DomainDataset,
    SyntheticDomainSpec,
    augment,
    augment_batch,
    channel_stats,
    generate_synthetic,
    load_dataset_root,
    load_domain_folder,
    normalize_only,
    save_dataset_root,
    save_domain_folder,
    split_train_val,
)
from spsd_vit.data.synthetic import CUE_OFFSET, CUE_SIZE
from spsd_vit.errors import ConfigError, IngestError

SPECS = (
    SyntheticDomainSpec(domain_id=0, tint=(0.6, 0.45, 0.4), texture_seed=11,
                        blur_sigma=0.3, cue_prob=0.9, name="warm"),
    SyntheticDomainSpec(domain_id=1, tint=(0.45, 0.48, 0.62), texture_seed=37,
                        blur_sigma=0.5, exposure=1.1, cue_prob=0.2, name="cold"),
)


class TestSyntheticGeneration:
    def test_shapes_labels_and_range(self):
        ds = generate_synthetic(SPECS, per_domain=20, num_classes=5, seed=3)
        assert ds.images.shape == (40, 32, 32, 3)
        assert ds.images.dtype == np.float32
        assert ds.images.min() >= 0.0 and ds.images.max() <= 1.0
        # labels cycle so every class appears per domain
        np.testing.assert_array_equal(ds.labels[:20], np.arange(20) % 5)
        np.testing.assert_array_equal(ds.domain_ids, np.repeat([0, 1], 20))
        assert ds.num_classes == 5

    def test_byte_identical_regeneration(self):
        a = generate_synthetic(SPECS, per_domain=10, num_classes=5, seed=9)
        b = generate_synthetic(SPECS, per_domain=10, num_classes=5, seed=9)
        assert a.images.tobytes() == b.images.tobytes()
        c = generate_synthetic(SPECS, per_domain=10, num_classes=5, seed=10)
        assert a.images.tobytes() != c.images.tobytes()

    def test_samples_independent_of_batch_extent(self):
        """Sample k is a function of (seed, domain, k), not of per_domain."""
        small = generate_synthetic(SPECS[:1], per_domain=10, num_classes=5, seed=4)
        large = generate_synthetic(SPECS[:1], per_domain=30, num_classes=5, seed=4)
        np.testing.assert_array_equal(small.images, large.images[:10])

    def test_cue_agreement_rate_tracks_cue_prob(self):
        ds, cues = generate_synthetic(SPECS, per_domain=600, num_classes=5,
                                      seed=1, return_cues=True)
        agree0 = (cues[:600] == ds.labels[:600]).mean()
        agree1 = (cues[600:] == ds.labels[600:]).mean()
        assert abs(agree0 - 0.9) < 0.04      # binomial noise at n=600
        assert abs(agree1 - 0.2) < 0.05

    def test_uninformative_cue_is_uniform_over_classes(self):
        """cue_prob = 1/C makes the cue class exactly uniform."""
        spec = SyntheticDomainSpec(domain_id=0, cue_prob=0.2)
        ds, cues = generate_synthetic([spec], per_domain=3000, num_classes=5,
                                      seed=2, return_cues=True)
        counts = np.bincount(cues, minlength=5)
        # each class expected 600; 5 sigma band
        assert np.all(np.abs(counts - 600) < 5 * np.sqrt(3000 * 0.2 * 0.8))

    def test_cue_patch_reflects_cue_class(self):
        ds, cues = generate_synthetic(SPECS[:1], per_domain=10, num_classes=3,
                                      seed=5, return_cues=True)
        sl = slice(CUE_OFFSET, CUE_OFFSET + CUE_SIZE)
        from spsd_vit.data.synthetic import CUE_PALETTE
        for img, cue in zip(ds.images, cues):
            patch = img[sl, sl].reshape(-1, 3).mean(axis=0)
            dists = [np.abs(patch - c).sum() for c in CUE_PALETTE[:3]]
            assert int(np.argmin(dists)) == cue

    def test_class_count_changes_blob_mass(self):
        """More blobs must leave a visibly larger bright area."""
        spec = SyntheticDomainSpec(domain_id=0, blur_sigma=0.0,
                                   texture_strength=0.0, cue_prob=0.2)
        ds = generate_synthetic([spec], per_domain=50, num_classes=5, seed=6)
        brightness = ds.images.mean(axis=(1, 2, 3))
        means = [brightness[ds.labels == c].mean() for c in range(5)]
        assert all(means[i] < means[i + 1] for i in range(4))

    @pytest.mark.parametrize("kwargs,err", [
        (dict(specs=[], per_domain=5, num_classes=3), ConfigError),
        (dict(specs=[SPECS[0], SPECS[0]], per_domain=5, num_classes=3), ConfigError),
        (dict(specs=SPECS, per_domain=5, num_classes=1), ConfigError),
        (dict(specs=SPECS, per_domain=5, num_classes=9), ConfigError),
        (dict(specs=SPECS, per_domain=3, num_classes=5), ConfigError),
        (dict(specs=SPECS, per_domain=5, num_classes=3, image_size=8), ConfigError),
    ])
    def test_invalid_arguments_rejected(self, kwargs, err):
        with pytest.raises(err):
            generate_synthetic(**kwargs)

    def test_spec_validation(self):
        with pytest.raises(ConfigError):
            SyntheticDomainSpec(domain_id=-1)
        with pytest.raises(ConfigError):
            SyntheticDomainSpec(domain_id=0, cue_prob=1.5)
        with pytest.raises(ConfigError):
            SyntheticDomainSpec(domain_id=0, exposure=0.0)
        assert SyntheticDomainSpec(domain_id=2).name == "domain2"


class TestDomainDataset:
    def _tiny(self):
        return DomainDataset(
            images=np.zeros((6, 16, 16, 3), dtype=np.float32),
            labels=np.array([0, 1, 2, 0, 1, 2]),
            domain_ids=np.array([0, 0, 0, 1, 1, 1]),
            num_classes=3,
        )

    def test_basic_accessors(self):
        ds = self._tiny()
        assert len(ds) == 6
        assert ds.image_size == 16
        assert ds.domains() == [0, 1]

    def test_subset_and_restrict(self):
        ds = self._tiny()
        sub = ds.subset([0, 3])
        np.testing.assert_array_equal(sub.labels, [0, 0])
        only1 = ds.restrict_domains([1])
        assert len(only1) == 3 and only1.domains() == [1]

    def test_concatenate(self):
        ds = self._tiny()
        both = DomainDataset.concatenate([ds.restrict_domains([0]),
                                          ds.restrict_domains([1])])
        assert len(both) == 6
        np.testing.assert_array_equal(np.sort(both.domain_ids), np.sort(ds.domain_ids))

    def test_validation(self):
        with pytest.raises(ValueError):
            DomainDataset(images=np.zeros((2, 8, 8, 3), dtype=np.float32),
                          labels=np.array([0, 5]), domain_ids=np.zeros(2, int),
                          num_classes=3)
        with pytest.raises(ValueError):
            DomainDataset(images=np.zeros((2, 8, 8, 3), dtype=np.float32),
                          labels=np.array([0]), domain_ids=np.zeros(2, int),
                          num_classes=3)


class TestSplit:
    def _dataset(self, n=100, c=5):
        rng = np.random.default_rng(0)
        return DomainDataset(
            images=rng.uniform(size=(n, 16, 16, 3)).astype(np.float32),
            labels=np.arange(n) % c,
            domain_ids=np.zeros(n, dtype=int),
            num_classes=c,
        )

    def test_partition_is_exact_and_disjoint(self):
        ds = self._dataset(97)
        train, val = split_train_val(ds, 0.8, seed=1)
        assert len(train) == round(0.8 * 97)
        assert len(train) + len(val) == 97
        # disjoint by construction: images from both sides never repeat
        ids = np.concatenate([train.images.reshape(len(train), -1)[:, 0],
                              val.images.reshape(len(val), -1)[:, 0]])
        assert np.unique(ids).size == 97

    def test_stratified_by_class(self):
        ds = self._dataset(100, c=5)
        train, val = split_train_val(ds, 0.8, seed=2)
        for c in range(5):
            assert (train.labels == c).sum() == 16
            assert (val.labels == c).sum() == 4

    def test_seed_controls_split(self):
        ds = self._dataset(50)
        t1, _ = split_train_val(ds, 0.8, seed=3)
        t2, _ = split_train_val(ds, 0.8, seed=3)
        t3, _ = split_train_val(ds, 0.8, seed=4)
        assert t1.images.tobytes() == t2.images.tobytes()
        assert t1.images.tobytes() != t3.images.tobytes()

    def test_list_seed_accepted(self):
        ds = self._dataset(50)
        t1, _ = split_train_val(ds, 0.8, seed=[7, 4, 0])
        t2, _ = split_train_val(ds, 0.8, seed=[7, 4, 0])
        assert t1.images.tobytes() == t2.images.tobytes()

    def test_invalid_fraction_rejected(self):
        ds = self._dataset(20)
        with pytest.raises(ValueError):
            split_train_val(ds, 0.0, seed=0)
        with pytest.raises(ValueError):
            split_train_val(ds, 1.5, seed=0)


class TestFolderRoundTrip:
    def test_save_and_load_single_domain(self, tmp_path):
        ds = generate_synthetic(SPECS[:1], per_domain=6, num_classes=3, seed=0)
        folder = tmp_path / "warm"
        save_domain_folder(folder, ds.images, ds.labels)
        loaded = load_domain_folder(folder, domain_id=4, num_classes=3)
        assert len(loaded) == 6
        np.testing.assert_array_equal(loaded.labels, ds.labels)
        assert set(loaded.domain_ids.tolist()) == {4}
        # PNG quantisation to 8 bits per channel
        assert np.abs(loaded.images - ds.images).max() <= 0.5 / 255 + 1e-6

    def test_save_and_load_dataset_root(self, tmp_path):
        ds = generate_synthetic(SPECS, per_domain=6, num_classes=3, seed=1)
        save_dataset_root(tmp_path / "root", ds, specs=SPECS)
        datasets, names = load_dataset_root(tmp_path / "root")
        assert names == ["cold", "warm"]  # sorted by folder name
        assert sum(len(d) for d in datasets) == 12
        for d in datasets:
            assert d.num_classes == 3

    def test_num_classes_inferred_when_unspecified(self, tmp_path):
        ds = generate_synthetic(SPECS[:1], per_domain=6, num_classes=3, seed=0)
        save_domain_folder(tmp_path / "d", ds.images, ds.labels)
        loaded = load_domain_folder(tmp_path / "d")
        assert loaded.num_classes == 3

    def _write_labels(self, folder, text):
        folder.mkdir(parents=True, exist_ok=True)
        (folder / "labels.csv").write_text(text)

    def test_ingest_errors(self, tmp_path):
        with pytest.raises(IngestError, match="missing labels"):
            load_domain_folder(tmp_path / "nope")

        bad_header = tmp_path / "h"
        self._write_labels(bad_header, "file,klass\n")
        with pytest.raises(IngestError, match="header"):
            load_domain_folder(bad_header)

        bad_fields = tmp_path / "f"
        self._write_labels(bad_fields, "filename,label\na.png,1,9\n")
        with pytest.raises(IngestError, match="2 fields"):
            load_domain_folder(bad_fields)

        dup = tmp_path / "dup"
        self._write_labels(dup, "filename,label\na.png,1\na.png,2\n")
        from PIL import Image
        Image.new("RGB", (8, 8)).save(dup / "a.png")
        with pytest.raises(IngestError, match="duplicate"):
            load_domain_folder(dup)

        bad_label = tmp_path / "l"
        self._write_labels(bad_label, "filename,label\na.png,x\n")
        with pytest.raises(IngestError):
            load_domain_folder(bad_label)

        out_of_range = tmp_path / "r"
        self._write_labels(out_of_range, "filename,label\na.png,7\n")
        with pytest.raises(IngestError):
            load_domain_folder(out_of_range, num_classes=3)

        missing_img = tmp_path / "m"
        self._write_labels(missing_img, "filename,label\na.png,1\n")
        with pytest.raises(IngestError, match="missing"):
            load_domain_folder(missing_img)

        empty = tmp_path / "e"
        self._write_labels(empty, "filename,label\n")
        with pytest.raises(IngestError, match="no samples"):
            load_domain_folder(empty)

    def test_shape_disagreement_rejected(self, tmp_path):
        from PIL import Image
        folder = tmp_path / "s"
        folder.mkdir()
        Image.new("RGB", (8, 8)).save(folder / "a.png")
        Image.new("RGB", (16, 16)).save(folder / "b.png")
        (folder / "labels.csv").write_text("filename,label\na.png,0\nb.png,1\n")
        with pytest.raises(IngestError, match="shape"):
            load_domain_folder(folder)

    def test_root_without_domains_rejected(self, tmp_path):
        (tmp_path / "empty").mkdir()
        with pytest.raises(IngestError):
            load_dataset_root(tmp_path / "empty")


class TestAugment:
    def _image(self, rng):
        return rng.uniform(size=(32, 32, 3)).astype(np.float32)

    def test_identity_config_returns_input_exactly(self, rng):
        """With every stage disabled the pipeline is a byte-exact no-op."""
        cfg = AugmentConfig(out_size=32, crop_scale=(1.0, 1.0),
                            crop_ratio=(1.0, 1.0), flip_prob=0.0,
                            brightness=0.0, contrast=0.0, saturation=0.0,
                            hue=0.0, grayscale_prob=0.0)
        img = self._image(rng)
        state = rng.bit_generator.state
        out = augment(img, rng, cfg)
        np.testing.assert_array_equal(out, img)
        # and no random draws were consumed
        assert rng.bit_generator.state == state

    def test_zero_strength_stages_consume_no_draws(self, rng):
        """Disabled stages must not consume randomness, so enabling one
        stage never shifts another stage's draws."""
        cfg_flip = AugmentConfig(out_size=32, crop_scale=(1.0, 1.0),
                                 crop_ratio=(1.0, 1.0), flip_prob=1.0,
                                 brightness=0.0, contrast=0.0, saturation=0.0,
                                 hue=0.0, grayscale_prob=0.0)
        img = self._image(rng)
        a = augment(img, np.random.default_rng(5), cfg_flip)
        np.testing.assert_array_equal(a, img[:, ::-1])

    def test_output_shape_and_bounds(self, rng):
        cfg = AugmentConfig(out_size=32)
        img = self._image(rng)
        out = augment(img, np.random.default_rng(0), cfg)
        assert out.shape == (32, 32, 3)
        assert out.dtype == np.float32
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_same_stream_same_output(self, rng):
        cfg = AugmentConfig(out_size=32)
        img = self._image(rng)
        a = augment(img, np.random.default_rng(3), cfg)
        b = augment(img, np.random.default_rng(3), cfg)
        np.testing.assert_array_equal(a, b)

    def test_batch_matches_sequential_single_calls(self, rng):
        cfg = AugmentConfig(out_size=32)
        imgs = rng.uniform(size=(4, 32, 32, 3)).astype(np.float32)
        batch_rng = np.random.default_rng(8)
        batch = augment_batch(imgs, batch_rng, cfg)
        seq_rng = np.random.default_rng(8)
        seq = np.stack([augment(img, seq_rng, cfg) for img in imgs])
        np.testing.assert_array_equal(batch, seq)

    def test_grayscale_branch_equalises_channels(self):
        cfg = AugmentConfig(out_size=32, crop_scale=(1.0, 1.0),
                            crop_ratio=(1.0, 1.0), flip_prob=0.0,
                            brightness=0.0, contrast=0.0, saturation=0.0,
                            hue=0.0, grayscale_prob=1.0)
        rng = np.random.default_rng(0)
        img = rng.uniform(size=(32, 32, 3)).astype(np.float32)
        out = augment(img, np.random.default_rng(1), cfg)
        np.testing.assert_allclose(out[..., 0], out[..., 1], atol=1e-6)
        np.testing.assert_allclose(out[..., 1], out[..., 2], atol=1e-6)

    def test_normalisation_applied_last(self, rng):
        mean = (0.5, 0.5, 0.5)
        std = (0.25, 0.25, 0.25)
        cfg = AugmentConfig(out_size=32, crop_scale=(1.0, 1.0),
                            crop_ratio=(1.0, 1.0), flip_prob=0.0,
                            brightness=0.0, contrast=0.0, saturation=0.0,
                            hue=0.0, grayscale_prob=0.0,
                            mean=mean, std=std)
        img = self._image(rng)
        out = augment(img, np.random.default_rng(0), cfg)
        np.testing.assert_allclose(out, (img - 0.5) / 0.25, atol=1e-6)

    def test_channel_stats(self, rng):
        imgs = rng.uniform(size=(10, 8, 8, 3)).astype(np.float32)
        mean, std = channel_stats(imgs)
        np.testing.assert_allclose(mean, imgs.reshape(-1, 3).mean(axis=0), atol=1e-6)
        np.testing.assert_allclose(std, imgs.reshape(-1, 3).std(axis=0), atol=1e-6)

    def test_normalize_only_uses_config_stats(self, rng):
        imgs = rng.uniform(size=(3, 8, 8, 3)).astype(np.float32)
        cfg = AugmentConfig(out_size=8, mean=(0.4, 0.5, 0.6), std=(0.1, 0.2, 0.3))
        out = normalize_only(imgs, cfg)
        want = (imgs - np.array([0.4, 0.5, 0.6], dtype=np.float32)) / \
            np.array([0.1, 0.2, 0.3], dtype=np.float32)
        np.testing.assert_allclose(out, want, atol=1e-6)

    def test_invalid_configs_rejected(self):
        with pytest.raises(ConfigError):
            AugmentConfig(out_size=0)
        with pytest.raises(ConfigError):
            AugmentConfig(out_size=32, crop_scale=(0.9, 0.5))
        with pytest.raises(ConfigError):
            AugmentConfig(out_size=32, flip_prob=1.5)
        with pytest.raises(ConfigError):
            AugmentConfig(out_size=32, hue=0.9)
