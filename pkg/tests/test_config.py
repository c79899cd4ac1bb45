import json

import numpy as np
import pytest

from dwnet.config import ConfigError, RunConfig
from dwnet.data import write_cifar10, write_idx
from dwnet.tensor import Rng


def base_config(**overrides):
    config = {
        "version": 1,
        "dataset": {"kind": "two_gaussians", "n_train": 40, "n_test": 20},
        "network": {"preset": "mnist-fnn"},
        "experiment": {"master_seed": 3},
        "output_dir": "out",
    }
    config.update(overrides)
    return config


class TestSchema:
    def test_version_required(self):
        cfg = base_config()
        del cfg["version"]
        with pytest.raises(ConfigError, match="version"):
            RunConfig.from_dict(cfg)

    def test_version_mismatch(self):
        with pytest.raises(ConfigError, match="version"):
            RunConfig.from_dict(base_config(version=2))

    def test_unknown_top_level_key(self):
        with pytest.raises(ConfigError, match="datasets"):
            RunConfig.from_dict(base_config(datasets={}))

    def test_unknown_experiment_key(self):
        cfg = base_config(experiment={"master_seed": 1, "burnin": 5})
        with pytest.raises(ConfigError, match="burnin"):
            RunConfig.from_dict(cfg)

    def test_experiment_bounds(self):
        cfg = base_config(experiment={"n_seeds": 1})
        with pytest.raises(ConfigError, match="n_seeds"):
            RunConfig.from_dict(cfg)

    def test_preset_and_layers_exclusive(self):
        cfg = base_config(network={"preset": "mnist-fnn", "layers": []})
        with pytest.raises(ConfigError, match="preset/layers"):
            RunConfig.from_dict(cfg)

    def test_wrong_type_named(self):
        cfg = base_config(experiment={"master_seed": "seven"})
        with pytest.raises(ConfigError, match="master_seed"):
            RunConfig.from_dict(cfg)

    def test_bad_dataset_kind(self):
        cfg = base_config(dataset={"kind": "imagenet"})
        with pytest.raises(ConfigError, match="imagenet"):
            RunConfig.from_dict(cfg)


class TestNetworkSection:
    def test_preset_overrides_apply(self):
        cfg = RunConfig.from_dict(base_config(
            network={"preset": "mnist-fnn", "hidden_units": [12, 6],
                     "learning_rate": 0.5, "iterations": 7, "batch_size": 9}))
        spec = cfg.network_spec()
        assert [l.units for l in spec.layers] == [12, 6, 10]
        assert spec.learning_rate == 0.5
        assert spec.iterations == 7 and spec.batch_size == 9
        assert spec.seed == 3

    def test_double_weight_override(self):
        cfg = RunConfig.from_dict(base_config())
        spec = cfg.network_spec(double_weight=True)
        assert all(l.double_weight for l in spec.layers)
        spec = cfg.network_spec(double_weight=False)
        assert not any(l.double_weight for l in spec.layers)

    def test_custom_layers(self):
        cfg = RunConfig.from_dict(base_config(network={
            "layers": [{"type": "dense", "units": 5, "activation": "relu"},
                       {"type": "dense", "units": 2, "activation": "softmax"}],
            "input_shape": [4],
        }))
        spec = cfg.network_spec()
        assert spec.input_shape == (4,)
        assert [l.units for l in spec.layers] == [5, 2]

    def test_gamma_init_override(self):
        cfg = RunConfig.from_dict(base_config(
            network={"preset": "mnist-fnn", "gamma_init": "ones"}))
        assert cfg.network_spec().init["gamma_init"] == "ones"

    def test_invalid_network_reported_as_config_error(self):
        cfg = base_config(network={"preset": "mnist-fnn", "learning_rate": -2})
        with pytest.raises(ConfigError, match="learning_rate"):
            RunConfig.from_dict(cfg)


class TestDatasetLoading:
    def test_toy_kinds_load(self):
        for kind in ("two_gaussians", "xor"):
            cfg = RunConfig.from_dict(base_config(
                dataset={"kind": kind, "n_train": 24, "n_test": 12}))
            train, test = cfg.load_datasets()
            assert len(train) == 24 and len(test) == 12

    def test_synthetic_digits_share_prototypes(self):
        cfg = RunConfig.from_dict(base_config(
            dataset={"kind": "synthetic_digits", "n_train": 200, "n_test": 100}))
        train, test = cfg.load_datasets()
        assert train.images.shape == (200, 28, 28, 1)
        centroids = np.stack([train.images[train.labels == c].mean(axis=0)
                              for c in range(10)])
        d = ((test.images.reshape(100, -1)[:, None, :]
              - centroids.reshape(10, -1)[None, :, :]) ** 2).sum(axis=2)
        assert float(np.mean(np.argmin(d, axis=1) == test.labels)) > 0.5

    def test_mnist_via_env_fallback(self, tmp_path, monkeypatch):
        data_dir = tmp_path / "data"
        data_dir.mkdir()
        rng = Rng(1)
        for prefix, n in (("train", 30), ("t10k", 10)):
            write_idx(str(data_dir / f"{prefix}-images-idx3-ubyte"),
                      str(data_dir / f"{prefix}-labels-idx1-ubyte"),
                      rng.integers(0, 255, size=(n, 28, 28)).astype(np.uint8),
                      rng.integers(0, 10, size=n).astype(np.uint8))
        monkeypatch.setenv("DWNET_DATA_DIR", str(data_dir))
        cfg = RunConfig.from_dict(base_config(
            dataset={"kind": "mnist", "train_subset": 20}), config_dir=str(tmp_path))
        train, test = cfg.load_datasets()
        assert len(train) == 20 and len(test) == 10

    def test_cifar_via_config_dir(self, tmp_path):
        rng = Rng(2)
        for name in ("b1.bin", "b2.bin", "test.bin"):
            write_cifar10(str(tmp_path / name),
                          rng.integers(0, 255, size=(6, 32, 32, 3)).astype(np.uint8),
                          rng.integers(0, 10, size=6).astype(np.uint8))
        cfg = RunConfig.from_dict(base_config(
            dataset={"kind": "cifar10", "train_batches": ["b1.bin", "b2.bin"],
                     "test_batch": "test.bin"}), config_dir=str(tmp_path))
        train, test = cfg.load_datasets()
        assert len(train) == 12 and len(test) == 6

    def test_missing_path_lists_candidates(self, tmp_path, monkeypatch):
        monkeypatch.delenv("DWNET_DATA_DIR", raising=False)
        cfg = base_config(dataset={"kind": "mnist"})
        with pytest.raises(ConfigError, match="train-images-idx3-ubyte"):
            RunConfig.from_dict(cfg, config_dir=str(tmp_path))

    def test_jobs_defaults_to_cores(self):
        import os
        cfg = RunConfig.from_dict(base_config())
        assert cfg.experiment_params()["jobs"] == (os.cpu_count() or 1)
