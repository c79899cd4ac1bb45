"""Run configuration: versioned JSON schema binding datasets to network specs.

Unknown keys are errors (they are almost always typos in hyperparameter
names). Dataset paths resolve relative to the config file, falling back to
the DWNET_DATA_DIR environment variable; all paths must resolve at
validation time. All randomness flows from the single master_seed field.
"""

import json
import os
from dataclasses import dataclass, field

from .data import load_cifar10, load_idx, make_synthetic_digits, make_toy_dataset
from .network import NetworkSpec, SpecError, preset
from .tensor import Rng, derive_seed

CONFIG_VERSION = 1

MNIST_DEFAULT_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}


class ConfigError(ValueError):
    """A config file is malformed; the message names the offending field."""


def _require_keys(section, allowed, where):
    unknown = sorted(set(section) - set(allowed))
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")


def _get(section, key, kind, where, default=None, required=False):
    if key not in section:
        if required:
            raise ConfigError(f"{where}.{key}: required field missing")
        return default
    value = section[key]
    if kind is float and isinstance(value, int):
        value = float(value)
    if not isinstance(value, kind) or isinstance(value, bool) and kind is not bool:
        raise ConfigError(f"{where}.{key}: expected {kind.__name__}, got {value!r}")
    return value


@dataclass
class RunConfig:
    dataset: dict
    network: dict
    experiment: dict
    output_dir: str
    config_dir: str = "."
    raw: dict = field(default_factory=dict)

    @classmethod
    def from_file(cls, path):
        try:
            with open(path) as f:
                raw = json.load(f)
        except FileNotFoundError:
            raise ConfigError(f"config: file not found: {path}")
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config: invalid JSON in {path}: {exc}")
        return cls.from_dict(raw, config_dir=os.path.dirname(os.path.abspath(path)))

    @classmethod
    def from_dict(cls, raw, config_dir="."):
        if not isinstance(raw, dict):
            raise ConfigError("config: top level must be an object")
        _require_keys(raw, ("version", "dataset", "network", "experiment", "output_dir"),
                      "config")
        version = _get(raw, "version", int, "config", required=True)
        if version != CONFIG_VERSION:
            raise ConfigError(f"config.version: expected {CONFIG_VERSION}, got {version}")
        dataset = _get(raw, "dataset", dict, "config", required=True)
        network = _get(raw, "network", dict, "config", required=True)
        experiment = _get(raw, "experiment", dict, "config", default={})
        output_dir = _get(raw, "output_dir", str, "config", default="out")
        cfg = cls(dataset=dataset, network=network, experiment=experiment,
                  output_dir=output_dir, config_dir=config_dir, raw=raw)
        cfg.validate()
        return cfg

    # -- validation ---------------------------------------------------------

    def validate(self):
        self._validate_dataset()
        self._validate_network()
        self._validate_experiment()
        return self

    def _validate_dataset(self):
        d = self.dataset
        kind = _get(d, "kind", str, "dataset", required=True)
        if kind == "mnist":
            _require_keys(d, ("kind", "train_images", "train_labels", "test_images",
                              "test_labels", "train_subset", "test_subset"), "dataset")
            for key in ("train_images", "train_labels", "test_images", "test_labels"):
                self._resolve_path(d.get(key, MNIST_DEFAULT_FILES[key]), f"dataset.{key}")
        elif kind == "cifar10":
            _require_keys(d, ("kind", "train_batches", "test_batch", "train_subset",
                              "test_subset"), "dataset")
            batches = _get(d, "train_batches", list, "dataset", required=True)
            for i, p in enumerate(batches):
                self._resolve_path(p, f"dataset.train_batches[{i}]")
            self._resolve_path(_get(d, "test_batch", str, "dataset", required=True),
                               "dataset.test_batch")
        elif kind in ("two_gaussians", "xor", "synthetic_digits"):
            _require_keys(d, ("kind", "n_train", "n_test"), "dataset")
            for key in ("n_train", "n_test"):
                n = _get(d, key, int, "dataset", required=True)
                if n < 4:
                    raise ConfigError(f"dataset.{key}: must be >= 4, got {n}")
        else:
            raise ConfigError(f"dataset.kind: unknown {kind!r}")

    def _validate_network(self):
        n = self.network
        _require_keys(n, ("preset", "layers", "input_shape", "double_weight",
                          "hidden_units", "loss", "learning_rate", "batch_size",
                          "optimizer", "gamma_init", "weight_sigma", "iterations"),
                      "network")
        if ("preset" in n) == ("layers" in n):
            raise ConfigError("network: exactly one of preset/layers is required")
        try:
            self.network_spec()
        except SpecError as exc:
            raise ConfigError(f"network: {exc}")

    def _validate_experiment(self):
        e = self.experiment
        _require_keys(e, ("n_seeds", "burn_in", "master_seed", "test_subset_size",
                          "eval_cadence", "paired", "jobs"), "experiment")
        bounds = {"n_seeds": 2, "burn_in": 0, "master_seed": 0,
                  "test_subset_size": 1, "eval_cadence": 1, "jobs": 1}
        for key, low in bounds.items():
            if key in e:
                value = _get(e, key, int, "experiment")
                if value < low:
                    raise ConfigError(f"experiment.{key}: must be >= {low}, got {value}")
        if "paired" in e and not isinstance(e["paired"], bool):
            raise ConfigError(f"experiment.paired: expected bool, got {e['paired']!r}")

    # -- resolution ---------------------------------------------------------

    def _resolve_path(self, path, where):
        if not isinstance(path, str):
            raise ConfigError(f"{where}: expected path string, got {path!r}")
        candidates = [path if os.path.isabs(path) else os.path.join(self.config_dir, path)]
        data_dir = os.environ.get("DWNET_DATA_DIR")
        if data_dir and not os.path.isabs(path):
            candidates.append(os.path.join(data_dir, path))
        for cand in candidates:
            if os.path.exists(cand):
                return cand
        raise ConfigError(f"{where}: path not found: {path} "
                          f"(searched {', '.join(candidates)})")

    def network_spec(self, double_weight=None):
        """Build the NetworkSpec; double_weight overrides the config flag."""
        n = self.network
        dw = n.get("double_weight", False) if double_weight is None else double_weight
        if "preset" in n:
            spec = preset(n["preset"], double_weight=dw,
                          hidden_units=n.get("hidden_units"))
        else:
            layer_dicts = [dict(layer) for layer in n["layers"]]
            if dw:
                for layer in layer_dicts:
                    if layer.get("type") == "dense":
                        layer["double_weight"] = True
            elif double_weight is False:
                for layer in layer_dicts:
                    layer.pop("double_weight", None)
            spec = NetworkSpec.from_dict({
                "input_shape": n["input_shape"], "layers": layer_dicts,
                "loss": n.get("loss", "cross_entropy"),
            })
        for key in ("learning_rate", "batch_size", "iterations"):
            if key in n:
                setattr(spec, key, n[key])
        if "optimizer" in n:
            spec.optimizer = dict(n["optimizer"])
        if "gamma_init" in n:
            spec.init = dict(spec.init, gamma_init=n["gamma_init"])
        if "weight_sigma" in n:
            spec.init = dict(spec.init, weight_sigma=n["weight_sigma"])
        spec.seed = self.master_seed()
        return spec.validate()

    def master_seed(self):
        return self.experiment.get("master_seed", 0)

    def experiment_params(self):
        e = self.experiment
        return {
            "n_seeds": e.get("n_seeds", 10),
            "burn_in": e.get("burn_in", 1500),
            "master_seed": self.master_seed(),
            "test_subset_size": e.get("test_subset_size", 1000),
            "eval_cadence": e.get("eval_cadence", 1),
            "paired": e.get("paired", True),
            "jobs": e.get("jobs", os.cpu_count() or 1),
        }

    def load_datasets(self):
        """Returns (train Dataset, test Dataset) per the dataset section."""
        d = self.dataset
        kind = d["kind"]
        if kind == "mnist":
            paths = {key: self._resolve_path(d.get(key, MNIST_DEFAULT_FILES[key]),
                                             f"dataset.{key}")
                     for key in MNIST_DEFAULT_FILES}
            train = load_idx(paths["train_images"], paths["train_labels"], split="train")
            test = load_idx(paths["test_images"], paths["test_labels"], split="test")
        elif kind == "cifar10":
            batches = [self._resolve_path(p, "dataset.train_batches")
                       for p in d["train_batches"]]
            train = load_cifar10(batches, split="train")
            test = load_cifar10(self._resolve_path(d["test_batch"], "dataset.test_batch"),
                                split="test")
        elif kind == "synthetic_digits":
            seed = derive_seed(self.master_seed(), "fixture")
            train = make_synthetic_digits(Rng(seed), d["n_train"], split="train")
            test = make_synthetic_digits(Rng(seed), d["n_test"], split="test")
        else:
            seed = self.master_seed()
            train = make_toy_dataset(Rng(derive_seed(seed, "fixture", "train")),
                                     d["n_train"], kind=kind, split="train")
            test = make_toy_dataset(Rng(derive_seed(seed, "fixture", "test")),
                                    d["n_test"], kind=kind, split="test")
        if "train_subset" in d:
            train = train.subset(d["train_subset"])
        if "test_subset" in d:
            test = test.subset(d["test_subset"])
        return train, test
