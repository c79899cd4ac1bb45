"""Network assembly: declarative specs, presets, the Model, gradient checking.

Parameter draw order is fixed and documented: every tensor is drawn from its
own substream seeded by (spec.seed, layer index, tensor name), visiting
layers in order and, within a dense layer, w then w2 then b. Independent
substreams mean the w draw of layer i is bit-identical whether or not the
layer carries a second weight matrix, which is what makes paired
standard-vs-double-weight comparisons share their initial w and b exactly.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import layers as L
from .tensor import Rng, derive_seed, draw_truncated_normal

GRADIENT_CHECK_GUARD = 20_000


class SpecError(ValueError):
    """A network spec field is missing, malformed or out of bounds."""


@dataclass
class DenseSpec:
    units: int
    activation: str
    double_weight: bool = False

    def to_dict(self):
        return {"type": "dense", "units": self.units, "activation": self.activation,
                "double_weight": self.double_weight}


@dataclass
class ConvSpec:
    depth: int
    window: int
    stride: int
    activation: str

    def to_dict(self):
        return {"type": "conv", "depth": self.depth, "window": self.window,
                "stride": self.stride, "activation": self.activation}


def layer_spec_from_dict(d):
    d = dict(d)
    kind = d.pop("type", None)
    try:
        if kind == "dense":
            return DenseSpec(**d)
        if kind == "conv":
            return ConvSpec(**d)
    except TypeError as exc:
        raise SpecError(f"layers: bad {kind} field: {exc}")
    raise SpecError(f"layers: unknown layer type {kind!r}")


@dataclass
class NetworkSpec:
    """Architecture plus training hyperparameters, JSON round-trippable."""

    input_shape: tuple
    layers: list
    loss: str = "cross_entropy"
    learning_rate: float = 0.003
    batch_size: int = 100
    optimizer: dict = field(default_factory=lambda: {"kind": "adam", "beta1": 0.9,
                                                     "beta2": 0.999, "eps": 1e-8})
    init: dict = field(default_factory=lambda: {"weight_sigma": 0.1,
                                                "gamma_init": "truncated_normal"})
    iterations: int = 5000
    seed: int = 0

    def validate(self):
        if not self.layers:
            raise SpecError("layers: at least one layer required")
        for i, layer in enumerate(self.layers):
            if isinstance(layer, DenseSpec):
                if layer.units < 1:
                    raise SpecError(f"layers[{i}].units: must be >= 1, got {layer.units}")
                if layer.activation not in L.ACTIVATIONS:
                    raise SpecError(f"layers[{i}].activation: unknown {layer.activation!r}")
            elif isinstance(layer, ConvSpec):
                if layer.window < 1:
                    raise SpecError(f"layers[{i}].window: must be >= 1, got {layer.window}")
                if layer.stride not in (1, 2):
                    raise SpecError(f"layers[{i}].stride: must be 1 or 2, got {layer.stride}")
                if layer.activation not in L.ACTIVATIONS:
                    raise SpecError(f"layers[{i}].activation: unknown {layer.activation!r}")
                if layer.activation == "softmax":
                    raise SpecError(f"layers[{i}].activation: softmax is final-dense only")
            else:
                raise SpecError(f"layers[{i}]: unknown descriptor {type(layer).__name__}")
        for i, layer in enumerate(self.layers[:-1]):
            if getattr(layer, "activation", None) == "softmax":
                raise SpecError(f"layers[{i}].activation: softmax only on the final layer")
        final = self.layers[-1]
        if self.loss == "cross_entropy":
            if not isinstance(final, DenseSpec) or final.activation != "softmax":
                raise SpecError("loss: cross_entropy requires a final dense softmax layer")
        elif self.loss == "sse":
            if getattr(final, "activation", None) == "softmax":
                raise SpecError("loss: sse does not pair with a softmax final layer")
        else:
            raise SpecError(f"loss: unknown {self.loss!r}")
        if self.learning_rate <= 0:
            raise SpecError(f"learning_rate: must be > 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise SpecError(f"batch_size: must be >= 1, got {self.batch_size}")
        if self.iterations < 0:
            raise SpecError(f"iterations: must be >= 0, got {self.iterations}")
        if self.optimizer.get("kind") not in ("adam", "sgd"):
            raise SpecError(f"optimizer.kind: must be adam or sgd, got {self.optimizer.get('kind')!r}")
        if self.init.get("gamma_init") not in ("truncated_normal", "ones"):
            raise SpecError(f"init.gamma_init: must be truncated_normal or ones, "
                            f"got {self.init.get('gamma_init')!r}")
        if not self.init.get("weight_sigma", 0) > 0:
            raise SpecError(f"init.weight_sigma: must be > 0, got {self.init.get('weight_sigma')}")
        return self

    def to_dict(self):
        return {
            "input_shape": list(self.input_shape),
            "layers": [layer.to_dict() for layer in self.layers],
            "loss": self.loss,
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "optimizer": dict(self.optimizer),
            "init": dict(self.init),
            "iterations": self.iterations,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["input_shape"] = tuple(d["input_shape"])
        d["layers"] = [layer_spec_from_dict(x) for x in d["layers"]]
        return cls(**d).validate()

    def with_seed(self, seed):
        return replace(self, seed=int(seed))


# ---------------------------------------------------------------------------
# presets (every field overridable downstream)

PRESET_NAMES = ("mnist-fnn", "mnist-cnn", "cifar10-cnn")


def preset(name, double_weight=False, hidden_units=None):
    """Named architectures with their stock hyperparameters.

    mnist-fnn:   784 -> 200/100/60/30 sigmoid -> 10 softmax, lr 0.003, batch 100
    mnist-cnn:   conv 4/8/12 (5x5 s1, 5x5 s2, 4x4 s2, relu) -> 200/80 relu
                 -> 10 softmax, lr 0.0008, batch 100
    cifar10-cnn: same topology on 32x32x3, lr 0.0006, batch 200
    double_weight marks every dense layer; conv kernels stay single-weight.
    """
    if name == "mnist-fnn":
        widths = list(hidden_units) if hidden_units is not None else [200, 100, 60, 30]
        dense = [DenseSpec(units=w, activation="sigmoid", double_weight=double_weight)
                 for w in widths]
        dense.append(DenseSpec(units=10, activation="softmax", double_weight=double_weight))
        return NetworkSpec(input_shape=(784,), layers=dense, learning_rate=0.003,
                           batch_size=100).validate()
    if name in ("mnist-cnn", "cifar10-cnn"):
        if hidden_units is not None:
            raise SpecError("hidden_units: only adjustable on the mnist-fnn preset")
        convs = [ConvSpec(depth=4, window=5, stride=1, activation="relu"),
                 ConvSpec(depth=8, window=5, stride=2, activation="relu"),
                 ConvSpec(depth=12, window=4, stride=2, activation="relu")]
        dense = [DenseSpec(units=200, activation="relu", double_weight=double_weight),
                 DenseSpec(units=80, activation="relu", double_weight=double_weight),
                 DenseSpec(units=10, activation="softmax", double_weight=double_weight)]
        if name == "mnist-cnn":
            return NetworkSpec(input_shape=(28, 28, 1), layers=convs + dense,
                               learning_rate=0.0008, batch_size=100).validate()
        return NetworkSpec(input_shape=(32, 32, 3), layers=convs + dense,
                           learning_rate=0.0006, batch_size=200).validate()
    raise SpecError(f"preset: unknown {name!r} (known: {', '.join(PRESET_NAMES)})")


# ---------------------------------------------------------------------------
# model


class DenseLayer:
    def __init__(self, spec, params):
        self.spec = spec
        self.params = params

    def forward(self, x, activation=None):
        act = activation if activation is not None else self.spec.activation
        if x.ndim > 2:  # row-major flatten over (H, W, c) for dense input
            shape = x.shape
            out, cache = L.dense_forward(self.params, x.reshape(shape[0], -1), act)
            cache.input_shape = shape
            return out, cache
        return L.dense_forward(self.params, x, act)

    def backward(self, cache, upstream, preactivation_grad=False):
        grads, grad_input = L.dense_backward(self.params, cache, upstream,
                                             preactivation_grad=preactivation_grad)
        if cache.input_shape is not None:
            grad_input = grad_input.reshape(cache.input_shape)
        return grads, grad_input

    def tensors(self):
        named = [("w", self.params.w)]
        if self.params.w2 is not None:
            named.append(("w2", self.params.w2))
        named.append(("b", self.params.b))
        return named


class ConvLayer:
    def __init__(self, spec, params):
        self.spec = spec
        self.params = params

    def forward(self, x):
        return L.conv2d_forward(self.params, x, self.spec.activation)

    def backward(self, cache, upstream, preactivation_grad=False):
        if preactivation_grad:
            raise RuntimeError("fused loss gradients only enter a dense final layer")
        return L.conv2d_backward(self.params, cache, upstream)

    def tensors(self):
        return [("kernels", self.params.kernels), ("b", self.params.b)]


class Model:
    """A built network: layer objects plus the bookkeeping train() needs."""

    def __init__(self, spec, layer_objs):
        self.spec = spec
        self.layers = layer_objs
        self.iteration = 0
        self.optimizer = None      # attached by the training loop
        self.data_epoch = 0
        self.data_cursor = 0

    def forward(self, x, want_caches=False):
        """Final-layer output; logits (pre-softmax) when loss is cross_entropy."""
        x = np.asarray(x, dtype=np.float64)
        caches = []
        fused = self.spec.loss == "cross_entropy"
        for i, layer in enumerate(self.layers):
            if fused and i == len(self.layers) - 1:
                # keep logits: the softmax lives inside the loss
                x, cache = layer.forward(x, activation="linear")
            else:
                x, cache = layer.forward(x)
            caches.append(cache)
        return (x, caches) if want_caches else x

    def predict_proba(self, x):
        out = self.forward(x)
        if self.spec.loss == "cross_entropy":
            return L.activation_apply("softmax", out)
        return out

    def loss_and_gradients(self, x, target):
        """Batch-mean loss plus per-layer gradient dicts (reverse layer order
        recomposed to forward order)."""
        out, caches = self.forward(x, want_caches=True)
        loss, grad = L.loss_and_grad(self.spec.loss, out, target)
        fused = self.spec.loss == "cross_entropy"
        grads = [None] * len(self.layers)
        for i in range(len(self.layers) - 1, -1, -1):
            pre = fused and i == len(self.layers) - 1
            grads[i], grad = self.layers[i].backward(caches[i], grad,
                                                     preactivation_grad=pre)
        return loss, grads

    def parameters(self):
        """Ordered (name, array) pairs; the order is the documented draw order."""
        out = []
        for i, layer in enumerate(self.layers):
            for name, arr in layer.tensors():
                out.append((f"layer{i}.{name}", arr))
        return out

    def parameter_count(self):
        return sum(arr.size for _, arr in self.parameters())


def build_network(spec, rng=None):
    """Materialize a Model from a spec; the seed fully determines every tensor.

    Weights and kernels come from the +/-2 sigma truncated normal; second
    weights follow init.gamma_init (truncated_normal draws their own stream,
    ones draws nothing); biases are zeros.
    """
    spec.validate()
    base_seed = rng.seed if rng is not None else spec.seed
    sigma = float(spec.init["weight_sigma"])
    gamma_init = spec.init["gamma_init"]

    def draw(i, name, shape):
        stream = Rng(derive_seed(base_seed, "layer", i, name))
        return draw_truncated_normal(stream, shape, 0.0, sigma)

    shape = tuple(spec.input_shape)
    built = []
    for i, layer in enumerate(spec.layers):
        if isinstance(layer, DenseSpec):
            fan_in = int(np.prod(shape))
            w = draw(i, "w", (layer.units, fan_in))
            if layer.double_weight:
                w2 = (draw(i, "w2", (layer.units, fan_in)) if gamma_init == "truncated_normal"
                      else np.ones((layer.units, fan_in)))
            else:
                w2 = None
            params = L.DenseParams(w=w, b=np.zeros(layer.units), w2=w2)
            built.append(DenseLayer(layer, params))
            shape = (layer.units,)
        else:
            if len(shape) != 3:
                raise SpecError(f"layers[{i}]: conv needs (H, W, c) input, have {shape}")
            kernels = draw(i, "kernels", (layer.window, layer.window, shape[2], layer.depth))
            params = L.ConvParams(kernels=kernels, b=np.zeros(layer.depth),
                                  stride=layer.stride)
            built.append(ConvLayer(layer, params))
            oh = -(-shape[0] // layer.stride)
            ow = -(-shape[1] // layer.stride)
            shape = (oh, ow, layer.depth)
    return Model(spec, built)


# ---------------------------------------------------------------------------
# gradient checking


def gradient_check(model, images, targets, epsilon=1e-5, grads_override=None):
    """Max relative error per parameter tensor, analytic vs central differences.

    Perturbs every element, so models above GRADIENT_CHECK_GUARD parameters
    are refused. Relative error per element is |a - n| / max(|a|, |n|, 1e-8).

    epsilon may be a sequence of steps: each element is then certified at
    whichever step estimates it best. Large gradients are truncation-limited
    (want a small step) while near-zero gradients are cancellation-limited
    against the 1e-8 floor (want a large step); no single step serves both
    regimes in deep stacks. grads_override exists for negative controls.
    """
    total = model.parameter_count()
    if total > GRADIENT_CHECK_GUARD:
        raise ValueError(f"gradient_check: {total} parameters exceeds the "
                         f"{GRADIENT_CHECK_GUARD} guard")
    epsilons = (epsilon,) if np.isscalar(epsilon) else tuple(epsilon)
    _, analytic = model.loss_and_gradients(images, targets)
    if grads_override is not None:
        analytic = grads_override(analytic)
    report = {}
    for i, layer in enumerate(model.layers):
        for name, arr in layer.tensors():
            flat = arr.reshape(-1)
            a = analytic[i][name].reshape(-1)
            best = np.full(flat.size, np.inf)
            for eps in epsilons:
                for j in range(flat.size):
                    orig = flat[j]
                    flat[j] = orig + eps
                    up, _ = L.loss_and_grad(model.spec.loss, model.forward(images),
                                            targets)
                    flat[j] = orig - eps
                    dn, _ = L.loss_and_grad(model.spec.loss, model.forward(images),
                                            targets)
                    flat[j] = orig
                    numeric = (up - dn) / (2.0 * eps)
                    denom = max(abs(a[j]), abs(numeric), 1e-8)
                    best[j] = min(best[j], abs(a[j] - numeric) / denom)
            report[f"layer{i}.{name}"] = float(np.max(best))
    return report
