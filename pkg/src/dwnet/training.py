"""Training loop, optimizers and the binary checkpoint format.

A trained run is a pure function of (spec, seed, dataset): minibatches come
from seed-derived per-epoch shuffles, the loss is the batch mean, and the
optimizer carries explicit per-tensor state, so a checkpoint written
mid-run resumes to the bitwise-identical trajectory.
"""

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .data import BatchIterator
from .network import NetworkSpec, build_network
from .tensor import GENERATOR_ALGORITHM, derive_seed

CHECKPOINT_MAGIC = b"DWCK"
CHECKPOINT_VERSION = 1


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; carries the offending iteration."""

    def __init__(self, iteration, loss):
        super().__init__(f"non-finite loss {loss!r} at iteration {iteration}")
        self.iteration = iteration


# ---------------------------------------------------------------------------
# optimizers


class Adam:
    """Adam with bias correction; independent (m, v) per parameter tensor."""

    def __init__(self, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self, named_params, named_grads, lr):
        self.t += 1
        correction1 = 1.0 - self.beta1 ** self.t
        correction2 = 1.0 - self.beta2 ** self.t
        for name, theta in named_params:
            g = named_grads[name]
            m = self.m.setdefault(name, np.zeros_like(theta))
            v = self.v.setdefault(name, np.zeros_like(theta))
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            theta -= lr * (m / correction1) / (np.sqrt(v / correction2) + self.eps)

    def state_tensors(self):
        out = [(f"adam.m.{k}", a) for k, a in self.m.items()]
        out += [(f"adam.v.{k}", a) for k, a in self.v.items()]
        return out


class Sgd:
    """Plain minibatch gradient descent."""

    t = 0

    def step(self, named_params, named_grads, lr):
        self.t += 1
        for name, theta in named_params:
            theta -= lr * named_grads[name]

    def state_tensors(self):
        return []


def make_optimizer(spec):
    opt = spec.optimizer
    if opt["kind"] == "adam":
        return Adam(beta1=opt.get("beta1", 0.9), beta2=opt.get("beta2", 0.999),
                    eps=opt.get("eps", 1e-8))
    return Sgd()


def adam_step(named_params, named_grads, state, lr):
    """One Adam update over (name, tensor) pairs; state is an Adam instance."""
    state.step(named_params, named_grads, lr)
    return state


# ---------------------------------------------------------------------------
# evaluation


def evaluate_accuracy(model, images, labels, chunk=512):
    """Fraction of rows whose argmax prediction equals the label."""
    if len(images) == 0:
        raise ValueError("evaluate_accuracy: empty dataset slice")
    hits = 0
    for start in range(0, len(images), chunk):
        out = model.forward(images[start : start + chunk])
        hits += int(np.sum(np.argmax(out, axis=1) == labels[start : start + chunk]))
    return hits / len(images)


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainLog:
    iterations: list = field(default_factory=list)
    losses: list = field(default_factory=list)
    accuracies: list = field(default_factory=list)  # None where not evaluated

    def accuracy_points(self):
        return [(it, acc) for it, acc in zip(self.iterations, self.accuracies)
                if acc is not None]


def train(model, dataset, spec=None, observer=None, eval_images=None,
          eval_labels=None, eval_cadence=1, log_path=None):
    """Run minibatch steps until model.iteration reaches spec.iterations.

    The observer receives (iteration, train_loss, test_accuracy) where the
    accuracy is None off-cadence or when no eval set was given. Iteration
    numbering starts at 1. Rows stream to log_path as CSV when given.
    """
    spec = spec if spec is not None else model.spec
    it = BatchIterator(dataset, spec.batch_size, derive_seed(spec.seed, "data"),
                       epoch=model.data_epoch, cursor=model.data_cursor)
    if model.optimizer is None:
        model.optimizer = make_optimizer(spec)
    log = TrainLog()
    log_file = open(log_path, "w") if log_path else None
    if log_file:
        log_file.write("iteration,train_loss,test_accuracy\n")
    try:
        while model.iteration < spec.iterations:
            images, targets = it.next_batch()
            loss, grads = model.loss_and_gradients(images, targets)
            iteration = model.iteration + 1
            if not np.isfinite(loss):
                raise TrainingDiverged(iteration, loss)
            named_grads = {}
            for i, layer_grads in enumerate(grads):
                for name, g in layer_grads.items():
                    named_grads[f"layer{i}.{name}"] = g
            model.optimizer.step(model.parameters(), named_grads, spec.learning_rate)
            model.iteration = iteration
            model.data_epoch, model.data_cursor = it.state()

            accuracy = None
            if eval_images is not None and iteration % eval_cadence == 0:
                accuracy = evaluate_accuracy(model, eval_images, eval_labels)
            log.iterations.append(iteration)
            log.losses.append(loss)
            log.accuracies.append(accuracy)
            if log_file:
                acc_cell = "" if accuracy is None else repr(accuracy)
                log_file.write(f"{iteration},{loss!r},{acc_cell}\n")
            if observer is not None:
                observer(iteration, loss, accuracy)
    finally:
        if log_file:
            log_file.close()
    return log


# ---------------------------------------------------------------------------
# checkpoints
#
# Layout (all integers little-endian):
#   magic "DWCK" | u32 version | u64 meta length | meta JSON (utf-8)
#   u64 tensor count, then per tensor:
#     u16 name length | name utf-8 | u8 ndim | ndim * u64 dims | float64 data


def _write_tensor(f, name, arr):
    encoded = name.encode("utf-8")
    f.write(struct.pack("<H", len(encoded)))
    f.write(encoded)
    arr = np.ascontiguousarray(arr, dtype=np.float64)
    f.write(struct.pack("<B", arr.ndim))
    for dim in arr.shape:
        f.write(struct.pack("<Q", dim))
    f.write(arr.astype("<f8", copy=False).tobytes())


def save_checkpoint(model, path):
    """Write spec echo, all parameters, optimizer state and run position."""
    opt = model.optimizer
    meta = {
        "spec": model.spec.to_dict(),
        "iteration": model.iteration,
        "rng": {"algorithm": GENERATOR_ALGORITHM, "seed": model.spec.seed,
                "data_epoch": model.data_epoch, "data_cursor": model.data_cursor},
        "optimizer_t": 0 if opt is None else opt.t,
    }
    tensors = model.parameters() + (opt.state_tensors() if opt is not None else [])
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        f.write(struct.pack("<Q", len(tensors)))
        for name, arr in tensors:
            _write_tensor(f, name, arr)


def load_checkpoint(path):
    """Rebuild the model (and its optimizer) saved by save_checkpoint."""
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint (magic {raw[:4]!r})")
    version = struct.unpack_from("<I", raw, 4)[0]
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    meta_len = struct.unpack_from("<Q", raw, 8)[0]
    meta = json.loads(raw[16 : 16 + meta_len].decode("utf-8"))
    offset = 16 + meta_len
    count = struct.unpack_from("<Q", raw, offset)[0]
    offset += 8
    tensors = {}
    for _ in range(count):
        name_len = struct.unpack_from("<H", raw, offset)[0]
        offset += 2
        name = raw[offset : offset + name_len].decode("utf-8")
        offset += name_len
        ndim = raw[offset]
        offset += 1
        dims = struct.unpack_from(f"<{ndim}Q", raw, offset) if ndim else ()
        offset += 8 * ndim
        size = int(np.prod(dims)) if ndim else 1
        arr = np.frombuffer(raw, dtype="<f8", count=size, offset=offset).reshape(dims)
        offset += 8 * size
        tensors[name] = arr.copy()

    spec = NetworkSpec.from_dict(meta["spec"])
    model = build_network(spec)
    for name, arr in model.parameters():
        arr[...] = tensors[name]
    model.iteration = meta["iteration"]
    model.data_epoch = meta["rng"]["data_epoch"]
    model.data_cursor = meta["rng"]["data_cursor"]
    opt = make_optimizer(spec)
    opt.t = meta["optimizer_t"]
    if isinstance(opt, Adam):
        for name, arr in tensors.items():
            if name.startswith("adam.m."):
                opt.m[name[len("adam.m."):]] = arr
            elif name.startswith("adam.v."):
                opt.v[name[len("adam.v."):]] = arr
    model.optimizer = opt
    return model
