"""Small dense networks with hand-written backpropagation.

Everything is float64: the optimizer suite (finite-difference checks, line
searches, Gauss-Newton solves) needs the precision and the networks are tiny.
Single-sample ``forward``/``backward`` are thin wrappers over the batched
implementations so training loops can stay vectorized.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ACTIVATIONS = ("tanh", "relu")
HEADS = ("linear", "tanh", "softmax")


class ModelError(ValueError):
    pass


@dataclass
class MLPModel:
    layer_dims: tuple[int, ...]
    weights: list[np.ndarray]   # weights[l] has shape (dims[l+1], dims[l])
    biases: list[np.ndarray]
    activation: str             # hidden-layer nonlinearity
    head: str                   # output transform

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def output_dim(self) -> int:
        return self.layer_dims[-1]


@dataclass
class GradientSet:
    """Parameter gradients shaped exactly like the model, plus the input grad."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    input_grad: np.ndarray


@dataclass
class ForwardCache:
    inputs: list[np.ndarray]        # inputs[l]: activation entering layer l, shape (B, dims[l])
    pre_activations: list[np.ndarray]
    output: np.ndarray


def init_model(layer_dims, activation: str, head: str,
               rng: np.random.Generator) -> MLPModel:
    """Glorot-uniform weights, zero biases; deterministic per rng state."""
    dims = tuple(int(d) for d in layer_dims)
    if len(dims) < 2:
        raise ModelError(f"need at least input and output dims, got {dims}")
    if any(d < 1 for d in dims):
        raise ModelError(f"all layer dims must be >= 1, got {dims}")
    if activation not in ACTIVATIONS:
        raise ModelError(f"unknown activation {activation!r}")
    if head not in HEADS:
        raise ModelError(f"unknown head {head!r}")
    weights, biases = [], []
    for fan_in, fan_out in zip(dims, dims[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MLPModel(dims, weights, biases, activation, head)


def clone_model(model: MLPModel) -> MLPModel:
    return MLPModel(model.layer_dims, [w.copy() for w in model.weights],
                    [b.copy() for b in model.biases], model.activation, model.head)


def _apply_activation(z: np.ndarray, activation: str) -> np.ndarray:
    if activation == "tanh":
        return np.tanh(z)
    return np.maximum(z, 0.0)


def _softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def forward_batch(model: MLPModel, x: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] != model.input_dim:
        raise ModelError(
            f"input batch has shape {x.shape}, model expects (*, {model.input_dim})"
        )
    inputs, pre = [], []
    a = x
    last = len(model.weights) - 1
    for l, (w, b) in enumerate(zip(model.weights, model.biases)):
        inputs.append(a)
        z = a @ w.T + b
        pre.append(z)
        if l < last:
            a = _apply_activation(z, model.activation)
        elif model.head == "linear":
            a = z
        elif model.head == "tanh":
            a = np.tanh(z)
        else:
            a = _softmax(z)
    return a, ForwardCache(inputs, pre, a)


def forward(model: MLPModel, x) -> tuple[np.ndarray, ForwardCache]:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ModelError(f"forward expects a vector, got shape {x.shape}")
    y, cache = forward_batch(model, x[None, :])
    return y[0], cache


def _head_delta(model: MLPModel, output: np.ndarray, grad: np.ndarray) -> np.ndarray:
    if model.head == "linear":
        return grad
    if model.head == "tanh":
        return (1.0 - output**2) * grad
    # softmax Jacobian: diag(y) - y y^T applied row-wise
    return output * grad - output * (output * grad).sum(axis=1, keepdims=True)


def _activation_derivative(model: MLPModel, z: np.ndarray) -> np.ndarray:
    if model.activation == "tanh":
        return 1.0 - np.tanh(z) ** 2
    return (z > 0.0).astype(float)


def backward_batch(model: MLPModel, cache: ForwardCache,
                   output_grads: np.ndarray) -> GradientSet:
    """Exact gradients of sum_b output[b] . output_grads[b] w.r.t. parameters."""
    g = np.asarray(output_grads, dtype=float)
    if g.shape != cache.output.shape:
        raise ModelError(
            f"output grad shape {g.shape} does not match cached output {cache.output.shape}"
        )
    delta = _head_delta(model, cache.output, g)
    w_grads = [None] * len(model.weights)
    b_grads = [None] * len(model.biases)
    for l in range(len(model.weights) - 1, -1, -1):
        w_grads[l] = delta.T @ cache.inputs[l]
        b_grads[l] = delta.sum(axis=0)
        if l > 0:
            delta = (delta @ model.weights[l]) * _activation_derivative(
                model, cache.pre_activations[l - 1]
            )
        else:
            delta = delta @ model.weights[0]
    return GradientSet(w_grads, b_grads, delta)


def backward(model: MLPModel, cache: ForwardCache, output_grad) -> GradientSet:
    g = np.asarray(output_grad, dtype=float)
    if g.ndim != 1:
        raise ModelError(f"backward expects a gradient vector, got shape {g.shape}")
    grads = backward_batch(model, cache, g[None, :])
    grads.input_grad = grads.input_grad[0]
    return grads


def per_sample_grads(model: MLPModel, cache: ForwardCache,
                     output_grads: np.ndarray) -> np.ndarray:
    """Row b holds the flat parameter gradient for sample b alone.

    Used to assemble Gauss-Newton Jacobians without one backward pass per
    sample.  Flattening order matches :func:`flatten_params`.
    """
    g = np.asarray(output_grads, dtype=float)
    batch = g.shape[0]
    delta = _head_delta(model, cache.output, g)
    pieces = [None] * len(model.weights)
    for l in range(len(model.weights) - 1, -1, -1):
        w_part = np.einsum("bi,bj->bij", delta, cache.inputs[l]).reshape(batch, -1)
        pieces[l] = np.concatenate([w_part, delta], axis=1)
        if l > 0:
            delta = (delta @ model.weights[l]) * _activation_derivative(
                model, cache.pre_activations[l - 1]
            )
    return np.concatenate(pieces, axis=1)


def mse_loss(prediction, target) -> tuple[float, np.ndarray]:
    p = np.asarray(prediction, dtype=float)
    t = np.asarray(target, dtype=float)
    if p.shape != t.shape:
        raise ModelError(f"prediction shape {p.shape} != target shape {t.shape}")
    diff = p - t
    loss = float(np.mean(diff**2))
    return loss, 2.0 * diff / diff.size


def num_params(model: MLPModel) -> int:
    return sum(w.size + b.size for w, b in zip(model.weights, model.biases))


def flatten_params(model: MLPModel) -> np.ndarray:
    parts = []
    for w, b in zip(model.weights, model.biases):
        parts.append(w.ravel())
        parts.append(b)
    return np.concatenate(parts)


def set_flat_params(model: MLPModel, flat: np.ndarray) -> None:
    flat = np.asarray(flat, dtype=float)
    needed = num_params(model)
    if flat.size != needed:
        raise ModelError(f"flat vector length {flat.size}, model needs {needed}")
    offset = 0
    for w, b in zip(model.weights, model.biases):
        w[...] = flat[offset:offset + w.size].reshape(w.shape)
        offset += w.size
        b[...] = flat[offset:offset + b.size]
        offset += b.size


def flatten_grads(grads: GradientSet) -> np.ndarray:
    parts = []
    for w, b in zip(grads.weights, grads.biases):
        parts.append(w.ravel())
        parts.append(b)
    return np.concatenate(parts)


MODEL_FORMAT_TAG = "mlp-v1"


def save_model(model: MLPModel, path) -> None:
    """Self-describing text record; floats via repr so loading is lossless."""
    lines = [MODEL_FORMAT_TAG,
             "layer_dims " + " ".join(str(d) for d in model.layer_dims),
             f"activation {model.activation}",
             f"head {model.head}"]
    for l, (w, b) in enumerate(zip(model.weights, model.biases)):
        lines.append(f"w{l} " + " ".join(repr(float(v)) for v in w.ravel()))
        lines.append(f"b{l} " + " ".join(repr(float(v)) for v in b))
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


class ModelParseError(ModelError):
    def __init__(self, message: str, byte_offset: int):
        super().__init__(f"{message} (byte offset {byte_offset})")
        self.byte_offset = byte_offset


def load_model(path) -> MLPModel:
    with open(path, "r", encoding="ascii", errors="replace") as fh:
        text = fh.read()
    offset = 0
    lines = []
    for raw in text.split("\n"):
        lines.append((offset, raw))
        offset += len(raw) + 1
    lines = [(o, l) for o, l in lines if l.strip()]
    if not lines or lines[0][1].strip() != MODEL_FORMAT_TAG:
        raise ModelParseError(f"not a {MODEL_FORMAT_TAG} model file", 0)

    def fail(msg, off):
        raise ModelParseError(msg, off)

    header = {}
    for off, line in lines[1:4]:
        key, _, rest = line.partition(" ")
        header[key] = (off, rest)
    for key in ("layer_dims", "activation", "head"):
        if key not in header:
            fail(f"missing {key} line", lines[0][0])
    off, dims_text = header["layer_dims"]
    try:
        dims = tuple(int(tok) for tok in dims_text.split())
    except ValueError:
        fail("layer_dims must be integers", off)
    activation = header["activation"][1].strip()
    head = header["head"][1].strip()
    if activation not in ACTIVATIONS:
        fail(f"unknown activation {activation!r}", header["activation"][0])
    if head not in HEADS:
        fail(f"unknown head {head!r}", header["head"][0])

    model = MLPModel(dims, [np.zeros((o, i)) for i, o in zip(dims, dims[1:])],
                     [np.zeros(o) for o in dims[1:]], activation, head)
    expected = []
    for l in range(len(dims) - 1):
        expected.append((f"w{l}", model.weights[l]))
        expected.append((f"b{l}", model.biases[l]))
    body = lines[4:]
    if len(body) != len(expected):
        fail(f"expected {len(expected)} parameter lines, found {len(body)}",
             body[0][0] if body else offset)
    for (off, line), (tag, target) in zip(body, expected):
        key, _, rest = line.partition(" ")
        if key != tag:
            fail(f"expected parameter line {tag!r}, found {key!r}", off)
        try:
            values = np.array([float(tok) for tok in rest.split()], dtype=float)
        except ValueError:
            fail(f"non-numeric value in {tag!r}", off)
        if values.size != target.size:
            fail(f"{tag!r} has {values.size} values, expected {target.size}", off)
        target[...] = values.reshape(target.shape)
    return model
