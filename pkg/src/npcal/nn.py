"""Small numpy multilayer perceptron with hand-written backprop and Adam."""

import struct

import numpy as np

from .errors import FormatError, ShapeError

MODEL_MAGIC = b"NPCM"
MODEL_VERSION = 1


class Mlp:
    """Fully connected net: rectifier hidden layers, linear output.

    ``weights[l]`` has shape (in, out) so a forward pass is ``x @ W + b``.
    """

    def __init__(self, layer_dims, rng=None, weights=None, biases=None):
        self.layer_dims = [int(v) for v in layer_dims]
        if len(self.layer_dims) < 2 or min(self.layer_dims) < 1:
            raise ShapeError("need at least input and output dims, all positive")
        pairs = list(zip(self.layer_dims[:-1], self.layer_dims[1:]))
        if weights is None:
            if rng is None:
                weights = [np.zeros(p) for p in pairs]
            else:
                # He initialisation for rectifier layers
                weights = [rng.standard_normal(p) * np.sqrt(2.0 / p[0]) for p in pairs]
        if biases is None:
            biases = [np.zeros(p[1]) for p in pairs]
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]
        for (i, o), w, b in zip(pairs, self.weights, self.biases):
            if w.shape != (i, o) or b.shape != (o,):
                raise ShapeError("parameter shapes disagree with layer_dims")

    @property
    def params(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    @property
    def input_dim(self):
        return self.layer_dims[0]

    @property
    def output_dim(self):
        return self.layer_dims[-1]

    def copy(self):
        return Mlp(
            self.layer_dims,
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
        )

    def forward(self, x):
        """Return (output, cache); ``cache`` holds per-layer inputs and pre-activations."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise ShapeError(f"expected input of width {self.input_dim}, got {x.shape}")
        inputs, pre = [], []
        h = x
        last = len(self.weights) - 1
        for layer, (w, b) in enumerate(zip(self.weights, self.biases)):
            inputs.append(h)
            z = h @ w + b
            pre.append(z)
            h = z if layer == last else np.maximum(z, 0.0)
        return h, (inputs, pre)

    def hidden(self, x):
        """Activations of the last hidden layer (the input itself if there is none)."""
        _, (inputs, _) = self.forward(x)
        return inputs[-1]

    def backward(self, cache, grad_out):
        """Gradients of a scalar loss given d loss / d output.

        Returns ``(grads, grad_input)`` with ``grads`` ordered like :attr:`params`.
        """
        inputs, pre = cache
        grads = [None] * (2 * len(self.weights))
        g = grad_out
        for layer in range(len(self.weights) - 1, -1, -1):
            if layer != len(self.weights) - 1:
                g = g * (pre[layer] > 0)
            grads[2 * layer] = inputs[layer].T @ g
            grads[2 * layer + 1] = g.sum(axis=0)
            g = g @ self.weights[layer].T
        return grads, g

    # ------------------------------------------------------------------ I/O

    def to_bytes(self):
        n_layers = len(self.weights)
        parts = [
            MODEL_MAGIC,
            struct.pack("<II", MODEL_VERSION, n_layers),
            struct.pack(f"<{n_layers + 1}I", *self.layer_dims),
        ]
        for w, b in zip(self.weights, self.biases):
            parts.append(w.astype("<f4").tobytes())
            parts.append(b.astype("<f4").tobytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, buf, offset=0):
        """Parse a model starting at ``offset``; returns (model, end offset)."""
        pos = offset

        def take(size, what):
            nonlocal pos
            if pos + size > len(buf):
                raise FormatError(f"truncated payload while reading {what}", pos)
            chunk = buf[pos : pos + size]
            pos += size
            return chunk

        magic = take(4, "magic")
        if magic != MODEL_MAGIC:
            raise FormatError(f"bad magic {magic!r}, expected {MODEL_MAGIC!r}", pos - 4)
        version, n_layers = struct.unpack("<II", take(8, "header"))
        if version != MODEL_VERSION:
            raise FormatError(f"unsupported version {version}", pos - 8)
        dims = struct.unpack(f"<{n_layers + 1}I", take(4 * (n_layers + 1), "dims"))
        weights, biases = [], []
        for i, o in zip(dims[:-1], dims[1:]):
            w = np.frombuffer(take(4 * i * o, "weights"), dtype="<f4").reshape(i, o)
            b = np.frombuffer(take(4 * o, "biases"), dtype="<f4")
            weights.append(w.astype(np.float64))
            biases.append(b.astype(np.float64))
        return cls(dims, weights=weights, biases=biases), pos


def save_mlp(model, path):
    with open(path, "wb") as fh:
        fh.write(model.to_bytes())


def load_mlp(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    model, end = Mlp.from_bytes(buf)
    if end != len(buf):
        raise FormatError("trailing bytes after model", end)
    return model


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        """In-place descent step on ``params``."""
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def minibatches(n, batch_size, rng):
    """Yield index arrays covering a fresh permutation of range(n)."""
    perm = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield perm[start : start + batch_size]


def one_hot(labels, n_classes):
    out = np.zeros((len(labels), n_classes))
    out[np.arange(len(labels)), labels] = 1.0
    return out


def softplus(z):
    return np.logaddexp(0.0, z)


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))
