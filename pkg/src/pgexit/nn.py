"""Small feedforward networks with hand-written backprop, and Adam.

Networks use ReLU on hidden layers and a linear output layer. Every entry
point accepts either a single input vector or a batch of shape (n, d).
Parameters can be viewed as one flat vector (weights row-major, then the
bias, layer by layer); gradients and Adam moments use that layout.
"""

from dataclasses import dataclass

import numpy as np


class ShapeError(ValueError):
    """Raised when array dimensions do not match a network's layer sizes."""


class NonFiniteGradientError(FloatingPointError):
    pass


@dataclass
class MlpParams:
    layer_sizes: list
    weights: list
    biases: list

    def __post_init__(self):
        self.layer_sizes = [int(n) for n in self.layer_sizes]
        if len(self.layer_sizes) < 2 or min(self.layer_sizes) < 1:
            raise ShapeError(f"bad layer sizes {self.layer_sizes}")
        if len(self.weights) != len(self.layer_sizes) - 1 or len(self.biases) != len(self.weights):
            raise ShapeError("number of weight/bias arrays does not match layer sizes")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            shape = (self.layer_sizes[k + 1], self.layer_sizes[k])
            if w.shape != shape or b.shape != (shape[0],):
                raise ShapeError(f"layer {k}: weights {w.shape}, biases {b.shape}, expected {shape}")

    @property
    def n_inputs(self):
        return self.layer_sizes[0]

    @property
    def n_outputs(self):
        return self.layer_sizes[-1]

    @property
    def n_params(self):
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def flat(self):
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b)
        return np.concatenate(parts)

    def with_flat(self, vec):
        """New parameters with the same layout, filled from a flat vector."""
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (self.n_params,):
            raise ShapeError(f"flat vector has shape {vec.shape}, expected ({self.n_params},)")
        weights, biases = [], []
        pos = 0
        for w, b in zip(self.weights, self.biases):
            weights.append(vec[pos:pos + w.size].reshape(w.shape).copy())
            pos += w.size
            biases.append(vec[pos:pos + b.size].copy())
            pos += b.size
        return MlpParams(list(self.layer_sizes), weights, biases)

    def copy(self):
        return self.with_flat(self.flat())

    def is_finite(self):
        return bool(np.all(np.isfinite(self.flat())))


def init_mlp(layer_sizes, rng, output_scale=1.0):
    """Glorot-uniform weights, zero biases; the output layer is scaled by
    `output_scale` (0 gives a net that starts at exactly zero output)."""
    weights, biases = [], []
    n_layers = len(layer_sizes) - 1
    for k, (fan_in, fan_out) in enumerate(zip(layer_sizes[:-1], layer_sizes[1:])):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        if k == n_layers - 1:
            bound *= output_scale
        u = rng.uniform(fan_out * fan_in).reshape(fan_out, fan_in)
        weights.append(bound * (2.0 * u - 1.0))
        biases.append(np.zeros(fan_out))
    return MlpParams(list(layer_sizes), weights, biases)


def zeros_like(params):
    return params.with_flat(np.zeros(params.n_params))


def _as_batch(params, x):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != params.n_inputs:
        raise ShapeError(f"input shape {x.shape} incompatible with {params.n_inputs} inputs")
    return x, single


def _forward_cache(params, x):
    activations = [x]
    pre = []
    h = x
    last = len(params.weights) - 1
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ w.T + b
        pre.append(z)
        h = z if k == last else np.maximum(z, 0.0)
        activations.append(h)
    return activations, pre


def mlp_forward(params, x):
    x, single = _as_batch(params, x)
    out = _forward_cache(params, x)[0][-1]
    return out[0] if single else out


def _backprop(params, x, upstream, per_sample):
    x, single = _as_batch(params, x)
    g = np.asarray(upstream, dtype=float)
    if g.ndim == 1 and single:
        g = g[None, :]
    if g.shape != (x.shape[0], params.n_outputs):
        raise ShapeError(f"upstream gradient shape {g.shape}, expected {(x.shape[0], params.n_outputs)}")
    acts, pre = _forward_cache(params, x)
    grads_w = [None] * len(params.weights)
    grads_b = [None] * len(params.weights)
    delta = g
    for k in range(len(params.weights) - 1, -1, -1):
        if per_sample:
            grads_w[k] = np.einsum("ni,nj->nij", delta, acts[k])
            grads_b[k] = delta
        else:
            grads_w[k] = delta.T @ acts[k]
            grads_b[k] = delta.sum(axis=0)
        if k > 0:
            # ReLU subgradient at 0 is taken as 0
            delta = (delta @ params.weights[k]) * (pre[k - 1] > 0.0)
    return grads_w, grads_b, x.shape[0]


def mlp_backward(params, x, upstream_grad):
    """Gradient of sum_n upstream[n] . f(x[n]) with respect to all parameters.

    Returns an MlpParams holding the gradient.
    """
    gw, gb, _ = _backprop(params, x, upstream_grad, per_sample=False)
    return MlpParams(list(params.layer_sizes), gw, gb)


def per_sample_grads(params, x, upstream_grad):
    """Row n is the flat gradient of upstream[n] . f(x[n]); shape (n, n_params)."""
    gw, gb, n = _backprop(params, x, upstream_grad, per_sample=True)
    parts = []
    for w, b in zip(gw, gb):
        parts.append(w.reshape(n, -1))
        parts.append(b)
    return np.concatenate(parts, axis=1)


@dataclass
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def fresh(cls, n_params, **kw):
        return cls(np.zeros(n_params), np.zeros(n_params), 0, **kw)


def adam_step(params, grad, state, lr):
    """One Adam descent step on `params` (flat vector or MlpParams).

    Returns (new params, new state) and leaves the inputs untouched.
    """
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    is_mlp = isinstance(params, MlpParams)
    theta = params.flat() if is_mlp else np.asarray(params, dtype=float)
    g = grad.flat() if isinstance(grad, MlpParams) else np.asarray(grad, dtype=float)
    if g.shape != theta.shape or state.first_moment.shape != theta.shape:
        raise ShapeError("gradient, parameters and Adam state must share a shape")
    if not np.all(np.isfinite(g)):
        raise NonFiniteGradientError("non-finite gradient entries")
    t = state.step_count + 1
    m = state.beta1 * state.first_moment + (1.0 - state.beta1) * g
    v = state.beta2 * state.second_moment + (1.0 - state.beta2) * g * g
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    new_theta = theta - lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
    new_state = AdamState(m, v, t, state.beta1, state.beta2, state.epsilon)
    if is_mlp:
        return params.with_flat(new_theta), new_state
    return new_theta, new_state
