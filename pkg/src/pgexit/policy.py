"""Randomized policies with analytic score functions.

Policies act on network inputs ("features"), which environments build from
(t, x). The module-level helpers taking (t, x) use the plain feature map
[t, x_1, ..., x_d].
"""

import numpy as np

from .nn import MlpParams, ShapeError, init_mlp, mlp_backward, mlp_forward, per_sample_grads


def plain_features(t, x):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return np.concatenate([[float(t)], x])


class SoftmaxPolicy:
    """One network per action; probabilities are the softmax of their outputs."""

    discrete = True

    def __init__(self, nets, actions):
        if len(nets) < 2:
            raise ValueError("a softmax policy needs at least two actions")
        if len(nets) != len(actions):
            raise ValueError("one network per action is required")
        sizes = nets[0].layer_sizes
        for net in nets:
            if net.layer_sizes != sizes or net.n_outputs != 1:
                raise ShapeError("all action networks must share layer sizes with a scalar output")
        self.nets = nets
        self.actions = np.asarray(actions, dtype=float)

    @property
    def nets(self):
        return self._nets

    @nets.setter
    def nets(self, nets):
        self._nets = list(nets)
        # stacked copies, (M, out, in) and (M, 1, out), for a fused forward pass
        self._w = [np.stack([n.weights[k] for n in self._nets]) for k in range(len(self._nets[0].weights))]
        self._b = [np.stack([n.biases[k] for n in self._nets])[:, None, :] for k in range(len(self._w))]

    @classmethod
    def create(cls, input_dim, hidden, actions, rng, output_scale=0.0):
        """Random hidden layers; with output_scale=0 every action starts equally likely."""
        sizes = [input_dim, *hidden, 1]
        return cls([init_mlp(sizes, rng, output_scale) for _ in actions], actions)

    @property
    def n_actions(self):
        return len(self.nets)

    @property
    def input_dim(self):
        return self.nets[0].n_inputs

    @property
    def n_params(self):
        return sum(net.n_params for net in self.nets)

    def flat(self):
        return np.concatenate([net.flat() for net in self.nets])

    def set_flat(self, vec):
        pos = 0
        nets = []
        for net in self.nets:
            nets.append(net.with_flat(vec[pos:pos + net.n_params]))
            pos += net.n_params
        self.nets = nets

    def copy(self):
        return SoftmaxPolicy([net.copy() for net in self.nets], self.actions.copy())

    def logits(self, feats):
        feats = np.asarray(feats, dtype=float)
        single = feats.ndim == 1
        h = np.atleast_2d(feats)
        if h.ndim != 2 or h.shape[1] != self.input_dim:
            raise ShapeError(f"features of shape {feats.shape}, expected width {self.input_dim}")
        last = len(self._w) - 1
        for k, (w, b) in enumerate(zip(self._w, self._b)):
            h = np.matmul(h, w.transpose(0, 2, 1)) + b
            if k < last:
                np.maximum(h, 0.0, out=h)
        z = h[:, :, 0].T
        return z[0] if single else z

    def probs(self, feats):
        z = self.logits(feats)
        if not np.all(np.isfinite(z)):
            raise FloatingPointError("non-finite policy logits")
        z = z - z.max(axis=-1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=-1, keepdims=True)

    def sample(self, feats, rng):
        """Draw action indices; returns (indices, action values)."""
        p = np.atleast_2d(self.probs(feats))
        u = rng.uniform(p.shape[0])
        cum = np.cumsum(p, axis=1)[:, :-1]
        idx = (u[:, None] > cum).sum(axis=1)
        if np.ndim(feats) == 1:
            return int(idx[0]), float(self.actions[idx[0]])
        return idx, self.actions[idx]

    def score_upstream(self, feats, idx, probs=None):
        """Coefficients (delta_{m l} - rho_l) multiplying grad phi_l, shape (n, M)."""
        p = np.atleast_2d(self.probs(feats) if probs is None else probs)
        idx = np.atleast_1d(idx)
        if np.any(idx < 0) or np.any(idx >= self.n_actions):
            raise IndexError("action index out of range")
        onehot = np.zeros_like(p)
        onehot[np.arange(p.shape[0]), idx] = 1.0
        return onehot - p

    def grad_from_upstream(self, feats, coef, per_sample=False):
        """sum_n sum_l coef[n, l] grad phi_l(feats[n]) as a flat vector.

        With per_sample=True returns the (n, n_params) matrix of terms.
        """
        feats = np.atleast_2d(np.asarray(feats, dtype=float))
        coef = np.atleast_2d(coef)
        if per_sample:
            return np.concatenate([per_sample_grads(net, feats, coef[:, [l]])
                                   for l, net in enumerate(self.nets)], axis=1)
        return np.concatenate([mlp_backward(net, feats, coef[:, [l]]).flat()
                               for l, net in enumerate(self.nets)])

    def score(self, feats, idx, per_sample=False):
        """grad_theta log rho(a_idx); summed over rows unless per_sample."""
        coef = self.score_upstream(feats, idx)
        out = self.grad_from_upstream(feats, coef, per_sample=per_sample)
        if np.ndim(feats) == 1 and per_sample:
            return out[0]
        return out


def softmax_probs(policy, t, x):
    return policy.probs(plain_features(t, x))


def softmax_score(policy, t, x, m):
    return policy.score(plain_features(t, x), m)


def sample_action(policy, t, x, rng):
    return policy.sample(plain_features(t, x), rng)


class GaussianPolicy:
    """Gaussian policy with network mean and fixed covariance.

    Follows the SoftmaxPolicy protocol except that the estimators pass the
    sampled action (not an index) to score_upstream.
    """

    discrete = False

    def __init__(self, mean_net, sigma=0.01):
        self.mean_net = mean_net
        m = mean_net.n_outputs
        sigma = np.asarray(sigma, dtype=float)
        if sigma.ndim == 0:
            sigma = float(sigma) * np.eye(m)
        if sigma.shape != (m, m) or not np.allclose(sigma, sigma.T):
            raise ValueError("covariance must be a symmetric m x m matrix")
        try:
            self.chol = np.linalg.cholesky(sigma)
        except np.linalg.LinAlgError as exc:
            raise ValueError("covariance must be positive definite") from exc
        self.sigma = sigma
        self.sigma_inv = np.linalg.inv(sigma)

    @property
    def n_params(self):
        return self.mean_net.n_params

    def mean(self, feats):
        return mlp_forward(self.mean_net, feats)

    def copy(self):
        return GaussianPolicy(self.mean_net.copy(), self.sigma.copy())

    def flat(self):
        return self.mean_net.flat()

    def set_flat(self, vec):
        self.mean_net = self.mean_net.with_flat(vec)

    def draw(self, feats, rng):
        """Action vector(s) mu + chol(Sigma) z."""
        mu = np.atleast_2d(self.mean(feats))
        z = rng.normal(mu.size).reshape(mu.shape)
        a = mu + z @ self.chol.T
        return a[0] if np.ndim(feats) == 1 else a

    def sample(self, feats, rng):
        """(dummy indices, actions), the rollout protocol."""
        a = self.draw(feats, rng)
        if np.ndim(feats) == 1:
            return 0, a
        return np.zeros(a.shape[0], dtype=np.int64), a

    def score_upstream(self, feats, a):
        """Sigma^{-1} (a - mu) per row; the coefficient on grad mu."""
        feats = np.atleast_2d(feats)
        a = np.asarray(a, dtype=float).reshape(feats.shape[0], -1)
        return (a - np.atleast_2d(self.mean(feats))) @ self.sigma_inv

    def grad_from_upstream(self, feats, coef, per_sample=False):
        feats = np.atleast_2d(np.asarray(feats, dtype=float))
        coef = np.atleast_2d(coef)
        if per_sample:
            return per_sample_grads(self.mean_net, feats, coef)
        return mlp_backward(self.mean_net, feats, coef).flat()

    def score(self, feats, a, per_sample=False):
        """grad_mu^T Sigma^{-1} (a - mu); summed over rows unless per_sample."""
        single = np.ndim(feats) == 1
        out = self.grad_from_upstream(feats, self.score_upstream(feats, a), per_sample)
        return out[0] if single and per_sample else out


def gaussian_sample(policy, t, x, rng):
    return policy.draw(plain_features(t, x), rng)


def gaussian_score(policy, t, x, a):
    return policy.score(plain_features(t, x), a)


# --- checkpoint files -------------------------------------------------------
#
# Text layout, version 1:
#   pgexit-checkpoint 1
#   kind <softmax|critic>
#   actions <a_1> ... <a_M>          (softmax only)
#   nets <count>
#   then per net:  layers <n_0> ... <n_L>
#                  per layer: one line per weight row, then one bias line
# Floats are written with repr() so they round-trip exactly.

CHECKPOINT_VERSION = 1


def _write_net(lines, net):
    lines.append("layers " + " ".join(str(n) for n in net.layer_sizes))
    for w, b in zip(net.weights, net.biases):
        for row in w:
            lines.append(" ".join(repr(float(v)) for v in row))
        lines.append(" ".join(repr(float(v)) for v in b))


def _read_net(it):
    head = next(it).split()
    if head[0] != "layers":
        raise ValueError(f"expected 'layers', got {head[0]!r}")
    sizes = [int(s) for s in head[1:]]
    weights, biases = [], []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        rows = [[float(v) for v in next(it).split()] for _ in range(n_out)]
        weights.append(np.array(rows).reshape(n_out, n_in))
        biases.append(np.array([float(v) for v in next(it).split()]))
    return MlpParams(sizes, weights, biases)


def save_checkpoint(path, obj):
    """Write a SoftmaxPolicy or a single MlpParams (critic network)."""
    lines = [f"pgexit-checkpoint {CHECKPOINT_VERSION}"]
    if isinstance(obj, SoftmaxPolicy):
        lines.append("kind softmax")
        lines.append("actions " + " ".join(repr(float(a)) for a in obj.actions))
        nets = obj.nets
    elif isinstance(obj, MlpParams):
        lines.append("kind critic")
        nets = [obj]
    else:
        raise TypeError(f"cannot checkpoint {type(obj).__name__}")
    lines.append(f"nets {len(nets)}")
    for net in nets:
        _write_net(lines, net)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_checkpoint(path):
    with open(path, encoding="utf-8") as fh:
        it = iter([ln for ln in fh.read().splitlines() if ln.strip()])
    magic, version = next(it).split()
    if magic != "pgexit-checkpoint" or int(version) != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: not a version-{CHECKPOINT_VERSION} checkpoint")
    kind = next(it).split()[1]
    actions = None
    if kind == "softmax":
        actions = [float(v) for v in next(it).split()[1:]]
    count = int(next(it).split()[1])
    nets = [_read_net(it) for _ in range(count)]
    if kind == "softmax":
        return SoftmaxPolicy(nets, actions)
    if kind == "critic":
        return nets[0]
    raise ValueError(f"unknown checkpoint kind {kind!r}")
