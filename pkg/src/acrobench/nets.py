"""Minimal feed-forward network machinery: forward/backward, losses, Adam.

Everything here is plain numpy on float64. Networks are small (a few hidden
layers of 50-200 units) and are trained with minibatch Adam against one of
three losses: mean squared error, fixed-variance Gaussian negative
log-likelihood, or mixture negative log-likelihood. Gradients are analytic
and are checked against central finite differences in the test suite.
"""

import math
from dataclasses import dataclass, field

import numpy as np

SIGMA_FLOOR = 1e-3  # additive floor on mixture sigmas, in standardized units
LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    hidden: tuple
    output_dim: int
    activation: str = "relu"

    def __post_init__(self):
        if self.input_dim < 1 or self.output_dim < 1 or any(h < 1 for h in self.hidden):
            raise ValueError(f"all layer dims must be >= 1, got {self}")
        if self.activation not in ("relu", "tanh"):
            raise ValueError(f"activation must be relu or tanh, got {self.activation!r}")

    @property
    def layer_dims(self) -> list[int]:
        return [self.input_dim, *self.hidden, self.output_dim]


class MlpParams:
    """Per-layer weights and biases, flattenable for gradient checking."""

    def __init__(self, weights: list[np.ndarray], biases: list[np.ndarray]):
        self.weights = weights
        self.biases = biases

    @classmethod
    def init(cls, spec: MlpSpec, rng: np.random.Generator) -> "MlpParams":
        # uniform fan-in init; the small scale keeps trained nets low-norm,
        # which matters for extrapolation when rollouts leave the data
        dims = spec.layer_dims
        ws, bs = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            bound = 1.0 / math.sqrt(fan_in)
            ws.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            bs.append(rng.uniform(-bound, bound, size=fan_out))
        return cls(ws, bs)

    @classmethod
    def zeros_like(cls, other: "MlpParams") -> "MlpParams":
        return cls(
            [np.zeros_like(w) for w in other.weights],
            [np.zeros_like(b) for b in other.biases],
        )

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def flatten(self) -> np.ndarray:
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b.ravel())
        return np.concatenate(parts)

    @classmethod
    def from_flat(cls, spec: MlpSpec, vec: np.ndarray) -> "MlpParams":
        dims = spec.layer_dims
        ws, bs = [], []
        ofs = 0
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            ws.append(vec[ofs : ofs + fan_in * fan_out].reshape(fan_in, fan_out).copy())
            ofs += fan_in * fan_out
            bs.append(vec[ofs : ofs + fan_out].copy())
            ofs += fan_out
        if ofs != len(vec):
            raise ValueError("flat vector length does not match spec")
        return cls(ws, bs)


def _act(x: np.ndarray, kind: str) -> np.ndarray:
    return np.maximum(x, 0.0) if kind == "relu" else np.tanh(x)


def forward(spec: MlpSpec, params: MlpParams, x: np.ndarray) -> np.ndarray:
    """Network output for a batch (or single row) of inputs; output is linear."""
    single = np.ndim(x) == 1
    h = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if h.shape[1] != spec.input_dim:
        raise ValueError(f"input has {h.shape[1]} columns, spec wants {spec.input_dim}")
    n_layers = len(params.weights)
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w + b
        if i < n_layers - 1:
            h = _act(h, spec.activation)
    return h[0] if single else h


def _forward_cached(spec: MlpSpec, params: MlpParams, x: np.ndarray):
    """Forward pass keeping pre-activations for the backward pass."""
    h = x
    pre, post = [], [x]
    n_layers = len(params.weights)
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ w + b
        pre.append(z)
        h = _act(z, spec.activation) if i < n_layers - 1 else z
        post.append(h)
    return h, pre, post


def backward(
    spec: MlpSpec, params: MlpParams, x: np.ndarray, upstream: np.ndarray
) -> MlpParams:
    """Gradient of sum(output * upstream) with respect to all parameters."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    upstream = np.atleast_2d(np.asarray(upstream, dtype=np.float64))
    if x.shape[1] != spec.input_dim or upstream.shape[1] != spec.output_dim:
        raise ValueError("shape mismatch between inputs, upstream, and spec")
    _, pre, post = _forward_cached(spec, params, x)
    g = upstream
    grads = MlpParams.zeros_like(params)
    for i in range(len(params.weights) - 1, -1, -1):
        grads.weights[i][...] = post[i].T @ g
        grads.biases[i][...] = g.sum(axis=0)
        if i > 0:
            g = g @ params.weights[i].T
            if spec.activation == "relu":
                g = g * (pre[i - 1] > 0.0)
            else:
                g = g * (1.0 - np.tanh(pre[i - 1]) ** 2)
    return grads


# ---------------------------------------------------------------------------
# Losses. Each maps (raw network output, targets) to (mean loss, d loss / d raw).
# ---------------------------------------------------------------------------


def mse_loss(out: np.ndarray, y: np.ndarray):
    y = np.reshape(y, out.shape)
    diff = out - y
    n = out.shape[0]
    return float((diff**2).sum() / n), 2.0 * diff / n


def gaussian_nll_loss(out: np.ndarray, y: np.ndarray, sigma: float = 1.0):
    """NLL of N(y; out, sigma^2) with a fixed, known sigma."""
    y = np.reshape(y, out.shape)
    diff = (out - y) / sigma
    n = out.shape[0]
    loss = 0.5 * (diff**2).sum() / n + out.shape[1] * (0.5 * LOG_2PI + math.log(sigma))
    return float(loss), diff / (sigma * n)


def softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def split_mixture_raw(out: np.ndarray, n_components: int, target_dim: int):
    """Split raw outputs into (weight logits, means, raw sigmas).

    Layout per row: D logits, then D*d means (component-major), then D*d raw
    sigma values. Means come back as (n, D, d), sigmas likewise.
    """
    d, dd = n_components, n_components * target_dim
    if out.shape[1] != d + 2 * dd:
        raise ValueError(
            f"raw output width {out.shape[1]} != {d + 2 * dd} for "
            f"{n_components} components and {target_dim} target dims"
        )
    logits = out[:, :d]
    mu = out[:, d : d + dd].reshape(-1, n_components, target_dim)
    raw_sigma = out[:, d + dd :].reshape(-1, n_components, target_dim)
    return logits, mu, raw_sigma


def mixture_params_from_raw(out: np.ndarray, n_components: int, target_dim: int):
    """Map raw outputs to (weights, means, sigmas) of a Gaussian mixture.

    Weights go through a softmax; sigmas through softplus plus SIGMA_FLOOR.
    """
    logits, mu, raw_sigma = split_mixture_raw(out, n_components, target_dim)
    z = logits - logits.max(axis=1, keepdims=True)
    ez = np.exp(z)
    w = ez / ez.sum(axis=1, keepdims=True)
    sigma = softplus(raw_sigma) + SIGMA_FLOOR
    return w, mu, sigma


def mixture_nll(out: np.ndarray, y: np.ndarray, n_components: int):
    """Mixture NLL and its gradient with respect to the raw network outputs.

    ``y`` may be (n,) for scalar targets or (n, d) for diagonal multivariate
    components. The log density is evaluated through log-sum-exp; the
    gradient uses the component responsibilities.
    """
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 1:
        y = y[:, None]
    n, d = y.shape
    logits, mu, raw_sigma = split_mixture_raw(out, n_components, d)
    sigma = softplus(raw_sigma) + SIGMA_FLOOR

    zlog = logits - logits.max(axis=1, keepdims=True)
    log_w = zlog - np.log(np.exp(zlog).sum(axis=1, keepdims=True))
    zz = (y[:, None, :] - mu) / sigma
    log_comp = (-0.5 * LOG_2PI - np.log(sigma) - 0.5 * zz**2).sum(axis=2)

    a = log_w + log_comp
    amax = a.max(axis=1, keepdims=True)
    log_p = (amax + np.log(np.exp(a - amax).sum(axis=1, keepdims=True)))[:, 0]
    loss = float(-log_p.mean())

    resp = np.exp(a - log_p[:, None])
    w = np.exp(log_w)
    d_logits = -(resp - w) / n
    d_mu = -(resp[:, :, None] * zz / sigma) / n
    d_sigma = -(resp[:, :, None] * (zz**2 - 1.0) / sigma) / n
    d_raw_sigma = d_sigma / (1.0 + np.exp(-raw_sigma))

    grad = np.concatenate(
        [d_logits, d_mu.reshape(n, -1), d_raw_sigma.reshape(n, -1)], axis=1
    )
    return loss, grad


def make_mixture_loss(n_components: int):
    def loss_fn(out, y):
        return mixture_nll(out, y, n_components)

    loss_fn.__name__ = f"mixture_nll_{n_components}"
    return loss_fn


# ---------------------------------------------------------------------------
# Training.
# ---------------------------------------------------------------------------


@dataclass
class TrainConfig:
    learning_rate: float
    epochs: int
    batch_size: int = 64
    validation_fraction: float = 0.1
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not 0.0 < self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must be in (0, 1)")


@dataclass
class TrainReport:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    best_epoch: int = -1
    diverged: bool = False
    loss_name: str = ""
    notes: str = ""


def validation_split(n: int, fraction: float, seed: int):
    """Deterministic shuffle split; returns (train_idx, val_idx)."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5BA1]))
    perm = rng.permutation(n)
    n_val = max(1, int(round(n * fraction)))
    if n_val >= n:
        raise ValueError(f"validation fraction {fraction} leaves no training data")
    return perm[n_val:], perm[:n_val]


def train(
    spec: MlpSpec,
    x: np.ndarray,
    y: np.ndarray,
    loss_fn,
    config: TrainConfig,
    split: tuple | None = None,
):
    """Minibatch Adam; returns the best-validation snapshot and a report.

    Holds out ``validation_fraction`` of the rows (or uses the provided
    ``split``), checkpoints after every epoch, and returns the parameters
    with the lowest validation loss seen. A non-finite loss aborts training
    and returns the last finite checkpoint with the report flagged.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(x) < 10:
        raise ValueError(f"need at least 10 examples to train, got {len(x)}")
    if split is None:
        split = validation_split(len(x), config.validation_fraction, config.seed)
    train_idx, val_idx = split
    x_tr, y_tr = x[train_idx], y[train_idx]
    x_val, y_val = x[val_idx], y[val_idx]

    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0xADA0]))
    params = MlpParams.init(spec, rng)
    m_state = MlpParams.zeros_like(params)
    v_state = MlpParams.zeros_like(params)
    step_count = 0

    report = TrainReport(loss_name=getattr(loss_fn, "__name__", str(loss_fn)))
    best = params.copy()
    best_val = math.inf

    n_tr = len(x_tr)
    for epoch in range(config.epochs):
        order = rng.permutation(n_tr)
        epoch_losses = []
        for start in range(0, n_tr, config.batch_size):
            idx = order[start : start + config.batch_size]
            xb, yb = x_tr[idx], y_tr[idx]
            with np.errstate(over="ignore", invalid="ignore"):
                out, pre, post = _forward_cached(spec, params, xb)
                loss, dout = loss_fn(out, yb)
            if not math.isfinite(loss):
                report.diverged = True
                report.notes = f"non-finite loss at epoch {epoch + 1}; kept best snapshot"
                return best, report
            epoch_losses.append(loss)
            # backprop reusing the cached activations
            g = dout
            step_count += 1
            lr_t = config.learning_rate * math.sqrt(
                1.0 - config.beta2**step_count
            ) / (1.0 - config.beta1**step_count)
            for i in range(len(params.weights) - 1, -1, -1):
                gw = post[i].T @ g
                gb = g.sum(axis=0)
                if i > 0:
                    g = g @ params.weights[i].T
                    if spec.activation == "relu":
                        g = g * (pre[i - 1] > 0.0)
                    else:
                        g = g * (1.0 - np.tanh(pre[i - 1]) ** 2)
                for state_m, state_v, grad, param in (
                    (m_state.weights[i], v_state.weights[i], gw, params.weights[i]),
                    (m_state.biases[i], v_state.biases[i], gb, params.biases[i]),
                ):
                    state_m *= config.beta1
                    state_m += (1.0 - config.beta1) * grad
                    state_v *= config.beta2
                    state_v += (1.0 - config.beta2) * grad**2
                    param -= lr_t * state_m / (np.sqrt(state_v) + config.adam_eps)
        val_out = forward(spec, params, x_val)
        val_loss, _ = loss_fn(val_out, y_val)
        report.train_loss.append(float(np.mean(epoch_losses)))
        report.val_loss.append(float(val_loss))
        if math.isfinite(val_loss) and val_loss < best_val:
            best_val = val_loss
            best = params.copy()
            report.best_epoch = epoch + 1
    return best, report
