"""Generative one-step dynamics models behind a common density interface.

Every model predicts the next observable ``y`` (d_y dims) from a conditioning
vector ``c`` (for Acrobot: 8 state features plus the action). Probabilistic
models expose, for each target dimension ``j``, the one-dimensional Gaussian
mixture of ``y_j`` given ``(y_1..y_{j-1}, c)``; log densities, marginal CDFs,
and chain sampling all derive from those per-dimension mixtures, so the
factored density used for scoring is exactly the density sampling draws from.

The zoo:

* ``arlin``            linear regression per dimension with a fixed residual sigma
* ``darnn``            MSE-trained nets per dimension with a fixed residual sigma
* ``darnn_det``        same nets, deterministic mean rollout only
* ``dmdn<D>``          one net emitting a D-component diagonal Gaussian mixture
* ``darmdn<D>``        one net per dimension, each a D-component 1-D mixture
* ``darmdn<D>_det``    same nets, deterministic chain-of-means rollout
* ``pets<B>``          B bagged dmdn1 models, one member per simulated trajectory
* ``oracle``           the true dynamics wrapped as a deterministic model
"""

import json
import re
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import erf, logsumexp

from . import acrobot
from .nets import (
    LOG_2PI,
    MlpParams,
    MlpSpec,
    TrainConfig,
    forward,
    make_mixture_loss,
    mixture_params_from_raw,
    mse_loss,
    train,
    validation_split,
)

MIN_FIT_PAIRS = 10
_SIGMA_TINY = 1e-12  # guards exactly-zero residual sigmas


class CapabilityError(RuntimeError):
    """Raised when a model is asked for a density or CDF it cannot provide."""


# ---------------------------------------------------------------------------
# Gaussian-mixture helpers (batched over rows).
# ---------------------------------------------------------------------------


def mixture_logpdf(w, mu, sigma, y):
    """Log density of 1-D mixtures; w/mu/sigma are (m, D), y is (m,)."""
    z = (y[:, None] - mu) / sigma
    log_comp = -0.5 * LOG_2PI - np.log(sigma) - 0.5 * z * z
    return logsumexp(np.log(np.maximum(w, 1e-300)) + log_comp, axis=1)


def mixture_cdf(w, mu, sigma, y):
    """CDF of 1-D mixtures via the error function."""
    z = (y[:, None] - mu) / (sigma * np.sqrt(2.0))
    return (w * 0.5 * (1.0 + erf(z))).sum(axis=1)


def mixture_mean(w, mu):
    return (w * mu).sum(axis=1)


def sample_mixture(w, mu, sigma, rng):
    """Draw one value per row: a component from w, then its Gaussian."""
    u = rng.random(w.shape[0])
    comp = (u[:, None] > np.cumsum(w, axis=1)).sum(axis=1)
    comp = np.minimum(comp, w.shape[1] - 1)
    rows = np.arange(w.shape[0])
    return mu[rows, comp] + sigma[rows, comp] * rng.standard_normal(w.shape[0])


def _conditional_mixture(w, mu, sigma, j, yprefix):
    """Mixture of dim j given the first j target values, for joint diagonal mixtures.

    Reweights components by their likelihood of the prefix; for j == 0 this is
    the unconditional weight vector.
    """
    if j > 0:
        z = (yprefix[:, None, :] - mu[:, :, :j]) / sigma[:, :, :j]
        log_pref = (-0.5 * LOG_2PI - np.log(sigma[:, :, :j]) - 0.5 * z * z).sum(axis=2)
        logw = np.log(np.maximum(w, 1e-300)) + log_pref
        logw = logw - logsumexp(logw, axis=1, keepdims=True)
        wj = np.exp(logw)
    else:
        wj = w
    return wj, mu[:, :, j], sigma[:, :, j]


@dataclass
class Scaler:
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, x: np.ndarray) -> "Scaler":
        x = np.atleast_2d(x)
        scale = x.std(axis=0)
        scale = np.where(scale < 1e-12, 1.0, scale)
        return cls(mean=x.mean(axis=0), scale=scale)

    def transform(self, x):
        return (x - self.mean) / self.scale

    def inverse(self, x):
        return x * self.scale + self.mean


@dataclass
class ModelConfig:
    components: int = 1
    ensemble_size: int = 5
    hidden: tuple | None = None
    learning_rate: float | None = None
    epochs: int | None = None
    batch_size: int = 64
    validation_fraction: float | None = None
    seed: int = 0

    def to_dict(self):
        d = dict(self.__dict__)
        d["hidden"] = list(self.hidden) if self.hidden is not None else None
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if d.get("hidden") is not None:
            d["hidden"] = tuple(d["hidden"])
        return cls(**d)


# Chosen hyperparameters per family (width, depth 3, learning rate, epochs,
# validation fraction).
_FAMILY_HYPERS = {
    "darnn": dict(hidden=(200, 200, 200), learning_rate=4e-3, epochs=100,
                  validation_fraction=0.05),
    "dmdn": dict(hidden=(200, 200, 200), learning_rate=5e-3, epochs=300,
                 validation_fraction=0.1),
    "darmdn1": dict(hidden=(50, 50, 50), learning_rate=1e-3, epochs=300,
                    validation_fraction=0.1),
    "darmdn": dict(hidden=(100, 100, 100), learning_rate=1e-3, epochs=300,
                   validation_fraction=0.1),
}


def _resolve(config: ModelConfig, family: str) -> ModelConfig:
    if family == "darmdn" and config.components == 1:
        family = "darmdn1"
    defaults = _FAMILY_HYPERS[family]
    out = config
    for key, value in defaults.items():
        if getattr(out, key) is None:
            out = replace(out, **{key: value})
    return out


class DensityModel:
    """Common interface: fit, per-dimension mixtures, sampling, means."""

    kind: str = "base"
    has_likelihood: bool = True
    has_cdf: bool = True
    is_deterministic: bool = False

    def __init__(self, config: ModelConfig | None = None):
        self.config = config or ModelConfig()
        self.d_y: int | None = None
        self.cond_dim: int | None = None
        self.train_reports: list = []

    # -- fitting ------------------------------------------------------------

    def fit(self, cond: np.ndarray, targets: np.ndarray) -> "DensityModel":
        cond = np.atleast_2d(np.asarray(cond, dtype=np.float64))
        targets = np.atleast_2d(np.asarray(targets, dtype=np.float64))
        if len(cond) != len(targets):
            raise ValueError("conditioning rows and target rows differ in length")
        if len(cond) < MIN_FIT_PAIRS:
            raise ValueError(f"need at least {MIN_FIT_PAIRS} pairs, got {len(cond)}")
        self.d_y = targets.shape[1]
        self.cond_dim = cond.shape[1]
        self.train_reports = []
        self._fit(cond, targets)
        return self

    def _fit(self, cond, targets):
        raise NotImplementedError

    def _check_fitted(self):
        if self.d_y is None:
            raise RuntimeError(f"{self.kind} model is not fitted")

    # -- densities ----------------------------------------------------------

    def mixture_for_dim(self, j: int, cond: np.ndarray, yprefix: np.ndarray):
        """(weights, means, sigmas) of p(y_j | y_1..y_{j-1}, cond), original units."""
        raise CapabilityError(f"{self.kind} model provides no densities")

    def log_density_terms(self, cond: np.ndarray, targets: np.ndarray) -> np.ndarray:
        """Per-dimension log densities log p_j(y_j | y_1..y_{j-1}, c), shape (m, d_y)."""
        if not self.has_likelihood:
            raise CapabilityError(f"{self.kind} model provides no likelihood")
        self._check_fitted()
        cond = np.atleast_2d(cond)
        targets = np.atleast_2d(targets)
        out = np.empty_like(targets)
        for j in range(self.d_y):
            w, mu, sg = self.mixture_for_dim(j, cond, targets[:, :j])
            out[:, j] = mixture_logpdf(w, mu, sg, targets[:, j])
        return out

    def log_density(self, cond: np.ndarray, targets: np.ndarray) -> np.ndarray:
        """Joint log density, the sum of the per-dimension terms."""
        return self.log_density_terms(cond, targets).sum(axis=1)

    def cdf_marginal(self, j: int, y: np.ndarray, cond: np.ndarray,
                     yprefix: np.ndarray) -> np.ndarray:
        if not self.has_cdf:
            raise CapabilityError(f"{self.kind} model provides no CDFs")
        self._check_fitted()
        w, mu, sg = self.mixture_for_dim(j, np.atleast_2d(cond), np.atleast_2d(yprefix))
        return mixture_cdf(w, mu, sg, np.atleast_1d(y))

    # -- simulation ---------------------------------------------------------

    def start_trajectory(self, m: int, rng: np.random.Generator):
        """Per-trajectory sampling context (ensembles pick a member here)."""
        return None

    def sample(self, cond: np.ndarray, rng: np.random.Generator,
               context=None) -> np.ndarray:
        self._check_fitted()
        cond = np.atleast_2d(cond)
        if self.is_deterministic:
            return self.mean(cond)
        return self._sample(cond, rng, context)

    def _sample(self, cond, rng, context):
        # default: chain over dimensions in index order
        m = cond.shape[0]
        out = np.empty((m, self.d_y))
        for j in range(self.d_y):
            w, mu, sg = self.mixture_for_dim(j, cond, out[:, :j])
            out[:, j] = sample_mixture(w, mu, sg, rng)
        return out

    def mean(self, cond: np.ndarray) -> np.ndarray:
        """Point prediction; autoregressive models feed per-dim means forward."""
        self._check_fitted()
        cond = np.atleast_2d(cond)
        m = cond.shape[0]
        out = np.empty((m, self.d_y))
        for j in range(self.d_y):
            w, mu, _ = self.mixture_for_dim(j, cond, out[:, :j])
            out[:, j] = mixture_mean(w, mu)
        return out

    # -- persistence ----------------------------------------------------------

    def _meta(self) -> dict:
        return {
            "format": 1,
            "kind": self.kind,
            "config": self.config.to_dict(),
            "d_y": self.d_y,
            "cond_dim": self.cond_dim,
        }

    def to_state(self) -> tuple[dict, dict]:
        raise NotImplementedError

    def _load_state(self, arrays: dict):
        raise NotImplementedError


# ---------------------------------------------------------------------------
# Linear regression with fixed residual sigma.
# ---------------------------------------------------------------------------


class LinearGaussian(DensityModel):
    """Per-dimension autoregressive linear regression, homoscedastic Gaussian."""

    kind = "arlin"

    def __init__(self, config=None):
        super().__init__(config)
        self.coefs: list[np.ndarray] = []
        self.sigmas: np.ndarray | None = None

    def _fit(self, cond, targets):
        n = len(cond)
        self.coefs = []
        sigmas = np.empty(self.d_y)
        for j in range(self.d_y):
            x = np.column_stack([targets[:, :j], cond, np.ones(n)])
            beta, *_ = np.linalg.lstsq(x, targets[:, j], rcond=None)
            resid = targets[:, j] - x @ beta
            denom = max(n - 1, 1)
            sigmas[j] = np.sqrt(max((resid**2).sum() / denom, 0.0))
            self.coefs.append(beta)
        self.sigmas = np.maximum(sigmas, _SIGMA_TINY)

    def _predict_dim(self, j, cond, yprefix):
        x = np.column_stack([yprefix, cond, np.ones(len(cond))])
        return x @ self.coefs[j]

    def mixture_for_dim(self, j, cond, yprefix):
        mu = self._predict_dim(j, cond, yprefix)[:, None]
        w = np.ones_like(mu)
        sg = np.full_like(mu, self.sigmas[j])
        return w, mu, sg

    def to_state(self):
        arrays = {"sigmas": self.sigmas}
        for j, beta in enumerate(self.coefs):
            arrays[f"coef{j}"] = beta
        return self._meta(), arrays

    def _load_state(self, arrays):
        self.sigmas = arrays["sigmas"]
        self.coefs = [arrays[f"coef{j}"] for j in range(self.d_y)]


# ---------------------------------------------------------------------------
# Shared plumbing for net-backed models.
# ---------------------------------------------------------------------------


@dataclass
class _FittedNet:
    spec: MlpSpec
    params: MlpParams
    x_scaler: Scaler
    y_scaler: Scaler

    def raw_out(self, x):
        return forward(self.spec, self.params, self.x_scaler.transform(x))


class _NetModel(DensityModel):
    """Base for models that train MLPs on standardized inputs/targets."""

    family = ""

    def __init__(self, config=None, deterministic: bool = False):
        super().__init__(config)
        self.config = _resolve(self.config, self._family_key())
        self.deterministic = deterministic
        if deterministic:
            self.has_likelihood = False
            self.has_cdf = False
            self.is_deterministic = True
        self.nets: list[_FittedNet] = []

    def _family_key(self):
        return self.family

    def _train_one(self, x, y, out_dim, loss_fn, net_seed, split):
        cfg = self.config
        train_idx = split[0]
        xs = Scaler.fit(x[train_idx])
        ys = Scaler.fit(y[train_idx].reshape(len(train_idx), -1))
        spec = MlpSpec(x.shape[1], tuple(cfg.hidden), out_dim)
        tconf = TrainConfig(
            learning_rate=cfg.learning_rate,
            epochs=cfg.epochs,
            batch_size=cfg.batch_size,
            validation_fraction=cfg.validation_fraction,
            seed=net_seed,
        )
        y2 = y.reshape(len(x), -1)
        params, report = train(
            spec, xs.transform(x), ys.transform(y2), loss_fn, tconf, split=split
        )
        self.train_reports.append(report)
        return _FittedNet(spec, params, xs, ys)

    def _net_seed(self, j: int) -> int:
        return int(np.random.SeedSequence([self.config.seed, j]).generate_state(1)[0])


class NeuralGaussian(_NetModel):
    """Per-dimension MSE-trained nets with a fixed residual sigma each."""

    family = "darnn"

    def __init__(self, config=None, deterministic=False):
        super().__init__(config, deterministic)
        self.kind = "darnn_det" if deterministic else "darnn"
        self.sigmas: np.ndarray | None = None

    def _fit(self, cond, targets):
        n = len(cond)
        split = validation_split(n, self.config.validation_fraction, self.config.seed)
        self.nets = []
        sigmas = np.empty(self.d_y)
        for j in range(self.d_y):
            x = np.column_stack([targets[:, :j], cond])
            net = self._train_one(x, targets[:, j], 1, mse_loss, self._net_seed(j), split)
            self.nets.append(net)
            pred = net.y_scaler.inverse(net.raw_out(x))[:, 0]
            denom = max(n - 1, 1)
            sigmas[j] = np.sqrt(max(((targets[:, j] - pred) ** 2).sum() / denom, 0.0))
        self.sigmas = np.maximum(sigmas, _SIGMA_TINY)

    def mixture_for_dim(self, j, cond, yprefix):
        if self.deterministic:
            raise CapabilityError("deterministic model provides no densities")
        net = self.nets[j]
        x = np.column_stack([yprefix, cond])
        mu = net.y_scaler.inverse(net.raw_out(x))
        return np.ones_like(mu), mu, np.full_like(mu, self.sigmas[j])

    def mean(self, cond):
        self._check_fitted()
        cond = np.atleast_2d(cond)
        out = np.empty((cond.shape[0], self.d_y))
        for j, net in enumerate(self.nets):
            x = np.column_stack([out[:, :j], cond])
            out[:, j] = net.y_scaler.inverse(net.raw_out(x))[:, 0]
        return out

    def _sample(self, cond, rng, context):
        m = cond.shape[0]
        out = np.empty((m, self.d_y))
        for j, net in enumerate(self.nets):
            x = np.column_stack([out[:, :j], cond])
            mu = net.y_scaler.inverse(net.raw_out(x))[:, 0]
            out[:, j] = mu + self.sigmas[j] * rng.standard_normal(m)
        return out

    def to_state(self):
        meta = self._meta()
        meta["deterministic"] = self.deterministic
        arrays = {"sigmas": self.sigmas}
        for j, net in enumerate(self.nets):
            arrays.update(_net_arrays(f"net{j}_", net))
        return meta, arrays

    def _load_state(self, arrays):
        self.sigmas = arrays["sigmas"]
        self.nets = [_net_from_arrays(f"net{j}_", arrays) for j in range(self.d_y)]


class AutoregressiveMixture(_NetModel):
    """One net per target dimension, each emitting a 1-D Gaussian mixture."""

    family = "darmdn"

    def __init__(self, config=None, deterministic=False):
        super().__init__(config, deterministic)
        d = self.config.components
        if d < 1:
            raise ValueError("need at least 1 mixture component")
        self.kind = f"darmdn{d}_det" if deterministic else f"darmdn{d}"

    def _fit(self, cond, targets):
        d = self.config.components
        split = validation_split(
            len(cond), self.config.validation_fraction, self.config.seed
        )
        loss = make_mixture_loss(d)
        self.nets = []
        for j in range(self.d_y):
            x = np.column_stack([targets[:, :j], cond])
            self.nets.append(
                self._train_one(x, targets[:, j], 3 * d, loss, self._net_seed(j), split)
            )

    def _dim_mixture(self, j, cond, yprefix):
        net = self.nets[j]
        x = np.column_stack([yprefix, cond])
        w, mu, sg = mixture_params_from_raw(net.raw_out(x), self.config.components, 1)
        mu = net.y_scaler.inverse(mu[:, :, 0])
        sg = sg[:, :, 0] * net.y_scaler.scale
        return w, mu, sg

    def mixture_for_dim(self, j, cond, yprefix):
        if self.deterministic:
            raise CapabilityError("deterministic model provides no densities")
        return self._dim_mixture(j, cond, yprefix)

    def mean(self, cond):
        self._check_fitted()
        cond = np.atleast_2d(cond)
        out = np.empty((cond.shape[0], self.d_y))
        for j in range(self.d_y):
            w, mu, _ = self._dim_mixture(j, cond, out[:, :j])
            out[:, j] = mixture_mean(w, mu)
        return out

    def _sample(self, cond, rng, context):
        m = cond.shape[0]
        out = np.empty((m, self.d_y))
        for j in range(self.d_y):
            w, mu, sg = self._dim_mixture(j, cond, out[:, :j])
            out[:, j] = sample_mixture(w, mu, sg, rng)
        return out

    def to_state(self):
        meta = self._meta()
        meta["deterministic"] = self.deterministic
        arrays = {}
        for j, net in enumerate(self.nets):
            arrays.update(_net_arrays(f"net{j}_", net))
        return meta, arrays

    def _load_state(self, arrays):
        self.nets = [_net_from_arrays(f"net{j}_", arrays) for j in range(self.d_y)]


class MixtureDensity(_NetModel):
    """Single net emitting a joint diagonal Gaussian mixture over all dims."""

    family = "dmdn"

    def __init__(self, config=None):
        super().__init__(config, deterministic=False)
        d = self.config.components
        if d < 1:
            raise ValueError("need at least 1 mixture component")
        self.kind = f"dmdn{d}"

    def _fit(self, cond, targets):
        d = self.config.components
        split = validation_split(
            len(cond), self.config.validation_fraction, self.config.seed
        )
        out_dim = d * (1 + 2 * self.d_y)
        self.nets = [
            self._train_one(
                cond, targets, out_dim, make_mixture_loss(d), self._net_seed(0), split
            )
        ]

    def joint_mixture(self, cond):
        """(w, mu, sigma) of the joint mixture at each row, original units."""
        self._check_fitted()
        net = self.nets[0]
        w, mu, sg = mixture_params_from_raw(
            net.raw_out(np.atleast_2d(cond)), self.config.components, self.d_y
        )
        mu = net.y_scaler.inverse(mu)
        sg = sg * net.y_scaler.scale
        return w, mu, sg

    def mixture_for_dim(self, j, cond, yprefix):
        w, mu, sg = self.joint_mixture(cond)
        return _conditional_mixture(w, mu, sg, j, np.atleast_2d(yprefix))

    def mean(self, cond):
        w, mu, _ = self.joint_mixture(cond)
        return (w[:, :, None] * mu).sum(axis=1)

    def _sample(self, cond, rng, context):
        # one component from the weight simplex, then independent Gaussians
        w, mu, sg = self.joint_mixture(cond)
        m = w.shape[0]
        comp = (rng.random(m)[:, None] > np.cumsum(w, axis=1)).sum(axis=1)
        comp = np.minimum(comp, w.shape[1] - 1)
        rows = np.arange(m)
        return mu[rows, comp] + sg[rows, comp] * rng.standard_normal((m, self.d_y))

    def to_state(self):
        return self._meta(), _net_arrays("net0_", self.nets[0])

    def _load_state(self, arrays):
        self.nets = [_net_from_arrays("net0_", arrays)]


class BaggedEnsemble(DensityModel):
    """Bootstrap-bagged single-Gaussian mixture nets (trajectory-sampled).

    The joint density is the uniform mixture of the members. When simulating,
    each trajectory draws one member uniformly (``start_trajectory``) and
    keeps it for every step.
    """

    kind = "pets"

    def __init__(self, config=None, members: list | None = None):
        super().__init__(config)
        if self.config.ensemble_size < 2:
            raise ValueError("ensemble needs at least 2 members")
        self.members: list[MixtureDensity] = list(members or [])
        if self.members:
            self.d_y = self.members[0].d_y
            self.cond_dim = self.members[0].cond_dim

    def _fit(self, cond, targets):
        n = len(cond)
        b = self.config.ensemble_size
        rng = np.random.default_rng(np.random.SeedSequence([self.config.seed, 0xB00]))
        self.members = []
        for k in range(b):
            idx = rng.integers(0, n, size=n)
            member_cfg = replace(
                self.config,
                components=1,
                hidden=self.config.hidden,
                seed=int(np.random.SeedSequence([self.config.seed, 1 + k]).generate_state(1)[0]),
            )
            member = MixtureDensity(member_cfg)
            member.fit(cond[idx], targets[idx])
            self.train_reports.extend(member.train_reports)
            self.members.append(member)

    def _stacked_params(self, cond):
        ws, mus, sgs = [], [], []
        for member in self.members:
            w, mu, sg = member.joint_mixture(cond)
            ws.append(w)
            mus.append(mu)
            sgs.append(sg)
        w = np.concatenate(ws, axis=1) / len(self.members)
        return w, np.concatenate(mus, axis=1), np.concatenate(sgs, axis=1)

    def mixture_for_dim(self, j, cond, yprefix):
        w, mu, sg = self._stacked_params(np.atleast_2d(cond))
        return _conditional_mixture(w, mu, sg, j, np.atleast_2d(yprefix))

    def mean(self, cond):
        self._check_fitted()
        w, mu, _ = self._stacked_params(np.atleast_2d(cond))
        return (w[:, :, None] * mu).sum(axis=1)

    def start_trajectory(self, m, rng):
        return rng.integers(0, len(self.members), size=m)

    def _sample(self, cond, rng, context):
        cond = np.atleast_2d(cond)
        m = cond.shape[0]
        if context is None:
            context = self.start_trajectory(m, rng)
        mu = np.empty((m, self.d_y))
        sg = np.empty((m, self.d_y))
        for k, member in enumerate(self.members):
            rows = np.flatnonzero(context == k)
            if len(rows) == 0:
                continue
            _, mu_k, sg_k = member.joint_mixture(cond[rows])
            mu[rows] = mu_k[:, 0, :]
            sg[rows] = sg_k[:, 0, :]
        return mu + sg * rng.standard_normal((m, self.d_y))

    def to_state(self):
        meta = self._meta()
        arrays = {}
        for k, member in enumerate(self.members):
            sub_meta, sub_arrays = member.to_state()
            meta[f"member{k}"] = sub_meta
            arrays.update({f"m{k}_{key}": v for key, v in sub_arrays.items()})
        return meta, arrays

    def _load_state(self, arrays):
        raise NotImplementedError  # handled in load_model


class TrueDynamics(DensityModel):
    """The real system behind the model interface; deterministic oracle."""

    kind = "oracle"
    has_likelihood = False
    has_cdf = False
    is_deterministic = True

    def __init__(self, variant: str, config=None):
        super().__init__(config)
        self.variant = variant
        self.d_y = acrobot.obs_dim(variant)
        self.cond_dim = acrobot.FEATURE_DIM + 1

    def fit(self, cond=None, targets=None):
        return self

    def mean(self, cond):
        cond = np.atleast_2d(cond)
        states = acrobot.states_from_features(cond[:, : acrobot.FEATURE_DIM])
        nxt = acrobot.step_batch(states, cond[:, acrobot.FEATURE_DIM])
        return acrobot.observe_batch(nxt, self.variant)

    def to_state(self):
        meta = self._meta()
        meta["variant"] = self.variant
        return meta, {"_empty": np.zeros(1)}

    def _load_state(self, arrays):
        pass


class BaselineGaussian(DensityModel):
    """Unconditional per-dimension Gaussian; the likelihood-ratio denominator."""

    kind = "baseline"

    def __init__(self, config=None):
        super().__init__(config)
        self.mu: np.ndarray | None = None
        self.sigma: np.ndarray | None = None

    def _fit(self, cond, targets):
        self.mu = targets.mean(axis=0)
        self.sigma = np.maximum(targets.std(axis=0), _SIGMA_TINY)

    def fit_targets(self, targets: np.ndarray) -> "BaselineGaussian":
        """Fit directly on target rows (the conditioning input is ignored)."""
        targets = np.atleast_2d(np.asarray(targets, dtype=np.float64))
        self.d_y = targets.shape[1]
        self.cond_dim = 0
        self._fit(None, targets)
        return self

    def mixture_for_dim(self, j, cond, yprefix):
        m = len(np.atleast_2d(cond))
        shape = (m, 1)
        return (
            np.ones(shape),
            np.full(shape, self.mu[j]),
            np.full(shape, self.sigma[j]),
        )

    def to_state(self):
        return self._meta(), {"mu": self.mu, "sigma": self.sigma}

    def _load_state(self, arrays):
        self.mu = arrays["mu"]
        self.sigma = arrays["sigma"]


# ---------------------------------------------------------------------------
# Net (de)serialization helpers and the model registry.
# ---------------------------------------------------------------------------


def _net_arrays(prefix: str, net: _FittedNet) -> dict:
    arrays = {
        f"{prefix}xm": net.x_scaler.mean,
        f"{prefix}xs": net.x_scaler.scale,
        f"{prefix}ym": net.y_scaler.mean,
        f"{prefix}ys": net.y_scaler.scale,
        f"{prefix}meta": np.array(
            [net.spec.input_dim, net.spec.output_dim, len(net.spec.hidden)]
            + list(net.spec.hidden)
        ),
    }
    for i, (w, b) in enumerate(zip(net.params.weights, net.params.biases)):
        arrays[f"{prefix}W{i}"] = w
        arrays[f"{prefix}b{i}"] = b
    return arrays


def _net_from_arrays(prefix: str, arrays: dict) -> _FittedNet:
    meta = arrays[f"{prefix}meta"].astype(int)
    n_hidden = meta[2]
    spec = MlpSpec(int(meta[0]), tuple(int(h) for h in meta[3 : 3 + n_hidden]), int(meta[1]))
    ws, bs = [], []
    for i in range(n_hidden + 1):
        ws.append(arrays[f"{prefix}W{i}"])
        bs.append(arrays[f"{prefix}b{i}"])
    return _FittedNet(
        spec,
        MlpParams(ws, bs),
        Scaler(arrays[f"{prefix}xm"], arrays[f"{prefix}xs"]),
        Scaler(arrays[f"{prefix}ym"], arrays[f"{prefix}ys"]),
    )


_KIND_RE = re.compile(r"(arlin|darnn|dmdn|darmdn|pets|ensemble|oracle|baseline)(\d*)(_det)?")


def make_model(kind: str, seed: int = 0, variant: str | None = None,
               **overrides) -> DensityModel:
    """Build an unfitted model from a kind string like ``darmdn10_det``.

    The optional digits choose the mixture size (or ensemble size for
    ``pets``/``ensemble``); ``_det`` selects the deterministic mean-rollout
    variant where one exists. Keyword overrides replace the per-kind default
    hyperparameters.
    """
    m = _KIND_RE.fullmatch(kind.strip().lower())
    if not m:
        raise ValueError(f"unknown model kind {kind!r}")
    base, digits, det = m.group(1), m.group(2), bool(m.group(3))
    if base == "oracle":
        if variant is None:
            raise ValueError("oracle model needs a variant")
        return TrueDynamics(variant)
    cfg = ModelConfig(seed=seed, **overrides)
    if base == "arlin":
        if det or digits:
            raise ValueError(f"{kind!r}: arlin takes no size or _det suffix")
        return LinearGaussian(cfg)
    if base == "baseline":
        return BaselineGaussian(cfg)
    if base == "darnn":
        if digits:
            raise ValueError(f"{kind!r}: darnn takes no component count")
        return NeuralGaussian(cfg, deterministic=det)
    if base == "dmdn":
        if det:
            raise ValueError(f"{kind!r}: no deterministic dmdn variant")
        if digits:
            cfg = replace(cfg, components=int(digits))
        if cfg.components < 1:
            raise ValueError("dmdn needs at least 1 component")
        return MixtureDensity(cfg)
    if base == "darmdn":
        if digits:
            cfg = replace(cfg, components=int(digits))
        if cfg.components < 1:
            raise ValueError("darmdn needs at least 1 component")
        return AutoregressiveMixture(cfg, deterministic=det)
    # pets / ensemble
    if det:
        raise ValueError(f"{kind!r}: no deterministic ensemble variant")
    if digits:
        cfg = replace(cfg, ensemble_size=int(digits))
    return BaggedEnsemble(cfg)


def save_model(model: DensityModel, path) -> None:
    meta, arrays = model.to_state()
    np.savez_compressed(path, __meta__=np.array(json.dumps(meta)), **arrays)


def load_model(path) -> DensityModel:
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["__meta__"]))
        arrays = {k: data[k] for k in data.files if k != "__meta__"}
    kind = meta["kind"]
    cfg = ModelConfig.from_dict(meta["config"])
    if kind == "oracle":
        return TrueDynamics(meta["variant"], cfg)
    if kind == "pets":
        members = []
        k = 0
        while f"member{k}" in meta:
            sub_meta = meta[f"member{k}"]
            member = MixtureDensity(ModelConfig.from_dict(sub_meta["config"]))
            member.d_y = sub_meta["d_y"]
            member.cond_dim = sub_meta["cond_dim"]
            prefix = f"m{k}_"
            member._load_state(
                {key[len(prefix):]: v for key, v in arrays.items() if key.startswith(prefix)}
            )
            members.append(member)
            k += 1
        model = BaggedEnsemble(cfg, members=members)
        model.d_y = meta["d_y"]
        model.cond_dim = meta["cond_dim"]
        return model
    if kind == "arlin":
        model = LinearGaussian(cfg)
    elif kind == "baseline":
        model = BaselineGaussian(cfg)
    elif kind.startswith("darnn"):
        model = NeuralGaussian(cfg, deterministic=meta.get("deterministic", False))
    elif kind.startswith("dmdn"):
        model = MixtureDensity(cfg)
    elif kind.startswith("darmdn"):
        model = AutoregressiveMixture(cfg, deterministic=meta.get("deterministic", False))
    else:
        raise ValueError(f"cannot load model kind {kind!r}")
    model.d_y = meta["d_y"]
    model.cond_dim = meta["cond_dim"]
    model._load_state(arrays)
    return model
