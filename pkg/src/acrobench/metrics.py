"""Static forecast metrics and the cross-validation harness.

Six scores compare a fitted density model against a test trace:

* ``lr``    likelihood ratio: exp of the difference between the model's and an
            unconditional Gaussian baseline's average per-dimension
            log-likelihood, computed on the steps whose model density exceeds
            ``P_MIN`` (both averages use the same surviving steps)
* ``or``    outlier rate: the fraction of steps filtered out above
* ``r2``    explained variance of the mean prediction, averaged over dims
* ``ks``    Kolmogorov distance between the sorted model-CDF quantiles of the
            ground truth and the uniform grid, averaged over dims
* ``r2_h``  r2 at a simulation horizon, Monte-Carlo mean over sampled futures
* ``ks_h``  ks at a horizon, CDF approximated by the empirical sample fraction

Deterministic models report ``r2`` and ``r2_h`` only; the likelihood-based
scores raise ``CapabilityError`` (they appear as blanks in reports).

Report CSV columns are fixed: ``model,dataset,variant,fold,metric,dim,value``
where ``dim`` is empty for the dimension-averaged score and ``fold`` is
``mean``/``ci`` for the aggregate rows.
"""

import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import acrobot
from .models import BaselineGaussian, CapabilityError, DensityModel
from .trace import Trace

log = logging.getLogger(__name__)

P_MIN = 1.47e-6
METRIC_NAMES = ("lr", "or", "r2", "ks", "r2_h", "ks_h")


def ks_distance(quantiles: np.ndarray) -> float:
    """Max deviation of ordered quantiles from the uniform grid i/n."""
    q = np.sort(np.asarray(quantiles))
    n = len(q)
    grid = np.arange(1, n + 1) / n
    return float(np.abs(q - grid).max())


def _pairs(trace: Trace):
    return trace.pairs()


def avg_log_likelihood_pairs(model: DensityModel, cond, targets) -> float:
    return float(model.log_density_terms(cond, targets).mean())


def avg_log_likelihood(model: DensityModel, trace: Trace) -> float:
    """Average per-dimension, per-step log-likelihood of the model on a trace."""
    cond, targets = _pairs(trace)
    return avg_log_likelihood_pairs(model, cond, targets)


def _outlier_mask(terms: np.ndarray, p_min: float, mode: str) -> np.ndarray:
    log_pmin = math.log(p_min)
    if mode == "joint":
        return terms.sum(axis=1) > log_pmin
    if mode == "per_dim":
        return (terms > log_pmin).all(axis=1)
    raise ValueError(f"filter mode must be 'joint' or 'per_dim', got {mode!r}")


def lr_score_pairs(
    model: DensityModel,
    cond,
    targets,
    baseline: BaselineGaussian,
    p_min: float = P_MIN,
    filter_mode: str = "joint",
):
    terms = model.log_density_terms(cond, targets)
    base_terms = baseline.log_density_terms(cond, targets)
    mask = _outlier_mask(terms, p_min, filter_mode)
    or_rate = 1.0 - mask.mean()
    if not mask.any():
        return float("nan"), 1.0
    lr = math.exp(terms[mask].mean() - base_terms[mask].mean())
    return lr, float(or_rate)


def lr_score(
    model: DensityModel,
    trace: Trace,
    baseline: BaselineGaussian,
    p_min: float = P_MIN,
    filter_mode: str = "joint",
):
    """Likelihood ratio against the baseline and the outlier rate.

    Steps whose model density is at or below ``p_min`` are dropped from both
    averages; their fraction is the outlier rate. If every step is filtered
    the ratio is undefined and returned as nan with rate 1.
    """
    cond, targets = _pairs(trace)
    return lr_score_pairs(model, cond, targets, baseline, p_min, filter_mode)


def r2_score(predictor, trace: Trace):
    """Per-dimension explained variance of the mean prediction, averaged.

    ``predictor`` is a fitted model (its ``mean`` is used) or a callable
    mapping conditions to predictions. Dimensions with zero target variance
    are excluded and flagged with a warning; their per-dim entry is nan.
    """
    cond, targets = _pairs(trace)
    fn = predictor.mean if isinstance(predictor, DensityModel) else predictor
    pred = np.atleast_2d(fn(cond))
    mse = ((pred - targets) ** 2).mean(axis=0)
    var = trace.obs.var(axis=0)
    per_dim = np.full(trace.d_y, np.nan)
    valid = var > 0
    if not valid.all():
        log.warning("r2: excluding %d zero-variance dimension(s)", (~valid).sum())
    per_dim[valid] = 1.0 - mse[valid] / var[valid]
    return float(per_dim[valid].mean()), per_dim


def ks_score_pairs(model: DensityModel, cond, targets):
    if not model.has_cdf:
        raise CapabilityError(f"{model.kind} model provides no CDFs")
    d = targets.shape[1]
    per_dim = np.empty(d)
    for j in range(d):
        q = model.cdf_marginal(j, targets[:, j], cond, targets[:, :j])
        per_dim[j] = ks_distance(q)
    return float(per_dim.mean()), per_dim


def ks_score(model: DensityModel, trace: Trace):
    """Calibration: per-dimension KS distance of ground-truth quantiles."""
    cond, targets = _pairs(trace)
    return ks_score_pairs(model, cond, targets)


@dataclass
class LongHorizonResult:
    r2: float
    ks: float | None
    per_dim_r2: np.ndarray
    per_dim_ks: np.ndarray | None
    positions_used: int


def long_horizon(
    model: DensityModel,
    trace: Trace,
    horizon: int = 10,
    n_traces: int = 100,
    positions: int = 100,
    rng: np.random.Generator | None = None,
    metrics: tuple | None = None,
) -> LongHorizonResult:
    """Monte-Carlo r2/ks after simulating ``horizon`` steps from test positions.

    Positions are drawn uniformly without replacement among all steps whose
    episode still has ``horizon`` ground-truth steps ahead; the logged actions
    are replayed during simulation. ``metrics`` defaults to whatever the
    model supports; explicitly requesting "ks" from a deterministic model
    raises ``CapabilityError``.
    """
    if metrics is None:
        metrics = ("r2", "ks") if model.has_cdf else ("r2",)
    if "ks" in metrics and not model.has_cdf:
        raise CapabilityError(f"{model.kind} model cannot provide horizon-ks")
    rng = rng or np.random.default_rng()

    valid_rows = []
    for sl in trace.episode_slices():
        ep_len = sl.stop - sl.start
        if ep_len > horizon:
            valid_rows.extend(range(sl.start, sl.stop - horizon))
    if not valid_rows:
        raise ValueError(f"no episode is longer than the horizon {horizon}")
    valid_rows = np.asarray(valid_rows)
    take = min(positions, len(valid_rows))
    rows = np.sort(rng.choice(len(valid_rows), size=take, replace=False))
    rows = valid_rows[rows]

    reps = 1 if model.is_deterministic else n_traces
    m = len(rows) * reps
    rep_rows = np.repeat(rows, reps)
    obs = trace.obs[rep_rows].copy()
    context = model.start_trajectory(m, rng)
    with np.errstate(all="ignore"):
        for step in range(horizon):
            feats = acrobot.featurize_batch(obs, trace.variant)
            cond = np.column_stack([feats, trace.act[rep_rows + step]])
            obs = model.sample(cond, rng, context)
    endpoints = obs.reshape(len(rows), reps, trace.d_y)
    truth = trace.obs[rows + horizon]

    f = endpoints.mean(axis=1)
    var = trace.obs.var(axis=0)
    mse = ((f - truth) ** 2).mean(axis=0)
    per_dim_r2 = np.full(trace.d_y, np.nan)
    ok = var > 0
    per_dim_r2[ok] = 1.0 - mse[ok] / var[ok]
    r2 = float(per_dim_r2[ok].mean())

    ks = None
    per_dim_ks = None
    if "ks" in metrics:
        per_dim_ks = np.empty(trace.d_y)
        for j in range(trace.d_y):
            q = (endpoints[:, :, j] < truth[:, None, j]).mean(axis=1)
            per_dim_ks[j] = ks_distance(q)
        ks = float(per_dim_ks.mean())
    return LongHorizonResult(r2, ks, per_dim_r2, per_dim_ks, len(rows))


# ---------------------------------------------------------------------------
# Full evaluation and cross-validation.
# ---------------------------------------------------------------------------


@dataclass
class MetricValues:
    lr: float | None = None
    or_rate: float | None = None
    r2: float | None = None
    ks: float | None = None
    r2_h: float | None = None
    ks_h: float | None = None
    per_dim: dict = field(default_factory=dict)
    fit_seconds: float = 0.0
    eval_seconds: float = 0.0

    def get(self, name: str):
        return getattr(self, "or_rate" if name == "or" else name)

    def to_dict(self) -> dict:
        d = {k: self.get(k) for k in METRIC_NAMES}
        d["per_dim"] = {
            k: (None if v is None else list(np.asarray(v, dtype=float)))
            for k, v in self.per_dim.items()
        }
        d["fit_seconds"] = self.fit_seconds
        d["eval_seconds"] = self.eval_seconds
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MetricValues":
        return cls(
            lr=d.get("lr"),
            or_rate=d.get("or"),
            r2=d.get("r2"),
            ks=d.get("ks"),
            r2_h=d.get("r2_h"),
            ks_h=d.get("ks_h"),
            per_dim={
                k: (None if v is None else np.asarray(v, dtype=float))
                for k, v in d.get("per_dim", {}).items()
            },
            fit_seconds=d.get("fit_seconds", 0.0),
            eval_seconds=d.get("eval_seconds", 0.0),
        )


def evaluate_model(
    model: DensityModel,
    baseline: BaselineGaussian,
    test_trace: Trace,
    horizon: int = 10,
    n_traces: int = 100,
    positions: int = 100,
    rng: np.random.Generator | None = None,
    p_min: float = P_MIN,
    filter_mode: str = "joint",
) -> MetricValues:
    """All six metrics on a test trace; likelihood scores blank when unsupported."""
    rng = rng or np.random.default_rng()
    t0 = time.perf_counter()
    values = MetricValues()
    cond, targets = _pairs(test_trace)

    values.r2, per_r2 = r2_score(model, test_trace)
    values.per_dim["r2"] = per_r2

    if model.has_likelihood:
        terms = model.log_density_terms(cond, targets)
        base_terms = baseline.log_density_terms(cond, targets)
        mask = _outlier_mask(terms, p_min, filter_mode)
        values.or_rate = float(1.0 - mask.mean())
        log_pmin = math.log(p_min)
        values.per_dim["or"] = (terms <= log_pmin).mean(axis=0)
        if mask.any():
            values.lr = float(np.exp(terms[mask].mean() - base_terms[mask].mean()))
            values.per_dim["lr"] = np.exp(
                terms[mask].mean(axis=0) - base_terms[mask].mean(axis=0)
            )
        else:
            values.lr = float("nan")
    if model.has_cdf:
        values.ks, per_ks = ks_score(model, test_trace)
        values.per_dim["ks"] = per_ks

    lh = long_horizon(model, test_trace, horizon, n_traces, positions, rng)
    values.r2_h = lh.r2
    values.per_dim["r2_h"] = lh.per_dim_r2
    if lh.ks is not None:
        values.ks_h = lh.ks
        values.per_dim["ks_h"] = lh.per_dim_ks
    values.eval_seconds = time.perf_counter() - t0
    return values


@dataclass
class MetricReport:
    model_kind: str
    dataset: str
    variant: str
    k: int
    folds: list = field(default_factory=list)
    mean: dict = field(default_factory=dict)
    ci90: dict = field(default_factory=dict)
    per_dim_mean: dict = field(default_factory=dict)

    def aggregate(self) -> None:
        """Fold mean and 90% Gaussian confidence interval per metric."""
        self.mean, self.ci90, self.per_dim_mean = {}, {}, {}
        for name in METRIC_NAMES:
            vals = [f.get(name) for f in self.folds]
            if any(v is None for v in vals) or not vals:
                self.mean[name] = None
                self.ci90[name] = None
                continue
            arr = np.asarray(vals, dtype=float)
            self.mean[name] = float(arr.mean())
            self.ci90[name] = (
                float(1.6448536269514722 * arr.std(ddof=1) / math.sqrt(len(arr)))
                if len(arr) > 1
                else 0.0
            )
            dims = [f.per_dim.get(name) for f in self.folds]
            if all(d is not None for d in dims):
                self.per_dim_mean[name] = np.vstack(dims).mean(axis=0)

    def to_dict(self) -> dict:
        return {
            "model": self.model_kind,
            "dataset": self.dataset,
            "variant": self.variant,
            "k": self.k,
            "folds": [f.to_dict() for f in self.folds],
            "mean": self.mean,
            "ci90": self.ci90,
            "per_dim_mean": {
                k: list(np.asarray(v, dtype=float)) for k, v in self.per_dim_mean.items()
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricReport":
        rep = cls(
            model_kind=d["model"],
            dataset=d["dataset"],
            variant=d["variant"],
            k=d["k"],
            folds=[MetricValues.from_dict(f) for f in d["folds"]],
            mean=d.get("mean", {}),
            ci90=d.get("ci90", {}),
            per_dim_mean={
                k: np.asarray(v, dtype=float)
                for k, v in d.get("per_dim_mean", {}).items()
            },
        )
        return rep

    @classmethod
    def from_json(cls, text: str) -> "MetricReport":
        return cls.from_dict(json.loads(text))

    def csv_rows(self) -> list[str]:
        """Flat rows: model,dataset,variant,fold,metric,dim,value."""
        rows = []

        def fmt(v):
            return "" if v is None else "%.17g" % v

        for i, f in enumerate(self.folds):
            for name in METRIC_NAMES:
                rows.append(
                    f"{self.model_kind},{self.dataset},{self.variant},{i},{name},,{fmt(f.get(name))}"
                )
                pd = f.per_dim.get(name)
                if pd is not None:
                    for j, v in enumerate(np.asarray(pd, dtype=float)):
                        rows.append(
                            f"{self.model_kind},{self.dataset},{self.variant},{i},{name},{j + 1},{fmt(v)}"
                        )
        for name in METRIC_NAMES:
            rows.append(
                f"{self.model_kind},{self.dataset},{self.variant},mean,{name},,{fmt(self.mean.get(name))}"
            )
            rows.append(
                f"{self.model_kind},{self.dataset},{self.variant},ci,{name},,{fmt(self.ci90.get(name))}"
            )
        return rows


def _fold_episode_groups(pool: Trace, k: int) -> list[np.ndarray]:
    episodes = pool.episode_ids()
    if len(episodes) < k:
        raise ValueError(f"{len(episodes)} episodes cannot form {k} folds")
    return np.array_split(episodes, k)


def _run_fold(args) -> MetricValues:
    (factory, pool, test_trace, groups, fold, seed, horizon, n_traces, positions,
     p_min, filter_mode) = args
    keep = np.concatenate([g for i, g in enumerate(groups) if i != fold])
    train_trace = pool.select_episodes(keep)
    cond, targets = train_trace.pairs()
    t0 = time.perf_counter()
    model = factory(seed)
    model.fit(cond, targets)
    baseline = BaselineGaussian().fit_targets(targets)
    fit_seconds = time.perf_counter() - t0
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xE7A1]))
    values = evaluate_model(
        model, baseline, test_trace, horizon, n_traces, positions, rng,
        p_min, filter_mode,
    )
    values.fit_seconds = fit_seconds
    return values


def cross_validate(
    model_factory: Callable[[int], DensityModel],
    pool: Trace,
    test_trace: Trace,
    k: int = 10,
    seed: int = 0,
    horizon: int = 10,
    n_traces: int = 100,
    positions: int = 100,
    p_min: float = P_MIN,
    filter_mode: str = "joint",
    threads: int = 1,
    model_kind: str = "",
    dataset: str = "",
) -> MetricReport:
    """k resampled fits on the training pool, all scored on one test trace.

    The pool is partitioned by episodes into k groups; fold i trains on all
    episodes outside group i. ``model_factory(seed)`` must return a fresh
    unfitted model. Folds are independent and may run in parallel; results
    are merged by fold index, so the report does not depend on scheduling.
    """
    groups = _fold_episode_groups(pool, k)
    fold_seeds = [
        int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(k)
    ]
    tasks = [
        (model_factory, pool, test_trace, groups, i, fold_seeds[i], horizon,
         n_traces, positions, p_min, filter_mode)
        for i in range(k)
    ]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool_exec:
            folds = list(pool_exec.map(_run_fold, tasks))
    else:
        folds = [_run_fold(t) for t in tasks]
    report = MetricReport(
        model_kind=model_kind, dataset=dataset, variant=test_trace.variant, k=k,
        folds=folds,
    )
    report.aggregate()
    return report
