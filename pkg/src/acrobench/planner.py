"""Model-predictive control over the discrete torque space.

Random shooting scores n uniformly random action sequences under the model
and executes the first action of the best one. The cross-entropy variant
keeps an independent categorical distribution over the actions per horizon
step, refined over a few elite-reweighted iterations, and still executes the
first action of the best sequence seen anywhere in the search.

Sequence returns are the particle-averaged sum of rewards along simulated
rollouts: sample the next observable, score it, featurize it, apply the next
action. Deterministic models use a single particle and never touch the RNG.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from . import acrobot
from .models import DensityModel

log = logging.getLogger(__name__)

_SAFE_OBS = {
    acrobot.RAW: np.zeros(4),
    acrobot.SINCOS: np.array([0.0, 1.0, 0.0, 1.0, 0.0, 0.0]),
}


@dataclass
class CemConfig:
    total_samples: int = 500
    elite: int = 50
    iterations: int = 5
    smoothing: float = 0.1

    @property
    def population(self) -> int:
        return self.total_samples // self.iterations


@dataclass
class PlannerConfig:
    horizon: int = 10
    population: int = 100
    particles: int = 5
    variant: str = acrobot.RAW
    actions: tuple = acrobot.ACTIONS
    cem: CemConfig = field(default_factory=CemConfig)

    def __post_init__(self):
        if self.horizon < 1 or self.population < 1 or self.particles < 1:
            raise ValueError("horizon, population, and particles must be >= 1")
        if self.cem.elite > self.cem.population:
            raise ValueError(
                f"elite {self.cem.elite} exceeds per-iteration population "
                f"{self.cem.population}"
            )


def evaluate_sequences(
    model: DensityModel,
    s0: np.ndarray,
    seqs: np.ndarray,
    particles: int,
    rng: np.random.Generator,
    variant: str,
) -> np.ndarray:
    """Particle-averaged return of each action sequence from features s0.

    ``seqs`` is (n, horizon) of torques. A particle that produces a
    non-finite observable is abandoned and pushes its sequence's return to
    -inf. Ensemble models draw one member per particle and keep it for the
    whole rollout.
    """
    seqs = np.atleast_2d(seqs)
    n, horizon = seqs.shape
    if model.is_deterministic:
        particles = 1
    m = n * particles
    feats = np.tile(np.asarray(s0, dtype=np.float64), (m, 1))
    context = model.start_trajectory(m, rng)
    totals = np.zeros(m)
    alive = np.ones(m, dtype=bool)
    safe = _SAFE_OBS[variant]
    for i in range(horizon):
        actions = np.repeat(seqs[:, i], particles)
        cond = np.column_stack([feats, actions])
        with np.errstate(all="ignore"):
            obs = model.sample(cond, rng, context)
            finite = np.isfinite(obs).all(axis=1)
            newly_dead = alive & ~finite
            if newly_dead.any():
                obs[~finite] = safe
                alive &= finite
            rew = acrobot.reward_batch(obs, variant)
            totals[alive] += rew[alive]
            feats = acrobot.featurize_batch(obs, variant)
    totals[~alive] = -np.inf
    if not alive.all():
        log.warning("planner: %d of %d particles produced non-finite observables",
                    int((~alive).sum()), m)
    return totals.reshape(n, particles).mean(axis=1)


def rollout_return(
    model: DensityModel,
    s0: np.ndarray,
    seq: np.ndarray,
    particles: int,
    rng: np.random.Generator,
    variant: str = acrobot.RAW,
) -> float:
    """Return of a single action sequence."""
    return float(evaluate_sequences(model, s0, np.atleast_2d(seq), particles, rng, variant)[0])


def random_shooting(
    model: DensityModel,
    s0: np.ndarray,
    config: PlannerConfig,
    rng: np.random.Generator,
) -> float:
    """First action of the best of ``population`` uniform random sequences.

    Ties go to the lowest sample index, which makes planning reproducible.
    """
    actions = np.asarray(config.actions)
    idx = rng.integers(0, len(actions), size=(config.population, config.horizon))
    seqs = actions[idx]
    returns = evaluate_sequences(
        model, s0, seqs, config.particles, rng, config.variant
    )
    best = int(np.argmax(returns))
    return float(seqs[best, 0])


def _cem_search(
    model: DensityModel,
    s0: np.ndarray,
    config: PlannerConfig,
    rng: np.random.Generator,
):
    """Full CEM state: (best first action, best return, final distributions)."""
    actions = np.asarray(config.actions)
    n_act = len(actions)
    cem = config.cem
    probs = np.full((config.horizon, n_act), 1.0 / n_act)
    best_ret = -np.inf
    best_first = float(actions[0])
    for _ in range(cem.iterations):
        u = rng.random((cem.population, config.horizon))
        idx = (u[:, :, None] > np.cumsum(probs, axis=1)[None, :, :]).sum(axis=2)
        idx = np.minimum(idx, n_act - 1)
        seqs = actions[idx]
        returns = evaluate_sequences(
            model, s0, seqs, config.particles, rng, config.variant
        )
        order = np.argsort(-returns, kind="stable")
        if returns[order[0]] > best_ret:
            best_ret = float(returns[order[0]])
            best_first = float(seqs[order[0], 0])
        elite_idx = idx[order[: cem.elite]]
        freq = np.zeros_like(probs)
        for a in range(n_act):
            freq[:, a] = (elite_idx == a).mean(axis=0)
        # keep `smoothing` of the old distribution, move the rest to the elite
        probs = cem.smoothing * probs + (1.0 - cem.smoothing) * freq
    return best_first, best_ret, probs


def cem(
    model: DensityModel,
    s0: np.ndarray,
    config: PlannerConfig,
    rng: np.random.Generator,
) -> float:
    """Cross-entropy planning; returns the first action of the best sequence."""
    return _cem_search(model, s0, config, rng)[0]
