"""The iterated learn/plan loop and its dynamic summary metrics.

One run: epoch 1 rolls a uniform-random policy for T steps from a start state
drawn once per run seed; every later epoch refits the model from scratch on
all data gathered so far and rolls the random-shooting policy for T steps,
restarting from the same start state. The per-epoch mean rewards form the
learning curve, summarized by

* MAR      mean reward over the second half of the epochs (inclusive)
* RMAR     MAR rescaled between the random policy's and the planner-on-true-
           dynamics ceilings
* MRCP(p)  system-access steps until the centered 5-epoch running average
           first clears p% of that gap (undefined if never)
"""

import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from . import acrobot
from .planner import PlannerConfig, random_shooting
from .trace import Trace

log = logging.getLogger(__name__)

# Planner ceiling and random-policy floor on Acrobot (RS, horizon 10, n=100,
# 200-step episodes). Recompute locally with the ``calibrate`` subcommand if
# the planner configuration changes.
MAR_OPT = 2.104
MAR_RAN = 0.12


@dataclass
class LearningCurve:
    mean_rewards: list
    epoch_len: int
    model_kind: str = ""
    variant: str = acrobot.RAW
    seed: int = 0
    note: str = ""

    @property
    def n_epochs(self) -> int:
        return len(self.mean_rewards)

    def save_csv(self, path, config: dict | None = None) -> None:
        with open(path, "w") as fh:
            embed = {
                "epoch_len": self.epoch_len,
                "model": self.model_kind,
                "variant": self.variant,
                "seed": self.seed,
            }
            if config:
                embed.update(config)
            fh.write("# config: " + json.dumps(embed, sort_keys=True) + "\n")
            fh.write("seed,epoch,steps_so_far,mean_reward\n")
            for i, mr in enumerate(self.mean_rewards, start=1):
                fh.write("%d,%d,%d,%.17g\n" % (self.seed, i, i * self.epoch_len, mr))

    @classmethod
    def load_csv(cls, path) -> "LearningCurve":
        meta = {}
        rewards = []
        seed = 0
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if line.startswith("#"):
                    if "config:" in line:
                        meta = json.loads(line.split("config:", 1)[1])
                    continue
                if not line or line.startswith("seed,"):
                    continue
                parts = line.split(",")
                seed = int(parts[0])
                rewards.append(float(parts[3]))
        return cls(
            mean_rewards=rewards,
            epoch_len=int(meta.get("epoch_len", 200)),
            model_kind=meta.get("model", ""),
            variant=meta.get("variant", acrobot.RAW),
            seed=int(meta.get("seed", seed)),
        )


@dataclass
class DynamicReport:
    mar: float
    rmar: float
    mrcp_steps: int | None
    mar_opt: float = MAR_OPT
    mar_ran: float = MAR_RAN

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def run_episode(start_state, policy, n_steps: int, variant: str) -> Trace:
    """Roll a policy for n_steps; rows log the observable an action was taken at."""
    state = np.asarray(start_state, dtype=np.float64).copy()
    d = acrobot.obs_dim(variant)
    obs_log = np.empty((n_steps, d))
    act_log = np.empty(n_steps)
    rew_log = np.empty(n_steps)
    for t in range(n_steps):
        obs = acrobot.observe(state, variant)
        a = policy(obs)
        obs_log[t] = obs
        act_log[t] = a
        rew_log[t] = acrobot.reward(obs, variant)
        state = acrobot.step(state, a)
    return Trace.from_episodes([(obs_log, act_log, rew_log)], variant)


def random_policy(rng: np.random.Generator, actions=acrobot.ACTIONS):
    actions = np.asarray(actions)

    def policy(obs):
        return float(actions[rng.integers(len(actions))])

    return policy


def planning_policy(model, config: PlannerConfig, rng: np.random.Generator):
    def policy(obs):
        s0 = acrobot.featurize(obs, config.variant)
        return random_shooting(model, s0, config, rng)

    return policy


def _epoch_rng(seed: int, epoch: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, epoch, stream]))


def _epoch_model_seed(seed: int, epoch: int) -> int:
    return int(np.random.SeedSequence([seed, epoch, 0xF17]).generate_state(1)[0])


def run_mbrl(
    model_factory,
    variant: str,
    n_epochs: int,
    epoch_len: int = 200,
    planner_config: PlannerConfig | None = None,
    seed: int = 0,
    out_dir: str | None = None,
    model_kind: str = "",
) -> tuple[LearningCurve, list[Trace]]:
    """Run the learn/plan loop; returns the learning curve and all epoch traces.

    ``model_factory(seed)`` must return a fresh unfitted model; it is called
    once per epoch from the second epoch on, and the model is refit from
    scratch on the concatenation of all earlier epoch traces. With ``out_dir``
    set, epoch traces and the curve are persisted incrementally and a crashed
    run resumes at epoch granularity.
    """
    config = planner_config or PlannerConfig(variant=variant)
    if config.variant != variant:
        raise ValueError("planner config variant does not match run variant")
    start_state = acrobot.reset(np.random.default_rng(np.random.SeedSequence([seed, 0x5EED])))

    curve = LearningCurve([], epoch_len, model_kind, variant, seed)
    traces: list[Trace] = []
    first_epoch = 1
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        first_epoch = _resume(out_dir, curve, traces) + 1

    for epoch in range(first_epoch, n_epochs + 1):
        rng = _epoch_rng(seed, epoch, 0xAC7)
        if epoch == 1:
            policy = random_policy(rng)
        else:
            model = model_factory(_epoch_model_seed(seed, epoch))
            if not curve.model_kind:
                curve.model_kind = getattr(model, "kind", "")
            conds, targets = [], []
            for tr in traces:
                c, y = tr.pairs()
                conds.append(c)
                targets.append(y)
            try:
                model.fit(np.vstack(conds), np.vstack(targets))
            except Exception as exc:  # noqa: BLE001 - abort run, keep partial curve
                curve.note = f"model fit failed at epoch {epoch}: {exc}"
                log.error("%s", curve.note)
                break
            policy = planning_policy(model, config, rng)
        trace = run_episode(start_state, policy, epoch_len, variant)
        traces.append(trace)
        curve.mean_rewards.append(trace.mean_reward())
        log.info("epoch %d/%d: mean reward %.4f", epoch, n_epochs,
                 curve.mean_rewards[-1])
        if out_dir:
            trace.save_csv(os.path.join(out_dir, f"epoch_{epoch:04d}.csv"),
                           {"seed": seed, "epoch": epoch})
            curve.save_csv(os.path.join(out_dir, "curve.csv"))
    return curve, traces


def _resume(out_dir: str, curve: LearningCurve, traces: list) -> int:
    """Load persisted epochs into curve/traces; returns the last done epoch."""
    curve_path = os.path.join(out_dir, "curve.csv")
    if not os.path.exists(curve_path):
        return 0
    prior = LearningCurve.load_csv(curve_path)
    done = 0
    for epoch in range(1, prior.n_epochs + 1):
        path = os.path.join(out_dir, f"epoch_{epoch:04d}.csv")
        if not os.path.exists(path):
            break
        traces.append(Trace.load_csv(path))
        curve.mean_rewards.append(prior.mean_rewards[epoch - 1])
        done = epoch
    if done:
        curve.model_kind = curve.model_kind or prior.model_kind
        log.info("resuming run in %s from epoch %d", out_dir, done + 1)
    return done


def mar(curve) -> float:
    """Mean reward over the second half of the epochs, endpoints inclusive."""
    vals = np.asarray(
        curve.mean_rewards if isinstance(curve, LearningCurve) else curve, dtype=float
    )
    n = len(vals)
    if n < 2:
        raise ValueError("need at least 2 epochs")
    return float(vals[n // 2 - 1 :].mean())


def rmar(mar_value: float, mar_opt: float = MAR_OPT, mar_ran: float = MAR_RAN) -> float:
    """Rescale MAR between the random floor (0) and the true-dynamics ceiling (1)."""
    if not mar_opt > mar_ran:
        raise ValueError("mar_opt must exceed mar_ran")
    return (mar_value - mar_ran) / (mar_opt - mar_ran)


def mrcp(
    curve,
    pct: float = 70.0,
    mar_opt: float = MAR_OPT,
    mar_ran: float = MAR_RAN,
    epoch_len: int | None = None,
) -> int | None:
    """Steps until the centered 5-epoch average first clears pct% of the gap.

    Returns epoch_len times the first qualifying epoch, or None if the curve
    never qualifies. Epochs without a full centered window are not evaluated.
    """
    if isinstance(curve, LearningCurve):
        vals = np.asarray(curve.mean_rewards, dtype=float)
        epoch_len = epoch_len or curve.epoch_len
    else:
        vals = np.asarray(curve, dtype=float)
        if epoch_len is None:
            raise ValueError("epoch_len required when passing a raw curve")
    n = len(vals)
    if n < 5:
        raise ValueError("need at least 5 epochs for the running average")
    threshold = mar_ran + pct / 100.0 * (mar_opt - mar_ran)
    for tau in range(3, n - 1):  # 1-indexed epochs with a full window
        if vals[tau - 3 : tau + 2].mean() > threshold:
            return tau * epoch_len
    return None


def dynamic_report(
    curve, mar_opt: float = MAR_OPT, mar_ran: float = MAR_RAN, pct: float = 70.0
) -> DynamicReport:
    m = mar(curve)
    return DynamicReport(
        mar=m,
        rmar=rmar(m, mar_opt, mar_ran),
        mrcp_steps=mrcp(curve, pct, mar_opt, mar_ran),
        mar_opt=mar_opt,
        mar_ran=mar_ran,
    )
