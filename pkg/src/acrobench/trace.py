"""Trace datasets: episode-structured (observable, action, reward) logs.

A trace row ``(episode, t, y, a, r)`` holds the observable ``y`` seen at step
``t`` of an episode, the action ``a`` taken at it, and the reward ``r = r(y)``
of that observable. One-step training pairs are built within episodes only:
the condition is ``[features(y_t), a_t]`` (9 values) and the target is
``y_{t+1}``.

CSV layout is fixed: header ``episode,t,y1..y{d_y},a,r``, preceded by ``#``
comment lines embedding the JSON config that produced the file.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from . import acrobot


@dataclass
class Trace:
    variant: str
    episode: np.ndarray  # (n,) int episode index
    t: np.ndarray        # (n,) int step index within episode, starting at 0
    obs: np.ndarray      # (n, d_y) observables
    act: np.ndarray      # (n,) torques
    rew: np.ndarray      # (n,) rewards
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.episode = np.asarray(self.episode, dtype=np.int64)
        self.t = np.asarray(self.t, dtype=np.int64)
        self.obs = np.asarray(self.obs, dtype=np.float64)
        self.act = np.asarray(self.act, dtype=np.float64)
        self.rew = np.asarray(self.rew, dtype=np.float64)
        if self.obs.ndim != 2 or self.obs.shape[1] != acrobot.obs_dim(self.variant):
            raise ValueError(
                f"observables have shape {self.obs.shape}, expected "
                f"(n, {acrobot.obs_dim(self.variant)}) for variant {self.variant!r}"
            )

    @property
    def n_steps(self) -> int:
        return len(self.episode)

    @property
    def d_y(self) -> int:
        return self.obs.shape[1]

    def episode_ids(self) -> np.ndarray:
        return np.unique(self.episode)

    def episode_slices(self) -> list[slice]:
        """Contiguous row ranges of each episode, in order of appearance."""
        out = []
        ids = self.episode
        start = 0
        for i in range(1, len(ids) + 1):
            if i == len(ids) or ids[i] != ids[start]:
                out.append(slice(start, i))
                start = i
        return out

    @classmethod
    def from_episodes(cls, episodes, variant: str, meta: dict | None = None) -> "Trace":
        """Build a trace from a list of per-episode (obs, act, rew) arrays."""
        ep_col, t_col, ys, acts, rews = [], [], [], [], []
        for k, (y, a, r) in enumerate(episodes):
            y = np.atleast_2d(np.asarray(y, dtype=np.float64))
            n = len(y)
            ep_col.append(np.full(n, k, dtype=np.int64))
            t_col.append(np.arange(n, dtype=np.int64))
            ys.append(y)
            acts.append(np.asarray(a, dtype=np.float64))
            rews.append(np.asarray(r, dtype=np.float64))
        return cls(
            variant=variant,
            episode=np.concatenate(ep_col),
            t=np.concatenate(t_col),
            obs=np.vstack(ys),
            act=np.concatenate(acts),
            rew=np.concatenate(rews),
            meta=dict(meta or {}),
        )

    def select_episodes(self, ids) -> "Trace":
        """Sub-trace restricted to the given episode ids (order preserved)."""
        mask = np.isin(self.episode, np.asarray(ids))
        return Trace(
            variant=self.variant,
            episode=self.episode[mask],
            t=self.t[mask],
            obs=self.obs[mask],
            act=self.act[mask],
            rew=self.rew[mask],
            meta=dict(self.meta),
        )

    def pairs(self) -> tuple[np.ndarray, np.ndarray]:
        """One-step (condition, next-observable) pairs, within episodes only.

        Returns ``(C, Y)`` where ``C`` is (m, 9): the 8 features of the
        current observable plus the action, and ``Y`` is (m, d_y).
        """
        conds, targets = [], []
        for sl in self.episode_slices():
            y = self.obs[sl]
            a = self.act[sl]
            if len(y) < 2:
                continue
            feats = acrobot.featurize_batch(y[:-1], self.variant)
            conds.append(np.column_stack([feats, a[:-1]]))
            targets.append(y[1:])
        if not conds:
            raise ValueError("trace has no episode with at least 2 steps")
        return np.vstack(conds), np.vstack(targets)

    def mean_reward(self) -> float:
        return float(self.rew.mean())

    def concat(self, other: "Trace") -> "Trace":
        """Append another trace, renumbering its episodes to stay distinct."""
        if other.variant != self.variant:
            raise ValueError("cannot concatenate traces of different variants")
        offset = self.episode.max() + 1 if len(self.episode) else 0
        return Trace(
            variant=self.variant,
            episode=np.concatenate([self.episode, other.episode + offset]),
            t=np.concatenate([self.t, other.t]),
            obs=np.vstack([self.obs, other.obs]),
            act=np.concatenate([self.act, other.act]),
            rew=np.concatenate([self.rew, other.rew]),
            meta=dict(self.meta),
        )

    def save_csv(self, path, config: dict | None = None) -> None:
        d = self.d_y
        header = "episode,t," + ",".join(f"y{j + 1}" for j in range(d)) + ",a,r"
        with open(path, "w") as fh:
            embed = {"variant": self.variant}
            embed.update(self.meta)
            if config:
                embed.update(config)
            fh.write("# config: " + json.dumps(embed, sort_keys=True) + "\n")
            fh.write(header + "\n")
            for i in range(self.n_steps):
                ys = ",".join("%.17g" % v for v in self.obs[i])
                fh.write(
                    "%d,%d,%s,%.17g,%.17g\n"
                    % (self.episode[i], self.t[i], ys, self.act[i], self.rew[i])
                )

    @classmethod
    def load_csv(cls, path) -> "Trace":
        meta = {}
        rows = []
        header = None
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                if line.startswith("#"):
                    if "config:" in line:
                        meta = json.loads(line.split("config:", 1)[1])
                    continue
                if header is None:
                    header = line.split(",")
                    continue
                rows.append(line.split(","))
        if header is None or not rows:
            raise ValueError(f"no trace rows found in {path}")
        d = len(header) - 4
        variant = meta.get("variant")
        if variant is None:
            variant = acrobot.RAW if d == 4 else acrobot.SINCOS
        data = np.array(rows, dtype=np.float64)
        return cls(
            variant=variant,
            episode=data[:, 0].astype(np.int64),
            t=data[:, 1].astype(np.int64),
            obs=data[:, 2 : 2 + d],
            act=data[:, 2 + d],
            rew=data[:, 3 + d],
            meta=meta,
        )
