"""Acrobot physics, reward, observable variants, and the fixed feature map.

State layout is a float64 array ``[theta1, theta2, dtheta1, dtheta2]`` with
angles in radians wrapped to ``[-pi, pi)`` and velocities clamped to
``+-4*pi`` and ``+-9*pi``. ``theta1`` is the angle of the upper link from the
downward vertical, ``theta2`` the angle of the lower link relative to the
upper one. The discrete action is a torque in ``{-1, 0, +1}`` on the joint
between the links.

Two observable variants are supported:

* ``"raw"``     : ``[theta1, theta2, dtheta1, dtheta2]`` (4 dims)
* ``"sincos"``  : ``[sin th1, cos th1, sin th2, cos th2, dth1, dth2]`` (6 dims)

The conditioning features used by all dynamics models are the 8-vector
``[th1, sin th1, cos th1, th2, sin th2, cos th2, dth1, dth2]``.

All functions are pure; random state is caller-provided.
"""

import numpy as np

from .backend import USE_NUMBA

# Physics constants (standard two-link "book" dynamics).
LINK_MASS_1 = 1.0
LINK_MASS_2 = 1.0
LINK_LENGTH_1 = 1.0
LINK_COM_1 = 0.5
LINK_COM_2 = 0.5
LINK_MOI = 1.0
GRAVITY = 9.8
DT = 0.2            # control interval in seconds
N_SUB = 8           # RK4 substeps per control interval
MAX_VEL_1 = 4.0 * np.pi
MAX_VEL_2 = 9.0 * np.pi

ACTIONS = (-1.0, 0.0, 1.0)

RAW = "raw"
SINCOS = "sincos"
VARIANTS = (RAW, SINCOS)
OBS_DIM = {RAW: 4, SINCOS: 6}
FEATURE_DIM = 8


def obs_dim(variant: str) -> int:
    if variant not in OBS_DIM:
        raise ValueError(f"unknown variant {variant!r}, expected one of {VARIANTS}")
    return OBS_DIM[variant]


def wrap_angle(x):
    """Wrap angles into the half-open interval [-pi, pi)."""
    return np.mod(np.asarray(x) + np.pi, 2.0 * np.pi) - np.pi


def _dsdt_numpy(th1, th2, dth1, dth2, torque):
    m1, m2 = LINK_MASS_1, LINK_MASS_2
    l1, lc1, lc2 = LINK_LENGTH_1, LINK_COM_1, LINK_COM_2
    i1 = i2 = LINK_MOI
    g = GRAVITY
    cos2 = np.cos(th2)
    sin2 = np.sin(th2)
    d1 = m1 * lc1**2 + m2 * (l1**2 + lc2**2 + 2.0 * l1 * lc2 * cos2) + i1 + i2
    d2 = m2 * (lc2**2 + l1 * lc2 * cos2) + i2
    # gravity torques written as sin(x) rather than cos(x - pi/2) so the
    # hanging equilibrium is an exact fixed point in floating point
    phi2 = m2 * lc2 * g * np.sin(th1 + th2)
    phi1 = (
        -m2 * l1 * lc2 * dth2**2 * sin2
        - 2.0 * m2 * l1 * lc2 * dth2 * dth1 * sin2
        + (m1 * lc1 + m2 * l1) * g * np.sin(th1)
        + phi2
    )
    ddth2 = (
        torque + d2 / d1 * phi1 - m2 * l1 * lc2 * dth1**2 * sin2 - phi2
    ) / (m2 * lc2**2 + i2 - d2**2 / d1)
    ddth1 = -(d2 * ddth2 + phi1) / d1
    return dth1, dth2, ddth1, ddth2


def step_batch_numpy(states: np.ndarray, torques: np.ndarray) -> np.ndarray:
    """Vectorized control step: RK4 with N_SUB substeps, then wrap and clamp."""
    s = np.array(states, dtype=np.float64)
    a = np.asarray(torques, dtype=np.float64)
    h = DT / N_SUB
    for _ in range(N_SUB):
        y0, y1, y2, y3 = s[:, 0], s[:, 1], s[:, 2], s[:, 3]
        k1 = _dsdt_numpy(y0, y1, y2, y3, a)
        k2 = _dsdt_numpy(
            y0 + 0.5 * h * k1[0], y1 + 0.5 * h * k1[1],
            y2 + 0.5 * h * k1[2], y3 + 0.5 * h * k1[3], a,
        )
        k3 = _dsdt_numpy(
            y0 + 0.5 * h * k2[0], y1 + 0.5 * h * k2[1],
            y2 + 0.5 * h * k2[2], y3 + 0.5 * h * k2[3], a,
        )
        k4 = _dsdt_numpy(
            y0 + h * k3[0], y1 + h * k3[1], y2 + h * k3[2], y3 + h * k3[3], a,
        )
        for i in range(4):
            s[:, i] = s[:, i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
    s[:, 0] = wrap_angle(s[:, 0])
    s[:, 1] = wrap_angle(s[:, 1])
    s[:, 2] = np.clip(s[:, 2], -MAX_VEL_1, MAX_VEL_1)
    s[:, 3] = np.clip(s[:, 3], -MAX_VEL_2, MAX_VEL_2)
    return s


if USE_NUMBA:
    from ._kernels import step_batch_numba as _step_batch_impl
else:
    _step_batch_impl = step_batch_numpy


def step_batch(states: np.ndarray, torques: np.ndarray) -> np.ndarray:
    """Advance a batch of states one control interval under per-row torques."""
    return _step_batch_impl(
        np.ascontiguousarray(states, dtype=np.float64),
        np.ascontiguousarray(torques, dtype=np.float64),
    )


def step(state: np.ndarray, torque: float) -> np.ndarray:
    """Advance one state; the torque must be one of -1, 0, +1."""
    if torque not in ACTIONS:
        raise ValueError(f"torque must be one of {ACTIONS}, got {torque!r}")
    return step_batch(np.asarray(state, dtype=np.float64)[None, :], np.array([torque]))[0]


def reset(rng: np.random.Generator) -> np.ndarray:
    """Draw a start state with all four components uniform in [-0.1, 0.1]."""
    return rng.uniform(-0.1, 0.1, size=4)


def observe_batch(states: np.ndarray, variant: str) -> np.ndarray:
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    if variant == RAW:
        return states.copy()
    if variant == SINCOS:
        th1, th2 = states[:, 0], states[:, 1]
        return np.column_stack([
            np.sin(th1), np.cos(th1), np.sin(th2), np.cos(th2),
            states[:, 2], states[:, 3],
        ])
    raise ValueError(f"unknown variant {variant!r}")


def observe(state: np.ndarray, variant: str) -> np.ndarray:
    return observe_batch(state, variant)[0]


def reward_batch(obs: np.ndarray, variant: str) -> np.ndarray:
    """Tip height of the lower link over the hanging position, 2 - cos th1 - cos(th1+th2).

    For sincos observables the angle sum is expanded from the raw entries
    (cos(a+b) = cos a cos b - sin a sin b), so model-generated observables off
    the unit circle are scored as-is, without renormalization.
    """
    obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
    if variant == RAW:
        return 2.0 - np.cos(obs[:, 0]) - np.cos(obs[:, 0] + obs[:, 1])
    if variant == SINCOS:
        s1, c1, s2, c2 = obs[:, 0], obs[:, 1], obs[:, 2], obs[:, 3]
        return 2.0 - c1 - (c1 * c2 - s1 * s2)
    raise ValueError(f"unknown variant {variant!r}")


def reward(obs: np.ndarray, variant: str) -> float:
    return float(reward_batch(obs, variant)[0])


def featurize_batch(obs: np.ndarray, variant: str) -> np.ndarray:
    """Map observables to the 8-dim conditioning features.

    For sincos observables the angles are recovered with atan2, which also
    renormalizes model-generated (sin, cos) pairs that drifted off the unit
    circle. A pair that is exactly (0, 0) carries no angle and is rejected.
    """
    obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
    if variant == RAW:
        th1, th2, d1, d2 = obs[:, 0], obs[:, 1], obs[:, 2], obs[:, 3]
    elif variant == SINCOS:
        if np.any((obs[:, 0] == 0.0) & (obs[:, 1] == 0.0)) or np.any(
            (obs[:, 2] == 0.0) & (obs[:, 3] == 0.0)
        ):
            raise ValueError("cannot featurize observable with (sin, cos) == (0, 0)")
        th1 = np.arctan2(obs[:, 0], obs[:, 1])
        th2 = np.arctan2(obs[:, 2], obs[:, 3])
        d1, d2 = obs[:, 4], obs[:, 5]
    else:
        raise ValueError(f"unknown variant {variant!r}")
    return np.column_stack([
        th1, np.sin(th1), np.cos(th1), th2, np.sin(th2), np.cos(th2), d1, d2,
    ])


def featurize(obs: np.ndarray, variant: str) -> np.ndarray:
    return featurize_batch(obs, variant)[0]


def states_from_features(features: np.ndarray) -> np.ndarray:
    """Recover [th1, th2, dth1, dth2] states from feature rows (exact inverse)."""
    f = np.atleast_2d(np.asarray(features, dtype=np.float64))
    return np.column_stack([f[:, 0], f[:, 3], f[:, 6], f[:, 7]])
