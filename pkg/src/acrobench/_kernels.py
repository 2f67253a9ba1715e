"""Numba-jitted hot kernels. Import only when the numba backend is active."""

import numpy as np
from numba import njit

from .acrobot import (
    DT,
    GRAVITY,
    LINK_COM_1,
    LINK_COM_2,
    LINK_LENGTH_1,
    LINK_MASS_1,
    LINK_MASS_2,
    LINK_MOI,
    MAX_VEL_1,
    MAX_VEL_2,
    N_SUB,
)

_PI = np.pi


@njit(cache=True)
def _dsdt(th1, th2, dth1, dth2, torque):
    m1, m2 = LINK_MASS_1, LINK_MASS_2
    l1, lc1, lc2 = LINK_LENGTH_1, LINK_COM_1, LINK_COM_2
    i1 = i2 = LINK_MOI
    g = GRAVITY
    cos2 = np.cos(th2)
    sin2 = np.sin(th2)
    d1 = m1 * lc1**2 + m2 * (l1**2 + lc2**2 + 2.0 * l1 * lc2 * cos2) + i1 + i2
    d2 = m2 * (lc2**2 + l1 * lc2 * cos2) + i2
    # sin(x) instead of cos(x - pi/2): keeps hanging an exact fixed point
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


@njit(cache=True)
def _step_one(th1, th2, dth1, dth2, torque):
    h = DT / N_SUB
    for _ in range(N_SUB):
        a1, a2, a3, a4 = _dsdt(th1, th2, dth1, dth2, torque)
        b1, b2, b3, b4 = _dsdt(
            th1 + 0.5 * h * a1, th2 + 0.5 * h * a2,
            dth1 + 0.5 * h * a3, dth2 + 0.5 * h * a4, torque,
        )
        c1, c2, c3, c4 = _dsdt(
            th1 + 0.5 * h * b1, th2 + 0.5 * h * b2,
            dth1 + 0.5 * h * b3, dth2 + 0.5 * h * b4, torque,
        )
        d1_, d2_, d3_, d4_ = _dsdt(
            th1 + h * c1, th2 + h * c2, dth1 + h * c3, dth2 + h * c4, torque,
        )
        th1 = th1 + h / 6.0 * (a1 + 2.0 * b1 + 2.0 * c1 + d1_)
        th2 = th2 + h / 6.0 * (a2 + 2.0 * b2 + 2.0 * c2 + d2_)
        dth1 = dth1 + h / 6.0 * (a3 + 2.0 * b3 + 2.0 * c3 + d3_)
        dth2 = dth2 + h / 6.0 * (a4 + 2.0 * b4 + 2.0 * c4 + d4_)
    th1 = np.mod(th1 + _PI, 2.0 * _PI) - _PI
    th2 = np.mod(th2 + _PI, 2.0 * _PI) - _PI
    dth1 = min(max(dth1, -MAX_VEL_1), MAX_VEL_1)
    dth2 = min(max(dth2, -MAX_VEL_2), MAX_VEL_2)
    return th1, th2, dth1, dth2


@njit(cache=True)
def step_batch_numba(states: np.ndarray, torques: np.ndarray) -> np.ndarray:
    out = np.empty_like(states)
    for i in range(states.shape[0]):
        out[i, 0], out[i, 1], out[i, 2], out[i, 3] = _step_one(
            states[i, 0], states[i, 1], states[i, 2], states[i, 3], torques[i]
        )
    return out
