"""Batched Dormand-Prince 5(4) integrator with PI step control.

Every row of the batch shares one step sequence.  That keeps the discrete
solution map a smooth function of the initial data, which matters because
downstream code differentiates flows by finite differences.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
A = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
    np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]),
]
B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])
# continuous extension, y(s + th) = y + h * K^T (P @ [t, t^2, t^3, t^4])
P = np.array([
    [1.0, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0.0, 0.0, 0.0, 0.0],
    [0.0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0.0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0.0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0.0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0.0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])

SAFETY = 0.9
FAC_MIN = 0.2
FAC_MAX = 10.0
ALPHA = 0.17
BETA = 0.04


class IntegrationError(RuntimeError):
    """Step-size underflow or a non-finite state; ``time`` is where it stopped."""

    def __init__(self, message: str, time: float):
        super().__init__(f"{message} at s={time:.6g}")
        self.time = time


@dataclass
class Solution:
    s: np.ndarray                  # accepted step start points plus the end point
    y: np.ndarray                  # (steps + 1, batch, m)
    k: list = field(default_factory=list)   # stage derivatives per step (7, batch, m)
    nfev: int = 0

    def __call__(self, s_eval) -> np.ndarray:
        """Dense output at the points ``s_eval`` (monotone in the run direction)."""
        s_eval = np.atleast_1d(np.asarray(s_eval, dtype=float))
        out = np.empty((s_eval.size,) + self.y.shape[1:])
        sgn = np.sign(self.s[-1] - self.s[0]) or 1.0
        idx = np.searchsorted(sgn * self.s, sgn * s_eval, side="right") - 1
        idx = np.clip(idx, 0, len(self.k) - 1)
        for i, (se, j) in enumerate(zip(s_eval, idx)):
            h = self.s[j + 1] - self.s[j]
            th = (se - self.s[j]) / h
            q = P @ np.array([th, th ** 2, th ** 3, th ** 4])
            out[i] = self.y[j] + h * np.tensordot(q, self.k[j], axes=(0, 0))
        return out


def _norm(err, y0, y1, rtol, atol):
    sc = atol + rtol * np.maximum(np.abs(y0), np.abs(y1))
    per_row = np.sqrt(np.mean((err / sc) ** 2, axis=-1))
    return float(np.max(per_row)) if per_row.size else 0.0


def _initial_step(f, s0, y0, f0, direction, rtol, atol):
    sc = atol + rtol * np.abs(y0)
    d0 = np.max(np.sqrt(np.mean((y0 / sc) ** 2, axis=-1)))
    d1 = np.max(np.sqrt(np.mean((f0 / sc) ** 2, axis=-1)))
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    y1 = y0 + direction * h0 * f0
    f1 = f(s0 + direction * h0, y1)
    d2 = np.max(np.sqrt(np.mean(((f1 - f0) / sc) ** 2, axis=-1))) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1 / 5)
    return min(100 * h0, h1)


def dopri5(f, s0: float, s1: float, y0, rtol: float = 1e-10, atol: float = 1e-10,
           dense: bool = False, max_steps: int = 100000) -> Solution:
    """Integrate ``y' = f(s, y)`` from ``s0`` to ``s1`` for a batch ``y0`` of shape
    ``(batch, m)``.  ``f`` must accept and return arrays of that shape."""
    y = np.array(y0, dtype=float)
    if y.ndim == 1:
        y = y[None, :]
    if not np.all(np.isfinite(y)):
        raise IntegrationError("non-finite initial state", s0)
    direction = 1.0 if s1 >= s0 else -1.0
    span = abs(s1 - s0)
    s = s0
    ss = [s0]
    ys = [y.copy()]
    ks = []
    if span == 0.0:
        return Solution(np.array(ss), np.array(ys), ks, 0)

    f0 = f(s, y)
    nfev = 1
    h = min(_initial_step(f, s, y, f0, direction, rtol, atol), span)
    nfev += 1
    err_old = 1e-4
    rejected = False
    K = np.empty((7,) + y.shape)
    for _ in range(max_steps):
        remaining = abs(s1 - s)
        if remaining <= 1e-15 * max(1.0, abs(s1)):
            break
        h = min(h, remaining)
        if h < 1e-14 * max(1.0, abs(s)):
            raise IntegrationError("step size underflow", s)
        K[0] = f0
        for i in range(1, 7):
            yi = y + direction * h * np.tensordot(A[i], K[:i], axes=(0, 0))
            K[i] = f(s + direction * C[i] * h, yi)
        nfev += 6
        y_new = y + direction * h * np.tensordot(B[:6], K[:6], axes=(0, 0))
        if not np.all(np.isfinite(y_new)):
            h *= 0.25
            rejected = True
            if h < 1e-14 * max(1.0, abs(s)):
                raise IntegrationError("non-finite state", s)
            continue
        err_vec = direction * h * np.tensordot(E, K, axes=(0, 0))
        err = _norm(err_vec, y, y_new, rtol, atol)
        if err <= 1.0:
            fac = SAFETY * max(err, 1e-10) ** (-ALPHA) * err_old ** BETA
            fac = min(FAC_MAX, max(FAC_MIN, fac))
            if rejected:
                fac = min(1.0, fac)
            if dense:
                ks.append(direction * K.copy())
            s = s0 + direction * min(span, abs(s + direction * h - s0))
            if abs(s1 - s) <= 1e-15 * max(1.0, abs(s1)):
                s = s1
            y = y_new
            f0 = K[6].copy()
            ss.append(s)
            ys.append(y.copy())
            err_old = max(err, 1e-4)
            rejected = False
            h *= fac
        else:
            h *= max(FAC_MIN, SAFETY * err ** (-ALPHA))
            rejected = True
    else:
        raise IntegrationError("too many steps", s)
    if not dense:
        ss, ys = [ss[0], ss[-1]], [ys[0], ys[-1]]
    return Solution(np.array(ss), np.array(ys), ks, nfev)
