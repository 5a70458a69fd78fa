"""Hamiltonian flows on the cotangent bundle and the exponential maps.

Flows are integrated on the normalised interval ``s in [0, 1]`` with the
vector field multiplied by the physical time ``T``; a negative ``T`` gives
the backward flow by reversing the field.  Batched entry points take arrays
of shape ``(B, n)`` and let every row carry its own ``T``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .integrate import IntegrationError, dopri5
from .models import CotangentPoint, ModelSpec, _as_point

DEFAULT_TOL = 1e-10
#: H below ``DEGENERACY * |xi|^2`` is outside the elliptic cone
DEGENERACY = 1e-12


class FlowError(RuntimeError):
    """Integration failed (blow-up or non-finite state)."""

    def __init__(self, message: str, time: float = float("nan")):
        super().__init__(message)
        self.time = time


class DegenerateCovectorError(ValueError):
    """``H(x, xi)`` vanishes to working precision, so ``A = sqrt(H)`` is singular."""


@dataclass(frozen=True)
class FlowTrajectory:
    times: np.ndarray      # (K,)
    states: list           # K CotangentPoints
    energy: np.ndarray     # (K,)
    tol: float

    def array(self) -> np.ndarray:
        """States stacked as ``(K, 2n)`` rows ``(x, xi)``."""
        return np.array([p.as_array() for p in self.states])

    @property
    def energy_drift(self) -> float:
        e0 = self.energy[0]
        return float(np.max(np.abs(self.energy - e0)))

    def check_energy(self) -> bool:
        return self.energy_drift <= 100 * self.tol * (1 + abs(self.energy[0]))


def _hamilton_rhs(model: ModelSpec, T: np.ndarray):
    n = model.n
    T = np.asarray(T, dtype=float)[:, None]

    def rhs(s, z):
        dx, dxi = model.grad_H(z[:, :n], z[:, n:])
        return T * np.concatenate([dxi, -dx], axis=1)

    return rhs


def _run(rhs, z0, tol, dense=False):
    try:
        return dopri5(rhs, 0.0, 1.0, z0, rtol=tol, atol=tol, dense=dense)
    except IntegrationError as exc:
        raise FlowError(str(exc), exc.time) from None


def flow_batch(model: ModelSpec, x, xi, T, tol: float = DEFAULT_TOL) -> tuple[np.ndarray, np.ndarray]:
    """Endpoints of ``Phi_H^{T_b}(x_b, xi_b)`` for a batch; returns ``(x, xi)``."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    T = np.broadcast_to(np.asarray(T, dtype=float), (x.shape[0],))
    sol = _run(_hamilton_rhs(model, T), np.concatenate([x, xi], axis=1), tol)
    z = sol.y[-1]
    n = model.n
    return z[:, :n], z[:, n:]


def hamilton_flow(model: ModelSpec, p0, t_final: float, tol: float = DEFAULT_TOL,
                  samples: int = 65) -> FlowTrajectory:
    """Integrate ``x' = dH/dxi, xi' = -dH/dx`` from ``p0`` up to ``t_final``.

    The returned trajectory holds ``samples`` uniformly spaced dense-output
    states (including both end points).
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    p0 = _as_point(p0)
    if p0.n != model.n:
        raise ValueError(f"point has dimension {p0.n}, model {model.name} has {model.n}")
    samples = max(int(samples), 64)
    sol = _run(_hamilton_rhs(model, np.array([t_final])), p0.as_array()[None, :], tol, dense=True)
    s_eval = np.linspace(0.0, 1.0, samples)
    if t_final == 0.0:
        z = np.repeat(p0.as_array()[None, :], samples, axis=0)
    else:
        z = sol(s_eval)[:, 0, :]
        z[-1] = sol.y[-1, 0]
    if not np.all(np.isfinite(z)):
        raise FlowError("non-finite state in trajectory")
    n = model.n
    states = [CotangentPoint(row[:n], row[n:]) for row in z]
    energy = model.H(z[:, :n], z[:, n:])
    return FlowTrajectory(times=s_eval * t_final, states=states, energy=energy, tol=tol)


def exp_H(model: ModelSpec, x, xi, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Base point of the time-1 Hamiltonian flow from ``(x, xi)``."""
    xe, _ = flow_batch(model, np.asarray(x, float)[None], np.asarray(xi, float)[None], 1.0, tol)
    return xe[0]


def a_time(model: ModelSpec, y, xi, t) -> np.ndarray:
    """Rescaled ``H``-flow time ``t / (2 sqrt(H(y, xi)))`` for a batch.

    Raises :class:`DegenerateCovectorError` if some covector is outside the
    elliptic cone.
    """
    y = np.atleast_2d(np.asarray(y, dtype=float))
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    Hv = model.H(y, xi)
    bad = Hv <= DEGENERACY * np.sum(xi * xi, axis=-1)
    if np.any(bad):
        raise DegenerateCovectorError(
            f"H(y, xi) = {Hv[bad][0]:.3g} is degenerate for xi = {xi[bad][0]}")
    return np.asarray(t, dtype=float) / (2.0 * np.sqrt(Hv))


def exp_A_batch(model: ModelSpec, y, xi, t, tol: float = DEFAULT_TOL, return_covector=False):
    """``Exp_A^{y,t}(xi)`` for a batch of ``(y, xi, t)``."""
    y = np.atleast_2d(np.asarray(y, dtype=float))
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    T = np.broadcast_to(a_time(model, y, xi, t), (y.shape[0],))
    xe, xie = flow_batch(model, y, xi, T, tol)
    return (xe, xie) if return_covector else xe


def exp_A(model: ModelSpec, y, xi, t: float, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Base point of the unit-speed (A = sqrt(H)) flow at time ``t`` from ``(y, xi)``."""
    return exp_A_batch(model, np.asarray(y, float)[None], np.asarray(xi, float)[None], t, tol)[0]
