"""Independent closed-form references used by the test-suite."""
from __future__ import annotations

import numpy as np
from scipy.optimize import brentq


def heisenberg_exp(xi, t: float = 1.0) -> np.ndarray:
    """Base point at time ``t`` of the flow of ``H = h1^2 + h2^2`` from the origin.

    ``h = h1 + i h2`` rotates at frequency ``omega = 2 xi_3``; the planar
    projection is ``int 2h`` and the vertical part is the swept area.
    """
    xi = np.asarray(xi, dtype=float)
    h0 = complex(xi[0], xi[1])
    om = 2.0 * xi[2]
    if abs(om * t) < 1e-8:
        u = 2.0 * h0 * t
        return np.array([u.real, u.imag, 0.0])
    u = 2.0 * h0 * (np.exp(1j * om * t) - 1.0) / (1j * om)
    z = 2.0 * abs(h0) ** 2 / om * (t - np.sin(om * t) / om)
    return np.array([u.real, u.imag, z])


def heisenberg_dexp_det(xi, h: float = 1e-6) -> float:
    """``det D heisenberg_exp`` at ``xi`` by central differences of the closed form."""
    xi = np.asarray(xi, dtype=float)
    J = np.empty((3, 3))
    for k in range(3):
        e = np.zeros(3)
        e[k] = h
        J[:, k] = (heisenberg_exp(xi + e) - heisenberg_exp(xi - e)) / (2 * h)
    return float(np.linalg.det(J))


def heisenberg_first_conjugate(xi, s_max: float = 20.0, samples: int = 2000) -> float:
    """Smallest ``s > 0`` where the closed-form ``det D Exp`` changes sign along ``s xi``."""
    xi = np.asarray(xi, dtype=float)
    f = lambda s: heisenberg_dexp_det(s * xi)
    s = np.linspace(1e-3, s_max, samples)
    d = np.array([f(v) for v in s])
    i = int(np.flatnonzero(np.sign(d[1:]) != np.sign(d[:-1]))[0])
    return brentq(f, s[i], s[i + 1], xtol=1e-12)


def heisenberg_conjugate_phase() -> float:
    """First positive root of ``2 - 2 cos(phi) - phi sin(phi)``; ``phi = 2 s xi_3``."""
    return brentq(lambda p: 2 - 2 * np.cos(p) - p * np.sin(p), 5.0, 7.0)


def plane_wave_phase(t, x, xi) -> np.ndarray:
    """Euclidean eikonal solution ``x.xi + t |xi|``."""
    xi = np.asarray(xi, dtype=float)
    return np.sum(np.asarray(x) * xi, axis=-1) + np.asarray(t) * np.linalg.norm(xi, axis=-1)
