"""Oscillatory integrals and the leading term of stationary phase."""
from __future__ import annotations

import functools
import threading
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import roots_legendre

from .eikonal import PhaseSample, phase_samples
from .flow import DEFAULT_TOL
from .models import RANK_THRESHOLD, InvariantViolation, ModelSpec

MAX_NEWTON = 50


class CriticalPointError(RuntimeError):
    """Newton for a critical point diverged or hit a singular Hessian."""


# ---------------------------------------------------------------------------
# quadrature
# ---------------------------------------------------------------------------

@functools.lru_cache(maxsize=32)
def _gauss_legendre(npts: int):
    return roots_legendre(npts)


def recommended_points(lam: float) -> int:
    return 16 * int(np.ceil(np.sqrt(abs(lam))))


def oscillatory_integral(phase: Callable, amplitude: Callable, lam: float, box: Sequence,
                         pts_per_dim: int | None = None, chunk: int = 1 << 20) -> complex:
    """Tensor Gauss-Legendre approximation of ``int_box exp(i lam f) b``.

    ``phase`` and ``amplitude`` take an array of shape ``(m, d)`` and return
    ``(m,)``.  ``box`` is a sequence of ``(lo, hi)`` pairs, one per dimension.
    Points are evaluated in slabs along the first axis to bound memory.
    """
    box = np.atleast_2d(np.asarray(box, dtype=float))
    npts = pts_per_dim or recommended_points(lam)
    nodes, weights = _gauss_legendre(npts)
    axes = []
    wts = []
    for lo, hi in box:
        half = 0.5 * (hi - lo)
        axes.append(lo + half * (nodes + 1.0))
        wts.append(half * weights)
    rest = [np.ravel(g) for g in np.meshgrid(*axes[1:], indexing="ij")] if len(axes) > 1 else []
    w_rest = np.ones(1)
    for extra in wts[1:]:
        w_rest = np.multiply.outer(w_rest, extra).ravel()
    per = max(1, chunk // w_rest.size)
    total = 0j
    for i0 in range(0, npts, per):
        a0 = axes[0][i0:i0 + per]
        first = np.repeat(a0, w_rest.size)
        pts = np.column_stack([first] + [np.tile(r, a0.size) for r in rest])
        w = np.multiply.outer(wts[0][i0:i0 + per], w_rest).ravel()
        b = np.asarray(amplitude(pts), dtype=complex)
        if not np.any(b):
            continue
        f = np.asarray(phase(pts), dtype=float)
        total += np.sum(w * b * np.exp(1j * lam * f))
    return complex(total)


def converged_integral(phase: Callable, amplitude: Callable, lam: float, box: Sequence,
                       rtol: float = 1e-10, start: int | None = None, max_pts: int = 8192):
    """Double ``pts_per_dim`` until successive results agree to ``rtol``.

    Returns ``(value, pts_per_dim, last_change)``.
    """
    npts = start or max(recommended_points(lam), 64)
    prev = oscillatory_integral(phase, amplitude, lam, box, npts)
    while True:
        nxt = 2 * npts
        if nxt > max_pts:
            return prev, npts, float("nan")
        cur = oscillatory_integral(phase, amplitude, lam, box, nxt)
        change = abs(cur - prev) / max(abs(cur), 1e-300)
        if change <= rtol:
            return cur, nxt, change
        prev, npts = cur, nxt


# ---------------------------------------------------------------------------
# critical points
# ---------------------------------------------------------------------------

def find_critical_point(grad: Callable, hess: Callable, guess, tol: float = 1e-12,
                        max_iter: int = MAX_NEWTON) -> np.ndarray:
    """Newton iteration for ``grad(z) = 0``."""
    z = np.atleast_1d(np.asarray(guess, dtype=float)).copy()
    for _ in range(max_iter):
        g = np.atleast_1d(np.asarray(grad(z), dtype=float))
        if not np.all(np.isfinite(g)):
            raise CriticalPointError("non-finite gradient")
        if np.linalg.norm(g) <= tol:
            return z
        Hm = np.atleast_2d(np.asarray(hess(z), dtype=float))
        try:
            step = np.linalg.solve(Hm, g)
        except np.linalg.LinAlgError:
            raise CriticalPointError("singular Hessian in Newton iteration") from None
        z = z - step
    raise CriticalPointError(f"no convergence in {max_iter} iterations (|grad| = {np.linalg.norm(g):.3g})")


@dataclass(frozen=True)
class CriticalPointData:
    location: np.ndarray
    phase_value: float
    hessian: np.ndarray
    signature: int
    det_abs: float

    def __post_init__(self):
        if not np.allclose(self.hessian, self.hessian.T, rtol=0, atol=1e-12 * (1 + np.abs(self.hessian).max())):
            raise ValueError("Hessian must be symmetric")
        if abs(self.signature) > self.hessian.shape[0]:
            raise ValueError("signature out of range")
        if not self.det_abs > 0:
            raise ValueError("critical point is degenerate")

    def as_dict(self) -> dict:
        return {
            "location": [float(v) for v in self.location],
            "phase_value": float(self.phase_value),
            "hessian": [[float(v) for v in row] for row in self.hessian],
            "signature": int(self.signature),
            "det_abs": float(self.det_abs),
        }


def signature(hessian, threshold: float = RANK_THRESHOLD) -> int:
    """Number of positive minus negative eigenvalues; zero eigenvalues are an error."""
    Hm = np.asarray(hessian, dtype=float)
    ev = np.linalg.eigvalsh(0.5 * (Hm + Hm.T))
    scale = np.abs(ev).max() if ev.size else 0.0
    if scale == 0.0 or np.any(np.abs(ev) <= threshold * scale):
        raise CriticalPointError(f"degenerate Hessian, eigenvalues {ev}")
    return int(np.sum(ev > 0) - np.sum(ev < 0))


def critical_point_data(location, phase_value: float, hessian) -> CriticalPointData:
    Hm = np.asarray(hessian, dtype=float)
    Hm = 0.5 * (Hm + Hm.T)
    sig = signature(Hm)
    return CriticalPointData(np.asarray(location, dtype=float), float(phase_value), Hm, sig,
                             float(abs(np.linalg.det(Hm))))


def stationary_phase_leading(cp: CriticalPointData, amplitude_at_cp: complex, lam: float,
                             d: int | None = None) -> complex:
    """``(2 pi / lam)^{d/2} |det|^{-1/2} e^{i pi sig / 4} e^{i lam f(c)} b(c)``."""
    d = cp.hessian.shape[0] if d is None else d
    return complex((2 * np.pi / lam) ** (d / 2) * cp.det_abs ** -0.5
                   * np.exp(1j * np.pi * cp.signature / 4)
                   * np.exp(1j * lam * cp.phase_value) * amplitude_at_cp)


# ---------------------------------------------------------------------------
# the mixed (t, xi) phase w(t, x, xi) - t^2 / 2
# ---------------------------------------------------------------------------

class PhaseOracle:
    """Memoised :class:`PhaseSample` evaluation at fixed ``x``.

    Keys are ``(t, xi)`` rounded to a ``1e-9`` grid; the cache is guarded by
    a lock so it can be shared between threads.
    """

    def __init__(self, model: ModelSpec, x, tol: float = DEFAULT_TOL, grid: float = 1e-9):
        self.model = model
        self.x = np.asarray(x, dtype=float)
        self.tol = tol
        self.grid = grid
        self._cache: dict = {}
        self._lock = threading.Lock()
        self.misses = 0

    def _key(self, t, xi):
        return tuple(int(round(v / self.grid)) for v in np.concatenate([[t], xi]))

    def __call__(self, t: float, xi) -> PhaseSample:
        xi = np.asarray(xi, dtype=float)
        key = self._key(t, xi)
        with self._lock:
            hit = self._cache.get(key)
        if hit is not None:
            return hit
        ps = phase_samples(self.model, [t], self.x[None], xi[None], t_hessian=True, tol=self.tol)[0]
        with self._lock:
            self._cache.setdefault(key, ps)
            self.misses += 1
        return ps


def _mixed_grad(ps: PhaseSample) -> np.ndarray:
    return np.concatenate([[ps.dt_w - ps.t], ps.dxi_w])


def _mixed_hess(ps: PhaseSample) -> np.ndarray:
    n = ps.xi.shape[0]
    Hm = np.empty((1 + n, 1 + n))
    Hm[0, 0] = ps.dt2_w - 1.0
    Hm[0, 1:] = Hm[1:, 0] = ps.dtxi_w
    Hm[1:, 1:] = ps.dxi2_w
    return 0.5 * (Hm + Hm.T)


@dataclass(frozen=True)
class MixedCritical:
    data: CriticalPointData
    restricted_det: float      # det of d2_xi w on the complement of xi
    factor_rhs: float          # (t/|xi|)^2 |restricted_det|
    factor_rel_error: float


def restricted_hessian(dxi2_w, xi) -> np.ndarray:
    """``d2_xi w`` in an orthonormal basis of the complement of ``xi``."""
    xi = np.asarray(xi, dtype=float)
    u, _, _ = np.linalg.svd((xi / np.linalg.norm(xi))[:, None], full_matrices=True)
    Q = u[:, 1:]
    return Q.T @ np.asarray(dxi2_w) @ Q


def mixed_phase_critical(model: ModelSpec, x, xi_guess, t_guess: float, tol: float = DEFAULT_TOL,
                         grad_tol: float = 1e-9, factor_tol: float = 1e-3,
                         oracle: PhaseOracle | None = None, check: bool = True) -> MixedCritical:
    """Critical point of ``f(t, xi) = w(t, x, xi) - t^2/2``: ``dt_w = t`` and ``dxi_w = 0``.

    Checks ``|det f''| = (t/|xi|)^2 |det d2_xi w restricted to xi-perp|`` to
    ``factor_tol`` relative and raises :class:`InvariantViolation` otherwise.
    """
    oracle = oracle or PhaseOracle(model, x, tol)
    n = model.n
    z0 = np.concatenate([[t_guess], np.asarray(xi_guess, dtype=float)])

    def grad(z):
        return _mixed_grad(oracle(z[0], z[1:]))

    def hess(z):
        return _mixed_hess(oracle(z[0], z[1:]))

    try:
        z = find_critical_point(grad, hess, z0, tol=grad_tol)
    except CriticalPointError:
        raise
    except Exception as exc:  # Newton inside sigma may fail far from the guess
        raise CriticalPointError(f"phase evaluation failed during Newton: {exc}") from None
    ps = oracle(z[0], z[1:])
    Hm = _mixed_hess(ps)
    data = critical_point_data(z, ps.w - 0.5 * ps.t ** 2, Hm)
    xi = z[1:]
    restricted = restricted_hessian(ps.dxi2_w, xi)
    rdet = float(np.linalg.det(restricted)) if n > 1 else 1.0
    if n > 1 and abs(rdet) <= RANK_THRESHOLD * np.abs(restricted).max() ** (n - 1):
        raise CriticalPointError("restricted Hessian is degenerate (conjugate point)")
    rhs = (z[0] / np.linalg.norm(xi)) ** 2 * abs(rdet)
    rel = abs(data.det_abs - rhs) / rhs
    if check and rel > factor_tol:
        raise InvariantViolation(f"determinant factorisation off by {rel:.3g} relative")
    return MixedCritical(data, rdet, rhs, rel)


# ---------------------------------------------------------------------------
# reference problems with closed-form phases
# ---------------------------------------------------------------------------

def gaussian_fresnel(lam: float, a: float = 8.0) -> complex:
    """``int exp(-i lam x^2 / 2) exp(-a x^2) dx`` in closed form."""
    return complex(np.sqrt(np.pi / (a + 0.5j * lam)))


@dataclass(frozen=True)
class StatPhaseProblem:
    name: str
    d: int
    phase: Callable
    amplitude: Callable
    box: np.ndarray
    critical: CriticalPointData
    amp_at_cp: complex


def _cubic_problem() -> StatPhaseProblem:
    def phase(p):
        s = p[:, 0]
        return -0.5 * s ** 2 + s ** 3 / 12.0

    def amp(p):
        return np.exp(-8.0 * p[:, 0] ** 2) * (1 + 0.5 * p[:, 0])

    cp = critical_point_data([0.0], 0.0, [[-1.0]])
    return StatPhaseProblem("cubic1d", 1, phase, amp, np.array([[-2.2, 2.2]]), cp, 1.0)


def _mixed_euclid_problem(x: float = 2.0) -> StatPhaseProblem:
    # f(t, s) = x s + t |s| - t^2/2, critical at (|x|, -x)
    tc, sc = abs(x), -x

    def phase(p):
        t, s = p[:, 0], p[:, 1]
        return x * s + t * np.abs(s) - 0.5 * t ** 2

    def amp(p):
        return np.exp(-6.0 * (p[:, 0] - tc) ** 2 - 9.5 * (p[:, 1] - sc) ** 2) * (1 + 0.3 * (p[:, 0] - tc) - 0.2 * (p[:, 1] - sc) ** 2)

    sgn = np.sign(sc)
    cp = critical_point_data([tc, sc], x * sc + tc * abs(sc) - 0.5 * tc ** 2,
                             [[-1.0, sgn], [sgn, 0.0]])
    # the amplitude is below 1e-16 outside the box, which stays clear of s = 0
    half = 2.5
    box = np.array([[tc - half, tc + half], [sc - 0.8 * half, sc + 0.8 * half]])
    return StatPhaseProblem("euclid-mixed", 2, phase, amp, box, cp, 1.0)


def _gauss_problem() -> StatPhaseProblem:
    def phase(p):
        return -0.5 * p[:, 0] ** 2

    def amp(p):
        return np.exp(-8.0 * p[:, 0] ** 2)

    cp = critical_point_data([0.0], 0.0, [[-1.0]])
    return StatPhaseProblem("gaussian1d", 1, phase, amp, np.array([[-2.2, 2.2]]), cp, 1.0)


PROBLEMS = {
    "gaussian1d": _gauss_problem,
    "cubic1d": _cubic_problem,
    "euclid-mixed": _mixed_euclid_problem,
}


def get_problem(name: str) -> StatPhaseProblem:
    try:
        return PROBLEMS[name]()
    except KeyError:
        raise ValueError(f"unknown stationary-phase problem {name!r}; choose from {sorted(PROBLEMS)}") from None


def loglog_slope(xs, ys) -> tuple[float, float]:
    """Least-squares slope of ``log y`` against ``log x`` and its R^2."""
    lx = np.log(np.asarray(xs, dtype=float))
    ly = np.log(np.asarray(ys, dtype=float))
    A = np.vstack([lx, np.ones_like(lx)]).T
    coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
    pred = A @ coef
    ss_res = float(np.sum((ly - pred) ** 2))
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(coef[0]), r2


def leading_term_errors(problem: StatPhaseProblem, lams, pts_per_dim: int | None = None):
    """Rows ``(lam, |quadrature|, |leading|, |quadrature - leading|)`` and the fitted slope."""
    rows = []
    for lam in lams:
        if pts_per_dim:
            q = oscillatory_integral(problem.phase, problem.amplitude, lam, problem.box, pts_per_dim)
        else:
            q, _, _ = converged_integral(problem.phase, problem.amplitude, lam, problem.box)
        lead = stationary_phase_leading(problem.critical, problem.amp_at_cp, lam, problem.d)
        rows.append((float(lam), abs(q), abs(lead), abs(q - lead)))
    slope, r2 = loglog_slope([r[0] for r in rows], [r[3] for r in rows])
    return rows, slope, r2
