"""Phase functions for the half-wave equation built by characteristics.

For a covector ``xi`` held fixed in coordinates, ``rho_t(x)`` moves ``x``
backwards along the unit-speed flow of ``A = sqrt(H)``; ``sigma_t`` is its
inverse and the phase is ``w(t, x, xi) = xi . sigma_t(x)``.  It solves
``dw/dt = A(x, dw/dx)`` with ``w(0, x, xi) = x . xi``.

Derivatives of ``w`` are taken by central differences with Richardson
extrapolation.  All stencil points of a request are solved in one batched
Newton iteration so they share integrator steps, which keeps the
differences smooth.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .flow import DEFAULT_TOL, DegenerateCovectorError, a_time, exp_A, exp_A_batch, flow_batch
from .models import RANK_THRESHOLD, InvariantViolation, ModelSpec
from .varjac import RankReport, dexp_A_fd, numerical_rank

NEWTON_TOL = 1e-12
MAX_NEWTON = 30
#: Newton iterates with ``H(y, xi) < CONE_FLOOR |xi|^2`` have left the elliptic cone
CONE_FLOOR = 1e-4
FD_STEP = 1e-5
HESS_STEP = 1e-2


class NewtonError(RuntimeError):
    """Newton iteration for ``sigma`` failed: the point left the existence regime."""


# ---------------------------------------------------------------------------
# rho and sigma
# ---------------------------------------------------------------------------

def rho_batch(model: ModelSpec, xi, t, x, tol: float = DEFAULT_TOL) -> np.ndarray:
    return exp_A_batch(model, x, xi, -np.asarray(t, dtype=float), tol)


def rho(model: ModelSpec, xi, t: float, x, tol: float = DEFAULT_TOL) -> np.ndarray:
    """``rho_t(x)``: base point of the A-flow at time ``-t`` from ``(x, xi)``."""
    return exp_A(model, x, xi, -t, tol)


def _in_cone(model, y, xi, floor):
    Hv = model.H(y, xi)
    bad = Hv < floor * np.sum(xi * xi, axis=-1)
    if np.any(bad):
        k = int(np.argmax(bad))
        raise NewtonError(f"Newton iterate y = {y[k]} left the elliptic cone "
                          f"(H = {Hv[k]:.3g} for xi = {xi[k]})")


def sigma_batch(model: ModelSpec, xi, t, x, newton_tol: float = NEWTON_TOL,
                max_iter: int = MAX_NEWTON, tol: float = DEFAULT_TOL,
                cone_floor: float = CONE_FLOOR) -> np.ndarray:
    """Solve ``rho_t(y) = x`` for ``y``, row by row.

    Rows with ``t = 0`` return ``x``.  Raises :class:`NewtonError` if any row
    fails to converge or an iterate leaves the elliptic cone
    ``H(y, xi) >= cone_floor |xi|^2``.
    """
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    x = np.atleast_2d(np.asarray(x, dtype=float))
    nb, n = x.shape
    t = np.broadcast_to(np.asarray(t, dtype=float), (nb,)).copy()
    if np.any(np.abs(t) > model.t_max):
        raise NewtonError(f"|t| = {np.abs(t).max():.3g} exceeds t_max = {model.t_max} for {model.name}")
    _in_cone(model, x, xi, cone_floor)
    try:
        y = exp_A_batch(model, x, xi, t, tol)
    except DegenerateCovectorError as exc:
        raise NewtonError(f"degenerate covector at the initial guess: {exc}") from None
    eye = np.eye(n)
    done_streak = 0
    for it in range(max_iter):
        _in_cone(model, y, xi, cone_floor)
        hy = 1e-7 * (1.0 + np.linalg.norm(y, axis=1))
        pts = np.concatenate([y[:, None, :],
                              y[:, None, :] + hy[:, None, None] * eye[None],
                              y[:, None, :] - hy[:, None, None] * eye[None]], axis=1)
        P = pts.shape[1]
        try:
            T = a_time(model, pts.reshape(-1, n), np.repeat(xi, P, axis=0), -np.repeat(t, P))
        except DegenerateCovectorError as exc:
            raise NewtonError(f"Newton iterate left the elliptic cone: {exc}") from None
        img, _ = flow_batch(model, pts.reshape(-1, n), np.repeat(xi, P, axis=0), T, tol)
        img = img.reshape(nb, P, n)
        res = img[:, 0] - x
        J = (img[:, 1:1 + n] - img[:, 1 + n:]).transpose(0, 2, 1) / (2 * hy[:, None, None])
        err = np.linalg.norm(res, axis=1)
        if not np.all(np.isfinite(err)):
            raise NewtonError("non-finite residual in Newton iteration")
        if np.all(err <= newton_tol):
            done_streak += 1
            # one extra polishing step after convergence
            if done_streak > 1:
                return y
        try:
            step = np.linalg.solve(J, res[..., None])[..., 0]
        except np.linalg.LinAlgError:
            raise NewtonError("singular Jacobian of rho_t") from None
        y = y - step
    raise NewtonError(f"no convergence in {max_iter} iterations, residual {err.max():.3g}")


def sigma(model: ModelSpec, xi, t: float, x, newton_tol: float = NEWTON_TOL,
          max_iter: int = MAX_NEWTON, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Inverse of ``rho_t`` with the covector ``xi`` held fixed."""
    return sigma_batch(model, np.asarray(xi, float)[None], [t], np.asarray(x, float)[None],
                       newton_tol, max_iter, tol)[0]


def w_batch(model: ModelSpec, t, x, xi, tol: float = DEFAULT_TOL, newton_tol=NEWTON_TOL):
    """Phase values and ``sigma`` points for a batch of ``(t, x, xi)``."""
    y = sigma_batch(model, xi, t, x, newton_tol=newton_tol, tol=tol)
    return np.sum(np.atleast_2d(xi) * y, axis=1), y


# ---------------------------------------------------------------------------
# finite-difference stencils
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PhaseSample:
    t: float
    x: np.ndarray
    xi: np.ndarray
    w: float
    dt_w: float
    dx_w: np.ndarray
    dxi_w: np.ndarray
    dxi2_w: Optional[np.ndarray]
    sigma_point: np.ndarray
    converged: bool = True
    dt2_w: Optional[float] = None
    dtxi_w: Optional[np.ndarray] = None
    dx2_w: Optional[np.ndarray] = None

    def as_row(self) -> dict:
        row = {"t": self.t, "w": self.w, "dt_w": self.dt_w}
        for name in ("x", "xi", "dx_w", "dxi_w", "sigma_point"):
            for k, v in enumerate(getattr(self, name)):
                row[f"{name}_{k + 1}"] = float(v)
        if self.dxi2_w is not None:
            sv = np.linalg.svd(self.dxi2_w, compute_uv=False)
            for k, v in enumerate(sv):
                row[f"hess_sv_{k + 1}"] = float(v)
        return row


class _Stencil:
    """Collects evaluation points of a scalar function of ``z = (t, x, xi)``."""

    def __init__(self, z0):
        self.z0 = np.asarray(z0, dtype=float)
        self.points = [self.z0.copy()]
        self.index: dict = {}

    def add(self, key, offsets):
        z = self.z0.copy()
        for i, d in offsets:
            z[i] += d
        self.index[key] = len(self.points)
        self.points.append(z)

    def build(self, grad_steps, hess_vars, hess_steps):
        for i, h in grad_steps.items():
            for lvl in (1, 2):
                hh = h / lvl
                self.add(("g", i, lvl, 1), [(i, hh)])
                self.add(("g", i, lvl, -1), [(i, -hh)])
        for lvl in (1, 2):
            for a, i in enumerate(hess_vars):
                hi = hess_steps[i] / lvl
                self.add(("h", i, i, lvl, 1, 1), [(i, hi)])
                self.add(("h", i, i, lvl, -1, -1), [(i, -hi)])
                for j in hess_vars[a + 1:]:
                    hj = hess_steps[j] / lvl
                    for si in (1, -1):
                        for sj in (1, -1):
                            self.add(("h", i, j, lvl, si, sj), [(i, si * hi), (j, sj * hj)])

    def gradient(self, f, grad_steps):
        out = {}
        for i, h in grad_steps.items():
            d = []
            for lvl in (1, 2):
                fp = f[self.index[("g", i, lvl, 1)]]
                fm = f[self.index[("g", i, lvl, -1)]]
                d.append((fp - fm) / (2 * h / lvl))
            out[i] = (4 * d[1] - d[0]) / 3
        return out

    def hessian(self, f, hess_vars, hess_steps):
        k = len(hess_vars)
        levels = []
        f0 = f[0]
        for lvl in (1, 2):
            Hm = np.empty((k, k))
            for a, i in enumerate(hess_vars):
                hi = hess_steps[i] / lvl
                Hm[a, a] = (f[self.index[("h", i, i, lvl, 1, 1)]] - 2 * f0
                            + f[self.index[("h", i, i, lvl, -1, -1)]]) / hi ** 2
                for b in range(a + 1, k):
                    j = hess_vars[b]
                    hj = hess_steps[j] / lvl
                    v = (f[self.index[("h", i, j, lvl, 1, 1)]] - f[self.index[("h", i, j, lvl, 1, -1)]]
                         - f[self.index[("h", i, j, lvl, -1, 1)]] + f[self.index[("h", i, j, lvl, -1, -1)]])
                    Hm[a, b] = Hm[b, a] = v / (4 * hi * hj)
            levels.append(Hm)
        Hm = (4 * levels[1] - levels[0]) / 3
        return 0.5 * (Hm + Hm.T)


def phase_samples(model: ModelSpec, ts, xs, xis, *, xi_hessian: bool = True,
                  t_hessian: bool = False, x_hessian: bool = False, gradient: bool = True,
                  tol: float = DEFAULT_TOL, newton_tol: float = NEWTON_TOL,
                  fd_step: float = FD_STEP, hess_step: float = HESS_STEP) -> list[PhaseSample]:
    """Evaluate :class:`PhaseSample` objects for a batch of ``(t, x, xi)``.

    ``t_hessian`` adds the ``(t, xi)`` second derivatives; ``x_hessian`` the
    spatial Hessian.  Everything is solved in one batched Newton run.
    """
    ts = np.atleast_1d(np.asarray(ts, dtype=float))
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    xis = np.atleast_2d(np.asarray(xis, dtype=float))
    nb, n = xs.shape
    stencils = []
    meta = []
    for b in range(nb):
        z0 = np.concatenate([[ts[b]], xs[b], xis[b]])
        nxi = np.linalg.norm(xis[b])
        grad_steps = {}
        if gradient:
            grad_steps[0] = fd_step * (1.0 + abs(ts[b]))
            for i in range(n):
                grad_steps[1 + i] = fd_step * (1.0 + np.linalg.norm(xs[b]))
                grad_steps[1 + n + i] = fd_step * nxi
        hess_vars: list[int] = []
        hess_steps = {}
        if xi_hessian or t_hessian:
            if t_hessian:
                hess_vars.append(0)
                hess_steps[0] = hess_step * (1.0 + abs(ts[b]))
            hess_vars.extend(range(1 + n, 1 + 2 * n))
            for i in range(1 + n, 1 + 2 * n):
                hess_steps[i] = hess_step * nxi
        x_vars = list(range(1, 1 + n)) if x_hessian else []
        x_steps = {i: hess_step * 0.1 * (1.0 + np.linalg.norm(xs[b])) for i in x_vars}
        st = _Stencil(z0)
        st.build(grad_steps, hess_vars, hess_steps)
        st_x = None
        if x_vars:
            st_x = _Stencil(z0)
            st_x.build({}, x_vars, x_steps)
        stencils.append((st, st_x))
        meta.append((grad_steps, hess_vars, hess_steps, x_vars, x_steps))

    all_pts = []
    slices = []
    for st, st_x in stencils:
        start = len(all_pts)
        all_pts.extend(st.points)
        mid = len(all_pts)
        if st_x is not None:
            all_pts.extend(st_x.points)
        slices.append((start, mid, len(all_pts)))
    Z = np.array(all_pts)
    wv, yv = w_batch(model, Z[:, 0], Z[:, 1:1 + n], Z[:, 1 + n:], tol=tol, newton_tol=newton_tol)

    out = []
    for b, ((st, st_x), (grad_steps, hess_vars, hess_steps, x_vars, x_steps), (s0, s1, s2)) in \
            enumerate(zip(stencils, meta, slices)):
        f = wv[s0:s1]
        g = st.gradient(f, grad_steps) if gradient else {}
        dt_w = float(g.get(0, np.nan))
        dx_w = np.array([g.get(1 + i, np.nan) for i in range(n)])
        dxi_w = np.array([g.get(1 + n + i, np.nan) for i in range(n)])
        dxi2 = dt2 = dtxi = dx2 = None
        if hess_vars:
            Hm = st.hessian(f, hess_vars, hess_steps)
            if t_hessian:
                dt2 = float(Hm[0, 0])
                dtxi = Hm[0, 1:].copy()
                dxi2 = Hm[1:, 1:].copy()
            else:
                dxi2 = Hm
            if not xi_hessian:
                dxi2 = None if not t_hessian else dxi2
        if st_x is not None:
            dx2 = st_x.hessian(wv[s1:s2], x_vars, x_steps)
        out.append(PhaseSample(t=float(ts[b]), x=xs[b].copy(), xi=xis[b].copy(), w=float(f[0]),
                               dt_w=dt_w, dx_w=dx_w, dxi_w=dxi_w, dxi2_w=dxi2,
                               sigma_point=yv[s0].copy(), converged=True, dt2_w=dt2,
                               dtxi_w=dtxi, dx2_w=dx2))
    return out


def phase_w(model: ModelSpec, t: float, x, xi, tol: float = DEFAULT_TOL, **kwargs) -> PhaseSample:
    """Phase ``w = xi . sigma_t(x)`` with its first derivatives and ``xi``-Hessian."""
    return phase_samples(model, [t], np.asarray(x, float)[None], np.asarray(xi, float)[None],
                         tol=tol, **kwargs)[0]


# ---------------------------------------------------------------------------
# eikonal identities
# ---------------------------------------------------------------------------

def A_value(model: ModelSpec, x, xi) -> np.ndarray:
    return np.sqrt(model.H(x, xi))


def eikonal_residual(model: ModelSpec, t: float, x, xi, tol: float = DEFAULT_TOL) -> float:
    """``|dw/dt - A(x, dw/dx)|`` at one point."""
    return float(eikonal_residuals(model, [t], [x], [xi], tol)[0])


def eikonal_residuals(model: ModelSpec, ts, xs, xis, tol: float = DEFAULT_TOL) -> np.ndarray:
    samples = phase_samples(model, ts, xs, xis, xi_hessian=False, tol=tol)
    res = []
    for s in samples:
        Hp = float(model.H(s.x, s.dx_w))
        if Hp <= 1e-12 * float(s.dx_w @ s.dx_w):
            raise DegenerateCovectorError(f"dx_w = {s.dx_w} is outside the elliptic cone")
        res.append(abs(s.dt_w - np.sqrt(Hp)))
    return np.array(res)


def forward_point(model: ModelSpec, t: float, y, xi, tol: float = DEFAULT_TOL) -> np.ndarray:
    """The ``x`` for which ``(t, x, y, xi)`` is critical: ``x = Exp_A^{y,-t}(xi)``."""
    return exp_A(model, y, xi, -t, tol)


@dataclass(frozen=True)
class CriticalCheck:
    lhs: float          # |dxi_w - y|
    rhs: float          # |x - Exp_A^{y,-t}(xi)|
    dt_at_crit: float   # dw/dt at (t, x, xi)
    sqrt_H: float       # sqrt(H(y, xi))

    @property
    def dt_error(self) -> float:
        return abs(self.dt_at_crit - self.sqrt_H)


def critical_check(model: ModelSpec, t: float, x, y, xi, tol: float = DEFAULT_TOL,
                   check: bool = False) -> CriticalCheck:
    """Both sides of ``dxi_w(t, x, xi) = y  <=>  x = Exp_A^{y,-t}(xi)``.

    With ``check`` and a forward-constructed ``x``, the identities are
    enforced at ``1e-5`` and :class:`InvariantViolation` raised otherwise.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    xi = np.asarray(xi, dtype=float)
    ps = phase_w(model, t, x, xi, tol, xi_hessian=False)
    lhs = float(np.linalg.norm(ps.dxi_w - y))
    rhs = float(np.linalg.norm(x - forward_point(model, t, y, xi, tol)))
    sh = float(np.sqrt(model.H(y, xi)))
    out = CriticalCheck(lhs, rhs, ps.dt_w, sh)
    if check:
        if lhs > 1e-5 * (1 + np.linalg.norm(y)):
            raise InvariantViolation(f"|dxi_w - y| = {lhs:.3g} at a forward-constructed point")
        if out.dt_error > 1e-5 * (1 + sh):
            raise InvariantViolation(f"|dt_w - sqrt(H)| = {out.dt_error:.3g}")
    return out


def hessian_rank_at_critical(model: ModelSpec, t: float, x, y, xi, tol: float = DEFAULT_TOL,
                             threshold: float = RANK_THRESHOLD,
                             check: bool = True) -> tuple[RankReport, RankReport]:
    """Ranks of ``d^2 w / dxi^2`` at ``(t, x, xi)`` and of ``D Exp_A^{y,-t}`` at ``xi``."""
    ps = phase_w(model, t, x, xi, tol)
    hess = numerical_rank(ps.dxi2_w, threshold)
    dexp = numerical_rank(dexp_A_fd(model, y, xi, -t, tol), threshold)
    if check and hess.numerical_rank != dexp.numerical_rank:
        raise InvariantViolation(
            f"rank of the phase Hessian {hess.numerical_rank} differs from rank D Exp_A "
            f"{dexp.numerical_rank}")
    return hess, dexp


# ---------------------------------------------------------------------------
# leading transport amplitude
# ---------------------------------------------------------------------------

def _A_xi_hessian(model: ModelSpec, x, p, rel_step=1e-4):
    # central second differences of A(x, .) at p, batched over rows
    x = np.atleast_2d(x)
    p = np.atleast_2d(p)
    nb, n = p.shape
    h = rel_step * np.linalg.norm(p, axis=1)
    eye = np.eye(n)
    out = np.empty((nb, n, n))
    a0 = A_value(model, x, p)
    for i in range(n):
        hi = h[:, None] * eye[i]
        out[:, i, i] = (A_value(model, x, p + hi) - 2 * a0 + A_value(model, x, p - hi)) / h ** 2
        for j in range(i + 1, n):
            hj = h[:, None] * eye[j]
            v = (A_value(model, x, p + hi + hj) - A_value(model, x, p + hi - hj)
                 - A_value(model, x, p - hi + hj) + A_value(model, x, p - hi - hj)) / (4 * h ** 2)
            out[:, i, j] = out[:, j, i] = v
    return out


def _A_xi_gradient(model: ModelSpec, x, p, rel_step=1e-6):
    x = np.atleast_2d(x)
    p = np.atleast_2d(p)
    nb, n = p.shape
    h = rel_step * np.linalg.norm(p, axis=1)
    eye = np.eye(n)
    return np.stack([(A_value(model, x, p + h[:, None] * e) - A_value(model, x, p - h[:, None] * e))
                     / (2 * h) for e in eye], axis=1)


@dataclass(frozen=True)
class TransportResult:
    q0: complex
    s: np.ndarray            # node times 0..t
    path: np.ndarray         # characteristic gamma(s)
    F: np.ndarray            # zeroth-order coefficient at nodes and midpoints
    W: np.ndarray            # transport field at nodes


def _lagrangian_tables(model, y, xi, s_all, tol, rel_step=1e-6):
    # The graph of dx_w(s, .) is the image of {(y', xi)} under the backward
    # A-flow, so d2x_w = N M^-1 with M, N the y-derivatives of base and fibre.
    n = y.shape[0]
    h = rel_step * (1.0 + np.linalg.norm(y))
    eye = np.eye(n)
    Y = np.concatenate([y[None], y + h * eye, y - h * eye])        # (2n+1, n)
    K = Y.shape[0]
    ys = np.tile(Y, (s_all.size, 1))
    xis = np.repeat(xi[None], ys.shape[0], axis=0)
    ss = np.repeat(s_all, K)
    X, P = exp_A_batch(model, ys, xis, -ss, tol, return_covector=True)
    X = X.reshape(s_all.size, K, n)
    P = P.reshape(s_all.size, K, n)
    M = (X[:, 1:1 + n] - X[:, 1 + n:]).transpose(0, 2, 1) / (2 * h)
    N = (P[:, 1:1 + n] - P[:, 1 + n:]).transpose(0, 2, 1) / (2 * h)
    d2 = np.linalg.solve(M.transpose(0, 2, 1), N.transpose(0, 2, 1)).transpose(0, 2, 1)
    return X[:, 0], P[:, 0], 0.5 * (d2 + d2.transpose(0, 2, 1))


def transport_q0(model: ModelSpec, t: float, x, xi, g0: complex = 1.0, tol: float = DEFAULT_TOL,
                 steps: int = 200, full: bool = False, method: str = "lagrangian"):
    """Leading amplitude ``q0(t, x, xi)`` from ``dq/dt + W q + F q = 0``, ``q(0) = g0``.

    ``W = -dA/dxi(x, dw/dx) . d/dx`` and ``F = -(1/2) tr(d2A/dxi2 . d2w/dx2)``
    (no subprincipal term).  The characteristic through ``(t, x)`` starts at
    ``sigma_t(x)``; RK4 runs with ``steps`` steps on tabulated coefficients.

    ``method="lagrangian"`` takes ``dw/dx`` and ``d2w/dx2`` from the
    y-derivatives of the backward flow; ``method="phase"`` differentiates
    ``w`` itself (much slower, used as a cross-check).
    """
    if steps < 200:
        raise ValueError("transport needs at least 200 RK4 steps")
    if method not in ("lagrangian", "phase"):
        raise ValueError(f"unknown transport method {method!r}")
    x = np.asarray(x, dtype=float)
    xi = np.asarray(xi, dtype=float)
    if g0 == 0 and not full:
        return 0j
    y = sigma(model, xi, t, x, tol=tol)
    s_all = np.linspace(0.0, t, 2 * steps + 1)   # nodes and midpoints
    if method == "lagrangian":
        path, dxw, dx2 = _lagrangian_tables(model, y, xi, s_all, tol)
    else:
        path = exp_A_batch(model, np.repeat(y[None], s_all.size, axis=0),
                           np.repeat(xi[None], s_all.size, axis=0), -s_all, tol)
        samples = phase_samples(model, s_all, path, np.repeat(xi[None], s_all.size, axis=0),
                                xi_hessian=False, x_hessian=True, tol=tol)
        dxw = np.array([s.dx_w for s in samples])
        dx2 = np.array([s.dx2_w for s in samples])
    hA = _A_xi_hessian(model, path, dxw)
    F = -0.5 * np.einsum("bij,bij->b", hA, dx2)
    W = -_A_xi_gradient(model, path, dxw)

    q = complex(g0)
    h = t / steps
    for k in range(steps):
        f0, fm, f1 = F[2 * k], F[2 * k + 1], F[2 * k + 2]
        k1 = -f0 * q
        k2 = -fm * (q + 0.5 * h * k1)
        k3 = -fm * (q + 0.5 * h * k2)
        k4 = -f1 * (q + h * k3)
        q = q + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    if full:
        return TransportResult(q0=q, s=s_all[::2], path=path[::2], F=F, W=W[::2])
    return q


# ---------------------------------------------------------------------------
# sampling inside the regime
# ---------------------------------------------------------------------------

def sample_regime(model: ModelSpec, rng: np.random.Generator, count: int, t_max: float = 0.8,
                  x_radius: float = 0.5, min_H: float = 0.25,
                  base: Optional[Sequence[float]] = None):
    """Random ``(t, x, xi)`` with ``|xi| = 1`` and ``H(x, xi) >= min_H``."""
    n = model.n
    base = np.zeros(n) if base is None else np.asarray(base, dtype=float)
    ts, xs, xis = [], [], []
    while len(ts) < count:
        x = base + rng.uniform(-x_radius, x_radius, n)
        xi = rng.normal(size=n)
        xi /= np.linalg.norm(xi)
        if model.H(x, xi) < min_H:
            continue
        ts.append(rng.uniform(-t_max, t_max))
        xs.append(x)
        xis.append(xi)
    return np.array(ts), np.array(xs), np.array(xis)
