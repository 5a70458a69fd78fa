"""Differentials of the exponential maps, numerical ranks and conjugate points."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .flow import DEFAULT_TOL, FlowError, _run, a_time, exp_A_batch
from .integrate import IntegrationError
from .models import RANK_THRESHOLD, InvariantViolation, ModelSpec


@dataclass(frozen=True)
class RankReport:
    matrix: np.ndarray
    singular_values: np.ndarray
    numerical_rank: int
    threshold: float

    def as_dict(self) -> dict:
        return {
            "shape": list(self.matrix.shape),
            "singular_values": [float(v) for v in self.singular_values],
            "numerical_rank": int(self.numerical_rank),
            "threshold": float(self.threshold),
        }


def numerical_rank(matrix, threshold: float = RANK_THRESHOLD) -> RankReport:
    """SVD rank: number of singular values above ``threshold * sigma_1``."""
    m = np.atleast_2d(np.asarray(matrix, dtype=float))
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix has non-finite entries")
    sv = np.linalg.svd(m, compute_uv=False) if m.size else np.zeros(0)
    if sv.size == 0 or sv[0] == 0.0:
        rank = 0
    else:
        rank = int(np.sum(sv > threshold * sv[0]))
    return RankReport(matrix=m, singular_values=sv, numerical_rank=rank, threshold=threshold)


# ---------------------------------------------------------------------------
# variational flow
# ---------------------------------------------------------------------------

def dexp_H_batch(model: ModelSpec, x, xi, T=1.0, tol: float = DEFAULT_TOL) -> np.ndarray:
    """``D_xi base(Phi_H^T)`` for a batch, shape ``(B, n, n)``.

    Integrates the linearised system ``dZ/dt = J Hess(H) Z`` seeded with
    ``dx = 0, dxi = e_k`` alongside the orbit.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    nb, n = x.shape
    T = np.broadcast_to(np.asarray(T, dtype=float), (nb,))[:, None, None]
    m = 2 * n

    def rhs(s, y):
        z = y[:, :m]
        Z = y[:, m:].reshape(nb, m, n)
        dx, dxi = model.grad_H(z[:, :n], z[:, n:])
        hs = model.hess_H(z[:, :n], z[:, n:])
        jh = np.concatenate([hs[:, n:, :], -hs[:, :n, :]], axis=1)
        dz = T[:, :, 0] * np.concatenate([dxi, -dx], axis=1)
        dZ = T * (jh @ Z)
        return np.concatenate([dz, dZ.reshape(nb, m * n)], axis=1)

    Z0 = np.zeros((nb, m, n))
    Z0[:, n:, :] = np.eye(n)
    y0 = np.concatenate([x, xi, Z0.reshape(nb, m * n)], axis=1)
    sol = _run(rhs, y0, tol)
    Z = sol.y[-1][:, m:].reshape(nb, m, n)
    return Z[:, :n, :]


def dexp_H(model: ModelSpec, x, xi, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Jacobian of ``xi -> Exp_H^x(xi)`` at ``xi`` (n x n)."""
    return dexp_H_batch(model, np.asarray(x, float)[None], np.asarray(xi, float)[None], 1.0, tol)[0]


def dexp_A_fd(model: ModelSpec, y, xi, t: float, tol: float = DEFAULT_TOL,
              rel_step: float = 1e-5) -> np.ndarray:
    """Central-difference Jacobian of ``xi -> Exp_A^{y,t}(xi)``."""
    y = np.asarray(y, dtype=float)
    xi = np.asarray(xi, dtype=float)
    n = y.shape[0]
    h = rel_step * np.linalg.norm(xi)
    eye = np.eye(n)
    xis = np.concatenate([xi + h * eye, xi - h * eye])
    ys = np.repeat(y[None], 2 * n, axis=0)
    pts = exp_A_batch(model, ys, xis, t, tol)
    return ((pts[:n] - pts[n:]) / (2 * h)).T


# ---------------------------------------------------------------------------
# conjugate points
# ---------------------------------------------------------------------------

@dataclass
class ConjugateScan:
    s: np.ndarray
    det: np.ndarray
    sigma_min: np.ndarray
    roots: list = field(default_factory=list)
    grazing: list = field(default_factory=list)
    min_abs_det: float = float("nan")

    def as_dict(self) -> dict:
        return {
            "roots": [float(r) for r in self.roots],
            "grazing": [float(g) for g in self.grazing],
            "min_abs_det": float(self.min_abs_det),
            "max_abs_det": float(np.max(np.abs(self.det))) if self.det.size else 0.0,
        }


def _dets(model, x, xi, svals, tol):
    svals = np.asarray(svals, dtype=float)
    xs = np.repeat(np.asarray(x, float)[None], svals.size, axis=0)
    xis = svals[:, None] * np.asarray(xi, float)[None]
    D = dexp_H_batch(model, xs, xis, 1.0, tol)
    return np.linalg.det(D), D


def conjugate_scan(model: ModelSpec, x, xi, s_min: float, s_max: float, samples: int = 400,
                   tol: float = DEFAULT_TOL, s_tol: float = 1e-6) -> ConjugateScan:
    """Locate sign changes of ``det D Exp_H^x`` along ``s -> s * xi``.

    Sign changes are bisected to ``s_tol``; interior near-zeros of ``|det|``
    without a sign change are listed as grazing.
    """
    if s_max <= s_min or samples < 2:
        raise ValueError("need s_min < s_max and at least two samples")
    s = np.linspace(s_min, s_max, samples)
    det, D = _dets(model, x, xi, s, tol)
    smin = np.linalg.svd(D, compute_uv=False)[:, -1]

    lo = []
    hi = []
    for i in range(samples - 1):
        if det[i] == 0.0:
            lo.append(s[i])
            hi.append(s[i])
        elif det[i] * det[i + 1] < 0:
            lo.append(s[i])
            hi.append(s[i + 1])
    lo = np.array(lo)
    hi = np.array(hi)
    if lo.size:
        dlo, _ = _dets(model, x, xi, lo, tol)
        while np.max(hi - lo) > s_tol:
            mid = 0.5 * (lo + hi)
            dm, _ = _dets(model, x, xi, mid, tol)
            left = np.sign(dm) == np.sign(dlo)
            lo = np.where(left, mid, lo)
            dlo = np.where(left, dm, dlo)
            hi = np.where(left, hi, mid)
    roots = sorted(float(r) for r in 0.5 * (lo + hi))

    absd = np.abs(det)
    typical = np.median(absd) if absd.size else 0.0
    grazing = []
    for i in range(1, samples - 1):
        if absd[i] <= absd[i - 1] and absd[i] <= absd[i + 1] and absd[i] < 1e-6 * typical:
            if det[i - 1] * det[i + 1] > 0:
                grazing.append(float(s[i]))
    return ConjugateScan(s=s, det=det, sigma_min=smin, roots=roots, grazing=grazing,
                         min_abs_det=float(np.min(absd)))


def re_witness(model: ModelSpec, x, xi, s_max: float = 1.0, gap: float = 0.05,
               samples: int = 400, tol: float = DEFAULT_TOL) -> dict:
    """Regularity of ``Exp_H^x`` along ``s xi`` for ``gap <= |s| <= s_max``."""
    neg = conjugate_scan(model, x, xi, -s_max, -gap, samples, tol)
    pos = conjugate_scan(model, x, xi, gap, s_max, samples, tol)
    absd = np.abs(np.concatenate([neg.det, pos.det]))
    return {
        "min_abs_det": float(absd.min()),
        "max_abs_det": float(absd.max()),
        "ratio": float(absd.min() / absd.max()),
        "sign_changes": neg.roots + pos.roots,
    }


# ---------------------------------------------------------------------------
# rank identities
# ---------------------------------------------------------------------------

def vertical_kernel_basis(model: ModelSpec, y, eta) -> np.ndarray:
    """Orthonormal basis (n x (n-1)) of ``ker D_2H`` at ``(y, eta)``.

    ``D_2H|_eta[beta] = 2 beta^T C(y) eta``, so the kernel is the orthogonal
    complement of ``C(y) eta``.
    """
    normal = model.cometric(np.asarray(y, float)) @ np.asarray(eta, float)
    nrm = np.linalg.norm(normal)
    if nrm == 0.0:
        raise InvariantViolation("vertical differential vanishes (H = 0)")
    normal = normal / nrm
    # complete to an orthonormal basis; the last n-1 left singular vectors span the complement
    u, _, _ = np.linalg.svd(normal[:, None], full_matrices=True)
    return u[:, 1:]


@dataclass(frozen=True)
class RankCheck:
    rank_full: RankReport
    rank_restricted: RankReport
    scale: float
    kernel_residual: float

    @property
    def agree(self) -> bool:
        return self.rank_full.numerical_rank == self.rank_restricted.numerical_rank

    def as_dict(self) -> dict:
        return {
            "rank_full": self.rank_full.as_dict(),
            "rank_restricted": self.rank_restricted.as_dict(),
            "scale": self.scale,
            "kernel_residual": self.kernel_residual,
            "agree": self.agree,
        }


def rank_reduction_check(model: ModelSpec, y, xi, t: float, tol: float = DEFAULT_TOL,
                         threshold: float = RANK_THRESHOLD, check: bool = True) -> RankCheck:
    """Compare ``rank D Exp_A^{y,t}|_xi`` with ``rank D Exp_H^y|_{lam xi}`` on ``ker D_2H``.

    ``lam = t / (2 sqrt(H(y, xi)))``.  With ``check`` a rank mismatch raises
    :class:`InvariantViolation`.
    """
    if t == 0:
        raise ValueError("t must be nonzero")
    y = np.asarray(y, dtype=float)
    xi = np.asarray(xi, dtype=float)
    lam = float(a_time(model, y, xi, t)[0])
    DA = dexp_A_fd(model, y, xi, t, tol)
    full = numerical_rank(DA, threshold)
    eta = lam * xi
    basis = vertical_kernel_basis(model, y, eta)
    DH = dexp_H_batch(model, y[None], eta[None], 1.0, tol)[0]
    restricted = numerical_rank(DH @ basis, threshold)
    resid = float(np.linalg.norm(DA @ xi) / (max(full.singular_values[0], 1e-300) * np.linalg.norm(xi)))
    out = RankCheck(full, restricted, lam, resid)
    if check and not out.agree:
        raise InvariantViolation(
            f"rank D Exp_A = {full.numerical_rank} but restricted rank D Exp_H = "
            f"{restricted.numerical_rank}")
    return out


__all__ = [
    "RankReport", "numerical_rank", "dexp_H", "dexp_H_batch", "dexp_A_fd", "ConjugateScan",
    "conjugate_scan", "re_witness", "vertical_kernel_basis", "RankCheck",
    "rank_reduction_check", "FlowError", "IntegrationError",
]
