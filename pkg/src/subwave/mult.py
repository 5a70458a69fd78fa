"""Spectral multipliers, scale-invariant Sobolev norms and operator-norm experiments."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.interpolate import CubicSpline

from .oscint import loglog_slope
from .parallel import pmap


class ResolutionError(RuntimeError):
    """A grid does not resolve the object it samples."""


# ---------------------------------------------------------------------------
# cutoffs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CutoffSpec:
    """``smooth-bump`` on ``(a, b)`` or an even ``gaussian-window`` at ``+-c`` of width ``w``."""

    kind: str
    params: tuple

    def __post_init__(self):
        if self.kind == "smooth-bump":
            a, b = self.params
            if not 0 <= a < b:
                raise ValueError("smooth-bump needs 0 <= a < b")
        elif self.kind == "gaussian-window":
            c, w = self.params
            if w <= 0:
                raise ValueError("gaussian-window needs w > 0")
        else:
            raise ValueError(f"unknown cutoff kind {self.kind!r}")

    @classmethod
    def bump(cls, a: float = 0.5, b: float = 1.5) -> "CutoffSpec":
        return cls("smooth-bump", (float(a), float(b)))

    @classmethod
    def window(cls, c: float = 1.0, w: float = 0.2) -> "CutoffSpec":
        return cls("gaussian-window", (float(c), float(w)))

    @classmethod
    def from_dict(cls, d: dict) -> "CutoffSpec":
        kind = d.get("kind", "smooth-bump")
        if kind == "smooth-bump":
            return cls.bump(d.get("a", 0.5), d.get("b", 1.5))
        if kind == "gaussian-window":
            return cls.window(d.get("c", 1.0), d.get("w", 0.2))
        raise ValueError(f"unknown cutoff kind {kind!r}")

    def as_dict(self) -> dict:
        keys = ("a", "b") if self.kind == "smooth-bump" else ("c", "w")
        return {"kind": self.kind, **dict(zip(keys, self.params))}

    def __call__(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        if self.kind == "smooth-bump":
            a, b = self.params
            u = (2 * s - a - b) / (b - a)
            out = np.zeros_like(s)
            inside = np.abs(u) < 1
            out[inside] = np.exp(1.0 - 1.0 / (1.0 - u[inside] ** 2))
            return out
        c, w = self.params
        return np.exp(-((s - c) / w) ** 2) + np.exp(-((s + c) / w) ** 2)

    @property
    def reach(self) -> float:
        """Beyond ``|s| > reach`` the cutoff is zero or below ``1e-15``."""
        if self.kind == "smooth-bump":
            return self.params[1]
        c, w = self.params
        return abs(c) + 6.0 * w

    def integral(self) -> float:
        if self.kind == "gaussian-window":
            return 2 * np.sqrt(np.pi) * self.params[1]
        a, b = self.params
        x, wts = np.polynomial.legendre.leggauss(200)
        s = a + 0.5 * (b - a) * (x + 1)
        return float(0.5 * (b - a) * np.sum(wts * self(s)))


# ---------------------------------------------------------------------------
# multiplier grids
# ---------------------------------------------------------------------------

@dataclass
class MultiplierGrid:
    s_grid: np.ndarray
    values: np.ndarray
    lam: float
    family: str
    chi: Optional[CutoffSpec] = None
    t: Optional[float] = None
    _spline: Optional[tuple] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.s_grid = np.asarray(self.s_grid, dtype=float)
        self.values = np.asarray(self.values, dtype=complex)
        if self.s_grid.shape != self.values.shape or self.s_grid.ndim != 1:
            raise ValueError("s_grid and values must be 1-d arrays of equal length")
        if not np.all(np.isfinite(self.values)):
            raise ResolutionError("multiplier has non-finite values")

    @property
    def S(self) -> float:
        return float(self.s_grid[-1])

    @property
    def max_abs(self) -> float:
        return float(np.abs(self.values).max()) if self.values.size else 0.0

    def even_defect(self) -> float:
        return float(np.abs(self.values - self.values[::-1]).max())

    def edge_ratio(self) -> float:
        mx = self.max_abs
        if mx == 0:
            return 0.0
        return float(max(abs(self.values[0]), abs(self.values[-1])) / mx)

    def check(self) -> None:
        """Evenness and decay at the grid edge."""
        mx = self.max_abs
        if mx == 0:
            return
        if self.even_defect() > 1e-10 * mx:
            raise ResolutionError("multiplier grid is not even")
        if self.edge_ratio() > 1e-6:
            raise ResolutionError(f"multiplier does not decay at |s| = {self.S:.4g} "
                                  f"(edge ratio {self.edge_ratio():.3g})")

    def effective_reach(self, rel: float = 1e-9) -> float:
        """Largest ``|s|`` where ``|m| > rel * max|m|``."""
        mx = self.max_abs
        if mx == 0:
            return 0.0
        idx = np.nonzero(np.abs(self.values) > rel * mx)[0]
        return float(np.abs(self.s_grid[idx]).max())

    def __call__(self, s, outside: str = "zero") -> np.ndarray:
        """Cubic interpolation of the real and imaginary parts."""
        s = np.asarray(s, dtype=float)
        if self._spline is None:
            self._spline = (CubicSpline(self.s_grid, self.values.real),
                            CubicSpline(self.s_grid, self.values.imag))
        lo, hi = self.s_grid[0], self.s_grid[-1]
        out_of = (s < lo) | (s > hi)
        if outside == "error" and np.any(out_of):
            raise ResolutionError(f"value {s[out_of].flat[0]:.4g} outside the multiplier grid "
                                  f"[{lo:.4g}, {hi:.4g}]")
        sc = np.clip(s, lo, hi)
        out = self._spline[0](sc) + 1j * self._spline[1](sc)
        if outside == "zero":
            out = np.where(out_of, 0.0, out)
        return out


def _sym_grid(S: float, ds: float) -> np.ndarray:
    K = int(np.ceil(S / ds))
    return ds * np.arange(-K, K + 1)


def schrodinger_multiplier(chi: CutoffSpec, lam: float, s_max: Optional[float] = None,
                           ds: float = 0.05) -> MultiplierGrid:
    """``m(s) = 2 |lam|^{1/2} int chi(t) exp(-i lam t^2/2) cos(s t) dt`` on a symmetric grid.

    The integral is a trapezoid sum over a uniform ``t`` grid (spectrally
    accurate for a smooth compactly supported integrand), evaluated for all
    ``s`` at once by FFT.
    """
    if lam == 0:
        raise ValueError("lambda must be nonzero")
    if chi.kind != "smooth-bump" or chi.params[0] <= 0:
        raise ValueError("the Schrodinger family needs a smooth bump supported in (0, inf)")
    a, b = chi.params
    lam_abs = abs(lam)
    # the transform of a C-infinity bump decays like exp(-c sqrt(s)); past
    # |lam| b + 500 it is below 1e-6 of its maximum
    S = s_max if s_max is not None else b * lam_abs + 500.0
    dt = 2 * np.pi / (2.5 * S + 2.5 * b * lam_abs)
    T = 2 * np.pi / ds
    N = int(2 ** np.ceil(np.log2(max(T / dt, 2 * b / dt))))
    dt = T / N
    ds = 2 * np.pi / (N * dt)
    tt = dt * np.arange(N)
    g = chi(tt) * np.exp(-0.5j * lam * tt ** 2)
    ghat = np.fft.ifft(g) * N * dt        # ghat[k] = sum g(t_j) exp(+i s_k t_j) dt
    K = int(np.ceil(S / ds))
    if 2 * K + 1 > N:
        raise ResolutionError("s-range exceeds the FFT period")
    k = np.arange(-K, K + 1)
    pos = ghat[k % N]
    neg = ghat[(-k) % N]
    vals = 2 * np.sqrt(lam_abs) * 0.5 * (pos + neg)
    vals = 0.5 * (vals + vals[::-1])
    m = MultiplierGrid(ds * k, vals, float(lam), "schrodinger", chi)
    return m


def schrodinger_value_quad(chi: CutoffSpec, lam: float, s: float) -> complex:
    """Single value of the Schrodinger multiplier by adaptive quadrature."""
    from scipy.integrate import quad

    a, b = chi.params
    lim = int(50 + abs(lam) * (b - a) + abs(s) * (b - a))

    def re(t):
        return chi(np.array([t]))[0] * np.cos(0.5 * lam * t * t) * np.cos(s * t)

    def im(t):
        return -chi(np.array([t]))[0] * np.sin(0.5 * lam * t * t) * np.cos(s * t)

    r, _ = quad(re, a, b, limit=lim, epsabs=1e-13, epsrel=1e-11)
    i, _ = quad(im, a, b, limit=lim, epsabs=1e-13, epsrel=1e-11)
    return 2 * np.sqrt(abs(lam)) * complex(r, i)


def wave_multiplier(chi: CutoffSpec, lam: float, t: float, s_max: Optional[float] = None,
                    ds: Optional[float] = None) -> MultiplierGrid:
    """``m(s) = chi(s / lam) cos(t s)``, evaluated pointwise."""
    if lam <= 0 or t < 0:
        raise ValueError("need lambda > 0 and t >= 0")
    S = s_max if s_max is not None else chi.reach * lam + 10.0
    if ds is None:
        ds = 0.05
        if t > 0:
            ds = min(ds, 2 * np.pi / t / 40)
        if chi.kind == "gaussian-window":
            ds = min(ds, chi.params[1] * lam / 20)
    s = _sym_grid(S, ds)
    vals = chi(s / lam) * np.cos(t * s)
    return MultiplierGrid(s, vals.astype(complex), float(lam), "wave", chi, t)


def grid_from_function(f: Callable, S: float, ds: float = 0.05, family: str = "custom") -> MultiplierGrid:
    s = _sym_grid(S, ds)
    return MultiplierGrid(s, np.asarray(f(s), dtype=complex), 1.0, family)


# ---------------------------------------------------------------------------
# scale-invariant local Sobolev norm
# ---------------------------------------------------------------------------

def default_norm_cutoff() -> CutoffSpec:
    return CutoffSpec.bump(0.5, 2.0)


def sobolev_sloc_norm(m: MultiplierGrid, alpha: float, rho: Optional[CutoffSpec] = None,
                      t_samples=None, npts: int = 4096, return_t: bool = False):
    """``sup_t || rho . m(t .) ||_{L^2_alpha}`` over a log grid of dilations ``t``.

    ``||g||^2 = int (1 + w^2)^alpha |g^(w)|^2 dw / 2 pi``, by DFT of ``g``
    resampled on ``npts`` points.
    """
    rho = rho or default_norm_cutoff()
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    if rho.kind != "smooth-bump" or rho.params[0] <= 0:
        raise ValueError("the norm cutoff must be a bump supported in (0, inf)")
    if m.max_abs == 0:
        return (0.0, float("nan")) if return_t else 0.0
    if t_samples is None:
        smax = float(np.abs(m.s_grid).max())
        t_samples = np.geomspace(smax * 1e-3, smax * 10, 64)
    a, b = rho.params
    pad = 0.05 * (b - a)
    u = np.linspace(a - pad, b + pad, npts, endpoint=False)
    du = u[1] - u[0]
    omega = 2 * np.pi * np.fft.fftfreq(npts, d=du)
    weight = (1 + omega ** 2) ** alpha
    dw = 2 * np.pi / (npts * du)
    r = rho(u)
    tail = np.abs(omega) > 0.875 * np.abs(omega).max()
    vals, unresolved = [], []
    for t in t_samples:
        g = r * m(t * u)
        if not np.any(g):
            vals.append(0.0)
            unresolved.append(False)
            continue
        amp = np.abs(np.fft.fft(g) * du)
        unresolved.append(bool(amp[tail].max() > 1e-6 * amp.max()))
        vals.append(float(np.sqrt(np.sum(weight * amp ** 2) * dw / (2 * np.pi))))
    vals = np.array(vals)
    k = int(np.argmax(vals))
    best, best_t = float(vals[k]), float(t_samples[k])
    # dilations sampling only the far tail of m may alias; that is harmless
    # unless their norm is comparable with the supremum
    for t, v, bad in zip(t_samples, vals, unresolved):
        if bad and v > 1e-3 * best:
            raise ResolutionError(f"dilation t={t:.4g} is not resolved on {npts} points")
    return (best, best_t) if return_t else best


# ---------------------------------------------------------------------------
# Euclidean operator norms
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OpNormResult:
    value: float
    coarse_value: float
    delta: float
    grid_pts: int
    half_width: float

    def as_dict(self) -> dict:
        return {"value": self.value, "coarse_value": self.coarse_value, "delta": self.delta,
                "grid_pts": self.grid_pts, "half_width": self.half_width}


def _kernel_l1(m: MultiplierGrid, n: int, L: float, N: int) -> float:
    freq = 2 * np.pi * np.fft.fftfreq(N, d=2 * L / N)
    if n == 1:
        M = m(np.abs(freq))
        return float(np.sum(np.abs(np.fft.ifft(M))))
    r = np.hypot(freq[:, None], freq[None, :])
    M = m(r)
    return float(np.sum(np.abs(np.fft.ifft2(M))))


def euclidean_opnorm_L1(m: MultiplierGrid, n: int, half_width: float, grid_pts: Optional[int] = None,
                        max_delta: float = 0.05, target_delta: float = 0.01,
                        max_pts: Optional[int] = None) -> OpNormResult:
    """L1 -> L1 norm of ``m(|D|)`` on ``R^n``: the L1 norm of its kernel.

    The kernel is the inverse DFT of ``m(|w|)`` on a periodic box
    ``[-half_width, half_width)^n``; the same box with 3/4 of the points gives
    the refinement delta.  Without an explicit ``grid_pts`` the grid starts
    at the multiplier's Nyquist size and doubles until the delta is below
    ``target_delta`` (oscillating kernels need oversampling for ``|K|``).
    """
    if n not in (1, 2):
        raise ValueError("n must be 1 or 2")
    reach = m.effective_reach(1e-7)
    if max_pts is None:
        max_pts = 1 << 20 if n == 1 else 4096
    adaptive = grid_pts is None
    if adaptive:
        # the coarse grid must still reach past the multiplier's support
        grid_pts = int(np.ceil(2 * half_width * reach * 1.05 / np.pi / 0.75))
        grid_pts = max(64, grid_pts + (grid_pts % 2))
    while True:
        coarse = max(16, int(round(0.75 * grid_pts)))
        fine_v = _kernel_l1(m, n, half_width, grid_pts)
        coarse_v = _kernel_l1(m, n, half_width, coarse)
        delta = abs(fine_v - coarse_v) / max(fine_v, 1e-300)
        if not adaptive or delta <= target_delta or 2 * grid_pts > max_pts:
            break
        grid_pts *= 2
    if delta > max_delta:
        raise ResolutionError(f"kernel unresolved: refinement delta {delta:.3g}")
    return OpNormResult(fine_v, coarse_v, delta, grid_pts, half_width)


def _euclid_test_ratio(m: MultiplierGrid, n: int, lam: float, p: float, L: float, N: int) -> float:
    # Fourier bump at scale lam in the direction e_1
    freq = 2 * np.pi * np.fft.fftfreq(N, d=2 * L / N)
    band = CutoffSpec.bump(0.5, 1.5)
    if n == 1:
        gh = band(freq / lam)
        M = m(np.abs(freq))
        axes = None
    else:
        w1, w2 = np.meshgrid(freq, freq, indexing="ij")
        r = np.hypot(w1, w2)
        ang = np.arctan2(w2, w1)
        gh = band(r / lam) * _sector_window(ang)
        M = m(r)
        axes = (0, 1)
    g = np.fft.ifftn(gh, axes=axes)
    Tg = np.fft.ifftn(M * gh, axes=axes)
    return float(_lp(Tg, p) / _lp(g, p))


def _lp(f, p):
    a = np.abs(f).ravel()
    if np.isinf(p):
        return a.max()
    return float(np.sum(a ** p) ** (1.0 / p))


def _sector_window(ang, half: float = 0.4):
    u = ang / half
    out = np.zeros_like(ang)
    inside = np.abs(u) < 1
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - u[inside] ** 2))
    return out


# ---------------------------------------------------------------------------
# Grushin operator
# ---------------------------------------------------------------------------

MAX_GRUSHIN = 4096


@dataclass(frozen=True)
class GrushinMatrix:
    matrix: np.ndarray
    x: np.ndarray
    y: np.ndarray
    dx: float
    dy: float

    @property
    def shape(self) -> tuple:
        return (self.x.size, self.y.size)

    def index(self, i: int, j: int) -> int:
        return i * self.y.size + j


def grushin_operator_matrix(nx: int = 33, ny: int = 33, X: float = 4.0, Y: float = np.pi) -> GrushinMatrix:
    """Central differences for ``-d_x^2 - x^2 d_y^2`` on ``[-X, X] x [-Y, Y)``.

    Dirichlet in ``x`` (``nx`` interior points), periodic in ``y``.
    """
    if nx * ny > MAX_GRUSHIN:
        raise ValueError(f"grid {nx}x{ny} exceeds the desk-scale limit of {MAX_GRUSHIN} unknowns")
    dx = 2 * X / (nx + 1)
    x = -X + dx * np.arange(1, nx + 1)
    dy = 2 * Y / ny
    y = -Y + dy * np.arange(ny)
    Dx = (2 * np.eye(nx) - np.eye(nx, k=1) - np.eye(nx, k=-1)) / dx ** 2
    Dy = 2 * np.eye(ny) - np.eye(ny, k=1) - np.eye(ny, k=-1)
    Dy[0, -1] -= 1
    Dy[-1, 0] -= 1
    Dy /= dy ** 2
    Lm = np.kron(Dx, np.eye(ny)) + np.kron(np.diag(x ** 2), Dy)
    Lm = 0.5 * (Lm + Lm.T)
    return GrushinMatrix(Lm, x, y, dx, dy)


def grushin_fiber_eigenvalues(count: int, X: float = 4.0, Y: float = np.pi, kmax: int = 6) -> np.ndarray:
    """Lowest eigenvalues predicted by the fibre decomposition in ``y``.

    ``eta = 0``: Dirichlet Laplacian ``(pi j / 2X)^2``; ``eta = k pi / Y``:
    harmonic oscillator ``|eta| (2 j + 1)``.
    """
    vals = [(np.pi * j / (2 * X)) ** 2 for j in range(1, count + 1)]
    for k in range(1, kmax + 1):
        eta = k * np.pi / Y
        vals += [eta * (2 * j + 1) for j in range(count)] * 2   # +-k
    return np.sort(np.array(vals))[:count]


@dataclass(frozen=True)
class Eigensystem:
    eigenvalues: np.ndarray
    vectors: np.ndarray

    @classmethod
    def of(cls, matrix) -> "Eigensystem":
        from scipy.linalg import eigh

        w, v = eigh(np.asarray(matrix, dtype=float))
        return cls(w, v)

    @property
    def sqrt_eigenvalues(self) -> np.ndarray:
        return np.sqrt(np.clip(self.eigenvalues, 0.0, None))


def apply_multiplier_spectral(eig: Eigensystem, m, f) -> np.ndarray:
    """``m(sqrt L) f = V diag(m(sqrt eig)) V^T f``.

    ``m`` is a :class:`MultiplierGrid` (cubic interpolation, eigenvalues past
    the grid are an error) or a plain callable.
    """
    vals = _spectral_values(eig, m)
    f = np.asarray(f)
    coeff = eig.vectors.T @ f
    return eig.vectors @ (vals[:, None] * coeff if coeff.ndim == 2 else vals * coeff)


def _spectral_values(eig: Eigensystem, m) -> np.ndarray:
    root = eig.sqrt_eigenvalues
    if isinstance(m, MultiplierGrid):
        return m(root, outside="error")
    return np.asarray(m(root), dtype=complex)


def spectral_operator(eig: Eigensystem, m) -> np.ndarray:
    vals = _spectral_values(eig, m)
    return (eig.vectors * vals[None, :]) @ eig.vectors.T


def matrix_norm_1(A) -> float:
    return float(np.abs(A).sum(axis=0).max())


def matrix_norm_inf(A) -> float:
    return float(np.abs(A).sum(axis=1).max())


# ---------------------------------------------------------------------------
# lower-bound experiments
# ---------------------------------------------------------------------------

# (kind, target, p) -> (expected slope, band or None, gate)
EXPECTED = {
    ("mh", "euclidean(1)", 1): (0.5, (0.4, 0.6)),
    ("mh", "euclidean(2)", 1): (1.0, (0.85, 1.15)),
    ("mh", "grushin", 1): (1.0, (0.7, np.inf)),
    ("mp", "euclidean(2)", 1): (0.5, (0.35, 0.65)),
    ("mp", "euclidean(1)", 1): (0.0, (-0.1, 0.25)),
    ("mp", "grushin", 1): (0.5, None),
}


def expected_band(kind: str, target: str, p: float):
    if p == 2:
        return 0.0, (-0.05, 0.05)
    return EXPECTED.get((kind, target, int(p)), (None, None))


@dataclass
class ExperimentResult:
    kind: str
    target: str
    p: float
    lams: list
    values: list
    table: list
    slope: float
    r2: float
    slope_all: float
    r2_all: float
    lambda0: float
    expected_slope: Optional[float]
    band: Optional[tuple]
    passed: Optional[bool]
    notes: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "kind": self.kind,
            "target": self.target,
            "p": self.p,
            "lambdas": [float(v) for v in self.lams],
            "table": self.table,
            "slope": self.slope,
            "r2": self.r2,
            "slope_all": self.slope_all,
            "r2_all": self.r2_all,
            "lambda0": self.lambda0,
            "expected_slope": self.expected_slope,
            "band": None if self.band is None else [float(b) for b in self.band],
            "passed": self.passed,
            "notes": list(self.notes),
        }


def stable_lambda0(lams, values, rel: float = 0.1, floor: float = 0.5) -> int:
    """Index of the smallest ``lam`` from which the local log-log slopes agree.

    Local slopes from that index on must stay within ``rel * max(|mean|, floor)``
    of their mean; at least two slopes (three points) are kept.
    """
    lx = np.log(np.asarray(lams, dtype=float))
    ly = np.log(np.asarray(values, dtype=float))
    local = np.diff(ly) / np.diff(lx)
    last = max(0, len(local) - 2)
    for i in range(last + 1):
        tail = local[i:]
        mean = tail.mean()
        if np.all(np.abs(tail - mean) <= rel * max(abs(mean), floor)):
            return i
    return last


def _finish(kind, target, p, lams, values, table, notes) -> ExperimentResult:
    slope_all, r2_all = loglog_slope(lams, values)
    i0 = stable_lambda0(lams, values)
    slope, r2 = loglog_slope(lams[i0:], values[i0:])
    expected, band = expected_band(kind, target, p)
    passed = None
    if band is not None:
        passed = bool(band[0] <= slope <= band[1])
        if expected not in (None, 0.0) and r2 < 0.95:
            passed = False
            notes.append(f"R^2 = {r2:.3f} below 0.95")
    return ExperimentResult(kind, target, float(p), [float(v) for v in lams], [float(v) for v in values],
                            table, slope, r2, slope_all, r2_all, float(lams[i0]), expected, band, passed,
                            notes)


def _check_lams(lams, p):
    lams = [float(v) for v in lams]
    if len(lams) < 5 and p != 2:
        raise ValueError("need at least five lambda values")
    if len(lams) < 3:
        raise ValueError("need at least three lambda values")
    if p not in (1, 2):
        raise ValueError("p must be 1 or 2")
    return lams


def _euclid_dim(target: str) -> int:
    for n in (1, 2):
        if target in (f"euclidean({n})", f"euclidean{n}"):
            return n
    raise ValueError(f"unsupported target {target!r}; use euclidean(1), euclidean(2) or grushin")


def _euclid_half_width(m: MultiplierGrid, kind: str, t0: float, chi: CutoffSpec, lam: float) -> float:
    if kind == "mh":
        return 1.15 * chi.params[1] + 16.0 / lam
    w = chi.params[1] if chi.kind == "gaussian-window" else 0.1
    return t0 + 16.0 / (w * lam) + 0.1


def _grushin_setup(nx, ny, X, Y, point=(1.0, 0.0)):
    G = grushin_operator_matrix(nx, ny, X, Y)
    eig = Eigensystem.of(G.matrix)
    i = int(np.argmin(np.abs(G.x - point[0])))
    j = int(np.argmin(np.abs(G.y - point[1])))
    delta = np.zeros(G.matrix.shape[0])
    delta[G.index(i, j)] = 1.0
    return G, eig, delta


def _grushin_test_function(eig: Eigensystem, delta, lam):
    # band-pass of the point mass to sqrt(eig) in [0.5 lam, 1.5 lam]
    band = CutoffSpec.bump(0.5, 1.5)
    return apply_multiplier_spectral(eig, lambda s: band(s / lam), delta).real


def _run_experiment(kind: str, target: str, p: float, lams, build: Callable, chi: CutoffSpec,
                    t0: float, grushin_grid=(33, 33, 4.0, np.pi)) -> ExperimentResult:
    lams = _check_lams(lams, p)
    notes = []
    if target == "grushin":
        nx, ny, X, Y = grushin_grid
        G, eig, delta = _grushin_setup(nx, ny, X, Y)
        smax = float(eig.sqrt_eigenvalues.max())
        notes.append(f"sqrt of the largest eigenvalue: {smax:.6g}")
        notes += [f"band [0.5, 1.5] x {lam:g} extends past the resolved spectrum"
                  for lam in lams if 1.5 * lam > smax]

        def ratio_on(eig_, delta_, lam, smax_):
            m = build(lam, 1.05 * smax_)
            g = _grushin_test_function(eig_, delta_, lam)
            if not np.any(g):
                raise ResolutionError(f"band [0.5, 1.5] x {lam:g} misses the discrete spectrum")
            return m, _lp(apply_multiplier_spectral(eig_, m, g), p) / _lp(g, p)

        # boundary monitor: same spacing on a box of twice the width in x
        _, eig2, delta2 = _grushin_setup(2 * nx + 1, ny, 2 * X, Y)
        lam = lams[0]
        near = ratio_on(eig, delta, lam, smax)[1]
        far = ratio_on(eig2, delta2, lam, float(eig2.sqrt_eigenvalues.max()))[1]
        notes.append(f"boundary monitor: doubling X changes the lambda={lam:g} value by "
                     f"{abs(far - near) / abs(near):.3g} relative")

        def item(lam):
            m, ratio = ratio_on(eig, delta, lam, smax)
            row = {"lambda": lam, "value": float(ratio), "sup_m": m.max_abs}
            if p == 1:
                A = spectral_operator(eig, m)
                row["matrix_norm_1"] = matrix_norm_1(A)
                row["duality_gap"] = abs(matrix_norm_1(A) - matrix_norm_inf(A))
            return row
    else:
        n = _euclid_dim(target)

        def item(lam):
            m = build(lam, None)
            L = _euclid_half_width(m, kind, t0, chi, lam)
            if p == 1:
                res = euclidean_opnorm_L1(m, n, L)
                return {"lambda": lam, "value": res.value, "refinement_delta": res.delta,
                        "grid_pts": res.grid_pts, "half_width": L, "sup_m": m.max_abs}
            N = int(np.ceil(2 * L * m.effective_reach(1e-7) * 1.05 / np.pi))
            N = max(64, N + N % 2)
            return {"lambda": lam, "value": _euclid_test_ratio(m, n, lam, p, L, N), "grid_pts": N,
                    "half_width": L, "sup_m": m.max_abs}

    table = pmap(item, lams)
    values = [row["value"] for row in table]
    bound_ok = True
    if p == 2:
        for row in table:
            if row["value"] > row["sup_m"] * (1 + 1e-9):
                bound_ok = False
                notes.append(f"L2 ratio {row['value']:.6g} exceeds sup|m| {row['sup_m']:.6g} "
                             f"at lambda={row['lambda']:g}")
    res = _finish(kind, target, p, lams, values, table, notes)
    if not bound_ok:
        res.passed = False
    return res


def mh_lowerbound_experiment(target: str, p: float, lams: Sequence[float],
                             chi: Optional[CutoffSpec] = None, grushin_grid=(33, 33, 4.0, np.pi)
                             ) -> ExperimentResult:
    """Growth of ``||m_lam^chi(sqrt L)||_{p->p}`` in ``lam`` and its log-log slope."""
    chi = chi or CutoffSpec.bump(0.5, 1.5)

    def build(lam, smax):
        S = None if smax is None else max(smax, chi.params[1] * lam + 500.0)
        return schrodinger_multiplier(chi, lam, S)

    return _run_experiment("mh", target, p, lams, build, chi, 0.0, grushin_grid)


def mp_lowerbound_experiment(target: str, p: float, lams: Sequence[float], t0: float = 0.25,
                             chi: Optional[CutoffSpec] = None, grushin_grid=(33, 33, 4.0, np.pi)
                             ) -> ExperimentResult:
    """Growth of ``||chi(sqrt L / lam) cos(t0 sqrt L)||_{p->p}`` in ``lam``."""
    chi = chi or CutoffSpec.window(1.0, 0.2)
    if t0 <= 0:
        raise ValueError("t0 must be positive")

    def build(lam, smax):
        S = None if smax is None else max(smax, chi.reach * lam + 10.0)
        return wave_multiplier(chi, lam, t0, S)

    return _run_experiment("mp", target, p, lams, build, chi, t0, grushin_grid)
