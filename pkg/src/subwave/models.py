"""Sub-Riemannian model manifolds given by a horizontal frame.

A model is a frame ``v_1, ..., v_r`` of vector fields on an open set of
``R^n``; the Hamiltonian is ``H(x, xi) = sum_j (xi . v_j(x))**2`` and the
cometric is ``C(x) = sum_j v_j(x) v_j(x)^T``.  All evaluation routines are
vectorised over leading axes: ``x`` and ``xi`` may have shape ``(..., n)``.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

#: relative singular-value cutoff used whenever a numerical rank is taken
RANK_THRESHOLD = 1e-8


class ModelError(ValueError):
    """Unknown model name or malformed model description."""


class InvariantViolation(ArithmeticError):
    """A numerical identity that should hold failed its tolerance."""


# ---------------------------------------------------------------------------
# polynomial vector fields
# ---------------------------------------------------------------------------

class PolyField:
    """Polynomial vector field on ``R^n``.

    Stored as a list of monomial terms ``(coefficient, exponents, target)``
    meaning ``coefficient * x**exponents * d/dx_target``.
    """

    def __init__(self, n: int, terms: Sequence[tuple[float, Sequence[int], int]]):
        self.n = int(n)
        merged: dict[tuple[tuple[int, ...], int], float] = {}
        for coef, exps, target in terms:
            exps = tuple(int(e) for e in exps)
            if len(exps) != self.n:
                raise ModelError(f"exponent {exps} does not have length {self.n}")
            if any(e < 0 for e in exps):
                raise ModelError(f"negative exponent in {exps}")
            if not 0 <= int(target) < self.n:
                raise ModelError(f"target component {target} out of range")
            key = (exps, int(target))
            merged[key] = merged.get(key, 0.0) + float(coef)
        items = sorted((k, c) for k, c in merged.items() if c != 0.0)
        self.terms = [(c, e, t) for (e, t), c in items]
        if self.terms:
            self._coef = np.array([c for c, _, _ in self.terms])
            self._exps = np.array([e for _, e, _ in self.terms], dtype=int)
            self._tgt = np.array([t for _, _, t in self.terms], dtype=int)
        else:
            self._coef = np.zeros(0)
            self._exps = np.zeros((0, self.n), dtype=int)
            self._tgt = np.zeros(0, dtype=int)

    def is_zero(self) -> bool:
        return not self.terms

    def __repr__(self) -> str:
        return f"PolyField(n={self.n}, terms={self.terms})"

    def _monomials(self, x, exps):
        # x: (..., n), exps: (K, n) -> (..., K); negative exponents give zero
        x = np.asarray(x, dtype=float)
        out = np.ones(x.shape[:-1] + (exps.shape[0],))
        for b in range(self.n):
            e = exps[:, b]
            xb = x[..., b, None]
            powed = np.where(e >= 0, xb ** np.maximum(e, 0), 0.0)
            out = out * powed
        return out

    def value(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1] + (self.n,))
        if not self.terms:
            return out
        mono = self._monomials(x, self._exps) * self._coef
        for a in range(self.n):
            sel = self._tgt == a
            if sel.any():
                out[..., a] = mono[..., sel].sum(axis=-1)
        return out

    def jacobian(self, x):
        """``J[..., a, b] = d v^a / d x_b``."""
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1] + (self.n, self.n))
        if not self.terms:
            return out
        for b in range(self.n):
            e = self._exps.copy()
            fac = self._coef * e[:, b]
            e[:, b] -= 1
            mono = self._monomials(x, e) * fac
            for a in range(self.n):
                sel = self._tgt == a
                if sel.any():
                    out[..., a, b] = mono[..., sel].sum(axis=-1)
        return out

    def hessian(self, x):
        """``D[..., a, b, c] = d^2 v^a / d x_b d x_c``."""
        x = np.asarray(x, dtype=float)
        n = self.n
        out = np.zeros(x.shape[:-1] + (n, n, n))
        if not self.terms:
            return out
        for b in range(n):
            for c in range(b, n):
                e = self._exps.copy()
                fac = self._coef * e[:, b]
                e[:, b] -= 1
                fac = fac * e[:, c]
                e[:, c] -= 1
                mono = self._monomials(x, e) * fac
                for a in range(n):
                    sel = self._tgt == a
                    if sel.any():
                        val = mono[..., sel].sum(axis=-1)
                        out[..., a, b, c] = val
                        out[..., a, c, b] = val
        return out

    def bracket(self, other: "PolyField") -> "PolyField":
        """Exact Lie bracket ``[self, other] = D(other) self - D(self) other``."""
        terms = []
        for c1, e1, t1 in self.terms:
            for c2, e2, t2 in other.terms:
                # self^t1 d_t1 (other^t2)
                if e2[t1] > 0:
                    e = list(np.add(e1, e2))
                    e[t1] -= 1
                    terms.append((c1 * c2 * e2[t1], e, t2))
                # - other^t2 d_t2 (self^t1)
                if e1[t2] > 0:
                    e = list(np.add(e1, e2))
                    e[t2] -= 1
                    terms.append((-c1 * c2 * e1[t2], e, t1))
        return PolyField(self.n, terms)


# ---------------------------------------------------------------------------
# model spec
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CotangentPoint:
    """A covector ``xi`` over the base point ``x`` (canonical coordinates)."""

    x: np.ndarray
    xi: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float).reshape(-1)
        xi = np.asarray(self.xi, dtype=float).reshape(-1)
        if x.shape != xi.shape:
            raise ValueError(f"x and xi differ in shape: {x.shape} vs {xi.shape}")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(xi))):
            raise ValueError("cotangent point has non-finite entries")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "xi", xi)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.x, self.xi])


@dataclass(frozen=True)
class ModelSpec:
    """Frame-defined model; immutable and safe to share between threads.

    ``frame(x)`` returns the stacked frame with shape ``(..., r, n)``.
    ``frame_jac`` and ``frame_hess`` give first and second spatial
    derivatives with shapes ``(..., r, n, n)`` and ``(..., r, n, n, n)``; they
    are only consulted in ``"analytic"`` mode.
    """

    name: str
    n: int
    r: int
    frame: Callable[[np.ndarray], np.ndarray]
    frame_jac: Optional[Callable[[np.ndarray], np.ndarray]] = None
    frame_hess: Optional[Callable[[np.ndarray], np.ndarray]] = None
    derivative_mode: str = "analytic"
    h: float = 1e-5
    poly: Optional[tuple[PolyField, ...]] = field(default=None, compare=False)
    t_max: float = 1.0

    def __post_init__(self):
        if self.n < 1 or not 1 <= self.r <= self.n:
            raise ModelError(f"need 1 <= r <= n, got n={self.n}, r={self.r}")
        if self.derivative_mode not in ("analytic", "central"):
            raise ModelError(f"unknown derivative mode {self.derivative_mode!r}")
        if self.derivative_mode == "analytic" and (self.frame_jac is None or self.frame_hess is None):
            raise ModelError("analytic mode needs frame_jac and frame_hess")

    def with_mode(self, mode: str, h: Optional[float] = None) -> "ModelSpec":
        return ModelSpec(self.name, self.n, self.r, self.frame, self.frame_jac,
                         self.frame_hess, mode, self.h if h is None else h,
                         self.poly, self.t_max)

    # frame derivatives ------------------------------------------------------

    def _step(self, x, scale=1.0):
        return scale * self.h * (1.0 + np.linalg.norm(x, axis=-1))[..., None, None]

    def jac(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.derivative_mode == "analytic":
            return self.frame_jac(x)
        n = self.n
        out = np.empty(x.shape[:-1] + (self.r, n, n))
        hs = self._step(x)[..., 0]  # (..., 1)
        for b in range(n):
            e = np.zeros(n)
            e[b] = 1.0
            d = (self.frame(x + hs * e) - self.frame(x - hs * e)) / (2 * hs[..., None])
            out[..., b] = d
        return out

    def hess(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.derivative_mode == "analytic":
            return self.frame_hess(x)
        n = self.n
        out = np.empty(x.shape[:-1] + (self.r, n, n, n))
        # a larger step keeps roundoff of the second difference near 1e-8
        hs = self._step(x, 10.0)[..., 0]
        h2 = (hs * hs)[..., None]
        f0 = self.frame(x)
        eye = np.eye(n)
        for b in range(n):
            fp = self.frame(x + hs * eye[b])
            fm = self.frame(x - hs * eye[b])
            out[..., b, b] = (fp - 2 * f0 + fm) / h2
            for c in range(b + 1, n):
                fpp = self.frame(x + hs * (eye[b] + eye[c]))
                fpm = self.frame(x + hs * (eye[b] - eye[c]))
                fmp = self.frame(x - hs * (eye[b] - eye[c]))
                fmm = self.frame(x - hs * (eye[b] + eye[c]))
                val = (fpp - fpm - fmp + fmm) / (4 * h2)
                out[..., b, c] = val
                out[..., c, b] = val
        return out

    # Hamiltonian ------------------------------------------------------------

    def cometric(self, x) -> np.ndarray:
        v = self.frame(np.asarray(x, dtype=float))
        return np.einsum("...ja,...jb->...ab", v, v)

    def H(self, x, xi) -> np.ndarray:
        v = self.frame(np.asarray(x, dtype=float))
        p = np.einsum("...ja,...a->...j", v, np.asarray(xi, dtype=float))
        return np.sum(p * p, axis=-1)

    def grad_H(self, x, xi):
        """Return ``(dH/dx, dH/dxi)``, vectorised."""
        x = np.asarray(x, dtype=float)
        xi = np.asarray(xi, dtype=float)
        v = self.frame(x)
        p = np.einsum("...ja,...a->...j", v, xi)
        dv = self.jac(x)
        q = np.einsum("...a,...jab->...jb", xi, dv)
        dx = 2.0 * np.einsum("...j,...jb->...b", p, q)
        dxi = 2.0 * np.einsum("...j,...ja->...a", p, v)
        return dx, dxi

    def hess_H(self, x, xi) -> np.ndarray:
        """Full ``(2n, 2n)`` Hessian of ``H`` in ``(x, xi)``, vectorised."""
        x = np.asarray(x, dtype=float)
        xi = np.asarray(xi, dtype=float)
        n = self.n
        v = self.frame(x)
        p = np.einsum("...ja,...a->...j", v, xi)
        dv = self.jac(x)
        d2v = self.hess(x)
        q = np.einsum("...a,...jab->...jb", xi, dv)
        hxx = 2.0 * (np.einsum("...jb,...jc->...bc", q, q)
                     + np.einsum("...j,...a,...jabc->...bc", p, xi, d2v))
        hxxi = 2.0 * (np.einsum("...jb,...ja->...ba", q, v)
                      + np.einsum("...j,...jab->...ba", p, dv))
        hxixi = 2.0 * np.einsum("...ja,...jb->...ab", v, v)
        out = np.empty(x.shape[:-1] + (2 * n, 2 * n))
        out[..., :n, :n] = hxx
        out[..., :n, n:] = hxxi
        out[..., n:, :n] = np.swapaxes(hxxi, -1, -2)
        out[..., n:, n:] = hxixi
        return out


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def _as_point(p) -> CotangentPoint:
    if isinstance(p, CotangentPoint):
        return p
    x, xi = p
    return CotangentPoint(x, xi)


def cometric(model: ModelSpec, x) -> np.ndarray:
    return model.cometric(x)


def hamiltonian(model: ModelSpec, p) -> float:
    """``H(x, xi) = sum_j (xi . v_j(x))**2`` at a single cotangent point."""
    p = _as_point(p)
    return float(model.H(p.x, p.xi))


def hamiltonian_derivs(model: ModelSpec, p):
    """Return ``(dH/dx, dH/dxi, Hessian)`` at a single cotangent point.

    The Hessian is ordered as ``(x, xi)`` blocks.
    """
    p = _as_point(p)
    dx, dxi = model.grad_H(p.x, p.xi)
    return dx, dxi, model.hess_H(p.x, p.xi)


def numerical_span_rank(vectors: np.ndarray, threshold: float = RANK_THRESHOLD) -> int:
    vectors = np.atleast_2d(vectors)
    if vectors.size == 0:
        return 0
    sv = np.linalg.svd(vectors, compute_uv=False)
    if sv[0] == 0.0:
        return 0
    return int(np.sum(sv > threshold * sv[0]))


def _fd_bracket(f, g, step=1e-4):
    # nested central-difference bracket for value-only fields
    def jac(fun, x):
        x = np.asarray(x, dtype=float)
        n = x.shape[-1]
        h = step * (1.0 + np.linalg.norm(x))
        cols = [(fun(x + h * e) - fun(x - h * e)) / (2 * h) for e in np.eye(n)]
        return np.stack(cols, axis=-1)

    def br(x):
        return jac(g, x) @ f(x) - jac(f, x) @ g(x)

    return br


def bracket_generating_step(model: ModelSpec, x, max_depth: int = 6,
                            threshold: float = RANK_THRESHOLD) -> Optional[int]:
    """Smallest bracket depth at which the frame spans ``R^n`` at ``x``.

    Returns ``None`` when the span is not full within ``max_depth``.
    """
    if max_depth < 1:
        raise ValueError("max_depth must be >= 1")
    x = np.asarray(x, dtype=float)
    n = model.n
    if model.poly is not None:
        base = list(model.poly)
        level = [f for f in base if not f.is_zero()]
        vecs = [f.value(x) for f in level]
        for depth in range(1, max_depth + 1):
            if depth > 1:
                nxt = []
                for vi in base:
                    for w in level:
                        b = vi.bracket(w)
                        if not b.is_zero() and all(b.terms != o.terms for o in nxt):
                            nxt.append(b)
                level = nxt
                vecs.extend(f.value(x) for f in level)
            if vecs and numerical_span_rank(np.array(vecs), threshold) == n:
                return depth
            if not level:
                return None
        return None

    base = [(lambda y, j=j: model.frame(y)[j]) for j in range(model.r)]
    level = list(base)
    vecs = [f(x) for f in level]
    for depth in range(1, max_depth + 1):
        if depth > 1:
            level = [_fd_bracket(vi, w) for vi in base for w in level]
            vecs.extend(f(x) for f in level)
        if numerical_span_rank(np.array(vecs), threshold) == n:
            return depth
    return None


# ---------------------------------------------------------------------------
# registry
# ---------------------------------------------------------------------------

class PolyFrame:
    """A stack of polynomial fields compiled for fast batched evaluation.

    Every derivative of every field is a fixed linear combination of a
    shared monomial basis, so evaluation is one power table plus a matmul.
    """

    def __init__(self, fields: Sequence[PolyField]):
        self.fields = tuple(fields)
        self.n = self.fields[0].n
        self.r = len(self.fields)
        n, r = self.n, self.r
        basis: dict[tuple[int, ...], int] = {}
        rows_v, rows_j, rows_h = [], [], []

        def idx(e):
            return basis.setdefault(tuple(int(v) for v in e), len(basis))

        for j, f in enumerate(self.fields):
            for c, e, a in f.terms:
                rows_v.append((idx(e), (j * n + a), c))
                for b in range(n):
                    if e[b] == 0:
                        continue
                    e1 = list(e)
                    e1[b] -= 1
                    rows_j.append((idx(e1), (j * n + a) * n + b, c * e[b]))
                    for d in range(n):
                        if e1[d] == 0:
                            continue
                        e2 = list(e1)
                        e2[d] -= 1
                        rows_h.append((idx(e2), ((j * n + a) * n + b) * n + d, c * e[b] * e1[d]))
        self.exps = np.array(list(basis), dtype=int).reshape(len(basis), n)
        self.maxdeg = int(self.exps.max()) if self.exps.size else 0
        K = len(basis)

        def mat(rows, width):
            m = np.zeros((K, width))
            for k, col, c in rows:
                m[k, col] += c
            return m

        self._mv = mat(rows_v, r * n)
        self._mj = mat(rows_j, r * n * n)
        self._mh = mat(rows_h, r * n * n * n)

    def _mono(self, x):
        x = np.asarray(x, dtype=float)
        pw = np.empty(x.shape + (self.maxdeg + 1,))
        pw[..., 0] = 1.0
        for k in range(1, self.maxdeg + 1):
            pw[..., k] = pw[..., k - 1] * x
        out = pw[..., 0, self.exps[:, 0]]
        for b in range(1, self.n):
            out = out * pw[..., b, self.exps[:, b]]
        return out

    def value(self, x):
        x = np.asarray(x, dtype=float)
        return (self._mono(x) @ self._mv).reshape(x.shape[:-1] + (self.r, self.n))

    def jacobian(self, x):
        x = np.asarray(x, dtype=float)
        return (self._mono(x) @ self._mj).reshape(x.shape[:-1] + (self.r, self.n, self.n))

    def hessian(self, x):
        x = np.asarray(x, dtype=float)
        n = self.n
        return (self._mono(x) @ self._mh).reshape(x.shape[:-1] + (self.r, n, n, n))


def model_from_poly(name: str, fields: Sequence[PolyField], derivative_mode="analytic",
                    h: float = 1e-5, t_max: float = 1.0) -> ModelSpec:
    pf = PolyFrame(fields)
    return ModelSpec(name=name, n=pf.n, r=pf.r, frame=pf.value, frame_jac=pf.jacobian,
                     frame_hess=pf.hessian, derivative_mode=derivative_mode, h=h,
                     poly=pf.fields, t_max=t_max)


def _euclidean_fields(n):
    return [PolyField(n, [(1.0, [0] * n, j)]) for j in range(n)]


def _heisenberg_fields():
    return [
        PolyField(3, [(1.0, [0, 0, 0], 0), (-0.5, [0, 1, 0], 2)]),
        PolyField(3, [(1.0, [0, 0, 0], 1), (0.5, [1, 0, 0], 2)]),
    ]


def _grushin_fields():
    return [
        PolyField(2, [(1.0, [0, 0], 0)]),
        PolyField(2, [(1.0, [1, 0], 1)]),
    ]


def _engel_fields():
    return [
        PolyField(4, [(1.0, [0, 0, 0, 0], 0)]),
        PolyField(4, [(1.0, [0, 0, 0, 0], 1), (1.0, [1, 0, 0, 0], 2), (1.0, [2, 0, 0, 0], 3)]),
    ]


_EUCLID = re.compile(r"^euclidean(?:\((\d+)\)|(\d+))$")


def builtin_names() -> list[str]:
    return ["euclidean(n)", "heisenberg", "grushin", "engel"]


def register_builtin(name: str) -> ModelSpec:
    """Return a built-in model: ``euclidean(n)`` (or ``euclideanN``),
    ``heisenberg``, ``grushin`` or ``engel``."""
    key = name.strip().lower().replace(" ", "")
    m = _EUCLID.match(key)
    if m:
        n = int(m.group(1) or m.group(2))
        if n < 1:
            raise ModelError("euclidean dimension must be >= 1")
        return model_from_poly(f"euclidean({n})", _euclidean_fields(n))
    if key == "heisenberg":
        return model_from_poly("heisenberg", _heisenberg_fields())
    if key == "grushin":
        return model_from_poly("grushin", _grushin_fields())
    if key == "engel":
        return model_from_poly("engel", _engel_fields())
    raise ModelError(f"unknown model {name!r}; known: {', '.join(builtin_names())}")


def _parse_term(term, n):
    if isinstance(term, dict):
        try:
            return float(term["coef"]), list(term["exp"]), int(term["target"])
        except KeyError as exc:
            raise ModelError(f"term {term} lacks {exc}") from None
    if len(term) != 3:
        raise ModelError(f"term {term} is not [coef, exponents, target]")
    coef, exps, target = term
    return float(coef), list(exps), int(target)


def model_from_dict(data: dict) -> ModelSpec:
    """Build a user model from a declarative mapping of polynomial frames.

    Expected keys: ``name``, ``n``, ``fields`` (list of tables with a
    ``terms`` list of ``[coefficient, exponents, target]``), optionally
    ``derivative_mode`` and ``h``.
    """
    try:
        n = int(data["n"])
        raw_fields = data["fields"]
    except KeyError as exc:
        raise ModelError(f"model description lacks {exc}") from None
    if not raw_fields:
        raise ModelError("model needs at least one frame field")
    fields = []
    for f in raw_fields:
        terms = f["terms"] if isinstance(f, dict) else f
        fields.append(PolyField(n, [_parse_term(t, n) for t in terms]))
    mode = data.get("derivative_mode", "analytic")
    model = model_from_poly(str(data.get("name", "user")), fields,
                            derivative_mode="analytic", h=float(data.get("h", 1e-5)),
                            t_max=float(data.get("t_max", 1.0)))
    return model if mode == "analytic" else model.with_mode(mode)


def load_model_file(path) -> ModelSpec:
    import tomli

    path = Path(path)
    try:
        data = tomli.loads(path.read_text())
    except (OSError, tomli.TOMLDecodeError) as exc:
        raise ModelError(f"cannot read model file {path}: {exc}") from None
    return model_from_dict(data.get("model", data))


def resolve_model(spec: str) -> ModelSpec:
    """Built-in name, or path to a TOML model file."""
    p = Path(spec)
    if p.suffix == ".toml" or p.exists():
        if not p.exists():
            raise ModelError(f"model file {spec} does not exist")
        return load_model_file(p)
    return register_builtin(spec)
