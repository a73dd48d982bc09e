"""Polytopes {x : Ax >= b}: validation, slacks, interior points and JSON IO."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import linprog


class PolytopeError(ValueError):
    """Raised for malformed polytope data."""


class InfeasibleError(ValueError):
    """Raised when a point is not strictly inside the polytope."""


class InteriorPointError(RuntimeError):
    """Raised when no analytic center can be found."""


@dataclass(frozen=True, eq=False)
class Polytope:
    """The set {x : Ax >= b} with ``A`` of shape (m, n)."""

    A: np.ndarray
    b: np.ndarray
    name: str = ""

    def __post_init__(self):
        A = np.array(self.A, dtype=float)
        b = np.array(self.b, dtype=float)
        if A.ndim != 2:
            raise PolytopeError(f"A must be a matrix, got shape {A.shape}")
        if b.ndim != 1:
            raise PolytopeError(f"b must be a vector, got shape {b.shape}")
        m, n = A.shape
        if n < 1:
            raise PolytopeError("A must have at least one column")
        if len(b) != m:
            raise PolytopeError(f"dimension mismatch: A has {m} rows but b has length {len(b)}")
        if m < n:
            raise PolytopeError(f"need m >= n, got m={m}, n={n}")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
            raise PolytopeError("A and b must be finite (no NaN/Inf)")
        norms = np.linalg.norm(A, axis=1)
        zero = np.flatnonzero(norms == 0)
        if zero.size:
            raise PolytopeError(f"row {zero[0]} of A is the zero vector")
        A.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @property
    def m(self) -> int:
        return self.A.shape[0]

    @property
    def n(self) -> int:
        return self.A.shape[1]

    def to_dict(self) -> dict:
        out = {"A": self.A.tolist(), "b": self.b.tolist()}
        if self.name:
            out = {"name": self.name, **out}
        return out

    def translated(self, shift) -> "Polytope":
        """Return the polytope moved by ``shift``: {x + shift : x in self}."""
        shift = np.asarray(shift, dtype=float)
        return Polytope(self.A, self.b + self.A @ shift, self.name)

    def scaled(self, factors) -> "Polytope":
        """Return the image under the diagonal map x -> diag(factors) x."""
        factors = np.broadcast_to(np.asarray(factors, dtype=float), (self.n,))
        return Polytope(self.A / factors[None, :], self.b, self.name)


@dataclass(frozen=True, eq=False)
class InteriorPoint:
    """A strictly feasible point together with its slack vector."""

    x: np.ndarray
    s: np.ndarray = field(repr=False)

    @classmethod
    def at(cls, P: Polytope, x) -> "InteriorPoint":
        x = np.asarray(x, dtype=float)
        s = slacks(P, x)
        if not np.all(s > 0):
            i = int(np.argmin(s))
            raise InfeasibleError(f"point is not strictly interior: slack[{i}] = {s[i]:.3e}")
        return cls(x, s)


def load_polytope(path) -> Polytope:
    """Read a polytope from the JSON format ``{"name"?, "A": [[...]], "b": [...]}``."""
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"), parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        raise PolytopeError(f"{path}: invalid JSON ({exc})") from exc
    return polytope_from_dict(data, source=str(path))


def polytope_from_dict(data, source: str = "<dict>") -> Polytope:
    if not isinstance(data, dict) or "A" not in data or "b" not in data:
        raise PolytopeError(f"{source}: expected an object with keys 'A' and 'b'")
    A, b = data["A"], data["b"]
    if not isinstance(A, list) or not A or not all(isinstance(r, list) for r in A):
        raise PolytopeError(f"{source}: 'A' must be a non-empty list of rows")
    widths = {len(r) for r in A}
    if len(widths) != 1:
        raise PolytopeError(f"{source}: rows of 'A' have differing lengths {sorted(widths)}")
    if not isinstance(b, list):
        raise PolytopeError(f"{source}: 'b' must be a list")
    for row in [*A, b]:
        for v in row:
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise PolytopeError(f"{source}: non-numeric entry {v!r}")
    name = data.get("name", "")
    if not isinstance(name, str):
        raise PolytopeError(f"{source}: 'name' must be a string")
    return Polytope(np.array(A, dtype=float), np.array(b, dtype=float), name)


def save_polytope(P: Polytope, path) -> None:
    Path(path).write_text(json.dumps(P.to_dict(), allow_nan=False) + "\n", encoding="utf-8")


def _reject_constant(token):
    raise PolytopeError(f"non-finite number {token} is not permitted")


def slacks(P: Polytope, x) -> np.ndarray:
    """Return ``Ax - b``; entries may be nonpositive."""
    return P.A @ np.asarray(x, dtype=float) - P.b


def membership(P: Polytope, x) -> bool:
    """Strict membership: boundary points are outside."""
    return bool(np.all(slacks(P, x) > 0))


def rescaled(P: Polytope, pt) -> np.ndarray:
    """Constraint matrix with row i divided by slack i (``A_x = S^{-1} A``)."""
    s = pt.s if isinstance(pt, InteriorPoint) else slacks(P, pt)
    if not np.all(s > 0):
        i = int(np.argmin(s))
        raise InfeasibleError(f"nonpositive slack[{i}] = {s[i]:.3e}")
    return P.A / s[:, None]


def chebyshev_center(P: Polytope) -> tuple[np.ndarray, float]:
    """Center and radius of the largest inscribed ball (may be unbounded)."""
    norms = np.linalg.norm(P.A, axis=1)
    # maximize t subject to a_i^T x - |a_i| t >= b_i, t <= 1 caps unbounded cases
    c = np.zeros(P.n + 1)
    c[-1] = -1.0
    A_ub = np.hstack([-P.A, norms[:, None]])
    res = linprog(c, A_ub=A_ub, b_ub=-P.b, bounds=[(None, None)] * P.n + [(None, None)],
                  method="highs")
    if res.status == 3:
        raise InteriorPointError("possibly unbounded or empty interior: inscribed ball is unbounded")
    if res.status != 0:
        raise InteriorPointError(f"possibly unbounded or empty interior: LP failed ({res.message})")
    return res.x[:-1], float(res.x[-1])


def find_interior_point(P: Polytope, tol: float = 1e-10, max_iter: int = 200) -> InteriorPoint:
    """Approximate analytic center of the log barrier ``-sum(log(Ax - b))``.

    A Chebyshev center seeds a damped Newton method; iteration stops when the
    Newton decrement (gradient norm in the local Hessian metric) is below ``tol``.
    """
    x, radius = chebyshev_center(P)
    if not radius > 0:
        raise InteriorPointError("possibly unbounded or empty interior: polytope has no interior")
    scale = max(1.0, float(np.linalg.norm(x)))
    for _ in range(max_iter):
        s = slacks(P, x)
        Ax = P.A / s[:, None]
        grad = -Ax.sum(axis=0)
        H = Ax.T @ Ax
        try:
            step = -np.linalg.solve(H, grad)
        except np.linalg.LinAlgError as exc:
            raise InteriorPointError("possibly unbounded or empty interior: singular Hessian") from exc
        decrement = math.sqrt(max(float(-grad @ step), 0.0))
        if decrement <= tol:
            return InteriorPoint.at(P, x)
        if not np.isfinite(decrement) or np.linalg.norm(x) > 1e12 * scale:
            break
        t = 1.0 if decrement < 0.25 else 1.0 / (1.0 + decrement)
        f0 = -np.sum(np.log(s))
        ds = Ax @ step
        while True:
            if np.all(1.0 + t * ds > 0):
                f1 = -np.sum(np.log(s + t * (P.A @ step)))
                if f1 <= f0 + 0.25 * t * float(grad @ step) or t < 1e-12:
                    break
            t *= 0.5
        x = x + t * step
    raise InteriorPointError("possibly unbounded or empty interior: Newton did not converge "
                             f"after {max_iter} iterations")


# Structured test instances ----------------------------------------------------

def cube(n: int, half_width: float = 1.0) -> Polytope:
    """The box [-r, r]^n as 2n inequalities."""
    eye = np.eye(n)
    A = np.empty((2 * n, n))
    A[0::2] = eye
    A[1::2] = -eye
    return Polytope(A, np.full(2 * n, -float(half_width)), f"cube{n}")


def box(lower, upper) -> Polytope:
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    n = len(lower)
    eye = np.eye(n)
    A = np.empty((2 * n, n))
    A[0::2] = eye
    A[1::2] = -eye
    b = np.empty(2 * n)
    b[0::2] = lower
    b[1::2] = -upper
    return Polytope(A, b, f"box{n}")


def simplex(n: int) -> Polytope:
    """The standard simplex {x >= 0, sum(x) <= 1}."""
    A = np.vstack([np.eye(n), -np.ones((1, n))])
    b = np.concatenate([np.zeros(n), [-1.0]])
    return Polytope(A, b, f"simplex{n}")


def cross_polytope(n: int) -> Polytope:
    """{x : sum |x_i| <= 1} as 2^n inequalities."""
    signs = np.array(np.meshgrid(*[[-1.0, 1.0]] * n, indexing="ij")).reshape(n, -1).T
    return Polytope(-signs, -np.ones(len(signs)), f"cross{n}")


def random_polytope(n: int, m: int, rng: np.random.Generator, min_slack: float = 0.5) -> Polytope:
    """Random unit-row polytope whose origin has slack in [min_slack, 1 + min_slack).

    The first 2n rows are a random rotation of a cube so the result is bounded.
    """
    if m < 2 * n:
        raise PolytopeError(f"random_polytope needs m >= 2n, got m={m}, n={n}")
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    A = np.vstack([Q, -Q, rng.standard_normal((m - 2 * n, n))])
    A /= np.linalg.norm(A, axis=1, keepdims=True)
    b = -(min_slack + rng.random(m))
    return Polytope(A, b, f"random{n}x{m}")
