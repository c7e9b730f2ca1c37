"""Dense Gaussian elimination with partial pivoting.

The systems solved here are cluster-sized (n up to a few dozen), so a plain
O(n^3) elimination over numpy rows is plenty fast.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SINGULAR_RTOL = 1e-12


class SingularMatrixError(ArithmeticError):
    """Raised when no usable pivot is left in some elimination column."""


@dataclass(frozen=True)
class LinearSystem:
    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        a = np.array(self.a, dtype=float)
        b = np.array(self.b, dtype=float).reshape(-1)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError(f"matrix must be square, got shape {a.shape}")
        if a.shape[0] != b.shape[0]:
            raise ValueError(f"dimension mismatch: A is {a.shape}, b has {b.shape[0]}")
        if a.shape[0] == 0:
            raise ValueError("empty system")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise ValueError("system entries must be finite")
        a.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @property
    def n(self) -> int:
        return self.b.shape[0]


def gaussian_solve(system: LinearSystem) -> np.ndarray:
    """Solve ``A x = b`` by forward elimination with row pivoting.

    The singularity threshold is ``1e-12`` times the largest row (L1) norm of A,
    so systems expressed in tiny units (joules ~1e-4) are not falsely
    rejected.  The input system is never modified.
    """
    a = system.a.copy()
    b = system.b.copy()
    n = system.n

    row_scale = np.abs(a).sum(axis=1).max()
    tol = SINGULAR_RTOL * row_scale
    if row_scale == 0.0:
        raise SingularMatrixError("zero matrix")

    for k in range(n):
        p = k + int(np.argmax(np.abs(a[k:, k])))
        if abs(a[p, k]) < tol or a[p, k] == 0.0:
            raise SingularMatrixError(f"no pivot in column {k}")
        if p != k:
            a[[k, p]] = a[[p, k]]
            b[[k, p]] = b[[p, k]]
        if k + 1 < n:
            factors = a[k + 1:, k] / a[k, k]
            a[k + 1:, k:] -= np.outer(factors, a[k, k:])
            b[k + 1:] -= factors * b[k]

    x = np.empty(n)
    for k in range(n - 1, -1, -1):
        x[k] = (b[k] - a[k, k + 1:] @ x[k + 1:]) / a[k, k]
    return x


def residual_norm(system: LinearSystem, x) -> float:
    """Max-norm of ``A x - b``."""
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] != system.n:
        raise ValueError(f"x has length {x.shape[0]}, expected {system.n}")
    return float(np.max(np.abs(system.a @ x - system.b)))
