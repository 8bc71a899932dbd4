"""Special-purpose linear algebra: the trend-filter solve and the PSD
matrix-square-root trace used by the Fréchet distance.

Both are written directly against numpy; the test suite checks them against
independent dense/eigendecomposition oracles.
"""

from __future__ import annotations

import numpy as np


def second_difference_normal_matrix(n: int, lam: float) -> np.ndarray:
    """Dense (I + lam * D^T D) for the length-n second-difference operator D.

    Exposed so callers (and tests) can form residuals; the solver below
    never materializes it.
    """
    a = np.eye(n)
    if n >= 3 and lam > 0.0:
        d = np.zeros((n - 2, n))
        for i in range(n - 2):
            d[i, i] = 1.0
            d[i, i + 1] = -2.0
            d[i, i + 2] = 1.0
        a += lam * (d.T @ d)
    return a


def pentadiagonal_solve(lam: float, x: np.ndarray) -> tuple[np.ndarray, bool]:
    """Solve (I + lam * D^T D) t = x for the smooth trend t.

    D is the second-difference operator, so the system matrix is symmetric
    positive definite and pentadiagonal; banded Gaussian elimination without
    pivoting is stable on SPD systems.  Returns (trend, ok); series shorter
    than 3 are returned unchanged with ok=False.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"pentadiagonal_solve: expected 1-D series, got {x.shape}")
    if lam < 0.0:
        raise ValueError(f"pentadiagonal_solve: lambda must be >= 0, got {lam}")
    n = x.shape[0]
    if n < 3:
        return x.copy(), False
    if lam == 0.0:
        return x.copy(), True

    # Band rows of I + lam*D^T D: main diagonal d0, first off-diagonal d1,
    # second off-diagonal d2 (symmetric).
    d0 = np.ones(n)
    d0[0] += lam
    d0[-1] += lam
    if n > 3:
        d0[1] += 5.0 * lam
        d0[-2] += 5.0 * lam
        d0[2:-2] += 6.0 * lam
    else:
        d0[1] += 4.0 * lam
    d1 = np.full(n - 1, -4.0 * lam)
    d1[0] = -2.0 * lam
    d1[-1] = -2.0 * lam
    d2 = np.full(n - 2, lam)

    # Forward elimination on the five bands, tracking the two subdiagonal
    # multipliers; then back substitution.
    d1u = d1.copy()  # superdiagonal (mutated by elimination)
    d2u = d2.copy()
    rhs = x.copy()
    for i in range(n - 1):
        m1 = d1[i] / d0[i]  # current subdiagonal entry A[i+1, i]
        d0[i + 1] -= m1 * d1u[i]
        if i + 2 < n:
            d1u[i + 1] -= m1 * d2u[i]
        rhs[i + 1] -= m1 * rhs[i]
        if i + 2 < n:
            m2 = d2[i] / d0[i]  # A[i+2, i], untouched by earlier steps
            d0[i + 2] -= m2 * d2u[i]
            rhs[i + 2] -= m2 * rhs[i]
            d1[i + 1] -= m2 * d1u[i]  # fill-in feeding the next step's m1

    trend = np.zeros(n)
    trend[-1] = rhs[-1] / d0[-1]
    trend[-2] = (rhs[-2] - d1u[-1] * trend[-1]) / d0[-2]
    for i in range(n - 3, -1, -1):
        trend[i] = (rhs[i] - d1u[i] * trend[i + 1] - d2u[i] * trend[i + 2]) / d0[i]
    return trend, True


def trace_sqrt_product(s1: np.ndarray, s2: np.ndarray, sym_tol: float = 1e-8) -> float:
    """Trace of (s1 @ s2)^(1/2) for symmetric PSD s1, s2.

    Computed via the similarity-invariant route s1^(1/2) s2 s1^(1/2), whose
    eigenvalues match those of s1 s2 but stay real and non-negative.  Small
    negative eigenvalues above -1e-8 (roundoff) clamp to zero; asymmetric
    inputs are rejected.
    """
    s1 = np.asarray(s1, dtype=np.float64)
    s2 = np.asarray(s2, dtype=np.float64)
    if s1.shape != s2.shape or s1.ndim != 2 or s1.shape[0] != s1.shape[1]:
        raise ValueError(f"trace_sqrt_product: incompatible shapes {s1.shape}, {s2.shape}")
    for name, s in (("s1", s1), ("s2", s2)):
        dev = np.abs(s - s.T).max() if s.size else 0.0
        if dev > sym_tol:
            raise ValueError(f"trace_sqrt_product: {name} asymmetric by {dev:.3e}")

    w1, u1 = np.linalg.eigh(0.5 * (s1 + s1.T))
    w1 = _clamp_small_negatives(w1)
    root1 = (u1 * np.sqrt(w1)) @ u1.T
    inner = root1 @ (0.5 * (s2 + s2.T)) @ root1
    w = np.linalg.eigvalsh(0.5 * (inner + inner.T))
    w = _clamp_small_negatives(w)
    return float(np.sqrt(w).sum())


def _clamp_small_negatives(w: np.ndarray, tol: float = 1e-8) -> np.ndarray:
    if w.size and w.min() < -tol:
        raise ValueError(f"expected PSD spectrum, found eigenvalue {w.min():.3e}")
    return np.maximum(w, 0.0)
