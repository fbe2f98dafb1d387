"""Linear-systems substrate: spectra, PBH tests, discrete Lyapunov equations."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, PreconditionError

TOL_SPEC = 1e-9          # stability margin on the unit circle
TOL_RANK = 1e-9          # relative (to largest singular value) rank cutoff
TOL_LYAP = 1e-10         # residual tolerance for the algebraic Lyapunov solve


@dataclass(frozen=True)
class SpectrumReport:
    eigenvalues: tuple
    spectral_radius: float
    stable: bool


def _square(A) -> np.ndarray:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.shape[0] != A.shape[1]:
        raise DimensionError(f"matrix is {A.shape}, expected square")
    return A


def spectral_radius(A) -> SpectrumReport:
    """Eigenvalues, spectral radius, and the open-unit-disc stability flag."""
    A = _square(A)
    eigs = np.linalg.eigvals(A)
    radius = float(np.abs(eigs).max()) if eigs.size else 0.0
    return SpectrumReport(
        eigenvalues=tuple(complex(e) for e in eigs),
        spectral_radius=radius,
        stable=radius < 1.0 - TOL_SPEC,
    )


def _rank(M: np.ndarray) -> int:
    sv = np.linalg.svd(M, compute_uv=False)
    if sv.size == 0:
        return 0
    return int((sv > TOL_RANK * sv[0]).sum())


def is_controllable(A, B) -> bool:
    """Full row rank of [B, AB, ..., A^{n-1}B] (numerical rank via SVD)."""
    A = _square(A)
    B = np.atleast_2d(np.asarray(B, dtype=float))
    n = A.shape[0]
    if B.shape[0] != n:
        raise DimensionError(f"B has {B.shape[0]} rows, expected {n}")
    blocks = [B]
    for _ in range(n - 1):
        blocks.append(A @ blocks[-1])
    return _rank(np.hstack(blocks)) == n


def is_observable(C, A) -> bool:
    """Dual of controllability: (C, A) observable iff (A^T, C^T) controllable."""
    A = _square(A)
    C = np.atleast_2d(np.asarray(C, dtype=float))
    if C.shape[1] != A.shape[0]:
        raise DimensionError(f"C has {C.shape[1]} columns, expected {A.shape[0]}")
    return is_controllable(A.T, C.T)


def is_stabilizable(A, B) -> bool:
    """PBH test: rank [A - lam*I, B] = n at every eigenvalue with |lam| >= 1."""
    A = _square(A)
    B = np.atleast_2d(np.asarray(B, dtype=float))
    n = A.shape[0]
    if B.shape[0] != n:
        raise DimensionError(f"B has {B.shape[0]} rows, expected {n}")
    for lam in np.linalg.eigvals(A):
        if abs(lam) < 1.0 - TOL_SPEC:
            continue
        pencil = np.hstack([A - lam * np.eye(n), B]).astype(complex)
        if _rank(pencil) < n:
            return False
    return True


def is_detectable(G, A) -> bool:
    """Dual of stabilizability: (G, A) detectable iff (A^T, G^T) stabilizable."""
    A = _square(A)
    G = np.atleast_2d(np.asarray(G, dtype=float))
    if G.shape[1] != A.shape[0]:
        raise DimensionError(f"G has {G.shape[1]} columns, expected {A.shape[0]}")
    return is_stabilizable(A.T, G.T)


def lyapunov_step(Kprev, Acl, W) -> np.ndarray:
    """One step of K <- Acl K Acl^T + W, symmetrized."""
    Kprev = np.atleast_2d(np.asarray(Kprev, dtype=float))
    Acl = _square(Acl)
    W = np.atleast_2d(np.asarray(W, dtype=float))
    if Kprev.shape != Acl.shape or W.shape != Acl.shape:
        raise DimensionError("lyapunov_step: shape mismatch")
    K = Acl @ Kprev @ Acl.T + W
    return 0.5 * (K + K.T)


def _vech_indices(p):
    return np.triu_indices(p)


def solve_lyapunov(Acl, W) -> np.ndarray:
    """Unique solution of Sigma = Acl Sigma Acl^T + W for exponentially stable Acl.

    Solves the equivalent linear system over the p(p+1)/2 independent entries
    of the symmetric unknown.  Raises PreconditionError when Acl is not
    exponentially stable (the limit need not exist otherwise).
    """
    Acl = _square(Acl)
    W = np.atleast_2d(np.asarray(W, dtype=float))
    p = Acl.shape[0]
    if W.shape != (p, p):
        raise DimensionError("W shape mismatch")
    rep = spectral_radius(Acl)
    if not rep.stable:
        raise PreconditionError(
            f"closed loop not exponentially stable (spectral radius {rep.spectral_radius:.6g})")
    rows, cols = _vech_indices(p)
    m = rows.size
    M = np.empty((m, m))
    for k in range(m):
        E = np.zeros((p, p))
        E[rows[k], cols[k]] = 1.0
        E[cols[k], rows[k]] = 1.0
        img = E - Acl @ E @ Acl.T
        M[:, k] = img[rows, cols]
    Wsym = 0.5 * (W + W.T)
    x = np.linalg.solve(M, Wsym[rows, cols])
    Sigma = np.zeros((p, p))
    Sigma[rows, cols] = x
    Sigma[cols, rows] = x
    resid = np.linalg.norm(Sigma - Acl @ Sigma @ Acl.T - Wsym)
    if resid > TOL_LYAP * (1.0 + np.linalg.norm(Wsym)):
        raise PreconditionError(f"Lyapunov solve residual too large ({resid:.3e})")
    return Sigma
