"""Concave maximization over the innovations covariance on the PSD cone.

Objective (nats):

    f(K_Z) = 0.5 logdet(D K_Z D^T + K_V) - 0.5 logdet(K_V) - trace(weight K_Z)

maximized over K_Z >= 0 by projected gradient ascent with backtracking and
eigenvalue clipping.  ``weight`` aggregates sR + D^T P D from the callers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, DimensionError, PreconditionError, UnboundedError
from .linalg import logdet_pd, psd_project, sym
from .model import is_symmetric, min_eigenvalue, psd_tolerance

TOL_WF = 1e-9
MAX_ITER = 50_000
_ARMIJO = 1e-4


@dataclass(frozen=True)
class WaterfillProblem:
    D: np.ndarray        # p x q
    KV: np.ndarray       # p x p, PD
    weight: np.ndarray   # q x q, symmetric PSD

    def __post_init__(self):
        object.__setattr__(self, "D", np.atleast_2d(np.asarray(self.D, dtype=float)))
        object.__setattr__(self, "KV", np.atleast_2d(np.asarray(self.KV, dtype=float)))
        object.__setattr__(self, "weight", np.atleast_2d(np.asarray(self.weight, dtype=float)))
        p, q = self.D.shape
        if self.KV.shape != (p, p):
            raise DimensionError("KV shape mismatch")
        if self.weight.shape != (q, q):
            raise DimensionError("weight shape mismatch")
        if not is_symmetric(self.weight) or min_eigenvalue(self.weight) < -psd_tolerance(self.weight):
            raise PreconditionError("weight must be symmetric PSD")
        if min_eigenvalue(self.KV) <= 0:
            raise PreconditionError("KV must be positive definite")

    @property
    def q(self) -> int:
        return self.D.shape[1]


def objective(problem: WaterfillProblem, KZ) -> float:
    KZ = sym(np.atleast_2d(np.asarray(KZ, dtype=float)))
    M = problem.D @ KZ @ problem.D.T + problem.KV
    return 0.5 * (logdet_pd(M) - logdet_pd(problem.KV)) - float(np.trace(problem.weight @ KZ))


def gradient(problem: WaterfillProblem, KZ) -> np.ndarray:
    """0.5 D^T (D K_Z D^T + K_V)^{-1} D - weight, symmetrized."""
    KZ = sym(np.atleast_2d(np.asarray(KZ, dtype=float)))
    M = problem.D @ KZ @ problem.D.T + problem.KV
    X = np.linalg.solve(M, problem.D)
    return sym(0.5 * problem.D.T @ X - problem.weight)


def _check_bounded(problem: WaterfillProblem) -> None:
    # the supremum is +inf iff weight annihilates a direction that D does not
    w, U = np.linalg.eigh(sym(problem.weight))
    tol = psd_tolerance(problem.weight)
    null = U[:, w <= tol]
    if null.size and np.linalg.norm(problem.D @ null) > 1e-12 * (1 + np.linalg.norm(problem.D)):
        raise UnboundedError(
            "objective unbounded: weight has a null direction the channel matrix does not kill")


def _kkt_measures(problem, KZ, g):
    """Stationarity residuals at KZ: tangent-cone projected gradient norm
    and the complementarity value trace(KZ (-g)).

    The tangent projection keeps the full gradient on the positive
    eigenspace and only the ascent-feasible (PSD) part on the null space;
    unlike the unit-step gradient mapping it does not saturate at the cone
    boundary, so it stays informative for overshoot control.
    """
    w, U = np.linalg.eigh(sym(KZ))
    cut = 1e-12 * max(1.0, float(w.max(initial=0.0)))
    pos = w > cut
    B = U.T @ g @ U
    if pos.all():
        pg = float(np.linalg.norm(g))
    else:
        T = B.copy()
        null = ~pos
        Bnn = B[np.ix_(null, null)]
        wn, Un = np.linalg.eigh(sym(Bnn))
        T[np.ix_(null, null)] = (Un * np.clip(wn, 0.0, None)) @ Un.T
        pg = float(np.linalg.norm(T))
    comp = abs(float(np.tensordot(KZ, g)))
    return pg, comp


def solve(problem: WaterfillProblem, tol: float = TOL_WF, max_iter: int = MAX_ITER):
    """Maximize over the PSD cone; returns (KZ, value).

    A comfortably positive-definite weight is preconditioned away first:
    the congruence K = W^{-1/2} Y W^{-1/2} maps the cone to itself and
    turns the penalty into trace(Y), so the ascent runs on a well
    conditioned problem regardless of the weight's eigenvalue spread.
    Plain gradient ascent would otherwise need iterations proportional to
    that spread.
    """
    _check_bounded(problem)
    w, U = np.linalg.eigh(sym(problem.weight))
    wmax = float(w.max(initial=0.0))
    if wmax > 0.0 and float(w.min()) > 1e-10 * wmax:
        root = np.sqrt(w)
        Wih = (U / root) @ U.T          # W^{-1/2}
        inner = WaterfillProblem(D=problem.D @ Wih, KV=problem.KV,
                                 weight=np.eye(problem.q))
        Y, _ = _solve_core(inner, tol, max_iter)
        KZ = psd_project(Wih @ Y @ Wih)
        q = problem.q
        if np.linalg.norm(KZ) <= 1e2 * tol / max(wmax, 1.0):
            zero = np.zeros((q, q))
            if objective(problem, zero) >= objective(problem, KZ) - tol:
                return zero, 0.0
        return KZ, objective(problem, KZ)
    # singular-but-bounded weights have flat don't-care directions; the
    # plain iteration leaves them at zero
    return _solve_core(problem, tol, max_iter)


def _solve_core(problem: WaterfillProblem, tol: float, max_iter: int):
    """Projected gradient ascent with backtracking and eigenvalue clipping.

    Converged when the tangent-cone projected gradient has norm <= tol and
    the KKT complementarity trace(KZ (weight - 0.5 D^T M^{-1} D)) <= tol.
    Near the optimum the objective is flat to machine precision, so the
    line search accepts a candidate either on the Armijo condition or when
    it shrinks the projected gradient; polishing continues until the
    residual stops improving, which brings the optimizer to the float
    resolution of the stationarity condition rather than of the objective.
    """
    q = problem.q
    wnorm = float(np.linalg.norm(problem.weight, 2))
    if wnorm == 0.0:
        # bounded + zero weight means D = 0 on every direction: flat objective
        return np.zeros((q, q)), 0.0
    KZ = np.eye(q) / (2.0 * wnorm)
    f = objective(problem, KZ)
    step = 1.0 / (2.0 * wnorm)
    converged = False
    polish = 0
    floor = 1e-15 * (1.0 + wnorm)
    for _ in range(max_iter):
        g = gradient(problem, KZ)
        pgn, comp = _kkt_measures(problem, KZ, g)
        if pgn <= tol and comp <= tol:
            converged = True
            polish += 1
            if pgn <= floor or polish > 200:
                break
        accepted = False
        trial = step
        for _ in range(60):
            cand = psd_project(KZ + trial * g)
            if float(np.linalg.norm(cand - KZ)) == 0.0:
                break
            fc = objective(problem, cand)
            gap = float(np.tensordot(g, cand - KZ))
            if fc >= f + _ARMIJO * gap:
                accepted = True
                break
            # near the optimum the objective is flat to float noise and the
            # Armijo test can never pass; accept on stationarity progress
            # instead, gated so the objective does not measurably drop
            if fc >= f - 1e-13 * (1.0 + abs(f)):
                pgc, _ = _kkt_measures(problem, cand, gradient(problem, cand))
                if pgc <= (1.0 - 1e-3) * pgn:
                    accepted = True
                    break
            trial *= 0.5
        if not accepted:
            break    # no objective or stationarity progress at float resolution
        KZ, f = cand, fc
        # growing the step keeps progress fast far out (very flat problems
        # need steps ~ 1/curvature, which can be enormous; backtracking is
        # the guard, not a cap); once converged the step must not regrow or
        # the iterate bounces around the optimum
        step = trial if converged else min(trial * 1.3, 1e300)
    if not converged:
        pgn, comp = _kkt_measures(problem, KZ, gradient(problem, KZ))
        converged = pgn <= tol and comp <= tol
    if not converged:
        raise ConvergenceError("projected gradient ascent did not reach tolerance")
    KZ = psd_project(KZ)
    # snap a numerically-dead optimizer to the exact cone vertex
    if np.linalg.norm(KZ) <= 1e2 * tol / max(wnorm, 1.0):
        zero = np.zeros((q, q))
        if objective(problem, zero) >= f - tol:
            return zero, objective(problem, zero)
    return KZ, objective(problem, KZ)


def scalar_solve(D: float, KV: float, weight: float):
    """Closed-form scalar optimum: kz = max(0, 1/(2 weight) - KV/D^2).

    Serves as the independent oracle for ``solve`` on 1x1 problems.  The
    optimum is +inf when weight = 0 (and D != 0).
    """
    if KV <= 0:
        raise PreconditionError("KV must be positive")
    if weight < 0:
        raise PreconditionError("weight must be nonnegative")
    if D == 0.0:
        if weight == 0.0:
            raise PreconditionError("D = 0 with zero weight: objective identically 0, no optimum scale")
        return 0.0, 0.0
    if weight == 0.0:
        return math.inf, math.inf
    kz = max(0.0, 1.0 / (2.0 * weight) - KV / (D * D))
    value = 0.5 * math.log((D * D * kz + KV) / KV) - weight * kz
    return kz, value
