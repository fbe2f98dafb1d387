"""Feedback-capacity characterizations: finite-horizon DP, stationary solve,
multiplier search, scalar closed forms, and the no-feedback comparator.

The control part (gains) comes from the Riccati module, the innovations
part from the water-fill module, and output covariances from the Lyapunov
solvers; this module wires them together and matches the power budget by
root-finding on the Lagrange multiplier.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import riccati, stability, waterfill
from .errors import ConvergenceError, InfeasibleError, PreconditionError
from .linalg import logdet_pd, sym
from .model import ChannelModel, Strategy, strategy, validate_model
from .stability import lyapunov_step, solve_lyapunov

REGIME_STABLE_NO_FEEDBACK = "stable_no_feedback"
REGIME_UNSTABLE_STABILIZED = "unstable_stabilized"
REGIME_ZERO_RATE = "zero_rate"

COST_TOL = 1e-9          # |achieved_cost - kappa| <= COST_TOL * (1 + kappa)
_MAX_BRACKET = 120
_MAX_ROOT_ITER = 300


@dataclass(frozen=True)
class FiniteHorizonSolution:
    s: float
    P_seq: tuple
    r_seq: tuple
    strategy: Strategy
    KB_seq: tuple              # K_{B_{-1}}, ..., K_{B_n}
    achieved_cost: float       # per-unit-time average
    value_nats: float          # -E<b, P(0) b> + r(0)
    meta: dict = field(default_factory=dict)


@dataclass(frozen=True)
class StationarySolution:
    s: float
    P: np.ndarray
    gain: np.ndarray
    KZ: np.ndarray
    KB: np.ndarray
    rate_nats: float
    achieved_cost: float
    regime: str
    are_residual: float
    meta: dict = field(default_factory=dict)


def information_rate(model: ChannelModel, strat: Strategy, steps: int) -> float:
    """Total directed-information value of a strategy over `steps` steps (nats)."""
    total = 0.0
    for i in range(steps):
        D = model.D(min(i, model.horizon))
        kv, _ = model.noise_for_inversion(min(i, model.horizon))
        M = D @ strat.KZ(i) @ D.T + kv
        total += 0.5 * (logdet_pd(M) - logdet_pd(kv))
    return total


# ---------------------------------------------------------------------------
# finite horizon


def finite_horizon_dp(model: ChannelModel, s: float) -> FiniteHorizonSolution:
    """Backward DP at a fixed multiplier, then the forward covariance pass.

    Backward: P(n) = s * terminal_Q, Riccati steps and the optimal gains for
    i < n (the terminal gain is zero); r(i) accumulates the per-step
    water-fill values minus trace(P(i+1) K_V).  Forward: the output second
    moments and the per-unit-time achieved cost.
    """
    validate_model(model)
    if s <= 0:
        raise PreconditionError("multiplier s must be positive")
    n = model.horizon
    p, q = model.output_dim, model.input_dim
    kappa = model.kappa

    P = [None] * (n + 1)
    gains = [None] * (n + 1)
    P[n] = sym(s * model.terminal_Q)
    gains[n] = np.zeros((q, p))
    for i in range(n - 1, -1, -1):
        Pi, blocks = riccati.riccati_backward_step(
            P[i + 1], model.C(i), model.D(i), model.Q(i), model.R(i), s)
        P[i] = Pi
        gains[i] = riccati.optimal_gain(blocks)

    KZ = [None] * (n + 1)
    r = [0.0] * (n + 1)
    kv_n, regularized = model.noise_for_inversion(n)
    kz_n, val_n = waterfill.solve(waterfill.WaterfillProblem(
        D=model.D(n), KV=kv_n, weight=sym(s * model.R(n))))
    KZ[n] = kz_n
    r[n] = val_n + s * (n + 1) * kappa
    cached = None   # reuse the water-fill on the converged Riccati plateau
    for i in range(n - 1, -1, -1):
        kv_eff, reg_i = model.noise_for_inversion(i)
        regularized = regularized or reg_i
        reusable = (
            model.time_invariant and cached is not None
            and np.linalg.norm(P[i + 1] - cached[0]) <= 1e-13 * (1.0 + np.linalg.norm(P[i + 1]))
        )
        if reusable:
            kz_i, val_i = cached[1], cached[2]
        else:
            weight = sym(s * model.R(i) + model.D(i).T @ P[i + 1] @ model.D(i))
            kz_i, val_i = waterfill.solve(waterfill.WaterfillProblem(
                D=model.D(i), KV=kv_eff, weight=weight))
            cached = (P[i + 1], kz_i, val_i)
        KZ[i] = kz_i
        r[i] = r[i + 1] + val_i - float(np.trace(P[i + 1] @ model.KV(i)))

    strat = strategy(gains, KZ)
    KB = [model.initial_second_moment()]
    total_cost = 0.0
    for i in range(n + 1):
        Kprev = KB[-1]
        g = gains[i]
        total_cost += float(
            np.trace(model.R(i) @ g @ Kprev @ g.T)
            + np.trace(model.R(i) @ KZ[i])
            + np.trace(model.Q(i) @ Kprev))
        Acl = model.C(i) + model.D(i) @ g
        KB.append(lyapunov_step(Kprev, Acl, model.D(i) @ KZ[i] @ model.D(i).T + model.KV(i)))

    value = -float(np.trace(P[0] @ model.initial_second_moment())) + r[0]
    return FiniteHorizonSolution(
        s=float(s), P_seq=tuple(P), r_seq=tuple(r), strategy=strat,
        KB_seq=tuple(KB), achieved_cost=total_cost / (n + 1), value_nats=value,
        meta={"kv_regularized": regularized},
    )


def _find_multiplier(cost_fn, kappa, tol, label):
    """Root of cost(s) = kappa by bracketing + Illinois false position.

    cost is monotone non-increasing in s; a detected violation is reported
    by raising ConvergenceError tagged "monotonicity" for the caller's
    golden-section fallback.
    """
    observations = []

    def f(s):
        c = cost_fn(s)
        observations.append((s, c))
        return c - kappa

    s0 = 1.0
    f0 = f(s0)
    if abs(f0) <= tol:
        return s0, observations
    if f0 > 0:
        lo, flo = s0, f0
        hi, fhi = s0, f0
        for _ in range(_MAX_BRACKET):
            hi *= 2.0
            fhi = f(hi)
            if abs(fhi) <= tol:
                return hi, observations
            if fhi < 0:
                break
        else:
            raise InfeasibleError(
                f"{label}: power budget {kappa} below the achievable cost floor "
                f"({kappa + fhi:.12g} at multiplier {hi:.3g})",
                kappa_stab=kappa + fhi)
    else:
        hi, fhi = s0, f0
        lo, flo = s0, f0
        for _ in range(_MAX_BRACKET):
            lo *= 0.5
            flo = f(lo)
            if abs(flo) <= tol:
                return lo, observations
            if flo > 0:
                break
        else:
            raise ConvergenceError(f"{label}: could not bracket the multiplier from below")

    # Illinois iteration on the bracket [lo, hi], flo > 0 > fhi
    side = 0
    for _ in range(_MAX_ROOT_ITER):
        mid = (lo * fhi - hi * flo) / (fhi - flo)
        if not (lo < mid < hi):
            mid = 0.5 * (lo + hi)
        fm = f(mid)
        if abs(fm) <= tol or (hi - lo) <= 1e-15 * hi:
            _assert_monotone(observations, tol, label)
            return mid, observations
        if fm > 0:
            lo, flo = mid, fm
            if side == 1:
                fhi *= 0.5
            side = 1
        else:
            hi, fhi = mid, fm
            if side == -1:
                flo *= 0.5
            side = -1
    raise ConvergenceError(f"{label}: multiplier search did not converge")


def _assert_monotone(observations, tol, label):
    obs = sorted(observations)
    for (s1, c1), (s2, c2) in zip(obs, obs[1:]):
        if c2 > c1 + 10 * tol:
            raise ConvergenceError(
                f"{label}: monotonicity violation of cost in s "
                f"(cost({s1:.6g})={c1:.9g} < cost({s2:.6g})={c2:.9g})")


def _golden_section(fun, lo, hi, iters=200):
    phi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - phi * (b - a)
    d = a + phi * (b - a)
    fc, fd = fun(c), fun(d)
    for _ in range(iters):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - phi * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + phi * (b - a)
            fd = fun(d)
        if (b - a) <= 1e-13 * (1 + b):
            break
    return 0.5 * (a + b)


def ftfi_capacity(model: ChannelModel, cost_tol: float = COST_TOL):
    """Multiplier matched to the power budget; returns (solution, capacity).

    Capacity is the per-unit-time directed-information value of the solved
    strategy.  Falls back to golden-section on the dual value if the runtime
    monotonicity assertion on cost(s) fails.
    """
    validate_model(model)
    kappa = model.kappa
    tol = cost_tol * (1.0 + kappa)

    def cost_fn(s):
        return finite_horizon_dp(model, s).achieved_cost

    try:
        s_star, _ = _find_multiplier(cost_fn, kappa, tol, "ftfi_capacity")
    except ConvergenceError as exc:
        if "monotonicity" not in str(exc):
            raise
        s_star = _golden_section(lambda s: finite_horizon_dp(model, s).value_nats, 1e-8, 1e4)
    sol = finite_horizon_dp(model, s_star)
    n = model.horizon
    capacity = information_rate(model, sol.strategy, n + 1) / (n + 1)
    return sol, capacity


# ---------------------------------------------------------------------------
# stationary / infinite horizon


def _ti_matrices(model: ChannelModel):
    if not model.time_invariant:
        raise PreconditionError("stationary solve requires a time-invariant model")
    # the running Q, never the terminal weight
    return model.C(0), model.D(0), model.KV(0), model.R(0), model.Q_seq[0]


def stationary_solve(model: ChannelModel, s: float) -> StationarySolution:
    """Stationary solution at a fixed multiplier.

    ARE -> gain -> water-fill (weight sR + D^T P D) -> output covariance from
    the algebraic Lyapunov equation -> achieved cost and rate.
    """
    validate_model(model)
    C, D, KV, R, Q = _ti_matrices(model)
    are = riccati.solve_are(C, D, Q, R, s)
    weight = sym(s * R + D.T @ are.P @ D)
    kv_eff, regularized = model.noise_for_inversion(0)
    KZ, _ = waterfill.solve(waterfill.WaterfillProblem(D=D, KV=kv_eff, weight=weight))
    Acl = are.closed_loop
    try:
        K = solve_lyapunov(Acl, D @ KZ @ D.T + KV)
    except PreconditionError as exc:
        raise PreconditionError(
            f"internal error: stabilizing gain produced an unstable closed loop ({exc})") from exc
    g = are.gain
    cost = float(np.trace(R @ g @ K @ g.T) + np.trace(R @ KZ) + np.trace(Q @ K))
    M = D @ KZ @ D.T + kv_eff
    rate = 0.5 * (logdet_pd(M) - logdet_pd(kv_eff))
    gain_zero = float(np.abs(g).max(initial=0.0)) <= 1e-9 * (1.0 + float(np.abs(C).max()))
    kz_zero = float(np.abs(KZ).max(initial=0.0)) <= 1e-12
    if gain_zero:
        regime = REGIME_STABLE_NO_FEEDBACK
    elif kz_zero:
        regime = REGIME_ZERO_RATE
    else:
        regime = REGIME_UNSTABLE_STABILIZED
    return StationarySolution(
        s=float(s), P=are.P, gain=g, KZ=KZ, KB=K, rate_nats=float(rate),
        achieved_cost=cost, regime=regime, are_residual=are.residual,
        meta={"kv_regularized": regularized, "are_iterations": are.iterations},
    )


def _stabilization_cost(model: ChannelModel):
    """Gain, output covariance and cost of the K_Z = 0 stabilizing strategy.

    The ARE solution is positively homogeneous in s, so the gain does not
    depend on s; s = 1 is used.
    """
    C, D, KV, R, Q = _ti_matrices(model)
    are = riccati.solve_are(C, D, Q, R, 1.0)
    K0 = solve_lyapunov(are.closed_loop, KV)
    cost = float(np.trace(R @ are.gain @ K0 @ are.gain.T) + np.trace(Q @ K0))
    return are, K0, cost


def kappa_min(model: ChannelModel) -> float:
    """Minimum average power of the stabilizing strategy with K_Z = 0.

    Zero when the channel needs no feedback (gain 0) and carries no output
    cost.  Reproduces (C^2-1) K_V / D^2 on scalar models.
    """
    validate_model(model)
    C = model.C(0)
    Q = _ti_matrices(model)[4]
    are, _, cost = _stabilization_cost(model)
    gain_zero = float(np.abs(are.gain).max(initial=0.0)) <= 1e-9 * (1.0 + float(np.abs(C).max()))
    if gain_zero and not Q.any():
        return 0.0
    return cost


def _zero_rate_boundary(model: ChannelModel, s_hint: float = 1.0) -> float:
    """Smallest multiplier (within bisection tolerance) whose water-fill is 0."""
    lo, hi = s_hint, s_hint
    for _ in range(_MAX_BRACKET):
        if float(np.abs(stationary_solve(model, hi).KZ).max(initial=0.0)) <= 1e-12:
            break
        hi *= 2.0
    for _ in range(_MAX_BRACKET):
        if float(np.abs(stationary_solve(model, lo).KZ).max(initial=0.0)) > 1e-12:
            break
        lo *= 0.5
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if float(np.abs(stationary_solve(model, mid).KZ).max(initial=0.0)) <= 1e-12:
            hi = mid
        else:
            lo = mid
    return hi


def feedback_capacity(model: ChannelModel, cost_tol: float = COST_TOL):
    """Infinite-horizon feedback capacity; returns (solution, capacity_nats).

    The multiplier is matched to the budget by root finding on the achieved
    cost.  When the budget cannot cover the pure stabilization cost: models
    with Q = 0 fall into the zero-rate regime (capacity 0); models with
    Q != 0 are infeasible and the stabilization cost is reported.
    """
    validate_model(model)
    kappa = model.kappa
    Q = _ti_matrices(model)[4]
    _, _, kappa_stab = _stabilization_cost(model)
    tol = cost_tol * (1.0 + kappa)

    def zero_rate():
        sol = stationary_solve(model, _zero_rate_boundary(model))
        return sol, 0.0

    if kappa < kappa_stab - tol:
        if not Q.any():
            return zero_rate()
        raise InfeasibleError(
            f"power budget {kappa} below minimum stabilization cost {kappa_stab:.12g}",
            kappa_stab=kappa_stab)

    def cost_fn(s):
        return stationary_solve(model, s).achieved_cost

    try:
        s_star, _ = _find_multiplier(cost_fn, kappa, tol, "feedback_capacity")
    except InfeasibleError:
        # budget sits on the stabilization-cost floor within tolerance
        if not Q.any():
            return zero_rate()
        raise
    except ConvergenceError as exc:
        if "monotonicity" not in str(exc):
            raise
        s_star = _golden_section(lambda s: _stationary_dual(model, s), 1e-10, 1e6)
    sol = stationary_solve(model, s_star)
    return sol, sol.rate_nats


def _stationary_dual(model: ChannelModel, s: float) -> float:
    """Dual value J(s) = rate + s*kappa - trace penalties, convex in s."""
    sol = stationary_solve(model, s)
    C, D, KV, R, Q = _ti_matrices(model)
    weight = sym(s * R + D.T @ sol.P @ D)
    return (sol.rate_nats + s * model.kappa
            - float(np.trace(weight @ sol.KZ)) - float(np.trace(sol.P @ KV)))


# ---------------------------------------------------------------------------
# scalar closed form and the no-feedback comparator


def scalar_feedback_capacity(C: float, D: float, KV: float, kappa: float,
                             R: float = 1.0, Q: float = 0.0):
    """Three-branch closed form for the time-invariant scalar channel.

    Returns (capacity_nats, gain, KZ, regime).  Derived for Q = 0; general
    scalar R > 0 is handled by exact input rescaling (which leaves the gain
    and the capacity expression unchanged and scales KZ by 1/R).
    """
    if D == 0.0:
        raise PreconditionError("D must be nonzero")
    if KV <= 0.0:
        raise PreconditionError("KV must be positive")
    if R <= 0.0:
        raise PreconditionError("R must be positive")
    if Q != 0.0:
        raise PreconditionError("closed form defined for Q = 0 only")
    if kappa < 0.0:
        raise PreconditionError("negative kappa")
    if abs(abs(C) - 1.0) <= stability.TOL_SPEC:
        raise PreconditionError("|C| within tolerance of 1: boundary indeterminacy")
    Deff = D / math.sqrt(R)      # cost normalized to A^2
    if abs(C) < 1.0:
        kz = kappa / R
        cap = 0.5 * math.log((Deff * Deff * kappa + KV) / KV)
        return cap, 0.0, kz, REGIME_STABLE_NO_FEEDBACK
    gain = -(C * C - 1.0) / (C * D)
    kmin = (C * C - 1.0) * KV / (Deff * Deff)
    if kappa < kmin:
        return 0.0, gain, 0.0, REGIME_ZERO_RATE
    kz_eff = (Deff * Deff * kappa + KV * (1.0 - C * C)) / (C * C * Deff * Deff)
    cap = 0.5 * math.log((Deff * Deff * kz_eff + KV) / KV)
    kz = kz_eff / R
    if kz_eff <= 0.0:
        return 0.0, gain, 0.0, REGIME_ZERO_RATE
    return cap, gain, kz, REGIME_UNSTABLE_STABILIZED


def scalar_kappa_min(C: float, D: float, KV: float, R: float = 1.0) -> float:
    """(C^2 - 1) K_V R / D^2 for unstable scalars, else 0."""
    if abs(C) < 1.0:
        return 0.0
    return (C * C - 1.0) * KV * R / (D * D)


def nofeedback_capacity_q0(model: ChannelModel, cost_tol: float = COST_TOL) -> float:
    """No-feedback capacity of a time-invariant Q = 0 model.

    Stable channels: water-fill under trace(R K_Z) <= kappa (bisection on
    the constraint's multiplier).  Unstable channels: 0.
    """
    validate_model(model)
    C, D, KV, R, Q = _ti_matrices(model)
    if Q.any():
        raise PreconditionError("no-feedback comparator defined for Q = 0 only")
    if not stability.spectral_radius(C).stable:
        return 0.0
    kappa = model.kappa
    if kappa <= 0.0:
        return 0.0
    kv_eff, _ = model.noise_for_inversion(0)

    def used_power(lam):
        KZ, _ = waterfill.solve(waterfill.WaterfillProblem(D=D, KV=kv_eff, weight=lam * R))
        return float(np.trace(R @ KZ))

    tol = cost_tol * (1.0 + kappa)
    lam, _ = _find_multiplier(used_power, kappa, tol, "nofeedback_capacity_q0")
    KZ, _ = waterfill.solve(waterfill.WaterfillProblem(D=D, KV=kv_eff, weight=lam * R))
    M = D @ KZ @ D.T + kv_eff
    return 0.5 * (logdet_pd(M) - logdet_pd(kv_eff))
