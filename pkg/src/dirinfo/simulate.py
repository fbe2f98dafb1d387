"""Monte Carlo validation of solved strategies.

Closed-loop sampling uses a counter-based generator (numpy's Philox keyed by
the trace seed) producing uniforms that are pushed through the inverse normal
CDF and the symmetric square root of the covariance, so the uniform-variable
realization of the innovations is literally the sampling path.

Draw order per trace (fixed, part of the determinism contract): the initial
output (only if its covariance is nonzero), then all innovation uniforms as a
(steps, q) block, then all noise uniforms as a (steps, p) block.
"""

from __future__ import annotations

import concurrent.futures
import io
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, PreconditionError
from .linalg import sym_sqrt
from .model import ChannelModel, Strategy, validate_model

_SQRT2 = math.sqrt(2.0)
_SQRT_2PI = math.sqrt(2.0 * math.pi)

# Acklam's rational approximation of the standard normal quantile,
# refined by one Newton step on Phi(x) = 0.5*erfc(-x/sqrt(2)).
_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
      1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
      6.680131188771972e+01, -1.328068155288572e+01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
      -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
      3.754408661907416e+00)
_P_LOW = 0.02425


def _quantile_scalar(p: float) -> float:
    if not 0.0 < p < 1.0:
        raise PreconditionError("uniform sample on the boundary of (0, 1)")
    if p > 0.5:
        return -_quantile_scalar(1.0 - p)
    if p < _P_LOW:
        z = math.sqrt(-2.0 * math.log(p))
        x = ((((((_C[0] * z + _C[1]) * z + _C[2]) * z + _C[3]) * z + _C[4]) * z + _C[5])
             / ((((_D[0] * z + _D[1]) * z + _D[2]) * z + _D[3]) * z + 1.0))
    else:
        z = p - 0.5
        r = z * z
        x = (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * z \
            / (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0)
    err = 0.5 * math.erfc(-x / _SQRT2) - p
    return x - err * _SQRT_2PI * math.exp(0.5 * x * x)


_quantile_vec = np.vectorize(_quantile_scalar, otypes=[float])


def normal_quantile(u):
    """Inverse standard normal CDF, |abs error| well below 1e-9.

    Accepts scalars or arrays strictly inside (0, 1).
    """
    if np.isscalar(u):
        return _quantile_scalar(float(u))
    u = np.asarray(u, dtype=float)
    if u.size and (u.min() <= 0.0 or u.max() >= 1.0):
        raise PreconditionError("uniform sample on the boundary of (0, 1)")
    return _quantile_vec(u)


def innovation_from_uniform(u, KZ) -> np.ndarray:
    """Map uniforms in (0,1)^q to an N(0, K_Z) sample.

    Inverse-CDF per coordinate, then the symmetric square root of K_Z.
    """
    u = np.atleast_1d(np.asarray(u, dtype=float))
    KZ = np.atleast_2d(np.asarray(KZ, dtype=float))
    if u.shape[0] != KZ.shape[0]:
        raise DimensionError("uniform vector length does not match covariance")
    return sym_sqrt(KZ) @ normal_quantile(u)


@dataclass(frozen=True)
class SimulationTrace:
    seed: int
    steps: int
    B_path: np.ndarray              # (steps, p)
    A_path: np.ndarray              # (steps, q)
    info_density_path: np.ndarray   # (steps,)
    cost_path: np.ndarray           # (steps,)
    running_rate: np.ndarray        # (steps,)
    meta: dict = field(default_factory=dict)

    @property
    def terminal_rate(self) -> float:
        return float(self.running_rate[-1])

    @property
    def terminal_cost(self) -> float:
        return float(self.cost_path.mean())


def _gaussian_logpdf_terms(cov: np.ndarray):
    sign, ld = np.linalg.slogdet(cov)
    if sign <= 0:
        raise PreconditionError("singular covariance in density evaluation")
    return np.linalg.inv(cov), float(ld)


def info_density_step(b_prev, a, b, C, D, KV, gain, KZ) -> float:
    """Per-step directed-information density (nats).

    log N(b; C b_prev + D a, K_V) - log N(b; (C + D gain) b_prev, D K_Z D^T + K_V).
    """
    b_prev = np.atleast_1d(np.asarray(b_prev, dtype=float))
    a = np.atleast_1d(np.asarray(a, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    C = np.atleast_2d(np.asarray(C, dtype=float))
    D = np.atleast_2d(np.asarray(D, dtype=float))
    KV = np.atleast_2d(np.asarray(KV, dtype=float))
    gain = np.atleast_2d(np.asarray(gain, dtype=float))
    KZ = np.atleast_2d(np.asarray(KZ, dtype=float))
    KVi, ldKV = _gaussian_logpdf_terms(KV)
    Mbig = D @ KZ @ D.T + KV
    Mi, ldM = _gaussian_logpdf_terms(Mbig)
    r1 = b - C @ b_prev - D @ a
    # same association as r1 so the densities cancel exactly when a = gain b
    r2 = b - C @ b_prev - D @ (gain @ b_prev)
    return float(-0.5 * (ldKV + r1 @ KVi @ r1) + 0.5 * (ldM + r2 @ Mi @ r2))


def _draw_noise(model: ChannelModel, strat: Strategy, steps: int, seed: int):
    """Deterministic noise block for one trace; the documented draw order."""
    gen = np.random.Generator(np.random.Philox(key=seed))
    p, q = model.output_dim, model.input_dim
    if model.initial_cov.any():
        u0 = gen.random(p)
        b0 = model.initial_mean + innovation_from_uniform(u0, model.initial_cov)
    else:
        b0 = model.initial_mean.copy()
    Uz = gen.random((steps, q))
    Uv = gen.random((steps, p))
    if len(strat.innovations) == 1:
        Z = normal_quantile(Uz) @ sym_sqrt(strat.KZ(0)).T
    else:
        Z = np.empty((steps, q))
        for i in range(steps):
            Z[i] = innovation_from_uniform(Uz[i], strat.KZ(i))
    if model.time_invariant:
        V = normal_quantile(Uv) @ sym_sqrt(model.KV(0)).T
    else:
        V = np.empty((steps, p))
        for i in range(steps):
            V[i] = innovation_from_uniform(Uv[i], model.KV(i))
    return b0, Z, V


def sample_trajectory(model: ChannelModel, strat: Strategy, steps: int, seed: int) -> SimulationTrace:
    """Simulate the closed loop for `steps` steps; deterministic given seed."""
    validate_model(model)
    if steps < 1:
        raise PreconditionError("steps must be >= 1")
    if not model.time_invariant and steps > model.horizon + 1:
        raise PreconditionError("steps exceed the horizon of a time-varying model")
    if len(strat.gains) > 1 and strat.steps < steps:
        raise DimensionError("strategy shorter than requested steps")
    p, q = model.output_dim, model.input_dim

    b0, Z, V = _draw_noise(model, strat, steps, seed)
    B = np.empty((steps, p))
    A = np.empty((steps, q))
    stationary = len(strat.gains) == 1 and model.time_invariant
    if stationary and p == 1 and q == 1:
        # plain-float recursion; each op is the same IEEE operation the 1x1
        # matrix path performs, so the trace is identical either way
        g = float(strat.gain(0)[0, 0])
        Cs = float(model.C(0)[0, 0])
        Ds = float(model.D(0)[0, 0])
        b = float(b0[0])
        Zs = Z[:, 0].tolist()
        Vs = V[:, 0].tolist()
        Al = A[:, 0]
        Bl = B[:, 0]
        for i in range(steps):
            a = g * b + Zs[i]
            b = Cs * b + Ds * a + Vs[i]
            Al[i] = a
            Bl[i] = b
    elif stationary:
        g, C, D = strat.gain(0), model.C(0), model.D(0)
        b = b0
        for i in range(steps):
            a = g @ b + Z[i]
            b = C @ b + D @ a + V[i]
            A[i] = a
            B[i] = b
    else:
        b = b0
        for i in range(steps):
            a = strat.gain(i) @ b + Z[i]
            b = model.C(i) @ b + model.D(i) @ a + V[i]
            A[i] = a
            B[i] = b

    Bprev = np.vstack([b0, B[:-1]])
    info = np.empty(steps)
    cost = np.empty(steps)
    if stationary:
        C, D = model.C(0), model.D(0)
        kv_eff, regularized = model.noise_for_inversion(0)
        KVi, ldKV = _gaussian_logpdf_terms(kv_eff)
        Mbig = D @ strat.KZ(0) @ D.T + kv_eff
        Mi, ldM = _gaussian_logpdf_terms(Mbig)
        Acl = C + D @ strat.gain(0)
        R1 = B - Bprev @ C.T - A @ D.T
        R2 = B - Bprev @ Acl.T
        info[:] = (-0.5 * (ldKV + np.einsum("ij,jk,ik->i", R1, KVi, R1))
                   + 0.5 * (ldM + np.einsum("ij,jk,ik->i", R2, Mi, R2)))
        Rm, Qm = model.R(0), model.Q_seq[0]
        cost[:] = (np.einsum("ij,jk,ik->i", A, Rm, A)
                   + np.einsum("ij,jk,ik->i", Bprev, Qm, Bprev))
    else:
        regularized = False
        for i in range(steps):
            kv_eff, reg = model.noise_for_inversion(i)
            regularized = regularized or reg
            info[i] = info_density_step(Bprev[i], A[i], B[i], model.C(i), model.D(i),
                                        kv_eff, strat.gain(i), strat.KZ(i))
            cost[i] = float(A[i] @ model.R(i) @ A[i] + Bprev[i] @ model.Q(i) @ Bprev[i])

    running = np.cumsum(info) / np.arange(1, steps + 1)
    return SimulationTrace(
        seed=int(seed), steps=int(steps), B_path=B, A_path=A,
        info_density_path=info, cost_path=cost, running_rate=running,
        meta={"kv_regularized": bool(regularized)},
    )


def max_threads() -> int:
    value = os.environ.get("DIRINFO_THREADS", "")
    try:
        n = int(value)
    except ValueError:
        n = 0
    return max(1, n) if n else max(1, os.cpu_count() or 1)


def simulate_batch(model: ChannelModel, strat: Strategy, steps: int, seeds) -> list:
    """Independent traces for each seed; fan-out capped by DIRINFO_THREADS."""
    seeds = list(seeds)
    workers = min(max_threads(), max(1, len(seeds)))
    if workers == 1 or len(seeds) == 1:
        return [sample_trajectory(model, strat, steps, s) for s in seeds]
    with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda s: sample_trajectory(model, strat, steps, s), seeds))


@dataclass(frozen=True)
class StabilityReport:
    n_traces: int
    steps: int
    epsilon: float
    cost_epsilon: float
    rate_violation_fraction: float
    cost_violation_fraction: float
    violation_fraction: float       # either target missed
    rate_deviations: np.ndarray
    cost_deviations: np.ndarray
    rate_histogram: tuple           # (counts, bin_edges)
    cost_histogram: tuple


def stability_report(traces, target_rate: float, target_cost: float,
                     epsilon: float, cost_epsilon: float = None) -> StabilityReport:
    """Empirical check of the information/cost stability conditions.

    Fraction of traces whose terminal time-averaged information density
    (resp. cost) deviates from its target by more than epsilon; a passing
    configuration drives both fractions to zero as steps grow.
    """
    traces = list(traces)
    if len(traces) < 2:
        raise PreconditionError("need at least 2 traces")
    steps = traces[0].steps
    if steps < 1000:
        raise PreconditionError("traces shorter than 10^3 steps are too noisy to certify")
    if cost_epsilon is None:
        cost_epsilon = epsilon
    rate_dev = np.array([t.terminal_rate - target_rate for t in traces])
    cost_dev = np.array([t.terminal_cost - target_cost for t in traces])
    rate_bad = np.abs(rate_dev) > epsilon
    cost_bad = np.abs(cost_dev) > cost_epsilon
    return StabilityReport(
        n_traces=len(traces), steps=steps,
        epsilon=float(epsilon), cost_epsilon=float(cost_epsilon),
        rate_violation_fraction=float(rate_bad.mean()),
        cost_violation_fraction=float(cost_bad.mean()),
        violation_fraction=float((rate_bad | cost_bad).mean()),
        rate_deviations=rate_dev, cost_deviations=cost_dev,
        rate_histogram=np.histogram(rate_dev, bins=16),
        cost_histogram=np.histogram(cost_dev, bins=16),
    )


def trace_to_csv(trace: SimulationTrace) -> str:
    """Plot-ready CSV: step, b..., a..., info_density, cost, running_rate."""
    p = trace.B_path.shape[1]
    q = trace.A_path.shape[1]
    buf = io.StringIO()
    header = (["step"] + [f"b{j}" for j in range(p)] + [f"a{j}" for j in range(q)]
              + ["info_density", "cost", "running_rate"])
    buf.write(",".join(header) + "\n")
    for i in range(trace.steps):
        row = [str(i)]
        row += [f"{x:.12g}" for x in trace.B_path[i]]
        row += [f"{x:.12g}" for x in trace.A_path[i]]
        row += [f"{trace.info_density_path[i]:.12g}", f"{trace.cost_path[i]:.12g}",
                f"{trace.running_rate[i]:.12g}"]
        buf.write(",".join(row) + "\n")
    return buf.getvalue()
