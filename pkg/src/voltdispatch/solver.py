"""First-order solvers for the dispatch problems.

Everything here leans on one structural fact: g(Q) is log-concave with
convex superlevel sets, so local methods reach global optima.

* ``max_probability``: projected gradient ascent on log g over the
  reactive-power box, with Barzilai-Borwein steps and a backtracking
  line search.
* ``solve_joint``: minimum-norm dispatch subject to g(Q) >= alpha.  An
  exterior-point pass minimizes ||Q||^2 + mu * max(0, log alpha - log g)^2
  over the box while mu climbs a fixed schedule, then a bisection along
  the segment toward the probability maximizer (or toward the origin)
  lands the iterate on the constraint surface.  Infeasibility is
  certified by the maximum of g falling short of alpha.
* ``solve_per_bus``: the per-bus baseline.  Each marginal constraint is
  converted exactly into an interval of admissible voltage means, i.e. a
  slab in Q-space, and the minimum-norm point of slabs-plus-box is found
  by Dykstra's alternating projections.  The reported figure of merit is
  the joint probability at the per-bus optimum, which is what makes the
  two frameworks comparable.

All probability evaluations run at a fixed internal randomization seed,
so every solve is deterministic given its inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .chance import (
    DispatchProblem,
    StandardizedBox,
    joint_probability,
    joint_probability_gradient,
    per_bus_mean_interval,
    standardize,
)

_LOG_FLOOR = 1e-300
_GRAD_TARGET_FLOOR = 5e-4
_MU_SCHEDULE = (1.0, 1e1, 1e2, 1e3, 1e4, 1e5, 1e6)
_ARMIJO = 1e-4
_MAX_BACKTRACKS = 30

_DYKSTRA_MAX_CYCLES = 20000
_DYKSTRA_FEAS_TOL = 1e-8


class SolveStatus(Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    MAX_ITERATIONS = "MaxIterations"


@dataclass(frozen=True)
class SolverConfig:
    """Tolerances and budgets; all strictly positive."""

    constraint_tol: float = 1e-4
    step_init: float = 1.0
    max_iter: int = 600
    prob_target_error: float = 1e-4

    def __post_init__(self):
        if min(self.constraint_tol, self.step_init, self.prob_target_error) <= 0:
            raise ValueError("solver tolerances must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")


@dataclass(frozen=True)
class SolveResult:
    """Outcome of a solve; ``trace`` rows are (iteration, objective, g)."""

    q_star: np.ndarray
    achieved_g: float | None
    objective: float
    status: SolveStatus
    iterations: int
    trace: tuple = field(repr=False, default=())


@dataclass(frozen=True)
class ComparisonRow:
    framework: str
    tolerance: float
    status: SolveStatus
    joint_g: float | None


def _clip(Q, prob: DispatchProblem) -> np.ndarray:
    return np.clip(Q, prob.q_lo, prob.q_hi)


def _center_seed(box: StandardizedBox, prob: DispatchProblem) -> np.ndarray:
    """Box projection of the Q that centers the standardized band."""
    target = np.full(box.n, 0.5) - box.b
    return _clip(np.linalg.solve(box.A, target), prob)


def _log_g(box, Q, target):
    est = joint_probability(box, Q, target)
    return math.log(max(est.value, _LOG_FLOOR)), est


def max_probability(prob: DispatchProblem, cfg: SolverConfig, q0=None):
    """Global maximizer of g over the reactive box: (Q, g_max).

    Projected gradient ascent on log g; by log-concavity the returned
    stationary point is the global maximum up to tolerance.
    """
    box = standardize(prob)
    return _max_probability(box, prob, cfg, q0)


def _max_probability(box, prob, cfg, q0=None):
    grad_target = max(cfg.prob_target_error, _GRAD_TARGET_FLOOR)
    Q = _center_seed(box, prob) if q0 is None else _clip(np.asarray(q0, float), prob)
    logg, est = _log_g(box, Q, cfg.prob_target_error)
    step = cfg.step_init
    prev_Q = prev_G = None
    for _ in range(cfg.max_iter):
        grad = joint_probability_gradient(box, Q, grad_target)
        G = grad / max(est.value, _LOG_FLOOR)
        if np.linalg.norm(_clip(Q + G, prob) - Q) <= cfg.constraint_tol:
            break
        if prev_Q is not None:
            s = Q - prev_Q
            y = G - prev_G
            sy = -float(s @ y)  # ascent: curvature sign flipped
            if sy > 1e-14:
                step = min(max(float(s @ s) / sy, 1e-6), 1e3)
        prev_Q, prev_G = Q, G
        t = step
        for _ in range(_MAX_BACKTRACKS):
            Qn = _clip(Q + t * G, prob)
            logg_n, est_n = _log_g(box, Qn, cfg.prob_target_error)
            if logg_n >= logg + _ARMIJO * float(G @ (Qn - Q)):
                break
            t *= 0.5
        else:
            break
        if np.allclose(Qn, Q):
            break
        Q, logg, est = Qn, logg_n, est_n
    return Q, est.value


def _bisect_on_segment(box, prob, cfg, q_from, q_to, g_from, g_to, alpha):
    """Point on [q_from, q_to] with g = alpha (g values bracket alpha)."""
    lo_t, hi_t = 0.0, 1.0
    increasing = g_to >= g_from
    for _ in range(60):
        mid = 0.5 * (lo_t + hi_t)
        Qm = q_from + mid * (q_to - q_from)
        g_mid = joint_probability(box, Qm, cfg.prob_target_error).value
        if abs(g_mid - alpha) <= 0.25 * cfg.constraint_tol:
            return Qm, g_mid
        if (g_mid < alpha) == increasing:
            lo_t = mid
        else:
            hi_t = mid
    Qm = q_from + 0.5 * (lo_t + hi_t) * (q_to - q_from)
    return Qm, joint_probability(box, Qm, cfg.prob_target_error).value


def solve_joint(prob: DispatchProblem, cfg: SolverConfig | None = None, q0=None) -> SolveResult:
    """Minimum-||Q||2 dispatch with the joint band probability >= alpha.

    Returns Infeasible with the max-probability certificate when even
    the best achievable g falls short of alpha by more than three times
    the probability target error.
    """
    if prob.alpha is None:
        raise ValueError("solve_joint needs prob.alpha")
    cfg = cfg or SolverConfig()
    alpha = prob.alpha
    box = standardize(prob)
    trace: list[tuple[int, float, float]] = []
    it_count = 0

    zero_in_box = bool(np.all(prob.q_lo <= 0.0) and np.all(prob.q_hi >= 0.0))
    if zero_in_box:
        g0_est = joint_probability(box, np.zeros(box.n), cfg.prob_target_error)
        if g0_est.value >= alpha:
            return SolveResult(
                q_star=np.zeros(box.n),
                achieved_g=g0_est.value,
                objective=0.0,
                status=SolveStatus.OPTIMAL,
                iterations=0,
                trace=((0, 0.0, g0_est.value),),
            )
        g_origin = g0_est.value
    else:
        g_origin = None

    q_max, g_max = _max_probability(box, prob, cfg, q0=q0)
    if g_max < alpha - 3.0 * cfg.prob_target_error:
        return SolveResult(
            q_star=q_max,
            achieved_g=g_max,
            objective=float(np.linalg.norm(q_max)),
            status=SolveStatus.INFEASIBLE,
            iterations=0,
            trace=((0, float(np.linalg.norm(q_max)), g_max),),
        )
    if g_max < alpha:
        # within estimator noise of alpha: cannot certify either way
        return SolveResult(
            q_star=q_max,
            achieved_g=g_max,
            objective=float(np.linalg.norm(q_max)),
            status=SolveStatus.MAX_ITERATIONS,
            iterations=0,
            trace=((0, float(np.linalg.norm(q_max)), g_max),),
        )

    # start on the constraint surface between the (infeasible) origin
    # and the probability maximizer
    anchor = _clip(np.zeros(box.n), prob)
    g_anchor = (
        g_origin
        if (zero_in_box and g_origin is not None)
        else joint_probability(box, anchor, cfg.prob_target_error).value
    )
    if g_anchor < alpha:
        Q, g_cur = _bisect_on_segment(box, prob, cfg, anchor, q_max, g_anchor, g_max, alpha)
    else:
        Q, g_cur = anchor, g_anchor

    grad_target = max(cfg.prob_target_error, _GRAD_TARGET_FLOOR)
    log_alpha = math.log(alpha)

    def merit(Qv, mu):
        logg, est = _log_g(box, Qv, cfg.prob_target_error)
        v = max(0.0, log_alpha - logg)
        return float(Qv @ Qv) + mu * v * v, v, est

    budget_left = cfg.max_iter
    for mu in _MU_SCHEDULE:
        inner_tol = max(0.5 * cfg.constraint_tol, 1e-2 / math.sqrt(mu))
        m_cur, v_cur, est_cur = merit(Q, mu)
        step = cfg.step_init
        prev_Q = prev_grad = None
        while budget_left > 0:
            budget_left -= 1
            it_count += 1
            if v_cur > 0.0:
                grad_g = joint_probability_gradient(box, Q, grad_target)
                grad = 2.0 * Q - 2.0 * mu * v_cur * grad_g / max(est_cur.value, _LOG_FLOOR)
            else:
                grad = 2.0 * Q
            trace.append((it_count, float(np.linalg.norm(Q)), est_cur.value))
            if np.linalg.norm(_clip(Q - grad, prob) - Q) <= inner_tol:
                break
            if prev_Q is not None:
                s = Q - prev_Q
                y = grad - prev_grad
                sy = float(s @ y)
                if sy > 1e-14:
                    step = min(max(float(s @ s) / sy, 1e-8), 1e3)
            prev_Q, prev_grad = Q, grad
            t = step
            accepted = False
            for _ in range(_MAX_BACKTRACKS):
                Qn = _clip(Q - t * grad, prob)
                if np.allclose(Qn, Q):
                    break
                m_new, v_new, est_new = merit(Qn, mu)
                if m_new <= m_cur + _ARMIJO * float(grad @ (Qn - Q)):
                    accepted = True
                    break
                t *= 0.5
            if not accepted:
                break
            Q, m_cur, v_cur, est_cur = Qn, m_new, v_new, est_new
        if budget_left <= 0:
            break

    g_cur = joint_probability(box, Q, cfg.prob_target_error).value
    # land on the constraint surface
    if g_cur < alpha - 0.5 * cfg.constraint_tol:
        Q, g_cur = _bisect_on_segment(box, prob, cfg, Q, q_max, g_cur, g_max, alpha)
    elif g_cur > alpha + 0.5 * cfg.constraint_tol and zero_in_box and g_origin < alpha:
        Q, g_cur = _bisect_on_segment(
            box, prob, cfg, Q, np.zeros(box.n), g_cur, g_origin, alpha
        )

    objective = float(np.linalg.norm(Q))
    trace.append((it_count, objective, g_cur))
    ok = g_cur >= alpha - cfg.constraint_tol
    status = SolveStatus.OPTIMAL if ok else SolveStatus.MAX_ITERATIONS
    return SolveResult(
        q_star=Q,
        achieved_g=g_cur,
        objective=objective,
        status=status,
        iterations=it_count,
        trace=tuple(trace),
    )


def _dykstra_min_norm(prob: DispatchProblem, rows, lows, highs):
    """Project the origin onto {box} intersect {lows <= rows @ Q <= highs}.

    Returns (point, converged, cycles).  ``converged`` is False when the
    alternating projections keep a persistent gap, which for closed
    convex sets means the intersection is empty.
    """
    n = prob.n
    n_sets = len(rows) + 1
    sq_norms = [float(a @ a) for a in rows]
    x = np.zeros(n)
    corrections = [np.zeros(n) for _ in range(n_sets)]
    for cycle in range(_DYKSTRA_MAX_CYCLES):
        x_prev = x.copy()
        for k in range(n_sets):
            y = x + corrections[k]
            if k == 0:
                x_new = _clip(y, prob)
            else:
                a = rows[k - 1]
                t = float(a @ y)
                tc = min(max(t, lows[k - 1]), highs[k - 1])
                x_new = y + a * ((tc - t) / sq_norms[k - 1])
            corrections[k] = y - x_new
            x = x_new
        if np.max(np.abs(x - x_prev)) < 1e-13 * (1.0 + np.max(np.abs(x))):
            break
    resid = max(
        float(np.max(np.maximum(prob.q_lo - x, 0.0), initial=0.0)),
        float(np.max(np.maximum(x - prob.q_hi, 0.0), initial=0.0)),
    )
    for a, lo_v, hi_v in zip(rows, lows, highs):
        t = float(a @ x)
        resid = max(resid, lo_v - t, t - hi_v)
    return x, resid <= _DYKSTRA_FEAS_TOL, cycle + 1


def solve_per_bus(prob: DispatchProblem, cfg: SolverConfig | None = None) -> SolveResult:
    """Per-bus baseline at tolerance eta, reported against the joint g.

    Each marginal constraint becomes an exact interval on the bus
    voltage mean; the minimum-norm Q in the resulting slab/box
    intersection comes from Dykstra's alternating projections.
    """
    if prob.eta is None:
        raise ValueError("solve_per_bus needs prob.eta")
    cfg = cfg or SolverConfig()
    n = prob.n
    rp = prob.sens.R @ prob.p
    rows, lows, highs = [], [], []
    for i in range(1, n + 1):
        interval = per_bus_mean_interval(prob, i, prob.eta)
        if interval is None:
            return SolveResult(
                q_star=np.zeros(n),
                achieved_g=None,
                objective=math.nan,
                status=SolveStatus.INFEASIBLE,
                iterations=0,
                trace=((0, math.nan, math.nan),),
            )
        m_lo, m_hi = interval
        rows.append(prob.sens.X[i - 1].copy())
        lows.append(m_lo - rp[i - 1])
        highs.append(m_hi - rp[i - 1])

    q_star, feasible, cycles = _dykstra_min_norm(prob, rows, lows, highs)
    if not feasible:
        return SolveResult(
            q_star=q_star,
            achieved_g=None,
            objective=math.nan,
            status=SolveStatus.INFEASIBLE,
            iterations=cycles,
            trace=((cycles, math.nan, math.nan),),
        )
    box = standardize(prob)
    g_est = joint_probability(box, q_star, cfg.prob_target_error)
    objective = float(np.linalg.norm(q_star))
    return SolveResult(
        q_star=q_star,
        achieved_g=g_est.value,
        objective=objective,
        status=SolveStatus.OPTIMAL,
        iterations=cycles,
        trace=((cycles, objective, g_est.value),),
    )


def compare_frameworks(prob: DispatchProblem, alphas, etas, cfg: SolverConfig | None = None):
    """One row per framework/tolerance, in the given order."""
    cfg = cfg or SolverConfig()
    out = []
    for a in alphas:
        res = solve_joint(replace(prob, alpha=float(a)), cfg)
        out.append(ComparisonRow("joint", float(a), res.status, res.achieved_g))
    for e in etas:
        res = solve_per_bus(replace(prob, eta=float(e)), cfg)
        out.append(ComparisonRow("per-bus", float(e), res.status, res.achieved_g))
    return out
