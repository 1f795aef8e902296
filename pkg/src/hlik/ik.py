"""Damped least-squares IK over stacked pose-tracking and smoothness residuals.

Residual stack (weights applied as elementwise square roots):

    r_ee(q)     = W_ee^1/2  * log(T_target_ee^-1  * T_fk_ee(q))      in R^6
    r_elbow(q)  = W_el^1/2  * log(T_target_el^-1  * T_fk_elbow(q))   in R^6  (optional)
    r_smooth(q) = w_sm^1/2  * (q - q_prev)                           in R^d

Each update solves (J^T J + lambda I) dq = -J^T r.  With the adaptive policy,
steps are accepted only when the squared-residual cost does not increase, so
the accepted-cost sequence is monotone non-increasing; the fixed policy
applies every step unconditionally.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .chain import JointSweep, KinematicChain
from .liegroup import (
    AngleNearPi,
    Pose,
    Twist,
    UnitQuaternion,
    compose,
    inverse,
    log_se3,
    se3_right_jacobian_inverse,
)

# Deterministic target nudge applied when a residual rotation lands within the
# ambiguity margin of pi.
_PI_PERTURBATION = UnitQuaternion.from_axis_angle((1.0, 0.0, 0.0), 1e-5)


class SingularUpdate(RuntimeError):
    """Normal-equations factorization failed even after damping escalation."""


@dataclass(frozen=True)
class ResidualWeights:
    """Nonnegative cost weights; 6-vectors are (3 translational, 3 rotational)."""

    w_ee: np.ndarray
    w_elbow: np.ndarray
    w_smooth: float

    def __post_init__(self):
        object.__setattr__(self, "w_ee", np.asarray(self.w_ee, dtype=float).reshape(6))
        object.__setattr__(self, "w_elbow", np.asarray(self.w_elbow, dtype=float).reshape(6))
        if np.any(self.w_ee < 0) or np.any(self.w_elbow < 0) or self.w_smooth < 0:
            raise ValueError("residual weights must be nonnegative")

    @staticmethod
    def default() -> "ResidualWeights":
        """W_ee = diag(50 I3, 40 I3), W_elbow = diag(20 I3, 5 I3), w_smooth = 0.35."""
        return ResidualWeights(
            w_ee=np.array([50.0, 50.0, 50.0, 40.0, 40.0, 40.0]),
            w_elbow=np.array([20.0, 20.0, 20.0, 5.0, 5.0, 5.0]),
            w_smooth=0.35,
        )

    def scaled(self, c: float) -> "ResidualWeights":
        return ResidualWeights(self.w_ee * c, self.w_elbow * c, self.w_smooth * c)


@dataclass(frozen=True)
class SolverConfig:
    max_iters: int = 100
    lambda_init: float = 1e-3
    lambda_fixed: bool = False          # paper-literal constant damping
    lambda_up: float = 10.0
    lambda_down: float = 0.5
    lambda_min: float = 1e-9
    lambda_max: float = 1e6
    step_tol: float = 1e-8              # radians, inf-norm of the applied step
    cost_tol: float = 1e-10             # relative cost decrease
    elbow_enabled: bool = False

    def __post_init__(self):
        if self.lambda_init <= 0:
            raise ValueError("lambda must be positive")
        if self.max_iters < 0:
            raise ValueError("max_iters must be >= 0")

    def for_warm_start(self, max_iters: int = 10) -> "SolverConfig":
        return replace(self, max_iters=max_iters)


@dataclass
class SolveReport:
    q_star: np.ndarray
    iters: int
    final_cost: float
    cost_ee: float
    cost_elbow: float
    cost_smooth: float
    converged: bool
    wall_time: float
    status: str = "converged"           # converged | max-iters | singular-update
    limit_active: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))
    lambda_final: float = 0.0


def _pose_residual(sweep: JointSweep, frame: str, target: Pose, sqrt_w: np.ndarray):
    """Weighted log-residual of one tracked frame and its exact Jacobian."""
    T = sweep.frame_pose(frame)
    xi = log_se3(compose(inverse(target), T))
    r = sqrt_w * xi.as_vector()

    Jgeo = sweep.frame_jacobian(frame)
    Rt = T.rotation.to_matrix().T
    Jbody = np.vstack([Rt @ Jgeo[:3], Rt @ Jgeo[3:]])
    Jr = sqrt_w[:, None] * (se3_right_jacobian_inverse(xi) @ Jbody)
    return r, Jr


def cost_ee(chain: KinematicChain, q, target_ee: Pose, w: ResidualWeights) -> np.ndarray:
    """Weighted EE pose residual; zero iff fk(q, ee) equals the target."""
    sweep = JointSweep(chain, np.asarray(q, dtype=float))
    xi = log_se3(compose(inverse(target_ee), sweep.frame_pose("ee")))
    return np.sqrt(w.w_ee) * xi.as_vector()


def cost_elbow(chain: KinematicChain, q, target_elbow: Pose, w: ResidualWeights) -> np.ndarray:
    """Weighted elbow pose residual."""
    sweep = JointSweep(chain, np.asarray(q, dtype=float))
    xi = log_se3(compose(inverse(target_elbow), sweep.frame_pose("elbow")))
    return np.sqrt(w.w_elbow) * xi.as_vector()


def cost_smooth(q_t, q_prev, w: ResidualWeights) -> np.ndarray:
    """Weighted joint-change residual."""
    q_t = np.asarray(q_t, dtype=float)
    q_prev = np.asarray(q_prev, dtype=float)
    if q_t.shape != q_prev.shape:
        raise ValueError("q_t and q_prev must have equal length")
    return math.sqrt(w.w_smooth) * (q_t - q_prev)


def stack_residuals(
    chain: KinematicChain,
    q,
    target_ee: Pose,
    target_elbow: Pose | None,
    q_prev,
    weights: ResidualWeights,
    elbow_enabled: bool,
) -> tuple[np.ndarray, np.ndarray]:
    """Stacked residual vector and its Jacobian.

    Residual length is 6 + (6 if the elbow term is enabled) + d; the elbow
    block sits between the EE and smoothness blocks.
    """
    q = np.asarray(q, dtype=float)
    d = chain.dof
    sweep = JointSweep(chain, q)

    blocks_r = []
    blocks_J = []
    r, J = _pose_residual(sweep, "ee", target_ee, np.sqrt(weights.w_ee))
    blocks_r.append(r)
    blocks_J.append(J)
    if elbow_enabled:
        if target_elbow is None:
            raise ValueError("elbow term enabled but no elbow target given")
        r, J = _pose_residual(sweep, "elbow", target_elbow, np.sqrt(weights.w_elbow))
        blocks_r.append(r)
        blocks_J.append(J)
    s = math.sqrt(weights.w_smooth)
    blocks_r.append(s * (q - np.asarray(q_prev, dtype=float)))
    blocks_J.append(s * np.eye(d))

    return np.concatenate(blocks_r), np.vstack(blocks_J)


def _perturb(p: Pose) -> Pose:
    return Pose(p.rotation.multiply(_PI_PERTURBATION), p.translation)


def solve(
    chain: KinematicChain,
    q_init,
    target_ee: Pose,
    target_elbow: Pose | None = None,
    q_prev=None,
    config: SolverConfig | None = None,
    weights: ResidualWeights | None = None,
) -> SolveReport:
    """Levenberg-Marquardt minimization of the stacked residuals.

    Joint limits are enforced by clamping after each step.  A residual
    rotation within the ambiguity margin of pi triggers one deterministic
    perturbation of the targets, keeping runs reproducible.
    """
    config = config or SolverConfig()
    weights = weights or ResidualWeights.default()
    if config.elbow_enabled and target_elbow is None:
        raise ValueError("elbow_enabled requires a target_elbow")

    t_start = time.perf_counter()
    q, _ = chain.clamp(np.asarray(q_init, dtype=float))
    q_prev = q.copy() if q_prev is None else np.asarray(q_prev, dtype=float)
    d = chain.dof
    tar_ee, tar_el = target_ee, target_elbow
    perturbs_left = 1

    def evaluate(qv):
        nonlocal tar_ee, tar_el, perturbs_left
        while True:
            try:
                return stack_residuals(chain, qv, tar_ee, tar_el, q_prev, weights, config.elbow_enabled)
            except AngleNearPi:
                if perturbs_left == 0:
                    raise
                perturbs_left -= 1
                tar_ee = _perturb(tar_ee)
                if tar_el is not None:
                    tar_el = _perturb(tar_el)

    r, J = evaluate(q)
    cost = float(r @ r)
    lam = config.lambda_init
    limit_active = np.zeros(d, dtype=bool)
    converged = False
    status = "max-iters"
    iters = 0

    for iters in range(1, config.max_iters + 1):
        g = J.T @ r
        JtJ = J.T @ J
        delta = None
        for _ in range(6):
            try:
                L = np.linalg.cholesky(JtJ + lam * np.eye(d))
                delta = np.linalg.solve(L.T, np.linalg.solve(L, -g))
                break
            except np.linalg.LinAlgError:
                lam = min(lam * config.lambda_up, config.lambda_max)
        if delta is None:
            status = "singular-update"
            break

        q_try, active = chain.clamp(q + delta)
        r_try, J_try = evaluate(q_try)
        cost_try = float(r_try @ r_try)

        if config.lambda_fixed or cost_try <= cost:
            step = q_try - q
            prev_cost = cost
            q, r, J, cost = q_try, r_try, J_try, cost_try
            limit_active = active
            if not config.lambda_fixed:
                lam = max(lam * config.lambda_down, config.lambda_min)
            step_small = float(np.max(np.abs(step))) < config.step_tol
            rel_drop = (prev_cost - cost) / max(prev_cost, 1e-300)
            if step_small or (0.0 <= rel_drop < config.cost_tol):
                converged = True
                status = "converged"
                break
        else:
            lam = min(lam * config.lambda_up, config.lambda_max)

    n_pose = 6 + (6 if config.elbow_enabled else 0)
    c_ee = float(r[:6] @ r[:6])
    c_el = float(r[6:12] @ r[6:12]) if config.elbow_enabled else 0.0
    c_sm = float(r[n_pose:] @ r[n_pose:])
    return SolveReport(
        q_star=q,
        iters=iters,
        final_cost=cost,
        cost_ee=c_ee,
        cost_elbow=c_el,
        cost_smooth=c_sm,
        converged=converged,
        wall_time=time.perf_counter() - t_start,
        status=status if not converged else "converged",
        limit_active=limit_active,
        lambda_final=lam,
    )
