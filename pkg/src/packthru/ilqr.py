"""Iterative LQR trajectory optimizer.

Rollout, finite-difference dynamics linearization on a set-interval grid
(Jacobians held between grid points), a regularized Riccati backward pass,
and a backtracking line search on the feedforward with feedback always
active.  A candidate is accepted only when the true cost decreases by at
least a fraction of the model-predicted reduction; regularization escalates
on failure, relaxes on success.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .costs import CostModel
from .physics import PhysicsFault
from .world import World


@dataclass(frozen=True)
class SolverSettings:
    horizon: int = 100
    max_iterations: int = 30
    tol: float = 1e-9                # absolute accepted-decrease convergence
    rho_init: float = 1e-6
    rho_min: float = 1e-6
    rho_max: float = 1e8
    rho_up: float = 10.0
    rho_down: float = 3.0
    alphas: tuple[float, ...] = (1.0, 0.5, 0.25, 0.125, 0.0625, 0.03125, 0.015625)
    accept_ratio: float = 1e-4
    skip: int = 5                    # dynamics-derivative skip interval
    fd_eps: float = 1e-6

    def __post_init__(self):
        if self.horizon < 2 or self.skip < 1:
            raise ValueError("horizon must be >= 2 and skip >= 1")
        if any(a2 >= a1 for a1, a2 in zip(self.alphas, self.alphas[1:])):
            raise ValueError("alpha schedule must be strictly decreasing")


@dataclass
class Trajectory:
    X: np.ndarray                    # (T+1, n)
    U: np.ndarray                    # (T, m)
    running_costs: np.ndarray        # (T,)
    terminal_cost: float

    @property
    def total_cost(self) -> float:
        return float(self.running_costs.sum()) + self.terminal_cost

    @property
    def horizon(self) -> int:
        return self.U.shape[0]


@dataclass
class SolveReport:
    iterations: int = 0
    cost_trace: list[float] = field(default_factory=list)
    converged: bool = False
    wall_time: float = 0.0
    rho_final: float = 0.0


def rollout(world: World, cost: CostModel, x0: np.ndarray,
            U: np.ndarray) -> Trajectory:
    """Open-loop rollout accumulating running and terminal costs."""
    X = world.rollout(x0, U)
    running, terminal = cost.step_costs(X, U)
    return Trajectory(X=X, U=U.copy(), running_costs=running,
                      terminal_cost=terminal)


def linearize_dynamics(world: World, traj: Trajectory, skip: int,
                       fd_eps: float = 1e-6):
    """Central-difference (A_t, B_t) exact on the skip grid, held between."""
    return world.linearize(traj.X, traj.U, skip, fd_eps)


def backward_pass(A, B, lx, lu, lxx, luu, lux, rho):
    """Regularized Riccati recursion.

    Returns (kff, Kfb, dv1, dv2) with the expected cost reduction for step
    length a being -(a*dv1 + a^2*dv2), or None when Q_uu + rho*I fails its
    Cholesky factorization at some step.
    """
    T, n, m = A.shape[0], A.shape[1], B.shape[2]
    kff = np.empty((T, m))
    Kfb = np.empty((T, m, n))
    Vx = lx[T].copy()
    Vxx = lxx[T].copy()
    dv1 = 0.0
    dv2 = 0.0
    reg = rho * np.eye(m)
    for t in range(T - 1, -1, -1):
        At = A[t]
        Bt = B[t]
        Qx = lx[t] + At.T @ Vx
        Qu = lu[t] + Bt.T @ Vx
        VA = Vxx @ At
        VB = Vxx @ Bt
        Qxx = lxx[t] + At.T @ VA
        Quu = luu[t] + Bt.T @ VB
        Qux = lux[t] + Bt.T @ VA
        Quu_r = 0.5 * (Quu + Quu.T) + reg
        try:
            L = np.linalg.cholesky(Quu_r)
        except np.linalg.LinAlgError:
            return None
        rhs = np.column_stack([Qu, Qux])
        sol = np.linalg.solve(L.T, np.linalg.solve(L, rhs))
        kt = -sol[:, 0]
        Kt = -sol[:, 1:]
        kff[t] = kt
        Kfb[t] = Kt
        dv1 += kt @ Qu
        dv2 += 0.5 * kt @ Quu_r @ kt
        Vx = Qx + Kt.T @ (Quu_r @ kt) + Kt.T @ Qu + Qux.T @ kt
        Vxx = Qxx + Kt.T @ Quu_r @ Kt + Kt.T @ Qux + Qux.T @ Kt
        Vxx = 0.5 * (Vxx + Vxx.T)
    return kff, Kfb, dv1, dv2


def optimize(world: World, cost: CostModel, x0: np.ndarray,
             warm_start: Trajectory | np.ndarray | None,
             settings: SolverSettings) -> tuple[Trajectory, SolveReport]:
    """Solve the trajectory optimization from x0.

    Accepts a warm-start control tape (re-rolled from x0) or nothing (zero
    controls).  Never returns a trajectory costing more than its warm start;
    on total failure the warm start itself comes back with converged False.
    """
    t_start = time.perf_counter()
    T = settings.horizon
    if isinstance(warm_start, Trajectory):
        U = warm_start.U.copy()
    elif warm_start is not None:
        U = np.asarray(warm_start, dtype=float).copy()
    else:
        U = np.zeros((T, world.m))
    if U.shape != (T, world.m):
        raise ValueError(f"warm start shape {U.shape} != {(T, world.m)}")

    n, m = world.n, world.m
    X = world.rollout(x0, U)
    lx = np.empty((T + 1, n))
    lu = np.empty((T, m))
    lxx = np.empty((T + 1, n, n))
    luu = np.empty((T, m, m))
    lux = np.empty((T, m, n))

    total = cost.trajectory_cost(X, U)
    report = SolveReport(cost_trace=[float(total)])
    rho = settings.rho_init

    for _ in range(settings.max_iterations):
        A, B = world.linearize(X, U, settings.skip, settings.fd_eps)
        cost.trajectory_expansion(X, U, lx, lu, lxx, luu, lux)

        accepted = False
        while not accepted:
            bw = backward_pass(A, B, lx, lu, lxx, luu, lux, rho)
            if bw is None:
                rho *= settings.rho_up
                if rho > settings.rho_max:
                    break
                continue
            kff, Kfb, dv1, dv2 = bw
            if -(dv1 + dv2) < settings.tol:
                # the model predicts no meaningful improvement at full step
                report.converged = True
                break
            for alpha in settings.alphas:
                Xc, Uc = world.rollout_policy(X, U, kff, Kfb, alpha)
                if Xc is None:
                    continue
                cand = cost.trajectory_cost(Xc, Uc)
                expected = -(alpha * dv1 + alpha * alpha * dv2)
                decrease = total - cand
                if decrease > settings.accept_ratio * max(expected, 0.0):
                    X, U = Xc, Uc
                    total = cand
                    accepted = True
                    report.iterations += 1
                    report.cost_trace.append(float(total))
                    rho = max(rho / settings.rho_down, settings.rho_min)
                    if decrease < settings.tol:
                        report.converged = True
                    break
            if not accepted:
                rho *= settings.rho_up
                if rho > settings.rho_max:
                    break
        if report.converged or not accepted:
            break

    running, terminal = cost.step_costs(X, U)
    traj = Trajectory(X=X, U=U, running_costs=running, terminal_cost=terminal)
    report.wall_time = time.perf_counter() - t_start
    report.rho_final = rho
    return traj, report
