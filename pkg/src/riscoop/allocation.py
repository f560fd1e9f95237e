"""Transmit-power allocation minimizing the average positioning bound.

The channel FIM is linear in the per-UE transmit powers (each pair
block scales with its transmitter's power), so the average-PEB
objective is evaluated cheaply from per-transmitter FIM parts computed
once.  The problem is convex and solved by projected gradient descent
on the power simplex with an Armijo backtracking line search.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .bounds import fim_by_transmitter, state_jacobian
from .errors import ConvergenceError
from .scenario import Scenario

__all__ = ["PowerAllocation", "allocate_power", "project_to_simplex"]

POWER_FLOOR_FRACTION = 1e-6  # keeps every UE strictly transmitting


@dataclass(frozen=True)
class PowerAllocation:
    powers: np.ndarray        # (K,) W, sums to total_power
    objective: float          # average PEB at the optimum, m
    scaling: tuple            # (P2/P1, P3/P1) for K = 3, else None
    n_iterations: int
    converged: bool


def project_to_simplex(v: np.ndarray, total: float, floor: float = 0.0) -> np.ndarray:
    """Euclidean projection onto {x: sum x = total, x >= floor}."""
    v = np.asarray(v, dtype=float)
    shifted_total = total - floor * v.size
    u = np.sort(v - floor)[::-1]
    cumulative = np.cumsum(u)
    rho_candidates = u + (shifted_total - cumulative) / np.arange(1, v.size + 1)
    rho = int(np.nonzero(rho_candidates > 0)[0][-1])
    shift = (shifted_total - cumulative[rho]) / (rho + 1)
    return np.maximum(v - floor + shift, 0.0) + floor


def _avg_peb_and_gradient(powers, parts, n_ues, inv_fn):
    j_state = sum(p * a for p, a in zip(powers, parts))
    inv = inv_fn(j_state)
    blocks = [inv[3 * k:3 * k + 3, 3 * k:3 * k + 3] for k in range(n_ues)]
    pebs = np.array([np.sqrt(np.trace(b)) for b in blocks])
    objective = float(pebs.mean())
    grad = np.zeros(len(powers))
    for i, a_i in enumerate(parts):
        m = inv @ a_i @ inv
        grad[i] = -sum(np.trace(m[3 * k:3 * k + 3, 3 * k:3 * k + 3]) / (2.0 * pebs[k])
                       for k in range(n_ues)) / n_ues
    return objective, grad


def allocate_power(scenario: Scenario, schedule, prior_means=None,
                   grad_tol: float = 1e-8, obj_tol: float = 1e-12,
                   max_iter: int = 500) -> PowerAllocation:
    """Split the total power across UEs to minimize the average PEB.

    The bound is evaluated at the prior means (true positions are
    unknown in deployment) under the given fixed schedule.  Raises
    ConvergenceError carrying the best iterate if the iteration cap is
    reached before the projected gradient or the objective stalls.
    """
    from .bounds import _sym_inverse  # local import to keep the public surface tidy

    if prior_means is None:
        prior_means = scenario.prior_means
    eval_scenario = replace(scenario, ue_positions=np.asarray(prior_means, dtype=float),
                            prior_means=None, prior_covs=None)

    k = eval_scenario.n_ues
    total = eval_scenario.total_power
    reference_power = total / k
    at_reference = eval_scenario.with_powers(np.full(k, reference_power))
    t_mat = state_jacobian(at_reference)
    parts = [t_mat @ j_i @ t_mat.T / reference_power
             for j_i in fim_by_transmitter(at_reference, schedule)]

    inv_fn = lambda m: _sym_inverse(m, allow_singular=False)
    floor = POWER_FLOOR_FRACTION * total
    powers = project_to_simplex(eval_scenario.tx_powers.copy(), total, floor)
    objective, grad = _avg_peb_and_gradient(powers, parts, k, inv_fn)

    step = total / (np.linalg.norm(grad) + 1e-300)
    converged = False
    iteration = 0
    for iteration in range(1, max_iter + 1):
        projected_grad = powers - project_to_simplex(powers - grad, total, floor)
        if np.linalg.norm(projected_grad) < grad_tol:
            converged = True
            break
        accepted = False
        while step > 1e-18 * total:
            candidate = project_to_simplex(powers - step * grad, total, floor)
            cand_obj, cand_grad = _avg_peb_and_gradient(candidate, parts, k, inv_fn)
            decrease = grad @ (powers - candidate)
            if cand_obj <= objective - 1e-4 * decrease or cand_obj < objective:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            converged = True  # no descent direction left at float precision
            break
        improvement = objective - cand_obj
        powers, objective, grad = candidate, cand_obj, cand_grad
        step *= 2.0
        if improvement < obj_tol:
            converged = True
            break

    scaling = (powers[1] / powers[0], powers[2] / powers[0]) if k == 3 else None
    allocation = PowerAllocation(powers=powers, objective=objective, scaling=scaling,
                                 n_iterations=iteration, converged=converged)
    if not converged:
        raise ConvergenceError(f"power allocation did not converge in {max_iter} iterations",
                               best=allocation)
    return allocation
