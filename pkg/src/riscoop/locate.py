"""UE positioning from averaged channel-parameter measurements.

Three stages: least-squares recovery of each UE's direction seen from
the RIS, a 1D search over the reference UE's range that places every
other UE through the pairwise triangle relation, and a weighted
least-squares refinement over all 3K coordinates.  Clock offsets never
appear: the averaged measurements are offset free by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .errors import NumericalError, ValidationError
from .pairs import unordered_pairs

__all__ = ["recover_angles", "direction_vectors", "coarse_positions",
           "eta_from_positions", "mle_refine", "locate_ues", "PositionEstimate"]

_ARCSIN_CLIP = 1.0 - 1e-12


def pairing_matrix(n_ues: int) -> np.ndarray:
    """Rows select the two UEs of each unordered pair (pair order of pairs.py)."""
    pairs = unordered_pairs(n_ues)
    g = np.zeros((len(pairs), n_ues))
    for row, (i, j) in enumerate(pairs):
        g[row, i] = 1.0
        g[row, j] = 1.0
    return g


def recover_angles(xi_hat: np.ndarray, zeta_hat: np.ndarray, n_ues: int) -> tuple:
    """Per-UE (azimuth, elevation) from stacked pair measurements.

    Solves the linear pair-sum system for each UE's direction cosines,
    then converts to angles.  Noise can push the cosines outside the
    arcsine domain; they are clamped to +/-1 and the event is flagged so
    low-SNR sweeps can proceed.

    Azimuths land in (-pi/2, pi/2): every valid scenario keeps UEs in
    front of the panel.
    """
    if n_ues < 3:
        raise ValidationError("angle recovery needs at least 3 UEs")
    g = pairing_matrix(n_ues)
    gram = g.T @ g
    w1 = np.linalg.solve(gram, g.T @ np.asarray(xi_hat, dtype=float))
    w2 = np.linalg.solve(gram, g.T @ np.asarray(zeta_hat, dtype=float))

    clamped = bool(np.any(np.abs(w2) > 1.0))
    w2c = np.clip(w2, -_ARCSIN_CLIP, _ARCSIN_CLIP)
    sin_az = w1 / np.sqrt(1.0 - w2c**2)
    clamped = clamped or bool(np.any(np.abs(sin_az) > 1.0))
    sin_az = np.clip(sin_az, -_ARCSIN_CLIP, _ARCSIN_CLIP)
    return np.arcsin(sin_az), np.arcsin(w2c), clamped


def direction_vectors(azimuth: np.ndarray, elevation: np.ndarray) -> np.ndarray:
    """Unit vectors toward each UE in the RIS frame, shape (K, 3)."""
    return np.stack([np.cos(azimuth) * np.cos(elevation),
                     np.sin(azimuth) * np.cos(elevation),
                     np.sin(elevation)], axis=-1)


def coarse_positions(azimuth, elevation, tau_los: dict, tau_ris: dict,
                     reference: int, d_search: np.ndarray,
                     speed_of_light: float = 3.0e8) -> tuple:
    """1D range search along the reference UE's direction.

    For each candidate reference range, the remaining ranges follow
    from the triangle relation of each (reference, other) pair; the
    candidate minimizing the mismatch of the non-reference pairs'
    delay-difference measurements wins.  Candidates that drive any
    triangle denominator non-positive are discarded.

    Returns (positions (K, 3) in the RIS frame, best cost).
    """
    d_search = np.asarray(d_search, dtype=float)
    if d_search.size == 0:
        raise ValidationError("d_search must be nonempty")
    k = len(azimuth)
    t_dir = direction_vectors(azimuth, elevation)
    others = [j for j in range(k) if j != reference]

    n_cand = d_search.size
    ranges = np.zeros((n_cand, k))
    ranges[:, reference] = d_search
    valid = np.ones(n_cand, dtype=bool)
    for j in others:
        key = (min(reference, j), max(reference, j))
        delta = speed_of_light * (tau_ris[key] - tau_los[key])
        cos_phi = float(t_dir[reference] @ t_dir[j])
        den = 2.0 * d_search * (1.0 + cos_phi) - 2.0 * delta
        ok = den > 0.0
        valid &= ok
        with np.errstate(divide="ignore", invalid="ignore"):
            ranges[:, j] = np.where(ok, (2.0 * delta * d_search - delta**2) / den, np.nan)
    if not np.any(valid):
        raise NumericalError("coarse search: every candidate range was discarded")

    positions = ranges[:, :, None] * t_dir[None, :, :]  # (L, K, 3)
    cost = np.zeros(n_cand)
    for a, b in unordered_pairs(k):
        if a == reference or b == reference:
            continue
        d_a = np.abs(ranges[:, a])
        d_b = np.abs(ranges[:, b])
        d_ab = np.linalg.norm(positions[:, a] - positions[:, b], axis=1)
        psi = d_a + d_b - d_ab
        delta = speed_of_light * (tau_ris[(a, b)] - tau_los[(a, b)])
        cost += (psi - delta) ** 2
    cost[~valid] = np.inf
    best = int(np.argmin(cost))
    return positions[best], float(cost[best])


def eta_from_positions(positions: np.ndarray, pairs, speed_of_light: float) -> np.ndarray:
    """Offset-free channel parameters of candidate RIS-frame positions.

    Per pair: [d_ij / c, (d_Ri + d_Rj) / c, xi, zeta] matching the
    averaged measurement layout of MeasurementVector.stacked().
    """
    norms = np.linalg.norm(positions, axis=1)
    out = []
    for i, j in pairs:
        d_ij = np.linalg.norm(positions[i] - positions[j])
        out.extend([
            d_ij / speed_of_light,
            (norms[i] + norms[j]) / speed_of_light,
            positions[i, 1] / norms[i] + positions[j, 1] / norms[j],
            positions[i, 2] / norms[i] + positions[j, 2] / norms[j],
        ])
    return np.array(out)


def _whitener(measurement_cov, size: int) -> np.ndarray:
    """Matrix W with W r as whitened residuals; identity when cov is None."""
    if measurement_cov is None:
        return np.eye(size)
    cov = np.asarray(measurement_cov, dtype=float)
    if cov.ndim == 1:
        if cov.shape[0] != size or np.any(cov <= 0):
            raise ValidationError("measurement variances must be positive, one per entry")
        return np.diag(1.0 / np.sqrt(cov))
    if cov.shape != (size, size):
        raise ValidationError("measurement covariance has the wrong shape")
    return np.linalg.cholesky(np.linalg.inv(cov)).T


@dataclass(frozen=True)
class PositionEstimate:
    """Output of the positioning chain (positions in the global frame)."""

    azimuth: np.ndarray
    elevation: np.ndarray
    coarse: np.ndarray          # (K, 3) m
    refined: np.ndarray         # (K, 3) m
    reference_ue: int
    coarse_cost: float
    objective: float            # weighted refinement objective at the solution
    converged: bool
    angles_clamped: bool

    def errors(self, truth: np.ndarray) -> np.ndarray:
        """Euclidean refined-position error per UE."""
        return np.linalg.norm(self.refined - np.asarray(truth, dtype=float), axis=1)


def mle_refine(measurements, start: np.ndarray, measurement_cov=None,
               speed_of_light: float = 3.0e8, max_nfev: int = 2000) -> tuple:
    """Weighted least-squares refinement of all UE positions.

    Minimizes the covariance-weighted squared mismatch between the
    averaged measurements and the parameters implied by candidate
    positions, starting from ``start`` (RIS frame).  Accepted trust
    region steps never increase the objective; if the evaluation budget
    runs out the best iterate so far is returned with
    ``converged=False``.

    Returns (positions, objective, converged).
    """
    pairs = measurements.pairs
    target = measurements.stacked()
    white = _whitener(measurement_cov, target.size)
    start = np.asarray(start, dtype=float)

    def residuals(flat):
        return white @ (eta_from_positions(flat.reshape(-1, 3), pairs, speed_of_light) - target)

    r0 = residuals(start.ravel())
    if not np.all(np.isfinite(r0)):
        raise NumericalError("refinement objective is not finite at the start")
    res = optimize.least_squares(residuals, start.ravel(), method="trf",
                                 xtol=1e-14, ftol=1e-14, gtol=1e-14, max_nfev=max_nfev)
    start_cost = float(r0 @ r0)
    final_cost = 2.0 * float(res.cost)
    if final_cost <= start_cost:
        positions, objective = res.x.reshape(-1, 3), final_cost
    else:  # solver failure; keep the starting point
        positions, objective = start, start_cost
    converged = res.status > 0
    return positions, objective, converged


def locate_ues(measurements, reference: int = 0, d_search: np.ndarray = None,
               measurement_cov=None, speed_of_light: float = 3.0e8,
               ris_center=None) -> PositionEstimate:
    """Full positioning chain: angles, coarse 1D search, refinement."""
    if d_search is None:
        d_search = np.arange(0.1, 20.0 + 1e-9, 0.05)
    pairs = measurements.pairs
    n_ues = max(max(p) for p in pairs) + 1
    xi_hat = np.array([measurements.xi[p] for p in pairs])
    zeta_hat = np.array([measurements.zeta[p] for p in pairs])
    azimuth, elevation, clamped = recover_angles(xi_hat, zeta_hat, n_ues)
    coarse, coarse_cost = coarse_positions(azimuth, elevation, measurements.tau_los,
                                           measurements.tau_ris, reference, d_search,
                                           speed_of_light)
    refined, objective, converged = mle_refine(measurements, coarse,
                                               measurement_cov=measurement_cov,
                                               speed_of_light=speed_of_light)
    shift = np.zeros(3) if ris_center is None else np.asarray(ris_center, dtype=float)
    return PositionEstimate(azimuth=azimuth, elevation=elevation,
                            coarse=coarse + shift, refined=refined + shift,
                            reference_ue=reference, coarse_cost=coarse_cost,
                            objective=objective, converged=converged,
                            angles_clamped=clamped)
