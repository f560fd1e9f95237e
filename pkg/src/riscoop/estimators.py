"""Channel-parameter estimation from received pilots.

The +/- slot pairing makes separation of the two controlled paths
exact: half-sums of consecutive slots contain only the direct path,
half-differences only the RIS path (noise variance halves in both).
Delays are then recovered per path by an oversampled IFFT peak search
with sub-bin refinement, spatial frequencies by a projection-residual
search over the [-2, 2]^2 box, and finally both link directions are
averaged, which cancels the unknown clock offsets exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import optimize

from .channel import delay_steering, ris_response
from .errors import ValidationError
from .pairs import ordered_pairs, unordered_pairs
from .scenario import Scenario, ris_element_positions

__all__ = [
    "SeparatedObservations", "separate", "DelayEstimate", "estimate_delay",
    "SpatialGrid", "estimate_spatial_freq", "average_pair",
    "MeasurementVector", "estimate_channel_params",
]


@dataclass(frozen=True)
class SeparatedObservations:
    """Per-pair (N, T/2) matrices for the RIS path and the direct path."""

    ris: dict
    los: dict

    def pairs(self):
        return sorted(self.ris.keys())


def separate(obs) -> SeparatedObservations:
    """Split observations into RIS-only and direct-only halves.

    Column t of the outputs is (y_{2t} -/+ y_{2t+1}) / 2; requires the
    schedule that produced ``obs`` to use the +/- slot pairing.
    """
    if obs.slots_per_ue % 2:
        raise ValidationError("separation requires an even number of slots")
    ris, los = {}, {}
    for pair, y in obs.observations.items():
        ris[pair] = (y[0::2] - y[1::2]).T / 2.0
        los[pair] = (y[0::2] + y[1::2]).T / 2.0
    return SeparatedObservations(ris=ris, los=los)


class DelayEstimate(NamedTuple):
    tau: float       # refined delay, s
    peak_bin: int    # argmax IFFT bin
    offset: float    # sub-bin correction, s; tau = peak_bin / (n_fft df) - offset


def estimate_delay(y: np.ndarray, n_fft: int, subcarrier_spacing: float) -> DelayEstimate:
    """Delay of the common propagation path in an (N, T/2) matrix.

    Coarse stage: the IFFT bin whose row energy across columns is
    largest (ties break toward the lowest bin by argmax).  Refinement:
    quasi-Newton maximization of that bin's energy over a sub-bin delay
    shift, started at zero.  The search is allowed one bin to either
    side of the peak: the coarse argmax rounds to the nearest bin, so
    the residual offset can take either sign.
    """
    n = y.shape[0]
    if n_fft < n:
        raise ValidationError("n_fft must be at least the number of subcarriers")
    if not np.any(y):
        raise ValidationError("no signal energy")
    spectrum = np.fft.ifft(y, n=n_fft, axis=0)
    energy = np.sum(np.abs(spectrum) ** 2, axis=1)
    peak = int(np.argmax(energy))
    bin_width = 1.0 / (n_fft * subcarrier_spacing)

    h = np.arange(n)
    row = np.exp(2j * np.pi * peak * h / n_fft) / n_fft
    w = row[:, None] * y
    norm = n * np.sum(np.abs(w) ** 2)
    omega = -2.0 * np.pi * subcarrier_spacing * h

    def neg_energy(delta):
        d = np.exp(1j * omega * delta[0])
        v = d @ w
        dv = (1j * omega * d) @ w
        val = np.sum(np.abs(v) ** 2)
        grad = 2.0 * np.sum(np.real(np.conj(v) * dv))
        return -val / norm, np.array([-grad / norm])

    res = optimize.minimize(neg_energy, x0=np.zeros(1), jac=True, method="L-BFGS-B",
                            bounds=[(-bin_width, bin_width)],
                            options={"ftol": 1e-16, "gtol": 1e-14, "maxiter": 100})
    offset = float(res.x[0])
    if res.fun > neg_energy(np.zeros(1))[0]:
        offset = 0.0
    return DelayEstimate(tau=peak * bin_width - offset, peak_bin=peak, offset=offset)


class SpatialGrid:
    """Precomputed RIS responses over a uniform (xi, zeta) grid.

    Building the (M, G) response matrix is the expensive part of the
    coarse spatial-frequency search; one instance can be shared across
    estimators for the same panel and wavelength.
    """

    def __init__(self, elements: np.ndarray, wavelength: float, step: float = 0.05):
        axis = np.arange(-2.0, 2.0 + step / 2.0, step)
        xi, zeta = np.meshgrid(axis, axis, indexing="ij")
        self.xi = xi.ravel()
        self.zeta = zeta.ravel()
        self.elements = elements
        self.wavelength = wavelength
        phase = (2.0 * np.pi / wavelength) * (
            elements[:, 1][:, None] * self.xi[None, :]
            + elements[:, 2][:, None] * self.zeta[None, :])
        self.responses = np.exp(1j * phase)  # (M, G)

    @classmethod
    def for_scenario(cls, scenario: Scenario, step: float = 0.05) -> "SpatialGrid":
        elements = ris_element_positions(scenario) - scenario.ris_center
        return cls(elements, scenario.wavelength, step=step)

    def project(self, base: np.ndarray) -> np.ndarray:
        """Slot-domain responses of every grid point under base profiles (T/2, M)."""
        return base @ self.responses  # (T/2, G)


def estimate_spatial_freq(y_ris: np.ndarray, tau_ris: float, base: np.ndarray,
                          grid: SpatialGrid, subcarrier_spacing: float,
                          projection: np.ndarray = None) -> tuple:
    """Spatial-frequency pair from the separated RIS-path matrix.

    The delay is removed with the (pre-averaging) per-direction delay
    estimate, columns are collapsed over subcarriers, and the residual
    of the best-fit complex gain is minimized: coarse grid over
    [-2, 2]^2, then box-constrained quasi-Newton refinement from the
    grid argmin.  The result is clamped to the box.
    """
    n = y_ris.shape[0]
    # delay removal: Hadamard with a steering matrix of delay -tau_ris
    y_aligned = y_ris * np.conj(delay_steering(tau_ris, n, subcarrier_spacing))[:, None]
    y_slot = y_aligned.sum(axis=0)  # (T/2,)
    y_norm = np.sum(np.abs(y_slot) ** 2)
    if y_norm == 0.0:
        raise ValidationError("no signal energy")

    v_grid = grid.project(base) if projection is None else projection
    power = np.sum(np.abs(v_grid) ** 2, axis=0)
    if not np.any(power > 0.0):
        raise ValidationError("degenerate profiles: rank-0 projection")
    with np.errstate(divide="ignore", invalid="ignore"):
        score = np.abs(v_grid.conj().T @ y_slot) ** 2 / power
    score[~np.isfinite(score)] = -np.inf
    start = int(np.argmax(score))
    x0 = np.array([grid.xi[start], grid.zeta[start]])

    elements, lam = grid.elements, grid.wavelength

    def neg_fit(gamma):
        v = base @ ris_response(gamma, elements, lam)
        p = np.sum(np.abs(v) ** 2)
        if p == 0.0:
            return 1.0
        return 1.0 - np.abs(np.conj(v) @ y_slot) ** 2 / (p * y_norm)

    res = optimize.minimize(neg_fit, x0, method="L-BFGS-B",
                            bounds=[(-2.0, 2.0), (-2.0, 2.0)],
                            options={"ftol": 1e-15, "gtol": 1e-12, "maxiter": 100})
    best = res.x if res.fun <= neg_fit(x0) else x0
    return float(np.clip(best[0], -2.0, 2.0)), float(np.clip(best[1], -2.0, 2.0))


def average_pair(forward: tuple, backward: tuple) -> tuple:
    """Average the two directed estimates of one UE pair.

    Both directions carry the clock offsets with opposite signs, so the
    average is offset free.
    """
    return tuple((a + b) / 2.0 for a, b in zip(forward, backward))


@dataclass(frozen=True)
class MeasurementVector:
    """Directed and pair-averaged channel-parameter estimates.

    ``directed[(i, j)]`` holds the pre-averaging (tau_los, tau_ris, xi,
    zeta) of the i -> j link; the dictionaries keyed by unordered pairs
    (i < j) hold the averaged values used for positioning.
    """

    pairs: tuple
    tau_los: dict
    tau_ris: dict
    xi: dict
    zeta: dict
    directed: dict

    def stacked(self) -> np.ndarray:
        """Averaged measurements as one vector, 4 entries per pair."""
        return np.concatenate([
            [self.tau_los[p], self.tau_ris[p], self.xi[p], self.zeta[p]]
            for p in self.pairs
        ])


def estimate_channel_params(obs, scenario: Scenario, schedule,
                            n_fft: int = None, grid_step: float = 0.05,
                            grid: SpatialGrid = None,
                            projections: dict = None) -> MeasurementVector:
    """Run the full per-pair estimation chain on one observation set.

    ``projections`` may carry precomputed ``grid.project(base_i)``
    matrices keyed by transmitter, which noise-draw loops should reuse.
    """
    if n_fft is None:
        n_fft = 10 * scenario.n_subcarriers
    if grid is None:
        grid = SpatialGrid.for_scenario(scenario, step=grid_step)
    sep = separate(obs)
    df = scenario.subcarrier_spacing

    directed = {}
    for i, j in ordered_pairs(scenario.n_ues):
        y_ris, y_los = sep.ris[(i, j)], sep.los[(i, j)]
        tau_ris = estimate_delay(y_ris, n_fft, df).tau
        tau_los = estimate_delay(y_los, n_fft, df).tau
        proj = None if projections is None else projections.get(i)
        xi, zeta = estimate_spatial_freq(y_ris, tau_ris, schedule.base_for(i),
                                         grid, df, projection=proj)
        directed[(i, j)] = (tau_los, tau_ris, xi, zeta)

    pairs = tuple(unordered_pairs(scenario.n_ues))
    tau_los, tau_ris, xi, zeta = {}, {}, {}, {}
    for i, j in pairs:
        avg = average_pair(directed[(i, j)], directed[(j, i)])
        tau_los[(i, j)], tau_ris[(i, j)], xi[(i, j)], zeta[(i, j)] = avg
    return MeasurementVector(pairs=pairs, tau_los=tau_los, tau_ris=tau_ris,
                             xi=xi, zeta=zeta, directed=directed)
