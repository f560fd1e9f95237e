"""Geometric sidelink channel model and observation synthesis.

Each (transmitter i, receiver j) link is the superposition of a direct
path, a path reflected by the RIS whose phase response is steered per
slot, and optional uncontrolled single-bounce scatter paths.  All pilot
symbols of UE i carry amplitude sqrt(E_i) so the noiseless received
vector on the N subcarriers is fully determined by the link's channel
parameters and the RIS phase vector of the slot.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .pairs import ordered_pairs
from .scenario import Scenario, ris_element_positions
from .seeding import rng_from

__all__ = [
    "delay_steering", "ris_response", "spatial_freqs", "direction_cosines",
    "ue_angles", "wrap_phase", "path_gains", "channel_params",
    "PairParams", "ObservationSet", "synthesize", "pair_mean",
]


def wrap_phase(phi):
    """Wrap angles to the interval (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(phi, dtype=float), 2.0 * np.pi)


def delay_steering(tau: float, n_subcarriers: int, subcarrier_spacing: float) -> np.ndarray:
    """Frequency-domain steering vector of a pure delay.

    Entry n (0-based) is exp(-j 2 pi tau n df); the first entry is 1.
    """
    n = np.arange(n_subcarriers)
    return np.exp(-2j * np.pi * tau * n * subcarrier_spacing)


def ris_response(gamma, elements: np.ndarray, wavelength: float) -> np.ndarray:
    """Combined RIS steering vector for spatial-frequency pair gamma = (xi, zeta).

    Only the y and z element coordinates enter; the panel is assumed to
    lie in the yz-plane so the x component carries no phase.
    """
    xi, zeta = gamma
    phase = (2.0 * np.pi / wavelength) * (elements[:, 1] * xi + elements[:, 2] * zeta)
    return np.exp(1j * phase)


def direction_cosines(p) -> tuple:
    """(y/r, z/r) of a position in the RIS frame."""
    p = np.asarray(p, dtype=float)
    r = np.linalg.norm(p)
    if r == 0.0:
        raise ValidationError("UE coincides with RIS center")
    return p[1] / r, p[2] / r


def ue_angles(p) -> tuple:
    """Azimuth and elevation of a RIS-frame position, in radians."""
    p = np.asarray(p, dtype=float)
    r = np.linalg.norm(p)
    if r == 0.0:
        raise ValidationError("UE coincides with RIS center")
    return np.arctan2(p[1], p[0]), np.arcsin(p[2] / r)


def spatial_freqs(p_i, p_j) -> tuple:
    """Spatial-frequency pair (xi, zeta) of a UE pair seen from the RIS.

    Both are sums of per-UE direction cosines, hence lie in [-2, 2] and
    are symmetric in the argument order.  Positions are RIS-frame.
    """
    w1_i, w2_i = direction_cosines(p_i)
    w1_j, w2_j = direction_cosines(p_j)
    return w1_i + w1_j, w2_i + w2_j


def path_gains(scenario: Scenario, i: int, j: int):
    """Complex gains (direct, RIS, scatter[]) for transmitter i, receiver j.

    Amplitudes follow free-space spreading of the respective path; the
    phase is -2 pi / lambda times the path length, wrapped to (-pi, pi].
    """
    lam = scenario.wavelength
    rel = scenario.ue_positions_rel
    p_i, p_j = scenario.ue_positions[i], scenario.ue_positions[j]
    d_ij = np.linalg.norm(p_i - p_j)
    d_ri = np.linalg.norm(rel[i])
    d_rj = np.linalg.norm(rel[j])
    if d_ij == 0.0 or d_ri == 0.0 or d_rj == 0.0:
        raise ValidationError("coincident points give a zero path distance")

    beta_los = lam / (4.0 * np.pi * d_ij) * np.exp(1j * wrap_phase(-2.0 * np.pi / lam * d_ij))
    beta_ris = (lam**2 / (16.0 * np.pi**2 * d_ri * d_rj)
                * np.exp(1j * wrap_phase(-2.0 * np.pi / lam * (d_ri + d_rj))))

    sps = scenario.sp_positions_for(j)
    beta_sp = np.zeros(len(sps), dtype=complex)
    for s, p_sp in enumerate(sps):
        d1 = np.linalg.norm(p_i - p_sp)
        d2 = np.linalg.norm(p_j - p_sp)
        if d1 == 0.0 or d2 == 0.0:
            raise ValidationError("scatter point coincides with a UE")
        amp = np.sqrt(scenario.rcs / (4.0 * np.pi)) * lam / (4.0 * np.pi * d1 * d2)
        beta_sp[s] = amp * np.exp(1j * wrap_phase(-2.0 * np.pi / lam * (d1 + d2)))
    return beta_los, beta_ris, beta_sp


@dataclass(frozen=True)
class PairParams:
    """Channel parameters of one ordered (transmitter, receiver) link."""

    tau_los: float        # s, includes clock offsets
    tau_ris: float        # s, includes clock offsets
    xi: float
    zeta: float
    beta_los: complex
    beta_ris: complex
    sp_delays: np.ndarray  # (S_j,) s
    sp_gains: np.ndarray   # (S_j,) complex

    @property
    def alpha_los(self):
        return abs(self.beta_los)

    @property
    def rho_los(self):
        return float(np.angle(self.beta_los))

    @property
    def alpha_ris(self):
        return abs(self.beta_ris)

    @property
    def rho_ris(self):
        return float(np.angle(self.beta_ris))

    def vector(self) -> np.ndarray:
        """The 8 real parameters in canonical order."""
        return np.array([self.tau_los, self.tau_ris, self.xi, self.zeta,
                         self.alpha_los, self.rho_los, self.alpha_ris, self.rho_ris])


def channel_params(scenario: Scenario) -> dict:
    """Channel parameters for every ordered UE pair."""
    c = scenario.speed_of_light
    rel = scenario.ue_positions_rel
    offs = scenario.clock_offsets
    out = {}
    for i, j in ordered_pairs(scenario.n_ues):
        d_ij = np.linalg.norm(scenario.ue_positions[i] - scenario.ue_positions[j])
        d_ri, d_rj = np.linalg.norm(rel[i]), np.linalg.norm(rel[j])
        xi, zeta = spatial_freqs(rel[i], rel[j])
        beta_los, beta_ris, beta_sp = path_gains(scenario, i, j)
        sps = scenario.sp_positions_for(j)
        sp_delays = np.array([
            (np.linalg.norm(scenario.ue_positions[i] - p) + np.linalg.norm(scenario.ue_positions[j] - p)) / c
            for p in sps
        ]) + offs[j] - offs[i] if len(sps) else np.zeros(0)
        out[(i, j)] = PairParams(
            tau_los=d_ij / c + offs[j] - offs[i],
            tau_ris=(d_ri + d_rj) / c + offs[j] - offs[i],
            xi=xi, zeta=zeta,
            beta_los=beta_los, beta_ris=beta_ris,
            sp_delays=sp_delays, sp_gains=beta_sp,
        )
    return out


def pair_mean(params: PairParams, omega: np.ndarray, elements: np.ndarray,
              energy: float, n_subcarriers: int, subcarrier_spacing: float,
              wavelength: float) -> np.ndarray:
    """Noiseless received matrix (T, N) of one link under profile ``omega`` (T, M)."""
    d_los = delay_steering(params.tau_los, n_subcarriers, subcarrier_spacing)
    d_ris = delay_steering(params.tau_ris, n_subcarriers, subcarrier_spacing)
    c_vec = ris_response((params.xi, params.zeta), elements, wavelength)
    gain = omega @ c_vec  # per-slot scalar c(gamma)^T omega_t
    mu = params.beta_los * d_los[None, :] + params.beta_ris * gain[:, None] * d_ris[None, :]
    for tau_s, beta_s in zip(params.sp_delays, params.sp_gains):
        mu = mu + beta_s * delay_steering(tau_s, n_subcarriers, subcarrier_spacing)[None, :]
    return np.sqrt(energy) * mu


@dataclass
class ObservationSet:
    """Received pilot vectors for every (transmitter, receiver, slot).

    ``observations[(i, j)]`` has shape (T, N).  Noiseless means are kept
    alongside when requested at synthesis time.
    """

    observations: dict
    n_subcarriers: int
    slots_per_ue: int
    means: dict = None

    def pairs(self):
        return sorted(self.observations.keys())

    def dump_csv(self, path):
        """Write all observations as rows (i, j, t, subcarrier, re, im)."""
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("i,j,t,subcarrier,re,im\n")
            for (i, j) in self.pairs():
                y = self.observations[(i, j)]
                for t in range(y.shape[0]):
                    for n in range(y.shape[1]):
                        fh.write(f"{i},{j},{t},{n},{y[t, n].real!r},{y[t, n].imag!r}\n")


def synthesize(scenario: Scenario, schedule, seed, with_means: bool = False) -> ObservationSet:
    """Simulate one localization occasion.

    Noise is complex Gaussian with per-entry variance ``noise_variance``,
    drawn from an independent per-link substream of ``seed`` (an int or
    tuple of ints) so that links can be generated in any order, or
    concurrently, with identical results.
    """
    if schedule.omega.shape[0] != scenario.n_ues or schedule.omega.shape[1] != scenario.slots_per_ue:
        raise ValidationError("schedule shape does not match the scenario")
    if schedule.omega.shape[2] != scenario.n_elements:
        raise ValidationError("schedule element count does not match the RIS panel")

    elements = ris_element_positions(scenario) - scenario.ris_center
    params = channel_params(scenario)
    energies = scenario.symbol_energies
    var = scenario.noise_variance
    n, t = scenario.n_subcarriers, scenario.slots_per_ue

    observations, means = {}, {}
    for i, j in ordered_pairs(scenario.n_ues):
        mu = pair_mean(params[(i, j)], schedule.omega[i], elements, energies[i],
                       n, scenario.subcarrier_spacing, scenario.wavelength)
        y = mu
        if var > 0.0:
            rng = rng_from(seed, (i, j))
            noise = rng.standard_normal((t, n)) + 1j * rng.standard_normal((t, n))
            y = mu + np.sqrt(var / 2.0) * noise
        observations[(i, j)] = y
        if with_means:
            means[(i, j)] = mu
    return ObservationSet(observations=observations, n_subcarriers=n,
                          slots_per_ue=t, means=means if with_means else None)
