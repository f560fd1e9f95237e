"""Fisher information and error bounds for channel parameters and UE states.

The observation likelihood is complex Gaussian around the noiseless
mean, so the channel-parameter FIM reduces to Gram matrices of the mean
derivatives accumulated over slots, scaled by 2 / noise variance.  The
state-space FIM follows by sandwiching with the Jacobian of the channel
parameters with respect to positions, clock offsets, and gains.

Parameter layout per ordered pair (the canonical 8-vector):

    [tau_los, tau_ris, xi, zeta, alpha_los, rho_los, alpha_ris, rho_ris]

Pairs are stacked in ``pairs.ordered_pairs`` order.  The state vector
holds the 3K position coordinates followed by the K-1 clock offsets of
the non-reference UEs; gains are appended as nuisance parameters
grouped by type (all alpha_los, all alpha_ris, all rho_los, all
rho_ris, each in pair order).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import channel_params, delay_steering, ris_response
from .errors import UnidentifiableStateError, ValidationError
from .pairs import ordered_pairs
from .scenario import Scenario, ris_element_positions

__all__ = [
    "PARAM_NAMES", "mu_derivatives", "fim_channel", "fim_by_transmitter",
    "state_jacobian", "peb_ceb", "crlb_stds", "bound_report", "BoundReport",
]

PARAM_NAMES = ("tau_los", "tau_ris", "xi", "zeta",
               "alpha_los", "rho_los", "alpha_ris", "rho_ris")


def _pair_vectors(scenario, params, transmitter):
    """Shared per-pair quantities: steering vectors and slot scalars."""
    n = np.arange(scenario.n_subcarriers)
    d_los = delay_steering(params.tau_los, scenario.n_subcarriers, scenario.subcarrier_spacing)
    d_ris = delay_steering(params.tau_ris, scenario.n_subcarriers, scenario.subcarrier_spacing)
    elements = ris_element_positions(scenario) - scenario.ris_center
    c_vec = ris_response((params.xi, params.zeta), elements, scenario.wavelength)
    p_y, p_z = elements[:, 1], elements[:, 2]
    return n, d_los, d_ris, c_vec, p_y, p_z


def _slot_scalars(schedule, transmitter, c_vec, p_y, p_z):
    omega = schedule.omega[transmitter]  # (T, M)
    return omega @ c_vec, omega @ (p_y * c_vec), omega @ (p_z * c_vec)


def _derivative_factors(scenario, params, transmitter, u, g_y, g_z):
    """Columns of the derivative matrix as (base-vector index, per-slot factor).

    Every derivative of the noiseless mean is one of the four base
    vectors [d_los, n*d_los, d_ris, n*d_ris] times a per-slot complex
    scalar; this factorization is what makes the FIM cheap.
    """
    df = scenario.subcarrier_spacing
    lam = scenario.wavelength
    sq_e = np.sqrt(scenario.symbol_energies[transmitter])
    n_slots = len(u)
    ones = np.ones(n_slots)
    b_los, b_ris = params.beta_los, params.beta_ris
    return [
        (1, -2j * np.pi * df * sq_e * b_los * ones),          # tau_los
        (3, -2j * np.pi * df * sq_e * b_ris * u),             # tau_ris
        (2, 2j * np.pi / lam * sq_e * b_ris * g_y),           # xi
        (2, 2j * np.pi / lam * sq_e * b_ris * g_z),           # zeta
        (0, sq_e * np.exp(1j * params.rho_los) * ones),       # alpha_los
        (0, 1j * sq_e * b_los * ones),                        # rho_los
        (2, sq_e * np.exp(1j * params.rho_ris) * u),          # alpha_ris
        (2, 1j * sq_e * b_ris * u),                           # rho_ris
    ]


def mu_derivatives(scenario: Scenario, pair: tuple, slot: int, schedule,
                   wrt_pair: tuple = None) -> np.ndarray:
    """Derivatives of one slot's noiseless mean, shape (8, N).

    Rows follow ``PARAM_NAMES``.  ``wrt_pair`` selects which pair's
    parameters to differentiate against; derivatives with respect to a
    different pair's parameters are identically zero.
    """
    i, j = pair
    if wrt_pair is not None and tuple(wrt_pair) != (i, j):
        return np.zeros((8, scenario.n_subcarriers), dtype=complex)
    params = channel_params(scenario)[(i, j)]
    n, d_los, d_ris, c_vec, p_y, p_z = _pair_vectors(scenario, params, i)
    u, g_y, g_z = _slot_scalars(schedule, i, c_vec, p_y, p_z)
    bases = (d_los, n * d_los, d_ris, n * d_ris)
    factors = _derivative_factors(scenario, params, i, u, g_y, g_z)
    return np.stack([fac[slot] * bases[bi] for bi, fac in factors])


def _pair_fim_block(scenario, params, transmitter, schedule) -> np.ndarray:
    """8x8 FIM block of one ordered pair, all slots accumulated."""
    n, d_los, d_ris, c_vec, p_y, p_z = _pair_vectors(scenario, params, transmitter)
    u, g_y, g_z = _slot_scalars(schedule, transmitter, c_vec, p_y, p_z)
    bases = np.stack([d_los, n * d_los, d_ris, n * d_ris], axis=1)  # (N, 4)
    gram = bases.conj().T @ bases                                   # (4, 4)
    factors = _derivative_factors(scenario, params, transmitter, u, g_y, g_z)
    s = np.zeros((len(u), 4, 8), dtype=complex)
    for col, (bi, fac) in enumerate(factors):
        s[:, bi, col] = fac
    acc = np.einsum("tab,ac,tcd->bd", s.conj(), gram, s)
    var = scenario.noise_variance
    if var <= 0.0:
        raise ValidationError("FIM requires a positive noise variance")
    return (2.0 / var) * np.real(acc)


def fim_channel(scenario: Scenario, schedule) -> np.ndarray:
    """Channel-parameter FIM, shape (8K(K-1), 8K(K-1)).

    Received signals of distinct ordered pairs are independent, so the
    matrix is exactly block diagonal with one 8x8 block per pair.
    """
    params = channel_params(scenario)
    pairs = ordered_pairs(scenario.n_ues)
    f = 8 * len(pairs)
    j_eta = np.zeros((f, f))
    for idx, (i, j) in enumerate(pairs):
        sl = slice(8 * idx, 8 * idx + 8)
        j_eta[sl, sl] = _pair_fim_block(scenario, params[(i, j)], i, schedule)
    return j_eta


def fim_by_transmitter(scenario: Scenario, schedule) -> list:
    """Per-transmitter FIM contributions; their sum equals fim_channel.

    Each pair block scales linearly with its transmitter's power, which
    is what power allocation exploits.
    """
    params = channel_params(scenario)
    pairs = ordered_pairs(scenario.n_ues)
    f = 8 * len(pairs)
    parts = [np.zeros((f, f)) for _ in range(scenario.n_ues)]
    for idx, (i, j) in enumerate(pairs):
        sl = slice(8 * idx, 8 * idx + 8)
        parts[i][sl, sl] = _pair_fim_block(scenario, params[(i, j)], i, schedule)
    return parts


def state_jacobian(scenario: Scenario) -> np.ndarray:
    """Jacobian T with T[r, c] = d eta_c / d h_r, shape (g, f).

    h stacks positions, non-reference clock offsets, and the gain
    nuisances; g = 4K - 1 + 4K(K-1) and f = 8K(K-1).
    """
    k = scenario.n_ues
    c = scenario.speed_of_light
    rel = scenario.ue_positions_rel
    pairs = ordered_pairs(k)
    n_pairs = len(pairs)
    g = 4 * k - 1 + 4 * n_pairs
    t_mat = np.zeros((g, 8 * n_pairs))

    offset_row = {}
    row = 3 * k
    for ue in range(k):
        if ue != scenario.reference_ue:
            offset_row[ue] = row
            row += 1
    gain_base = 4 * k - 1

    for idx, (i, j) in enumerate(pairs):
        col = 8 * idx
        p_i, p_j = scenario.ue_positions[i], scenario.ue_positions[j]
        d_ij = np.linalg.norm(p_i - p_j)
        for ue in (i, j):
            rows = slice(3 * ue, 3 * ue + 3)
            other = p_j if ue == i else p_i
            t_mat[rows, col + 0] = (scenario.ue_positions[ue] - other) / (c * d_ij)
            r = rel[ue]
            d_r = np.linalg.norm(r)
            t_mat[rows, col + 1] = r / (c * d_r)
            x, y, z = r
            t_mat[rows, col + 2] = [-x * y / d_r**3, 1.0 / d_r - y**2 / d_r**3, -z * y / d_r**3]
            t_mat[rows, col + 3] = [-x * z / d_r**3, -y * z / d_r**3, 1.0 / d_r - z**2 / d_r**3]
        if j in offset_row:
            t_mat[offset_row[j], col + 0] = 1.0
            t_mat[offset_row[j], col + 1] = 1.0
        if i in offset_row:
            t_mat[offset_row[i], col + 0] = -1.0
            t_mat[offset_row[i], col + 1] = -1.0
        t_mat[gain_base + idx, col + 4] = 1.0                  # alpha_los
        t_mat[gain_base + n_pairs + idx, col + 6] = 1.0        # alpha_ris
        t_mat[gain_base + 2 * n_pairs + idx, col + 5] = 1.0    # rho_los
        t_mat[gain_base + 3 * n_pairs + idx, col + 7] = 1.0    # rho_ris
    return t_mat


_RANK_RTOL = 1e-12


def _sym_inverse(mat: np.ndarray, allow_singular: bool) -> np.ndarray:
    """Inverse of a symmetric PSD matrix through its eigendecomposition.

    The matrix mixes units (seconds, radians, unitless), so its raw
    eigenvalues span many decades even when it is perfectly
    identifiable.  Jacobi scaling to unit diagonal first makes the rank
    test meaningful; genuine rank deficiency survives the scaling.
    """
    sym = 0.5 * (mat + mat.T)
    diag = np.diag(sym).copy()
    dead = diag <= 0.0
    diag[dead] = 1.0
    scale = 1.0 / np.sqrt(diag)
    scaled = scale[:, None] * sym * scale[None, :]
    w, v = np.linalg.eigh(scaled)
    tol = _RANK_RTOL * np.max(np.abs(w)) if w.size else 0.0
    if np.min(w) <= tol or np.any(dead):
        if not allow_singular:
            rank = int(np.sum(w > tol))
            raise UnidentifiableStateError(
                f"unidentifiable state: FIM rank {rank} < {mat.shape[0]}")
        inv_w = np.where(w > tol, 1.0 / np.where(w > tol, w, 1.0), 0.0)
    else:
        inv_w = 1.0 / w
    return scale[:, None] * ((v * inv_w) @ v.T) * scale[None, :]


def peb_ceb(j_eta: np.ndarray, t_mat: np.ndarray, n_ues: int,
            allow_singular: bool = False) -> tuple:
    """Positioning and clock-offset error bounds from the state FIM.

    Returns (peb, ceb): peb[i] is the root-trace of UE i's 3x3 position
    block of the inverted state FIM, ceb the root-diagonal of the K-1
    clock-offset entries (non-reference UEs in ascending order).
    """
    j_state = t_mat @ j_eta @ t_mat.T
    inv = _sym_inverse(j_state, allow_singular)
    peb = np.array([np.sqrt(np.trace(inv[3 * i:3 * i + 3, 3 * i:3 * i + 3]))
                    for i in range(n_ues)])
    ceb = np.sqrt(np.diag(inv)[3 * n_ues:4 * n_ues - 1])
    return peb, ceb


def crlb_stds(j_eta: np.ndarray, n_ues: int) -> dict:
    """Per-parameter CRLB standard deviations, keyed by ordered pair.

    Uses the full inverse of each pair's 8x8 block (not reciprocal
    diagonals), so nuisance correlations are accounted for.
    """
    out = {}
    for idx, pair in enumerate(ordered_pairs(n_ues)):
        block = j_eta[8 * idx:8 * idx + 8, 8 * idx:8 * idx + 8]
        out[pair] = np.sqrt(np.diag(_sym_inverse(block, allow_singular=False)))
    return out


@dataclass(frozen=True)
class BoundReport:
    """All bound outputs for one (scenario, schedule) evaluation."""

    j_eta: np.ndarray
    t_mat: np.ndarray
    j_state: np.ndarray
    peb: np.ndarray        # (K,) m
    ceb: np.ndarray        # (K-1,) s
    crlb_std: dict         # ordered pair -> (8,) stds in PARAM_NAMES order


def bound_report(scenario: Scenario, schedule, allow_singular: bool = False) -> BoundReport:
    j_eta = fim_channel(scenario, schedule)
    t_mat = state_jacobian(scenario)
    peb, ceb = peb_ceb(j_eta, t_mat, scenario.n_ues, allow_singular=allow_singular)
    return BoundReport(j_eta=j_eta, t_mat=t_mat, j_state=t_mat @ j_eta @ t_mat.T,
                       peb=peb, ceb=ceb, crlb_std=crlb_stds(j_eta, scenario.n_ues))
