"""RIS phase-control schedules.

A schedule holds one unit-modulus phase vector per (transmitter, slot).
Slots come in +/- pairs: the even slot repeats the preceding odd slot
with every element phase advanced by pi (realized as an exact complex
negation), which lets a receiver separate the direct and the reflected
path by summing and differencing consecutive slots.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .channel import ris_response, spatial_freqs
from .errors import ValidationError
from .scenario import Scenario, ris_element_positions
from .seeding import rng_from

__all__ = ["RisSchedule", "schedule_from_base", "random_codebook",
           "directional_codebook", "save_schedule_csv", "load_schedule_csv"]


@dataclass(frozen=True)
class RisSchedule:
    """Per-transmitter, per-slot RIS phase vectors with +/- slot pairing.

    ``base`` has shape (K, T/2, M); the materialized ``omega`` (K, T, M)
    satisfies omega[:, 2m] = base[:, m] and omega[:, 2m+1] = -base[:, m].
    """

    base: np.ndarray
    kind: str = "custom"
    seed: object = None
    omega: np.ndarray = None

    def __post_init__(self):
        base = np.asarray(self.base, dtype=complex)
        if base.ndim != 3:
            raise ValidationError("schedule base must have shape (K, T/2, M)")
        if np.any(np.abs(np.abs(base) - 1.0) > 1e-9):
            raise ValidationError("RIS phase vectors must be unit modulus")
        base = base.copy()
        base.flags.writeable = False
        omega = np.empty((base.shape[0], 2 * base.shape[1], base.shape[2]), dtype=complex)
        omega[:, 0::2] = base
        omega[:, 1::2] = -base
        omega.flags.writeable = False
        object.__setattr__(self, "base", base)
        object.__setattr__(self, "omega", omega)

    @property
    def n_transmitters(self) -> int:
        return self.base.shape[0]

    @property
    def n_slots(self) -> int:
        return 2 * self.base.shape[1]

    @property
    def n_elements(self) -> int:
        return self.base.shape[2]

    def base_for(self, transmitter: int) -> np.ndarray:
        """Base profiles of one transmitter, shape (T/2, M)."""
        return self.base[transmitter]


def schedule_from_base(base: np.ndarray, kind: str = "custom", seed=None) -> RisSchedule:
    return RisSchedule(base=base, kind=kind, seed=seed)


def random_codebook(scenario: Scenario, seed) -> RisSchedule:
    """Schedule with i.i.d. element phases uniform on [0, 2 pi)."""
    rng = rng_from(seed)
    shape = (scenario.n_ues, scenario.slots_per_ue // 2, scenario.n_elements)
    base = np.exp(1j * rng.uniform(0.0, 2.0 * np.pi, shape))
    return RisSchedule(base=base, kind="random", seed=seed)


def directional_codebook(scenario: Scenario, prior=None, seed=0) -> RisSchedule:
    """Schedule of conjugate-phase beams toward sampled prior positions.

    For every (transmitter, base slot): draw the transmitter position
    from its prior, pick a receiver uniformly among the other UEs, draw
    its position, and steer the whole panel at the resulting
    spatial-frequency pair.  Draws are independent per slot.
    """
    if prior is None:
        means, covs = scenario.prior_means, scenario.prior_covs
    else:
        means, covs = prior
        means = np.asarray(means, dtype=float)
        covs = np.asarray(covs, dtype=float)
        if covs.shape == (3, 3):
            covs = np.tile(covs, (scenario.n_ues, 1, 1))
    for cov in covs:
        if not np.allclose(cov, cov.T):
            raise ValidationError("prior covariance must be symmetric")
        if np.min(np.linalg.eigvalsh(cov)) < -1e-12 * max(1.0, np.abs(cov).max()):
            raise ValidationError("prior covariance must be positive semidefinite")

    rng = rng_from(seed)
    elements = ris_element_positions(scenario) - scenario.ris_center
    k = scenario.n_ues
    half = scenario.slots_per_ue // 2
    base = np.empty((k, half, scenario.n_elements), dtype=complex)
    for i in range(k):
        receivers = [j for j in range(k) if j != i]
        for t in range(half):
            p_i = rng.multivariate_normal(means[i], covs[i], method="svd")
            j = receivers[rng.integers(len(receivers))]
            p_j = rng.multivariate_normal(means[j], covs[j], method="svd")
            gamma = spatial_freqs(p_i - scenario.ris_center, p_j - scenario.ris_center)
            base[i, t] = np.conj(ris_response(gamma, elements, scenario.wavelength))
    return RisSchedule(base=base, kind="directional", seed=seed)


def save_schedule_csv(schedule: RisSchedule, path) -> None:
    """Write the full schedule as rows (transmitter, slot, element, phase_radians)."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["transmitter", "slot", "element", "phase_radians"])
        k, t_all, m = schedule.omega.shape
        phases = np.angle(schedule.omega)
        for i in range(k):
            for t in range(t_all):
                for el in range(m):
                    writer.writerow([i, t, el, repr(phases[i, t, el])])


def load_schedule_csv(path) -> RisSchedule:
    """Rebuild a schedule from its CSV export.

    The +/- pairing of consecutive slots is verified and then re-imposed
    exactly, so a load/save round trip preserves the pairing invariant
    bit for bit.
    """
    rows = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["transmitter", "slot", "element", "phase_radians"]:
            raise ValidationError("unrecognized schedule CSV header")
        for rec in reader:
            rows.append((int(rec[0]), int(rec[1]), int(rec[2]), float(rec[3])))
    if not rows:
        raise ValidationError("empty schedule CSV")
    k = max(r[0] for r in rows) + 1
    t_all = max(r[1] for r in rows) + 1
    m = max(r[2] for r in rows) + 1
    if t_all % 2:
        raise ValidationError("schedule CSV must contain an even number of slots")
    omega = np.zeros((k, t_all, m), dtype=complex)
    for i, t, el, phase in rows:
        omega[i, t, el] = np.exp(1j * phase)
    if np.max(np.abs(omega[:, 1::2] + omega[:, 0::2])) > 1e-6:
        raise ValidationError("consecutive slots do not honor the +/- pairing")
    return RisSchedule(base=omega[:, 0::2], kind="custom")
